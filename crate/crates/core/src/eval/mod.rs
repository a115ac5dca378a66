//! Distribution metrics and analytic oracles: the desk-scale stand-ins
//! for large-scale sample-quality scores.

pub mod runners;

pub use runners::{run_ablation, run_comparison, AblationGrid, Experiment, SamplerChoice};

use ndarray::ArrayD;

use crate::denoiser::GaussianModel;
use crate::error::{Error, Result};
use crate::rng::{normal_vec, sample_stream, setup_stream};
use crate::tensor::SpatialTensor;
use crate::transforms::TransformKind;

/// Upper bound on the pairwise-distance set size for the energy distance;
/// larger sample sets are thinned deterministically (norm-sorted strides,
/// so the metric stays invariant to sample order).
const ENERGY_SUBSAMPLE_CAP: usize = 512;

/// Five-metric comparison of a sample set against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// L2 distance between sample mean and reference mean.
    pub mean_err: f64,
    /// Frobenius relative error of the sample covariance.
    pub cov_err: f64,
    /// Relative L2 error of per-frequency variances under the chosen
    /// transform.
    pub spectrum_err: f64,
    /// Sliced 2-Wasserstein distance over seeded random projections.
    pub sw_dist: f64,
    /// Energy distance.
    pub energy_dist: f64,
}

/// Reference distribution for [`compute_metrics`].
pub enum Reference<'a> {
    Model(&'a GaussianModel),
    Samples(&'a [ArrayD<f64>]),
}

/// Draws `count` exact samples from the Gaussian model; the i-th sample
/// uses the stream derived from `(seed, i)`.
pub fn exact_gaussian_sampler(
    model: &GaussianModel,
    count: usize,
    seed: u64,
) -> Vec<ArrayD<f64>> {
    (0..count)
        .map(|i| {
            let mut rng = sample_stream(seed, i as u64);
            model.sample(&mut rng)
        })
        .collect()
}

fn flat(sample: &ArrayD<f64>) -> &[f64] {
    sample.as_slice().expect("standard layout")
}

fn sample_mean(samples: &[ArrayD<f64>]) -> Vec<f64> {
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(flat(s)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= samples.len() as f64;
    }
    mean
}

/// Dense sample covariance (unbiased).
fn sample_covariance(samples: &[ArrayD<f64>], mean: &[f64]) -> Vec<f64> {
    let dim = mean.len();
    let n = samples.len();
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for s in samples {
        for (c, (v, m)) in centered.iter_mut().zip(flat(s).iter().zip(mean)) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            let row = &mut cov[i * dim..(i + 1) * dim];
            for (j, c) in centered.iter().enumerate() {
                row[j] += ci * c;
            }
        }
    }
    let denom = (n - 1) as f64;
    for v in &mut cov {
        *v /= denom;
    }
    cov
}

/// Per-coordinate variances of the transformed sample set.
fn transformed_variances(
    samples: &[ArrayD<f64>],
    transform: &TransformKind,
) -> Result<Vec<f64>> {
    let mut mean: Option<Vec<f64>> = None;
    let mut sq: Option<Vec<f64>> = None;
    for s in samples {
        let f = transform.forward(&SpatialTensor::new(s.clone())?)?;
        let data = f.data().as_slice().expect("standard layout");
        match (&mut mean, &mut sq) {
            (Some(m), Some(q)) => {
                for ((mi, qi), v) in m.iter_mut().zip(q.iter_mut()).zip(data) {
                    *mi += v;
                    *qi += v * v;
                }
            }
            _ => {
                mean = Some(data.to_vec());
                sq = Some(data.iter().map(|v| v * v).collect());
            }
        }
    }
    let n = samples.len() as f64;
    let mean = mean.expect("non-empty");
    let mut sq = sq.expect("non-empty");
    for (q, m) in sq.iter_mut().zip(mean.iter()) {
        *q = (*q / n - (m / n) * (m / n)).max(0.0);
    }
    Ok(sq)
}

/// True per-coordinate variances of the model under `transform`:
/// `diag(T Sigma T^T)`, via the prior spectrum when the transform
/// diagonalizes the model, dense algebra otherwise.
pub fn model_transformed_variances(
    model: &GaussianModel,
    transform: &TransformKind,
) -> Result<Vec<f64>> {
    if model.diagonalizing_transform().as_ref() == Some(transform) {
        return Ok(model.prior_spectrum().expect("transform-diagonal").iter().copied().collect());
    }
    let dim = model.dim();
    let cov = model.covariance_dense();
    // diag(T Sigma T^T)_i = t_i^T Sigma t_i; push basis columns through
    // Sigma, then through the transform, and read off products.
    let shape = model.shape().to_vec();
    let probe = SpatialTensor::zeros(&shape)?;
    let freq_len = transform.forward(&probe)?.data().len();
    let mut out = vec![0.0; freq_len];
    // Columns of Sigma transformed: A[:, j] = T sigma_j.
    let mut transformed_cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let col: Vec<f64> = (0..dim).map(|i| cov[(i, j)]).collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), col).expect("shape/len agree");
        let f = transform.forward(&SpatialTensor::new(arr)?)?;
        transformed_cols.push(f.data().as_slice().expect("standard layout").to_vec());
    }
    // Rows of T: transform basis vectors.
    for j in 0..dim {
        let mut basis = vec![0.0; dim];
        basis[j] = 1.0;
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), basis).expect("shape/len agree");
        let tj = transform.forward(&SpatialTensor::new(arr)?)?;
        for (o, (t, a)) in out
            .iter_mut()
            .zip(tj.data().iter().zip(transformed_cols[j].iter()))
        {
            *o += t * a;
        }
    }
    Ok(out)
}

/// 1-D squared 2-Wasserstein distance between equal-size sets.
fn w2_squared_1d(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Sliced Wasserstein distance: root-mean of per-projection squared W2
/// over `projections` seeded random directions.
pub fn sliced_wasserstein(
    samples: &[ArrayD<f64>],
    reference: &[ArrayD<f64>],
    projections: usize,
    seed: u64,
) -> f64 {
    let dim = samples[0].len();
    let mut rng = setup_stream(seed, 0x5157);
    let mut acc = 0.0;
    for _ in 0..projections {
        let mut dir = normal_vec(&mut rng, dim);
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for d in &mut dir {
            *d /= norm.max(1e-300);
        }
        let proj = |set: &[ArrayD<f64>]| -> Vec<f64> {
            set.iter()
                .map(|s| flat(s).iter().zip(&dir).map(|(v, d)| v * d).sum())
                .collect()
        };
        acc += w2_squared_1d(proj(samples), proj(reference));
    }
    (acc / projections as f64).sqrt()
}

/// Deterministic, order-invariant thinning: sort indices by sample norm
/// and take evenly spaced ones.
fn thin_indices(samples: &[ArrayD<f64>], cap: usize) -> Vec<usize> {
    if samples.len() <= cap {
        return (0..samples.len()).collect();
    }
    let mut keyed: Vec<(f64, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (flat(s).iter().map(|v| v * v).sum::<f64>(), i))
        .collect();
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (0..cap)
        .map(|k| keyed[k * samples.len() / cap].1)
        .collect()
}

/// Energy distance `2 E|A - B| - E|A - A'| - E|B - B'|` with full-pair
/// means (diagonal included), so identical sets give exactly zero.
pub fn energy_distance(samples: &[ArrayD<f64>], reference: &[ArrayD<f64>]) -> f64 {
    let ia = thin_indices(samples, ENERGY_SUBSAMPLE_CAP);
    let ib = thin_indices(reference, ENERGY_SUBSAMPLE_CAP);
    let dist = |a: &ArrayD<f64>, b: &ArrayD<f64>| -> f64 {
        flat(a)
            .iter()
            .zip(flat(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mean_cross = |xs: &[usize], ys: &[usize], a: &[ArrayD<f64>], b: &[ArrayD<f64>]| -> f64 {
        let mut acc = 0.0;
        for &i in xs {
            for &j in ys {
                acc += dist(&a[i], &b[j]);
            }
        }
        acc / (xs.len() * ys.len()) as f64
    };
    let ab = mean_cross(&ia, &ib, samples, reference);
    let aa = mean_cross(&ia, &ia, samples, samples);
    let bb = mean_cross(&ib, &ib, reference, reference);
    2.0 * ab - aa - bb
}

/// Computes all five metrics of `samples` against the reference.
///
/// `seed` controls the sliced-Wasserstein projections and, for model
/// references, the reference sample draw.
pub fn compute_metrics(
    samples: &[ArrayD<f64>],
    reference: &Reference<'_>,
    transform: &TransformKind,
    seed: u64,
) -> Result<MetricReport> {
    if samples.len() < 2 {
        return Err(Error::invalid_argument("need at least 2 samples"));
    }
    let dim = samples[0].len();
    let mean = sample_mean(samples);

    let (ref_mean, ref_cov, ref_spectrum, ref_samples): (
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<ArrayD<f64>>,
    ) = match reference {
        Reference::Model(model) => {
            if model.dim() != dim {
                return Err(Error::invalid_argument("model/sample dimension mismatch"));
            }
            let cov = model.covariance_dense();
            let cov_flat: Vec<f64> =
                (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
            let spectrum = model_transformed_variances(model, transform)?;
            let refs = exact_gaussian_sampler(model, samples.len(), seed ^ 0x9e3779b97f4a7c15);
            (
                model.mean().iter().copied().collect(),
                cov_flat,
                spectrum,
                refs,
            )
        }
        Reference::Samples(refs) => {
            if refs.len() < 2 {
                return Err(Error::invalid_argument("need at least 2 reference samples"));
            }
            let rmean = sample_mean(refs);
            let rcov = sample_covariance(refs, &rmean);
            let rspec = transformed_variances(refs, transform)?;
            (rmean, rcov, rspec, refs.to_vec())
        }
    };

    let mean_err = mean
        .iter()
        .zip(&ref_mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let cov = sample_covariance(samples, &mean);
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in cov.iter().zip(&ref_cov) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    let cov_err = num.sqrt() / den.sqrt().max(1e-300);

    let spec = transformed_variances(samples, transform)?;
    let mut snum = 0.0;
    let mut sden = 0.0;
    for (a, b) in spec.iter().zip(&ref_spectrum) {
        snum += (a - b) * (a - b);
        sden += b * b;
    }
    let spectrum_err = snum.sqrt() / sden.sqrt().max(1e-300);

    let sw_dist = sliced_wasserstein(samples, &ref_samples, 128, seed);
    let energy_dist = energy_distance(samples, &ref_samples);

    Ok(MetricReport { mean_err, cov_err, spectrum_err, sw_dist, energy_dist })
}

/// One row of the results CSV; the column order is part of the interface:
/// `sampler,transform,averaging,steps,nfe,mean_err,cov_err,spectrum_err,sw_dist,energy_dist,seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub sampler: String,
    pub transform: String,
    pub averaging: String,
    pub steps: usize,
    pub nfe: u64,
    pub mean_err: f64,
    pub cov_err: f64,
    pub spectrum_err: f64,
    pub sw_dist: f64,
    pub energy_dist: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str =
    "sampler,transform,averaging,steps,nfe,mean_err,cov_err,spectrum_err,sw_dist,energy_dist,seed";

impl CsvRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{}",
            self.sampler,
            self.transform,
            self.averaging,
            self.steps,
            self.nfe,
            self.mean_err,
            self.cov_err,
            self.spectrum_err,
            self.sw_dist,
            self.energy_dist,
            self.seed
        )
    }
}

/// Serializes rows (header included) into the CSV text.
pub fn rows_to_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parses results CSV text; the header must carry exactly the expected
/// columns in order.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::schema("empty CSV"))?;
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    let got: Vec<&str> = header.trim().split(',').collect();
    for col in &expected {
        if !got.contains(col) {
            return Err(Error::schema(format!("missing column '{col}'")));
        }
    }
    if got != expected {
        return Err(Error::schema(format!(
            "column order must be '{CSV_HEADER}', got '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.len() {
            return Err(Error::schema(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                expected.len(),
                fields.len()
            )));
        }
        let parse_f = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::schema(format!("line {}: bad {name} '{s}'", lineno + 2)))
        };
        let parse_u = |s: &str, name: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|_| Error::schema(format!("line {}: bad {name} '{s}'", lineno + 2)))
        };
        rows.push(CsvRow {
            sampler: fields[0].to_string(),
            transform: fields[1].to_string(),
            averaging: fields[2].to_string(),
            steps: parse_u(fields[3], "steps")? as usize,
            nfe: parse_u(fields[4], "nfe")?,
            mean_err: parse_f(fields[5], "mean_err")?,
            cov_err: parse_f(fields[6], "cov_err")?,
            spectrum_err: parse_f(fields[7], "spectrum_err")?,
            sw_dist: parse_f(fields[8], "sw_dist")?,
            energy_dist: parse_f(fields[9], "energy_dist")?,
            seed: parse_u(fields[10], "seed")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn iso_model(dim: usize, mean: f64, var: f64) -> GaussianModel {
        GaussianModel::isotropic(&[dim, 1, 1], mean, var).unwrap()
    }

    #[test]
    fn exact_sampler_matches_moments() {
        let model = iso_model(4, 0.0, 1.0);
        let n = 4000;
        let samples = exact_gaussian_sampler(&model, n, 7);
        let mean = sample_mean(&samples);
        let cov = sample_covariance(&samples, &mean);
        let mut frob = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                frob += (cov[i * 4 + j] - expect).powi(2);
            }
        }
        assert!(frob.sqrt() < 3.0 / (n as f64).sqrt() * 4.0, "frob {}", frob.sqrt());

        let shifted = iso_model(4, 2.0, 1.0);
        let s2 = exact_gaussian_sampler(&shifted, 2000, 7);
        let m2 = sample_mean(&s2);
        for m in m2 {
            assert!((m - 2.0).abs() < 0.1);
        }

        let a = exact_gaussian_sampler(&model, 3, 11);
        let b = exact_gaussian_sampler(&model, 3, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn self_consistency_metrics_shrink() {
        let model = iso_model(6, 0.3, 1.5);
        let samples = exact_gaussian_sampler(&model, 3000, 3);
        let report = compute_metrics(
            &samples,
            &Reference::Model(&model),
            &TransformKind::Identity,
            3,
        )
        .unwrap();
        assert!(report.cov_err < 0.05, "cov_err {}", report.cov_err);
        assert!(report.mean_err < 0.1);
        assert!(report.spectrum_err < 0.1);
        assert!(report.energy_dist.abs() < 0.05);
    }

    #[test]
    fn identical_sets_have_zero_energy_distance() {
        let model = iso_model(3, 0.0, 1.0);
        let samples = exact_gaussian_sampler(&model, 64, 5);
        assert_eq!(energy_distance(&samples, &samples), 0.0);
    }

    #[test]
    fn point_mass_sliced_wasserstein_matches_direct_route() {
        let model = iso_model(3, 0.5, 2.0);
        let reference = exact_gaussian_sampler(&model, 256, 9);
        let mean_ref = sample_mean(&reference);
        let point =
            ArrayD::from_shape_vec(IxDyn(&[3, 1, 1]), mean_ref.clone()).unwrap();
        let samples: Vec<ArrayD<f64>> = vec![point; 256];
        let metric = sliced_wasserstein(&samples, &reference, 128, 17);

        // Direct 1-D route: for a point mass at m, W2^2 against the
        // empirical reference projection is mean((r_i - m.u)^2).
        let mut rng = setup_stream(17, 0x5157);
        let mut acc = 0.0;
        for _ in 0..128 {
            let mut dir = normal_vec(&mut rng, 3);
            let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            for d in &mut dir {
                *d /= norm;
            }
            let m: f64 = mean_ref.iter().zip(&dir).map(|(v, d)| v * d).sum();
            let mut w2 = 0.0;
            for r in &reference {
                let p: f64 = flat(r).iter().zip(&dir).map(|(v, d)| v * d).sum();
                w2 += (p - m) * (p - m);
            }
            acc += w2 / reference.len() as f64;
        }
        let direct = (acc / 128.0).sqrt();
        assert!((metric - direct).abs() < 1e-12, "{metric} vs {direct}");
    }

    #[test]
    fn metrics_are_order_invariant() {
        let model = iso_model(4, 0.0, 1.0);
        let mut samples = exact_gaussian_sampler(&model, 600, 2);
        let r1 = compute_metrics(
            &samples,
            &Reference::Model(&model),
            &TransformKind::Identity,
            4,
        )
        .unwrap();
        samples.reverse();
        samples.swap(0, 37);
        let r2 = compute_metrics(
            &samples,
            &Reference::Model(&model),
            &TransformKind::Identity,
            4,
        )
        .unwrap();
        // Invariant up to floating-point summation order.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
        assert!(close(r1.mean_err, r2.mean_err));
        assert!(close(r1.cov_err, r2.cov_err));
        assert!(close(r1.spectrum_err, r2.spectrum_err));
        assert!(close(r1.sw_dist, r2.sw_dist));
        assert!(close(r1.energy_dist, r2.energy_dist));
    }

    #[test]
    fn model_spectrum_route_matches_dense_route() {
        let model = GaussianModel::block_spectrum(&[8, 8, 1], 4, 2.0, 1.3).unwrap();
        let t = TransformKind::BlockDct { block_size: 4 };
        let fast = model_transformed_variances(&model, &t).unwrap();
        // Dense route through a plain dense model with the same covariance.
        let dense = GaussianModel::dense(&[8, 8, 1], vec![0.0; 64], model.covariance_dense())
            .unwrap();
        let slow = model_transformed_variances(&dense, &t).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn insufficient_samples_rejected() {
        let model = iso_model(2, 0.0, 1.0);
        let samples = exact_gaussian_sampler(&model, 1, 0);
        assert!(compute_metrics(
            &samples,
            &Reference::Model(&model),
            &TransformKind::Identity,
            0
        )
        .is_err());
    }
}
