//! Small fully-connected v-prediction network with forward-mode autodiff.
//!
//! The JVP is computed by propagating (value, tangent) pairs through every
//! layer, one extra pass alongside the forward pass. The network predicts
//! `v`; the handle converts to x-prediction (`x_hat = alpha z - sigma v`)
//! so samplers see a uniform interface.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayD;
use rand::Rng;

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::schedule::{make_noise_info, NoiseInfo, ScheduleKind};

/// Log-SNR is clamped to this magnitude before feeding the network; the
/// schedule endpoints store infinities.
const LOGSNR_CLAMP: f64 = 20.0;
const NOISE_FEATURES: usize = 2;

fn noise_features(logsnr: f64) -> [f64; NOISE_FEATURES] {
    let lc = logsnr.clamp(-LOGSNR_CLAMP, LOGSNR_CLAMP);
    [lc / 8.0, (lc / 8.0).tanh()]
}

/// Fully-connected tanh network: `D + 2` inputs, `D` outputs (the
/// v-prediction).
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    shape: Vec<usize>, // [H, W, C]
    hidden: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl MlpDenoiser {
    /// Random small-scale initialization.
    pub fn random(shape: &[usize], hidden: &[usize], rng: &mut Stream) -> Result<Self> {
        let dim: usize = shape.iter().product();
        if shape.len() != 3 || dim == 0 {
            return Err(Error::invalid_argument("shape must be [H, W, C]"));
        }
        let mut sizes = vec![dim + NOISE_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let scale = (1.0 / n_in as f64).sqrt();
            let w = DMatrix::from_fn(n_out, n_in, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * scale
            });
            weights.push(w);
            biases.push(DVector::zeros(n_out));
        }
        Ok(MlpDenoiser { shape: shape.to_vec(), hidden: hidden.to_vec(), weights, biases })
    }

    /// All-zero parameters: the network outputs `v = 0`, so the handle is
    /// the pure schedule map `x_hat = alpha z`.
    pub fn zeroed(shape: &[usize], hidden: &[usize]) -> Result<Self> {
        let mut rng = crate::rng::setup_stream(0, 0);
        let mut m = Self::random(shape, hidden, &mut rng)?;
        for w in &mut m.weights {
            w.fill(0.0);
        }
        for b in &mut m.biases {
            b.fill(0.0);
        }
        Ok(m)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    /// Named parameter arrays, for serialization.
    pub fn params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            // DMatrix stores column-major; emit row-major for the file.
            let mut wdata = Vec::with_capacity(w.nrows() * w.ncols());
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    wdata.push(w[(r, c)]);
                }
            }
            out.push((format!("w{i}"), vec![w.nrows(), w.ncols()], wdata));
            out.push((format!("b{i}"), vec![b.len()], b.as_slice().to_vec()));
        }
        out
    }

    /// Rebuilds from named parameter arrays produced by [`Self::params`].
    pub fn from_params(
        shape: &[usize],
        hidden: &[usize],
        params: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<Self> {
        let mut m = Self::zeroed(shape, hidden)?;
        let lookup: std::collections::BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = params
            .iter()
            .map(|(n, s, d)| (n.as_str(), (s, d)))
            .collect();
        for i in 0..m.weights.len() {
            let (wshape, wdata) = lookup
                .get(format!("w{i}").as_str())
                .ok_or_else(|| Error::schema(format!("missing parameter w{i}")))?;
            let (nr, nc) = (m.weights[i].nrows(), m.weights[i].ncols());
            if wshape.as_slice() != [nr, nc] || wdata.len() != nr * nc {
                return Err(Error::schema(format!("parameter w{i} has wrong shape")));
            }
            for r in 0..nr {
                for c in 0..nc {
                    m.weights[i][(r, c)] = wdata[r * nc + c];
                }
            }
            let (bshape, bdata) = lookup
                .get(format!("b{i}").as_str())
                .ok_or_else(|| Error::schema(format!("missing parameter b{i}")))?;
            if bshape.as_slice() != [m.biases[i].len()] {
                return Err(Error::schema(format!("parameter b{i} has wrong shape")));
            }
            for (dst, src) in m.biases[i].iter_mut().zip(bdata.iter()) {
                *dst = *src;
            }
        }
        Ok(m)
    }

    fn input_vector(&self, z: &ArrayD<f64>, noise: &NoiseInfo) -> DVector<f64> {
        let feats = noise_features(noise.logsnr);
        let mut input = DVector::zeros(self.dim() + NOISE_FEATURES);
        for (i, v) in z.iter().enumerate() {
            input[i] = *v;
        }
        for (i, f) in feats.iter().enumerate() {
            input[self.dim() + i] = *f;
        }
        input
    }

    /// Network forward pass on a prepared input vector.
    fn net_forward(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut a = input.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if i != last {
                a.apply(|v| *v = v.tanh());
            }
        }
        a
    }

    /// Dual-number pass: propagates (value, tangent) through every layer.
    fn net_forward_dual(
        &self,
        input: &DVector<f64>,
        tangent: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut a = input.clone();
        let mut da = tangent.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            da = w * da;
            if i != last {
                for j in 0..a.len() {
                    let t = a[j].tanh();
                    a[j] = t;
                    da[j] *= 1.0 - t * t; // tanh'(x) = 1 - tanh(x)^2
                }
            }
        }
        (a, da)
    }

    fn check_shape(&self, z: &ArrayD<f64>) -> Result<()> {
        if z.shape() != &self.shape[..] {
            return Err(Error::invalid_argument(format!(
                "input shape {:?} does not match model shape {:?}",
                z.shape(),
                self.shape
            )));
        }
        Ok(())
    }

    /// One SGD step on the v-prediction loss for a single `(x, t, eps)`
    /// triple; returns the loss before the update.
    fn sgd_step(&mut self, x: &[f64], t: f64, schedule: ScheduleKind, lr: f64, rng: &mut Stream) -> f64 {
        let noise = make_noise_info(t, schedule).expect("t in range");
        let dim = self.dim();
        let eps = crate::rng::normal_vec(rng, dim);
        let mut z = DVector::zeros(dim + NOISE_FEATURES);
        let mut v_target = DVector::zeros(dim);
        for i in 0..dim {
            z[i] = noise.alpha * x[i] + noise.sigma * eps[i];
            v_target[i] = noise.alpha * eps[i] - noise.sigma * x[i];
        }
        let feats = noise_features(noise.logsnr);
        for (i, f) in feats.iter().enumerate() {
            z[dim + i] = *f;
        }

        // Forward pass, keeping post-activation values per layer.
        let mut acts: Vec<DVector<f64>> = vec![z.clone()];
        let last = self.weights.len() - 1;
        let mut a = z;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * &a + b;
            if i != last {
                a.apply(|v| *v = v.tanh());
            }
            acts.push(a.clone());
        }
        let resid = &acts[last + 1] - &v_target;
        let loss = resid.norm_squared() / dim as f64;

        // Backprop of mean squared error.
        let mut grad = resid * (2.0 / dim as f64);
        for i in (0..self.weights.len()).rev() {
            let input = &acts[i];
            let gw = &grad * input.transpose();
            let gb = grad.clone();
            if i > 0 {
                let mut upstream = self.weights[i].transpose() * &grad;
                for j in 0..upstream.len() {
                    let t = acts[i][j];
                    upstream[j] *= 1.0 - t * t;
                }
                grad = upstream;
            }
            self.weights[i] -= gw * lr;
            self.biases[i] -= gb * lr;
        }
        loss
    }

    /// Plain stochastic-gradient training on the v-prediction loss; `data`
    /// draws one clean sample per call.
    pub fn train<F>(
        &mut self,
        mut data: F,
        schedule: ScheduleKind,
        steps: usize,
        lr: f64,
        rng: &mut Stream,
    ) -> f64
    where
        F: FnMut(&mut Stream) -> Vec<f64>,
    {
        let mut last_loss = 0.0;
        for _ in 0..steps {
            let x = data(rng);
            let t: f64 = 0.01 + 0.98 * rng.random::<f64>();
            last_loss = self.sgd_step(&x, t, schedule, lr, rng);
        }
        last_loss
    }
}

impl Denoiser for MlpDenoiser {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        self.check_shape(z)?;
        nfe.add(1);
        let input = self.input_vector(z, noise);
        let v = self.net_forward(&input);
        let data: Vec<f64> = z
            .iter()
            .zip(v.iter())
            .map(|(zi, vi)| noise.alpha * zi - noise.sigma * vi)
            .collect();
        Ok(ArrayD::from_shape_vec(z.raw_dim(), data).expect("shape/len agree"))
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        self.check_shape(z)?;
        self.check_shape(tangent)?;
        nfe.add(2);
        let input = self.input_vector(z, noise);
        let mut dual = DVector::zeros(input.len());
        for (i, u) in tangent.iter().enumerate() {
            dual[i] = *u; // noise features carry zero tangent
        }
        let (v, dv) = self.net_forward_dual(&input, &dual);
        let x: Vec<f64> = z
            .iter()
            .zip(v.iter())
            .map(|(zi, vi)| noise.alpha * zi - noise.sigma * vi)
            .collect();
        let jv: Vec<f64> = tangent
            .iter()
            .zip(dv.iter())
            .map(|(ui, dvi)| noise.alpha * ui - noise.sigma * dvi)
            .collect();
        Ok((
            ArrayD::from_shape_vec(z.raw_dim(), x).expect("shape/len agree"),
            ArrayD::from_shape_vec(z.raw_dim(), jv).expect("shape/len agree"),
        ))
    }
}
