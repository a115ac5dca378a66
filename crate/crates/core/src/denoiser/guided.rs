//! Classifier-free guidance wrapper.
//!
//! Inside the log-SNR interval the prediction is
//! `x_g = x_u + w (x_c - x_u)`; outside it the conditional prediction is
//! used unguided. For JVPs the unguided branch is treated as constant
//! (stop gradient), so a guided JVP costs 3 leaf evaluations (the
//! unconditional value pass plus the conditional value+tangent passes)
//! instead of 4.

use ndarray::ArrayD;

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::schedule::NoiseInfo;

/// Conditional/unconditional pair with guidance scale and log-SNR window.
#[derive(Debug, Clone)]
pub struct GuidedDenoiser<C, U> {
    cond: C,
    uncond: U,
    scale: f64,
    interval: (f64, f64),
}

impl<C: Denoiser, U: Denoiser> GuidedDenoiser<C, U> {
    pub fn new(cond: C, uncond: U, scale: f64, interval: (f64, f64)) -> Result<Self> {
        let (lo, hi) = interval;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::invalid_argument(format!(
                "guidance interval ({lo}, {hi}) must satisfy lo < hi"
            )));
        }
        Ok(GuidedDenoiser { cond, uncond, scale, interval })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Whether guidance applies at this log-SNR (open interval).
    pub fn active(&self, logsnr: f64) -> bool {
        self.interval.0 < logsnr && logsnr < self.interval.1
    }
}

impl<C: Denoiser, U: Denoiser> Denoiser for GuidedDenoiser<C, U> {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        let x_c = self.cond.predict(z, noise, nfe)?;
        if !self.active(noise.logsnr) {
            return Ok(x_c);
        }
        let x_u = self.uncond.predict(z, noise, nfe)?;
        Ok(&x_u + &((&x_c - &x_u) * self.scale))
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        let (x_c, jv_c) = self.cond.predict_jvp(z, noise, tangent, nfe)?;
        if !self.active(noise.logsnr) {
            return Ok((x_c, jv_c));
        }
        let x_u = self.uncond.predict(z, noise, nfe)?;
        let x_g = &x_u + &((&x_c - &x_u) * self.scale);
        // Stop gradient on x_u: only the conditional tangent flows through.
        let jv_g = jv_c * self.scale;
        Ok((x_g, jv_g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianModel;
    use crate::rng::{normal_array, sample_stream};
    use crate::schedule::{make_noise_info, ScheduleKind};

    fn pair() -> (GaussianModel, GaussianModel) {
        let cond = GaussianModel::isotropic(&[3, 1, 1], 0.5, 1.0).unwrap();
        let uncond = GaussianModel::isotropic(&[3, 1, 1], 0.0, 2.0).unwrap();
        (cond, uncond)
    }

    #[test]
    fn unit_scale_is_conditional() {
        let (cond, uncond) = pair();
        let guided = GuidedDenoiser::new(cond.clone(), uncond, 1.0, (-3.0, 5.0)).unwrap();
        let noise = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        assert!(guided.active(noise.logsnr));
        let mut rng = sample_stream(30, 0);
        let z = normal_array(&mut rng, &[3, 1, 1]);
        let u = normal_array(&mut rng, &[3, 1, 1]);
        let mut nfe = NfeLedger::new();
        let (xg, jg) = guided.predict_jvp(&z, &noise, &u, &mut nfe).unwrap();
        let (xc, jc) = cond.predict_jvp(&z, &noise, &u, &mut nfe).unwrap();
        for (a, b) in xg.iter().zip(xc.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in jg.iter().zip(jc.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn outside_interval_is_unguided_conditional() {
        let (cond, uncond) = pair();
        let guided = GuidedDenoiser::new(cond.clone(), uncond, 1.5, (-3.0, 5.0)).unwrap();
        // logsnr at t -> 1 is far below the interval.
        let noise = make_noise_info(0.99, ScheduleKind::Cosine).unwrap();
        assert!(!guided.active(noise.logsnr));
        let mut rng = sample_stream(31, 0);
        let z = normal_array(&mut rng, &[3, 1, 1]);
        let mut nfe = NfeLedger::new();
        let xg = guided.predict(&z, &noise, &mut nfe).unwrap();
        assert_eq!(nfe.total(), 1, "one pass outside the interval");
        let xc = cond.predict(&z, &noise, &mut NfeLedger::new()).unwrap();
        assert_eq!(xg, xc);

        let u = normal_array(&mut rng, &[3, 1, 1]);
        let mut nfe = NfeLedger::new();
        let _ = guided.predict_jvp(&z, &noise, &u, &mut nfe).unwrap();
        assert_eq!(nfe.total(), 2, "two passes only outside the interval");
    }

    #[test]
    fn zero_scale_gives_unconditional_value_but_zero_tangent() {
        let (cond, uncond) = pair();
        let guided = GuidedDenoiser::new(cond, uncond.clone(), 0.0, (-3.0, 5.0)).unwrap();
        let noise = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        let mut rng = sample_stream(32, 0);
        let z = normal_array(&mut rng, &[3, 1, 1]);
        let u = normal_array(&mut rng, &[3, 1, 1]);
        let mut nfe = NfeLedger::new();
        let (xg, jg) = guided.predict_jvp(&z, &noise, &u, &mut nfe).unwrap();
        let xu = uncond.predict(&z, &noise, &mut NfeLedger::new()).unwrap();
        for (a, b) in xg.iter().zip(xu.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(jg.iter().all(|&v| v == 0.0), "stop-gradient semantics");
    }

    #[test]
    fn evaluation_counts_inside_interval() {
        let (cond, uncond) = pair();
        let guided = GuidedDenoiser::new(cond, uncond, 1.2, (-3.0, 5.0)).unwrap();
        let noise = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        let mut rng = sample_stream(33, 0);
        let z = normal_array(&mut rng, &[3, 1, 1]);
        let u = normal_array(&mut rng, &[3, 1, 1]);

        let mut nfe = NfeLedger::new();
        let _ = guided.predict(&z, &noise, &mut nfe).unwrap();
        assert_eq!(nfe.total(), 2);

        let mut nfe = NfeLedger::new();
        let _ = guided.predict_jvp(&z, &noise, &u, &mut nfe).unwrap();
        assert_eq!(nfe.total(), 3, "uncond value + cond value + cond tangent");
    }

    #[test]
    fn rejects_bad_interval() {
        let (cond, uncond) = pair();
        assert!(GuidedDenoiser::new(cond, uncond, 1.2, (5.0, -3.0)).is_err());
    }
}
