//! Variance-preserving noise schedules and the per-time noise state every
//! sampler step consumes.
//!
//! All schedules keep `alpha^2 + sigma^2 = 1`. At the endpoints the
//! log-SNR is stored as an infinity sentinel; consumers branch on it (the
//! DDIM step already special-cases `sigma_s == 0`).

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-time diffusion state: time, signal coefficient, noise coefficient
/// and log signal-to-noise ratio `l = log(alpha^2 / sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInfo {
    pub t: Option<f64>,
    pub alpha: f64,
    pub sigma: f64,
    pub logsnr: f64,
}

impl NoiseInfo {
    /// Builds directly from a log-SNR value: `alpha^2 = sigmoid(l)`.
    pub fn from_logsnr(t: Option<f64>, logsnr: f64) -> Self {
        let (alpha, sigma) = if logsnr == f64::INFINITY {
            (1.0, 0.0)
        } else if logsnr == f64::NEG_INFINITY {
            (0.0, 1.0)
        } else {
            (sigmoid(logsnr).sqrt(), sigmoid(-logsnr).sqrt())
        };
        NoiseInfo { t, alpha, sigma, logsnr }
    }

    /// Array-valued view of the scalar fields (rank 0), ready for
    /// broadcasting.
    pub fn fields(&self) -> NoiseFields {
        let scalar = |v: f64| ArrayD::from_elem(IxDyn(&[]), v);
        NoiseFields {
            t: self.t.map(scalar),
            alpha: scalar(self.alpha),
            sigma: scalar(self.sigma),
            logsnr: scalar(self.logsnr),
        }
    }
}

/// `NoiseInfo` with array-valued fields, used where per-element noise
/// state is broadcast against data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFields {
    pub t: Option<ArrayD<f64>>,
    pub alpha: ArrayD<f64>,
    pub sigma: ArrayD<f64>,
    pub logsnr: ArrayD<f64>,
}

impl NoiseFields {
    /// Expands every field with trailing singleton axes, then broadcasts
    /// to `shape`. Idempotent when already at the target shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<NoiseFields> {
        let expand = |arr: &ArrayD<f64>| -> Result<ArrayD<f64>> {
            if shape.len() < arr.ndim() {
                return Err(Error::invalid_argument(format!(
                    "target rank {} shorter than field rank {}",
                    shape.len(),
                    arr.ndim()
                )));
            }
            let mut padded: Vec<usize> = arr.shape().to_vec();
            padded.extend(std::iter::repeat_n(1, shape.len() - arr.ndim()));
            let reshaped = arr
                .clone()
                .into_shape_with_order(IxDyn(&padded))
                .map_err(|e| Error::invalid_argument(format!("reshape failed: {e}")))?;
            let broadcast = reshaped
                .broadcast(IxDyn(shape))
                .ok_or_else(|| {
                    Error::invalid_argument(format!(
                        "cannot broadcast field of shape {:?} to {:?}",
                        arr.shape(),
                        shape
                    ))
                })?
                .to_owned();
            Ok(broadcast)
        };
        Ok(NoiseFields {
            t: match &self.t {
                Some(t) => Some(expand(t)?),
                None => None,
            },
            alpha: expand(&self.alpha)?,
            sigma: expand(&self.sigma)?,
            logsnr: expand(&self.logsnr)?,
        })
    }
}

/// Noise schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// `alpha = cos(pi t / 2)`, `sigma = sin(pi t / 2)`.
    Cosine,
    /// Cosine log-SNR offset by a constant, then `alpha^2 = sigmoid(l)`.
    ShiftedCosine { shift: f64 },
    /// Log-SNR linear in `t`, from `l_max` at `t = 0` down to `l_min` at
    /// `t = 1`.
    LinearLogsnr { l_min: f64, l_max: f64 },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn cosine_logsnr(t: f64) -> f64 {
    if t == 0.0 {
        f64::INFINITY
    } else if t == 1.0 {
        f64::NEG_INFINITY
    } else {
        let a = (std::f64::consts::FRAC_PI_2 * t).cos();
        let s = (std::f64::consts::FRAC_PI_2 * t).sin();
        2.0 * (a.ln() - s.ln())
    }
}

impl ScheduleKind {
    /// Log-SNR at time `t` (no range check; endpoints give infinities for
    /// the cosine family).
    pub fn logsnr(&self, t: f64) -> f64 {
        match *self {
            ScheduleKind::Cosine => cosine_logsnr(t),
            ScheduleKind::ShiftedCosine { shift } => cosine_logsnr(t) + shift,
            ScheduleKind::LinearLogsnr { l_min, l_max } => l_max + (l_min - l_max) * t,
        }
    }
}

/// Builds the noise state at time `t` in `[0, 1]`.
pub fn make_noise_info(t: f64, schedule: ScheduleKind) -> Result<NoiseInfo> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid_argument(format!(
            "time {t} outside [0, 1]"
        )));
    }
    match schedule {
        ScheduleKind::Cosine => {
            // Exact endpoints; elsewhere evaluate the trigonometric form
            // directly so alpha^2 + sigma^2 is 1 to rounding.
            let (alpha, sigma) = if t == 0.0 {
                (1.0, 0.0)
            } else if t == 1.0 {
                (0.0, 1.0)
            } else {
                (
                    (std::f64::consts::FRAC_PI_2 * t).cos(),
                    (std::f64::consts::FRAC_PI_2 * t).sin(),
                )
            };
            Ok(NoiseInfo { t: Some(t), alpha, sigma, logsnr: cosine_logsnr(t) })
        }
        ScheduleKind::ShiftedCosine { .. } | ScheduleKind::LinearLogsnr { .. } => {
            Ok(NoiseInfo::from_logsnr(Some(t), schedule.logsnr(t)))
        }
    }
}

/// Spacing rule for [`make_time_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridSpacing {
    UniformT,
    UniformLogsnr,
}

/// Strictly decreasing times `1.0 = t_0 > ... > t_N = 0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(Error::invalid_argument(
                "time grid must run from 1.0 down to 0.0",
            ));
        }
        if !times.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::invalid_argument("time grid must be strictly decreasing"));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of sampler steps (one fewer than grid points).
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Consecutive `(t, s)` pairs, `t > s`.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Log-SNR magnitude used to stand in for the infinite endpoint values
/// when spacing a grid uniformly in log-SNR.
const GRID_LOGSNR_CLAMP: f64 = 20.0;

/// Builds an `num_steps`-step grid from 1.0 down to 0.0.
///
/// Uniform-logsnr spacing places the interior points at equal log-SNR
/// increments of `schedule`, inverting `l(t)` by bisection; the endpoints
/// stay pinned at exactly 1.0 and 0.0.
pub fn make_time_grid(
    num_steps: usize,
    spacing: GridSpacing,
    schedule: ScheduleKind,
) -> Result<TimeGrid> {
    if num_steps < 1 {
        return Err(Error::invalid_argument("num_steps must be >= 1"));
    }
    let n = num_steps;
    let times = match spacing {
        GridSpacing::UniformT => (0..=n)
            .map(|i| {
                if i == n {
                    0.0
                } else {
                    1.0 - i as f64 / n as f64
                }
            })
            .collect::<Vec<_>>(),
        GridSpacing::UniformLogsnr => {
            let l_at_1 = schedule.logsnr(1.0).max(-GRID_LOGSNR_CLAMP);
            let l_at_0 = schedule.logsnr(0.0).min(GRID_LOGSNR_CLAMP);
            let mut times = Vec::with_capacity(n + 1);
            times.push(1.0);
            for i in 1..n {
                let l = l_at_1 + (l_at_0 - l_at_1) * i as f64 / n as f64;
                times.push(invert_logsnr(schedule, l));
            }
            times.push(0.0);
            times
        }
    };
    TimeGrid::from_times(times)
}

/// Bisection solve of `logsnr(t) = target`; `logsnr` is strictly
/// decreasing in `t` for every schedule.
fn invert_logsnr(schedule: ScheduleKind, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64); // logsnr(lo) >= target >= logsnr(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if schedule.logsnr(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
