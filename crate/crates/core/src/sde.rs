//! Noise schedules, closed-form Gaussian perturbation kernels and
//! Euler–Maruyama / Langevin steps for the reverse-time SDE.
//!
//! Everything here is a pure function of its arguments. Noise is always
//! passed in by the caller, so a seeded generator owned upstream fixes every
//! trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sampling stops here instead of at `t = 0`, where the kernel degenerates.
pub const T_EPS: f64 = 1e-3;

/// Floor on the Langevin step size when the score has zero norm.
pub const CORRECTOR_STEP_FLOOR: f64 = 1e-6;

/// Forward SDE on `t in [0, 1]`.
///
/// * VP: `beta(t) = beta_min + t (beta_max - beta_min)`, drift `-beta(t) x / 2`,
///   diffusion `sqrt(beta(t))`.
/// * VE: `sigma(t) = sigma_min (sigma_max / sigma_min)^t`, zero drift,
///   diffusion `sigma(t) sqrt(2 ln(sigma_max / sigma_min))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionSchedule<T> {
    VariancePreserving { beta_min: T, beta_max: T },
    VarianceExploding { sigma_min: T, sigma_max: T },
}

impl<T: Real> Default for DiffusionSchedule<T> {
    fn default() -> Self {
        Self::VariancePreserving { beta_min: T::lit(0.1), beta_max: T::lit(20.0) }
    }
}

/// `p_t(x_t | x_0) = N(mean_scale * x_0, std^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationKernel<T> {
    pub mean_scale: T,
    pub std: T,
}

impl<T: Real> DiffusionSchedule<T> {
    pub fn vp(beta_min: T, beta_max: T) -> Result<Self> {
        let s = Self::VariancePreserving { beta_min, beta_max };
        s.validate()?;
        Ok(s)
    }

    pub fn ve(sigma_min: T, sigma_max: T) -> Result<Self> {
        let s = Self::VarianceExploding { sigma_min, sigma_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi, name) = match *self {
            Self::VariancePreserving { beta_min, beta_max } => (beta_min, beta_max, "beta"),
            Self::VarianceExploding { sigma_min, sigma_max } => (sigma_min, sigma_max, "sigma"),
        };
        if !(lo.is_finite() && hi.is_finite() && lo > T::zero() && lo < hi) {
            return Err(Error::Config(format!(
                "{name}_min must be positive and below {name}_max (got {lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// `int_0^t beta(s) ds` for VP.
    fn integrated_beta(beta_min: T, beta_max: T, t: T) -> T {
        beta_min * t + T::lit(0.5) * t * t * (beta_max - beta_min)
    }

    pub fn kernel(&self, t: T) -> PerturbationKernel<T> {
        match *self {
            Self::VariancePreserving { beta_min, beta_max } => {
                let b = Self::integrated_beta(beta_min, beta_max, t);
                PerturbationKernel {
                    mean_scale: (-T::lit(0.5) * b).exp(),
                    std: (-(-b).exp_m1()).max(T::zero()).sqrt(),
                }
            }
            Self::VarianceExploding { sigma_min, sigma_max } => {
                let sigma = sigma_min * (sigma_max / sigma_min).powf(t);
                PerturbationKernel {
                    mean_scale: T::one(),
                    std: (sigma * sigma - sigma_min * sigma_min).max(T::zero()).sqrt(),
                }
            }
        }
    }

    #[inline]
    pub fn mean_scale(&self, t: T) -> T {
        self.kernel(t).mean_scale
    }

    #[inline]
    pub fn std(&self, t: T) -> T {
        self.kernel(t).std
    }

    /// Diffusion coefficient `sigma_t` of the forward SDE.
    pub fn diffusion_coeff(&self, t: T) -> T {
        match *self {
            Self::VariancePreserving { beta_min, beta_max } => {
                (beta_min + t * (beta_max - beta_min)).sqrt()
            }
            Self::VarianceExploding { sigma_min, sigma_max } => {
                let ratio = sigma_max / sigma_min;
                sigma_min * ratio.powf(t) * (T::lit(2.0) * ratio.ln()).sqrt()
            }
        }
    }

    /// Drift `f(x, t)`.
    pub fn drift(&self, x: &[T], t: T) -> Vec<T> {
        match *self {
            Self::VariancePreserving { beta_min, beta_max } => {
                let half_beta = T::lit(0.5) * (beta_min + t * (beta_max - beta_min));
                x.iter().map(|&v| -half_beta * v).collect()
            }
            Self::VarianceExploding { .. } => vec![T::zero(); x.len()],
        }
    }
}

fn check_time<T: Real>(t: T) -> Result<()> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.to_f64_lossy()));
    }
    Ok(())
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: length {a} vs {b}")));
    }
    Ok(())
}

/// Draws `x_t = mean_scale(t) x0 + std(t) noise`.
pub fn forward_sample<T: Real>(
    schedule: &DiffusionSchedule<T>,
    x0: &[T],
    t: T,
    noise: &[T],
) -> Result<Vec<T>> {
    check_time(t)?;
    check_len("forward_sample noise", x0.len(), noise.len())?;
    let k = schedule.kernel(t);
    Ok(x0.iter().zip(noise).map(|(&x, &z)| k.mean_scale * x + k.std * z).collect())
}

/// `grad_{x_t} log p_t(x_t | x_0) = -(x_t - mean_scale x_0) / std^2`.
pub fn analytic_score<T: Real>(
    schedule: &DiffusionSchedule<T>,
    xt: &[T],
    x0: &[T],
    t: T,
) -> Result<Vec<T>> {
    check_time(t)?;
    check_len("analytic_score", xt.len(), x0.len())?;
    let k = schedule.kernel(t);
    if k.std <= T::zero() {
        return Err(Error::DegenerateKernel(t.to_f64_lossy()));
    }
    let var = k.std * k.std;
    Ok(xt.iter().zip(x0).map(|(&x, &x0)| -(x - k.mean_scale * x0) / var).collect())
}

/// One Euler–Maruyama step of the reverse-time SDE, from `t` to `t - dt`:
/// `x - [f(x, t) - g(t)^2 score] dt + g(t) sqrt(dt) noise`.
pub fn reverse_step<T: Real>(
    schedule: &DiffusionSchedule<T>,
    xt: &[T],
    t: T,
    dt: T,
    score: &[T],
    noise: &[T],
) -> Result<Vec<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.to_f64_lossy()));
    }
    if dt > t + T::epsilon() * T::lit(4.0) {
        return Err(Error::InvalidStep(format!("dt {dt} exceeds t {t}")));
    }
    check_len("reverse_step score", xt.len(), score.len())?;
    check_len("reverse_step noise", xt.len(), noise.len())?;
    let g = schedule.diffusion_coeff(t);
    let g2 = g * g;
    let drift = schedule.drift(xt, t);
    let noise_scale = g * dt.sqrt();
    Ok(xt
        .iter()
        .zip(&drift)
        .zip(score.iter().zip(noise))
        .map(|((&x, &f), (&s, &z))| x - (f - g2 * s) * dt + noise_scale * z)
        .collect())
}

/// Langevin corrector `x + eps score + sqrt(2 eps) noise` with
/// `eps = 2 (snr ||noise|| / ||score||)^2`. `snr = 0` is the identity; a
/// zero score falls back to [`CORRECTOR_STEP_FLOOR`].
pub fn corrector_step<T: Real>(
    _schedule: &DiffusionSchedule<T>,
    xt: &[T],
    t: T,
    score: &[T],
    noise: &[T],
    snr: T,
) -> Result<Vec<T>> {
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.to_f64_lossy()));
    }
    check_len("corrector_step score", xt.len(), score.len())?;
    check_len("corrector_step noise", xt.len(), noise.len())?;
    if snr == T::zero() {
        return Ok(xt.to_vec());
    }
    let score_norm = score.iter().map(|&s| s * s).sum::<T>().sqrt();
    let noise_norm = noise.iter().map(|&z| z * z).sum::<T>().sqrt();
    let eps = if score_norm > T::zero() {
        let r = snr * noise_norm / score_norm;
        T::lit(2.0) * r * r
    } else {
        T::lit(CORRECTOR_STEP_FLOOR)
    };
    let noise_scale = (T::lit(2.0) * eps).sqrt();
    Ok(xt
        .iter()
        .zip(score.iter().zip(noise))
        .map(|(&x, (&s, &z))| x + eps * s + noise_scale * z)
        .collect())
}

/// Sample from the terminal distribution: `noise` for VP, `sigma_max noise`
/// for VE.
pub fn prior_sample<T: Real>(schedule: &DiffusionSchedule<T>, dim: usize, noise: &[T]) -> Result<Vec<T>> {
    if dim == 0 {
        return Err(Error::Shape("prior dimension must be positive".into()));
    }
    check_len("prior_sample noise", dim, noise.len())?;
    Ok(match *schedule {
        DiffusionSchedule::VariancePreserving { .. } => noise.to_vec(),
        DiffusionSchedule::VarianceExploding { sigma_max, .. } => {
            noise.iter().map(|&z| sigma_max * z).collect()
        }
    })
}

/// Discretization of the reverse chain from `t = 1` down to `t_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeStepPlan {
    pub num_steps: usize,
    #[serde(default)]
    pub corrector_steps: usize,
    #[serde(default = "default_snr")]
    pub corrector_snr: f64,
}

fn default_snr() -> f64 {
    0.16
}

impl SdeStepPlan {
    pub fn new(num_steps: usize) -> Result<Self> {
        let plan = Self { num_steps, corrector_steps: 0, corrector_snr: default_snr() };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::InvalidStep("num_steps must be at least 1".into()));
        }
        if !(self.corrector_snr > 0.0) {
            return Err(Error::InvalidStep("corrector_snr must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.num_steps as f64
    }

    /// `(t, h)` pairs: the chain steps from `t` by `h`. The nominal step is
    /// `t_start / num_steps` (`dt` when starting from `t = 1`), and the last
    /// step is shortened so the chain ends exactly at `t_end`.
    pub fn time_grid<T: Real>(&self, t_start: T, t_end: T) -> Vec<(T, T)> {
        let nominal = T::lit(self.dt()) * t_start;
        let mut out = Vec::with_capacity(self.num_steps);
        let mut t = t_start;
        for _ in 0..self.num_steps {
            if t <= t_end {
                break;
            }
            let next = (t - nominal).max(t_end);
            out.push((t, t - next));
            t = next;
        }
        out
    }
}

/// Runs predictor (and optional corrector) steps from `x` at `t_start` down
/// to `t_end`. `score(x, t)` evaluates the score, `noise(len)` draws a
/// standard-normal vector.
pub fn run_reverse_chain<T, S, N>(
    schedule: &DiffusionSchedule<T>,
    plan: &SdeStepPlan,
    mut x: Vec<T>,
    t_start: T,
    t_end: T,
    mut score: S,
    mut noise: N,
) -> Result<Vec<T>>
where
    T: Real,
    S: FnMut(&[T], T) -> Result<Vec<T>>,
    N: FnMut(usize) -> Vec<T>,
{
    plan.validate()?;
    let snr = T::lit(plan.corrector_snr);
    for (t, h) in plan.time_grid(t_start, t_end) {
        for _ in 0..plan.corrector_steps {
            let s = score(&x, t)?;
            let z = noise(x.len());
            x = corrector_step(schedule, &x, t, &s, &z, snr)?;
        }
        let s = score(&x, t)?;
        let z = noise(x.len());
        x = reverse_step(schedule, &x, t, h, &s, &z)?;
    }
    Ok(x)
}
