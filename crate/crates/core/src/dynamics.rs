//! Perturbation fields `f(t, x, eps)`, sampled estimates of their Lipschitz
//! and monotonicity constants, Bohr-mean averaging and integral-continuity
//! deviations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Result, SweepError};
use crate::linalg;

/// Minimum sample count for constant estimation.
pub const MIN_ESTIMATE_SAMPLES: usize = 1_000;
/// Minimum quadrature step count.
pub const MIN_QUADRATURE_STEPS: usize = 1_000;
/// Quadrature steps per fast oscillation time scale.
pub const STEPS_PER_FAST_SCALE: f64 = 20.0;
/// Quadrature nodes per fast time scale in [`integral_deviation`].
pub const QUADRATURE_POINTS_PER_FAST_SCALE: f64 = 2_000.0;

pub type FieldFn = dyn Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync;
pub type TimeField = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// The perturbation term `f(t, x, eps)` of the sweeping process.
#[derive(Clone)]
pub struct Perturbation {
    dim: usize,
    eval: Arc<FieldFn>,
    /// Reference parameter at which monotonicity is assumed.
    pub eps0: f64,
    pub declared_lipschitz: Option<f64>,
    pub declared_alpha: Option<f64>,
    fast_time_scale: Option<fn(f64) -> f64>,
}

impl std::fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("dim", &self.dim)
            .field("eps0", &self.eps0)
            .field("declared_lipschitz", &self.declared_lipschitz)
            .field("declared_alpha", &self.declared_alpha)
            .finish_non_exhaustive()
    }
}

impl Perturbation {
    pub fn new<F>(dim: usize, eps0: f64, eval: F) -> Self
    where
        F: Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        Perturbation {
            dim,
            eval: Arc::new(eval),
            eps0,
            declared_lipschitz: None,
            declared_alpha: None,
            fast_time_scale: None,
        }
    }

    pub fn with_declared_lipschitz(mut self, l: f64) -> Self {
        self.declared_lipschitz = Some(l);
        self
    }

    pub fn with_declared_alpha(mut self, alpha: f64) -> Self {
        self.declared_alpha = Some(alpha);
        self
    }

    /// Declares the shortest oscillation time scale of the field as a
    /// function of `eps` (e.g. `|eps|` for `sin(t / eps)` terms).
    pub fn with_fast_time_scale(mut self, scale: fn(f64) -> f64) -> Self {
        self.fast_time_scale = Some(scale);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, x: &[f64], eps: f64) -> Vec<f64> {
        (self.eval)(t, x, eps)
    }

    /// Evaluation with dimension and finiteness checks.
    pub fn try_eval(&self, t: f64, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let v = (self.eval)(t, x, eps);
        if v.len() != self.dim {
            return Err(SweepError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if !linalg::all_finite(&v) {
            return Err(SweepError::NonFinite(format!("field value at t = {t}")));
        }
        Ok(v)
    }

    /// Shortest oscillation time scale at `eps`, if the field declares one.
    pub fn fast_time_scale(&self, eps: f64) -> Option<f64> {
        if eps == self.eps0 {
            return None;
        }
        self.fast_time_scale.map(|s| s(eps)).filter(|s| *s > 0.0)
    }

    /// Largest step that resolves the fast time scale at `eps`.
    pub fn max_resolving_step(&self, eps: f64) -> Option<f64> {
        self.fast_time_scale(eps).map(|s| s / STEPS_PER_FAST_SCALE)
    }
}

/// Sampled Lipschitz constants in state and time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub state: f64,
    pub time: f64,
}

fn check_window(window: (f64, f64)) -> Result<()> {
    if !(window.0.is_finite() && window.1.is_finite() && window.0 <= window.1) {
        return Err(SweepError::InvalidArgument(format!("invalid time window {window:?}")));
    }
    Ok(())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_ESTIMATE_SAMPLES {
        return Err(SweepError::InvalidArgument(format!(
            "need at least {MIN_ESTIMATE_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Uniform sample from the closed ball of `radius` around the origin.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = linalg::norm(&g);
        if len > 1e-300 {
            let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
            return linalg::scale(&g, r / len);
        }
    }
}

fn sample_time<R: Rng + ?Sized>(rng: &mut R, window: (f64, f64)) -> f64 {
    window.0 + (window.1 - window.0) * rng.gen::<f64>()
}

/// Sampled monotonicity constant
/// `min <f(t,x1)-f(t,x2), x1-x2> / |x1-x2|^2` over `t` uniform in
/// `t_window` and `x1, x2` uniform in the ball of `domain_radius`.
///
/// The minimum over samples can only overestimate the true infimum.
pub fn estimate_monotonicity<R: Rng + ?Sized>(
    f: &Perturbation,
    eps: f64,
    domain_radius: f64,
    t_window: (f64, f64),
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_samples(samples)?;
    check_window(t_window)?;
    if !(domain_radius > 0.0) {
        return Err(SweepError::InvalidArgument(format!("domain radius must be positive, got {domain_radius}")));
    }
    let dim = f.dim();
    let mut alpha = f64::INFINITY;
    for _ in 0..samples {
        let t = sample_time(rng, t_window);
        let x1 = sample_ball(rng, dim, domain_radius);
        let x2 = sample_ball(rng, dim, domain_radius);
        let d = linalg::sub(&x1, &x2);
        let d2 = linalg::dot(&d, &d);
        if d2 < 1e-24 {
            continue;
        }
        let df = linalg::sub(&f.try_eval(t, &x1, eps)?, &f.try_eval(t, &x2, eps)?);
        alpha = alpha.min(linalg::dot(&df, &d) / d2);
    }
    Ok(alpha)
}

/// Sampled maxima of the difference quotients of `f` in state and in time.
///
/// Half of the pairs are independent, half are close pairs at log-uniform
/// separations so that local slopes are resolved. Time separations stay below
/// the field's fast time scale when one is declared.
pub fn estimate_lipschitz<R: Rng + ?Sized>(
    f: &Perturbation,
    eps: f64,
    domain_radius: f64,
    t_window: (f64, f64),
    samples: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    check_samples(samples)?;
    check_window(t_window)?;
    if !(domain_radius > 0.0) {
        return Err(SweepError::InvalidArgument(format!("domain radius must be positive, got {domain_radius}")));
    }
    let dim = f.dim();
    let span = (t_window.1 - t_window.0).max(f64::MIN_POSITIVE);
    let t_base = match f.fast_time_scale(eps) {
        Some(s) => span.min(s),
        None => span,
    };
    let mut state: f64 = 0.0;
    let mut time: f64 = 0.0;
    for k in 0..samples {
        let close = k % 2 == 1;
        let t = sample_time(rng, t_window);
        let x1 = sample_ball(rng, dim, domain_radius);
        let x2 = if close {
            let sep = domain_radius * 10f64.powf(-1.0 - 5.0 * rng.gen::<f64>());
            linalg::axpy(&x1, 1.0, &sample_ball(rng, dim, sep))
        } else {
            sample_ball(rng, dim, domain_radius)
        };
        let dx = linalg::dist(&x1, &x2);
        if dx > 1e-300 {
            let df = linalg::dist(&f.try_eval(t, &x1, eps)?, &f.try_eval(t, &x2, eps)?);
            state = state.max(df / dx);
        }

        let t2 = if close {
            let sep = t_base * 10f64.powf(-2.0 - 4.0 * rng.gen::<f64>());
            if rng.gen::<bool>() {
                t + sep
            } else {
                t - sep
            }
        } else {
            sample_time(rng, t_window)
        };
        let dt = (t2 - t).abs();
        if dt > 0.0 {
            let df = linalg::dist(&f.try_eval(t, &x1, eps)?, &f.try_eval(t2, &x1, eps)?);
            time = time.max(df / dt);
        }
    }
    Ok(LipschitzEstimate { state, time })
}

/// Time average with a convergence indicator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BohrMean {
    /// Trapezoid approximation of `(1/T) int_0^T g(tau, x) dtau`.
    pub value: Vec<f64>,
    /// `|mean(T) - mean(T/2)|`.
    pub tail: f64,
}

/// Composite-trapezoid Bohr mean of `g(., x)` over `[0, horizon]`.
pub fn bohr_mean(g: &TimeField, x: &[f64], horizon: f64, steps: usize) -> Result<BohrMean> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SweepError::InvalidArgument(format!("averaging horizon must be positive, got {horizon}")));
    }
    if steps < MIN_QUADRATURE_STEPS {
        return Err(SweepError::InvalidArgument(format!(
            "need at least {MIN_QUADRATURE_STEPS} quadrature steps, got {steps}"
        )));
    }
    let n = steps + steps % 2;
    let dt = horizon / n as f64;
    let eval = |k: usize| -> Result<Vec<f64>> {
        let v = g(k as f64 * dt, x);
        if !linalg::all_finite(&v) {
            return Err(SweepError::NonFinite(format!("averaged integrand at tau = {}", k as f64 * dt)));
        }
        Ok(v)
    };
    let first = eval(0)?;
    let dim = first.len();
    let mut acc: Vec<f64> = linalg::scale(&first, 0.5);
    let mut half = Vec::new();
    for k in 1..=n {
        let v = eval(k)?;
        if v.len() != dim {
            return Err(SweepError::DimensionMismatch { expected: dim, got: v.len() });
        }
        let w = if k == n / 2 || k == n { 0.5 } else { 1.0 };
        for (a, vi) in acc.iter_mut().zip(&v) {
            *a += w * vi;
        }
        if k == n / 2 {
            half = acc.iter().map(|a| a * dt / (0.5 * horizon)).collect();
            // second half starts with the other half-weight of the midpoint
            for (a, vi) in acc.iter_mut().zip(&v) {
                *a += 0.5 * vi;
            }
        }
    }
    let value: Vec<f64> = acc.iter().map(|a| a * dt / horizon).collect();
    let tail = linalg::dist(&value, &half);
    Ok(BohrMean { value, tail })
}

/// Pointwise Bohr mean `g0(x)` of a fast-time field with an exact-argument
/// memo.
pub struct AveragedField {
    g: Arc<TimeField>,
    dim: usize,
    pub horizon: f64,
    pub steps: usize,
    cache: Mutex<HashMap<Vec<u64>, Vec<f64>>>,
}

impl std::fmt::Debug for AveragedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AveragedField")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

/// Wraps [`bohr_mean`] into a state-only field `g0`.
pub fn averaged_field(g: Arc<TimeField>, dim: usize, horizon: f64, steps: usize) -> Result<AveragedField> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SweepError::InvalidArgument(format!("averaging horizon must be positive, got {horizon}")));
    }
    if steps < MIN_QUADRATURE_STEPS {
        return Err(SweepError::InvalidArgument(format!(
            "need at least {MIN_QUADRATURE_STEPS} quadrature steps, got {steps}"
        )));
    }
    Ok(AveragedField {
        g,
        dim,
        horizon,
        steps,
        cache: Mutex::new(HashMap::new()),
    })
}

impl AveragedField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(SweepError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.cache.lock().expect("averaged-field cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let mean = bohr_mean(self.g.as_ref(), x, self.horizon, self.steps)?;
        self.cache
            .lock()
            .expect("averaged-field cache poisoned")
            .insert(key, mean.value.clone());
        Ok(mean.value)
    }

    pub fn cached_points(&self) -> usize {
        self.cache.lock().expect("averaged-field cache poisoned").len()
    }

    /// Time-independent perturbation `f(t, x, eps) = g0(x)`. Averaging
    /// failures surface as non-finite field values.
    pub fn into_perturbation(self, eps0: f64) -> Perturbation {
        let dim = self.dim;
        let field = Arc::new(self);
        Perturbation::new(dim, eps0, move |_t, x, _eps| {
            field.eval(x).unwrap_or_else(|_| vec![f64::NAN; dim])
        })
    }
}

/// `| int_tau^t (f(s,x,eps) - f(s,x,eps0)) ds |` by composite trapezoid.
///
/// The step count is raised automatically so that the quadrature step
/// resolves the field's fast time scale at `eps`.
pub fn integral_deviation(f: &Perturbation, eps: f64, x: &[f64], tau: f64, t: f64, steps: usize) -> Result<f64> {
    if !(t > tau) {
        return Err(SweepError::InvalidArgument(format!("need t > tau, got [{tau}, {t}]")));
    }
    if steps < MIN_QUADRATURE_STEPS {
        return Err(SweepError::InvalidArgument(format!(
            "need at least {MIN_QUADRATURE_STEPS} quadrature steps, got {steps}"
        )));
    }
    if eps == f.eps0 {
        return Ok(0.0);
    }
    let mut n = steps;
    if let Some(scale) = f.fast_time_scale(eps) {
        n = n.max(((t - tau) * QUADRATURE_POINTS_PER_FAST_SCALE / scale).ceil() as usize);
    }
    let ds = (t - tau) / n as f64;
    let mut acc = vec![0.0; f.dim()];
    for k in 0..=n {
        let s = tau + k as f64 * ds;
        let d = linalg::sub(&f.try_eval(s, x, eps)?, &f.try_eval(s, x, f.eps0)?);
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        for (a, di) in acc.iter_mut().zip(&d) {
            *a += w * di;
        }
    }
    Ok(linalg::norm(&acc) * ds)
}
