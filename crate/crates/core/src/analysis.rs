//! Verification suites: Gronwall envelopes, incremental stability,
//! almost-period detection, perturbation response and averaging.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::convex_sets::{default_dir_samples, directions, hausdorff_distance, MovingSet};
use crate::dynamics::{estimate_monotonicity, integral_deviation, Perturbation, MIN_QUADRATURE_STEPS};
use crate::error::{Result, SweepError};
use crate::integrator::{bounded_solution, burn_in_horizon, catch_up, fmt_f64, least_squares, Scenario, Trajectory};
use crate::linalg;

/// Multiplicative slack of [`gronwall_check`].
pub const GRONWALL_SLACK: f64 = 1e-6;
/// Slack of the squared-gap envelope in [`incremental_decay`].
pub const DECAY_ENVELOPE_SLACK: f64 = 0.05;
/// Gaps at or below `DECAY_FLOOR_STEPS * h` are discretization noise.
pub const DECAY_FLOOR_STEPS: f64 = 10.0;
/// Burn-in tolerance for reference solutions.
pub const REFERENCE_TOL: f64 = 1e-6;
/// Inflation of sampled `sup |f_eps - f_eps0|`.
pub const SUP_DF_INFLATION: f64 = 1.1;
/// Relative slack on response bounds.
pub const RESPONSE_BOUND_SLACK: f64 = 1.05;
/// Absolute slack on response bounds, in steps.
pub const RESPONSE_STEP_SLACK: f64 = 5.0;
/// Allowed relative increase between consecutive averaging gaps.
pub const AVERAGING_NOISE_BAND: f64 = 1.2;
/// Monotonicity samples when the averaged field declares no constant.
const ALPHA_SAMPLES: usize = 4_000;
/// Evaluation times for the integral deviation diagnostic.
const DEVIATION_POINTS: usize = 11;
const GOLDEN_ITERATIONS: usize = 90;
const ENVELOPE_SUBSTEP: f64 = 1e-4;

fn check_series(samples: &[(f64, f64)]) -> Result<()> {
    if samples.len() < 3 {
        return Err(SweepError::InvalidArgument(format!(
            "need at least three samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
        return Err(SweepError::NonFinite("Gronwall samples".into()));
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(SweepError::InvalidArgument("samples are not sorted by time".into()));
    }
    Ok(())
}

/// Envelope `e^{lambda (t - t0)} a(t0) + int_{t0}^t e^{lambda (t - s)} b(s) ds`
/// at every sample time.
pub fn gronwall_envelope(samples: &[(f64, f64)], lambda: f64, b: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    check_series(samples)?;
    let (t0, a0) = samples[0];
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(samples.len());
    out.push(a0);
    for w in samples.windows(2) {
        let (ta, tb) = (w[0].0, w[1].0);
        let span = tb - ta;
        let m = ((lambda.abs() * span / ENVELOPE_SUBSTEP).ceil() as usize).max(16);
        let ds = span / m as f64;
        let mut piece = 0.0;
        for j in 0..=m {
            let s = ta + j as f64 * ds;
            let wgt = if j == 0 || j == m { 0.5 } else { 1.0 };
            piece += wgt * (lambda * (tb - s)).exp() * b(s);
        }
        integral = (lambda * span).exp() * integral + piece * ds;
        out.push((lambda * (tb - t0)).exp() * a0 + integral);
    }
    Ok(out)
}

/// `true` iff `a(t) <= psi(t) (1 + 1e-6)` at every sample, where `psi` is the
/// Gronwall envelope of `a' <= lambda a + b`.
pub fn gronwall_check(samples: &[(f64, f64)], lambda: f64, b: &dyn Fn(f64) -> f64) -> Result<bool> {
    gronwall_check_with_slack(samples, lambda, b, GRONWALL_SLACK)
}

pub fn gronwall_check_with_slack(
    samples: &[(f64, f64)],
    lambda: f64,
    b: &dyn Fn(f64) -> f64,
    slack: f64,
) -> Result<bool> {
    let env = gronwall_envelope(samples, lambda, b)?;
    Ok(samples
        .iter()
        .zip(&env)
        .all(|((_, a), psi)| *a <= psi + slack * psi.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Least-squares slope of `ln |x_a - x_b|`; `None` when every gap sits
    /// on the discretization floor.
    pub fitted_rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub gap_samples: Vec<(f64, f64)>,
    pub gronwall_satisfied: bool,
}

impl StabilityReport {
    pub fn write_gap_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,gap")?;
        for (t, g) in &self.gap_samples {
            writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*g))?;
        }
        Ok(())
    }
}

/// Integrates `s` from two starts and compares the squared gap with
/// `e^{-2 alpha (t - t0)} |x_a(t0) - x_b(t0)|^2` until the gap first reaches
/// the `10 h` floor.
pub fn incremental_decay(s: &Scenario, x0_a: &[f64], x0_b: &[f64], alpha_declared: f64) -> Result<StabilityReport> {
    let (sa, sb) = (s.with_x0(x0_a.to_vec())?, s.with_x0(x0_b.to_vec())?);
    let (ta, tb) = rayon::join(|| catch_up(&sa), || catch_up(&sb));
    let (ta, tb) = (ta?, tb?);
    let gap_samples: Vec<(f64, f64)> = ta
        .states
        .iter()
        .zip(&tb.states)
        .enumerate()
        .map(|(k, (a, b))| (ta.time(k), linalg::dist(a, b)))
        .collect();
    let floor = DECAY_FLOOR_STEPS * s.h();
    let above = gap_samples.iter().take_while(|(_, g)| *g > floor).count();

    let (fitted_rate, r_squared) = if above >= 3 {
        let ts: Vec<f64> = gap_samples[..above].iter().map(|(t, _)| *t).collect();
        let ls: Vec<f64> = gap_samples[..above].iter().map(|(_, g)| g.ln()).collect();
        let (slope, _, r2) = least_squares(&ts, &ls);
        (Some(slope), Some(r2))
    } else {
        log::warn!("gap is within the discretization floor {floor:e}; decay rate not fitted");
        (None, None)
    };

    let checked = (above + 1).max(3).min(gap_samples.len());
    let squared: Vec<(f64, f64)> = gap_samples[..checked].iter().map(|(t, g)| (*t, g * g)).collect();
    let gronwall_satisfied = gronwall_check_with_slack(&squared, -2.0 * alpha_declared, &|_| 0.0, DECAY_ENVELOPE_SLACK)?;

    Ok(StabilityReport {
        fitted_rate,
        r_squared,
        gap_samples,
        gronwall_satisfied,
    })
}

/// Something whose translates `t -> phi(t + s)` can be compared with itself.
pub trait ShiftTarget: Sync {
    /// `sup_t dist(phi(t + s), phi(t))` over the given times.
    fn shift_residual(&self, s: f64, times: &[f64]) -> Result<f64>;

    /// Time quantum that admissible shifts must be multiples of.
    fn quantum(&self) -> Option<f64> {
        None
    }
}

impl ShiftTarget for MovingSet {
    fn shift_residual(&self, s: f64, times: &[f64]) -> Result<f64> {
        let n = default_dir_samples(self.dim());
        let mut worst: f64 = 0.0;
        for &t in times {
            worst = worst.max(hausdorff_distance(&self.at(t + s), &self.at(t), n)?);
        }
        Ok(worst)
    }
}

impl ShiftTarget for Trajectory {
    fn shift_residual(&self, s: f64, times: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in times {
            let (Some(a), Some(b)) = (self.sample(t + s), self.sample(t)) else {
                return Err(SweepError::InvalidArgument(format!(
                    "trajectory on [{}, {}] does not cover t = {t} shifted by {s}",
                    self.t_start,
                    self.t_end()
                )));
            };
            worst = worst.max(linalg::dist(&a, &b));
        }
        Ok(worst)
    }

    fn quantum(&self) -> Option<f64> {
        Some(self.h)
    }
}

/// The data `(C, f(., ., eps))` of a scenario, shifted jointly. The field
/// part is compared on a fixed sample of the tube `|x| <= M`.
#[derive(Clone, Debug)]
pub struct ScenarioData {
    set: MovingSet,
    field: Perturbation,
    eps: f64,
    tube: Vec<Vec<f64>>,
}

impl ScenarioData {
    pub fn new(s: &Scenario) -> Self {
        let dim = s.dim();
        let m = s.moving_set().bound();
        let tube = if dim == 1 {
            (0..9).map(|k| vec![-m + 2.0 * m * k as f64 / 8.0]).collect()
        } else {
            let mut pts = vec![vec![0.0; dim]];
            for u in directions(dim, 16) {
                pts.push(linalg::scale(&u, 0.5 * m));
                pts.push(linalg::scale(&u, m));
            }
            pts
        };
        ScenarioData {
            set: s.moving_set().clone(),
            field: s.field().clone(),
            eps: s.eps(),
            tube,
        }
    }

    /// `sup_{t, x} |f(t + s, x) - f(t, x)|` over the tube sample.
    pub fn field_residual(&self, s: f64, times: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in times {
            for x in &self.tube {
                let a = self.field.try_eval(t + s, x, self.eps)?;
                let b = self.field.try_eval(t, x, self.eps)?;
                worst = worst.max(linalg::dist(&a, &b));
            }
        }
        Ok(worst)
    }
}

impl ShiftTarget for ScenarioData {
    fn shift_residual(&self, s: f64, times: &[f64]) -> Result<f64> {
        Ok(self.set.shift_residual(s, times)?.max(self.field_residual(s, times)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlmostPeriodReport {
    pub epsilon_tol: f64,
    pub periods_found: Vec<f64>,
    /// Evaluated `(s, residual(s))` pairs, sorted by `s`.
    pub residual: Vec<(f64, f64)>,
}

impl AlmostPeriodReport {
    pub fn residual_at(&self, s: f64) -> Option<f64> {
        self.residual
            .iter()
            .min_by(|a, b| (a.0 - s).abs().total_cmp(&(b.0 - s).abs()))
            .map(|p| p.1)
    }

    /// Found period with the smallest residual.
    pub fn best(&self) -> Option<(f64, f64)> {
        self.periods_found
            .iter()
            .filter_map(|s| self.residual_at(*s).map(|r| (*s, r)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

fn quantize(s: f64, q: Option<f64>) -> f64 {
    match q {
        Some(h) => (s / h).round() * h,
        None => s,
    }
}

/// Grid scan of `s -> sup_t dist(phi(t + s), phi(t))` over `s_range`,
/// followed by refinement of promising local minima.
pub fn almost_period_search(
    target: &dyn ShiftTarget,
    eps_tol: f64,
    s_range: (f64, f64),
    s_grid: f64,
    t_window: (f64, f64),
    t_grid: f64,
) -> Result<AlmostPeriodReport> {
    if !(eps_tol > 0.0 && s_grid > 0.0 && t_grid > 0.0) {
        return Err(SweepError::InvalidArgument(
            "tolerance and grid resolutions must be positive".into(),
        ));
    }
    if !(s_range.1 >= s_range.0 && t_window.1 > t_window.0) {
        return Err(SweepError::InvalidArgument(format!(
            "empty shift range {s_range:?} or time window {t_window:?}"
        )));
    }
    let reach = s_range.0.abs().max(s_range.1.abs());
    let length = t_window.1 - t_window.0;
    if length < 2.0 * reach {
        return Err(SweepError::InvalidArgument(format!(
            "time window of length {length} is shorter than twice the largest shift {reach}"
        )));
    }
    if s_range.0 > 0.0 && length < 5.0 * s_range.0 {
        log::warn!("time window covers fewer than five candidate periods");
    }
    let times = grid(t_window.0, t_window.1, t_grid);
    let q = target.quantum();

    let mut shifts: Vec<f64> = grid(s_range.0, s_range.1, s_grid).into_iter().map(|s| quantize(s, q)).collect();
    if let Some(h) = q {
        if ((s_grid / h) - (s_grid / h).round()).abs() > 1e-9 || ((s_range.0 / h) - (s_range.0 / h).round()).abs() > 1e-9 {
            log::warn!("shifts rounded to multiples of the trajectory step {h}");
        }
    }
    shifts.dedup();
    let values: Vec<f64> = shifts
        .par_iter()
        .map(|s| target.shift_residual(*s, &times))
        .collect::<Result<_>>()?;

    let n = values.len();
    let mut brackets = Vec::new();
    for j in 0..n {
        let left = if j > 0 { values[j - 1] } else { f64::INFINITY };
        let right = if j + 1 < n { values[j + 1] } else { f64::INFINITY };
        if !(values[j] < left && values[j] <= right) && !(n == 1) {
            continue;
        }
        let drop = [left, right]
            .iter()
            .filter(|v| v.is_finite())
            .map(|v| v - values[j])
            .fold(0.0, f64::max);
        if values[j] - drop < eps_tol {
            let lo = if j > 0 { shifts[j - 1] } else { shifts[j] };
            let hi = if j + 1 < n { shifts[j + 1] } else { shifts[j] };
            brackets.push((lo, hi));
        }
    }

    let refined: Vec<(f64, f64)> = brackets
        .par_iter()
        .map(|&(lo, hi)| refine(target, &times, lo, hi, q))
        .collect::<Result<_>>()?;

    let mut residual: Vec<(f64, f64)> = shifts.iter().copied().zip(values).chain(refined).collect();
    residual.sort_by(|a, b| a.0.total_cmp(&b.0));
    residual.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12);
    let periods_found = residual.iter().filter(|(_, r)| *r < eps_tol).map(|(s, _)| *s).collect();
    Ok(AlmostPeriodReport {
        epsilon_tol: eps_tol,
        periods_found,
        residual,
    })
}

fn refine(target: &dyn ShiftTarget, times: &[f64], lo: f64, hi: f64, q: Option<f64>) -> Result<(f64, f64)> {
    let eval = |s: f64| target.shift_residual(s, times).map(|r| (s, r));
    if let Some(h) = q {
        let (a, b) = ((lo / h).round() as i64, (hi / h).round() as i64);
        let mut best = (f64::NAN, f64::INFINITY);
        for k in a..=b {
            let cand = eval(k as f64 * h)?;
            if cand.1 < best.1 {
                best = cand;
            }
        }
        return Ok(best);
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c)?.1, eval(d)?.1);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c)?.1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d)?.1;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Asymptotic response envelope `sqrt(sup_df M / (2 alpha))`.
pub fn theorem4_bound(alpha: f64, m: f64, sup_df: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(SweepError::NotMonotone(alpha));
    }
    if !(m >= 0.0 && sup_df >= 0.0) {
        return Err(SweepError::InvalidArgument(format!(
            "need M >= 0 and sup_df >= 0, got M = {m}, sup_df = {sup_df}"
        )));
    }
    Ok((sup_df * m / (2.0 * alpha)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResponseReport {
    pub eps_values: Vec<f64>,
    pub sup_gaps: Vec<f64>,
    pub bound_values: Vec<f64>,
    #[serde(skip)]
    pub eps0: f64,
    #[serde(skip)]
    pub step: f64,
    #[serde(skip)]
    pub window_too_early: bool,
}

impl ResponseReport {
    /// `sup_gap <= bound * 1.05 + 5 h` for every entry.
    pub fn bounds_hold(&self) -> bool {
        self.sup_gaps
            .iter()
            .zip(&self.bound_values)
            .all(|(g, b)| *g <= b * RESPONSE_BOUND_SLACK + RESPONSE_STEP_SLACK * self.step)
    }

    /// Ordered by `|eps - eps0|` descending, each gap is below `band` times
    /// its predecessor (`band = 1` is strict decrease).
    pub fn decreasing_within(&self, band: f64) -> bool {
        let mut pairs: Vec<(f64, f64)> = self
            .eps_values
            .iter()
            .map(|e| (e - self.eps0).abs())
            .zip(self.sup_gaps.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        pairs.windows(2).all(|w| w[1].1 < band * w[0].1)
    }
}

fn check_window(s: &Scenario, window: (f64, f64)) -> Result<()> {
    if !(window.1 > window.0 && window.0 >= s.t_start() - 1e-12 && window.1 <= s.t_end() + 1e-12) {
        return Err(SweepError::InvalidArgument(format!(
            "window {window:?} is not inside [{}, {}]",
            s.t_start(),
            s.t_end()
        )));
    }
    Ok(())
}

fn window_indices(traj: &Trajectory, window: (f64, f64)) -> impl Iterator<Item = usize> + '_ {
    let lo = ((window.0 - traj.t_start) / traj.h - 1e-9).ceil().max(0.0) as usize;
    let hi = (((window.1 - traj.t_start) / traj.h + 1e-9).floor() as usize).min(traj.len() - 1);
    lo..=hi
}

/// Sup over the window of `|x_eps - x_0|` for each `eps`, where `x_0` is the
/// bounded solution at `eps0` and `x_eps` starts from the scenario's initial
/// state, paired with the asymptotic envelope for the sampled
/// `sup |f_eps - f_eps0|` along both trajectories.
pub fn perturbation_response(
    base: &Scenario,
    eps_values: &[f64],
    window: (f64, f64),
    alpha: f64,
) -> Result<ResponseReport> {
    check_window(base, window)?;
    if eps_values.is_empty() {
        return Err(SweepError::InvalidArgument("no eps values".into()));
    }
    let eps0 = base.field().eps0;
    let m = base.moving_set().bound();
    let x0 = bounded_solution(&base.with_eps(eps0), alpha, REFERENCE_TOL)?;

    let rows: Vec<(f64, f64)> = eps_values
        .par_iter()
        .map(|&eps| -> Result<(f64, f64)> {
            let traj = catch_up(&base.with_eps(eps))?;
            let gap = window_indices(&traj, window)
                .map(|k| linalg::dist(&traj.states[k], &x0.states[k]))
                .fold(0.0, f64::max);
            let f = base.field();
            let mut sup_df: f64 = 0.0;
            for k in 0..traj.len() {
                let t = traj.time(k);
                for x in [&traj.states[k], &x0.states[k]] {
                    let d = linalg::dist(&f.try_eval(t, x, eps)?, &f.try_eval(t, x, eps0)?);
                    sup_df = sup_df.max(d);
                }
            }
            Ok((gap, theorem4_bound(alpha, m, SUP_DF_INFLATION * sup_df)?))
        })
        .collect::<Result<_>>()?;

    let gamma = rows.iter().map(|r| r.1).filter(|b| *b > 0.0).fold(f64::INFINITY, f64::min);
    let window_too_early = gamma.is_finite() && window.0 - base.t_start() < burn_in_horizon(m, alpha, gamma);
    if window_too_early {
        log::warn!("window starts before the transient has decayed below the smallest bound");
    }
    Ok(ResponseReport {
        eps_values: eps_values.to_vec(),
        sup_gaps: rows.iter().map(|r| r.0).collect(),
        bound_values: rows.iter().map(|r| r.1).collect(),
        eps0,
        step: base.h(),
        window_too_early,
    })
}

/// Distance over the window between each high-frequency solution and the
/// bounded solution of the averaged scenario. `bound_values` holds the sup
/// over the window of the integral deviation `|int (f_eps - f_eps0)|`
/// evaluated along `x_eps`.
pub fn averaging_check(
    family: &(dyn Fn(f64) -> Result<Scenario> + Sync),
    averaged: &Scenario,
    eps_values: &[f64],
    window: (f64, f64),
) -> Result<ResponseReport> {
    check_window(averaged, window)?;
    if eps_values.is_empty() {
        return Err(SweepError::InvalidArgument("no eps values".into()));
    }
    let alpha = match averaged.field().declared_alpha {
        Some(a) => a,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            estimate_monotonicity(
                averaged.field(),
                averaged.eps(),
                averaged.moving_set().bound().max(1e-3),
                (averaged.t_start(), averaged.t_end()),
                ALPHA_SAMPLES,
                &mut rng,
            )?
        }
    };
    if !(alpha > 0.0) {
        return Err(SweepError::NotMonotone(alpha));
    }
    let x0 = bounded_solution(averaged, alpha, REFERENCE_TOL)?;

    let rows: Vec<(f64, f64)> = eps_values
        .par_iter()
        .map(|&eps| -> Result<(f64, f64)> {
            let sc = family(eps)?;
            let limit = sc
                .field()
                .max_resolving_step(eps)
                .unwrap_or(eps.abs() / crate::dynamics::STEPS_PER_FAST_SCALE);
            if eps != sc.field().eps0 && sc.h() > limit {
                return Err(SweepError::StepTooCoarse { h: sc.h(), eps, limit });
            }
            check_window(&sc, window)?;
            let traj = catch_up(&sc)?;
            let mut gap: f64 = 0.0;
            for k in window_indices(&x0, window) {
                let t = x0.time(k);
                let x = traj.sample(t).ok_or_else(|| {
                    SweepError::InvalidArgument(format!("trajectory for eps = {eps} does not reach t = {t}"))
                })?;
                gap = gap.max(linalg::dist(&x, &x0.states[k]));
            }
            let mut deviation: f64 = 0.0;
            for j in 1..DEVIATION_POINTS {
                let t = window.0 + (window.1 - window.0) * j as f64 / (DEVIATION_POINTS - 1) as f64;
                let x = traj.sample(t).expect("window checked");
                deviation = deviation.max(integral_deviation(sc.field(), eps, &x, window.0, t, MIN_QUADRATURE_STEPS)?);
            }
            Ok((gap, deviation))
        })
        .collect::<Result<_>>()?;

    Ok(ResponseReport {
        eps_values: eps_values.to_vec(),
        sup_gaps: rows.iter().map(|r| r.0).collect(),
        bound_values: rows.iter().map(|r| r.1).collect(),
        eps0: averaged.field().eps0,
        step: averaged.h(),
        window_too_early: false,
    })
}
