//! Catching-up time stepping for `-x' in N_{C(t)}(x) + f(t, x, eps)`,
//! discrete inclusion certification, empirical convergence order and
//! burn-in extraction of the bounded attracting solution.

use std::io::{self, Write};

use serde::Serialize;

use crate::convex_sets::{normal_cone_residual, MovingSet, NORMAL_CONE_MEMBERSHIP_TOL};
use crate::dynamics::Perturbation;
use crate::error::{Result, SweepError};
use crate::linalg;

/// Maximum number of steps in a single integration.
pub const MAX_STEPS: usize = 100_000_000;
/// Membership tolerance for initial conditions.
pub const INITIAL_MEMBERSHIP_TOL: f64 = 1e-8;
/// Slack on the uniform bound `|x| <= M`.
pub const BOUND_SLACK: f64 = 1e-6;
/// Errors below this are treated as exact in order estimation.
pub const SATURATION_FLOOR: f64 = 1e-12;

/// A full problem instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    moving_set: MovingSet,
    field: Perturbation,
    eps: f64,
    x0: Vec<f64>,
    t_start: f64,
    t_end: f64,
    h: f64,
}

impl Scenario {
    pub fn new(
        moving_set: MovingSet,
        field: Perturbation,
        eps: f64,
        x0: Vec<f64>,
        t_start: f64,
        t_end: f64,
        h: f64,
    ) -> Result<Self> {
        let s = Scenario {
            moving_set,
            field,
            eps,
            x0,
            t_start,
            t_end,
            h,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.moving_set.dim() != self.field.dim() {
            return Err(SweepError::DimensionMismatch {
                expected: self.moving_set.dim(),
                got: self.field.dim(),
            });
        }
        if self.x0.len() != self.moving_set.dim() {
            return Err(SweepError::DimensionMismatch {
                expected: self.moving_set.dim(),
                got: self.x0.len(),
            });
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SweepError::InvalidArgument(format!("step must be positive, got {}", self.h)));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return Err(SweepError::InvalidArgument(format!(
                "need t_end > t_start, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if (self.t_end - self.t_start) / self.h > MAX_STEPS as f64 {
            return Err(SweepError::InvalidArgument(format!(
                "{} steps exceed the budget of {MAX_STEPS}; raise the step",
                ((self.t_end - self.t_start) / self.h).ceil()
            )));
        }
        if !linalg::all_finite(&self.x0) {
            return Err(SweepError::Infeasible("initial state is not finite".into()));
        }
        let c0 = self.moving_set.at(self.t_start);
        let d = c0.distance(&self.x0)?;
        if d > INITIAL_MEMBERSHIP_TOL {
            return Err(SweepError::Infeasible(format!(
                "x0 = {:?} is at distance {d:e} from C({})",
                self.x0, self.t_start
            )));
        }
        Ok(())
    }

    pub fn moving_set(&self) -> &MovingSet {
        &self.moving_set
    }

    pub fn field(&self) -> &Perturbation {
        &self.field
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Number of steps covering `[t_start, t_end]`.
    pub fn n_steps(&self) -> usize {
        (((self.t_end - self.t_start) / self.h) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn with_eps(&self, eps: f64) -> Scenario {
        Scenario { eps, ..self.clone() }
    }

    pub fn with_step(&self, h: f64) -> Result<Scenario> {
        let s = Scenario { h, ..self.clone() };
        s.validate()?;
        Ok(s)
    }

    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Scenario> {
        let s = Scenario { x0, ..self.clone() };
        s.validate()?;
        Ok(s)
    }

    pub fn with_window(&self, t_start: f64, t_end: f64) -> Result<Scenario> {
        let s = Scenario {
            t_start,
            t_end,
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }
}

/// Uniformly sampled discrete solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub t_start: f64,
    pub h: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Index of the grid point nearest to `t`, if `t` lies on the trajectory.
    pub fn index_near(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t_start) / self.h).round();
        if k < 0.0 || k as usize >= self.len() {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Linear interpolation at time `t`.
    pub fn sample(&self, t: f64) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let u = (t - self.t_start) / self.h;
        let last = (self.len() - 1) as f64;
        if u < -1e-9 || u > last + 1e-9 {
            return None;
        }
        let u = u.clamp(0.0, last);
        let k = u.floor() as usize;
        if k + 1 >= self.len() {
            return Some(self.states[self.len() - 1].clone());
        }
        let w = u - k as f64;
        if w == 0.0 {
            return Some(self.states[k].clone());
        }
        Some(
            self.states[k]
                .iter()
                .zip(&self.states[k + 1])
                .map(|(a, b)| a + w * (b - a))
                .collect(),
        )
    }

    /// Sampled velocity bound `max_k |x_{k+1} - x_k| / h`.
    pub fn max_velocity(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| linalg::dist(&w[0], &w[1]) / self.h)
            .fold(0.0, f64::max)
    }

    /// Trajectory restricted to indices `k >= first`.
    pub fn tail_from(&self, first: usize) -> Trajectory {
        Trajectory {
            t_start: self.time(first),
            h: self.h,
            states: self.states[first.min(self.len())..].to_vec(),
        }
    }

    /// CSV with header `t,x_1,...,x_n` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.dim();
        let mut header = String::from("t");
        for i in 1..=dim {
            header.push_str(&format!(",x_{i}"));
        }
        writeln!(w, "{header}")?;
        for (k, x) in self.states.iter().enumerate() {
            write!(w, "{}", fmt_f64(self.time(k)))?;
            for v in x {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Round-trip decimal formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Catching-up iteration from `(t0, x0)` for `n` steps.
fn integrate(
    set: &MovingSet,
    field: &Perturbation,
    eps: f64,
    t0: f64,
    h: f64,
    x0: Vec<f64>,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    if n > MAX_STEPS {
        return Err(SweepError::InvalidArgument(format!("{n} steps exceed the budget of {MAX_STEPS}")));
    }
    let bound = set.bound() + BOUND_SLACK;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0);
    for k in 0..n {
        let t_k = t0 + k as f64 * h;
        let t_next = t0 + (k + 1) as f64 * h;
        let x_k = &states[k];
        let drift = field.try_eval(t_k, x_k, eps).map_err(|e| e.at_step(k))?;
        let predictor = linalg::axpy(x_k, -h, &drift);
        let x_next = set.at(t_next).project(&predictor).map_err(|e| e.at_step(k + 1))?;
        if !linalg::all_finite(&x_next) {
            return Err(SweepError::NonFinite("state".into()).at_step(k + 1));
        }
        let r = linalg::norm(&x_next);
        if r > bound {
            return Err(SweepError::InvariantViolation {
                step: k + 1,
                detail: format!("|x| = {r} exceeds the uniform bound {}", set.bound()),
            });
        }
        states.push(x_next);
    }
    Ok(states)
}

/// Catching-up scheme `x_{k+1} = P_{C(t_{k+1})}(x_k - h f(t_k, x_k, eps))`.
pub fn catch_up(s: &Scenario) -> Result<Trajectory> {
    let states = integrate(
        &s.moving_set,
        &s.field,
        s.eps,
        s.t_start,
        s.h,
        s.x0.clone(),
        s.n_steps(),
    )?;
    Ok(Trajectory {
        t_start: s.t_start,
        h: s.h,
        states,
    })
}

/// Largest per-step violation of the discrete inclusion
/// `xi_k = -(x_{k+1} - x_k)/h - f(t_k, x_k) in N_{C(t_{k+1})}(x_{k+1})`.
///
/// Feasible steps contribute `normal_cone_residual(C, x_{k+1}, h xi_k) / h`;
/// a state outside its set contributes its distance to the set divided by `h`.
pub fn inclusion_residual(traj: &Trajectory, s: &Scenario, samples_per_step: usize) -> Result<f64> {
    if traj.dim() != s.dim() {
        return Err(SweepError::DimensionMismatch {
            expected: s.dim(),
            got: traj.dim(),
        });
    }
    let h = traj.h;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..traj.len().saturating_sub(1) {
        let (x_k, x_next) = (&traj.states[k], &traj.states[k + 1]);
        let drift = s.field.try_eval(traj.time(k), x_k, s.eps).map_err(|e| e.at_step(k))?;
        let set = s.moving_set.at(traj.time(k + 1));
        let distance = set.distance(x_next).map_err(|e| e.at_step(k + 1))?;
        let r = if distance > NORMAL_CONE_MEMBERSHIP_TOL {
            distance / h
        } else {
            // h xi_k = (x_k - h f) - x_{k+1}
            let xi_h: Vec<f64> = x_k
                .iter()
                .zip(&drift)
                .zip(x_next)
                .map(|((a, f), b)| -(b - a) - h * f)
                .collect();
            normal_cone_residual(&set, x_next, &xi_h, samples_per_step).map_err(|e| e.at_step(k + 1))? / h
        };
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Empirical order of convergence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Estimated(f64),
    /// Errors indistinguishable from zero; the scheme is exact on the instance.
    Saturated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RichardsonReport {
    pub steps: Vec<f64>,
    pub reference_step: f64,
    pub errors: Vec<f64>,
    pub order: Order,
}

/// Least-squares slope of `log |x_h(t_end) - x_ref(t_end)|` against `log h`,
/// with `h_ref = min(h_list) / 4`.
pub fn richardson_order(s: &Scenario, h_list: &[f64]) -> Result<RichardsonReport> {
    if h_list.len() < 3 {
        return Err(SweepError::InvalidArgument("need at least three step sizes".into()));
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) || h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(SweepError::InvalidArgument(format!(
            "step sizes must be positive and strictly decreasing: {h_list:?}"
        )));
    }
    let span = s.t_end - s.t_start;
    let h_ref = h_list[h_list.len() - 1] / 4.0;
    let endpoint = |h: f64| -> Result<Vec<f64>> {
        let n = span / h;
        if (n - n.round()).abs() > 1e-6 {
            return Err(SweepError::InvalidArgument(format!(
                "step {h} does not divide the window length {span}"
            )));
        }
        let traj = catch_up(&s.with_step(h)?)?;
        Ok(traj.last().expect("trajectory has the initial state").to_vec())
    };
    let reference = endpoint(h_ref)?;
    let mut errors = Vec::with_capacity(h_list.len());
    for &h in h_list {
        errors.push(linalg::dist(&endpoint(h)?, &reference));
    }
    let order = if errors.iter().any(|e| *e <= SATURATION_FLOOR) {
        Order::Saturated
    } else {
        let xs: Vec<f64> = h_list.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        Order::Estimated(least_squares(&xs, &ys).0)
    };
    Ok(RichardsonReport {
        steps: h_list.to_vec(),
        reference_step: h_ref,
        errors,
        order,
    })
}

/// Ordinary least squares `y = slope x + intercept`; returns
/// `(slope, intercept, r_squared)`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Burn-in horizon `ln(2 M / tol) / alpha`, clamped at zero.
pub fn burn_in_horizon(bound: f64, alpha: f64, tol: f64) -> f64 {
    ((2.0 * bound / tol).ln() / alpha).max(0.0)
}

/// Approximation of the unique bounded solution on `[t_start, t_end]`,
/// started from the projection of the origin at `t_start - T_burn`.
pub fn bounded_solution(s: &Scenario, alpha: f64, tol: f64) -> Result<Trajectory> {
    bounded_solution_from(s, alpha, tol, &vec![0.0; s.dim()])
}

/// Same as [`bounded_solution`] with the burn-in start state given by the
/// projection of `start` onto `C(t_start - T_burn)`.
pub fn bounded_solution_from(s: &Scenario, alpha: f64, tol: f64, start: &[f64]) -> Result<Trajectory> {
    if !(alpha > 0.0) {
        return Err(SweepError::NotMonotone(alpha));
    }
    if !(tol > 0.0) {
        return Err(SweepError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if start.len() != s.dim() {
        return Err(SweepError::DimensionMismatch {
            expected: s.dim(),
            got: start.len(),
        });
    }
    let burn = burn_in_horizon(s.moving_set.bound(), alpha, tol);
    let n_burn = (burn / s.h - 1e-9).ceil().max(0.0) as usize;
    let t0 = s.t_start - n_burn as f64 * s.h;
    let x_init = s.moving_set.at(t0).project(start)?;
    let mut states = integrate(
        &s.moving_set,
        &s.field,
        s.eps,
        t0,
        s.h,
        x_init,
        n_burn + s.n_steps(),
    )?;
    states.drain(..n_burn);
    Ok(Trajectory {
        t_start: t0 + n_burn as f64 * s.h,
        h: s.h,
        states,
    })
}
