//! Compiled-in scenario registry.

use std::f64::consts::{FRAC_PI_3, SQRT_2};

use serde::Serialize;

use crate::convex_sets::{ConvexSet, MovingSet, Polytope};
use crate::dynamics::Perturbation;
use crate::error::{Result, SweepError};
use crate::integrator::Scenario;

/// Registry entry with default run parameters.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub dim: usize,
    pub eps: f64,
    /// `None`: projection of the origin onto `C(t_start)`.
    pub x0: Option<Vec<f64>>,
    /// Second start for stability runs.
    pub x0_b: Option<Vec<f64>>,
    pub t_start: f64,
    pub t_end: f64,
    pub h: f64,
    /// Analytic monotonicity constant at the reference parameter.
    pub alpha: Option<f64>,
}

/// Overrides of the registry defaults.
#[derive(Clone, Debug, Default)]
pub struct ScenarioParams {
    pub eps: Option<f64>,
    pub h: Option<f64>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

const REGISTRY: &[ScenarioInfoConst] = &[
    ScenarioInfoConst {
        id: "example1",
        description: "C(t) = [sin t, sin t + 1], f = eps x^2 + (sin(sqrt2 t) + 2) x",
        dim: 1,
        eps: 0.0,
        x0: Some(&[0.0]),
        x0_b: Some(&[1.0]),
        t_start: 0.0,
        t_end: 20.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
    ScenarioInfoConst {
        id: "example2",
        description: "C(t) = [sin t, sin t + 1], f = sin(t / eps) x^2 + (sin(sqrt2 t) + 2) x",
        dim: 1,
        eps: 0.1,
        x0: Some(&[0.0]),
        x0_b: Some(&[1.0]),
        t_start: 0.0,
        t_end: 10.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
    ScenarioInfoConst {
        id: "example2_averaged",
        description: "averaged example2: C(t) = [sin t, sin t + 1], f = (sin(sqrt2 t) + 2) x",
        dim: 1,
        eps: 0.0,
        x0: Some(&[0.0]),
        x0_b: Some(&[1.0]),
        t_start: 0.0,
        t_end: 10.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
    ScenarioInfoConst {
        id: "pure_sweep",
        description: "C(t) = [t, t + 1], f = 0",
        dim: 1,
        eps: 0.0,
        x0: None,
        x0_b: None,
        t_start: 0.0,
        t_end: 2.0,
        h: 1e-3,
        alpha: None,
    },
    ScenarioInfoConst {
        id: "interior_ode",
        description: "C = [-2, 2], f = x (no contact)",
        dim: 1,
        eps: 0.0,
        x0: Some(&[1.0]),
        x0_b: Some(&[-0.5]),
        t_start: 0.0,
        t_end: 1.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
    ScenarioInfoConst {
        id: "fixed_point_monotone",
        description: "C = [-1, 1], f = x",
        dim: 1,
        eps: 0.0,
        x0: Some(&[0.5]),
        x0_b: Some(&[-1.0]),
        t_start: 0.0,
        t_end: 5.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
    ScenarioInfoConst {
        id: "expanding_control",
        description: "C = [-2, 2], f = -x (not monotone)",
        dim: 1,
        eps: 0.0,
        x0: Some(&[-1.0]),
        x0_b: Some(&[1.0]),
        t_start: 0.0,
        t_end: 0.6,
        h: 1e-3,
        alpha: Some(-1.0),
    },
    ScenarioInfoConst {
        id: "polygon_2d",
        description: "unit-apothem hexagon translated by 0.5 (cos t, sin(sqrt2 t)), f = (2 + sin t) x + eps (x_2, -x_1)",
        dim: 2,
        eps: 0.0,
        x0: Some(&[0.5, 0.0]),
        x0_b: Some(&[1.2, 0.5]),
        t_start: 0.0,
        t_end: 10.0,
        h: 1e-3,
        alpha: Some(1.0),
    },
];

struct ScenarioInfoConst {
    id: &'static str,
    description: &'static str,
    dim: usize,
    eps: f64,
    x0: Option<&'static [f64]>,
    x0_b: Option<&'static [f64]>,
    t_start: f64,
    t_end: f64,
    h: f64,
    alpha: Option<f64>,
}

impl ScenarioInfoConst {
    fn to_info(&self) -> ScenarioInfo {
        ScenarioInfo {
            id: self.id,
            description: self.description,
            dim: self.dim,
            eps: self.eps,
            x0: self.x0.map(<[f64]>::to_vec),
            x0_b: self.x0_b.map(<[f64]>::to_vec),
            t_start: self.t_start,
            t_end: self.t_end,
            h: self.h,
            alpha: self.alpha,
        }
    }
}

pub fn registry() -> Vec<ScenarioInfo> {
    REGISTRY.iter().map(ScenarioInfoConst::to_info).collect()
}

pub fn info(id: &str) -> Result<ScenarioInfo> {
    REGISTRY
        .iter()
        .find(|e| e.id == id)
        .map(ScenarioInfoConst::to_info)
        .ok_or_else(|| {
            let known: Vec<&str> = REGISTRY.iter().map(|e| e.id).collect();
            SweepError::InvalidArgument(format!("unknown scenario '{id}'; known: {}", known.join(", ")))
        })
}

fn sine_band() -> MovingSet {
    MovingSet::new(1, 1.0, 2.0, |t: f64| ConvexSet::Interval {
        lo: t.sin(),
        hi: t.sin() + 1.0,
    })
    .expect("valid constants")
}

fn fixed_interval(lo: f64, hi: f64) -> MovingSet {
    MovingSet::new(1, 0.0, lo.abs().max(hi.abs()), move |_| ConvexSet::Interval { lo, hi }).expect("valid constants")
}

fn forcing(t: f64) -> f64 {
    (SQRT_2 * t).sin() + 2.0
}

pub fn example1_field() -> Perturbation {
    Perturbation::new(1, 0.0, |t, x, eps| vec![eps * x[0] * x[0] + forcing(t) * x[0]]).with_declared_alpha(1.0)
}

pub fn example2_field() -> Perturbation {
    Perturbation::new(1, 0.0, |t, x, eps| {
        let fast = if eps == 0.0 { 0.0 } else { (t / eps).sin() * x[0] * x[0] };
        vec![fast + forcing(t) * x[0]]
    })
    .with_declared_alpha(1.0)
    .with_fast_time_scale(f64::abs)
}

/// Fast part of example2 in the fast time `tau = t / eps`.
pub fn example2_fast_part(tau: f64, x: &[f64]) -> Vec<f64> {
    vec![tau.sin() * x[0] * x[0]]
}

pub fn example2_averaged_field() -> Perturbation {
    Perturbation::new(1, 0.0, |t, x, _| vec![forcing(t) * x[0]]).with_declared_alpha(1.0)
}

fn hexagon() -> Polytope {
    let normals = (0..6)
        .map(|k| {
            let a = FRAC_PI_3 * k as f64;
            vec![a.cos(), a.sin()]
        })
        .collect();
    Polytope::from_unnormalized(normals, vec![1.0; 6], vec![0.0, 0.0]).expect("hexagon is bounded")
}

fn polygon_set() -> MovingSet {
    let base = hexagon();
    // circumradius 2/sqrt3 plus the largest offset, with room for the
    // inflated sampled radius
    let bound = 1.05 * (2.0 / 3f64.sqrt() + 0.5 * SQRT_2);
    MovingSet::new(2, 0.9, bound, move |t: f64| {
        ConvexSet::HalfspaceIntersection(base.translated(&[0.5 * t.cos(), 0.5 * (SQRT_2 * t).sin()]))
    })
    .expect("valid constants")
}

fn parts(id: &str, t_start: f64, t_end: f64) -> Result<(MovingSet, Perturbation)> {
    Ok(match id {
        "example1" => (sine_band(), example1_field()),
        "example2" => (sine_band(), example2_field()),
        "example2_averaged" => (sine_band(), example2_averaged_field()),
        "pure_sweep" => {
            let bound = t_start.abs().max((t_end + 1.0).abs());
            let set = MovingSet::new(1, 1.0, bound, |t: f64| ConvexSet::Interval { lo: t, hi: t + 1.0 })?;
            (set, Perturbation::new(1, 0.0, |_, _, _| vec![0.0]))
        }
        "interior_ode" => (
            fixed_interval(-2.0, 2.0),
            Perturbation::new(1, 0.0, |_, x, _| x.to_vec()).with_declared_alpha(1.0),
        ),
        "fixed_point_monotone" => (
            fixed_interval(-1.0, 1.0),
            Perturbation::new(1, 0.0, |_, x, _| x.to_vec()).with_declared_alpha(1.0),
        ),
        "expanding_control" => (
            fixed_interval(-2.0, 2.0),
            Perturbation::new(1, 0.0, |_, x, _| vec![-x[0]]).with_declared_alpha(-1.0),
        ),
        "polygon_2d" => (
            polygon_set(),
            Perturbation::new(2, 0.0, |t, x, eps| {
                let a = 2.0 + t.sin();
                vec![a * x[0] + eps * x[1], a * x[1] - eps * x[0]]
            })
            .with_declared_alpha(1.0),
        ),
        other => return Err(info(other).unwrap_err()),
    })
}

/// Builds a registered scenario with the given overrides.
pub fn build(id: &str, params: &ScenarioParams) -> Result<Scenario> {
    let info = info(id)?;
    let eps = params.eps.unwrap_or(info.eps);
    let h = params.h.unwrap_or(info.h);
    let t_start = params.t_start.unwrap_or(info.t_start);
    let t_end = params.t_end.unwrap_or(info.t_end);
    let (set, field) = parts(id, t_start, t_end)?;
    let x0 = match params.x0.clone().or(info.x0) {
        Some(x) => x,
        None => set.at(t_start).project(&vec![0.0; info.dim])?,
    };
    Scenario::new(set, field, eps, x0, t_start, t_end, h)
}

/// `eps -> example2` with the step refined to resolve `sin(t / eps)`.
pub fn example2_family(h: f64, t_start: f64, t_end: f64) -> impl Fn(f64) -> Result<Scenario> + Sync {
    move |eps| {
        let limit = eps.abs() / crate::dynamics::STEPS_PER_FAST_SCALE;
        let step = if eps == 0.0 { h } else { h.min(limit) };
        build(
            "example2",
            &ScenarioParams {
                eps: Some(eps),
                h: Some(step),
                t_start: Some(t_start),
                t_end: Some(t_end),
                x0: None,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{averaged_field, TimeField};
    use crate::integrator::catch_up;
    use std::sync::Arc;

    #[test]
    fn every_entry_passes_preflight() {
        for e in registry() {
            let s = build(e.id, &ScenarioParams::default()).unwrap_or_else(|err| panic!("{}: {err}", e.id));
            assert_eq!(s.dim(), e.dim);
            let times: Vec<f64> = (0..=200).map(|k| e.t_start + (e.t_end - e.t_start) * k as f64 / 200.0).collect();
            assert!(s.moving_set().bound_excess(&times) <= 1e-9, "{}", e.id);
            assert!(s.moving_set().lipschitz_excess(&times).unwrap() <= 1e-6, "{}", e.id);
            if let Some(b) = e.x0_b {
                assert!(s.with_x0(b).is_ok(), "{}", e.id);
            }
        }
        for id in ["example1", "example2", "example2_averaged", "pure_sweep", "interior_ode", "fixed_point_monotone"] {
            assert!(info(id).is_ok());
        }
        assert!(matches!(build("nope", &ScenarioParams::default()), Err(SweepError::InvalidArgument(_))));
    }

    #[test]
    fn infeasible_override_is_reported() {
        let p = ScenarioParams {
            x0: Some(vec![5.0]),
            ..Default::default()
        };
        assert!(matches!(build("example1", &p), Err(SweepError::Infeasible(_))));
    }

    #[test]
    fn pure_sweep_starts_on_the_set() {
        let p = ScenarioParams {
            t_start: Some(3.0),
            t_end: Some(4.0),
            ..Default::default()
        };
        let s = build("pure_sweep", &p).unwrap();
        assert_eq!(s.x0(), &[3.0]);
        let traj = catch_up(&s).unwrap();
        for k in 1..traj.len() {
            assert!((traj.states[k][0] - traj.time(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn averaged_entry_matches_numerical_average() {
        // Fast part averages to zero; the slow part is frozen in fast time.
        let g: Arc<TimeField> = Arc::new(example2_fast_part);
        let avg = averaged_field(g, 1, 1e3, 200_000).unwrap();
        let f = example2_averaged_field();
        let ex2 = example2_field();
        for x in [-2.0, -0.5, 0.3, 1.7] {
            let fast_mean = avg.eval(&[x]).unwrap()[0];
            assert!(fast_mean.abs() <= 4e-3, "{fast_mean}");
            for t in [0.0, 0.7, 3.1] {
                let slow = f.eval(t, &[x], 0.0)[0];
                assert!((slow + fast_mean - forcing(t) * x).abs() <= 4e-3);
                assert_eq!(ex2.eval(t, &[x], 0.0)[0], slow);
            }
        }
    }

    #[test]
    fn family_refines_step() {
        let fam = example2_family(1e-3, 0.0, 1.0);
        assert_eq!(fam(0.1).unwrap().h(), 1e-3);
        assert_eq!(fam(0.01).unwrap().h(), 0.01 / 20.0);
    }
}
