//! Closed convex sets and the geometry the sweeping integrator needs:
//! Euclidean projection, membership, support functions, Hausdorff distance
//! and normal-cone residuals.
//!
//! Intervals, boxes and balls have closed-form projections and support
//! functions. Polytopes are stored in H-representation `{x : <n_i, x> <= b_i}`
//! and projected with Dykstra's alternating projections; their support
//! function is obtained by projected ascent from a certified interior point.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SweepError};
use crate::linalg;

/// Default Dykstra tolerance.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Default Dykstra iteration budget.
pub const DYKSTRA_MAX_ITER: usize = 10_000;
/// Membership tolerance required before a normal cone is evaluated.
pub const NORMAL_CONE_MEMBERSHIP_TOL: f64 = 1e-6;

const UNIT_NORMAL_TOL: f64 = 1e-12;
const UNIT_DIRECTION_TOL: f64 = 1e-9;
const MAX_ASCENT_ROUNDS: usize = 10_000;
const ASCENT_STEP_LIMIT: f64 = 1e12;
const ACTIVE_TOL: f64 = 1e-6;

/// Gaussian elimination with partial pivoting on an `m x (m + 1)` system.
fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for q in col..=m {
                a[r][q] -= f * a[col][q];
            }
        }
    }
    let mut y = vec![0.0; m];
    for r in (0..m).rev() {
        let tail: f64 = (r + 1..m).map(|q| a[r][q] * y[q]).sum();
        y[r] = (a[r][m] - tail) / a[r][r];
    }
    Some(y)
}
const POLYTOPE_RADIUS_INFLATION: f64 = 1.05;
const DIRECTION_SEED: u64 = 0x5eed_d1e5;
const EXTERIOR_SEED: u64 = 0x0c0f_fee5;

/// Bounded polytope `{x : <n_i, x> <= b_i for all i}` with unit normals and a
/// strictly interior point.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    interior: Vec<f64>,
    // largest slack b_i - <n_i, interior>; initial ascent step
    scale: f64,
}

impl Polytope {
    /// Builds a polytope from unit normals, offsets and a strictly interior
    /// point. Boundedness is certified by finite support values along the
    /// `2 * dim` coordinate directions.
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>, interior: Vec<f64>) -> Result<Self> {
        if normals.is_empty() {
            return Err(SweepError::InvalidSet("polytope needs at least one halfspace".into()));
        }
        if normals.len() != offsets.len() {
            return Err(SweepError::InvalidSet(format!(
                "{} normals but {} offsets",
                normals.len(),
                offsets.len()
            )));
        }
        let dim = interior.len();
        if dim == 0 {
            return Err(SweepError::InvalidSet("zero-dimensional polytope".into()));
        }
        if !linalg::all_finite(&interior) || !linalg::all_finite(&offsets) {
            return Err(SweepError::InvalidSet("non-finite polytope data".into()));
        }
        let mut scale: f64 = 0.0;
        for (i, (n, b)) in normals.iter().zip(&offsets).enumerate() {
            if n.len() != dim {
                return Err(SweepError::DimensionMismatch {
                    expected: dim,
                    got: n.len(),
                });
            }
            if !linalg::all_finite(n) {
                return Err(SweepError::InvalidSet(format!("normal {i} is not finite")));
            }
            let len = linalg::norm(n);
            if (len - 1.0).abs() > UNIT_NORMAL_TOL {
                return Err(SweepError::InvalidSet(format!(
                    "normal {i} has norm {len}, expected 1"
                )));
            }
            let slack = b - linalg::dot(n, &interior);
            if slack <= 0.0 {
                return Err(SweepError::InvalidSet(format!(
                    "supplied point is not strictly interior to halfspace {i} (slack {slack:e})"
                )));
            }
            scale = scale.max(slack);
        }
        let poly = Polytope {
            normals,
            offsets,
            interior,
            scale,
        };
        for axis in 0..dim {
            for sign in [1.0, -1.0] {
                let mut u = vec![0.0; dim];
                u[axis] = sign;
                match poly.support_point(&u) {
                    Ok(_) => {}
                    Err(SweepError::Unbounded) => {
                        return Err(SweepError::InvalidSet(format!(
                            "polytope is unbounded along axis {axis} (sign {sign})"
                        )))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(poly)
    }

    /// Same as [`Polytope::new`] but rescales each `(n_i, b_i)` to a unit normal.
    pub fn from_unnormalized(
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        interior: Vec<f64>,
    ) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(SweepError::InvalidSet("normals and offsets differ in length".into()));
        }
        let mut unit = Vec::with_capacity(normals.len());
        let mut scaled = Vec::with_capacity(offsets.len());
        for (n, b) in normals.into_iter().zip(offsets) {
            let len = linalg::norm(&n);
            if len == 0.0 || !len.is_finite() {
                return Err(SweepError::InvalidSet("degenerate halfspace normal".into()));
            }
            unit.push(linalg::scale(&n, 1.0 / len));
            scaled.push(b / len);
        }
        Self::new(unit, scaled, interior)
    }

    pub fn dim(&self) -> usize {
        self.interior.len()
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Largest constraint violation `max_i <n_i, p> - b_i` (negative inside).
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| linalg::dot(n, p) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Translation by `offset`; invariants carry over unchanged.
    pub fn translated(&self, offset: &[f64]) -> Polytope {
        Polytope {
            normals: self.normals.clone(),
            offsets: self
                .normals
                .iter()
                .zip(&self.offsets)
                .map(|(n, b)| b + linalg::dot(n, offset))
                .collect(),
            interior: linalg::add(&self.interior, offset),
            scale: self.scale,
        }
    }

    fn dykstra(&self, p: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let dim = self.dim();
        let mut x = p.to_vec();
        if self.max_violation(&x) <= 0.0 {
            return Ok(x);
        }
        let m = self.normals.len();
        let mut increments = vec![vec![0.0; dim]; m];
        let mut z = vec![0.0; dim];
        let mut prev = vec![0.0; dim];
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            prev.copy_from_slice(&x);
            // the iterate can stall for a sweep while the increments still move
            let mut shift = 0.0;
            for (i, (n, b)) in self.normals.iter().zip(&self.offsets).enumerate() {
                for j in 0..dim {
                    z[j] = x[j] + increments[i][j];
                }
                let viol = linalg::dot(n, &z) - b;
                for j in 0..dim {
                    x[j] = if viol > 0.0 { z[j] - viol * n[j] } else { z[j] };
                    let inc = z[j] - x[j];
                    shift += (inc - increments[i][j]).powi(2);
                    increments[i][j] = inc;
                }
            }
            let moved = linalg::dist(&x, &prev).max(shift.sqrt());
            let viol = self.max_violation(&x).max(0.0);
            residual = moved.max(viol);
            if moved < tol && viol < tol {
                return Ok(x);
            }
        }
        Err(SweepError::NoConvergence {
            iterations: max_iter,
            residual,
        })
    }

    /// Snaps `c` onto the affine hull of its nearly active constraints with
    /// the minimal-norm correction, keeping it only if it stays feasible.
    fn polish(&self, c: Vec<f64>) -> Vec<f64> {
        let active: Vec<usize> = (0..self.normals.len())
            .filter(|&i| (linalg::dot(&self.normals[i], &c) - self.offsets[i]).abs() <= ACTIVE_TOL)
            .collect();
        if active.is_empty() || active.len() > self.dim() {
            return c;
        }
        let m = active.len();
        // Gram system (A A^T) y = A c - b
        let mut gram = vec![vec![0.0; m + 1]; m];
        for (r, &i) in active.iter().enumerate() {
            for (q, &j) in active.iter().enumerate() {
                gram[r][q] = linalg::dot(&self.normals[i], &self.normals[j]);
            }
            gram[r][m] = linalg::dot(&self.normals[i], &c) - self.offsets[i];
        }
        let Some(y) = solve_augmented(gram) else {
            return c;
        };
        let mut out = c.clone();
        for (r, &i) in active.iter().enumerate() {
            for (o, n) in out.iter_mut().zip(&self.normals[i]) {
                *o -= y[r] * n;
            }
        }
        if self.max_violation(&out) <= PROJECTION_TOL && linalg::dist(&out, &c) <= ACTIVE_TOL {
            out
        } else {
            c
        }
    }

    /// Maximizer of `<u, c>` over the polytope by projected ascent
    /// `c <- P(c + s u)` from the interior point. The step `s` starts at the
    /// largest interior slack and doubles only while the iterate moves by
    /// at least half a step; the ascent ends when the iterate stops moving.
    fn support_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        let base = self.scale.max(1e-12);
        let mut c = self.interior.clone();
        let mut step = base;
        for _ in 0..MAX_ASCENT_ROUNDS {
            let target = linalg::axpy(&c, step, u);
            let tol = PROJECTION_TOL * (1.0 + linalg::norm(&target));
            let next = match self.dykstra(&target, tol, DYKSTRA_MAX_ITER) {
                Ok(p) => p,
                Err(SweepError::NoConvergence { .. }) if step > ASCENT_STEP_LIMIT * base => {
                    return Err(SweepError::Unbounded)
                }
                Err(e) => return Err(e),
            };
            let moved = linalg::dist(&next, &c);
            c = next;
            if moved <= 10.0 * tol {
                return Ok(self.polish(c));
            }
            if moved >= 0.5 * step {
                step *= 2.0;
                if step > ASCENT_STEP_LIMIT * base {
                    return Err(SweepError::Unbounded);
                }
            }
        }
        Err(SweepError::NoConvergence {
            iterations: MAX_ASCENT_ROUNDS,
            residual: f64::NAN,
        })
    }
}

/// A closed convex set at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexSet {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    HalfspaceIntersection(Polytope),
    Translate { base: Box<ConvexSet>, offset: Vec<f64> },
}

impl ConvexSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let s = ConvexSet::Interval { lo, hi };
        s.check()?;
        Ok(s)
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = ConvexSet::Box { lo, hi };
        s.check()?;
        Ok(s)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ConvexSet::Ball { center, radius };
        s.check()?;
        Ok(s)
    }

    pub fn polytope(p: Polytope) -> Self {
        ConvexSet::HalfspaceIntersection(p)
    }

    pub fn translate(base: ConvexSet, offset: Vec<f64>) -> Result<Self> {
        let s = ConvexSet::Translate {
            base: Box::new(base),
            offset,
        };
        s.check()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Interval { .. } => 1,
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::HalfspaceIntersection(p) => p.dim(),
            ConvexSet::Translate { offset, .. } => offset.len(),
        }
    }

    /// Cheap structural validation; polytopes are validated at construction.
    pub fn check(&self) -> Result<()> {
        match self {
            ConvexSet::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(SweepError::InvalidSet("non-finite interval endpoint".into()));
                }
                if lo > hi {
                    return Err(SweepError::InvalidSet(format!("empty interval [{lo}, {hi}]")));
                }
            }
            ConvexSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(SweepError::DimensionMismatch {
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.is_empty() {
                    return Err(SweepError::InvalidSet("zero-dimensional box".into()));
                }
                if !(linalg::all_finite(lo) && linalg::all_finite(hi)) {
                    return Err(SweepError::InvalidSet("non-finite box bound".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(SweepError::InvalidSet("box with lo > hi".into()));
                }
            }
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(SweepError::InvalidSet("zero-dimensional ball".into()));
                }
                if !linalg::all_finite(center) || !radius.is_finite() || *radius < 0.0 {
                    return Err(SweepError::InvalidSet(format!("invalid ball radius {radius}")));
                }
            }
            ConvexSet::HalfspaceIntersection(_) => {}
            ConvexSet::Translate { base, offset } => {
                if base.dim() != offset.len() {
                    return Err(SweepError::DimensionMismatch {
                        expected: base.dim(),
                        got: offset.len(),
                    });
                }
                if !linalg::all_finite(offset) {
                    return Err(SweepError::InvalidSet("non-finite translation".into()));
                }
                base.check()?;
            }
        }
        Ok(())
    }

    fn expect_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(SweepError::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Equivalent set with every `Translate` folded into its base.
    pub fn resolved(&self) -> ConvexSet {
        match self {
            ConvexSet::Translate { base, offset } => match base.resolved() {
                ConvexSet::Interval { lo, hi } => ConvexSet::Interval {
                    lo: lo + offset[0],
                    hi: hi + offset[0],
                },
                ConvexSet::Box { lo, hi } => ConvexSet::Box {
                    lo: linalg::add(&lo, offset),
                    hi: linalg::add(&hi, offset),
                },
                ConvexSet::Ball { center, radius } => ConvexSet::Ball {
                    center: linalg::add(&center, offset),
                    radius,
                },
                ConvexSet::HalfspaceIntersection(p) => {
                    ConvexSet::HalfspaceIntersection(p.translated(offset))
                }
                ConvexSet::Translate { .. } => unreachable!("resolved() never returns Translate"),
            },
            other => other.clone(),
        }
    }

    fn is_polytope(&self) -> bool {
        match self {
            ConvexSet::HalfspaceIntersection(_) => true,
            ConvexSet::Translate { base, .. } => base.is_polytope(),
            _ => false,
        }
    }

    /// Euclidean projection `argmin_{c in set} |c - p|`.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.expect_dim(p)?;
        match self {
            ConvexSet::Interval { lo, hi } => {
                self.check()?;
                Ok(vec![p[0].clamp(*lo, *hi)])
            }
            ConvexSet::Box { lo, hi } => {
                self.check()?;
                Ok(p.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(x, (l, h))| x.clamp(*l, *h))
                    .collect())
            }
            ConvexSet::Ball { center, radius } => {
                self.check()?;
                let d = linalg::sub(p, center);
                let len = linalg::norm(&d);
                if len <= *radius {
                    Ok(p.to_vec())
                } else {
                    Ok(linalg::axpy(center, radius / len, &d))
                }
            }
            ConvexSet::HalfspaceIntersection(poly) => {
                dykstra_project(poly, p, PROJECTION_TOL, DYKSTRA_MAX_ITER)
            }
            ConvexSet::Translate { base, offset } => {
                let local = linalg::sub(p, offset);
                Ok(linalg::add(&base.project(&local)?, offset))
            }
        }
    }

    /// Euclidean distance from `p` to the set.
    pub fn distance(&self, p: &[f64]) -> Result<f64> {
        Ok(linalg::dist(p, &self.project(p)?))
    }

    /// `true` iff `dist(p, set) <= tol`.
    pub fn contains(&self, p: &[f64], tol: f64) -> Result<bool> {
        if tol < 0.0 {
            return Err(SweepError::InvalidArgument(format!("negative tolerance {tol}")));
        }
        Ok(self.distance(p)? <= tol)
    }

    /// Support function `sup_{c in set} <u, c>` for a unit direction `u`.
    pub fn support(&self, u: &[f64]) -> Result<f64> {
        let c = self.support_point(u)?;
        Ok(linalg::dot(u, &c))
    }

    /// A point of the set attaining the support value in direction `u`.
    pub fn support_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.expect_dim(u)?;
        let len = linalg::norm(u);
        if (len - 1.0).abs() > UNIT_DIRECTION_TOL {
            return Err(SweepError::InvalidArgument(format!(
                "support direction must be a unit vector (norm {len})"
            )));
        }
        match self {
            ConvexSet::Interval { lo, hi } => Ok(vec![if u[0] >= 0.0 { *hi } else { *lo }]),
            ConvexSet::Box { lo, hi } => Ok(u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(ui, (l, h))| if *ui >= 0.0 { *h } else { *l })
                .collect()),
            ConvexSet::Ball { center, radius } => Ok(linalg::axpy(center, *radius, u)),
            ConvexSet::HalfspaceIntersection(poly) => poly.support_point(u),
            ConvexSet::Translate { base, offset } => {
                Ok(linalg::add(&base.support_point(u)?, offset))
            }
        }
    }

    /// Upper bound on `sup_{c in set} |c|`: exact for intervals, boxes and
    /// balls, support-sampled and inflated by 5% for polytopes.
    pub fn bounding_radius(&self) -> f64 {
        match self.resolved() {
            ConvexSet::Interval { lo, hi } => lo.abs().max(hi.abs()),
            ConvexSet::Box { lo, hi } => lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| {
                    let m = l.abs().max(h.abs());
                    m * m
                })
                .sum::<f64>()
                .sqrt(),
            ConvexSet::Ball { center, radius } => linalg::norm(&center) + radius,
            resolved @ ConvexSet::HalfspaceIntersection(_) => {
                let dim = resolved.dim();
                let mut best = f64::NEG_INFINITY;
                for u in directions(dim, default_dir_samples(dim)) {
                    match resolved.support(&u) {
                        Ok(h) => best = best.max(h),
                        Err(_) => return f64::INFINITY,
                    }
                }
                best.max(0.0) * POLYTOPE_RADIUS_INFLATION
            }
            ConvexSet::Translate { .. } => unreachable!("resolved() never returns Translate"),
        }
    }
}

/// Default direction count for support-sampled Hausdorff distances.
pub fn default_dir_samples(dim: usize) -> usize {
    match dim {
        0 | 1 => 2,
        2 => 360,
        _ => 512,
    }
}

/// Deterministic, roughly uniform unit directions in `R^dim`.
///
/// One dimension yields `{+1, -1}` regardless of `count`; two dimensions use
/// equally spaced angles; three use a Fibonacci lattice; higher dimensions
/// use the signed coordinate axes followed by seeded Gaussian directions.
pub fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut out = Vec::with_capacity(count.max(2 * dim));
            for axis in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut u = vec![0.0; dim];
                    u[axis] = sign;
                    out.push(u);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED);
            while out.len() < count {
                let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let len = linalg::norm(&g);
                if len > 1e-12 {
                    out.push(linalg::scale(&g, 1.0 / len));
                }
            }
            out
        }
    }
}

/// Dykstra's alternating projections onto an intersection of halfspaces.
///
/// Stops once a full sweep moves the iterate by less than `tol` and every
/// constraint is violated by less than `tol`.
pub fn dykstra_project(poly: &Polytope, p: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if p.len() != poly.dim() {
        return Err(SweepError::DimensionMismatch {
            expected: poly.dim(),
            got: p.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(SweepError::InvalidArgument(format!("Dykstra tolerance must be positive, got {tol}")));
    }
    if !linalg::all_finite(p) {
        return Err(SweepError::NonFinite("projection input".into()));
    }
    poly.dykstra(p, tol, max_iter)
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Hausdorff distance between two sets of equal dimension.
///
/// Exact for interval/interval, box/box, ball/ball and translates of a common
/// base. Otherwise returns `max_u |h_A(u) - h_B(u)|` over `dir_samples`
/// directions, a lower bound that is exact in one dimension.
pub fn hausdorff_distance(a: &ConvexSet, b: &ConvexSet, dir_samples: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(SweepError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if (a.is_polytope() || b.is_polytope()) && dir_samples < 16 {
        return Err(SweepError::InvalidArgument(format!(
            "polytope Hausdorff distance needs at least 16 directions, got {dir_samples}"
        )));
    }
    match (a, b) {
        (
            ConvexSet::Translate { base: ba, offset: oa },
            ConvexSet::Translate { base: bb, offset: ob },
        ) if ba == bb => return Ok(linalg::dist(oa, ob)),
        (ConvexSet::Translate { base, offset }, other)
        | (other, ConvexSet::Translate { base, offset })
            if **base == *other =>
        {
            return Ok(linalg::norm(offset))
        }
        _ => {}
    }
    let (a, b) = (a.resolved(), b.resolved());
    match (&a, &b) {
        (ConvexSet::Interval { lo: la, hi: ha }, ConvexSet::Interval { lo: lb, hi: hb }) => {
            Ok((la - lb).abs().max((ha - hb).abs()))
        }
        (ConvexSet::Box { lo: la, hi: ha }, ConvexSet::Box { lo: lb, hi: hb }) => {
            // A sticks out of B by p_i along axis i, B out of A by q_i.
            let mut out_a = 0.0;
            let mut out_b = 0.0;
            for i in 0..la.len() {
                out_a += sq((ha[i] - hb[i]).max(lb[i] - la[i]).max(0.0));
                out_b += sq((hb[i] - ha[i]).max(la[i] - lb[i]).max(0.0));
            }
            Ok(out_a.sqrt().max(out_b.sqrt()))
        }
        (
            ConvexSet::Ball { center: ca, radius: ra },
            ConvexSet::Ball { center: cb, radius: rb },
        ) => Ok(linalg::dist(ca, cb) + (ra - rb).abs()),
        _ => {
            let mut best: f64 = 0.0;
            for u in directions(a.dim(), dir_samples) {
                best = best.max((a.support(&u)? - b.support(&u)?).abs());
            }
            Ok(best)
        }
    }
}

/// Support function of `set` in direction `u` (free-function form).
pub fn support(set: &ConvexSet, u: &[f64]) -> Result<f64> {
    set.support(u)
}

/// Projection onto `set` (free-function form).
pub fn project(set: &ConvexSet, p: &[f64]) -> Result<Vec<f64>> {
    set.project(p)
}

/// Sampled normal-cone residual `max_c <xi, c - x>`.
///
/// Candidate points `c` are the support point in the direction of `xi`
/// itself, support points in `sample_count` spread directions and projections
/// of `sample_count` seeded exterior points. A value `<= tol` certifies
/// `xi in N_set(x)` up to sampling; positive values witness a violation.
pub fn normal_cone_residual(set: &ConvexSet, x: &[f64], xi: &[f64], sample_count: usize) -> Result<f64> {
    if sample_count < 8 {
        return Err(SweepError::InvalidArgument(format!(
            "normal cone residual needs at least 8 samples, got {sample_count}"
        )));
    }
    if xi.len() != set.dim() {
        return Err(SweepError::DimensionMismatch {
            expected: set.dim(),
            got: xi.len(),
        });
    }
    let distance = set.distance(x)?;
    if distance > NORMAL_CONE_MEMBERSHIP_TOL {
        return Err(SweepError::NotInSet { distance });
    }
    let xi_len = linalg::norm(xi);
    if xi_len == 0.0 {
        return Ok(0.0);
    }
    let dim = set.dim();
    let gap = |c: &[f64]| linalg::dot(xi, &linalg::sub(c, x));

    let mut best = gap(&set.support_point(&linalg::scale(xi, 1.0 / xi_len))?);
    for u in directions(dim, sample_count) {
        best = best.max(gap(&set.support_point(&u)?));
    }
    let spread = 2.0 * (1.0 + linalg::norm(x));
    let mut rng = ChaCha8Rng::seed_from_u64(EXTERIOR_SEED);
    for _ in 0..sample_count {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = linalg::axpy(x, spread, &g);
        best = best.max(gap(&set.project(&p)?));
    }
    Ok(best)
}

type SnapshotFn = dyn Fn(f64) -> ConvexSet + Send + Sync;

/// Time-parameterized family `t -> C(t)` with declared Lipschitz constant
/// (in the Hausdorff metric) and uniform bound.
#[derive(Clone)]
pub struct MovingSet {
    snapshot: Arc<SnapshotFn>,
    dim: usize,
    lipschitz: f64,
    bound: f64,
}

impl std::fmt::Debug for MovingSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MovingSet")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl MovingSet {
    pub fn new<F>(dim: usize, lipschitz: f64, bound: f64, snapshot: F) -> Result<Self>
    where
        F: Fn(f64) -> ConvexSet + Send + Sync + 'static,
    {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(SweepError::InvalidArgument(format!("invalid Lipschitz constant {lipschitz}")));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(SweepError::InvalidArgument(format!("invalid uniform bound {bound}")));
        }
        Ok(MovingSet {
            snapshot: Arc::new(snapshot),
            dim,
            lipschitz,
            bound,
        })
    }

    /// Snapshot `C(t)`.
    pub fn at(&self, t: f64) -> ConvexSet {
        (self.snapshot)(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Largest sampled excess `d_H(C(t1), C(t2)) - L |t1 - t2|` over
    /// consecutive and strided pairs of `times`. Values above `1e-8` mean the
    /// declared Lipschitz constant is violated. For polytopes this is a
    /// sampled check only.
    pub fn lipschitz_excess(&self, times: &[f64]) -> Result<f64> {
        let snaps: Vec<ConvexSet> = times.iter().map(|&t| self.at(t)).collect();
        let dirs = default_dir_samples(self.dim);
        let mut worst = f64::NEG_INFINITY;
        for stride in [1usize, 7, 31] {
            for i in 0..snaps.len().saturating_sub(stride) {
                let j = i + stride;
                let d = hausdorff_distance(&snaps[i], &snaps[j], dirs)?;
                worst = worst.max(d - self.lipschitz * (times[j] - times[i]).abs());
            }
        }
        Ok(worst)
    }

    /// Largest sampled `bounding_radius(C(t)) - M`.
    pub fn bound_excess(&self, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| self.at(t).bounding_radius() - self.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
