//! Euclidean projection kernels onto the scaled simplex, Lp balls and their
//! intersections, plus brute-force oracles used by the test suites.
//!
//! All kernels are pure functions of their inputs and safe to call from any
//! number of threads.

use crate::error::{Error, Result};

/// Which convex set a [`ProjectionSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// The scaled simplex `{w : w >= 0, sum(w) = radius}`.
    Simplex,
    /// The Lp ball `{x : ||x||_p <= radius}`.
    LpBall,
}

/// A convex feasible set: scaled simplex or Lp ball with order `p` and a
/// radius. `p` is ignored for the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub kind: ProjectionKind,
    pub p: f64,
    pub radius: f64,
}

impl ProjectionSpec {
    pub fn simplex(radius: f64) -> Result<Self> {
        let spec = Self {
            kind: ProjectionKind::Simplex,
            p: 2.0,
            radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lp_ball(p: f64, radius: f64) -> Result<Self> {
        let spec = Self {
            kind: ProjectionKind::LpBall,
            p,
            radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "radius must be positive and finite, got {}",
                self.radius
            )));
        }
        if self.kind == ProjectionKind::LpBall && (!self.p.is_finite() || self.p < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "ball order p must satisfy p >= 1, got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// Euclidean projection of `v` onto this set, dispatching to the fast
    /// paths for the simplex and p = 1, 2.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ProjectionKind::Simplex => project_simplex(v, self.radius),
            ProjectionKind::LpBall => {
                if self.p == 1.0 {
                    project_l1_ball(v, self.radius)
                } else if self.p == 2.0 {
                    project_l2_ball(v, self.radius)
                } else {
                    project_lp_ball(v, self.p, self.radius)
                }
            }
        }
    }

    /// Feasibility within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self.kind {
            ProjectionKind::Simplex => {
                x.iter().all(|&xi| xi >= -tol)
                    && (x.iter().sum::<f64>() - self.radius).abs() <= tol
            }
            ProjectionKind::LpBall => lp_norm(x, self.p) <= self.radius + tol,
        }
    }
}

fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("empty vector".into()));
    }
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite component {x} at index {i}"
            )));
        }
    }
    Ok(())
}

fn ensure_radius(radius: f64) -> Result<()> {
    if !radius.is_finite() || radius <= 0.0 {
        Err(Error::InvalidSpec(format!(
            "radius must be positive and finite, got {radius}"
        )))
    } else {
        Ok(())
    }
}

/// `||v||_p`, rescaled internally so large components do not overflow.
pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    if p == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    lp_norm(v, 2.0)
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Projection onto the scaled simplex `{w >= 0, sum(w) = radius}` by the
/// sort-and-threshold method. The zero vector maps to the uniform point.
pub fn project_simplex(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    ensure_radius(radius)?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // The k = 0 candidate always passes (u_0 - (u_0 - R) = R > 0), so tau is
    // always set; elements equal to the running threshold stay in the support.
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    Ok(v.iter().map(|&x| (x - tau).max(0.0)).collect())
}

/// Projection onto `{x : ||x||_1 <= radius}` via sign decomposition and
/// simplex projection of the magnitudes.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    ensure_radius(radius)?;
    if lp_norm(v, 1.0) <= radius {
        return Ok(v.to_vec());
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let w = project_simplex(&abs, radius)?;
    Ok(v.iter().zip(&w).map(|(&x, &wi)| wi * x.signum()).collect())
}

/// Projection onto `{x : ||x||_2 <= radius}`: identity inside, radial
/// scaling outside.
pub fn project_l2_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    ensure_radius(radius)?;
    let norm = l2_norm(v);
    if norm <= radius {
        return Ok(v.to_vec());
    }
    let scale = radius / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

/// Outer dual-bisection tolerance on `| ||x||_p - radius |`.
const LP_OUTER_TOL: f64 = 1e-10;
/// Inner per-coordinate bisection tolerance on x.
const LP_INNER_TOL: f64 = 1e-12;
const LP_OUTER_MAX_ITER: usize = 200;
const LP_INNER_MAX_ITER: usize = 100;

/// Solve `x + lambda * p * x^(p-1) = a` for `x` in `[0, a]` by bisection.
/// The left side is strictly increasing in `x` for `p > 1`.
fn lp_coordinate_root(a: f64, lambda: f64, p: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, a);
    for _ in 0..LP_INNER_MAX_ITER {
        if hi - lo <= LP_INNER_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let val = mid + lambda * p * mid.powf(p - 1.0) - a;
        if val > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Projection onto `{x : ||x||_p <= radius}` for general `p > 1` by KKT
/// stationarity: per-coordinate roots of `x + lambda*p*sign(x)|x|^(p-1) = v`
/// with an outer bisection on the dual variable `lambda >= 0`.
///
/// `p = 1` delegates to [`project_l1_ball`].
pub fn project_lp_ball(v: &[f64], p: f64, radius: f64) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    ensure_radius(radius)?;
    if !p.is_finite() || p < 1.0 {
        return Err(Error::InvalidSpec(format!(
            "ball order p must satisfy p >= 1, got {p}"
        )));
    }
    if p == 1.0 {
        return project_l1_ball(v, radius);
    }
    if lp_norm(v, p) <= radius {
        return Ok(v.to_vec());
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let roots_at = |lambda: f64| -> Vec<f64> {
        abs.iter()
            .map(|&a| lp_coordinate_root(a, lambda, p))
            .collect()
    };
    let gap = |x: &[f64]| lp_norm(x, p) - radius;

    // Bracket the dual variable: gap(0) > 0 since v is infeasible, and
    // gap -> -radius as lambda -> inf.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut expand = 0;
    while gap(&roots_at(hi)) > 0.0 {
        lo = hi;
        hi *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(Error::NumericalFailure {
                what: "lp-ball dual bracket".into(),
                residual: gap(&roots_at(hi)),
                iterations: expand,
            });
        }
    }

    let mut x = roots_at(hi);
    let mut residual = gap(&x);
    for _ in 0..LP_OUTER_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        x = roots_at(mid);
        residual = gap(&x);
        if residual.abs() <= LP_OUTER_TOL {
            return Ok(x
                .iter()
                .zip(v)
                .map(|(&xi, &vi)| xi * vi.signum())
                .collect());
        }
        if residual > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NumericalFailure {
        what: "lp-ball dual bisection".into(),
        residual: residual.abs(),
        iterations: LP_OUTER_MAX_ITER,
    })
}

pub const DYKSTRA_DEFAULT_TOL: f64 = 1e-9;
pub const DYKSTRA_DEFAULT_MAX_ITER: usize = 10_000;

/// Euclidean projection onto `A ∩ (center_b + B)` by Dykstra's alternating
/// projections with correction vectors, so the limit is the true projection
/// onto the intersection rather than merely a feasible point.
///
/// The caller guarantees the intersection is nonempty; emptiness is not
/// detected.
pub fn project_intersection(
    v: &[f64],
    a: &ProjectionSpec,
    b: &ProjectionSpec,
    center_b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    a.validate()?;
    b.validate()?;
    if center_b.len() != v.len() {
        return Err(Error::Shape(format!(
            "center length {} != vector length {}",
            center_b.len(),
            v.len()
        )));
    }
    ensure_finite(center_b)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }

    let n = v.len();
    let mut x = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for _ in 0..max_iter {
        // y = P_A(x + p)
        for i in 0..n {
            shifted[i] = x[i] + p[i];
        }
        let y = a.project(&shifted)?;
        for i in 0..n {
            p[i] = shifted[i] - y[i];
        }
        // x' = center_b + P_B(y + q - center_b)
        for i in 0..n {
            shifted[i] = y[i] + q[i] - center_b[i];
        }
        let xb = b.project(&shifted)?;
        let mut gap = 0.0f64;
        let mut moved = 0.0f64;
        for i in 0..n {
            let xi = center_b[i] + xb[i];
            q[i] = shifted[i] - xb[i];
            gap = gap.max((y[i] - xi).abs());
            moved = moved.max((xi - x[i]).abs());
            x[i] = xi;
        }
        residual = gap.max(moved);
        if residual <= tol {
            // Return the A-side iterate: exactly feasible in A, within tol
            // of B.
            return Ok(y);
        }
    }
    Err(Error::NumericalFailure {
        what: "dykstra intersection projection".into(),
        residual,
        iterations: max_iter,
    })
}

/// A feasible-set description accepted by the brute-force oracles.
#[derive(Debug, Clone)]
pub enum FeasibleSet {
    /// A single set centered at the origin.
    Single(ProjectionSpec),
    /// `a ∩ (center_b + b)` with `a` at the origin.
    Intersection {
        a: ProjectionSpec,
        b: ProjectionSpec,
        center_b: Vec<f64>,
    },
}

impl FeasibleSet {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::Single(s) => s.contains(x, tol),
            FeasibleSet::Intersection { a, b, center_b } => {
                let rel: Vec<f64> = x.iter().zip(center_b).map(|(xi, ci)| xi - ci).collect();
                a.contains(x, tol) && b.contains(&rel, tol)
            }
        }
    }

    /// Exact projection dispatch (single kernel or Dykstra).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeasibleSet::Single(s) => s.project(x),
            FeasibleSet::Intersection { a, b, center_b } => project_intersection(
                x,
                a,
                b,
                center_b,
                DYKSTRA_DEFAULT_TOL,
                DYKSTRA_DEFAULT_MAX_ITER,
            ),
        }
    }

    /// A point guaranteed feasible for the sets this toolkit builds
    /// (uniform/center for intersections, uniform or origin for single sets).
    pub fn seed_point(&self, n: usize) -> Vec<f64> {
        match self {
            FeasibleSet::Single(s) => match s.kind {
                ProjectionKind::Simplex => vec![s.radius / n as f64; n],
                ProjectionKind::LpBall => vec![0.0; n],
            },
            FeasibleSet::Intersection { center_b, .. } => center_b.clone(),
        }
    }

    /// Per-coordinate bounding box of the set.
    fn bounding_box(&self, n: usize) -> Vec<(f64, f64)> {
        let single_box = |s: &ProjectionSpec, center: Option<&[f64]>| -> Vec<(f64, f64)> {
            (0..n)
                .map(|i| {
                    let c = center.map_or(0.0, |c| c[i]);
                    match s.kind {
                        ProjectionKind::Simplex => (c, c + s.radius),
                        ProjectionKind::LpBall => (c - s.radius, c + s.radius),
                    }
                })
                .collect()
        };
        match self {
            FeasibleSet::Single(s) => single_box(s, None),
            FeasibleSet::Intersection { a, b, center_b } => {
                let ba = single_box(a, None);
                let bb = single_box(b, Some(center_b));
                ba.iter()
                    .zip(&bb)
                    .map(|(&(alo, ahi), &(blo, bhi))| (alo.max(blo), ahi.min(bhi)))
                    .collect()
            }
        }
    }

    /// Radial rescalings of `x` onto the boundary of each Lp-ball component
    /// (plain normalization around the ball's center, not a projection).
    /// Grid scans use these to sample curved boundaries at full grid
    /// resolution; the objective there is otherwise second-order flat
    /// tangentially and first-order sensitive radially, which drowns the
    /// tangential signal.
    fn boundary_snaps(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let snap = |s: &ProjectionSpec, center: Option<&[f64]>| -> Option<Vec<f64>> {
            if s.kind != ProjectionKind::LpBall {
                return None;
            }
            let rel: Vec<f64> = match center {
                Some(c) => x.iter().zip(c).map(|(xi, ci)| xi - ci).collect(),
                None => x.to_vec(),
            };
            let norm = lp_norm(&rel, s.p);
            if norm <= s.radius {
                return None;
            }
            let scale = s.radius / norm;
            Some(match center {
                Some(c) => rel.iter().zip(c).map(|(ri, ci)| ci + ri * scale).collect(),
                None => rel.iter().map(|ri| ri * scale).collect(),
            })
        };
        match self {
            FeasibleSet::Single(s) => snap(s, None).into_iter().collect(),
            FeasibleSet::Intersection { a, b, center_b } => {
                let mut out = Vec::new();
                if let Some(p) = snap(a, None) {
                    out.push(p);
                }
                if let Some(p) = snap(b, Some(center_b)) {
                    out.push(p);
                }
                out
            }
        }
    }

    /// The sum-equality constraint induced by a simplex component, if any:
    /// `(target, lower_bounds)` with `sum(x) = target` and `x >= lower`.
    fn sum_constraint(&self, n: usize) -> Result<Option<(f64, Vec<f64>)>> {
        match self {
            FeasibleSet::Single(s) => Ok(match s.kind {
                ProjectionKind::Simplex => Some((s.radius, vec![0.0; n])),
                ProjectionKind::LpBall => None,
            }),
            FeasibleSet::Intersection { a, b, center_b } => {
                match (a.kind, b.kind) {
                    (ProjectionKind::Simplex, ProjectionKind::Simplex) => {
                        Err(Error::InvalidInput(
                            "grid oracle does not support two simplex constraints".into(),
                        ))
                    }
                    (ProjectionKind::Simplex, _) => Ok(Some((a.radius, vec![0.0; n]))),
                    (_, ProjectionKind::Simplex) => {
                        let target = b.radius + center_b.iter().sum::<f64>();
                        Ok(Some((target, center_b.clone())))
                    }
                    _ => Ok(None),
                }
            }
        }
    }
}

const GRID_POINTS_PER_AXIS: usize = 24;
const GRID_DIM_LIMIT: usize = 3;
const PGD_DIM_LIMIT: usize = 64;

/// Coarse-to-fine grid minimization of `objective` over a feasible set with
/// at most 3 free dimensions; the window shrinks around the incumbent until
/// the grid step is below `resolution`. Test-oracle machinery, deliberately
/// independent of the projection kernels.
pub fn grid_optimize(
    set: &FeasibleSet,
    n: usize,
    resolution: f64,
    objective: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("empty dimension".into()));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let sum_constraint = set.sum_constraint(n)?;
    let free = if sum_constraint.is_some() { n - 1 } else { n };
    if free > GRID_DIM_LIMIT {
        return Err(Error::InvalidInput(format!(
            "grid search limited to {GRID_DIM_LIMIT} free dimensions, got {free}"
        )));
    }

    // Lift free coordinates to a full candidate, deriving the last coordinate
    // from the sum constraint when present.
    let lift = |freev: &[f64]| -> Vec<f64> {
        match &sum_constraint {
            None => freev.to_vec(),
            Some((target, _)) => {
                let mut x = freev.to_vec();
                let last = target - freev.iter().sum::<f64>();
                x.push(last);
                x
            }
        }
    };

    let bbox = set.bounding_box(n);
    let mut windows: Vec<(f64, f64)> = bbox[..free].to_vec();
    // n == free == 0 can only happen with a sum constraint in 1-d: the point
    // is fully determined.
    if free == 0 {
        return Ok(lift(&[]));
    }

    let seed = set.seed_point(n);
    let mut best = if set.contains(&seed, 1e-9) { Some(seed) } else { None };
    let mut best_val = f64::INFINITY;

    for _round in 0..60 {
        let steps: Vec<f64> = windows
            .iter()
            .map(|&(lo, hi)| ((hi - lo) / (GRID_POINTS_PER_AXIS - 1) as f64).max(0.0))
            .collect();
        let max_step = steps.iter().cloned().fold(0.0f64, f64::max);
        // Feasibility is kept tight: accepting near-infeasible points lets a
        // candidate just outside a curved boundary undercut every feasible
        // point. Inequality constraints always have interior grid points
        // once the step is fine enough, and the simplex equality is removed
        // by the coordinate reduction above.
        let slack = 1e-12;

        best_val = match &best {
            Some(b) if set.contains(b, slack) => objective(b),
            _ => f64::INFINITY,
        };

        let mut idx = vec![0usize; free];
        let mut point = vec![0.0; free];
        'scan: loop {
            for d in 0..free {
                point[d] = windows[d].0 + steps[d] * idx[d] as f64;
            }
            let candidate = lift(&point);
            if set.contains(&candidate, slack) {
                let val = objective(&candidate);
                if val < best_val {
                    best_val = val;
                    best = Some(candidate);
                }
            } else {
                for snapped in set.boundary_snaps(&candidate) {
                    if set.contains(&snapped, 1e-9) {
                        let val = objective(&snapped);
                        if val < best_val {
                            best_val = val;
                            best = Some(snapped);
                        }
                    }
                }
            }
            // odometer increment
            let mut d = 0;
            loop {
                if d == free {
                    break 'scan;
                }
                idx[d] += 1;
                if idx[d] < GRID_POINTS_PER_AXIS {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }

        let incumbent_ok = best.as_ref().is_some_and(|b| set.contains(b, slack));
        if max_step <= resolution && incumbent_ok {
            break;
        }
        // Shrink the window around the incumbent (or the window center when
        // nothing feasible has been found yet at this coarseness).
        let center: Vec<f64> = match &best {
            Some(b) => b[..free].to_vec(),
            None => windows.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
        };
        for d in 0..free {
            let half = 2.5 * steps[d];
            let lo = (center[d] - half).max(bbox[d].0);
            let hi = (center[d] + half).min(bbox[d].1);
            windows[d] = (lo, hi);
        }
    }
    let _ = best_val;

    best.ok_or_else(|| Error::InvalidInput("no feasible grid point found".into()))
}

/// Brute-force projection oracle: grid search for dimension <= 3, long-run
/// projected-gradient descent on `0.5*||x - v||^2` above that (up to 64
/// dimensions).
pub fn brute_force_project(v: &[f64], set: &FeasibleSet, grid_resolution: f64) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    let n = v.len();
    if n > PGD_DIM_LIMIT {
        return Err(Error::InvalidInput(format!(
            "oracle dimension guard: {n} > {PGD_DIM_LIMIT}"
        )));
    }
    if n <= GRID_DIM_LIMIT {
        let obj = |x: &[f64]| 0.5 * x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        return grid_optimize(set, n, grid_resolution, obj);
    }
    // Projected-gradient fallback.
    let mut x = set.seed_point(n);
    let step = 0.5;
    for _ in 0..10_000 {
        let moved: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi - step * (xi - vi)).collect();
        let next = set.project(&moved)?;
        let delta = l2_dist(&next, &x);
        x = next;
        if delta <= 1e-12 {
            break;
        }
    }
    Ok(x)
}
