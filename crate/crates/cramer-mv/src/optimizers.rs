//! Inner pointwise minimizations of the backward Riccati generators.
//!
//! Two families of problems are solved at every grid node:
//!
//! * the investment form over the admissible cone `K`:
//!
//!   ```text
//!   F_above(v) = p |sigma^T v|^2 + 2 v . (p mu + sigma l)     (above-target branch)
//!   F_below(v) = p |sigma^T v|^2 - 2 v . (p mu + sigma l)     (below-target branch)
//!   ```
//!
//!   minimized over `v in K` (optionally intersected with a centered ball
//!   `|v| <= k` for the truncated equations);
//!
//! * the retention forms over `u >= 0`, integrating over the claim atoms:
//!
//!   ```text
//!   G_above(u) = int [ (p1 + g1(y)) (((1-uy)^+)^2 - 1)
//!                    + (p2 + g2(y)) ((1-uy)^-)^2 ] lambda nu(dy)
//!              + 2 u p1 (b + lambda E[Y])
//!
//!   G_below(u) = u^2 int (p2 + g2(y)) y^2 lambda nu(dy)
//!              + 2 u ( int g2(y) y lambda nu(dy) - p2 b )
//!   ```
//!
//!   `G_below` is an explicit parabola with nonnegativity clamp; `G_above` is
//!   strictly convex piecewise quadratic and is bracketed then golden-sectioned.
//!
//! Since zero is always feasible, every optimal value is `<= 0`; minimizers
//! are reported with the smallest norm on ties.

use crate::error::{Error, Result};
use crate::model::{ClaimDistribution, ConvexCone};
use nalgebra::{DMatrix, DVector};

/// Which branch of the piecewise-quadratic value the generator feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Wealth above the moving target (coefficient `P1`).
    Above,
    /// Wealth below the moving target (coefficient `P2`).
    Below,
}

impl Branch {
    /// Sign of the linear term: `+1` above, `-1` below.
    fn sign(self) -> f64 {
        match self {
            Branch::Above => 1.0,
            Branch::Below => -1.0,
        }
    }
}

/// Result of a cone minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeMin {
    pub value: f64,
    pub minimizer: DVector<f64>,
}

/// Evaluate the investment quadratic at `v` (no minimization).
pub fn eval_f(
    branch: Branch,
    v: &DVector<f64>,
    p: f64,
    l: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let st_v = sigma.transpose() * v;
    let c = mu * p + sigma * l;
    p * st_v.norm_squared() + 2.0 * branch.sign() * v.dot(&c)
}

/// Minimize the investment quadratic over `cone`, optionally intersected with
/// the ball `|v| <= radius`.
///
/// Dispatch: exact interval clamp for one asset, linear solve (plus a
/// trust-region multiplier search under truncation) for the unconstrained
/// cone, an exact active-set Newton for products of half-lines, and projected
/// gradient with a fixed `1/L` step for generated cones and truncated
/// half-line cones (tolerance `1e-10` on the scaled fixed-point residual,
/// at most `10^4` iterations, error on stall).
pub fn f_star(
    branch: Branch,
    p: f64,
    l: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cone: &ConvexCone,
    radius: Option<f64>,
) -> Result<ConeMin> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Solver(format!("quadratic weight p = {p} must be positive")));
    }
    if let Some(k) = radius {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Solver(format!("truncation radius {k} must be positive")));
        }
    }
    let m = mu.len();
    let s = branch.sign();
    let c = mu * p + sigma * l;

    if m == 1 {
        return Ok(f_star_scalar(s, p, &c, sigma, cone, radius));
    }

    let gram = sigma * sigma.transpose();
    match (cone, radius) {
        (ConvexCone::Full { .. }, None) => full_space_min(s, p, &c, &gram),
        (ConvexCone::Full { .. }, Some(k)) => {
            let unconstrained = full_space_min(s, p, &c, &gram)?;
            if unconstrained.minimizer.norm() <= k {
                Ok(unconstrained)
            } else {
                trust_region_min(s, p, &c, &gram, k)
            }
        }
        (_, None) if cone.axis_ranges().is_some() => {
            active_set_min(s, p, &c, &gram, cone).or_else(|_| {
                projected_gradient_min(s, p, &c, &gram, cone, None)
            })
        }
        _ => projected_gradient_min(s, p, &c, &gram, cone, radius),
    }
    .map(|res| prefer_zero(res, m))
}

/// Ties between a zero-value minimizer and the origin resolve to the origin.
fn prefer_zero(res: ConeMin, dim: usize) -> ConeMin {
    if res.value >= 0.0 {
        ConeMin { value: 0.0, minimizer: DVector::zeros(dim) }
    } else {
        res
    }
}

fn f_star_scalar(
    s: f64,
    p: f64,
    c: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cone: &ConvexCone,
    radius: Option<f64>,
) -> ConeMin {
    let s2 = sigma.row(0).norm_squared();
    let (mut lo, mut hi) = scalar_cone_interval(cone);
    if let Some(k) = radius {
        lo = lo.max(-k);
        hi = hi.min(k);
    }
    let vertex = -s * c[0] / (p * s2);
    let v = vertex.clamp(lo, hi);
    let value = p * s2 * v * v + 2.0 * s * v * c[0];
    if value >= 0.0 {
        ConeMin { value: 0.0, minimizer: DVector::zeros(1) }
    } else {
        ConeMin { value, minimizer: DVector::from_vec(vec![v]) }
    }
}

fn scalar_cone_interval(cone: &ConvexCone) -> (f64, f64) {
    use crate::model::AxisRange;
    match cone.axis_ranges() {
        Some(signs) => match signs[0] {
            AxisRange::Free => (f64::NEG_INFINITY, f64::INFINITY),
            AxisRange::Nonneg => (0.0, f64::INFINITY),
            AxisRange::Nonpos => (f64::NEG_INFINITY, 0.0),
        },
        None => {
            let ConvexCone::Generated { rays } = cone else { unreachable!() };
            let lo = if rays.iter().any(|&r| r < 0.0) { f64::NEG_INFINITY } else { 0.0 };
            let hi = if rays.iter().any(|&r| r > 0.0) { f64::INFINITY } else { 0.0 };
            (lo, hi)
        }
    }
}

fn full_space_min(s: f64, p: f64, c: &DVector<f64>, gram: &DMatrix<f64>) -> Result<ConeMin> {
    let chol = nalgebra::Cholesky::new(gram.clone()).ok_or_else(|| {
        Error::Solver("sigma sigma^T is not positive definite".into())
    })?;
    let w = chol.solve(c);
    let minimizer = &w * (-s / p);
    let value = -c.dot(&w) / p;
    Ok(ConeMin { value, minimizer })
}

/// Ball-constrained quadratic: bisection on the multiplier `theta >= 0` in
/// `(p Sigma + theta I) v = -s c` until `|v| = k`.
fn trust_region_min(
    s: f64,
    p: f64,
    c: &DVector<f64>,
    gram: &DMatrix<f64>,
    k: f64,
) -> Result<ConeMin> {
    let m = c.len();
    let eye = DMatrix::identity(m, m);
    let solve_for = |theta: f64| -> Option<DVector<f64>> {
        nalgebra::Cholesky::new(gram * p + &eye * theta).map(|ch| ch.solve(c) * (-s))
    };
    // |v(theta)| <= |c| / theta, so theta_hi below forces |v| <= k.
    let mut lo = 0.0;
    let mut hi = c.norm() / k;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = solve_for(mid)
            .ok_or_else(|| Error::Solver("trust-region system not positive definite".into()))?;
        if v.norm() > k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = solve_for(hi)
        .ok_or_else(|| Error::Solver("trust-region system not positive definite".into()))?;
    let st_v = gram * &v;
    let value = p * v.dot(&st_v) + 2.0 * s * v.dot(c);
    Ok(ConeMin { value, minimizer: v })
}

/// Exact KKT solve over a product of half-lines: alternately pin sign-violating
/// coordinates to zero and release pinned coordinates whose multiplier has the
/// wrong sign.
fn active_set_min(
    s: f64,
    p: f64,
    c: &DVector<f64>,
    gram: &DMatrix<f64>,
    cone: &ConvexCone,
) -> Result<ConeMin> {
    use crate::model::AxisRange;
    let signs = cone.axis_ranges().expect("half-line cone");
    let m = signs.len();
    let mut pinned = vec![false; m];
    for _ in 0..200 {
        let free: Vec<usize> = (0..m).filter(|&i| !pinned[i]).collect();
        let mut v = DVector::zeros(m);
        if !free.is_empty() {
            let sub = gram.select_rows(free.iter()).select_columns(free.iter());
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -s * c[i] / p));
            let sol = nalgebra::Cholesky::new(sub)
                .ok_or_else(|| Error::Solver("reduced system not positive definite".into()))?
                .solve(&rhs);
            for (j, &i) in free.iter().enumerate() {
                v[i] = sol[j];
            }
        }
        // Pin the worst sign violation, if any.
        let mut worst: Option<(usize, f64)> = None;
        for &i in &free {
            let bad = match signs[i] {
                AxisRange::Free => 0.0,
                AxisRange::Nonneg => (-v[i]).max(0.0),
                AxisRange::Nonpos => v[i].max(0.0),
            };
            if bad > 1e-14 && worst.is_none_or(|(_, b)| bad > b) {
                worst = Some((i, bad));
            }
        }
        if let Some((i, _)) = worst {
            pinned[i] = true;
            continue;
        }
        // KKT multipliers on the pinned coordinates.
        let grad = gram * &v * (2.0 * p) + c * (2.0 * s);
        let mut release: Option<(usize, f64)> = None;
        for i in 0..m {
            if !pinned[i] {
                continue;
            }
            let bad = match signs[i] {
                AxisRange::Free => 0.0,
                AxisRange::Nonneg => (-grad[i]).max(0.0),
                AxisRange::Nonpos => grad[i].max(0.0),
            };
            if bad > 1e-12 && release.is_none_or(|(_, b)| bad > b) {
                release = Some((i, bad));
            }
        }
        if let Some((i, _)) = release {
            pinned[i] = false;
            continue;
        }
        let st_v = gram * &v;
        let value = p * v.dot(&st_v) + 2.0 * s * v.dot(c);
        return Ok(ConeMin { value, minimizer: v });
    }
    Err(Error::Solver("active-set iteration did not settle".into()))
}

fn projected_gradient_min(
    s: f64,
    p: f64,
    c: &DVector<f64>,
    gram: &DMatrix<f64>,
    cone: &ConvexCone,
    radius: Option<f64>,
) -> Result<ConeMin> {
    let project = |v: &DVector<f64>| -> DVector<f64> {
        let mut w = cone.project(v);
        if let Some(k) = radius {
            let n = w.norm();
            if n > k {
                // Projection onto cone ∩ ball is the radial clamp of the cone
                // projection (cones are scale-invariant).
                w *= k / n;
            }
        }
        w
    };
    let lmax = gram
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    if lmax <= 0.0 {
        return Err(Error::Solver("sigma sigma^T has no positive eigenvalue".into()));
    }
    let lip = 2.0 * p * lmax;
    let step = 1.0 / lip;
    // Warm start from the projected unconstrained minimizer when available.
    let mut v = match nalgebra::Cholesky::new(gram.clone()) {
        Some(ch) => project(&(ch.solve(c) * (-s / p))),
        None => DVector::zeros(c.len()),
    };
    let mut resid = f64::INFINITY;
    for _ in 0..10_000 {
        let grad = gram * &v * (2.0 * p) + c * (2.0 * s);
        let w = project(&(&v - grad * step));
        resid = (&w - &v).norm() * lip;
        v = w;
        if resid <= 1e-10 {
            let st_v = gram * &v;
            let value = p * v.dot(&st_v) + 2.0 * s * v.dot(c);
            return Ok(ConeMin { value, minimizer: v });
        }
    }
    Err(Error::Solver(format!(
        "cone minimization stalled: projected-gradient residual {resid:.3e} after 10000 iterations"
    )))
}

// ---------------------------------------------------------------------------
// Retention minimizations
// ---------------------------------------------------------------------------

/// Claim-side inputs shared by the retention minimizations.
#[derive(Debug, Clone, Copy)]
pub struct ClaimContext<'a> {
    pub claims: &'a ClaimDistribution,
    /// Arrival intensity `lambda`.
    pub lambda: f64,
    /// Retention margin `b = lambda E[Y] eta_r`.
    pub b: f64,
}

impl<'a> ClaimContext<'a> {
    pub fn new(claims: &'a ClaimDistribution, lambda: f64, b: f64) -> Self {
        Self { claims, lambda, b }
    }
}

/// Jump increment of a Riccati coefficient, either uniform across claim sizes
/// (the count-modulated regime) or atom-by-atom.
#[derive(Debug, Clone, Copy)]
pub enum JumpShift<'a> {
    Constant(f64),
    PerAtom(&'a [f64]),
}

impl JumpShift<'_> {
    #[inline]
    fn at(&self, idx: usize) -> f64 {
        match self {
            JumpShift::Constant(g) => *g,
            JumpShift::PerAtom(v) => v[idx],
        }
    }

    fn check_len(&self, atoms: usize) -> Result<()> {
        if let JumpShift::PerAtom(v) = self {
            if v.len() != atoms {
                return Err(Error::Solver(format!(
                    "jump shift has {} entries for {atoms} claim atoms",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Evaluate the above-branch retention integrand at `u` (no minimization).
pub fn eval_g1(
    u: f64,
    p1: f64,
    gamma1: &JumpShift,
    p2: f64,
    gamma2: &JumpShift,
    ctx: &ClaimContext,
) -> f64 {
    let lambda = ctx.lambda;
    let mut acc = 0.0;
    for (i, atom) in ctx.claims.atoms().iter().enumerate() {
        let z = 1.0 - u * atom.size;
        let zp = z.max(0.0);
        let zm = (-z).max(0.0);
        acc += atom.weight
            * lambda
            * ((p1 + gamma1.at(i)) * (zp * zp - 1.0) + (p2 + gamma2.at(i)) * zm * zm);
    }
    acc + 2.0 * u * p1 * (ctx.b + lambda * ctx.claims.mean())
}

fn ensure_positive_weights(p: f64, gamma: &JumpShift, atoms: usize, label: &str) -> Result<()> {
    gamma.check_len(atoms)?;
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Solver(format!("{label} coefficient {p} must be positive")));
    }
    for i in 0..atoms {
        let shifted = p + gamma.at(i);
        if !(shifted.is_finite() && shifted > 0.0) {
            return Err(Error::Solver(format!(
                "{label} jump-shifted coefficient {shifted} at atom {i} must stay positive"
            )));
        }
    }
    Ok(())
}

/// Minimize the above-branch retention form over `u in [0, cap]`
/// (`cap = +inf` when `None`). Returns `(value, u_hat)`.
///
/// The right derivative at zero is `2 (p1 b - int gamma1 y lambda nu(dy))`;
/// when it is nonnegative the minimizer is exactly zero (convexity), which in
/// particular covers every input with `gamma1 = 0`. Otherwise the minimum is
/// bracketed by doubling and located by golden section (absolute interval
/// tolerance `1e-10`), followed by a left-edge bisection so that a flat
/// bottom reports its smallest point.
pub fn g1_star(
    p1: f64,
    gamma1: &JumpShift,
    p2: f64,
    gamma2: &JumpShift,
    ctx: &ClaimContext,
    cap: Option<f64>,
) -> Result<(f64, f64)> {
    let atoms = ctx.claims.atoms().len();
    ensure_positive_weights(p1, gamma1, atoms, "above-branch")?;
    ensure_positive_weights(p2, gamma2, atoms, "below-branch")?;
    let cap = match cap {
        Some(k) if !(k.is_finite() && k > 0.0) => {
            return Err(Error::Solver(format!("retention cap {k} must be positive")));
        }
        Some(k) => k,
        None => f64::INFINITY,
    };

    let jump_mean: f64 = ctx
        .claims
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| a.weight * gamma1.at(i) * a.size)
        .sum::<f64>()
        * ctx.lambda;
    let slope0 = 2.0 * (p1 * ctx.b - jump_mean);
    if slope0 >= 0.0 {
        return Ok((0.0, 0.0));
    }

    let f = |u: f64| eval_g1(u, p1, gamma1, p2, gamma2, ctx);
    let mut hi = 1.0_f64.min(cap);
    while hi < cap && f(0.5 * hi) > f(hi) {
        hi = (2.0 * hi).min(cap);
        if hi > 1e9 {
            return Err(Error::Solver(
                "retention bracket failure: objective still decreasing at u = 1e9".into(),
            ));
        }
    }
    let (u0, f0) = golden_min(&f, 0.0, hi, 1e-10);
    if f0 >= 0.0 {
        return Ok((0.0, 0.0));
    }
    // Left edge of the (numerically) optimal set.
    let tol = 1e-13 * (1.0 + f0.abs());
    let mut lo = 0.0;
    let mut edge = u0;
    while edge - lo > 1e-10 {
        let mid = 0.5 * (lo + edge);
        if f(mid) <= f0 + tol {
            edge = mid;
        } else {
            lo = mid;
        }
    }
    Ok((f(edge).min(f0), edge))
}

/// Minimize the below-branch retention parabola over `u in [0, cap]`
/// (`cap = +inf` when `None`) in closed form. Returns `(value, u_hat)`; with
/// no cap, `u_hat = (p2 b - int gamma2 y lambda nu)^+ / int (p2 + gamma2) y^2 lambda nu`.
pub fn g2_star(
    p2: f64,
    gamma2: &JumpShift,
    ctx: &ClaimContext,
    cap: Option<f64>,
) -> Result<(f64, f64)> {
    let atoms = ctx.claims.atoms().len();
    ensure_positive_weights(p2, gamma2, atoms, "below-branch")?;
    if let Some(k) = cap {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Solver(format!("retention cap {k} must be positive")));
        }
    }
    let mut first = 0.0; // int gamma2 y lambda nu(dy)
    let mut second = 0.0; // int (p2 + gamma2) y^2 lambda nu(dy)
    for (i, a) in ctx.claims.atoms().iter().enumerate() {
        first += a.weight * gamma2.at(i) * a.size;
        second += a.weight * (p2 + gamma2.at(i)) * a.size * a.size;
    }
    first *= ctx.lambda;
    second *= ctx.lambda;
    if second <= 0.0 {
        return Err(Error::Solver(
            "claim second moment vanished in the retention parabola".into(),
        ));
    }
    let numerator = (p2 * ctx.b - first).max(0.0);
    let mut u = numerator / second;
    if let Some(k) = cap {
        u = u.min(k);
    }
    // Parabola u^2 second - 2 u numerator, evaluated at the clamped vertex.
    Ok((u * (u * second - 2.0 * numerator), u))
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`; stops when the
/// interval is shorter than `tol` and returns the midpoint.
fn golden_min(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    const INV_PHI2: f64 = 0.381_966_011_250_105_1;
    let mut c = lo + INV_PHI2 * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = lo + INV_PHI2 * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let u = 0.5 * (lo + hi);
    (u, f(u))
}
