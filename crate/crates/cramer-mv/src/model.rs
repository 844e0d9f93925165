//! Market and insurance primitives.
//!
//! The surplus model has three ingredients:
//!
//! * a financial market with one riskless asset paying a deterministic rate
//!   `r(t)` and `m` risky assets with drift `mu(t, n)` and volatility
//!   `sigma(t, n)` (an `m x n_w` matrix), where `n` is the number of claims
//!   observed so far — coefficients may react to the claim count but not to
//!   the Brownian filtration;
//! * a compound-Poisson claim stream with intensity `lambda` and bounded
//!   i.i.d. claim sizes `Y >= 0`, reduced to a finite atom list (discrete laws
//!   are exact, continuous densities are collapsed onto Gauss-Legendre nodes);
//! * proportional-reinsurance premium loadings: the insurer charges
//!   `(1 + eta) lambda E[Y]`, the reinsurer `(1 + eta_r)` on ceded risk with
//!   `eta_r >= eta > 0` (cheap reinsurance is ruled out).
//!
//! Derived drift constants used throughout the solver:
//!
//! ```text
//! b = lambda * E[Y] * eta_r          (> 0, margin per unit of retained risk)
//! a = lambda * E[Y] * (eta - eta_r)  (<= 0, loading gap paid to the reinsurer)
//! p = (1 + eta) * lambda * E[Y]      (gross premium income rate)
//! ```
//!
//! Investment strategies are constrained to a closed convex cone; the cone
//! kinds here cover the whole space, orthants, per-axis half-lines, and
//! finitely generated cones `{ G alpha : alpha >= 0 }`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature (used to reduce continuous claim laws to atoms)
// ---------------------------------------------------------------------------

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; exact for polynomials of
/// degree `2n - 1`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (pn, dpn) = legendre_with_derivative(n, x);
            let dx = pn / dpn;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dpn) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dpn * dpn);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

// ---------------------------------------------------------------------------
// Claim distribution
// ---------------------------------------------------------------------------

/// One claim-size atom: `P(Y = size) = weight` after reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaimAtom {
    pub size: f64,
    pub weight: f64,
}

/// Provenance of the atom list (kept for diagnostics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimKind {
    /// The law was supplied as atoms and is represented exactly.
    DiscreteAtoms,
    /// A continuous density collapsed onto Gauss-Legendre nodes.
    QuadratureDensity,
}

/// Bounded nonnegative claim-size law as a finite atom list.
///
/// Weights sum to one; the mean `E[Y]` and second moment `E[Y^2]` are both
/// required to be strictly positive (a claim law concentrated at zero makes
/// the reinsurance problem degenerate and is rejected at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimDistribution {
    kind: ClaimKind,
    atoms: Vec<ClaimAtom>,
    max_size: f64,
    mean: f64,
    second_moment: f64,
    /// Cumulative weights for inverse-CDF sampling.
    cumulative: Vec<f64>,
}

impl ClaimDistribution {
    /// Build from explicit atoms. Weights must be nonnegative and sum to one
    /// within `1e-12`; sizes must be finite and nonnegative.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Model("claim law needs at least one atom".into()));
        }
        for &(y, w) in &atoms {
            if !y.is_finite() || y < 0.0 {
                return Err(Error::Model(format!("claim atom size {y} is not in [0, inf)")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Model(format!("claim atom weight {w} is negative")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!(
                "claim atom weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Self::finish(
            ClaimKind::DiscreteAtoms,
            atoms.into_iter().map(|(size, weight)| ClaimAtom { size, weight }).collect(),
        )
    }

    /// Single deterministic claim size.
    pub fn point_mass(size: f64) -> Result<Self> {
        Self::from_atoms(vec![(size, 1.0)])
    }

    /// Reduce a continuous density on `[lo, hi]` to `nodes` Gauss-Legendre
    /// atoms. The density is renormalized so that the atom weights sum to one
    /// exactly.
    pub fn from_density(pdf: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo {
            return Err(Error::Model(format!(
                "claim density support [{lo}, {hi}] must be finite, nonnegative and nonempty"
            )));
        }
        if nodes < 2 {
            return Err(Error::Model("claim density needs at least 2 quadrature nodes".into()));
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut atoms = Vec::with_capacity(nodes);
        for (x, w) in gauss_legendre(nodes) {
            let y = mid + half * x;
            let f = pdf(y);
            if !f.is_finite() || f < 0.0 {
                return Err(Error::Model(format!("claim density is invalid at y = {y}")));
            }
            atoms.push(ClaimAtom { size: y, weight: w * half * f });
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if total <= 0.0 {
            return Err(Error::Model("claim density integrates to zero".into()));
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        Self::finish(ClaimKind::QuadratureDensity, atoms)
    }

    /// Uniform claim sizes on `[lo, hi]` via the default 64-node reduction.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::from_density(|_| 1.0, lo, hi, 64)
    }

    fn finish(kind: ClaimKind, atoms: Vec<ClaimAtom>) -> Result<Self> {
        let mean: f64 = atoms.iter().map(|a| a.weight * a.size).sum();
        let second: f64 = atoms.iter().map(|a| a.weight * a.size * a.size).sum();
        if mean <= 0.0 || second <= 0.0 {
            return Err(Error::Model(
                "claim law is concentrated at zero (E[Y] and E[Y^2] must be > 0)".into(),
            ));
        }
        let max_size = atoms.iter().map(|a| a.size).fold(0.0, f64::max);
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.weight;
            cumulative.push(acc);
        }
        // Guard the last bucket against round-off so sampling never falls out.
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { kind, atoms, max_size, mean, second_moment: second, cumulative })
    }

    pub fn kind(&self) -> ClaimKind {
        self.kind
    }

    pub fn atoms(&self) -> &[ClaimAtom] {
        &self.atoms
    }

    /// Largest atom (essential supremum of the reduced law).
    pub fn max_size(&self) -> f64 {
        self.max_size
    }

    /// `E[Y]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `E[Y^2]` (second raw moment, not the variance).
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// `sum_i w_i f(y_i)` — the nu-integral of `f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.size)).sum()
    }

    /// Inverse-CDF sample from a uniform draw `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.atoms[idx.min(self.atoms.len() - 1)].size
    }
}

/// First and second claim moments `(E[Y], E[Y^2])`.
pub fn claim_moments(claims: &ClaimDistribution) -> (f64, f64) {
    (claims.mean(), claims.second_moment())
}

// ---------------------------------------------------------------------------
// Convex cones
// ---------------------------------------------------------------------------

/// Per-axis constraint for [`ConvexCone::HalfLines`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisRange {
    Free,
    Nonneg,
    Nonpos,
}

/// Closed convex cone of admissible investment positions.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexCone {
    /// No constraint: the whole of R^m.
    Full { dim: usize },
    /// Long-only: componentwise `v >= 0`.
    NonnegativeOrthant { dim: usize },
    /// Short-only: componentwise `v <= 0`.
    NonpositiveOrthant { dim: usize },
    /// Product of per-axis half-lines / full lines.
    HalfLines { signs: Vec<AxisRange> },
    /// Finitely generated: `{ G alpha : alpha >= 0 }` with generator columns
    /// in `rays` (an `m x k` matrix).
    Generated { rays: DMatrix<f64> },
}

impl ConvexCone {
    pub fn dim(&self) -> usize {
        match self {
            ConvexCone::Full { dim }
            | ConvexCone::NonnegativeOrthant { dim }
            | ConvexCone::NonpositiveOrthant { dim } => *dim,
            ConvexCone::HalfLines { signs } => signs.len(),
            ConvexCone::Generated { rays } => rays.nrows(),
        }
    }

    /// Per-axis view when the cone is a product of half-lines (orthants and
    /// the full space included); `None` for generated cones.
    pub fn axis_ranges(&self) -> Option<Vec<AxisRange>> {
        match self {
            ConvexCone::Full { dim } => Some(vec![AxisRange::Free; *dim]),
            ConvexCone::NonnegativeOrthant { dim } => Some(vec![AxisRange::Nonneg; *dim]),
            ConvexCone::NonpositiveOrthant { dim } => Some(vec![AxisRange::Nonpos; *dim]),
            ConvexCone::HalfLines { signs } => Some(signs.clone()),
            ConvexCone::Generated { .. } => None,
        }
    }

    /// Membership test with absolute tolerance `tol` (distance for generated
    /// cones, componentwise slack otherwise).
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        assert_eq!(v.len(), self.dim());
        match self.axis_ranges() {
            Some(signs) => signs.iter().zip(v.iter()).all(|(s, &x)| match s {
                AxisRange::Free => true,
                AxisRange::Nonneg => x >= -tol,
                AxisRange::Nonpos => x <= tol,
            }),
            None => {
                let p = self.project(v);
                (v - p).norm() <= tol * (1.0 + v.norm())
            }
        }
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexCone::Full { .. } => v.clone(),
            ConvexCone::NonnegativeOrthant { .. } => v.map(|x| x.max(0.0)),
            ConvexCone::NonpositiveOrthant { .. } => v.map(|x| x.min(0.0)),
            ConvexCone::HalfLines { signs } => DVector::from_iterator(
                v.len(),
                signs.iter().zip(v.iter()).map(|(s, &x)| match s {
                    AxisRange::Free => x,
                    AxisRange::Nonneg => x.max(0.0),
                    AxisRange::Nonpos => x.min(0.0),
                }),
            ),
            ConvexCone::Generated { rays } => {
                let alpha = nnls(rays, v);
                rays * alpha
            }
        }
    }

    /// A pseudo-random cone element with norm at most `radius` (diagnostics
    /// and optimality spot-checks).
    pub fn random_element(&self, rng: &mut impl rand::Rng, radius: f64) -> DVector<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let dim = self.dim();
        let raw = match self {
            ConvexCone::Generated { rays } => {
                let k = rays.ncols();
                let alpha = DVector::from_iterator(
                    k,
                    (0..k).map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        g.abs()
                    }),
                );
                rays * alpha
            }
            _ => {
                let g = DVector::from_iterator(dim, (0..dim).map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    g
                }));
                self.project(&g)
            }
        };
        let n = raw.norm();
        if n <= 1e-300 {
            return DVector::zeros(dim);
        }
        let scale = rng.random::<f64>() * radius / n;
        raw * scale
    }

    /// Structural sanity: generator rays must be nonzero and match `dim`.
    pub fn check(&self) -> Result<()> {
        if let ConvexCone::Generated { rays } = self {
            if rays.ncols() == 0 {
                return Err(Error::Model("generated cone needs at least one ray".into()));
            }
            for j in 0..rays.ncols() {
                if rays.column(j).norm() == 0.0 {
                    return Err(Error::Model(format!("generated cone ray {j} is zero")));
                }
                if rays.column(j).iter().any(|x| !x.is_finite()) {
                    return Err(Error::Model(format!("generated cone ray {j} is not finite")));
                }
            }
        }
        if self.dim() == 0 {
            return Err(Error::Model("cone dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Nonnegative least squares `argmin_{alpha >= 0} |G alpha - v|` via the
/// classic active-set method. Matrices here are tiny (a handful of rays).
fn nnls(g: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let k = g.ncols();
    let mut passive = vec![false; k];
    let mut alpha = DVector::zeros(k);
    let tol = 1e-12 * (1.0 + v.norm());
    for _outer in 0..(4 * k + 16) {
        let resid = v - g * &alpha;
        let w = g.transpose() * resid;
        // Most promising inactive coordinate.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..k {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, bw)| w[j] > bw) {
                best = Some((j, w[j]));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;
        // Inner loop: least squares on the passive set, backtracking to keep
        // all passive coordinates nonnegative.
        for _inner in 0..(4 * k + 16) {
            let cols: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let sub = g.select_columns(cols.iter());
            let beta_sub = lstsq(&sub, v);
            let mut beta = DVector::zeros(k);
            for (i, &j) in cols.iter().enumerate() {
                beta[j] = beta_sub[i];
            }
            if cols.iter().all(|&j| beta[j] > -1e-14) {
                alpha = beta.map(|x| x.max(0.0));
                break;
            }
            // Step from alpha toward beta until the first passive coordinate
            // hits zero; drop it from the passive set.
            let mut t = 1.0_f64;
            for &j in &cols {
                if beta[j] < 0.0 {
                    t = t.min(alpha[j] / (alpha[j] - beta[j]));
                }
            }
            alpha = &alpha + (beta - &alpha) * t;
            for &j in &cols {
                if alpha[j] <= 1e-14 {
                    alpha[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    alpha
}

/// Minimum-norm least squares via SVD (handles rank deficiency).
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

// ---------------------------------------------------------------------------
// Deterministic short rate
// ---------------------------------------------------------------------------

/// Deterministic riskless rate, constant or piecewise constant in time.
///
/// Piecewise-constant segments keep every discounting integral in closed
/// form, so target curves `h`, riskless means and frontier coefficients carry
/// no quadrature error.
#[derive(Debug, Clone, PartialEq)]
pub enum RateCurve {
    Constant(f64),
    /// `values[i]` applies on `[times[i], times[i+1])`; `times[0]` must be 0
    /// and the last value extends to the horizon.
    PiecewiseConstant { times: Vec<f64>, values: Vec<f64> },
}

impl RateCurve {
    pub fn check(&self) -> Result<()> {
        match self {
            RateCurve::Constant(r) => {
                if !r.is_finite() {
                    return Err(Error::Model("riskless rate is not finite".into()));
                }
            }
            RateCurve::PiecewiseConstant { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    return Err(Error::Model(
                        "rate table needs equally many times and values (>= 1)".into(),
                    ));
                }
                if times[0] != 0.0 {
                    return Err(Error::Model("rate table must start at t = 0".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Model("rate table times must be strictly increasing".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Model("rate table contains a non-finite value".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            RateCurve::Constant(r) => *r,
            RateCurve::PiecewiseConstant { times, values } => {
                let idx = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                    Ok(i) => i,
                    Err(0) => 0,
                    Err(i) => i - 1,
                };
                values[idx.min(values.len() - 1)]
            }
        }
    }

    /// `int_from^to r(s) ds`, exact.
    pub fn integral(&self, from: f64, to: f64) -> f64 {
        self.segment_sum(from, to, |r, len| r * len)
    }

    /// `int_from^to |r(s)| ds`, exact.
    pub fn abs_integral(&self, from: f64, to: f64) -> f64 {
        self.segment_sum(from, to, |r, len| r.abs() * len)
    }

    /// `int_0^to exp(-int_0^s r du) ds`, exact per segment.
    pub fn discount_weight_integral(&self, to: f64) -> f64 {
        let mut acc: f64 = 0.0; // running int_0^t r
        let mut total = 0.0;
        self.for_segments(0.0, to, |r, len| {
            let piece = if r.abs() < 1e-14 {
                len * (-acc).exp()
            } else {
                (-acc).exp() * (1.0 - (-r * len).exp()) / r
            };
            total += piece;
            acc += r * len;
        });
        total
    }

    fn segment_sum(&self, from: f64, to: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        self.for_segments(from, to, |r, len| total += f(r, len));
        total
    }

    fn for_segments(&self, from: f64, to: f64, mut f: impl FnMut(f64, f64)) {
        debug_assert!(to >= from - 1e-12);
        if to <= from {
            return;
        }
        match self {
            RateCurve::Constant(r) => f(*r, to - from),
            RateCurve::PiecewiseConstant { times, values } => {
                let mut t = from;
                while t < to - 1e-15 {
                    let idx = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                        Ok(i) => i,
                        Err(0) => 0,
                        Err(i) => i - 1,
                    };
                    let seg_end = if idx + 1 < times.len() { times[idx + 1].min(to) } else { to };
                    let seg_end = seg_end.max(t);
                    f(values[idx], seg_end - t);
                    if seg_end <= t {
                        break;
                    }
                    t = seg_end;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Risky-asset coefficient tables
// ---------------------------------------------------------------------------

/// Time interpolation rule for coefficient tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    PiecewiseConstant,
    PiecewiseLinear,
}

/// How coefficients depend on the claim count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMode {
    /// `mu`, `sigma` deterministic in time only (single level).
    Deterministic,
    /// `mu(t, n)`, `sigma(t, n)` switch with the running claim count `n`;
    /// levels beyond the last table entry reuse the last entry.
    CountModulated,
}

/// One claim-count level: `mu` and `sigma` sampled at the shared time knots.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTable {
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

/// Piecewise (constant or linear) drift/volatility tables per claim level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    times: Vec<f64>,
    interp: Interpolation,
    levels: Vec<LevelTable>,
    n_assets: usize,
    n_brownian: usize,
}

impl CoefficientTable {
    /// Constant coefficients (single level, single knot).
    pub fn constant(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Self::time_varying(
            vec![0.0],
            Interpolation::PiecewiseConstant,
            vec![LevelTable { mu: vec![mu], sigma: vec![sigma] }],
        )
    }

    /// Constant-in-time coefficients per claim level.
    pub fn per_level(levels: Vec<(DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        Self::time_varying(
            vec![0.0],
            Interpolation::PiecewiseConstant,
            levels
                .into_iter()
                .map(|(mu, sigma)| LevelTable { mu: vec![mu], sigma: vec![sigma] })
                .collect(),
        )
    }

    /// Fully general table: shared strictly increasing knots starting at 0,
    /// one `(mu, sigma)` row per knot per level.
    pub fn time_varying(
        times: Vec<f64>,
        interp: Interpolation,
        levels: Vec<LevelTable>,
    ) -> Result<Self> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(Error::Model("coefficient knots must start at t = 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Model("coefficient knots must be strictly increasing".into()));
        }
        if levels.is_empty() {
            return Err(Error::Model("coefficient table needs at least one level".into()));
        }
        let m = levels[0].mu.first().map(|v| v.len()).unwrap_or(0);
        if m == 0 {
            return Err(Error::Model("coefficient table needs at least one asset".into()));
        }
        let n_w = levels[0].sigma.first().map(|s| s.ncols()).unwrap_or(0);
        for (li, lvl) in levels.iter().enumerate() {
            if lvl.mu.len() != times.len() || lvl.sigma.len() != times.len() {
                return Err(Error::Model(format!(
                    "level {li} must supply one mu/sigma row per knot ({} knots)",
                    times.len()
                )));
            }
            for (ki, (mu, sigma)) in lvl.mu.iter().zip(lvl.sigma.iter()).enumerate() {
                if mu.len() != m || sigma.nrows() != m || sigma.ncols() != n_w {
                    return Err(Error::Model(format!(
                        "level {li} knot {ki}: inconsistent dimensions (want mu in R^{m}, sigma {m}x{n_w})"
                    )));
                }
                if mu.iter().any(|x| !x.is_finite()) || sigma.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Model(format!(
                        "level {li} knot {ki}: non-finite coefficient"
                    )));
                }
            }
        }
        if n_w < m {
            return Err(Error::Model(format!(
                "need at least as many Brownian drivers as assets (got {n_w} < {m})"
            )));
        }
        Ok(Self { times, interp, levels, n_assets: m, n_brownian: n_w })
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_brownian(&self) -> usize {
        self.n_brownian
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.times
    }

    fn locate(&self, t: f64) -> (usize, usize, f64) {
        // Returns (left knot, right knot, linear weight toward the right).
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let idx = self.times.partition_point(|&x| x <= t) - 1;
        match self.interp {
            Interpolation::PiecewiseConstant => (idx, idx, 0.0),
            Interpolation::PiecewiseLinear => {
                let t0 = self.times[idx];
                let t1 = self.times[idx + 1];
                (idx, idx + 1, (t - t0) / (t1 - t0))
            }
        }
    }

    fn level_index(&self, level: usize) -> usize {
        level.min(self.levels.len() - 1)
    }

    /// Drift vector at `(t, level)`; levels beyond the table reuse the last.
    pub fn mu_at(&self, t: f64, level: usize) -> DVector<f64> {
        let lvl = &self.levels[self.level_index(level)];
        let (i, j, w) = self.locate(t);
        if i == j || w == 0.0 {
            lvl.mu[i].clone()
        } else {
            &lvl.mu[i] * (1.0 - w) + &lvl.mu[j] * w
        }
    }

    /// Volatility matrix at `(t, level)`.
    pub fn sigma_at(&self, t: f64, level: usize) -> DMatrix<f64> {
        let lvl = &self.levels[self.level_index(level)];
        let (i, j, w) = self.locate(t);
        if i == j || w == 0.0 {
            lvl.sigma[i].clone()
        } else {
            &lvl.sigma[i] * (1.0 - w) + &lvl.sigma[j] * w
        }
    }
}

// ---------------------------------------------------------------------------
// Market model
// ---------------------------------------------------------------------------

/// Constants derived from the premium loadings:
/// `b = lambda E[Y] eta_r`, `a = lambda E[Y] (eta - eta_r)`,
/// `premium = (1 + eta) lambda E[Y]`. Identity: `premium = a + b + lambda E[Y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub b: f64,
    pub a: f64,
    pub premium: f64,
}

/// Complete problem data for the solver and simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub horizon: f64,
    pub rate: RateCurve,
    pub coefficients: CoefficientTable,
    pub cone: ConvexCone,
    /// Claim arrival intensity `lambda`.
    pub claim_rate: f64,
    /// Insurer safety loading `eta > 0`.
    pub insurer_loading: f64,
    /// Reinsurer safety loading `eta_r >= eta`.
    pub reinsurer_loading: f64,
    pub claims: ClaimDistribution,
    pub mode: CoefficientMode,
    /// Required lower bound on the eigenvalues of `sigma sigma^T`.
    pub ellipticity_floor: f64,
}

impl MarketModel {
    /// Structural construction checks; numeric diagnostics live in
    /// [`MarketModel::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: f64,
        rate: RateCurve,
        coefficients: CoefficientTable,
        cone: ConvexCone,
        claim_rate: f64,
        insurer_loading: f64,
        reinsurer_loading: f64,
        claims: ClaimDistribution,
        mode: CoefficientMode,
        ellipticity_floor: f64,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Model(format!("horizon {horizon} must be positive")));
        }
        rate.check()?;
        cone.check()?;
        if cone.dim() != coefficients.n_assets() {
            return Err(Error::Model(format!(
                "cone dimension {} does not match asset count {}",
                cone.dim(),
                coefficients.n_assets()
            )));
        }
        if !(claim_rate.is_finite() && claim_rate > 0.0) {
            return Err(Error::Model(format!("claim rate {claim_rate} must be positive")));
        }
        if !(insurer_loading.is_finite() && insurer_loading > 0.0) {
            return Err(Error::Model(format!(
                "insurer loading {insurer_loading} must be positive"
            )));
        }
        if !reinsurer_loading.is_finite() || reinsurer_loading < insurer_loading {
            return Err(Error::Model(format!(
                "loading order violated: reinsurer loading {reinsurer_loading} must be >= insurer loading {insurer_loading}"
            )));
        }
        if mode == CoefficientMode::Deterministic && coefficients.n_levels() != 1 {
            return Err(Error::Model(
                "deterministic mode requires a single coefficient level".into(),
            ));
        }
        if !(ellipticity_floor.is_finite() && ellipticity_floor > 0.0) {
            return Err(Error::Model("ellipticity floor must be positive".into()));
        }
        Ok(Self {
            horizon,
            rate,
            coefficients,
            cone,
            claim_rate,
            insurer_loading,
            reinsurer_loading,
            claims,
            mode,
            ellipticity_floor,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.coefficients.n_assets()
    }

    pub fn n_brownian(&self) -> usize {
        self.coefficients.n_brownian()
    }

    pub fn derived(&self) -> DerivedParams {
        let lb = self.claim_rate * self.claims.mean();
        DerivedParams {
            b: lb * self.reinsurer_loading,
            a: lb * (self.insurer_loading - self.reinsurer_loading),
            premium: (1.0 + self.insurer_loading) * lb,
        }
    }

    /// Smallest claim-level count such that the probability of seeing more
    /// claims than levels over the horizon is below `tail_tol`.
    pub fn default_claim_levels(&self, tail_tol: f64) -> usize {
        match self.mode {
            CoefficientMode::Deterministic => 0,
            CoefficientMode::CountModulated => {
                poisson_tail_quantile(self.claim_rate * self.horizon, tail_tol)
            }
        }
    }

    /// Full numeric diagnostics over a sampled `(t, level)` grid.
    pub fn validate(&self) -> ModelDiagnostics {
        let mut violations = Vec::new();
        if self.reinsurer_loading < self.insurer_loading {
            violations.push(format!(
                "loading order violated: eta_r = {} < eta = {}",
                self.reinsurer_loading, self.insurer_loading
            ));
        }
        // Sample times: uniform grid united with the table knots.
        let mut ts: Vec<f64> = (0..=200).map(|i| self.horizon * i as f64 / 200.0).collect();
        ts.extend(self.coefficients.knots().iter().copied().filter(|&t| t <= self.horizon));
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

        let levels = self.coefficients.n_levels();
        let mut min_eig = f64::INFINITY;
        let mut mu_bound: f64 = 0.0;
        let mut sigma_bound: f64 = 0.0;
        let mut rate_bound: f64 = 0.0;
        let mut ellipticity_reported = false;
        for &t in &ts {
            rate_bound = rate_bound.max(self.rate.value(t).abs());
            for n in 0..levels {
                let mu = self.coefficients.mu_at(t, n);
                let sigma = self.coefficients.sigma_at(t, n);
                mu_bound = mu_bound.max(mu.amax());
                sigma_bound = sigma_bound.max(sigma.amax());
                let gram = &sigma * sigma.transpose();
                let eig = gram.symmetric_eigen().eigenvalues;
                let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
                if lo < min_eig {
                    min_eig = lo;
                }
                if lo < self.ellipticity_floor && !ellipticity_reported {
                    violations.push(format!(
                        "ellipticity violated at t = {t}, level {n} (min eigenvalue {lo:.3e} < {:.3e})",
                        self.ellipticity_floor
                    ));
                    ellipticity_reported = true;
                }
            }
        }
        let (mean, second) = claim_moments(&self.claims);
        ModelDiagnostics {
            pass: violations.is_empty(),
            violations,
            ellipticity_estimate: min_eig,
            mu_bound,
            sigma_bound,
            rate_bound,
            claim_support: (0.0, self.claims.max_size()),
            claim_mean: mean,
            claim_second_moment: second,
        }
    }

    /// Validation as a hard gate.
    pub fn ensure_valid(&self) -> Result<()> {
        let diag = self.validate();
        if diag.pass {
            Ok(())
        } else {
            Err(Error::Model(diag.violations.join("; ")))
        }
    }
}

/// Free-function forms matching the operation names used in the docs.
pub fn derived_params(model: &MarketModel) -> DerivedParams {
    model.derived()
}

pub fn validate_model(model: &MarketModel) -> ModelDiagnostics {
    model.validate()
}

/// Itemized validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDiagnostics {
    pub pass: bool,
    pub violations: Vec<String>,
    /// Smallest sampled eigenvalue of `sigma sigma^T`.
    pub ellipticity_estimate: f64,
    pub mu_bound: f64,
    pub sigma_bound: f64,
    pub rate_bound: f64,
    pub claim_support: (f64, f64),
    pub claim_mean: f64,
    pub claim_second_moment: f64,
}

/// Smallest `n` with `P(Poisson(mean) > n) < tail_tol`.
fn poisson_tail_quantile(mean: f64, tail_tol: f64) -> usize {
    assert!(mean > 0.0 && tail_tol > 0.0);
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    let mut n = 0usize;
    while 1.0 - cdf >= tail_tol && n < 4000 {
        n += 1;
        pmf *= mean / n as f64;
        cdf += pmf;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_claims() -> ClaimDistribution {
        ClaimDistribution::point_mass(1.0).unwrap()
    }

    fn basic_model(eta: f64, eta_r: f64) -> Result<MarketModel> {
        MarketModel::new(
            1.0,
            RateCurve::Constant(0.05),
            CoefficientTable::constant(
                DVector::from_vec(vec![0.2]),
                DMatrix::from_row_slice(1, 1, &[0.3]),
            )
            .unwrap(),
            ConvexCone::NonnegativeOrthant { dim: 1 },
            1.0,
            eta,
            eta_r,
            unit_claims(),
            CoefficientMode::Deterministic,
            1e-8,
        )
    }

    #[test]
    fn gauss_legendre_matches_reference_five_point() {
        // Classical 5-point nodes/weights.
        let gl = gauss_legendre(5);
        let nodes: Vec<f64> = gl.iter().map(|x| x.0).collect();
        let weights: Vec<f64> = gl.iter().map(|x| x.1).collect();
        let ref_nodes = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let ref_weights = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        for i in 0..5 {
            assert_relative_eq!(nodes[i], ref_nodes[i], epsilon = 1e-12);
            assert_relative_eq!(weights[i], ref_weights[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn point_mass_moments() {
        let c = unit_claims();
        assert_eq!(claim_moments(&c), (1.0, 1.0));
        assert_eq!(c.max_size(), 1.0);
    }

    #[test]
    fn two_atom_moments() {
        let c = ClaimDistribution::from_atoms(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap();
        let (m1, m2) = claim_moments(&c);
        assert_relative_eq!(m1, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m2, 1.25, epsilon = 1e-15);
    }

    #[test]
    fn uniform_moments_match_quadrature_refinement_oracle() {
        // Oracle: refine the node count until two successive rules agree to
        // 1e-8, independently of the default construction.
        let exact = |n: usize| {
            let c = ClaimDistribution::from_density(|_| 1.0, 0.0, 2.0, n).unwrap();
            claim_moments(&c)
        };
        let (m1_32, m2_32) = exact(32);
        let (m1_64, m2_64) = exact(64);
        assert!((m1_64 - m1_32).abs() < 1e-8 && (m2_64 - m2_32).abs() < 1e-8);
        let c = ClaimDistribution::uniform(0.0, 2.0).unwrap();
        let (m1, m2) = claim_moments(&c);
        assert_relative_eq!(m1, 1.0, epsilon = 1e-6);
        assert_relative_eq!(m2, 4.0 / 3.0, epsilon = 1e-6);
        // Jensen: E[Y^2] >= (E[Y])^2.
        assert!(m2 >= m1 * m1);
    }

    #[test]
    fn degenerate_claims_rejected() {
        assert!(ClaimDistribution::point_mass(0.0).is_err());
        assert!(ClaimDistribution::from_atoms(vec![(1.0, 0.6), (2.0, 0.6)]).is_err());
        assert!(ClaimDistribution::from_atoms(vec![(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn claim_sampling_inverse_cdf() {
        let c = ClaimDistribution::from_atoms(vec![(0.5, 0.25), (1.5, 0.75)]).unwrap();
        assert_eq!(c.sample(0.0), 0.5);
        assert_eq!(c.sample(0.2499), 0.5);
        assert_eq!(c.sample(0.2501), 1.5);
        assert_eq!(c.sample(0.999999), 1.5);
    }

    #[test]
    fn derived_params_example() {
        // lambda = 2, E[Y] = 0.5, eta = eta_r = 0.1.
        let model = MarketModel::new(
            1.0,
            RateCurve::Constant(0.0),
            CoefficientTable::constant(
                DVector::from_vec(vec![0.1]),
                DMatrix::from_row_slice(1, 1, &[0.2]),
            )
            .unwrap(),
            ConvexCone::Full { dim: 1 },
            2.0,
            0.1,
            0.1,
            ClaimDistribution::point_mass(0.5).unwrap(),
            CoefficientMode::Deterministic,
            1e-8,
        )
        .unwrap();
        let d = model.derived();
        assert_relative_eq!(d.b, 0.1, epsilon = 1e-15);
        assert_relative_eq!(d.a, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.premium, 1.1, epsilon = 1e-15);
    }

    #[test]
    fn premium_identity_holds_for_random_loadings() {
        // premium = a + b + lambda E[Y] for any admissible loadings.
        let mut rng = 0x9E3779B97F4A7C15u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let lambda = 0.1 + 5.0 * next();
            let eta = 0.01 + next();
            let eta_r = eta + next();
            let mean = 0.1 + 2.0 * next();
            let lb = lambda * mean;
            let b = lb * eta_r;
            let a = lb * (eta - eta_r);
            let p = (1.0 + eta) * lb;
            assert_relative_eq!(p, a + b + lb, epsilon = 1e-12, max_relative = 1e-12);
            assert!(b > 0.0 && a <= 0.0);
        }
    }

    #[test]
    fn loading_order_rejected() {
        let err = basic_model(0.2, 0.1).unwrap_err();
        match err {
            Error::Model(msg) => assert!(msg.contains("loading order"), "{msg}"),
            other => panic!("expected model error, got {other:?}"),
        }
    }

    #[test]
    fn validate_reports_ellipticity_estimate() {
        let model = basic_model(0.2, 0.2).unwrap();
        let diag = model.validate();
        assert!(diag.pass, "{:?}", diag.violations);
        assert_relative_eq!(diag.ellipticity_estimate, 0.09, epsilon = 1e-12);
        assert_eq!(diag.claim_support, (0.0, 1.0));
    }

    #[test]
    fn validate_catches_vanishing_volatility() {
        // sigma hits zero at t = 0.5.
        let table = CoefficientTable::time_varying(
            vec![0.0, 0.5],
            Interpolation::PiecewiseConstant,
            vec![LevelTable {
                mu: vec![DVector::from_vec(vec![0.2]), DVector::from_vec(vec![0.2])],
                sigma: vec![
                    DMatrix::from_row_slice(1, 1, &[0.3]),
                    DMatrix::from_row_slice(1, 1, &[0.0]),
                ],
            }],
        )
        .unwrap();
        let model = MarketModel::new(
            1.0,
            RateCurve::Constant(0.05),
            table,
            ConvexCone::Full { dim: 1 },
            1.0,
            0.2,
            0.2,
            unit_claims(),
            CoefficientMode::Deterministic,
            1e-8,
        )
        .unwrap();
        let diag = model.validate();
        assert!(!diag.pass);
        assert!(
            diag.violations.iter().any(|v| v.contains("ellipticity") && v.contains("0.5")),
            "{:?}",
            diag.violations
        );
        assert!(model.ensure_valid().is_err());
    }

    #[test]
    fn rate_curve_integrals_exact() {
        let r = RateCurve::PiecewiseConstant {
            times: vec![0.0, 0.5],
            values: vec![0.05, 0.10],
        };
        assert_relative_eq!(r.integral(0.0, 1.0), 0.075, epsilon = 1e-15);
        assert_relative_eq!(r.integral(0.25, 0.75), 0.0125 + 0.025, epsilon = 1e-15);
        assert_relative_eq!(r.abs_integral(0.0, 1.0), 0.075, epsilon = 1e-15);
        // B(T) = int exp(-R(s)) ds against a fine Riemann oracle.
        let b = r.discount_weight_integral(1.0);
        let n = 2_000_000;
        let dt = 1.0 / n as f64;
        let mut acc = 0.0;
        let mut riemann = 0.0;
        for i in 0..n {
            let t = i as f64 * dt;
            let rv = r.value(t);
            riemann += (-acc - 0.5 * rv * dt).exp() * dt; // midpoint in the exponent
            acc += rv * dt;
        }
        assert_relative_eq!(b, riemann, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn constant_rate_discount_weight() {
        let r = RateCurve::Constant(0.05);
        let b = r.discount_weight_integral(1.0);
        assert_relative_eq!(b, (1.0 - (-0.05f64).exp()) / 0.05, epsilon = 1e-14);
        let r0 = RateCurve::Constant(0.0);
        assert_relative_eq!(r0.discount_weight_integral(2.0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn coefficient_interpolation() {
        let table = CoefficientTable::time_varying(
            vec![0.0, 1.0],
            Interpolation::PiecewiseLinear,
            vec![LevelTable {
                mu: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])],
                sigma: vec![
                    DMatrix::from_row_slice(1, 1, &[0.2]),
                    DMatrix::from_row_slice(1, 1, &[0.4]),
                ],
            }],
        )
        .unwrap();
        assert_relative_eq!(table.mu_at(0.5, 0)[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(table.sigma_at(0.25, 0)[(0, 0)], 0.25, epsilon = 1e-15);
        // Beyond the last knot: clamp.
        assert_relative_eq!(table.mu_at(2.0, 0)[0], 1.0, epsilon = 1e-15);
        // Levels beyond the table reuse the last level.
        assert_relative_eq!(table.mu_at(0.5, 7)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cone_projection_and_membership() {
        let orthant = ConvexCone::NonnegativeOrthant { dim: 2 };
        let v = DVector::from_vec(vec![1.0, -2.0]);
        assert!(!orthant.contains(&v, 1e-12));
        let p = orthant.project(&v);
        assert_eq!(p, DVector::from_vec(vec![1.0, 0.0]));
        assert!(orthant.contains(&p, 0.0));

        let half = ConvexCone::HalfLines {
            signs: vec![AxisRange::Nonpos, AxisRange::Free],
        };
        let q = half.project(&DVector::from_vec(vec![3.0, -4.0]));
        assert_eq!(q, DVector::from_vec(vec![0.0, -4.0]));

        // Generated cone with ray columns (1,0) and (1,1): the wedge
        // 0 <= y <= x.
        let gen = ConvexCone::Generated {
            rays: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        };
        let inside = DVector::from_vec(vec![2.0, 1.0]);
        assert!(gen.contains(&inside, 1e-9));
        let outside = DVector::from_vec(vec![-1.0, 0.5]);
        assert!(!gen.contains(&outside, 1e-6));
        // (-1, 0.5) sees every ray at an obtuse angle, so it projects to 0.
        let proj = gen.project(&outside);
        assert_relative_eq!(proj[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(proj[1], 0.0, epsilon = 1e-10);
        // (0.5, 2) projects onto the upper boundary ray (1,1).
        let proj = gen.project(&DVector::from_vec(vec![0.5, 2.0]));
        assert_relative_eq!(proj[0], 1.25, epsilon = 1e-10);
        assert_relative_eq!(proj[1], 1.25, epsilon = 1e-10);
    }

    #[test]
    fn cone_closed_under_nonnegative_scaling() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let cones = [
            ConvexCone::Full { dim: 3 },
            ConvexCone::NonnegativeOrthant { dim: 3 },
            ConvexCone::HalfLines {
                signs: vec![AxisRange::Nonneg, AxisRange::Free, AxisRange::Nonpos],
            },
            ConvexCone::Generated {
                rays: DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 1.0]),
            },
        ];
        for cone in &cones {
            // 0 is always a member.
            assert!(cone.contains(&DVector::zeros(3), 1e-12));
            for _ in 0..50 {
                let v = cone.random_element(&mut rng, 2.0);
                assert!(cone.contains(&v, 1e-8));
                let alpha: f64 = rand::Rng::random::<f64>(&mut rng) * 3.0;
                assert!(cone.contains(&(&v * alpha), 1e-8));
            }
        }
    }

    #[test]
    fn default_claim_levels_cover_poisson_tail() {
        let model = basic_model(0.2, 0.2).unwrap();
        assert_eq!(model.default_claim_levels(1e-8), 0); // deterministic mode
        let n = poisson_tail_quantile(1.0, 1e-8);
        // P(N > n) < 1e-8 and P(N > n-1) >= 1e-8 for lambda T = 1.
        let tail = |k: usize| {
            let mut pmf = (-1.0f64).exp();
            let mut cdf = pmf;
            for i in 1..=k {
                pmf /= i as f64;
                cdf += pmf;
            }
            1.0 - cdf
        };
        assert!(tail(n) < 1e-8);
        assert!(tail(n - 1) >= 1e-8);
    }
}
