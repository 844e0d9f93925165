//! Backward solver for the pair of partially coupled Riccati levels.
//!
//! In the count-modulated regime the two stochastic coefficient processes
//! `P1(t) = p1(t, N_t)` and `P2(t) = p2(t, N_t)` are carried as vectors over
//! the claim-count level `n`, with jump increments
//! `Gamma_i(t, n) = p_i(t, n+1) - p_i(t, n)` and the closure
//! `Gamma_i(., n_max) = 0` (index clamping). Each level obeys, backward from
//! the terminal condition `p_i(T, .) = 1`,
//!
//! ```text
//! d/dt p_i = -[ 2 r p_i + F_i*(t, n) + G_i*(t, n) ] - lambda Gamma_i ,
//! ```
//!
//! where `F_i*` and `G_i*` are the cone/retention minimizations from
//! [`crate::optimizers`]. Positivity is built in by integrating
//! `U_i = ln p_i` forward in time-to-go `tau = T - t`:
//!
//! ```text
//! d/dtau U_i = 2 r + F_i*/p_i + G_i*/p_i + lambda (exp(dU_i) - 1),
//! ```
//!
//! with `dU_i = U_i(n+1) - U_i(n)`; `F_i*/p_i` is evaluated at unit weight
//! (the objective is linear in `p_i` here because the running target slope
//! enters with weight zero). The below branch is integrated first on a
//! doubled (half-step) grid so that the above branch — whose retention term
//! needs `p2` — can read exact values at all of its Runge-Kutta stage times.
//!
//! Every solve ends with a bounds certificate
//! `exp(-c1 T) <= p_i <= exp(2 int |r|)` checked at all stored nodes, and the
//! strict feasibility margin `p2(0,0) exp(-2 int r) < 1` required by the
//! frontier layer.

use crate::error::{Error, Result};
use crate::model::{CoefficientMode, MarketModel};
use crate::optimizers::{f_star, g1_star, g2_star, Branch, ClaimContext, JumpShift};
use nalgebra::DVector;
use std::io::Write;

/// Tolerance on the bounds certificate and the feasibility margin.
const CERT_TOL: f64 = 1e-9;

/// Time discretization (and claim-level count) of a backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SreGrid {
    /// Coarse backward steps for the above branch; the below branch is
    /// integrated on twice as many.
    pub steps: usize,
    /// Highest carried claim-count level; `None` picks the smallest level
    /// count whose Poisson tail over the horizon is below `1e-8`.
    pub n_max: Option<usize>,
}

impl SreGrid {
    pub fn new(steps: usize) -> Self {
        Self { steps, n_max: None }
    }

    pub fn with_levels(steps: usize, n_max: usize) -> Self {
        Self { steps, n_max: Some(n_max) }
    }

    fn check(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Solver(format!(
                "time grid needs at least 2 steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Highest claim-count level carried for `model` (0 in the deterministic
    /// regime, where there is nothing to modulate).
    pub fn levels_for(&self, model: &MarketModel) -> usize {
        match model.mode {
            CoefficientMode::Deterministic => 0,
            CoefficientMode::CountModulated => {
                self.n_max.unwrap_or_else(|| model.default_claim_levels(1e-8))
            }
        }
    }
}

impl Default for SreGrid {
    fn default() -> Self {
        Self::new(2000)
    }
}

/// A-priori envelope certified after each solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SreBounds {
    /// `exp(-c1 T)`.
    pub lower: f64,
    /// `exp(2 int_0^T |r|)`.
    pub upper: f64,
    /// `max(0, sup_t [lambda + mu' (sigma sigma')^{-1} mu - 2 r])`.
    pub c1: f64,
}

/// Solved coefficients and optimal controls at one `(t, level)` node.
#[derive(Debug, Clone, PartialEq)]
pub struct SreNode {
    pub t: f64,
    pub level: usize,
    pub p1: f64,
    pub p2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Above-branch investment direction (per unit of wealth gap).
    pub v1_hat: DVector<f64>,
    /// Below-branch investment direction.
    pub v2_hat: DVector<f64>,
    /// Above-branch retention slope.
    pub u1_hat: f64,
    /// Below-branch retention slope.
    pub u2_hat: f64,
}

/// Output of a backward solve: log-coefficients on the coarse time grid for
/// every carried level, plus the certified envelope.
#[derive(Debug, Clone)]
pub struct SreSolution {
    pub model: MarketModel,
    /// Ascending coarse grid `0 = t_0 < ... < t_K = T`.
    pub times: Vec<f64>,
    pub n_max: usize,
    /// Control truncation radius, when solving the truncated system.
    pub truncation: Option<f64>,
    pub bounds: SreBounds,
    log_p1: Vec<Vec<f64>>,
    log_p2: Vec<Vec<f64>>,
}

/// Solve the untruncated system.
pub fn solve(model: &MarketModel, grid: &SreGrid) -> Result<SreSolution> {
    solve_impl(model, grid, None)
}

/// Solve the truncated system: investment confined to `|v| <= radius` and
/// retention slope to `[0, radius]`. As `radius` grows the solution increases
/// pointwise down to the untruncated one.
pub fn solve_truncated(model: &MarketModel, grid: &SreGrid, radius: f64) -> Result<SreSolution> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Solver(format!("truncation radius {radius} must be positive")));
    }
    solve_impl(model, grid, Some(radius))
}

fn solve_impl(model: &MarketModel, grid: &SreGrid, trunc: Option<f64>) -> Result<SreSolution> {
    model.ensure_valid()?;
    grid.check()?;
    let n_max = grid.levels_for(model);
    let steps = grid.steps;
    let horizon = model.horizon;
    let h = horizon / steps as f64;
    let zero_l = DVector::zeros(model.n_brownian());
    let derived = model.derived();
    let ctx = ClaimContext::new(&model.claims, model.claim_rate, derived.b);

    // Below branch on the half-step grid, indexed by tau = T - t.
    let rhs_below = |t: f64, u: &[f64], du: &mut [f64]| -> Result<()> {
        let r = model.rate.value(t);
        for n in 0..=n_max {
            let np = (n + 1).min(n_max);
            let p = u[n].exp();
            let gamma = u[np].exp() - p;
            let mu = model.coefficients.mu_at(t, n);
            let sigma = model.coefficients.sigma_at(t, n);
            let f_unit =
                f_star(Branch::Below, 1.0, &zero_l, &mu, &sigma, &model.cone, trunc)?.value;
            let (g, _) = g2_star(p, &JumpShift::Constant(gamma), &ctx, trunc)?;
            du[n] = 2.0 * r + f_unit + g / p + model.claim_rate * (u[np] - u[n]).exp_m1();
        }
        Ok(())
    };

    let h2 = 0.5 * h;
    let mut u2_fine: Vec<Vec<f64>> = Vec::with_capacity(2 * steps + 1);
    let mut u = vec![0.0; n_max + 1];
    u2_fine.push(u.clone());
    for j in 0..2 * steps {
        let t0 = horizon - j as f64 * h2;
        let ts = [t0, t0 - 0.5 * h2, t0 - h2];
        rk4_step(&mut u, h2, ts, |_, t, uu, du| rhs_below(t, uu, du))?;
        u2_fine.push(u.clone());
    }

    // Above branch on the coarse grid; Runge-Kutta stages at tau_k, tau_k +
    // h/2 and tau_k + h read the stored below-branch values exactly.
    let mut u1_by_tau: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut u = vec![0.0; n_max + 1];
    u1_by_tau.push(u.clone());
    for k in 0..steps {
        let t0 = horizon - k as f64 * h;
        let ts = [t0, t0 - 0.5 * h, t0 - h];
        let stage_fine = [2 * k, 2 * k + 1, 2 * k + 1, 2 * k + 2];
        rk4_step(&mut u, h, ts, |stage, t, uu, du| {
            let u2 = &u2_fine[stage_fine[stage]];
            let r = model.rate.value(t);
            for n in 0..=n_max {
                let np = (n + 1).min(n_max);
                let p1 = uu[n].exp();
                let gamma1 = uu[np].exp() - p1;
                let p2 = u2[n].exp();
                let gamma2 = u2[np].exp() - p2;
                let mu = model.coefficients.mu_at(t, n);
                let sigma = model.coefficients.sigma_at(t, n);
                let f_unit =
                    f_star(Branch::Above, 1.0, &zero_l, &mu, &sigma, &model.cone, trunc)?.value;
                let (g, _) = g1_star(
                    p1,
                    &JumpShift::Constant(gamma1),
                    p2,
                    &JumpShift::Constant(gamma2),
                    &ctx,
                    trunc,
                )?;
                du[n] = 2.0 * r + f_unit + g / p1 + model.claim_rate * (uu[np] - uu[n]).exp_m1();
            }
            Ok(())
        })?;
        u1_by_tau.push(u.clone());
    }

    // Re-index from time-to-go to calendar time.
    let times: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
    let log_p1: Vec<Vec<f64>> = (0..=steps).map(|i| u1_by_tau[steps - i].clone()).collect();
    let log_p2: Vec<Vec<f64>> = (0..=steps).map(|i| u2_fine[2 * (steps - i)].clone()).collect();

    let bounds = certified_bounds(model)?;
    let solution = SreSolution {
        model: model.clone(),
        times,
        n_max,
        truncation: trunc,
        bounds,
        log_p1,
        log_p2,
    };
    solution.check_certificate()?;
    Ok(solution)
}

/// One classical Runge-Kutta step of length `h` on the level vector `u`;
/// `ts = [t(stage 1), t(stages 2-3), t(stage 4)]` are the calendar times the
/// right-hand side sees, and the stage index lets the caller wire in stage-
/// aligned external data.
fn rk4_step<F>(u: &mut [f64], h: f64, ts: [f64; 3], mut rhs: F) -> Result<()>
where
    F: FnMut(usize, f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = u.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(0, ts[0], u, &mut k1)?;
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k1[i];
    }
    rhs(1, ts[1], &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k2[i];
    }
    rhs(2, ts[1], &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = u[i] + h * k3[i];
    }
    rhs(3, ts[2], &tmp, &mut k4)?;
    for i in 0..n {
        u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

fn certified_bounds(model: &MarketModel) -> Result<SreBounds> {
    // Sample the same (t, level) grid as the model diagnostics.
    let mut ts: Vec<f64> = (0..=200).map(|i| model.horizon * i as f64 / 200.0).collect();
    ts.extend(model.coefficients.knots().iter().copied().filter(|&t| t <= model.horizon));
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut c1 = 0.0_f64;
    for &t in &ts {
        let r = model.rate.value(t);
        for n in 0..model.coefficients.n_levels() {
            let mu = model.coefficients.mu_at(t, n);
            let sigma = model.coefficients.sigma_at(t, n);
            let gram = &sigma * sigma.transpose();
            let w = nalgebra::Cholesky::new(gram)
                .ok_or_else(|| {
                    Error::Solver(format!("sigma sigma^T singular at t = {t}, level {n}"))
                })?
                .solve(&mu);
            c1 = c1.max(model.claim_rate + mu.dot(&w) - 2.0 * r);
        }
    }
    Ok(SreBounds {
        lower: (-c1 * model.horizon).exp(),
        upper: (2.0 * model.rate.abs_integral(0.0, model.horizon)).exp(),
        c1,
    })
}

impl SreSolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.model.horizon
    }

    /// Above-branch coefficient at grid node `ti`, level `n` (clamped).
    pub fn p1(&self, ti: usize, n: usize) -> f64 {
        self.log_p1[ti][n.min(self.n_max)].exp()
    }

    /// Below-branch coefficient at grid node `ti`, level `n` (clamped).
    pub fn p2(&self, ti: usize, n: usize) -> f64 {
        self.log_p2[ti][n.min(self.n_max)].exp()
    }

    /// Jump increment `p1(t, n+1) - p1(t, n)`; zero at the top level.
    pub fn gamma1(&self, ti: usize, n: usize) -> f64 {
        self.p1(ti, n + 1) - self.p1(ti, n)
    }

    pub fn gamma2(&self, ti: usize, n: usize) -> f64 {
        self.p2(ti, n + 1) - self.p2(ti, n)
    }

    fn certificate_violation(&self, what: &str, t: f64, n: usize, v: f64) -> Error {
        Error::Solver(format!(
            "bounds certificate failed: {what}({t:.6}, {n}) = {v:.12e} outside [{:.6e}, {:.6e}]",
            self.bounds.lower, self.bounds.upper
        ))
    }

    fn check_certificate(&self) -> Result<()> {
        for (i, &t) in self.times.iter().enumerate() {
            for n in 0..=self.n_max {
                let p1 = self.p1(i, n);
                if !(self.bounds.lower - CERT_TOL..=self.bounds.upper + CERT_TOL).contains(&p1) {
                    return Err(self.certificate_violation("p1", t, n, p1));
                }
                let p2 = self.p2(i, n);
                if !(self.bounds.lower - CERT_TOL..=self.bounds.upper + CERT_TOL).contains(&p2) {
                    return Err(self.certificate_violation("p2", t, n, p2));
                }
            }
        }
        let margin = self.p2(0, 0) * (-2.0 * self.model.rate.integral(0.0, self.horizon())).exp();
        if margin >= 1.0 - CERT_TOL {
            return Err(Error::Solver(format!(
                "strict feasibility margin failed: p2(0,0) exp(-2 int r) = {margin:.12} is not below 1"
            )));
        }
        Ok(())
    }

    fn node_from(&self, t: f64, n: usize, p1: f64, p2: f64, g1: f64, g2: f64) -> Result<SreNode> {
        let mu = self.model.coefficients.mu_at(t, n);
        let sigma = self.model.coefficients.sigma_at(t, n);
        let zero_l = DVector::zeros(self.model.n_brownian());
        let v1 = f_star(Branch::Above, p1, &zero_l, &mu, &sigma, &self.model.cone, self.truncation)?;
        let v2 = f_star(Branch::Below, p2, &zero_l, &mu, &sigma, &self.model.cone, self.truncation)?;
        let ctx = ClaimContext::new(&self.model.claims, self.model.claim_rate, self.model.derived().b);
        let (_, u1) = g1_star(
            p1,
            &JumpShift::Constant(g1),
            p2,
            &JumpShift::Constant(g2),
            &ctx,
            self.truncation,
        )?;
        let (_, u2) = g2_star(p2, &JumpShift::Constant(g2), &ctx, self.truncation)?;
        Ok(SreNode {
            t,
            level: n.min(self.n_max),
            p1,
            p2,
            gamma1: g1,
            gamma2: g2,
            v1_hat: v1.minimizer,
            v2_hat: v2.minimizer,
            u1_hat: u1,
            u2_hat: u2,
        })
    }

    /// Coefficients and recomputed optimal controls at grid node `ti`.
    pub fn node(&self, ti: usize, n: usize) -> Result<SreNode> {
        let n = n.min(self.n_max);
        self.node_from(
            self.times[ti],
            n,
            self.p1(ti, n),
            self.p2(ti, n),
            self.gamma1(ti, n),
            self.gamma2(ti, n),
        )
    }

    /// Coefficients at an arbitrary `t in [0, T]` (log-linear interpolation
    /// between grid nodes, exact on nodes), with optimal controls recomputed
    /// at the interpolated values. Levels above `n_max` clamp.
    pub fn at(&self, t: f64, n: usize) -> Result<SreNode> {
        let horizon = self.horizon();
        let tol = 1e-9 * (1.0 + horizon);
        if !t.is_finite() || t < -tol || t > horizon + tol {
            return Err(Error::Solver(format!(
                "query time {t} outside the solved horizon [0, {horizon}]"
            )));
        }
        let t = t.clamp(0.0, horizon);
        let steps = self.steps();
        let s = t / horizon * steps as f64;
        let i = (s.floor() as usize).min(steps - 1);
        let w = (s - i as f64).clamp(0.0, 1.0);
        let n = n.min(self.n_max);
        let np = (n + 1).min(self.n_max);
        let lerp = |log: &Vec<Vec<f64>>, lvl: usize| -> f64 {
            ((1.0 - w) * log[i][lvl] + w * log[i + 1][lvl]).exp()
        };
        let p1 = lerp(&self.log_p1, n);
        let p2 = lerp(&self.log_p2, n);
        let g1 = lerp(&self.log_p1, np) - p1;
        let g2 = lerp(&self.log_p2, np) - p2;
        // Top-level closure: the jump increment vanishes.
        let (g1, g2) = if n == self.n_max { (0.0, 0.0) } else { (g1, g2) };
        self.node_from(t, n, p1, p2, g1, g2)
    }

    /// Write all grid nodes (time-major, then level) as CSV, including the
    /// recomputed optimal controls.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let m = self.model.n_assets();
        let mut header = String::from("t,level,p1,p2,gamma1,gamma2,u1_hat,u2_hat");
        for k in 1..=m {
            header.push_str(&format!(",v1_hat_{k}"));
        }
        for k in 1..=m {
            header.push_str(&format!(",v2_hat_{k}"));
        }
        writeln!(out, "{header}")?;
        for ti in 0..self.times.len() {
            for n in 0..=self.n_max {
                let node = self.node(ti, n)?;
                let mut row = format!(
                    "{},{},{},{},{},{},{},{}",
                    node.t, n, node.p1, node.p2, node.gamma1, node.gamma2, node.u1_hat, node.u2_hat
                );
                for k in 0..m {
                    row.push_str(&format!(",{}", node.v1_hat[k]));
                }
                for k in 0..m {
                    row.push_str(&format!(",{}", node.v2_hat[k]));
                }
                writeln!(out, "{row}")?;
            }
        }
        Ok(())
    }
}
