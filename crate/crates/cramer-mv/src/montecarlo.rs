//! Monte Carlo simulation of the controlled surplus and statistical
//! validation of the frontier.
//!
//! Two schemes integrate the same jump-diffusion:
//!
//! * **Euler** — an integrating-factor Euler-Maruyama step on the discounted
//!   wealth `exp(-R(t)) X_t`, which makes the riskless part exact (a zero
//!   strategy reproduces `x exp(R(T))` bitwise). Works for any strategy.
//! * **Explicit product** — uses the fact that under linear gap feedback the
//!   gap `X_t - h(t)` is piecewise geometric: between claims the log-gap gets
//!   a drifted Gaussian increment, and each claim multiplies the gap by
//!   `1 - u Y` (above the target, which may flip the sign) or `1 + u Y`
//!   (below, which never does). Sign changes can therefore only happen at
//!   claims; the scheme preserves the branch invariant exactly and is exact
//!   in law when coefficients are time-constant. Feedback strategies only.
//!
//! Draw order per path is claim skeleton first (alternating exponential
//! inter-arrival and claim size), then one standard normal per Brownian
//! dimension per step. Both schemes consume identical streams, so a path can
//! be compared across schemes at the same seed. Streams are keyed by
//! `(seed, path index)`, making results independent of thread scheduling and
//! stable under increases of the path count.

use crate::error::{Error, Result};
use crate::model::MarketModel;
use crate::policy::{relaxed_value, frontier_variance, FeedbackPolicy};
use crate::sre::SreSolution;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    ExplicitProduct,
}

/// Simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Upper bound on the time step; claim times are always grid points.
    pub dt_max: f64,
    pub scheme: Scheme,
    /// Keep per-step wealth and retention samples on each record.
    pub record_paths: bool,
}

impl Default for SimConfig {
    /// 4000 paths, seed 42, step cap 1/64, explicit product scheme.
    fn default() -> Self {
        SimConfig {
            n_paths: 4000,
            seed: 42,
            dt_max: 1.0 / 64.0,
            scheme: Scheme::ExplicitProduct,
            record_paths: false,
        }
    }
}

impl SimConfig {
    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("need at least one path".into()));
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(Error::Config(format!("dt_max {} must be positive", self.dt_max)));
        }
        Ok(())
    }
}

/// What to do with the surplus.
///
/// One value per simulation run (not per path), so the size spread between
/// variants is irrelevant.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Strategy {
    /// Full reinsurance, no investment.
    Zero,
    /// Constant investment vector and retention level.
    Fixed { invest: DVector<f64>, retention: f64 },
    /// Linear gap feedback from a solved policy; the scales multiply the
    /// optimal slopes (1, 1 = optimal) for suboptimality probes.
    Feedback { policy: FeedbackPolicy, invest_scale: f64, retention_scale: f64 },
}

impl Strategy {
    pub fn feedback(policy: FeedbackPolicy) -> Self {
        Strategy::Feedback { policy, invest_scale: 1.0, retention_scale: 1.0 }
    }
}

/// One simulated path.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub terminal_wealth: f64,
    pub claim_times: Vec<f64>,
    pub claim_sizes: Vec<f64>,
    /// `(t, X_t)` at every grid point; empty unless `record_paths`.
    pub wealth_samples: Vec<(f64, f64)>,
    /// `(t, q_t)` retention at every step start; empty unless `record_paths`.
    pub retention_samples: Vec<(f64, f64)>,
    /// Total time the retention exceeded one (acquiring new business rather
    /// than ceding).
    pub time_retention_above_one: f64,
    /// Largest violation of the branch-sign invariant seen by the explicit
    /// scheme (exactly zero when the scheme is correct; 0 under Euler).
    pub max_gap: f64,
}

/// Deterministic per-path generator: 32-byte key holding the seed, the path
/// index, and a domain tag, so adding paths never perturbs existing ones.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_index.to_le_bytes());
    key[16] = 0x43;
    ChaCha12Rng::from_seed(key)
}

fn draw_claim_skeleton(model: &MarketModel, rng: &mut ChaCha12Rng) -> (Vec<f64>, Vec<f64>) {
    let exp = Exp::new(model.claim_rate).expect("positive claim rate");
    let mut times = Vec::new();
    let mut sizes = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= model.horizon {
            break;
        }
        times.push(t);
        sizes.push(model.claims.sample(rng.random::<f64>()));
    }
    (times, sizes)
}

/// Uniform base grid plus the claim times, ascending and de-duplicated.
fn step_grid(horizon: f64, dt_max: f64, claim_times: &[f64]) -> Vec<f64> {
    let n = (horizon / dt_max).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    grid.extend_from_slice(claim_times);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

struct PathOutcome {
    terminal_wealth: f64,
    wealth_samples: Vec<(f64, f64)>,
    retention_samples: Vec<(f64, f64)>,
    time_retention_above_one: f64,
    max_gap: f64,
}

#[allow(clippy::too_many_arguments)] // private per-path worker; args are the full step context
fn euler_path(
    model: &MarketModel,
    strategy: &Strategy,
    initial_wealth: f64,
    grid: &[f64],
    claim_times: &[f64],
    claim_sizes: &[f64],
    rng: &mut ChaCha12Rng,
    record: bool,
) -> Result<PathOutcome> {
    let derived = model.derived();
    // Per unit of retention the surplus earns b + lambda E[Y] before claims.
    let retained_flow = derived.b + model.claim_rate * model.claims.mean();
    let n_w = model.n_brownian();
    let horizon = model.horizon;
    let mut z = initial_wealth; // discounted wealth exp(-R(t)) X_t
    let mut claims_seen = 0usize;
    let mut q_time = 0.0;
    let mut wealth_samples = Vec::new();
    let mut retention_samples = Vec::new();
    if record {
        wealth_samples.push((0.0, initial_wealth));
    }
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let disc0 = (-model.rate.integral(0.0, t0)).exp();
        let x = z / disc0;
        let (pi, q) = strategy_controls(strategy, model, t0, claims_seen, x)?;
        if q < 0.0 {
            return Err(Error::Config(format!("retention {q} went negative at t = {t0}")));
        }
        if q > 1.0 {
            q_time += dt;
        }
        if record {
            retention_samples.push((t0, q));
        }
        let mu = model.coefficients.mu_at(t0, claims_seen);
        let sigma = model.coefficients.sigma_at(t0, claims_seen);
        let loading = sigma.transpose() * &pi;
        let mut noise = 0.0;
        for j in 0..n_w {
            let xi: f64 = rng.sample(StandardNormal);
            noise += loading[j] * xi;
        }
        let drift = pi.dot(&mu) + retained_flow * q + derived.a;
        z += disc0 * (drift * dt + noise * dt.sqrt());
        // Claims scheduled exactly at this grid point settle at the
        // retention held over the step into them.
        while claims_seen < claim_times.len() && claim_times[claims_seen] == t1 {
            let disc1 = (-model.rate.integral(0.0, t1)).exp();
            z -= disc1 * q * claim_sizes[claims_seen];
            claims_seen += 1;
        }
        if record {
            let disc1 = (-model.rate.integral(0.0, t1)).exp();
            wealth_samples.push((t1, z / disc1));
        }
    }
    let terminal = z * model.rate.integral(0.0, horizon).exp();
    Ok(PathOutcome {
        terminal_wealth: terminal,
        wealth_samples,
        retention_samples,
        time_retention_above_one: q_time,
        max_gap: 0.0,
    })
}

fn strategy_controls(
    strategy: &Strategy,
    model: &MarketModel,
    t: f64,
    claims_seen: usize,
    x: f64,
) -> Result<(DVector<f64>, f64)> {
    match strategy {
        Strategy::Zero => Ok((DVector::zeros(model.n_assets()), 0.0)),
        Strategy::Fixed { invest, retention } => Ok((invest.clone(), *retention)),
        Strategy::Feedback { policy, invest_scale, retention_scale } => {
            let (pi, q) = policy.controls(t, claims_seen, x)?;
            Ok((pi * *invest_scale, q * retention_scale))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn explicit_path(
    policy: &FeedbackPolicy,
    invest_scale: f64,
    retention_scale: f64,
    initial_wealth: f64,
    grid: &[f64],
    claim_times: &[f64],
    claim_sizes: &[f64],
    rng: &mut ChaCha12Rng,
    record: bool,
) -> Result<PathOutcome> {
    let model = &policy.sre.model;
    let derived = model.derived();
    let retained_flow = derived.b + model.claim_rate * model.claims.mean();
    let n_w = model.n_brownian();
    let mut above = initial_wealth >= policy.h(0.0);
    let mut magnitude = (initial_wealth - policy.h(0.0)).abs();
    let mut claims_seen = 0usize;
    let mut q_time = 0.0;
    let mut max_gap = 0.0f64;
    let mut wealth_samples = Vec::new();
    let mut retention_samples = Vec::new();
    if record {
        wealth_samples.push((0.0, initial_wealth));
    }
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let node = policy.sre.at(t0, claims_seen)?;
        let (v, u) = if above {
            (&node.v1_hat * invest_scale, node.u1_hat * retention_scale)
        } else {
            (&node.v2_hat * invest_scale, node.u2_hat * retention_scale)
        };
        let q = u * magnitude;
        if q > 1.0 {
            q_time += dt;
        }
        if record {
            retention_samples.push((t0, q));
        }
        let mu = model.coefficients.mu_at(t0, claims_seen);
        let sigma = model.coefficients.sigma_at(t0, claims_seen);
        let loading = sigma.transpose() * &v;
        let mut noise = 0.0;
        for j in 0..n_w {
            let xi: f64 = rng.sample(StandardNormal);
            noise += loading[j] * xi;
        }
        let r = model.rate.value(t0);
        let sign = if above { 1.0 } else { -1.0 };
        let log_drift = r + sign * (v.dot(&mu) + retained_flow * u) - 0.5 * loading.norm_squared();
        magnitude *= (log_drift * dt + sign * noise * dt.sqrt()).exp();
        while claims_seen < claim_times.len() && claim_times[claims_seen] == t1 {
            let y = claim_sizes[claims_seen];
            if above {
                // factor 1 - uY: nonpositive values flip to the below branch
                let factor = 1.0 - u * y;
                if factor >= 0.0 {
                    magnitude *= factor;
                } else {
                    magnitude *= -factor;
                    above = false;
                }
            } else {
                magnitude *= 1.0 + u * y;
            }
            claims_seen += 1;
        }
        // The branch is an explicit state: by construction the signed gap
        // never contradicts it, so any discrepancy is a scheme bug.
        if magnitude < 0.0 {
            max_gap = max_gap.max(-magnitude);
            magnitude = 0.0;
        }
        if record {
            let sign = if above { 1.0 } else { -1.0 };
            wealth_samples.push((t1, policy.h(t1) + sign * magnitude));
        }
    }
    let sign = if above { 1.0 } else { -1.0 };
    let terminal = policy.h(model.horizon) + sign * magnitude;
    Ok(PathOutcome {
        terminal_wealth: terminal,
        wealth_samples,
        retention_samples,
        time_retention_above_one: q_time,
        max_gap,
    })
}

/// Simulate `config.n_paths` independent paths of the controlled surplus.
///
/// The explicit-product scheme requires a feedback strategy; fixed strategies
/// are admissibility-checked against the cone before any path runs.
pub fn simulate_paths(
    model: &MarketModel,
    strategy: &Strategy,
    initial_wealth: f64,
    config: &SimConfig,
) -> Result<Vec<PathRecord>> {
    config.check()?;
    model.ensure_valid()?;
    match strategy {
        Strategy::Fixed { invest, retention } => {
            if !model.cone.contains(invest, 1e-9) {
                return Err(Error::Config(
                    "fixed investment vector lies outside the admissible cone".into(),
                ));
            }
            if !(retention.is_finite() && *retention >= 0.0) {
                return Err(Error::Config(format!(
                    "fixed retention {retention} must be nonnegative"
                )));
            }
        }
        Strategy::Feedback { policy, invest_scale, retention_scale } => {
            if policy.sre.model != *model {
                return Err(Error::Config(
                    "feedback policy was solved for a different model".into(),
                ));
            }
            if !(invest_scale.is_finite() && retention_scale.is_finite())
                || *invest_scale < 0.0
                || *retention_scale < 0.0
            {
                return Err(Error::Config("feedback scales must be nonnegative".into()));
            }
        }
        Strategy::Zero => {}
    }
    if config.scheme == Scheme::ExplicitProduct && !matches!(strategy, Strategy::Feedback { .. }) {
        return Err(Error::Config(
            "the explicit-product scheme needs a feedback strategy; use the Euler scheme".into(),
        ));
    }
    (0..config.n_paths as u64)
        .into_par_iter()
        .map(|path_index| {
            let mut rng = path_rng(config.seed, path_index);
            let (claim_times, claim_sizes) = draw_claim_skeleton(model, &mut rng);
            let grid = step_grid(model.horizon, config.dt_max, &claim_times);
            let outcome = match (config.scheme, strategy) {
                (Scheme::ExplicitProduct, Strategy::Feedback { policy, invest_scale, retention_scale }) => {
                    explicit_path(
                        policy,
                        *invest_scale,
                        *retention_scale,
                        initial_wealth,
                        &grid,
                        &claim_times,
                        &claim_sizes,
                        &mut rng,
                        config.record_paths,
                    )?
                }
                _ => euler_path(
                    model,
                    strategy,
                    initial_wealth,
                    &grid,
                    &claim_times,
                    &claim_sizes,
                    &mut rng,
                    config.record_paths,
                )?,
            };
            Ok(PathRecord {
                terminal_wealth: outcome.terminal_wealth,
                claim_times,
                claim_sizes,
                wealth_samples: outcome.wealth_samples,
                retention_samples: outcome.retention_samples,
                time_retention_above_one: outcome.time_retention_above_one,
                max_gap: outcome.max_gap,
            })
        })
        .collect()
}

/// Numerically stable sum (pairwise splitting).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample statistics of the terminal wealth with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of the sample variance (fourth-moment formula).
    pub se_variance: f64,
}

pub fn estimate_terminal_stats(xs: &[f64]) -> Result<TerminalStats> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 paths for variance estimates, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = pairwise_sum(xs) / nf;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let m2 = pairwise_sum(&sq);
    let quads: Vec<f64> = sq.iter().map(|d| d * d).collect();
    let m4 = pairwise_sum(&quads) / nf;
    let variance = m2 / (nf - 1.0);
    let var_of_var = (m4 - variance * variance * (nf - 3.0) / (nf - 1.0)) / nf;
    Ok(TerminalStats {
        n,
        mean,
        variance,
        se_mean: (variance / nf).sqrt(),
        se_variance: var_of_var.max(0.0).sqrt(),
    })
}

pub fn terminal_stats_of(records: &[PathRecord]) -> Result<TerminalStats> {
    let xs: Vec<f64> = records.iter().map(|r| r.terminal_wealth).collect();
    estimate_terminal_stats(&xs)
}

/// Fraction of path-time (over all paths) spent with retention above one.
pub fn q_exceeds_one_frequency(records: &[PathRecord], horizon: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let total: f64 = records.iter().map(|r| r.time_retention_above_one).sum();
    total / (records.len() as f64 * horizon)
}

/// One pass/fail line of the statistical validation.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationCheck {
    fn new(name: &str, observed: f64, expected: f64, tolerance: f64) -> Self {
        let pass = (observed - expected).abs() <= tolerance;
        Self { name: name.into(), observed, expected, tolerance, pass }
    }
}

/// Full validation report for one frontier point.
#[derive(Debug, Clone, Serialize)]
pub struct FrontierValidation {
    pub target_mean: f64,
    pub initial_wealth: f64,
    pub zeta: f64,
    pub analytic_variance: f64,
    pub scheme: Scheme,
    pub n_paths: usize,
    pub seed: u64,
    pub stats: TerminalStats,
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

/// Simulate the optimal policy for target `z` and test the sample moments
/// against the analytic frontier:
///
/// * mean within `3 se(mean)` of `z`;
/// * variance within `max(5% relative, 3 se(variance))` of the frontier
///   variance;
/// * the realized objective `E[(X_T - zeta)^2] - (zeta - z)^2` within
///   `3 se` of the relaxed value at the optimal multiplier;
/// * under the explicit scheme, the branch-sign invariant holds exactly
///   (tolerance `1e-12`).
///
/// `variance_scale` rescales the analytic variance before comparison — it
/// exists so integration tests can force a rejection; production callers pass
/// `1.0`.
pub fn validate_frontier(
    sre: &SreSolution,
    initial_wealth: f64,
    target_mean: f64,
    config: &SimConfig,
    variance_scale: f64,
) -> Result<FrontierValidation> {
    validate_frontier_records(sre, initial_wealth, target_mean, config, variance_scale)
        .map(|(report, _)| report)
}

/// Same as [`validate_frontier`] but also hands back the simulated paths, so
/// callers can dump them without a second run.
pub fn validate_frontier_records(
    sre: &SreSolution,
    initial_wealth: f64,
    target_mean: f64,
    config: &SimConfig,
    variance_scale: f64,
) -> Result<(FrontierValidation, Vec<PathRecord>)> {
    let policy = FeedbackPolicy::from_target(sre, initial_wealth, target_mean)?;
    let zeta = policy.zeta;
    let analytic_variance = frontier_variance(sre, initial_wealth, target_mean)? * variance_scale;
    let strategy = Strategy::feedback(policy);
    let records = simulate_paths(&sre.model, &strategy, initial_wealth, config)?;
    let stats = terminal_stats_of(&records)?;

    let mut checks = vec![
        ValidationCheck::new("terminal_mean", stats.mean, target_mean, 3.0 * stats.se_mean),
        ValidationCheck::new(
            "terminal_variance",
            stats.variance,
            analytic_variance,
            (0.05 * analytic_variance).max(3.0 * stats.se_variance),
        ),
    ];

    // Realized objective against the relaxed value at the optimal
    // multiplier: E[(X - zeta)^2] = (zeta - z)^2 + J(zeta).
    let objective: Vec<f64> = records
        .iter()
        .map(|r| (r.terminal_wealth - zeta) * (r.terminal_wealth - zeta))
        .collect();
    let obj_stats = estimate_terminal_stats(&objective)?;
    let expected_objective =
        (zeta - target_mean) * (zeta - target_mean) + relaxed_value(sre, initial_wealth, zeta, target_mean);
    checks.push(ValidationCheck::new(
        "relaxed_objective",
        obj_stats.mean,
        expected_objective,
        3.0 * obj_stats.se_mean,
    ));

    if config.scheme == Scheme::ExplicitProduct {
        let worst = records.iter().map(|r| r.max_gap).fold(0.0, f64::max);
        checks.push(ValidationCheck::new("branch_sign_invariant", worst, 0.0, 1e-12));
    }

    let pass = checks.iter().all(|c| c.pass);
    let report = FrontierValidation {
        target_mean,
        initial_wealth,
        zeta,
        analytic_variance,
        scheme: config.scheme,
        n_paths: config.n_paths,
        seed: config.seed,
        stats,
        checks,
        pass,
    };
    Ok((report, records))
}

/// CSV dump: one row per path.
pub fn write_simulation_csv<W: Write>(records: &[PathRecord], out: &mut W) -> Result<()> {
    writeln!(out, "path,terminal_wealth,claims")?;
    for (i, r) in records.iter().enumerate() {
        writeln!(out, "{},{},{}", i, r.terminal_wealth, r.claim_times.len())?;
    }
    Ok(())
}

/// Pretty-printed JSON validation report (deterministic: no timestamps).
pub fn write_validation_json<W: Write>(report: &FrontierValidation, out: &mut W) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, report)?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, RateCurve,
    };
    use crate::sre::{solve, SreGrid};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn constants_model(rate: f64) -> MarketModel {
        MarketModel::new(
            1.0,
            RateCurve::Constant(rate),
            CoefficientTable::constant(vec1(0.2), DMatrix::from_row_slice(1, 1, &[0.3])).unwrap(),
            ConvexCone::NonnegativeOrthant { dim: 1 },
            1.0,
            0.2,
            0.2,
            ClaimDistribution::point_mass(1.0).unwrap(),
            CoefficientMode::Deterministic,
            1e-8,
        )
        .unwrap()
    }

    fn config(n_paths: usize, scheme: Scheme) -> SimConfig {
        SimConfig { n_paths, seed: 7, dt_max: 1.0 / 64.0, scheme, record_paths: false }
    }

    #[test]
    fn zero_strategy_compounds_exactly() {
        // eta = eta_r makes the ceded premium drain a = 0, so the discounted
        // wealth is constant along every path, bitwise.
        let model = constants_model(0.05);
        let records =
            simulate_paths(&model, &Strategy::Zero, 1.0, &config(16, Scheme::Euler)).unwrap();
        let expected = 0.05_f64.exp();
        for r in &records {
            assert_eq!(r.terminal_wealth, expected);
        }
        // And with r = 0 the wealth itself is a constant.
        let flat = constants_model(0.0);
        let records =
            simulate_paths(&flat, &Strategy::Zero, 1.0, &config(16, Scheme::Euler)).unwrap();
        for r in &records {
            assert_eq!(r.terminal_wealth, 1.0);
        }
    }

    #[test]
    fn full_retention_moments_match_the_compound_poisson() {
        // r = 0, pi = 0, q = 1: X_T = x + premium - sum Y_i with
        // premium = 1.2, so E = 1.2 (x = 1) and Var = lambda T E[Y^2] = 1.
        let model = constants_model(0.0);
        let strategy = Strategy::Fixed { invest: vec1(0.0), retention: 1.0 };
        let records =
            simulate_paths(&model, &strategy, 1.0, &config(20_000, Scheme::Euler)).unwrap();
        let stats = terminal_stats_of(&records).unwrap();
        assert!(
            (stats.mean - 1.2).abs() <= 4.0 * stats.se_mean,
            "mean {} +- {}",
            stats.mean,
            stats.se_mean
        );
        assert!(
            (stats.variance - 1.0).abs() <= 4.0 * stats.se_variance,
            "variance {} +- {}",
            stats.variance,
            stats.se_variance
        );
        // Terminal wealth is exactly x + premium - total claims, path by path.
        for r in records.iter().take(50) {
            let total: f64 = r.claim_sizes.iter().sum();
            assert_relative_eq!(r.terminal_wealth, 2.2 - total, epsilon = 1e-12);
        }
    }

    #[test]
    fn paths_are_reproducible_and_stream_stable() {
        let model = constants_model(0.05);
        let sre = solve(&model, &SreGrid::new(50)).unwrap();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let strategy = Strategy::feedback(policy);
        let a = simulate_paths(&model, &strategy, 1.0, &config(100, Scheme::ExplicitProduct))
            .unwrap();
        let b = simulate_paths(&model, &strategy, 1.0, &config(100, Scheme::ExplicitProduct))
            .unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.terminal_wealth, rb.terminal_wealth);
        }
        // Growing the path count leaves existing paths untouched.
        let c = simulate_paths(&model, &strategy, 1.0, &config(150, Scheme::ExplicitProduct))
            .unwrap();
        for (ra, rc) in a.iter().zip(&c) {
            assert_eq!(ra.terminal_wealth, rc.terminal_wealth);
        }
    }

    #[test]
    fn explicit_scheme_never_crosses_the_target_without_a_claim_flip() {
        // Long-only constants: u1 = 0 above the target, so the factor at a
        // claim is 1 and the wealth can never end above the moving target.
        let model = constants_model(0.05);
        let sre = solve(&model, &SreGrid::new(50)).unwrap();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let zeta = policy.zeta;
        let records = simulate_paths(
            &model,
            &Strategy::feedback(policy),
            1.0,
            &config(500, Scheme::ExplicitProduct),
        )
        .unwrap();
        for r in &records {
            assert!(r.terminal_wealth <= zeta + 1e-12);
            assert_eq!(r.max_gap, 0.0);
        }
    }

    #[test]
    fn euler_and_explicit_agree_on_a_shared_skeleton() {
        let model = constants_model(0.05);
        let sre = solve(&model, &SreGrid::new(50)).unwrap();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let strategy = Strategy::feedback(policy);
        let fine = SimConfig {
            n_paths: 50,
            seed: 11,
            dt_max: 1.0 / 512.0,
            scheme: Scheme::Euler,
            record_paths: false,
        };
        let euler = simulate_paths(&model, &strategy, 1.0, &fine).unwrap();
        let explicit = simulate_paths(
            &model,
            &strategy,
            1.0,
            &SimConfig { scheme: Scheme::ExplicitProduct, ..fine },
        )
        .unwrap();
        let mut max_diff = 0.0f64;
        for (e, x) in euler.iter().zip(&explicit) {
            assert_eq!(e.claim_times, x.claim_times, "skeletons must match");
            max_diff = max_diff.max((e.terminal_wealth - x.terminal_wealth).abs());
        }
        assert!(max_diff <= 0.1, "schemes drifted apart: {max_diff}");
        let mean_diff: f64 = euler
            .iter()
            .zip(&explicit)
            .map(|(e, x)| (e.terminal_wealth - x.terminal_wealth).abs())
            .sum::<f64>()
            / euler.len() as f64;
        assert!(mean_diff <= 0.02, "mean drift {mean_diff}");
    }

    #[test]
    fn stats_of_a_frozen_pair() {
        let stats = estimate_terminal_stats(&[0.0, 2.0]).unwrap();
        assert_eq!(stats.mean, 1.0);
        assert_eq!(stats.variance, 2.0);
        assert_eq!(stats.se_mean, 1.0);
        assert_relative_eq!(stats.se_variance, 2.5_f64.sqrt(), epsilon = 1e-15);
        assert!(estimate_terminal_stats(&[1.0]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_exact_rationals() {
        let xs: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn retention_above_one_time_is_tracked() {
        let model = constants_model(0.0);
        let strategy = Strategy::Fixed { invest: vec1(0.0), retention: 1.5 };
        let records = simulate_paths(&model, &strategy, 1.0, &config(8, Scheme::Euler)).unwrap();
        for r in &records {
            assert_relative_eq!(r.time_retention_above_one, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(q_exceeds_one_frequency(&records, 1.0), 1.0, epsilon = 1e-12);
        // The optimal policy here retains at most u2 * gap ~ 0.08 << 1.
        let sre = solve(&model, &SreGrid::new(50)).unwrap();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let records = simulate_paths(
            &model,
            &Strategy::feedback(policy),
            1.0,
            &config(50, Scheme::ExplicitProduct),
        )
        .unwrap();
        assert_eq!(q_exceeds_one_frequency(&records, 1.0), 0.0);
    }

    #[test]
    fn inadmissible_strategies_are_config_errors() {
        let model = constants_model(0.05);
        let short = Strategy::Fixed { invest: vec1(-1.0), retention: 0.5 };
        let err = simulate_paths(&model, &short, 1.0, &config(4, Scheme::Euler)).unwrap_err();
        assert!(err.to_string().contains("cone"));
        let negative_q = Strategy::Fixed { invest: vec1(0.0), retention: -0.2 };
        assert!(simulate_paths(&model, &negative_q, 1.0, &config(4, Scheme::Euler)).is_err());
        let err = simulate_paths(&model, &Strategy::Zero, 1.0, &config(4, Scheme::ExplicitProduct))
            .unwrap_err();
        assert!(err.to_string().contains("feedback"));
    }

    #[test]
    fn validation_report_accepts_the_optimal_policy_and_rejects_a_rigged_one() {
        let model = constants_model(0.05);
        let sre = solve(&model, &SreGrid::new(100)).unwrap();
        let cfg = SimConfig {
            n_paths: 4000,
            seed: 3,
            dt_max: 1.0 / 64.0,
            scheme: Scheme::ExplicitProduct,
            record_paths: false,
        };
        let report = validate_frontier(&sre, 1.0, 1.2, &cfg, 1.0).unwrap();
        assert!(report.pass, "checks: {:?}", report.checks);
        assert_eq!(report.checks.len(), 4);
        // Tripling the claimed variance must fail the variance check.
        let rigged = validate_frontier(&sre, 1.0, 1.2, &cfg, 3.0).unwrap();
        assert!(!rigged.pass);
        assert!(rigged.checks.iter().any(|c| c.name == "terminal_variance" && !c.pass));
        // The report serializes deterministically.
        let mut buf = Vec::new();
        write_validation_json(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"checks\""));
        assert!(text.contains("\"explicit_product\""));
        let mut buf2 = Vec::new();
        write_validation_json(&report, &mut buf2).unwrap();
        assert_eq!(text.as_bytes(), buf2.as_slice());
    }

    #[test]
    fn simulation_csv_has_one_row_per_path() {
        let model = constants_model(0.0);
        let records =
            simulate_paths(&model, &Strategy::Zero, 1.0, &config(5, Scheme::Euler)).unwrap();
        let mut buf = Vec::new();
        write_simulation_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "path,terminal_wealth,claims");
        assert!(lines[1].starts_with("0,1,"));
    }
}
