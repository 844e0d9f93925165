//! Frontier layer: turns solved Riccati coefficients into target-indexed
//! variances and executable feedback strategies.
//!
//! With `R(t) = int_0^t r`, `B(t) = int_0^t exp(-R(s)) ds` (both exact for
//! piecewise-constant rates) and the premium shortfall `a <= 0`, the moving
//! target for multiplier `zeta` is
//!
//! ```text
//! h(t) = zeta exp(R(t) - R(T)) - a exp(R(t)) (B(T) - B(t)),
//! ```
//!
//! the riskless terminal mean is `rm = exp(R(T)) (x + a B(T))`, and with
//! `K = p2(0,0) exp(-2 R(T)) in (0,1)`:
//!
//! ```text
//! zeta_hat(z) = (p2(0,0) exp(-R(T)) (x + a B(T)) - z) / (K - 1),
//! Var(z)      = K / (1 - K) * (z - rm)^2 .
//! ```
//!
//! The dual value of the relaxed problem at multiplier `zeta` is
//! `J(zeta) = p1(0,0) ((x - h(0))^+)^2 + p2(0,0) ((x - h(0))^-)^2 - (zeta - z)^2`,
//! concave in `zeta` and maximized at `zeta_hat`, where it equals `Var(z)`.
//!
//! The optimal strategy is linear feedback on the gap `x - h(t)`: above the
//! target it applies the above-branch directions, below the mirrored
//! below-branch ones, both scaled by the gap magnitude.

use crate::error::{Error, Result};
use crate::model::MarketModel;
use crate::sre::SreSolution;
use nalgebra::DVector;
use std::io::Write;

/// `exp(-R(t))`, the riskless discount factor to time `t`.
pub fn discount(model: &MarketModel, t: f64) -> f64 {
    (-model.rate.integral(0.0, t)).exp()
}

/// Terminal mean of the pure riskless portfolio (full reinsurance, no
/// investment): `exp(R(T)) (x + a B(T))`.
pub fn riskless_mean(model: &MarketModel, initial_wealth: f64) -> f64 {
    let horizon = model.horizon;
    let growth = model.rate.integral(0.0, horizon).exp();
    growth * (initial_wealth + model.derived().a * model.rate.discount_weight_integral(horizon))
}

/// Moving wealth target at time `t` for multiplier `zeta`.
pub fn h_value(model: &MarketModel, zeta: f64, t: f64) -> f64 {
    let horizon = model.horizon;
    let r_t = model.rate.integral(0.0, t);
    let r_total = model.rate.integral(0.0, horizon);
    let b_gap =
        model.rate.discount_weight_integral(horizon) - model.rate.discount_weight_integral(t);
    zeta * (r_t - r_total).exp() - model.derived().a * r_t.exp() * b_gap
}

/// `K = p2(0,0) exp(-2 R(T))`; the frontier needs `K < 1` strictly.
fn frontier_factor(sre: &SreSolution) -> Result<f64> {
    let k = sre.p2(0, 0) * (-2.0 * sre.model.rate.integral(0.0, sre.model.horizon)).exp();
    if !(0.0..1.0 - 1e-9).contains(&k) {
        return Err(Error::Frontier(format!(
            "frontier degenerates: p2(0,0) exp(-2 int r) = {k} must lie in (0, 1)"
        )));
    }
    Ok(k)
}

/// Optimal Lagrange multiplier for target mean `z`.
pub fn zeta_hat(sre: &SreSolution, initial_wealth: f64, z: f64) -> Result<f64> {
    let k = frontier_factor(sre)?;
    let model = &sre.model;
    let disc = discount(model, model.horizon);
    let funded =
        initial_wealth + model.derived().a * model.rate.discount_weight_integral(model.horizon);
    Ok((sre.p2(0, 0) * disc * funded - z) / (k - 1.0))
}

/// Minimal terminal-wealth variance at target mean `z`.
pub fn frontier_variance(sre: &SreSolution, initial_wealth: f64, z: f64) -> Result<f64> {
    let k = frontier_factor(sre)?;
    let rm = riskless_mean(&sre.model, initial_wealth);
    if z < rm - 1e-9 * (1.0 + rm.abs()) {
        return Err(Error::Frontier(format!(
            "target mean {z} lies below the riskless mean {rm}"
        )));
    }
    Ok(k / (1.0 - k) * (z - rm) * (z - rm))
}

/// Value of the relaxed (multiplier) problem at `zeta`, for target mean `z`.
/// Concave in `zeta`; its maximum over `zeta` is the frontier variance.
pub fn relaxed_value(sre: &SreSolution, initial_wealth: f64, zeta: f64, z: f64) -> f64 {
    let h0 = h_value(&sre.model, zeta, 0.0);
    let gap = initial_wealth - h0;
    let up = gap.max(0.0);
    let down = (-gap).max(0.0);
    sre.p1(0, 0) * up * up + sre.p2(0, 0) * down * down - (zeta - z) * (zeta - z)
}

/// One row of the efficient frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub target: f64,
    pub variance: f64,
    pub stddev: f64,
    pub zeta: f64,
    /// Relaxed value at the optimal multiplier (equals `variance` when
    /// feasible).
    pub value: f64,
    pub feasible: bool,
}

/// Evaluate the frontier at each target mean; targets below the riskless
/// mean are marked infeasible instead of failing the whole table.
pub fn frontier_table(
    sre: &SreSolution,
    initial_wealth: f64,
    targets: &[f64],
) -> Result<Vec<FrontierPoint>> {
    frontier_factor(sre)?;
    let mut points = Vec::with_capacity(targets.len());
    for &z in targets {
        match frontier_variance(sre, initial_wealth, z) {
            Ok(variance) => {
                let zeta = zeta_hat(sre, initial_wealth, z)?;
                points.push(FrontierPoint {
                    target: z,
                    variance,
                    stddev: variance.sqrt(),
                    zeta,
                    value: relaxed_value(sre, initial_wealth, zeta, z),
                    feasible: true,
                });
            }
            Err(Error::Frontier(_)) => {
                points.push(FrontierPoint {
                    target: z,
                    variance: f64::NAN,
                    stddev: f64::NAN,
                    zeta: f64::NAN,
                    value: f64::NAN,
                    feasible: false,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(points)
}

/// CSV dump of a frontier table; infeasible rows carry empty numeric cells
/// and the status column says why.
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], out: &mut W) -> Result<()> {
    writeln!(out, "z,stddev,variance,zeta_hat,value,status")?;
    for p in points {
        if p.feasible {
            writeln!(
                out,
                "{},{},{},{},{},ok",
                p.target, p.stddev, p.variance, p.zeta, p.value
            )?;
        } else {
            writeln!(out, "{},,,,,infeasible", p.target)?;
        }
    }
    Ok(())
}

/// Executable optimal strategy for one `(initial wealth, target mean)` pair:
/// piecewise-linear feedback on the gap to the moving target.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub sre: SreSolution,
    pub initial_wealth: f64,
    pub target_mean: f64,
    pub zeta: f64,
}

impl FeedbackPolicy {
    /// Build the optimal policy for target mean `z`.
    pub fn from_target(sre: &SreSolution, initial_wealth: f64, z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::Frontier(format!("target mean {z} must be finite")));
        }
        let rm = riskless_mean(&sre.model, initial_wealth);
        // Reject targets below the riskless mean early (same check as the
        // variance formula) so the policy invariants below cannot trip.
        frontier_variance(sre, initial_wealth, z)?;
        let zeta = zeta_hat(sre, initial_wealth, z)?;
        if zeta < rm - 1e-9 * (1.0 + rm.abs()) {
            return Err(Error::Frontier(format!(
                "multiplier {zeta} fell below the riskless mean {rm}"
            )));
        }
        let h0 = h_value(&sre.model, zeta, 0.0);
        if initial_wealth > h0 + 1e-9 * (1.0 + h0.abs()) {
            return Err(Error::Frontier(format!(
                "initial wealth {initial_wealth} exceeds the time-zero target {h0}"
            )));
        }
        Ok(Self { sre: sre.clone(), initial_wealth, target_mean: z, zeta })
    }

    /// Build the policy for an explicit multiplier; the implied target mean
    /// is `p2(0,0) exp(-R(T)) (x + a B(T)) + zeta (1 - K)`.
    pub fn with_multiplier(sre: &SreSolution, initial_wealth: f64, zeta: f64) -> Result<Self> {
        let k = frontier_factor(sre)?;
        let model = &sre.model;
        let disc = discount(model, model.horizon);
        let funded =
            initial_wealth + model.derived().a * model.rate.discount_weight_integral(model.horizon);
        let target_mean = sre.p2(0, 0) * disc * funded + zeta * (1.0 - k);
        Ok(Self { sre: sre.clone(), initial_wealth, target_mean, zeta })
    }

    /// Moving wealth target at `t`.
    pub fn h(&self, t: f64) -> f64 {
        h_value(&self.sre.model, self.zeta, t)
    }

    /// Optimal `(investment, retention)` at time `t`, claim count `n`, and
    /// wealth `x`. Retention is reported as the absolute exposure slope
    /// `q >= 0`; both outputs scale linearly in the gap `|x - h(t)|`.
    pub fn controls(&self, t: f64, n: usize, x: f64) -> Result<(DVector<f64>, f64)> {
        let node = self.sre.at(t, n)?;
        let gap = x - self.h(t);
        if gap >= 0.0 {
            Ok((node.v1_hat * gap, node.u1_hat * gap))
        } else {
            Ok((node.v2_hat * (-gap), node.u2_hat * (-gap)))
        }
    }
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

    fn mat1(x: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[x])
    }

    fn constants_model(rate: f64, eta: f64, eta_r: f64) -> MarketModel {
        MarketModel::new(
            1.0,
            RateCurve::Constant(rate),
            CoefficientTable::constant(vec1(0.2), mat1(0.3)).unwrap(),
            ConvexCone::NonnegativeOrthant { dim: 1 },
            1.0,
            eta,
            eta_r,
            ClaimDistribution::point_mass(1.0).unwrap(),
            CoefficientMode::Deterministic,
            1e-8,
        )
        .unwrap()
    }

    fn solved_constants() -> SreSolution {
        solve(&constants_model(0.05, 0.2, 0.2), &SreGrid::new(100)).unwrap()
    }

    #[test]
    fn multiplier_and_target_frozen_values() {
        let sre = solved_constants();
        let zeta = zeta_hat(&sre, 1.0, 1.2).unwrap();
        assert_relative_eq!(zeta, 1.43865, epsilon = 1e-4);
        let h0 = h_value(&sre.model, zeta, 0.0);
        assert_relative_eq!(h0, 1.36849, epsilon = 1e-4);
        // Exact form: p2(0,0) = exp(2r - b^2/(lambda E[Y^2]) - mu^2/sigma^2).
        let p2 = (0.1 - 0.04 - 0.04 / 0.09_f64).exp();
        let expected = (p2 * (-0.05_f64).exp() - 1.2) / (p2 * (-0.1_f64).exp() - 1.0);
        assert_relative_eq!(zeta, expected, epsilon = 1e-9);
        let variance = frontier_variance(&sre, 1.0, 1.2).unwrap();
        let k = p2 * (-0.1_f64).exp();
        let rm = 1.0_f64 * 0.05_f64.exp();
        assert_relative_eq!(variance, k / (1.0 - k) * (1.2 - rm) * (1.2 - rm), epsilon = 1e-9);
        assert!((0.03549..=0.03550).contains(&variance), "variance = {variance}");
    }

    #[test]
    fn riskless_target_is_exactly_funded() {
        // At z = rm the multiplier collapses to rm, the time-zero target
        // equals the initial wealth, and the variance vanishes.
        let sre = solved_constants();
        let rm = riskless_mean(&sre.model, 1.0);
        assert_relative_eq!(rm, 0.05_f64.exp(), epsilon = 1e-12);
        let zeta = zeta_hat(&sre, 1.0, rm).unwrap();
        assert_relative_eq!(zeta, rm, epsilon = 1e-10);
        assert_relative_eq!(h_value(&sre.model, zeta, 0.0), 1.0, epsilon = 1e-10);
        assert!(frontier_variance(&sre, 1.0, rm).unwrap() < 1e-18);
    }

    #[test]
    fn premium_shortfall_shifts_the_riskless_mean() {
        // eta = 0.1 < eta_r = 0.3 gives a = -0.2 and a lower riskless mean.
        let model = constants_model(0.05, 0.1, 0.3);
        let rm = riskless_mean(&model, 1.0);
        let b_t = (1.0 - (-0.05_f64).exp()) / 0.05;
        assert_relative_eq!(rm, 0.05_f64.exp() * (1.0 - 0.2 * b_t), epsilon = 1e-12);
        // Funding the riskless mean needs h(0) = x despite the drain.
        let sre = solve(&model, &SreGrid::new(100)).unwrap();
        let zeta = zeta_hat(&sre, 1.0, rm).unwrap();
        assert_relative_eq!(h_value(&model, zeta, 0.0), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn target_reaches_the_multiplier_at_the_horizon() {
        let sre = solved_constants();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        assert_relative_eq!(policy.h(1.0), policy.zeta, epsilon = 1e-12);
        // h grows from h(0) to zeta monotonically under a positive rate.
        let h0 = policy.h(0.0);
        let hm = policy.h(0.5);
        assert!(h0 < hm && hm < policy.zeta);
    }

    #[test]
    fn weak_duality_peaks_at_the_optimal_multiplier() {
        let sre = solved_constants();
        let z = 1.2;
        let variance = frontier_variance(&sre, 1.0, z).unwrap();
        let zeta = zeta_hat(&sre, 1.0, z).unwrap();
        assert_relative_eq!(relaxed_value(&sre, 1.0, zeta, z), variance, epsilon = 1e-10);
        for dz in [-0.3, -0.05, 0.05, 0.4] {
            let j = relaxed_value(&sre, 1.0, zeta + dz, z);
            assert!(j <= variance + 1e-12, "duality violated at offset {dz}: {j} > {variance}");
        }
        // Concavity along the multiplier axis.
        let (a, b, c) = (
            relaxed_value(&sre, 1.0, zeta - 0.1, z),
            relaxed_value(&sre, 1.0, zeta, z),
            relaxed_value(&sre, 1.0, zeta + 0.1, z),
        );
        assert!(a + c <= 2.0 * b + 1e-12);
    }

    #[test]
    fn feedback_scales_linearly_in_the_gap() {
        let sre = solved_constants();
        let policy = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let h0 = policy.h(0.0);
        // Half a unit below the target: invest mu/sigma^2 and retain
        // b/(lambda E[Y^2]) per unit of gap.
        let (pi, q) = policy.controls(0.0, 0, h0 - 0.5).unwrap();
        assert_relative_eq!(pi[0], 0.5 * 0.2 / 0.09, epsilon = 1e-5);
        assert_relative_eq!(q, 0.5 * 0.2, epsilon = 1e-6);
        // Above the target the long-only cone and the zero fast path switch
        // everything off.
        let (pi, q) = policy.controls(0.0, 0, h0 + 0.5).unwrap();
        assert_eq!(pi[0], 0.0);
        assert_eq!(q, 0.0);
        // At the target: no position at all.
        let (pi, q) = policy.controls(0.0, 0, h0).unwrap();
        assert_eq!(pi[0], 0.0);
        assert_eq!(q, 0.0);
    }

    #[test]
    fn multiplier_construction_round_trips_the_target() {
        let sre = solved_constants();
        let by_target = FeedbackPolicy::from_target(&sre, 1.0, 1.2).unwrap();
        let by_zeta = FeedbackPolicy::with_multiplier(&sre, 1.0, by_target.zeta).unwrap();
        assert_relative_eq!(by_zeta.target_mean, 1.2, epsilon = 1e-10);
        assert_relative_eq!(by_zeta.zeta, by_target.zeta, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_targets_are_frontier_errors() {
        let sre = solved_constants();
        let rm = riskless_mean(&sre.model, 1.0);
        let err = FeedbackPolicy::from_target(&sre, 1.0, rm - 0.1).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("riskless mean"));
    }

    #[test]
    fn frontier_table_marks_infeasible_rows_instead_of_failing() {
        let sre = solved_constants();
        let rm = riskless_mean(&sre.model, 1.0);
        let targets = [rm - 0.1, rm, rm + 0.1, rm + 0.2];
        let points = frontier_table(&sre, 1.0, &targets).unwrap();
        assert_eq!(points.len(), 4);
        assert!(!points[0].feasible);
        assert!(points[1..].iter().all(|p| p.feasible));
        // Quadratic growth away from the riskless mean: doubling the excess
        // target quadruples the variance.
        assert_relative_eq!(points[3].variance, 4.0 * points[2].variance, epsilon = 1e-9);
        // The relaxed value at the optimal multiplier is the variance itself.
        assert_relative_eq!(points[2].value, points[2].variance, epsilon = 1e-10);

        let mut buf = Vec::new();
        write_frontier_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "z,stddev,variance,zeta_hat,value,status");
        assert!(lines[1].ends_with(",,,,,infeasible"));
        assert!(lines[2].ends_with(",ok"));
    }

    #[test]
    fn zero_rate_frontier_slope_is_constant() {
        // r = 0, a = 0: stddev(z) = sqrt(K / (1 - K)) (z - x) exactly.
        let model = constants_model(0.0, 0.2, 0.2);
        let sre = solve(&model, &SreGrid::new(100)).unwrap();
        let k = sre.p2(0, 0);
        let slope = (k / (1.0 - k)).sqrt();
        for dz in [0.05, 0.1, 0.4] {
            let v = frontier_variance(&sre, 1.0, 1.0 + dz).unwrap();
            assert_relative_eq!(v.sqrt(), slope * dz, epsilon = 1e-12);
        }
    }
}
