//! Trace the mean-variance frontier for a two-asset book with uniform
//! claim sizes.
//!
//! The frontier is a half-line in the (stddev, mean) plane: variance is a
//! fixed quadratic in the distance between the target and the riskless
//! mean, so standard deviation grows linearly in that distance with slope
//! determined by a single solve of the backward pair. Targets at or below
//! the riskless mean are reported as infeasible rather than silently
//! clamped.

use cramer_mv::model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
use cramer_mv::policy::riskless_mean;
use cramer_mv::sre::SreGrid;
use cramer_mv::{frontier_table, solve};
use nalgebra::{DMatrix, DVector};

fn main() -> cramer_mv::Result<()> {
    // Two correlated assets, long-only; claims uniform on [0.5, 1.5].
    let mu = DVector::from_vec(vec![0.18, 0.10]);
    let sigma = DMatrix::from_row_slice(2, 2, &[0.30, 0.00, 0.12, 0.25]);
    let model = MarketModel::new(
        1.0,
        RateCurve::Constant(0.04),
        CoefficientTable::constant(mu, sigma)?,
        ConvexCone::NonnegativeOrthant { dim: 2 },
        1.2,
        0.25,
        0.35,
        ClaimDistribution::uniform(0.5, 1.5)?,
        CoefficientMode::Deterministic,
        1e-8,
    )?;
    let sre = solve(&model, &SreGrid::new(2000))?;

    let x = 1.0;
    let rm = riskless_mean(&model, x);
    println!("initial wealth {x}, riskless mean {rm:.6}");
    println!();

    let targets: Vec<f64> = (0..=8).map(|i| 1.00 + 0.04 * i as f64).collect();
    let table = frontier_table(&sre, x, &targets)?;
    println!("      z     stddev   variance       zeta      status");
    for row in &table {
        if row.feasible {
            println!(
                "  {:>5.2}  {:>9.6}  {:>9.6}  {:>9.6}      ok",
                row.target, row.stddev, row.variance, row.zeta
            );
        } else {
            println!("  {:>5.2}          -          -          -      infeasible", row.target);
        }
    }

    // The slope is the same number however far out the ray is sampled.
    let feasible: Vec<_> = table.iter().filter(|r| r.feasible).collect();
    if let Some(last) = feasible.last() {
        println!();
        println!(
            "stddev per unit of excess mean: {:.6}",
            last.stddev / (last.target - rm)
        );
    }
    Ok(())
}
