//! Truncate the investment cone at radius k and watch the solution
//! collapse back to the unconstrained one.
//!
//! Replacing the cone with its intersection with a centered ball of radius
//! k keeps every strategy admissible for the original problem, so P1 under
//! the cap can only sit above the untruncated value, and it is monotone
//! nonincreasing as k grows. Once the ball contains the unconstrained
//! minimizer the cap stops binding and the ladder collapses exactly.

use cramer_mv::model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
use cramer_mv::sre::SreGrid;
use cramer_mv::{solve, solve_truncated};
use nalgebra::{DMatrix, DVector};

fn main() -> cramer_mv::Result<()> {
    // Unconstrained investment: the free minimizer above the target is
    // v1 = -mu/sigma^2 = -2.222, norm well outside the small balls.
    let model = MarketModel::new(
        1.0,
        RateCurve::Constant(0.05),
        CoefficientTable::constant(
            DVector::from_vec(vec![0.2]),
            DMatrix::from_row_slice(1, 1, &[0.3]),
        )?,
        ConvexCone::Full { dim: 1 },
        1.0,
        0.2,
        0.2,
        ClaimDistribution::point_mass(1.0)?,
        CoefficientMode::Deterministic,
        1e-8,
    )?;
    let grid = SreGrid::new(1000);
    let free = solve(&model, &grid)?;

    println!("free problem: P1(0) = {:.9}, v1(0) = {:.6}", free.p1(0, 0), free.at(0.0, 0)?.v1_hat[0]);
    println!();
    println!("     k     P1(0) capped    excess over free    v1(0) capped");
    let mut previous = f64::INFINITY;
    for k in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let capped = solve_truncated(&model, &grid, k)?;
        let p1 = capped.p1(0, 0);
        assert!(p1 <= previous + 1e-12, "ladder must be nonincreasing");
        previous = p1;
        println!(
            "  {k:>4.1}    {p1:>12.9}    {:>16.3e}    {:>12.6}",
            p1 - free.p1(0, 0),
            capped.at(0.0, 0)?.v1_hat[0]
        );
    }
    println!();
    println!("caps beyond |mu|/sigma^2 = {:.4} change nothing", 0.2 / 0.09);
    Ok(())
}
