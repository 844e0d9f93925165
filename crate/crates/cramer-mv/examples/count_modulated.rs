//! Let market coefficients shift with the running claim count and watch
//! the backward pair couple across count levels.
//!
//! Levels are indexed by the number of claims so far. Level 0 here has a
//! strong drift that disappears from level 1 onward, so landing a claim is
//! bad news twice over: the surplus drops and the investment opportunity
//! goes away. The correction terms `Gamma1`, `Gamma2` carry that coupling,
//! and on the profitable side of the target the retention slope `u1` can
//! turn strictly positive — the insurer pays to take on more risk because
//! a claim would also reprice the market.

use cramer_mv::model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
use cramer_mv::sre::SreGrid;
use cramer_mv::solve;
use nalgebra::{DMatrix, DVector};

fn main() -> cramer_mv::Result<()> {
    let levels = vec![
        (DVector::from_vec(vec![0.5]), DMatrix::from_row_slice(1, 1, &[0.25])),
        (DVector::from_vec(vec![0.0]), DMatrix::from_row_slice(1, 1, &[0.25])),
    ];
    let model = MarketModel::new(
        1.0,
        RateCurve::Constant(0.02),
        CoefficientTable::per_level(levels)?,
        ConvexCone::Full { dim: 1 },
        1.0,
        0.2,
        0.2,
        ClaimDistribution::point_mass(1.0)?,
        CoefficientMode::CountModulated,
        1e-8,
    )?;
    // n_max = 2: subsequent levels repeat level 1, so the ladder closes.
    let sre = solve(&model, &SreGrid::with_levels(800, 2))?;

    println!("level 0 (pre-claim drift 0.5) vs level 1 (drift gone):");
    println!("   t      P1(t,0)   Gamma1(t,0)   u1(t,0)      P1(t,1)   u1(t,1)");
    for ti in (0..=800).step_by(160) {
        let n0 = sre.node(ti, 0)?;
        let n1 = sre.node(ti, 1)?;
        println!(
            "{:>4.2}   {:>9.6}   {:>9.6}   {:>8.5}    {:>9.6}   {:>8.5}",
            n0.t, n0.p1, n0.gamma1, n0.u1_hat, n1.p1, n1.u1_hat
        );
    }

    let mut positive = 0usize;
    for ti in 0..=800 {
        if sre.node(ti, 0)?.u1_hat > 0.0 {
            positive += 1;
        }
    }
    println!();
    println!("nodes at level 0 with u1 > 0: {positive} of 801");
    println!("(with level-independent coefficients Gamma vanishes and u1 is 0 everywhere)");
    Ok(())
}
