//! Measure how often the optimal retention exceeds full retention.
//!
//! The optimal strategy is not barred from q > 1: past full retention the
//! insurer acts as a reinsurer and acquires new business. Because the
//! retained-risk slope scales with the gap between wealth and the moving
//! threshold h(t), ambitious targets push paths into q > 1 territory with
//! positive probability. This example sweeps the target mean and reports
//! the fraction of paths that ever cross q = 1 and the average time they
//! spend there.

use cramer_mv::model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
use cramer_mv::montecarlo::{q_exceeds_one_frequency, simulate_paths};
use cramer_mv::sre::SreGrid;
use cramer_mv::{FeedbackPolicy, Scheme, SimConfig, Strategy};
use nalgebra::{DMatrix, DVector};

fn main() -> cramer_mv::Result<()> {
    let model = MarketModel::new(
        1.0,
        RateCurve::Constant(0.05),
        CoefficientTable::constant(
            DVector::from_vec(vec![0.2]),
            DMatrix::from_row_slice(1, 1, &[0.3]),
        )?,
        ConvexCone::NonnegativeOrthant { dim: 1 },
        1.0,
        0.2,
        0.2,
        ClaimDistribution::point_mass(1.0)?,
        CoefficientMode::Deterministic,
        1e-8,
    )?;
    let sre = cramer_mv::solve(&model, &SreGrid::new(1000))?;

    let x = 1.0;
    let config = SimConfig {
        n_paths: 5_000,
        seed: 11,
        dt_max: 1.0 / 128.0,
        scheme: Scheme::ExplicitProduct,
        record_paths: true,
    };
    println!("     z    paths with q > 1    time fraction q > 1    max q seen");
    for z in [1.20, 1.60, 2.40, 3.20] {
        let policy = FeedbackPolicy::from_target(&sre, x, z)?;
        let records = simulate_paths(&model, &Strategy::feedback(policy), x, &config)?;
        let ever = records
            .iter()
            .filter(|rec| rec.time_retention_above_one > 0.0)
            .count() as f64
            / records.len() as f64;
        let time_fraction = q_exceeds_one_frequency(&records, model.horizon);
        let max_q = records
            .iter()
            .flat_map(|rec| rec.retention_samples.iter().map(|&(_, q)| q))
            .fold(0.0_f64, f64::max);
        println!("  {z:>4.2}          {ever:>8.4}             {time_fraction:>8.5}        {max_q:>8.3}");
    }
    println!();
    println!("full retention is not a wall: the crossing fraction grows with the target");
    Ok(())
}
