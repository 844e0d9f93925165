//! Solve the constant-coefficient benchmark and line the numerics up
//! against the closed forms.
//!
//! With one asset, constant `(r, mu, sigma)`, a point claim at 1 and equal
//! loadings, the backward pair integrates exactly:
//!
//! ```text
//! P1(t) = exp(2 r (T - t))
//! P2(t) = exp((2r - b^2/(lambda sigma_Y^2) - mu^2/sigma^2) (T - t))
//! ```
//!
//! and the optimal slopes below the target are `v2 = mu/sigma^2`,
//! `u2 = b/(lambda sigma_Y^2)`, both time-constant.

use cramer_mv::model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
use cramer_mv::policy::{riskless_mean, zeta_hat};
use cramer_mv::sre::SreGrid;
use cramer_mv::{frontier_variance, solve};
use nalgebra::{DMatrix, DVector};

fn main() -> cramer_mv::Result<()> {
    let (r, mu, sigma, lambda, eta) = (0.05, 0.2, 0.3, 1.0, 0.2);
    let model = MarketModel::new(
        1.0,
        RateCurve::Constant(r),
        CoefficientTable::constant(
            DVector::from_vec(vec![mu]),
            DMatrix::from_row_slice(1, 1, &[sigma]),
        )?,
        ConvexCone::NonnegativeOrthant { dim: 1 },
        lambda,
        eta,
        eta,
        ClaimDistribution::point_mass(1.0)?,
        CoefficientMode::Deterministic,
        1e-8,
    )?;
    let sre = solve(&model, &SreGrid::new(2000))?;

    let b = lambda * model.claims.mean() * eta;
    let sigma_y2 = model.claims.second_moment();
    let decay = 2.0 * r - b * b / (lambda * sigma_y2) - mu * mu / (sigma * sigma);
    println!("   t       P1(t)    exact        P2(t)    exact      |err1|    |err2|");
    for ti in (0..=2000).step_by(400) {
        let t = ti as f64 / 2000.0;
        let p1 = sre.p1(ti, 0);
        let p2 = sre.p2(ti, 0);
        let e1 = (2.0 * r * (1.0 - t)).exp();
        let e2 = (decay * (1.0 - t)).exp();
        println!(
            "{t:>4.2}  {p1:>10.7} {e1:>10.7}  {p2:>10.7} {e2:>10.7}   {:.1e}   {:.1e}",
            (p1 - e1).abs(),
            (p2 - e2).abs()
        );
    }

    let node = sre.at(0.0, 0)?;
    println!();
    println!("optimal slopes at t = 0 (below the target):");
    println!("  invest    v2 = {:.6}   (mu/sigma^2  = {:.6})", node.v2_hat[0], mu / (sigma * sigma));
    println!("  retention u2 = {:.6}   (b/(la sY^2) = {:.6})", node.u2_hat, b / (lambda * sigma_y2));

    let (x, z) = (1.0, 1.2);
    println!();
    println!("frontier point at z = {z}:");
    println!("  riskless mean    {:.6}", riskless_mean(&model, x));
    println!("  multiplier       {:.6}", zeta_hat(&sre, x, z)?);
    println!("  variance         {:.6}", frontier_variance(&sre, x, z)?);
    Ok(())
}
