//! JSON run configuration and the command-line front end.
//!
//! A run is described by one JSON document (see `configs/` for complete
//! examples) with four sections: the market `model`, the solver `grid`, the
//! `frontier` targets, and the Monte Carlo `simulation` block. Every section
//! except the model has defaults; unknown keys are rejected everywhere so a
//! typo cannot silently fall back to a default.
//!
//! Subcommands: `solve` writes the solved backward system to `sre.csv`,
//! `frontier` writes `frontier.csv`, `simulate` writes `simulation.csv`, and
//! `validate` writes both `simulation.csv` and `validation.json`, exiting
//! nonzero when the statistical checks reject. `--dump-config` prints the
//! effective configuration (after flag overrides) and exits.

use crate::error::{Error, Result};
use crate::model::{
    AxisRange, ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, Interpolation,
    LevelTable, MarketModel, RateCurve,
};
use crate::montecarlo::{
    simulate_paths, terminal_stats_of, validate_frontier_records, write_simulation_csv,
    write_validation_json, Scheme, SimConfig, Strategy,
};
use crate::policy::{frontier_table, write_frontier_csv, FeedbackPolicy};
use crate::sre::{solve, SreGrid, SreSolution};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub frontier: FrontierSpec,
    #[serde(default)]
    pub simulation: SimSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

impl Default for RunConfig {
    /// Built-in demo: one asset, constant coefficients, unit claims.
    fn default() -> Self {
        RunConfig {
            model: ModelSpec {
                horizon: 1.0,
                rate: RateSpec::Constant(0.05),
                coefficients: CoefficientSpec {
                    times: vec![0.0],
                    interpolation: InterpSpec::PiecewiseConstant,
                    levels: vec![LevelSpec {
                        mu: vec![vec![0.2]],
                        sigma: vec![vec![vec![0.3]]],
                    }],
                },
                cone: ConeSpec::NonnegativeOrthant,
                insurance: InsuranceSpec {
                    claim_rate: 1.0,
                    insurer_loading: 0.2,
                    reinsurer_loading: 0.2,
                },
                claims: ClaimSpec::Atoms { atoms: vec![(1.0, 1.0)] },
                mode: ModeSpec::Deterministic,
                ellipticity_floor: default_floor(),
            },
            grid: GridSpec::default(),
            frontier: FrontierSpec {
                initial_wealth: 1.0,
                targets: vec![1.08, 1.12, 1.16, 1.2, 1.24, 1.28],
            },
            simulation: SimSpec { target_mean: Some(1.2), ..SimSpec::default() },
            output_dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub horizon: f64,
    pub rate: RateSpec,
    pub coefficients: CoefficientSpec,
    pub cone: ConeSpec,
    pub insurance: InsuranceSpec,
    pub claims: ClaimSpec,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "default_floor")]
    pub ellipticity_floor: f64,
}

fn default_floor() -> f64 {
    1e-8
}

/// Either a single number or a piecewise-constant table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Constant(f64),
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl RateSpec {
    fn build(&self) -> RateCurve {
        match self {
            RateSpec::Constant(r) => RateCurve::Constant(*r),
            RateSpec::Table { times, values } => RateCurve::PiecewiseConstant {
                times: times.clone(),
                values: values.clone(),
            },
        }
    }
}

/// Drift/volatility tables: `mu[knot][asset]`, `sigma[knot][asset][noise]`,
/// one entry of `levels` per claim count (one for deterministic models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default)]
    pub interpolation: InterpSpec,
    pub levels: Vec<LevelSpec>,
}

fn default_times() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpSpec {
    #[default]
    PiecewiseConstant,
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
}

impl CoefficientSpec {
    fn build(&self) -> Result<CoefficientTable> {
        if self.levels.is_empty() {
            return Err(Error::Model("coefficients need at least one level".into()));
        }
        let n_knots = self.times.len();
        let n_assets = self
            .levels
            .first()
            .and_then(|l| l.mu.first())
            .map(|row| row.len())
            .unwrap_or(0);
        let mut levels = Vec::with_capacity(self.levels.len());
        for (li, level) in self.levels.iter().enumerate() {
            if level.mu.len() != n_knots || level.sigma.len() != n_knots {
                return Err(Error::Model(format!(
                    "level {li} has {} drift and {} volatility entries for {n_knots} time knots",
                    level.mu.len(),
                    level.sigma.len()
                )));
            }
            let mut mu = Vec::with_capacity(n_knots);
            let mut sigma = Vec::with_capacity(n_knots);
            for (ki, (m_row, s_rows)) in level.mu.iter().zip(&level.sigma).enumerate() {
                if m_row.len() != n_assets {
                    return Err(Error::Model(format!(
                        "level {li} knot {ki}: drift has {} entries, expected {n_assets}",
                        m_row.len()
                    )));
                }
                let n_noise = s_rows.first().map(|r| r.len()).unwrap_or(0);
                if s_rows.len() != n_assets || s_rows.iter().any(|r| r.len() != n_noise) {
                    return Err(Error::Model(format!(
                        "level {li} knot {ki}: volatility must be a {n_assets} x n matrix"
                    )));
                }
                mu.push(DVector::from_row_slice(m_row));
                sigma.push(DMatrix::from_fn(n_assets, n_noise, |i, j| s_rows[i][j]));
            }
            levels.push(LevelTable { mu, sigma });
        }
        CoefficientTable::time_varying(self.times.clone(), self.interpolation.build(), levels)
    }
}

impl InterpSpec {
    fn build(&self) -> Interpolation {
        match self {
            InterpSpec::PiecewiseConstant => Interpolation::PiecewiseConstant,
            InterpSpec::PiecewiseLinear => Interpolation::PiecewiseLinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeSpec {
    Full,
    NonnegativeOrthant,
    NonpositiveOrthant,
    HalfLines { signs: Vec<SignSpec> },
    /// Rays are listed as vectors; they become the generator columns.
    Generated { rays: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignSpec {
    Free,
    Nonneg,
    Nonpos,
}

impl ConeSpec {
    fn build(&self, dim: usize) -> Result<ConvexCone> {
        Ok(match self {
            ConeSpec::Full => ConvexCone::Full { dim },
            ConeSpec::NonnegativeOrthant => ConvexCone::NonnegativeOrthant { dim },
            ConeSpec::NonpositiveOrthant => ConvexCone::NonpositiveOrthant { dim },
            ConeSpec::HalfLines { signs } => ConvexCone::HalfLines {
                signs: signs
                    .iter()
                    .map(|s| match s {
                        SignSpec::Free => AxisRange::Free,
                        SignSpec::Nonneg => AxisRange::Nonneg,
                        SignSpec::Nonpos => AxisRange::Nonpos,
                    })
                    .collect(),
            },
            ConeSpec::Generated { rays } => {
                if rays.is_empty() || rays.iter().any(|r| r.len() != dim) {
                    return Err(Error::Model(format!(
                        "generated cone rays must be nonempty vectors of length {dim}"
                    )));
                }
                ConvexCone::Generated {
                    rays: DMatrix::from_fn(dim, rays.len(), |i, j| rays[j][i]),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsuranceSpec {
    pub claim_rate: f64,
    pub insurer_loading: f64,
    pub reinsurer_loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimSpec {
    /// Discrete law: `[size, weight]` pairs (weights normalized).
    Atoms { atoms: Vec<(f64, f64)> },
    Uniform { lo: f64, hi: f64 },
    /// Tabulated density, linearly interpolated between the `[y, f(y)]`
    /// points and discretized on `nodes` quadrature cells.
    Density {
        lo: f64,
        hi: f64,
        pdf: Vec<(f64, f64)>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_nodes() -> usize {
    64
}

impl ClaimSpec {
    fn build(&self) -> Result<ClaimDistribution> {
        match self {
            ClaimSpec::Atoms { atoms } => ClaimDistribution::from_atoms(atoms.clone()),
            ClaimSpec::Uniform { lo, hi } => ClaimDistribution::uniform(*lo, *hi),
            ClaimSpec::Density { lo, hi, pdf, nodes } => {
                if pdf.len() < 2 || pdf.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::Model(
                        "tabulated density needs at least two strictly increasing points".into(),
                    ));
                }
                let table = pdf.clone();
                let interp = move |y: f64| -> f64 {
                    if y <= table[0].0 {
                        return table[0].1;
                    }
                    if y >= table[table.len() - 1].0 {
                        return table[table.len() - 1].1;
                    }
                    let k = table.partition_point(|p| p.0 <= y) - 1;
                    let (y0, f0) = table[k];
                    let (y1, f1) = table[k + 1];
                    f0 + (f1 - f0) * (y - y0) / (y1 - y0)
                };
                ClaimDistribution::from_density(interp, *lo, *hi, *nodes)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Deterministic,
    CountModulated,
}

impl ModelSpec {
    pub fn build(&self) -> Result<MarketModel> {
        let coefficients = self.coefficients.build()?;
        let cone = self.cone.build(coefficients.n_assets())?;
        MarketModel::new(
            self.horizon,
            self.rate.build(),
            coefficients,
            cone,
            self.insurance.claim_rate,
            self.insurance.insurer_loading,
            self.insurance.reinsurer_loading,
            self.claims.build()?,
            match self.mode {
                ModeSpec::Deterministic => CoefficientMode::Deterministic,
                ModeSpec::CountModulated => CoefficientMode::CountModulated,
            },
            self.ellipticity_floor,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Claim-count truncation level; `null` picks one from the Poisson tail.
    #[serde(default)]
    pub n_max: Option<usize>,
}

fn default_steps() -> usize {
    2000
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { steps: default_steps(), n_max: None }
    }
}

impl GridSpec {
    fn build(&self) -> SreGrid {
        SreGrid { steps: self.steps, n_max: self.n_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierSpec {
    #[serde(default = "default_wealth")]
    pub initial_wealth: f64,
    #[serde(default)]
    pub targets: Vec<f64>,
}

fn default_wealth() -> f64 {
    1.0
}

impl Default for FrontierSpec {
    fn default() -> Self {
        FrontierSpec { initial_wealth: default_wealth(), targets: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Frontier point to simulate; required by `simulate` and `validate`.
    #[serde(default)]
    pub target_mean: Option<f64>,
    #[serde(default)]
    pub record_paths: bool,
    /// Multiplies the analytic variance inside the validation checks. Only
    /// integration tests set this away from 1 (to force a rejection).
    #[serde(default = "default_variance_scale")]
    pub analytic_variance_scale: f64,
}

fn default_paths() -> usize {
    4000
}

fn default_seed() -> u64 {
    42
}

fn default_dt_max() -> f64 {
    1.0 / 64.0
}

fn default_scheme() -> Scheme {
    Scheme::ExplicitProduct
}

fn default_variance_scale() -> f64 {
    1.0
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            paths: default_paths(),
            seed: default_seed(),
            dt_max: default_dt_max(),
            scheme: default_scheme(),
            target_mean: None,
            record_paths: false,
            analytic_variance_scale: default_variance_scale(),
        }
    }
}

impl SimSpec {
    fn build(&self) -> SimConfig {
        SimConfig {
            n_paths: self.paths,
            seed: self.seed,
            dt_max: self.dt_max,
            scheme: self.scheme,
            record_paths: self.record_paths,
        }
    }

    fn target(&self) -> Result<f64> {
        self.target_mean.ok_or_else(|| {
            Error::Config("simulation.target_mean is required for this command".into())
        })
    }
}

/// Solver and simulator for cone-constrained mean-variance
/// investment-reinsurance.
#[derive(Debug, Parser)]
#[command(name = "cramer-mv", version, about)]
pub struct CliArgs {
    /// JSON run configuration (omit for the built-in demo instance).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Simulation seed override.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Simulation path-count override.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,
    /// Time-grid step-count override.
    #[arg(long = "grid-steps", global = true, value_name = "N")]
    pub grid_steps: Option<usize>,
    /// Claim-count truncation override.
    #[arg(long, global = true, value_name = "N")]
    pub nmax: Option<usize>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Option<Cmd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Cmd {
    /// Solve the backward system and write `sre.csv`.
    Solve,
    /// Trace the efficient frontier and write `frontier.csv`.
    Frontier,
    /// Simulate the optimal policy and write `simulation.csv`.
    Simulate,
    /// Simulate and statistically test the frontier; writes
    /// `simulation.csv` and `validation.json`, exits nonzero on rejection.
    Validate,
}

fn load_config(args: &CliArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        config.output_dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        config.simulation.seed = seed;
    }
    if let Some(paths) = args.paths {
        config.simulation.paths = paths;
    }
    if let Some(steps) = args.grid_steps {
        config.grid.steps = steps;
    }
    if let Some(nmax) = args.nmax {
        config.grid.n_max = Some(nmax);
    }
    Ok(config)
}

fn solve_configured(config: &RunConfig) -> Result<SreSolution> {
    let model = config.model.build()?;
    solve(&model, &config.grid.build())
}

fn create_writer(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = fs::File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

/// Execute the parsed command line. The caller maps errors to exit codes.
pub fn run(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    if args.dump_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let command = args.command.ok_or_else(|| {
        Error::Config("choose a subcommand: solve, frontier, simulate or validate".into())
    })?;
    let out_dir = PathBuf::from(&config.output_dir);
    match command {
        Cmd::Solve => cmd_solve(&config, &out_dir),
        Cmd::Frontier => cmd_frontier(&config, &out_dir),
        Cmd::Simulate => cmd_simulate(&config, &out_dir),
        Cmd::Validate => cmd_validate(&config, &out_dir),
    }
}

fn cmd_solve(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let sre = solve_configured(config)?;
    let (path, mut w) = create_writer(out_dir, "sre.csv")?;
    sre.write_csv(&mut w)?;
    println!(
        "solved {} steps x {} levels; p1(0,0) = {:.6}, p2(0,0) = {:.6}",
        sre.steps(),
        sre.n_max + 1,
        sre.p1(0, 0),
        sre.p2(0, 0),
    );
    println!(
        "certified bounds [{:.6e}, {:.6e}] (c1 = {:.6})",
        sre.bounds.lower, sre.bounds.upper, sre.bounds.c1
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_frontier(config: &RunConfig, out_dir: &Path) -> Result<()> {
    if config.frontier.targets.is_empty() {
        return Err(Error::Frontier("no frontier targets configured".into()));
    }
    let sre = solve_configured(config)?;
    let points = frontier_table(&sre, config.frontier.initial_wealth, &config.frontier.targets)?;
    let feasible = points.iter().filter(|p| p.feasible).count();
    if feasible == 0 {
        return Err(Error::Frontier(
            "every requested target lies below the riskless mean".into(),
        ));
    }
    let (path, mut w) = create_writer(out_dir, "frontier.csv")?;
    write_frontier_csv(&points, &mut w)?;
    println!("wrote {} ({} targets, {} feasible)", path.display(), points.len(), feasible);
    Ok(())
}

fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let sre = solve_configured(config)?;
    let x = config.frontier.initial_wealth;
    let target = config.simulation.target()?;
    let policy = FeedbackPolicy::from_target(&sre, x, target)?;
    let records = simulate_paths(
        &sre.model,
        &Strategy::feedback(policy),
        x,
        &config.simulation.build(),
    )?;
    let stats = terminal_stats_of(&records)?;
    let (path, mut w) = create_writer(out_dir, "simulation.csv")?;
    write_simulation_csv(&records, &mut w)?;
    println!(
        "simulated {} paths: mean {:.6} (se {:.2e}), variance {:.6} (se {:.2e})",
        stats.n, stats.mean, stats.se_mean, stats.variance, stats.se_variance
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let sre = solve_configured(config)?;
    let target = config.simulation.target()?;
    let (report, records) = validate_frontier_records(
        &sre,
        config.frontier.initial_wealth,
        target,
        &config.simulation.build(),
        config.simulation.analytic_variance_scale,
    )?;
    let (csv_path, mut w) = create_writer(out_dir, "simulation.csv")?;
    write_simulation_csv(&records, &mut w)?;
    let (json_path, mut w) = create_writer(out_dir, "validation.json")?;
    write_validation_json(&report, &mut w)?;
    for check in &report.checks {
        println!(
            "{}: {} (observed {:.6e}, expected {:.6e}, tolerance {:.2e})",
            check.name,
            if check.pass { "pass" } else { "FAIL" },
            check.observed,
            check.expected,
            check.tolerance
        );
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    if !report.pass {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::Validation(format!(
            "statistical validation rejected: {}",
            failed.join(", ")
        )));
    }
    println!("validation passed ({} checks)", report.checks.len());
    Ok(())
}
