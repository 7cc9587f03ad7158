//! Command-line front end: subcommands wiring the library modules together,
//! CSV/JSON emission, and the cross-module invariant suite.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure, 4 invariant violation (`check` only).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::band::VolBand;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gnormal::{self, GNormalLaw, ULaw};
use crate::grid::GridSpec;
use crate::payoff::{Payoff, ShapeHint};
use crate::pde::{self, SolverOptions};
use crate::rng::PortableRng;
use crate::sde::{self, BsdeSpec, SdeBackend, SdeSpec};
use crate::sim::{self, Estimator, VolControl};
use crate::sublinear::{self, RandomVariable, ScenarioSpace};
use crate::tree::{self, GTree, IncrementFamily, SimpleProcess, TreeBackend};

const CONFIG_REFERENCE: &str = "\
Config file: flat `key = value` pairs under [sections]; unknown names are\n\
rejected. Sections and defaults:\n\
  [band]      sigma_lo=0.5 sigma_hi=1.0\n\
  [mean]      mu_lo, mu_hi            (default: the variance band of [band])\n\
  [grid]      x_min=-8 x_max=8 nx=801 t=1 nt=0(auto) cfl_safety=0.9 store_every=0\n\
  [payoff]    kind=call|put|power|abs-cap|table, strike=1, exponent=2, cap=1, file=PATH\n\
  [market]    spot=1 t=1 nx=801       (price)\n\
  [clt]       p_lo=0.4 p_hi=0.5 p_count=11 n_list=4,16,64,256\n\
  [simulate]  n_paths=1000 n_steps=256 theta=band midpoint t=1\n\
  [sde]       x0=1 t=1 n_paths=2000 n_steps=256 theta=midpoint tol=1e-8 max_iter=50 init=x0\n\
  [bsde]      n_steps=6 sigmas=band edges lambda=0.5\n\
  [represent] space_file=PATH directions=200 fresh=1000\n\
  [check]     space_file=PATH samples=1000\n";

#[derive(Parser)]
#[command(
    name = "gexpect",
    about = "Robust expectations under volatility uncertainty",
    after_help = CONFIG_REFERENCE
)]
struct Cli {
    /// Config file path (see --help for the format).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Cap on worker threads for path-parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print the primary result as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the heat-type generating equation and export the surface.
    Gheat,
    /// Solve the first-order drift equation and export the surface.
    Gdrift,
    /// Superhedging bid-ask quote for the payoff on the driftless
    /// multiplicative market.
    Price,
    /// Worst-case central-limit convergence table.
    Clt,
    /// Sample paths under a volatility control and report quadratic
    /// variation diagnostics.
    Simulate,
    /// Picard solve of the multiplicative test SDE on a path backend.
    Sde,
    /// Backward-equation solve on the worst-case tree.
    Bsde,
    /// Recover a representing measure set from a scenario-space oracle.
    Represent,
    /// Run the cross-module invariant suite (exit 4 on violation).
    Check,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Path generation derives per-path RNG streams, so the pool size
        // cannot change results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let outcome = match cli.command {
        Command::Gheat => cmd_gheat(&cli, &config),
        Command::Gdrift => cmd_gdrift(&cli, &config),
        Command::Price => cmd_price(&cli, &config),
        Command::Clt => cmd_clt(&cli, &config),
        Command::Simulate => cmd_simulate(&cli, &config),
        Command::Sde => cmd_sde(&cli, &config),
        Command::Bsde => cmd_bsde(&cli, &config),
        Command::Represent => cmd_represent(&cli, &config),
        Command::Check => return cmd_check(&cli, &config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration/validation problems, 3 for numerical failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DimensionMismatch { .. }
        | Error::EmptyMeasureSet
        | Error::InvalidMeasure(_)
        | Error::InvalidParameter(_)
        | Error::PartitionMismatch(_)
        | Error::StepOutOfRange { .. }
        | Error::ControlOutOfBand { .. }
        | Error::EmptyControls
        | Error::Config(_)
        | Error::Io(_)
        | Error::Json(_) => 2,
        Error::NonFinite(_)
        | Error::CflViolation { .. }
        | Error::NotSublinear(_)
        | Error::StateExplosion { .. }
        | Error::NonContraction(_)
        | Error::MaxIterExceeded { .. }
        | Error::Precondition(_) => 3,
    }
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn emit(cli: &Cli, human: &str, payload: serde_json::Value) {
    if cli.json {
        println!("{payload}");
    } else {
        println!("{human}");
    }
}

fn solver_options(config: &RunConfig) -> Result<SolverOptions> {
    config.boundary_policy()?;
    Ok(SolverOptions {
        cfl_safety: config.cfl_safety()?,
        store_every: config.store_every()?,
    })
}

fn cmd_gheat(cli: &Cli, config: &RunConfig) -> Result<()> {
    let band = config.band()?;
    let grid = config.grid()?;
    let payoff = config.payoff()?;
    let opts = solver_options(config)?;
    let solve = pde::solve_gheat_opts(&payoff, &band, &grid, &opts)?;
    let value = solve.value_at(0.0);

    solve.write_csv(out_file(&cli.out, "gheat_surface.csv")?)?;
    let mut meta = out_file(&cli.out, "gheat_meta.json")?;
    writeln!(meta, "{}", solve.meta_json()?)?;
    let mut summary = out_file(&cli.out, "gheat_value.json")?;
    let payload = json!({ "value_at_origin": value, "payoff": payoff.name, "nt": solve.meta.nt });
    writeln!(summary, "{payload}")?;
    emit(cli, &format!("u({}, 0) = {value}", grid.t_horizon), payload);
    Ok(())
}

fn cmd_gdrift(cli: &Cli, config: &RunConfig) -> Result<()> {
    let mean = config.mean_band()?;
    let grid = config.grid()?;
    let payoff = config.payoff()?;
    let opts = solver_options(config)?;
    let solve = pde::solve_gdrift_opts(&payoff, &mean, &grid, &opts)?;
    let value = solve.value_at(0.0);
    let law = ULaw::new(mean, grid.t_horizon)?;
    let exact = gnormal::u_expect(|v| payoff.eval(v), &law);

    solve.write_csv(out_file(&cli.out, "gdrift_surface.csv")?)?;
    let mut summary = out_file(&cli.out, "gdrift_value.json")?;
    let payload = json!({
        "value_at_origin": value,
        "interval_sup": exact,
        "gap": (value - exact).abs(),
    });
    writeln!(summary, "{payload}")?;
    emit(
        cli,
        &format!("u({}, 0) = {value} (interval sup {exact})", grid.t_horizon),
        payload,
    );
    Ok(())
}

fn cmd_price(cli: &Cli, config: &RunConfig) -> Result<()> {
    let band = config.band()?;
    let payoff = config.payoff()?;
    let spot = config.f64_or("market", "spot", 1.0)?;
    let t = config.f64_or("market", "t", 1.0)?;
    let nx = config.usize_or("market", "nx", 801)?;
    let quote = sde::bid_ask_lognormal(&payoff, spot, &band, t, nx)?;

    let payload = serde_json::to_value(&quote)?;
    let mut out = out_file(&cli.out, "price_quote.json")?;
    writeln!(out, "{}", serde_json::to_string_pretty(&quote)?)?;
    emit(
        cli,
        &format!("bid = {}, ask = {}", quote.bid, quote.ask),
        payload,
    );
    Ok(())
}

fn cmd_clt(cli: &Cli, config: &RunConfig) -> Result<()> {
    let p_lo = config.f64_or("clt", "p_lo", 0.4)?;
    let p_hi = config.f64_or("clt", "p_hi", 0.5)?;
    let p_count = config.usize_or("clt", "p_count", 11)?;
    let n_list = config.usize_list_or("clt", "n_list", &[4, 16, 64, 256])?;
    let family = IncrementFamily::ball(p_lo, p_hi, p_count)?;
    let payoff = match config.str_opt("payoff", "kind") {
        Some(_) => config.payoff()?,
        None => Payoff::abs_cap(2.0),
    };
    let phi = move |x: f64| payoff.eval(x);
    let rows = tree::clt_table(&family, phi, &n_list)?;

    tree::write_clt_csv(&rows, out_file(&cli.out, "clt_table.csv")?)?;
    let payload = serde_json::to_value(&rows)?;
    let mut human = String::new();
    for row in &rows {
        human.push_str(&format!(
            "n = {:>5}: value = {:.8}, |error| = {:.3e}\n",
            row.n, row.value, row.abs_error
        ));
    }
    emit(cli, human.trim_end(), payload);
    Ok(())
}

fn cmd_simulate(cli: &Cli, config: &RunConfig) -> Result<()> {
    let band = config.band()?;
    let n_paths = config.usize_or("simulate", "n_paths", 1000)?;
    let n_steps = config.usize_or("simulate", "n_steps", 256)?;
    let t = config.f64_or("simulate", "t", 1.0)?;
    let mid = 0.5 * (band.sigma_lo + band.sigma_hi);
    let theta = config.f64_or("simulate", "theta", mid)?;
    let control = VolControl::constant("config", theta, t);
    let bundle = sim::sample_paths(&control, &band, n_paths, n_steps, cli.seed)?;
    let report = sim::quadratic_variation_stats(&bundle);

    bundle.write_csv(out_file(&cli.out, "paths.csv")?)?;
    let mut out = out_file(&cli.out, "qv_report.json")?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    let payload = serde_json::to_value(&report)?;
    emit(
        cli,
        &format!(
            "{} paths, QV_T mean = {:.6}, band violations = {:.2}%",
            n_paths,
            report.qv_terminal_mean,
            100.0 * report.violation_fraction
        ),
        payload,
    );
    Ok(())
}

fn cmd_sde(cli: &Cli, config: &RunConfig) -> Result<()> {
    let band = config.band()?;
    let x0 = config.f64_or("sde", "x0", 1.0)?;
    let t = config.f64_or("sde", "t", 1.0)?;
    let mid = 0.5 * (band.sigma_lo + band.sigma_hi);
    let theta = config.f64_or("sde", "theta", mid)?;
    let n_paths = config.usize_or("sde", "n_paths", 2000)?;
    let n_steps = config.usize_or("sde", "n_steps", 256)?;
    let tol = config.f64_or("sde", "tol", 1e-8)?;
    let max_iter = config.usize_or("sde", "max_iter", 50)?;
    let init = config.f64_or("sde", "init", x0)?;

    // The multiplicative test equation dX = X dB with K = 1.
    let spec = SdeSpec::new(|_| 0.0, |_| 0.0, |x| x, 1.0, x0, t)?;
    let backend = SdeBackend::Path {
        control: VolControl::constant("config", theta, t),
        band,
        n_paths,
        n_steps,
        seed: cli.seed,
    };
    let outcome = sde::sde_picard(&spec, &backend, init, tol, max_iter)?;

    let mut log = out_file(&cli.out, "sde_iterations.csv")?;
    writeln!(log, "iteration,weighted_norm")?;
    for (k, norm) in outcome.norms.iter().enumerate() {
        writeln!(log, "{k},{norm}")?;
    }
    let payload = json!({
        "iterations": outcome.iterations,
        "final_norm": outcome.norms.last(),
        "ratios": outcome.ratios(),
        "warnings": outcome.warnings,
    });
    let mut out = out_file(&cli.out, "sde_summary.json")?;
    writeln!(out, "{payload}")?;
    emit(
        cli,
        &format!(
            "converged in {} iterations, final weighted norm {:.3e}",
            outcome.iterations,
            outcome.norms.last().unwrap()
        ),
        payload,
    );
    Ok(())
}

fn cmd_bsde(cli: &Cli, config: &RunConfig) -> Result<()> {
    let band = config.band()?;
    let n_steps = config.usize_or("bsde", "n_steps", 6)?;
    let sigmas = config.f64_list_or("bsde", "sigmas", &[band.sigma_lo, band.sigma_hi])?;
    let lambda = config.f64_or("bsde", "lambda", 0.5)?;
    let payoff = match config.str_opt("payoff", "kind") {
        Some(_) => config.payoff()?,
        None => Payoff::abs_cap(1.0),
    };
    let tree = GTree::new(
        n_steps,
        1.0 / n_steps as f64,
        IncrementFamily::Binomial { sigmas },
        TreeBackend::Enumerate,
    )?;
    let spec = BsdeSpec::new(
        move |path: &[f64]| payoff.eval(path.iter().sum()),
        move |_, y| -lambda * y,
        lambda.abs(),
    );
    let values = sde::bsde_solve(&spec, &tree)?;

    let mut csv = out_file(&cli.out, "bsde_values.csv")?;
    writeln!(csv, "step,t,y_min,y_max")?;
    for (j, slice) in values.iter().enumerate() {
        let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        writeln!(csv, "{j},{},{lo},{hi}", j as f64 * tree.dt)?;
    }
    let payload = json!({ "y0": values[0][0], "n_steps": n_steps, "lambda": lambda });
    let mut out = out_file(&cli.out, "bsde_summary.json")?;
    writeln!(out, "{payload}")?;
    emit(cli, &format!("Y_0 = {}", values[0][0]), payload);
    Ok(())
}

fn cmd_represent(cli: &Cli, config: &RunConfig) -> Result<()> {
    let Some(path) = config.str_opt("represent", "space_file") else {
        return Err(Error::Config(
            "[represent] space_file = PATH is required".into(),
        ));
    };
    let directions = config.usize_or("represent", "directions", 200)?;
    let fresh = config.usize_or("represent", "fresh", 1000)?;
    let text = fs::read_to_string(path)?;
    let space = ScenarioSpace::from_json(&text)?;
    let n = space.n_outcomes;
    let oracle =
        |x: &[f64]| sublinear::evaluate(&space, &RandomVariable(x.to_vec())).expect("valid dims");
    let recovered = sublinear::represent(oracle, n, directions, cli.seed)?;

    let mut rng = PortableRng::new(sim::derive_seed(cli.seed, 1));
    let mut max_err = 0.0_f64;
    for _ in 0..fresh {
        let x: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let a = oracle(&x);
        let b = sublinear::evaluate(&recovered, &RandomVariable(x))?;
        max_err = max_err.max((a - b).abs());
    }

    let mut out = out_file(&cli.out, "recovered_space.json")?;
    writeln!(out, "{}", recovered.to_json()?)?;
    let payload = json!({
        "measures_recovered": recovered.measures.len(),
        "fresh_directions": fresh,
        "max_abs_error": max_err,
    });
    let mut report = out_file(&cli.out, "represent_report.json")?;
    writeln!(report, "{payload}")?;
    emit(
        cli,
        &format!(
            "recovered {} measures, max error {max_err:.3e} on {fresh} fresh directions",
            recovered.measures.len()
        ),
        payload,
    );
    Ok(())
}

struct CheckTally {
    failures: usize,
}

impl CheckTally {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn cmd_check(cli: &Cli, config: &RunConfig) -> ExitCode {
    match run_check_suite(cli, config) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} invariant(s) violated");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Condensed cross-module invariant battery; returns the failure count.
fn run_check_suite(cli: &Cli, config: &RunConfig) -> Result<usize> {
    let mut tally = CheckTally { failures: 0 };
    let samples = config.usize_or("check", "samples", 500)?;
    let band = config.band()?;

    // Optional scenario-space file validation.
    if let Some(path) = config.str_opt("check", "space_file") {
        let outcome = fs::read_to_string(path)
            .map_err(Error::from)
            .and_then(|text| ScenarioSpace::from_json(&text));
        match outcome {
            Ok(space) => {
                let report = sublinear::check_axioms(&space, samples, cli.seed)?;
                tally.record(
                    "scenario-space axioms",
                    report.max_violation() <= 1e-10,
                    format!("max violation {:.3e}", report.max_violation()),
                );
            }
            Err(e) => tally.record("scenario-space file", false, format!("{e}")),
        }
    }

    // Sublinear axioms on the ball example.
    let ball = sublinear::ball_example_space(0.4, 0.5, 11)?;
    let report = sublinear::check_axioms(&ball, samples, cli.seed)?;
    tally.record(
        "sublinear axioms (ball example)",
        report.max_violation() <= 1e-10,
        format!("max violation {:.3e}", report.max_violation()),
    );

    // PDE scheme invariants.
    let grid = GridSpec::new(-8.0, 8.0, 201, 1.0, 0)?;
    let call = Payoff::call(0.1);
    let base = pde::solve_gheat(&call, &band, &grid)?;
    let shifted = Payoff::new(|x| (x - 0.1).max(0.0) + 2.0).with_growth(1);
    let shifted = pde::solve_gheat(&shifted, &band, &grid)?;
    let cash_gap = base
        .final_slice()
        .iter()
        .zip(shifted.final_slice())
        .map(|(a, b)| (b - a - 2.0).abs())
        .fold(0.0, f64::max);
    tally.record(
        "heat scheme cash translation",
        cash_gap <= 1e-10,
        format!("max gap {cash_gap:.3e}"),
    );

    let wide = VolBand::new(band.sigma_lo * 0.5, band.sigma_hi)?;
    let violation = pde::comparison_check(&call, &call, &wide, &band, &grid)?;
    tally.record(
        "comparison ordering",
        violation <= 1e-12,
        format!("violation {violation:.3e}"),
    );

    // Interval-maximal law vs drift equation.
    let mean = config.mean_band()?;
    let law = ULaw::new(mean, 1.0)?;
    let drift_grid = GridSpec::new(-4.0, 4.0, 801, 1.0, 0)?;
    let phi = Payoff::new(|v: f64| v * v);
    let exact = gnormal::u_expect(|v| phi.eval(v), &law);
    let solved = pde::solve_gdrift(&phi, &mean, &drift_grid)?.value_at(0.0);
    tally.record(
        "interval law vs drift equation",
        (exact - solved).abs() <= 2.0 * drift_grid.dx(),
        format!("|{exact:.6} - {solved:.6}|"),
    );

    // Tree identities.
    let tree = GTree::new(
        6,
        1.0 / 6.0,
        IncrementFamily::binomial_from_band(&band, 0),
        TreeBackend::Enumerate,
    )?;
    let eta = SimpleProcess::per_step(6, |j, prefix: &[f64]| {
        (prefix.iter().sum::<f64>() * (j as f64 + 1.0)).tanh() + 0.2
    });
    let iso = tree::isometry_check(&tree, &eta)?;
    tally.record(
        "stochastic-integral isometry",
        iso.gap <= 1e-12,
        format!("gap {:.3e}", iso.gap),
    );
    let zero = SimpleProcess::per_step(6, |_, _| 0.0);
    let dev = tree::gmartingale_check(&tree, &eta, &zero, 0.0)?;
    tally.record(
        "martingale deviation",
        dev <= 1e-12,
        format!("max deviation {dev:.3e}"),
    );

    // Convex fast path agreement against the full solver.
    let lawg = GNormalLaw::new(band, 1.0)?;
    let fast = gnormal::gnormal_expect(&Payoff::power(2), ShapeHint::Convex, &lawg, None)?;
    let slow = gnormal::gnormal_expect(&Payoff::power(2), ShapeHint::General, &lawg, None)?;
    tally.record(
        "convex fast path vs PDE",
        (fast.value - slow.value).abs() <= 5e-4 * (1.0 + fast.value.abs()),
        format!("{:.6} vs {:.6}", fast.value, slow.value),
    );

    // Scenario lower bound below the robust value.
    let controls = vec![
        VolControl::constant("lo", band.sigma_lo, 1.0),
        VolControl::constant("hi", band.sigma_hi, 1.0),
    ];
    let phi = Payoff::abs_cap(1.0);
    let (bound, _) = sim::scenario_sup(|x| phi.eval(x), &controls, &band, Estimator::ExactGauss, cli.seed)?;
    let robust = pde::solve_gheat(&phi, &band, &GridSpec::new(-8.0, 8.0, 801, 1.0, 0)?)?.value_at(0.0);
    tally.record(
        "scenario bound below robust value",
        bound <= robust + 2e-3,
        format!("{bound:.6} <= {robust:.6} + 2e-3"),
    );

    // Quote ordering and band monotonicity.
    let quote = sde::bid_ask_lognormal(&Payoff::call(1.0), 1.0, &band, 1.0, 401)?;
    tally.record(
        "bid <= ask",
        quote.bid <= quote.ask + 1e-10,
        format!("[{:.6}, {:.6}]", quote.bid, quote.ask),
    );

    Ok(tally.failures)
}
