//! Command-line front end: one subcommand per experiment, CSV output.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;

use crate::cluster::{empirical_match_probability, resolve_n_m_max};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::events::campbell_identity_check;
use crate::geometry::{empirical_density, matern_ii_density, ParentKind, ParentProcess, Point};
use crate::interference::{
    achievable_rate_bound, empirical_lt, estimate_slot_count_law, exact_slot_rate_oracle,
    lt_interference_approx, sample_interference, sample_interference_modes, InterferenceMode,
};
use crate::metrics::MetricsEngine;
use crate::network::NetworkConfig;
use crate::output::{suffixed_path, Cell, Table};
use crate::rng::Streams;
use crate::stats::{paired_difference, MetricEstimate};
use crate::tradeoff::{evaluate_grid, GridPoint, TradeoffPoint};

#[derive(Debug, Parser)]
#[command(
    name = "d2dsim",
    version,
    about = "Clustered D2D caching network simulator"
)]
pub struct Cli {
    /// Experiment file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment: fig4, fig5, fig6, fig7, fig8-matern-winner, fig9-grid-winner.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Output CSV; variants get `-<name>` before the extension.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Monte Carlo interference transform against its closed-form approximation.
    LtCompare,
    /// Local, global and average rate metrics over the rate axis.
    TlSweep,
    /// Best global metric for each average-rate floor.
    TradeoffGlobal,
    /// Best local metric for each average-rate floor and parent-density floor.
    TradeoffLocal,
    /// Best global metric for each local-metric floor at fixed rates.
    TradeoffLocalglobal,
    /// Empirical parent density against its formula.
    DensityCheck,
    /// Run the built-in consistency checks; exit status 1 on any failure.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::LtCompare => "lt-compare",
            Command::TlSweep => "tl-sweep",
            Command::TradeoffGlobal => "tradeoff-global",
            Command::TradeoffLocal => "tradeoff-local",
            Command::TradeoffLocalglobal => "tradeoff-localglobal",
            Command::DensityCheck => "density-check",
            Command::Validate => "validate",
        }
    }
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io(_) => 1,
    }
}

/// Loads the experiment and applies command-line overrides.
pub fn load_experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let mut exp = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Error::config("one of --config or --preset is required")),
    };
    if let Some(seed) = cli.seed {
        exp.run.seed = seed;
    }
    if let Some(n) = cli.replicates {
        exp.run.replicates = n;
    }
    exp.check()?;
    Ok(exp)
}

/// Runs the parsed command; `Ok(false)` means a validation check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let exp = load_experiment(cli)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cli.command.name())));
    match cli.threads {
        Some(0) => Err(Error::config("--threads must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(e.to_string()))?
            .install(|| dispatch(cli.command, &exp, &out)),
        None => dispatch(cli.command, &exp, &out),
    }
}

fn dispatch(command: Command, exp: &ExperimentConfig, out: &Path) -> Result<bool> {
    let root = Streams::new(exp.run.seed);
    let networks = exp.networks()?;
    let mut all_pass = true;
    for (idx, (name, cfg)) in networks.iter().enumerate() {
        let streams = root.derive_index("variant", idx as u64);
        let (mut table, pass) = match command {
            Command::LtCompare => (lt_compare(exp, cfg, &streams)?, true),
            Command::TlSweep => (tl_sweep(exp, cfg, &streams)?, true),
            Command::TradeoffGlobal | Command::TradeoffLocal | Command::TradeoffLocalglobal => {
                (tradeoff(command, exp, cfg, &streams)?, true)
            }
            Command::DensityCheck => (density_check(exp, cfg, &streams)?, true),
            Command::Validate => validate(exp, cfg, &streams)?,
        };
        all_pass &= pass;
        let mut meta = Table::new(&[]);
        meta.meta("command", command.name())
            .meta("config_sha256", exp.hash())
            .meta("seed", exp.run.seed)
            .meta("replicates", exp.run.replicates)
            .meta("variant", name.as_deref().unwrap_or("-"));
        meta.metadata.append(&mut table.metadata);
        table.metadata = meta.metadata;
        let path = suffixed_path(out, name.as_deref());
        table.write(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(all_pass)
}

fn lt_compare(exp: &ExperimentConfig, cfg: &NetworkConfig, streams: &Streams) -> Result<Table> {
    let lt = &exp.lt_compare;
    let etas = lt.etas()?;
    let n_m_max = resolve_n_m_max(cfg, streams)?;
    let law = estimate_slot_count_law(cfg, n_m_max, exp.run.law_replicates, streams)?;
    let mut table = Table::new(&[
        "distance",
        "eta",
        "lt_mc",
        "lt_mc_se",
        "lt_approx",
        "abs_diff",
    ]);
    table
        .meta("observer_slots", lt.observer_slots)
        .meta("n_m_max", n_m_max);
    for (k, &dist) in lt.distances.iter().enumerate() {
        let d = Point::new(dist, 0.0);
        let samples = sample_interference(
            cfg,
            &law,
            d,
            lt.observer_slots,
            exp.run.replicates,
            InterferenceMode::WorstCaseB1,
            &streams.derive_index("distance", k as u64),
        )?;
        for (&eta, mc) in etas.iter().zip(empirical_lt(&samples, &etas)) {
            let approx = lt_interference_approx(eta, d, lt.observer_slots, cfg, &law)?;
            table.push(vec![
                dist.into(),
                eta.into(),
                mc.value.into(),
                mc.std_error.into(),
                approx.into(),
                (mc.value - approx).abs().into(),
            ]);
        }
    }
    Ok(table)
}

fn tl_sweep(exp: &ExperimentConfig, cfg: &NetworkConfig, streams: &Streams) -> Result<Table> {
    let rates = exp.sweep.grid()?.rates;
    let engine = MetricsEngine::new(cfg, &exp.metrics_options(), streams)?;
    let points = engine.evaluate(&rates)?;
    let mut table = Table::new(&[
        "rate",
        "t_l",
        "t_l_se",
        "t_g",
        "t_g_se",
        "avg_rate",
        "avg_rate_se",
        "replicates",
        "method",
    ]);
    table
        .meta("n_m_max", engine.n_m_max())
        .meta("p_m", cfg.match_probability());
    for p in points {
        table.push(vec![
            p.rate.into(),
            p.local.value.into(),
            p.local.std_error.into(),
            p.global.value.into(),
            p.global.std_error.into(),
            p.average_rate.value.into(),
            p.average_rate.std_error.into(),
            p.local.replicates.into(),
            p.local.method.as_str().into(),
        ]);
    }
    Ok(table)
}

const FRONTIER_COLUMNS: [&str; 15] = [
    "feasible",
    "objective",
    "objective_se",
    "cluster_radius",
    "lambda",
    "delta",
    "parent_density",
    "rate",
    "t_l",
    "t_l_se",
    "t_g",
    "t_g_se",
    "avg_rate",
    "avg_rate_se",
    "replicates",
];

fn frontier_row(leading: &[f64], t: &TradeoffPoint) -> Vec<Cell> {
    let mut row: Vec<Cell> = leading.iter().map(|&v| v.into()).collect();
    row.push(t.feasible.into());
    let nan = f64::NAN;
    let est = |e: Option<MetricEstimate>| e.map_or((nan, nan), |e| (e.value, e.std_error));
    let (obj, obj_se) = if t.feasible {
        (t.objective.value, t.objective.std_error)
    } else {
        (nan, nan)
    };
    row.extend([obj.into(), obj_se.into()]);
    let g = t.argmax.as_ref();
    let field = |f: fn(&GridPoint) -> f64| g.map_or(nan, f);
    row.extend([
        field(|p| p.cluster_radius).into(),
        field(|p| p.lambda).into(),
        field(|p| p.delta).into(),
        field(|p| p.parent_density).into(),
        field(|p| p.rate).into(),
    ]);
    for e in [
        g.map(|p| p.local),
        g.map(|p| p.global),
        g.map(|p| p.average_rate),
    ] {
        let (v, se) = est(e);
        row.extend([v.into(), se.into()]);
    }
    row.push(g.map_or(0, |p| p.local.replicates).into());
    row
}

fn tradeoff(
    command: Command,
    exp: &ExperimentConfig,
    cfg: &NetworkConfig,
    streams: &Streams,
) -> Result<Table> {
    let mut grid = exp.sweep.grid()?;
    if command == Command::TradeoffLocalglobal {
        grid.rates.extend(exp.sweep.fixed_rates.iter().copied());
        grid.rates.sort_by(f64::total_cmp);
        grid.rates.dedup();
    }
    let sweep = evaluate_grid(cfg, &grid, &exp.metrics_options(), streams)?;
    let (leading, rows): (&[&str], Vec<(Vec<f64>, TradeoffPoint)>) = match command {
        Command::TradeoffGlobal => {
            let floors = exp.sweep.rate_floors.values()?;
            (
                &["rate_floor"],
                sweep
                    .global_frontier(&floors)
                    .into_iter()
                    .map(|t| (vec![t.constraint], t))
                    .collect(),
            )
        }
        Command::TradeoffLocal => {
            let floors = exp.sweep.rate_floors.values()?;
            let rows = exp
                .sweep
                .density_floors
                .iter()
                .flat_map(|&m| {
                    sweep
                        .local_frontier(&floors, m)
                        .into_iter()
                        .map(move |t| (vec![m, t.constraint], t))
                })
                .collect();
            (&["min_density", "rate_floor"], rows)
        }
        _ => {
            let floors = exp.sweep.local_floors.values()?;
            let rows = exp
                .sweep
                .fixed_rates
                .iter()
                .flat_map(|&r| {
                    sweep
                        .local_global_frontier(r, &floors)
                        .into_iter()
                        .map(move |t| (vec![r, t.constraint], t))
                })
                .collect();
            (&["fixed_rate", "local_floor"], rows)
        }
    };
    let columns: Vec<&str> = leading
        .iter()
        .chain(FRONTIER_COLUMNS.iter())
        .copied()
        .collect();
    let mut table = Table::new(&columns);
    table.meta("grid_points", sweep.points.len());
    for (lead, t) in rows {
        table.push(frontier_row(&lead, &t));
    }
    Ok(table)
}

/// Values of `λπδ²` probed by the density check.
pub const DENSITY_LOADS: [f64; 3] = [0.5, 2.0, 10.0];
/// Observation window radius in units of the clearance.
pub const DENSITY_WINDOW_FACTOR: f64 = 50.0;

fn density_check(exp: &ExperimentConfig, cfg: &NetworkConfig, streams: &Streams) -> Result<Table> {
    let delta = cfg.parent.delta;
    let radius = DENSITY_WINDOW_FACTOR * delta;
    let area = std::f64::consts::PI * delta * delta;
    let procs: Vec<(f64, ParentProcess, f64)> = match cfg.parent.kind {
        ParentKind::MaternIi => DENSITY_LOADS
            .iter()
            .map(|&load| {
                let lambda = load / area;
                Ok((
                    load,
                    ParentProcess::matern(lambda, delta)?,
                    matern_ii_density(lambda, delta),
                ))
            })
            .collect::<Result<_>>()?,
        ParentKind::TranslatedGrid => {
            vec![(f64::NAN, ParentProcess::grid(delta)?, 1.0 / (delta * delta))]
        }
    };
    let mut table = Table::new(&[
        "lambda_pi_delta_sq",
        "lambda",
        "delta",
        "window_radius",
        "density_mc",
        "density_mc_se",
        "density_formula",
        "rel_error",
    ]);
    for (k, (load, proc, formula)) in procs.into_iter().enumerate() {
        let est = empirical_density(
            &proc,
            radius,
            exp.run.replicates,
            &streams.derive_index("load", k as u64),
        )?;
        table.push(vec![
            load.into(),
            proc.lambda.into(),
            delta.into(),
            radius.into(),
            est.value.into(),
            est.std_error.into(),
            formula.into(),
            ((est.value - formula) / formula).into(),
        ]);
    }
    Ok(table)
}

/// Instances of the time-sharing rate comparison run by `validate`.
pub const RATE_BOUND_INSTANCES: usize = 1000;

fn validate(
    exp: &ExperimentConfig,
    cfg: &NetworkConfig,
    streams: &Streams,
) -> Result<(Table, bool)> {
    let mut table = Table::new(&["check", "value", "reference", "std_error", "pass"]);
    let mut all = true;
    let mut record =
        |table: &mut Table, check: &str, value: f64, reference: f64, se: f64, pass: bool| {
            println!(
                "{} {check}: value={value:.6e} reference={reference:.6e} se={se:.3e}",
                if pass { "PASS" } else { "FAIL" }
            );
            all &= pass;
            table.push(vec![
                check.into(),
                value.into(),
                reference.into(),
                se.into(),
                pass.into(),
            ]);
        };
    let reps = exp.run.replicates;

    // Parent density on a window of 20 clearances.
    let delta = cfg.parent.delta;
    let density = empirical_density(
        &cfg.parent,
        20.0 * delta,
        reps.min(400),
        &streams.derive("density"),
    )?;
    let formula = cfg.parent_density();
    let pass = (density.value - formula).abs() <= 3.0 * density.std_error + 1e-12 * formula;
    record(
        &mut table,
        "parent-density",
        density.value,
        formula,
        density.std_error,
        pass,
    );

    // Match probability from fully sampled clusters.
    let pm = empirical_match_probability(cfg, reps.max(10_000), &streams.derive("match"))?;
    let formula = cfg.match_probability();
    let pass = (pm.value - formula).abs() <= 3.0 * pm.std_error;
    record(
        &mut table,
        "match-probability",
        pm.value,
        formula,
        pm.std_error,
        pass,
    );

    // Time-sharing rate never below its averaged-interference bound.
    let violations = (0..RATE_BOUND_INSTANCES as u64)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = streams.stream("rate-bound", i);
            let n1 = 1usize << rng.random_range(0..7);
            let phases: Vec<f64> = (0..rng.random_range(1..17))
                .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
                .collect();
            let signal = 10f64.powf(rng.random_range(-3.0..3.0));
            let mean = phases.iter().sum::<f64>() / phases.len() as f64;
            exact_slot_rate_oracle(signal, &phases, n1)
                < achievable_rate_bound(signal, mean, n1) * (1.0 - 1e-12)
        })
        .count();
    record(
        &mut table,
        "rate-bound",
        violations as f64,
        0.0,
        0.0,
        violations == 0,
    );

    // One interferer per slot gives the smallest transform.
    let n_m_max = resolve_n_m_max(cfg, streams)?;
    let law = estimate_slot_count_law(cfg, n_m_max, exp.run.law_replicates, streams)?;
    let n1 = exp.lt_compare.observer_slots;
    for (k, &dist) in exp.lt_compare.distances.iter().enumerate() {
        let d = Point::new(dist, 0.0);
        let s = streams.derive_index("b1-order", k as u64);
        let modes = [InterferenceMode::WorstCaseB1, InterferenceMode::RandomB];
        let cols = sample_interference_modes(cfg, &law, d, n1, reps, &modes, &s)?;
        let (b1, rb) = (&cols[0], &cols[1]);
        for eta in [exp.lt_compare.eta_min, exp.lt_compare.eta_max] {
            let lt = |xs: &[f64]| xs.iter().map(|i| (-eta * i).exp()).collect::<Vec<f64>>();
            let (diff, se) = paired_difference(&lt(b1), &lt(rb));
            let name = format!("single-interferer-lower-bound d={dist} eta={eta:e}");
            record(&mut table, &name, diff, 0.0, se, diff <= 3.0 * se + 1e-12);
        }
    }

    // Campbell identity between a stationary window and the typical cluster.
    let rate = 0.05;
    let chk = campbell_identity_check(
        cfg,
        rate,
        3.0 * delta,
        2.0 * delta,
        n_m_max,
        reps,
        &streams.derive("campbell"),
    )?;
    let se = chk.direct.std_error.hypot(chk.palm.std_error);
    record(
        &mut table,
        "campbell",
        chk.direct.value,
        chk.palm.value,
        se,
        chk.z_score.abs() < 3.0,
    );

    Ok((table, all))
}
