//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use robust_transfer::detect::{detect_sources, DetectConfig, DEFAULT_EPSILON0};
use robust_transfer::experiments::{
    aggregate, emit_plot, ingest_real_data, read_aggregate_csv, read_split, run_detection_experiment,
    run_known_source_experiment, run_real_data, write_aggregate_csv, write_manifest, write_results_csv,
    write_selections_csv, ExperimentGrid, IngestOptions, PredictionLoss,
};
use robust_transfer::simgen::{dump_scenario, gen_scenario_rep, DesignKind, ErrorDist, ScenarioConfig};
use robust_transfer::solver::{default_gamma, fit, fit_cv, CvOptions, PathOptions, SolverConfig};
use robust_transfer::transfer::{oracle_fit, TransferConfig};
use robust_transfer::{CoefVector, Dataset, Error};

#[derive(Parser, Debug)]
#[command(name = "rtl", version, about = "Robust transfer learning with penalized Huber regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Penalized Huber fit on one dataset.
    Fit(FitArgs),
    /// Fuse-then-debias fit with a known set of transferable sources.
    Oracle(OracleArgs),
    /// Detect transferable sources, then fit with the selected ones.
    Detect(DetectArgs),
    /// Simulation studies and scenario dumps.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Grouped real-data pipeline.
    #[command(subcommand)]
    Realdata(RealdataCommand),
    /// Chart an aggregate table as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolverArgs {
    /// Elastic-net mixing weight in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Huber threshold; estimated from the target response when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// Fixed penalty level; cross-validated when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 100)]
    n_lambda: usize,
    /// Smallest λ as a fraction of λ_max; chosen from n and p when omitted.
    #[arg(long)]
    lambda_ratio: Option<f64>,
    #[arg(long, default_value_t = SolverConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iter)]
    max_iter: usize,
    #[arg(long)]
    penalize_intercept: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn cv(&self) -> CvOptions {
        CvOptions {
            folds: self.folds,
            seed: self.seed,
            path: PathOptions {
                n_lambda: self.n_lambda,
                ratio: self.lambda_ratio,
            },
            tol: self.tol,
            max_iter: self.max_iter,
            penalize_intercept: self.penalize_intercept,
        }
    }

    fn gamma_for(&self, d: &Dataset) -> Result<f64, Error> {
        match self.gamma {
            Some(g) => Ok(g),
            None => default_gamma(d.y(), None),
        }
    }

    fn transfer(&self, target: &Dataset) -> Result<TransferConfig, Error> {
        let mut tc = TransferConfig::new(self.alpha, self.gamma_for(target)?);
        tc.lambda_w = self.lambda;
        tc.cv = self.cv();
        Ok(tc)
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// CSV with a `y` column and covariates `x1..xp`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Coefficient CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OracleArgs {
    #[arg(long)]
    target: PathBuf,
    /// Transferable source CSV; repeat for several.
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
    /// Fixed debiasing penalty; cross-validated when omitted.
    #[arg(long)]
    lambda_delta: Option<f64>,
    /// Pool the target once per source.
    #[arg(long)]
    replicate_target: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct DetectArgs {
    #[arg(long)]
    target: PathBuf,
    /// Candidate source CSV; repeat for several.
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON0)]
    epsilon0: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Detection report CSV (losses and selection flags).
    #[arg(long)]
    out: PathBuf,
    /// Final coefficient CSV.
    #[arg(long)]
    coef_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SimulateCommand {
    /// Target versus Oracle on the known-source design.
    Known(SimulateArgs),
    /// Target, Oracle, Naive and Detect on the unknown-source design.
    Unknown(SimulateArgs),
    /// Write one replication's datasets and truth to a directory.
    Dump(DumpArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DistArg {
    Normal,
    Cauchy,
    MixedNormal,
}

impl From<DistArg> for ErrorDist {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Normal => ErrorDist::Normal,
            DistArg::Cauchy => ErrorDist::Cauchy,
            DistArg::MixedNormal => ErrorDist::MixedNormal,
        }
    }
}

/// Scenario sizes; unset values fall back to the design's preset.
#[derive(Args, Debug, Clone, Serialize)]
struct ScenarioArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    nk: Option<usize>,
    /// Number of sources.
    #[arg(long = "S")]
    s: Option<usize>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    s_toeplitz: Option<usize>,
    /// AR(1) correlation for the known-source covariance (identity if unset).
    #[arg(long)]
    ar_rho: Option<f64>,
    /// Scale Gaussian perturbations so the expected ℓ₁ distance equals h.
    #[arg(long)]
    exact_l1_mean: bool,
    /// Published sizes (p = 500) instead of the desk-scale preset.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioArgs {
    fn config(&self, design: DesignKind) -> ScenarioConfig {
        let mut c = match (design, self.paper_scale) {
            (DesignKind::KnownSource31, false) => ScenarioConfig::known_source_desk(),
            (DesignKind::KnownSource31, true) => ScenarioConfig::known_source_paper(),
            (DesignKind::UnknownSource32, false) => ScenarioConfig::unknown_source_desk(),
            (DesignKind::UnknownSource32, true) => ScenarioConfig::unknown_source_paper(),
        };
        c.p = self.p.unwrap_or(c.p);
        c.n0 = self.n0.unwrap_or(c.n0);
        c.nk = self.nk.unwrap_or(c.nk);
        c.s = self.s.unwrap_or(c.s);
        c.ell = self.ell.unwrap_or(c.ell);
        c.s_toeplitz = self.s_toeplitz.unwrap_or(c.s_toeplitz);
        c.ar_rho = self.ar_rho;
        c.exact_l1_mean = self.exact_l1_mean;
        c.seed = self.seed;
        c
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Similarity levels; repeatable (design default when omitted).
    #[arg(long)]
    h: Vec<f64>,
    /// Numbers of informative sources; repeatable.
    #[arg(long)]
    k_informative: Vec<usize>,
    #[arg(long, value_enum)]
    error_dist: Vec<DistArg>,
    #[arg(long)]
    alpha: Vec<f64>,
    /// Replications per grid point (25 at desk scale, 200 with --paper-scale).
    #[arg(long)]
    replications: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON0)]
    epsilon0: f64,
    /// Fixed Huber threshold; estimated per target when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Record per-fit wall time (makes the results CSV run-dependent).
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DesignArg {
    Known,
    Unknown,
}

#[derive(Args, Debug, Serialize)]
struct DumpArgs {
    #[arg(long, value_enum)]
    design: DesignArg,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    k_informative: Option<usize>,
    #[arg(long, value_enum)]
    error_dist: Option<DistArg>,
    #[arg(long, default_value_t = 0)]
    rep: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum RealdataCommand {
    /// Split a grouped CSV into target train/test and per-group sources.
    Ingest(IngestArgs),
    /// Fit Target, Naive and Detect on an ingested split.
    Run(RunArgs),
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "critical_temp")]
    response: String,
    #[arg(long, default_value = "number_of_elements")]
    group_column: String,
    #[arg(long, default_value = "4")]
    target_group: String,
    /// Column to one-hot encode; repeatable.
    #[arg(long)]
    categorical: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the split CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum LossArg {
    Squared,
    Huber,
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    /// Directory written by `realdata ingest`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON0)]
    epsilon0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    loss: LossArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PlotArgs {
    /// Aggregate CSV written by `simulate`.
    #[arg(long)]
    aggregate: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type CliResult = Result<(), Failure>;

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_coef(coef: &CoefVector, out: Option<&Path>) -> Result<(), Error> {
    let mut text = String::from("term,value\n");
    text.push_str(&format!("intercept,{}\n", coef.intercept));
    for (j, b) in coef.slopes.iter().enumerate() {
        text.push_str(&format!("x{},{}\n", j + 1, b));
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_sources(paths: &[PathBuf]) -> Result<Vec<Dataset>, Error> {
    paths
        .iter()
        .enumerate()
        .map(|(k, p)| Dataset::read_csv(p, format!("source-{}", k + 1)))
        .collect()
}

fn not_converged(what: &str) -> Failure {
    Failure::Numerical(format!("{what} did not converge"))
}

fn cmd_fit(a: &FitArgs) -> CliResult {
    let d = Dataset::read_csv(&a.data, "data")?;
    let s = &a.solver;
    let gamma = s.gamma_for(&d)?;
    let result = match s.lambda {
        Some(l) => {
            let cfg = SolverConfig {
                tol: s.tol,
                max_iter: s.max_iter,
                penalize_intercept: s.penalize_intercept,
                ..SolverConfig::new(gamma, s.alpha, l)
            };
            fit(&d, &cfg, None)?
        }
        None => fit_cv(&d, None, s.alpha, gamma, &s.cv())?.0,
    };
    write_coef(&result.coef, a.out.as_deref())?;
    if let Some(out) = &a.out {
        write_manifest(manifest_path(out), "fit", s.seed, a)?;
    }
    eprintln!(
        "lambda {} objective {} iterations {} kkt {:e}",
        result.lambda, result.objective, result.iterations, result.kkt_residual
    );
    if !result.converged {
        return Err(not_converged("fit"));
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> CliResult {
    let target = Dataset::read_csv(&a.target, "target")?;
    let sources = read_sources(&a.sources)?;
    let mut tc = a.solver.transfer(&target)?;
    tc.lambda_delta = a.lambda_delta;
    tc.replicate_target = a.replicate_target;
    let f = oracle_fit(&target, &sources, &tc, a.solver.seed)?;
    write_coef(&f.beta_hat, a.out.as_deref())?;
    if let Some(out) = &a.out {
        write_manifest(manifest_path(out), "oracle", a.solver.seed, a)?;
    }
    eprintln!("lambda_w {} lambda_delta {}", f.lambda_w, f.lambda_delta);
    if !f.converged {
        return Err(not_converged("oracle fit"));
    }
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> CliResult {
    let target = Dataset::read_csv(&a.target, "target")?;
    let sources = read_sources(&a.sources)?;
    let dc = DetectConfig {
        epsilon0: a.epsilon0,
        transfer: a.solver.transfer(&target)?,
    };
    let report = detect_sources(&target, &sources, &dc, a.solver.seed)?;
    report.write_csv(&a.out)?;
    write_manifest(manifest_path(&a.out), "detect", a.solver.seed, a)?;
    if let Some(path) = &a.coef_out {
        write_coef(&report.final_fit.beta_hat, Some(path))?;
    }
    let ids: Vec<String> = report.selected.iter().map(|k| (k + 1).to_string()).collect();
    eprintln!("selected sources: [{}]", ids.join(", "));
    if !report.final_fit.converged {
        return Err(not_converged("final fit"));
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, design: DesignKind) -> CliResult {
    let base = a.scenario.config(design);
    let default_reps = if a.scenario.paper_scale { 200 } else { 25 };
    let mut grid = ExperimentGrid::new(base, a.replications.unwrap_or(default_reps));
    if !a.h.is_empty() {
        grid.h_values = a.h.clone();
    }
    if !a.k_informative.is_empty() {
        grid.k_values = a.k_informative.clone();
    }
    if !a.error_dist.is_empty() {
        grid.dists = a.error_dist.iter().map(|&d| d.into()).collect();
    }
    if !a.alpha.is_empty() {
        grid.alphas = a.alpha.clone();
    }
    grid.epsilon0 = a.epsilon0;
    grid.gamma = a.gamma;
    grid.workers = a.workers;
    grid.timing = a.timing;

    let rows = match design {
        DesignKind::KnownSource31 => run_known_source_experiment(&grid)?,
        DesignKind::UnknownSource32 => run_detection_experiment(&grid)?,
    };
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    write_results_csv(&rows, a.out.join("results.csv"))?;
    let agg = aggregate(&rows);
    write_aggregate_csv(&agg, a.out.join("aggregate.csv"))?;
    if design == DesignKind::UnknownSource32 {
        write_selections_csv(&rows, a.out.join("selections.csv"))?;
    }
    emit_plot(&agg, a.out.join("plot.svg"))?;
    let command = match design {
        DesignKind::KnownSource31 => "simulate known",
        DesignKind::UnknownSource32 => "simulate unknown",
    };
    write_manifest(a.out.join("manifest.json"), command, grid.base.seed, &grid)?;

    for r in &agg {
        eprintln!(
            "{:<6} h={} k={} {} alpha={}: mean {:.4} (se {:.4}, n {}, nonconverged {})",
            r.method.name(),
            r.h,
            r.k_informative,
            r.dist.name(),
            r.alpha,
            r.mean_coef_mse,
            r.se_coef_mse,
            r.replications,
            r.nonconverged
        );
    }
    if rows.iter().all(|r| !r.converged) {
        return Err(Failure::Numerical("every fit failed to converge".into()));
    }
    Ok(())
}

fn cmd_dump(a: &DumpArgs) -> CliResult {
    let design = match a.design {
        DesignArg::Known => DesignKind::KnownSource31,
        DesignArg::Unknown => DesignKind::UnknownSource32,
    };
    let mut cfg = a.scenario.config(design);
    cfg.h = a.h.unwrap_or(cfg.h);
    cfg.k_informative = a.k_informative.unwrap_or(cfg.k_informative);
    if let Some(d) = a.error_dist {
        cfg.error_dist = d.into();
    }
    let sc = gen_scenario_rep(&cfg, a.rep)?;
    dump_scenario(&cfg, a.rep, &sc, &a.out)?;
    eprintln!("wrote {} datasets to {}", sc.sources.len() + 1, a.out.display());
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> CliResult {
    let opts = IngestOptions {
        response: a.response.clone(),
        group_column: a.group_column.clone(),
        target_group: a.target_group.clone(),
        categorical: a.categorical.clone(),
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    let split = ingest_real_data(&a.data, &opts)?;
    split.write(&a.out)?;
    write_manifest(a.out.join("manifest.json"), "realdata ingest", a.seed, a)?;
    let sizes: Vec<String> = split
        .sources
        .iter()
        .zip(&split.source_groups)
        .map(|(s, g)| format!("{g}:{}", s.n()))
        .collect();
    eprintln!(
        "target train {} test {}; sources [{}]; {} covariates",
        split.target_train.n(),
        split.target_test.n(),
        sizes.join(", "),
        split.columns.len()
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> CliResult {
    let split = read_split(&a.split)?;
    let loss = match a.loss {
        LossArg::Squared => PredictionLoss::Squared,
        LossArg::Huber => PredictionLoss::Huber,
    };
    let res = run_real_data(&split, a.alpha, a.gamma, a.epsilon0, a.seed, loss)?;
    res.write_csv(&a.out)?;
    write_manifest(manifest_path(&a.out), "realdata run", a.seed, a)?;
    for r in &res.rows {
        eprintln!("{:<6} test loss {}", r.method.name(), r.test_loss);
    }
    if res.rows.iter().all(|r| !r.converged) {
        return Err(Failure::Numerical("every fit failed to converge".into()));
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> CliResult {
    let rows = read_aggregate_csv(&a.aggregate)?;
    emit_plot(&rows, &a.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Simulate(SimulateCommand::Known(a)) => cmd_simulate(a, DesignKind::KnownSource31),
        Command::Simulate(SimulateCommand::Unknown(a)) => cmd_simulate(a, DesignKind::UnknownSource32),
        Command::Simulate(SimulateCommand::Dump(a)) => cmd_dump(a),
        Command::Realdata(RealdataCommand::Ingest(a)) => cmd_ingest(a),
        Command::Realdata(RealdataCommand::Run(a)) => cmd_run(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
