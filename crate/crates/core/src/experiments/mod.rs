//! Simulation studies, the real-data pipeline and result emission.
//!
//! Result tables are written with one raw row per (grid point, method,
//! replication) and an aggregate row per (grid point, method). Rows are sorted
//! before writing so output bytes do not depend on scheduling.

mod plot;
mod realdata;

use std::cmp::Ordering;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_sources, DetectConfig};
use crate::error::{Error, Result};
use crate::model::{check_dim, CoefVector};
use crate::rng::{dataset_stream, derive_seed};
use crate::simgen::{gen_scenario_rep, DesignKind, ErrorDist, ScenarioConfig};
use crate::solver::default_gamma;
use crate::transfer::{self, TransferConfig};

pub use plot::{emit_plot, read_aggregate_csv};
pub use realdata::{
    ingest_real_data, read_split, run_real_data, IngestOptions, PredictionLoss, RealDataResult, RealDataRow,
    RealDataSplit,
};

/// Stream index reserved for fitting randomness (CV folds, detection splits).
const FIT_INDEX: u64 = (1 << 20) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Target,
    Oracle,
    Naive,
    Detect,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Target => "Target",
            Method::Oracle => "Oracle",
            Method::Naive => "Naive",
            Method::Detect => "Detect",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Target" => Ok(Method::Target),
            "Oracle" => Ok(Method::Oracle),
            "Naive" => Ok(Method::Naive),
            "Detect" => Ok(Method::Detect),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// One fitted method on one replication of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: Method,
    pub h: f64,
    pub k_informative: usize,
    pub dist: ErrorDist,
    pub alpha: f64,
    pub replication: u64,
    pub coef_mse: f64,
    pub pred_mse: Option<f64>,
    pub converged: bool,
    /// Selected sources (0-based), Detect only.
    pub selected_sources: Option<Vec<usize>>,
    /// Wall time, recorded only when timing is requested.
    pub runtime_ms: Option<u64>,
}

impl ExperimentResult {
    fn sort_key(&self, other: &Self) -> Ordering {
        self.dist
            .name()
            .cmp(other.dist.name())
            .then(self.alpha.total_cmp(&other.alpha))
            .then(self.h.total_cmp(&other.h))
            .then(self.k_informative.cmp(&other.k_informative))
            .then(self.replication.cmp(&other.replication))
            .then(self.method.cmp(&other.method))
    }

    /// Precision and recall of the selected set against sources
    /// `0..k_informative`. Precision is undefined for an empty selection and
    /// recall for an empty informative set.
    pub fn precision_recall(&self) -> Option<(Option<f64>, Option<f64>)> {
        let sel = self.selected_sources.as_ref()?;
        let hits = sel.iter().filter(|&&k| k < self.k_informative).count() as f64;
        let precision = (!sel.is_empty()).then(|| hits / sel.len() as f64);
        let recall = (self.k_informative > 0).then(|| hits / self.k_informative as f64);
        Some((precision, recall))
    }
}

/// `‖β̂ − β⁽⁰⁾‖₂²` over the intercept and all slopes.
pub fn estimation_error(beta_hat: &CoefVector, beta0: &CoefVector) -> Result<f64> {
    check_dim(beta_hat.p(), beta0.p(), "estimate vs truth")?;
    let d0 = beta_hat.intercept - beta0.intercept;
    Ok(d0 * d0
        + beta_hat
            .slopes
            .iter()
            .zip(beta0.slopes.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

/// A grid of scenario settings, each run for `replications` replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    /// Sizes, sparsity, design and seed; `h`, `k_informative`, `error_dist`
    /// and `alpha` are overridden by the grid axes.
    pub base: ScenarioConfig,
    pub h_values: Vec<f64>,
    pub k_values: Vec<usize>,
    pub dists: Vec<ErrorDist>,
    pub alphas: Vec<f64>,
    pub replications: u64,
    /// Only used by the detection experiment.
    pub epsilon0: f64,
    /// Fixed Huber threshold; estimated from each target when `None`.
    pub gamma: Option<f64>,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub timing: bool,
}

impl ExperimentGrid {
    pub fn new(base: ScenarioConfig, replications: u64) -> Self {
        Self {
            h_values: vec![base.h],
            k_values: vec![base.k_informative],
            dists: vec![base.error_dist],
            alphas: vec![base.alpha],
            base,
            replications,
            epsilon0: crate::detect::DEFAULT_EPSILON0,
            gamma: None,
            workers: 0,
            timing: false,
        }
    }

    fn points(&self) -> Result<Vec<ScenarioConfig>> {
        if self.h_values.is_empty() || self.k_values.is_empty() || self.dists.is_empty() || self.alphas.is_empty()
        {
            return Err(Error::InvalidConfig("every grid axis needs at least one value".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        let mut out = Vec::new();
        for &dist in &self.dists {
            for &alpha in &self.alphas {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
                }
                for &h in &self.h_values {
                    for &k in &self.k_values {
                        let cfg = ScenarioConfig {
                            h,
                            k_informative: k,
                            error_dist: dist,
                            alpha,
                            ..self.base.clone()
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn elapsed_ms(start: Instant, timing: bool) -> Option<u64> {
    timing.then(|| start.elapsed().as_millis() as u64)
}

fn run_grid(
    grid: &ExperimentGrid,
    design: DesignKind,
    methods: fn(&ScenarioConfig, u64, &ExperimentGrid) -> Result<Vec<ExperimentResult>>,
) -> Result<Vec<ExperimentResult>> {
    if grid.base.design != design {
        return Err(Error::InvalidConfig("grid base config has the wrong design".into()));
    }
    let points = grid.points()?;
    let tasks: Vec<(&ScenarioConfig, u64)> = points
        .iter()
        .flat_map(|cfg| (0..grid.replications).map(move |rep| (cfg, rep)))
        .collect();
    let pool = worker_pool(grid.workers)?;
    let nested: Vec<Vec<ExperimentResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cfg, rep)| methods(cfg, rep, grid))
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<ExperimentResult> = nested.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.sort_key(b));
    Ok(rows)
}

fn transfer_config(cfg: &ScenarioConfig, gamma: Option<f64>, target_y: &ndarray::Array1<f64>) -> Result<TransferConfig> {
    let gamma = match gamma {
        Some(g) => g,
        None => default_gamma(target_y, None)?,
    };
    Ok(TransferConfig::new(cfg.alpha, gamma))
}

fn row(cfg: &ScenarioConfig, rep: u64, method: Method, coef_mse: f64, converged: bool) -> ExperimentResult {
    ExperimentResult {
        method,
        h: cfg.h,
        k_informative: cfg.k_informative,
        dist: cfg.error_dist,
        alpha: cfg.alpha,
        replication: rep,
        coef_mse,
        pred_mse: None,
        converged,
        selected_sources: None,
        runtime_ms: None,
    }
}

struct Replication {
    scenario: crate::simgen::Scenario,
    tc: TransferConfig,
    seed: u64,
}

impl Replication {
    fn new(cfg: &ScenarioConfig, rep: u64, grid: &ExperimentGrid) -> Result<Self> {
        let scenario = gen_scenario_rep(cfg, rep)?;
        let tc = transfer_config(cfg, grid.gamma, scenario.target.y())?;
        let seed = derive_seed(cfg.seed, dataset_stream(rep, FIT_INDEX));
        Ok(Self { scenario, tc, seed })
    }

    fn target_and_oracle(&self, cfg: &ScenarioConfig, rep: u64, timing: bool) -> Result<Vec<ExperimentResult>> {
        let sc = &self.scenario;
        let beta0 = &sc.truth.beta0;

        let t = Instant::now();
        let target = transfer::target_fit(&sc.target, &self.tc, self.seed)?;
        let mut target_row = row(cfg, rep, Method::Target, estimation_error(&target.coef, beta0)?, target.converged);
        target_row.runtime_ms = elapsed_ms(t, timing);

        let t = Instant::now();
        let informative: Vec<_> = sc.truth.informative.iter().map(|&k| sc.sources[k].clone()).collect();
        let oracle = transfer::oracle_fit(&sc.target, &informative, &self.tc, self.seed)?;
        let mut oracle_row = row(cfg, rep, Method::Oracle, estimation_error(&oracle.beta_hat, beta0)?, oracle.converged);
        oracle_row.runtime_ms = elapsed_ms(t, timing);

        Ok(vec![target_row, oracle_row])
    }
}

fn known_source_methods(cfg: &ScenarioConfig, rep: u64, grid: &ExperimentGrid) -> Result<Vec<ExperimentResult>> {
    Replication::new(cfg, rep, grid)?.target_and_oracle(cfg, rep, grid.timing)
}

fn detection_methods(cfg: &ScenarioConfig, rep: u64, grid: &ExperimentGrid) -> Result<Vec<ExperimentResult>> {
    let r = Replication::new(cfg, rep, grid)?;
    let mut rows = r.target_and_oracle(cfg, rep, grid.timing)?;
    let sc = &r.scenario;
    let beta0 = &sc.truth.beta0;

    let t = Instant::now();
    let naive = transfer::oracle_fit(&sc.target, &sc.sources, &r.tc, r.seed)?;
    let mut naive_row = row(cfg, rep, Method::Naive, estimation_error(&naive.beta_hat, beta0)?, naive.converged);
    naive_row.runtime_ms = elapsed_ms(t, grid.timing);
    rows.push(naive_row);

    let t = Instant::now();
    let dc = DetectConfig {
        epsilon0: grid.epsilon0,
        transfer: r.tc.clone(),
    };
    let report = detect_sources(&sc.target, &sc.sources, &dc, r.seed)?;
    let fit = &report.final_fit;
    let mut detect_row = row(cfg, rep, Method::Detect, estimation_error(&fit.beta_hat, beta0)?, fit.converged);
    detect_row.selected_sources = Some(report.selected.clone());
    detect_row.runtime_ms = elapsed_ms(t, grid.timing);
    rows.push(detect_row);
    Ok(rows)
}

/// Target and Oracle on the known-source design over the grid.
pub fn run_known_source_experiment(grid: &ExperimentGrid) -> Result<Vec<ExperimentResult>> {
    run_grid(grid, DesignKind::KnownSource31, known_source_methods)
}

/// Target, Oracle, Naive and Detect on the unknown-source design over the grid.
pub fn run_detection_experiment(grid: &ExperimentGrid) -> Result<Vec<ExperimentResult>> {
    run_grid(grid, DesignKind::UnknownSource32, detection_methods)
}

/// Mean and standard error of the converged rows of one (grid point, method).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub h: f64,
    pub k_informative: usize,
    pub dist: ErrorDist,
    pub alpha: f64,
    /// Converged replications entering the mean.
    pub replications: usize,
    pub nonconverged: usize,
    pub mean_coef_mse: f64,
    pub se_coef_mse: f64,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Groups rows by (grid point, method). Non-converged rows are counted and
/// left out of the means; precision and recall average over the
/// replications where they are defined.
pub fn aggregate(rows: &[ExperimentResult]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&ExperimentResult> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.dist
            .name()
            .cmp(b.dist.name())
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.h.total_cmp(&b.h))
            .then(a.k_informative.cmp(&b.k_informative))
            .then(a.method.cmp(&b.method))
            .then(a.replication.cmp(&b.replication))
    });
    let same = |a: &ExperimentResult, b: &ExperimentResult| {
        a.method == b.method
            && a.dist == b.dist
            && a.alpha.total_cmp(&b.alpha).is_eq()
            && a.h.total_cmp(&b.h).is_eq()
            && a.k_informative == b.k_informative
    };
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| same(a, b)) {
        let first = group[0];
        let ok: Vec<&ExperimentResult> = group.iter().copied().filter(|r| r.converged).collect();
        let (mean, se) = mean_se(&ok.iter().map(|r| r.coef_mse).collect::<Vec<_>>());
        let pr: Vec<(Option<f64>, Option<f64>)> = ok.iter().filter_map(|r| r.precision_recall()).collect();
        let has_selection = !pr.is_empty();
        out.push(AggregateRow {
            method: first.method,
            h: first.h,
            k_informative: first.k_informative,
            dist: first.dist,
            alpha: first.alpha,
            replications: ok.len(),
            nonconverged: group.len() - ok.len(),
            mean_coef_mse: mean,
            se_coef_mse: se,
            mean_precision: if has_selection { mean_defined(pr.iter().map(|p| p.0)) } else { None },
            mean_recall: if has_selection { mean_defined(pr.iter().map(|p| p.1)) } else { None },
        });
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULT_HEADER: &str = "method,h,k_informative,dist,alpha,replication,coef_mse,pred_mse,converged,runtime_ms";
pub const AGGREGATE_HEADER: &str =
    "method,h,k_informative,dist,alpha,replications,nonconverged,mean_coef_mse,se_coef_mse,mean_precision,mean_recall";
pub const SELECTION_HEADER: &str = "h,k_informative,dist,alpha,replication,selected,precision,recall";

pub fn write_results_csv(rows: &[ExperimentResult], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.h,
            r.k_informative,
            r.dist.name(),
            r.alpha,
            r.replication,
            r.coef_mse,
            opt(r.pred_mse),
            r.converged,
            r.runtime_ms.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Detect's selected sources per replication; ids are 1-based and
/// space-separated.
pub fn write_selections_csv(rows: &[ExperimentResult], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{SELECTION_HEADER}")?;
    for r in rows {
        let (Some(sel), Some((precision, recall))) = (&r.selected_sources, r.precision_recall()) else {
            continue;
        };
        let ids: Vec<String> = sel.iter().map(|k| (k + 1).to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.h,
            r.k_informative,
            r.dist.name(),
            r.alpha,
            r.replication,
            ids.join(" "),
            opt(precision),
            opt(recall),
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for a in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.method.name(),
            a.h,
            a.k_informative,
            a.dist.name(),
            a.alpha,
            a.replications,
            a.nonconverged,
            a.mean_coef_mse,
            a.se_coef_mse,
            opt(a.mean_precision),
            opt(a.mean_recall),
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    schema_version: u32,
    library: &'static str,
    library_version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a T,
}

/// Writes the run configuration as pretty JSON.
pub fn write_manifest<T: Serialize>(path: impl AsRef<Path>, command: &str, seed: u64, config: &T) -> Result<()> {
    let manifest = Manifest {
        schema_version: 1,
        library: env!("CARGO_PKG_NAME"),
        library_version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
