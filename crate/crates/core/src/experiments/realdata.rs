//! Grouped tabular data: a target group split into train and test, every
//! other group a source.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Method;
use crate::detect::{detect_sources, DetectConfig};
use crate::error::{Error, Result};
use crate::model::{CoefVector, Dataset};
use crate::rng::{derive_seed, substream};
use crate::solver::{default_gamma, mean_huber_loss};
use crate::transfer::{self, TransferConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub response: String,
    pub group_column: String,
    pub target_group: String,
    /// Columns to one-hot encode; every other covariate is continuous.
    pub categorical: Vec<String>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl IngestOptions {
    pub fn new(response: &str, group_column: &str, target_group: &str) -> Self {
        Self {
            response: response.into(),
            group_column: group_column.into(),
            target_group: target_group.into(),
            categorical: Vec::new(),
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataSplit {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub sources: Vec<Dataset>,
    /// Group value of each source, in source order.
    pub source_groups: Vec<String>,
    pub group_key: String,
    /// Covariate names after encoding and dropping, in column order.
    pub columns: Vec<String>,
}

/// Numeric group labels compare by value, so `4` and `4.0` are one group.
fn canonical_group(v: &str) -> String {
    let v = v.trim();
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => x.to_string(),
        _ => v.to_string(),
    }
}

fn group_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Reads the CSV at `path` and builds the split.
///
/// Target rows (group equal to `target_group`) are shuffled by `seed`; the
/// first `floor(n · test_fraction)` form the test set. Remaining groups become
/// sources in ascending group order. Continuous covariates are centred and
/// scaled with target-training statistics; categorical ones are one-hot
/// encoded with sorted levels. Columns constant on the training target are
/// dropped everywhere. The group column itself is not a covariate.
pub fn ingest_real_data(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<RealDataSplit> {
    let path = path.as_ref();
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(Error::InvalidConfig("test_fraction must lie in (0, 1)".into()));
    }
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let y_col = find(&opts.response)?;
    let g_col = find(&opts.group_column)?;
    let cat_cols: Vec<usize> = opts.categorical.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyTable);
    }

    // Candidate covariates in file order.
    let covariates: Vec<usize> = (0..header.len()).filter(|&c| c != y_col && c != g_col).collect();
    let mut levels: Vec<Vec<String>> = Vec::new();
    for &c in &covariates {
        if cat_cols.contains(&c) {
            let set: BTreeSet<&str> = records.iter().map(|r| &r[c]).collect();
            levels.push(set.into_iter().map(str::to_string).collect());
        } else {
            levels.push(Vec::new());
        }
    }
    let mut names = Vec::new();
    let mut categorical_flag = Vec::new();
    for (i, &c) in covariates.iter().enumerate() {
        if levels[i].is_empty() {
            names.push(header[c].clone());
            categorical_flag.push(false);
        } else {
            for lv in &levels[i] {
                names.push(format!("{}={}", header[c], lv));
                categorical_flag.push(true);
            }
        }
    }

    let n = records.len();
    let width = names.len();
    let mut x = Array2::<f64>::zeros((n, width));
    let mut y = Array1::<f64>::zeros(n);
    let mut groups = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let num = |s: &str, col: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("line {line}: missing or non-numeric `{col}`")))
        };
        y[i] = num(&rec[y_col], &opts.response)?;
        groups.push(canonical_group(&rec[g_col]));
        let mut j = 0;
        for (ci, &c) in covariates.iter().enumerate() {
            if levels[ci].is_empty() {
                x[[i, j]] = num(&rec[c], &header[c])?;
                j += 1;
            } else {
                for lv in &levels[ci] {
                    x[[i, j]] = if &rec[c] == lv { 1.0 } else { 0.0 };
                    j += 1;
                }
            }
        }
    }

    let target_key = canonical_group(&opts.target_group);
    let mut target_rows: Vec<usize> = (0..n).filter(|&i| groups[i] == target_key).collect();
    if target_rows.is_empty() {
        return Err(Error::EmptyTarget(opts.target_group.clone()));
    }
    target_rows.shuffle(&mut substream(opts.seed, 0));
    let n_test = (target_rows.len() as f64 * opts.test_fraction).floor() as usize;
    let mut test_rows = target_rows[..n_test].to_vec();
    let mut train_rows = target_rows[n_test..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    if train_rows.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            found: train_rows.len(),
        });
    }
    let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    if y_train.iter().all(|&v| v == y_train[0]) {
        return Err(Error::ConstantResponse);
    }

    // Target-training column statistics; constant columns are dropped.
    let m = train_rows.len() as f64;
    let mut keep = Vec::new();
    let mut shift = Vec::new();
    let mut scale = Vec::new();
    for j in 0..width {
        let col: Vec<f64> = train_rows.iter().map(|&i| x[[i, j]]).collect();
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        keep.push(j);
        if categorical_flag[j] {
            shift.push(0.0);
            scale.push(1.0);
        } else {
            let mean = col.iter().sum::<f64>() / m;
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
            shift.push(mean);
            scale.push(sd);
        }
    }
    let build = |rows: &[usize], label: String| -> Result<Dataset> {
        let xs = Array2::from_shape_fn((rows.len(), keep.len()), |(r, k)| {
            (x[[rows[r], keep[k]]] - shift[k]) / scale[k]
        });
        let ys: Array1<f64> = rows.iter().map(|&i| y[i]).collect();
        Dataset::new(ys, xs, label)
    };

    let mut source_groups: Vec<String> = groups.iter().filter(|g| **g != target_key).cloned().collect();
    source_groups.sort_by(|a, b| group_order(a, b));
    source_groups.dedup();
    let mut sources = Vec::with_capacity(source_groups.len());
    for g in &source_groups {
        let rows: Vec<usize> = (0..n).filter(|&i| &groups[i] == g).collect();
        sources.push(build(&rows, format!("{}={}", opts.group_column, g))?);
    }

    Ok(RealDataSplit {
        target_train: build(&train_rows, "target-train".into())?,
        target_test: build(&test_rows, "target-test".into())?,
        sources,
        source_groups,
        group_key: format!("{} = {}", opts.group_column, target_key),
        columns: keep.iter().map(|&j| names[j].clone()).collect(),
    })
}

impl RealDataSplit {
    /// Writes `target_train.csv`, `target_test.csv`, `source-<k>.csv` and
    /// `columns.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.target_train.write_csv(dir.join("target_train.csv"))?;
        self.target_test.write_csv(dir.join("target_test.csv"))?;
        for (k, s) in self.sources.iter().enumerate() {
            s.write_csv(dir.join(format!("source-{}.csv", k + 1)))?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("columns.txt"))?);
        for c in &self.columns {
            writeln!(f, "{c}")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Reads a split written by [`RealDataSplit::write`].
pub fn read_split(dir: impl AsRef<Path>) -> Result<RealDataSplit> {
    let dir = dir.as_ref();
    let target_train = Dataset::read_csv(dir.join("target_train.csv"), "target-train")?;
    let target_test = Dataset::read_csv(dir.join("target_test.csv"), "target-test")?;
    let mut sources = Vec::new();
    let mut source_groups = Vec::new();
    loop {
        let k = sources.len() + 1;
        let path = dir.join(format!("source-{k}.csv"));
        if !path.exists() {
            break;
        }
        sources.push(Dataset::read_csv(&path, format!("source-{k}"))?);
        source_groups.push(k.to_string());
    }
    let columns = match std::fs::read_to_string(dir.join("columns.txt")) {
        Ok(s) => s.lines().map(str::to_string).collect(),
        Err(_) => (1..=target_train.p()).map(|j| format!("x{j}")).collect(),
    };
    Ok(RealDataSplit {
        target_train,
        target_test,
        sources,
        source_groups,
        group_key: dir.display().to_string(),
        columns,
    })
}

/// Test-set loss used to compare methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionLoss {
    #[default]
    Squared,
    Huber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataRow {
    pub method: Method,
    pub test_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataResult {
    pub rows: Vec<RealDataRow>,
    /// Detect's selected sources (0-based).
    pub selected: Vec<usize>,
    pub q0: f64,
    pub q: Vec<f64>,
    pub gamma: f64,
}

impl RealDataResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,test_loss,converged,selected_sources")?;
        for r in &self.rows {
            let sel = if r.method == Method::Detect {
                self.selected.iter().map(|k| (k + 1).to_string()).collect::<Vec<_>>().join(" ")
            } else {
                String::new()
            };
            writeln!(out, "{},{},{},{}", r.method.name(), r.test_loss, r.converged, sel)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn test_loss(test: &Dataset, coef: &CoefVector, loss: PredictionLoss, gamma: f64) -> Result<f64> {
    let fitted = test.predict(coef)?;
    let resid: Vec<f64> = test.y().iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok(match loss {
        PredictionLoss::Squared => resid.iter().map(|r| r * r).sum::<f64>() / resid.len().max(1) as f64,
        PredictionLoss::Huber => mean_huber_loss(&resid, gamma),
    })
}

/// Fits Target, Naive and Detect on the training target and scores each on
/// the test target. With no sources Naive is the Target fit itself.
pub fn run_real_data(
    split: &RealDataSplit,
    alpha: f64,
    gamma: Option<f64>,
    epsilon0: f64,
    seed: u64,
    loss: PredictionLoss,
) -> Result<RealDataResult> {
    let train = &split.target_train;
    let gamma = match gamma {
        Some(g) => g,
        None => default_gamma(train.y(), None)?,
    };
    let tc = TransferConfig::new(alpha, gamma);
    let fit_seed = derive_seed(seed, 0);
    let test = &split.target_test;

    let target = transfer::target_fit(train, &tc, fit_seed)?;
    let mut rows = vec![RealDataRow {
        method: Method::Target,
        test_loss: test_loss(test, &target.coef, loss, gamma)?,
        converged: target.converged,
    }];

    let naive = if split.sources.is_empty() {
        rows[0].clone()
    } else {
        let fit = transfer::oracle_fit(train, &split.sources, &tc, fit_seed)?;
        RealDataRow {
            method: Method::Naive,
            test_loss: test_loss(test, &fit.beta_hat, loss, gamma)?,
            converged: fit.converged,
        }
    };
    rows.push(RealDataRow {
        method: Method::Naive,
        ..naive
    });

    let dc = DetectConfig { epsilon0, transfer: tc };
    let report = detect_sources(train, &split.sources, &dc, fit_seed)?;
    rows.push(RealDataRow {
        method: Method::Detect,
        test_loss: test_loss(test, &report.final_fit.beta_hat, loss, gamma)?,
        converged: report.final_fit.converged,
    });

    Ok(RealDataResult {
        rows,
        selected: report.selected,
        q0: report.q0,
        q: report.q,
        gamma,
    })
}
