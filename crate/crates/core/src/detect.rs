//! Transferable-source detection by three-fold cross-fitting.
//!
//! For each of three rounds the target is split into two training folds and
//! one validation fold. A target-only baseline and, for every source, a fused
//! fit of the training folds with that source alone are scored by their mean
//! Huber loss on the validation fold. Losses are summed over rounds and a
//! source is kept when its total stays within a factor `1 + ε₀` of the
//! baseline. The final estimate runs the two-step transfer fit on the full
//! target with the kept sources.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{check_dim, Dataset};
use crate::rng::{derive_seed, substream};
use crate::solver::mean_huber_loss;
use crate::transfer::{self, TransferConfig, TransferFit};

pub const DEFAULT_EPSILON0: f64 = 0.05;

const SPLIT_STREAM: u64 = 0;
const FINAL_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub epsilon0: f64,
    pub transfer: TransferConfig,
}

impl DetectConfig {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            epsilon0: DEFAULT_EPSILON0,
            transfer: TransferConfig::new(alpha, gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// Baseline validation loss summed over rounds.
    pub q0: f64,
    /// Per-source validation loss summed over rounds; `+∞` marks a source
    /// whose fused fit failed to converge in some round.
    pub q: Vec<f64>,
    /// Selected source indices (0-based positions in the input list).
    pub selected: Vec<usize>,
    pub epsilon0: f64,
    /// Sources excluded because a candidate fit did not converge.
    pub nonconverged: Vec<usize>,
    pub final_fit: TransferFit,
}

/// `{ k : q[k] ≤ (1 + ε₀)·q0 }`, ignoring non-finite losses.
pub fn select_sources(q0: f64, q: &[f64], epsilon0: f64) -> Vec<usize> {
    let bound = (1.0 + epsilon0) * q0;
    q.iter()
        .enumerate()
        .filter(|(_, &qk)| qk.is_finite() && qk <= bound)
        .map(|(k, _)| k)
        .collect()
}

/// Seeded split of `0..n` into three folds whose sizes differ by at most one.
pub fn split_three_folds(n: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, SPLIT_STREAM));
    let mut folds: [Vec<usize>; 3] = Default::default();
    for (pos, &row) in order.iter().enumerate() {
        folds[pos % 3].push(row);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Candidate model index within a round: 0 is the baseline, `k + 1` is source `k`.
fn candidate_seed(seed: u64, round: usize, candidate: usize) -> u64 {
    derive_seed(seed, 16 + (round as u64) * 1_000_003 + candidate as u64)
}

pub fn detect_sources(
    target: &Dataset,
    sources: &[Dataset],
    cfg: &DetectConfig,
    seed: u64,
) -> Result<DetectionReport> {
    if !(cfg.epsilon0 >= 0.0) {
        return Err(Error::InvalidConfig("epsilon0 must be nonnegative".into()));
    }
    for s in sources {
        check_dim(s.p(), target.p(), "source covariates vs target")?;
    }
    let folds = split_three_folds(target.n(), seed)?;
    let gamma = cfg.transfer.gamma;

    // (round, candidate) jobs are independent; the collected order is fixed.
    let jobs: Vec<(usize, usize)> = (0..3)
        .flat_map(|r| (0..=sources.len()).map(move |c| (r, c)))
        .collect();
    let scored: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|&(r, c)| {
            let train_rows: Vec<usize> = (0..3)
                .filter(|&f| f != r)
                .flat_map(|f| folds[f].iter().copied())
                .collect();
            let train = target.select_rows(&train_rows)?;
            let valid = target.select_rows(&folds[r])?;
            let s = candidate_seed(seed, r, c);
            let fit = if c == 0 {
                transfer::target_fit(&train, &cfg.transfer, s)?
            } else {
                transfer::fuse(&train, std::slice::from_ref(&sources[c - 1]), &cfg.transfer, s)?
            };
            let fitted = valid.predict(&fit.coef)?;
            let resid: Vec<f64> = valid.y().iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
            Ok((mean_huber_loss(&resid, gamma), fit.converged))
        })
        .collect::<Result<_>>()?;

    let per_round = sources.len() + 1;
    let mut q0 = 0.0;
    let mut q = vec![0.0; sources.len()];
    let mut nonconverged = Vec::new();
    for r in 0..3 {
        q0 += scored[r * per_round].0;
        for k in 0..sources.len() {
            let (loss, ok) = scored[r * per_round + k + 1];
            if ok {
                q[k] += loss;
            } else {
                q[k] = f64::INFINITY;
            }
        }
    }
    for (k, qk) in q.iter().enumerate() {
        if qk.is_infinite() {
            nonconverged.push(k);
        }
    }

    let selected = select_sources(q0, &q, cfg.epsilon0);
    let chosen: Vec<Dataset> = selected.iter().map(|&k| sources[k].clone()).collect();
    let final_fit = transfer::oracle_fit(target, &chosen, &cfg.transfer, derive_seed(seed, FINAL_STREAM))?;
    Ok(DetectionReport {
        q0,
        q,
        selected,
        epsilon0: cfg.epsilon0,
        nonconverged,
        final_fit,
    })
}

impl DetectionReport {
    /// Recomputes the selection rule from the stored losses.
    pub fn reselect(&self, epsilon0: f64) -> Vec<usize> {
        select_sources(self.q0, &self.q, epsilon0)
    }

    /// Writes `q0,epsilon0` on a leading header block followed by one
    /// `source_id,q_k,selected` row per source (source ids start at 1).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        writeln!(out, "q0,epsilon0")?;
        writeln!(out, "{},{}", self.q0, self.epsilon0)?;
        writeln!(out, "source_id,q_k,selected")?;
        for (k, qk) in self.q.iter().enumerate() {
            let flag = u8::from(self.selected.contains(&k));
            writeln!(out, "{},{},{}", k + 1, qk, flag)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Losses and selection flags as stored by [`DetectionReport::write_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDetection {
    pub q0: f64,
    pub epsilon0: f64,
    pub q: Vec<f64>,
    pub selected: Vec<usize>,
}

pub fn read_detection_csv(path: impl AsRef<Path>) -> Result<StoredDetection> {
    let path = path.as_ref();
    let bad = |reason: &str| Error::Parse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let lines: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<_>>()?;
    if lines.len() < 3 || lines[0] != "q0,epsilon0" || lines[2] != "source_id,q_k,selected" {
        return Err(bad("unexpected header layout"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
    let head: Vec<&str> = lines[1].split(',').collect();
    if head.len() != 2 {
        return Err(bad("expected q0,epsilon0 values"));
    }
    let (q0, epsilon0) = (num(head[0])?, num(head[1])?);
    let mut q = Vec::new();
    let mut selected = Vec::new();
    for line in &lines[3..] {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(bad("expected source_id,q_k,selected"));
        }
        q.push(num(cells[1])?);
        if cells[2].trim() == "1" {
            selected.push(q.len() - 1);
        }
    }
    Ok(StoredDetection {
        q0,
        epsilon0,
        q,
        selected,
    })
}
