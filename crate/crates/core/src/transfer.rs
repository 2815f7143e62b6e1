//! Two-step transfer estimator: a pooled fit over the target and the
//! transferable sources, then a target-only correction.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::{check_dim, CoefVector, Dataset};
use crate::rng::derive_seed;
use crate::solver::{self, CvOptions, FitResult, SolverConfig};

const FUSE_STREAM: u64 = 1;
const DEBIAS_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Fixed fusion penalty; cross-validated on the pooled sample when `None`.
    pub lambda_w: Option<f64>,
    /// Fixed correction penalty; cross-validated on the target when `None`.
    pub lambda_delta: Option<f64>,
    /// CV and solver settings. The CV seed is overridden per step.
    pub cv: CvOptions,
    /// Pool the target once per source instead of once overall.
    pub replicate_target: bool,
}

impl TransferConfig {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            lambda_w: None,
            lambda_delta: None,
            cv: CvOptions::default(),
            replicate_target: false,
        }
    }

    fn solver(&self, lambda: f64) -> SolverConfig {
        self.cv.solver_config(self.gamma, self.alpha, lambda)
    }
}

/// Output of one penalized step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    pub coef: CoefVector,
    pub lambda: f64,
    pub converged: bool,
}

impl From<FitResult> for StepFit {
    fn from(f: FitResult) -> Self {
        Self {
            coef: f.coef,
            lambda: f.lambda,
            converged: f.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFit {
    pub w_hat: CoefVector,
    pub delta_hat: CoefVector,
    /// `w_hat + delta_hat`.
    pub beta_hat: CoefVector,
    pub lambda_w: f64,
    pub lambda_delta: f64,
    pub converged: bool,
}

/// Penalized fit at a fixed λ, or at the CV-selected λ when `lambda` is `None`.
fn penalized_fit(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    cfg: &TransferConfig,
    lambda: Option<f64>,
    seed: u64,
) -> Result<StepFit> {
    match lambda {
        Some(l) => Ok(solver::fit_with_offset(d, offset, &cfg.solver(l), None)?.into()),
        None => {
            let opts = CvOptions {
                seed,
                ..cfg.cv.clone()
            };
            let (fit, _) = solver::fit_cv(d, offset, cfg.alpha, cfg.gamma, &opts)?;
            Ok(fit.into())
        }
    }
}

/// Stacks the target with the sources into one sample.
pub fn pooled_sample(target: &Dataset, sources: &[Dataset], replicate_target: bool) -> Result<Dataset> {
    for s in sources {
        check_dim(s.p(), target.p(), "source covariates vs target")?;
    }
    let mut parts: Vec<&Dataset> = Vec::with_capacity(2 * sources.len() + 1);
    if replicate_target && !sources.is_empty() {
        for s in sources {
            parts.push(target);
            parts.push(s);
        }
    } else {
        parts.push(target);
        parts.extend(sources.iter());
    }
    Dataset::concat(&parts, "pooled")
}

/// Fusion step: penalized Huber fit on the target pooled with `sources`.
pub fn fuse(target: &Dataset, sources: &[Dataset], cfg: &TransferConfig, seed: u64) -> Result<StepFit> {
    if target.n() == 0 {
        return Err(Error::TooFewRows { needed: 1, found: 0 });
    }
    let pooled = pooled_sample(target, sources, cfg.replicate_target)?;
    penalized_fit(&pooled, None, cfg, cfg.lambda_w, derive_seed(seed, FUSE_STREAM))
}

/// Debiasing step: penalized correction `δ` on the target with `w_hat` held
/// fixed as an offset.
pub fn debias(target: &Dataset, w_hat: &CoefVector, cfg: &TransferConfig, seed: u64) -> Result<StepFit> {
    let offset = target.predict(w_hat)?;
    penalized_fit(
        target,
        Some(&offset),
        cfg,
        cfg.lambda_delta,
        derive_seed(seed, DEBIAS_STREAM),
    )
}

/// Fusion followed by debiasing with a known transferable set.
pub fn oracle_fit(
    target: &Dataset,
    sources: &[Dataset],
    cfg: &TransferConfig,
    seed: u64,
) -> Result<TransferFit> {
    let w = fuse(target, sources, cfg, seed)?;
    let delta = debias(target, &w.coef, cfg, seed)?;
    let beta_hat = &w.coef + &delta.coef;
    Ok(TransferFit {
        beta_hat,
        lambda_w: w.lambda,
        lambda_delta: delta.lambda,
        converged: w.converged && delta.converged,
        w_hat: w.coef,
        delta_hat: delta.coef,
    })
}

/// Penalized Huber fit on the target alone, λ by cross-validation.
pub fn target_fit(target: &Dataset, cfg: &TransferConfig, seed: u64) -> Result<StepFit> {
    penalized_fit(target, None, cfg, cfg.lambda_w, derive_seed(seed, FUSE_STREAM))
}
