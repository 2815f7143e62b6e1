//! Regularization paths and K-fold cross-validation of λ.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Design, FitResult, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{check_dim, CoefVector, Dataset};

/// Stand-in mixing weight used only to size λ_max for ridge fits.
const RIDGE_ALPHA_SURROGATE: f64 = 1e-3;
/// Relative slack on λ_max so that `(λ_max/α)·α` never rounds below the
/// largest null score.
const LAMBDA_MAX_SLACK: f64 = 1e-12;
/// Relative tolerance under which two CV losses count as tied.
pub const CV_TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PathOptions {
    pub n_lambda: usize,
    /// `λ_min / λ_max`; `None` picks 0.01 when n ≤ p and 1e-4 otherwise.
    pub ratio: Option<f64>,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            n_lambda: 100,
            ratio: None,
        }
    }
}

impl PathOptions {
    fn ratio_for(&self, n: usize, p: usize) -> f64 {
        self.ratio
            .unwrap_or(if n < p + 1 { 0.01 } else { 1e-4 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub path: PathOptions,
    pub tol: f64,
    pub max_iter: usize,
    pub penalize_intercept: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            folds: 5,
            seed: 0,
            path: PathOptions::default(),
            tol: base.tol,
            max_iter: base.max_iter,
            penalize_intercept: base.penalize_intercept,
        }
    }
}

impl CvOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn solver_config(&self, gamma: f64, alpha: f64, lambda: f64) -> SolverConfig {
        SolverConfig {
            gamma,
            alpha,
            lambda,
            tol: self.tol,
            max_iter: self.max_iter,
            penalize_intercept: self.penalize_intercept,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    /// Held-out Huber loss averaged over all rows.
    pub mean_loss: f64,
    /// Standard error across folds of the per-fold mean loss.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda_star: f64,
    pub best_index: usize,
    pub table: Vec<CvRow>,
    pub fold_of: Vec<usize>,
}

impl CvResult {
    /// Result for a problem with no slope signal at all (λ_max = 0): the
    /// zero-slope model is optimal for every λ.
    fn degenerate(fold_of: Vec<usize>) -> Self {
        Self {
            lambda_star: 0.0,
            best_index: 0,
            table: Vec::new(),
            fold_of,
        }
    }
}

/// Decreasing geometric λ grid from λ_max to `λ_max·ratio`.
pub fn lambda_path(
    d: &Dataset,
    alpha: f64,
    gamma: f64,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    lambda_path_with(d, None, alpha, gamma, n_lambda, ratio)
}

pub fn lambda_path_with(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    alpha: f64,
    gamma: f64,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::InvalidConfig("n_lambda must be at least 2".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig("path ratio must lie in (0, 1)".into()));
    }
    let design = Design::new(d, offset)?;
    let lmax = lambda_max(&design, alpha, gamma)?;
    if !(lmax > 0.0) {
        return Err(Error::ConstantResponse);
    }
    Ok(geometric_grid(lmax, n_lambda, ratio))
}

fn geometric_grid(lmax: f64, n_lambda: usize, ratio: f64) -> Vec<f64> {
    let step = ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda)
        .map(|k| {
            if k == n_lambda - 1 {
                lmax * ratio
            } else {
                lmax * (step * k as f64).exp()
            }
        })
        .collect()
}

fn lambda_max(design: &Design, alpha: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    let alpha = if alpha > 0.0 { alpha } else { RIDGE_ALPHA_SURROGATE };
    let (_, scores) = design.null_scores(gamma);
    let top = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    Ok(top / alpha * (1.0 + LAMBDA_MAX_SLACK))
}

/// Fits every λ in order, warm-starting each fit from the previous one.
pub fn fit_path(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    cfg: &SolverConfig,
    lambdas: &[f64],
) -> Result<Vec<FitResult>> {
    cfg.validate()?;
    let design = Design::new(d, offset)?;
    Ok(solve_path(&design, cfg, lambdas))
}

fn solve_path(design: &Design, cfg: &SolverConfig, lambdas: &[f64]) -> Vec<FitResult> {
    let mut out: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let init = match out.last() {
            Some(prev) => prev.coef.clone(),
            None => design
                .initial_coef(cfg.gamma, None)
                .expect("cold start has matching dimension"),
        };
        out.push(design.solve(&cfg.with_lambda(lambda), init, None));
    }
    out
}

/// Seeded assignment of `n` rows to `folds` folds; sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }
    fold_of
}

/// K-fold cross-validation of λ on the default path with unpenalized
/// intercept.
pub fn cross_validate(
    d: &Dataset,
    alpha: f64,
    gamma: f64,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let opts = CvOptions {
        folds,
        seed,
        ..CvOptions::default()
    };
    cross_validate_with(d, None, alpha, gamma, &opts)
}

pub fn cross_validate_with(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    alpha: f64,
    gamma: f64,
    opts: &CvOptions,
) -> Result<CvResult> {
    if opts.folds < 2 || opts.folds > d.n() {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs 2 <= folds <= n (folds = {}, n = {})",
            opts.folds,
            d.n()
        )));
    }
    let fold_of = fold_assignment(d.n(), opts.folds, opts.seed);
    cross_validate_folds(d, offset, alpha, gamma, fold_of, opts)
}

/// Cross-validation with a caller-supplied fold label per row.
pub fn cross_validate_folds(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    alpha: f64,
    gamma: f64,
    fold_of: Vec<usize>,
    opts: &CvOptions,
) -> Result<CvResult> {
    check_dim(fold_of.len(), d.n(), "fold labels vs rows")?;
    if let Some(o) = offset {
        check_dim(o.len(), d.n(), "offset vs rows")?;
    }
    let folds = fold_of.iter().max().map_or(0, |m| m + 1);
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least two folds".into()));
    }
    let cfg = opts.solver_config(gamma, alpha, 0.0);
    cfg.validate()?;

    let full = Design::new(d, offset)?;
    let lmax = lambda_max(&full, alpha, gamma)?;
    if !(lmax > 0.0) {
        return Ok(CvResult::degenerate(fold_of));
    }
    let lambdas = geometric_grid(
        lmax,
        opts.path.n_lambda.max(2),
        opts.path.ratio_for(d.n(), d.p()),
    );

    let split = |k: usize| -> Result<(Design, Design, usize)> {
        let train: Vec<usize> = (0..d.n()).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..d.n()).filter(|&i| fold_of[i] == k).collect();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig(format!("fold {k} is empty or covers all rows")));
        }
        let sub_offset = |rows: &[usize]| offset.map(|o| rows.iter().map(|&i| o[i]).collect());
        let train_offset: Option<Array1<f64>> = sub_offset(&train);
        let test_offset: Option<Array1<f64>> = sub_offset(&test);
        let tr = Design::new(&d.select_rows(&train)?, train_offset.as_ref())?;
        let te = Design::new(&d.select_rows(&test)?, test_offset.as_ref())?;
        Ok((tr, te, test.len()))
    };

    // Each fold depends only on the fold labels, so the parallel map is
    // bitwise-identical to a sequential one.
    let per_fold: Vec<(Vec<f64>, usize)> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (train, test, n_test) = split(k)?;
            let fits = solve_path(&train, &cfg, &lambdas);
            let losses = fits
                .iter()
                .map(|f| test.heldout_loss(&f.coef, gamma))
                .collect();
            Ok((losses, n_test))
        })
        .collect::<Result<_>>()?;

    let n = d.n() as f64;
    let kf = folds as f64;
    let table: Vec<CvRow> = lambdas
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let mean_loss = per_fold
                .iter()
                .map(|(losses, m)| losses[l] * *m as f64)
                .sum::<f64>()
                / n;
            let fold_mean = per_fold.iter().map(|(losses, _)| losses[l]).sum::<f64>() / kf;
            let var = per_fold
                .iter()
                .map(|(losses, _)| (losses[l] - fold_mean).powi(2))
                .sum::<f64>()
                / (kf - 1.0);
            CvRow {
                lambda,
                mean_loss,
                std_err: (var / kf).sqrt(),
            }
        })
        .collect();

    let best_loss = table
        .iter()
        .map(|r| r.mean_loss)
        .fold(f64::INFINITY, f64::min);
    let tie = CV_TIE_TOL * best_loss.abs().max(1.0);
    // path is decreasing, so the first tied entry is the largest λ
    let best_index = table
        .iter()
        .position(|r| r.mean_loss <= best_loss + tie)
        .unwrap_or(0);
    Ok(CvResult {
        lambda_star: table[best_index].lambda,
        best_index,
        table,
        fold_of,
    })
}

/// Cross-validates λ, then refits the full data along the path down to the
/// selected λ.
pub fn fit_cv(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    alpha: f64,
    gamma: f64,
    opts: &CvOptions,
) -> Result<(FitResult, CvResult)> {
    let cv = cross_validate_with(d, offset, alpha, gamma, opts)?;
    let design = Design::new(d, offset)?;
    let cfg = opts.solver_config(gamma, alpha, cv.lambda_star);
    let fit = if cv.table.is_empty() {
        let init = design.initial_coef(gamma, None)?;
        design.solve(&cfg, init, None)
    } else {
        let lambdas: Vec<f64> = cv.table[..=cv.best_index].iter().map(|r| r.lambda).collect();
        solve_path(&design, &cfg, &lambdas)
            .pop()
            .expect("path has at least one λ")
    };
    Ok((fit, cv))
}

/// Zero-slope coefficients at the intercept-only Huber solution.
pub fn null_model(d: &Dataset, offset: Option<&Array1<f64>>, gamma: f64) -> Result<CoefVector> {
    let design = Design::new(d, offset)?;
    design.initial_coef(gamma, None)
}
