//! Elastic-net penalized Huber regression.
//!
//! The objective is
//!
//! ```text
//! (1/n) Σᵢ ℓ(yᵢ − oᵢ − β₀ − xᵢᵀβ₁) + λ [α‖β₁‖₁ + ½(1−α)‖β₁‖₂²]
//! ```
//!
//! with the γ-scaled Huber loss `ℓ(t) = t²/(2γ)` for `|t| ≤ γ` and
//! `|t| − γ/2` otherwise, and an optional fixed offset `o`. It is minimized by
//! cyclic coordinate descent where each coordinate step exactly minimizes the
//! half-quadratic majorizer of the Huber term at the current residuals
//! (weights `wᵢ = min(1/γ, 1/|rᵢ|)`), followed by soft-thresholding. Every
//! coordinate step is a majorize-minimize step, so the objective never
//! increases.

mod path;

pub use path::{
    cross_validate, cross_validate_folds, cross_validate_with, fit_cv, fit_path, fold_assignment,
    lambda_path, lambda_path_with, null_model, CvOptions, CvResult, CvRow, PathOptions, CV_TIE_TOL,
};

use nalgebra::{DMatrix, DVector};
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::{check_dim, CoefVector, Dataset};

/// Classical 95%-efficiency constant for the Huber threshold.
const MAX_HALVINGS: usize = 30;
const NEWTON_DAMPING: f64 = 1e-10;

pub const HUBER_EFFICIENCY: f64 = 1.345;
/// Consistency factor turning a MAD into a normal-scale estimate.
pub const MAD_TO_SD: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Huber threshold γ.
    pub gamma: f64,
    /// Elastic-net mixing α: 1 is the lasso, 0 is ridge.
    pub alpha: f64,
    /// Penalty level λ.
    pub lambda: f64,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    /// Cap on coordinate sweeps.
    pub max_iter: usize,
    /// Literal-objective mode: also penalize β₀.
    pub penalize_intercept: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 1.0,
            lambda: 0.0,
            tol: 1e-7,
            max_iter: 10_000,
            penalize_intercept: false,
        }
    }
}

impl SolverConfig {
    pub fn new(gamma: f64, alpha: f64, lambda: f64) -> Self {
        Self {
            gamma,
            alpha,
            lambda,
            ..Self::default()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive and finite");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative and finite");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coef: CoefVector,
    /// Penalized objective at `coef`.
    pub objective: f64,
    /// Coordinate sweeps performed (full and active-set).
    pub iterations: usize,
    pub converged: bool,
    /// Largest violation of the subgradient optimality conditions.
    pub kkt_residual: f64,
    pub lambda: f64,
}

/// The γ-scaled Huber loss.
pub fn huber_loss(t: f64, gamma: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("huber loss argument"));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    Ok(loss(t, gamma))
}

/// Derivative of [`huber_loss`] in `t`: `clamp(t, −γ, γ)/γ`.
pub fn huber_psi(t: f64, gamma: f64) -> f64 {
    psi(t, gamma)
}

#[inline]
pub(crate) fn loss(t: f64, gamma: f64) -> f64 {
    let a = t.abs();
    if a > gamma {
        a - 0.5 * gamma
    } else {
        0.5 * t * t / gamma
    }
}

#[inline]
pub(crate) fn psi(t: f64, gamma: f64) -> f64 {
    t.clamp(-gamma, gamma) / gamma
}

/// Mean Huber loss of the residuals.
pub fn mean_huber_loss(residuals: &[f64], gamma: f64) -> f64 {
    residuals.iter().map(|&r| loss(r, gamma)).sum::<f64>() / residuals.len() as f64
}

/// Elastic-net penalty `α‖b‖₁ + ½(1−α)‖b‖₂²`.
pub fn elastic_net_penalty<'a>(values: impl IntoIterator<Item = &'a f64>, alpha: f64) -> f64 {
    let (l1, l2) = values
        .into_iter()
        .fold((0.0, 0.0), |(l1, l2), v| (l1 + v.abs(), l2 + v * v));
    alpha * l1 + 0.5 * (1.0 - alpha) * l2
}

fn penalty_of(coef: &CoefVector, cfg: &SolverConfig) -> f64 {
    let mut pen = elastic_net_penalty(coef.slopes.iter(), cfg.alpha);
    if cfg.penalize_intercept {
        pen += elastic_net_penalty(std::iter::once(&coef.intercept), cfg.alpha);
    }
    cfg.lambda * pen
}

/// Penalized objective of `beta` on `d`.
pub fn huber_objective(beta: &CoefVector, d: &Dataset, cfg: &SolverConfig) -> Result<f64> {
    huber_objective_with_offset(beta, d, None, cfg)
}

pub fn huber_objective_with_offset(
    beta: &CoefVector,
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_dim(beta.p(), d.p(), "coefficients vs covariates")?;
    if let Some(o) = offset {
        check_dim(o.len(), d.n(), "offset vs rows")?;
    }
    let mut fitted = d.predict(beta)?;
    if let Some(o) = offset {
        fitted += o;
    }
    let residuals: Vec<f64> = d.y().iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok(mean_huber_loss(&residuals, cfg.gamma) + penalty_of(beta, cfg))
}

/// Minimizer of the intercept-only Huber loss `Σ ℓ(vᵢ − b)`.
///
/// `Σ ψ(vᵢ − b)` is nonincreasing in `b`, so bisection on the data range
/// locates a root.
pub fn intercept_only(values: &[f64], gamma: f64) -> f64 {
    let score = |b: f64| values.iter().map(|&v| psi(v - b, gamma)).sum::<f64>();
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = score(mid);
        if s > 0.0 {
            lo = mid;
        } else if s < 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    0.5 * (lo + hi)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mad_scale(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    MAD_TO_SD * median(&mut abs)
}

/// Default Huber threshold: `1.345 × 1.4826 × MAD` of the residuals of an
/// intercept-only Huber fit.
///
/// The preliminary threshold comes from the residuals about the median; the
/// intercept-only fit at that threshold then yields the final scale (one
/// recomputation, no iteration).
pub fn default_gamma(y: &Array1<f64>, offset: Option<&Array1<f64>>) -> Result<f64> {
    let v: Vec<f64> = match offset {
        Some(o) => y.iter().zip(o.iter()).map(|(a, b)| a - b).collect(),
        None => y.to_vec(),
    };
    let mut sorted = v.clone();
    let med = median(&mut sorted);
    let centered: Vec<f64> = v.iter().map(|x| x - med).collect();
    let mut scale = mad_scale(&centered);
    if !(scale > 0.0) {
        // more than half the values tie; fall back to the mean absolute deviation
        scale = centered.iter().map(|r| r.abs()).sum::<f64>() / v.len() as f64;
    }
    if !(scale > 0.0) {
        return Err(Error::ConstantResponse);
    }
    let gamma0 = HUBER_EFFICIENCY * scale;
    let b = intercept_only(&v, gamma0);
    let res: Vec<f64> = v.iter().map(|x| x - b).collect();
    let refined = HUBER_EFFICIENCY * mad_scale(&res);
    Ok(if refined > 0.0 { refined } else { gamma0 })
}

/// Fits `d` at the configured penalty.
pub fn fit(d: &Dataset, cfg: &SolverConfig, warm_start: Option<&CoefVector>) -> Result<FitResult> {
    fit_with_offset(d, None, cfg, warm_start)
}

/// As [`fit`], with a fixed per-row offset added to the linear predictor.
pub fn fit_with_offset(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    cfg: &SolverConfig,
    warm_start: Option<&CoefVector>,
) -> Result<FitResult> {
    cfg.validate()?;
    let design = Design::new(d, offset)?;
    let init = design.initial_coef(cfg.gamma, warm_start)?;
    Ok(design.solve(cfg, init, None))
}

/// As [`fit_with_offset`], also returning the objective after every sweep.
pub fn fit_traced(
    d: &Dataset,
    offset: Option<&Array1<f64>>,
    cfg: &SolverConfig,
    warm_start: Option<&CoefVector>,
) -> Result<(FitResult, Vec<f64>)> {
    cfg.validate()?;
    let design = Design::new(d, offset)?;
    let init = design.initial_coef(cfg.gamma, warm_start)?;
    let mut trace = Vec::new();
    let res = design.solve(cfg, init, Some(&mut trace));
    Ok((res, trace))
}

/// Column-major copy of the covariates plus the offset-adjusted response.
pub(crate) struct Design {
    cols: Vec<f64>,
    /// `y − offset`
    target: Vec<f64>,
    n: usize,
    p: usize,
}

/// `Σ zᵢ zᵢᵀ` over quadratic-branch rows for a fixed Newton variable set,
/// updated row by row as residuals cross the threshold.
pub(crate) struct GramCache {
    with_intercept: bool,
    active: Vec<usize>,
    in_quad: Vec<bool>,
    gram: DMatrix<f64>,
}

impl Design {
    pub(crate) fn new(d: &Dataset, offset: Option<&Array1<f64>>) -> Result<Self> {
        let (n, p) = (d.n(), d.p());
        let target = match offset {
            Some(o) => {
                check_dim(o.len(), n, "offset vs rows")?;
                if !o.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("offset"));
                }
                d.y().iter().zip(o.iter()).map(|(y, o)| y - o).collect()
            }
            None => d.y().to_vec(),
        };
        let mut cols = Vec::with_capacity(n * p);
        for col in d.x().columns() {
            cols.extend(col.iter());
        }
        Ok(Self { cols, target, n, p })
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    pub(crate) fn initial_coef(&self, gamma: f64, warm: Option<&CoefVector>) -> Result<CoefVector> {
        match warm {
            Some(w) => {
                check_dim(w.p(), self.p, "warm start vs covariates")?;
                Ok(w.clone())
            }
            None => Ok(CoefVector {
                intercept: intercept_only(&self.target, gamma),
                slopes: Array1::zeros(self.p),
            }),
        }
    }

    fn residuals(&self, coef: &CoefVector) -> Vec<f64> {
        let mut r: Vec<f64> = self.target.iter().map(|t| t - coef.intercept).collect();
        for (j, &b) in coef.slopes.iter().enumerate() {
            if b != 0.0 {
                for (ri, xi) in r.iter_mut().zip(self.col(j)) {
                    *ri -= b * xi;
                }
            }
        }
        r
    }

    /// `(1/n) Σ ψ(rᵢ) x_ij`, the negative partial derivative of the loss.
    #[inline]
    fn score(&self, j: usize, r: &[f64], gamma: f64) -> f64 {
        let mut c = 0.0;
        for (ri, xi) in r.iter().zip(self.col(j)) {
            c += psi(*ri, gamma) * xi;
        }
        c / self.n as f64
    }

    /// Slope scores at the intercept-only solution: `λ_max · α` before rounding.
    pub(crate) fn null_scores(&self, gamma: f64) -> (f64, Vec<f64>) {
        let b0 = intercept_only(&self.target, gamma);
        let r: Vec<f64> = self.target.iter().map(|t| t - b0).collect();
        (b0, (0..self.p).map(|j| self.score(j, &r, gamma)).collect())
    }

    fn objective(&self, coef: &CoefVector, r: &[f64], cfg: &SolverConfig) -> f64 {
        mean_huber_loss(r, cfg.gamma) + penalty_of(coef, cfg)
    }

    fn kkt(&self, coef: &CoefVector, r: &[f64], cfg: &SolverConfig) -> f64 {
        let l1 = cfg.lambda * cfg.alpha;
        let l2 = cfg.lambda * (1.0 - cfg.alpha);
        let violation = |grad: f64, b: f64| {
            if b == 0.0 {
                (grad.abs() - l1).max(0.0)
            } else {
                (grad + l2 * b + l1 * b.signum()).abs()
            }
        };
        let g0 = -r.iter().map(|&ri| psi(ri, cfg.gamma)).sum::<f64>() / self.n as f64;
        let mut worst = if cfg.penalize_intercept {
            violation(g0, coef.intercept)
        } else {
            g0.abs()
        };
        for j in 0..self.p {
            let g = -self.score(j, r, cfg.gamma);
            worst = worst.max(violation(g, coef.slopes[j]));
        }
        worst
    }

    /// One coordinate step on slope `j`; returns the absolute change.
    ///
    /// The first candidate is a semismooth Newton step whose curvature counts
    /// only residuals on the quadratic branch. It is kept when it does not
    /// increase the objective; otherwise the majorize-minimize step (curvature
    /// from weights `min(1/γ, 1/|rᵢ|)`) is taken, which always descends.
    #[inline]
    fn update_slope(
        &self,
        j: usize,
        coef: &mut CoefVector,
        r: &mut [f64],
        gamma: f64,
        l1: f64,
        l2: f64,
    ) -> f64 {
        let x = self.col(j);
        let inv_gamma = 1.0 / gamma;
        let mut a_mm = 0.0;
        let mut a_newton = 0.0;
        let mut c = 0.0;
        for (ri, xi) in r.iter().zip(x) {
            let ar = ri.abs();
            let xx = xi * xi;
            if ar > gamma {
                a_mm += xx / ar;
                c += ri.signum() * xi;
            } else {
                a_newton += xx;
                c += ri * inv_gamma * xi;
            }
        }
        let n = self.n as f64;
        let a_newton = a_newton * inv_gamma / n;
        let a_mm = a_mm / n + a_newton;
        let c = c / n;
        let old = coef.slopes[j];
        let step = |a: f64| -> Option<f64> {
            let denom = a + l2;
            (denom > 0.0).then(|| soft_threshold(a * old + c, l1) / denom)
        };

        let mut new = None;
        if a_newton < a_mm {
            if let Some(b) = step(a_newton) {
                if b != old && self.coordinate_gain(x, r, b - old, gamma) + l1 * (b.abs() - old.abs())
                    + 0.5 * l2 * (b * b - old * old)
                    <= 0.0
                {
                    new = Some(b);
                }
            }
        }
        let Some(new) = new.or_else(|| step(a_mm)) else {
            return 0.0;
        };
        let delta = new - old;
        if delta != 0.0 {
            coef.slopes[j] = new;
            for (ri, xi) in r.iter_mut().zip(x) {
                *ri -= delta * xi;
            }
        }
        delta.abs()
    }

    /// Change in the mean loss when slope `j` moves by `delta`.
    #[inline]
    fn coordinate_gain(&self, x: &[f64], r: &[f64], delta: f64, gamma: f64) -> f64 {
        let mut change = 0.0;
        for (ri, xi) in r.iter().zip(x) {
            change += loss(ri - delta * xi, gamma) - loss(*ri, gamma);
        }
        change / self.n as f64
    }

    fn update_intercept(&self, coef: &mut CoefVector, r: &mut [f64], cfg: &SolverConfig) -> f64 {
        let gamma = cfg.gamma;
        let mut a = 0.0;
        let mut c = 0.0;
        for ri in r.iter() {
            let ar = ri.abs();
            a += if ar > gamma { 1.0 / ar } else { 1.0 / gamma };
            c += psi(*ri, gamma);
        }
        let n = self.n as f64;
        let (a, c) = (a / n, c / n);
        let old = coef.intercept;
        let new = if cfg.penalize_intercept {
            let l1 = cfg.lambda * cfg.alpha;
            let l2 = cfg.lambda * (1.0 - cfg.alpha);
            soft_threshold(a * old + c, l1) / (a + l2)
        } else {
            old + c / a
        };
        let delta = new - old;
        if delta != 0.0 {
            coef.intercept = new;
            for ri in r.iter_mut() {
                *ri -= delta;
            }
        }
        delta.abs()
    }

    /// Damped semismooth Newton step on the intercept and the nonzero slopes
    /// in `active`.
    ///
    /// Curvature comes from residuals on the quadratic branch, with a tiny
    /// ridge for invertibility; the step is halved until the objective drops.
    /// Coefficients that would change sign are set to zero. Returns the
    /// largest coefficient change, or `None` when no tried step lowers the
    /// objective.
    fn newton_step(
        &self,
        active: &[usize],
        coef: &mut CoefVector,
        r: &mut [f64],
        cfg: &SolverConfig,
        cache: &mut Option<GramCache>,
    ) -> Option<f64> {
        let gamma = cfg.gamma;
        let l1 = cfg.lambda * cfg.alpha;
        let l2 = cfg.lambda * (1.0 - cfg.alpha);
        let n = self.n as f64;
        let with_intercept = !cfg.penalize_intercept || coef.intercept != 0.0;
        let ones = vec![1.0; if with_intercept { self.n } else { 0 }];
        let active: Vec<usize> = active.iter().copied().filter(|&j| coef.slopes[j] != 0.0).collect();

        // (column, current value, penalized)
        let mut vars: Vec<(&[f64], f64, bool)> = Vec::with_capacity(active.len() + 1);
        if with_intercept {
            vars.push((&ones, coef.intercept, cfg.penalize_intercept));
        }
        vars.extend(active.iter().map(|&j| (self.col(j), coef.slopes[j], true)));
        let m = vars.len();
        if m == 0 {
            return None;
        }

        let in_quad: Vec<bool> = r.iter().map(|ri| ri.abs() <= gamma).collect();
        let reusable = matches!(cache, Some(c) if c.with_intercept == with_intercept && c.active == active);
        let changed: Vec<usize> = match cache {
            Some(c) if reusable => (0..self.n).filter(|&i| in_quad[i] != c.in_quad[i]).collect(),
            _ => Vec::new(),
        };
        let quad_count = in_quad.iter().filter(|&&q| q).count();
        if reusable && 4 * changed.len() <= quad_count {
            let c = cache.as_mut().expect("checked above");
            for &i in &changed {
                let z = DVector::from_fn(m, |a, _| vars[a].0[i]);
                let sign = if in_quad[i] { 1.0 } else { -1.0 };
                c.gram.ger(sign, &z, &z, 1.0);
            }
            c.in_quad = in_quad;
        } else {
            let quad: Vec<usize> = (0..self.n).filter(|&i| in_quad[i]).collect();
            let zq = DMatrix::from_fn(quad.len(), m, |i, a| vars[a].0[quad[i]]);
            *cache = Some(GramCache {
                with_intercept,
                active: active.clone(),
                in_quad,
                gram: zq.tr_mul(&zq),
            });
        }
        let mut hess = &cache.as_ref().expect("filled above").gram / (n * gamma);
        let mut grad = DVector::zeros(m);
        for (a, &(za, ba, pen)) in vars.iter().enumerate() {
            let mut g = 0.0;
            for (ri, zi) in r.iter().zip(za) {
                g -= psi(*ri, gamma) * zi;
            }
            grad[a] = g / n;
            if pen {
                grad[a] += l2 * ba + l1 * ba.signum();
                hess[(a, a)] += l2;
            }
        }
        let scale = (0..m).map(|a| hess[(a, a)]).fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 / gamma };

        let before = self.objective(coef, r, cfg);
        let mut trial = coef.clone();
        let mut moved = vec![0.0; m];
        let mut r_new = vec![0.0; self.n];
        for a in 0..m {
            hess[(a, a)] += NEWTON_DAMPING * scale;
        }
        let dir = hess.cholesky()?.solve(&grad);
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            for (a, &(_, old, pen)) in vars.iter().enumerate() {
                let mut v = old - t * dir[a];
                if pen && v.signum() != old.signum() {
                    v = 0.0;
                }
                moved[a] = v - old;
            }
            r_new.copy_from_slice(r);
            for (a, &(z, _, _)) in vars.iter().enumerate() {
                if moved[a] != 0.0 {
                    for (ri, zi) in r_new.iter_mut().zip(z) {
                        *ri -= moved[a] * zi;
                    }
                }
            }
            let k = usize::from(with_intercept);
            if with_intercept {
                trial.intercept = coef.intercept + moved[0];
            }
            for (&j, dv) in active.iter().zip(&moved[k..]) {
                trial.slopes[j] = coef.slopes[j] + dv;
            }
            if self.objective(&trial, &r_new, cfg) < before {
                *coef = trial;
                r.copy_from_slice(&r_new);
                return Some(moved.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())));
            }
            t *= 0.5;
        }
        None
    }

    fn sweep(
        &self,
        coords: impl Iterator<Item = usize>,
        coef: &mut CoefVector,
        r: &mut [f64],
        cfg: &SolverConfig,
    ) -> f64 {
        let l1 = cfg.lambda * cfg.alpha;
        let l2 = cfg.lambda * (1.0 - cfg.alpha);
        let mut max_change: f64 = 0.0;
        for j in coords {
            max_change = max_change.max(self.update_slope(j, coef, r, cfg.gamma, l1, l2));
        }
        max_change.max(self.update_intercept(coef, r, cfg))
    }

    /// Runs coordinate descent from `coef`. Full sweeps alternate with sweeps
    /// restricted to the current nonzero slopes; convergence is only declared
    /// after a full sweep moves no coefficient by `tol` or more and the KKT
    /// residual is within `100·tol`.
    pub(crate) fn solve(
        &self,
        cfg: &SolverConfig,
        mut coef: CoefVector,
        mut trace: Option<&mut Vec<f64>>,
    ) -> FitResult {
        let mut r = self.residuals(&coef);
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.objective(&coef, &r, cfg));
        }
        let mut iterations = 0;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        let mut active: Vec<usize> = Vec::with_capacity(self.p);
        let mut gram = None;

        'outer: while iterations < cfg.max_iter {
            let change = self.sweep(0..self.p, &mut coef, &mut r, cfg);
            iterations += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(&coef, &r, cfg));
            }
            if change < cfg.tol {
                kkt = self.kkt(&coef, &r, cfg);
                if kkt <= 100.0 * cfg.tol {
                    converged = true;
                    break;
                }
            }
            active.clear();
            active.extend((0..self.p).filter(|&j| coef.slopes[j] != 0.0));
            loop {
                if iterations >= cfg.max_iter {
                    break 'outer;
                }
                let change = match self.newton_step(&active, &mut coef, &mut r, cfg, &mut gram) {
                    Some(c) => c,
                    None => self.sweep(active.iter().copied(), &mut coef, &mut r, cfg),
                };
                iterations += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(&coef, &r, cfg));
                }
                if change < cfg.tol {
                    break;
                }
            }
        }
        if !converged {
            kkt = self.kkt(&coef, &r, cfg);
        }
        // Residuals drift from repeated in-place updates; report from scratch.
        let r = self.residuals(&coef);
        FitResult {
            objective: self.objective(&coef, &r, cfg),
            coef,
            iterations,
            converged,
            kkt_residual: kkt,
            lambda: cfg.lambda,
        }
    }

    pub(crate) fn heldout_loss(&self, coef: &CoefVector, gamma: f64) -> f64 {
        mean_huber_loss(&self.residuals(coef), gamma)
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huber_loss_reference_values() {
        assert_eq!(huber_loss(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(huber_loss(0.5, 1.0).unwrap(), 0.125);
        assert_eq!(huber_loss(2.0, 1.0).unwrap(), 1.5);
        assert_eq!(huber_loss(-3.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn huber_loss_rejects_bad_arguments() {
        assert!(huber_loss(f64::NAN, 1.0).is_err());
        assert!(huber_loss(f64::INFINITY, 1.0).is_err());
        assert!(huber_loss(1.0, 0.0).is_err());
        assert!(huber_loss(1.0, -2.0).is_err());
    }

    #[test]
    fn huber_loss_is_continuous_at_threshold() {
        for gamma in [0.3, 1.0, 7.5] {
            let below = huber_loss(gamma * (1.0 - 1e-12), gamma).unwrap();
            let above = huber_loss(gamma * (1.0 + 1e-12), gamma).unwrap();
            assert!((below - above).abs() < 1e-10);
            assert!((below - 0.5 * gamma).abs() < 1e-10);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(1.0, 0.5, 0.1).validate().is_ok());
        assert!(SolverConfig::new(0.0, 0.5, 0.1).validate().is_err());
        assert!(SolverConfig::new(1.0, 1.5, 0.1).validate().is_err());
        assert!(SolverConfig::new(1.0, 0.5, -0.1).validate().is_err());
        let mut c = SolverConfig::default();
        c.max_iter = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn objective_zero_residuals() {
        let d = Dataset::new(Array1::zeros(4), array![[1.0], [2.0], [-1.0], [0.5]], "t").unwrap();
        let cfg = SolverConfig::new(1.0, 1.0, 0.0);
        assert_eq!(huber_objective(&CoefVector::zeros(1), &d, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn objective_quadratic_branch() {
        let d = Dataset::new(array![1.0, -2.0, 0.5], array![[0.0], [0.0], [0.0]], "t").unwrap();
        let gamma = 10.0;
        let cfg = SolverConfig::new(gamma, 1.0, 0.0);
        let obj = huber_objective(&CoefVector::zeros(1), &d, &cfg).unwrap();
        let msr = (1.0 + 4.0 + 0.25) / 3.0;
        assert!((obj - msr / (2.0 * gamma)).abs() < 1e-15);
    }

    #[test]
    fn objective_penalty_term() {
        // residuals are zero: y = 1·x1 − 2·x2
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y = array![1.0, -2.0, -1.0];
        let d = Dataset::new(y, x, "t").unwrap();
        let beta = CoefVector::new(0.0, array![1.0, -2.0]).unwrap();
        let cfg = SolverConfig::new(1.0, 0.5, 1.0);
        assert!((huber_objective(&beta, &d, &cfg).unwrap() - 2.75).abs() < 1e-15);

        let mut literal = cfg.clone();
        literal.penalize_intercept = true;
        let shifted = CoefVector::new(2.0, array![1.0, -2.0]).unwrap();
        let d2 = Dataset::new(d.y() + 2.0, d.x().clone(), "t").unwrap();
        let expect = 2.75 + 0.5 * 2.0 + 0.25 * 4.0;
        assert!((huber_objective(&shifted, &d2, &literal).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_matches_mean_in_quadratic_regime() {
        let v = [1.0, 2.0, 4.0];
        let b = intercept_only(&v, 100.0);
        assert!((b - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_resists_outlier() {
        let v = [0.0, 0.1, -0.1, 0.05, 1000.0];
        let b = intercept_only(&v, 0.5);
        assert!(b.abs() < 0.5);
    }

    #[test]
    fn default_gamma_scales_with_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Array1<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let g1 = default_gamma(&y, None).unwrap();
        let g2 = default_gamma(&(&y * 4.0), None).unwrap();
        assert!(g1 > 0.0);
        assert!((g2 / g1 - 4.0).abs() < 1e-9);
        assert!(matches!(
            default_gamma(&Array1::from_elem(5, 2.0), None),
            Err(Error::ConstantResponse)
        ));
    }

    #[test]
    fn traced_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p) = (40, 6);
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut y: Array1<f64> = (0..n).map(|i| x[[i, 0]] - 2.0 * x[[i, 2]]).collect();
        y[3] += 25.0;
        let d = Dataset::new(y, x, "t").unwrap();
        let cfg = SolverConfig::new(0.4, 0.7, 0.01);
        let (res, trace) = fit_traced(&d, None, &cfg, None).unwrap();
        assert!(res.converged);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random::<f64>());
        let y: Array1<f64> = (0..30).map(|i| x[[i, 1]] * 3.0).collect();
        let d = Dataset::new(y, x, "t").unwrap();
        let mut cfg = SolverConfig::new(1.0, 1.0, 1e-6);
        cfg.max_iter = 1;
        let res = fit(&d, &cfg, None).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.objective.is_finite());
    }
}
