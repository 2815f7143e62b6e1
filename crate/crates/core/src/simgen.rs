//! Synthetic designs for the known-source and unknown-source simulation
//! studies.
//!
//! Coefficient vectors use the full `p + 1` layout with the intercept at
//! position 1 (1-based), matching how the perturbation index sets are stated.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefVector, Dataset};
use crate::rng::{dataset_stream, substream};

/// Value of every nonzero target coefficient.
pub const TARGET_SIGNAL: f64 = 0.3;
/// Perturbed coordinates in the known-source design.
pub const PERTURBED_COORDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    Cauchy,
    MixedNormal,
}

impl ErrorDist {
    pub fn name(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Cauchy => "cauchy",
            ErrorDist::MixedNormal => "mixed_normal",
        }
    }
}

impl std::str::FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ErrorDist::Normal),
            "cauchy" => Ok(ErrorDist::Cauchy),
            "mixed_normal" | "mixed" => Ok(ErrorDist::MixedNormal),
            other => Err(Error::InvalidConfig(format!("unknown error distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Shared covariance, Gaussian perturbations of the first coordinates.
    KnownSource31,
    /// Identity target covariance, Toeplitz sources, Rademacher perturbations.
    UnknownSource32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub p: usize,
    pub n0: usize,
    pub nk: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub h: f64,
    pub k_informative: usize,
    pub ell: usize,
    pub s_toeplitz: usize,
    pub error_dist: ErrorDist,
    pub design: DesignKind,
    pub alpha: f64,
    pub seed: u64,
    /// Covariance for the known-source design: `None` is the identity,
    /// `Some(ρ)` an AR(1) matrix with entries `ρ^|j−j'|`.
    #[serde(default)]
    pub ar_rho: Option<f64>,
    /// Inflate the Gaussian perturbation so `E‖β⁽ᵏ⁾ − β⁽⁰⁾‖₁ = h` exactly.
    #[serde(default)]
    pub exact_l1_mean: bool,
}

impl ScenarioConfig {
    /// Known-source design with the published sizes.
    pub fn known_source_paper() -> Self {
        Self {
            p: 500,
            n0: 30,
            nk: 20,
            s: 25,
            h: 4.0,
            k_informative: 10,
            ell: 14,
            s_toeplitz: 3,
            error_dist: ErrorDist::Normal,
            design: DesignKind::KnownSource31,
            alpha: 1.0,
            seed: 0,
            ar_rho: None,
            exact_l1_mean: false,
        }
    }

    /// Unknown-source design with the published sizes.
    pub fn unknown_source_paper() -> Self {
        Self {
            p: 500,
            n0: 100,
            nk: 100,
            s: 10,
            h: 30.0,
            k_informative: 6,
            design: DesignKind::UnknownSource32,
            ..Self::known_source_paper()
        }
    }

    /// Known-source design at desk scale (p = 50).
    pub fn known_source_desk() -> Self {
        Self {
            p: 50,
            ..Self::known_source_paper()
        }
    }

    /// Unknown-source design at desk scale (p = 100).
    pub fn unknown_source_desk() -> Self {
        Self {
            p: 100,
            ..Self::unknown_source_paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.p == 0 || self.n0 == 0 {
            return bad("p and n0 must be positive".into());
        }
        if self.s > 0 && self.nk == 0 {
            return bad("nk must be positive when sources exist".into());
        }
        if self.k_informative > self.s {
            return bad(format!("k_informative {} exceeds S {}", self.k_informative, self.s));
        }
        if self.ell > self.p + 1 {
            return bad(format!("ell {} exceeds p + 1", self.ell));
        }
        if self.k_informative < self.s && 2 * self.ell >= self.p + 1 {
            return bad("non-informative generator needs 2·ell < p + 1".into());
        }
        if self.design == DesignKind::UnknownSource32 && (self.s_toeplitz == 0 || 2 * self.s_toeplitz > self.p) {
            return bad("Toeplitz band needs 1 <= s and 2s <= p".into());
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return bad("h must be nonnegative".into());
        }
        if let Some(rho) = self.ar_rho {
            if !(rho.abs() < 1.0) {
                return bad("AR coefficient must satisfy |rho| < 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub beta0: CoefVector,
    pub betas: Vec<CoefVector>,
    /// 0-based indices of the informative sources.
    pub informative: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub target: Dataset,
    pub sources: Vec<Dataset>,
    pub truth: ScenarioTruth,
}

/// `β⁽⁰⁾`: the first `ell` entries (intercept first) equal 0.3, the rest 0.
pub fn gen_target_beta(p: usize, ell: usize) -> Result<CoefVector> {
    if ell > p + 1 {
        return Err(Error::InvalidConfig(format!("ell {ell} exceeds p + 1 = {}", p + 1)));
    }
    let full: Vec<f64> = (0..=p).map(|j| if j < ell { TARGET_SIGNAL } else { 0.0 }).collect();
    CoefVector::from_full(&full)
}

/// Number of perturbed leading coordinates and the perturbation standard
/// deviation for the known-source design.
///
/// With `p + 1 ≥ 100` this is 100 coordinates at standard deviation `h/100`.
/// Smaller designs perturb all `p + 1` coordinates at `h/(p + 1)`, keeping
/// `E‖Δ‖₁ = h·√(2/π)`. `exact_l1_mean` multiplies by `√(π/2)`.
pub fn perturbation_31_scale(p: usize, h: f64, exact_l1_mean: bool) -> (usize, f64) {
    let support = PERTURBED_COORDS.min(p + 1);
    let mut sd = h / support as f64;
    if exact_l1_mean {
        sd *= (std::f64::consts::PI / 2.0).sqrt();
    }
    (support, sd)
}

/// Informative source coefficients for the known-source design.
pub fn perturb_informative_31(
    beta0: &CoefVector,
    h: f64,
    exact_l1_mean: bool,
    rng: &mut ChaCha8Rng,
) -> CoefVector {
    let (support, sd) = perturbation_31_scale(beta0.p(), h, exact_l1_mean);
    let mut full = beta0.to_full();
    for v in full.iter_mut().take(support) {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
    CoefVector::from_full(&full).expect("finite perturbation")
}

fn rademacher(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Informative source coefficients for the unknown-source design:
/// `β⁽⁰⁾ + (h/p)·R` with `R` a Rademacher vector of length `p + 1`.
pub fn perturb_informative_32(beta0: &CoefVector, h: f64, rng: &mut ChaCha8Rng) -> CoefVector {
    let step = h / beta0.p() as f64;
    let full: Vec<f64> = beta0.to_full().iter().map(|b| b + step * rademacher(rng)).collect();
    CoefVector::from_full(&full).expect("finite perturbation")
}

/// Non-informative source coefficients: entries in `{l+1,…,2l} ∪ M` are
/// `0.5 + 2h·e_j`, all others `2h·e_j`, with `M` a uniform `l`-subset of
/// `{2l+1,…,p+1}` and `e_j` Rademacher (1-based positions).
pub fn gen_noninformative_33(h: f64, l: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<CoefVector> {
    if 2 * l >= p + 1 {
        return Err(Error::InvalidConfig(format!("need 2l < p + 1 (l = {l}, p = {p})")));
    }
    let mut shifted = vec![false; p + 1];
    // 0-based positions l..2l are 1-based l+1..2l
    for flag in shifted.iter_mut().take(2 * l).skip(l) {
        *flag = true;
    }
    for m in index::sample(rng, p + 1 - 2 * l, l) {
        shifted[2 * l + m] = true;
    }
    let full: Vec<f64> = shifted
        .iter()
        .map(|&s| {
            let base = if s { 0.5 } else { 0.0 };
            base + 2.0 * h * rademacher(rng)
        })
        .collect();
    CoefVector::from_full(&full)
}

/// Symmetric Toeplitz matrix with first row
/// `(1, 1/(s+1) repeated 2s−1 times, 0 repeated p−2s times)`.
pub fn gen_toeplitz_sigma(p: usize, s: usize) -> Result<Array2<f64>> {
    if s == 0 || 2 * s > p {
        return Err(Error::InvalidConfig(format!(
            "Toeplitz band needs 1 <= s and 2s <= p (s = {s}, p = {p})"
        )));
    }
    let band = 1.0 / (s + 1) as f64;
    let first_row: Vec<f64> = (0..p)
        .map(|k| match k {
            0 => 1.0,
            k if k < 2 * s => band,
            _ => 0.0,
        })
        .collect();
    let sigma = Array2::from_shape_fn((p, p), |(i, j)| first_row[i.abs_diff(j)]);
    cholesky(&sigma).map_err(|_| {
        Error::Factorization(format!("Toeplitz matrix with p = {p}, s = {s} is not positive definite"))
    })?;
    Ok(sigma)
}

/// AR(1) correlation matrix `ρ^|i−j|`.
pub fn ar1_sigma(p: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(sigma: &Array2<f64>) -> Result<Array2<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::Factorization("covariance must be square".into()));
    }
    let m = DMatrix::from_fn(p, p, |i, j| sigma[[i, j]]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
    let l = chol.l();
    Ok(Array2::from_shape_fn((p, p), |(i, j)| l[(i, j)]))
}

/// `n` rows drawn i.i.d. from `N(0, Σ)`; `None` means the identity.
pub fn sample_covariates(n: usize, p: usize, sigma: Option<&Array2<f64>>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let z = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(rng));
    match sigma {
        None => Ok(z),
        Some(s) => {
            if s.nrows() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: s.nrows(),
                    context: "covariance size vs p",
                });
            }
            let l = cholesky(s)?;
            // rows are zᵢᵀLᵀ, i.e. (L zᵢ)ᵀ
            Ok(z.dot(&l.t()))
        }
    }
}

/// `n` i.i.d. errors from the chosen distribution.
pub fn sample_errors(n: usize, dist: ErrorDist, rng: &mut ChaCha8Rng) -> Array1<f64> {
    match dist {
        ErrorDist::Normal => Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng)),
        ErrorDist::Cauchy => {
            let c = Cauchy::new(0.0, 1.0).expect("valid Cauchy parameters");
            Array1::from_shape_simple_fn(n, || c.sample(rng))
        }
        ErrorDist::MixedNormal => Array1::from_shape_simple_fn(n, || {
            let wide = rng.random::<f64>() < 0.1;
            let z: f64 = StandardNormal.sample(rng);
            if wide {
                10.0 * z
            } else {
                z
            }
        }),
    }
}

fn responses(x: &Array2<f64>, beta: &CoefVector, errors: &Array1<f64>) -> Array1<f64> {
    x.dot(&beta.slopes) + beta.intercept + errors
}

/// Replication 0 of [`gen_scenario_rep`].
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    gen_scenario_rep(cfg, 0)
}

/// Generates the target and every source for replication `rep`.
///
/// Each dataset draws from its own stream `(seed, rep, index)`: the target is
/// index 0 and source `k` (0-based) is index `k + 1`, consuming coefficients
/// first, then covariates, then errors. Sources `0..k_informative` are the
/// informative ones.
pub fn gen_scenario_rep(cfg: &ScenarioConfig, rep: u64) -> Result<Scenario> {
    cfg.validate()?;
    let p = cfg.p;
    let beta0 = gen_target_beta(p, cfg.ell)?;

    let shared = match (cfg.design, cfg.ar_rho) {
        (DesignKind::KnownSource31, Some(rho)) => Some(ar1_sigma(p, rho)),
        _ => None,
    };
    let toeplitz = match cfg.design {
        DesignKind::UnknownSource32 if cfg.s > 0 => Some(gen_toeplitz_sigma(p, cfg.s_toeplitz)?),
        _ => None,
    };

    let mut rng = substream(cfg.seed, dataset_stream(rep, 0));
    let x0 = sample_covariates(cfg.n0, p, shared.as_ref(), &mut rng)?;
    let e0 = sample_errors(cfg.n0, cfg.error_dist, &mut rng);
    let target = Dataset::new(responses(&x0, &beta0, &e0), x0, "target")?;

    let mut sources = Vec::with_capacity(cfg.s);
    let mut betas = Vec::with_capacity(cfg.s);
    for k in 0..cfg.s {
        let mut rng = substream(cfg.seed, dataset_stream(rep, k as u64 + 1));
        let informative = k < cfg.k_informative;
        let beta = match (informative, cfg.design) {
            (true, DesignKind::KnownSource31) => {
                perturb_informative_31(&beta0, cfg.h, cfg.exact_l1_mean, &mut rng)
            }
            (true, DesignKind::UnknownSource32) => perturb_informative_32(&beta0, cfg.h, &mut rng),
            (false, _) => gen_noninformative_33(cfg.h, cfg.ell, p, &mut rng)?,
        };
        let sigma = match cfg.design {
            DesignKind::KnownSource31 => shared.as_ref(),
            DesignKind::UnknownSource32 => toeplitz.as_ref(),
        };
        let x = sample_covariates(cfg.nk, p, sigma, &mut rng)?;
        let e = sample_errors(cfg.nk, cfg.error_dist, &mut rng);
        sources.push(Dataset::new(responses(&x, &beta, &e), x, format!("source-{}", k + 1))?);
        betas.push(beta);
    }

    Ok(Scenario {
        target,
        sources,
        truth: ScenarioTruth {
            beta0,
            betas,
            informative: (0..cfg.k_informative).collect(),
        },
    })
}

#[derive(Serialize)]
struct ScenarioManifest<'a> {
    schema_version: u32,
    library_version: &'static str,
    replication: u64,
    config: &'a ScenarioConfig,
    seed: u64,
    beta0: Vec<f64>,
    betas: Vec<Vec<f64>>,
    informative: Vec<usize>,
    files: Vec<String>,
}

/// Writes `target.csv`, `source-<k>.csv` and `manifest.json` into `dir`.
pub fn dump_scenario(cfg: &ScenarioConfig, rep: u64, scenario: &Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec!["target.csv".to_string()];
    scenario.target.write_csv(dir.join("target.csv"))?;
    for (k, s) in scenario.sources.iter().enumerate() {
        let name = format!("source-{}.csv", k + 1);
        s.write_csv(dir.join(&name))?;
        files.push(name);
    }
    let manifest = ScenarioManifest {
        schema_version: 1,
        library_version: env!("CARGO_PKG_VERSION"),
        replication: rep,
        config: cfg,
        seed: cfg.seed,
        beta0: scenario.truth.beta0.to_full(),
        betas: scenario.truth.betas.iter().map(|b| b.to_full()).collect(),
        informative: scenario.truth.informative.iter().map(|k| k + 1).collect(),
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
