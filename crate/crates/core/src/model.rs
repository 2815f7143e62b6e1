//! Data containers shared by every estimator: the response/covariate pair,
//! coefficient vectors with a separately stored intercept, and column
//! standardization.

use std::fs::File;
use std::io::Write;
use std::ops::{Add, Sub};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A response vector paired with its covariate matrix.
///
/// The constant column of the design is never stored; estimators add the
/// intercept explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
    label: String,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>, label: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: x.nrows(),
                context: "covariate rows vs response length",
            });
        }
        if y.is_empty() {
            return Err(Error::TooFewRows { needed: 1, found: 0 });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one covariate".into()));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        Ok(Self {
            y,
            x,
            label: label.into(),
        })
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Rows in the given order. Panics on an out-of-range index.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let y = self.y.select(Axis(0), rows);
        let x = self.x.select(Axis(0), rows);
        Dataset::new(y, x, self.label.clone())
    }

    /// Stacks datasets row-wise in the order given.
    pub fn concat(parts: &[&Dataset], label: impl Into<String>) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("cannot concatenate zero datasets".into()))?;
        let p = first.p();
        for d in parts {
            if d.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: d.p(),
                    context: "covariate count across datasets",
                });
            }
        }
        let n: usize = parts.iter().map(|d| d.n()).sum();
        let mut y = Array1::zeros(n);
        let mut x = Array2::zeros((n, p));
        let mut at = 0;
        for d in parts {
            let end = at + d.n();
            y.slice_mut(ndarray::s![at..end]).assign(&d.y);
            x.slice_mut(ndarray::s![at..end, ..]).assign(&d.x);
            at = end;
        }
        Dataset::new(y, x, label)
    }

    /// Linear predictor `β₀ + Xβ₁` for every row.
    pub fn predict(&self, coef: &CoefVector) -> Result<Array1<f64>> {
        check_dim(coef.p(), self.p(), "coefficients vs covariates")?;
        Ok(self.x.dot(&coef.slopes) + coef.intercept)
    }

    pub fn read_csv(path: impl AsRef<Path>, label: impl Into<String>) -> Result<Dataset> {
        let path = path.as_ref();
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h.trim() == "y")
            .ok_or_else(|| parse_err("missing `y` column".into()))?;
        let p = headers.len() - 1;
        if p == 0 {
            return Err(parse_err("no covariate columns".into()));
        }
        // map xj -> source column
        let mut x_cols = vec![usize::MAX; p];
        for (i, h) in headers.iter().enumerate() {
            if i == y_col {
                continue;
            }
            let j: usize = h
                .trim()
                .strip_prefix('x')
                .and_then(|s| s.parse().ok())
                .filter(|&j| (1..=p).contains(&j))
                .ok_or_else(|| parse_err(format!("unexpected column `{h}`")))?;
            if x_cols[j - 1] != usize::MAX {
                return Err(parse_err(format!("duplicate column `{h}`")));
            }
            x_cols[j - 1] = i;
        }

        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                let raw = rec.get(i).unwrap_or("").trim();
                raw.parse::<f64>()
                    .map_err(|_| parse_err(format!("row {}: bad number `{raw}`", line + 2)))
            };
            ys.push(field(y_col)?);
            for &c in &x_cols {
                xs.push(field(c)?);
            }
        }
        let n = ys.len();
        let x = Array2::from_shape_vec((n, p), xs).map_err(|e| parse_err(e.to_string()))?;
        Dataset::new(Array1::from(ys), x, label)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let mut header = String::from("y");
        for j in 1..=self.p() {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(out, "{header}")?;
        for (i, row) in self.x.outer_iter().enumerate() {
            let mut line = format!("{}", self.y[i]);
            for v in row {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Intercept plus `p` slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub intercept: f64,
    pub slopes: Array1<f64>,
}

impl CoefVector {
    pub fn new(intercept: f64, slopes: Array1<f64>) -> Result<Self> {
        if !intercept.is_finite() || !slopes.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        Ok(Self { intercept, slopes })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            intercept: 0.0,
            slopes: Array1::zeros(p),
        }
    }

    /// Builds from the full `(β₀, β₁ᵀ)` layout, intercept first.
    pub fn from_full(full: &[f64]) -> Result<Self> {
        let (&b0, rest) = full
            .split_first()
            .ok_or_else(|| Error::InvalidConfig("coefficient vector needs an intercept".into()))?;
        Self::new(b0, Array1::from(rest.to_vec()))
    }

    pub fn p(&self) -> usize {
        self.slopes.len()
    }

    /// The `p + 1` entries, intercept first.
    pub fn to_full(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.slopes.iter().copied())
            .collect()
    }

    pub fn get(&self, j: usize) -> f64 {
        if j == 0 {
            self.intercept
        } else {
            self.slopes[j - 1]
        }
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.intercept + row.dot(&self.slopes)
    }

    pub fn nonzeros(&self) -> usize {
        self.to_full().iter().filter(|v| **v != 0.0).count()
    }
}

impl Add for &CoefVector {
    type Output = CoefVector;

    fn add(self, rhs: &CoefVector) -> CoefVector {
        assert_eq!(self.p(), rhs.p(), "coefficient dimension mismatch");
        CoefVector {
            intercept: self.intercept + rhs.intercept,
            slopes: &self.slopes + &rhs.slopes,
        }
    }
}

impl Sub for &CoefVector {
    type Output = CoefVector;

    fn sub(self, rhs: &CoefVector) -> CoefVector {
        assert_eq!(self.p(), rhs.p(), "coefficient dimension mismatch");
        CoefVector {
            intercept: self.intercept - rhs.intercept,
            slopes: &self.slopes - &rhs.slopes,
        }
    }
}

/// ℓ₁ distance over all `p + 1` entries, intercept included.
pub fn l1_distance(a: &CoefVector, b: &CoefVector) -> Result<f64> {
    check_dim(b.p(), a.p(), "l1 distance")?;
    Ok((a.intercept - b.intercept).abs()
        + a.slopes
            .iter()
            .zip(b.slopes.iter())
            .map(|(u, v)| (u - v).abs())
            .sum::<f64>())
}

/// Column means and population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub means: Array1<f64>,
    pub scales: Array1<f64>,
}

impl StandardizationStats {
    pub fn compute(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows() as f64;
        let mut means = Array1::zeros(x.ncols());
        let mut scales = Array1::zeros(x.ncols());
        for (j, col) in x.columns().into_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::ZeroVariance { column: j });
            }
            means[j] = mean;
            scales[j] = sd;
        }
        Ok(Self { means, scales })
    }

    /// Applies these statistics to another covariate matrix (e.g. a test split).
    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        check_dim(d.p(), self.means.len(), "standardization stats vs covariates")?;
        let x = (d.x() - &self.means) / &self.scales;
        Dataset::new(d.y().clone(), x, d.label())
    }

    /// Maps coefficients fitted on standardized covariates back to the
    /// original units.
    pub fn coef_to_original(&self, coef: &CoefVector) -> Result<CoefVector> {
        check_dim(coef.p(), self.means.len(), "coefficients vs standardization stats")?;
        let slopes = &coef.slopes / &self.scales;
        let intercept = coef.intercept - slopes.dot(&self.means);
        CoefVector::new(intercept, slopes)
    }
}

/// Centers every column and scales it to unit population standard deviation.
pub fn standardize(d: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    let stats = StandardizationStats::compute(d.x())?;
    let out = stats.transform(d)?;
    Ok((out, stats))
}

pub(crate) fn check_dim(found: usize, expected: usize, context: &'static str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            found,
            context,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardize_simple_column() {
        let d = Dataset::new(array![0.0, 0.0, 0.0], array![[1.0], [2.0], [3.0]], "t").unwrap();
        let (s, stats) = standardize(&d).unwrap();
        let r = (1.5f64).sqrt();
        let col = s.x().column(0);
        assert!((col[0] + r).abs() < 1e-15);
        assert!(col[1].abs() < 1e-15);
        assert!((col[2] - r).abs() < 1e-15);
        assert_eq!(stats.means[0], 2.0);
        assert!((stats.scales[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_noop_on_standard_column() {
        let r = (1.5f64).sqrt();
        let d = Dataset::new(array![1.0, 2.0, 3.0], array![[-r], [0.0], [r]], "t").unwrap();
        let (s, stats) = standardize(&d).unwrap();
        assert!(stats.means[0].abs() < 1e-15);
        assert!((stats.scales[0] - 1.0).abs() < 1e-15);
        for (a, b) in s.x().iter().zip(d.x().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let d = Dataset::new(array![1.0, 2.0], array![[1.0, 5.0], [2.0, 5.0]], "t").unwrap();
        match standardize(&d) {
            Err(Error::ZeroVariance { column }) => assert_eq!(column, 1),
            other => panic!("expected zero variance error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(matches!(
            Dataset::new(array![1.0, 2.0], array![[1.0]], "t"),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(array![f64::NAN], array![[1.0]], "t"),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Dataset::new(array![1.0], array![[f64::INFINITY]], "t"),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn l1_distance_examples() {
        let mut slopes = Array1::zeros(20);
        slopes.slice_mut(ndarray::s![..14]).fill(0.3);
        let a = CoefVector::new(0.0, slopes).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.slopes[3] += 0.2;
        assert!((l1_distance(&a, &b).unwrap() - 0.2).abs() < 1e-15);

        let short = CoefVector::zeros(3);
        assert!(l1_distance(&a, &short).is_err());
    }

    #[test]
    fn rademacher_shift_has_deterministic_l1() {
        let p = 40;
        let h = 6.0;
        let a = CoefVector::zeros(p);
        let full: Vec<f64> = (0..=p)
            .map(|j| if j % 3 == 0 { -h / p as f64 } else { h / p as f64 })
            .collect();
        let b = CoefVector::from_full(&full).unwrap();
        let direct: f64 = full.iter().map(|v| v.abs()).sum();
        let d = l1_distance(&a, &b).unwrap();
        assert!((d - direct).abs() < 1e-12);
        assert!((d - h / p as f64 * (p + 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset::new(
            array![1.5, -0.25, 1e-17],
            array![[0.1, 2.0], [3.0, -4.5], [1.0 / 3.0, 7.0]],
            "t",
        )
        .unwrap();
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, "t").unwrap();
        assert_eq!(back, d);
    }
}
