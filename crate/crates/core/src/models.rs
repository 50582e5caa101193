//! Null-model estimation, score extraction and residual bootstrap.
//!
//! Only the restricted model (all tested coefficients at zero) is ever
//! estimated. Each family turns its restricted fit into a [`ScorePack`]: the
//! standardized score vector `U` for the tested block and a finite-sample
//! estimate `G` of its covariance.
//!
//! | family       | restricted fit        | `U`                                        | `G`                          |
//! |--------------|-----------------------|--------------------------------------------|------------------------------|
//! | `Linear`     | OLS of `y` on `X`     | tested block of OLS on `(Z, X)` of residuals | `σ̃² [(D′D)⁻¹]_γγ`           |
//! | `Arch(k)`    | OLS of `y` on `X`     | slopes of `ε̃²_n` on its `k` lags           | `m̂ [(Σ w wᵀ)⁻¹]_γγ`          |
//! | `RandomCoef` | OLS of `y` on `(Z, X)`| slopes of `ϖ̃²_n` on `z²_n`                 | `m̂ [(Σ d dᵀ)⁻¹]_γγ`          |
//!
//! `m̂` is the mean of `(e²_n − σ̃²)²`. The sandwich `J⁻¹VJ⁻¹` is available
//! through [`CovarianceForm::Sandwich`].

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix, RngStream, SymMatrix};

/// Model family and, for ARCH, the number of tested lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Arch { lags: usize },
    RandomCoef,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Arch { .. } => "arch",
            Family::RandomCoef => "rc",
        }
    }
}

/// Observed sample.
///
/// `z` holds the sign-constrained covariates (`T × k`, empty for ARCH) and
/// `x` the free covariates (`T × m`, typically ending in an intercept
/// column). Design matrices are shared behind `Arc` so bootstrap samples
/// reuse them without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Arc<Matrix>,
    x: Arc<Matrix>,
    family: Family,
}

impl Dataset {
    pub fn new(y: Vec<f64>, z: Matrix, x: Matrix, family: Family) -> Result<Self> {
        Self::from_shared(y, Arc::new(z), Arc::new(x), family)
    }

    fn from_shared(y: Vec<f64>, z: Arc<Matrix>, x: Arc<Matrix>, family: Family) -> Result<Self> {
        let t = y.len();
        if x.rows() != t || (z.cols() > 0 && z.rows() != t) {
            return Err(Error::InvalidInput("covariate row count differs from response length".into()));
        }
        let k = match family {
            Family::Arch { lags } => {
                if z.cols() != 0 {
                    return Err(Error::InvalidInput("ARCH datasets carry no Z columns".into()));
                }
                if lags == 0 {
                    return Err(Error::InvalidInput("ARCH lag count must be at least 1".into()));
                }
                lags
            }
            _ => z.cols(),
        };
        let needed = x.cols() + k + 1;
        if t <= needed {
            return Err(Error::TooFewRows { rows: t, needed });
        }
        if y.iter().chain(z.as_slice()).chain(x.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Dataset { y, z, x, family })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of tested coefficients.
    pub fn k(&self) -> usize {
        match self.family {
            Family::Arch { lags } => lags,
            _ => self.z.cols(),
        }
    }

    /// Observations entering the score sums (0-based, half open).
    pub fn effective_range(&self) -> Range<usize> {
        match self.family {
            Family::Arch { lags } => lags..self.len(),
            _ => 0..self.len(),
        }
    }

    /// Regressors of the restricted model.
    fn restricted_design(&self) -> Result<Matrix> {
        match self.family {
            Family::RandomCoef => self.z.hstack(&self.x),
            _ => Ok((*self.x).clone()),
        }
    }

    fn with_response(&self, y: Vec<f64>) -> Dataset {
        Dataset { y, z: Arc::clone(&self.z), x: Arc::clone(&self.x), family: self.family }
    }
}

/// Estimates under the global null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedFit {
    /// Free coefficients: `β̃`, or `(ξ̃, β̃)` for random coefficients.
    pub psi_hat: Vec<f64>,
    /// `σ̃²`, `ω̃` or `σ̃²_ε` depending on the family.
    pub sigma2_hat: f64,
    pub residuals: Vec<f64>,
    pub effective_range: Range<usize>,
}

impl RestrictedFit {
    fn fitted(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.residuals).map(|(a, e)| a - e).collect()
    }
}

/// Solves the least-squares problem `min ‖y − D b‖`.
pub(crate) fn ols(design: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let gram = design.gram();
    let chol = cholesky(&gram).map_err(|_| Error::RankDeficient)?;
    Ok(chol.solve(&design.tr_mul_vec(y)))
}

/// Fits the restricted (null) model.
pub fn fit_restricted(data: &Dataset) -> Result<RestrictedFit> {
    let design = data.restricted_design()?;
    let psi_hat = ols(&design, &data.y)?;
    let fitted = design.mul_vec(&psi_hat);
    let residuals: Vec<f64> = data.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let range = data.effective_range();
    let sigma2_hat =
        residuals[range.clone()].iter().map(|e| e * e).sum::<f64>() / range.len() as f64;
    let mean_y2 = data.y.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if !(sigma2_hat > 1e-12 * mean_y2) {
        return Err(Error::DegenerateVariance { sigma2: sigma2_hat });
    }
    Ok(RestrictedFit { psi_hat, sigma2_hat, residuals, effective_range: range })
}

/// Restricted-fit score vector and covariance for the tested block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePack {
    pub u: Vec<f64>,
    pub g: SymMatrix,
    pub family: Family,
    pub t: usize,
    pub k: usize,
}

impl ScorePack {
    /// Validates shape and positive definiteness of `G`.
    pub fn new(u: Vec<f64>, g: SymMatrix, family: Family, t: usize) -> Result<Self> {
        let k = u.len();
        if k == 0 || g.dim() != k {
            return Err(Error::InvalidInput("score and covariance dimensions disagree".into()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance("non-finite score".into()));
        }
        cholesky(&g).map_err(|e| Error::SingularCovariance(format!("G: {e}")))?;
        Ok(ScorePack { u, g, family, t, k })
    }
}

/// Estimator of `G` for the variance-equation families (ARCH, random
/// coefficients). The linear family always uses `σ̃² [(D'D)⁻¹]_γγ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// `m̂ · [(Σ w wᵀ)⁻¹]_γγ` with `m̂ = mean (e²_n − σ̃²)²`: the null-model
    /// information with the kurtosis factor estimated from the residuals.
    #[default]
    Kurtosis,
    /// Per-observation outer-product sandwich
    /// `(Σ w wᵀ)⁻¹ [Σ (e²_n − σ̃²)² w wᵀ] (Σ w wᵀ)⁻¹`.
    Sandwich,
}

/// Builds `U` and `G` from a restricted fit.
pub fn score_pack(data: &Dataset, fit: &RestrictedFit) -> Result<ScorePack> {
    score_pack_with(data, fit, CovarianceForm::Kurtosis)
}

/// [`score_pack`] with an explicit covariance estimator.
pub fn score_pack_with(data: &Dataset, fit: &RestrictedFit, form: CovarianceForm) -> Result<ScorePack> {
    let k = data.k();
    if k == 0 {
        return Err(Error::InvalidInput("no tested coefficients".into()));
    }
    if fit.residuals.len() != data.len() {
        return Err(Error::InvalidInput("fit does not belong to this dataset".into()));
    }
    let (u, g) = match data.family {
        Family::Linear => linear_score(data, fit)?,
        _ => {
            let (reg, e2) = variance_regression(data, fit);
            variance_score(&reg, &e2, fit.sigma2_hat, k, form)?
        }
    };
    ScorePack::new(u, g, data.family, data.len())
}

/// Regressors `w_n` (ARCH: lagged `e²`; random coefficients: `z²`), each
/// followed by a constant, and the matching squared residuals.
fn variance_regression(data: &Dataset, fit: &RestrictedFit) -> (Matrix, Vec<f64>) {
    let k = data.k();
    let e2: Vec<f64> = fit.residuals.iter().map(|e| e * e).collect();
    let range = data.effective_range();
    let mut reg = Matrix::zeros(range.len(), k + 1);
    for (r, n) in range.clone().enumerate() {
        for j in 0..k {
            let v = match data.family {
                Family::Arch { .. } => e2[n - j - 1],
                _ => data.z.get(n, j).powi(2),
            };
            reg.set(r, j, v);
        }
        reg.set(r, k, 1.0);
    }
    (reg, e2[range].to_vec())
}

fn linear_score(data: &Dataset, fit: &RestrictedFit) -> Result<(Vec<f64>, SymMatrix)> {
    let k = data.k();
    let d = data.z.hstack(&data.x)?;
    let dtd = d.gram();
    let chol = cholesky(&dtd).map_err(|e| Error::SingularCovariance(format!("D'D: {e}")))?;
    let full = chol.solve(&d.tr_mul_vec(&fit.residuals));
    let inv = chol.inverse();
    let g = inv.leading_block(k).scaled(fit.sigma2_hat);
    Ok((full[..k].to_vec(), g))
}

/// Score and covariance for a variance-equation regression.
///
/// With `J = (2σ̃⁴)⁻¹ Σ w wᵀ` and per-observation scores
/// `s_n = (e²_n − σ̃²)/(2σ̃⁴) · w_n`, the standardized score is
/// `J⁻¹ Σ s_n = (Σ w wᵀ)⁻¹ Σ (e²_n − σ̃²) w_n`; the `2σ̃⁴` factors cancel in
/// either covariance form. The tested block is the first `k` coordinates.
fn variance_score(
    reg: &Matrix,
    e2: &[f64],
    sigma2: f64,
    k: usize,
    form: CovarianceForm,
) -> Result<(Vec<f64>, SymMatrix)> {
    let p = reg.cols();
    let wtw = reg.gram();
    let chol_j =
        cholesky(&wtw).map_err(|e| Error::SingularCovariance(format!("Hessian: {e}")))?;
    let dev: Vec<f64> = e2.iter().map(|v| v - sigma2).collect();
    let u_full = chol_j.solve(&reg.tr_mul_vec(&dev));
    let j_inv = chol_j.inverse();
    if form == CovarianceForm::Kurtosis {
        let m4 = dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64;
        return Ok((u_full[..k].to_vec(), j_inv.leading_block(k).scaled(m4)));
    }

    let mut v = vec![0.0; p * p];
    for (n, &dn) in dev.iter().enumerate() {
        let w = reg.row(n);
        let d2 = dn * dn;
        for a in 0..p {
            let wa = d2 * w[a];
            for b in a..p {
                v[a * p + b] += wa * w[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            v[a * p + b] = v[b * p + a];
        }
    }
    let v = SymMatrix::new(p, v)?;
    cholesky(&v).map_err(|e| Error::SingularCovariance(format!("score outer product: {e}")))?;

    // J⁻¹ V J⁻¹, restricted to the tested rows/columns.
    let mut left = vec![0.0; k * p];
    for a in 0..k {
        for l in 0..p {
            left[a * p + l] = (0..p).map(|m| j_inv.get(a, m) * v.get(m, l)).sum();
        }
    }
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            g[a * k + b] = (0..p).map(|l| left[a * p + l] * j_inv.get(l, b)).sum();
        }
    }
    let g = SymMatrix::symmetrized(k, g)?;
    Ok((u_full[..k].to_vec(), g))
}

/// Residual bootstrap sample generated under the null.
///
/// Shocks are drawn with replacement from the centered restricted residuals
/// and added to the restricted systematic part; covariates are unchanged.
pub fn bootstrap_dataset<R: Rng + ?Sized>(
    data: &Dataset,
    fit: &RestrictedFit,
    rng: &mut R,
) -> Dataset {
    let t = data.len();
    let mean = fit.residuals.iter().sum::<f64>() / t as f64;
    let fitted = fit.fitted(&data.y);
    let y: Vec<f64> = fitted
        .iter()
        .map(|f| f + (fit.residuals[rng.random_range(0..t)] - mean))
        .collect();
    data.with_response(y)
}

/// [`bootstrap_dataset`] driven by a fresh generator for `stream`.
pub fn bootstrap_dataset_from(data: &Dataset, fit: &RestrictedFit, stream: RngStream) -> Dataset {
    bootstrap_dataset(data, fit, &mut stream.generator())
}

/// Outcome of the family-specific sufficient condition for subset pivotality
/// of the stepdown critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalityCheck {
    pub holds: bool,
    pub detail: String,
}

/// Runtime check of the condition under which stepdown critical values
/// computed from the global-null pool stay valid for every subset.
///
/// `G` under the truth is estimated by the sandwich form, which stays
/// consistent off the null.
/// * Linear: always holds (nested variance estimates only shrink).
/// * ARCH: all off-diagonal entries of that estimate are non-positive.
/// * Random coefficients: the estimate is elementwise no greater than the
///   null-model form `m̂·[(Σ d dᵀ)⁻¹]_γγ`.
pub fn pivotality_check(data: &Dataset, fit: &RestrictedFit) -> PivotalityCheck {
    let k = data.k();
    if data.family == Family::Linear {
        return PivotalityCheck {
            holds: true,
            detail: "linear model: restricted variance is monotone in nested fits".into(),
        };
    }
    let (reg, e2) = variance_regression(data, fit);
    let sandwich = match variance_score(&reg, &e2, fit.sigma2_hat, k, CovarianceForm::Sandwich) {
        Ok((_, g)) => g,
        Err(e) => return PivotalityCheck { holds: false, detail: e.to_string() },
    };
    if let Family::Arch { .. } = data.family {
        if k == 1 {
            return PivotalityCheck { holds: true, detail: "single lag".into() };
        }
        let worst = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| sandwich.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        return PivotalityCheck {
            holds: worst <= 0.0,
            detail: format!("largest off-diagonal of G = {worst:.4e}"),
        };
    }
    let bound = match variance_score(&reg, &e2, fit.sigma2_hat, k, CovarianceForm::Kurtosis) {
        Ok((_, g)) => g,
        Err(e) => return PivotalityCheck { holds: false, detail: e.to_string() },
    };
    let excess = sandwich
        .as_slice()
        .iter()
        .zip(bound.as_slice())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    PivotalityCheck {
        holds: excess <= 0.0,
        detail: format!("max elementwise excess of G over bound = {excess:.4e}"),
    }
}

/// Mean of `v`.
#[cfg(test)]
pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with denominator `n`.
#[cfg(test)]
pub(crate) fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}
