//! Data-generating processes and the Monte Carlo replication loop.
//!
//! Replication `r` owns `RngStream::new(seed, 0).substream(r)` and splits it
//! into three children: data generation (0), the bootstrap pool (1) and the
//! chi-bar weight simulation of the reference test (2). Replications run in
//! parallel; everything inside one replication is sequential.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cone::{chibar_survival, chibar_weights_sequential};
use crate::error::{Error, Result};
use crate::inference::{
    build_pool, compute_stats, global_test, stepdown, Execution, MinPVariant, StatVector,
};
use crate::linalg::{cholesky, mvn_draw, Matrix, RngStream, SymMatrix};
use crate::models::{fit_restricted, pivotality_check, score_pack, Dataset, Family, ScorePack};

/// Draws used for the chi-bar weights of the reference test.
pub const REFERENCE_WEIGHT_DRAWS: usize = 100_000;

/// Innovation law, always scaled to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    StudentT { df: f64 },
}

impl ErrorDist {
    fn validate(&self) -> Result<()> {
        match *self {
            ErrorDist::StudentT { df } if !(df > 2.0) => Err(Error::ConfigInvalid {
                field: "error_dist.df".into(),
                message: format!("df = {df} must exceed 2 for a finite variance"),
            }),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> ErrorSampler {
        match *self {
            ErrorDist::Normal => ErrorSampler::Normal,
            ErrorDist::StudentT { df } => ErrorSampler::StudentT {
                dist: StudentT::new(df).expect("df validated"),
                scale: (df / (df - 2.0)).sqrt(),
            },
        }
    }
}

enum ErrorSampler {
    Normal,
    StudentT { dist: StudentT<f64>, scale: f64 },
}

impl ErrorSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorSampler::Normal => rng.sample(StandardNormal),
            ErrorSampler::StudentT { dist, scale } => dist.sample(rng) / scale,
        }
    }
}

fn default_beta() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn one() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    1000
}

fn default_error_dist() -> ErrorDist {
    ErrorDist::Normal
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    #[serde(alias = "T")]
    pub t: usize,
    pub gamma_true: Vec<f64>,
    #[serde(default = "default_error_dist")]
    pub error_dist: ErrorDist,
    /// Equicorrelation of `(z, x^d)` in the linear design.
    #[serde(default)]
    pub rho: f64,
    /// Use `gamma_true / √T` as the true coefficients.
    #[serde(default)]
    pub local_scaling: bool,
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
    /// ARCH intercept.
    #[serde(default = "one")]
    pub omega: f64,
    /// Random-coefficient error variance.
    #[serde(default = "one")]
    pub sigma_eps2: f64,
    /// Random-coefficient mean slopes; ones when absent.
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl DgpSpec {
    /// Spec with every optional field at its default.
    pub fn new(family: Family, t: usize, gamma_true: Vec<f64>) -> Self {
        DgpSpec {
            family,
            t,
            gamma_true,
            error_dist: ErrorDist::Normal,
            rho: 0.0,
            local_scaling: false,
            beta: default_beta(),
            omega: 1.0,
            sigma_eps2: 1.0,
            xi: None,
            burn_in: default_burn_in(),
        }
    }

    pub fn k(&self) -> usize {
        self.gamma_true.len()
    }

    /// Coefficients actually used by the generator.
    pub fn effective_gamma(&self) -> Vec<f64> {
        let s = if self.local_scaling { (self.t as f64).sqrt() } else { 1.0 };
        self.gamma_true.iter().map(|g| g / s).collect()
    }

    fn xi_vec(&self) -> Vec<f64> {
        self.xi.clone().unwrap_or_else(|| vec![1.0; self.k()])
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, message: String| Error::ConfigInvalid { field: field.into(), message };
        let k = self.k();
        if k == 0 {
            return Err(invalid("gamma_true", "needs at least one entry".into()));
        }
        if self.gamma_true.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(invalid("gamma_true", "entries must be finite and non-negative".into()));
        }
        if self.beta.len() != 2 || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("beta", "expects two finite entries (slope, intercept)".into()));
        }
        if self.t <= self.beta.len() + k + 1 {
            return Err(invalid("t", format!("T = {} is too small for k = {k}", self.t)));
        }
        self.error_dist.validate()?;
        match self.family {
            Family::Linear => {
                if !(self.rho < 1.0 && 1.0 + k as f64 * self.rho > 0.0) {
                    return Err(Error::InvalidRho { rho: self.rho, k });
                }
            }
            Family::Arch { lags } => {
                if lags != k {
                    return Err(invalid("family", format!("ARCH lags = {lags} but gamma_true has {k} entries")));
                }
                if !(self.omega > 0.0 && self.omega.is_finite()) {
                    return Err(invalid("omega", "must be positive".into()));
                }
                let sum: f64 = self.effective_gamma().iter().sum();
                if sum >= 1.0 {
                    return Err(Error::ExplosiveVariance { sum });
                }
            }
            Family::RandomCoef => {
                if !(self.sigma_eps2 > 0.0 && self.sigma_eps2.is_finite()) {
                    return Err(invalid("sigma_eps2", "must be positive".into()));
                }
                if self.xi_vec().len() != k {
                    return Err(invalid("xi", format!("expects {k} entries")));
                }
            }
        }
        Ok(())
    }
}

fn default_variants() -> Vec<MinPVariant> {
    MinPVariant::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

/// One Monte Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub spec: DgpSpec,
    pub replications: usize,
    #[serde(rename = "b", alias = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<MinPVariant>,
    #[serde(default = "default_true")]
    pub include_reference: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, message: String| Error::ConfigInvalid { field: field.into(), message };
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1".into()));
        }
        if self.b < 99 {
            return Err(invalid("b", format!("B = {} must be at least 99", self.b)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} is not in (0, 1)", self.alpha)));
        }
        self.spec.validate()
    }
}

/// Covariance of `(z, x^d)` in the linear design; its inverse is the
/// equicorrelation matrix with off-diagonal `rho`.
pub fn linear_sigma(k: usize, rho: f64) -> Result<SymMatrix> {
    let n = k + 1;
    if !(rho < 1.0 && 1.0 + k as f64 * rho > 0.0) {
        return Err(Error::InvalidRho { rho, k });
    }
    let c = rho / (1.0 + k as f64 * rho);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            s[i * n + j] = (id - c) / (1.0 - rho);
        }
    }
    SymMatrix::new(n, s)
}

fn equicorrelation(k: usize, r: f64) -> Result<SymMatrix> {
    let mut s = vec![r; k * k];
    for i in 0..k {
        s[i * k + i] = 1.0;
    }
    SymMatrix::new(k, s)
}

fn with_intercept(xd: Vec<f64>) -> Matrix {
    let ones = vec![1.0; xd.len()];
    Matrix::from_columns(&[xd, ones]).expect("equal lengths")
}

/// Linear design: `(z, x^d) ~ N(0, Σ)`, `y = Zγ + Xβ + ε`, `X = (x^d, 1)`.
pub fn gen_linear(spec: &DgpSpec, rng: RngStream) -> Result<Dataset> {
    if spec.family != Family::Linear {
        return Err(Error::InvalidInput("gen_linear needs the linear family".into()));
    }
    spec.validate()?;
    let k = spec.k();
    let chol = cholesky(&linear_sigma(k, spec.rho)?)?;
    let gamma = spec.effective_gamma();
    let errors = spec.error_dist.sampler();
    let mut gen = rng.generator();
    let mut z = Matrix::zeros(spec.t, k);
    let mut xd = Vec::with_capacity(spec.t);
    let mut y = Vec::with_capacity(spec.t);
    for n in 0..spec.t {
        let draw = mvn_draw(&chol, &mut gen);
        let mut yn = spec.beta[0] * draw[k] + spec.beta[1] + errors.draw(&mut gen);
        for j in 0..k {
            z.set(n, j, draw[j]);
            yn += gamma[j] * draw[j];
        }
        xd.push(draw[k]);
        y.push(yn);
    }
    Dataset::new(y, z, with_intercept(xd), Family::Linear)
}

/// ARCH(k) errors on a regression with an AR(1) regressor.
///
/// `x^d_n = 0.8 x^d_{n-1} + e_n`, `e_n ~ N(0, 4)`, and
/// `ε_n = σ_n u_n`, `σ²_n = ω + Σ α_j ε²_{n-j}`. Both recursions start at
/// zero and run for `burn_in + T` steps; the last `T` are kept.
pub fn gen_arch(spec: &DgpSpec, rng: RngStream) -> Result<Dataset> {
    let Family::Arch { lags } = spec.family else {
        return Err(Error::InvalidInput("gen_arch needs the ARCH family".into()));
    };
    spec.validate()?;
    let alpha = spec.effective_gamma();
    let errors = spec.error_dist.sampler();
    let mut gen = rng.generator();
    let total = spec.burn_in + spec.t;
    let mut eps = vec![0.0; total];
    let mut xd = vec![0.0; total];
    let mut x_prev = 0.0;
    for n in 0..total {
        let mut s2 = spec.omega;
        for j in 1..=lags.min(n) {
            s2 += alpha[j - 1] * eps[n - j] * eps[n - j];
        }
        eps[n] = s2.sqrt() * errors.draw(&mut gen);
        let e: f64 = gen.sample(StandardNormal);
        x_prev = 0.8 * x_prev + 2.0 * e;
        xd[n] = x_prev;
    }
    let xd = xd.split_off(spec.burn_in);
    let eps = eps.split_off(spec.burn_in);
    let y = xd
        .iter()
        .zip(&eps)
        .map(|(x, e)| spec.beta[0] * x + spec.beta[1] + e)
        .collect();
    Dataset::new(y, Matrix::zeros(spec.t, 0), with_intercept(xd), spec.family)
}

/// Random-coefficient regression `y = z'(ξ + η) + x'β + ε`.
///
/// `x^d ~ N(0, 4)`, `z` equicorrelated 0.2 with unit variances,
/// `η ~ N(0, diag γ)`, `ε` with variance `sigma_eps2`.
pub fn gen_rc(spec: &DgpSpec, rng: RngStream) -> Result<Dataset> {
    if spec.family != Family::RandomCoef {
        return Err(Error::InvalidInput("gen_rc needs the random-coefficient family".into()));
    }
    spec.validate()?;
    let k = spec.k();
    let chol = cholesky(&equicorrelation(k, 0.2)?)?;
    let sd_eta: Vec<f64> = spec.effective_gamma().iter().map(|g| g.sqrt()).collect();
    let xi = spec.xi_vec();
    let sd_eps = spec.sigma_eps2.sqrt();
    let errors = spec.error_dist.sampler();
    let mut gen = rng.generator();
    let mut z = Matrix::zeros(spec.t, k);
    let mut xd = Vec::with_capacity(spec.t);
    let mut y = Vec::with_capacity(spec.t);
    for n in 0..spec.t {
        let x: f64 = 2.0 * gen.sample::<f64, _>(StandardNormal);
        let zn = mvn_draw(&chol, &mut gen);
        let mut yn = spec.beta[0] * x + spec.beta[1];
        for j in 0..k {
            let eta: f64 = sd_eta[j] * gen.sample::<f64, _>(StandardNormal);
            yn += zn[j] * (xi[j] + eta);
            z.set(n, j, zn[j]);
        }
        yn += sd_eps * errors.draw(&mut gen);
        xd.push(x);
        y.push(yn);
    }
    Dataset::new(y, z, with_intercept(xd), Family::RandomCoef)
}

/// Draws one dataset for `spec`.
pub fn generate(spec: &DgpSpec, rng: RngStream) -> Result<Dataset> {
    match spec.family {
        Family::Linear => gen_linear(spec, rng),
        Family::Arch { .. } => gen_arch(spec, rng),
        Family::RandomCoef => gen_rc(spec, rng),
    }
}

/// Upper `alpha` quantile of the standard normal.
pub fn normal_upper_quantile(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha)
}

/// Classical chi-bar (asymptotic weights) and one-sided t decisions.
///
/// The t test rejects when `t_t` strictly exceeds the upper-`alpha` normal
/// quantile.
pub fn reference_tests(
    pack: &ScorePack,
    stats: &StatVector,
    alpha: f64,
    rng: RngStream,
) -> Result<(bool, bool)> {
    let t_reject = stats.t_t > normal_upper_quantile(alpha);
    // Survival is exactly 1 at the origin whatever the weights.
    let chibar_reject = if stats.t_c > 0.0 {
        let w = chibar_weights_sequential(&pack.g, REFERENCE_WEIGHT_DRAWS, rng)?;
        chibar_survival(stats.t_c, &w) <= alpha
    } else {
        false
    };
    Ok((chibar_reject, t_reject))
}

/// Per-replication outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    /// Global decision and rejected set, in `config.variants` order.
    pub variants: Vec<(bool, Vec<usize>)>,
    pub chibar_reject: Option<bool>,
    pub t_reject: Option<bool>,
    /// Same statistics judged by their bootstrap p-values `p̃_c`, `p̃_t`.
    pub chibar_boot_reject: Option<bool>,
    pub t_boot_reject: Option<bool>,
    pub redraws: usize,
    pub pivotality_holds: bool,
    pub structure: StructureCheck,
    pub seconds: f64,
}

/// Pool-level properties that must hold on every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructureCheck {
    /// `c_sc ≤ c_s` and `c_st ≤ c_s`.
    pub critical_order: bool,
    /// A global MinP-s rejection always rejects some individual hypothesis.
    pub consonance: bool,
    /// Variants that reject the first ordered hypothesis end with the same set.
    pub agreement: bool,
}

impl StructureCheck {
    pub fn all(&self) -> bool {
        self.critical_order && self.consonance && self.agreement
    }
}

/// Runs replication `index` of `config`.
pub fn run_replication(config: &McConfig, index: usize) -> Result<ReplicationRecord> {
    let started = Instant::now();
    let stream = RngStream::new(config.seed, 0).substream(index as u64);
    let data = generate(&config.spec, stream.substream(0))?;
    let fit = fit_restricted(&data)?;
    let pack = score_pack(&data, &fit)?;
    let stats = compute_stats(&pack)?;
    let pool = build_pool(&data, &fit, config.b, stream.substream(1), Execution::Sequential)?;

    let mut all = Vec::with_capacity(3);
    for v in MinPVariant::ALL {
        let g = global_test(&pool, &stats, v, config.alpha)?;
        let s = stepdown(&pool, &g, config.alpha)?;
        all.push((v, g, s));
    }
    let find = |v: MinPVariant| all.iter().find(|(w, _, _)| *w == v).expect("all variants run");
    let c_s = find(MinPVariant::S).1.c_m;
    let critical_order = all.iter().all(|(_, g, _)| g.c_m <= c_s);
    let (_, g_s, s_s) = find(MinPVariant::S);
    let consonance = !g_s.reject || !s_s.k_hat.is_empty();
    let first_rejecters: Vec<&Vec<usize>> = all
        .iter()
        .filter(|(_, _, s)| s.steps.first().is_some_and(|st| st.rejected))
        .map(|(_, _, s)| &s.k_hat)
        .collect();
    let agreement = first_rejecters.windows(2).all(|w| w[0] == w[1]);

    let variants = config
        .variants
        .iter()
        .map(|&v| {
            let (_, g, s) = find(v);
            (g.reject, s.k_hat.clone())
        })
        .collect();
    let (chibar_reject, t_reject) = if config.include_reference {
        let (c, t) = reference_tests(&pack, &stats, config.alpha, stream.substream(2))?;
        (Some(c), Some(t))
    } else {
        (None, None)
    };
    let observed = &all[0].1.observed_pvalues;
    let boot = |p: f64| config.include_reference.then_some(p <= config.alpha);
    Ok(ReplicationRecord {
        variants,
        chibar_reject,
        t_reject,
        chibar_boot_reject: boot(observed.p_c),
        t_boot_reject: boot(observed.p_t),
        redraws: pool.redraws(),
        pivotality_holds: pivotality_check(&data, &fit).holds,
        structure: StructureCheck { critical_order, consonance, agreement },
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Rejection rate with its Monte Carlo standard error `√(p(1−p)/R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub se: f64,
}

impl Rate {
    pub fn from_count(count: usize, total: usize) -> Self {
        let rate = count as f64 / total as f64;
        Rate { rate, se: (rate * (1.0 - rate) / total as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRates {
    pub variant: MinPVariant,
    pub reject_h0: Rate,
    /// Zero by definition when no hypothesis is true.
    pub fwer: Rate,
    pub per_hypothesis: Vec<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRates {
    /// Chi-bar test with simulated asymptotic weights.
    pub chibar: Rate,
    /// One-sided t test with the normal critical value.
    pub t: Rate,
    pub chibar_bootstrap: Rate,
    pub t_bootstrap: Rate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Bootstrap indices that needed a redraw, summed over replications.
    pub redraws: usize,
    /// Replications where the runtime pivotality condition failed.
    pub pivotality_failures: usize,
    /// Replications violating a [`StructureCheck`] property.
    pub structure_violations: usize,
    pub mean_runtime_secs: f64,
}

/// Wall time is not part of a study's outcome, so it is ignored here.
impl PartialEq for Diagnostics {
    fn eq(&self, other: &Self) -> bool {
        self.redraws == other.redraws
            && self.pivotality_failures == other.pivotality_failures
            && self.structure_violations == other.structure_violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub spec: DgpSpec,
    pub replications: usize,
    pub variants: Vec<VariantRates>,
    pub reference: Option<ReferenceRates>,
    pub diagnostics: Diagnostics,
}

/// Runs all replications on the current rayon pool.
pub fn run_study(config: &McConfig) -> Result<McResult> {
    config.validate()?;
    let records: Vec<Result<ReplicationRecord>> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, r))
        .collect();
    let mut ok = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        match rec {
            Ok(r) => ok.push(r),
            Err(e) => return Err(Error::Replication { index, source: Box::new(e) }),
        }
    }
    Ok(aggregate(config, &ok))
}

/// [`run_study`] on a dedicated pool with `workers` threads (all cores when `None`).
pub fn run_study_with_workers(config: &McConfig, workers: Option<usize>) -> Result<McResult> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::ConfigInvalid { field: "workers".into(), message: "must be at least 1".into() });
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_study(config))
}

/// Aggregates replication records into rates.
pub fn aggregate(config: &McConfig, records: &[ReplicationRecord]) -> McResult {
    let r = records.len();
    let k = config.spec.k();
    let true_nulls: Vec<usize> = (0..k).filter(|&i| config.spec.gamma_true[i] == 0.0).collect();
    let variants = config
        .variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| {
            let decisions = records.iter().map(|rec| &rec.variants[vi]);
            let global = decisions.clone().filter(|(rej, _)| *rej).count();
            let fwer = decisions
                .clone()
                .filter(|(_, kh)| kh.iter().any(|i| true_nulls.contains(i)))
                .count();
            let per_hypothesis = (0..k)
                .map(|i| Rate::from_count(decisions.clone().filter(|(_, kh)| kh.contains(&i)).count(), r))
                .collect();
            VariantRates {
                variant,
                reject_h0: Rate::from_count(global, r),
                fwer: Rate::from_count(fwer, r),
                per_hypothesis,
            }
        })
        .collect();
    let count = |f: fn(&ReplicationRecord) -> Option<bool>| {
        Rate::from_count(records.iter().filter(|x| f(x) == Some(true)).count(), r)
    };
    let reference = config.include_reference.then(|| ReferenceRates {
        chibar: count(|x| x.chibar_reject),
        t: count(|x| x.t_reject),
        chibar_bootstrap: count(|x| x.chibar_boot_reject),
        t_bootstrap: count(|x| x.t_boot_reject),
    });
    let diagnostics = Diagnostics {
        redraws: records.iter().map(|x| x.redraws).sum(),
        pivotality_failures: records.iter().filter(|x| !x.pivotality_holds).count(),
        structure_violations: records.iter().filter(|x| !x.structure.all()).count(),
        mean_runtime_secs: records.iter().map(|x| x.seconds).sum::<f64>() / r.max(1) as f64,
    };
    McResult { spec: config.spec.clone(), replications: r, variants, reference, diagnostics }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidInput(format!("unknown table format {other:?}"))),
        }
    }
}

fn family_label(f: Family) -> String {
    match f {
        Family::Arch { lags } => format!("arch({lags})"),
        other => other.name().to_string(),
    }
}

fn gamma_label(g: &[f64]) -> String {
    format!("({})", g.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
}

fn header(result: Option<&McResult>) -> Vec<String> {
    let mut h = vec!["family".to_string(), "gamma".into(), "T".into()];
    if let Some(res) = result {
        for v in &res.variants {
            h.push(format!("{} H0", v.variant.label()));
            h.push(format!("{} FWER", v.variant.label()));
            for i in 1..=v.per_hypothesis.len() {
                h.push(format!("{} H0{i}", v.variant.label()));
            }
        }
        if res.reference.is_some() {
            h.push("chi-bar".into());
            h.push("t".into());
            h.push("chi-bar boot".into());
            h.push("t boot".into());
        }
    }
    h
}

fn cells(res: &McResult, pick: impl Fn(&Rate) -> f64) -> Vec<String> {
    let pct = |r: &Rate| format!("{:.1}", 100.0 * pick(r));
    let mut row = vec![family_label(res.spec.family), gamma_label(&res.spec.gamma_true), res.spec.t.to_string()];
    for v in &res.variants {
        row.push(pct(&v.reject_h0));
        row.push(pct(&v.fwer));
        row.extend(v.per_hypothesis.iter().map(pct));
    }
    if let Some(r) = &res.reference {
        row.push(pct(&r.chibar));
        row.push(pct(&r.t));
        row.push(pct(&r.chibar_bootstrap));
        row.push(pct(&r.t_bootstrap));
    }
    row
}

fn render(rows: Vec<Vec<String>>, format: TableFormat) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        match format {
            TableFormat::Csv => {
                let _ = writeln!(out, "{}", row.join(","));
            }
            TableFormat::Markdown => {
                let _ = writeln!(out, "| {} |", row.join(" | "));
                if i == 0 {
                    let _ = writeln!(out, "|{}", "---|".repeat(row.len()));
                }
            }
        }
    }
    out
}

fn table(results: &[McResult], format: TableFormat, pick: impl Fn(&Rate) -> f64 + Copy) -> String {
    let mut rows = vec![header(results.first())];
    rows.extend(
        results
            .iter()
            .filter(|r| !r.variants.is_empty() || r.reference.is_some())
            .map(|r| cells(r, pick)),
    );
    render(rows, format)
}

/// Rejection rates as percentages with one decimal, one row per study.
///
/// Studies with no variants and no reference columns produce no row. The
/// header follows the first study; mixing column layouts is the caller's
/// concern.
pub fn emit_table(results: &[McResult], format: TableFormat) -> String {
    table(results, format, |r| r.rate)
}

/// Same layout as [`emit_table`], with Monte Carlo standard errors in place of rates.
pub fn emit_se_table(results: &[McResult], format: TableFormat) -> String {
    table(results, format, |r| r.se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inverse_pd;
    use crate::models::{mean, ols, variance};

    #[test]
    fn sigma_inverse_is_equicorrelation() {
        for &(k, rho) in &[(2, 0.45), (3, -0.2), (1, 0.7)] {
            let s = linear_sigma(k, rho).unwrap();
            let n = k + 1;
            let oracle: Vec<f64> =
                (0..n * n).map(|ij| if ij / n == ij % n { 1.0 } else { rho }).collect();
            let inv = inverse_pd(&s).unwrap();
            for (a, b) in inv.as_slice().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert_eq!(linear_sigma(2, 0.0).unwrap(), SymMatrix::identity(3));
        assert!(matches!(linear_sigma(2, -0.5), Err(Error::InvalidRho { .. })));
        assert!(matches!(linear_sigma(2, 1.0), Err(Error::InvalidRho { .. })));
    }

    #[test]
    fn linear_null_has_no_z_effect() {
        let spec = DgpSpec::new(Family::Linear, 20_000, vec![0.0, 0.0]);
        let d = gen_linear(&spec, RngStream::new(5, 0)).unwrap();
        let design = d.z().hstack(d.x()).unwrap();
        let b = ols(&design, d.y()).unwrap();
        assert!(b[0].abs() < 0.03 && b[1].abs() < 0.03, "{b:?}");
        assert!((b[2] - 1.0).abs() < 0.03 && (b[3] - 1.0).abs() < 0.03);
    }

    #[test]
    fn nested_linear_fits_shrink_variance() {
        let mut spec = DgpSpec::new(Family::Linear, 200, vec![0.3, 0.0]);
        spec.rho = 0.45;
        let d = gen_linear(&spec, RngStream::new(8, 2)).unwrap();
        let ssr = |design: &Matrix| {
            let b = ols(design, d.y()).unwrap();
            let fit = design.mul_vec(&b);
            d.y().iter().zip(fit).map(|(y, f)| (y - f).powi(2)).sum::<f64>()
        };
        let z1 = Matrix::from_columns(&[d.z().column(0)]).unwrap();
        let small = ssr(d.x());
        let mid = ssr(&z1.hstack(d.x()).unwrap());
        let full = ssr(&d.z().hstack(d.x()).unwrap());
        assert!(small >= mid && mid >= full);
    }

    #[test]
    fn arch_null_is_iid_with_variance_omega() {
        let mut spec = DgpSpec::new(Family::Arch { lags: 2 }, 50_000, vec![0.0, 0.0]);
        spec.omega = 2.0;
        let d = gen_arch(&spec, RngStream::new(1, 1)).unwrap();
        let eps: Vec<f64> = d.y().iter().zip(&d.x().column(0)).map(|(y, x)| y - x - 1.0).collect();
        assert!((variance(&eps) - 2.0).abs() < 0.06);
        let lag_cov = eps.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / eps.len() as f64;
        assert!(lag_cov.abs() < 0.06);
    }

    #[test]
    fn arch_stationary_variance() {
        let spec = DgpSpec::new(Family::Arch { lags: 2 }, 100_000, vec![0.6, 0.0]);
        let d = gen_arch(&spec, RngStream::new(2, 0)).unwrap();
        let eps: Vec<f64> = d.y().iter().zip(&d.x().column(0)).map(|(y, x)| y - x - 1.0).collect();
        let v = variance(&eps);
        assert!((v / 2.5 - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn arch_regressor_is_ar1() {
        let spec = DgpSpec::new(Family::Arch { lags: 1 }, 100_000, vec![0.0]);
        let d = gen_arch(&spec, RngStream::new(3, 0)).unwrap();
        let x = d.x().column(0);
        // Stationary variance 4 / (1 - 0.64).
        assert!((variance(&x) / (4.0 / 0.36) - 1.0).abs() < 0.05);
        assert!(mean(&x).abs() < 0.2);
    }

    #[test]
    fn local_scaling_divides_by_root_t() {
        let mut spec = DgpSpec::new(Family::Arch { lags: 4 }, 100, vec![5.0, 0.0, 0.0, 0.0]);
        spec.local_scaling = true;
        assert!((spec.effective_gamma()[0] - 0.5).abs() < 1e-15);
        spec.local_scaling = false;
        assert!(matches!(spec.validate(), Err(Error::ExplosiveVariance { .. })));
    }

    #[test]
    fn rc_conditional_variance_slope() {
        let spec = DgpSpec::new(Family::RandomCoef, 100_000, vec![0.5, 0.0]);
        let d = gen_rc(&spec, RngStream::new(4, 0)).unwrap();
        let (z, x) = (d.z(), d.x());
        let r2: Vec<f64> = (0..d.len())
            .map(|n| (d.y()[n] - z.get(n, 0) - z.get(n, 1) - x.get(n, 0) - 1.0).powi(2))
            .collect();
        let reg = Matrix::from_columns(&[
            z.column(0).iter().map(|v| v * v).collect(),
            z.column(1).iter().map(|v| v * v).collect(),
            vec![1.0; d.len()],
        ])
        .unwrap();
        let b = ols(&reg, &r2).unwrap();
        assert!((b[0] - 0.5).abs() < 0.05, "{b:?}");
        assert!(b[1].abs() < 0.05);
        assert!((b[2] - 1.0).abs() < 0.06);
    }

    #[test]
    fn rc_z_equicorrelation() {
        let spec = DgpSpec::new(Family::RandomCoef, 1_000_000, vec![0.0, 0.0]);
        let d = gen_rc(&spec, RngStream::new(6, 0)).unwrap();
        let (a, b) = (d.z().column(0), d.z().column(1));
        let (ma, mb) = (mean(&a), mean(&b));
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
        let corr = cov / (variance(&a) * variance(&b)).sqrt();
        assert!((corr - 0.2).abs() < 0.005, "{corr}");
        assert!((variance(&d.x().column(0)) - 4.0).abs() < 0.05);
    }

    #[test]
    fn student_t_errors_have_unit_variance() {
        let s = ErrorDist::StudentT { df: 10.0 }.sampler();
        let mut g = RngStream::new(9, 9).generator();
        let v: Vec<f64> = (0..400_000).map(|_| s.draw(&mut g)).collect();
        assert!((variance(&v) - 1.0).abs() < 0.02);
        assert!(ErrorDist::StudentT { df: 2.0 }.validate().is_err());
    }

    #[test]
    fn reference_examples() {
        let q = normal_upper_quantile(0.05);
        assert!((q - 1.6448536269514722).abs() < 1e-9);
        let g = SymMatrix::identity(2);
        let pack = ScorePack::new(vec![0.0, 0.0], g.clone(), Family::Linear, 100).unwrap();
        let stats = compute_stats(&pack).unwrap();
        assert_eq!(reference_tests(&pack, &stats, 0.05, RngStream::new(1, 0)).unwrap(), (false, false));
        let big = ScorePack::new(vec![10.0, 10.0], g, Family::Linear, 100).unwrap();
        let stats = compute_stats(&big).unwrap();
        assert_eq!(reference_tests(&big, &stats, 0.05, RngStream::new(1, 0)).unwrap(), (true, true));
        let mut at = stats.clone();
        at.t_t = q;
        at.t_c = 0.0;
        assert!(!reference_tests(&big, &at, 0.05, RngStream::new(1, 0)).unwrap().1);
    }

    fn small_config(spec: DgpSpec, reps: usize) -> McConfig {
        McConfig {
            spec,
            replications: reps,
            b: 99,
            alpha: 0.05,
            seed: 11,
            variants: MinPVariant::ALL.to_vec(),
            include_reference: true,
        }
    }

    #[test]
    fn single_replication_rates_are_binary() {
        let cfg = small_config(DgpSpec::new(Family::Linear, 60, vec![0.0, 0.0]), 1);
        let res = run_study(&cfg).unwrap();
        for v in &res.variants {
            for r in std::iter::once(&v.reject_h0).chain(&v.per_hypothesis).chain([&v.fwer]) {
                assert!(r.rate == 0.0 || r.rate == 1.0);
            }
            let any = v.per_hypothesis.iter().any(|r| r.rate == 1.0);
            assert_eq!(v.fwer.rate == 1.0, any);
        }
        assert_eq!(res.diagnostics.structure_violations, 0);
    }

    #[test]
    fn fwer_zero_without_true_nulls() {
        let cfg = small_config(DgpSpec::new(Family::Linear, 60, vec![0.5, 0.5]), 6);
        let res = run_study(&cfg).unwrap();
        assert!(res.variants.iter().all(|v| v.fwer.rate == 0.0));
    }

    #[test]
    fn study_is_deterministic_across_workers() {
        let cfg = small_config(DgpSpec::new(Family::Arch { lags: 2 }, 80, vec![0.3, 0.0]), 6);
        let a = run_study_with_workers(&cfg, Some(1)).unwrap();
        let b = run_study_with_workers(&cfg, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(emit_table(&[a], TableFormat::Csv), emit_table(&[b], TableFormat::Csv));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(DgpSpec::new(Family::Linear, 60, vec![0.0, 0.0]), 0);
        assert!(matches!(run_study(&cfg), Err(Error::ConfigInvalid { ref field, .. }) if field == "replications"));
        cfg.replications = 1;
        cfg.b = 10;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { ref field, .. }) if field == "b"));
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{"spec":{"family":"linear","T":100,"gamma_true":[0,0]},
                       "replications":10,"B":999,"alpha":0.05,"seed":1}"#;
        let cfg: McConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.spec, DgpSpec::new(Family::Linear, 100, vec![0.0, 0.0]));
        assert_eq!(cfg.variants, MinPVariant::ALL.to_vec());
        assert!(cfg.include_reference);
        let arch: DgpSpec =
            serde_json::from_str(r#"{"family":{"arch":{"lags":2}},"t":100,"gamma_true":[0.6,0],
                                    "error_dist":{"student_t":{"df":5}}}"#).unwrap();
        assert_eq!(arch.family, Family::Arch { lags: 2 });
        assert_eq!(arch.error_dist, ErrorDist::StudentT { df: 5.0 });
    }

    fn fake_result(variants: Vec<VariantRates>, reference: bool) -> McResult {
        McResult {
            spec: DgpSpec::new(Family::Linear, 100, vec![0.3, 0.0]),
            replications: 2000,
            variants,
            reference: reference.then_some(ReferenceRates {
                chibar: Rate { rate: 0.043, se: 0.0 },
                t: Rate { rate: 0.05, se: 0.0 },
                chibar_bootstrap: Rate { rate: 0.046, se: 0.0 },
                t_bootstrap: Rate { rate: 0.051, se: 0.0 },
            }),
            diagnostics: Diagnostics { redraws: 0, pivotality_failures: 0, structure_violations: 0, mean_runtime_secs: 0.0 },
        }
    }

    #[test]
    fn table_formatting() {
        let r = |x| Rate { rate: x, se: 0.0 };
        let v = VariantRates {
            variant: MinPVariant::SC,
            reject_h0: r(0.046),
            fwer: r(0.039),
            per_hypothesis: vec![r(0.779), r(0.039)],
        };
        let csv = emit_table(&[fake_result(vec![v], true)], TableFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "family,gamma,T,MinP-sc H0,MinP-sc FWER,MinP-sc H01,MinP-sc H02,chi-bar,t,chi-bar boot,t boot"
        );
        assert_eq!(lines[1], "linear,(0.3 0),100,4.6,3.9,77.9,3.9,4.3,5.0,4.6,5.1");
        let md = emit_table(&[fake_result(vec![], false)], TableFormat::Markdown);
        assert_eq!(md.lines().count(), 2);
        assert!(md.starts_with("| family | gamma | T |"));
        assert_eq!(emit_table(&[], TableFormat::Csv).lines().count(), 1);
    }
}
