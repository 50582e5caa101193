//! Test statistics, the bootstrap pool, MinP global tests and stepdown.
//!
//! A [`BootstrapPool`] stores, for every bootstrap draw, the statistics
//! `(t_c, t_t, t_1..t_k)` and their within-pool rank p-values. Every
//! critical value the procedures need (global or for any subset of
//! hypotheses) is an order statistic of per-draw minima over some columns of
//! that one matrix, so the stepdown never resamples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{maximin_from_precision, MaximinDirection, OrthantProjector};
use crate::error::{Error, Result};
use crate::linalg::{dot, RngStream};
use crate::models::{bootstrap_dataset_from, fit_restricted, score_pack, Dataset, RestrictedFit, ScorePack};

/// Column of the cone statistic in pool matrices.
pub const COL_CONE: usize = 0;
/// Column of the one-sided t statistic.
pub const COL_T: usize = 1;
/// First column of the individual statistics.
pub const COL_INDIVIDUAL: usize = 2;

/// Maximum attempts per bootstrap index before the pool is declared degenerate.
pub const MAX_ATTEMPTS: u64 = 3;

/// Observed (or bootstrap) statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatVector {
    pub t_c: f64,
    pub t_t: f64,
    pub t_i: Vec<f64>,
    pub direction: MaximinDirection,
}

impl StatVector {
    pub fn k(&self) -> usize {
        self.t_i.len()
    }

    /// `(t_c, t_t, t_1, .., t_k)`, the pool column order.
    pub fn as_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.k() + 2);
        row.push(self.t_c);
        row.push(self.t_t);
        row.extend_from_slice(&self.t_i);
        row
    }
}

/// Cone, maximin-t and standardized individual statistics for one score pack.
pub fn compute_stats(pack: &ScorePack) -> Result<StatVector> {
    let mut proj = OrthantProjector::new(&pack.g)?;
    let projection = proj.project(&pack.u)?;
    let direction = maximin_from_precision(proj.precision())?;
    let t_t = dot(&direction.d, &proj.precision().mul_vec(&pack.u));
    let t_i = pack
        .u
        .iter()
        .enumerate()
        .map(|(i, u)| u / pack.g.get(i, i).sqrt())
        .collect();
    Ok(StatVector { t_c: projection.t_c, t_t, t_i, direction })
}

/// Which MinP statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MinPVariant {
    /// Minimum of the individual p-values.
    #[serde(rename = "s")]
    S,
    /// Individual p-values joined by the cone-statistic p-value.
    #[serde(rename = "sc")]
    SC,
    /// Individual p-values joined by the maximin-t p-value.
    #[serde(rename = "st")]
    ST,
}

impl MinPVariant {
    pub const ALL: [MinPVariant; 3] = [MinPVariant::SC, MinPVariant::ST, MinPVariant::S];

    pub fn label(&self) -> &'static str {
        match self {
            MinPVariant::S => "MinP-s",
            MinPVariant::SC => "MinP-sc",
            MinPVariant::ST => "MinP-st",
        }
    }

    /// Pool column of the global p-value joined to the individual ones.
    pub fn global_column(&self) -> Option<usize> {
        match self {
            MinPVariant::S => None,
            MinPVariant::SC => Some(COL_CONE),
            MinPVariant::ST => Some(COL_T),
        }
    }
}

impl std::str::FromStr for MinPVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(MinPVariant::S),
            "sc" => Ok(MinPVariant::SC),
            "st" => Ok(MinPVariant::ST),
            other => Err(Error::InvalidInput(format!("unknown variant {other:?}"))),
        }
    }
}

/// Bootstrap statistics and their within-pool rank p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPool {
    b: usize,
    k: usize,
    stats: Vec<f64>,
    pvalues: Vec<f64>,
    redraws: usize,
}

impl BootstrapPool {
    /// Builds a pool from a row-major `B × (k+2)` statistics matrix.
    pub fn from_stats(b: usize, k: usize, stats: Vec<f64>) -> Result<Self> {
        let width = k + 2;
        if b == 0 || stats.len() != b * width {
            return Err(Error::InvalidInput(format!(
                "expected {} statistics for B = {b}, k = {k}",
                b * width
            )));
        }
        if stats.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("pool statistics must be finite".into()));
        }
        let mut pvalues = vec![0.0; b * width];
        let mut sorted = vec![0.0; b];
        for c in 0..width {
            for r in 0..b {
                sorted[r] = stats[r * width + c];
            }
            sorted.sort_by(f64::total_cmp);
            for r in 0..b {
                pvalues[r * width + c] = upper_tail_count(&sorted, stats[r * width + c]) as f64 / b as f64;
            }
        }
        Ok(BootstrapPool { b, k, stats, pvalues, redraws: 0 })
    }

    /// Builds a pool where only individual-statistic columns matter; the
    /// cone and t columns are set equal to the first individual column.
    pub fn from_individual_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let b = columns.first().map_or(0, Vec::len);
        let mut stats = Vec::with_capacity(b * (k + 2));
        for r in 0..b {
            stats.push(columns[0][r]);
            stats.push(columns[0][r]);
            for c in columns {
                stats.push(c[r]);
            }
        }
        Self::from_stats(b, k, stats)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.k + 2
    }

    /// Number of bootstrap indices that needed at least one redraw.
    pub fn redraws(&self) -> usize {
        self.redraws
    }

    pub fn stat(&self, b: usize, col: usize) -> f64 {
        self.stats[b * self.width() + col]
    }

    pub fn pvalue(&self, b: usize, col: usize) -> f64 {
        self.pvalues[b * self.width() + col]
    }

    pub fn stat_column(&self, col: usize) -> Vec<f64> {
        (0..self.b).map(|r| self.stat(r, col)).collect()
    }

    pub fn pvalue_column(&self, col: usize) -> Vec<f64> {
        (0..self.b).map(|r| self.pvalue(r, col)).collect()
    }
}

fn upper_tail_count(sorted: &[f64], observed: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < observed)
}

/// How to schedule work over bootstrap indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the current rayon pool.
    Parallel,
}

/// Runs the residual bootstrap and fills the pool.
///
/// Draw `b`, attempt `a` uses stream `rng.substream(MAX_ATTEMPTS·b + a)`; a
/// draw whose refit is numerically singular is redrawn on the next attempt.
/// More than 1% of indices needing a redraw, or any index failing all
/// attempts, makes the pool degenerate.
pub fn build_pool(
    data: &Dataset,
    fit: &RestrictedFit,
    b: usize,
    rng: RngStream,
    execution: Execution,
) -> Result<BootstrapPool> {
    if b < 99 {
        return Err(Error::InvalidInput(format!("bootstrap count B = {b} must be at least 99")));
    }
    build_pool_unchecked(data, fit, b, rng, execution)
}

/// [`build_pool`] without the `B ≥ 99` guard, for demonstrating small-`B`
/// behavior.
pub fn build_pool_unchecked(
    data: &Dataset,
    fit: &RestrictedFit,
    b: usize,
    rng: RngStream,
    execution: Execution,
) -> Result<BootstrapPool> {
    let k = data.k();
    let draw = |index: usize| -> (Option<Vec<f64>>, bool) {
        for attempt in 0..MAX_ATTEMPTS {
            let stream = rng.substream(MAX_ATTEMPTS * index as u64 + attempt);
            let sample = bootstrap_dataset_from(data, fit, stream);
            let row = fit_restricted(&sample)
                .and_then(|f| score_pack(&sample, &f))
                .and_then(|p| compute_stats(&p));
            if let Ok(s) = row {
                return (Some(s.as_row()), attempt > 0);
            }
        }
        (None, true)
    };
    let rows: Vec<(Option<Vec<f64>>, bool)> = match execution {
        Execution::Sequential => (0..b).map(draw).collect(),
        Execution::Parallel => (0..b).into_par_iter().map(draw).collect(),
    };
    let redraws = rows.iter().filter(|(_, r)| *r).count();
    let failed = rows.iter().filter(|(s, _)| s.is_none()).count();
    if failed > 0 || redraws * 100 > b {
        return Err(Error::BootstrapDegenerate { failed: redraws.max(failed), total: b });
    }
    let mut stats = Vec::with_capacity(b * (k + 2));
    for (row, _) in rows {
        stats.extend(row.expect("checked above"));
    }
    let mut pool = BootstrapPool::from_stats(b, k, stats)?;
    pool.redraws = redraws;
    Ok(pool)
}

/// Share of pool draws at least as large as `observed`.
pub fn rank_pvalue(pool_column: &[f64], observed: f64) -> f64 {
    let count = pool_column.iter().filter(|&&v| v >= observed).count();
    count as f64 / pool_column.len() as f64
}

/// MinP statistic: minimum over the admitted p-values.
pub fn minp_stat(p_g: Option<f64>, p_i: &[f64], variant: MinPVariant) -> Result<f64> {
    if p_i.is_empty() {
        return Err(Error::ArityMismatch("no individual p-values".into()));
    }
    let m = p_i.iter().copied().fold(f64::INFINITY, f64::min);
    match (variant, p_g) {
        (MinPVariant::S, None) => Ok(m),
        (MinPVariant::SC | MinPVariant::ST, Some(g)) => Ok(m.min(g)),
        (MinPVariant::S, Some(_)) => {
            Err(Error::ArityMismatch("MinP-s takes no global p-value".into()))
        }
        (_, None) => Err(Error::ArityMismatch(format!(
            "{} needs a global p-value",
            variant.label()
        ))),
    }
}

/// Set of pool columns whose per-draw minimum defines a critical value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CriticalSet {
    /// All individual columns, plus the variant's global column.
    Global(MinPVariant),
    /// Individual hypotheses by 0-based index.
    Subset(Vec<usize>),
}

/// Order index `⌊αB⌋` used for critical values; 0 means never reject.
pub fn quantile_rank(alpha: f64, b: usize) -> usize {
    // The small offset keeps products like 0.05·100 from landing just below
    // an integer.
    (alpha * b as f64 + 1e-9).floor() as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// `⌊αB⌋`-th smallest per-draw minimum over the admitted columns.
pub fn critical_value(pool: &BootstrapPool, set: &CriticalSet, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let columns: Vec<usize> = match set {
        CriticalSet::Global(v) => v
            .global_column()
            .into_iter()
            .chain((0..pool.k).map(|i| COL_INDIVIDUAL + i))
            .collect(),
        CriticalSet::Subset(idx) => {
            if idx.is_empty() {
                return Err(Error::InvalidInput("critical value subset is empty".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= pool.k) {
                return Err(Error::InvalidInput(format!("hypothesis index {bad} out of range")));
            }
            idx.iter().map(|i| COL_INDIVIDUAL + i).collect()
        }
    };
    let r = quantile_rank(alpha, pool.b);
    if r == 0 {
        return Ok(0.0);
    }
    let mut minima: Vec<f64> = (0..pool.b)
        .map(|b| columns.iter().map(|&c| pool.pvalue(b, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let (_, nth, _) = minima.select_nth_unstable_by(r - 1, f64::total_cmp);
    Ok(*nth)
}

/// Observed p-values of every statistic against the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedPValues {
    pub p_c: f64,
    pub p_t: f64,
    pub p_i: Vec<f64>,
}

impl ObservedPValues {
    pub fn from_pool(pool: &BootstrapPool, observed: &StatVector) -> Result<Self> {
        if observed.k() != pool.k {
            return Err(Error::InvalidInput(format!(
                "observed statistics have k = {}, pool has k = {}",
                observed.k(),
                pool.k
            )));
        }
        let p_c = rank_pvalue(&pool.stat_column(COL_CONE), observed.t_c);
        let p_t = rank_pvalue(&pool.stat_column(COL_T), observed.t_t);
        let p_i = (0..pool.k)
            .map(|i| rank_pvalue(&pool.stat_column(COL_INDIVIDUAL + i), observed.t_i[i]))
            .collect();
        Ok(ObservedPValues { p_c, p_t, p_i })
    }

    pub fn global(&self, variant: MinPVariant) -> Option<f64> {
        match variant {
            MinPVariant::S => None,
            MinPVariant::SC => Some(self.p_c),
            MinPVariant::ST => Some(self.p_t),
        }
    }
}

/// Decision on the global null for one MinP variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTestResult {
    pub variant: MinPVariant,
    pub p_m: f64,
    pub c_m: f64,
    pub reject: bool,
    pub observed_pvalues: ObservedPValues,
}

/// Rejection rule shared by the global test and every stepdown step.
///
/// A zero critical value means `⌊αB⌋ = 0`: the pool cannot resolve level
/// `α`, so nothing is rejected.
pub fn rejects(p: f64, c: f64) -> bool {
    c > 0.0 && p <= c
}

pub fn global_test(
    pool: &BootstrapPool,
    observed: &StatVector,
    variant: MinPVariant,
    alpha: f64,
) -> Result<GlobalTestResult> {
    let observed_pvalues = ObservedPValues::from_pool(pool, observed)?;
    let p_m = minp_stat(observed_pvalues.global(variant), &observed_pvalues.p_i, variant)?;
    let c_m = critical_value(pool, &CriticalSet::Global(variant), alpha)?;
    Ok(GlobalTestResult { variant, p_m, c_m, reject: rejects(p_m, c_m), observed_pvalues })
}

/// One comparison in the stepdown sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 0-based hypothesis index.
    pub hypothesis: usize,
    pub pvalue: f64,
    pub critical_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepdownResult {
    /// Hypothesis indices sorted by increasing p-value (ties by index).
    pub order: Vec<usize>,
    pub steps: Vec<StepRecord>,
    /// Rejected hypotheses, in rejection order.
    pub k_hat: Vec<usize>,
}

/// Stepdown over individual hypotheses using subset critical values from `pool`.
pub fn stepdown(
    pool: &BootstrapPool,
    global: &GlobalTestResult,
    alpha: f64,
) -> Result<StepdownResult> {
    check_alpha(alpha)?;
    if global.observed_pvalues.p_i.len() != pool.k {
        return Err(Error::InvalidInput("global result does not match pool".into()));
    }
    stepdown_with(&global.observed_pvalues.p_i, global.reject, global.c_m, |subset| {
        critical_value(pool, &CriticalSet::Subset(subset.to_vec()), alpha)
    })
}

/// Stepdown core with the critical values supplied by the caller.
///
/// The first ordered hypothesis is compared with the global critical value
/// `c_global`; each later one with `subset_cv(K_i)`, where `K_i` holds the
/// hypotheses not yet rejected. Stops at the first acceptance.
pub fn stepdown_with<F>(
    p_i: &[f64],
    global_reject: bool,
    c_global: f64,
    mut subset_cv: F,
) -> Result<StepdownResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let mut order: Vec<usize> = (0..p_i.len()).collect();
    order.sort_by(|&a, &b| p_i[a].total_cmp(&p_i[b]));
    let mut steps = Vec::new();
    let mut k_hat = Vec::new();
    if global_reject {
        for (step, &h) in order.iter().enumerate() {
            let c = if step == 0 { c_global } else { subset_cv(&order[step..])? };
            let rejected = rejects(p_i[h], c);
            steps.push(StepRecord { hypothesis: h, pvalue: p_i[h], critical_value: c, rejected });
            if !rejected {
                break;
            }
            k_hat.push(h);
        }
    }
    Ok(StepdownResult { order, steps, k_hat })
}

/// Convenience bundle: observed statistics, pool, and per-variant results.
#[derive(Debug, Clone)]
pub struct MinPAnalysis {
    pub pack: ScorePack,
    pub stats: StatVector,
    pub pool: BootstrapPool,
    pub results: Vec<(GlobalTestResult, StepdownResult)>,
}

/// Fit, bootstrap, global tests and stepdown for each requested variant.
pub fn analyze(
    data: &Dataset,
    fit: &RestrictedFit,
    b: usize,
    alpha: f64,
    variants: &[MinPVariant],
    rng: RngStream,
    execution: Execution,
) -> Result<MinPAnalysis> {
    let pack = score_pack(data, fit)?;
    let stats = compute_stats(&pack)?;
    let pool = build_pool(data, fit, b, rng, execution)?;
    let results = variants
        .iter()
        .map(|&v| {
            let g = global_test(&pool, &stats, v, alpha)?;
            let s = stepdown(&pool, &g, alpha)?;
            Ok((g, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MinPAnalysis { pack, stats, pool, results })
}
