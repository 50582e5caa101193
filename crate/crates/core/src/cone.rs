//! Geometry of the non-negative orthant.
//!
//! Three pieces live here:
//!
//! * the projection of a score vector onto `[0, ∞)^k` in the metric of the
//!   inverse score covariance, whose squared length is the cone statistic;
//! * the maximin direction used to collapse the score vector into a single
//!   one-sided t statistic;
//! * chi-bar-squared level probabilities and tail areas for the classical
//!   reference test.
//!
//! The projection is an exact active-set (Lawson–Hanson) solve written on
//! the normal equations `H = G⁻¹`, `q = H U`. It terminates after finitely
//! many linear solves, so the only tolerance is linear-solve accuracy.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, inverse_pd, CholFactor, RngStream, SymMatrix};

/// Orthogonal (in the `G⁻¹` metric) projection of `U` onto the orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeProjection {
    pub u_bar: Vec<f64>,
    pub t_c: f64,
    /// Indices with `u_bar[i] == 0`.
    pub active_set: Vec<usize>,
    /// `G⁻¹ (u_bar − U)`; non-negative at the optimum.
    pub multipliers: Vec<f64>,
}

/// Reusable solver for repeated projections under one covariance.
///
/// Holds `H = G⁻¹` and scratch buffers so the hot loops (chi-bar weight
/// simulation, bootstrap statistics) do not allocate per call.
#[derive(Debug, Clone)]
pub struct OrthantProjector {
    k: usize,
    h: SymMatrix,
    chol: CholFactor,
    x: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    q: Vec<f64>,
    passive: Vec<bool>,
    idx: Vec<usize>,
    sub: Vec<f64>,
    rhs: Vec<f64>,
}

impl OrthantProjector {
    pub fn new(g: &SymMatrix) -> Result<Self> {
        let chol = cholesky(g)?;
        let h = chol.inverse();
        let k = g.dim();
        Ok(OrthantProjector {
            k,
            h,
            chol,
            x: vec![0.0; k],
            z: vec![0.0; k],
            w: vec![0.0; k],
            q: vec![0.0; k],
            passive: vec![false; k],
            idx: Vec::with_capacity(k),
            sub: vec![0.0; k * k],
            rhs: vec![0.0; k],
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `G⁻¹`.
    pub fn precision(&self) -> &SymMatrix {
        &self.h
    }

    /// Cholesky factor of `G`.
    pub fn factor(&self) -> &CholFactor {
        &self.chol
    }

    /// Projects `U`, returning the full KKT record.
    pub fn project(&mut self, u: &[f64]) -> Result<ConeProjection> {
        if u.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "score vector has length {}, covariance is {}x{}",
                u.len(),
                self.k,
                self.k
            )));
        }
        let q = self.h.mul_vec(u);
        self.q.copy_from_slice(&q);
        self.solve_nnls()?;
        let u_bar = self.x.clone();
        let hx = self.h.mul_vec(&u_bar);
        let multipliers: Vec<f64> = hx.iter().zip(&q).map(|(a, b)| a - b).collect();
        let t_c = dot(&u_bar, &hx).max(0.0);
        let active_set = (0..self.k).filter(|&i| u_bar[i] == 0.0).collect();
        Ok(ConeProjection { u_bar, t_c, active_set, multipliers })
    }

    /// Projects the point whose `H`-image is `q` (i.e. `U = G q`) and
    /// returns the number of strictly positive components.
    fn positive_count_for_q(&mut self, q: &[f64]) -> Result<usize> {
        self.q.copy_from_slice(q);
        self.solve_nnls()?;
        Ok(self.x.iter().filter(|&&v| v > 0.0).count())
    }

    /// Lawson–Hanson on `min ½ xᵀHx − qᵀx, x ≥ 0`; result left in `self.x`.
    fn solve_nnls(&mut self) -> Result<()> {
        let k = self.k;
        let max_outer = 3 * k;
        self.x.iter_mut().for_each(|v| *v = 0.0);
        self.passive.iter_mut().for_each(|p| *p = false);
        self.w.copy_from_slice(&self.q);
        let mut outer = 0;
        loop {
            let tol = self.gradient_tolerance();
            let mut best: Option<usize> = None;
            for j in 0..k {
                if !self.passive[j] && self.w[j] > tol && best.is_none_or(|b| self.w[j] > self.w[b])
                {
                    best = Some(j);
                }
            }
            let Some(j) = best else { break };
            outer += 1;
            if outer > max_outer {
                return Err(Error::NonConvergence { iterations: outer });
            }
            self.passive[j] = true;

            loop {
                self.solve_passive();
                let mut alpha = f64::INFINITY;
                let mut blocking = usize::MAX;
                for i in 0..k {
                    if self.passive[i] && self.z[i] <= 0.0 {
                        let denom = self.x[i] - self.z[i];
                        let a = if denom > 0.0 { self.x[i] / denom } else { 0.0 };
                        if a < alpha {
                            alpha = a;
                            blocking = i;
                        }
                    }
                }
                if blocking == usize::MAX {
                    for i in 0..k {
                        self.x[i] = if self.passive[i] { self.z[i] } else { 0.0 };
                    }
                    break;
                }
                for i in 0..k {
                    if self.passive[i] {
                        self.x[i] += alpha * (self.z[i] - self.x[i]);
                        if i == blocking || self.x[i] <= 0.0 {
                            self.x[i] = 0.0;
                            self.passive[i] = false;
                        }
                    }
                }
                if !self.passive.iter().any(|&p| p) {
                    break;
                }
            }

            for i in 0..k {
                let hx: f64 = (0..k).map(|l| self.h.get(i, l) * self.x[l]).sum();
                self.w[i] = self.q[i] - hx;
            }
        }
        Ok(())
    }

    fn gradient_tolerance(&self) -> f64 {
        let mut scale = 0.0_f64;
        for i in 0..self.k {
            let hx: f64 = (0..self.k).map(|l| (self.h.get(i, l) * self.x[l]).abs()).sum();
            scale = scale.max(self.q[i].abs() + hx);
        }
        1e-11 * scale
    }

    /// Solves `H_PP z_P = q_P`, zero elsewhere.
    fn solve_passive(&mut self) {
        let k = self.k;
        self.idx.clear();
        self.idx.extend((0..k).filter(|&i| self.passive[i]));
        let n = self.idx.len();
        for (a, &i) in self.idx.iter().enumerate() {
            for (b, &j) in self.idx.iter().enumerate() {
                self.sub[a * n + b] = self.h.get(i, j);
            }
            self.rhs[a] = self.q[i];
        }
        chol_solve_in_place(n, &mut self.sub[..n * n], &mut self.rhs[..n]);
        self.z.iter_mut().for_each(|v| *v = 0.0);
        for (a, &i) in self.idx.iter().enumerate() {
            self.z[i] = self.rhs[a];
        }
    }
}

/// In-place Cholesky solve of a principal submatrix of a PD matrix.
///
/// Principal submatrices of a PD matrix are PD, so no pivot check beyond
/// clamping roundoff is needed here.
fn chol_solve_in_place(n: usize, a: &mut [f64], b: &mut [f64]) {
    for j in 0..n {
        let mut d = a[j * n + j];
        for l in 0..j {
            d -= a[j * n + l] * a[j * n + l];
        }
        let d = d.max(f64::MIN_POSITIVE).sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for l in 0..j {
                s -= a[i * n + l] * a[j * n + l];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for l in 0..i {
            s -= a[i * n + l] * b[l];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for l in i + 1..n {
            s -= a[l * n + i] * b[l];
        }
        b[i] = s / a[i * n + i];
    }
}

/// Projection of `u` onto the orthant in the `G⁻¹` metric.
pub fn project_orthant(u: &[f64], g: &SymMatrix) -> Result<ConeProjection> {
    OrthantProjector::new(g)?.project(u)
}

/// Weight vector for the one-sided t statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximinDirection {
    pub d: Vec<f64>,
    /// `min_i dᵀG⁻¹γ⁽ⁱ⁾` over standardized extreme rays.
    pub attained_min: f64,
    /// Whether `G⁻¹d ≥ 0` held.
    pub constraint_ok: bool,
}

/// Maximin direction over the standardized extreme rays of the orthant.
///
/// In whitened coordinates the rays become unit vectors whose Gram matrix is
/// the correlation matrix `C` of `G⁻¹`. The maximin unit vector is the
/// normalized minimum-norm point of their convex hull, found exactly by
/// enumerating every face: on face `S` the affine minimizer has weights
/// proportional to `C_S⁻¹ 1`, and its squared norm is `1 / (1ᵀ C_S⁻¹ 1)`.
pub fn maximin_direction(g: &SymMatrix) -> Result<MaximinDirection> {
    let h = inverse_pd(g)?;
    maximin_from_precision(&h)
}

pub(crate) fn maximin_from_precision(h: &SymMatrix) -> Result<MaximinDirection> {
    let k = h.dim();
    if k > 20 {
        return Err(Error::InvalidInput(format!("maximin face enumeration needs k <= 20, got {k}")));
    }
    let scale: Vec<f64> = h.diag().iter().map(|v| v.sqrt()).collect();
    let corr = |i: usize, j: usize| h.get(i, j) / (scale[i] * scale[j]);

    let mut best_sum = f64::NEG_INFINITY;
    let mut best_weights = vec![0.0; k];
    let mut idx = Vec::with_capacity(k);
    let mut sub = vec![0.0; k * k];
    let mut v = vec![0.0; k];
    for mask in 1_u32..(1_u32 << k) {
        idx.clear();
        idx.extend((0..k).filter(|&i| mask & (1 << i) != 0));
        let n = idx.len();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                sub[a * n + b] = corr(i, j);
            }
            v[a] = 1.0;
        }
        chol_solve_in_place(n, &mut sub[..n * n], &mut v[..n]);
        if v[..n].iter().any(|&x| !(x > 0.0)) {
            continue;
        }
        let s: f64 = v[..n].iter().sum();
        if s > best_sum {
            best_sum = s;
            best_weights.iter_mut().for_each(|w| *w = 0.0);
            for (a, &i) in idx.iter().enumerate() {
                best_weights[i] = v[a] / s;
            }
        }
    }
    let attained_min = (1.0 / best_sum).sqrt();
    // d = Σ μ_i e_i / √H_ii, normalized so dᵀHd = 1.
    let mut d: Vec<f64> = (0..k).map(|i| best_weights[i] / scale[i] / attained_min).collect();
    let norm2 = h.quad_form(&d);
    let c = 1.0 / norm2.sqrt();
    d.iter_mut().for_each(|x| *x *= c);

    let hd = h.mul_vec(&d);
    let constraint_ok = hd.iter().all(|&x| x >= -1e-8);
    let attained_min = (0..k).map(|i| hd[i] / scale[i]).fold(f64::INFINITY, f64::min);
    Ok(MaximinDirection { d, attained_min, constraint_ok })
}

/// Chi-bar-squared level probabilities `w_0..w_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBarWeights {
    pub w: Vec<f64>,
}

impl ChiBarWeights {
    /// Validates `w_i ∈ [0,1]` and `Σw = 1` (1e-9).
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("weights must lie in [0, 1]".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("weights sum to {s}, not 1")));
        }
        Ok(ChiBarWeights { w })
    }

    /// Binomial weights `2^{-k} C(k, i)`, the level probabilities when `G` is diagonal.
    pub fn binomial(k: usize) -> Self {
        let mut w = vec![0.0; k + 1];
        let mut c = 1.0_f64;
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = c / 2f64.powi(k as i32);
            c = c * (k - i) as f64 / (i + 1) as f64;
        }
        ChiBarWeights { w }
    }
}

/// Draws per independently seeded chunk in [`chibar_weights`].
pub const WEIGHT_CHUNK: usize = 10_000;

/// Monte Carlo level probabilities for `Z ~ N(0, G)`.
///
/// Draws are split into fixed chunks of [`WEIGHT_CHUNK`], chunk `c` using
/// `rng.substream(c)`, so the result is the same however the chunks are
/// scheduled across threads.
pub fn chibar_weights(g: &SymMatrix, n_draws: usize, rng: RngStream) -> Result<ChiBarWeights> {
    let counts = chibar_counts(g, n_draws, rng, true)?;
    Ok(weights_from_counts(&counts, n_draws))
}

/// Same as [`chibar_weights`] without spawning work on the rayon pool.
pub fn chibar_weights_sequential(
    g: &SymMatrix,
    n_draws: usize,
    rng: RngStream,
) -> Result<ChiBarWeights> {
    let counts = chibar_counts(g, n_draws, rng, false)?;
    Ok(weights_from_counts(&counts, n_draws))
}

fn weights_from_counts(counts: &[u64], n: usize) -> ChiBarWeights {
    ChiBarWeights { w: counts.iter().map(|&c| c as f64 / n as f64).collect() }
}

fn chibar_counts(g: &SymMatrix, n_draws: usize, rng: RngStream, parallel: bool) -> Result<Vec<u64>> {
    if n_draws == 0 {
        return Err(Error::InvalidInput("n_draws must be positive".into()));
    }
    let proto = OrthantProjector::new(g)?;
    let k = proto.dim();
    let n_chunks = n_draws.div_ceil(WEIGHT_CHUNK);
    let run_chunk = |c: usize| -> Result<Vec<u64>> {
        let mut proj = proto.clone();
        let mut gen = rng.substream(c as u64).generator();
        let len = WEIGHT_CHUNK.min(n_draws - c * WEIGHT_CHUNK);
        let mut counts = vec![0_u64; k + 1];
        let mut q = vec![0.0; k];
        for _ in 0..len {
            for v in q.iter_mut() {
                *v = gen.sample(StandardNormal);
            }
            // Z = L z  =>  H Z = L⁻ᵀ z
            proj.chol.backward_in_place(&mut q);
            let m = proj.positive_count_for_q(&q)?;
            counts[m] += 1;
        }
        Ok(counts)
    };
    let per_chunk: Vec<Vec<u64>> = if parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect::<Result<_>>()?
    } else {
        (0..n_chunks).map(run_chunk).collect::<Result<_>>()?
    };
    let mut total = vec![0_u64; k + 1];
    for c in per_chunk {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(total)
}

/// `Σ w_i P(χ²_i ≥ t)` with `χ²_0` a point mass at zero.
pub fn chibar_survival(t: f64, w: &ChiBarWeights) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for (i, &wi) in w.w.iter().enumerate().skip(1) {
        if wi > 0.0 {
            s += wi * statrs::function::gamma::gamma_ur(i as f64 / 2.0, t / 2.0);
        }
    }
    s.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_inside_cone_is_identity() {
        let p = project_orthant(&[1.0, 1.0], &SymMatrix::identity(2)).unwrap();
        assert!(close(&p.u_bar, &[1.0, 1.0], 1e-15));
        assert!((p.t_c - 2.0).abs() < 1e-14);
        assert!(p.active_set.is_empty());
    }

    #[test]
    fn projection_of_polar_point_is_origin() {
        let p = project_orthant(&[-1.0, -2.0], &SymMatrix::identity(2)).unwrap();
        assert_eq!(p.u_bar, vec![0.0, 0.0]);
        assert_eq!(p.t_c, 0.0);
        assert_eq!(p.active_set, vec![0, 1]);
        assert!(close(&p.multipliers, &[1.0, 2.0], 1e-15));
    }

    #[test]
    fn projection_correlated_example() {
        let g = SymMatrix::from_rows(&[[1.0, 0.9], [0.9, 1.0]]).unwrap();
        let p = project_orthant(&[1.0, -1.0], &g).unwrap();
        assert!(close(&p.u_bar, &[1.9, 0.0], 1e-12));
        assert!((p.t_c - 19.0).abs() < 1e-10);
        assert_eq!(p.active_set, vec![1]);
    }

    #[test]
    fn projection_identity_metric_clamps() {
        let p = project_orthant(&[1.0, -1.0], &SymMatrix::identity(2)).unwrap();
        assert_eq!(p.u_bar, vec![1.0, 0.0]);
        assert!((p.t_c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_indefinite() {
        let g = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            project_orthant(&[1.0, 1.0], &g),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn projection_rejects_length_mismatch() {
        assert!(project_orthant(&[1.0], &SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn maximin_identity_is_equal_weights() {
        let m = maximin_direction(&SymMatrix::identity(2)).unwrap();
        let r = 0.5_f64.sqrt();
        assert!(close(&m.d, &[r, r], 1e-12));
        assert!((m.attained_min - r).abs() < 1e-12);
        assert!(m.constraint_ok);
        let m = maximin_direction(&SymMatrix::identity(3)).unwrap();
        let r = (1.0 / 3.0_f64).sqrt();
        assert!(close(&m.d, &[r, r, r], 1e-12));
    }

    #[test]
    fn maximin_diagonal_example() {
        let g = SymMatrix::diagonal(&[1.0, 4.0]).unwrap();
        let m = maximin_direction(&g).unwrap();
        assert!(close(&m.d, &[0.5_f64.sqrt(), 2.0_f64.sqrt()], 1e-10));
        let h = inverse_pd(&g).unwrap();
        assert!((h.quad_form(&m.d) - 1.0).abs() < 1e-12);
        assert!(close(&h.mul_vec(&m.d), &[std::f64::consts::FRAC_1_SQRT_2, 0.5 * std::f64::consts::FRAC_1_SQRT_2], 1e-5));
    }

    #[test]
    fn maximin_negative_correlation_stays_in_cone() {
        let g = SymMatrix::from_rows(&[
            [1.0, -0.45, -0.45],
            [-0.45, 1.0, -0.45],
            [-0.45, -0.45, 1.0],
        ])
        .unwrap();
        let m = maximin_direction(&g).unwrap();
        assert!(m.d.iter().all(|&x| x >= 0.0));
        assert!(m.constraint_ok);
    }

    #[test]
    fn survival_basics() {
        let w = ChiBarWeights::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(chibar_survival(0.0, &w), 1.0);
        let point = ChiBarWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(chibar_survival(0.1, &point), 0.0);
        // 95th percentile of chi-square(1)
        let half = ChiBarWeights::new(vec![0.5, 0.5]).unwrap();
        let q95 = 3.841_458_820_694_124;
        assert!((chibar_survival(q95, &half) - 0.025).abs() < 1e-10);
        let mut prev = 1.0;
        for i in 0..200 {
            let s = chibar_survival(i as f64 * 0.1, &w);
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    #[test]
    fn weights_validation() {
        assert!(ChiBarWeights::new(vec![0.5, 0.6]).is_err());
        assert!(ChiBarWeights::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(ChiBarWeights::binomial(2).w, vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn weights_one_dimensional() {
        let w = chibar_weights(&SymMatrix::identity(1), 1_000_000, RngStream::new(1, 0)).unwrap();
        assert!(close(&w.w, &[0.5, 0.5], 0.005));
    }

    #[test]
    fn weights_identity_two() {
        let w = chibar_weights(&SymMatrix::identity(2), 1_000_000, RngStream::new(2, 0)).unwrap();
        assert!(close(&w.w, &[0.25, 0.5, 0.25], 0.005));
    }

    #[test]
    fn weights_correlated_two_dimensional() {
        let g = SymMatrix::from_rows(&[[1.0, 0.9], [0.9, 1.0]]).unwrap();
        let w = chibar_weights(&g, 1_000_000, RngStream::new(3, 0)).unwrap();
        assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w.w[1] - 0.5).abs() < 0.005);
        // Orthant probability for the positive quadrant of N(0, G).
        let w2 = 0.25 + 0.9_f64.asin() / (2.0 * std::f64::consts::PI);
        assert!((w.w[2] - w2).abs() < 0.005);
    }

    #[test]
    fn weights_deterministic_across_thread_counts() {
        let g = SymMatrix::from_rows(&[[1.0, 0.3], [0.3, 2.0]]).unwrap();
        let rng = RngStream::new(99, 4);
        let seq = chibar_weights_sequential(&g, 55_555, rng).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let par = pool.install(|| chibar_weights(&g, 55_555, rng)).unwrap();
        assert_eq!(seq, par);
    }
}
