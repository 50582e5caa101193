//! Small dense linear algebra and seeded random streams.
//!
//! Everything here is sized for the problems this crate solves: a handful of
//! tested coefficients and a dozen regressors. Storage is dense and
//! row-major; there is no attempt at blocking or sparsity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidInput("columns have unequal lengths".into()));
        }
        let mut m = Matrix::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> SymMatrix {
        let p = self.cols;
        let mut g = vec![0.0; p * p];
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..p {
                    g[a * p + b] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g[a * p + b] = g[b * p + a];
            }
        }
        SymMatrix { dim: p, data: g }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows && self.cols != 0 && other.cols != 0 {
            return Err(Error::InvalidInput("row count mismatch in hstack".into()));
        }
        let rows = if self.cols == 0 { other.rows } else { self.rows };
        let cols = self.cols + other.cols;
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..self.cols {
                m.set(i, j, self.get(i, j));
            }
            for j in 0..other.cols {
                m.set(i, self.cols + j, other.get(i, j));
            }
        }
        Ok(m)
    }
}

/// Symmetric positive (semi)definite candidate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Validates symmetry (1e-12 relative) and finiteness.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("matrix dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let scale = data.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in 0..i {
                if (data[i * dim + j] - data[j * dim + i]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Builds from rows, e.g. `&[[4.0, 2.0], [2.0, 5.0]]`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::InvalidInput("matrix is not square".into()));
            }
            data.extend_from_slice(r);
        }
        SymMatrix::new(dim, data)
    }

    /// Averages `A` and `Aᵀ`; for matrices that are symmetric up to roundoff.
    pub fn symmetrized(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        for i in 0..dim {
            for j in 0..i {
                let v = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        SymMatrix::new(dim, data)
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        SymMatrix { dim, data }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let dim = values.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in values.iter().enumerate() {
            data[i * dim + i] = v;
        }
        SymMatrix::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        self.data.chunks(self.dim).map(|r| dot(r, v)).collect()
    }

    /// `vᵀ A v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let n = idx.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in idx {
            for &j in idx {
                data.push(self.get(i, j));
            }
        }
        SymMatrix { dim: n, data }
    }

    /// Leading `n × n` block.
    pub fn leading_block(&self, n: usize) -> SymMatrix {
        let idx: Vec<usize> = (0..n).collect();
        self.submatrix(&idx)
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// Dense product `self · other` (not symmetric in general).
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let a = self.get(i, l);
                for j in 0..n {
                    out[i * n + j] += a * other.get(l, j);
                }
            }
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Row-major storage of `L` (upper triangle is zero).
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s = b[i] - dot(row, &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lower[j * n + i] * y[j];
            }
            y[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|i| dot(&self.lower[i * n..i * n + i + 1], &z[..=i])).collect()
    }

    /// `A⁻¹` from the factor.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            for i in 0..n {
                data[i * n + j] = e[i];
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { dim: n, data }
    }
}

/// Cholesky factorization; fails when a pivot drops to `1e-12 · max diag`.
pub fn cholesky(a: &SymMatrix) -> Result<CholFactor> {
    cholesky_raw(a.dim, &a.data)
}

pub(crate) fn cholesky_raw(n: usize, a: &[f64]) -> Result<CholFactor> {
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[i * n + i]));
    let threshold = PIVOT_TOLERANCE * max_diag;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let pivot = a[j * n + j] - dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
        if !(pivot > threshold) || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = s / ljj;
        }
    }
    Ok(CholFactor { dim: n, lower: l })
}

/// Solves `A x = b` for positive definite `A`.
pub fn solve_pd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim {
        return Err(Error::InvalidInput("right-hand side has wrong length".into()));
    }
    Ok(cholesky(a)?.solve(b))
}

pub fn inverse_pd(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(cholesky(a)?.inverse())
}

/// One draw `L z` with `z` standard normal.
pub fn mvn_draw<R: Rng + ?Sized>(chol: &CholFactor, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..chol.dim).map(|_| rng.sample(StandardNormal)).collect();
    chol.mul_lower(&z)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Live generator behind an [`RngStream`].
pub type StreamRng = ChaCha8Rng;

/// Addressable random stream: `(seed, stream_id)` names a fixed draw sequence.
///
/// Streams are derived, never shared: each bootstrap index or Monte Carlo
/// replication gets its own child via [`RngStream::substream`], so results do
/// not depend on which worker ran which index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Child stream `id`, keyed on both the parent seed and the parent stream.
    pub fn substream(&self, id: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_f42d_4c95_7f2d))),
            stream_id: id,
        }
    }

    pub fn generator(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn random_pd(n: usize, rng: &mut StreamRng) -> SymMatrix {
        let m: Vec<f64> = (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|l| m[i * n + l] * m[j * n + l]).sum::<f64>();
            }
            a[i * n + i] += 0.5;
        }
        SymMatrix::symmetrized(n, a).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_eq!(l.lower(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cholesky_hand_example() {
        let a = SymMatrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert!(close(l.lower(), &[2.0, 0.0, 1.0, 2.0], 1e-15));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn cholesky_rejects_near_singular() {
        let a = SymMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0 + 1e-14]]).unwrap();
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn cholesky_is_bitwise_deterministic() {
        let mut rng = RngStream::new(3, 0).generator();
        let a = random_pd(6, &mut rng);
        assert_eq!(cholesky(&a).unwrap(), cholesky(&a).unwrap());
    }

    #[test]
    fn symmetry_is_validated() {
        assert!(SymMatrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn solve_examples() {
        let x = solve_pd(&SymMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert!(close(&x, &[1.0, 2.0, 3.0], 1e-15));
        let a = SymMatrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let x = solve_pd(&a, &[6.0, 7.0]).unwrap();
        assert!(close(&x, &[1.0, 1.0], 1e-14));
    }

    #[test]
    fn solve_random_residual() {
        let mut rng = RngStream::new(11, 0).generator();
        let a = random_pd(5, &mut rng);
        let b: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let x = solve_pd(&a, &b).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) <= 1e-9 * norm(&b));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_pd(&SymMatrix::identity(3)).unwrap(), SymMatrix::identity(3));
        let inv = inverse_pd(&SymMatrix::diagonal(&[1.0, 4.0]).unwrap()).unwrap();
        assert!(close(inv.as_slice(), &[1.0, 0.0, 0.0, 0.25], 1e-15));
        let a = SymMatrix::from_rows(&[[1.0, 0.9], [0.9, 1.0]]).unwrap();
        let inv = inverse_pd(&a).unwrap();
        let c = 1.0 / 0.19;
        assert!(close(inv.as_slice(), &[c, -0.9 * c, -0.9 * c, c], 1e-12));
        let prod = a.matmul(&inv);
        assert!(close(&prod, &[1.0, 0.0, 0.0, 1.0], 1e-9));
    }

    #[test]
    fn mvn_identity_factor_is_standard_normal() {
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        let mut a = RngStream::new(5, 9).generator();
        let mut b = RngStream::new(5, 9).generator();
        let z: Vec<f64> = (0..3).map(|_| b.sample(StandardNormal)).collect();
        assert_eq!(mvn_draw(&l, &mut a), z);
    }

    #[test]
    fn mvn_same_stream_is_identical() {
        let l = cholesky(&SymMatrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]).unwrap()).unwrap();
        let x = mvn_draw(&l, &mut RngStream::new(42, 7).generator());
        let y = mvn_draw(&l, &mut RngStream::new(42, 7).generator());
        assert_eq!(x, y);
    }

    #[test]
    fn mvn_sample_covariance_matches() {
        let sigma = SymMatrix::from_rows(&[[1.0, 0.5, -0.2], [0.5, 2.0, 0.3], [-0.2, 0.3, 0.8]])
            .unwrap();
        let l = cholesky(&sigma).unwrap();
        let mut rng = RngStream::new(2024, 0).generator();
        let n = 1_000_000;
        let mut acc = [0.0; 9];
        for _ in 0..n {
            let x = mvn_draw(&l, &mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    acc[i * 3 + j] += x[i] * x[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let s = acc[i * 3 + j] / n as f64;
                let scale = (sigma.get(i, i) * sigma.get(j, j)).sqrt();
                assert!((s - sigma.get(i, j)).abs() <= 0.01 * scale, "({i},{j}) {s}");
            }
        }
    }

    #[test]
    fn substreams_are_uncorrelated() {
        let root = RngStream::new(77, 0);
        let n = 10_000;
        for (p, q) in [(0_u64, 1_u64), (1, 2), (5, 1000)] {
            let mut a = root.substream(p).generator();
            let mut b = root.substream(q).generator();
            let xs: Vec<f64> = (0..n).map(|_| a.sample(StandardNormal)).collect();
            let ys: Vec<f64> = (0..n).map(|_| b.sample(StandardNormal)).collect();
            let mx = xs.iter().sum::<f64>() / n as f64;
            let my = ys.iter().sum::<f64>() / n as f64;
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            assert!((sxy / (sxx * syy).sqrt()).abs() < 0.05);
        }
        assert_ne!(root.substream(1), RngStream::new(77, 1).substream(1));
    }

    proptest! {
        #[test]
        fn solve_recovers_x(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = RngStream::new(seed, 0).generator();
            let a = random_pd(n, &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let got = solve_pd(&a, &a.mul_vec(&x)).unwrap();
            let err = norm(&got.iter().zip(&x).map(|(p, q)| p - q).collect::<Vec<_>>());
            prop_assert!(err <= 1e-8 * norm(&x).max(1e-300));
        }
    }
}
