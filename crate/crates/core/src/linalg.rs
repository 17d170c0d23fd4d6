//! Dense row-major matrices and the Cholesky routines used by the GP.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Diagonal jitter, as a multiple of the mean diagonal, tried after a plain
/// factorisation fails. Each retry multiplies it by ten.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            &other.data,
            &mut out.data,
            false,
        );
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c = a · b` (or `c += a · b` with `accumulate`) for row-major `a: m×k`, `b: k×n`.
/// Products below this many multiply-adds skip the packing kernel.
const SMALL_GEMM: usize = 1 << 15;

pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 || m * k * n <= SMALL_GEMM {
        if !accumulate {
            c.fill(0.0);
        }
        if k == 0 {
            return;
        }
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            for (aip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
                for (cv, bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aip * bv;
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above; strides describe contiguous row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = aᵀ · b` for row-major `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 || m * k * n <= SMALL_GEMM {
        c.fill(0.0);
        for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
            for (api, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
                for (cv, bv) in c_row.iter_mut().zip(b_row) {
                    *cv += api * bv;
                }
            }
        }
        return;
    }
    // SAFETY: as in `gemm`; `a` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a · bᵀ` for row-major `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    if m * k * n <= SMALL_GEMM {
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            for (cv, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
                *cv = dot(a_row, b_row);
            }
        }
        return;
    }
    // SAFETY: as in `gemm`; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Lower Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub factor: DenseMatrix,
    pub jitter: f64,
}

/// Lower-triangular `L` with `L·Lᵀ = a`.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    cholesky_jittered(a).map(|c| c.factor)
}

/// Cholesky with jitter escalation: a plain attempt first, then
/// `1e-8·mean(diag)` added to the diagonal, growing tenfold up to `1e-2·mean(diag)`.
pub fn cholesky_jittered(a: &DenseMatrix) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::DimensionMismatch(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut last = match factorize(a, 0.0) {
        Ok(factor) => return Ok(CholeskyFactor { factor, jitter: 0.0 }),
        Err(e) => e,
    };
    let mean_diag = if n == 0 { 0.0 } else { a.diag().iter().sum::<f64>() / n as f64 };
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * base;
        match factorize(a, jitter) {
            Ok(factor) => return Ok(CholeskyFactor { factor, jitter }),
            Err(e) => last = e,
        }
        rel *= 10.0;
    }
    Err(last)
}

fn factorize(a: &DenseMatrix, jitter: f64) -> Result<DenseMatrix> {
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let pivot = a[(i, i)] + jitter - s;
                if pivot <= 0.0 || !pivot.is_finite() {
                    return Err(Error::NotPositiveDefinite { row: i, pivot });
                }
                l[(i, i)] = pivot.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `L·y = b` by forward substitution.
pub fn solve_lower(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_solve_dims(l, b.len())?;
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - dot(&l.row(i)[..i], &y[..i])) / l[(i, i)];
    }
    Ok(y)
}

/// Solves `Lᵀ·x = y` by back substitution.
pub fn solve_upper_transposed(l: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_solve_dims(l, y.len())?;
    let n = y.len();
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        x[i] /= l[(i, i)];
        let xi = x[i];
        // column i of Lᵀ above the diagonal is row i of L left of the diagonal
        for (k, lik) in l.row(i)[..i].iter().enumerate() {
            x[k] -= lik * xi;
        }
    }
    Ok(x)
}

/// Solves `(L·Lᵀ)·x = b` given the lower Cholesky factor `L`.
pub fn solve_cholesky(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let y = solve_lower(l, b)?;
    solve_upper_transposed(l, &y)
}

/// `L⁻¹` for a lower-triangular `L`.
pub fn invert_lower(l: &DenseMatrix) -> Result<DenseMatrix> {
    check_solve_dims(l, l.rows)?;
    let n = l.rows;
    let mut inv = DenseMatrix::zeros(n, n);
    // row i of L⁻¹ is -(1/l_ii)·Σ_{k<i} l_ik·(row k of L⁻¹), plus 1/l_ii on the diagonal
    let mut acc = vec![0.0; n];
    for i in 0..n {
        acc[..i].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                for (a, v) in acc[..=k].iter_mut().zip(&inv.row(k)[..=k]) {
                    *a += lik * v;
                }
            }
        }
        let d = l[(i, i)];
        let row = inv.row_mut(i);
        for (r, a) in row[..i].iter_mut().zip(&acc[..i]) {
            *r = -a / d;
        }
        row[i] = 1.0 / d;
    }
    Ok(inv)
}

/// `(L·Lᵀ)⁻¹ = L⁻ᵀ·L⁻¹`.
pub fn cholesky_inverse(l: &DenseMatrix) -> Result<DenseMatrix> {
    let linv = invert_lower(l)?;
    let n = l.rows;
    let mut out = DenseMatrix::zeros(n, n);
    gemm_tn(n, n, n, linv.as_slice(), linv.as_slice(), out.as_mut_slice());
    Ok(out)
}

fn check_solve_dims(l: &DenseMatrix, n: usize) -> Result<()> {
    if !l.is_square() || l.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "triangular factor is {}x{}, right-hand side has length {n}",
            l.rows, l.cols
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut s = RandomStream::new(seed);
        let b = DenseMatrix::from_vec(n, n, (0..n * n).map(|_| s.normal()).collect()).unwrap();
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += n as f64 * 0.1;
        }
        a
    }

    fn reconstruction_error(a: &DenseMatrix, l: &DenseMatrix) -> f64 {
        let llt = l.matmul(&l.transpose()).unwrap();
        let diff: f64 = llt
            .as_slice()
            .iter()
            .zip(a.as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        diff / a.frobenius_norm()
    }

    /// Gauss-Jordan inverse, independent of the Cholesky path.
    fn dense_inverse(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut aug = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            for j in 0..n {
                aug[i][j] = a[(i, j)];
            }
            aug[i][n + i] = 1.0;
        }
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| aug[x][c].abs().total_cmp(&aug[y][c].abs())).unwrap();
            aug.swap(c, p);
            let d = aug[c][c];
            for v in aug[c].iter_mut() {
                *v /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = aug[r][c];
                    let pivot_row = aug[c].clone();
                    for (v, pv) in aug[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        DenseMatrix::from_rows(&aug.into_iter().map(|r| r[n..].to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scalar_and_identity() {
        let l = cholesky(&DenseMatrix::from_vec(1, 1, vec![9.0]).unwrap()).unwrap();
        assert_eq!(l.as_slice(), &[3.0]);
        assert_eq!(cholesky(&DenseMatrix::identity(4)).unwrap(), DenseMatrix::identity(4));
    }

    #[test]
    fn two_by_two_reconstructs() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l[(0, 1)], 0.0);
        let llt = l.matmul(&l.transpose()).unwrap();
        for (x, y) in llt.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { .. })));
        let b = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&b), Err(Error::DimensionMismatch(_))));
        let c = DenseMatrix::zeros(2, 3);
        assert!(matches!(cholesky(&c), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank one: plain factorisation hits a zero pivot
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let c = cholesky_jittered(&a).unwrap();
        assert!(c.jitter > 0.0 && c.jitter <= 1e-2);
        assert!(c.factor.diag().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn solve_identity_and_two_by_two() {
        let x = solve_cholesky(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);

        let l = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]).unwrap();
        let a = l.matmul(&l.transpose()).unwrap();
        let x = solve_cholesky(&l, &[4.0, 3.0]).unwrap();
        let back = a.matvec(&x).unwrap();
        assert!((back[0] - 4.0).abs() < 1e-10 && (back[1] - 3.0).abs() < 1e-10);

        assert!(matches!(solve_cholesky(&l, &[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn solve_matches_dense_inverse_8x8() {
        let a = random_spd(8, 11);
        let l = cholesky(&a).unwrap();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = solve_cholesky(&l, &b).unwrap();
        let oracle = dense_inverse(&a).matvec(&b).unwrap();
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() <= 1e-8 * scale.max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn cholesky_inverse_matches_dense_inverse() {
        let a = random_spd(12, 5);
        let inv = cholesky_inverse(&cholesky(&a).unwrap()).unwrap();
        let oracle = dense_inverse(&a);
        for (u, v) in inv.as_slice().iter().zip(oracle.as_slice()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    fn naive_product(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_on_both_paths() {
        let mut s = RandomStream::new(17);
        for (m, k, n) in [(3, 4, 5), (40, 30, 50), (7, 0, 3)] {
            let a: Vec<f64> = (0..m * k).map(|_| s.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| s.normal()).collect();
            let expected = naive_product(m, k, n, &a, &b);
            let close = |c: &[f64]| c.iter().zip(&expected).all(|(x, y)| (x - y).abs() < 1e-12);

            let mut c = vec![1.0; m * n];
            gemm(m, k, n, &a, &b, &mut c, false);
            assert!(close(&c));
            gemm(m, k, n, &a, &b, &mut c, true);
            assert!(c.iter().zip(&expected).all(|(x, y)| (x - 2.0 * y).abs() < 1e-12));

            let at = DenseMatrix::from_vec(m, k, a.clone()).unwrap().transpose().into_vec();
            let mut c = vec![1.0; m * n];
            gemm_tn(m, k, n, &at, &b, &mut c);
            assert!(close(&c));

            let bt = DenseMatrix::from_vec(k, n, b.clone()).unwrap().transpose().into_vec();
            let mut c = vec![1.0; m * n];
            gemm_nt(m, k, n, &a, &bt, &mut c);
            assert!(close(&c));
        }
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_random_spd(n in 1usize..=32, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let l = cholesky(&a).unwrap();
            prop_assert!(reconstruction_error(&a, &l) < 1e-10);
        }

        #[test]
        fn solve_agrees_with_dense_inverse(n in 1usize..=16, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let l = cholesky(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).ln() - 0.5).collect();
            let x = solve_cholesky(&l, &b).unwrap();
            let oracle = dense_inverse(&a).matvec(&b).unwrap();
            let norm = oracle.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let err = x.iter().zip(&oracle).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-8);
        }
    }
}
