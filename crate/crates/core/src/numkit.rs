//! Dense numeric kernel: row-major `f64` matrices, strided matrix products
//! and a small deterministic random source.
//!
//! Everything above this module stores weights and activations in [`Matrix`]
//! and draws randomness from [`Rng`], so initialization, dropout masks, fold
//! assignment and the synthetic generator all replay exactly from a seed.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of 64-bit reals.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {}x{} to {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Read-only strided view of the whole matrix.
    pub fn view(&self) -> MatRef<'_> {
        MatRef {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols,
            col_stride: 1,
        }
    }

    /// Transposed view, no copy.
    pub fn t(&self) -> MatRef<'_> {
        MatRef {
            data: &self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: 1,
            col_stride: self.cols,
        }
    }

    pub fn view_mut(&mut self) -> MatMut<'_> {
        MatMut {
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols,
            col_stride: 1,
            data: &mut self.data,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Borrowed strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// View over `data` with explicit strides. Fails if the view would read
    /// past the end of the slice.
    pub fn new(
        data: &'a [f64],
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
    ) -> Result<Self> {
        check_extent(data.len(), rows, cols, row_stride, col_stride)?;
        Ok(Self {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        })
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row_stride + c * self.col_stride]
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(
        data: &'a mut [f64],
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
    ) -> Result<Self> {
        check_extent(data.len(), rows, cols, row_stride, col_stride)?;
        Ok(Self {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        })
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Ok(());
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    if last >= len {
        return Err(Error::Shape(format!(
            "strided {rows}x{cols} view (strides {rs},{cs}) exceeds buffer of {len}"
        )));
    }
    Ok(())
}

/// General matrix product `c = alpha * a * b + beta * c` over strided views.
///
/// When `beta == 0` the previous contents of `c` are ignored.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::Shape(format!(
            "gemm: a is {}x{}, b is {}x{}, c is {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    check_extent(a.data.len(), a.rows, a.cols, a.row_stride, a.col_stride)?;
    check_extent(b.data.len(), b.rows, b.cols, b.row_stride, b.col_stride)?;
    check_extent(c.data.len(), c.rows, c.cols, c.row_stride, c.col_stride)?;
    if c.rows == 0 || c.cols == 0 {
        return Ok(());
    }
    if a.cols == 0 {
        for r in 0..c.rows {
            for col in 0..c.cols {
                let v = &mut c.data[r * c.row_stride + col * c.col_stride];
                *v = if beta == 0.0 { 0.0 } else { beta * *v };
            }
        }
        return Ok(());
    }
    // SAFETY: every view was bounds-checked against its slice above, and `c`
    // is an exclusive borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr(),
            c.row_stride as isize,
            c.col_stride as isize,
        );
    }
    Ok(())
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul: left operand is {}x{}, right operand is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a.view(), b.view(), 0.0, out.view_mut())?;
    Ok(out)
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* generator.
///
/// Seeding: `state = splitmix64(seed)`, replaced by a fixed odd constant if
/// that is zero. Each draw applies
///
/// ```text
/// x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
/// out = x * 0x2545F4914F6CDD1D   (wrapping)
/// ```
///
/// Reals are `(out >> 11) * 2^-53`, which lies in `[0, 1)`. Only integer
/// operations feed the stream, so it is identical on every platform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self {
            state: if s == 0 { SPLITMIX_GAMMA } else { s },
        }
    }

    /// Independent generator for sub-stream `stream` of `seed`. Used to hand
    /// folds and subjects their own sequences without sharing state.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ splitmix64(stream.wrapping_add(0x5EED)))
    }

    /// Draws a seed from this generator and builds a child from it.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform real in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `n` draws from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Param(format!(
                "uniform range requires finite lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok((0..n).map(|_| self.uniform_one(lo, hi)).collect())
    }

    #[inline]
    pub fn uniform_one(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // rounding in the affine map can land exactly on hi
        if v >= hi {
            lo
        } else {
            v
        }
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift, unbiased).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            let lo = m as u64;
            if lo >= n.wrapping_neg() % n {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, rng.uniform(-1.0, 1.0, r * c).unwrap()).unwrap()
    }

    fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn identity_product() {
        let mut rng = Rng::new(3);
        let a = random(&mut rng, 3, 3);
        let p = matmul(&Matrix::identity(3), &a).unwrap();
        assert_eq!(p, a);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        assert!(max_diff(&matmul(&a, &b).unwrap(), &naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_both() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("right operand"), "{msg}");
    }

    #[test]
    fn transpose_of_product() {
        let mut rng = Rng::new(5);
        let a = random(&mut rng, 4, 6);
        let b = random(&mut rng, 6, 2);
        let lhs = matmul(&a, &b).unwrap().transpose();
        let rhs = matmul(&b.transpose(), &a.transpose()).unwrap();
        assert!(max_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn strided_views_agree_with_copies() {
        let mut rng = Rng::new(8);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 5, 3);
        let mut c = Matrix::zeros(4, 3);
        gemm(1.0, a.t(), b.view(), 0.0, c.view_mut()).unwrap();
        assert!(max_diff(&c, &naive(&a.transpose(), &b)) < 1e-12);
    }

    #[test]
    fn empty_inner_dimension_gives_zeros() {
        let p = matmul(&Matrix::zeros(3, 0), &Matrix::zeros(0, 2)).unwrap();
        assert_eq!(p, Matrix::zeros(3, 2));
    }

    #[test]
    fn uniform_determinism_and_range() {
        let a = Rng::new(42).uniform(0.0, 1.0, 100).unwrap();
        let b = Rng::new(42).uniform(0.0, 1.0, 100).unwrap();
        assert_eq!(a, b);
        assert!(Rng::new(42).uniform(0.0, 1.0, 0).unwrap().is_empty());
        assert!(Rng::new(1).uniform(1.0, 1.0, 3).is_err());
        assert!(Rng::new(1).uniform(2.0, 1.0, 3).is_err());
    }

    #[test]
    fn uniform_mean() {
        let v = Rng::new(9).uniform(0.0, 1.0, 100_000).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn golden_stream_seed_one() {
        // Frozen from the documented update rule; guards platform independence.
        let mut rng = Rng::new(1);
        let got: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        assert_eq!(got, GOLDEN_SEED_ONE);
    }

    const GOLDEN_SEED_ONE: [u64; 4] = [
        0x4B46_A55D_F361_1B9B,
        0xD7E1_F141_0E76_3EF4,
        0x5F14_EC66_975F_9B06,
        0x3B2C_74FA_D44D_6CDB,
    ];

    #[test]
    fn below_and_shuffle() {
        let mut rng = Rng::new(4);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[rng.below(3)] += 1;
        }
        assert!(counts.iter().all(|&c| c > 900), "{counts:?}");
        let mut v: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(77);
        let n = 50_000;
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03, "{mean} {var}");
    }
}
