//! Dense row-major matrices over f32 or f64.
//!
//! This is the only storage type in the crate. Everything downstream (layer
//! weights, coordinate grids, activation batches, dictionaries) is a Matrix.
//! The multiply kernel is written so the inner loop runs at unit stride and
//! vectorizes; at the sizes used here operands stay cache-resident and the
//! single-threaded kernel is the crate's throughput floor.

use std::fmt;

use crate::error::{Error, Result};

/// Element type tag carried by checkpoints and tensor files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F32 => write!(f, "f32"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

/// Element trait: the two float widths the toolkit trains and tests with.
///
/// Training defaults to f32 for throughput; oracle and gradient tests run in
/// f64. The trait carries just enough surface to keep generic code readable.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// Narrowing conversion from f64 (exact for f64, rounded for f32).
    fn real(x: f64) -> Self;
    /// Widening conversion to f64; always exact.
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    /// (sin x, cos x) pair. The f64 impl defers to the libm-exact routines;
    /// the f32 impl is a branch-free reduction + polynomial accurate to f32
    /// precision for |x| < 1e6, written so slice loops over it vectorize.
    fn sin_cos(self) -> (Self, Self);
}

/// Branch-free sin/cos pair, f64 arithmetic, f32-grade accuracy.
///
/// Reduces by quarter turns (k = round(x * 2/pi), r = x - k * pi/2, |r| <=
/// pi/4), evaluates Taylor polynomials whose truncation error is below f32
/// resolution on that range, and undoes the quadrant with arithmetic selects
/// so the whole computation is straight-line float math.
#[inline(always)]
fn sin_cos_poly(x: f64) -> (f64, f64) {
    let k = (x * std::f64::consts::FRAC_2_PI).round_ties_even();
    let r = x - k * std::f64::consts::FRAC_PI_2;
    // quadrant selectors kept in float form so the loop body stays pure
    // float arithmetic and compare/select, which vectorizes cleanly
    let half = (k * 0.5).floor();
    let swap = k - 2.0 * half; // k mod 2: quadrants 1 and 3 exchange sin/cos
    let m4 = k - 4.0 * (k * 0.25).floor(); // k mod 4 in {0,1,2,3}
    let sin_sign = if m4 >= 2.0 { -1.0 } else { 1.0 };
    let cos_sign = if m4 >= 1.0 && m4 <= 2.0 { -1.0 } else { 1.0 };
    let r2 = r * r;
    // sin(r) through r^9, cos(r) through r^10; next terms < 2e-9 at |r| = pi/4
    let s = r * (1.0
        + r2 * (-1.0 / 6.0
            + r2 * (1.0 / 120.0 + r2 * (-1.0 / 5040.0 + r2 * (1.0 / 362_880.0)))));
    let c = 1.0
        + r2 * (-0.5
            + r2 * (1.0 / 24.0
                + r2 * (-1.0 / 720.0 + r2 * (1.0 / 40_320.0 + r2 * (-1.0 / 3_628_800.0)))));
    let sin_out = (s * (1.0 - swap) + c * swap) * sin_sign;
    let cos_out = (c * (1.0 - swap) + s * swap) * cos_sign;
    (sin_out, cos_out)
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    #[inline]
    fn real(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    #[inline(always)]
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = sin_cos_poly(self as f64);
        (s as f32, c as f32)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    #[inline]
    fn real(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    #[inline(always)]
    fn sin_cos(self) -> (Self, Self) {
        // exact path: f64 is the dtype of record for oracle comparisons
        (self.sin(), self.cos())
    }
}

/// Fused multiply-add where the target has it, plain multiply-add otherwise.
/// The choice is fixed at compile time, so results are stable per build.
#[inline(always)]
pub fn fmadd<T: Scalar>(a: T, b: T, acc: T) -> T {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{}x{} needs {} elements, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Single row as a 1 x cols matrix.
    pub fn row_vector(data: Vec<T>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
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
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Matrix product self * rhs. Inner dims must agree.
    ///
    /// Accumulation runs in k-order per output element regardless of
    /// optimization level, so results are deterministic for a given build.
    /// Zero elements of self skip their row pass; with finite operands this
    /// is exact and makes products against sparse codes cheap.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} * {}x{}: inner dimensions differ",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        let (m, kdim, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); m * n];
        if n == 1 {
            // column output: per-row dot product with independent partial
            // sums so the reduction vectorizes; combine order is fixed
            for i in 0..m {
                let a_row = &self.data[i * kdim..(i + 1) * kdim];
                let mut acc = [T::zero(); 8];
                let mut chunks_a = a_row.chunks_exact(8);
                let mut chunks_b = rhs.data.chunks_exact(8);
                for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                    for l in 0..8 {
                        acc[l] = fmadd(ca[l], cb[l], acc[l]);
                    }
                }
                let mut tail = T::zero();
                for (&a, &b) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                    tail = fmadd(a, b, tail);
                }
                let mut total = tail;
                for l in 0..8 {
                    total += acc[l];
                }
                out[i] = total;
            }
        } else {
            for i in 0..m {
                let a_row = &self.data[i * kdim..(i + 1) * kdim];
                let o_row = &mut out[i * n..(i + 1) * n];
                for (k, &aik) in a_row.iter().enumerate() {
                    if aik == T::zero() {
                        continue;
                    }
                    let b_row = &rhs.data[k * n..(k + 1) * n];
                    for j in 0..n {
                        o_row[j] = fmadd(aik, b_row[j], o_row[j]);
                    }
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise (sin, cos) of every entry, one reduction per entry.
    pub fn sin_cos_all(&self) -> (Matrix<T>, Matrix<T>) {
        let n = self.data.len();
        let mut sins = vec![T::zero(); n];
        let mut coss = vec![T::zero(); n];
        let src = &self.data[..n];
        let sd = &mut sins[..n];
        let cd = &mut coss[..n];
        for i in 0..n {
            let (s, c) = Scalar::sin_cos(src[i]);
            sd[i] = s;
            cd[i] = c;
        }
        (
            Matrix {
                rows: self.rows,
                cols: self.cols,
                data: sins,
            },
            Matrix {
                rows: self.rows,
                cols: self.cols,
                data: coss,
            },
        )
    }

    /// self + rhs elementwise.
    pub fn add(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with("add", rhs, |a, b| a + b)
    }

    /// Adds the 1 x cols row vector `row` to every row of self.
    ///
    /// Both the recorded bias op and the plain forward pass go through this
    /// one implementation, which keeps their outputs bitwise identical.
    pub fn add_row_broadcast(&self, row: &Matrix<T>) -> Result<Matrix<T>> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("row {:?} against {:?}", row.shape(), self.shape()),
            ));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (x, &b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Elementwise ReLU: x where x > 0, else +0.0.
    pub fn relu(&self) -> Matrix<T> {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// self - rhs elementwise.
    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with("sub", rhs, |a, b| a - b)
    }

    fn zip_with(&self, op: &'static str, rhs: &Matrix<T>, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// self += scale * rhs, in place.
    pub fn add_scaled(&mut self, rhs: &Matrix<T>, scale: T) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "add_scaled",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = fmadd(scale, b, *a);
        }
        Ok(())
    }

    /// Squared Frobenius norm, accumulated in f64 for metric stability.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    /// Mean of all entries, accumulated in f64.
    pub fn mean_all(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|x| x.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lossless dtype bridge; used by tests that compare f32 runs against
    /// f64 oracles and by checkpoint conversion.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::real(x.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix<{}>({}x{})", T::DTYPE, self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            for r in 0..self.rows {
                write!(f, "\n  ")?;
                for c in 0..self.cols {
                    write!(f, "{:>12.6} ", self.get(r, c))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight three-loop product in textbook order; the reference all
    /// multiply paths are checked against.
    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = crate::tensor::StreamRng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn matmul_hand_example() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_matches_naive_reference() {
        let a = random_matrix(5, 7, 101);
        let b = random_matrix(7, 3, 102);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = random_matrix(2, 3, 1);
        let b = random_matrix(4, 2, 2);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_is_exact_both_sides() {
        let a = random_matrix(6, 6, 33);
        let i = Matrix::<f64>::identity(6);
        assert_eq!(a.matmul(&i).unwrap().data(), a.data());
        assert_eq!(i.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn transpose_round_trips() {
        let a = random_matrix(4, 9, 8);
        let back = a.transpose().transpose();
        assert_eq!(a.data(), back.data());
        assert_eq!(a.shape(), back.shape());
    }

    #[test]
    fn transpose_then_matmul_computes_gram() {
        let a = random_matrix(5, 3, 9);
        let gram = a.transpose().matmul(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(k, i) * a.get(k, j);
                }
                assert!((gram.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frobenius_matches_scalar_sum() {
        let a = Matrix::from_vec(2, 2, vec![1.0, -2.0, 2.0, 0.0]).unwrap();
        assert_eq!(a.frobenius_sq(), 9.0);
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let a = random_matrix(3, 3, 5).cast::<f32>();
        let b: Matrix<f32> = a.cast::<f64>().cast();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn column_output_matmul_matches_naive() {
        let a = random_matrix(9, 37, 41);
        let b = random_matrix(37, 1, 42);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn fast_sin_cos_tracks_reference_over_wide_range() {
        let mut rng = crate::tensor::StreamRng::new(201);
        let mut worst = 0.0f64;
        for i in 0..200_000 {
            let x = match i % 4 {
                0 => rng.uniform(-3.2, 3.2),
                1 => rng.uniform(-100.0, 100.0),
                2 => rng.uniform(-5_000.0, 5_000.0),
                _ => rng.uniform(-0.01, 0.01),
            } as f32;
            let (s, c) = Scalar::sin_cos(x);
            let err_s = (s as f64 - (x as f64).sin()).abs();
            let err_c = (c as f64 - (x as f64).cos()).abs();
            worst = worst.max(err_s).max(err_c);
        }
        // absolute error bound; well under one f32 ulp of unity
        assert!(worst < 5e-8, "worst sin/cos error {worst}");
    }

    #[test]
    fn f64_sin_cos_is_exact() {
        for x in [-7.3f64, -0.5, 0.0, 0.25, 2.0, 31.4] {
            let (s, c) = Scalar::sin_cos(x);
            assert_eq!(s, x.sin());
            assert_eq!(c, x.cos());
        }
    }
}
