//! Dense row-major tensors and the handful of kernels the model needs.
//!
//! Kernels operate on flat row-major slices so that callers can work on
//! strided sub-blocks (attention heads) without copying. Every backward rule
//! is the exact analytic derivative of its forward.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type usable by every kernel.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C ← alpha·A·B + beta·C` on raw strided storage.
    ///
    /// # Safety
    /// All pointers must address valid storage for the given shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Read-only strided matrix view into a slice.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows × cols` matrix filling `data`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix of shape [{rows}, {cols}] needs {} elements, got {}",
            rows * cols,
            data.len()
        );
        MatRef { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Sub-block starting at `offset` with explicit row stride.
    pub fn strided(data: &'a [T], offset: usize, rows: usize, cols: usize, row_stride: usize) -> Self {
        let m = MatRef { data, offset, rows, cols, rs: row_stride, cs: 1 };
        m.check();
        m
    }

    pub fn t(self) -> Self {
        MatRef { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "strided view out of bounds ({last} >= {})", self.data.len());
        }
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a, T> {
    data: &'a mut [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix of shape [{rows}, {cols}] needs {} elements, got {}",
            rows * cols,
            data.len()
        );
        MatMut { data, offset: 0, rows, cols, rs: cols }
    }

    pub fn strided(data: &'a mut [T], offset: usize, rows: usize, cols: usize, row_stride: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = offset + (rows - 1) * row_stride + cols - 1;
            assert!(last < data.len(), "strided view out of bounds ({last} >= {})", data.len());
        }
        MatMut { data, offset, rows, cols, rs: row_stride }
    }
}

/// `C ← alpha·A·B + beta·C`. Panics with both shapes on mismatch.
pub fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert!(
        a.cols == b.rows && c.rows == a.rows && c.cols == b.cols,
        "matmul shape mismatch: [{}, {}] x [{}, {}] -> [{}, {}]",
        a.rows,
        a.cols,
        b.rows,
        b.cols,
        c.rows,
        c.cols
    );
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked at construction, so all
    // addressed elements lie inside their slices.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            1,
        )
    }
}

/// Deterministic RNG stream keyed by a global seed and a per-tensor id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Fills `out` with i.i.d. `N(0, std²)` draws. Samples are produced in `f64`
/// and rounded, so `f32` and `f64` tensors from the same stream agree.
pub fn fill_gaussian<T: Real>(rng: &mut ChaCha8Rng, out: &mut [T], std: f64) {
    if std == 0.0 {
        out.fill(T::zero());
        return;
    }
    for x in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x = T::from_f64(z * std);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} needs {n} elements, got {}", data.len());
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn view(&self) -> MatRef<'_, T> {
        let (r, c) = self.dims2();
        MatRef::new(&self.data, r, c)
    }

    pub fn view_mut(&mut self) -> MatMut<'_, T> {
        let (r, c) = self.dims2();
        MatMut::new(&mut self.data, r, c)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect() }
    }
}

/// I.i.d. normal tensor with mean 0 and the given std. Deterministic per stream.
pub fn gaussian_init<T: Real>(stream: RngStream, shape: &[usize], std: f64) -> Tensor<T> {
    assert!(std >= 0.0 && std.is_finite(), "init std must be finite and >= 0, got {std}");
    let mut t = Tensor::zeros(shape);
    fill_gaussian(&mut stream.rng(), t.data_mut(), std);
    t
}

/// Rank-2 matrix product `A·B`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, _) = a.dims2();
    let (_, n) = b.dims2();
    let mut c = Tensor::zeros(&[m, n]);
    gemm(T::one(), a.view(), b.view(), T::zero(), c.view_mut());
    c
}

/// Saved state of a LayerNorm forward pass over `rows × n` input.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub n: usize,
    /// Normalized input `(x − μ)/√(σ² + eps)`.
    pub xhat: Vec<T>,
    /// Per-row `1/√(σ² + eps)`.
    pub rstd: Vec<T>,
}

/// Row-wise LayerNorm `y = (x − μ)/√(σ² + eps) ⊙ g + b`.
pub fn layernorm_fwd<T: Real>(x: &[T], n: usize, gain: &[T], bias: &[T], eps: f64) -> (Vec<T>, LnCache<T>) {
    assert!(eps > 0.0, "layernorm eps must be > 0");
    assert!(
        gain.len() == n && bias.len() == n,
        "layernorm params have lengths {} and {}, expected {n}",
        gain.len(),
        bias.len()
    );
    assert_eq!(x.len() % n, 0, "input length {} is not a multiple of width {n}", x.len());
    let rows = x.len() / n;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_n = T::from_f64(1.0 / n as f64);
    let eps = T::from_f64(eps);
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let mean = xr.iter().copied().sum::<T>() * inv_n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        let xh = &mut xhat[r * n..(r + 1) * n];
        let yr = &mut y[r * n..(r + 1) * n];
        for i in 0..n {
            xh[i] = (xr[i] - mean) * rs;
            yr[i] = xh[i] * gain[i] + bias[i];
        }
    }
    (y, LnCache { n, xhat, rstd })
}

/// Backward of [`layernorm_fwd`]. Returns `(dx, dgain, dbias)`.
pub fn layernorm_bwd<T: Real>(cache: &LnCache<T>, gain: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = cache.n;
    assert_eq!(dy.len(), cache.xhat.len(), "layernorm grad has {} elements, cache has {}", dy.len(), cache.xhat.len());
    let mut dx = vec![T::zero(); dy.len()];
    let mut dg = vec![T::zero(); n];
    let mut db = vec![T::zero(); n];
    layernorm_bwd_into(cache, gain, dy, &mut dx, &mut dg, &mut db);
    (dx, dg, db)
}

/// Accumulating form of [`layernorm_bwd`]: adds into `dx`, `dgain`, `dbias`.
pub fn layernorm_bwd_into<T: Real>(
    cache: &LnCache<T>,
    gain: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let n = cache.n;
    let rows = dy.len() / n;
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut g = vec![T::zero(); n];
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        let xh = &cache.xhat[r * n..(r + 1) * n];
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for i in 0..n {
            dbias[i] += dyr[i];
            dgain[i] += dyr[i] * xh[i];
            g[i] = dyr[i] * gain[i];
            mean_g += g[i];
            mean_gx += g[i] * xh[i];
        }
        mean_g *= inv_n;
        mean_gx *= inv_n;
        let rs = cache.rstd[r];
        let dxr = &mut dx[r * n..(r + 1) * n];
        for i in 0..n {
            dxr[i] += rs * (g[i] - mean_g - xh[i] * mean_gx);
        }
    }
}

/// `y = max(x, 0)²`.
pub fn relu2_fwd<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v * v } else { T::zero() }).collect()
}

/// `dx = dy · 2·max(x, 0)`.
pub fn relu2_bwd<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    assert_eq!(x.len(), dy.len(), "relu2 input has {} elements, grad has {}", x.len(), dy.len());
    let two = T::from_f64(2.0);
    x.iter().zip(dy).map(|(&v, &g)| if v > T::zero() { two * v * g } else { T::zero() }).collect()
}

/// Numerically stable row-wise softmax over rows of length `n`, in place.
/// Entries equal to `-inf` receive probability zero.
pub fn softmax_rows_inplace<T: Real>(x: &mut [T], n: usize) {
    assert_eq!(x.len() % n, 0, "input length {} is not a multiple of row length {n}", x.len());
    for row in x.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = sum.recip();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn softmax_rows<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut y = x.to_vec();
    softmax_rows_inplace(&mut y, n);
    y
}

/// Mean token cross-entropy over `rows × vocab` logits. Returns the loss and
/// its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &[T], vocab: usize, targets: &[u32]) -> (f64, Vec<T>) {
    assert_eq!(
        logits.len(),
        targets.len() * vocab,
        "logits have {} elements, expected {} targets x {vocab}",
        logits.len(),
        targets.len()
    );
    let rows = targets.len();
    let mut d = logits.to_vec();
    softmax_rows_inplace(&mut d, vocab);
    let mut loss = 0.0;
    let inv_rows = T::from_f64(1.0 / rows as f64);
    for (r, &t) in targets.iter().enumerate() {
        let t = t as usize;
        assert!(t < vocab, "target {t} outside vocabulary {vocab}");
        let row = &mut d[r * vocab..(r + 1) * vocab];
        // log-softmax computed from the logits for accuracy when p is tiny.
        let lr = &logits[r * vocab..(r + 1) * vocab];
        let max = lr.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lr.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - lr[t].as_f64();
        row[t] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_rows;
        }
    }
    (loss / rows as f64, d)
}

/// ALiBi slope for head `h` in `1..=n_heads`: `2^(−8h/n_heads)`.
pub fn alibi_slopes(n_heads: usize) -> Vec<f64> {
    (1..=n_heads).map(|h| 2f64.powf(-8.0 * h as f64 / n_heads as f64)).collect()
}

/// Causal ALiBi bias of shape `[n_heads, seq_len, seq_len]`:
/// `−slope_h·(i − j)` for `j ≤ i` and `−inf` for `j > i`.
pub fn alibi_bias<T: Real>(n_heads: usize, seq_len: usize) -> Tensor<T> {
    assert!(n_heads >= 1 && seq_len >= 1, "alibi needs n_heads >= 1 and seq_len >= 1");
    let slopes = alibi_slopes(n_heads);
    let mut t = Tensor::zeros(&[n_heads, seq_len, seq_len]);
    let d = t.data_mut();
    for (h, s) in slopes.iter().enumerate() {
        for i in 0..seq_len {
            for j in 0..seq_len {
                d[(h * seq_len + i) * seq_len + j] =
                    if j > i { T::neg_infinity() } else { T::from_f64(-s * (i - j) as f64) };
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(seed: u64, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        fill_gaussian(&mut RngStream::new(seed, 0).rng(), &mut v, 1.0);
        v
    }

    fn fd_step(x: f64) -> f64 {
        1e-5 * (1.0 + x.abs())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_init_degenerate_and_deterministic() {
        let z: Tensor<f64> = gaussian_init(RngStream::new(1, 2), &[3, 4], 0.0);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a: Tensor<f32> = gaussian_init(RngStream::new(7, 3), &[64], 0.5);
        let b: Tensor<f32> = gaussian_init(RngStream::new(7, 3), &[64], 0.5);
        assert_eq!(a, b);
        let c: Tensor<f32> = gaussian_init(RngStream::new(7, 4), &[64], 0.5);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_init_moments() {
        let t: Tensor<f64> = gaussian_init(RngStream::new(42, 9), &[4096], 0.02);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let sd = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((sd - 0.02).abs() < 0.002, "std {sd}");
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(matmul(&a, &b).data(), &[58.0, 64.0, 139.0, 154.0]);
        let mut c = Tensor::zeros(&[3, 3]);
        gemm(1.0, a.view().t(), a.view(), 0.0, c.view_mut());
        assert_eq!(c.data(), &[17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    #[should_panic(expected = "[2, 3] x [2, 3]")]
    fn matmul_reports_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        matmul(&a, &a);
    }

    #[test]
    fn relu2_values() {
        assert_eq!(relu2_fwd(&[-1.0f64, 2.0, 0.0]), vec![0.0, 4.0, 0.0]);
        assert_eq!(relu2_bwd(&[-1.0f64, 2.0], &[1.0, 1.0]), vec![0.0, 4.0]);
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let (y, _) = layernorm_fwd(&[3.0f64; 6], 6, &[1.0; 6], &[0.0; 6], 1e-5);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = random(3, 5 * 7);
        let y = softmax_rows(&x, 7);
        for row in y.chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let x32: Vec<f32> = x.iter().map(|&v| v as f32 * 10.0).collect();
        for row in softmax_rows(&x32, 7).chunks(7) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_backward_fd() {
        let (m, k, n) = (5, 7, 4);
        let a = random(1, m * k);
        let b = random(2, k * n);
        let w = random(3, m * n);
        let loss = |a: &[f64], b: &[f64]| {
            let c = matmul(&Tensor::from_vec(&[m, k], a.to_vec()), &Tensor::from_vec(&[k, n], b.to_vec()));
            c.data().iter().zip(&w).map(|(x, y)| x * y).sum::<f64>()
        };
        // dA = W·Bᵀ, dB = Aᵀ·W
        let mut da = vec![0.0; m * k];
        gemm(1.0, MatRef::new(&w, m, n), MatRef::new(&b, k, n).t(), 0.0, MatMut::new(&mut da, m, k));
        let mut db = vec![0.0; k * n];
        gemm(1.0, MatRef::new(&a, m, k).t(), MatRef::new(&w, m, n), 0.0, MatMut::new(&mut db, k, n));
        assert!(max_rel(&da, &numeric_grad(&a, |x| loss(x, &b))) < 1e-6);
        assert!(max_rel(&db, &numeric_grad(&b, |x| loss(&a, x))) < 1e-6);
    }

    #[test]
    fn layernorm_backward_fd() {
        let (rows, n) = (5, 7);
        let x = random(4, rows * n);
        let g: Vec<f64> = random(5, n).iter().map(|v| 1.0 + 0.3 * v).collect();
        let b = random(6, n);
        let w = random(7, rows * n);
        let loss = |x: &[f64], g: &[f64], b: &[f64]| {
            let (y, _) = layernorm_fwd(x, n, g, b, 1e-5);
            y.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>()
        };
        let (_, cache) = layernorm_fwd(&x, n, &g, &b, 1e-5);
        let (dx, dg, db) = layernorm_bwd(&cache, &g, &w);
        assert!(max_rel(&dx, &numeric_grad(&x, |v| loss(v, &g, &b))) < 1e-6);
        assert!(max_rel(&dg, &numeric_grad(&g, |v| loss(&x, v, &b))) < 1e-6);
        assert!(max_rel(&db, &numeric_grad(&b, |v| loss(&x, &g, v))) < 1e-6);
    }

    #[test]
    fn relu2_backward_fd() {
        let x = random(8, 35);
        let w = random(9, 35);
        let loss = |x: &[f64]| relu2_fwd(x).iter().zip(&w).map(|(p, q)| p * q).sum::<f64>();
        assert!(max_rel(&relu2_bwd(&x, &w), &numeric_grad(&x, loss)) < 1e-6);
    }

    #[test]
    fn softmax_backward_fd() {
        let x = random(10, 35);
        let w = random(11, 35);
        let loss = |x: &[f64]| softmax_rows(x, 7).iter().zip(&w).map(|(p, q)| p * q).sum::<f64>();
        let y = softmax_rows(&x, 7);
        let mut dx = vec![0.0; 35];
        for r in 0..5 {
            let dot: f64 = (0..7).map(|j| y[r * 7 + j] * w[r * 7 + j]).sum();
            for j in 0..7 {
                dx[r * 7 + j] = y[r * 7 + j] * (w[r * 7 + j] - dot);
            }
        }
        assert!(max_rel(&dx, &numeric_grad(&x, loss)) < 1e-6);
    }

    #[test]
    fn cross_entropy_backward_fd() {
        let x = random(12, 35);
        let targets = [0u32, 6, 3, 3, 1];
        let (_, d) = cross_entropy(&x, 7, &targets);
        let num = numeric_grad(&x, |v| cross_entropy(v, 7, &targets).0);
        assert!(max_rel(&d, &num) < 1e-6);
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, _) = cross_entropy(&[0.0f64; 17], 17, &[4]);
        assert!((loss - (17f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn alibi_structure() {
        let s = alibi_slopes(8);
        for (h, v) in s.iter().enumerate() {
            assert_eq!(*v, 2f64.powi(-(h as i32 + 1)));
        }
        let b: Tensor<f64> = alibi_bias(8, 5);
        let d = b.data();
        for h in 0..8 {
            for i in 0..5 {
                assert_eq!(d[(h * 5 + i) * 5 + i], 0.0);
                for j in i + 1..5 {
                    assert_eq!(d[(h * 5 + i) * 5 + j], f64::NEG_INFINITY);
                }
            }
        }
        assert_eq!(d[3 * 5], -0.5 * 3.0);
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = RngStream::new(seed, 0).rng();
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            for row in softmax_rows(&x, 8).chunks(8) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        #[test]
        fn init_is_pure(seed in any::<u64>(), stream in any::<u64>()) {
            let a: Tensor<f64> = gaussian_init(RngStream::new(seed, stream), &[16], 1.0);
            let b: Tensor<f64> = gaussian_init(RngStream::new(seed, stream), &[16], 1.0);
            prop_assert_eq!(a, b);
        }
    }
}
