use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array of rank 1 to 3.
///
/// Rank-3 tensors are read as `(batch, time, channels)`, rank-2 as
/// `(time, channels)` and rank-1 as a single channel vector. Weight matrices
/// are stored as rank-2 `(out, in)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFrameTensor<T> {
    data: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> SampleFrameTensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Invalid(format!("unsupported rank {}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dims(&[n], &[data.len()]));
        }
        Ok(Self {
            data,
            shape: shape.to_vec(),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            data: vec![T::zero(); n],
            shape: shape.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims(&[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(&[rows.len(), cols], data)
    }

    /// Glorot-uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-limit..=limit))).collect();
        Self {
            data,
            shape: shape.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Shape padded on the left to `(batch, time, channels)`.
    pub fn dims3(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c] => (1, 1, c),
            [t, c] => (1, t, c),
            [b, t, c] => (b, t, c),
            _ => unreachable!("rank is checked on construction"),
        }
    }

    pub fn channels(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn rows(&self) -> usize {
        self.len() / self.channels().max(1)
    }

    /// Row `i` of the tensor viewed as `(rows, channels)`.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.channels();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.channels();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(Error::dims(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// `y += W x` for a row-major `W` of shape `(rows, cols)`.
#[inline]
pub(crate) fn matvec_acc<T: Real>(w: &[T], cols: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), y.len() * cols);
    for (yi, wr) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += dot(wr, x);
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

/// Strided writable matrix view.
pub(crate) struct MatMut<'a, T> {
    data: &'a mut [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

fn check_view(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "matrix view out of bounds");
    }
}

impl<'a, T> Mat<'a, T> {
    /// Contiguous row-major `(rows, cols)`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        check_view(data.len(), rows, cols, rs, cs);
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a mut [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        check_view(data.len(), rows, cols, rs, cs);
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

/// `C = A B + beta C`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: MatMut<'_, T>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions");
    assert_eq!((m, n), (c.rows, c.cols), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked on construction and shapes agree.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Adds `row` to every row of the row-major `m`.
pub(crate) fn add_row_bias<T: Real>(m: &mut [T], row: &[T]) {
    for r in m.chunks_exact_mut(row.len()) {
        add_into(r, row);
    }
}

/// `acc += Σ_rows m`.
pub(crate) fn col_sums_acc<T: Real>(m: &[T], acc: &mut [T]) {
    for r in m.chunks_exact(acc.len()) {
        add_into(acc, r);
    }
}

/// Dot product with four independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (p, q) in ca.zip(cb) {
        acc[0] += p[0] * q[0];
        acc[1] += p[1] * q[1];
        acc[2] += p[2] * q[2];
        acc[3] += p[3] * q[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&p, &q) in ra.iter().zip(rb) {
        s += p * q;
    }
    s
}

/// `dx += Wᵀ dy`.
#[inline]
pub(crate) fn matvec_t_acc<T: Real>(w: &[T], cols: usize, dy: &[T], dx: &mut [T]) {
    debug_assert_eq!(dx.len(), cols);
    for (&g, wr) in dy.iter().zip(w.chunks_exact(cols)) {
        if g == T::zero() {
            continue;
        }
        for (d, &a) in dx.iter_mut().zip(wr) {
            *d += g * a;
        }
    }
}

/// `G += dy xᵀ`.
#[inline]
pub(crate) fn outer_acc<T: Real>(g: &mut [T], cols: usize, dy: &[T], x: &[T]) {
    debug_assert_eq!(x.len(), cols);
    for (&d, gr) in dy.iter().zip(g.chunks_exact_mut(cols)) {
        if d == T::zero() {
            continue;
        }
        for (a, &b) in gr.iter_mut().zip(x) {
            *a += d * b;
        }
    }
}

#[inline]
pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
