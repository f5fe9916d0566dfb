use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::{add_row_bias, col_sums_acc, gemm, Mat, MatMut, SampleFrameTensor};
use crate::real::Real;

/// Valid (unpadded) strided 1-D cross-correlation. Kernel is `(out, in, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub kernel: SampleFrameTensor<T>,
    pub bias: SampleFrameTensor<T>,
    pub stride: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            kernel: SampleFrameTensor::glorot(&[output, input, width], input * width, output, rng),
            bias: SampleFrameTensor::zeros(&[output]),
            stride: stride.max(1),
        }
    }

    pub fn zeros(input: usize, output: usize, width: usize, stride: usize) -> Self {
        Self {
            kernel: SampleFrameTensor::zeros(&[output, input, width]),
            bias: SampleFrameTensor::zeros(&[output]),
            stride: stride.max(1),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn output_len(&self, t: usize) -> usize {
        if t < self.width() {
            0
        } else {
            (t - self.width()) / self.stride + 1
        }
    }

    /// Forward over one `(time, in)` sequence stored row-major.
    pub(crate) fn forward_seq(&self, x: &[T], t: usize, y: &mut [T]) {
        let (ci, co, k) = (self.in_channels(), self.out_channels(), self.width());
        let kd = self.kernel.data();
        for s in 0..self.output_len(t) {
            let base = s * self.stride;
            let yr = &mut y[s * co..(s + 1) * co];
            for (o, yo) in yr.iter_mut().enumerate() {
                let mut acc = self.bias.data()[o];
                for i in 0..ci {
                    let kr = &kd[(o * ci + i) * k..(o * ci + i + 1) * k];
                    for (j, &kv) in kr.iter().enumerate() {
                        acc += kv * x[(base + j) * ci + i];
                    }
                }
                *yo = acc;
            }
        }
    }

    /// Backward for one sequence; accumulates parameter gradients and,
    /// when `dx` is given, input gradients.
    pub(crate) fn backward_seq(&self, x: &[T], t: usize, dy: &[T], grad: &mut Self, mut dx: Option<&mut [T]>) {
        let (ci, co, k) = (self.in_channels(), self.out_channels(), self.width());
        let kd = self.kernel.data();
        for s in 0..self.output_len(t) {
            let base = s * self.stride;
            for o in 0..co {
                let g = dy[s * co + o];
                if g == T::zero() {
                    continue;
                }
                grad.bias.data_mut()[o] += g;
                for i in 0..ci {
                    let off = (o * ci + i) * k;
                    for j in 0..k {
                        let xi = (base + j) * ci + i;
                        grad.kernel.data_mut()[off + j] += g * x[xi];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi] += g * kd[off + j];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv1d<T> {
    /// Applies the kernel to `m` independent flattened windows, one per row of
    /// `xs`, writing `(m, out)` into `y`. Needs a single input channel or unit width,
    /// where window and kernel flatten in the same order.
    pub(crate) fn forward_frames(&self, xs: &[T], y: &mut [T]) {
        let (co, w) = (self.out_channels(), self.in_channels() * self.width());
        assert!(
            self.in_channels() == 1 || self.width() == 1,
            "frame form needs one channel or unit width"
        );
        let m = xs.len() / w;
        y.iter_mut().for_each(|v| *v = T::zero());
        add_row_bias(y, self.bias.data());
        gemm(
            Mat::new(xs, m, w),
            Mat::new(self.kernel.data(), co, w).t(),
            T::one(),
            MatMut::new(y, m, co),
        );
    }

    /// Backward of `forward_frames`.
    pub(crate) fn backward_frames(&self, xs: &[T], dys: &[T], grad: &mut Self, dxs: Option<&mut [T]>) {
        let (co, w) = (self.out_channels(), self.in_channels() * self.width());
        let m = xs.len() / w;
        col_sums_acc(dys, grad.bias.data_mut());
        let dy = Mat::new(dys, m, co);
        gemm(
            dy.t(),
            Mat::new(xs, m, w),
            T::one(),
            MatMut::new(grad.kernel.data_mut(), co, w),
        );
        if let Some(dxs) = dxs {
            gemm(
                dy,
                Mat::new(self.kernel.data(), co, w),
                T::one(),
                MatMut::new(dxs, m, w),
            );
        }
    }
}

impl<T: Real> Parameterized<T> for Conv1d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Runs `layer` over every batch entry of a `(batch, time, in)` tensor.
pub fn conv1d_forward<T: Real>(layer: &Conv1d<T>, x: &SampleFrameTensor<T>) -> Result<SampleFrameTensor<T>> {
    let (b, t, c) = x.dims3();
    if c != layer.in_channels() {
        return Err(Error::dims(&[layer.in_channels()], &[c]));
    }
    if t < layer.width() {
        return Err(Error::Invalid(format!(
            "input length {t} shorter than kernel width {}",
            layer.width()
        )));
    }
    let to = layer.output_len(t);
    let co = layer.out_channels();
    let mut y = vec![T::zero(); b * to * co];
    for bi in 0..b {
        layer.forward_seq(
            &x.data()[bi * t * c..(bi + 1) * t * c],
            t,
            &mut y[bi * to * co..(bi + 1) * to * co],
        );
    }
    SampleFrameTensor::new(&[b, to, co], y)
}

/// Non-overlapping transposed convolution: kernel width equals the stride, so
/// every input step expands into exactly `stride` output steps.
/// Kernel is `(in, out, stride)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConv1d<T> {
    pub kernel: SampleFrameTensor<T>,
    pub bias: SampleFrameTensor<T>,
}

impl<T: Real> TransposedConv1d<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, stride: usize, rng: &mut R) -> Self {
        assert!(stride >= 1, "stride must be at least 1");
        Self {
            kernel: SampleFrameTensor::glorot(&[input, output, stride], input, output * stride, rng),
            bias: SampleFrameTensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize, stride: usize) -> Self {
        assert!(stride >= 1, "stride must be at least 1");
        Self {
            kernel: SampleFrameTensor::zeros(&[input, output, stride]),
            bias: SampleFrameTensor::zeros(&[output]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn stride(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// Expands a single input vector into `stride` output rows (row-major in `y`).
    pub(crate) fn forward_step(&self, x: &[T], y: &mut [T]) {
        let (ci, co, r) = (self.in_channels(), self.out_channels(), self.stride());
        for j in 0..r {
            y[j * co..(j + 1) * co].copy_from_slice(self.bias.data());
        }
        let kd = self.kernel.data();
        for (i, &xv) in x.iter().enumerate().take(ci) {
            if xv == T::zero() {
                continue;
            }
            for o in 0..co {
                let kr = &kd[(i * co + o) * r..(i * co + o + 1) * r];
                for (j, &kv) in kr.iter().enumerate() {
                    y[j * co + o] += xv * kv;
                }
            }
        }
    }

    pub(crate) fn backward_step(&self, x: &[T], dy: &[T], grad: &mut Self, dx: &mut [T]) {
        let (ci, co, r) = (self.in_channels(), self.out_channels(), self.stride());
        for j in 0..r {
            for o in 0..co {
                grad.bias.data_mut()[o] += dy[j * co + o];
            }
        }
        let kd = self.kernel.data();
        for i in 0..ci {
            let mut acc = T::zero();
            for o in 0..co {
                let off = (i * co + o) * r;
                for j in 0..r {
                    let g = dy[j * co + o];
                    grad.kernel.data_mut()[off + j] += g * x[i];
                    acc += g * kd[off + j];
                }
            }
            dx[i] += acc;
        }
    }
}

impl<T: Real> TransposedConv1d<T> {
    /// `forward_step` applied to every row of `xs`; output rows are `stride * out` wide.
    pub(crate) fn forward_rows(&self, xs: &[T]) -> Vec<T> {
        let (ci, co, r) = (self.in_channels(), self.out_channels(), self.stride());
        let m = xs.len() / ci;
        let mut y = vec![T::zero(); m * r * co];
        add_row_bias(&mut y, self.bias.data());
        let kd = self.kernel.data();
        for j in 0..r {
            let kj = Mat::strided(&kd[j..], ci, co, co * r, r);
            let yj = MatMut::strided(&mut y[j * co..], m, co, r * co, 1);
            gemm(Mat::new(xs, m, ci), kj, T::one(), yj);
        }
        y
    }

    /// Backward of `forward_rows`; returns `dxs`.
    pub(crate) fn backward_rows(&self, xs: &[T], dys: &[T], grad: &mut Self) -> Vec<T> {
        let (ci, co, r) = (self.in_channels(), self.out_channels(), self.stride());
        let m = xs.len() / ci;
        col_sums_acc(dys, grad.bias.data_mut());
        let mut dxs = vec![T::zero(); m * ci];
        let kd = self.kernel.data();
        let gk = grad.kernel.data_mut();
        for j in 0..r {
            let dyj = Mat::strided(&dys[j * co..], m, co, r * co, 1);
            gemm(
                Mat::new(xs, m, ci).t(),
                dyj,
                T::one(),
                MatMut::strided(&mut gk[j..], ci, co, co * r, r),
            );
            let kj = Mat::strided(&kd[j..], ci, co, co * r, r);
            gemm(dyj, kj.t(), T::one(), MatMut::new(&mut dxs, m, ci));
        }
        dxs
    }
}

impl<T: Real> Parameterized<T> for TransposedConv1d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Upsamples `(batch, time, in)` to `(batch, stride · time, out)`.
pub fn tconv1d_forward<T: Real>(layer: &TransposedConv1d<T>, x: &SampleFrameTensor<T>) -> Result<SampleFrameTensor<T>> {
    let (b, t, c) = x.dims3();
    if c != layer.in_channels() {
        return Err(Error::dims(&[layer.in_channels()], &[c]));
    }
    let (co, r) = (layer.out_channels(), layer.stride());
    let mut y = vec![T::zero(); b * t * r * co];
    for (row, out) in x.data().chunks_exact(c).zip(y.chunks_exact_mut(r * co)) {
        layer.forward_step(row, out);
    }
    SampleFrameTensor::new(&[b, t * r, co], y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[f64]) -> SampleFrameTensor<f64> {
        SampleFrameTensor::new(&[1, v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut c = Conv1d::<f64>::zeros(1, 1, 1, 1);
        c.kernel.data_mut()[0] = 1.0;
        let x = seq(&[0.5, -1.0, 2.0]);
        assert_eq!(conv1d_forward(&c, &x).unwrap().data(), x.data());
    }

    #[test]
    fn box_kernel() {
        let mut c = Conv1d::<f64>::zeros(1, 1, 2, 1);
        c.kernel.data_mut().copy_from_slice(&[1.0, 1.0]);
        assert_eq!(conv1d_forward(&c, &seq(&[1.0, 2.0, 3.0])).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn zero_kernel_and_short_input() {
        let c = Conv1d::<f64>::zeros(1, 2, 2, 1);
        assert!(conv1d_forward(&c, &seq(&[1.0, 2.0, 3.0]))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(conv1d_forward(&c, &seq(&[1.0])).is_err());
    }

    #[test]
    fn tconv_shape_and_hand_value() {
        let mut tc = TransposedConv1d::<f64>::zeros(1, 1, 4);
        tc.kernel.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let y = tconv1d_forward(&tc, &seq(&[5.0])).unwrap();
        assert_eq!(y.data(), &[5.0, 0.0, 0.0, 0.0]);
        assert_eq!(tconv1d_forward(&tc, &seq(&[1.0; 5])).unwrap().dims3().1, 20);
    }

    #[test]
    fn tconv_length_is_r_times_t() {
        for r in 1..7 {
            let tc = TransposedConv1d::<f64>::zeros(2, 3, r);
            for t in 1..12 {
                let x = SampleFrameTensor::zeros(&[2, t, 2]);
                assert_eq!(tconv1d_forward(&tc, &x).unwrap().shape(), &[2, r * t, 3]);
            }
        }
    }
}
