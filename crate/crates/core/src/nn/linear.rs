use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::{matvec_acc, matvec_t_acc, outer_acc, SampleFrameTensor};
use crate::real::Real;

/// Affine map `y = W x + b` with `W` stored as `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T> {
    pub w: SampleFrameTensor<T>,
    pub b: SampleFrameTensor<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: SampleFrameTensor::glorot(&[output, input], input, output, rng),
            b: SampleFrameTensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: SampleFrameTensor::zeros(&[output, input]),
            b: SampleFrameTensor::zeros(&[output]),
        }
    }

    pub fn from_parts(w: SampleFrameTensor<T>, b: SampleFrameTensor<T>) -> Result<Self> {
        if w.rank() != 2 || b.rank() != 1 || w.shape()[0] != b.len() {
            return Err(Error::dims(w.shape(), b.shape()));
        }
        Ok(Self { w, b })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    /// Writes `W x + b` into `y`.
    #[inline]
    pub fn forward_into(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(self.b.data());
        matvec_acc(self.w.data(), self.input_dim(), x, y);
    }

    pub fn forward_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.output_dim()];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and, if requested, `dx += Wᵀ dy`.
    #[inline]
    pub fn backward_vec(&self, x: &[T], dy: &[T], grad: &mut Self, dx: Option<&mut [T]>) {
        let cols = self.input_dim();
        outer_acc(grad.w.data_mut(), cols, dy, x);
        for (g, &d) in grad.b.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            matvec_t_acc(self.w.data(), cols, dy, dx);
        }
    }

    /// Row-wise forward over a `(rows, in)` matrix.
    pub fn forward_rows(&self, x: &SampleFrameTensor<T>) -> SampleFrameTensor<T> {
        let rows = x.rows();
        let mut y = SampleFrameTensor::zeros(&[rows, self.output_dim()]);
        for i in 0..rows {
            self.forward_into(x.row(i), y.row_mut(i));
        }
        y
    }

    /// Row-wise backward; returns `dx`.
    pub fn backward_rows(
        &self,
        x: &SampleFrameTensor<T>,
        dy: &SampleFrameTensor<T>,
        grad: &mut Self,
    ) -> SampleFrameTensor<T> {
        let rows = x.rows();
        let mut dx = SampleFrameTensor::zeros(&[rows, self.input_dim()]);
        for i in 0..rows {
            self.backward_vec(x.row(i), dy.row(i), grad, Some(dx.row_mut(i)));
        }
        dx
    }
}

impl<T: Real> Parameterized<T> for LinearLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Applies the layer at every `(batch, time)` position of `x`.
pub fn linear_forward<T: Real>(layer: &LinearLayer<T>, x: &SampleFrameTensor<T>) -> Result<SampleFrameTensor<T>> {
    let (b, t, c) = x.dims3();
    if c != layer.input_dim() {
        return Err(Error::Dimension {
            expected: vec![layer.output_dim(), layer.input_dim()],
            got: x.shape().to_vec(),
        });
    }
    let y = layer.forward_rows(x);
    y.reshape(&[b, t, layer.output_dim()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> SampleFrameTensor<f64> {
        SampleFrameTensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_map_gives_zero() {
        let layer = LinearLayer::<f64>::zeros(3, 2);
        let y = linear_forward(&layer, &t(&[1, 2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_map_is_identity() {
        let layer = LinearLayer::from_parts(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), t(&[2], &[0.0, 0.0])).unwrap();
        let x = t(&[1, 1, 2], &[0.3, -7.0]);
        assert_eq!(linear_forward(&layer, &x).unwrap().data(), x.data());
    }

    #[test]
    fn hand_example() {
        let layer = LinearLayer::from_parts(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), t(&[2], &[1.0, 1.0])).unwrap();
        let y = linear_forward(&layer, &t(&[1, 1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = LinearLayer::<f64>::new(3, 2, &mut rng);
        let err = linear_forward(&layer, &SampleFrameTensor::zeros(&[1, 4, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[1, 4, 5]"), "{msg}");
    }
}
