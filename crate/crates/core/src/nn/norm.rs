use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::SampleFrameTensor;
use crate::real::Real;

const LN_EPS: f64 = 1e-5;

/// Per-row layer normalisation with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: SampleFrameTensor<T>,
    pub bias: SampleFrameTensor<T>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: SampleFrameTensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        let mut gain = SampleFrameTensor::zeros(&[width]);
        gain.fill(T::one());
        Self {
            gain,
            bias: SampleFrameTensor::zeros(&[width]),
        }
    }

    pub fn forward(&self, x: &SampleFrameTensor<T>) -> (SampleFrameTensor<T>, LayerNormCache<T>) {
        let rows = x.rows();
        let h = x.channels();
        let hn = T::of_usize(h);
        let mut y = SampleFrameTensor::zeros(&[rows, h]);
        let mut xhat = SampleFrameTensor::zeros(&[rows, h]);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = x.row(i);
            let mean = r.iter().copied().sum::<T>() / hn;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hn;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(is);
            for k in 0..h {
                let xh = (r[k] - mean) * is;
                xhat.row_mut(i)[k] = xh;
                y.row_mut(i)[k] = xh * self.gain.data()[k] + self.bias.data()[k];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: &SampleFrameTensor<T>,
        grad: &mut Self,
    ) -> SampleFrameTensor<T> {
        let rows = dy.rows();
        let h = dy.channels();
        let hn = T::of_usize(h);
        let mut dx = SampleFrameTensor::zeros(&[rows, h]);
        for i in 0..rows {
            let xh = cache.xhat.row(i);
            let g = dy.row(i);
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for k in 0..h {
                grad.gain.data_mut()[k] += g[k] * xh[k];
                grad.bias.data_mut()[k] += g[k];
                let d = g[k] * self.gain.data()[k];
                m1 += d;
                m2 += d * xh[k];
            }
            m1 /= hn;
            m2 /= hn;
            let is = cache.inv_std[i];
            for k in 0..h {
                let d = g[k] * self.gain.data()[k];
                dx.row_mut(i)[k] = is * (d - m1 - xh[k] * m2);
            }
        }
        dx
    }
}

impl<T: Real> Parameterized<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
