use rand::Rng;

use crate::nn::linear::LinearLayer;
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::SampleFrameTensor;
use crate::real::Real;

/// Position-wise `project(relu(expand(x)))`, width `H → d_ff → H`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardNet<T> {
    pub expand: LinearLayer<T>,
    pub project: LinearLayer<T>,
}

#[derive(Clone, Debug)]
pub struct FfnCache<T> {
    x: SampleFrameTensor<T>,
    pre: SampleFrameTensor<T>,
    hidden: SampleFrameTensor<T>,
}

impl<T: Real> FeedForwardNet<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            expand: LinearLayer::new(width, d_ff, rng),
            project: LinearLayer::new(d_ff, width, rng),
        }
    }

    pub fn forward_cached(&self, x: &SampleFrameTensor<T>) -> (SampleFrameTensor<T>, FfnCache<T>) {
        let pre = self.expand.forward_rows(x);
        let hidden = pre.map(|v| v.max(T::zero()));
        let y = self.project.forward_rows(&hidden);
        (
            y,
            FfnCache {
                x: x.clone(),
                pre,
                hidden,
            },
        )
    }

    pub fn forward(&self, x: &SampleFrameTensor<T>) -> SampleFrameTensor<T> {
        self.forward_cached(x).0
    }

    pub fn backward(&self, c: &FfnCache<T>, dy: &SampleFrameTensor<T>, grad: &mut Self) -> SampleFrameTensor<T> {
        let mut dh = self.project.backward_rows(&c.hidden, dy, &mut grad.project);
        for (g, &p) in dh.data_mut().iter_mut().zip(c.pre.data()) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        self.expand.backward_rows(&c.x, &dh, &mut grad.expand)
    }
}

impl<T: Real> Parameterized<T> for FeedForwardNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}
