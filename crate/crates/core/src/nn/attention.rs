use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::activation::softmax;
use crate::nn::dropout::DropoutSpec;
use crate::nn::linear::LinearLayer;
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::real::Real;

/// Unmasked multi-head scaled dot-product self-attention over a `(time, H)` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub query: LinearLayer<T>,
    pub key: LinearLayer<T>,
    pub value: LinearLayer<T>,
    pub output: LinearLayer<T>,
    pub heads: usize,
    /// Dropout on the attention probabilities.
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    x: SampleFrameTensor<T>,
    q: SampleFrameTensor<T>,
    k: SampleFrameTensor<T>,
    v: SampleFrameTensor<T>,
    /// Softmax probabilities per head, each `t × t` row-major.
    probs: Vec<Vec<T>>,
    masks: Vec<Option<Vec<T>>>,
    concat: SampleFrameTensor<T>,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, heads: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: LinearLayer::new(width, width, rng),
            key: LinearLayer::new(width, width, rng),
            value: LinearLayer::new(width, width, rng),
            output: LinearLayer::new(width, width, rng),
            heads,
            dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.query.input_dim()
    }

    fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    fn check(&self, x: &SampleFrameTensor<T>) -> Result<()> {
        if self.heads == 0 || self.width() % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width(),
                self.heads
            )));
        }
        if x.channels() != self.width() {
            return Err(Error::dims(&[self.width()], &[x.channels()]));
        }
        Ok(())
    }

    fn head_probs(&self, q: &SampleFrameTensor<T>, k: &SampleFrameTensor<T>, head: usize) -> Vec<T> {
        let t = q.rows();
        let d = self.head_dim();
        let scale = T::one() / T::of_usize(d).sqrt();
        let off = head * d;
        let mut probs = Vec::with_capacity(t * t);
        let mut scores = vec![T::zero(); t];
        for i in 0..t {
            let qi = &q.row(i)[off..off + d];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k.row(j)[off..off + d];
                *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            probs.extend(softmax(&scores));
        }
        probs
    }

    /// Attention probabilities per head (each `t × t`, rows sum to one).
    pub fn attention_weights(&self, x: &SampleFrameTensor<T>) -> Result<Vec<Vec<T>>> {
        self.check(x)?;
        let q = self.query.forward_rows(x);
        let k = self.key.forward_rows(x);
        Ok((0..self.heads).map(|h| self.head_probs(&q, &k, h)).collect())
    }

    pub fn forward(&self, x: &SampleFrameTensor<T>, rng: Option<&mut NnRng>) -> Result<SampleFrameTensor<T>> {
        self.check(x)?;
        Ok(self.forward_cached(x, rng).0)
    }

    pub fn forward_cached(
        &self,
        x: &SampleFrameTensor<T>,
        mut rng: Option<&mut NnRng>,
    ) -> (SampleFrameTensor<T>, AttentionCache<T>) {
        let t = x.rows();
        let d = self.head_dim();
        let q = self.query.forward_rows(x);
        let k = self.key.forward_rows(x);
        let v = self.value.forward_rows(x);
        let drop = DropoutSpec::new(self.dropout);
        let mut concat = SampleFrameTensor::zeros(&[t, self.width()]);
        let mut probs = Vec::with_capacity(self.heads);
        let mut masks = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let p = self.head_probs(&q, &k, h);
            let mut pd = p.clone();
            let mask = drop.apply_opt(&mut pd, rng.as_deref_mut());
            let off = h * d;
            for i in 0..t {
                let out = &mut concat.row_mut(i)[off..off + d];
                for j in 0..t {
                    let a = pd[i * t + j];
                    if a == T::zero() {
                        continue;
                    }
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[off..off + d]) {
                        *o += a * vv;
                    }
                }
            }
            probs.push(p);
            masks.push(mask);
        }
        let y = self.output.forward_rows(&concat);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                masks,
                concat,
            },
        )
    }

    pub fn backward(&self, c: &AttentionCache<T>, dy: &SampleFrameTensor<T>, grad: &mut Self) -> SampleFrameTensor<T> {
        let t = c.x.rows();
        let d = self.head_dim();
        let w = self.width();
        let scale = T::one() / T::of_usize(d).sqrt();
        let dconcat = self.output.backward_rows(&c.concat, dy, &mut grad.output);
        let mut dq = SampleFrameTensor::zeros(&[t, w]);
        let mut dk = SampleFrameTensor::zeros(&[t, w]);
        let mut dv = SampleFrameTensor::zeros(&[t, w]);
        for h in 0..self.heads {
            let off = h * d;
            let p = &c.probs[h];
            let mask = &c.masks[h];
            let eff = |i: usize, j: usize| match mask {
                Some(m) => p[i * t + j] * m[i * t + j],
                None => p[i * t + j],
            };
            // dA' = dO Vᵀ, dV = A'ᵀ dO
            let mut da = vec![T::zero(); t * t];
            for i in 0..t {
                let doi = &dconcat.row(i)[off..off + d];
                for j in 0..t {
                    let vj = &c.v.row(j)[off..off + d];
                    da[i * t + j] = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    let a = eff(i, j);
                    if a != T::zero() {
                        let dvj = &mut dv.row_mut(j)[off..off + d];
                        for (g, &o) in dvj.iter_mut().zip(doi) {
                            *g += a * o;
                        }
                    }
                }
            }
            if let Some(m) = mask {
                for (g, &k) in da.iter_mut().zip(m) {
                    *g *= k;
                }
            }
            for i in 0..t {
                let row = &p[i * t..(i + 1) * t];
                let dot: T = row.iter().zip(&da[i * t..(i + 1) * t]).map(|(&a, &b)| a * b).sum();
                for j in 0..t {
                    let ds = row[j] * (da[i * t + j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let (qi, kj) = (c.q.row(i)[off..off + d].to_vec(), c.k.row(j)[off..off + d].to_vec());
                    for (g, &kv) in dq.row_mut(i)[off..off + d].iter_mut().zip(&kj) {
                        *g += ds * kv;
                    }
                    for (g, &qv) in dk.row_mut(j)[off..off + d].iter_mut().zip(&qi) {
                        *g += ds * qv;
                    }
                }
            }
        }
        let mut dx = self.query.backward_rows(&c.x, &dq, &mut grad.query);
        dx.add_assign(&self.key.backward_rows(&c.x, &dk, &mut grad.key));
        dx.add_assign(&self.value.backward_rows(&c.x, &dv, &mut grad.value));
        dx
    }
}

impl<T: Real> Parameterized<T> for MultiHeadAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Self-attention over every batch entry of a `(batch, time, H)` tensor.
pub fn mha_forward<T: Real>(
    layer: &MultiHeadAttention<T>,
    x: &SampleFrameTensor<T>,
    mut rng: Option<&mut NnRng>,
) -> Result<SampleFrameTensor<T>> {
    let (b, t, c) = x.dims3();
    layer.check(x)?;
    let mut out = Vec::with_capacity(b * t * c);
    for bi in 0..b {
        let xb = SampleFrameTensor::new(&[t, c], x.data()[bi * t * c..(bi + 1) * t * c].to_vec())?;
        out.extend_from_slice(layer.forward(&xb, rng.as_deref_mut())?.data());
    }
    SampleFrameTensor::new(&[b, t, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> NnRng {
        NnRng::seed_from_u64(seed)
    }

    #[test]
    fn rejects_indivisible_width() {
        assert!(MultiHeadAttention::<f64>::new(6, 4, 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn single_position_returns_projected_value() {
        let mha = MultiHeadAttention::<f64>::new(4, 2, 0.0, &mut rng(1)).unwrap();
        let x = SampleFrameTensor::new(&[1, 4], vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let w = mha.attention_weights(&x).unwrap();
        assert!(w.iter().all(|h| h == &vec![1.0]));
        let v = mha.value.forward_rows(&x);
        let expect = mha.output.forward_rows(&v);
        let y = mha.forward(&x, None).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn zero_query_key_gives_mean_of_values() {
        let mut mha = MultiHeadAttention::<f64>::new(4, 2, 0.0, &mut rng(2)).unwrap();
        mha.query = LinearLayer::zeros(4, 4);
        mha.key = LinearLayer::zeros(4, 4);
        let mut r = rng(3);
        let x = SampleFrameTensor::<f64>::glorot(&[5, 4], 1, 1, &mut r);
        let v = mha.value.forward_rows(&x);
        let mut mean = vec![0.0; 4];
        for i in 0..5 {
            for k in 0..4 {
                mean[k] += v.row(i)[k] / 5.0;
            }
        }
        let expect_row = mha.output.forward_vec(&mean);
        let y = mha.forward(&x, None).unwrap();
        for i in 0..5 {
            for k in 0..4 {
                assert!((y.row(i)[k] - expect_row[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_position_single_head_hand_oracle() {
        // identity projections, H = 2, one head: out = softmax(X Xᵀ / √2) X
        let eye = |n| {
            let mut l = LinearLayer::<f64>::zeros(n, n);
            for i in 0..n {
                l.w.data_mut()[i * n + i] = 1.0;
            }
            l
        };
        let mha = MultiHeadAttention {
            query: eye(2),
            key: eye(2),
            value: eye(2),
            output: eye(2),
            heads: 1,
            dropout: 0.0,
        };
        let x = SampleFrameTensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        // scores row0: [1, 0]/√2, row1: [0, 4]/√2
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p0 = 1.0 / (1.0 + (-s).exp());
        let p1 = 1.0 / (1.0 + (-4.0 * s).exp());
        let expect = [p0, 2.0 * (1.0 - p0), 1.0 - p1, 2.0 * p1];
        let y = mha.forward(&x, None).unwrap();
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng(4);
        let mha = MultiHeadAttention::<f64>::new(8, 4, 0.0, &mut r).unwrap();
        let x = SampleFrameTensor::<f64>::glorot(&[9, 8], 1, 1, &mut r).map(|v| v * 30.0);
        for head in mha.attention_weights(&x).unwrap() {
            for row in head.chunks(9) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
