//! GRU and LSTM cells with hand-written backward passes.
//!
//! GRU, gate rows ordered `[r; z; n]`:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! LSTM, gate rows ordered `[i; f; g; o]`, one shared bias:
//!
//! ```text
//! c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)
//! h' = σ(o) ⊙ tanh(c')
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::{
    add_row_bias, col_sums_acc, gemm, matvec_acc, matvec_t_acc, outer_acc, Mat, MatMut, SampleFrameTensor,
};
use crate::real::{sigmoid, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell<T> {
    pub w_ih: SampleFrameTensor<T>,
    pub w_hh: SampleFrameTensor<T>,
    pub b_ih: SampleFrameTensor<T>,
    pub b_hh: SampleFrameTensor<T>,
}

/// Intermediate values of one GRU step needed by the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
}

/// Activations of a GRU run over a sequence, one row per step.
#[derive(Clone, Debug)]
pub struct GruSeqCache<T> {
    steps: usize,
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
}

impl<T: Real> GruCell<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: SampleFrameTensor::glorot(&[3 * hidden, input], input, hidden, rng),
            w_hh: SampleFrameTensor::glorot(&[3 * hidden, hidden], hidden, hidden, rng),
            b_ih: SampleFrameTensor::zeros(&[3 * hidden]),
            b_hh: SampleFrameTensor::zeros(&[3 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: SampleFrameTensor::zeros(&[3 * hidden, input]),
            w_hh: SampleFrameTensor::zeros(&[3 * hidden, hidden]),
            b_ih: SampleFrameTensor::zeros(&[3 * hidden]),
            b_hh: SampleFrameTensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn check(&self, x: &[T], h: &[T]) -> Result<()> {
        if x.len() != self.input_dim() || h.len() != self.hidden() {
            return Err(Error::dims(&[self.input_dim(), self.hidden()], &[x.len(), h.len()]));
        }
        Ok(())
    }

    fn gates(&self, x: &[T], h: &[T]) -> (Vec<T>, Vec<T>) {
        let mut gi = self.b_ih.data().to_vec();
        matvec_acc(self.w_ih.data(), self.input_dim(), x, &mut gi);
        let mut gh = self.b_hh.data().to_vec();
        matvec_acc(self.w_hh.data(), self.hidden(), h, &mut gh);
        (gi, gh)
    }

    pub fn step(&self, x: &[T], h: &[T]) -> Result<Vec<T>> {
        self.check(x, h)?;
        Ok(self.step_unchecked(x, h))
    }

    pub(crate) fn step_unchecked(&self, x: &[T], h: &[T]) -> Vec<T> {
        let hd = self.hidden();
        let (gi, gh) = self.gates(x, h);
        (0..hd)
            .map(|k| {
                let r = sigmoid(gi[k] + gh[k]);
                let z = sigmoid(gi[hd + k] + gh[hd + k]);
                let n = (gi[2 * hd + k] + r * gh[2 * hd + k]).tanh();
                (T::one() - z) * n + z * h[k]
            })
            .collect()
    }

    pub fn step_cached(&self, x: &[T], h: &[T]) -> (Vec<T>, GruCache<T>) {
        let hd = self.hidden();
        let (gi, gh) = self.gates(x, h);
        let mut c = GruCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            r: vec![T::zero(); hd],
            z: vec![T::zero(); hd],
            n: vec![T::zero(); hd],
            hn: gh[2 * hd..].to_vec(),
        };
        let mut out = vec![T::zero(); hd];
        for k in 0..hd {
            c.r[k] = sigmoid(gi[k] + gh[k]);
            c.z[k] = sigmoid(gi[hd + k] + gh[hd + k]);
            c.n[k] = (gi[2 * hd + k] + c.r[k] * c.hn[k]).tanh();
            out[k] = (T::one() - c.z[k]) * c.n[k] + c.z[k] * h[k];
        }
        (out, c)
    }

    /// Backward through one step. Returns `(dx, dh_prev)`.
    pub fn backward_step(&self, c: &GruCache<T>, dh: &[T], grad: &mut Self) -> (Vec<T>, Vec<T>) {
        let hd = self.hidden();
        let one = T::one();
        let mut dgi = vec![T::zero(); 3 * hd];
        let mut dgh = vec![T::zero(); 3 * hd];
        let mut dh_prev = vec![T::zero(); hd];
        for k in 0..hd {
            let (r, z, n) = (c.r[k], c.z[k], c.n[k]);
            let dn = dh[k] * (one - z);
            let dz = dh[k] * (c.h_prev[k] - n);
            dh_prev[k] = dh[k] * z;
            let dan = dn * (one - n * n);
            let dr = dan * c.hn[k];
            let dar = dr * r * (one - r);
            let daz = dz * z * (one - z);
            dgi[k] = dar;
            dgi[hd + k] = daz;
            dgi[2 * hd + k] = dan;
            dgh[k] = dar;
            dgh[hd + k] = daz;
            dgh[2 * hd + k] = dan * r;
        }
        outer_acc(grad.w_ih.data_mut(), self.input_dim(), &dgi, &c.x);
        outer_acc(grad.w_hh.data_mut(), hd, &dgh, &c.h_prev);
        for (g, &d) in grad.b_ih.data_mut().iter_mut().zip(&dgi) {
            *g += d;
        }
        for (g, &d) in grad.b_hh.data_mut().iter_mut().zip(&dgh) {
            *g += d;
        }
        let mut dx = vec![T::zero(); self.input_dim()];
        matvec_t_acc(self.w_ih.data(), self.input_dim(), &dgi, &mut dx);
        matvec_t_acc(self.w_hh.data(), hd, &dgh, &mut dh_prev);
        (dx, dh_prev)
    }
}

impl<T: Real> GruCell<T> {
    /// Runs `xs.len() / input_dim` steps from `h0`. Returns every hidden state, row-major.
    pub(crate) fn forward_seq(&self, xs: &[T], h0: &[T]) -> (Vec<T>, GruSeqCache<T>) {
        let (hd, nin) = (self.hidden(), self.input_dim());
        let m = xs.len() / nin;
        let mut gi = vec![T::zero(); m * 3 * hd];
        add_row_bias(&mut gi, self.b_ih.data());
        gemm(
            Mat::new(xs, m, nin),
            Mat::new(self.w_ih.data(), 3 * hd, nin).t(),
            T::one(),
            MatMut::new(&mut gi, m, 3 * hd),
        );
        let mut c = GruSeqCache {
            steps: m,
            x: xs.to_vec(),
            h_prev: vec![T::zero(); m * hd],
            r: vec![T::zero(); m * hd],
            z: vec![T::zero(); m * hd],
            n: vec![T::zero(); m * hd],
            hn: vec![T::zero(); m * hd],
        };
        let mut hs = vec![T::zero(); m * hd];
        let mut h = h0.to_vec();
        let mut gh = vec![T::zero(); 3 * hd];
        for t in 0..m {
            gh.copy_from_slice(self.b_hh.data());
            matvec_acc(self.w_hh.data(), hd, &h, &mut gh);
            let g = &gi[t * 3 * hd..(t + 1) * 3 * hd];
            let o = t * hd;
            c.h_prev[o..o + hd].copy_from_slice(&h);
            for k in 0..hd {
                let r = sigmoid(g[k] + gh[k]);
                let z = sigmoid(g[hd + k] + gh[hd + k]);
                let hn = gh[2 * hd + k];
                let n = (g[2 * hd + k] + r * hn).tanh();
                c.r[o + k] = r;
                c.z[o + k] = z;
                c.n[o + k] = n;
                c.hn[o + k] = hn;
                h[k] = (T::one() - z) * n + z * h[k];
            }
            hs[o..o + hd].copy_from_slice(&h);
        }
        (hs, c)
    }

    /// Backward through a whole sequence given the gradient on every output.
    /// Returns `(dxs, dh0)`.
    pub(crate) fn backward_seq(&self, c: &GruSeqCache<T>, dhs: &[T], grad: &mut Self) -> (Vec<T>, Vec<T>) {
        let (hd, nin, m) = (self.hidden(), self.input_dim(), c.steps);
        let one = T::one();
        let mut dgi = vec![T::zero(); m * 3 * hd];
        let mut dgh = vec![T::zero(); m * 3 * hd];
        let mut dnext = vec![T::zero(); hd];
        for t in (0..m).rev() {
            let o = t * hd;
            let gi = &mut dgi[t * 3 * hd..(t + 1) * 3 * hd];
            let gh = &mut dgh[t * 3 * hd..(t + 1) * 3 * hd];
            for k in 0..hd {
                let (r, z, n) = (c.r[o + k], c.z[o + k], c.n[o + k]);
                let dh = dhs[o + k] + dnext[k];
                let dn = dh * (one - z);
                let dz = dh * (c.h_prev[o + k] - n);
                dnext[k] = dh * z;
                let dan = dn * (one - n * n);
                let dar = dan * c.hn[o + k] * r * (one - r);
                let daz = dz * z * (one - z);
                gi[k] = dar;
                gi[hd + k] = daz;
                gi[2 * hd + k] = dan;
                gh[k] = dar;
                gh[hd + k] = daz;
                gh[2 * hd + k] = dan * r;
            }
            matvec_t_acc(self.w_hh.data(), hd, gh, &mut dnext);
        }
        let g3 = 3 * hd;
        gemm(
            Mat::new(&dgi, m, g3).t(),
            Mat::new(&c.x, m, nin),
            one,
            MatMut::new(grad.w_ih.data_mut(), g3, nin),
        );
        gemm(
            Mat::new(&dgh, m, g3).t(),
            Mat::new(&c.h_prev, m, hd),
            one,
            MatMut::new(grad.w_hh.data_mut(), g3, hd),
        );
        col_sums_acc(&dgi, grad.b_ih.data_mut());
        col_sums_acc(&dgh, grad.b_hh.data_mut());
        let mut dxs = vec![T::zero(); m * nin];
        gemm(
            Mat::new(&dgi, m, g3),
            Mat::new(self.w_ih.data(), g3, nin),
            T::zero(),
            MatMut::new(&mut dxs, m, nin),
        );
        (dxs, dnext)
    }
}

impl<T: Real> Parameterized<T> for GruCell<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "b_ih"), &self.b_ih);
        f(&join(prefix, "b_hh"), &self.b_hh);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "b_ih"), &mut self.b_ih);
        f(&join(prefix, "b_hh"), &mut self.b_hh);
    }
}

/// `gru_step` as a free function.
pub fn gru_step<T: Real>(cell: &GruCell<T>, x: &[T], h_prev: &[T]) -> Result<Vec<T>> {
    cell.step(x, h_prev)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<T> {
    pub w_ih: SampleFrameTensor<T>,
    pub w_hh: SampleFrameTensor<T>,
    pub b: SampleFrameTensor<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    tc: Vec<T>,
}

impl<T: Real> LstmCell<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: SampleFrameTensor::glorot(&[4 * hidden, input], input, hidden, rng),
            w_hh: SampleFrameTensor::glorot(&[4 * hidden, hidden], hidden, hidden, rng),
            b: SampleFrameTensor::zeros(&[4 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: SampleFrameTensor::zeros(&[4 * hidden, input]),
            w_hh: SampleFrameTensor::zeros(&[4 * hidden, hidden]),
            b: SampleFrameTensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn preact(&self, x: &[T], h: &[T]) -> Vec<T> {
        let mut a = self.b.data().to_vec();
        matvec_acc(self.w_ih.data(), self.input_dim(), x, &mut a);
        matvec_acc(self.w_hh.data(), self.hidden(), h, &mut a);
        a
    }

    pub fn step(&self, x: &[T], h: &[T], c: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let hd = self.hidden();
        if x.len() != self.input_dim() || h.len() != hd || c.len() != hd {
            return Err(Error::dims(&[self.input_dim(), hd, hd], &[x.len(), h.len(), c.len()]));
        }
        let (h2, c2, _) = self.step_cached(x, h, c);
        Ok((h2, c2))
    }

    pub(crate) fn step_unchecked(&self, x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>) {
        let hd = self.hidden();
        let a = self.preact(x, h);
        let mut h2 = vec![T::zero(); hd];
        let mut c2 = vec![T::zero(); hd];
        for k in 0..hd {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[hd + k]);
            let g = a[2 * hd + k].tanh();
            let o = sigmoid(a[3 * hd + k]);
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    pub fn step_cached(&self, x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>, LstmCache<T>) {
        let hd = self.hidden();
        let a = self.preact(x, h);
        let mut cache = LstmCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            i: vec![T::zero(); hd],
            f: vec![T::zero(); hd],
            g: vec![T::zero(); hd],
            o: vec![T::zero(); hd],
            tc: vec![T::zero(); hd],
        };
        let mut h2 = vec![T::zero(); hd];
        let mut c2 = vec![T::zero(); hd];
        for k in 0..hd {
            cache.i[k] = sigmoid(a[k]);
            cache.f[k] = sigmoid(a[hd + k]);
            cache.g[k] = a[2 * hd + k].tanh();
            cache.o[k] = sigmoid(a[3 * hd + k]);
            c2[k] = cache.f[k] * c[k] + cache.i[k] * cache.g[k];
            cache.tc[k] = c2[k].tanh();
            h2[k] = cache.o[k] * cache.tc[k];
        }
        (h2, c2, cache)
    }

    /// Backward through one step given gradients on `h'` and `c'`.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &self,
        cache: &LstmCache<T>,
        dh: &[T],
        dc_next: &[T],
        grad: &mut Self,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hd = self.hidden();
        let one = T::one();
        let mut da = vec![T::zero(); 4 * hd];
        let mut dc_prev = vec![T::zero(); hd];
        for k in 0..hd {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tc[k]);
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (one - tc * tc);
            dc_prev[k] = dc * f;
            da[k] = dc * g * i * (one - i);
            da[hd + k] = dc * cache.c_prev[k] * f * (one - f);
            da[2 * hd + k] = dc * i * (one - g * g);
            da[3 * hd + k] = d_o * o * (one - o);
        }
        outer_acc(grad.w_ih.data_mut(), self.input_dim(), &da, &cache.x);
        outer_acc(grad.w_hh.data_mut(), hd, &da, &cache.h_prev);
        for (gb, &d) in grad.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        let mut dx = vec![T::zero(); self.input_dim()];
        matvec_t_acc(self.w_ih.data(), self.input_dim(), &da, &mut dx);
        let mut dh_prev = vec![T::zero(); hd];
        matvec_t_acc(self.w_hh.data(), hd, &da, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

impl<T: Real> Parameterized<T> for LstmCell<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub fn lstm_step<T: Real>(cell: &LstmCell<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    cell.step(x, h_prev, c_prev)
}
