//! Three-tier hierarchical autoregressive vocoder.
//!
//! * top tier: every `frame_top` samples, the previous `frame_top` sample
//!   values pass through a strided convolution, the aligned acoustic frame
//!   through a width-1 conditioner convolution; the sum drives two GRU layers
//!   whose output is upsampled into `frame_top / frame_mid` vectors.
//! * mid tier: every `frame_mid` samples, the previous `frame_mid` values pass
//!   through a strided convolution and are added to the top-tier vector for
//!   this position; two GRU layers follow and their output is upsampled into
//!   one vector per sample.
//! * sample tier: an MLP with one ReLU hidden layer reads the previous
//!   `frame_mid` sample values and the per-sample vector and emits `Q` logits.
//!
//! Sample values fed back into the network are bin centres of the μ-law
//! classes, i.e. values in the companded domain.

use rand::{Rng, SeedableRng};

use crate::codec::{dequantize_unchecked, expand, CodecConfig, Waveform};
use crate::corpus::{ACOUSTIC_DIM, FRAME_HOP};
use crate::error::{Error, Result};
use crate::nn::activation::{relu_in_place, softmax, xent_into, xent_loss};
use crate::nn::conv::{Conv1d, TransposedConv1d};
use crate::nn::linear::LinearLayer;
use crate::nn::params::{join, Parameterized};
use crate::nn::recurrent::{GruCell, GruSeqCache};
use crate::nn::tensor::{add_into, add_row_bias, col_sums_acc, gemm, Mat, MatMut, SampleFrameTensor};
use crate::nn::NnRng;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TierConfig {
    pub frame_top: usize,
    pub frame_mid: usize,
    pub hidden: usize,
    /// Width of the acoustic conditioning frames.
    pub cond_dim: usize,
    pub levels: usize,
    /// Companding constant of the sample codec.
    pub mu: f64,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            frame_top: 16,
            frame_mid: 4,
            hidden: 48,
            cond_dim: ACOUSTIC_DIM,
            levels: 256,
            mu: 255.0,
        }
    }
}

impl TierConfig {
    /// Full-scale three-tier layout: 80-sample top frames, 16-sample mid frames, 1024 units.
    pub fn reference() -> Self {
        Self {
            frame_top: 80,
            frame_mid: 16,
            hidden: 1024,
            cond_dim: ACOUSTIC_DIM,
            levels: 256,
            mu: 255.0,
        }
    }

    pub fn ratio(&self) -> usize {
        self.frame_top / self.frame_mid
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_mid == 0 || self.frame_top % self.frame_mid != 0 {
            return bad(format!(
                "top frame {} not divisible by mid frame {}",
                self.frame_top, self.frame_mid
            ));
        }
        if self.ratio() < 2 {
            return bad(format!("upsampling ratio {} must be at least 2", self.ratio()));
        }
        if FRAME_HOP % self.frame_top != 0 {
            return bad(format!(
                "top frame {} must divide the {FRAME_HOP}-sample hop",
                self.frame_top
            ));
        }
        if self.hidden == 0 || self.cond_dim == 0 || self.levels < 2 {
            return bad("hidden, cond_dim and levels must be positive".into());
        }
        self.codec().validate()
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            mu: self.mu,
            levels: self.levels,
            bits: self.levels.trailing_zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocoderModel<T> {
    pub cfg: TierConfig,
    pub top_input: Conv1d<T>,
    pub top_cond: Conv1d<T>,
    pub top_rnn: [GruCell<T>; 2],
    pub top_up: TransposedConv1d<T>,
    pub mid_input: Conv1d<T>,
    pub mid_rnn: [GruCell<T>; 2],
    pub mid_up: TransposedConv1d<T>,
    pub sample_hidden: LinearLayer<T>,
    pub sample_out: LinearLayer<T>,
}

/// Recurrent state carried between frames, windows or generation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct VocoderState<T> {
    pub top_h: [Vec<T>; 2],
    pub mid_h: [Vec<T>; 2],
    /// The last `frame_top` sample values, oldest first.
    pub history: Vec<T>,
}

/// Counts of tier evaluations during generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub top_steps: usize,
    pub mid_steps: usize,
    pub sample_steps: usize,
    pub cond_frames_used: usize,
}

impl<T: Real> VocoderModel<T> {
    pub fn new(cfg: TierConfig, rng: &mut NnRng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        Ok(Self {
            cfg,
            top_input: Conv1d::new(1, h, cfg.frame_top, cfg.frame_top, rng),
            top_cond: Conv1d::new(cfg.cond_dim, h, 1, 1, rng),
            top_rnn: [GruCell::new(h, h, rng), GruCell::new(h, h, rng)],
            top_up: TransposedConv1d::new(h, h, cfg.ratio(), rng),
            mid_input: Conv1d::new(1, h, cfg.frame_mid, cfg.frame_mid, rng),
            mid_rnn: [GruCell::new(h, h, rng), GruCell::new(h, h, rng)],
            mid_up: TransposedConv1d::new(h, h, cfg.frame_mid, rng),
            sample_hidden: LinearLayer::new(cfg.frame_mid + h, h, rng),
            sample_out: LinearLayer::new(h, cfg.levels, rng),
        })
    }

    pub fn zeros(cfg: TierConfig) -> Result<Self> {
        let mut m = Self::new(cfg, &mut NnRng::seed_from_u64(0))?;
        m.visit_mut("", &mut |_, t| t.fill(T::zero()));
        Ok(m)
    }

    pub fn initial_state(&self) -> VocoderState<T> {
        let h = self.cfg.hidden;
        let silence = dequantize_unchecked(self.cfg.levels / 2, &self.cfg.codec());
        VocoderState {
            top_h: [vec![T::zero(); h], vec![T::zero(); h]],
            mid_h: [vec![T::zero(); h], vec![T::zero(); h]],
            history: vec![silence; self.cfg.frame_top],
        }
    }

    fn class_value(&self, class: usize) -> T {
        dequantize_unchecked(class, &self.cfg.codec())
    }

    fn check_cond(&self, cond: &[T]) -> Result<()> {
        if cond.len() != self.cfg.cond_dim {
            return Err(Error::dims(&[self.cfg.cond_dim], &[cond.len()]));
        }
        Ok(())
    }

    fn top_preact(&self, frame: &[T], cond: &[T]) -> Vec<T> {
        let h = self.cfg.hidden;
        let mut a = vec![T::zero(); h];
        self.top_input.forward_seq(frame, self.cfg.frame_top, &mut a);
        let mut c = vec![T::zero(); h];
        self.top_cond.forward_seq(cond, 1, &mut c);
        add_into(&mut a, &c);
        a
    }

    /// Advances the top tier by one frame and returns `ratio` conditioning
    /// vectors for the mid tier, row-major `(ratio, hidden)`.
    pub fn top_tier_forward(&self, frame: &[T], cond: &[T], state: &mut VocoderState<T>) -> Result<Vec<T>> {
        if frame.len() != self.cfg.frame_top {
            return Err(Error::dims(&[self.cfg.frame_top], &[frame.len()]));
        }
        self.check_cond(cond)?;
        let a = self.top_preact(frame, cond);
        state.top_h[0] = self.top_rnn[0].step_unchecked(&a, &state.top_h[0]);
        state.top_h[1] = self.top_rnn[1].step_unchecked(&state.top_h[0], &state.top_h[1]);
        let mut out = vec![T::zero(); self.cfg.ratio() * self.cfg.hidden];
        self.top_up.forward_step(&state.top_h[1], &mut out);
        Ok(out)
    }

    /// Advances the mid tier by one frame; returns one vector per sample,
    /// row-major `(frame_mid, hidden)`.
    pub fn mid_tier_forward(&self, frame: &[T], top_cond: &[T], state: &mut VocoderState<T>) -> Result<Vec<T>> {
        if frame.len() != self.cfg.frame_mid || top_cond.len() != self.cfg.hidden {
            return Err(Error::dims(
                &[self.cfg.frame_mid, self.cfg.hidden],
                &[frame.len(), top_cond.len()],
            ));
        }
        let mut a = top_cond.to_vec();
        let mut x = vec![T::zero(); self.cfg.hidden];
        self.mid_input.forward_seq(frame, self.cfg.frame_mid, &mut x);
        for (p, q) in a.iter_mut().zip(x) {
            *p += q;
        }
        state.mid_h[0] = self.mid_rnn[0].step_unchecked(&a, &state.mid_h[0]);
        state.mid_h[1] = self.mid_rnn[1].step_unchecked(&state.mid_h[0], &state.mid_h[1]);
        let mut out = vec![T::zero(); self.cfg.frame_mid * self.cfg.hidden];
        self.mid_up.forward_step(&state.mid_h[1], &mut out);
        Ok(out)
    }

    fn sample_input(&self, prev: &[T], cond: &[T]) -> Vec<T> {
        let mut x = Vec::with_capacity(prev.len() + cond.len());
        x.extend_from_slice(prev);
        x.extend_from_slice(cond);
        x
    }

    /// Logits over the `Q` sample classes.
    pub fn sample_tier_forward(&self, prev: &[T], cond: &[T]) -> Result<Vec<T>> {
        if prev.len() != self.cfg.frame_mid || cond.len() != self.cfg.hidden {
            return Err(Error::dims(
                &[self.cfg.frame_mid, self.cfg.hidden],
                &[prev.len(), cond.len()],
            ));
        }
        Ok(self.sample_logits(&self.sample_input(prev, cond)))
    }

    fn sample_logits(&self, x: &[T]) -> Vec<T> {
        let mut hid = self.sample_hidden.forward_vec(x);
        relu_in_place(&mut hid);
        self.sample_out.forward_vec(&hid)
    }

    fn check_window(&self, classes: &[usize], conds: &SampleFrameTensor<T>) -> Result<()> {
        if classes.len() < self.cfg.frame_top {
            return Err(Error::Invalid(format!(
                "sequence of {} samples is shorter than one {}-sample frame",
                classes.len(),
                self.cfg.frame_top
            )));
        }
        if conds.channels() != self.cfg.cond_dim {
            return Err(Error::dims(&[self.cfg.cond_dim], &[conds.channels()]));
        }
        let needed = classes.len().div_ceil(FRAME_HOP);
        if conds.rows() < needed {
            return Err(Error::Invalid(format!(
                "{} conditioning frames cannot cover {} samples",
                conds.rows(),
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.cfg.levels) {
            return Err(Error::Domain(format!("class {c} outside [0, {})", self.cfg.levels)));
        }
        Ok(())
    }

    /// Sample values for a window, prefixed with the history buffer.
    fn window_values(&self, classes: &[usize], state: &VocoderState<T>) -> Vec<T> {
        let mut v = state.history.clone();
        v.extend(classes.iter().map(|&c| self.class_value(c)));
        v
    }

    fn carry_history(&self, values: &[T], state: &mut VocoderState<T>) {
        let ft = self.cfg.frame_top;
        state.history.copy_from_slice(&values[values.len() - ft..]);
    }

    /// Teacher-forced logits for every sample of a window, threading `state`.
    /// Only whole top frames are processed.
    pub fn teacher_forced_logits(
        &self,
        classes: &[usize],
        conds: &SampleFrameTensor<T>,
        state: &mut VocoderState<T>,
    ) -> Result<Vec<Vec<T>>> {
        self.check_window(classes, conds)?;
        let mut out = Vec::with_capacity(classes.len());
        self.run_window(classes, conds, state, |_, logits| out.push(logits.to_vec()));
        Ok(out)
    }

    /// Sum of per-sample NLL (nats) over the whole top frames of a window and
    /// the number of samples scored.
    pub fn nll_sum(
        &self,
        classes: &[usize],
        conds: &SampleFrameTensor<T>,
        state: &mut VocoderState<T>,
    ) -> Result<(T, usize)> {
        self.check_window(classes, conds)?;
        let p = self.forward_window(classes, conds, state);
        let sum = p
            .logits
            .chunks_exact(self.cfg.levels)
            .zip(classes)
            .map(|(l, &c)| xent_loss(l, c))
            .sum();
        Ok((sum, p.n))
    }

    fn run_window(
        &self,
        classes: &[usize],
        conds: &SampleFrameTensor<T>,
        state: &mut VocoderState<T>,
        mut visit: impl FnMut(usize, &[T]),
    ) {
        let (ft, fm, h) = (self.cfg.frame_top, self.cfg.frame_mid, self.cfg.hidden);
        let n = classes.len() / ft * ft;
        let vals = self.window_values(&classes[..n], state);
        for k in 0..n / ft {
            let t0 = k * ft;
            let mid_conds = self
                .top_tier_forward(&vals[t0..t0 + ft], conds.row(t0 / FRAME_HOP), state)
                .expect("checked shapes");
            for j in 0..ft / fm {
                let m0 = t0 + j * fm;
                let sconds = self
                    .mid_tier_forward(&vals[ft + m0 - fm..ft + m0], &mid_conds[j * h..(j + 1) * h], state)
                    .expect("checked shapes");
                for s in 0..fm {
                    let t = m0 + s;
                    let x = self.sample_input(&vals[ft + t - fm..ft + t], &sconds[s * h..(s + 1) * h]);
                    visit(t, &self.sample_logits(&x));
                }
            }
        }
        self.carry_history(&vals, state);
    }

    /// Batched teacher-forced forward over the whole top frames of a window.
    fn forward_window(
        &self,
        classes: &[usize],
        conds: &SampleFrameTensor<T>,
        state: &mut VocoderState<T>,
    ) -> WindowPass<T> {
        let (ft, fm, h, q) = (self.cfg.frame_top, self.cfg.frame_mid, self.cfg.hidden, self.cfg.levels);
        let n = classes.len() / ft * ft;
        let vals = self.window_values(&classes[..n], state);
        let (n_top, n_mid) = (n / ft, n / fm);
        let cd = self.cfg.cond_dim;

        let mut top_x = vec![T::zero(); n_top * cd];
        for (k, row) in top_x.chunks_exact_mut(cd).enumerate() {
            row.copy_from_slice(conds.row(k * ft / FRAME_HOP));
        }
        let mut a = vec![T::zero(); n_top * h];
        self.top_input.forward_frames(&vals[..n], &mut a);
        let mut c = vec![T::zero(); n_top * h];
        self.top_cond.forward_frames(&top_x, &mut c);
        add_into(&mut a, &c);
        let (t1, tc1) = self.top_rnn[0].forward_seq(&a, &state.top_h[0]);
        let (t2, tc2) = self.top_rnn[1].forward_seq(&t1, &state.top_h[1]);
        state.top_h = [last_row(&t1, h), last_row(&t2, h)];
        let mid_conds = self.top_up.forward_rows(&t2);

        let mut a = vec![T::zero(); n_mid * h];
        self.mid_input.forward_frames(&vals[ft - fm..ft - fm + n], &mut a);
        add_into(&mut a, &mid_conds);
        let (m1, mc1) = self.mid_rnn[0].forward_seq(&a, &state.mid_h[0]);
        let (m2, mc2) = self.mid_rnn[1].forward_seq(&m1, &state.mid_h[1]);
        state.mid_h = [last_row(&m1, h), last_row(&m2, h)];
        let sample_conds = self.mid_up.forward_rows(&m2);

        let xw = fm + h;
        let mut xs = vec![T::zero(); n * xw];
        for (t, row) in xs.chunks_exact_mut(xw).enumerate() {
            row[..fm].copy_from_slice(&vals[ft + t - fm..ft + t]);
            row[fm..].copy_from_slice(&sample_conds[t * h..(t + 1) * h]);
        }
        let mut hid = vec![T::zero(); n * h];
        add_row_bias(&mut hid, self.sample_hidden.b.data());
        gemm(
            Mat::new(&xs, n, xw),
            Mat::new(self.sample_hidden.w.data(), h, xw).t(),
            T::one(),
            MatMut::new(&mut hid, n, h),
        );
        relu_in_place(&mut hid);
        let mut logits = vec![T::zero(); n * q];
        add_row_bias(&mut logits, self.sample_out.b.data());
        gemm(
            Mat::new(&hid, n, h),
            Mat::new(self.sample_out.w.data(), q, h).t(),
            T::one(),
            MatMut::new(&mut logits, n, q),
        );

        self.carry_history(&vals, state);
        WindowPass {
            n,
            vals,
            top_x,
            top_cache: [tc1, tc2],
            top_out: t2,
            mid_cache: [mc1, mc2],
            mid_out: m2,
            xs,
            hid,
            logits,
        }
    }

    /// Teacher-forced forward and backward pass over one window.
    ///
    /// Accumulates `scale ·` ∂(Σ NLL)/∂θ into `grad` and returns the NLL sum,
    /// the number of scored samples and, if `want_cond_grad`, the gradient with
    /// respect to the conditioning frames (same shape as `conds`).
    pub fn forward_backward(
        &self,
        classes: &[usize],
        conds: &SampleFrameTensor<T>,
        state: &mut VocoderState<T>,
        grad: &mut Self,
        scale: T,
        want_cond_grad: bool,
    ) -> Result<(T, usize, Option<SampleFrameTensor<T>>)> {
        self.check_window(classes, conds)?;
        let p = self.forward_window(classes, conds, state);
        let (ft, fm, h, q) = (self.cfg.frame_top, self.cfg.frame_mid, self.cfg.hidden, self.cfg.levels);
        let (n, xw) = (p.n, fm + h);

        let mut dl = vec![T::zero(); n * q];
        let mut loss = T::zero();
        for (t, (lr, dr)) in p.logits.chunks_exact(q).zip(dl.chunks_exact_mut(q)).enumerate() {
            loss += xent_into(lr, classes[t], dr);
            dr.iter_mut().for_each(|v| *v *= scale);
        }
        let dl_m = Mat::new(&dl, n, q);
        gemm(
            dl_m.t(),
            Mat::new(&p.hid, n, h),
            T::one(),
            MatMut::new(grad.sample_out.w.data_mut(), q, h),
        );
        col_sums_acc(&dl, grad.sample_out.b.data_mut());
        let mut dhid = vec![T::zero(); n * h];
        gemm(
            dl_m,
            Mat::new(self.sample_out.w.data(), q, h),
            T::zero(),
            MatMut::new(&mut dhid, n, h),
        );
        for (d, &hv) in dhid.iter_mut().zip(&p.hid) {
            if hv <= T::zero() {
                *d = T::zero();
            }
        }
        let dh_m = Mat::new(&dhid, n, h);
        gemm(
            dh_m.t(),
            Mat::new(&p.xs, n, xw),
            T::one(),
            MatMut::new(grad.sample_hidden.w.data_mut(), h, xw),
        );
        col_sums_acc(&dhid, grad.sample_hidden.b.data_mut());
        let mut d_sample_conds = vec![T::zero(); n * h];
        let w1_cond = Mat::strided(&self.sample_hidden.w.data()[fm..], h, h, xw, 1);
        gemm(dh_m, w1_cond, T::zero(), MatMut::new(&mut d_sample_conds, n, h));

        let dm2 = self.mid_up.backward_rows(&p.mid_out, &d_sample_conds, &mut grad.mid_up);
        let (dm1, _) = self.mid_rnn[1].backward_seq(&p.mid_cache[1], &dm2, &mut grad.mid_rnn[1]);
        let (da_mid, _) = self.mid_rnn[0].backward_seq(&p.mid_cache[0], &dm1, &mut grad.mid_rnn[0]);
        self.mid_input
            .backward_frames(&p.vals[ft - fm..ft - fm + n], &da_mid, &mut grad.mid_input, None);

        let dt2 = self.top_up.backward_rows(&p.top_out, &da_mid, &mut grad.top_up);
        let (dt1, _) = self.top_rnn[1].backward_seq(&p.top_cache[1], &dt2, &mut grad.top_rnn[1]);
        let (da_top, _) = self.top_rnn[0].backward_seq(&p.top_cache[0], &dt1, &mut grad.top_rnn[0]);
        self.top_input
            .backward_frames(&p.vals[..n], &da_top, &mut grad.top_input, None);
        let d_conds = if want_cond_grad {
            let cd = self.cfg.cond_dim;
            let mut d_top_x = vec![T::zero(); p.top_x.len()];
            self.top_cond
                .backward_frames(&p.top_x, &da_top, &mut grad.top_cond, Some(&mut d_top_x));
            let mut dc = SampleFrameTensor::zeros(&[conds.rows(), conds.channels()]);
            for (k, row) in d_top_x.chunks_exact(cd).enumerate() {
                add_into(dc.row_mut(k * ft / FRAME_HOP), row);
            }
            Some(dc)
        } else {
            self.top_cond
                .backward_frames(&p.top_x, &da_top, &mut grad.top_cond, None);
            None
        };
        Ok((loss, n, d_conds))
    }

    /// Autoregressive sampling. `temperature == 0` decodes greedily.
    pub fn generate(
        &self,
        conds: &SampleFrameTensor<T>,
        n_samples: usize,
        rng: &mut NnRng,
        temperature: f64,
    ) -> Result<(Waveform<T>, GenerationStats)> {
        if conds.rows() == 0 {
            return Err(Error::Invalid("no conditioning frames".into()));
        }
        if conds.channels() != self.cfg.cond_dim {
            return Err(Error::dims(&[self.cfg.cond_dim], &[conds.channels()]));
        }
        if n_samples > conds.rows() * FRAME_HOP {
            return Err(Error::Invalid(format!(
                "{n_samples} samples need more than {} conditioning frames",
                conds.rows()
            )));
        }
        if !(temperature >= 0.0) {
            return Err(Error::Domain(format!("temperature {temperature} must be non-negative")));
        }
        let (ft, fm, h) = (self.cfg.frame_top, self.cfg.frame_mid, self.cfg.hidden);
        let codec = self.cfg.codec();
        let mut state = self.initial_state();
        let mut stats = GenerationStats::default();
        let mut mid_conds = Vec::new();
        let mut sample_conds = Vec::new();
        let mut last_cond_row = None;
        let mut out = Vec::with_capacity(n_samples);
        // history holds the last `frame_top` values; `recent` indexes into it
        let mut hist = state.history.clone();
        for t in 0..n_samples {
            if t % ft == 0 {
                let row = t / FRAME_HOP;
                if last_cond_row != Some(row) {
                    stats.cond_frames_used += 1;
                    last_cond_row = Some(row);
                }
                let frame = hist[hist.len() - ft..].to_vec();
                mid_conds = self.top_tier_forward(&frame, conds.row(row), &mut state)?;
                stats.top_steps += 1;
            }
            if t % fm == 0 {
                let j = (t % ft) / fm;
                let frame = hist[hist.len() - fm..].to_vec();
                sample_conds = self.mid_tier_forward(&frame, &mid_conds[j * h..(j + 1) * h], &mut state)?;
                stats.mid_steps += 1;
            }
            let s = t % fm;
            let logits = self.sample_tier_forward(&hist[hist.len() - fm..], &sample_conds[s * h..(s + 1) * h])?;
            stats.sample_steps += 1;
            let class = if temperature == 0.0 {
                argmax(&logits)
            } else {
                let scaled: Vec<T> = logits.iter().map(|&l| l / T::of(temperature)).collect();
                let p = softmax(&scaled);
                draw(&p, rng)
            };
            let y = dequantize_unchecked::<T>(class, &codec);
            out.push(expand(y, &codec)?);
            hist.push(y);
            if hist.len() > 4 * ft {
                hist.drain(..hist.len() - ft);
            }
        }
        Ok((Waveform::new(out, crate::corpus::synth::SAMPLE_RATE)?, stats))
    }
}

/// Activations of one batched window pass.
struct WindowPass<T> {
    n: usize,
    vals: Vec<T>,
    top_x: Vec<T>,
    top_cache: [GruSeqCache<T>; 2],
    top_out: Vec<T>,
    mid_cache: [GruSeqCache<T>; 2],
    mid_out: Vec<T>,
    xs: Vec<T>,
    hid: Vec<T>,
    logits: Vec<T>,
}

fn last_row<T: Real>(m: &[T], width: usize) -> Vec<T> {
    m[m.len() - width..].to_vec()
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn draw<T: Real>(p: &[T], rng: &mut NnRng) -> usize {
    let u = T::of(rng.random::<f64>());
    let mut acc = T::zero();
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl<T: Real> Parameterized<T> for VocoderModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.top_input.visit(&join(prefix, "top.input"), f);
        self.top_cond.visit(&join(prefix, "top.cond"), f);
        self.top_rnn[0].visit(&join(prefix, "top.rnn0"), f);
        self.top_rnn[1].visit(&join(prefix, "top.rnn1"), f);
        self.top_up.visit(&join(prefix, "top.up"), f);
        self.mid_input.visit(&join(prefix, "mid.input"), f);
        self.mid_rnn[0].visit(&join(prefix, "mid.rnn0"), f);
        self.mid_rnn[1].visit(&join(prefix, "mid.rnn1"), f);
        self.mid_up.visit(&join(prefix, "mid.up"), f);
        self.sample_hidden.visit(&join(prefix, "sample.hidden"), f);
        self.sample_out.visit(&join(prefix, "sample.out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.top_input.visit_mut(&join(prefix, "top.input"), f);
        self.top_cond.visit_mut(&join(prefix, "top.cond"), f);
        self.top_rnn[0].visit_mut(&join(prefix, "top.rnn0"), f);
        self.top_rnn[1].visit_mut(&join(prefix, "top.rnn1"), f);
        self.top_up.visit_mut(&join(prefix, "top.up"), f);
        self.mid_input.visit_mut(&join(prefix, "mid.input"), f);
        self.mid_rnn[0].visit_mut(&join(prefix, "mid.rnn0"), f);
        self.mid_rnn[1].visit_mut(&join(prefix, "mid.rnn1"), f);
        self.mid_up.visit_mut(&join(prefix, "mid.up"), f);
        self.sample_hidden.visit_mut(&join(prefix, "sample.hidden"), f);
        self.sample_out.visit_mut(&join(prefix, "sample.out"), f);
    }
}

/// Mean teacher-forced NLL (nats per sample) of one utterance, starting from
/// the initial state.
pub fn teacher_forced_nll<T: Real>(
    model: &VocoderModel<T>,
    classes: &[usize],
    conds: &SampleFrameTensor<T>,
) -> Result<T> {
    let mut state = model.initial_state();
    let (sum, n) = model.nll_sum(classes, conds, &mut state)?;
    Ok(sum / T::of_usize(n))
}

/// Same as [`teacher_forced_nll`] but evaluated in chunks of `chunk` samples
/// (a multiple of the top frame) with the state threaded between chunks.
pub fn teacher_forced_nll_chunked<T: Real>(
    model: &VocoderModel<T>,
    classes: &[usize],
    conds: &SampleFrameTensor<T>,
    chunk: usize,
) -> Result<T> {
    let ft = model.cfg.frame_top;
    if chunk == 0 || chunk % ft != 0 || chunk % FRAME_HOP != 0 {
        return Err(Error::Invalid(format!(
            "chunk {chunk} must be a positive multiple of {ft} and {FRAME_HOP}"
        )));
    }
    let mut state = model.initial_state();
    let n = classes.len() / ft * ft;
    let mut sum = T::zero();
    let mut count = 0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let rows = (start / FRAME_HOP)..end.div_ceil(FRAME_HOP);
        let sub = SampleFrameTensor::new(
            &[rows.len(), conds.channels()],
            conds.data()[rows.start * conds.channels()..rows.end * conds.channels()].to_vec(),
        )?;
        let (s, c) = model.nll_sum(&classes[start..end], &sub, &mut state)?;
        sum += s;
        count += c;
        start = end;
    }
    Ok(sum / T::of_usize(count))
}
