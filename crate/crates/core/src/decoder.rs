//! Linguistic-to-acoustic decoders.
//!
//! Both map a `(T, L_in)` matrix of normalized linguistic frames to a
//! `(T, 43)` matrix of normalized acoustic frames.
//!
//! * [`RnnDecoder`]: ReLU embedding, an LSTM hidden layer, dropout and an LSTM
//!   output layer whose hidden state is the prediction. Runs one cell
//!   evaluation per frame.
//! * [`SaladDecoder`]: ReLU embedding plus sinusoidal position codes, a stack
//!   of pre-norm self-attention blocks and a linear output adapter. The whole
//!   window is one pass.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;

use crate::corpus::features::UV;
use crate::corpus::ACOUSTIC_DIM;
use crate::error::{Error, Result};
use crate::nn::block::{BlockCache, DecoderBlock};
use crate::nn::dropout::{mask_backward, DropoutSpec};
use crate::nn::linear::LinearLayer;
use crate::nn::params::{join, Parameterized};
use crate::nn::recurrent::{LstmCache, LstmCell};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Rnn,
    Salad,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Rnn => "rnn",
            Arch::Salad => "salad",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(Arch::Rnn),
            "salad" => Ok(Arch::Salad),
            other => Err(Error::Config(format!("unknown decoder arch '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub arch: Arch,
    pub input_dim: usize,
    /// Embedding width `H`; also the model width of the attention stack.
    pub embed: usize,
    /// LSTM hidden width (recurrent decoder only).
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub out_dim: usize,
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
    pub rnn_dropout: f64,
}

impl DecoderConfig {
    pub fn desk(arch: Arch, input_dim: usize) -> Self {
        Self {
            arch,
            input_dim,
            embed: 32,
            hidden: 48,
            blocks: 2,
            heads: 4,
            d_ff: 64,
            out_dim: ACOUSTIC_DIM,
            attn_dropout: 0.1,
            ffn_dropout: 0.5,
            rnn_dropout: 0.5,
        }
    }

    pub fn small_rnn(input_dim: usize) -> Self {
        Self {
            embed: 128,
            hidden: 450,
            ..Self::desk(Arch::Rnn, input_dim)
        }
    }

    pub fn big_rnn(input_dim: usize) -> Self {
        Self {
            embed: 512,
            hidden: 1300,
            ..Self::desk(Arch::Rnn, input_dim)
        }
    }

    pub fn small_salad(input_dim: usize) -> Self {
        Self {
            embed: 128,
            d_ff: 1024,
            heads: 8,
            blocks: 6,
            ..Self::desk(Arch::Salad, input_dim)
        }
    }

    pub fn big_salad(input_dim: usize) -> Self {
        Self {
            embed: 512,
            d_ff: 2048,
            heads: 8,
            blocks: 6,
            ..Self::desk(Arch::Salad, input_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.embed == 0 || self.out_dim == 0 {
            return bad("decoder dims must be positive");
        }
        for p in [self.attn_dropout, self.ffn_dropout, self.rnn_dropout] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout rates must lie in [0, 1)");
            }
        }
        match self.arch {
            Arch::Rnn if self.hidden == 0 => bad("rnn hidden width must be positive"),
            Arch::Salad if self.embed % 2 != 0 => bad("salad width must be even for position codes"),
            Arch::Salad if self.heads == 0 || self.embed % self.heads != 0 => {
                bad("salad width must be divisible by the head count")
            }
            Arch::Salad if self.blocks > 0 && self.d_ff == 0 => bad("salad d_ff must be positive"),
            _ => Ok(()),
        }
    }
}

/// Sinusoidal time stamp: `c[2i] = sin(t / 10000^(2i/H))`, `c[2i+1] = cos(…)`.
pub fn positional_code<T: Real>(t: usize, h: usize) -> Result<Vec<T>> {
    if h % 2 != 0 {
        return Err(Error::Invalid(format!("position code width {h} must be even")));
    }
    let mut c = Vec::with_capacity(h);
    for i in 0..h / 2 {
        let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / h as f64);
        c.push(T::of(angle.sin()));
        c.push(T::of(angle.cos()));
    }
    Ok(c)
}

/// Number of strictly sequential evaluations a decode needed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub sequential_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnDecoder<T> {
    pub embed: LinearLayer<T>,
    pub hidden: LstmCell<T>,
    pub output: LstmCell<T>,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnState<T> {
    pub h1: Vec<T>,
    pub c1: Vec<T>,
    pub h2: Vec<T>,
    pub c2: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct RnnCache<T> {
    x: SampleFrameTensor<T>,
    pre: Vec<Vec<T>>,
    hidden: Vec<LstmCache<T>>,
    masks: Vec<Option<Vec<T>>>,
    output: Vec<LstmCache<T>>,
}

impl<T: Real> RnnDecoder<T> {
    pub fn new(cfg: &DecoderConfig, rng: &mut NnRng) -> Self {
        Self {
            embed: LinearLayer::new(cfg.input_dim, cfg.embed, rng),
            hidden: LstmCell::new(cfg.embed, cfg.hidden, rng),
            output: LstmCell::new(cfg.hidden, cfg.out_dim, rng),
            dropout: cfg.rnn_dropout,
        }
    }

    pub fn initial_state(&self) -> RnnState<T> {
        let (h, o) = (self.hidden.hidden(), self.output.hidden());
        RnnState {
            h1: vec![T::zero(); h],
            c1: vec![T::zero(); h],
            h2: vec![T::zero(); o],
            c2: vec![T::zero(); o],
        }
    }

    pub fn forward_cached(
        &self,
        x: &SampleFrameTensor<T>,
        state: &mut RnnState<T>,
        mut rng: Option<&mut NnRng>,
    ) -> (SampleFrameTensor<T>, RnnCache<T>, DecodeStats) {
        let steps = x.rows();
        let o = self.output.hidden();
        let mut y = SampleFrameTensor::zeros(&[steps, o]);
        let mut cache = RnnCache {
            x: x.clone(),
            pre: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
            masks: Vec::with_capacity(steps),
            output: Vec::with_capacity(steps),
        };
        let drop = DropoutSpec::new(self.dropout);
        for t in 0..steps {
            let pre = self.embed.forward_vec(x.row(t));
            let e: Vec<T> = pre.iter().map(|v| v.max(T::zero())).collect();
            let (h1, c1, k1) = self.hidden.step_cached(&e, &state.h1, &state.c1);
            let mut m = h1.clone();
            let mask = drop.apply_opt(&mut m, rng.as_deref_mut());
            let (h2, c2, k2) = self.output.step_cached(&m, &state.h2, &state.c2);
            y.row_mut(t).copy_from_slice(&h2);
            *state = RnnState { h1, c1, h2, c2 };
            cache.pre.push(pre);
            cache.hidden.push(k1);
            cache.masks.push(mask);
            cache.output.push(k2);
        }
        (
            y,
            cache,
            DecodeStats {
                sequential_steps: steps,
            },
        )
    }

    pub fn backward(&self, c: &RnnCache<T>, dy: &SampleFrameTensor<T>, grad: &mut Self) -> SampleFrameTensor<T> {
        let (h, o) = (self.hidden.hidden(), self.output.hidden());
        let steps = dy.rows();
        let mut dx = SampleFrameTensor::zeros(&[steps, self.embed.input_dim()]);
        let (mut dh1, mut dc1) = (vec![T::zero(); h], vec![T::zero(); h]);
        let (mut dh2, mut dc2) = (vec![T::zero(); o], vec![T::zero(); o]);
        for t in (0..steps).rev() {
            for (a, &b) in dh2.iter_mut().zip(dy.row(t)) {
                *a += b;
            }
            let (mut dm, dh2p, dc2p) = self.output.backward_step(&c.output[t], &dh2, &dc2, &mut grad.output);
            mask_backward(&c.masks[t], &mut dm);
            for (a, b) in dh1.iter_mut().zip(dm) {
                *a += b;
            }
            let (mut de, dh1p, dc1p) = self.hidden.backward_step(&c.hidden[t], &dh1, &dc1, &mut grad.hidden);
            for (d, &p) in de.iter_mut().zip(&c.pre[t]) {
                if p <= T::zero() {
                    *d = T::zero();
                }
            }
            self.embed
                .backward_vec(c.x.row(t), &de, &mut grad.embed, Some(dx.row_mut(t)));
            (dh1, dc1, dh2, dc2) = (dh1p, dc1p, dh2p, dc2p);
        }
        dx
    }
}

impl<T: Real> Parameterized<T> for RnnDecoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.embed.visit(&join(prefix, "embed"), f);
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaladDecoder<T> {
    pub embed: LinearLayer<T>,
    pub blocks: Vec<DecoderBlock<T>>,
    pub output: LinearLayer<T>,
    pub pos_dropout: f64,
}

#[derive(Clone, Debug)]
pub struct SaladCache<T> {
    x: SampleFrameTensor<T>,
    pre: SampleFrameTensor<T>,
    mask: Option<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
    top: SampleFrameTensor<T>,
}

impl<T: Real> SaladDecoder<T> {
    pub fn new(cfg: &DecoderConfig, rng: &mut NnRng) -> Result<Self> {
        let blocks = (0..cfg.blocks)
            .map(|_| DecoderBlock::new(cfg.embed, cfg.heads, cfg.d_ff, cfg.attn_dropout, cfg.ffn_dropout, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed: LinearLayer::new(cfg.input_dim, cfg.embed, rng),
            blocks,
            output: LinearLayer::new(cfg.embed, cfg.out_dim, rng),
            pos_dropout: cfg.ffn_dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.embed.output_dim()
    }

    pub fn forward_cached(
        &self,
        x: &SampleFrameTensor<T>,
        offset: usize,
        mut rng: Option<&mut NnRng>,
    ) -> (SampleFrameTensor<T>, SaladCache<T>, DecodeStats) {
        let h = self.width();
        let pre = self.embed.forward_rows(x);
        let mut z = pre.map(|v| v.max(T::zero()));
        for t in 0..z.rows() {
            let code = positional_code::<T>(offset + t, h).expect("width validated even");
            for (a, b) in z.row_mut(t).iter_mut().zip(code) {
                *a += b;
            }
        }
        let mask = DropoutSpec::new(self.pos_dropout).apply_opt(z.data_mut(), rng.as_deref_mut());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward_cached(&z, rng.as_deref_mut());
            caches.push(c);
            z = next;
        }
        let y = self.output.forward_rows(&z);
        let cache = SaladCache {
            x: x.clone(),
            pre,
            mask,
            blocks: caches,
            top: z,
        };
        (y, cache, DecodeStats { sequential_steps: 1 })
    }

    pub fn backward(&self, c: &SaladCache<T>, dy: &SampleFrameTensor<T>, grad: &mut Self) -> SampleFrameTensor<T> {
        let mut dz = self.output.backward_rows(&c.top, dy, &mut grad.output);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dz = b.backward(&c.blocks[i], &dz, &mut grad.blocks[i]);
        }
        mask_backward(&c.mask, dz.data_mut());
        for (d, &p) in dz.data_mut().iter_mut().zip(c.pre.data()) {
            if p <= T::zero() {
                *d = T::zero();
            }
        }
        self.embed.backward_rows(&c.x, &dz, &mut grad.embed)
    }
}

impl<T: Real> Parameterized<T> for SaladDecoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.embed.visit(&join(prefix, "embed"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Either decoder behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum AcousticDecoder<T> {
    Rnn(RnnDecoder<T>),
    Salad(SaladDecoder<T>),
}

/// State carried between consecutive windows of one stream.
#[derive(Clone, Debug, PartialEq)]
pub enum DecoderState<T> {
    Rnn(RnnState<T>),
    Salad { offset: usize },
}

#[derive(Clone, Debug)]
pub enum DecoderCache<T> {
    Rnn(RnnCache<T>),
    Salad(SaladCache<T>),
}

impl<T: Real> AcousticDecoder<T> {
    pub fn new(cfg: &DecoderConfig, rng: &mut NnRng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.arch {
            Arch::Rnn => AcousticDecoder::Rnn(RnnDecoder::new(cfg, rng)),
            Arch::Salad => AcousticDecoder::Salad(SaladDecoder::new(cfg, rng)?),
        })
    }

    pub fn zeros(cfg: &DecoderConfig) -> Result<Self> {
        let mut m = Self::new(cfg, &mut NnRng::seed_from_u64(0))?;
        m.visit_mut("", &mut |_, t| t.fill(T::zero()));
        Ok(m)
    }

    pub fn arch(&self) -> Arch {
        match self {
            AcousticDecoder::Rnn(_) => Arch::Rnn,
            AcousticDecoder::Salad(_) => Arch::Salad,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AcousticDecoder::Rnn(m) => m.embed.input_dim(),
            AcousticDecoder::Salad(m) => m.embed.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            AcousticDecoder::Rnn(m) => m.output.hidden(),
            AcousticDecoder::Salad(m) => m.output.output_dim(),
        }
    }

    pub fn initial_state(&self) -> DecoderState<T> {
        match self {
            AcousticDecoder::Rnn(m) => DecoderState::Rnn(m.initial_state()),
            AcousticDecoder::Salad(_) => DecoderState::Salad { offset: 0 },
        }
    }

    /// Decodes one window and advances `state` past it. Dropout is active
    /// only when `rng` is given.
    pub fn forward(
        &self,
        x: &SampleFrameTensor<T>,
        state: &mut DecoderState<T>,
        rng: Option<&mut NnRng>,
    ) -> Result<(SampleFrameTensor<T>, DecoderCache<T>, DecodeStats)> {
        if x.rank() != 2 || x.channels() != self.input_dim() {
            return Err(Error::dims(&[x.rows(), self.input_dim()], x.shape()));
        }
        match (self, state) {
            (AcousticDecoder::Rnn(m), DecoderState::Rnn(s)) => {
                let (y, c, st) = m.forward_cached(x, s, rng);
                Ok((y, DecoderCache::Rnn(c), st))
            }
            (AcousticDecoder::Salad(m), DecoderState::Salad { offset }) => {
                let (y, c, st) = m.forward_cached(x, *offset, rng);
                *offset += x.rows();
                Ok((y, DecoderCache::Salad(c), st))
            }
            _ => Err(Error::Invalid("decoder state does not match the architecture".into())),
        }
    }

    /// Accumulates parameter gradients for the window behind `cache` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        cache: &DecoderCache<T>,
        dy: &SampleFrameTensor<T>,
        grad: &mut Self,
    ) -> Result<SampleFrameTensor<T>> {
        match (self, cache, grad) {
            (AcousticDecoder::Rnn(m), DecoderCache::Rnn(c), AcousticDecoder::Rnn(g)) => Ok(m.backward(c, dy, g)),
            (AcousticDecoder::Salad(m), DecoderCache::Salad(c), AcousticDecoder::Salad(g)) => Ok(m.backward(c, dy, g)),
            _ => Err(Error::Invalid(
                "decoder, cache and gradient architectures differ".into(),
            )),
        }
    }

    /// Inference decode of a whole utterance from a fresh state.
    pub fn decode(&self, x: &SampleFrameTensor<T>) -> Result<(SampleFrameTensor<T>, DecodeStats)> {
        let mut state = self.initial_state();
        let (y, _, st) = self.forward(x, &mut state, None)?;
        Ok((y, st))
    }
}

impl<T: Real> Parameterized<T> for AcousticDecoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        match self {
            AcousticDecoder::Rnn(m) => m.visit(&join(prefix, "rnn"), f),
            AcousticDecoder::Salad(m) => m.visit(&join(prefix, "salad"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        match self {
            AcousticDecoder::Rnn(m) => m.visit_mut(&join(prefix, "rnn"), f),
            AcousticDecoder::Salad(m) => m.visit_mut(&join(prefix, "salad"), f),
        }
    }
}

/// UV decision on a normalized prediction; 0.5 counts as voiced.
pub fn binarize_uv<T: Real>(v: T) -> T {
    if v >= T::of(0.5) {
        T::one()
    } else {
        T::zero()
    }
}

/// Normalized acoustic predictions for one utterance's decoder input.
pub fn predict_features<T: Real>(
    decoder: &AcousticDecoder<T>,
    input: &SampleFrameTensor<T>,
    binarize: bool,
) -> Result<SampleFrameTensor<T>> {
    let (mut y, _) = decoder.decode(input)?;
    if binarize && y.channels() > UV {
        for t in 0..y.rows() {
            let r = y.row_mut(t);
            r[UV] = binarize_uv(r[UV]);
        }
    }
    Ok(y)
}

/// Mean squared error over every element and its gradient.
pub fn mse_loss<T: Real>(
    pred: &SampleFrameTensor<T>,
    target: &SampleFrameTensor<T>,
) -> Result<(T, SampleFrameTensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dims(target.shape(), pred.shape()));
    }
    let n = T::of_usize(pred.len().max(1));
    let mut grad = SampleFrameTensor::zeros(pred.shape());
    let mut loss = T::zero();
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - y;
        loss += d * d;
        *g = T::of(2.0) * d / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_code_closed_form() {
        let c0 = positional_code::<f64>(0, 6).unwrap();
        assert_eq!(c0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let c1 = positional_code::<f64>(1, 4).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in c1.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(positional_code::<f64>(3, 5).is_err());
    }

    #[test]
    fn full_size_presets_validate() {
        for cfg in [
            DecoderConfig::small_rnn(48),
            DecoderConfig::big_rnn(48),
            DecoderConfig::small_salad(48),
            DecoderConfig::big_salad(48),
            DecoderConfig::desk(Arch::Rnn, 48),
            DecoderConfig::desk(Arch::Salad, 48),
        ] {
            cfg.validate().unwrap();
        }
        assert!(DecoderConfig {
            embed: 30,
            ..DecoderConfig::desk(Arch::Salad, 48)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn uv_tie_is_voiced() {
        assert_eq!(binarize_uv(0.5f64), 1.0);
        assert_eq!(binarize_uv(0.499_999f64), 0.0);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let a = SampleFrameTensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
