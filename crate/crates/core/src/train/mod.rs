//! Training loops for the acoustic decoders and the vocoder.

pub mod batch;
pub mod optim;
pub mod schedule;

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;

use crate::corpus::synth::mix_seed;
use crate::corpus::{denormalize_acoustic, Corpus, Split, Utterance, ACOUSTIC_DIM, FRAME_HOP};
use crate::decoder::{mse_loss, AcousticDecoder, DecoderConfig, DecoderState};
use crate::error::{Error, Result};
use crate::eval::{frame_metrics, mcd, MetricsReport};
use crate::nn::params::Parameterized;
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::vocoder::{TierConfig, VocoderModel, VocoderState};

pub use batch::{make_batch_plan, BatchPlan};
pub use optim::{clip_grad_norm, OptimizerConfig, OptimizerKind, OptimizerState};
pub use schedule::{noam_lr, step_lr, LrSchedule, StepSchedule};

/// Per-epoch record: `epoch  split  metric  value`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    /// Every split whose data the run touched.
    pub splits_read: BTreeSet<Split>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl TrainHistory {
    fn push(&mut self, epoch: usize, split: Split, metric: &'static str, value: f64) {
        self.rows.push(HistoryRow {
            epoch,
            split,
            metric,
            value,
        });
    }

    pub fn series(&self, split: Split, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tsplit\tmetric\tvalue\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.epoch, r.split, r.metric, r.value);
        }
        s
    }
}

/// Patience-based stopping on a metric that should decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    /// Records one validation value; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.waited = 0;
            (true, false)
        } else {
            self.waited += 1;
            (false, self.waited >= self.patience)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lanes: usize,
    /// Window length in acoustic frames.
    pub window: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub clip_norm: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes == 0 || self.window == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "lanes, window, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Train-split frames concatenated in corpus order.
struct FrameStream {
    inputs: Vec<f64>,
    input_dim: usize,
    acoustic: Vec<f64>,
    classes: Vec<usize>,
    frames: usize,
}

impl FrameStream {
    fn build(corpus: &Corpus, codec: Option<&crate::codec::CodecConfig>) -> Result<Self> {
        let mut s = FrameStream {
            inputs: Vec::new(),
            input_dim: corpus.input_dim(),
            acoustic: Vec::new(),
            classes: Vec::new(),
            frames: 0,
        };
        for u in corpus.split(Split::Train) {
            s.inputs.extend_from_slice(corpus.decoder_input(u).data());
            s.acoustic.extend_from_slice(corpus.normalized_acoustic(u).data());
            if let Some(c) = codec {
                s.classes.extend(u.sample_classes(c)?);
            }
            s.frames += u.frames();
        }
        Ok(s)
    }

    fn inputs(&self, r: std::ops::Range<usize>) -> SampleFrameTensor<f64> {
        let l = self.input_dim;
        SampleFrameTensor::new(&[r.len(), l], self.inputs[r.start * l..r.end * l].to_vec()).expect("in range")
    }

    fn acoustic(&self, r: std::ops::Range<usize>) -> SampleFrameTensor<f64> {
        let d = ACOUSTIC_DIM;
        SampleFrameTensor::new(&[r.len(), d], self.acoustic[r.start * d..r.end * d].to_vec()).expect("in range")
    }

    fn classes(&self, r: std::ops::Range<usize>) -> &[usize] {
        &self.classes[r.start * FRAME_HOP..r.end * FRAME_HOP]
    }
}

/// Denormalized prediction and reference for one utterance.
pub fn decoded_pair(
    decoder: &AcousticDecoder<f64>,
    corpus: &Corpus,
    u: &Utterance,
) -> Result<(SampleFrameTensor<f64>, SampleFrameTensor<f64>)> {
    let (pred, _) = decoder.decode(&corpus.decoder_input(u))?;
    Ok((denormalize_acoustic(&pred, &corpus.stats)?, u.acoustic.clone()))
}

fn stack(rows: &mut Vec<f64>, t: &SampleFrameTensor<f64>) {
    rows.extend_from_slice(t.data());
}

/// MCD over all frames of a split, each utterance decoded from a fresh state.
pub fn decoder_mcd(decoder: &AcousticDecoder<f64>, corpus: &Corpus, split: Split) -> Result<f64> {
    let (mut p, mut r) = (Vec::new(), Vec::new());
    for u in corpus.split(split) {
        let (pred, reference) = decoded_pair(decoder, corpus, u)?;
        stack(&mut p, &pred);
        stack(&mut r, &reference);
    }
    let n = r.len() / ACOUSTIC_DIM;
    mcd(
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], r)?,
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], p)?,
    )
}

/// Frame metrics over a split (`nll` left at 0).
pub fn evaluate_decoder(decoder: &AcousticDecoder<f64>, corpus: &Corpus, split: Split) -> Result<MetricsReport> {
    let (mut p, mut r) = (Vec::new(), Vec::new());
    for u in corpus.split(split) {
        let (pred, reference) = decoded_pair(decoder, corpus, u)?;
        stack(&mut p, &pred);
        stack(&mut r, &reference);
    }
    let n = r.len() / ACOUSTIC_DIM;
    frame_metrics(
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], r)?,
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], p)?,
    )
}

/// MCD of predicting the normalized train-split mean frame everywhere.
pub fn mean_frame_mcd(corpus: &Corpus, split: Split) -> Result<f64> {
    let mean = corpus.mean_train_frame();
    let (mut p, mut r) = (Vec::new(), Vec::new());
    for u in corpus.split(split) {
        let rows: Vec<Vec<f64>> = vec![mean.clone(); u.frames()];
        let pred = denormalize_acoustic(&SampleFrameTensor::from_rows(&rows)?, &corpus.stats)?;
        stack(&mut p, &pred);
        stack(&mut r, &u.acoustic);
    }
    let n = r.len() / ACOUSTIC_DIM;
    mcd(
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], r)?,
        &SampleFrameTensor::new(&[n, ACOUSTIC_DIM], p)?,
    )
}

/// Stateful decoder training with validation-MCD early stopping. Returns the
/// parameters of the best validation epoch.
pub fn train_decoder(
    cfg: &DecoderConfig,
    tc: &TrainConfig,
    corpus: &Corpus,
) -> Result<(AcousticDecoder<f64>, TrainHistory)> {
    tc.validate()?;
    if cfg.input_dim != corpus.input_dim() {
        return Err(Error::Config(format!(
            "decoder input_dim {} but corpus frames have {}",
            cfg.input_dim,
            corpus.input_dim()
        )));
    }
    let stream = FrameStream::build(corpus, None)?;
    let plan = make_batch_plan(stream.frames, tc.lanes, tc.window)?;
    let mut model = AcousticDecoder::new(cfg, &mut NnRng::seed_from_u64(mix_seed(tc.seed, 0)))?;
    let mut drop_rng = NnRng::seed_from_u64(mix_seed(tc.seed, 1));
    let mut opt = OptimizerState::new(tc.optimizer, model.num_params());
    let mut history = TrainHistory::default();
    history.splits_read.extend([Split::Train, Split::Valid]);
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = model.clone();
    let mut step = 0u64;
    let scale = 1.0 / tc.lanes as f64;

    for epoch in 0..tc.max_epochs {
        let mut states: Vec<DecoderState<f64>> = (0..tc.lanes).map(|_| model.initial_state()).collect();
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for b in 0..plan.batches {
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;
            for (lane, state) in states.iter_mut().enumerate() {
                let r = plan.window_range(b, lane);
                let (y, cache, _) = model.forward(&stream.inputs(r.clone()), state, Some(&mut drop_rng))?;
                let (loss, mut dy) = mse_loss(&y, &stream.acoustic(r))?;
                dy.scale(scale);
                model.backward(&cache, &dy, &mut grad)?;
                batch_loss += loss * scale;
            }
            clip_grad_norm(&mut grad, tc.clip_norm);
            step += 1;
            lr = tc.schedule.lr(epoch, step)?;
            opt.step(&mut model, &grad, lr)?;
            epoch_loss += batch_loss;
        }
        if !model.all_finite() {
            return Err(Error::Invalid(format!("decoder diverged in epoch {epoch}")));
        }
        let val = decoder_mcd(&model, corpus, Split::Valid)?;
        history.push(epoch, Split::Train, "mse", epoch_loss / plan.batches as f64);
        history.push(epoch, Split::Valid, "mcd_db", val);
        history.push(epoch, Split::Train, "lr", lr);
        history.epochs_run = epoch + 1;
        let (improved, stop) = stopper.observe(epoch, val);
        if improved {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best, history))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingMode {
    /// Conditioned on ground-truth acoustic frames.
    Inv,
    /// Conditioned on a frozen decoder's predictions.
    Imnv,
    /// As `Imnv`, initialised from an `Inv` vocoder.
    ImnvPretrained,
    /// Vocoder and decoder fine-tuned together through the conditioning path.
    Jmnv,
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingMode::Inv => "inv",
            CouplingMode::Imnv => "imnv",
            CouplingMode::ImnvPretrained => "imnv_pretrained",
            CouplingMode::Jmnv => "jmnv",
        })
    }
}

impl FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inv" => Ok(CouplingMode::Inv),
            "imnv" => Ok(CouplingMode::Imnv),
            "imnv_pretrained" | "imnv-pretrained" => Ok(CouplingMode::ImnvPretrained),
            "jmnv" => Ok(CouplingMode::Jmnv),
            other => Err(Error::Config(format!("unknown coupling mode '{other}'"))),
        }
    }
}

/// Where the vocoder's conditioning frames come from.
#[derive(Clone, Copy, Debug)]
pub enum CondSource<'a> {
    GroundTruth,
    Decoder(&'a AcousticDecoder<f64>),
}

/// Normalized conditioning frames for one utterance.
pub fn conditioning(corpus: &Corpus, u: &Utterance, source: CondSource<'_>) -> Result<SampleFrameTensor<f64>> {
    match source {
        CondSource::GroundTruth => Ok(corpus.normalized_acoustic(u)),
        CondSource::Decoder(d) => Ok(d.decode(&corpus.decoder_input(u))?.0),
    }
}

/// Sample-weighted mean teacher-forced NLL over a split, each utterance from
/// a fresh state.
pub fn vocoder_nll(vocoder: &VocoderModel<f64>, corpus: &Corpus, split: Split, source: CondSource<'_>) -> Result<f64> {
    let codec = vocoder.cfg.codec();
    let (mut sum, mut n) = (0.0, 0usize);
    for u in corpus.split(split) {
        let conds = conditioning(corpus, u, source)?;
        let classes = u.sample_classes(&codec)?;
        let (s, c) = vocoder.nll_sum(&classes, &conds, &mut vocoder.initial_state())?;
        sum += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::Invalid(format!("split {split} has no samples")));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocoderTrainConfig {
    pub train: TrainConfig,
    /// Maps predicted conditioning `x ↦ 2x − 1` during IMNV training, a
    /// normalization mismatch between training and evaluation.
    pub fault_mismatched_norm: bool,
}

#[derive(Clone, Debug)]
pub struct VocoderTrainOutput {
    pub vocoder: VocoderModel<f64>,
    /// The fine-tuned decoder in joint mode.
    pub decoder: Option<AcousticDecoder<f64>>,
    pub history: TrainHistory,
}

/// Stateful TBPTT vocoder training under one coupling regime, with
/// validation-NLL early stopping.
pub fn train_vocoder(
    tier: TierConfig,
    vc: &VocoderTrainConfig,
    corpus: &Corpus,
    mode: CouplingMode,
    decoder: Option<&AcousticDecoder<f64>>,
    init: Option<&VocoderModel<f64>>,
) -> Result<VocoderTrainOutput> {
    let tc = &vc.train;
    tc.validate()?;
    tier.validate()?;
    let need = |what: &str| Error::Prerequisite(format!("mode {mode} needs {what}"));
    match mode {
        CouplingMode::Inv => {}
        CouplingMode::Imnv => {
            decoder.ok_or_else(|| need("a trained decoder"))?;
        }
        CouplingMode::ImnvPretrained | CouplingMode::Jmnv => {
            decoder.ok_or_else(|| need("a trained decoder"))?;
            init.ok_or_else(|| need("a vocoder checkpoint to start from"))?;
        }
    }
    if let Some(d) = decoder {
        if d.input_dim() != corpus.input_dim() {
            return Err(Error::Config("decoder input width does not match the corpus".into()));
        }
    }

    let codec = tier.codec();
    let stream = FrameStream::build(corpus, Some(&codec))?;
    let plan = make_batch_plan(stream.frames, tc.lanes, tc.window)?;
    let mut vocoder = match init {
        Some(v) => {
            if v.cfg != tier {
                return Err(Error::Config("initial vocoder has a different tier layout".into()));
            }
            v.clone()
        }
        None => VocoderModel::new(tier, &mut NnRng::seed_from_u64(mix_seed(tc.seed, 0)))?,
    };
    let mut joint = match mode {
        CouplingMode::Jmnv => decoder.cloned(),
        _ => None,
    };

    // Frozen-decoder regimes condition on predictions made once up front.
    let mut cond_stream = match mode {
        CouplingMode::Inv => stream.acoustic.clone(),
        CouplingMode::Imnv | CouplingMode::ImnvPretrained => {
            let d = decoder.expect("checked");
            let mut v = Vec::with_capacity(stream.acoustic.len());
            for u in corpus.split(Split::Train) {
                v.extend_from_slice(conditioning(corpus, u, CondSource::Decoder(d))?.data());
            }
            if vc.fault_mismatched_norm {
                v.iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
            }
            v
        }
        CouplingMode::Jmnv => Vec::new(),
    };
    let cond_window = |cs: &[f64], r: std::ops::Range<usize>| {
        SampleFrameTensor::new(
            &[r.len(), ACOUSTIC_DIM],
            cs[r.start * ACOUSTIC_DIM..r.end * ACOUSTIC_DIM].to_vec(),
        )
    };

    let mut vopt = OptimizerState::new(tc.optimizer, vocoder.num_params());
    let mut dopt = joint
        .as_ref()
        .map(|d| OptimizerState::new(tc.optimizer, d.num_params()));
    let mut history = TrainHistory::default();
    history.splits_read.extend([Split::Train, Split::Valid]);
    let mut stopper = EarlyStopping::new(tc.patience);
    let (mut best_v, mut best_d) = (vocoder.clone(), joint.clone());
    let mut step = 0u64;

    for epoch in 0..tc.max_epochs {
        let mut vstates: Vec<VocoderState<f64>> = (0..tc.lanes).map(|_| vocoder.initial_state()).collect();
        let mut dstates: Vec<Option<DecoderState<f64>>> = (0..tc.lanes)
            .map(|_| joint.as_ref().map(|d| d.initial_state()))
            .collect();
        let (mut epoch_sum, mut epoch_n) = (0.0, 0usize);
        let mut lr = 0.0;
        for b in 0..plan.batches {
            let mut vgrad = vocoder.zeros_like();
            let mut dgrad = joint.as_ref().map(|d| d.zeros_like());
            let scale = 1.0 / (tc.lanes * tc.window * FRAME_HOP) as f64;
            for lane in 0..tc.lanes {
                let r = plan.window_range(b, lane);
                let classes = stream.classes(r.clone());
                let (sum, n) = match (&joint, &mut dstates[lane]) {
                    (Some(d), Some(ds)) => {
                        let (conds, cache, _) = d.forward(&stream.inputs(r.clone()), ds, None)?;
                        let (sum, n, dc) =
                            vocoder.forward_backward(classes, &conds, &mut vstates[lane], &mut vgrad, scale, true)?;
                        d.backward(&cache, &dc.expect("requested"), dgrad.as_mut().expect("joint"))?;
                        (sum, n)
                    }
                    _ => {
                        let conds = cond_window(&cond_stream, r)?;
                        let (sum, n, _) =
                            vocoder.forward_backward(classes, &conds, &mut vstates[lane], &mut vgrad, scale, false)?;
                        (sum, n)
                    }
                };
                epoch_sum += sum;
                epoch_n += n;
            }
            step += 1;
            lr = tc.schedule.lr(epoch, step)?;
            clip_grad_norm(&mut vgrad, tc.clip_norm);
            vopt.step(&mut vocoder, &vgrad, lr)?;
            if let (Some(d), Some(g), Some(o)) = (joint.as_mut(), dgrad.as_mut(), dopt.as_mut()) {
                clip_grad_norm(g, tc.clip_norm);
                o.step(d, g, lr)?;
            }
        }
        if !vocoder.all_finite() || joint.as_ref().is_some_and(|d| !d.all_finite()) {
            return Err(Error::Invalid(format!("vocoder training diverged in epoch {epoch}")));
        }
        let source = match (&joint, mode) {
            (Some(d), _) => CondSource::Decoder(d),
            (None, CouplingMode::Inv) => CondSource::GroundTruth,
            (None, _) => CondSource::Decoder(decoder.expect("checked")),
        };
        let val = vocoder_nll(&vocoder, corpus, Split::Valid, source)?;
        history.push(epoch, Split::Train, "nll", epoch_sum / epoch_n.max(1) as f64);
        history.push(epoch, Split::Valid, "nll", val);
        history.push(epoch, Split::Train, "lr", lr);
        history.epochs_run = epoch + 1;
        let (improved, stop) = stopper.observe(epoch, val);
        if improved {
            best_v = vocoder.clone();
            best_d = joint.clone();
        }
        if stop {
            break;
        }
    }
    cond_stream.clear();
    history.best_epoch = stopper.best_epoch;
    Ok(VocoderTrainOutput {
        vocoder: best_v,
        decoder: best_d,
        history,
    })
}
