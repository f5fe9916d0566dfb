//! Feature representations, the synthetic corpus and its on-disk layout.

pub mod features;
pub mod io;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use crate::codec::{Codec, CodecConfig};
use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;

pub use features::{
    denormalize_acoustic, interpolate_log_f0, make_uv_flag, normalize_acoustic, replicate_labels, AcousticFrame,
    LinguisticFrame, NormStats, ACOUSTIC_DIM, FRAME_HOP, UNVOICED_SENTINEL,
};
pub use synth::{generate_corpus, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// One utterance: waveform, per-frame raw acoustic features `(frames, 43)` and
/// replicated linguistic features `(frames, L + 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    pub waveform: crate::codec::Waveform<f64>,
    pub acoustic: SampleFrameTensor<f64>,
    pub linguistic: SampleFrameTensor<f64>,
    pub phones: Vec<(usize, usize)>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.acoustic.rows()
    }

    /// Waveform samples covered by whole frames.
    pub fn aligned_samples(&self) -> &[f64] {
        let n = (self.frames() * FRAME_HOP).min(self.waveform.len());
        &self.waveform.samples()[..n]
    }

    /// μ-law classes of [`aligned_samples`](Self::aligned_samples).
    pub fn sample_classes(&self, cfg: &CodecConfig) -> Result<Vec<usize>> {
        let codec = Codec::new(*cfg)?;
        Ok(codec.encode_all(self.aligned_samples()))
    }

    pub fn phone_string(&self) -> String {
        self.phones
            .iter()
            .map(|(id, d)| format!("{id}:{d}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub stats: NormStats,
    pub label_dim: usize,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Width of decoder input frames, `L + 2`.
    pub fn input_dim(&self) -> usize {
        self.label_dim + 2
    }

    pub fn normalized_acoustic(&self, u: &Utterance) -> SampleFrameTensor<f64> {
        normalize_acoustic(&u.acoustic, &self.stats).expect("acoustic width is fixed")
    }

    pub fn decoder_input(&self, u: &Utterance) -> SampleFrameTensor<f64> {
        self.stats.normalize_linguistic(&u.linguistic)
    }

    /// Per-frame mean of the normalised training acoustic frames.
    pub fn mean_train_frame(&self) -> Vec<f64> {
        let mut mean = vec![0.0; ACOUSTIC_DIM];
        let mut n = 0usize;
        for u in self.split(Split::Train) {
            let a = self.normalized_acoustic(u);
            for i in 0..a.rows() {
                for (m, &v) in mean.iter_mut().zip(a.row(i)) {
                    *m += v;
                }
                n += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        mean
    }
}
