//! Synthetic corpus generator.
//!
//! A phone inventory with fixed spectral envelopes (cepstra), voicing classes
//! and voicing frequencies is drawn from the seed. Each utterance draws a
//! phone sequence with durations and prosodic labels, an F0 contour that is a
//! function of those labels, and a waveform rendered from the frame features:
//! harmonics of F0 under the cepstral envelope for voiced frames and
//! envelope-scaled filtered noise for unvoiced frames. The frame features are
//! therefore exact ground truth for the waveform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::codec::Waveform;
use crate::corpus::features::{
    interpolate_log_f0, make_uv_flag, replicate_labels, NormStats, ACOUSTIC_DIM, FRAME_HOP, LOG_F0, MFCC_DIM,
    UNVOICED_SENTINEL, UV, VF,
};
use crate::corpus::{Corpus, Split, Utterance};
use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;

pub const SAMPLE_RATE: u32 = 16_000;
const NYQUIST: f64 = SAMPLE_RATE as f64 / 2.0;
const PROSODIC_FEATURES: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_utterances: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub phone_inventory: usize,
    /// Base linguistic dimension `L` (one-hot phone id + prosodic reals + filler).
    pub label_dim: usize,
    pub voiced_fraction: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub voiced_dur_min: usize,
    pub voiced_dur_max: usize,
    pub unvoiced_dur_min: usize,
    pub unvoiced_dur_max: usize,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_utterances: 80,
            frames_min: 40,
            frames_max: 80,
            phone_inventory: 40,
            label_dim: 46,
            voiced_fraction: 0.7,
            f0_min_hz: 100.0,
            f0_max_hz: 250.0,
            voiced_dur_min: 4,
            voiced_dur_max: 12,
            unvoiced_dur_min: 3,
            unvoiced_dur_max: 8,
            noise_floor: 0.002,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_utterances < 3 {
            return bad("n_utterances must be at least 3 to fill three splits");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return bad("frame range is empty");
        }
        if self.phone_inventory < 2 || self.label_dim <= self.phone_inventory {
            return bad("label_dim must exceed phone_inventory, which must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.voiced_fraction) {
            return bad("voiced_fraction outside [0, 1]");
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz && self.f0_max_hz < NYQUIST / 4.0) {
            return bad("F0 range is empty or too high");
        }
        if self.voiced_dur_min == 0 || self.voiced_dur_min > self.voiced_dur_max {
            return bad("voiced duration range is empty");
        }
        if self.unvoiced_dur_min == 0 || self.unvoiced_dur_min > self.unvoiced_dur_max {
            return bad("unvoiced duration range is empty");
        }
        if !(self.noise_floor >= 0.0) {
            return bad("noise_floor must be non-negative");
        }
        Ok(())
    }

    fn voiced_phones(&self) -> usize {
        ((self.phone_inventory as f64 * self.voiced_fraction).round() as usize).clamp(1, self.phone_inventory - 1)
    }
}

/// SplitMix64 finaliser, used to derive independent per-utterance seeds.
pub fn mix_seed(global: u64, index: u64) -> u64 {
    let mut z = global ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
struct Phone {
    voiced: bool,
    cepstrum: [f64; MFCC_DIM],
    drift: [f64; MFCC_DIM],
    vf: f64,
}

fn inventory(spec: &SynthSpec) -> Vec<Phone> {
    let mut rng = NnRng::seed_from_u64(mix_seed(spec.seed, u64::MAX));
    let voiced = spec.voiced_phones();
    (0..spec.phone_inventory)
        .map(|id| {
            let mut cepstrum = [0.0; MFCC_DIM];
            let mut drift = [0.0; MFCC_DIM];
            cepstrum[0] = rng.random_range(-5.2..-4.4);
            // c1 carries a low-pass spectral tilt
            cepstrum[1] = rng.random_range(0.5..0.9);
            for d in 2..MFCC_DIM {
                cepstrum[d] = rng.random_range(-0.5..0.5) / d as f64;
                drift[d] = rng.random_range(-0.1..0.1) / d as f64;
            }
            let is_voiced = id < voiced;
            Phone {
                voiced: is_voiced,
                cepstrum,
                drift,
                vf: if is_voiced { rng.random_range(0.45..0.85) } else { 0.0 },
            }
        })
        .collect()
}

/// `log |H(ω)| = c₀ + 2 Σ c_d cos(d ω)` with `ω = π f / Nyquist`.
fn log_envelope(cep: &[f64], freq_hz: f64) -> f64 {
    let w = PI * freq_hz / NYQUIST;
    cep[0] + 2.0 * (1..cep.len()).map(|d| cep[d] * (d as f64 * w).cos()).sum::<f64>()
}

struct RawUtterance {
    phones: Vec<(usize, usize)>,
    phone_labels: Vec<Vec<f64>>,
    acoustic: SampleFrameTensor<f64>,
    waveform: Waveform<f64>,
}

fn draw_utterance(spec: &SynthSpec, inv: &[Phone], seed: u64) -> Result<RawUtterance> {
    let mut rng = NnRng::seed_from_u64(seed);
    let frames = rng.random_range(spec.frames_min..=spec.frames_max);
    let voiced_ids = spec.voiced_phones();

    // phone sequence, alternating tendencies so both classes appear
    let mut phones = Vec::new();
    let mut total = 0;
    while total < frames {
        let voiced = rng.random::<f64>() < 0.65;
        let id = if voiced {
            rng.random_range(0..voiced_ids)
        } else {
            rng.random_range(voiced_ids..spec.phone_inventory)
        };
        let dur = if voiced {
            rng.random_range(spec.voiced_dur_min..=spec.voiced_dur_max)
        } else {
            rng.random_range(spec.unvoiced_dur_min..=spec.unvoiced_dur_max)
        };
        let dur = dur.min(frames - total);
        phones.push((id, dur));
        total += dur;
    }
    if !phones.iter().any(|&(id, _)| inv[id].voiced) {
        phones[0].0 = rng.random_range(0..voiced_ids);
    }

    // prosodic labels: register, accent, stress, position, phrase-final, emphasis
    let register = rng.random::<f64>();
    let n_ph = phones.len();
    let mut labels = Vec::with_capacity(n_ph);
    let mut targets = Vec::with_capacity(n_ph);
    let mut start = 0;
    let extra = spec.label_dim - spec.phone_inventory;
    for (k, &(id, dur)) in phones.iter().enumerate() {
        let accent = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
        let stress = [0.0, 0.5, 1.0][rng.random_range(0..3)];
        let position = (start as f64 + dur as f64 / 2.0) / frames as f64;
        let final_flag = if k + 1 == n_ph { 1.0 } else { 0.0 };
        let emphasis = rng.random::<f64>();
        let prosody = [register, accent, stress, position, final_flag, emphasis];
        let mut label = vec![0.0; spec.label_dim];
        label[id] = 1.0;
        for j in 0..extra {
            label[spec.phone_inventory + j] = if j < PROSODIC_FEATURES {
                prosody[j]
            } else {
                rng.random::<f64>()
            };
        }
        let span = spec.f0_max_hz - spec.f0_min_hz;
        let base = spec.f0_min_hz + span * (0.15 + 0.45 * register);
        let f0 = base * (1.0 + 0.18 * accent + 0.06 * stress + 0.04 * emphasis) * (1.0 - 0.15 * position);
        targets.push(f0.clamp(spec.f0_min_hz, spec.f0_max_hz));
        labels.push(label);
        start += dur;
    }

    // frame-level features
    let mut acoustic = SampleFrameTensor::zeros(&[frames, ACOUSTIC_DIM]);
    let mut raw_lf0 = Vec::with_capacity(frames);
    let mut f = 0;
    for (k, &(id, dur)) in phones.iter().enumerate() {
        let ph = &inv[id];
        for i in 0..dur {
            let rel = i as f64 / dur as f64;
            let row = acoustic.row_mut(f);
            for d in 0..MFCC_DIM {
                row[d] = ph.cepstrum[d] + rel * ph.drift[d];
            }
            row[VF] = ph.vf;
            if ph.voiced {
                // glide towards the next phone's target over the second half
                let next = targets.get(k + 1).copied().unwrap_or(targets[k]);
                let w = ((rel - 0.5) * 2.0).max(0.0) * 0.5;
                raw_lf0.push((targets[k] * (1.0 - w) + next * w).ln());
            } else {
                raw_lf0.push(UNVOICED_SENTINEL);
            }
            f += 1;
        }
    }
    let uv = make_uv_flag(&raw_lf0);
    let lf0 = interpolate_log_f0(&raw_lf0, &uv)?;
    for i in 0..frames {
        acoustic.row_mut(i)[LOG_F0] = lf0[i];
        acoustic.row_mut(i)[UV] = uv[i];
    }

    let waveform = render(spec, &acoustic, &mut rng)?;
    Ok(RawUtterance {
        phones,
        phone_labels: labels,
        acoustic,
        waveform,
    })
}

/// Renders `FRAME_HOP` samples per frame from the frame features.
fn render(spec: &SynthSpec, acoustic: &SampleFrameTensor<f64>, rng: &mut NnRng) -> Result<Waveform<f64>> {
    let frames = acoustic.rows();
    let n = frames * FRAME_HOP;
    let mut out = vec![0.0; n];
    let phases: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0f64;
    let mut prev_noise = 0.0f64;
    for k in 0..frames {
        let row = acoustic.row(k);
        let voiced = row[UV] >= 0.5;
        let f0_here = row[LOG_F0].exp();
        let f0_next = if k + 1 < frames && acoustic.row(k + 1)[UV] >= 0.5 {
            acoustic.row(k + 1)[LOG_F0].exp()
        } else {
            f0_here
        };
        let cep = &row[..MFCC_DIM];
        if voiced {
            let vf_hz = row[VF] * NYQUIST;
            let n_harm = ((vf_hz / f0_here).floor() as usize).clamp(1, phases.len());
            let amps: Vec<f64> = (1..=n_harm)
                .map(|h| log_envelope(cep, h as f64 * f0_here).exp())
                .collect();
            for s in 0..FRAME_HOP {
                let f0 = f0_here + (f0_next - f0_here) * s as f64 / FRAME_HOP as f64;
                phase = (phase + 2.0 * PI * f0 / SAMPLE_RATE as f64) % (2.0 * PI);
                let v: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a * ((h + 1) as f64 * phase + phases[h]).cos())
                    .sum();
                out[k * FRAME_HOP + s] = v;
            }
        } else {
            let gain = cep[0].exp() * 3.0;
            let tilt = cep[1].tanh();
            for s in 0..FRAME_HOP {
                let e: f64 = StandardNormal.sample(rng);
                out[k * FRAME_HOP + s] = gain * (e + tilt * prev_noise) / (1.0 + tilt.abs());
                prev_noise = e;
            }
        }
    }
    for v in &mut out {
        let floor: f64 = StandardNormal.sample(rng);
        // snap to the 16-bit grid so the stored PCM file round-trips exactly
        *v = ((*v + spec.noise_floor * floor).clamp(-1.0, 1.0) * 32767.0).round() / 32767.0;
    }
    Waveform::new(out, SAMPLE_RATE)
}

/// Deterministic 80/10/10 split by utterance.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_valid = ((n as f64 * 0.1).round() as usize).max(1).min(n - n_train - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = NnRng::seed_from_u64(mix_seed(seed, u64::MAX - 1));
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut splits = vec![Split::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    splits
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let inv = inventory(spec);
    let raw: Vec<RawUtterance> = (0..spec.n_utterances)
        .map(|i| draw_utterance(spec, &inv, mix_seed(spec.seed, i as u64)))
        .collect::<Result<_>>()?;
    let splits = assign_splits(spec.n_utterances, spec.seed);
    let max_duration = raw
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .flat_map(|(u, _)| u.phones.iter().map(|&(_, d)| d))
        .max()
        .unwrap_or(1);
    let mut utterances = Vec::with_capacity(raw.len());
    for (i, (r, split)) in raw.into_iter().zip(&splits).enumerate() {
        let frames = r.acoustic.rows();
        let ling = replicate_labels(&r.phones, &r.phone_labels, frames, max_duration)?;
        let rows: Vec<Vec<f64>> = ling.iter().map(|f| f.to_vec()).collect();
        utterances.push(Utterance {
            id: format!("utt{i:04}"),
            split: *split,
            waveform: r.waveform,
            acoustic: r.acoustic,
            linguistic: SampleFrameTensor::from_rows(&rows)?,
            phones: r.phones,
        });
    }
    let ling_dims: Vec<usize> = (spec.phone_inventory..spec.label_dim).collect();
    let stats = compute_stats(&utterances, &ling_dims, max_duration);
    Ok(Corpus {
        utterances,
        stats,
        label_dim: spec.label_dim,
    })
}

/// Normalisation statistics from the training split only.
pub fn compute_stats(utterances: &[Utterance], ling_dims: &[usize], max_duration: usize) -> NormStats {
    let mut acoustic_min = vec![f64::INFINITY; ACOUSTIC_DIM];
    let mut acoustic_max = vec![f64::NEG_INFINITY; ACOUSTIC_DIM];
    let mut sum = vec![0.0; ling_dims.len()];
    let mut sq = vec![0.0; ling_dims.len()];
    let mut count = 0usize;
    let mut source_ids = Vec::new();
    for u in utterances.iter().filter(|u| u.split == Split::Train) {
        source_ids.push(u.id.clone());
        for i in 0..u.acoustic.rows() {
            for (d, &v) in u.acoustic.row(i).iter().enumerate() {
                acoustic_min[d] = acoustic_min[d].min(v);
                acoustic_max[d] = acoustic_max[d].max(v);
            }
        }
        for i in 0..u.linguistic.rows() {
            let row = u.linguistic.row(i);
            for (k, &d) in ling_dims.iter().enumerate() {
                sum[k] += row[d];
                sq[k] += row[d] * row[d];
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let ling_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let ling_std = sq
        .iter()
        .zip(&ling_mean)
        .map(|(s, m)| {
            let var = (s / n - m * m).max(0.0);
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    NormStats {
        acoustic_min,
        acoustic_max,
        ling_dims: ling_dims.to_vec(),
        ling_mean,
        ling_std,
        max_duration,
        source_ids,
    }
}
