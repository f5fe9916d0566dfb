//! Acoustic and linguistic frame layouts and the feature pipeline operations.

use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;

pub const MFCC_DIM: usize = 40;
pub const LOG_F0: usize = 40;
pub const VF: usize = 41;
pub const UV: usize = 42;
pub const ACOUSTIC_DIM: usize = 43;

/// Samples per acoustic frame (5 ms at 16 kHz).
pub const FRAME_HOP: usize = 80;

/// Log-F0 value marking an unvoiced frame before interpolation.
pub const UNVOICED_SENTINEL: f64 = -1e9;

/// One 43-dim acoustic feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFrame {
    pub mfcc: [f64; MFCC_DIM],
    pub log_f0: f64,
    pub vf: f64,
    pub uv: f64,
}

impl AcousticFrame {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ACOUSTIC_DIM {
            return Err(Error::dims(&[ACOUSTIC_DIM], &[v.len()]));
        }
        let mut mfcc = [0.0; MFCC_DIM];
        mfcc.copy_from_slice(&v[..MFCC_DIM]);
        Ok(Self {
            mfcc,
            log_f0: v[LOG_F0],
            vf: v[VF],
            uv: v[UV],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.mfcc.to_vec();
        v.extend([self.log_f0, self.vf, self.uv]);
        v
    }

    pub fn is_voiced(&self) -> bool {
        self.uv >= 0.5
    }
}

/// Replicated phone label plus the two duration dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct LinguisticFrame {
    pub label: Vec<f64>,
    pub abs_dur: f64,
    pub rel_pos: f64,
}

impl LinguisticFrame {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.label.clone();
        v.extend([self.abs_dur, self.rel_pos]);
        v
    }
}

pub fn make_uv_flag(log_f0_raw: &[f64]) -> Vec<f64> {
    log_f0_raw
        .iter()
        .map(|&v| if v <= UNVOICED_SENTINEL / 2.0 { 0.0 } else { 1.0 })
        .collect()
}

/// Linearly bridges unvoiced gaps between voiced anchors; leading and trailing
/// unvoiced spans hold the nearest voiced value.
pub fn interpolate_log_f0(log_f0_raw: &[f64], uv: &[f64]) -> Result<Vec<f64>> {
    if log_f0_raw.len() != uv.len() {
        return Err(Error::dims(&[log_f0_raw.len()], &[uv.len()]));
    }
    let anchors: Vec<usize> = (0..uv.len()).filter(|&i| uv[i] >= 0.5).collect();
    let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
        return Err(Error::Invalid("log-F0 contour has no voiced frame to anchor on".into()));
    };
    let mut out = log_f0_raw.to_vec();
    for v in out.iter_mut().take(first) {
        *v = log_f0_raw[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = log_f0_raw[last];
    }
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (log_f0_raw[a], log_f0_raw[b]);
        for (k, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (k - a) as f64 / (b - a) as f64;
            *v = va + w * (vb - va);
        }
    }
    Ok(out)
}

/// Copies each phone's label once per frame of its duration and appends the
/// normalised duration and the within-phone position `i / duration`.
pub fn replicate_labels(
    phones: &[(usize, usize)],
    phone_labels: &[Vec<f64>],
    total_frames: usize,
    max_duration: usize,
) -> Result<Vec<LinguisticFrame>> {
    if phones.len() != phone_labels.len() {
        return Err(Error::dims(&[phones.len()], &[phone_labels.len()]));
    }
    if phones.iter().any(|&(_, d)| d == 0) {
        return Err(Error::Invalid("phone with zero duration".into()));
    }
    let sum: usize = phones.iter().map(|&(_, d)| d).sum();
    if sum != total_frames {
        return Err(Error::Invalid(format!(
            "phone durations sum to {sum}, expected {total_frames} frames"
        )));
    }
    let max_duration = max_duration.max(1) as f64;
    let mut out = Vec::with_capacity(total_frames);
    for (&(_, dur), label) in phones.iter().zip(phone_labels) {
        let abs_dur = (dur as f64 / max_duration).clamp(0.0, 1.0);
        for i in 0..dur {
            out.push(LinguisticFrame {
                label: label.clone(),
                abs_dur,
                rel_pos: i as f64 / dur as f64,
            });
        }
    }
    Ok(out)
}

/// Per-dimension min/max for acoustic frames and z-score statistics for the
/// real-valued linguistic dimensions, all computed on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub acoustic_min: Vec<f64>,
    pub acoustic_max: Vec<f64>,
    /// Linguistic dimensions that are z-normalised.
    pub ling_dims: Vec<usize>,
    pub ling_mean: Vec<f64>,
    pub ling_std: Vec<f64>,
    pub max_duration: usize,
    /// Ids of the utterances the statistics were computed from.
    pub source_ids: Vec<String>,
}

impl NormStats {
    fn degenerate(&self, d: usize) -> bool {
        !(self.acoustic_max[d] > self.acoustic_min[d])
    }

    pub fn normalize_row(&self, raw: &[f64], out: &mut [f64]) {
        for d in 0..ACOUSTIC_DIM {
            out[d] = if self.degenerate(d) {
                0.5
            } else {
                (raw[d] - self.acoustic_min[d]) / (self.acoustic_max[d] - self.acoustic_min[d])
            };
        }
    }

    pub fn denormalize_row(&self, norm: &[f64], out: &mut [f64]) {
        for d in 0..ACOUSTIC_DIM {
            out[d] = if self.degenerate(d) {
                self.acoustic_min[d]
            } else {
                self.acoustic_min[d] + norm[d] * (self.acoustic_max[d] - self.acoustic_min[d])
            };
        }
    }

    pub fn normalize_linguistic(&self, raw: &SampleFrameTensor<f64>) -> SampleFrameTensor<f64> {
        let mut out = raw.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (k, &d) in self.ling_dims.iter().enumerate() {
                row[d] = (row[d] - self.ling_mean[k]) / self.ling_std[k];
            }
        }
        out
    }
}

/// Min–max scales every acoustic dimension into `[0, 1]`; degenerate
/// dimensions (max == min) map to 0.5.
pub fn normalize_acoustic(frames: &SampleFrameTensor<f64>, stats: &NormStats) -> Result<SampleFrameTensor<f64>> {
    if frames.channels() != ACOUSTIC_DIM {
        return Err(Error::dims(&[ACOUSTIC_DIM], &[frames.channels()]));
    }
    let mut out = SampleFrameTensor::zeros(&[frames.rows(), ACOUSTIC_DIM]);
    for i in 0..frames.rows() {
        stats.normalize_row(frames.row(i), out.row_mut(i));
    }
    Ok(out)
}

pub fn denormalize_acoustic(frames: &SampleFrameTensor<f64>, stats: &NormStats) -> Result<SampleFrameTensor<f64>> {
    if frames.channels() != ACOUSTIC_DIM {
        return Err(Error::dims(&[ACOUSTIC_DIM], &[frames.channels()]));
    }
    let mut out = SampleFrameTensor::zeros(&[frames.rows(), ACOUSTIC_DIM]);
    for i in 0..frames.rows() {
        stats.denormalize_row(frames.row(i), out.row_mut(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const U: f64 = UNVOICED_SENTINEL;

    #[test]
    fn interpolation_midpoint() {
        let raw = [100f64.ln(), U, 110f64.ln()];
        let uv = make_uv_flag(&raw);
        assert_eq!(uv, vec![1.0, 0.0, 1.0]);
        let out = interpolate_log_f0(&raw, &uv).unwrap();
        assert!((out[1] - (100f64.ln() + 110f64.ln()) / 2.0).abs() < 1e-15);
        assert_eq!(out[0], raw[0]);
        assert_eq!(out[2], raw[2]);
    }

    #[test]
    fn interpolation_edges_hold() {
        let raw = [U, U, 120f64.ln()];
        let out = interpolate_log_f0(&raw, &make_uv_flag(&raw)).unwrap();
        assert_eq!(out, vec![120f64.ln(); 3]);
        let raw = [5.0, U, U];
        assert_eq!(interpolate_log_f0(&raw, &make_uv_flag(&raw)).unwrap(), vec![5.0; 3]);
    }

    #[test]
    fn interpolation_identity_and_error() {
        let raw = [4.0, 4.5, 5.0];
        assert_eq!(interpolate_log_f0(&raw, &[1.0; 3]).unwrap(), raw.to_vec());
        assert!(interpolate_log_f0(&[U, U], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn uv_flags() {
        assert_eq!(make_uv_flag(&[U, U]), vec![0.0, 0.0]);
        assert_eq!(make_uv_flag(&[4.0, 5.0]), vec![1.0, 1.0]);
        assert_eq!(make_uv_flag(&[U, 4.0, U, 5.0]), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn replicate_three_frames() {
        let out = replicate_labels(&[(7, 3)], &[vec![1.0, 2.0]], 3, 6).unwrap();
        assert_eq!(out.len(), 3);
        let pos: Vec<f64> = out.iter().map(|f| f.rel_pos).collect();
        assert_eq!(pos, vec![0.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!(out.iter().all(|f| f.label == vec![1.0, 2.0] && f.abs_dur == 0.5));
    }

    #[test]
    fn replicate_max_duration_is_one() {
        let out = replicate_labels(&[(0, 2), (1, 4)], &[vec![0.0], vec![1.0]], 6, 4).unwrap();
        assert_eq!(out[5].abs_dur, 1.0);
        assert_eq!(out[0].abs_dur, 0.5);
    }

    #[test]
    fn replicate_errors() {
        assert!(replicate_labels(&[(0, 0)], &[vec![0.0]], 0, 1).is_err());
        assert!(replicate_labels(&[(0, 2)], &[vec![0.0]], 3, 2).is_err());
    }

    fn stats() -> NormStats {
        let mut acoustic_min = vec![-1.0; ACOUSTIC_DIM];
        let mut acoustic_max = vec![3.0; ACOUSTIC_DIM];
        acoustic_min[VF] = 0.2;
        acoustic_max[VF] = 0.2;
        NormStats {
            acoustic_min,
            acoustic_max,
            ling_dims: vec![],
            ling_mean: vec![],
            ling_std: vec![],
            max_duration: 1,
            source_ids: vec![],
        }
    }

    #[test]
    fn normalization_endpoints_and_degenerate_dim() {
        let s = stats();
        let lo = SampleFrameTensor::new(&[1, ACOUSTIC_DIM], vec![-1.0; ACOUSTIC_DIM]).unwrap();
        let hi = SampleFrameTensor::new(&[1, ACOUSTIC_DIM], vec![3.0; ACOUSTIC_DIM]).unwrap();
        let nlo = normalize_acoustic(&lo, &s).unwrap();
        let nhi = normalize_acoustic(&hi, &s).unwrap();
        assert_eq!(nlo.row(0)[0], 0.0);
        assert_eq!(nhi.row(0)[0], 1.0);
        assert_eq!(nlo.row(0)[VF], 0.5);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(v in proptest::collection::vec(-1.0f64..3.0, ACOUSTIC_DIM)) {
            let s = stats();
            let mut v = v;
            v[VF] = 0.2;
            let x = SampleFrameTensor::new(&[1, ACOUSTIC_DIM], v).unwrap();
            let back = denormalize_acoustic(&normalize_acoustic(&x, &s).unwrap(), &s).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }
}
