//! Objective metrics, latency measurement and robust line fitting.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::corpus::features::{LOG_F0, MFCC_DIM, UV};
use crate::decoder::{AcousticDecoder, DecodeStats};
use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::real::Real;
use crate::vocoder::VocoderModel;

/// Acoustic frames per second at 16 kHz with an 80-sample hop.
pub const FRAMES_PER_SECOND: f64 = 200.0;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dims(&[a], &[b]));
    }
    Ok(())
}

/// Mel cepstral distortion in dB, averaged over frames, on coefficients
/// `1..40` (c0 excluded). Rows may carry extra columns after the cepstra.
pub fn mcd<T: Real>(reference: &SampleFrameTensor<T>, pred: &SampleFrameTensor<T>) -> Result<T> {
    same_len(reference.rows(), pred.rows())?;
    if reference.channels() < MFCC_DIM || pred.channels() < MFCC_DIM {
        return Err(Error::dims(&[MFCC_DIM], &[reference.channels().min(pred.channels())]));
    }
    if reference.rows() == 0 {
        return Err(Error::Invalid("no frames to compare".into()));
    }
    let k = T::of(10.0) / T::LN_10();
    let two = T::of(2.0);
    let mut total = T::zero();
    for t in 0..reference.rows() {
        let (r, p) = (reference.row(t), pred.row(t));
        let mut s = T::zero();
        for d in 1..MFCC_DIM {
            let e = r[d] - p[d];
            s += e * e;
        }
        total += k * (two * s).sqrt();
    }
    Ok(total / T::of_usize(reference.rows()))
}

/// RMSE in Hz of `exp(log F0)` over the frames voiced in the reference
/// (`uv_ref >= 0.5`).
pub fn f0_rmse<T: Real>(ref_log_f0: &[T], pred_log_f0: &[T], uv_ref: &[T]) -> Result<T> {
    same_len(ref_log_f0.len(), pred_log_f0.len())?;
    same_len(ref_log_f0.len(), uv_ref.len())?;
    let mut s = T::zero();
    let mut n = 0usize;
    for i in 0..ref_log_f0.len() {
        if uv_ref[i] >= T::of(0.5) {
            let e = ref_log_f0[i].exp() - pred_log_f0[i].exp();
            s += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("reference has no voiced frames".into()));
    }
    Ok((s / T::of_usize(n)).sqrt())
}

/// Percentage of frames whose binary flags agree.
pub fn uv_accuracy<T: Real>(reference: &[T], pred: &[T]) -> Result<T> {
    same_len(reference.len(), pred.len())?;
    if reference.is_empty() {
        return Err(Error::Invalid("no frames to compare".into()));
    }
    let binary = |v: &T| *v == T::zero() || *v == T::one();
    if !reference.iter().chain(pred).all(binary) {
        return Err(Error::Domain("UV flags must be 0 or 1".into()));
    }
    let hits = reference.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(T::of(100.0) * T::of_usize(hits) / T::of_usize(reference.len()))
}

/// Histogram of voiced-frame F0 in Hz over `bins` uniform bins spanning
/// `[lo, hi]`; out-of-range frames are ignored and `hi` falls in the last bin.
pub fn f0_histogram<T: Real>(log_f0: &[T], uv: &[T], bins: usize, range_hz: (f64, f64)) -> Result<Vec<usize>> {
    same_len(log_f0.len(), uv.len())?;
    let (lo, hi) = range_hz;
    if bins == 0 || !(hi > lo) {
        return Err(Error::Invalid(format!(
            "bad histogram spec: {bins} bins over [{lo}, {hi}]"
        )));
    }
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for (&lf, &v) in log_f0.iter().zip(uv) {
        if v < T::of(0.5) {
            continue;
        }
        let f = lf.to_f64_lossy().exp();
        if f < lo || f > hi {
            continue;
        }
        let b = (((f - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub nll: f64,
    pub mcd_db: f64,
    pub f0_rmse_hz: f64,
    pub uv_accuracy_pct: f64,
}

/// Frame metrics between denormalized reference and prediction matrices.
/// The predicted UV column is binarized at 0.5 before scoring.
pub fn frame_metrics(reference: &SampleFrameTensor<f64>, pred: &SampleFrameTensor<f64>) -> Result<MetricsReport> {
    same_len(reference.rows(), pred.rows())?;
    let col = |m: &SampleFrameTensor<f64>, c: usize| -> Vec<f64> { (0..m.rows()).map(|t| m.row(t)[c]).collect() };
    let uv_ref = col(reference, UV);
    let uv_pred: Vec<f64> = col(pred, UV)
        .into_iter()
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(MetricsReport {
        nll: 0.0,
        mcd_db: mcd(reference, pred)?,
        f0_rmse_hz: f0_rmse(&col(reference, LOG_F0), &col(pred, LOG_F0), &uv_ref)?,
        uv_accuracy_pct: uv_accuracy(&uv_ref, &uv_pred)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyPoint {
    pub model_id: String,
    pub generated_duration_s: f64,
    pub wall_time_s: f64,
    pub sequential_steps: usize,
}

/// Times end-to-end decoding of random inputs of each requested duration.
/// One untimed warm-up decode precedes the timed repetitions of each length.
/// With a vocoder, generation of the corresponding waveform is included.
pub fn latency_benchmark<T: Real>(
    model_id: &str,
    decoder: &AcousticDecoder<T>,
    vocoder: Option<&VocoderModel<T>>,
    lengths_s: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<LatencyPoint>> {
    let mut rng = NnRng::seed_from_u64(seed);
    let l = decoder.input_dim();
    let mut points = Vec::with_capacity(lengths_s.len() * repetitions);
    for &secs in lengths_s {
        if !(secs > 0.0) {
            return Err(Error::Invalid(format!("length {secs} s must be positive")));
        }
        let frames = ((secs * FRAMES_PER_SECOND).round() as usize).max(1);
        let data = (0..frames * l).map(|_| T::of(rng.random_range(0.0..1.0))).collect();
        let x = SampleFrameTensor::new(&[frames, l], data)?;
        let run = |rng: &mut NnRng| -> Result<DecodeStats> {
            let (y, stats) = decoder.decode(&x)?;
            if let Some(v) = vocoder {
                v.generate(&y, frames * crate::corpus::FRAME_HOP, rng, 1.0)?;
            }
            std::hint::black_box(&y);
            Ok(stats)
        };
        run(&mut rng)?;
        for _ in 0..repetitions {
            let start = Instant::now();
            let stats = run(&mut rng)?;
            let wall = start.elapsed().as_secs_f64();
            points.push(LatencyPoint {
                model_id: model_id.to_string(),
                generated_duration_s: frames as f64 / FRAMES_PER_SECOND,
                wall_time_s: wall,
                sequential_steps: stats.sequential_steps,
            });
        }
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacFit {
    pub slope: f64,
    pub intercept: f64,
    pub inliers: Vec<bool>,
    pub threshold: f64,
    pub max_latency_at_longest: f64,
}

/// Ordinary least squares `y = a·x + b`; `None` when the `x` values coincide.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RANSAC line fit from random two-point hypotheses.
///
/// The consensus set with the most inliers (ties: smaller residual sum) is
/// refit by least squares. Without an explicit `threshold` the residual bound
/// is 1.5 × the median absolute residual of an OLS fit to all points.
pub fn ransac_fit(xs: &[f64], ys: &[f64], threshold: Option<f64>, iterations: usize, seed: u64) -> Result<RansacFit> {
    same_len(xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::Invalid(format!(
            "RANSAC needs at least 2 points, got {}",
            xs.len()
        )));
    }
    let threshold = match threshold {
        Some(t) if t >= 0.0 => t,
        Some(t) => return Err(Error::Invalid(format!("negative threshold {t}"))),
        None => {
            let (a, b) = ols(xs, ys).ok_or_else(|| Error::Invalid("all x values coincide".into()))?;
            1.5 * median(xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).abs()).collect())
        }
    };
    let mut rng = NnRng::seed_from_u64(seed);
    let n = xs.len();
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if xs[i] == xs[j] {
            continue;
        }
        let a = (ys[j] - ys[i]) / (xs[j] - xs[i]);
        let b = ys[i] - a * xs[i];
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut resid = 0.0;
        for k in 0..n {
            let r = (ys[k] - a * xs[k] - b).abs();
            if r <= threshold {
                mask[k] = true;
                count += 1;
                resid += r;
            }
        }
        let better = match &best {
            None => true,
            Some((c, s, _)) => count > *c || (count == *c && resid < *s),
        };
        if better {
            best = Some((count, resid, mask));
        }
    }
    let (_, _, inliers) = best.ok_or_else(|| Error::Invalid("no non-degenerate RANSAC hypothesis".into()))?;
    let (ix, iy): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .zip(&inliers)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (*x, *y))
        .unzip();
    let (slope, intercept) = ols(&ix, &iy).ok_or_else(|| Error::Invalid("degenerate consensus set".into()))?;
    let longest = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RansacFit {
        slope,
        intercept,
        inliers,
        threshold,
        max_latency_at_longest: slope * longest + intercept,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::Invalid("need at least two pairs".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Invalid("constant input has no rank correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// `utterance  nll  mcd_db  f0_rmse_hz  uv_accuracy_pct`, one row per entry.
pub fn metrics_tsv(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("utterance\tnll\tmcd_db\tf0_rmse_hz\tuv_accuracy_pct\n");
    for (id, m) in rows {
        let _ = writeln!(
            s,
            "{id}\t{}\t{}\t{}\t{}",
            m.nll, m.mcd_db, m.f0_rmse_hz, m.uv_accuracy_pct
        );
    }
    s
}

/// `model  duration_s  wall_time_s  sequential_steps`.
pub fn latency_tsv(points: &[LatencyPoint]) -> String {
    let mut s = String::from("model\tduration_s\twall_time_s\tsequential_steps\n");
    for p in points {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            p.model_id, p.generated_duration_s, p.wall_time_s, p.sequential_steps
        );
    }
    s
}

/// `model  slope  intercept  threshold  inliers  max_latency_s`.
pub fn ransac_tsv(fits: &[(String, RansacFit)]) -> String {
    let mut s = String::from("model\tslope\tintercept\tthreshold\tinliers\tmax_latency_s\n");
    for (id, f) in fits {
        let inl = f.inliers.iter().filter(|&&m| m).count();
        let _ = writeln!(
            s,
            "{id}\t{}\t{}\t{}\t{inl}\t{}",
            f.slope, f.intercept, f.threshold, f.max_latency_at_longest
        );
    }
    s
}

/// `bin_lo_hz  bin_hi_hz  count`.
pub fn histogram_tsv(counts: &[usize], range_hz: (f64, f64)) -> String {
    let width = (range_hz.1 - range_hz.0) / counts.len().max(1) as f64;
    let mut s = String::from("bin_lo_hz\tbin_hi_hz\tcount\n");
    for (i, c) in counts.iter().enumerate() {
        let lo = range_hz.0 + i as f64 * width;
        let _ = writeln!(s, "{lo}\t{}\t{c}", lo + width);
    }
    s
}
