//! μ-law companding and 8-bit class quantisation of waveforms, plus the
//! `LVWV1` waveform file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;

pub const WAVEFORM_MAGIC: &[u8; 5] = b"LVWV1";
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    pub mu: f64,
    pub levels: usize,
    pub bits: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mu: 255.0,
            levels: 256,
            bits: 8,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if self.bits == 0 || self.bits > 16 || self.levels != 1usize << self.bits {
            return Err(Error::Config(format!(
                "levels {} must equal 2^bits with bits {}",
                self.levels, self.bits
            )));
        }
        Ok(())
    }
}

fn check_unit<T: Real>(v: T, what: &str) -> Result<()> {
    if v.is_nan() || v.abs() > T::one() {
        return Err(Error::Domain(format!("{what} {v} outside [-1, 1]")));
    }
    Ok(())
}

/// `sign(x) · ln(1 + μ|x|) / ln(1 + μ)`.
pub fn compand<T: Real>(x: T, cfg: &CodecConfig) -> Result<T> {
    check_unit(x, "sample")?;
    let mu = T::of(cfg.mu);
    Ok(x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p())
}

/// `sign(y) · ((1 + μ)^|y| − 1) / μ`.
pub fn expand<T: Real>(y: T, cfg: &CodecConfig) -> Result<T> {
    check_unit(y, "companded value")?;
    let mu = T::of(cfg.mu);
    Ok(y.signum() * ((y.abs() * mu.ln_1p()).exp_m1()) / mu)
}

/// Half-open uniform bins over `[-1, 1]`; `1` itself lands in the top class.
/// Out-of-range input is clamped.
pub fn quantize<T: Real>(y: T, cfg: &CodecConfig) -> usize {
    let y = if y.is_nan() {
        T::zero()
    } else {
        y.max(-T::one()).min(T::one())
    };
    let q = cfg.levels;
    let idx = ((y + T::one()) / T::of(2.0) * T::of_usize(q)).floor();
    idx.to_usize().unwrap_or(0).min(q - 1)
}

/// Bin centre of `class`.
pub fn dequantize<T: Real>(class: usize, cfg: &CodecConfig) -> Result<T> {
    if class >= cfg.levels {
        return Err(Error::Domain(format!("class {class} outside [0, {})", cfg.levels)));
    }
    Ok(dequantize_unchecked(class, cfg))
}

#[inline]
pub(crate) fn dequantize_unchecked<T: Real>(class: usize, cfg: &CodecConfig) -> T {
    (T::of_usize(class) + T::of(0.5)) * T::of(2.0) / T::of_usize(cfg.levels) - T::one()
}

/// `quantize ∘ compand`.
pub fn encode<T: Real>(x: T, cfg: &CodecConfig) -> Result<usize> {
    Ok(quantize(compand(x, cfg)?, cfg))
}

/// `expand ∘ dequantize`.
pub fn decode<T: Real>(class: usize, cfg: &CodecConfig) -> Result<T> {
    expand(dequantize(class, cfg)?, cfg)
}

/// Codec bound to a configuration that counts how many inputs had to be
/// clamped into `[-1, 1]` instead of failing.
#[derive(Debug, Default)]
pub struct Codec {
    cfg: CodecConfig,
    clamped: AtomicUsize,
}

impl Codec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            clamped: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn clamp_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn clamp<T: Real>(&self, x: T) -> T {
        if x.is_nan() || x.abs() > T::one() {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            if x.is_nan() {
                return T::zero();
            }
            return x.max(-T::one()).min(T::one());
        }
        x
    }

    pub fn quantize<T: Real>(&self, y: T) -> usize {
        quantize(self.clamp(y), &self.cfg)
    }

    pub fn encode<T: Real>(&self, x: T) -> usize {
        let x = self.clamp(x);
        quantize(compand(x, &self.cfg).expect("clamped"), &self.cfg)
    }

    pub fn decode<T: Real>(&self, class: usize) -> Result<T> {
        decode(class, &self.cfg)
    }

    pub fn encode_all<T: Real>(&self, xs: &[T]) -> Vec<usize> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|v| v.is_nan() || v.abs() > T::one()) {
            return Err(Error::Domain(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Little-endian `LVWV1`, u32 rate, u64 count, 16-bit PCM.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(WAVEFORM_MAGIC)?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for &s in &self.samples {
            let v = (s.to_f64_lossy() * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 17];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated waveform header".into()))?;
        if &head[..5] != WAVEFORM_MAGIC {
            return Err(Error::Format("missing LVWV1 magic".into()));
        }
        let rate = u32::from_le_bytes(head[5..9].try_into().unwrap());
        let count = u64::from_le_bytes(head[9..17].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; count * 2];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format("truncated waveform payload".into()))?;
        let samples = payload
            .chunks_exact(2)
            .map(|c| T::of((i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0).clamp(-1.0, 1.0)))
            .collect();
        Ok(Self {
            samples,
            sample_rate: rate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Headerless little-endian `f64` array.
pub fn write_raw_f64<T: Real, W: Write>(values: &[T], mut w: W) -> Result<()> {
    for &v in values {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_f64<T: Real, R: Read>(mut r: R) -> Result<Vec<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("raw f64 array length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CFG: CodecConfig = CodecConfig {
        mu: 255.0,
        levels: 256,
        bits: 8,
    };

    #[test]
    fn compand_fixed_points() {
        assert_eq!(compand(0.0f64, &CFG).unwrap(), 0.0);
        assert!((compand(1.0f64, &CFG).unwrap() - 1.0).abs() < 1e-15);
        assert!((compand(-1.0f64, &CFG).unwrap() + 1.0).abs() < 1e-15);
        assert!(compand(1.01f64, &CFG).is_err());
    }

    #[test]
    fn compand_half() {
        // ln(128.5) / ln(256), 30-digit reference
        let reference = 0.875_703_068_649_234_8;
        assert!((compand(0.5f64, &CFG).unwrap() - reference).abs() < 1e-15);
    }

    #[test]
    fn expand_fixed_points() {
        assert_eq!(expand(0.0f64, &CFG).unwrap(), 0.0);
        assert!((expand(1.0f64, &CFG).unwrap() - 1.0).abs() < 1e-14);
        assert!(expand(-1.5f64, &CFG).is_err());
    }

    #[test]
    fn quantize_boundaries() {
        assert_eq!(quantize(-1.0f64, &CFG), 0);
        assert_eq!(quantize(1.0f64, &CFG), 255);
        assert_eq!(quantize(0.0f64, &CFG), 128);
        assert_eq!(quantize(7.0f64, &CFG), 255);
    }

    #[test]
    fn dequantize_bin_centres() {
        assert_eq!(dequantize::<f64>(0, &CFG).unwrap(), -1.0 + 1.0 / 256.0);
        assert_eq!(dequantize::<f64>(255, &CFG).unwrap(), 1.0 - 1.0 / 256.0);
        assert!(dequantize::<f64>(256, &CFG).is_err());
    }

    #[test]
    fn decode_of_encoded_zero() {
        let y = decode::<f64>(encode(0.0f64, &CFG).unwrap(), &CFG).unwrap();
        let expect = (256f64.powf(1.0 / 256.0) - 1.0) / 255.0;
        assert!((y - expect).abs() < 1e-15);
    }

    #[test]
    fn codec_counts_clamps() {
        let codec = Codec::new(CFG).unwrap();
        assert_eq!(codec.encode(1.5f64), 255);
        assert_eq!(codec.encode(-3.0f64), 0);
        assert_eq!(codec.encode(0.2f64), encode(0.2f64, &CFG).unwrap());
        assert_eq!(codec.clamp_count(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(CodecConfig { levels: 200, ..CFG }.validate().is_err());
        assert!(CodecConfig { mu: 0.0, ..CFG }.validate().is_err());
        assert!(CFG.validate().is_ok());
    }

    #[test]
    fn waveform_rejects_out_of_range() {
        assert!(Waveform::new(vec![0.0f64, 1.2], 16_000).is_err());
    }

    #[test]
    fn waveform_file_layout() {
        let w = Waveform::new(vec![0.0f64, 1.0, -1.0], 16_000).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"LVWV1");
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 16_000);
        assert_eq!(u64::from_le_bytes(buf[9..17].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 17 + 6);
        assert_eq!(i16::from_le_bytes([buf[19], buf[20]]), 32767);
        let back = Waveform::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(back.samples(), &[0.0, 1.0, -1.0]);
    }

    proptest! {
        #[test]
        fn compand_expand_inverse(x in -1.0f64..=1.0) {
            let y = compand(x, &CFG).unwrap();
            prop_assert!(y.abs() <= 1.0);
            prop_assert!((expand(y, &CFG).unwrap() - x).abs() < 1e-12);
            prop_assert_eq!(compand(-x, &CFG).unwrap(), -y);
        }

        #[test]
        fn dequantize_within_half_bin(y in -0.999_999f64..0.999_999) {
            let back: f64 = dequantize(quantize(y, &CFG), &CFG).unwrap();
            prop_assert!((back - y).abs() <= 1.0 / 256.0 + 1e-15);
        }

        #[test]
        fn raw_f64_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 0..50)) {
            let mut buf = Vec::new();
            write_raw_f64(&v, &mut buf).unwrap();
            prop_assert_eq!(read_raw_f64::<f64, _>(&buf[..]).unwrap(), v);
        }
    }
}
