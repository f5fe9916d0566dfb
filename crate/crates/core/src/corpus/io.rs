//! Corpus directory layout:
//!
//! * `manifest.tsv`: `id  split  frames  phones` (phones as `id:duration` pairs)
//! * `stats.tsv`: `kind  dim  a  b` normalisation rows
//! * `<id>.lvwv`: waveform
//! * `<id>.acoustic.lvft`, `<id>.linguistic.lvft`: raw feature matrices
//!
//! Feature matrices are `b"LVFT1"`, u32 rows, u32 cols, row-major `f64`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codec::Waveform;
use crate::corpus::features::NormStats;
use crate::corpus::{Corpus, Split, Utterance};
use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;
use crate::real::Real;

pub const FEATURE_MAGIC: &[u8; 5] = b"LVFT1";

pub fn write_features<T: Real, W: Write>(m: &SampleFrameTensor<T>, mut w: W) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.channels() as u32).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<T: Real, R: Read>(mut r: R) -> Result<SampleFrameTensor<T>> {
    let mut head = [0u8; 13];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated feature header".into()))?;
    if &head[..5] != FEATURE_MAGIC {
        return Err(Error::Format("missing LVFT1 magic".into()));
    }
    let rows = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; rows * cols * 8];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated feature payload".into()))?;
    let data = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    SampleFrameTensor::new(&[rows, cols], data)
}

pub fn save_features<T: Real>(m: &SampleFrameTensor<T>, path: &Path) -> Result<()> {
    write_features(m, BufWriter::new(File::create(path)?))
}

pub fn load_features<T: Real>(path: &Path) -> Result<SampleFrameTensor<T>> {
    read_features(BufReader::new(File::open(path)?))
}

pub fn write_stats<W: Write>(s: &NormStats, mut w: W) -> Result<()> {
    writeln!(w, "kind\tdim\ta\tb")?;
    for d in 0..s.acoustic_min.len() {
        writeln!(w, "acoustic\t{d}\t{:?}\t{:?}", s.acoustic_min[d], s.acoustic_max[d])?;
    }
    for (k, &d) in s.ling_dims.iter().enumerate() {
        writeln!(w, "linguistic\t{d}\t{:?}\t{:?}", s.ling_mean[k], s.ling_std[k])?;
    }
    writeln!(w, "max_duration\t-\t{}\t-", s.max_duration)?;
    for id in &s.source_ids {
        writeln!(w, "source\t-\t{id}\t-")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
}

pub fn read_stats(text: &str) -> Result<NormStats> {
    let mut s = NormStats {
        acoustic_min: vec![],
        acoustic_max: vec![],
        ling_dims: vec![],
        ling_mean: vec![],
        ling_std: vec![],
        max_duration: 1,
        source_ids: vec![],
    };
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("stats row {line:?} needs 4 columns")));
        }
        match f[0] {
            "acoustic" => {
                s.acoustic_min.push(parse_f64(f[2])?);
                s.acoustic_max.push(parse_f64(f[3])?);
            }
            "linguistic" => {
                s.ling_dims
                    .push(f[1].parse().map_err(|_| Error::Format(format!("bad dim {:?}", f[1])))?);
                s.ling_mean.push(parse_f64(f[2])?);
                s.ling_std.push(parse_f64(f[3])?);
            }
            "max_duration" => {
                s.max_duration = f[2]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad max_duration {:?}", f[2])))?
            }
            "source" => s.source_ids.push(f[2].to_string()),
            other => return Err(Error::Format(format!("unknown stats kind {other:?}"))),
        }
    }
    if s.acoustic_min.len() != crate::corpus::ACOUSTIC_DIM {
        return Err(Error::Format("stats.tsv lacks acoustic rows".into()));
    }
    Ok(s)
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.tsv"))?);
    writeln!(manifest, "id\tsplit\tframes\tphones")?;
    for u in &corpus.utterances {
        writeln!(manifest, "{}\t{}\t{}\t{}", u.id, u.split, u.frames(), u.phone_string())?;
        u.waveform.save(&dir.join(format!("{}.lvwv", u.id)))?;
        save_features(&u.acoustic, &dir.join(format!("{}.acoustic.lvft", u.id)))?;
        save_features(&u.linguistic, &dir.join(format!("{}.linguistic.lvft", u.id)))?;
    }
    manifest.flush()?;
    write_stats(&corpus.stats, BufWriter::new(File::create(dir.join("stats.tsv"))?))
}

fn parse_phones(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split_whitespace()
        .map(|tok| {
            let (a, b) = tok
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("bad phone token {tok:?}")))?;
            let id = a.parse().map_err(|_| Error::Format(format!("bad phone id {a:?}")))?;
            let d = b.parse().map_err(|_| Error::Format(format!("bad duration {b:?}")))?;
            Ok((id, d))
        })
        .collect()
}

/// Loads a corpus; when `splits` is given, utterances of other splits are
/// listed in the manifest but their files are never opened.
pub fn read_corpus_splits(dir: &Path, splits: Option<&[Split]>) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.tsv");
    if !manifest_path.exists() {
        return Err(Error::Prerequisite(format!("no corpus at {}", dir.display())));
    }
    let stats = read_stats(&fs::read_to_string(dir.join("stats.tsv"))?)?;
    let manifest = fs::read_to_string(manifest_path)?;
    let mut utterances = Vec::new();
    let mut label_dim = None;
    for line in manifest.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("manifest row {line:?} needs 4 columns")));
        }
        let split: Split = f[1].parse()?;
        if let Some(allowed) = splits {
            if !allowed.contains(&split) {
                continue;
            }
        }
        let id = f[0].to_string();
        let frames: usize = f[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad frame count {:?}", f[2])))?;
        let acoustic = load_features(&dir.join(format!("{id}.acoustic.lvft")))?;
        let linguistic: SampleFrameTensor<f64> = load_features(&dir.join(format!("{id}.linguistic.lvft")))?;
        if acoustic.rows() != frames || linguistic.rows() != frames {
            return Err(Error::Format(format!("{id}: frame count disagrees with manifest")));
        }
        label_dim = Some(linguistic.channels() - 2);
        utterances.push(Utterance {
            waveform: Waveform::load(&dir.join(format!("{id}.lvwv")))?,
            id,
            split,
            acoustic,
            linguistic,
            phones: parse_phones(f[3])?,
        });
    }
    let label_dim = label_dim.ok_or_else(|| Error::Format("corpus has no utterances".into()))?;
    Ok(Corpus {
        utterances,
        stats,
        label_dim,
    })
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    read_corpus_splits(dir, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn features_round_trip(rows in 1usize..6, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64 ^ seed) as f64).sin()).collect();
            let m = SampleFrameTensor::new(&[rows, cols], data).unwrap();
            let mut buf = Vec::new();
            write_features(&m, &mut buf).unwrap();
            prop_assert_eq!(&buf[..5], b"LVFT1");
            prop_assert_eq!(read_features::<f64, _>(&buf[..]).unwrap(), m);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_features::<f64, _>(&b"LVXX1\0\0\0\0\0\0\0\0"[..]).is_err());
    }
}
