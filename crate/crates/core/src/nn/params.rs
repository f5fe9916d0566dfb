//! Parameter traversal and the binary checkpoint format.
//!
//! A checkpoint is `b"LVNN1"` followed by one record per tensor:
//! `u64 name_len, name bytes (utf-8), u64 rank, rank × u64 dims, f64 data`,
//! all little-endian, until end of file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"LVNN1";

/// A container of named parameter tensors visited in a fixed order.
///
/// Gradients are stored in a value of the same type, so `zeros_like` doubles as
/// the gradient constructor.
pub trait Parameterized<T: Real>: Clone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>));

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.visit_mut("", &mut |_, t| t.fill(T::zero()));
        g
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, t| v.extend_from_slice(t.data()));
        v
    }

    fn set_flat(&mut self, values: &[T]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
        assert_eq!(off, values.len(), "flat parameter length mismatch");
    }

    /// `self += other`, elementwise over every tensor.
    fn accumulate(&mut self, other: &Self) {
        let src = other.flat();
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            for x in t.data_mut() {
                *x += src[off];
                off += 1;
            }
        });
    }

    fn scale_all(&mut self, s: T) {
        self.visit_mut("", &mut |_, t| t.scale(s));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.all_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn write_checkpoint<T: Real, M: Parameterized<T>, W: Write>(model: &M, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let mut res = Ok(());
    model.visit("", &mut |name, t| {
        if res.is_err() {
            return;
        }
        res = (|| -> std::io::Result<()> {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u64).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_f64_lossy().to_le_bytes())?;
            }
            Ok(())
        })();
    });
    res?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint<T: Real, M: Parameterized<T>>(model: &M, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

/// Raw checkpoint records keyed by tensor name.
pub fn read_records<R: Read>(mut r: R) -> Result<HashMap<String, (Vec<usize>, Vec<f64>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing LVNN1 magic".into()));
    }
    let mut pos = 5;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = HashMap::new();
    loop {
        let head = match take(8) {
            Ok(h) => h,
            Err(_) => break,
        };
        let name_len = u64::from_le_bytes(head.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let rank = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, (dims, data));
    }
    Ok(out)
}

/// Fills `model` from a checkpoint; every tensor must be present with a matching shape.
pub fn read_checkpoint<T: Real, M: Parameterized<T>, R: Read>(model: &mut M, r: R) -> Result<()> {
    let records = read_records(r)?;
    let mut err = None;
    model.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match records.get(name) {
            None => err = Some(Error::Format(format!("checkpoint lacks tensor {name}"))),
            Some((dims, _)) if dims.as_slice() != t.shape() => {
                err = Some(Error::dims(t.shape(), dims));
            }
            Some((_, data)) => {
                for (dst, &src) in t.data_mut().iter_mut().zip(data) {
                    *dst = T::of(src);
                }
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn load_checkpoint<T: Real, M: Parameterized<T>>(model: &mut M, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Prerequisite(format!("checkpoint {} not found", path.display())));
    }
    read_checkpoint(model, BufReader::new(File::open(path)?))
}
