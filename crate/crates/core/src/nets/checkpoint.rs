//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `OCTCKPT1`, `u32` entry count, then per entry
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims and `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use octforce_autodiff::Tensor;

use super::Model;
use crate::error::NetError;
use crate::streams::Normalizer;

type Result<T> = std::result::Result<T, NetError>;

pub const MAGIC: &[u8; 8] = b"OCTCKPT1";

const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;

/// A trained model together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Normalizer,
}

impl Checkpoint {
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let n = &self.normalizer;
        let w = n.width();
        let mut e = self.model.to_entries();
        e.push(("meta/norm.mean".into(), Tensor::new(vec![w], n.pixel_mean.clone()).unwrap()));
        e.push(("meta/norm.std".into(), Tensor::new(vec![w], n.pixel_std.clone()).unwrap()));
        e.push(("meta/norm.label_scale".into(), Tensor::scalar(n.label_scale)));
        e
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let model = Model::from_entries(entries)?;
        let find = |n: &str| {
            entries
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t)
                .ok_or_else(|| NetError::Checkpoint(format!("missing entry {n}")))
        };
        let mean = find("meta/norm.mean")?.data().to_vec();
        let std = find("meta/norm.std")?.data().to_vec();
        let label_scale = find("meta/norm.label_scale")?
            .item()
            .ok_or_else(|| NetError::Checkpoint("meta/norm.label_scale not scalar".into()))?;
        if mean.len() != model.d_c || std.len() != model.d_c {
            return Err(NetError::Checkpoint(format!(
                "normalizer width {} does not match model input width {}",
                mean.len(),
                model.d_c
            )));
        }
        if !(label_scale.is_finite() && label_scale > 0.0) {
            return Err(NetError::Checkpoint(format!("label scale {label_scale} must be positive")));
        }
        Ok(Self { model, normalizer: Normalizer { pixel_mean: mean, pixel_std: std, label_scale } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_entries(path, &self.to_entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(&read_entries(path)?)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> NetError {
    NetError::CheckpointIo { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_entries(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| io_err(path, e))?;
        buf.clear();
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    parse_entries(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn parse_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).ok() != Some(&MAGIC[..]) {
        return Err(NetError::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32()?;
        if len > MAX_NAME {
            return Err(NetError::Checkpoint(format!("entry name of {len} bytes")));
        }
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NetError::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()?;
        if rank > MAX_RANK {
            return Err(NetError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(c.u64()?).map_err(|_| NetError::Checkpoint(format!("{name}: huge dim")))?;
            numel = numel.checked_mul(d).ok_or_else(|| NetError::Checkpoint(format!("{name}: huge tensor")))?;
            shape.push(d);
        }
        let raw = c.take(numel.checked_mul(8).ok_or_else(|| NetError::Checkpoint(format!("{name}: huge tensor")))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| NetError::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}
