//! Binary sequence-dataset container, contiguous splitting and statistics.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "OCTFORCE"
//! version      u16       1
//! t_s          u32
//! d_c          u32
//! stride       u32       scans between consecutive window starts
//! n_samples    u64
//! seed         u64
//! preset_name  u16 length + UTF-8 bytes
//! label_units  u16 length + UTF-8 bytes
//! checksum     u64       FNV-1a over every preceding header byte
//! payload      n_samples x ( label: f64 | window: t_s*d_c f32, time-major )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::DatasetError;
use crate::streams::SequenceSample;

pub const MAGIC: &[u8; 8] = b"OCTFORCE";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u16,
    pub t_s: usize,
    pub d_c: usize,
    pub stride: usize,
    pub n_samples: u64,
    pub preset_name: String,
    pub seed: u64,
    pub label_units: String,
}

impl DatasetHeader {
    pub fn new(t_s: usize, d_c: usize, stride: usize, preset_name: impl Into<String>, seed: u64) -> Self {
        Self {
            version: VERSION,
            t_s,
            d_c,
            stride,
            n_samples: 0,
            preset_name: preset_name.into(),
            seed,
            label_units: "mN".to_string(),
        }
    }

    pub fn window_len(&self) -> usize {
        self.t_s * self.d_c
    }

    pub fn record_bytes(&self) -> u64 {
        8 + 4 * self.window_len() as u64
    }

    fn encode(&self) -> Result<Vec<u8>, DatasetError> {
        let mut b = Vec::with_capacity(64 + self.preset_name.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        for (what, v) in [("t_s", self.t_s), ("d_c", self.d_c), ("stride", self.stride)] {
            let v = u32::try_from(v).map_err(|_| DatasetError::MalformedHeader(format!("{what} too large")))?;
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&self.n_samples.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        for text in [&self.preset_name, &self.label_units] {
            let len = u16::try_from(text.len())
                .map_err(|_| DatasetError::MalformedHeader("text field longer than 65535 bytes".into()))?;
            b.extend_from_slice(&len.to_le_bytes());
            b.extend_from_slice(text.as_bytes());
        }
        let sum = fnv1a(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        Ok(b)
    }

    fn decode(r: &mut impl Read) -> Result<(Self, u64), DatasetError> {
        let mut raw = Vec::new();
        let mut magic = [0u8; 8];
        read_header_bytes(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        raw.extend_from_slice(&magic);
        let mut take = |n: usize, raw: &mut Vec<u8>| -> Result<Vec<u8>, DatasetError> {
            let mut buf = vec![0u8; n];
            read_header_bytes(r, &mut buf)?;
            raw.extend_from_slice(&buf);
            Ok(buf)
        };
        let version = u16::from_le_bytes(take(2, &mut raw)?.try_into().unwrap());
        if version != VERSION {
            return Err(DatasetError::VersionMismatch { found: version, expected: VERSION });
        }
        let mut u32s = [0usize; 3];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(4, &mut raw)?.try_into().unwrap()) as usize;
        }
        let n_samples = u64::from_le_bytes(take(8, &mut raw)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(8, &mut raw)?.try_into().unwrap());
        let mut texts = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = u16::from_le_bytes(take(2, &mut raw)?.try_into().unwrap()) as usize;
            let bytes = take(len, &mut raw)?;
            texts.push(
                String::from_utf8(bytes).map_err(|_| DatasetError::MalformedHeader("text field is not UTF-8".into()))?,
            );
        }
        let mut sum = [0u8; 8];
        read_header_bytes(r, &mut sum)?;
        if u64::from_le_bytes(sum) != fnv1a(&raw) {
            return Err(DatasetError::HeaderChecksum);
        }
        let [t_s, d_c, stride] = u32s;
        if t_s == 0 || d_c == 0 || stride == 0 {
            return Err(DatasetError::MalformedHeader("t_s, d_c and stride must be >= 1".into()));
        }
        let label_units = texts.pop().unwrap();
        let preset_name = texts.pop().unwrap();
        let header = Self { version, t_s, d_c, stride, n_samples, preset_name, seed, label_units };
        Ok((header, raw.len() as u64 + 8))
    }
}

fn read_header_bytes(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DatasetError::MalformedHeader("file ends inside the header".into()),
        _ => DatasetError::MalformedHeader(e.to_string()),
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Streams samples into a container file; the sample count is patched on `finish`.
pub struct DatasetWriter {
    out: BufWriter<File>,
    header: DatasetHeader,
    path: PathBuf,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(path: &Path, mut header: DatasetHeader) -> Result<Self, DatasetError> {
        header.n_samples = 0;
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        out.write_all(&header.encode()?).map_err(io_err(path))?;
        Ok(Self { out, header, path: path.to_path_buf(), buf: Vec::new() })
    }

    pub fn push(&mut self, sample: &SequenceSample) -> Result<(), DatasetError> {
        let expected = self.header.window_len();
        if sample.window.len() != expected {
            return Err(DatasetError::WindowSize {
                index: self.header.n_samples as usize,
                expected,
                found: sample.window.len(),
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&sample.label.to_le_bytes());
        for v in &sample.window {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&self.buf).map_err(io_err(&self.path))?;
        self.header.n_samples += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetHeader, DatasetError> {
        let encoded = self.header.encode()?;
        let path = self.path.clone();
        self.out.seek(SeekFrom::Start(0)).map_err(io_err(&path))?;
        self.out.write_all(&encoded).map_err(io_err(&path))?;
        self.out.flush().map_err(io_err(&path))?;
        Ok(self.header)
    }
}

/// Writes `samples` under `header` (its `n_samples` is replaced by the actual count).
pub fn save(samples: &[SequenceSample], header: &DatasetHeader, path: &Path) -> Result<DatasetHeader, DatasetError> {
    let mut w = DatasetWriter::create(path, header.clone())?;
    for s in samples {
        w.push(s)?;
    }
    w.finish()
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<DatasetHeader, DatasetError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    Ok(DatasetHeader::decode(&mut r)?.0)
}

/// Reads a whole container. Sample `i` gets `start = i * stride`.
pub fn load(path: &Path) -> Result<(DatasetHeader, Vec<SequenceSample>), DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let file_len = file.metadata().map_err(io_err(path))?.len();
    let mut r = BufReader::new(file);
    let (header, header_len) = DatasetHeader::decode(&mut r)?;
    let found = file_len - header_len;
    let expected = header
        .n_samples
        .checked_mul(header.record_bytes())
        .ok_or_else(|| DatasetError::MalformedHeader("n_samples overflows payload size".into()))?;
    if found < expected {
        return Err(DatasetError::Truncated { expected, found });
    }
    if found > expected {
        return Err(DatasetError::TrailingBytes { extra: found - expected, n_samples: header.n_samples });
    }
    let wl = header.window_len();
    let mut rec = vec![0u8; header.record_bytes() as usize];
    let mut samples = Vec::with_capacity(header.n_samples as usize);
    for i in 0..header.n_samples as usize {
        r.read_exact(&mut rec).map_err(io_err(path))?;
        let label = f64::from_le_bytes(rec[..8].try_into().unwrap());
        let mut window = Vec::with_capacity(wl);
        window.extend(rec[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        samples.push(SequenceSample { window, label, start: i * header.stride });
    }
    Ok((header, samples))
}

/// Read access to an indexed collection of samples.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, i: usize) -> &SequenceSample;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [SequenceSample] {
    fn len(&self) -> usize {
        <[SequenceSample]>::len(self)
    }
    fn sample(&self, i: usize) -> &SequenceSample {
        &self[i]
    }
}

impl SampleSource for Vec<SequenceSample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }
    fn sample(&self, i: usize) -> &SequenceSample {
        &self[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.64, val_frac: 0.16, test_frac: 0.20 }
    }
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self, DatasetError> {
        let s = Self { train_frac, val_frac, test_frac };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(DatasetError::InvalidSplit(format!("fractions must be positive, got {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    /// Windows discarded because they shared source scans with an earlier split.
    pub dropped: usize,
}

/// Cuts the time-ordered samples into contiguous train/val/test blocks.
///
/// A window of a later block is dropped when any of its `t_s` source scans
/// belongs to a window kept in an earlier block, so no scan lands in two splits.
pub fn split(samples: Vec<SequenceSample>, spec: &SplitSpec, t_s: usize) -> Result<Splits, DatasetError> {
    spec.validate()?;
    if t_s == 0 {
        return Err(DatasetError::InvalidSplit("t_s must be >= 1".into()));
    }
    if let Some(w) = samples.windows(2).position(|w| w[1].start <= w[0].start) {
        return Err(DatasetError::InvalidSplit(format!("samples not in time order at index {}", w + 1)));
    }
    let n = samples.len();
    let n_train = (n as f64 * spec.train_frac).round() as usize;
    let n_val = ((n as f64 * spec.val_frac).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_train >= n {
        return Err(DatasetError::EmptySplit(if n_train == 0 { "train" } else { "test" }));
    }
    if n_val == 0 {
        return Err(DatasetError::EmptySplit("val"));
    }
    if n_train + n_val >= n {
        return Err(DatasetError::EmptySplit("test"));
    }
    let mut it = samples.into_iter();
    let train: Vec<SequenceSample> = it.by_ref().take(n_train).collect();
    let val_block: Vec<SequenceSample> = it.by_ref().take(n_val).collect();
    let test_block: Vec<SequenceSample> = it.collect();

    // first source index not yet claimed by an earlier split
    let mut frontier = train.last().map_or(0, |s| s.start + t_s);
    let mut dropped = 0;
    let mut keep_after = |block: Vec<SequenceSample>, frontier: &mut usize| -> Vec<SequenceSample> {
        let before = block.len();
        let kept: Vec<SequenceSample> = block.into_iter().filter(|s| s.start >= *frontier).collect();
        dropped += before - kept.len();
        if let Some(last) = kept.last() {
            *frontier = last.start + t_s;
        }
        kept
    };
    let val = keep_after(val_block, &mut frontier);
    let test = keep_after(test_block, &mut frontier);
    if val.is_empty() {
        return Err(DatasetError::EmptySplit("val"));
    }
    if test.is_empty() {
        return Err(DatasetError::EmptySplit("test"));
    }
    Ok(Splits { train, val, test, dropped })
}

/// Per-depth-pixel intensity moments and label range of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub pixel_mean: Vec<f64>,
    /// Population standard deviation over every row of every window.
    pub pixel_std: Vec<f64>,
    pub label_min: f64,
    pub label_max: f64,
    pub label_mean: f64,
    pub label_abs_mean: f64,
}

/// Single-pass (Welford) statistics; rows are `d_c` wide.
pub fn stats<S: SampleSource + ?Sized>(src: &S, d_c: usize) -> Result<DatasetStats, DatasetError> {
    if src.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    let mut count = 0u64;
    let mut mean = vec![0.0f64; d_c];
    let mut m2 = vec![0.0f64; d_c];
    let (mut lmin, mut lmax, mut lsum, mut labs) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..src.len() {
        let s = src.sample(i);
        if d_c == 0 || s.window.len() % d_c != 0 {
            return Err(DatasetError::WindowSize { index: i, expected: d_c, found: s.window.len() });
        }
        for row in s.window.chunks_exact(d_c) {
            count += 1;
            let inv = 1.0 / count as f64;
            for ((m, q), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let x = v as f64;
                let delta = x - *m;
                *m += delta * inv;
                *q += delta * (x - *m);
            }
        }
        lmin = lmin.min(s.label);
        lmax = lmax.max(s.label);
        lsum += s.label;
        labs += s.label.abs();
    }
    let n = src.len() as f64;
    Ok(DatasetStats {
        n_samples: src.len(),
        pixel_std: m2.iter().map(|q| (q / count as f64).sqrt()).collect(),
        pixel_mean: mean,
        label_min: lmin,
        label_max: lmax,
        label_mean: lsum / n,
        label_abs_mean: labs / n,
    })
}
