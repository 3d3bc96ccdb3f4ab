//! Simulation to windowed samples in one call.

use std::path::Path;

use crate::dataset::{DatasetHeader, DatasetWriter};
use crate::error::{PipelineError, StreamError};
use crate::sim::{simulate_calibration, simulate_insertion, InsertionProfile, NeedlePreset, OpticalParams};
use crate::streams::{
    crop_labeled, make_windows, match_streams, window_count, AScan, ForceStream, LabeledScan, OctStream, SequenceSample,
};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_s: usize,
    pub d_c: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { t_s: 50, d_c: 70, stride: 1 }
    }
}

/// Matches, then crops to `d_c`.
pub fn labeled(oct: OctStream, force: &ForceStream, d_c: usize) -> Result<Vec<LabeledScan>> {
    let mut scans = match_streams(oct, force)?;
    crop_labeled(&mut scans, d_c)?;
    Ok(scans)
}

pub fn calibration_windows(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    duration: f64,
    seed: u64,
    ws: WindowSpec,
) -> Result<Vec<SequenceSample>> {
    let (oct, force) = simulate_calibration(preset, optics, duration, seed)?;
    let scans = labeled(oct, &force, ws.d_c)?;
    Ok(make_windows(&scans, ws.t_s, ws.stride)?)
}

/// Insertion scans labeled with the base-sensor reading, plus the frictionless
/// tip force matched to every scan.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionScans {
    pub scans: Vec<LabeledScan>,
    pub tip_force: Vec<f64>,
}

pub fn insertion_scans(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    profile: &InsertionProfile,
    shielded: bool,
    seed: u64,
    d_c: usize,
) -> Result<InsertionScans> {
    let rec = simulate_insertion(preset, optics, profile, shielded, seed)?;
    let stamps = OctStream { scans: rec.oct.scans.iter().map(|s| AScan { t: s.t, depth: Vec::new() }).collect() };
    let tip_force = match_streams(stamps, &rec.tip_force)?.into_iter().map(|s| s.f).collect();
    let scans = labeled(rec.oct, &rec.base_force, d_c)?;
    Ok(InsertionScans { scans, tip_force })
}

impl InsertionScans {
    /// Per-window (time of last scan, base reading, tip force), aligned with the
    /// windows `make_windows` or [`write_windows`] produce.
    pub fn window_truth(&self, ws: WindowSpec) -> Vec<(f64, f64, f64)> {
        (0..window_count(self.scans.len(), ws.t_s, ws.stride))
            .map(|k| {
                let last = k * ws.stride + ws.t_s - 1;
                (self.scans[last].t, self.scans[last].f, self.tip_force[last])
            })
            .collect()
    }
}

/// Windows from an insertion, labeled with the base-sensor reading, plus the
/// frictionless tip force and the time of each window's last scan.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionWindows {
    pub samples: Vec<SequenceSample>,
    pub tip_force: Vec<f64>,
    pub t: Vec<f64>,
}

pub fn insertion_windows(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    profile: &InsertionProfile,
    shielded: bool,
    seed: u64,
    ws: WindowSpec,
) -> Result<InsertionWindows> {
    let ins = insertion_scans(preset, optics, profile, shielded, seed, ws.d_c)?;
    let samples = make_windows(&ins.scans, ws.t_s, ws.stride)?;
    let truth = ins.window_truth(ws);
    Ok(InsertionWindows {
        tip_force: truth.iter().map(|w| w.2).collect(),
        t: truth.iter().map(|w| w.0).collect(),
        samples,
    })
}

/// Streams calibration windows straight to a dataset file without holding them all.
pub fn write_calibration_dataset(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    duration: f64,
    seed: u64,
    ws: WindowSpec,
    path: &Path,
) -> Result<DatasetHeader> {
    let (oct, force) = simulate_calibration(preset, optics, duration, seed)?;
    let scans = labeled(oct, &force, ws.d_c)?;
    write_windows(&scans, ws, &preset.name, seed, path)
}

/// Writes the sliding windows of `scans` one at a time.
pub fn write_windows(
    scans: &[LabeledScan],
    ws: WindowSpec,
    preset_name: &str,
    seed: u64,
    path: &Path,
) -> Result<DatasetHeader> {
    if ws.t_s == 0 {
        return Err(StreamError::ZeroParameter("t_s").into());
    }
    if ws.stride == 0 {
        return Err(StreamError::ZeroParameter("stride").into());
    }
    let mut w = DatasetWriter::create(path, DatasetHeader::new(ws.t_s, ws.d_c, ws.stride, preset_name, seed))?;
    let n = window_count(scans.len(), ws.t_s, ws.stride);
    let mut window = Vec::with_capacity(ws.t_s * ws.d_c);
    for k in 0..n {
        let start = k * ws.stride;
        window.clear();
        scans[start..start + ws.t_s].iter().for_each(|r| window.extend_from_slice(&r.scan));
        let s = SequenceSample { window: std::mem::take(&mut window), label: scans[start + ws.t_s - 1].f, start };
        w.push(&s)?;
        window = s.window;
    }
    Ok(w.finish()?)
}
