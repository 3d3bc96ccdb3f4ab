//! Stream alignment, cropping, windowing and normalization.

use crate::dataset::DatasetStats;
use crate::error::StreamError;

/// Differences in |Δt| below this are ties, resolved towards the earlier force sample.
pub const TIE_TOLERANCE_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AScan {
    pub t: f64,
    pub depth: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OctStream {
    pub scans: Vec<AScan>,
}

impl OctStream {
    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.scans.iter().map(|s| s.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub t: f64,
    /// Axial force, mN.
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForceStream {
    pub samples: Vec<ForceSample>,
}

impl ForceStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// An A-scan with the force label of its nearest force sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub scan: Vec<f32>,
    pub f: f64,
    pub t: f64,
}

/// `t_s` consecutive cropped scans (time-major, `t_s * d_c` values) labeled with
/// the force of the last row. `start` is the index of the first row in the
/// source scan sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub window: Vec<f32>,
    pub label: f64,
    pub start: usize,
}

fn check_sorted(stream: &'static str, times: &[f64]) -> Result<(), StreamError> {
    if times.is_empty() {
        return Err(StreamError::Empty(stream));
    }
    match times.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(StreamError::Unsorted { stream, index: i + 1 }),
        None => Ok(()),
    }
}

/// Index of the nearest force timestamp for every scan timestamp.
///
/// Linear merge over both sorted sequences; ties go to the earlier sample.
pub fn nearest_indices(scan_times: &[f64], force_times: &[f64]) -> Result<Vec<usize>, StreamError> {
    check_sorted("oct", scan_times)?;
    check_sorted("force", force_times)?;
    let mut j = 0;
    Ok(scan_times
        .iter()
        .map(|&t| {
            while j + 1 < force_times.len()
                && (force_times[j + 1] - t).abs() < (force_times[j] - t).abs() - TIE_TOLERANCE_S
            {
                j += 1;
            }
            j
        })
        .collect())
}

/// Pairs every A-scan with its nearest force sample, preserving scan order.
pub fn match_streams(oct: OctStream, force: &ForceStream) -> Result<Vec<LabeledScan>, StreamError> {
    let idx = nearest_indices(&oct.times(), &force.times())?;
    Ok(oct
        .scans
        .into_iter()
        .zip(idx)
        .map(|(s, j)| LabeledScan { scan: s.depth, f: force.samples[j].f, t: s.t })
        .collect())
}

/// Keeps the first `d_c` depth samples.
pub fn crop_scan(scan: &[f32], d_c: usize) -> Result<Vec<f32>, StreamError> {
    if d_c > scan.len() {
        return Err(StreamError::CropTooLarge { d_c, len: scan.len() });
    }
    Ok(scan[..d_c].to_vec())
}

/// Crops every labeled scan in place.
pub fn crop_labeled(scans: &mut [LabeledScan], d_c: usize) -> Result<(), StreamError> {
    for s in scans.iter_mut() {
        if d_c > s.scan.len() {
            return Err(StreamError::CropTooLarge { d_c, len: s.scan.len() });
        }
        s.scan.truncate(d_c);
        s.scan.shrink_to_fit();
    }
    Ok(())
}

/// Number of windows `make_windows` produces.
pub fn window_count(n: usize, t_s: usize, stride: usize) -> usize {
    if n < t_s || t_s == 0 || stride == 0 {
        0
    } else {
        (n - t_s) / stride + 1
    }
}

/// Sliding windows of `t_s` consecutive scans every `stride` scans.
/// Fewer than `t_s` scans yield no windows.
pub fn make_windows(scans: &[LabeledScan], t_s: usize, stride: usize) -> Result<Vec<SequenceSample>, StreamError> {
    if t_s == 0 {
        return Err(StreamError::ZeroParameter("t_s"));
    }
    if stride == 0 {
        return Err(StreamError::ZeroParameter("stride"));
    }
    let Some(first) = scans.first() else { return Ok(Vec::new()) };
    let d_c = first.scan.len();
    if let Some((i, s)) = scans.iter().enumerate().find(|(_, s)| s.scan.len() != d_c) {
        return Err(StreamError::RaggedScans { index: i, expected: d_c, found: s.scan.len() });
    }
    let count = window_count(scans.len(), t_s, stride);
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            let rows = &scans[start..start + t_s];
            let mut window = Vec::with_capacity(t_s * d_c);
            rows.iter().for_each(|r| window.extend_from_slice(&r.scan));
            SequenceSample { window, label: rows[t_s - 1].f, start }
        })
        .collect())
}

/// Per-pixel standardization and optional label scaling, fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub pixel_mean: Vec<f64>,
    pub pixel_std: Vec<f64>,
    /// Labels are divided by this; 1 when label scaling is off.
    pub label_scale: f64,
}

const MIN_STD: f64 = 1e-12;

impl Normalizer {
    pub fn from_stats(stats: &DatasetStats, scale_labels: bool) -> Self {
        let label_scale = if scale_labels && stats.label_max.abs() > 0.0 { stats.label_max.abs() } else { 1.0 };
        Self { pixel_mean: stats.pixel_mean.clone(), pixel_std: stats.pixel_std.clone(), label_scale }
    }

    pub fn identity(d_c: usize) -> Self {
        Self { pixel_mean: vec![0.0; d_c], pixel_std: vec![0.0; d_c], label_scale: 1.0 }
    }

    pub fn width(&self) -> usize {
        self.pixel_mean.len()
    }

    #[inline]
    fn pixel(&self, i: usize, v: f32) -> f64 {
        let s = self.pixel_std[i];
        if s > MIN_STD {
            (v as f64 - self.pixel_mean[i]) / s
        } else {
            v as f64
        }
    }

    /// Appends the standardized window (any number of rows) to `out`.
    pub fn normalize_window_into(&self, window: &[f32], out: &mut Vec<f64>) -> Result<(), StreamError> {
        let d = self.width();
        if d == 0 || window.len() % d != 0 {
            return Err(StreamError::WidthMismatch { expected: d, found: window.len() });
        }
        out.extend(window.chunks_exact(d).flat_map(|row| row.iter().enumerate().map(|(i, &v)| self.pixel(i, v))));
        Ok(())
    }

    pub fn normalize(&self, samples: &[SequenceSample]) -> Result<Vec<SequenceSample>, StreamError> {
        let mut buf = Vec::new();
        samples
            .iter()
            .map(|s| {
                buf.clear();
                self.normalize_window_into(&s.window, &mut buf)?;
                Ok(SequenceSample {
                    window: buf.iter().map(|&v| v as f32).collect(),
                    label: self.normalize_label(s.label),
                    start: s.start,
                })
            })
            .collect()
    }

    pub fn normalize_label(&self, f: f64) -> f64 {
        f / self.label_scale
    }

    pub fn denormalize_label(&self, y: f64) -> f64 {
        y * self.label_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(n: usize, d: usize) -> Vec<LabeledScan> {
        (0..n)
            .map(|i| LabeledScan { scan: vec![i as f32; d], f: i as f64 * 0.5, t: i as f64 / 5500.0 })
            .collect()
    }

    #[test]
    fn tie_goes_to_earlier_sample() {
        let idx = nearest_indices(&[0.100], &[0.098, 0.102]).unwrap();
        assert_eq!(idx, vec![0]);
        let idx = nearest_indices(&[0.1005], &[0.098, 0.102]).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn single_force_sample_labels_everything() {
        let oct = OctStream {
            scans: (0..5).map(|i| AScan { t: i as f64, depth: vec![0.0; 3] }).collect(),
        };
        let force = ForceStream { samples: vec![ForceSample { t: 2.2, f: 42.0 }] };
        let out = match_streams(oct, &force).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|s| s.f == 42.0));
    }

    #[test]
    fn empty_and_unsorted_streams_rejected() {
        assert_eq!(nearest_indices(&[], &[1.0]), Err(StreamError::Empty("oct")));
        assert_eq!(nearest_indices(&[1.0], &[]), Err(StreamError::Empty("force")));
        assert!(matches!(
            nearest_indices(&[0.0, 0.2, 0.1], &[1.0]),
            Err(StreamError::Unsorted { stream: "oct", index: 2 })
        ));
        assert!(matches!(nearest_indices(&[0.0], &[1.0, 1.0]), Err(StreamError::Unsorted { .. })));
    }

    #[test]
    fn crop_cases() {
        let s: Vec<f32> = (0..512).map(|i| i as f32).collect();
        assert_eq!(crop_scan(&s, 512).unwrap(), s);
        let c = crop_scan(&s, 70).unwrap();
        assert_eq!(c.len(), 70);
        assert_eq!(c[..], s[..70]);
        assert_eq!(crop_scan(&c, 20).unwrap(), crop_scan(&s, 20).unwrap());
        assert_eq!(crop_scan(&s, 513), Err(StreamError::CropTooLarge { d_c: 513, len: 512 }));
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&labeled(50, 4), 50, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&labeled(149, 4), 50, 1).unwrap().len(), 100);
        assert_eq!(make_windows(&labeled(49, 4), 50, 1).unwrap().len(), 0);
        assert_eq!(make_windows(&labeled(100, 4), 10, 10).unwrap().len(), 10);
        assert!(make_windows(&labeled(10, 4), 0, 1).is_err());
        assert!(make_windows(&labeled(10, 4), 2, 0).is_err());
    }

    #[test]
    fn single_row_windows_keep_labels() {
        let scans = labeled(7, 3);
        let w = make_windows(&scans, 1, 1).unwrap();
        assert_eq!(w.len(), 7);
        for (s, l) in w.iter().zip(&scans) {
            assert_eq!(s.window, l.scan);
            assert_eq!(s.label, l.f);
        }
    }

    #[test]
    fn label_is_last_row() {
        let w = make_windows(&labeled(20, 2), 5, 3).unwrap();
        for s in &w {
            assert_eq!(s.label, (s.start + 4) as f64 * 0.5);
            assert_eq!(s.window[..2], [s.start as f32; 2]);
        }
    }

    #[test]
    fn ragged_scans_rejected() {
        let mut s = labeled(5, 3);
        s[3].scan.push(0.0);
        assert!(matches!(make_windows(&s, 2, 1), Err(StreamError::RaggedScans { index: 3, .. })));
    }

    #[test]
    fn constant_pixel_passes_through() {
        let n = Normalizer { pixel_mean: vec![0.5, 2.0], pixel_std: vec![0.0, 4.0], label_scale: 1.0 };
        let mut out = Vec::new();
        n.normalize_window_into(&[0.25, 6.0], &mut out).unwrap();
        assert_eq!(out, vec![0.25, 1.0]);
    }

    #[test]
    fn label_round_trip() {
        let n = Normalizer { pixel_mean: vec![0.0], pixel_std: vec![1.0], label_scale: 379.0 };
        for f in [0.0, 1.5, 123.456, 379.0, 1e-3] {
            assert!((n.denormalize_label(n.normalize_label(f)) - f).abs() <= 1e-12);
        }
    }
}
