use std::collections::HashMap;

use octforce::dataset::{load, read_header, save, split, stats, DatasetHeader, SplitSpec, Splits, MAGIC};
use octforce::streams::SequenceSample;
use octforce::DatasetError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(n: usize, t_s: usize, d_c: usize, stride: usize, seed: u64) -> Vec<SequenceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| SequenceSample {
            window: (0..t_s * d_c).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
            label: rng.random_range(0.0..3202.0),
            start: i * stride,
        })
        .collect()
}

fn bits(s: &[SequenceSample]) -> Vec<(u64, Vec<u32>, usize)> {
    s.iter().map(|x| (x.label.to_bits(), x.window.iter().map(|v| v.to_bits()).collect(), x.start)).collect()
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let mut samples = random_samples(37, 5, 7, 3, 1);
    samples[0].window[0] = f32::MIN_POSITIVE / 4.0;
    samples[1].window[1] = -0.0;
    samples[2].label = f64::MAX;
    let header = DatasetHeader::new(5, 7, 3, "needle2", 99);
    let written = save(&samples, &header, &path).unwrap();
    assert_eq!(written.n_samples, 37);
    let (h, back) = load(&path).unwrap();
    assert_eq!(h, written);
    assert_eq!(h.label_units, "mN");
    assert_eq!(bits(&back), bits(&samples));
    assert_eq!(read_header(&path).unwrap(), h);

    let size = std::fs::metadata(&path).unwrap().len();
    let payload = 37 * (8 + 4 * 35);
    let header_len = 8 + 2 + 12 + 8 + 8 + 2 + 7 + 2 + 2 + 8;
    assert_eq!(size, header_len + payload);
}

#[test]
fn payload_layout_is_label_then_time_major_window() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let s = SequenceSample { window: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], label: 12.5, start: 0 };
    save(std::slice::from_ref(&s), &DatasetHeader::new(2, 3, 1, "p", 0), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let rec = &bytes[bytes.len() - 32..];
    assert_eq!(f64::from_le_bytes(rec[..8].try_into().unwrap()), 12.5);
    let vals: Vec<f32> = rec[8..].chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals, s.window);
}

#[test]
fn truncation_and_trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save(&random_samples(4, 2, 3, 1, 2), &DatasetHeader::new(2, 3, 1, "p", 0), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load(&path), Err(DatasetError::Truncated { .. })));

    let mut longer = bytes.clone();
    longer.push(0);
    std::fs::write(&path, &longer).unwrap();
    assert!(matches!(load(&path), Err(DatasetError::TrailingBytes { extra: 1, .. })));

    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(matches!(load(&path), Err(DatasetError::MalformedHeader(_))));
}

#[test]
fn every_mutated_header_byte_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let samples = random_samples(3, 2, 2, 1, 3);
    save(&samples, &DatasetHeader::new(2, 2, 1, "needle1", 4), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header_len = bytes.len() - 3 * (8 + 16);
    for i in 0..header_len {
        for flip in [0x01u8, 0x80] {
            let mut m = bytes.clone();
            m[i] ^= flip;
            std::fs::write(&path, &m).unwrap();
            let err = load(&path).expect_err(&format!("byte {i} flip {flip:#x} accepted"));
            match i {
                0..8 => assert!(matches!(err, DatasetError::BadMagic)),
                8..10 => assert!(matches!(err, DatasetError::VersionMismatch { .. })),
                _ => {}
            }
        }
    }
}

#[test]
fn distinct_errors_for_magic_version_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save(&random_samples(1, 1, 1, 1, 0), &DatasetHeader::new(1, 1, 1, "p", 0), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[..8].copy_from_slice(b"NOTADATA");
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load(&path), Err(DatasetError::BadMagic)));
    bytes[..8].copy_from_slice(MAGIC);
    bytes[8..10].copy_from_slice(&7u16.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load(&path), Err(DatasetError::VersionMismatch { found: 7, expected: 1 })));
    assert!(matches!(load(&dir.path().join("nope.bin")), Err(DatasetError::Io { .. })));
}

#[test]
fn ninety_thousand_samples_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.bin");
    let samples = random_samples(90_000, 1, 2, 1, 8);
    save(&samples, &DatasetHeader::new(1, 2, 1, "needle1", 0), &path).unwrap();
    let (h, back) = load(&path).unwrap();
    assert_eq!(h.n_samples, 90_000);
    assert_eq!(back.len(), 90_000);
    assert_eq!(back[89_999].window, samples[89_999].window);
}

#[test]
fn window_size_checked_on_write() {
    let dir = tempfile::tempdir().unwrap();
    let s = SequenceSample { window: vec![0.0; 5], label: 0.0, start: 0 };
    let err = save(&[s], &DatasetHeader::new(2, 3, 1, "p", 0), &dir.path().join("x.bin")).unwrap_err();
    assert!(matches!(err, DatasetError::WindowSize { expected: 6, found: 5, .. }));
}

fn windows(n: usize, t_s: usize, stride: usize) -> Vec<SequenceSample> {
    (0..n).map(|i| SequenceSample { window: vec![i as f32; t_s], label: i as f64, start: i * stride }).collect()
}

/// Which split claims each raw scan index; panics on a double claim.
fn scan_owners(s: &Splits, t_s: usize) -> HashMap<usize, &'static str> {
    let mut owner = HashMap::new();
    for (name, block) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        for w in block {
            for idx in w.start..w.start + t_s {
                if let Some(prev) = owner.insert(idx, name) {
                    assert_eq!(prev, name, "scan {idx} in {prev} and {name}");
                }
            }
        }
    }
    owner
}

#[test]
fn disjoint_windows_split_without_drops() {
    let s = split(windows(100, 10, 10), &SplitSpec::default(), 10).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len(), s.dropped), (64, 16, 20, 0));
}

#[test]
fn overlapping_windows_lose_t_s_minus_one_per_cut() {
    for t_s in [1, 2, 5, 50] {
        let s = split(windows(2000, 1, 1), &SplitSpec::default(), t_s).unwrap();
        assert_eq!(s.dropped, 2 * (t_s - 1), "t_s={t_s}");
        assert_eq!(s.train.len(), 1280);
        assert_eq!(s.val.len(), 320 - (t_s - 1));
        assert_eq!(s.test.len(), 400 - (t_s - 1));
        scan_owners(&s, t_s);
    }
}

#[test]
fn paper_scale_test_fraction() {
    let s = split(windows(90_000, 1, 1), &SplitSpec::default(), 50).unwrap();
    assert_eq!(s.test.len(), 18_000 - 49);
    assert_eq!(s.train.len() + s.val.len() + s.test.len() + s.dropped, 90_000);
}

#[test]
fn exhaustive_non_overlap_on_2k_samples() {
    for (t_s, stride) in [(50, 1), (50, 7), (10, 3), (4, 4), (13, 20)] {
        let s = split(windows(2000, 1, stride), &SplitSpec::default(), t_s).unwrap();
        let owners = scan_owners(&s, t_s);
        assert!(!owners.is_empty());
        // kept windows stay in time order and nothing else was lost
        let starts: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).map(|w| w.start).collect();
        assert!(starts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(starts.len() + s.dropped, 2000);
        let expected_drop = 2 * ((t_s - 1) / stride);
        assert_eq!(s.dropped, expected_drop, "t_s={t_s} stride={stride}");
    }
}

proptest! {
    #[test]
    fn splits_never_share_scans(
        n in 30usize..400,
        t_s in 1usize..12,
        stride in 1usize..6,
        train in 0.3f64..0.7,
        val in 0.1f64..0.2,
    ) {
        let spec = SplitSpec::new(train, val, 1.0 - train - val).unwrap();
        if let Ok(s) = split(windows(n, 1, stride), &spec, t_s) {
            scan_owners(&s, t_s);
            prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len() + s.dropped, n);
        }
    }
}

#[test]
fn split_errors() {
    assert!(matches!(SplitSpec::new(0.5, 0.5, 0.0), Err(DatasetError::InvalidSplit(_))));
    assert!(matches!(SplitSpec::new(0.5, 0.3, 0.3), Err(DatasetError::InvalidSplit(_))));
    assert!(matches!(split(windows(2, 1, 1), &SplitSpec::default(), 1), Err(DatasetError::EmptySplit(_))));
    // val block swallowed by the overlap with train
    assert!(matches!(split(windows(20, 1, 1), &SplitSpec::default(), 10), Err(DatasetError::EmptySplit(_))));
    let mut w = windows(50, 1, 1);
    w.swap(3, 4);
    assert!(matches!(split(w, &SplitSpec::default(), 1), Err(DatasetError::InvalidSplit(_))));
}

fn two_pass(samples: &[SequenceSample], d_c: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&[f32]> = samples.iter().flat_map(|s| s.window.chunks(d_c)).collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d_c).map(|j| rows.iter().map(|r| r[j] as f64).sum::<f64>() / n).collect();
    let std = (0..d_c)
        .map(|j| (rows.iter().map(|r| (r[j] as f64 - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

#[test]
fn single_pass_stats_match_two_pass_oracle() {
    let mut samples = random_samples(300, 4, 9, 1, 12);
    for s in &mut samples {
        for v in &mut s.window {
            *v += 1000.0;
        }
    }
    let st = stats(&samples, 9).unwrap();
    let (mean, std) = two_pass(&samples, 9);
    for j in 0..9 {
        assert!((st.pixel_mean[j] - mean[j]).abs() <= 1e-9 * mean[j].abs());
        assert!((st.pixel_std[j] - std[j]).abs() <= 1e-9 * std[j]);
    }
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    assert_eq!(st.label_min, labels.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(st.label_max, labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let m = labels.iter().sum::<f64>() / labels.len() as f64;
    assert!((st.label_mean - m).abs() <= 1e-9 * m);
}

#[test]
fn all_zero_stats() {
    let samples = vec![SequenceSample { window: vec![0.0; 6], label: 0.0, start: 0 }; 4];
    let st = stats(&samples, 3).unwrap();
    assert!(st.pixel_mean.iter().chain(&st.pixel_std).all(|&v| v == 0.0));
    assert_eq!((st.label_min, st.label_max, st.label_mean), (0.0, 0.0, 0.0));
    assert!(matches!(stats(&Vec::<SequenceSample>::new(), 3), Err(DatasetError::NoSamples)));
}

#[test]
fn implied_mean_force_from_published_ratio() {
    // MAE / rMAE gives mean |force| of the test set
    let implied: f64 = 1.76 / 0.0213;
    assert!((implied - 82.6).abs() < 0.05, "{implied}");
}
