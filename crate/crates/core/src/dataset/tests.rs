use proptest::prelude::*;

use super::*;

fn tiny_world() -> WorldConfig {
    WorldConfig { height: 16, width: 16, texture_size: 64, ..WorldConfig::default() }
}

fn static_world(policy: Policy, camera: CameraMode) -> WorldConfig {
    WorldConfig { sprite_speed: (0.0, 0.0), policy, camera, ..tiny_world() }
}

fn record(frames: Vec<Vec<f32>>) -> SequenceRecord {
    let t = frames.len();
    SequenceRecord {
        height: 1,
        width: frames[0].len(),
        channels: 1,
        frames,
        actions_raw: (0..t).map(|i| vec![0.01 * (i % 10) as f32, -1.0 + 0.1 * (i % 20) as f32]).collect(),
        dt: 0.1,
        normalizer: ActionNormalizer::default(),
    }
}

fn counting(t: usize) -> SequenceRecord {
    record((0..t).map(|i| vec![i as f32 / t as f32, 0.5]).collect())
}

#[test]
fn hold_policy_in_a_static_world_renders_identical_frames() {
    let seq = simulate_sequence(&static_world(Policy::Hold, CameraMode::Unicycle), 3, 12).unwrap();
    assert!(seq.frames.iter().all(|f| f == &seq.frames[0]));
    assert!(seq.flows().iter().flatten().all(|&v| v == 0.0));
    assert!(seq.actions_raw.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn translate_mode_shifts_frames_by_the_travelled_distance() {
    // 0.1 m/s for 0.1 s at 100 px/m is one pixel per frame.
    let cfg = static_world(Policy::Constant { v: 0.1, omega: 0.0 }, CameraMode::Translate);
    let seq = simulate_sequence(&cfg, 11, 8).unwrap();
    let shift = cfg.pixels_per_meter * 0.1 * cfg.dt;
    assert!((shift - 1.0).abs() < 1e-9);
    let (w, c) = (cfg.width, cfg.channels);
    for t in 0..seq.len() - 1 {
        assert_eq!(seq.actions_raw[t], vec![0.1f32, 0.0]);
        let (cur, next) = (&seq.frames[t], &seq.frames[t + 1]);
        let mut worst = 0.0f32;
        for r in 1..cfg.height {
            for i in 0..w * c {
                worst = worst.max((next[r * w * c + i] - cur[(r - 1) * w * c + i]).abs());
            }
        }
        assert!(worst < 0.05, "frame {t}: max shift mismatch {worst}");
    }
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let cfg = tiny_world();
    let a = simulate_sequence(&cfg, 5, 10).unwrap();
    let b = simulate_sequence(&cfg, 5, 10).unwrap();
    let c = simulate_sequence(&cfg, 6, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.frames, c.frames);
}

#[test]
fn simulation_rejects_short_sequences() {
    assert!(matches!(simulate_sequence(&tiny_world(), 0, 1), Err(Error::InvalidLength(_))));
    assert!(simulate_sequence(&tiny_world(), 0, 2).is_ok());
}

#[test]
fn default_world_turns_within_a_clip() {
    let seq = simulate_sequence(&WorldConfig { texture_size: 128, ..WorldConfig::default() }, 1, CLIP_LEN).unwrap();
    let omegas: Vec<f32> = seq.actions_raw.iter().map(|a| a[1]).collect();
    let lo = omegas.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = omegas.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    assert!(hi - lo > 0.5, "turn rate barely varies: [{lo}, {hi}]");
    assert!(seq.frames.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn flow_examples() {
    assert_eq!(compute_flow(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
    let o = compute_flow(&[0.7], &[0.5]).unwrap();
    assert!((o[0] - 0.2).abs() < 1e-6);
    assert!(matches!(compute_flow(&[0.1], &[0.1, 0.2]), Err(Error::InvalidShape(_))));
}

#[test]
fn normalizer_examples() {
    let n = ActionNormalizer::default();
    // 0.05 is not representable in 32 bits; the midpoint lands within rounding.
    let mid = n.normalize(&[0.05, 1.8]);
    assert!(mid[0].abs() < 1e-6 && mid[1] == 1.0, "{mid:?}");
    assert_eq!(n.normalize(&[0.1, -1.8]), vec![1.0, -1.0]);
    assert_eq!(n.normalize(&[0.0, 0.0]), vec![-1.0, 0.0]);
    // Out of range is clamped.
    assert_eq!(n.normalize(&[0.5, -9.0]), vec![1.0, -1.0]);
    assert!(ActionNormalizer::new(vec![(1.0, 1.0)]).is_err());
}

#[test]
fn clip_extraction_follows_the_fifty_plus_ten_grid() {
    assert_eq!(make_clips(&counting(50), CLIP_LEN, CLIP_GAP).len(), 1);
    let two = make_clips(&counting(110), CLIP_LEN, CLIP_GAP);
    assert_eq!(two.len(), 2);
    assert_eq!(two[1].frames[0], counting(110).frames[60]);
    assert!(make_clips(&counting(49), CLIP_LEN, CLIP_GAP).is_empty());
    assert_eq!(clip_offsets(170, CLIP_LEN, CLIP_GAP).collect::<Vec<_>>(), vec![0, 60, 120]);
}

#[test]
fn subsampling_keeps_every_other_frame() {
    let clip = counting(30);
    let sub = subsample_dt(&clip, 2).unwrap();
    assert_eq!(sub.len(), 15);
    for (k, f) in sub.frames.iter().enumerate() {
        assert_eq!(f, &clip.frames[2 * k]);
        assert_eq!(sub.actions_raw[k], clip.actions_raw[2 * k]);
    }
    assert!((sub.dt - 0.2).abs() < 1e-12);
    assert_eq!(subsample_dt(&clip, 1).unwrap(), clip);
    assert!(matches!(subsample_dt(&counting(2), 2), Err(Error::InvalidLength(_))));
}

#[test]
fn subsampled_flows_are_recomputed_on_kept_frames() {
    let seq = simulate_sequence(&tiny_world(), 2, 9).unwrap();
    let sub = subsample_dt(&seq, 2).unwrap();
    let flows = sub.flows();
    for k in 1..sub.len() {
        for (i, &o) in flows[k].iter().enumerate() {
            assert_eq!(o, seq.frames[2 * k][i] - seq.frames[2 * k - 2][i]);
        }
    }
}

#[test]
fn clip_batch_windows() {
    let seq = simulate_sequence(&tiny_world(), 4, CLIP_LEN).unwrap();
    let b = build_clip_batch(&seq, 5, 10, 35).unwrap();
    assert_eq!(b.len(), 15);
    assert_eq!(b.frames[0].shape(), &[1, 3, 16, 16]);
    assert!(b.flows[0].data().iter().all(|&v| v == 0.0));
    for k in 1..b.len() {
        for ((x, p), o) in b.frames[k].data().iter().zip(b.frames[k - 1].data()).zip(b.flows[k].data()) {
            assert!((p + o - x).abs() < 1e-6);
        }
    }
    assert!(matches!(build_clip_batch(&seq, 5, 10, 36), Err(Error::Window(_))));
    assert!(matches!(build_clip_batch(&seq, 1, 10, 0), Err(Error::InsufficientHistory(1))));
    assert!(build_clip_batch(&seq, 2, 1, 0).is_ok());
}

#[test]
fn clip_batch_layout_matches_the_record() {
    let seq = simulate_sequence(&tiny_world(), 4, 6).unwrap();
    let b = build_clip_batch(&seq, 2, 2, 1).unwrap();
    let (h, w, c) = (seq.height, seq.width, seq.channels);
    assert_eq!(chw_to_hwc(b.frames[1].data(), h, w, c), seq.frames[2]);
    // pixel (y=3, x=5), channel 2
    assert_eq!(b.frames[0].data()[(2 * h + 3) * w + 5], seq.frames[1][(3 * w + 5) * c + 2]);
    assert_eq!(b.actions[3].data(), seq.normalizer.normalize(&seq.actions_raw[4]).as_slice());

    let stacked = ClipBatch::stack(&[b.clone(), build_clip_batch(&seq, 2, 2, 0).unwrap()]).unwrap();
    assert_eq!(stacked.batch_size(), 2);
    assert_eq!(stacked.frames[0].shape(), &[2, 3, h, w]);
    assert_eq!(&stacked.frames[0].data()[..h * w * c], b.frames[0].data());
}

#[test]
fn dataset_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<_> = (0..5).map(|s| simulate_sequence(&tiny_world(), s, 6).unwrap()).collect();
    let data = Dataset::split(records);
    assert_eq!((data.train.len(), data.test.len()), (4, 1));
    save_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
    for (a, b) in back.train.iter().flat_map(|s| s.frames.iter().flatten()).zip(data.train.iter().flat_map(|s| s.frames.iter().flatten())) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn split_ratio_is_twenty_to_five() {
    let recs = vec![counting(3); 25];
    let d = Dataset::split(recs);
    assert_eq!((d.train.len(), d.test.len()), (20, 5));
}

#[test]
fn truncated_frame_file_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let seq = simulate_sequence(&tiny_world(), 0, 3).unwrap();
    save_sequence(dir.path(), &seq).unwrap();
    let path = dir.path().join("frames.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Corruption(_))));
    std::fs::write(&path, b"NOPE").unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Format(_))));
}

#[test]
fn ppm_ingestion_matches_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<_> = (0..2).map(|s| simulate_sequence(&tiny_world(), s, 4).unwrap()).collect();
    export_external(dir.path(), &records).unwrap();
    let back = ingest_external(dir.path()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.actions_raw, b.actions_raw);
        assert_eq!((a.height, a.width, a.channels), (b.height, b.width, b.channels));
        for (x, y) in a.frames.iter().flatten().zip(b.frames.iter().flatten()) {
            assert!((x - y).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn short_action_file_names_file_and_expected_lines() {
    let dir = tempfile::tempdir().unwrap();
    let seq = simulate_sequence(&tiny_world(), 0, 4).unwrap();
    let dirs = export_external(dir.path(), &[seq]).unwrap();
    std::fs::write(dirs[0].join("actions.txt"), "0 0\n0 0\n").unwrap();
    match ingest_external(dir.path()) {
        Err(Error::Ingestion { path, reason }) => {
            assert!(path.ends_with("actions.txt"));
            assert!(reason.contains("expected 4 lines"), "{reason}");
        }
        other => panic!("expected ingestion error, got {other:?}"),
    }
    std::fs::remove_file(dirs[0].join("actions.txt")).unwrap();
    let err = ingest_external(dir.path()).unwrap_err().to_string();
    assert!(err.contains("actions.txt") && err.contains("expected 4 lines"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_actions_respect_bounds_and_slew(seed in any::<u64>()) {
        let cfg = WorldConfig { texture_size: 32, height: 8, width: 8, ..WorldConfig::default() };
        let seq = simulate_sequence(&cfg, seed, 40).unwrap();
        for a in &seq.actions_raw {
            for (v, &(lo, hi)) in a.iter().zip(cfg.normalizer.ranges()) {
                prop_assert!(*v as f64 >= lo - 1e-6 && *v as f64 <= hi + 1e-6);
            }
        }
        for w in seq.actions_raw.windows(2) {
            for d in 0..2 {
                prop_assert!(((w[1][d] - w[0][d]) as f64).abs() <= cfg.slew[d] + 1e-6);
            }
        }
        let flows = seq.flows();
        prop_assert!(flows[0].iter().all(|&v| v == 0.0));
        for t in 1..seq.len() {
            for i in 0..seq.frame_len() {
                prop_assert_eq!(flows[t][i], seq.frames[t][i] - seq.frames[t - 1][i]);
            }
        }
    }
}

proptest! {
    #[test]
    fn normalization_round_trips(v in 0.0f32..=0.1, w in -1.8f32..=1.8) {
        let n = ActionNormalizer::default();
        let a = n.normalize(&[v, w]);
        prop_assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        let back = n.denormalize(&a);
        prop_assert!((back[0] - v).abs() < 1e-6 && (back[1] - w).abs() < 1e-6);
    }

    #[test]
    fn clip_starts_are_evenly_spaced(len in 0usize..400, clip_len in 1usize..60, gap in 0usize..20) {
        let offs: Vec<usize> = clip_offsets(len, clip_len, gap).collect();
        for (i, &s) in offs.iter().enumerate() {
            prop_assert_eq!(s, i * (clip_len + gap));
            prop_assert!(s + clip_len <= len);
        }
        let next = offs.len() * (clip_len + gap);
        prop_assert!(next + clip_len > len);
    }
}
