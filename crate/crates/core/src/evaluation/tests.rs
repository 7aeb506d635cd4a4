use std::sync::OnceLock;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::dataset::{simulate_dataset, Dataset, WorldConfig};
use crate::training::{init_checkpoint, PhaseConfig};

fn noise_frame(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = seed::rng(seed, "eval-test", 0);
    (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Direct 2D windowed SSIM with the same constants, written independently of
/// the separable implementation.
fn reference_ssim(x: &[f32], y: &[f32], c: usize, h: usize, w: usize) -> f64 {
    let k = 11usize;
    let mut win = vec![0.0f64; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / 4.5).exp();
        }
    }
    let norm: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= norm);
    let (c1, c2) = (0.0001, 0.0009);
    let mut scores = Vec::new();
    for ch in 0..c {
        let px = |f: &[f32], r: usize, q: usize| f[(ch * h + r) * w + q] as f64;
        for r0 in 0..=h - k {
            for q0 in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = win[i * k + j];
                        let (a, b) = (px(x, r0 + i, q0 + j), px(y, r0 + i, q0 + j));
                        mx += wt * a;
                        my += wt * b;
                        sxx += wt * a * a;
                        syy += wt * b * b;
                        sxy += wt * a * b;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                scores.push((2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
            }
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn psnr_cap_and_closed_form() {
    let x = noise_frame(300, 1);
    assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    let zeros = vec![0.0f32; 100];
    let mut one = zeros.clone();
    one[37] = 1.0;
    assert!((psnr(&zeros, &one).unwrap() - 20.0).abs() < 1e-12);
    assert!(matches!(psnr(&x, &x[1..]), Err(Error::InvalidShape(_))));
}

#[test]
fn psnr_matches_direct_formula() {
    for seed in 0..5 {
        let (x, y) = (noise_frame(3 * 32 * 32, seed), noise_frame(3 * 32 * 32, seed + 100));
        let mut mse = 0.0;
        for i in 0..x.len() {
            let d = x[i] as f64 - y[i] as f64;
            mse += d * d;
        }
        mse /= x.len() as f64;
        let direct = -10.0 * mse.log10();
        assert!((psnr(&x, &y).unwrap() - direct).abs() < 1e-9);
    }
}

#[test]
fn ssim_identity_symmetry_and_reference() {
    let (c, h, w) = (3, 16, 16);
    for seed in 0..3 {
        let x = noise_frame(c * h * w, seed);
        let y: Vec<f32> = x.iter().zip(noise_frame(c * h * w, seed + 9)).map(|(a, b)| 0.7 * a + 0.3 * b).collect();
        assert!((ssim(&x, &x, c, h, w).unwrap() - 1.0).abs() < 1e-9);
        let (xy, yx) = (ssim(&x, &y, c, h, w).unwrap(), ssim(&y, &x, c, h, w).unwrap());
        assert!((xy - yx).abs() < 1e-12);
        assert!((xy - reference_ssim(&x, &y, c, h, w)).abs() < 1e-6, "seed {seed}");
        assert!((-1.0..=1.0).contains(&xy));
    }
    let small = noise_frame(10 * 10, 3);
    assert!(matches!(ssim(&small, &small, 1, 10, 10), Err(Error::InvalidGeometry(_))));
}

#[test]
fn metrics_degrade_with_noise_amplitude() {
    let (c, h, w) = (3, 32, 32);
    let x: Vec<f32> = noise_frame(c * h * w, 4).iter().map(|v| 0.25 + 0.5 * v).collect();
    let base = noise_frame(c * h * w, 5);
    let mut last = (PSNR_CAP, 1.0);
    for amp in [0.05f32, 0.1, 0.2] {
        let y: Vec<f32> = x.iter().zip(&base).map(|(a, n)| a + amp * (2.0 * n - 1.0)).collect();
        let now = (psnr(&x, &y).unwrap(), ssim(&x, &y, c, h, w).unwrap());
        assert!(now.0 < last.0 && now.1 < last.1, "amplitude {amp}");
        last = now;
    }
}

#[test]
fn action_curve_examples_and_loop_oracle() {
    let a = vec![vec![0.1, -0.2], vec![0.3, 0.4]];
    assert_eq!(action_l2_curve(&a, &a).unwrap(), vec![0.0, 0.0]);
    assert!((action_l2_curve(&[vec![0.5]], &[vec![0.3]]).unwrap()[0] - 0.2).abs() < 1e-9);
    assert!(matches!(action_l2_curve(&a, &a[..1]), Err(Error::InvalidLength(_))));
    let mut rng = seed::rng(6, "eval-test", 1);
    let mut draw = || (0..7).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect::<Vec<_>>();
    let (p, q) = (draw(), draw());
    let curve = action_l2_curve(&p, &q).unwrap();
    for t in 0..7 {
        let dx = p[t][0] - q[t][0];
        let dy = p[t][1] - q[t][1];
        assert!((curve[t] - (dx * dx + dy * dy).sqrt()).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn metric_csv_parses_back_exactly(vals in prop::collection::vec(-1e6f64..1e6, 8), t in 1usize..100) {
        let row = MetricRow::from_fields(t, vals.clone().try_into().unwrap());
        let rows = vec![row.clone(), MetricRow { t: t + 1, ..row }];
        prop_assert_eq!(parse_metrics_csv(&metrics_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn ssim_stays_in_range(seed in 0u64..1000, mix in 0.0f32..1.0) {
        let x = noise_frame(12 * 12, seed);
        let y: Vec<f32> = x.iter().zip(noise_frame(12 * 12, seed + 1)).map(|(a, b)| mix * a + (1.0 - mix) * (1.0 - b)).collect();
        let s = ssim(&x, &y, 1, 12, 12).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| simulate_dataset(&WorldConfig { sprite_count: 6, ..WorldConfig::default() }, 10, 50, 8).unwrap())
}

fn model() -> Model {
    let cfg = PhaseConfig {
        gen_widths: [3, 4, 4],
        actor_conv_widths: [3, 3],
        actor_dense: 6,
        disc_widths: [3, 3, 3, 3],
        ..PhaseConfig::default()
    };
    init_checkpoint(&cfg, data()).unwrap().model
}

fn small(mode: ActionMode) -> EvalConfig {
    EvalConfig { mode, windows_per_clip: 2, ..EvalConfig::default() }
}

#[test]
fn untrained_model_gives_finite_rows_for_every_mode() {
    let m = model();
    for mode in [ActionMode::Actor, ActionMode::GroundTruth, ActionMode::Fixed] {
        let e = evaluate(&m, &data().test, &small(mode)).unwrap();
        assert_eq!(e.rows.len(), EVAL_HORIZON);
        assert_eq!(e.rows.iter().map(|r| r.t).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
        assert_eq!(e.windows.len(), 4);
        for r in &e.rows {
            assert!(r.fields().iter().all(|v| v.is_finite()), "{mode:?} {r:?}");
        }
        if mode == ActionMode::GroundTruth {
            assert!(e.rows.iter().all(|r| r.action_l2_mean == 0.0));
        }
    }
}

#[test]
fn evaluation_repeats_bitwise_and_seed_moves_windows() {
    let m = model();
    let a = evaluate(&m, &data().test, &small(ActionMode::Actor)).unwrap();
    let b = evaluate(&m, &data().test, &small(ActionMode::Actor)).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&m, &data().test, &EvalConfig { seed: 1, ..small(ActionMode::Actor) }).unwrap();
    assert_ne!(a.windows, c.windows);
}

#[test]
fn fixed_mode_holds_a0() {
    let e = evaluate(&model(), &data().test, &small(ActionMode::Fixed)).unwrap();
    let clips = eval_clips(&data().test, 1).unwrap();
    for (trace, &(ci, offset)) in e.fed.iter().zip(&e.windows) {
        let a0 = clips[ci].normalizer.normalize(&clips[ci].actions_raw[offset + EVAL_PAST - 1]);
        assert_eq!(trace.len(), EVAL_HORIZON);
        assert!(trace.iter().all(|a| *a == a0));
    }
}

#[test]
fn zero_noise_equals_clean_run() {
    let m = model();
    for mode in [ActionMode::Actor, ActionMode::Fixed, ActionMode::GroundTruth] {
        let clean = evaluate(&m, &data().test, &small(mode)).unwrap();
        let zero = evaluate(&m, &data().test, &EvalConfig { noise: Some(0.0), ..small(mode) }).unwrap();
        assert_eq!(clean, zero);
        let noisy = evaluate(&m, &data().test, &EvalConfig { noise: Some(NOISE_SIGMA), ..small(mode) }).unwrap();
        assert_ne!(clean.fed, noisy.fed);
        assert!(noisy.fed.iter().flatten().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn horizon_beyond_clip_is_a_window_error() {
    let m = model();
    let cfg = EvalConfig { horizon: 46, ..small(ActionMode::Fixed) };
    assert!(matches!(evaluate(&m, &data().test, &cfg), Err(Error::Window(_))));
    let cfg = EvalConfig { dt_factor: 2, horizon: 21, ..small(ActionMode::Fixed) };
    assert!(matches!(evaluate(&m, &data().test, &cfg), Err(Error::Window(_))));
}

#[test]
fn frames_are_dumped_as_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EvalConfig { horizon: 3, windows_per_clip: 1, dump_frames: Some(dir.path().to_path_buf()), ..small(ActionMode::Fixed) };
    evaluate(&model(), &data().test, &cfg).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["w0000_t01.ppm", "w0000_t02.ppm", "w0000_t03.ppm", "w0001_t01.ppm", "w0001_t02.ppm", "w0001_t03.ppm"]);
}

#[test]
fn ablation_runs_modes_over_seeds() {
    let m = model();
    let cfg = AblationConfig { seeds: 2, windows_per_clip: 1, ..AblationConfig::default() };
    let runs = run_ablation(Some(&m), Some(&m), &data().test, &cfg).unwrap();
    let names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["full", "fixed", "dt2_full", "dt2_fixed", "noise_full", "noise_fixed"]);
    for r in &runs {
        assert_eq!(r.per_seed.len(), 2);
        let horizon = if r.name.starts_with("dt2") { DT2_HORIZON } else { EVAL_HORIZON };
        assert_eq!(r.average.len(), horizon);
        let mean = (r.per_seed[0][4].psnr_mean + r.per_seed[1][4].psnr_mean) / 2.0;
        assert_eq!(r.average[4].psnr_mean, mean);
    }
    let dir = tempfile::tempdir().unwrap();
    write_ablation(dir.path(), &runs).unwrap();
    let avg = std::fs::read_to_string(dir.path().join("noise_fixed_avg.csv")).unwrap();
    assert_eq!(parse_metrics_csv(&avg).unwrap(), runs[5].average);
    assert!(dir.path().join("dt2_full_seed1.csv").exists());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6 * 4);
    assert!(summary.starts_with("mode,metric,value\nfull,psnr,"));

    let only_fa = AblationConfig { modes: vec![AblationMode::Fixed, AblationMode::Full], ..cfg };
    assert!(matches!(run_ablation(None, Some(&m), &data().test, &only_fa), Err(Error::Checkpoint(_))));
    assert!("sideways".parse::<AblationMode>().is_err());
}
