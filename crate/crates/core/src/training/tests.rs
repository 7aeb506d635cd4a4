use std::sync::OnceLock;

use super::*;
use crate::dataset::{simulate_dataset, WorldConfig};

fn tiny_cfg() -> PhaseConfig {
    PhaseConfig {
        gen_steps: 3,
        actor_steps: 3,
        dual_steps: 3,
        batch_size: 2,
        past: 3,
        horizon: 3,
        seed: 5,
        gen_widths: [3, 4, 4],
        actor_conv_widths: [3, 3],
        actor_dense: 6,
        disc_widths: [3, 3, 3, 3],
        ..PhaseConfig::default()
    }
}

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let world = WorldConfig { sprite_count: 6, ..WorldConfig::default() };
        simulate_dataset(&world, 5, 50, 3).unwrap()
    })
}

fn full(cfg: &PhaseConfig) -> (Checkpoint, Vec<LossRow>) {
    let mut log = Vec::new();
    let ckpt = train_full(cfg, data(), None, &mut log).unwrap();
    (ckpt, log)
}

#[test]
fn sampler_is_seeded_and_shapes_windows() {
    let make = || WindowSampler::new(&data().train, 3, 4, seed::rng(1, "t", 0)).unwrap();
    let (mut a, mut b) = (make(), make());
    assert_eq!(a.clip_count(), 4);
    let x = a.sample(3).unwrap();
    assert_eq!(x, b.sample(3).unwrap());
    assert_eq!((x.n, x.horizon, x.frames.len()), (3, 4, 7));
    assert_eq!(x.frames[0].shape(), &[3, 3, 32, 32]);
    assert_eq!(x.actions[0].shape(), &[3, 2]);
    assert_ne!(x, a.sample(3).unwrap());
    let short: Vec<_> = data().train.iter().map(|s| s.slice(0, 30)).collect();
    assert!(matches!(WindowSampler::new(&short, 3, 4, seed::rng(1, "t", 0)), Err(Error::Data(_))));
    assert!(matches!(WindowSampler::new(&[], 3, 4, seed::rng(1, "t", 0)), Err(Error::Data(_))));
}

#[test]
fn loss_log_round_trips_with_blank_terms() {
    let rows = vec![
        LossRow { step: 1, phase: Phase::Generator, recon_image: Some(0.1), recon_flow: Some(2.5e-3), adv: Some(0.69), action: None, total: 0.1025 },
        LossRow { step: 2, phase: Phase::Actor, recon_image: None, recon_flow: None, adv: None, action: Some(1.0 / 3.0), total: 1.0 / 3.0 },
    ];
    let text = loss_csv(&rows);
    assert!(text.contains("\n2,actor,,,,"));
    assert_eq!(parse_loss_csv(&text).unwrap(), rows);
    assert!(parse_loss_csv("step,phase\n").is_err());
}

#[test]
fn zero_budgets_leave_the_initialization() {
    let cfg = PhaseConfig { gen_steps: 0, actor_steps: 0, dual_steps: 0, ..tiny_cfg() };
    let (ckpt, log) = full(&cfg);
    let init = init_checkpoint(&cfg, data()).unwrap();
    assert!(log.is_empty());
    assert_eq!(ckpt.global_step, 0);
    assert_eq!(ckpt.phases, 0b111);
    assert!(ckpt.model.gen.same_values(&init.model.gen));
    assert!(ckpt.model.actor.same_values(&init.model.actor));
    assert!(ckpt.model.disc.same_values(&init.model.disc));
}

#[test]
fn phases_touch_only_their_networks() {
    let cfg = tiny_cfg();
    let mut ckpt = init_checkpoint(&cfg, data()).unwrap();
    let mut log = Vec::new();
    let before = ckpt.model.clone();
    run_phase(&mut ckpt, &cfg, data(), Phase::Generator, &mut log).unwrap();
    assert!(ckpt.model.actor.same_values(&before.actor));
    assert!(!ckpt.model.gen.same_values(&before.gen));
    assert!(!ckpt.model.disc.same_values(&before.disc));

    let before = ckpt.model.clone();
    run_phase(&mut ckpt, &cfg, data(), Phase::Actor, &mut log).unwrap();
    assert!(ckpt.model.gen.same_values(&before.gen));
    assert!(ckpt.model.disc.same_values(&before.disc));
    assert!(!ckpt.model.actor.same_values(&before.actor));

    let before = ckpt.model.clone();
    run_phase(&mut ckpt, &cfg, data(), Phase::Dual, &mut log).unwrap();
    assert!(!ckpt.model.gen.same_values(&before.gen));
    assert!(!ckpt.model.actor.same_values(&before.actor));
    assert_eq!(ckpt.global_step, 9);
}

#[test]
fn log_terms_follow_the_gates() {
    let (_, log) = full(&tiny_cfg());
    assert_eq!(log.len(), 9);
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
    for r in &log {
        let recon = r.recon_image.is_some() && r.recon_flow.is_some() && r.adv.is_some();
        match r.phase {
            Phase::Generator => assert!(recon && r.action.is_none()),
            Phase::Actor => assert!(r.recon_image.is_none() && r.adv.is_none() && r.action == Some(r.total)),
            Phase::Dual => assert!(recon && r.action.is_some()),
        }
    }
    let g = &log[0];
    let expected = g.recon_image.unwrap() + g.recon_flow.unwrap() + 1e-4 * g.adv.unwrap();
    assert!((g.total - expected).abs() <= 1e-5 * expected.abs());
}

#[test]
fn later_phases_require_earlier_ones() {
    let cfg = tiny_cfg();
    let mut log = Vec::new();
    let mut ckpt = init_checkpoint(&cfg, data()).unwrap();
    assert!(matches!(run_phase(&mut ckpt, &cfg, data(), Phase::Actor, &mut log), Err(Error::Checkpoint(_))));
    ckpt.phases = Phase::Generator.bit();
    assert!(matches!(run_phase(&mut ckpt, &cfg, data(), Phase::Dual, &mut log), Err(Error::Checkpoint(_))));
    assert!(log.is_empty());
}

#[test]
fn training_replays_bitwise() {
    let cfg = tiny_cfg();
    let (a, log_a) = full(&cfg);
    let (b, log_b) = full(&cfg);
    assert_eq!(log_a, log_b);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let (c, _) = full(&PhaseConfig { seed: 6, ..cfg });
    assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
}

#[test]
fn checkpoint_bytes_survive_a_reload() {
    let (ckpt, _) = full(&tiny_cfg());
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!((back.global_step, back.phases, back.fingerprint), (9, 0b111, tiny_cfg().fingerprint()));
    assert_eq!(back.model.cfg, ckpt.model.cfg);
    assert!(back.model.gen.iter().all(|(_, p)| p.step == 6));
    assert!(back.model.actor.iter().all(|(_, p)| p.step == 6));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = PhaseConfig { gen_steps: 1, actor_steps: 0, dual_steps: 0, ..tiny_cfg() };
    let (ckpt, _) = full(&cfg);
    let bytes = ckpt.to_bytes().unwrap();
    for cut in [8, 9, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corruption(_))), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Corruption(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
    let mut version = bytes;
    version[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(b"ACV"), Err(Error::Format(_))));
}

#[test]
fn non_finite_data_is_a_numeric_error() {
    let mut bad = data().clone();
    for seq in &mut bad.train {
        seq.frames[10][0] = f32::NAN;
        seq.frames[30][0] = f32::NAN;
    }
    let cfg = PhaseConfig { gen_steps: 20, ..tiny_cfg() };
    let mut ckpt = init_checkpoint(&cfg, &bad).unwrap();
    let err = run_phase(&mut ckpt, &cfg, &bad, Phase::Generator, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
}

#[test]
fn phase_checkpoint_names() {
    let out = Path::new("runs/model.ckpt");
    assert_eq!(phase_checkpoint_path(out, Phase::Generator), Path::new("runs/model.ckpt.generator"));
    assert_eq!(phase_checkpoint_path(out, Phase::Actor), Path::new("runs/model.ckpt.actor"));
    assert_eq!(phase_checkpoint_path(out, Phase::Dual), out);
}
