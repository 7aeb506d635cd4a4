//! End-to-end properties of the training protocol on a small world.

use std::sync::OnceLock;

use acvg::actor::{Actor, ActorProvider};
use acvg::dataset::{build_clip_batch, load_dataset, save_dataset, simulate_dataset, Dataset, WorldConfig};
use acvg::evaluation::{evaluate, ActionMode, EvalConfig};
use acvg::generator::{ActionProvider, FixedProvider, Generator};
use acvg::tensor::{Graph, Tensor, Var};
use acvg::training::{init_checkpoint, run_phase, train_full, Checkpoint, Phase, PhaseConfig};
use acvg::Result;

fn cfg() -> PhaseConfig {
    PhaseConfig {
        gen_steps: 4,
        actor_steps: 4,
        dual_steps: 4,
        batch_size: 2,
        past: 3,
        horizon: 4,
        seed: 2,
        gen_widths: [4, 4, 6],
        actor_conv_widths: [3, 3],
        actor_dense: 6,
        disc_widths: [3, 3, 3, 3],
        ..PhaseConfig::default()
    }
}

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| simulate_dataset(&WorldConfig { sprite_count: 8, ..WorldConfig::default() }, 10, 50, 4).unwrap())
}

fn trained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| train_full(&cfg(), data(), None, &mut Vec::new()).unwrap())
}

/// Actor provider that adds `delta` to the action it feeds at one step.
struct Nudged {
    inner: ActorProvider,
    at: usize,
    delta: f32,
}

impl ActionProvider<f32> for Nudged {
    fn next_action(&mut self, g: &mut Graph<f32>, step: usize) -> Result<Var> {
        let a = self.inner.next_action(g, step)?;
        if step != self.at {
            return Ok(a);
        }
        let shape = g.shape(a).to_vec();
        let n = shape.iter().product();
        let d = g.constant(Tensor::new(shape, vec![self.delta; n])?);
        g.add(a, d)
    }

    fn observe(&mut self, g: &mut Graph<f32>, step: usize, chi: Var) -> Result<()> {
        self.inner.observe(g, step, chi)
    }
}

fn coupled_frames(ckpt: &Checkpoint, at: usize, delta: f32) -> Vec<Vec<f32>> {
    let model = &ckpt.model;
    let batch = build_clip_batch(&data().test[0], 3, 6, 5).unwrap();
    let mut g = Graph::new();
    let c = |g: &mut Graph<f32>, ts: &[Tensor<f32>]| ts.iter().map(|t| g.constant(t.clone())).collect::<Vec<_>>();
    let (frames, flows, actions) = (c(&mut g, &batch.frames[..3]), c(&mut g, &batch.flows[..3]), c(&mut g, &batch.actions[..3]));
    let gen = Generator::bind_frozen(&model.cfg.gen, &model.gen, &mut g).unwrap();
    let actor = Actor::bind_frozen(&model.cfg.actor, &model.actor, &mut g).unwrap();
    let state = gen.warmup(&mut g, &frames, &flows, &actions).unwrap();
    let inner = ActorProvider::new(&mut g, actor, &actions).unwrap();
    let mut provider = Nudged { inner, at, delta };
    let out = gen.rollout(&mut g, state, &mut provider, 6).unwrap();
    out.frames.iter().map(|&v| g.data(v).to_vec()).collect()
}

#[test]
fn perturbed_actor_output_only_moves_later_frames() {
    let base = coupled_frames(trained(), 0, 0.0);
    // The action fed at step t is the actor's ã_t; it first shapes x̃_{t+1}.
    for t in 1..6 {
        let moved = coupled_frames(trained(), t, 0.3);
        assert_eq!(moved[..t], base[..t], "step {t}");
        assert_ne!(moved[t], base[t], "step {t}");
    }
}

#[test]
fn fixed_provider_returns_a0_at_every_step() {
    let a0 = Tensor::new(vec![2, 2], vec![0.25f32, -0.5, 0.125, 1.0]).unwrap();
    let mut p = FixedProvider::new(a0.clone());
    let mut g = Graph::<f32>::new();
    for step in 0..10 {
        let a = p.next_action(&mut g, step).unwrap();
        assert_eq!(g.data(a), a0.data());
    }
}

#[test]
fn reloaded_checkpoint_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    trained().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    for mode in [ActionMode::Actor, ActionMode::Fixed] {
        let eval = EvalConfig { mode, windows_per_clip: 2, ..EvalConfig::default() };
        let a = evaluate(&trained().model, &data().test, &eval).unwrap();
        let b = evaluate(&back.model, &data().test, &eval).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn phase_by_phase_through_files_matches_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), data()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(&loaded, data());

    let mut log = Vec::new();
    let mut ckpt = init_checkpoint(&cfg(), &loaded).unwrap();
    for phase in Phase::ALL {
        run_phase(&mut ckpt, &cfg(), &loaded, phase, &mut log).unwrap();
        let path = dir.path().join(format!("{}.ckpt", phase.name()));
        ckpt.save(&path).unwrap();
        ckpt = Checkpoint::load(&path).unwrap();
    }
    let mut full_log = Vec::new();
    let full = train_full(&cfg(), data(), None, &mut full_log).unwrap();
    assert_eq!(log, full_log);
    assert_eq!(ckpt.to_bytes().unwrap(), full.to_bytes().unwrap());
}

#[test]
fn mismatched_window_config_is_rejected() {
    let mut ckpt = trained().clone();
    let other = PhaseConfig { horizon: 5, ..cfg() };
    let err = run_phase(&mut ckpt, &other, data(), Phase::Dual, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, acvg::Error::Config(_)), "{err}");
}
