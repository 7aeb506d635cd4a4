//! Three-phase training: generator with fixed actions, actor against a frozen
//! generator, then both coupled, with the discriminator alternating in the
//! phases that carry reconstruction terms.

mod checkpoint;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::actor::{Actor, ActorProvider};
use crate::dataset::{build_clip_batch, make_clips, ClipBatch, Dataset, SequenceRecord, CLIP_GAP, CLIP_LEN};
use crate::error::{Error, Result};
use crate::generator::{FixedProvider, Generator};
use crate::losses::{
    action_loss, adversarial_gen_loss, discriminator_loss, recon_flow_loss, recon_image_loss, total_loss,
    Discriminator, LossParts,
};
use crate::seed;
use crate::tensor::{clip_global_norm, Graph, Tensor, Var};

pub use checkpoint::{Checkpoint, Model, ModelConfig, MAGIC, VERSION};
pub use config::{Phase, PhaseConfig, PhasePlan};

/// Uniform sampler over (clip, offset) pairs of the training clips.
pub struct WindowSampler {
    clips: Vec<SequenceRecord>,
    past: usize,
    horizon: usize,
    rng: ChaCha8Rng,
}

impl WindowSampler {
    /// Cuts every sequence into clips of 50 frames with 10-frame gaps.
    pub fn new(sequences: &[SequenceRecord], past: usize, horizon: usize, rng: ChaCha8Rng) -> Result<Self> {
        let clips: Vec<SequenceRecord> = sequences
            .iter()
            .flat_map(|s| make_clips(s, CLIP_LEN, CLIP_GAP))
            .filter(|c| c.len() >= past + horizon)
            .collect();
        if clips.is_empty() {
            return Err(Error::Data(format!(
                "no {CLIP_LEN}-frame training clip in {} sequences",
                sequences.len()
            )));
        }
        Ok(Self { clips, past, horizon, rng })
    }

    pub fn clip_count(&self) -> usize {
        self.clips.len()
    }

    /// Draws `batch` windows independently and stacks them.
    pub fn sample(&mut self, batch: usize) -> Result<ClipBatch> {
        let span = self.past + self.horizon;
        let parts = (0..batch)
            .map(|_| {
                let clip = &self.clips[self.rng.random_range(0..self.clips.len())];
                let offset = self.rng.random_range(0..=clip.len() - span);
                build_clip_batch(clip, self.past, self.horizon, offset)
            })
            .collect::<Result<Vec<_>>>()?;
        ClipBatch::stack(&parts)
    }
}

/// One line of the loss log; gated-off terms are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub phase: Phase,
    pub recon_image: Option<f32>,
    pub recon_flow: Option<f32>,
    pub adv: Option<f32>,
    pub action: Option<f32>,
    pub total: f32,
}

pub const LOSS_HEADER: &str = "step,phase,recon_image,recon_flow,adv,action,total";

fn opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step,
            r.phase.name(),
            opt(r.recon_image),
            opt(r.recon_flow),
            opt(r.adv),
            opt(r.action),
            r.total
        );
    }
    s
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(Error::Format("loss log header mismatch".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("loss log row `{line}`")));
            }
            let num = |s: &str| s.parse::<f32>().map_err(|_| Error::Format(format!("loss value `{s}`")));
            let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(LossRow {
                step: f[0].parse().map_err(|_| Error::Format(format!("loss step `{}`", f[0])))?,
                phase: f[1].parse()?,
                recon_image: maybe(f[2])?,
                recon_flow: maybe(f[3])?,
                adv: maybe(f[4])?,
                action: maybe(f[5])?,
                total: num(f[6])?,
            })
        })
        .collect()
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    fs::write(path, loss_csv(rows)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Fresh checkpoint whose geometry follows the training sequences.
pub fn init_checkpoint(cfg: &PhaseConfig, data: &Dataset) -> Result<Checkpoint> {
    cfg.check()?;
    let first = data.train.first().ok_or_else(|| Error::Data("dataset has no training sequences".into()))?;
    let model_cfg = ModelConfig::new(cfg, first.height, first.width, first.channels, first.normalizer.dim())?;
    Ok(Checkpoint::new(Model::init(model_cfg, cfg.seed)?, cfg))
}

fn finite(value: f32, what: &str, step: u64, phase: Phase) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{what} loss is {value} at step {step} ({} phase)", phase.name())))
    }
}

fn constants(g: &mut Graph<f32>, ts: &[Tensor<f32>]) -> Vec<Var> {
    ts.iter().map(|t| g.constant(t.clone())).collect()
}

/// One discriminator update on real futures and detached predictions.
fn discriminator_step(model: &mut Model, cfg: &PhaseConfig, batch: &ClipBatch, fakes: &[Tensor<f32>], step: u64) -> Result<()> {
    let n = batch.n;
    let mut g = Graph::new();
    let past = constants(&mut g, &batch.frames[..n]);
    let real = constants(&mut g, &batch.frames[n..]);
    let fake = constants(&mut g, fakes);
    let (disc, bound) = Discriminator::bind(&model.cfg.disc, &model.disc, &mut g)?;
    let d_real = disc.discriminate(&mut g, &past, &real)?;
    let d_fake = disc.discriminate(&mut g, &past, &fake)?;
    let loss = discriminator_loss(&mut g, d_real, d_fake)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("discriminator loss is {value} at step {step}")));
    }
    g.backward(loss)?;
    model.disc.collect_grads(&g, &bound)?;
    if let Some(norm) = clip_global_norm(&mut [&mut model.disc], cfg.clip_norm) {
        log::debug!("step {step}: discriminator gradient norm {norm:.4} clipped to {}", cfg.clip_norm);
    }
    model.disc.adam_step(&cfg.adam())
}

/// One update of the networks that `phase` trains, on `batch`.
pub fn train_step(model: &mut Model, cfg: &PhaseConfig, phase: Phase, batch: &ClipBatch, step: u64) -> Result<LossRow> {
    let (beta, gamma) = phase.gates();
    let w = cfg.weights.with_gates(beta, gamma);
    let (n, horizon) = (batch.n, batch.horizon);
    let mut g = Graph::new();
    let frames = constants(&mut g, &batch.frames);
    let flows = constants(&mut g, &batch.flows);
    let actions = constants(&mut g, &batch.actions);

    let train_gen = beta != 0.0;
    let (gen, gen_bound) = if train_gen {
        let (gen, bound) = Generator::bind(&model.cfg.gen, &model.gen, &mut g)?;
        (gen, Some(bound))
    } else {
        (Generator::bind_frozen(&model.cfg.gen, &model.gen, &mut g)?, None)
    };
    let state = gen.warmup(&mut g, &frames[..n], &flows[..n], &actions[..n])?;
    let (rollout, predictions, actor_bound) = if gamma == 0.0 {
        let mut provider = FixedProvider::new(batch.actions[n - 1].clone());
        (gen.rollout(&mut g, state, &mut provider, horizon)?, Vec::new(), None)
    } else {
        let (actor, bound) = Actor::bind(&model.cfg.actor, &model.actor, &mut g)?;
        let mut provider = ActorProvider::new(&mut g, actor, &actions[..n])?;
        if cfg.dropout > 0.0 {
            provider = provider.with_dropout(seed::rng(cfg.seed, "dropout", step));
        }
        let rollout = gen.rollout(&mut g, state, &mut provider, horizon)?;
        (rollout, provider.into_predictions(), Some(bound))
    };

    let mut parts = LossParts::default();
    if beta != 0.0 {
        parts.recon_image = Some(recon_image_loss(&mut g, &frames[n..], &rollout.frames, &w)?);
        parts.recon_flow = Some(recon_flow_loss(&mut g, &flows[n..], &rollout.flows, &w)?);
        let fakes: Vec<Tensor<f32>> = rollout.frames.iter().map(|&v| g.value(v).clone()).collect();
        discriminator_step(model, cfg, batch, &fakes, step)?;
        let disc = Discriminator::bind_frozen(&model.cfg.disc, &model.disc, &mut g)?;
        let d_fake = disc.discriminate(&mut g, &frames[..n], &rollout.frames)?;
        parts.adversarial = Some(adversarial_gen_loss(&mut g, d_fake));
    }
    if gamma != 0.0 {
        parts.action = Some(action_loss(&mut g, &actions[n..n + horizon], &predictions)?);
    }
    let total = total_loss(&mut g, &parts, &w)?;
    let value = |v: Option<Var>| v.map(|v| g.value(v).item());
    let row = LossRow {
        step,
        phase,
        recon_image: value(parts.recon_image),
        recon_flow: value(parts.recon_flow),
        adv: value(parts.adversarial),
        action: value(parts.action),
        total: finite(g.value(total).item(), "total", step, phase)?,
    };

    g.backward(total)?;
    if let Some(b) = &gen_bound {
        model.gen.collect_grads(&g, b)?;
    }
    if let Some(b) = &actor_bound {
        model.actor.collect_grads(&g, b)?;
    }
    let mut trained = Vec::new();
    if gen_bound.is_some() {
        trained.push(&mut model.gen);
    }
    if actor_bound.is_some() {
        trained.push(&mut model.actor);
    }
    if let Some(norm) = clip_global_norm(&mut trained, cfg.clip_norm) {
        log::debug!("step {step}: {} gradient norm {norm:.4} clipped to {}", phase.name(), cfg.clip_norm);
    }
    for store in trained {
        store.adam_step(&cfg.adam())?;
    }
    Ok(row)
}

/// Runs `cfg.steps(phase)` updates on `ckpt`, appending to `log`.
pub fn run_phase(ckpt: &mut Checkpoint, cfg: &PhaseConfig, data: &Dataset, phase: Phase, log: &mut Vec<LossRow>) -> Result<()> {
    cfg.check()?;
    if let Some(missing) = phase.requires().iter().find(|p| !ckpt.has(**p)) {
        return Err(Error::Checkpoint(format!(
            "the {} phase needs a checkpoint that completed the {} phase",
            phase.name(),
            missing.name()
        )));
    }
    let frames = ckpt.model.cfg.disc.frames;
    if frames != cfg.past + cfg.horizon {
        return Err(Error::Config(format!(
            "checkpoint discriminator spans {frames} frames, config asks for {} + {}",
            cfg.past, cfg.horizon
        )));
    }
    let rng = seed::rng(cfg.seed, "windows", phase.index() as u64);
    let mut sampler = WindowSampler::new(&data.train, cfg.past, cfg.horizon, rng)?;
    let steps = cfg.steps(phase);
    log::info!("{} phase: {steps} steps over {} clips", phase.name(), sampler.clip_count());
    for i in 0..steps {
        let batch = sampler.sample(cfg.batch_size)?;
        let row = train_step(&mut ckpt.model, cfg, phase, &batch, ckpt.global_step + 1)?;
        ckpt.global_step += 1;
        if (i + 1) % 100 == 0 || i + 1 == steps {
            log::info!("{} step {}/{steps}: total {}", phase.name(), i + 1, row.total);
        }
        log.push(row);
    }
    ckpt.phases |= phase.bit();
    ckpt.fingerprint = cfg.fingerprint();
    Ok(())
}

/// Path of the checkpoint written after `phase` by [`train_full`].
pub fn phase_checkpoint_path(out: &Path, phase: Phase) -> PathBuf {
    match phase {
        Phase::Dual => out.to_path_buf(),
        p => {
            let mut s = out.as_os_str().to_owned();
            s.push(format!(".{}", p.name()));
            PathBuf::from(s)
        }
    }
}

/// Generator, actor and dual phases in order from a fresh initialization,
/// saving after each phase when `out` is given.
pub fn train_full(cfg: &PhaseConfig, data: &Dataset, out: Option<&Path>, log: &mut Vec<LossRow>) -> Result<Checkpoint> {
    let mut ckpt = init_checkpoint(cfg, data)?;
    for phase in Phase::ALL {
        run_phase(&mut ckpt, cfg, data, phase, log)?;
        if let Some(out) = out {
            ckpt.save(&phase_checkpoint_path(out, phase))?;
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests;
