//! Per-timestep PSNR, SSIM, L1 and action error over held-out windows, and
//! the ablation harness comparing action providers, sampling intervals and
//! action noise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::actor::{Actor, ActorProvider};
use crate::dataset::{build_clip_batch, chw_to_hwc, make_clips, subsample_dt, write_ppm, ClipBatch, SequenceRecord, CLIP_GAP, CLIP_LEN};
use crate::error::{Error, Result};
use crate::generator::{ActionNoise, ActionProvider, FixedProvider, Generator, ReplayProvider};
use crate::seed;
use crate::tensor::{Graph, Var};
use crate::training::Model;

pub const EVAL_PAST: usize = 5;
pub const EVAL_HORIZON: usize = 20;
pub const DT2_HORIZON: usize = 15;
pub const NOISE_SIGMA: f64 = 0.2;
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_len(x: &[f32], y: &[f32]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidShape(format!("frames of {} and {} values", x.len(), y.len())));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` for values in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(x: &[f32], y: &[f32]) -> Result<f64> {
    same_len(x, y)?;
    let mse = x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

pub fn mean_abs_error(x: &[f32], y: &[f32]) -> Result<f64> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / x.len() as f64)
}

/// Normalized Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows and channels of two
/// `channels x h x w` frames.
pub fn ssim(x: &[f32], y: &[f32], channels: usize, h: usize, w: usize) -> Result<f64> {
    same_len(x, y)?;
    if x.len() != channels * h * w {
        return Err(Error::InvalidShape(format!("{} values for {channels}x{h}x{w}", x.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidGeometry(format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..channels {
        let a: Vec<f64> = x[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = y[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mu_a = filter(&a, h, w, &taps);
        let mu_b = filter(&b, h, w, &taps);
        let aa = filter(&prod(&a, &a), h, w, &taps);
        let bb = filter(&prod(&b, &b), h, w, &taps);
        let ab = filter(&prod(&a, &b), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Euclidean distance between `a_t` and `ã_t` at every step.
pub fn action_l2_curve(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<f64>> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidLength(format!("{} true and {} predicted actions", truth.len(), pred.len())));
    }
    truth
        .iter()
        .zip(pred)
        .map(|(a, b)| {
            if a.len() != b.len() {
                return Err(Error::InvalidShape(format!("action of {} vs {} components", a.len(), b.len())));
            }
            Ok(a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Aggregated metrics at one horizon step `t` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub t: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub action_l2_mean: f64,
    pub action_l2_std: f64,
}

pub const METRIC_HEADER: &str = "t,psnr_mean,psnr_std,ssim_mean,ssim_std,l1_mean,l1_std,action_l2_mean,action_l2_std";

impl MetricRow {
    fn fields(&self) -> [f64; 8] {
        [
            self.psnr_mean,
            self.psnr_std,
            self.ssim_mean,
            self.ssim_std,
            self.l1_mean,
            self.l1_std,
            self.action_l2_mean,
            self.action_l2_std,
        ]
    }

    fn from_fields(t: usize, f: [f64; 8]) -> Self {
        Self {
            t,
            psnr_mean: f[0],
            psnr_std: f[1],
            ssim_mean: f[2],
            ssim_std: f[3],
            l1_mean: f[4],
            l1_std: f[5],
            action_l2_mean: f[6],
            action_l2_std: f[7],
        }
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{}", r.t);
        for v in r.fields() {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRIC_HEADER) {
        return Err(Error::Format("metrics header mismatch".into()));
    }
    lines
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 9 {
                return Err(Error::Format(format!("metrics row `{line}`")));
            }
            let t = parts[0].parse().map_err(|_| Error::Format(format!("timestep `{}`", parts[0])))?;
            let mut f = [0.0; 8];
            for (dst, src) in f.iter_mut().zip(&parts[1..]) {
                *dst = src.parse().map_err(|_| Error::Format(format!("metric value `{src}`")))?;
            }
            Ok(MetricRow::from_fields(t, f))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_text(path, &metrics_csv(rows))
}

/// Source of the actions fed to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    /// Delayed actor in the loop, seeded with the observed `a_0`.
    Actor,
    /// Recorded actions `a_0, a_1, ...`.
    GroundTruth,
    /// `a_0` held for the whole horizon.
    Fixed,
}

impl FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor" => Ok(Self::Actor),
            "gt" => Ok(Self::GroundTruth),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::Config(format!("unknown action mode `{other}` (actor, gt, fixed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub past: usize,
    pub horizon: usize,
    pub mode: ActionMode,
    /// Standard deviation of Gaussian noise on fed actions, if any.
    pub noise: Option<f64>,
    /// Frame subsampling factor applied to each clip (2 doubles Δt).
    pub dt_factor: usize,
    /// Random window offsets per clip.
    pub windows_per_clip: usize,
    pub seed: u64,
    pub dump_frames: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            past: EVAL_PAST,
            horizon: EVAL_HORIZON,
            mode: ActionMode::Actor,
            noise: None,
            dt_factor: 1,
            windows_per_clip: 4,
            seed: 0,
            dump_frames: None,
        }
    }
}

/// Per-timestep rows plus what each window saw.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    /// (clip index, offset) of every window in evaluation order.
    pub windows: Vec<(usize, usize)>,
    /// Actions fed to the generator, `[window][t]`.
    pub fed: Vec<Vec<Vec<f32>>>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Held-out clips as evaluated: 50-frame clips with 10-frame gaps, then
/// subsampled by `dt_factor`.
pub fn eval_clips(sequences: &[SequenceRecord], dt_factor: usize) -> Result<Vec<SequenceRecord>> {
    sequences
        .iter()
        .flat_map(|s| make_clips(s, CLIP_LEN, CLIP_GAP))
        .map(|c| if dt_factor == 1 { Ok(c) } else { subsample_dt(&c, dt_factor) })
        .collect()
}

fn split_rows(g: &Graph<f32>, v: Var) -> Vec<Vec<f32>> {
    let t = g.value(v);
    let b = t.shape()[0];
    t.data().chunks(t.numel() / b).map(<[f32]>::to_vec).collect()
}

/// Rolls out every window of every clip and aggregates metrics per step.
pub fn evaluate(model: &Model, sequences: &[SequenceRecord], cfg: &EvalConfig) -> Result<Evaluation> {
    if cfg.past < 2 {
        return Err(Error::InsufficientHistory(cfg.past));
    }
    if cfg.horizon == 0 || cfg.windows_per_clip == 0 {
        return Err(Error::Config("horizon and windows_per_clip must be positive".into()));
    }
    let clips = eval_clips(sequences, cfg.dt_factor)?;
    if clips.is_empty() {
        return Err(Error::Data(format!("no complete {CLIP_LEN}-frame clip to evaluate")));
    }
    let gcfg = &model.cfg.gen;
    let (c, h, w) = (gcfg.channels, gcfg.height, gcfg.width);
    let span = cfg.past + cfg.horizon;
    let mut per_t = vec![[Vec::new(), Vec::new(), Vec::new(), Vec::new()]; cfg.horizon];
    let mut out = Evaluation { rows: Vec::new(), windows: Vec::new(), fed: Vec::new() };

    for (ci, clip) in clips.iter().enumerate() {
        if (clip.height, clip.width, clip.channels) != (h, w, c) {
            return Err(Error::InvalidGeometry(format!(
                "clip is {}x{}x{}, model expects {h}x{w}x{c}",
                clip.height, clip.width, clip.channels
            )));
        }
        if span > clip.len() {
            return Err(Error::Window(format!(
                "{} past + {} future frames exceed the {}-frame clip",
                cfg.past,
                cfg.horizon,
                clip.len()
            )));
        }
        let mut rng = seed::rng(cfg.seed, "eval-windows", ci as u64);
        let parts = (0..cfg.windows_per_clip)
            .map(|_| {
                let offset = rng.random_range(0..=clip.len() - span);
                out.windows.push((ci, offset));
                build_clip_batch(clip, cfg.past, cfg.horizon, offset)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = ClipBatch::stack(&parts)?;
        let noise = cfg.noise.map(|s| ActionNoise::new(s, seed::derive(cfg.seed, "eval-noise", ci as u64)));
        let (frames, fed, predicted) = rollout_window(model, &batch, cfg.mode, noise)?;

        let first = out.fed.len();
        out.fed.extend((0..cfg.windows_per_clip).map(|_| Vec::with_capacity(cfg.horizon)));
        for t in 0..cfg.horizon {
            let truth = batch.frames[cfg.past + t].data().chunks(c * h * w);
            let pred = frames[t].chunks(c * h * w);
            let true_a = batch.actions[cfg.past + t].data().chunks(model.cfg.gen.action_dim);
            for (k, ((x, y), a)) in truth.zip(pred).zip(true_a).enumerate() {
                per_t[t][0].push(psnr(x, y)?);
                per_t[t][1].push(ssim(x, y, c, h, w)?);
                per_t[t][2].push(mean_abs_error(x, y)?);
                let wide = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
                per_t[t][3].push(action_l2_curve(&[wide(a)], &[wide(&predicted[t][k])])?[0]);
                out.fed[first + k].push(fed[t][k].clone());
                if let Some(dir) = &cfg.dump_frames {
                    let path = dir.join(format!("w{:04}_t{:02}.ppm", first + k, t + 1));
                    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                    write_ppm(&path, &chw_to_hwc(y, h, w, c), h, w, c)?;
                }
            }
        }
    }
    out.rows = per_t
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let (pm, ps) = mean_std(&m[0]);
            let (sm, ss) = mean_std(&m[1]);
            let (lm, ls) = mean_std(&m[2]);
            let (am, as_) = mean_std(&m[3]);
            MetricRow::from_fields(t + 1, [pm, ps, sm, ss, lm, ls, am, as_])
        })
        .collect();
    Ok(out)
}

/// Predicted frames, fed actions and the action estimate compared against
/// the truth at each step (`[t][window]`).
type WindowOutput = (Vec<Vec<f32>>, Vec<Vec<Vec<f32>>>, Vec<Vec<Vec<f32>>>);

fn rollout_window(model: &Model, batch: &ClipBatch, mode: ActionMode, noise: Option<ActionNoise>) -> Result<WindowOutput> {
    let n = batch.n;
    let mut g = Graph::new();
    let cst = |g: &mut Graph<f32>, ts: &[_]| ts.iter().map(|t| g.constant(Clone::clone(t))).collect::<Vec<Var>>();
    let frames = cst(&mut g, &batch.frames[..n]);
    let flows = cst(&mut g, &batch.flows[..n]);
    let actions = cst(&mut g, &batch.actions[..n]);
    let gen = Generator::bind_frozen(&model.cfg.gen, &model.gen, &mut g)?;
    let state = gen.warmup(&mut g, &frames, &flows, &actions)?;
    let with_noise = |p: FixedProvider<f32>| match noise.clone() {
        Some(nz) => p.with_noise(nz),
        None => p,
    };
    let (rollout, predictions) = match mode {
        ActionMode::Actor => {
            let actor = Actor::bind_frozen(&model.cfg.actor, &model.actor, &mut g)?;
            let mut p = ActorProvider::new(&mut g, actor, &actions)?;
            if let Some(nz) = noise.clone() {
                p = p.with_noise(nz);
            }
            let r = gen.rollout(&mut g, state, &mut p, batch.horizon)?;
            (r, Some(p.into_predictions()))
        }
        ActionMode::GroundTruth => {
            let mut p = ReplayProvider::new(batch.actions[n - 1..n - 1 + batch.horizon].to_vec());
            if let Some(nz) = noise.clone() {
                p = p.with_noise(nz);
            }
            let p: &mut dyn ActionProvider<f32> = &mut p;
            (gen.rollout(&mut g, state, p, batch.horizon)?, None)
        }
        ActionMode::Fixed => {
            let mut p = with_noise(FixedProvider::new(batch.actions[n - 1].clone()));
            (gen.rollout(&mut g, state, &mut p, batch.horizon)?, None)
        }
    };
    let frames = rollout.frames.iter().map(|&v| g.value(v).data().to_vec()).collect();
    let fed: Vec<Vec<Vec<f32>>> = rollout.actions.iter().map(|&v| split_rows(&g, v)).collect();
    // Pre-noise estimate of a_t at row t: the actor's decode of χ̃_t, the
    // held a_0, or the recorded action.
    let rows = |t: &crate::tensor::Tensor<f32>| -> Vec<Vec<f32>> {
        let b = t.shape()[0];
        t.data().chunks(t.numel() / b).map(<[f32]>::to_vec).collect()
    };
    let predicted = match (mode, predictions) {
        (ActionMode::Actor, Some(p)) => p.iter().map(|&v| split_rows(&g, v)).collect(),
        (ActionMode::Fixed, _) => vec![rows(&batch.actions[n - 1]); batch.horizon],
        _ => batch.actions[n..n + batch.horizon].iter().map(rows).collect(),
    };
    Ok((frames, fed, predicted))
}

/// One ablation run: a named model, provider and data variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Dual checkpoint with the actor in the loop.
    Full,
    /// Generator-only checkpoint with `a_0` held.
    Fixed,
    /// Both variants on clips with doubled Δt, 15-step horizon.
    Dt2,
    /// Both variants with N(0, 0.2) noise on fed actions.
    Noise,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Full, AblationMode::Fixed, AblationMode::Dt2, AblationMode::Noise];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::Fixed => "fixed",
            AblationMode::Dt2 => "dt2",
            AblationMode::Noise => "noise",
        }
    }

    /// (run name, uses the dual checkpoint, eval settings) for each run.
    pub fn runs(self, past: usize, windows_per_clip: usize) -> Vec<(String, bool, EvalConfig)> {
        let base = EvalConfig { past, windows_per_clip, ..EvalConfig::default() };
        let actor = EvalConfig { mode: ActionMode::Actor, ..base.clone() };
        let fixed = EvalConfig { mode: ActionMode::Fixed, ..base };
        let variants = |name: &str, f: &dyn Fn(EvalConfig) -> EvalConfig| {
            vec![(format!("{name}_full"), true, f(actor.clone())), (format!("{name}_fixed"), false, f(fixed.clone()))]
        };
        match self {
            AblationMode::Full => vec![("full".into(), true, actor.clone())],
            AblationMode::Fixed => vec![("fixed".into(), false, fixed.clone())],
            AblationMode::Dt2 => variants("dt2", &|c| EvalConfig { dt_factor: 2, horizon: DT2_HORIZON, ..c }),
            AblationMode::Noise => variants("noise", &|c| EvalConfig { noise: Some(NOISE_SIGMA), ..c }),
        }
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}` (full, fixed, dt2, noise)")))
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub modes: Vec<AblationMode>,
    /// Evaluation seeds `0..seeds`.
    pub seeds: u64,
    pub past: usize,
    pub windows_per_clip: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { modes: AblationMode::ALL.to_vec(), seeds: 3, past: EVAL_PAST, windows_per_clip: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub name: String,
    /// Rows per seed, in seed order.
    pub per_seed: Vec<Vec<MetricRow>>,
    /// Field-wise mean of `per_seed` at each step.
    pub average: Vec<MetricRow>,
}

impl AblationRun {
    /// Mean of `pick` over the averaged rows with `t` in `range`.
    pub fn mean_over(&self, range: std::ops::RangeInclusive<usize>, pick: fn(&MetricRow) -> f64) -> f64 {
        let v: Vec<f64> = self.average.iter().filter(|r| range.contains(&r.t)).map(pick).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn average_rows(per_seed: &[Vec<MetricRow>]) -> Vec<MetricRow> {
    let k = per_seed.len() as f64;
    (0..per_seed[0].len())
        .map(|i| {
            let mut sum = [0.0; 8];
            for rows in per_seed {
                for (s, v) in sum.iter_mut().zip(rows[i].fields()) {
                    *s += v;
                }
            }
            MetricRow::from_fields(per_seed[0][i].t, sum.map(|s| s / k))
        })
        .collect()
}

/// Evaluates every run of `cfg.modes` for each seed on the same windows.
/// `acvg` is the dual checkpoint, `fa` the generator-only one.
pub fn run_ablation(acvg: Option<&Model>, fa: Option<&Model>, sequences: &[SequenceRecord], cfg: &AblationConfig) -> Result<Vec<AblationRun>> {
    if cfg.seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for mode in &cfg.modes {
        for (name, dual, eval) in mode.runs(cfg.past, cfg.windows_per_clip) {
            let model = if dual { acvg } else { fa }.ok_or_else(|| {
                let which = if dual { "ACVG (dual)" } else { "fixed-action (generator-only)" };
                Error::Checkpoint(format!("mode `{}` needs the {which} checkpoint", mode.name()))
            })?;
            let per_seed = (0..cfg.seeds)
                .map(|s| evaluate(model, sequences, &EvalConfig { seed: s, ..eval.clone() }).map(|e| e.rows))
                .collect::<Result<Vec<_>>>()?;
            log::info!("ablation run `{name}` done over {} seeds", cfg.seeds);
            let average = average_rows(&per_seed);
            runs.push(AblationRun { name, per_seed, average });
        }
    }
    Ok(runs)
}

pub const SUMMARY_HEADER: &str = "mode,metric,value";

/// Horizon-averaged metrics of each run's seed average.
pub fn summary_csv(runs: &[AblationRun]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    let metrics: [(&str, fn(&MetricRow) -> f64); 4] = [
        ("psnr", |r| r.psnr_mean),
        ("ssim", |r| r.ssim_mean),
        ("l1", |r| r.l1_mean),
        ("action_l2", |r| r.action_l2_mean),
    ];
    for run in runs {
        for (metric, pick) in metrics {
            let _ = writeln!(s, "{},{metric},{:?}", run.name, run.mean_over(1..=usize::MAX, pick));
        }
    }
    s
}

/// Writes `<run>_seed<k>.csv`, `<run>_avg.csv` and `summary.csv` into `dir`.
pub fn write_ablation(dir: &Path, runs: &[AblationRun]) -> Result<()> {
    for run in runs {
        for (k, rows) in run.per_seed.iter().enumerate() {
            write_metrics_csv(&dir.join(format!("{}_seed{k}.csv", run.name)), rows)?;
        }
        write_metrics_csv(&dir.join(format!("{}_avg.csv", run.name)), &run.average)?;
    }
    write_text(&dir.join("summary.csv"), &summary_csv(runs))
}

#[cfg(test)]
mod tests;
