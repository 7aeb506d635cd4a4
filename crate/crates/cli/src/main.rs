use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acvg::dataset::{load_dataset, save_dataset, simulate_dataset, CameraMode, Dataset, WorldConfig, CLIP_GAP, CLIP_LEN};
use acvg::evaluation::{
    evaluate, run_ablation, write_ablation, write_metrics_csv, AblationConfig, AblationMode, ActionMode, EvalConfig,
    DT2_HORIZON, EVAL_HORIZON, NOISE_SIGMA,
};
use acvg::training::{
    init_checkpoint, phase_checkpoint_path, run_phase, train_full, write_loss_csv, Checkpoint, PhaseConfig, PhasePlan,
};
use acvg::{tensor, verify, Error};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acvg", version, about = "Action-conditioned video generation with a generator/actor pair")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic egocentric dataset.
    GenData(GenData),
    /// Run one training phase or all three.
    Train(Train),
    /// Per-timestep metrics of a checkpoint on the test split.
    Eval(Eval),
    /// Compare actor, fixed-action, doubled-interval and noisy-action runs.
    Ablate(Ablate),
    /// Finite-difference check of every analytic gradient.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    sequences: usize,
    #[arg(long, default_value_t = 50)]
    length: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value = "unicycle")]
    mode: CameraMode,
}

#[derive(Args)]
struct Train {
    /// Dataset directory (overrides `data` in the config).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// generator, actor, dual or full (overrides `phase` in the config).
    #[arg(long)]
    phase: Option<PhasePlan>,
    #[arg(long)]
    ckpt_in: Option<PathBuf>,
    #[arg(long)]
    ckpt_out: PathBuf,
    /// Loss log CSV; defaults to `<ckpt-out>.losses.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    past: usize,
    #[arg(long, default_value_t = EVAL_HORIZON)]
    future: usize,
    #[arg(long, default_value = "actor")]
    action_mode: ActionMode,
    #[arg(long)]
    metrics_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise sigma on fed actions.
    #[arg(long)]
    noise: Option<f64>,
    /// Frame subsampling of each clip (2 doubles the interval).
    #[arg(long, default_value_t = 1)]
    dt_factor: usize,
    /// Random windows per test clip.
    #[arg(long, default_value_t = 4)]
    windows: usize,
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    data: PathBuf,
    /// Dual-phase checkpoint.
    #[arg(long)]
    ckpt_acvg: Option<PathBuf>,
    /// Generator-phase-only checkpoint.
    #[arg(long)]
    ckpt_fa: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "full,fixed,dt2,noise")]
    modes: Vec<AblationMode>,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    past: usize,
    #[arg(long, default_value_t = 4)]
    windows: usize,
}

#[derive(Args)]
struct GradCheck {
    /// `all` or a comma-separated list of op names.
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    corrupt_backward: Option<String>,
}

enum Failure {
    Verification(String),
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn banner(lines: &[(&str, String)]) {
    for (k, v) in lines {
        eprintln!("# {k} = {v}");
    }
}

fn protocol_lines() -> Vec<(&'static str, String)> {
    vec![
        ("clip_len", CLIP_LEN.to_string()),
        ("clip_gap", CLIP_GAP.to_string()),
        ("eval_horizon", EVAL_HORIZON.to_string()),
        ("dt2_horizon", DT2_HORIZON.to_string()),
        ("noise_sigma", NOISE_SIGMA.to_string()),
    ]
}

fn gen_data(args: GenData) -> Outcome {
    let world = WorldConfig { height: args.height, width: args.width, dt: args.dt, camera: args.mode, ..WorldConfig::default() };
    let mut lines = vec![
        ("command", "gen-data".to_string()),
        ("sequences", args.sequences.to_string()),
        ("length", args.length.to_string()),
        ("frame", format!("{}x{}", args.height, args.width)),
        ("dt", args.dt.to_string()),
        ("seed", args.seed.to_string()),
    ];
    lines.extend(protocol_lines().into_iter().take(2));
    banner(&lines);
    if args.sequences == 0 {
        return Err(Failure::Usage("--sequences must be at least 1".into()));
    }
    let data = simulate_dataset(&world, args.sequences, args.length, args.seed)?;
    save_dataset(&args.out, &data)?;
    println!("wrote {} train and {} test sequences to {}", data.train.len(), data.test.len(), args.out.display());
    Ok(())
}

fn load_data(dir: &Path) -> Result<Dataset, Failure> {
    Ok(load_dataset(dir)?)
}

fn train(args: Train) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("reading {}: {e}", p.display())))?;
            PhaseConfig::parse(&text)?
        }
        None => PhaseConfig::default(),
    };
    if let Some(p) = args.phase {
        cfg.phase = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    let mut lines = vec![("command", "train".to_string())];
    // clip_len and clip_gap come with the config banner below.
    lines.extend(protocol_lines().into_iter().skip(2));
    banner(&lines);
    for line in cfg.banner().lines() {
        eprintln!("# {line}");
    }
    let data_dir = cfg.data.clone().ok_or_else(|| Failure::Usage("no dataset: pass --data or set `data`".into()))?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.ckpt_out.as_os_str().to_owned();
        s.push(".losses.csv");
        PathBuf::from(s)
    });

    let mut log = Vec::new();
    let result = match cfg.phase {
        PhasePlan::Full => {
            let data = load_data(&data_dir)?;
            train_full(&cfg, &data, Some(&args.ckpt_out), &mut log).map(|_| {
                for phase in PhasePlan::Full.phases() {
                    println!("wrote {}", phase_checkpoint_path(&args.ckpt_out, phase).display());
                }
            })
        }
        PhasePlan::Only(phase) => {
            let mut ckpt = match &args.ckpt_in {
                Some(p) => Checkpoint::load(p)?,
                None if phase.requires().is_empty() => init_checkpoint(&cfg, &load_data(&data_dir)?)?,
                None => {
                    return Err(Failure::Usage(format!("the {} phase needs --ckpt-in", phase.name())));
                }
            };
            let data = load_data(&data_dir)?;
            run_phase(&mut ckpt, &cfg, &data, phase, &mut log).and_then(|_| {
                ckpt.save(&args.ckpt_out)?;
                println!("wrote {}", args.ckpt_out.display());
                Ok(())
            })
        }
    };
    // The log is written even when a step fails, so the failing run can be inspected.
    write_loss_csv(&log_path, &log)?;
    result?;
    println!("wrote {} loss rows to {}", log.len(), log_path.display());
    Ok(())
}

fn eval(args: Eval) -> Outcome {
    let cfg = EvalConfig {
        past: args.past,
        horizon: args.future,
        mode: args.action_mode,
        noise: args.noise,
        dt_factor: args.dt_factor,
        windows_per_clip: args.windows,
        seed: args.seed,
        dump_frames: args.dump_frames,
    };
    let mut lines = vec![
        ("command", "eval".to_string()),
        ("past", cfg.past.to_string()),
        ("future", cfg.horizon.to_string()),
        ("action_mode", format!("{:?}", cfg.mode)),
        ("noise", format!("{:?}", cfg.noise)),
        ("dt_factor", cfg.dt_factor.to_string()),
        ("windows_per_clip", cfg.windows_per_clip.to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    lines.extend(protocol_lines());
    banner(&lines);
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let data = load_data(&args.data)?;
    let result = evaluate(&ckpt.model, &data.test, &cfg)?;
    write_metrics_csv(&args.metrics_out, &result.rows)?;
    let mean = result.rows.iter().map(|r| r.psnr_mean).sum::<f64>() / result.rows.len() as f64;
    println!(
        "{} windows, {} steps, mean PSNR {mean:.3} dB; wrote {}",
        result.windows.len(),
        result.rows.len(),
        args.metrics_out.display()
    );
    Ok(())
}

fn ablate(args: Ablate) -> Outcome {
    let cfg = AblationConfig { modes: args.modes, seeds: args.seeds, past: args.past, windows_per_clip: args.windows };
    let modes: Vec<&str> = cfg.modes.iter().map(|m| m.name()).collect();
    let mut lines = vec![
        ("command", "ablate".to_string()),
        ("modes", modes.join(",")),
        ("seeds", cfg.seeds.to_string()),
        ("past", cfg.past.to_string()),
        ("windows_per_clip", cfg.windows_per_clip.to_string()),
    ];
    lines.extend(protocol_lines());
    banner(&lines);
    let load = |p: &Option<PathBuf>| p.as_deref().map(Checkpoint::load).transpose();
    let (acvg, fa) = (load(&args.ckpt_acvg)?, load(&args.ckpt_fa)?);
    let data = load_data(&args.data)?;
    let runs = run_ablation(acvg.as_ref().map(|c| &c.model), fa.as_ref().map(|c| &c.model), &data.test, &cfg)?;
    write_ablation(&args.out, &runs)?;
    for run in &runs {
        let psnr = run.mean_over(1..=usize::MAX, |r| r.psnr_mean);
        println!("{:<12} mean PSNR {psnr:.3} dB over {} steps", run.name, run.average.len());
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn grad_check(args: GradCheck) -> Outcome {
    banner(&[("command", "grad-check".to_string()), ("ops", args.ops.clone()), ("seed", args.seed.to_string())]);
    tensor::corrupt_backward(args.corrupt_backward.as_deref());
    let ops: Vec<&str> = if args.ops == "all" { Vec::new() } else { args.ops.split(',').map(str::trim).collect() };
    let results = verify::run_suite(&ops, args.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<20} {:.3e} {status}", r.op, r.max_rel_error);
        if !r.passed() {
            failed.push(r.op.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} ops below {:e}", results.len(), verify::TOLERANCE);
        Ok(())
    } else {
        Err(Failure::Verification(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

fn run(command: Command) -> u8 {
    let outcome = match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::GradCheck(a) => grad_check(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                3
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    ExitCode::from(run(cli.command))
}

#[cfg(test)]
mod tests;
