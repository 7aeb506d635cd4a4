//! Run configuration: phases, budgets, optimizer and architecture knobs, read
//! from flat `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::{CLIP_GAP, CLIP_LEN};
use crate::error::{Error, Result};
use crate::generator::STAGES;
use crate::losses::{LossWeights, DISC_LAYERS};
use crate::tensor::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Generator,
    Actor,
    Dual,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Generator, Phase::Actor, Phase::Dual];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Generator => "generator",
            Phase::Actor => "actor",
            Phase::Dual => "dual",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bit recorded in a checkpoint once the phase has run.
    pub fn bit(self) -> u8 {
        1 << self.index()
    }

    /// (β, γ) for the phase.
    pub fn gates(self) -> (f64, f64) {
        match self {
            Phase::Generator => (1.0, 0.0),
            Phase::Actor => (0.0, 1.0),
            Phase::Dual => (1.0, 1.0),
        }
    }

    /// Phases that must be complete before this one may start.
    pub fn requires(self) -> &'static [Phase] {
        match self {
            Phase::Generator => &[],
            Phase::Actor => &[Phase::Generator],
            Phase::Dual => &[Phase::Generator, Phase::Actor],
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown phase `{s}` (generator, actor, dual)")))
    }
}

/// A single phase or all three in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhasePlan {
    Only(Phase),
    Full,
}

impl PhasePlan {
    pub fn phases(self) -> Vec<Phase> {
        match self {
            PhasePlan::Only(p) => vec![p],
            PhasePlan::Full => Phase::ALL.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhasePlan::Only(p) => p.name(),
            PhasePlan::Full => "full",
        }
    }
}

impl FromStr for PhasePlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            Ok(PhasePlan::Full)
        } else {
            s.parse().map(PhasePlan::Only).map_err(|_| {
                Error::Config(format!("unknown phase `{s}` (generator, actor, dual, full)"))
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfig {
    pub phase: PhasePlan,
    pub gen_steps: usize,
    pub actor_steps: usize,
    pub dual_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Conditioning frames n.
    pub past: usize,
    /// Training horizon T.
    pub horizon: usize,
    /// λ1, λ2, λa and μ; β and γ are set per phase.
    pub weights: LossWeights,
    pub seed: u64,
    /// Global gradient-norm ceiling per update.
    pub clip_norm: f64,
    pub gen_widths: [usize; STAGES],
    pub actor_conv_widths: [usize; 2],
    pub actor_dense: usize,
    pub dropout: f64,
    pub disc_widths: [usize; DISC_LAYERS],
    pub data: Option<PathBuf>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            phase: PhasePlan::Full,
            gen_steps: 2000,
            actor_steps: 1000,
            dual_steps: 1000,
            lr: 1e-4,
            batch_size: 4,
            past: 5,
            horizon: 10,
            weights: LossWeights::default(),
            seed: 0,
            clip_norm: 5.0,
            gen_widths: [16, 32, 64],
            actor_conv_widths: [16, 16],
            actor_dense: 32,
            dropout: 0.0,
            disc_widths: [16, 32, 32, 32],
            data: None,
        }
    }
}

const KEYS: &[&str] = &[
    "phase",
    "n_g",
    "n_a",
    "n_dual",
    "lr",
    "batch_size",
    "past",
    "horizon",
    "lambda1",
    "lambda2",
    "lambda_a",
    "mu",
    "seed",
    "clip_norm",
    "gen_widths",
    "actor_conv_widths",
    "actor_dense",
    "dropout",
    "disc_widths",
    "data",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let items = value.split(',').map(|v| parse_num(key, v.trim())).collect::<Result<Vec<usize>>>()?;
    items
        .try_into()
        .map_err(|v: Vec<usize>| Error::Config(format!("`{key}` needs {N} comma-separated values, got {}", v.len())))
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl PhaseConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", no + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "phase" => self.phase = value.parse()?,
            "n_g" => self.gen_steps = parse_num(key, value)?,
            "n_a" => self.actor_steps = parse_num(key, value)?,
            "n_dual" => self.dual_steps = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "past" => self.past = parse_num(key, value)?,
            "horizon" => self.horizon = parse_num(key, value)?,
            "lambda1" => self.weights.lambda1 = parse_num(key, value)?,
            "lambda2" => self.weights.lambda2 = parse_num(key, value)?,
            "lambda_a" => self.weights.lambda_a = parse_num(key, value)?,
            "mu" => self.weights.mu = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "gen_widths" => self.gen_widths = parse_list(key, value)?,
            "actor_conv_widths" => self.actor_conv_widths = parse_list(key, value)?,
            "actor_dense" => self.actor_dense = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "disc_widths" => self.disc_widths = parse_list(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.past < 2 {
            return Err(Error::InsufficientHistory(self.past));
        }
        if self.horizon == 0 || self.batch_size == 0 {
            return Err(Error::Config("horizon and batch_size must be at least 1".into()));
        }
        if self.past + self.horizon > CLIP_LEN {
            return Err(Error::Config(format!(
                "past + horizon = {} exceeds the {CLIP_LEN}-frame clip",
                self.past + self.horizon
            )));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        self.weights.check()
    }

    pub fn steps(&self, phase: Phase) -> usize {
        match phase {
            Phase::Generator => self.gen_steps,
            Phase::Actor => self.actor_steps,
            Phase::Dual => self.dual_steps,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    /// Canonical text of every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let _ = writeln!(s, "phase = {}", self.phase.name());
        let _ = writeln!(s, "n_g = {}", self.gen_steps);
        let _ = writeln!(s, "n_a = {}", self.actor_steps);
        let _ = writeln!(s, "n_dual = {}", self.dual_steps);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "past = {}", self.past);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "lambda1 = {}", w.lambda1);
        let _ = writeln!(s, "lambda2 = {}", w.lambda2);
        let _ = writeln!(s, "lambda_a = {}", w.lambda_a);
        let _ = writeln!(s, "mu = {:?}", w.mu);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "clip_norm = {:?}", self.clip_norm);
        let _ = writeln!(s, "gen_widths = {}", join(&self.gen_widths));
        let _ = writeln!(s, "actor_conv_widths = {}", join(&self.actor_conv_widths));
        let _ = writeln!(s, "actor_dense = {}", self.actor_dense);
        let _ = writeln!(s, "dropout = {:?}", self.dropout);
        let _ = writeln!(s, "disc_widths = {}", join(&self.disc_widths));
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        s
    }

    /// SHA-256 of the settings that shape training (phase and data path excluded).
    pub fn fingerprint(&self) -> [u8; 32] {
        let canon = PhaseConfig { phase: PhasePlan::Full, data: None, ..self.clone() };
        Sha256::digest(canon.to_text().as_bytes()).into()
    }

    /// Protocol constants and resolved settings, one `key = value` per line.
    pub fn banner(&self) -> String {
        format!(
            "clip_len = {CLIP_LEN}\nclip_gap = {CLIP_GAP}\n{}",
            self.to_text()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = PhaseConfig::default();
        assert_eq!(PhaseConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let custom = PhaseConfig::parse("n_g = 7\ngen_widths = 4, 8,8 # narrow\nphase = actor\ndata = /tmp/x").unwrap();
        assert_eq!(custom.gen_widths, [4, 8, 8]);
        assert_eq!(custom.phase, PhasePlan::Only(Phase::Actor));
        assert_eq!(PhaseConfig::parse(&custom.to_text()).unwrap(), custom);
    }

    #[test]
    fn bad_lines_are_rejected() {
        for text in ["bogus = 1", "n_g 3", "past = 1", "n_g = -1", "lambda1 = 3", "lambda_a = 1", "gen_widths = 1,2", "seed = 1\nseed = 2", "horizon = 46"] {
            assert!(PhaseConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn fingerprint_ignores_phase_and_data_only() {
        let a = PhaseConfig::default();
        let b = PhaseConfig { phase: PhasePlan::Only(Phase::Dual), data: Some("d".into()), ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), PhaseConfig { seed: 1, ..a }.fingerprint());
    }

    #[test]
    fn phase_gates_and_prerequisites() {
        assert_eq!(Phase::Generator.gates(), (1.0, 0.0));
        assert_eq!(Phase::Actor.gates(), (0.0, 1.0));
        assert_eq!(Phase::Dual.gates(), (1.0, 1.0));
        assert_eq!(Phase::Dual.requires(), &[Phase::Generator, Phase::Actor]);
        assert_eq!("full".parse::<PhasePlan>().unwrap().phases(), Phase::ALL.to_vec());
        assert!("sideways".parse::<PhasePlan>().is_err());
    }
}
