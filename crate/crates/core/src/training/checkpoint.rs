//! Binary checkpoints: parameter table, Adam moments and a trailer with step
//! counters, the completed-phase mask, the config fingerprint and the
//! architecture.
//!
//! Layout (little-endian): `ACVGCKPT`, version u32, count u32, entries; a
//! second count u32 and entries for the moments (`adam.m.<name>`,
//! `adam.v.<name>`); then global step u64, phase mask u8, 32-byte
//! fingerprint, architecture text (u32 length + UTF-8) and per-parameter Adam
//! steps (count u32, then u16 name length + name + u64). An entry is u16 name
//! length, UTF-8 name, rank u8, u32 extents and f32 values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::actor::ActorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::DiscriminatorConfig;
use crate::seed;
use crate::tensor::{Param, ParamStore, Tensor};

use super::config::{Phase, PhaseConfig};

pub const MAGIC: &[u8; 8] = b"ACVGCKPT";
pub const VERSION: u32 = 1;

/// Architecture of the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub gen: GeneratorConfig,
    pub actor: ActorConfig,
    pub disc: DiscriminatorConfig,
}

impl ModelConfig {
    pub fn new(cfg: &PhaseConfig, height: usize, width: usize, channels: usize, action_dim: usize) -> Result<Self> {
        let gen = GeneratorConfig { height, width, channels, action_dim, widths: cfg.gen_widths, ..Default::default() };
        gen.check()?;
        let actor = ActorConfig {
            conv_widths: cfg.actor_conv_widths,
            dense_hidden: cfg.actor_dense,
            dropout: cfg.dropout,
            ..ActorConfig::for_generator(&gen)
        };
        actor.check()?;
        let disc = DiscriminatorConfig {
            widths: cfg.disc_widths,
            ..DiscriminatorConfig::new(cfg.past + cfg.horizon, channels, height, width)
        };
        disc.check()?;
        Ok(Self { gen, actor, disc })
    }

    fn to_text(&self) -> String {
        let (g, a, d) = (&self.gen, &self.actor, &self.disc);
        let mut s = String::new();
        let _ = writeln!(s, "height = {}", g.height);
        let _ = writeln!(s, "width = {}", g.width);
        let _ = writeln!(s, "channels = {}", g.channels);
        let _ = writeln!(s, "action_dim = {}", g.action_dim);
        let _ = writeln!(s, "gen_widths = {},{},{}", g.widths[0], g.widths[1], g.widths[2]);
        let _ = writeln!(s, "kernel = {}", g.kernel);
        let _ = writeln!(s, "actor_hidden = {}", a.hidden);
        let _ = writeln!(s, "actor_conv_widths = {},{}", a.conv_widths[0], a.conv_widths[1]);
        let _ = writeln!(s, "actor_dense = {}", a.dense_hidden);
        let _ = writeln!(s, "dropout = {:?}", a.dropout);
        let _ = writeln!(s, "disc_frames = {}", d.frames);
        let _ = writeln!(s, "disc_widths = {},{},{},{}", d.widths[0], d.widths[1], d.widths[2], d.widths[3]);
        s
    }

    fn parse(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Corruption(format!("architecture record: {what}"));
        let map: std::collections::BTreeMap<&str, &str> = text
            .lines()
            .map(|l| l.split_once(" = ").ok_or_else(|| bad(l)))
            .collect::<Result<_>>()?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(k));
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?.split(',').map(|v| v.parse().map_err(|_| bad(k))).collect()
        };
        let arr = |k: &str, n: usize| -> Result<Vec<usize>> {
            let v = list(k)?;
            if v.len() == n { Ok(v) } else { Err(bad(k)) }
        };
        let gw = arr("gen_widths", 3)?;
        let aw = arr("actor_conv_widths", 2)?;
        let dw = arr("disc_widths", 4)?;
        let gen = GeneratorConfig {
            height: num("height")?,
            width: num("width")?,
            channels: num("channels")?,
            action_dim: num("action_dim")?,
            widths: [gw[0], gw[1], gw[2]],
            kernel: num("kernel")?,
        };
        let actor = ActorConfig {
            hidden: num("actor_hidden")?,
            conv_widths: [aw[0], aw[1]],
            dense_hidden: num("actor_dense")?,
            dropout: get("dropout")?.parse().map_err(|_| bad("dropout"))?,
            ..ActorConfig::for_generator(&gen)
        };
        let disc = DiscriminatorConfig {
            widths: [dw[0], dw[1], dw[2], dw[3]],
            ..DiscriminatorConfig::new(num("disc_frames")?, gen.channels, gen.height, gen.width)
        };
        Ok(Self { gen, actor, disc })
    }
}

/// Parameters of all three networks.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub gen: ParamStore<f32>,
    pub actor: ParamStore<f32>,
    pub disc: ParamStore<f32>,
}

impl Model {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let gen = cfg.gen.init(seed::derive(seed, "init", 0))?;
        let actor = cfg.actor.init(seed::derive(seed, "init", 1))?;
        let disc = cfg.disc.init(seed::derive(seed, "init", 2))?;
        Ok(Self { cfg, gen, actor, disc })
    }

    fn stores(&self) -> [&ParamStore<f32>; 3] {
        [&self.gen, &self.actor, &self.disc]
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Training updates applied so far, over all phases.
    pub global_step: u64,
    /// Bit mask of completed phases (see [`Phase::bit`]).
    pub phases: u8,
    pub fingerprint: [u8; 32],
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
    put_name(out, name)?;
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn text(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Corruption("name is not UTF-8".into()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        self.text(len)
    }

    fn entry(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name = self.name()?;
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Corruption(format!("extents of `{name}` overflow")))?;
        let raw = self.take(numel.checked_mul(4).ok_or_else(|| Error::Corruption("entry too large".into()))?)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok((name, shape, values))
    }
}

impl Checkpoint {
    pub fn new(model: Model, cfg: &PhaseConfig) -> Self {
        Self { model, global_step: 0, phases: 0, fingerprint: cfg.fingerprint() }
    }

    pub fn has(&self, phase: Phase) -> bool {
        self.phases & phase.bit() != 0
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params: Vec<(&str, &Param<f32>)> = self.model.stores().into_iter().flat_map(|s| s.iter()).collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, p) in &params {
            put_entry(&mut out, name, p.value.shape(), p.value.data())?;
        }
        out.extend_from_slice(&(2 * params.len() as u32).to_le_bytes());
        for (name, p) in &params {
            put_entry(&mut out, &format!("adam.m.{name}"), p.value.shape(), &p.first_moment)?;
            put_entry(&mut out, &format!("adam.v.{name}"), p.value.shape(), &p.second_moment)?;
        }
        out.extend_from_slice(&self.global_step.to_le_bytes());
        out.push(self.phases);
        out.extend_from_slice(&self.fingerprint);
        let arch = self.model.cfg.to_text();
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, p) in &params {
            put_name(&mut out, name)?;
            out.extend_from_slice(&p.step.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not an ACVG checkpoint (bad magic)".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut values = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            values.push(r.entry()?);
        }
        let moment_count = r.u32()? as usize;
        if moment_count != 2 * count {
            return Err(Error::Corruption(format!("{moment_count} moment entries for {count} parameters")));
        }
        let mut moments = Vec::with_capacity(moment_count.min(1 << 17));
        for _ in 0..moment_count {
            moments.push(r.entry()?);
        }
        let global_step = r.u64()?;
        let phases = r.u8()?;
        let fingerprint = r.array()?;
        let arch_len = r.u32()? as usize;
        let cfg = ModelConfig::parse(&r.text(arch_len)?)?;
        let step_count = r.u32()? as usize;
        if step_count != count {
            return Err(Error::Corruption(format!("{step_count} step counters for {count} parameters")));
        }
        let mut steps = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..step_count {
            steps.push((r.name()?, r.u64()?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut model = Model::init(cfg, 0)?;
        let mut loaded = 0;
        for (i, (name, shape, data)) in values.into_iter().enumerate() {
            let store = match name.split('.').next() {
                Some("gen") => &mut model.gen,
                Some("actor") => &mut model.actor,
                Some("disc") => &mut model.disc,
                _ => return Err(Error::Checkpoint(format!("unexpected parameter `{name}`"))),
            };
            let p = store.get_mut(&name).ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {shape:?}, architecture expects {:?}",
                    p.value.shape()
                )));
            }
            let (m, v) = (&moments[2 * i], &moments[2 * i + 1]);
            if m.0 != format!("adam.m.{name}") || v.0 != format!("adam.v.{name}") || m.1 != shape || v.1 != shape {
                return Err(Error::Corruption(format!("moments of `{name}` are missing or misplaced")));
            }
            if steps[i].0 != name {
                return Err(Error::Corruption(format!("step counter of `{name}` is misplaced")));
            }
            *p = Param {
                value: Tensor::new(shape, data)?,
                first_moment: m.2.clone(),
                second_moment: v.2.clone(),
                step: steps[i].1,
            };
            loaded += 1;
        }
        let expected = model.stores().iter().map(|s| s.len()).sum::<usize>();
        if loaded != expected {
            return Err(Error::Checkpoint(format!("{loaded} parameters stored, architecture has {expected}")));
        }
        Ok(Self { model, global_step, phases, fingerprint })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
