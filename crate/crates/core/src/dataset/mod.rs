//! Frame+action sequences: the synthetic egocentric world, flow maps, action
//! normalization, clip extraction, batching and the on-disk formats.

mod io;
mod world;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{
    export_external, ingest_external, load_dataset, load_sequence, read_ppm, save_dataset, save_sequence,
    write_ppm, Dataset,
};
pub use world::{simulate_dataset, simulate_sequence, CameraMode, Policy, WorldConfig};

/// Frames per clip and frames skipped between consecutive clips.
pub const CLIP_LEN: usize = 50;
pub const CLIP_GAP: usize = 10;
/// Action dimension: forward velocity and turn rate.
pub const ACTION_DIM: usize = 2;

/// Per-dimension min/max bounds of the raw (physical) actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionNormalizer {
    ranges: Vec<(f64, f64)>,
}

impl Default for ActionNormalizer {
    fn default() -> Self {
        Self { ranges: vec![(0.0, 0.1), (-1.8, 1.8)] }
    }
}

impl ActionNormalizer {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Config("action ranges must not be empty".into()));
        }
        if let Some((lo, hi)) = ranges.iter().find(|(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config(format!("action range [{lo}, {hi}] needs max > min")));
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Maps raw actions affinely onto `[-1, 1]`. Out-of-range inputs are
    /// clamped with a warning.
    pub fn normalize(&self, raw: &[f32]) -> Vec<f32> {
        debug_assert_eq!(raw.len(), self.ranges.len());
        raw.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| {
                let mut v = v as f64;
                // Stored actions are 32-bit, so the bounds themselves may round
                // slightly outside; only real excursions are worth a warning.
                let tol = 1e-6 * (hi - lo);
                if v < lo - tol || v > hi + tol {
                    log::warn!("action {v} outside [{lo}, {hi}], clamping");
                }
                v = v.clamp(lo, hi);
                (2.0 * (v - lo) / (hi - lo) - 1.0) as f32
            })
            .collect()
    }

    pub fn denormalize(&self, a: &[f32]) -> Vec<f32> {
        a.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| ((v as f64 + 1.0) * 0.5 * (hi - lo) + lo) as f32)
            .collect()
    }
}

/// One recorded episode. Frames are `H x W x C` (channel-last) in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: Vec<Vec<f32>>,
    pub actions_raw: Vec<Vec<f32>>,
    pub dt: f64,
    pub normalizer: ActionNormalizer,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidLength(format!("sequence needs at least 2 frames, got {}", self.frames.len())));
        }
        if self.actions_raw.len() != self.frames.len() {
            return Err(Error::InvalidLength(format!(
                "{} frames but {} actions",
                self.frames.len(),
                self.actions_raw.len()
            )));
        }
        let n = self.frame_len();
        if let Some(t) = self.frames.iter().position(|f| f.len() != n) {
            return Err(Error::InvalidShape(format!("frame {t} does not have {n} values")));
        }
        let m = self.normalizer.dim();
        if let Some(t) = self.actions_raw.iter().position(|a| a.len() != m) {
            return Err(Error::InvalidShape(format!("action {t} does not have {m} components")));
        }
        Ok(())
    }

    /// Flow maps of the whole record; the first one is zero.
    pub fn flows(&self) -> Vec<Vec<f32>> {
        let mut out = vec![vec![0.0; self.frame_len()]];
        for w in self.frames.windows(2) {
            out.push(compute_flow(&w[1], &w[0]).expect("frames share a shape"));
        }
        out
    }

    pub fn normalized_actions(&self) -> Vec<Vec<f32>> {
        self.actions_raw.iter().map(|a| self.normalizer.normalize(a)).collect()
    }

    /// Frames `start..start + len` as a new record.
    pub fn slice(&self, start: usize, len: usize) -> SequenceRecord {
        SequenceRecord {
            frames: self.frames[start..start + len].to_vec(),
            actions_raw: self.actions_raw[start..start + len].to_vec(),
            ..self.header()
        }
    }

    fn header(&self) -> SequenceRecord {
        SequenceRecord {
            height: self.height,
            width: self.width,
            channels: self.channels,
            frames: Vec::new(),
            actions_raw: Vec::new(),
            dt: self.dt,
            normalizer: self.normalizer.clone(),
        }
    }
}

/// First-order pixel flow `x_t - x_prev`.
pub fn compute_flow(x_t: &[f32], x_prev: &[f32]) -> Result<Vec<f32>> {
    if x_t.len() != x_prev.len() {
        return Err(Error::InvalidShape(format!(
            "flow needs equal frames, got {} and {} values",
            x_t.len(),
            x_prev.len()
        )));
    }
    Ok(x_t.iter().zip(x_prev).map(|(a, b)| a - b).collect())
}

/// Complete clips of `clip_len` frames starting every `clip_len + gap` frames.
pub fn make_clips(seq: &SequenceRecord, clip_len: usize, gap: usize) -> Vec<SequenceRecord> {
    clip_offsets(seq.len(), clip_len, gap).map(|s| seq.slice(s, clip_len)).collect()
}

pub fn clip_offsets(len: usize, clip_len: usize, gap: usize) -> impl Iterator<Item = usize> {
    let step = clip_len + gap;
    (0..).map(move |i| i * step).take_while(move |&s| clip_len > 0 && s + clip_len <= len)
}

/// Keeps every `factor`-th frame with its action; `dt` grows accordingly.
pub fn subsample_dt(clip: &SequenceRecord, factor: usize) -> Result<SequenceRecord> {
    if factor == 0 {
        return Err(Error::Config("subsampling factor must be at least 1".into()));
    }
    let kept: Vec<usize> = (0..clip.len()).step_by(factor).collect();
    if kept.len() < 2 {
        return Err(Error::InvalidLength(format!(
            "subsampling {} frames by {factor} leaves {}",
            clip.len(),
            kept.len()
        )));
    }
    Ok(SequenceRecord {
        frames: kept.iter().map(|&i| clip.frames[i].clone()).collect(),
        actions_raw: kept.iter().map(|&i| clip.actions_raw[i].clone()).collect(),
        dt: clip.dt * factor as f64,
        ..clip.header()
    })
}

/// A batch of windows: `n` conditioning steps followed by `horizon` targets.
///
/// Index `k` of each vector is time `t = k - n + 1`, so `k = n - 1` is the
/// last observed step `t = 0`. Frames and flows are `B x C x H x W`, actions
/// (normalized) `B x m`. The flow at `k = 0` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatch {
    pub n: usize,
    pub horizon: usize,
    pub frames: Vec<Tensor<f32>>,
    pub flows: Vec<Tensor<f32>>,
    pub actions: Vec<Tensor<f32>>,
}

fn hwc_to_chw(frame: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; frame.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = frame[(y * w + x) * c + ch];
            }
        }
    }
    out
}

/// Inverse of the frame layout conversion used by [`ClipBatch`]: `C x H x W`
/// back to `H x W x C`.
pub fn chw_to_hwc(frame: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; frame.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + ch] = frame[(ch * h + y) * w + x];
            }
        }
    }
    out
}

/// Window of `n` past and `horizon` future frames of `clip` starting at
/// `offset`, with the first flow of the window set to zero.
pub fn build_clip_batch(clip: &SequenceRecord, n: usize, horizon: usize, offset: usize) -> Result<ClipBatch> {
    if n < 2 {
        return Err(Error::InsufficientHistory(n));
    }
    if horizon == 0 || offset + n + horizon > clip.len() {
        return Err(Error::Window(format!(
            "window of {n} past + {horizon} future frames at offset {offset} does not fit a {}-frame clip",
            clip.len()
        )));
    }
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    let shape = [1, c, h, w];
    let mut batch = ClipBatch { n, horizon, frames: Vec::new(), flows: Vec::new(), actions: Vec::new() };
    for k in 0..n + horizon {
        let idx = offset + k;
        let frame = &clip.frames[idx];
        let flow = if k == 0 {
            vec![0.0; frame.len()]
        } else {
            compute_flow(frame, &clip.frames[idx - 1])?
        };
        batch.frames.push(Tensor::new(shape.to_vec(), hwc_to_chw(frame, h, w, c))?);
        batch.flows.push(Tensor::new(shape.to_vec(), hwc_to_chw(&flow, h, w, c))?);
        let a = clip.normalizer.normalize(&clip.actions_raw[idx]);
        batch.actions.push(Tensor::new(vec![1, a.len()], a)?);
    }
    Ok(batch)
}

impl ClipBatch {
    pub fn batch_size(&self) -> usize {
        self.actions[0].shape()[0]
    }

    pub fn len(&self) -> usize {
        self.n + self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenates windows of equal geometry along the batch axis.
    pub fn stack(parts: &[ClipBatch]) -> Result<ClipBatch> {
        let first = parts.first().ok_or_else(|| Error::Data("cannot stack an empty batch list".into()))?;
        if parts.iter().any(|p| p.n != first.n || p.horizon != first.horizon) {
            return Err(Error::InvalidShape("stacked windows differ in length".into()));
        }
        let cat = |pick: fn(&ClipBatch) -> &Vec<Tensor<f32>>| -> Result<Vec<Tensor<f32>>> {
            (0..first.len())
                .map(|k| {
                    let mut shape = pick(first)[k].shape().to_vec();
                    let mut data = Vec::new();
                    for p in parts {
                        let t = &pick(p)[k];
                        if t.shape()[1..] != shape[1..] {
                            return Err(Error::InvalidShape(format!(
                                "cannot stack {:?} with {:?}",
                                t.shape(),
                                shape
                            )));
                        }
                        data.extend_from_slice(t.data());
                    }
                    shape[0] = data.len() / shape[1..].iter().product::<usize>();
                    Tensor::new(shape, data)
                })
                .collect()
        };
        Ok(ClipBatch {
            n: first.n,
            horizon: first.horizon,
            frames: cat(|b| &b.frames)?,
            flows: cat(|b| &b.flows)?,
            actions: cat(|b| &b.actions)?,
        })
    }
}

#[cfg(test)]
mod tests;
