//! Binary sequence files, the dataset manifest, and PPM frame directories.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use super::{ActionNormalizer, SequenceRecord};
use crate::error::{Error, Result};

const FRAMES_MAGIC: &[u8; 4] = b"ACVD";
const FRAMES_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const DEFAULT_DT: f64 = 0.1;

/// Sequences split into training and held-out sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
}

impl Dataset {
    /// Splits `records` 20:5 into training and test sets, keeping order.
    pub fn split(mut records: Vec<SequenceRecord>) -> Self {
        let n = records.len();
        let n_train = if n < 2 { n } else { ((n * 4 + 2) / 5).clamp(1, n - 1) };
        let test = records.split_off(n_train);
        Self { train: records, test }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn seq_dir_name(index: usize) -> String {
    format!("seq_{index:05}")
}

/// Writes one sequence directory (`frames.bin`, `actions.txt`, `meta.txt`).
pub fn save_sequence(dir: &Path, seq: &SequenceRecord) -> Result<()> {
    seq.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let mut bin = Vec::with_capacity(24 + seq.len() * seq.frame_len() * 4);
    bin.extend_from_slice(FRAMES_MAGIC);
    for v in [FRAMES_VERSION, seq.len() as u32, seq.height as u32, seq.width as u32, seq.channels as u32] {
        bin.extend_from_slice(&v.to_le_bytes());
    }
    for frame in &seq.frames {
        for v in frame {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(&dir.join("frames.bin"), &bin)?;
    write_file(&dir.join("actions.txt"), format_actions(&seq.actions_raw).as_bytes())?;
    write_file(&dir.join("meta.txt"), format_meta(seq.dt, &seq.normalizer).as_bytes())
}

fn format_actions(actions: &[Vec<f32>]) -> String {
    let mut s = String::new();
    for a in actions {
        let line: Vec<String> = a.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn format_meta(dt: f64, normalizer: &ActionNormalizer) -> String {
    let ranges: Vec<String> = normalizer.ranges().iter().map(|(lo, hi)| format!("{lo},{hi}")).collect();
    format!("dt={dt}\nranges={}\n", ranges.join(";"))
}

fn parse_meta(path: &Path) -> Result<(f64, ActionNormalizer)> {
    let bad = |reason: String| Error::Ingestion { path: path.to_path_buf(), reason };
    let mut dt = None;
    let mut ranges = None;
    for line in read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        match key.trim() {
            "dt" => dt = Some(value.trim().parse::<f64>().map_err(|e| bad(format!("dt: {e}")))?),
            "ranges" => {
                let parsed = value
                    .trim()
                    .split(';')
                    .map(|pair| {
                        let (lo, hi) = pair.split_once(',').ok_or_else(|| bad(format!("range `{pair}`")))?;
                        let lo = lo.trim().parse::<f64>().map_err(|e| bad(format!("range min: {e}")))?;
                        let hi = hi.trim().parse::<f64>().map_err(|e| bad(format!("range max: {e}")))?;
                        Ok((lo, hi))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ranges = Some(ActionNormalizer::new(parsed)?);
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    let dt = dt.ok_or_else(|| bad("missing dt".into()))?;
    if !(dt > 0.0) {
        return Err(bad(format!("dt must be positive, got {dt}")));
    }
    Ok((dt, ranges.unwrap_or_default()))
}

fn parse_actions(path: &Path, expected: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
    let bad = |reason: String| Error::Ingestion { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read action file ({e}); expected {expected} lines")))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < expected {
        return Err(bad(format!("expected {expected} lines, found {}", lines.len())));
    }
    lines[..expected]
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let vals = line
                .split_whitespace()
                .map(|v| v.parse::<f32>().map_err(|e| bad(format!("line {}: {e}", i + 1))))
                .collect::<Result<Vec<f32>>>()?;
            if vals.len() != dim {
                return Err(bad(format!("line {} has {} values, expected {dim}", i + 1, vals.len())));
            }
            Ok(vals)
        })
        .collect()
}

pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let path = dir.join("frames.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() < 24 || &bytes[..4] != FRAMES_MAGIC {
        return Err(Error::Format(format!("{} is not a frame file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != FRAMES_VERSION as usize {
        return Err(Error::Format(format!("{}: unsupported version {}", path.display(), word(0))));
    }
    let (t, h, w, c) = (word(1), word(2), word(3), word(4));
    let frame_len = h * w * c;
    if bytes.len() != 24 + t * frame_len * 4 {
        return Err(Error::Corruption(format!(
            "{}: expected {} bytes of frame data, found {}",
            path.display(),
            t * frame_len * 4,
            bytes.len().saturating_sub(24)
        )));
    }
    let values: Vec<f32> = bytes[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let frames = values.chunks(frame_len.max(1)).map(<[f32]>::to_vec).collect();
    let (dt, normalizer) = parse_meta(&dir.join("meta.txt"))?;
    let actions_raw = parse_actions(&dir.join("actions.txt"), t, normalizer.dim())?;
    let seq = SequenceRecord { height: h, width: w, channels: c, frames, actions_raw, dt, normalizer };
    seq.validate()?;
    Ok(seq)
}

/// Writes `seq_<index>` directories plus a manifest recording the split.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut manifest = String::new();
    let all = data.train.iter().map(|s| ("train", s)).chain(data.test.iter().map(|s| ("test", s)));
    for (i, (split, seq)) in all.enumerate() {
        let name = seq_dir_name(i);
        save_sequence(&dir.join(&name), seq)?;
        manifest.push_str(&format!("{split} {name}\n"));
    }
    write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = read_text(&path)?;
    let mut data = Dataset::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (split, name) = line
            .split_once(' ')
            .ok_or_else(|| Error::Data(format!("{}: malformed line `{line}`", path.display())))?;
        let seq = load_sequence(&dir.join(name.trim()))?;
        match split {
            "train" => data.train.push(seq),
            "test" => data.test.push(seq),
            other => return Err(Error::Data(format!("{}: unknown split `{other}`", path.display()))),
        }
    }
    Ok(data)
}

/// Binary (P6) 8-bit PPM. Frames are `H x W x C` with `C` 1 or 3; single
/// channel frames are written as grey RGB.
pub fn write_ppm(path: &Path, frame: &[f32], height: usize, width: usize, channels: usize) -> Result<()> {
    if channels != 1 && channels != 3 || frame.len() != height * width * channels {
        return Err(Error::InvalidShape(format!(
            "cannot write {} values as a {height}x{width}x{channels} image",
            frame.len()
        )));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for px in frame.chunks(channels) {
        if channels == 1 {
            bytes.extend_from_slice(&[q(px[0]); 3]);
        } else {
            bytes.extend(px.iter().map(|&v| q(v)));
        }
    }
    write_file(path, &bytes)
}

/// Reads a P6 image as `(height, width, H x W x 3 values in [0, 1])`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |reason: &str| Error::Ingestion { path: path.to_path_buf(), reason: reason.to_string() };
    let file = fs::File::open(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let mut fields = Vec::new();
    let mut line = String::new();
    while fields.len() < 4 {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(format!("reading {}", path.display()), e))? == 0 {
            return Err(bad("truncated header"));
        }
        let content = line.split('#').next().unwrap_or("");
        fields.extend(content.split_whitespace().map(str::to_string));
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary P6 image"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed header"));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let mut data = vec![0u8; w * h * 3];
    reader.read_exact(&mut data).map_err(|_| bad("truncated pixel data"))?;
    Ok((h, w, data.into_iter().map(|b| b as f32 / 255.0).collect()))
}

/// Writes sequences in the external layout: `seq_<name>/frame_<00000>.ppm`
/// plus `actions.txt` and `meta.txt`.
pub fn export_external(dir: &Path, records: &[SequenceRecord]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for (i, seq) in records.iter().enumerate() {
        seq.validate()?;
        let sd = dir.join(seq_dir_name(i));
        fs::create_dir_all(&sd).map_err(|e| Error::io(format!("creating {}", sd.display()), e))?;
        for (t, frame) in seq.frames.iter().enumerate() {
            write_ppm(&sd.join(format!("frame_{t:05}.ppm")), frame, seq.height, seq.width, seq.channels)?;
        }
        write_file(&sd.join("actions.txt"), format_actions(&seq.actions_raw).as_bytes())?;
        write_file(&sd.join("meta.txt"), format_meta(seq.dt, &seq.normalizer).as_bytes())?;
        dirs.push(sd);
    }
    Ok(dirs)
}

fn sorted_entries(dir: &Path, keep: impl Fn(&str, &Path) -> bool) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        if keep(&name, &path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every `seq_*` directory of PPM frames under `dir`, in name order.
/// A missing `meta.txt` means `dt = 0.1` and the default action ranges.
pub fn ingest_external(dir: &Path) -> Result<Vec<SequenceRecord>> {
    let seq_dirs = sorted_entries(dir, |name, path| name.starts_with("seq_") && path.is_dir())?;
    let mut out = Vec::with_capacity(seq_dirs.len());
    for sd in seq_dirs {
        let frame_paths = sorted_entries(&sd, |name, _| name.starts_with("frame_") && name.ends_with(".ppm"))?;
        if frame_paths.len() < 2 {
            return Err(Error::Ingestion { path: sd, reason: "need at least 2 frames".into() });
        }
        let mut frames = Vec::with_capacity(frame_paths.len());
        let mut dims = None;
        for p in &frame_paths {
            let (h, w, data) = read_ppm(p)?;
            if *dims.get_or_insert((h, w)) != (h, w) {
                return Err(Error::Ingestion { path: p.clone(), reason: "frame size differs from the first frame".into() });
            }
            frames.push(data);
        }
        let (h, w) = dims.expect("at least one frame");
        let meta = sd.join("meta.txt");
        let (dt, normalizer) = if meta.exists() { parse_meta(&meta)? } else { (DEFAULT_DT, ActionNormalizer::default()) };
        let actions_raw = parse_actions(&sd.join("actions.txt"), frames.len(), normalizer.dim())?;
        out.push(SequenceRecord { height: h, width: w, channels: 3, frames, actions_raw, dt, normalizer });
    }
    Ok(out)
}
