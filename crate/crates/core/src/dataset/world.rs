//! Top-down toroidal world observed by a camera riding a unicycle platform.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionNormalizer, SequenceRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraMode {
    /// Heading integrates the turn rate.
    Unicycle,
    /// Heading stays fixed; the turn rate is forced to zero.
    Translate,
}

impl std::str::FromStr for CameraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unicycle" => Ok(Self::Unicycle),
            "translate" => Ok(Self::Translate),
            other => Err(Error::Config(format!("unknown camera mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    /// Steers toward random waypoints `min_dist..max_dist` metres ahead.
    Waypoint { min_dist: f64, max_dist: f64, heading_gain: f64 },
    /// The waypoint is the start pose: zero velocity throughout.
    Hold,
    /// Constant commanded `(v, omega)` (still slew-limited).
    Constant { v: f64, omega: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Side of the square, wrapping world texture in pixels.
    pub texture_size: usize,
    pub pixels_per_meter: f64,
    pub sprite_count: usize,
    pub sprite_radius: (f64, f64),
    /// Sprite speed range in pixels per frame.
    pub sprite_speed: (f64, f64),
    pub camera: CameraMode,
    pub policy: Policy,
    /// Largest change of each raw action component between frames.
    pub slew: Vec<f64>,
    pub dt: f64,
    pub normalizer: ActionNormalizer,
    /// Simulated steps discarded before recording starts.
    pub burn_in: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            texture_size: 256,
            pixels_per_meter: 100.0,
            sprite_count: 16,
            sprite_radius: (2.5, 5.0),
            sprite_speed: (0.2, 0.8),
            camera: CameraMode::Unicycle,
            policy: Policy::Waypoint { min_dist: 0.05, max_dist: 0.3, heading_gain: 3.0 },
            slew: vec![0.02, 0.6],
            dt: 0.1,
            normalizer: ActionNormalizer::default(),
            burn_in: 20,
        }
    }
}

impl WorldConfig {
    fn check(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "frame extents must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.texture_size < 2 {
            return Err(Error::Config("texture must be at least 2 pixels wide".into()));
        }
        if !(self.dt > 0.0) || !(self.pixels_per_meter > 0.0) {
            return Err(Error::Config("dt and pixels_per_meter must be positive".into()));
        }
        if self.normalizer.dim() != 2 || self.slew.len() != 2 {
            return Err(Error::Config("the unicycle world has exactly two action components".into()));
        }
        Ok(())
    }
}

struct Sprite {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    color: Vec<f64>,
}

struct World {
    size: usize,
    channels: usize,
    texture: Vec<f64>,
    sprites: Vec<Sprite>,
}

fn wrap_delta(d: f64, size: f64) -> f64 {
    let d = d.rem_euclid(size);
    if d > size / 2.0 {
        d - size
    } else {
        d
    }
}

impl World {
    fn new(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Self {
        let (s, c) = (cfg.texture_size, cfg.channels);
        let sf = s as f64;
        let mut texture = vec![0.5; s * s * c];

        // Periodic sinusoids (integer frequencies keep the texture seamless).
        for ch in 0..c {
            for _ in 0..6 {
                let (fx, fy) = loop {
                    let f = (rng.random_range(-6i32..=6), rng.random_range(-6i32..=6));
                    if f != (0, 0) {
                        break f;
                    }
                };
                let amp = rng.random_range(0.04..0.1);
                let phase = rng.random_range(0.0..TAU);
                for y in 0..s {
                    for x in 0..s {
                        let arg = TAU * (fx as f64 * x as f64 + fy as f64 * y as f64) / sf + phase;
                        texture[(y * s + x) * c + ch] += amp * arg.sin();
                    }
                }
            }
        }

        // Soft blobs give local structure at the frame scale.
        let blobs = s * s / 300;
        for _ in 0..blobs {
            let (bx, by) = (rng.random_range(0.0..sf), rng.random_range(0.0..sf));
            let r: f64 = rng.random_range(1.5..5.0);
            let color: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
            let reach = (2.0 * r).ceil() as i64;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let d2 = (dx * dx + dy * dy) as f64;
                    let alpha = 0.9 * (-d2 / (2.0 * r * r)).exp();
                    let x = (bx.floor() as i64 + dx).rem_euclid(s as i64) as usize;
                    let y = (by.floor() as i64 + dy).rem_euclid(s as i64) as usize;
                    for (ch, &col) in color.iter().enumerate() {
                        let p = &mut texture[(y * s + x) * c + ch];
                        *p = (1.0 - alpha) * *p + alpha * col;
                    }
                }
            }
        }
        texture.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

        let sprites = (0..cfg.sprite_count)
            .map(|_| {
                let speed = if cfg.sprite_speed.1 > cfg.sprite_speed.0 {
                    rng.random_range(cfg.sprite_speed.0..cfg.sprite_speed.1)
                } else {
                    cfg.sprite_speed.0
                };
                let dir = rng.random_range(0.0..TAU);
                let radius = if cfg.sprite_radius.1 > cfg.sprite_radius.0 {
                    rng.random_range(cfg.sprite_radius.0..cfg.sprite_radius.1)
                } else {
                    cfg.sprite_radius.0
                };
                // Saturated colours stand out from the background.
                let color = (0..c).map(|_| if rng.random_bool(0.5) { 0.95 } else { 0.05 }).collect();
                Sprite {
                    x: rng.random_range(0.0..sf),
                    y: rng.random_range(0.0..sf),
                    vx: speed * dir.cos(),
                    vy: speed * dir.sin(),
                    radius,
                    color,
                }
            })
            .collect();

        Self { size: s, channels: c, texture, sprites }
    }

    fn advance_sprites(&mut self) {
        let sf = self.size as f64;
        for sp in &mut self.sprites {
            sp.x = (sp.x + sp.vx).rem_euclid(sf);
            sp.y = (sp.y + sp.vy).rem_euclid(sf);
        }
    }

    /// Bilinear texture lookup at continuous pixel coordinates, plus sprites.
    fn sample(&self, x: f64, y: f64, out: &mut [f64]) {
        let s = self.size;
        let sf = s as f64;
        let (x, y) = (x.rem_euclid(sf), y.rem_euclid(sf));
        // Texel centres sit at integer coordinates.
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize % s, y0 as usize % s);
        let (x1, y1) = ((x0 + 1) % s, (y0 + 1) % s);
        let c = self.channels;
        for (ch, o) in out.iter_mut().enumerate() {
            let t = |xx: usize, yy: usize| self.texture[(yy * s + xx) * c + ch];
            *o = (1.0 - fy) * ((1.0 - fx) * t(x0, y0) + fx * t(x1, y0)) + fy * ((1.0 - fx) * t(x0, y1) + fx * t(x1, y1));
        }
        for sp in &self.sprites {
            let dx = wrap_delta(x - sp.x, sf);
            let dy = wrap_delta(y - sp.y, sf);
            let alpha = (sp.radius - (dx * dx + dy * dy).sqrt() + 0.5).clamp(0.0, 1.0);
            if alpha > 0.0 {
                for (o, &col) in out.iter_mut().zip(&sp.color) {
                    *o = (1.0 - alpha) * *o + alpha * col;
                }
            }
        }
    }

    /// Egocentric view: the heading points to the top of the frame and the
    /// camera sits at the frame centre.
    fn render(&self, cfg: &WorldConfig, pose: &Pose) -> Vec<f32> {
        let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
        let (cx, cy) = (pose.x * cfg.pixels_per_meter, pose.y * cfg.pixels_per_meter);
        let (fwd_x, fwd_y) = (pose.theta.cos(), pose.theta.sin());
        let (right_x, right_y) = (fwd_y, -fwd_x);
        let mut px = vec![0.0; c];
        let mut frame = Vec::with_capacity(h * w * c);
        for r in 0..h {
            let ahead = h as f64 / 2.0 - (r as f64 + 0.5);
            for col in 0..w {
                let side = col as f64 + 0.5 - w as f64 / 2.0;
                let x = cx + ahead * fwd_x + side * right_x;
                let y = cy + ahead * fwd_y + side * right_y;
                self.sample(x, y, &mut px);
                frame.extend(px.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
            }
        }
        frame
    }
}

#[derive(Clone, Copy, Debug)]
struct Pose {
    x: f64,
    y: f64,
    theta: f64,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

struct Controller {
    policy: Policy,
    target: Option<(f64, f64)>,
}

impl Controller {
    /// Commanded `(v, omega)` before range clipping and slew limiting.
    fn command(&mut self, pose: &Pose, cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let (v_max, w_max) = (cfg.normalizer.ranges()[0].1, cfg.normalizer.ranges()[1].1);
        match self.policy {
            Policy::Hold => (0.0, 0.0),
            Policy::Constant { v, omega } => (v, omega),
            Policy::Waypoint { min_dist, max_dist, heading_gain } => {
                let reached = self
                    .target
                    .map(|(tx, ty)| ((tx - pose.x).powi(2) + (ty - pose.y).powi(2)).sqrt() < 0.02)
                    .unwrap_or(true);
                if reached {
                    let d = if max_dist > min_dist { rng.random_range(min_dist..max_dist) } else { min_dist };
                    let bearing = pose.theta + rng.random_range(-PI..PI);
                    self.target = Some((pose.x + d * bearing.cos(), pose.y + d * bearing.sin()));
                }
                let (tx, ty) = self.target.expect("target set above");
                let err = wrap_angle((ty - pose.y).atan2(tx - pose.x) - pose.theta);
                let omega = (heading_gain * err).clamp(-w_max, w_max);
                let v = v_max * err.cos().max(0.0);
                (v, omega)
            }
        }
    }
}

fn step_action(prev: &[f64; 2], cmd: (f64, f64), cfg: &WorldConfig) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (i, target) in [cmd.0, cmd.1].into_iter().enumerate() {
        let (lo, hi) = cfg.normalizer.ranges()[i];
        let limited = target.clamp(prev[i] - cfg.slew[i], prev[i] + cfg.slew[i]);
        out[i] = limited.clamp(lo, hi);
    }
    if cfg.camera == CameraMode::Translate {
        out[1] = 0.0_f64.clamp(cfg.normalizer.ranges()[1].0, cfg.normalizer.ranges()[1].1);
    }
    out
}

/// Renders `len` frames and the raw actions driving the camera between them.
///
/// Frame `t` is rendered at pose `t`; action `t` then moves the camera to pose
/// `t + 1` (heading first, then position along the new heading).
pub fn simulate_sequence(cfg: &WorldConfig, seed: u64, len: usize) -> Result<SequenceRecord> {
    if len < 2 {
        return Err(Error::InvalidLength(format!("a sequence needs at least 2 frames, got {len}")));
    }
    cfg.check()?;
    let mut world_rng = seed::rng(seed, "world", 0);
    let mut policy_rng = seed::rng(seed, "policy", 0);
    let mut world = World::new(cfg, &mut world_rng);
    let extent = cfg.texture_size as f64 / cfg.pixels_per_meter;
    let mut pose = Pose {
        x: world_rng.random_range(0.0..extent),
        y: world_rng.random_range(0.0..extent),
        theta: match cfg.camera {
            CameraMode::Unicycle => world_rng.random_range(-PI..PI),
            CameraMode::Translate => 0.0,
        },
    };
    let mut controller = Controller { policy: cfg.policy, target: None };
    let mut action = [0.0f64; 2];
    let advance = |pose: &mut Pose, a: &[f64; 2]| {
        pose.theta = wrap_angle(pose.theta + a[1] * cfg.dt);
        pose.x += a[0] * pose.theta.cos() * cfg.dt;
        pose.y += a[0] * pose.theta.sin() * cfg.dt;
    };

    for _ in 0..cfg.burn_in {
        let cmd = controller.command(&pose, cfg, &mut policy_rng);
        action = step_action(&action, cmd, cfg);
        advance(&mut pose, &action);
        world.advance_sprites();
    }

    let mut frames = Vec::with_capacity(len);
    let mut actions_raw = Vec::with_capacity(len);
    for _ in 0..len {
        frames.push(world.render(cfg, &pose));
        let cmd = controller.command(&pose, cfg, &mut policy_rng);
        action = step_action(&action, cmd, cfg);
        actions_raw.push(action.iter().map(|&v| v as f32).collect());
        advance(&mut pose, &action);
        world.advance_sprites();
    }

    Ok(SequenceRecord {
        height: cfg.height,
        width: cfg.width,
        channels: cfg.channels,
        frames,
        actions_raw,
        dt: cfg.dt,
        normalizer: cfg.normalizer.clone(),
    })
}

/// `count` sequences of `len` frames, sequence `i` seeded from `(seed, i)`,
/// split 20:5 into training and test sets.
pub fn simulate_dataset(cfg: &WorldConfig, count: usize, len: usize, seed: u64) -> Result<super::Dataset> {
    let records = (0..count)
        .map(|i| simulate_sequence(cfg, seed::derive(seed, "sequence", i as u64), len))
        .collect::<Result<Vec<_>>>()?;
    Ok(super::Dataset::split(records))
}
