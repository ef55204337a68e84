//! Synthetic moving-shapes videos with exact masks and optical flow.
//!
//! Foreground shapes translate and spin rigidly over a static background.
//! Static distractors share the foreground palette and shape kinds, so only
//! motion separates them from the objects to segment.

mod augment;
mod flow;
mod io;
mod shape;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape, Tensor};

pub use augment::{augment, AugmentConfig, Transform};
pub use flow::{flow_decode, flow_encode, FlowField, FLOW_MAX};
pub use io::{load_clip, load_dataset, save_clip, save_dataset};
pub use shape::{ShapeKind, ShapeSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    Gradient,
    #[default]
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    /// Moving foreground shapes, 1 to 3.
    pub shapes: usize,
    /// Static look-alike shapes.
    pub distractors: usize,
    pub background: Background,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Largest spin in degrees per frame.
    pub rotation_deg: f64,
    /// Shape radius range in pixels.
    pub radius: (f64, f64),
    pub flow_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 160,
            length: 8,
            shapes: 1,
            distractors: 2,
            background: Background::Noise,
            speed: (1.0, 4.0),
            rotation_deg: 4.0,
            radius: (10.0, 18.0),
            flow_max: FLOW_MAX,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("SynthConfig", d));
        if self.length < 2 {
            return bad(format!("clip length {} is below 2", self.length));
        }
        if !(1..=3).contains(&self.shapes) {
            return bad(format!("{} foreground shapes, expected 1 to 3", self.shapes));
        }
        let (lo, hi) = self.radius;
        if !(lo >= 1.0 && lo <= hi) {
            return bad(format!("radius range {lo}..{hi}"));
        }
        if 2.0 * hi + 2.0 > self.height.min(self.width) as f64 {
            return bad(format!("shape radius {hi} does not fit a {}×{} frame", self.height, self.width));
        }
        let (smin, smax) = self.speed;
        if !(smin >= 0.0 && smin <= smax) {
            return bad(format!("speed range {smin}..{smax}"));
        }
        if !(self.rotation_deg >= 0.0) || !(self.flow_max > 0.0) {
            return bad("rotation and flow_max must be non-negative and positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub background: Option<Background>,
    pub flow_max: Option<f64>,
    pub foreground: Vec<ShapeSpec>,
    pub distractors: Vec<ShapeSpec>,
}

/// Frames, encoded flows and masks of equal length. `flows[t]` is the motion
/// from frame `t` to `t + 1`; the last one continues the trajectories one
/// frame past the clip.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Tensor<f32>>,
    pub flows: Vec<Tensor<f32>>,
    pub masks: Vec<BinaryMask>,
    pub meta: ClipMeta,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of every frame.
    pub fn resolution(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s.h, s.w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 || self.flows.len() != n || self.masks.len() != n {
            return Err(Error::invalid(
                "VideoClip",
                format!("{n} frames, {} flows, {} masks", self.flows.len(), self.masks.len()),
            ));
        }
        let (h, w) = self.resolution();
        let want = Shape::new(1, 3, h, w);
        for (f, g) in self.frames.iter().zip(&self.flows) {
            f.expect_shape("VideoClip frame", want)?;
            g.expect_shape("VideoClip flow", want)?;
        }
        if self.masks.iter().any(|m| (m.height(), m.width()) != (h, w)) {
            return Err(Error::shape("VideoClip", "mask resolution differs from frames"));
        }
        Ok(())
    }

    /// Mask of frame `t` as a `(1, 1, H, W)` tensor.
    pub fn mask_tensor(&self, t: usize) -> Tensor<f32> {
        self.masks[t].to_tensor()
    }
}

const PALETTE: [[f32; 3]; 6] = [
    [0.90, 0.20, 0.15],
    [0.15, 0.65, 0.90],
    [0.95, 0.80, 0.10],
    [0.30, 0.85, 0.35],
    [0.85, 0.30, 0.85],
    [0.95, 0.55, 0.15],
];

fn background_image(kind: Background, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    let dark = |rng: &mut ChaCha8Rng| -> [f32; 3] { std::array::from_fn(|_| rng.gen_range(0.05..0.45)) };
    match kind {
        Background::Flat => vec![dark(rng); h * w],
        Background::Gradient => {
            let (a, b) = (dark(rng), dark(rng));
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            let span = (h as f64).hypot(w as f64);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 - h as f64 / 2.0, (i % w) as f64 - w as f64 / 2.0);
                    let t = (0.5 + (c * x + s * y) / span) as f32;
                    std::array::from_fn(|k| a[k] + t * (b[k] - a[k]))
                })
                .collect()
        }
        Background::Noise => {
            // bilinear value noise on a coarse lattice plus pixel noise
            let cell = 16;
            let (gh, gw) = (h / cell + 2, w / cell + 2);
            let grid: Vec<[f32; 3]> = (0..gh * gw).map(|_| dark(rng)).collect();
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f32 / cell as f32, (i % w) as f32 / cell as f32);
                    let (y0, x0) = (y as usize, x as usize);
                    let (fy, fx) = (y - y0 as f32, x - x0 as f32);
                    let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                    let jitter = rng.gen_range(-0.04..0.04);
                    std::array::from_fn(|k| {
                        let top = g(y0, x0)[k] * (1.0 - fx) + g(y0, x0 + 1)[k] * fx;
                        let bot = g(y0 + 1, x0)[k] * (1.0 - fx) + g(y0 + 1, x0 + 1)[k] * fx;
                        (top * (1.0 - fy) + bot * fy + jitter).clamp(0.0, 1.0)
                    })
                })
                .collect()
        }
    }
}

/// Draws frames, masks and flows of the given shapes. Distractors are drawn
/// first and foreground shapes on top, later ones occluding earlier ones.
pub fn render_clip(
    h: usize,
    w: usize,
    length: usize,
    background: &[[f32; 3]],
    foreground: &[ShapeSpec],
    distractors: &[ShapeSpec],
    flow_max: f64,
) -> Result<VideoClip> {
    if background.len() != h * w {
        return Err(Error::shape("render_clip", format!("{} background pixels for {h}×{w}", background.len())));
    }
    let shape = Shape::new(1, 3, h, w);
    let plane = h * w;
    let mut clip = VideoClip { frames: Vec::new(), flows: Vec::new(), masks: Vec::new(), meta: ClipMeta::default() };
    for t in 0..length {
        let mut rgb = vec![0.0f32; 3 * plane];
        let mut mask = vec![false; plane];
        let mut flow = FlowField::zeros(h, w);
        for i in 0..plane {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let mut color = background[i];
            for s in distractors.iter().filter(|s| s.contains(t, x, y)) {
                color = s.color;
            }
            if let Some(s) = foreground.iter().rev().find(|s| s.contains(t, x, y)) {
                color = s.color;
                mask[i] = true;
                (flow.u[i], flow.v[i]) = s.flow_at(t, x, y);
            }
            for k in 0..3 {
                rgb[k * plane + i] = color[k];
            }
        }
        clip.frames.push(Tensor::from_vec(shape, rgb)?);
        clip.flows.push(flow_encode(&flow, flow_max));
        clip.masks.push(BinaryMask::new(h, w, mask)?);
    }
    clip.meta.foreground = foreground.to_vec();
    clip.meta.distractors = distractors.to_vec();
    clip.meta.flow_max = Some(flow_max);
    Ok(clip)
}

/// A shape whose whole trajectory keeps it inside the frame.
fn sample_shape(cfg: &SynthConfig, kind: ShapeKind, color: [f32; 3], moving: bool, rng: &mut ChaCha8Rng) -> ShapeSpec {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let r = rng.gen_range(cfg.radius.0..=cfg.radius.1);
    let span = (cfg.length - 1) as f64;
    let (mut vx, mut vy, mut spin) = (0.0, 0.0, 0.0);
    if moving {
        let speed = rng.gen_range(cfg.speed.0..=cfg.speed.1);
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (vx, vy) = (speed * dir.cos(), speed * dir.sin());
        // slow down until the path fits the frame
        let fit =
            |extent: f64, v: f64| if v == 0.0 { 1.0 } else { ((extent - 1.0 - 2.0 * r) / (v.abs() * span)).min(1.0) };
        let k = fit(w, vx).min(fit(h, vy)).max(0.0);
        (vx, vy) = (vx * k, vy * k);
        spin = rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg);
    }
    let place = |extent: f64, v: f64, rng: &mut ChaCha8Rng| {
        let lo = r - (v * span).min(0.0);
        let hi = extent - 1.0 - r - (v * span).max(0.0);
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    let cx = place(w, vx, rng);
    let cy = place(h, vy, rng);
    ShapeSpec {
        kind,
        radius: r,
        aspect: rng.gen_range(0.5..=1.0),
        color,
        center: (cx, cy),
        velocity: (vx, vy),
        angle_deg: rng.gen_range(0.0..360.0),
        spin_deg: spin,
    }
}

/// Deterministic in `cfg` (including its seed).
pub fn generate_clip(cfg: &SynthConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let background = background_image(cfg.background, cfg.height, cfg.width, &mut rng);
    let mut palette = PALETTE;
    palette.shuffle(&mut rng);
    let foreground: Vec<ShapeSpec> = (0..cfg.shapes)
        .map(|i| {
            let kind = *ShapeKind::ALL.choose(&mut rng).expect("non-empty");
            sample_shape(cfg, kind, palette[i], true, &mut rng)
        })
        .collect();
    // look-alikes copy kind and colour of a foreground shape
    let distractors: Vec<ShapeSpec> = (0..cfg.distractors)
        .map(|_| {
            let twin = foreground.choose(&mut rng).expect("non-empty").clone();
            let mut s = sample_shape(cfg, twin.kind, twin.color, false, &mut rng);
            s.radius = twin.radius;
            s.aspect = twin.aspect;
            s
        })
        .collect();
    let mut clip =
        render_clip(cfg.height, cfg.width, cfg.length, &background, &foreground, &distractors, cfg.flow_max)?;
    clip.meta.name = format!("synth_{:06}", cfg.seed);
    clip.meta.seed = Some(cfg.seed);
    clip.meta.background = Some(cfg.background);
    Ok(clip)
}

/// `count` clips with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn generate_dataset(cfg: &SynthConfig, count: usize) -> Result<Vec<VideoClip>> {
    (0..count as u64).map(|i| generate_clip(&SynthConfig { seed: cfg.seed.wrapping_add(i), ..cfg.clone() })).collect()
}
