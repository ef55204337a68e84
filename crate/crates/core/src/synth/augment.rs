use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::synth::flow::{flow_decode, flow_encode, FlowField, FLOW_MAX};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Zoom range; zooming in crops at a random offset.
    pub scale: (f64, f64),
    pub flow_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, max_rotation_deg: 10.0, scale: (1.0, 1.15), flow_max: FLOW_MAX }
    }
}

/// Horizontal flip, then rotation and zoom about the image centre, then a
/// shift. Output pixels sample the source through the inverse map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub angle_deg: f64,
    pub scale: f64,
    pub offset: (f64, f64),
}

impl Transform {
    pub const IDENTITY: Transform = Transform { flip: false, angle_deg: 0.0, scale: 1.0, offset: (0.0, 0.0) };

    pub fn flip() -> Self {
        Self { flip: true, ..Self::IDENTITY }
    }

    pub fn sample(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0));
        let angle_deg =
            if cfg.max_rotation_deg > 0.0 { rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg) } else { 0.0 };
        let scale = if cfg.scale.1 > cfg.scale.0 { rng.gen_range(cfg.scale.0..=cfg.scale.1) } else { cfg.scale.0 };
        let slack = |n: usize| (scale - 1.0).max(0.0) * (n as f64 - 1.0) / 2.0;
        let shift = |s: f64, rng: &mut dyn rand::RngCore| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        let offset = (shift(slack(w), rng), shift(slack(h), rng));
        Self { flip, angle_deg, scale, offset }
    }

    /// Source position of output pixel `(x, y)`.
    fn source(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (dx, dy) = (x - self.offset.0 - cx, y - self.offset.1 - cy);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (sx, sy) = ((c * dx + s * dy) / self.scale + cx, (-s * dx + c * dy) / self.scale + cy);
        if self.flip {
            (w as f64 - 1.0 - sx, sy)
        } else {
            (sx, sy)
        }
    }

    /// The flow vector seen after the transform.
    fn vector(&self, u: f64, v: f64) -> (f64, f64) {
        let u = if self.flip { -u } else { u };
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        (self.scale * (c * u - s * v), self.scale * (s * u + c * v))
    }

    /// Applies the transform to a frame `(1, C, H, W)`, an encoded flow and a mask.
    pub fn apply(
        &self,
        frame: &Tensor<f32>,
        flow: &Tensor<f32>,
        mask: &BinaryMask,
        flow_max: f64,
    ) -> Result<(Tensor<f32>, Tensor<f32>, BinaryMask)> {
        let s = frame.shape();
        flow.expect_shape("augment", Shape::new(1, 3, s.h, s.w))?;
        if s.n != 1 || (mask.height(), mask.width()) != (s.h, s.w) {
            return Err(Error::shape("augment", format!("frame {s}, mask {}×{}", mask.height(), mask.width())));
        }
        let (h, w) = (s.h, s.w);
        let sources: Vec<(f64, f64)> = (0..h * w).map(|i| self.source((i % w) as f64, (i / w) as f64, h, w)).collect();

        let frame_out = Tensor::from_fn(s, |_, c, y, x| {
            let (sx, sy) = sources[y * w + x];
            bilinear(frame.plane(0, c), h, w, sx, sy) as f32
        });

        let field = flow_decode(flow, flow_max)?;
        let mut moved = FlowField::zeros(h, w);
        for (i, &(sx, sy)) in sources.iter().enumerate() {
            let u = bilinear(&field.u, h, w, sx, sy);
            let v = bilinear(&field.v, h, w, sx, sy);
            (moved.u[i], moved.v[i]) = self.vector(u, v);
        }

        let mask_out = BinaryMask::from_fn(h, w, |y, x| {
            let (sx, sy) = sources[y * w + x];
            let (rx, ry) = (sx.round(), sy.round());
            rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 && mask.get(ry as usize, rx as usize)
        });
        Ok((frame_out, flow_encode(&moved, flow_max), mask_out))
    }
}

/// Bilinear sample with edge replication.
fn bilinear<T: Copy + Into<f64>>(plane: &[T], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| -> f64 { plane[yy * w + xx].into() };
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    if fx == 0.0 && fy == 0.0 {
        return at(y0, x0);
    }
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Draws a random [`Transform`] and applies it to all three inputs.
pub fn augment(
    frame: &Tensor<f32>,
    flow: &Tensor<f32>,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>, BinaryMask)> {
    let s = frame.shape();
    Transform::sample(cfg, s.h, s.w, rng).apply(frame, flow, mask, cfg.flow_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_clip, render_clip, ShapeKind, ShapeSpec, SynthConfig};
    use crate::testutil::rng;

    fn clip() -> crate::synth::VideoClip {
        generate_clip(&SynthConfig {
            height: 40,
            width: 56,
            length: 2,
            radius: (6.0, 9.0),
            seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    fn max_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
        a.max_abs_diff(b).unwrap()
    }

    #[test]
    fn identity_changes_nothing() {
        let c = clip();
        let (f, g, m) = Transform::IDENTITY.apply(&c.frames[0], &c.flows[0], &c.masks[0], FLOW_MAX).unwrap();
        assert_eq!(f, c.frames[0]);
        assert!(max_diff(&g, &c.flows[0]) < 1e-6);
        assert_eq!(m, c.masks[0]);
    }

    #[test]
    fn flip_is_an_involution() {
        let c = clip();
        let t = Transform::flip();
        let (f1, g1, m1) = t.apply(&c.frames[0], &c.flows[0], &c.masks[0], FLOW_MAX).unwrap();
        assert_eq!(m1, c.masks[0].flip_horizontal());
        let (f2, g2, m2) = t.apply(&f1, &g1, &m1, FLOW_MAX).unwrap();
        assert_eq!(f2, c.frames[0]);
        assert!(max_diff(&g2, &c.flows[0]) < 1e-6);
        assert_eq!(m2, c.masks[0]);
        // forced flips through the random path
        let cfg = AugmentConfig { flip_prob: 1.0, max_rotation_deg: 0.0, scale: (1.0, 1.0), ..Default::default() };
        let mut r = rng(1);
        let (f1, g1, m1) = augment(&c.frames[0], &c.flows[0], &c.masks[0], &cfg, &mut r).unwrap();
        let (f2, _, m2) = augment(&f1, &g1, &m1, &cfg, &mut r).unwrap();
        assert_eq!((f2, m2), (c.frames[0].clone(), c.masks[0].clone()));
    }

    #[test]
    fn flip_negates_horizontal_flow() {
        let (h, w) = (24, 32);
        let s = ShapeSpec {
            kind: ShapeKind::Rectangle,
            radius: 7.0,
            aspect: 1.0,
            color: [1.0; 3],
            center: (15.0, 11.0),
            velocity: (2.0, 0.0),
            angle_deg: 0.0,
            spin_deg: 0.0,
        };
        let c = render_clip(h, w, 2, &vec![[0.0; 3]; h * w], &[s], &[], FLOW_MAX).unwrap();
        let (_, g, m) = Transform::flip().apply(&c.frames[0], &c.flows[0], &c.masks[0], FLOW_MAX).unwrap();
        let d = flow_decode(&g, FLOW_MAX).unwrap();
        for y in 0..h {
            for x in 0..w {
                if m.get(y, x) {
                    let (u, v) = d.at(y, x);
                    assert!((u + 2.0).abs() < 1e-5 && v.abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_mask_area_and_rotates_vectors() {
        let (h, w) = (64, 64);
        let s = ShapeSpec {
            kind: ShapeKind::Circle,
            radius: 12.0,
            aspect: 1.0,
            color: [1.0; 3],
            center: (31.5, 31.5),
            velocity: (3.0, 0.0),
            angle_deg: 0.0,
            spin_deg: 0.0,
        };
        let c = render_clip(h, w, 2, &vec![[0.0; 3]; h * w], &[s], &[], FLOW_MAX).unwrap();
        let area = c.masks[0].count() as f64;
        assert!(area >= 100.0);
        for angle in [-10.0, -4.5, 7.0, 10.0] {
            let t = Transform { angle_deg: angle, ..Transform::IDENTITY };
            let (_, g, m) = t.apply(&c.frames[0], &c.flows[0], &c.masks[0], FLOW_MAX).unwrap();
            assert!((m.count() as f64 - area).abs() / area <= 0.02, "{angle}: {} vs {area}", m.count());
            let d = flow_decode(&g, FLOW_MAX).unwrap();
            let (u, v) = d.at(32, 32);
            let a = f64::to_radians(angle);
            assert!((u - 3.0 * a.cos()).abs() < 1e-4 && (v - 3.0 * a.sin()).abs() < 1e-4);
        }
    }

    #[test]
    fn random_augmentation_is_seeded_and_keeps_shapes() {
        let c = clip();
        let cfg = AugmentConfig::default();
        let a = augment(&c.frames[1], &c.flows[1], &c.masks[1], &cfg, &mut rng(5)).unwrap();
        let b = augment(&c.frames[1], &c.flows[1], &c.masks[1], &cfg, &mut rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.shape(), c.frames[1].shape());
        assert!(a.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
