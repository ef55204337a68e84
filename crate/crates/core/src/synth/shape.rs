use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Rectangle, ShapeKind::Triangle];
}

/// A rigid shape and its trajectory. Positions are in pixel coordinates
/// with pixel `(y, x)` centred on the point `(x, y)`; every point of the
/// shape lies within `radius` of its centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub radius: f64,
    /// Height/width ratio of a rectangle.
    pub aspect: f64,
    pub color: [f32; 3],
    /// Centre `(x, y)` in frame 0.
    pub center: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub angle_deg: f64,
    /// Degrees per frame.
    pub spin_deg: f64,
}

impl ShapeSpec {
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        (self.center.0 + t * self.velocity.0, self.center.1 + t * self.velocity.1)
    }

    fn angle_at(&self, t: f64) -> f64 {
        (self.angle_deg + t * self.spin_deg).to_radians()
    }

    pub fn is_static(&self) -> bool {
        self.velocity == (0.0, 0.0) && self.spin_deg == 0.0
    }

    /// Whether the point `(x, y)` is covered in frame `t`.
    pub fn contains(&self, t: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center_at(t as f64);
        let (dx, dy) = (x - cx, y - cy);
        let r = self.radius;
        if self.kind == ShapeKind::Circle {
            return dx * dx + dy * dy <= r * r;
        }
        let (s, c) = self.angle_at(t as f64).sin_cos();
        let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
        match self.kind {
            ShapeKind::Circle => unreachable!(),
            ShapeKind::Rectangle => {
                let n = (1.0 + self.aspect * self.aspect).sqrt();
                lx.abs() <= r / n && ly.abs() <= r * self.aspect / n
            }
            ShapeKind::Triangle => {
                let v: Vec<(f64, f64)> = (0..3)
                    .map(|k| {
                        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                        (r * a.cos(), r * a.sin())
                    })
                    .collect();
                let side = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (ly - a.1) - (b.1 - a.1) * (lx - a.0);
                let d = [side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0])];
                d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0)
            }
        }
    }

    /// Displacement of the material point at `(x, y)` from frame `t` to `t + 1`.
    pub fn flow_at(&self, t: usize, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.center_at(t as f64);
        let (nx, ny) = self.center_at(t as f64 + 1.0);
        if self.spin_deg == 0.0 {
            return (nx - cx, ny - cy);
        }
        let (s, c) = self.spin_deg.to_radians().sin_cos();
        let (dx, dy) = (x - cx, y - cy);
        (nx + c * dx - s * dy - x, ny + s * dx + c * dy - y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ShapeKind) -> ShapeSpec {
        ShapeSpec {
            kind,
            radius: 6.0,
            aspect: 0.6,
            color: [1.0, 0.0, 0.0],
            center: (10.0, 10.0),
            velocity: (0.0, 0.0),
            angle_deg: 17.0,
            spin_deg: 0.0,
        }
    }

    #[test]
    fn shapes_stay_within_radius_and_contain_centre() {
        for kind in ShapeKind::ALL {
            let s = spec(kind);
            assert!(s.contains(0, 10.0, 10.0));
            for y in 0..21 {
                for x in 0..21 {
                    let (dx, dy) = (x as f64 - 10.0, y as f64 - 10.0);
                    if s.contains(0, x as f64, y as f64) {
                        assert!(dx.hypot(dy) <= 6.0 + 1e-9, "{kind:?} at {x},{y}");
                    }
                }
            }
        }
    }

    #[test]
    fn rigid_flow_moves_points_with_the_shape() {
        let mut s = spec(ShapeKind::Triangle);
        s.velocity = (1.5, -0.5);
        s.spin_deg = 8.0;
        for (x, y) in [(10.0, 10.0), (12.0, 9.0), (8.5, 13.0)] {
            let (u, v) = s.flow_at(0, x, y);
            // coverage is preserved along the flow
            assert_eq!(s.contains(0, x, y), s.contains(1, x + u, y + v));
        }
        let (u, v) = s.flow_at(0, 10.0, 10.0);
        assert!((u - 1.5).abs() < 1e-12 && (v + 0.5).abs() < 1e-12);
    }
}
