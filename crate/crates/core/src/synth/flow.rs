use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Flow magnitude mapped to the ends of the encoded range.
pub const FLOW_MAX: f64 = 20.0;

/// Dense displacement field in pixels, `u` along x and `v` along y.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub h: usize,
    pub w: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, u: vec![0.0; h * w], v: vec![0.0; h * w] }
    }

    pub fn uniform(h: usize, w: usize, u: f64, v: f64) -> Self {
        Self { h, w, u: vec![u; h * w], v: vec![v; h * w] }
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.w + x;
        (self.u[i], self.v[i])
    }
}

/// Three-channel flow image: `0.5 + 0.5·u/u_max`, `0.5 + 0.5·v/u_max` and
/// `|f|/u_max`, each clamped to `[0, 1]`.
pub fn flow_encode(flow: &FlowField, u_max: f64) -> Tensor<f32> {
    let plane = flow.h * flow.w;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let (u, v) = (flow.u[i], flow.v[i]);
        data[i] = (0.5 + 0.5 * u / u_max).clamp(0.0, 1.0) as f32;
        data[plane + i] = (0.5 + 0.5 * v / u_max).clamp(0.0, 1.0) as f32;
        data[2 * plane + i] = (u.hypot(v) / u_max).clamp(0.0, 1.0) as f32;
    }
    Tensor::from_vec(Shape::new(1, 3, flow.h, flow.w), data).expect("length matches")
}

/// Inverse of [`flow_encode`] on the first two channels.
pub fn flow_decode(image: &Tensor<f32>, u_max: f64) -> Result<FlowField> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("flow_decode", format!("expected (1, 3, H, W), got {s}")));
    }
    let back = |c: usize| image.plane(0, c).iter().map(|&e| (f64::from(e) - 0.5) * 2.0 * u_max).collect();
    Ok(FlowField { h: s.h, w: s.w, u: back(0), v: back(1) })
}
