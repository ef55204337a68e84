use crate::error::{Error, Result};
use crate::network::{ModelParams, ParamGroup};

/// SGD with momentum and L2 weight decay:
/// `v ← μ·v + g + λ·p`, `p ← p − α·v`, with `α` chosen per parameter group.
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: ModelParams<f32>,
}

impl Sgd {
    pub fn new(params: &ModelParams<f32>, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum: momentum as f32, weight_decay: weight_decay as f32, velocity: params.zeros_like() }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams<f32>,
        grads: &ModelParams<f32>,
        lr_extractor: f64,
        lr_fusion: f64,
    ) -> Result<()> {
        let grads = grads.params();
        let mut velocity = self.velocity.params_mut();
        let mut params = params.params_mut();
        if grads.len() != params.len() || velocity.len() != params.len() {
            return Err(Error::invalid("Sgd::step", "gradient layout does not match the parameters"));
        }
        for ((p, g), v) in params.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
            p.tensor.expect_same_shape("Sgd::step", g.tensor)?;
            let lr = match p.group {
                ParamGroup::Extractor => lr_extractor,
                ParamGroup::Fusion => lr_fusion,
            } as f32;
            for ((w, &gw), vw) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()).zip(v.tensor.data_mut()) {
                *vw = self.momentum * *vw + gw + self.weight_decay * *w;
                *w -= lr * *vw;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::MotionGuidanceConfig;
    use crate::network::NetworkConfig;

    fn params() -> ModelParams<f32> {
        ModelParams::init(&NetworkConfig::new(vec![2, 4], MotionGuidanceConfig::new(3, 2, 1), (16, 16)), 3).unwrap()
    }

    #[test]
    fn matches_scalar_recurrence() {
        let mut p = params();
        let start = p.clone();
        let mut g = p.zeros_like();
        for t in g.params_mut() {
            t.tensor.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f32 * 0.1 - 0.3);
        }
        let mut sgd = Sgd::new(&p, 0.9, 5e-4);
        sgd.step(&mut p, &g, 1e-4, 1e-3).unwrap();
        sgd.step(&mut p, &g, 1e-4, 1e-3).unwrap();
        for ((a, b), gr) in start.params().iter().zip(p.params()).zip(g.params()) {
            let lr = if a.group == ParamGroup::Extractor { 1e-4f32 } else { 1e-3 };
            for ((&w0, &w2), &gw) in a.tensor.data().iter().zip(b.tensor.data()).zip(gr.tensor.data()) {
                let v1 = gw + 5e-4 * w0;
                let w1 = w0 - lr * v1;
                let v2 = 0.9 * v1 + gw + 5e-4 * w1;
                assert_eq!(w2, w1 - lr * v2);
            }
        }
    }

    #[test]
    fn zero_rate_leaves_parameters_untouched() {
        let mut p = params();
        let start = p.clone();
        let g = p.clone();
        let mut sgd = Sgd::new(&p, 0.9, 5e-4);
        for _ in 0..3 {
            sgd.step(&mut p, &g, 0.0, 0.0).unwrap();
        }
        assert_eq!(p, start);
    }
}
