//! Seeded inputs shared by the criterion benches.

use mgseg::attention::{CoAttentionConfig, MotionGuidanceConfig};
use mgseg::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Appearance and motion features plus one compression kernel per cascade stage.
pub struct GuidanceInputs {
    pub va: Tensor<f32>,
    pub vm: Tensor<f32>,
    pub kernels: Vec<Tensor<f32>>,
    pub cfg: MotionGuidanceConfig,
}

pub fn guidance_inputs(shape: Shape, cfg: MotionGuidanceConfig, seed: u64) -> GuidanceInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let va = Tensor::random_uniform(shape, -1.0, 1.0, &mut rng);
    let vm = Tensor::random_uniform(shape, -1.0, 1.0, &mut rng);
    let kernels =
        (0..cfg.cascade).map(|_| Tensor::random_uniform(cfg.kernel_shape(shape.c), -0.5, 0.5, &mut rng)).collect();
    GuidanceInputs { va, vm, kernels, cfg }
}

/// Feature pair and both compression kernels of a co-attention call.
pub struct CoAttentionInputs {
    pub va: Tensor<f32>,
    pub vb: Tensor<f32>,
    pub ka: Tensor<f32>,
    pub kb: Tensor<f32>,
    pub cfg: CoAttentionConfig,
}

pub fn co_attention_inputs(shape: Shape, compression: usize, seed: u64) -> CoAttentionInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CoAttentionConfig { compression };
    CoAttentionInputs {
        va: Tensor::random_uniform(shape, -1.0, 1.0, &mut rng),
        vb: Tensor::random_uniform(shape, -1.0, 1.0, &mut rng),
        ka: Tensor::random_uniform(cfg.kernel_shape(shape.c), -0.5, 0.5, &mut rng),
        kb: Tensor::random_uniform(cfg.kernel_shape(shape.c), -0.5, 0.5, &mut rng),
        cfg,
    }
}

/// Input and weights of a `k×k` convolution from `shape.c` to `out` channels.
pub fn conv_inputs(shape: Shape, out: usize, k: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::random_uniform(shape, -1.0, 1.0, &mut rng);
    let w = Tensor::random_uniform(Shape::new(out, shape.c, k, k), -0.5, 0.5, &mut rng);
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic_and_well_formed() {
        let s = Shape::new(1, 8, 6, 7);
        let a = guidance_inputs(s, MotionGuidanceConfig::new(3, 2, 3), 5);
        let b = guidance_inputs(s, MotionGuidanceConfig::new(3, 2, 3), 5);
        assert_eq!(a.va, b.va);
        assert_eq!(a.kernels.len(), 3);
        assert_eq!(a.kernels[0].shape(), Shape::new(4, 8, 1, 1));
        let c = co_attention_inputs(s, 4, 1);
        assert_eq!(c.ka.shape(), Shape::new(2, 8, 1, 1));
        let (x, w) = conv_inputs(s, 16, 3, 2);
        assert_eq!((x.shape(), w.shape()), (s, Shape::new(16, 8, 3, 3)));
    }
}
