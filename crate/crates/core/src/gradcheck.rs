//! Central finite differences and the error measure used to compare them
//! against analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    motion_guidance_backward, motion_guidance_cascade, motion_guidance_cascade_backward, motion_guidance_fast,
    MotionGuidanceConfig,
};
use crate::error::Result;
use crate::network::{bce_loss, bce_loss_backward, predict_mask, EnhancementMode, FusionMode, Network, NetworkConfig};
use crate::ops;
use crate::tensor::{Shape, Tensor};

/// Perturbation used by every check in the crate.
pub const DEFAULT_EPS: f64 = 1e-4;

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every element `i` of `x`.
pub fn numerical_gradient(x: &Tensor<f64>, eps: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Scale-relative maximum error `max|a − n| / max(max|a|, max|n|)`.
///
/// Zero when both gradients vanish identically.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        return 0.0;
    }
    analytic.max_abs_diff(numeric).expect("same shape") / scale
}

/// Denominator floor for end-to-end checks. Central differences of the O(1)
/// network loss carry roundoff up to about `1e-11` at `eps = 1e-4`, so
/// gradients below this scale are compared in absolute rather than relative
/// terms.
pub const GRADIENT_FLOOR: f64 = 1e-7;

/// Smallest probe tried when a ReLU kink lies within `±eps`.
pub const MIN_PROBE: f64 = 1e-8;

/// Outcome of checking one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    /// Entries compared.
    pub checked: usize,
    /// Entries whose probe had to shrink below `eps` to stay off a kink.
    pub shrunk: usize,
    /// Entries skipped because a kink stayed within even the smallest probe.
    pub skipped: usize,
    /// Largest analytic gradient magnitude among the compared entries.
    pub scale: f64,
    /// `max|a − n| / max(max|a|, max|n|, GRADIENT_FLOOR)`.
    pub relative_error: f64,
}

/// Evenly spaced entry indices, all of them when `max` is `None` or large enough.
fn sample_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares analytic gradients of the mean BCE loss with central differences
/// for every parameter tensor of `network`, on one random input pair and a
/// random binary target drawn from `seed`.
///
/// Central differences are only meaningful where the loss is smooth on the
/// probe interval. When `±eps` moves any ReLU input across zero, the probe
/// shrinks tenfold until it does not, down to [`MIN_PROBE`].
pub fn check_network(
    network: &Network<f64>,
    seed: u64,
    eps: f64,
    max_entries: Option<usize>,
) -> Result<Vec<ParamCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = network.config.input;
    let s = Shape::new(1, 3, h, w);
    let frames = Tensor::random_uniform(s, 0.0, 1.0, &mut rng);
    let flows = Tensor::random_uniform(s, 0.0, 1.0, &mut rng);
    let gt = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, _, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });

    let (_, grads) = network.loss_and_grad(&frames, &flows, &gt)?;
    let pattern = network.trace(&frames, &flows)?.activation_pattern();
    let analytic = grads.params();
    let mut probe = network.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (k, a) in analytic.iter().enumerate() {
        let idx = sample_indices(a.tensor.len(), max_entries);
        let (mut kept, mut numeric) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
        let (mut shrunk, mut skipped) = (0, 0);
        for &i in &idx {
            let orig = probe.params.params_mut()[k].tensor.data()[i];
            let mut at = |v: f64| -> Result<(f64, bool)> {
                probe.params.params_mut()[k].tensor.data_mut()[i] = v;
                let t = probe.trace(&frames, &flows)?;
                let same = t.activation_pattern() == pattern;
                Ok((bce_loss(&predict_mask(&t.logits), &gt)?, same))
            };
            let mut h = eps;
            let mut found = None;
            while h >= MIN_PROBE {
                let (plus, sp) = at(orig + h)?;
                let (minus, sm) = at(orig - h)?;
                if sp && sm {
                    found = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            probe.params.params_mut()[k].tensor.data_mut()[i] = orig;
            match found {
                Some(d) => {
                    shrunk += usize::from(h < eps);
                    kept.push(a.tensor.data()[i]);
                    numeric.push(d);
                }
                None => skipped += 1,
            }
        }
        let scale = kept.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let shape = Shape::new(1, 1, 1, kept.len());
        let (an, nu) = (Tensor::from_vec(shape, kept)?, Tensor::from_vec(shape, numeric)?);
        let denom = scale.max(nu.max_abs()).max(GRADIENT_FLOOR);
        let error = if an.is_empty() { 0.0 } else { an.max_abs_diff(&nu)? / denom };
        out.push(ParamCheck {
            name: a.name.clone(),
            checked: idx.len() - skipped,
            shrunk,
            skipped,
            scale,
            relative_error: error,
        });
    }
    Ok(out)
}

/// [`check_network`] on a freshly initialised network whose biases are
/// drawn from `±0.1` instead of zero. Zero biases behind a dead channel put
/// ReLUs exactly on their kink, where central differences see slope ½.
pub fn check_network_config(
    config: &NetworkConfig,
    seed: u64,
    eps: f64,
    max_entries: Option<usize>,
) -> Result<Vec<ParamCheck>> {
    let mut network = Network::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in network.params.params_mut().into_iter().filter(|p| p.is_bias) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    check_network(&network, seed.wrapping_add(1), eps, max_entries)
}

/// Pass threshold for single primitives.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;

/// Pass threshold for the end-to-end network check.
pub const NETWORK_TOLERANCE: f64 = 1e-3;

/// Units with a hand-written backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Conv2d,
    BiasAdd,
    Relu,
    Sigmoid,
    ElementwiseMul,
    Concat,
    Upsample,
    Unfold,
    WindowSoftmax,
    MotionGuidance,
    Cascade,
    Bce,
    /// Four-stage network of width 2 with every decoder and enhancement
    /// combination, one per seed in turn.
    Network,
}

impl Component {
    pub const PRIMITIVES: [Component; 12] = [
        Component::Conv2d,
        Component::BiasAdd,
        Component::Relu,
        Component::Sigmoid,
        Component::ElementwiseMul,
        Component::Concat,
        Component::Upsample,
        Component::Unfold,
        Component::WindowSoftmax,
        Component::MotionGuidance,
        Component::Cascade,
        Component::Bce,
    ];

    pub fn all() -> Vec<Component> {
        let mut v = Self::PRIMITIVES.to_vec();
        v.push(Component::Network);
        v
    }

    pub fn tolerance(self) -> f64 {
        if self == Component::Network {
            NETWORK_TOLERANCE
        } else {
            PRIMITIVE_TOLERANCE
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentCheck {
    pub component: Component,
    pub seed: u64,
    /// Worst relative error over all inputs or parameter tensors.
    pub relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Per-tensor detail of a network check.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<ParamCheck>,
}

/// Network used by the end-to-end check for `seed`: widths `[2, 2, 2, 2]`,
/// `K = 3`, `d = 2`, two cascade stages, `32×64` input.
pub fn tiny_network_config(seed: u64) -> NetworkConfig {
    let fusion = if seed % 2 == 0 { FusionMode::Progressive } else { FusionMode::UnetBaseline };
    let enhancement = if seed % 4 < 2 { EnhancementMode::MotionGuidance } else { EnhancementMode::ElementwiseMul };
    NetworkConfig::new(vec![2, 2, 2, 2], MotionGuidanceConfig::new(3, 2, 2), (32, 64))
        .with_fusion(fusion)
        .with_enhancement(enhancement)
}

/// Worst relative error of `Σ r ⊙ f(inputs)` over every input.
fn projected_error(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    r: &Tensor<f64>,
    f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = numerical_gradient(&inputs[i], DEFAULT_EPS, |xi| {
            let mut v = inputs.to_vec();
            v[i] = xi.clone();
            f(&v).dot(r).expect("projection shape")
        });
        worst = worst.max(relative_error(a, &numeric));
    }
    worst
}

/// Finite-difference check of one component on inputs drawn from `seed`.
pub fn check_component(component: Component, seed: u64) -> Result<ComponentCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |s: Shape| Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut rng);
    let s = Shape::new(2, 3, 5, 6);
    let mut params = Vec::new();
    let error = match component {
        Component::Conv2d => {
            let mut worst = 0.0f64;
            for (stride, k) in [(1, 3), (2, 3), (1, 1)] {
                let (x, w) = (rand(s), rand(Shape::new(4, 3, k, k)));
                let out = ops::conv2d(&x, &w, stride, k / 2)?;
                let r = rand(out.shape());
                let (gx, gw) = ops::conv2d_backward(&x, &w, &r, stride, k / 2)?;
                worst = worst.max(projected_error(&[x, w], &[gx, gw], &r, |v| {
                    ops::conv2d(&v[0], &v[1], stride, k / 2).expect("valid conv")
                }));
            }
            worst
        }
        Component::BiasAdd => {
            let (x, b) = (rand(s), rand(Shape::new(1, 3, 1, 1)));
            let r = rand(s);
            let add = |v: &[Tensor<f64>]| {
                let mut y = v[0].clone();
                ops::bias_add(&mut y, &v[1]).expect("bias shape");
                y
            };
            projected_error(&[x, b], &[r.clone(), ops::bias_backward(&r)], &r, add)
        }
        Component::Relu => {
            // keep inputs off the kink
            let x = rand(s).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v });
            let r = rand(s);
            let g = ops::relu_backward(&x, &r)?;
            projected_error(&[x], &[g], &r, |v| ops::relu(&v[0]))
        }
        Component::Sigmoid => {
            let x = rand(s).scale(4.0);
            let r = rand(s);
            let g = ops::sigmoid_backward(&ops::sigmoid(&x), &r)?;
            projected_error(&[x], &[g], &r, |v| ops::sigmoid(&v[0]))
        }
        Component::ElementwiseMul => {
            let (a, b, r) = (rand(s), rand(s), rand(s));
            let (ga, gb) = ops::elementwise_mul_backward(&a, &b, &r)?;
            projected_error(&[a, b], &[ga, gb], &r, |v| ops::elementwise_mul(&v[0], &v[1]).expect("same shape"))
        }
        Component::Concat => {
            let (a, b) = (rand(s), rand(Shape::new(2, 2, 5, 6)));
            let r = rand(Shape::new(2, 5, 5, 6));
            let g = ops::concat_channels_backward(&r, &[3, 2])?;
            projected_error(&[a, b], &g, &r, |v| ops::concat_channels(&[&v[0], &v[1]]).expect("same extent"))
        }
        Component::Upsample => {
            let x = rand(s);
            let r = rand(Shape::new(2, 3, 10, 12));
            let g = ops::upsample2x_backward(&r)?;
            projected_error(&[x], &[g], &r, |v| ops::upsample2x(&v[0]).expect("rank 4"))
        }
        Component::Unfold => {
            // fold is the adjoint of unfold
            let x = rand(s);
            let u = ops::unfold(&x, 3)?;
            let shape = Shape::new(1, 1, 1, u.data().len());
            let r = rand(shape);
            let r_unf = ops::Unfolded::from_flat(3, s, r.data().to_vec())?;
            let g = ops::fold(&r_unf);
            projected_error(&[x], &[g], &r, |v| {
                Tensor::from_vec(shape, ops::unfold(&v[0], 3).expect("odd window").data().to_vec()).expect("length")
            })
        }
        Component::WindowSoftmax => {
            let (k, n, h, w) = (3, 2, 4, 5);
            let len = k * k * n * h * w;
            let shape = Shape::new(1, 1, 1, len);
            let (x, r) = (rand(shape).scale(3.0), rand(shape));
            let scores = |t: &Tensor<f64>| ops::WindowScores::from_vec(k, n, h, w, t.data().to_vec()).expect("length");
            let soft = ops::softmax_over_leading_window(&scores(&x))?;
            let g = ops::softmax_over_leading_window_backward(&soft, &scores(&r))?;
            let g = Tensor::from_vec(shape, g.data().to_vec())?;
            projected_error(&[x], &[g], &r, |v| {
                let y = ops::softmax_over_leading_window(&scores(&v[0])).expect("layout");
                Tensor::from_vec(shape, y.data().to_vec()).expect("length")
            })
        }
        Component::MotionGuidance => {
            let mut worst = 0.0f64;
            for (k, d) in [(1, 1), (3, 2), (5, 1)] {
                let cfg = MotionGuidanceConfig::new(k, d, 1);
                let fs = Shape::new(2, 4, 5, 6);
                let (va, vm, kern, r) = (rand(fs), rand(fs), rand(cfg.kernel_shape(4)), rand(fs));
                let g = motion_guidance_backward(&va, &vm, &cfg, &kern, &r)?;
                worst = worst.max(projected_error(&[va, vm, kern], &[g.appearance, g.motion, g.kernel], &r, |v| {
                    motion_guidance_fast(&v[0], &v[1], &cfg, &v[2]).expect("valid module")
                }));
            }
            worst
        }
        Component::Cascade => {
            let cfg = MotionGuidanceConfig::new(3, 2, 3);
            let fs = Shape::new(1, 4, 5, 6);
            let (va, vm, r) = (rand(fs), rand(fs), rand(fs));
            let kernels: Vec<Tensor<f64>> = (0..3).map(|_| rand(cfg.kernel_shape(4))).collect();
            let g = motion_guidance_cascade_backward(&va, &vm, &cfg, &kernels, &r)?;
            let mut inputs = vec![va, vm];
            inputs.extend(kernels);
            let mut analytic = vec![g.appearance, g.motion];
            analytic.extend(g.kernels);
            projected_error(&inputs, &analytic, &r, |v| {
                motion_guidance_cascade(&v[0], &v[1], &cfg, &v[2..]).expect("valid")
            })
        }
        Component::Bce => {
            let shape = Shape::new(2, 1, 4, 5);
            let p = rand(shape).map(|v| 0.5 + 0.45 * v);
            let gt = rand(shape).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let g = bce_loss_backward(&p, &gt)?;
            let numeric = numerical_gradient(&p, DEFAULT_EPS, |x| bce_loss(x, &gt).expect("valid"));
            relative_error(&g, &numeric)
        }
        Component::Network => {
            params = check_network_config(&tiny_network_config(seed), seed, DEFAULT_EPS, None)?;
            params.iter().map(|p| p.relative_error).fold(0.0, f64::max)
        }
    };
    let tolerance = component.tolerance();
    Ok(ComponentCheck { component, seed, relative_error: error, tolerance, passed: error < tolerance, params })
}
