use crate::attention::{motion_guidance_cascade, motion_guidance_cascade_backward};
use crate::error::{Error, Result};
use crate::network::config::{EnhancementMode, NetworkConfig};
use crate::network::layers::{conv_relu, conv_relu_backward, ConvReluTrace, ResBlockTrace};
use crate::network::loss::{bce_loss, bce_loss_backward, predict_mask};
use crate::network::params::{Conv, Decoder, EncoderStage, ModelParams, ResBlock};
use crate::ops::{
    concat_channels, concat_channels_backward, elementwise_mul, elementwise_mul_backward, sigmoid_backward, upsample2x,
    upsample2x_backward,
};
use crate::tensor::{Gradient, Real, Tensor};

/// Per-stage encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFeatures<T = f32> {
    /// `V_a,i`
    pub appearance: Tensor<T>,
    /// `V_m,i`
    pub motion: Tensor<T>,
    /// `U_a,i`, the enhanced appearance features.
    pub enhanced: Tensor<T>,
    /// `U_i = Concat(U_a,i, V_m,i)`
    pub fused: Tensor<T>,
}

#[derive(Clone, Debug)]
struct StageTrace<T> {
    down: ConvReluTrace<T>,
    conv: ConvReluTrace<T>,
}

#[derive(Clone, Debug)]
struct EncoderTrace<T> {
    stem: ConvReluTrace<T>,
    stages: Vec<StageTrace<T>>,
}

#[derive(Clone, Debug)]
struct DualStreamTrace<T> {
    appearance: EncoderTrace<T>,
    motion: EncoderTrace<T>,
    features: Vec<StageFeatures<T>>,
}

#[derive(Clone, Debug)]
enum DecoderTrace<T> {
    /// `levels[j][i]`: both residual blocks of one merge.
    Progressive {
        levels: Vec<Vec<[ResBlockTrace<T>; 2]>>,
    },
    Unet {
        blocks: Vec<[ConvReluTrace<T>; 2]>,
    },
}

#[derive(Clone, Debug)]
struct HeadTrace<T> {
    /// Decoder output at stride 4, then after each ×2 upsample.
    ups: Vec<Tensor<T>>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    encoder: DualStreamTrace<T>,
    decoder: DecoderTrace<T>,
    head: HeadTrace<T>,
    pub logits: Tensor<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn features(&self) -> &[StageFeatures<T>] {
        &self.encoder.features
    }

    /// Sign of every ReLU input in the pass. Two passes with equal patterns
    /// lie in the same piecewise-smooth region of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut push = |t: &Tensor<T>| out.extend(t.data().iter().map(|&v| v > T::zero()));
        for enc in [&self.encoder.appearance, &self.encoder.motion] {
            push(&enc.stem.pre);
            for s in &enc.stages {
                push(&s.down.pre);
                push(&s.conv.pre);
            }
        }
        match &self.decoder {
            DecoderTrace::Progressive { levels } => {
                for blocks in levels.iter().flatten() {
                    for t in blocks {
                        push(&t.first.pre);
                        push(&t.sum);
                    }
                }
            }
            DecoderTrace::Unet { blocks } => {
                for t in blocks.iter().flatten() {
                    push(&t.pre);
                }
            }
        }
        out
    }
}

fn encode_stage<T: Real>(stage: &EncoderStage<T>, x: &Tensor<T>) -> Result<StageTrace<T>> {
    let down = conv_relu(&stage.down, x)?;
    let conv = conv_relu(&stage.conv, &down.out)?;
    Ok(StageTrace { down, conv })
}

fn encode_stage_backward<T: Real>(
    stage: &EncoderStage<T>,
    t: &StageTrace<T>,
    grad_out: &Tensor<T>,
    grads: &mut EncoderStage<T>,
) -> Result<Gradient<T>> {
    let g = conv_relu_backward(&stage.conv, &t.conv, grad_out, &mut grads.conv)?;
    conv_relu_backward(&stage.down, &t.down, &g, &mut grads.down)
}

fn enhance<T: Real>(
    config: &NetworkConfig,
    params: &ModelParams<T>,
    stage: usize,
    va: &Tensor<T>,
    vm: &Tensor<T>,
) -> Result<Tensor<T>> {
    if stage == 0 {
        return Ok(va.clone());
    }
    match config.enhancement {
        EnhancementMode::None => Ok(va.clone()),
        EnhancementMode::ElementwiseMul => elementwise_mul(va, vm),
        EnhancementMode::MotionGuidance => {
            let cfg = config.guidance_for(stage).expect("validated config has guidance for stages 2..");
            motion_guidance_cascade(va, vm, cfg, &params.guidance[stage])
        }
    }
}

/// Returns `(∂/∂V_a, ∂/∂V_m)` and accumulates kernel gradients.
fn enhance_backward<T: Real>(
    config: &NetworkConfig,
    params: &ModelParams<T>,
    stage: usize,
    va: &Tensor<T>,
    vm: &Tensor<T>,
    grad_u: Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<(Gradient<T>, Option<Gradient<T>>)> {
    if stage == 0 {
        return Ok((grad_u, None));
    }
    match config.enhancement {
        EnhancementMode::None => Ok((grad_u, None)),
        EnhancementMode::ElementwiseMul => {
            let (ga, gm) = elementwise_mul_backward(va, vm, &grad_u)?;
            Ok((ga, Some(gm)))
        }
        EnhancementMode::MotionGuidance => {
            let cfg = config.guidance_for(stage).expect("validated config has guidance for stages 2..");
            let g = motion_guidance_cascade_backward(va, vm, cfg, &params.guidance[stage], &grad_u)?;
            for (acc, k) in grads.guidance[stage].iter_mut().zip(&g.kernels) {
                acc.add_assign(k)?;
            }
            Ok((g.appearance, Some(g.motion)))
        }
    }
}

fn check_inputs<T: Real>(frames: &Tensor<T>, flows: &Tensor<T>, config: &NetworkConfig) -> Result<()> {
    const OP: &str = "dual_stream_forward";
    frames.expect_same_shape(OP, flows)?;
    let s = frames.shape();
    if s.c != 3 {
        return Err(Error::shape(OP, format!("expected 3-channel inputs, got {s}")));
    }
    config.check_resolution(s.h, s.w)
}

fn dual_stream_trace<T: Real>(
    frames: &Tensor<T>,
    flows: &Tensor<T>,
    params: &ModelParams<T>,
    config: &NetworkConfig,
) -> Result<DualStreamTrace<T>> {
    check_inputs(frames, flows, config)?;

    let m_stem = conv_relu(&params.motion.stem, flows)?;
    let mut m_stages: Vec<StageTrace<T>> = Vec::with_capacity(config.stages());
    for stage in &params.motion.stages {
        let x = m_stages.last().map_or(&m_stem.out, |t| &t.conv.out);
        let t = encode_stage(stage, x)?;
        m_stages.push(t);
    }

    let a_stem = conv_relu(&params.appearance.stem, frames)?;
    let mut a_stages = Vec::with_capacity(config.stages());
    let mut features: Vec<StageFeatures<T>> = Vec::with_capacity(config.stages());
    for (i, stage) in params.appearance.stages.iter().enumerate() {
        let x = features.last().map_or(&a_stem.out, |f| &f.enhanced);
        let t = encode_stage(stage, x)?;
        let va = t.conv.out.clone();
        let vm = m_stages[i].conv.out.clone();
        let ua = enhance(config, params, i, &va, &vm)?;
        let fused = concat_channels(&[&ua, &vm])?;
        a_stages.push(t);
        features.push(StageFeatures { appearance: va, motion: vm, enhanced: ua, fused });
    }
    Ok(DualStreamTrace {
        appearance: EncoderTrace { stem: a_stem, stages: a_stages },
        motion: EncoderTrace { stem: m_stem, stages: m_stages },
        features,
    })
}

/// Runs both encoder streams and the stage-wise enhancement.
/// `frames` are RGB in `[0, 1]`, `flows` encoded flow images in `[0, 1]`.
pub fn dual_stream_forward<T: Real>(
    frames: &Tensor<T>,
    flows: &Tensor<T>,
    params: &ModelParams<T>,
    config: &NetworkConfig,
) -> Result<Vec<StageFeatures<T>>> {
    Ok(dual_stream_trace(frames, flows, params, config)?.features)
}

fn check_pyramid<T: Real>(op: &'static str, u: &[Tensor<T>], expected_levels: usize) -> Result<()> {
    if u.len() != expected_levels || u.is_empty() {
        return Err(Error::shape(op, format!("{} feature maps for a {expected_levels}-stage decoder", u.len())));
    }
    for pair in u.windows(2) {
        let (a, b) = (pair[0].shape(), pair[1].shape());
        if a.n != b.n || a.h != 2 * b.h || a.w != 2 * b.w {
            return Err(Error::shape(op, format!("{b} is not the next pyramid level below {a}")));
        }
    }
    Ok(())
}

fn progressive_trace<T: Real>(
    u: &[Tensor<T>],
    levels: &[Vec<[ResBlock<T>; 2]>],
) -> Result<(Tensor<T>, DecoderTrace<T>)> {
    check_pyramid("progressive_fusion", u, levels.len() + 1)?;
    let mut branches: Vec<Tensor<T>> = u.to_vec();
    let mut traces = Vec::with_capacity(levels.len());
    for level in levels {
        let mut next = Vec::with_capacity(level.len());
        let mut level_traces = Vec::with_capacity(level.len());
        for (i, [r0, r1]) in level.iter().enumerate() {
            let cat = concat_channels(&[&branches[i], &upsample2x(&branches[i + 1])?])?;
            let t0 = r0.forward(&cat)?;
            let t1 = r1.forward(&t0.out)?;
            next.push(t1.out.clone());
            level_traces.push([t0, t1]);
        }
        branches = next;
        traces.push(level_traces);
    }
    let out = branches.swap_remove(0);
    Ok((out, DecoderTrace::Progressive { levels: traces }))
}

fn unet_trace<T: Real>(u: &[Tensor<T>], blocks: &[[Conv<T>; 2]]) -> Result<(Tensor<T>, DecoderTrace<T>)> {
    check_pyramid("unet_baseline_fusion", u, blocks.len() + 1)?;
    let mut d = u[u.len() - 1].clone();
    let mut traces = Vec::with_capacity(blocks.len());
    for (i, [c1, c2]) in blocks.iter().enumerate().rev() {
        let cat = concat_channels(&[&u[i], &upsample2x(&d)?])?;
        let t1 = conv_relu(c1, &cat)?;
        let t2 = conv_relu(c2, &t1.out)?;
        d = t2.out.clone();
        traces.push([t1, t2]);
    }
    traces.reverse();
    Ok((d, DecoderTrace::Unet { blocks: traces }))
}

fn head_forward<T: Real>(x: Tensor<T>, head: &Conv<T>) -> Result<(Tensor<T>, HeadTrace<T>)> {
    // stride 4 back to input resolution
    let mut ups = vec![x];
    for _ in 0..2 {
        let next = upsample2x(ups.last().expect("non-empty"))?;
        ups.push(next);
    }
    let logits = head.forward(ups.last().expect("non-empty"))?;
    Ok((logits, HeadTrace { ups }))
}

fn decode<T: Real>(u: &[Tensor<T>], params: &ModelParams<T>) -> Result<(DecoderTrace<T>, HeadTrace<T>, Tensor<T>)> {
    let (out, trace) = match &params.decoder {
        Decoder::Progressive { levels } => progressive_trace(u, levels)?,
        Decoder::UnetBaseline { blocks } => unet_trace(u, blocks)?,
    };
    let (logits, head) = head_forward(out, &params.head)?;
    Ok((trace, head, logits.checked("decode")?))
}

/// Progressive fusion decoder plus head. `u` holds `U_1..U_L`, finest first.
/// Returns one-channel logits at input resolution.
pub fn progressive_fusion<T: Real>(u: &[Tensor<T>], params: &ModelParams<T>) -> Result<Tensor<T>> {
    match &params.decoder {
        Decoder::Progressive { .. } => Ok(decode(u, params)?.2),
        Decoder::UnetBaseline { .. } => Err(Error::invalid("progressive_fusion", "parameters hold a U-Net decoder")),
    }
}

/// Top-down U-Net decoder plus head.
pub fn unet_baseline_fusion<T: Real>(u: &[Tensor<T>], params: &ModelParams<T>) -> Result<Tensor<T>> {
    match &params.decoder {
        Decoder::UnetBaseline { .. } => Ok(decode(u, params)?.2),
        Decoder::Progressive { .. } => {
            Err(Error::invalid("unet_baseline_fusion", "parameters hold a progressive decoder"))
        }
    }
}

fn decoder_backward<T: Real>(
    params: &ModelParams<T>,
    trace: &DecoderTrace<T>,
    features: &[StageFeatures<T>],
    grad_out: Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<Vec<Gradient<T>>> {
    let ch: Vec<usize> = features.iter().map(|f| f.fused.shape().c).collect();
    match (&params.decoder, trace, &mut grads.decoder) {
        (
            Decoder::Progressive { levels },
            DecoderTrace::Progressive { levels: traces },
            Decoder::Progressive { levels: gl },
        ) => {
            let mut g_next = vec![grad_out];
            for ((level, lt), lg) in levels.iter().zip(traces).zip(gl.iter_mut()).rev() {
                let mut g_prev: Vec<Tensor<T>> =
                    features[..=level.len()].iter().map(|f| f.fused.zeros_like()).collect();
                for (i, (([r0, r1], [t0, t1]), [g0, g1])) in level.iter().zip(lt).zip(lg.iter_mut()).enumerate() {
                    let g = r1.backward(t1, &g_next[i], g1)?;
                    let g_cat = r0.backward(t0, &g, g0)?;
                    let parts = concat_channels_backward(&g_cat, &[ch[i], ch[i + 1]])?;
                    let mut parts = parts.into_iter();
                    let (own, below) = (parts.next().expect("two parts"), parts.next().expect("two parts"));
                    g_prev[i].add_assign(&own)?;
                    g_prev[i + 1].add_assign(&upsample2x_backward(&below)?)?;
                }
                g_next = g_prev;
            }
            Ok(g_next)
        }
        (
            Decoder::UnetBaseline { blocks },
            DecoderTrace::Unet { blocks: traces },
            Decoder::UnetBaseline { blocks: gb },
        ) => {
            let mut g_u: Vec<Tensor<T>> = features.iter().map(|f| f.fused.zeros_like()).collect();
            let mut g_d = grad_out;
            for (i, (([c1, c2], [t1, t2]), [g1, g2])) in blocks.iter().zip(traces).zip(gb.iter_mut()).enumerate() {
                let g = conv_relu_backward(c2, t2, &g_d, g2)?;
                let g_cat = conv_relu_backward(c1, t1, &g, g1)?;
                let mut parts = concat_channels_backward(&g_cat, &[ch[i], ch[i + 1]])?.into_iter();
                g_u[i].add_assign(&parts.next().expect("two parts"))?;
                g_d = upsample2x_backward(&parts.next().expect("two parts"))?;
            }
            let last = g_u.len() - 1;
            g_u[last].add_assign(&g_d)?;
            Ok(g_u)
        }
        _ => Err(Error::invalid("decoder_backward", "trace and parameters disagree on decoder topology")),
    }
}

/// A network configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub config: NetworkConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Network<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Pairs `params` with `config`, checking that the layouts agree.
    pub fn from_parts(config: NetworkConfig, params: ModelParams<T>) -> Result<Self> {
        let expected = ModelParams::<T>::zeros(&config)?;
        let a = expected.params();
        let b = params.params();
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.name == y.name && x.tensor.shape() == y.tensor.shape());
        if !same {
            return Err(Error::invalid("Network::from_parts", "parameter layout does not match the configuration"));
        }
        drop((a, b));
        Ok(Self { config, params })
    }

    pub fn trace(&self, frames: &Tensor<T>, flows: &Tensor<T>) -> Result<ForwardTrace<T>> {
        let encoder = dual_stream_trace(frames, flows, &self.params, &self.config)?;
        let u: Vec<Tensor<T>> = encoder.features.iter().map(|f| f.fused.clone()).collect();
        let (decoder, head, logits) = decode(&u, &self.params)?;
        Ok(ForwardTrace { encoder, decoder, head, logits })
    }

    /// One-channel logits at input resolution.
    pub fn forward(&self, frames: &Tensor<T>, flows: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(frames, flows)?.logits)
    }

    /// Foreground probabilities at input resolution.
    pub fn predict(&self, frames: &Tensor<T>, flows: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(predict_mask(&self.forward(frames, flows)?))
    }

    /// Parameter gradients given `∂L/∂logits`.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_logits: &Tensor<T>) -> Result<ModelParams<T>> {
        trace.logits.expect_same_shape("Network::backward", grad_logits)?;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let feats = &trace.encoder.features;

        let head_in = trace.head.ups.last().expect("non-empty");
        let mut g = p.head.backward(head_in, grad_logits, &mut grads.head)?;
        for _ in 1..trace.head.ups.len() {
            g = upsample2x_backward(&g)?;
        }
        let g_u = decoder_backward(p, &trace.decoder, feats, g, &mut grads)?;

        let mut g_a = Vec::with_capacity(g_u.len());
        let mut g_m = Vec::with_capacity(g_u.len());
        for (g, f) in g_u.iter().zip(feats) {
            let mut parts = concat_channels_backward(g, &[f.enhanced.shape().c, f.motion.shape().c])?.into_iter();
            g_a.push(parts.next().expect("two parts"));
            g_m.push(parts.next().expect("two parts"));
        }

        let a = &trace.encoder.appearance;
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..feats.len()).rev() {
            let mut g_ua = g_a.pop().expect("one gradient per stage");
            if let Some(c) = carry.take() {
                g_ua.add_assign(&c)?;
            }
            let (g_va, g_vm) =
                enhance_backward(&self.config, p, i, &feats[i].appearance, &feats[i].motion, g_ua, &mut grads)?;
            if let Some(gm) = g_vm {
                g_m[i].add_assign(&gm)?;
            }
            carry = Some(encode_stage_backward(
                &p.appearance.stages[i],
                &a.stages[i],
                &g_va,
                &mut grads.appearance.stages[i],
            )?);
        }
        conv_relu_backward(
            &p.appearance.stem,
            &a.stem,
            &carry.expect("at least one stage"),
            &mut grads.appearance.stem,
        )?;

        let m = &trace.encoder.motion;
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..feats.len()).rev() {
            let mut g_vm = g_m.pop().expect("one gradient per stage");
            if let Some(c) = carry.take() {
                g_vm.add_assign(&c)?;
            }
            carry = Some(encode_stage_backward(&p.motion.stages[i], &m.stages[i], &g_vm, &mut grads.motion.stages[i])?);
        }
        conv_relu_backward(&p.motion.stem, &m.stem, &carry.expect("at least one stage"), &mut grads.motion.stem)?;
        Ok(grads)
    }

    /// Mean BCE of the prediction against `gt` and its parameter gradients.
    pub fn loss_and_grad(&self, frames: &Tensor<T>, flows: &Tensor<T>, gt: &Tensor<T>) -> Result<(T, ModelParams<T>)> {
        let trace = self.trace(frames, flows)?;
        let prob = predict_mask(&trace.logits);
        let loss = bce_loss(&prob, gt)?;
        let g_prob = bce_loss_backward(&prob, gt)?;
        let g_logits = sigmoid_backward(&prob, &g_prob)?;
        Ok((loss, self.backward(&trace, &g_logits)?))
    }

    pub fn loss(&self, frames: &Tensor<T>, flows: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
        bce_loss(&self.predict(frames, flows)?, gt)
    }
}
