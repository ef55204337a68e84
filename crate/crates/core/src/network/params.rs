use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::config::{FusionMode, NetworkConfig};
use crate::tensor::{Real, Shape, Tensor};

/// `√6`: keeps activation variance constant through conv + ReLU layers.
pub const INIT_GAIN: f64 = 2.449_489_742_783_178;

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Both encoder streams and the guidance kernels.
    Extractor,
    /// Fusion decoder and prediction head.
    Fusion,
}

/// Convolution with bias. Square kernel, `padding = kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Real> Conv<T> {
    fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self {
            weight: Tensor::zeros(Shape::new(c_out, c_in, k, k)),
            bias: Tensor::zeros(Shape::new(1, c_out, 1, 1)),
            stride,
        }
    }

    pub fn padding(&self) -> usize {
        self.weight.shape().h / 2
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<T> {
    /// Stride-2 `3×3`.
    pub down: Conv<T>,
    pub conv: Conv<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    /// Stride-2 `3×3` from the 3-channel input to the first stage width.
    pub stem: Conv<T>,
    pub stages: Vec<EncoderStage<T>>,
}

/// `relu(conv2(relu(conv1(x))) + skip(x))`, `skip` a `1×1` projection or identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    pub skip: Option<Conv<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder<T> {
    /// `levels[j][i]` merges branch `i` with the upsampled branch `i + 1` at level `j + 1`;
    /// each entry is two residual blocks.
    Progressive { levels: Vec<Vec<[ResBlock<T>; 2]>> },
    /// `blocks[i]` merges stage `i` with the upsampled running decode.
    UnetBaseline { blocks: Vec<[Conv<T>; 2]> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub appearance: Encoder<T>,
    pub motion: Encoder<T>,
    /// Cascade kernels per stage; empty for stage 0 and when guidance is off.
    pub guidance: Vec<Vec<Tensor<T>>>,
    pub decoder: Decoder<T>,
    /// `1×1` convolution to one logit channel.
    pub head: Conv<T>,
}

/// One named parameter tensor.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub is_bias: bool,
    pub tensor: &'a Tensor<T>,
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub is_bias: bool,
    pub tensor: &'a mut Tensor<T>,
}

fn encoder_zeros<T: Real>(widths: &[usize]) -> Encoder<T> {
    let mut c_in = widths[0];
    let stages = widths
        .iter()
        .map(|&w| {
            let s = EncoderStage { down: Conv::zeros(c_in, w, 3, 2), conv: Conv::zeros(w, w, 3, 1) };
            c_in = w;
            s
        })
        .collect();
    Encoder { stem: Conv::zeros(3, widths[0], 3, 2), stages }
}

fn res_block_zeros<T: Real>(c_in: usize, c_out: usize) -> ResBlock<T> {
    ResBlock {
        conv1: Conv::zeros(c_in, c_out, 3, 1),
        conv2: Conv::zeros(c_out, c_out, 3, 1),
        skip: (c_in != c_out).then(|| Conv::zeros(c_in, c_out, 1, 1)),
    }
}

impl<T: Real> ModelParams<T> {
    /// Correctly shaped, all-zero parameters for `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let widths = &config.widths;
        let l = widths.len();
        let ch: Vec<usize> = (0..l).map(|i| config.fused_channels(i)).collect();
        let guidance = (0..l)
            .map(|i| match config.guidance_for(i) {
                Some(g) => (0..g.cascade).map(|_| Tensor::zeros(g.kernel_shape(widths[i]))).collect(),
                None => Vec::new(),
            })
            .collect();
        let decoder = match config.fusion {
            FusionMode::Progressive => Decoder::Progressive {
                levels: (1..l)
                    .map(|j| {
                        (0..l - j)
                            .map(|i| [res_block_zeros(ch[i] + ch[i + 1], ch[i]), res_block_zeros(ch[i], ch[i])])
                            .collect()
                    })
                    .collect(),
            },
            FusionMode::UnetBaseline => Decoder::UnetBaseline {
                blocks: (0..l - 1)
                    .map(|i| [Conv::zeros(ch[i] + ch[i + 1], ch[i], 3, 1), Conv::zeros(ch[i], ch[i], 3, 1)])
                    .collect(),
            },
        };
        Ok(Self {
            appearance: encoder_zeros(widths),
            motion: encoder_zeros(widths),
            guidance,
            decoder,
            head: Conv::zeros(ch[0], 1, 1, 1),
        })
    }

    /// Weights uniform in `±INIT_GAIN/√fan_in`, biases zero. Fully determined by `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for param in p.params_mut() {
            if param.is_bias {
                continue;
            }
            let s = param.tensor.shape();
            let bound = INIT_GAIN / ((s.c * s.h * s.w) as f64).sqrt();
            for v in param.tensor.data_mut() {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every parameter in a fixed order with a stable dotted name.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, group, is_bias, tensor| out.push(ParamRef { name, group, is_bias, tensor });
        visit(self, &mut push);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, group, is_bias, tensor| out.push(ParamMut { name, group, is_bias, tensor });
        visit_mut(self, &mut push);
        out
    }

    pub fn count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.tensor.is_finite())
    }

    /// `self += other`, parameter by parameter.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::shape("ModelParams::add_assign", "parameter sets differ"));
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            d.tensor.add_assign(s.tensor)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_from_layout(self);
        for (d, s) in out.params_mut().into_iter().zip(self.params()) {
            *d.tensor = s.tensor.cast();
        }
        out
    }

    fn zeros_from_layout<U: Real>(other: &ModelParams<U>) -> Self {
        let conv = |c: &Conv<U>| Conv {
            weight: Tensor::zeros(c.weight.shape()),
            bias: Tensor::zeros(c.bias.shape()),
            stride: c.stride,
        };
        let enc = |e: &Encoder<U>| Encoder {
            stem: conv(&e.stem),
            stages: e.stages.iter().map(|s| EncoderStage { down: conv(&s.down), conv: conv(&s.conv) }).collect(),
        };
        let res = |r: &ResBlock<U>| ResBlock {
            conv1: conv(&r.conv1),
            conv2: conv(&r.conv2),
            skip: r.skip.as_ref().map(conv),
        };
        let decoder = match &other.decoder {
            Decoder::Progressive { levels } => Decoder::Progressive {
                levels: levels.iter().map(|l| l.iter().map(|[a, b]| [res(a), res(b)]).collect()).collect(),
            },
            Decoder::UnetBaseline { blocks } => {
                Decoder::UnetBaseline { blocks: blocks.iter().map(|[a, b]| [conv(a), conv(b)]).collect() }
            }
        };
        Self {
            appearance: enc(&other.appearance),
            motion: enc(&other.motion),
            guidance: other.guidance.iter().map(|ks| ks.iter().map(|k| Tensor::zeros(k.shape())).collect()).collect(),
            decoder,
            head: conv(&other.head),
        }
    }
}

type Sink<'s, 'a, T> = &'s mut dyn FnMut(String, ParamGroup, bool, &'a Tensor<T>);
type SinkMut<'s, 'a, T> = &'s mut dyn FnMut(String, ParamGroup, bool, &'a mut Tensor<T>);

fn visit_conv<'a, T>(c: &'a Conv<T>, name: &str, g: ParamGroup, f: Sink<'_, 'a, T>) {
    f(format!("{name}.weight"), g, false, &c.weight);
    f(format!("{name}.bias"), g, true, &c.bias);
}

fn visit_conv_mut<'a, T>(c: &'a mut Conv<T>, name: &str, g: ParamGroup, f: SinkMut<'_, 'a, T>) {
    f(format!("{name}.weight"), g, false, &mut c.weight);
    f(format!("{name}.bias"), g, true, &mut c.bias);
}

fn res_name(level: usize, branch: usize, block: usize) -> String {
    format!("fusion.level{}.branch{branch}.res{block}", level + 1)
}

// The two visitors below must enumerate in the same order.
fn visit<'a, T>(p: &'a ModelParams<T>, f: Sink<'_, 'a, T>) {
    let x = ParamGroup::Extractor;
    for (stream, enc) in [("appearance", &p.appearance), ("motion", &p.motion)] {
        visit_conv(&enc.stem, &format!("{stream}.stem"), x, f);
        for (i, s) in enc.stages.iter().enumerate() {
            visit_conv(&s.down, &format!("{stream}.stage{i}.down"), x, f);
            visit_conv(&s.conv, &format!("{stream}.stage{i}.conv"), x, f);
        }
    }
    for (i, ks) in p.guidance.iter().enumerate() {
        for (t, k) in ks.iter().enumerate() {
            f(format!("guidance.stage{i}.{t}"), x, false, k);
        }
    }
    let g = ParamGroup::Fusion;
    match &p.decoder {
        Decoder::Progressive { levels } => {
            for (j, level) in levels.iter().enumerate() {
                for (i, blocks) in level.iter().enumerate() {
                    for (b, r) in blocks.iter().enumerate() {
                        let name = res_name(j, i, b);
                        visit_conv(&r.conv1, &format!("{name}.conv1"), g, f);
                        visit_conv(&r.conv2, &format!("{name}.conv2"), g, f);
                        if let Some(s) = &r.skip {
                            visit_conv(s, &format!("{name}.skip"), g, f);
                        }
                    }
                }
            }
        }
        Decoder::UnetBaseline { blocks } => {
            for (i, [a, b]) in blocks.iter().enumerate() {
                visit_conv(a, &format!("unet.block{i}.conv1"), g, f);
                visit_conv(b, &format!("unet.block{i}.conv2"), g, f);
            }
        }
    }
    visit_conv(&p.head, "head", g, f);
}

fn visit_mut<'a, T>(p: &'a mut ModelParams<T>, f: SinkMut<'_, 'a, T>) {
    let x = ParamGroup::Extractor;
    for (stream, enc) in [("appearance", &mut p.appearance), ("motion", &mut p.motion)] {
        visit_conv_mut(&mut enc.stem, &format!("{stream}.stem"), x, f);
        for (i, s) in enc.stages.iter_mut().enumerate() {
            visit_conv_mut(&mut s.down, &format!("{stream}.stage{i}.down"), x, f);
            visit_conv_mut(&mut s.conv, &format!("{stream}.stage{i}.conv"), x, f);
        }
    }
    for (i, ks) in p.guidance.iter_mut().enumerate() {
        for (t, k) in ks.iter_mut().enumerate() {
            f(format!("guidance.stage{i}.{t}"), x, false, k);
        }
    }
    let g = ParamGroup::Fusion;
    match &mut p.decoder {
        Decoder::Progressive { levels } => {
            for (j, level) in levels.iter_mut().enumerate() {
                for (i, blocks) in level.iter_mut().enumerate() {
                    for (b, r) in blocks.iter_mut().enumerate() {
                        let name = res_name(j, i, b);
                        visit_conv_mut(&mut r.conv1, &format!("{name}.conv1"), g, f);
                        visit_conv_mut(&mut r.conv2, &format!("{name}.conv2"), g, f);
                        if let Some(s) = &mut r.skip {
                            visit_conv_mut(s, &format!("{name}.skip"), g, f);
                        }
                    }
                }
            }
        }
        Decoder::UnetBaseline { blocks } => {
            for (i, [a, b]) in blocks.iter_mut().enumerate() {
                visit_conv_mut(a, &format!("unet.block{i}.conv1"), g, f);
                visit_conv_mut(b, &format!("unet.block{i}.conv2"), g, f);
            }
        }
    }
    visit_conv_mut(&mut p.head, "head", g, f);
}
