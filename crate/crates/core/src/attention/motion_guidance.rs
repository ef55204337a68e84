//! Motion guidance: local cross-attention where similarities among
//! compressed motion features inside a `K×K` window re-weight the
//! appearance features of the same window.
//!
//! For every position `p`, with `m̄ = W·V_m` the `1×1`-compressed motion map:
//!
//! ```text
//! score(p, q) = ⟨m̄(p), m̄(q)⟩          q in the K×K window around p, zero-padded
//! weight(p, ·) = softmax(score(p, ·))  over all K² slots, padding included
//! U_a(p)       = Σ_q weight(p, q) · V_a(q)
//! ```
//!
//! [`motion_guidance_naive`] evaluates this with explicit per-position loops
//! and is the reference for [`motion_guidance_fast`], which expands both maps
//! with [`unfold`] and works on whole `H×W` planes.

use crate::attention::config::{MotionGuidanceConfig, Normalization};
use crate::error::{Error, Result};
use crate::flops::{NoTally, Step, Tally};
use crate::ops::{self, fold, softmax_over_leading_window_backward, unfold, Unfolded, WindowScores};
use crate::tensor::{Gradient, Real, Shape, Tensor};

/// Gradients of one motion guidance stage.
#[derive(Clone, Debug)]
pub struct MotionGuidanceGrads<T> {
    pub appearance: Gradient<T>,
    pub motion: Gradient<T>,
    pub kernel: Gradient<T>,
}

/// Gradients of a cascade; `kernels[t]` belongs to stage `t`.
#[derive(Clone, Debug)]
pub struct CascadeGrads<T> {
    pub appearance: Gradient<T>,
    pub motion: Gradient<T>,
    pub kernels: Vec<Gradient<T>>,
}

/// `1×1` convolution without bias, reporting `C_out·C_in` MACs per pixel.
fn pointwise<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, tally: &mut impl Tally) -> Tensor<T> {
    let s = x.shape();
    let (co, ci) = (kernel.shape().n, kernel.shape().c);
    let mut out = Tensor::zeros(Shape::new(s.n, co, s.h, s.w));
    for n in 0..s.n {
        for o in 0..co {
            let dst = out.plane_mut(n, o);
            for i in 0..ci {
                let w = kernel.data()[o * ci + i];
                for (d, &v) in dst.iter_mut().zip(x.plane(n, i)) {
                    *d += w * v;
                }
            }
        }
    }
    tally.mac(Step::Compression, (s.n * s.plane() * co * ci) as u64);
    out
}

fn normalize<T: Real>(
    cfg: &MotionGuidanceConfig,
    scores: WindowScores<T>,
    tally: &mut impl Tally,
) -> Result<WindowScores<T>> {
    match cfg.normalization {
        Normalization::Softmax => ops::softmax_over_leading_window_counted(&scores, tally),
        Normalization::Unnormalized => Ok(scores),
    }
}

/// Per-position explicit loops. Reference implementation.
pub fn motion_guidance_naive<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
) -> Result<Tensor<T>> {
    motion_guidance_naive_counted(va, vm, cfg, kernel, &mut NoTally)
}

pub fn motion_guidance_naive_counted<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
    tally: &mut impl Tally,
) -> Result<Tensor<T>> {
    const OP: &str = "motion_guidance_naive";
    cfg.check_inputs(OP, va, vm)?;
    let s = va.shape();
    cfg.check_kernel(OP, s.c, kernel)?;
    let cd = kernel.shape().n;
    let k = cfg.window;
    let r = (k / 2) as isize;

    // compressed motion vector at every position
    let mut comp = vec![T::zero(); s.n * s.plane() * cd];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let base = ((n * s.h + y) * s.w + x) * cd;
                for o in 0..cd {
                    let mut acc = T::zero();
                    for i in 0..s.c {
                        acc += kernel.data()[o * s.c + i] * vm.at(n, i, y, x);
                        tally.mac(Step::Compression, 1);
                    }
                    comp[base + o] = acc;
                }
            }
        }
    }
    let comp_at = |n: usize, y: isize, x: isize, o: usize| -> T {
        if y < 0 || x < 0 || y >= s.h as isize || x >= s.w as isize {
            T::zero()
        } else {
            comp[((n * s.h + y as usize) * s.w + x as usize) * cd + o]
        }
    };

    let mut out = Tensor::zeros(s);
    let mut scores = vec![T::zero(); k * k];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                for u in 0..k {
                    for v in 0..k {
                        let (qy, qx) = (y as isize + u as isize - r, x as isize + v as isize - r);
                        let mut dot = T::zero();
                        for o in 0..cd {
                            dot += comp_at(n, y as isize, x as isize, o) * comp_at(n, qy, qx, o);
                            tally.mac(Step::Similarity, 1);
                        }
                        scores[u * k + v] = dot;
                    }
                }
                if cfg.normalization == Normalization::Softmax {
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        sum += *sc;
                        tally.elementary(2);
                    }
                    for sc in scores.iter_mut() {
                        *sc /= sum;
                        tally.elementary(1);
                    }
                }
                for c in 0..s.c {
                    let mut acc = T::zero();
                    for u in 0..k {
                        for v in 0..k {
                            let (qy, qx) = (y as isize + u as isize - r, x as isize + v as isize - r);
                            acc += scores[u * k + v] * va.at_padded(n, c, qy, qx);
                            tally.mac(Step::WeightedSum, 1);
                        }
                    }
                    *out.at_mut(n, c, y, x) = acc;
                }
            }
        }
    }
    out.checked(OP)
}

/// Window similarity of the compressed motion map against its own centers.
fn window_scores<T: Real>(comp: &Tensor<T>, unf: &Unfolded<T>, tally: &mut impl Tally) -> WindowScores<T> {
    let s = comp.shape();
    let k = unf.k;
    let mut scores = WindowScores::zeros(k, s.n, s.h, s.w);
    for u in 0..k {
        for v in 0..k {
            for n in 0..s.n {
                let dst = scores.plane_mut(u, v, n);
                for c in 0..s.c {
                    // the "repeat" operand is just the center plane
                    for ((d, &a), &b) in dst.iter_mut().zip(unf.plane(u, v, c, n)).zip(comp.plane(n, c)) {
                        *d += a * b;
                    }
                }
            }
        }
    }
    tally.mac(Step::Similarity, (k * k * s.len()) as u64);
    scores
}

/// Intermediate values of one fast-path evaluation, kept for the backward pass.
struct FastTrace<T> {
    comp: Tensor<T>,
    comp_unf: Unfolded<T>,
    weights: WindowScores<T>,
    va_unf: Unfolded<T>,
}

fn fast_trace<T: Real>(
    op: &'static str,
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
    tally: &mut impl Tally,
) -> Result<FastTrace<T>> {
    cfg.check_inputs(op, va, vm)?;
    cfg.check_kernel(op, va.shape().c, kernel)?;
    let comp = pointwise(vm, kernel, tally);
    let comp_unf = unfold(&comp, cfg.window)?;
    let scores = window_scores(&comp, &comp_unf, tally);
    let weights = normalize(cfg, scores, tally)?;
    let va_unf = unfold(va, cfg.window)?;
    Ok(FastTrace { comp, comp_unf, weights, va_unf })
}

fn weighted_sum<T: Real>(weights: &WindowScores<T>, va_unf: &Unfolded<T>, tally: &mut impl Tally) -> Tensor<T> {
    let s = va_unf.inner;
    let k = va_unf.k;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let dst = out.plane_mut(n, c);
            for u in 0..k {
                for v in 0..k {
                    for ((d, &w), &a) in dst.iter_mut().zip(weights.plane(u, v, n)).zip(va_unf.plane(u, v, c, n)) {
                        *d += w * a;
                    }
                }
            }
        }
    }
    tally.mac(Step::WeightedSum, (k * k * s.len()) as u64);
    out
}

/// Window-parallel evaluation through [`unfold`]; same value contract as
/// [`motion_guidance_naive`].
pub fn motion_guidance_fast<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
) -> Result<Tensor<T>> {
    motion_guidance_fast_counted(va, vm, cfg, kernel, &mut NoTally)
}

pub fn motion_guidance_fast_counted<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
    tally: &mut impl Tally,
) -> Result<Tensor<T>> {
    let trace = fast_trace("motion_guidance_fast", va, vm, cfg, kernel, tally)?;
    weighted_sum(&trace.weights, &trace.va_unf, tally).checked("motion_guidance_fast")
}

/// Normalized window weights `(K, K, N, H, W)`, for inspection.
pub fn motion_guidance_weights<T: Real>(
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
) -> Result<WindowScores<T>> {
    Ok(fast_trace("motion_guidance_weights", vm, vm, cfg, kernel, &mut NoTally)?.weights)
}

/// Analytic gradients of [`motion_guidance_fast`].
pub fn motion_guidance_backward<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernel: &Tensor<T>,
    grad_u: &Tensor<T>,
) -> Result<MotionGuidanceGrads<T>> {
    const OP: &str = "motion_guidance_backward";
    let t = fast_trace(OP, va, vm, cfg, kernel, &mut NoTally)?;
    grad_u.expect_shape(OP, va.shape())?;
    let s = va.shape();
    let cd = t.comp.shape().c;
    let k = cfg.window;

    // U = Σ_slot W ⊙ unfold(V_a)
    let mut grad_va_unf = Unfolded::zeros(k, s);
    let mut grad_w = WindowScores::zeros(k, s.n, s.h, s.w);
    for u in 0..k {
        for v in 0..k {
            for n in 0..s.n {
                let w = t.weights.plane(u, v, n);
                for c in 0..s.c {
                    let g = grad_u.plane(n, c);
                    {
                        let dst = grad_va_unf.plane_mut(u, v, c, n);
                        for ((d, &wv), &gv) in dst.iter_mut().zip(w).zip(g) {
                            *d = wv * gv;
                        }
                    }
                    let a = t.va_unf.plane(u, v, c, n);
                    let dst = grad_w.plane_mut(u, v, n);
                    for ((d, &gv), &av) in dst.iter_mut().zip(g).zip(a) {
                        *d += gv * av;
                    }
                }
            }
        }
    }
    let grad_va = fold(&grad_va_unf);

    let grad_s = match cfg.normalization {
        Normalization::Softmax => softmax_over_leading_window_backward(&t.weights, &grad_w)?,
        Normalization::Unnormalized => grad_w,
    };

    // S = Σ_c unfold(m̄) ⊙ repeat(m̄): gradient reaches m̄ through both operands
    let mut grad_comp = Tensor::zeros(t.comp.shape());
    let mut grad_comp_unf = Unfolded::zeros(k, t.comp.shape());
    for u in 0..k {
        for v in 0..k {
            for n in 0..s.n {
                let gs = grad_s.plane(u, v, n);
                for c in 0..cd {
                    {
                        let dst = grad_comp.plane_mut(n, c);
                        for ((d, &g), &m) in dst.iter_mut().zip(gs).zip(t.comp_unf.plane(u, v, c, n)) {
                            *d += g * m;
                        }
                    }
                    let center = t.comp.plane(n, c);
                    let dst = grad_comp_unf.plane_mut(u, v, c, n);
                    for ((d, &g), &m) in dst.iter_mut().zip(gs).zip(center) {
                        *d = g * m;
                    }
                }
            }
        }
    }
    grad_comp.add_assign(&fold(&grad_comp_unf))?;

    let (grad_vm, grad_kernel) = ops::conv2d_backward(vm, kernel, &grad_comp, 1, 0)?;
    Ok(MotionGuidanceGrads { appearance: grad_va.checked(OP)?, motion: grad_vm, kernel: grad_kernel })
}

fn check_cascade<T: Real>(op: &'static str, cfg: &MotionGuidanceConfig, kernels: &[Tensor<T>]) -> Result<()> {
    if kernels.len() != cfg.cascade {
        return Err(Error::invalid(op, format!("{} kernels for cascade depth {}", kernels.len(), cfg.cascade)));
    }
    Ok(())
}

/// Applies the module `cfg.cascade` times. Stage `t` consumes stage `t − 1`'s
/// output as appearance input and the unchanged motion map.
pub fn motion_guidance_cascade<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernels: &[Tensor<T>],
) -> Result<Tensor<T>> {
    motion_guidance_cascade_counted(va, vm, cfg, kernels, &mut NoTally)
}

pub fn motion_guidance_cascade_counted<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernels: &[Tensor<T>],
    tally: &mut impl Tally,
) -> Result<Tensor<T>> {
    check_cascade("motion_guidance_cascade", cfg, kernels)?;
    let mut cur = va.clone();
    for kernel in kernels {
        cur = motion_guidance_fast_counted(&cur, vm, cfg, kernel, tally)?;
    }
    Ok(cur)
}

pub fn motion_guidance_cascade_backward<T: Real>(
    va: &Tensor<T>,
    vm: &Tensor<T>,
    cfg: &MotionGuidanceConfig,
    kernels: &[Tensor<T>],
    grad_u: &Tensor<T>,
) -> Result<CascadeGrads<T>> {
    check_cascade("motion_guidance_cascade_backward", cfg, kernels)?;
    let mut inputs = Vec::with_capacity(kernels.len());
    let mut cur = va.clone();
    for kernel in kernels {
        let next = motion_guidance_fast(&cur, vm, cfg, kernel)?;
        inputs.push(std::mem::replace(&mut cur, next));
    }
    let mut grad = grad_u.clone();
    let mut grad_vm = vm.zeros_like();
    let mut grad_kernels = Vec::with_capacity(kernels.len());
    for (input, kernel) in inputs.iter().zip(kernels).rev() {
        let g = motion_guidance_backward(input, vm, cfg, kernel, &grad)?;
        grad_vm.add_assign(&g.motion)?;
        grad_kernels.push(g.kernel);
        grad = g.appearance;
    }
    grad_kernels.reverse();
    Ok(CascadeGrads { appearance: grad, motion: grad_vm, kernels: grad_kernels })
}
