use crate::error::{Error, Result};
use crate::tensor::{Gradient, Real, Shape, Tensor};

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat_channels", "no operands"))?;
    let s0 = first.shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return Err(Error::shape("concat_channels", format!("{s} does not stack with {s0}")));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let shape = Shape::new(s0.n, c, s0.h, s0.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..s0.n {
        for p in parts {
            let per = p.shape().c * s0.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Splits a channel-concatenated gradient back into per-operand gradients.
pub fn concat_channels_backward<T: Real>(grad_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Gradient<T>>> {
    let s = grad_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape("concat_channels_backward", format!("channel split {channels:?} does not cover {s}")));
    }
    let mut out: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * s.plane())).collect();
    for n in 0..s.n {
        let mut offset = 0;
        for (dst, &c) in out.iter_mut().zip(channels) {
            for ch in offset..offset + c {
                dst.extend_from_slice(grad_out.plane(n, ch));
            }
            offset += c;
        }
    }
    out.into_iter().zip(channels).map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d)).collect()
}

/// `(lo, hi, weight_hi)` taps for doubling an axis of length `n`
/// with half-pixel centers and edge clamping.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear ×2 upsampling, corners not aligned.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("upsample2x", format!("empty spatial extent {s}")));
    }
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let os = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    dst[oy * os.w + ox] = top + (bot - top) * ly;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_backward<T: Real>(grad_out: &Tensor<T>) -> Result<Gradient<T>> {
    let os = grad_out.shape();
    if os.h % 2 != 0 || os.w % 2 != 0 || os.h == 0 || os.w == 0 {
        return Err(Error::shape("upsample2x_backward", format!("{os} is not an upsampled extent")));
    }
    let s = Shape::new(os.n, os.c, os.h / 2, os.w / 2);
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let v = g[oy * os.w + ox];
                    let top = v * (T::one() - ly);
                    let bot = v * ly;
                    dst[y0 * s.w + x0] += top * (T::one() - lx);
                    dst[y0 * s.w + x1] += top * lx;
                    dst[y1 * s.w + x0] += bot * (T::one() - lx);
                    dst[y1 * s.w + x1] += bot * lx;
                }
            }
        }
    }
    Ok(grad)
}
