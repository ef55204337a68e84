//! 2-d cross-correlation with explicit backward.
//!
//! [`conv2d`] lowers each image to a column matrix and multiplies; the
//! direct loops of [`conv2d_direct`] are kept as its reference. Those run
//! along output rows over the range of columns whose input tap is in
//! bounds, so stride-1 rows reduce to contiguous `axpy`.

use crate::error::{Error, Result};
use crate::tensor::{Gradient, Real, Shape, Tensor};

/// Output extent of one spatial axis, `None` if the kernel does not fit.
pub fn conv_out_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn check(op: &'static str, input: Shape, weights: Shape, stride: usize, padding: usize) -> Result<Shape> {
    if weights.h != weights.w || weights.h % 2 == 0 {
        return Err(Error::invalid(op, format!("kernel must be square with odd size, got {weights}")));
    }
    if weights.c != input.c {
        return Err(Error::shape(
            op,
            format!("kernel {weights} expects {} input channels, input is {input}", weights.c),
        ));
    }
    let k = weights.h;
    match (conv_out_dim(input.h, k, stride, padding), conv_out_dim(input.w, k, stride, padding)) {
        (Some(h), Some(w)) if h > 0 && w > 0 => Ok(Shape::new(input.n, weights.n, h, w)),
        _ => Err(Error::shape(op, format!("kernel {k} stride {stride} padding {padding} does not fit input {input}"))),
    }
}

/// Output columns `[lo, hi)` whose tap `ox * stride + kx - padding` lies in `[0, width)`.
#[inline]
fn valid_cols(out_w: usize, width: usize, kx: usize, stride: usize, padding: usize) -> (usize, usize) {
    let off = kx as isize - padding as isize;
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = if width as isize - 1 - off < 0 { 0 } else { (width as isize - 1 - off) / s + 1 };
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(out_w);
    (lo, hi.max(lo))
}

#[inline]
fn tap(o: usize, k: usize, stride: usize, padding: usize) -> isize {
    (o * stride + k) as isize - padding as isize
}

/// Cross-correlation of `input (N,Ci,H,W)` with `weights (Co,Ci,k,k)`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let out_shape = check("conv2d", input.shape(), weights.shape(), stride, padding)?;
    let is = input.shape();
    let ws = weights.shape();
    let rows = ws.c * ws.h * ws.w;
    let cols = out_shape.h * out_shape.w;
    let mut out = Tensor::zeros(out_shape);
    let mut buf = Vec::new();
    for n in 0..is.n {
        let col = im2col(input, n, ws.h, stride, padding, out_shape, &mut buf);
        let dst = &mut out.data_mut()[n * out_shape.c * cols..(n + 1) * out_shape.c * cols];
        T::gemm(ws.n, rows, cols, T::one(), (weights.data(), false), (col, false), T::zero(), dst);
    }
    out.checked("conv2d")
}

/// Gradients of [`conv2d`] with respect to its input and weights.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Gradient<T>, Gradient<T>)> {
    let out_shape = check("conv2d_backward", input.shape(), weights.shape(), stride, padding)?;
    grad_out.expect_shape("conv2d_backward", out_shape)?;
    let is = input.shape();
    let ws = weights.shape();
    let rows = ws.c * ws.h * ws.w;
    let cols = out_shape.h * out_shape.w;
    let mut grad_in = Tensor::zeros(is);
    let mut grad_w = Tensor::zeros(ws);
    let mut buf = Vec::new();
    let mut grad_col = vec![T::zero(); rows * cols];
    for n in 0..is.n {
        let g = &grad_out.data()[n * ws.n * cols..(n + 1) * ws.n * cols];
        let col = im2col(input, n, ws.h, stride, padding, out_shape, &mut buf);
        T::gemm(ws.n, cols, rows, T::one(), (g, false), (col, true), T::one(), grad_w.data_mut());
        T::gemm(rows, ws.n, cols, T::one(), (weights.data(), true), (g, false), T::zero(), &mut grad_col);
        col2im(&grad_col, &mut grad_in, n, ws.h, stride, padding, out_shape);
    }
    Ok((grad_in.checked("conv2d_backward")?, grad_w.checked("conv2d_backward")?))
}

/// Column matrix `(Ci·k·k) × (OH·OW)` of image `n`. A `1×1` stride-1 kernel
/// uses the image itself.
fn im2col<'a, T: Real>(
    input: &'a Tensor<T>,
    n: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out: Shape,
    buf: &'a mut Vec<T>,
) -> &'a [T] {
    let is = input.shape();
    if k == 1 && stride == 1 && padding == 0 {
        return &input.data()[n * is.c * is.h * is.w..(n + 1) * is.c * is.h * is.w];
    }
    let (oh, ow) = (out.h, out.w);
    buf.clear();
    buf.resize(is.c * k * k * oh * ow, T::zero());
    for ci in 0..is.c {
        let src = input.plane(n, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut buf[((ci * k + ky) * k + kx) * oh * ow..][..oh * ow];
                let (lo, hi) = valid_cols(ow, is.w, kx, stride, padding);
                for oy in 0..oh {
                    let iy = tap(oy, ky, stride, padding);
                    if iy < 0 || iy as usize >= is.h {
                        continue;
                    }
                    let s = &src[iy as usize * is.w..(iy as usize + 1) * is.w];
                    let d = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in lo..hi {
                        d[ox] = s[tap(ox, kx, stride, padding) as usize];
                    }
                }
            }
        }
    }
    buf
}

/// Adds a column-matrix gradient back onto image `n` of `grad_in`.
fn col2im<T: Real>(col: &[T], grad_in: &mut Tensor<T>, n: usize, k: usize, stride: usize, padding: usize, out: Shape) {
    let is = grad_in.shape();
    let (oh, ow) = (out.h, out.w);
    for ci in 0..is.c {
        let dst = grad_in.plane_mut(n, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * oh * ow..][..oh * ow];
                let (lo, hi) = valid_cols(ow, is.w, kx, stride, padding);
                for oy in 0..oh {
                    let iy = tap(oy, ky, stride, padding);
                    if iy < 0 || iy as usize >= is.h {
                        continue;
                    }
                    let d = &mut dst[iy as usize * is.w..(iy as usize + 1) * is.w];
                    let g = &row[oy * ow..(oy + 1) * ow];
                    for ox in lo..hi {
                        d[tap(ox, kx, stride, padding) as usize] += g[ox];
                    }
                }
            }
        }
    }
}

/// Reference [`conv2d`] by direct summation.
pub fn conv2d_direct<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let out_shape = check("conv2d", input.shape(), weights.shape(), stride, padding)?;
    let is = input.shape();
    let k = weights.shape().h;
    let mut out = Tensor::zeros(out_shape);
    let (oh, ow) = (out_shape.h, out_shape.w);
    let wd = weights.data();
    for n in 0..is.n {
        for co in 0..out_shape.c {
            let dst = out.plane_mut(n, co);
            for ci in 0..is.c {
                let src = input.plane(n, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let w = wd[((co * is.c + ci) * k + ky) * k + kx];
                        if w == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_cols(ow, is.w, kx, stride, padding);
                        for oy in 0..oh {
                            let iy = tap(oy, ky, stride, padding);
                            if iy < 0 || iy as usize >= is.h {
                                continue;
                            }
                            let row = &src[iy as usize * is.w..(iy as usize + 1) * is.w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix0 = (lo as isize + kx as isize - padding as isize) as usize;
                                for (d, &s) in drow[lo..hi].iter_mut().zip(&row[ix0..ix0 + (hi - lo)]) {
                                    *d += w * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = tap(ox, kx, stride, padding) as usize;
                                    drow[ox] += w * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.checked("conv2d")
}

/// Reference [`conv2d_backward`] by direct summation.
pub fn conv2d_direct_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Gradient<T>, Gradient<T>)> {
    let out_shape = check("conv2d_backward", input.shape(), weights.shape(), stride, padding)?;
    grad_out.expect_shape("conv2d_backward", out_shape)?;
    let is = input.shape();
    let ws = weights.shape();
    let k = ws.h;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let wd = weights.data();

    let mut grad_in = Tensor::zeros(is);
    for n in 0..is.n {
        for ci in 0..is.c {
            let dst = grad_in.plane_mut(n, ci);
            for co in 0..ws.n {
                let g = grad_out.plane(n, co);
                for ky in 0..k {
                    for kx in 0..k {
                        let w = wd[((co * is.c + ci) * k + ky) * k + kx];
                        if w == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_cols(ow, is.w, kx, stride, padding);
                        for oy in 0..oh {
                            let iy = tap(oy, ky, stride, padding);
                            if iy < 0 || iy as usize >= is.h {
                                continue;
                            }
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let drow = &mut dst[iy as usize * is.w..(iy as usize + 1) * is.w];
                            if stride == 1 {
                                let ix0 = (lo as isize + kx as isize - padding as isize) as usize;
                                for (d, &s) in drow[ix0..ix0 + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                                    *d += w * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = tap(ox, kx, stride, padding) as usize;
                                    drow[ix] += w * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut grad_w = Tensor::zeros(ws);
    {
        let gw = grad_w.data_mut();
        for co in 0..ws.n {
            for ci in 0..is.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi) = valid_cols(ow, is.w, kx, stride, padding);
                        let mut acc = T::zero();
                        for n in 0..is.n {
                            let g = grad_out.plane(n, co);
                            let src = input.plane(n, ci);
                            for oy in 0..oh {
                                let iy = tap(oy, ky, stride, padding);
                                if iy < 0 || iy as usize >= is.h {
                                    continue;
                                }
                                let row = &src[iy as usize * is.w..(iy as usize + 1) * is.w];
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                if stride == 1 {
                                    let ix0 = (lo as isize + kx as isize - padding as isize) as usize;
                                    acc += grow[lo..hi]
                                        .iter()
                                        .zip(&row[ix0..ix0 + (hi - lo)])
                                        .map(|(&a, &b)| a * b)
                                        .sum::<T>();
                                } else {
                                    for ox in lo..hi {
                                        acc += grow[ox] * row[tap(ox, kx, stride, padding) as usize];
                                    }
                                }
                            }
                        }
                        gw[((co * is.c + ci) * k + ky) * k + kx] = acc;
                    }
                }
            }
        }
    }
    Ok((grad_in.checked("conv2d_backward")?, grad_w.checked("conv2d_backward")?))
}

/// Adds a per-channel bias of shape `(1, C, 1, 1)` in place.
pub fn bias_add<T: Real>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    bias.expect_shape("bias_add", Shape::new(1, s.c, 1, 1))?;
    for n in 0..s.n {
        for c in 0..s.c {
            let b = bias.data()[c];
            for v in x.plane_mut(n, c) {
                *v += b;
            }
        }
    }
    Ok(())
}

/// Gradient of [`bias_add`] with respect to the bias.
pub fn bias_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let mut g = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += grad_out.plane(n, c).iter().copied().sum::<T>();
        }
        g.data_mut()[c] = acc;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_check, rng};

    /// Six nested loops straight from the definition.
    fn conv_oracle(input: &Tensor<f64>, weights: &Tensor<f64>, stride: usize, padding: usize) -> Tensor<f64> {
        let is = input.shape();
        let ws = weights.shape();
        let k = ws.h;
        let oh = (is.h + 2 * padding - k) / stride + 1;
        let ow = (is.w + 2 * padding - k) / stride + 1;
        Tensor::from_fn(Shape::new(is.n, ws.n, oh, ow), |n, co, oy, ox| {
            let mut acc = 0.0;
            for ci in 0..is.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        acc += weights.at(co, ci, ky, kx) * input.at_padded(n, ci, iy, ix);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn all_ones_center_is_nine() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn identity_kernel() {
        let mut r = rng(3);
        let x = Tensor::<f32>::random_uniform(Shape::new(2, 1, 5, 4), -1.0, 1.0, &mut r);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut r = rng(11);
        for &(stride, padding, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 0, 1), (1, 2, 5), (2, 2, 5)] {
            let x = Tensor::<f64>::random_uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut r);
            let w = Tensor::<f64>::random_uniform(Shape::new(3, 2, k, k), -1.0, 1.0, &mut r);
            let got = conv2d(&x, &w, stride, padding).unwrap();
            let want = conv_oracle(&x, &w, stride, padding);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-6, "s={stride} p={padding} k={k}");
        }
        // f32 against the f64 oracle on a non-square map
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 4, 8, 7), -1.0, 1.0, &mut r);
        let w = Tensor::<f64>::random_uniform(Shape::new(3, 4, 3, 3), -1.0, 1.0, &mut r);
        let got = conv2d(&x.cast::<f32>(), &w.cast::<f32>(), 2, 1).unwrap().cast::<f64>();
        assert!(got.max_abs_diff(&conv_oracle(&x, &w, 2, 1)).unwrap() < 1e-5);
    }

    #[test]
    fn lowered_and_direct_paths_agree() {
        let mut r = rng(12);
        for &(stride, padding, k, h, w) in
            &[(1, 1, 3, 6, 7), (2, 1, 3, 7, 8), (1, 0, 1, 4, 5), (2, 0, 1, 6, 6), (1, 2, 5, 5, 9)]
        {
            let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, h, w), -1.0, 1.0, &mut r);
            let wt = Tensor::<f64>::random_uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut r);
            let y = conv2d(&x, &wt, stride, padding).unwrap();
            assert!(y.max_abs_diff(&conv2d_direct(&x, &wt, stride, padding).unwrap()).unwrap() < 1e-12);
            let g = Tensor::<f64>::random_uniform(y.shape(), -1.0, 1.0, &mut r);
            let (gi, gw) = conv2d_backward(&x, &wt, &g, stride, padding).unwrap();
            let (di, dw) = conv2d_direct_backward(&x, &wt, &g, stride, padding).unwrap();
            assert!(gi.max_abs_diff(&di).unwrap() < 1e-12);
            assert!(gw.max_abs_diff(&dw).unwrap() < 1e-12);
            assert!(
                conv2d_direct(&x, &wt, stride, padding)
                    .unwrap()
                    .max_abs_diff(&conv_oracle(&x, &wt, stride, padding))
                    .unwrap()
                    < 1e-12
            );
        }
    }

    #[test]
    fn output_shape_arithmetic() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 64, 96));
        let w = Tensor::<f32>::zeros(Shape::new(8, 3, 3, 3));
        assert_eq!(conv2d(&x, &w, 2, 1).unwrap().shape(), Shape::new(1, 8, 32, 48));
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap().shape(), Shape::new(1, 8, 62, 94));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        assert!(conv2d(&x, &Tensor::zeros(Shape::new(2, 2, 3, 3)), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(Shape::new(2, 3, 2, 2)), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(Shape::new(2, 3, 7, 7)), 1, 0).is_err());
        let g = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        assert!(conv2d_backward(&x, &Tensor::zeros(Shape::new(2, 3, 3, 3)), &g, 1, 1).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), f32::MAX);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 2.0);
        assert!(conv2d(&x, &w, 1, 1).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut r = rng(5);
        let x = Tensor::<f64>::random_uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut r);
        let w = Tensor::<f64>::random_uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
        let g = Tensor::zeros(Shape::new(1, 3, 5, 5));
        let (gi, gw) = conv2d_backward(&x, &w, &g, 1, 1).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 3.0);
        let w = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), -2.0);
        let g = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 0.5);
        let (gi, gw) = conv2d_backward(&x, &w, &g, 1, 0).unwrap();
        assert_eq!(gw.data(), &[1.5]);
        assert_eq!(gi.data(), &[-1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let (stride, padding) = if seed % 2 == 0 { (1, 1) } else { (2, 1) };
            let x = Tensor::<f64>::random_uniform(Shape::new(1, 2, 5, 6), -1.0, 1.0, &mut r);
            let w = Tensor::<f64>::random_uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
            let out_shape = conv2d(&x, &w, stride, padding).unwrap().shape();
            let g = Tensor::<f64>::random_uniform(out_shape, -1.0, 1.0, &mut r);
            let (gi, gw) = conv2d_backward(&x, &w, &g, stride, padding).unwrap();
            fd_check(&x, &gi, 1e-4, |xp| conv2d(xp, &w, stride, padding).unwrap().dot(&g).unwrap());
            fd_check(&w, &gw, 1e-4, |wp| conv2d(&x, wp, stride, padding).unwrap().dot(&g).unwrap());
        }
    }

    #[test]
    fn bias_roundtrip() {
        let mut r = rng(8);
        let mut x = Tensor::<f64>::zeros(Shape::new(2, 3, 2, 2));
        let b = Tensor::<f64>::random_uniform(Shape::new(1, 3, 1, 1), -1.0, 1.0, &mut r);
        bias_add(&mut x, &b).unwrap();
        assert_eq!(x.at(1, 2, 1, 0), b.data()[2]);
        let g = Tensor::<f64>::random_uniform(x.shape(), -1.0, 1.0, &mut r);
        let gb = bias_backward(&g);
        fd_check(&b, &gb, 1e-4, |bp| {
            let mut y = Tensor::zeros(x.shape());
            bias_add(&mut y, bp).unwrap();
            y.dot(&g).unwrap()
        });
    }
}
