//! Sliding-window rearrangement (im2col) and per-window softmax.

use crate::error::{Error, Result};
use crate::flops::Tally;
use crate::tensor::{Real, Shape, Tensor};

/// Rank-6 `(K, K, C, N, H, W)` window expansion of a `(N, C, H, W)` tensor.
///
/// Entry `(u, v, c, n, y, x)` holds `input(n, c, y + u − r, x + v − r)` with
/// `r = (K − 1) / 2`, zero outside the map. Each `(u, v, c, n)` slab is a
/// contiguous `H×W` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Unfolded<T> {
    pub k: usize,
    pub inner: Shape,
    data: Vec<T>,
}

/// Rank-5 `(K, K, N, H, W)` array of per-window scores or weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowScores<T> {
    pub k: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<T>,
}

pub(crate) fn check_window(op: &'static str, k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(op, format!("window size must be odd, got {k}")));
    }
    Ok(())
}

impl<T: Real> Unfolded<T> {
    pub fn zeros(k: usize, inner: Shape) -> Self {
        Self { k, inner, data: vec![T::zero(); k * k * inner.len()] }
    }

    /// Wraps values laid out as [`Unfolded::data`] returns them.
    pub fn from_flat(k: usize, inner: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != k * k * inner.len() {
            return Err(Error::shape("Unfolded::from_flat", format!("{} values for K={k} and {inner}", data.len())));
        }
        Ok(Self { k, inner, data })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize, n: usize, y: usize, x: usize) -> usize {
        let s = self.inner;
        ((((u * self.k + v) * s.c + c) * s.n + n) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize, c: usize, n: usize, y: usize, x: usize) -> T {
        self.data[self.index(u, v, c, n, y, x)]
    }

    pub fn plane(&self, u: usize, v: usize, c: usize, n: usize) -> &[T] {
        let p = self.inner.plane();
        let start = self.index(u, v, c, n, 0, 0);
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, u: usize, v: usize, c: usize, n: usize) -> &mut [T] {
        let p = self.inner.plane();
        let start = self.index(u, v, c, n, 0, 0);
        &mut self.data[start..start + p]
    }

    /// `⟨self, other⟩` over all elements.
    pub fn dot(&self, other: &Self) -> T {
        assert_eq!((self.k, self.inner), (other.k, other.inner));
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }
}

impl<T: Real> WindowScores<T> {
    pub fn zeros(k: usize, n: usize, h: usize, w: usize) -> Self {
        Self { k, n, h, w, data: vec![T::zero(); k * k * n * h * w] }
    }

    pub fn from_vec(k: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != k * k * n * h * w {
            return Err(Error::shape(
                "WindowScores::from_vec",
                format!("{} values for K={k} N={n} H={h} W={w}", data.len()),
            ));
        }
        Ok(Self { k, n, h, w, data })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, n: usize, y: usize, x: usize) -> usize {
        (((u * self.k + v) * self.n + n) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize, n: usize, y: usize, x: usize) -> T {
        self.data[self.index(u, v, n, y, x)]
    }

    pub fn plane(&self, u: usize, v: usize, n: usize) -> &[T] {
        let p = self.h * self.w;
        let start = self.index(u, v, n, 0, 0);
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, u: usize, v: usize, n: usize) -> &mut [T] {
        let p = self.h * self.w;
        let start = self.index(u, v, n, 0, 0);
        &mut self.data[start..start + p]
    }

    fn same_layout(&self, other: &Self) -> bool {
        (self.k, self.n, self.h, self.w) == (other.k, other.n, other.h, other.w)
    }
}

/// Copies the shifted, zero-padded source row into `dst` (one row of a plane).
#[inline]
fn shifted_row<T: Real>(dst: &mut [T], src: &[T], dx: isize) {
    let w = dst.len() as isize;
    for x in 0..w {
        let sx = x + dx;
        dst[x as usize] = if sx < 0 || sx >= w { T::zero() } else { src[sx as usize] };
    }
}

/// im2col expansion with zero padding `(K − 1) / 2`; spatial size is preserved.
pub fn unfold<T: Real>(input: &Tensor<T>, k: usize) -> Result<Unfolded<T>> {
    check_window("unfold", k)?;
    let s = input.shape();
    let r = (k / 2) as isize;
    let mut out = Unfolded::zeros(k, s);
    for u in 0..k {
        for v in 0..k {
            let (dy, dx) = (u as isize - r, v as isize - r);
            for c in 0..s.c {
                for n in 0..s.n {
                    let src = input.plane(n, c);
                    let dst = out.plane_mut(u, v, c, n);
                    for y in 0..s.h as isize {
                        let sy = y + dy;
                        let drow = &mut dst[y as usize * s.w..(y as usize + 1) * s.w];
                        if sy < 0 || sy >= s.h as isize {
                            drow.fill(T::zero());
                        } else {
                            shifted_row(drow, &src[sy as usize * s.w..(sy as usize + 1) * s.w], dx);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`unfold`]: scatters every window slot back to its source
/// position and sums, dropping padding slots.
pub fn fold<T: Real>(unfolded: &Unfolded<T>) -> Tensor<T> {
    let s = unfolded.inner;
    let k = unfolded.k;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(s);
    for u in 0..k {
        for v in 0..k {
            let (dy, dx) = (u as isize - r, v as isize - r);
            for c in 0..s.c {
                for n in 0..s.n {
                    let src = unfolded.plane(u, v, c, n);
                    let dst = out.plane_mut(n, c);
                    for y in 0..s.h as isize {
                        let ty = y + dy;
                        if ty < 0 || ty >= s.h as isize {
                            continue;
                        }
                        for x in 0..s.w as isize {
                            let tx = x + dx;
                            if tx < 0 || tx >= s.w as isize {
                                continue;
                            }
                            dst[(ty * s.w as isize + tx) as usize] += src[(y * s.w as isize + x) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Softmax over the `K×K` leading axes at each `(n, y, x)`, max-subtracted.
pub fn softmax_over_leading_window<T: Real>(scores: &WindowScores<T>) -> Result<WindowScores<T>> {
    softmax_over_leading_window_counted(scores, &mut crate::flops::NoTally)
}

/// [`softmax_over_leading_window`] reporting three elementary operations
/// (exponential, accumulation, division) per slot to `tally`.
pub(crate) fn softmax_over_leading_window_counted<T: Real>(
    scores: &WindowScores<T>,
    tally: &mut impl Tally,
) -> Result<WindowScores<T>> {
    if !scores.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax_over_leading_window" });
    }
    let k2 = scores.k * scores.k;
    let stride = scores.n * scores.h * scores.w;
    let mut out = scores.clone();
    for pos in 0..stride {
        let mut max = T::neg_infinity();
        for slot in 0..k2 {
            max = max.max(scores.data[slot * stride + pos]);
        }
        let mut sum = T::zero();
        for slot in 0..k2 {
            let e = (scores.data[slot * stride + pos] - max).exp();
            out.data[slot * stride + pos] = e;
            sum += e;
        }
        for slot in 0..k2 {
            out.data[slot * stride + pos] /= sum;
        }
        tally.elementary(3 * k2 as u64);
    }
    Ok(out)
}

/// Gradient of the window softmax: `w ⊙ (g − Σ w g)` per position.
pub fn softmax_over_leading_window_backward<T: Real>(
    weights: &WindowScores<T>,
    grad_weights: &WindowScores<T>,
) -> Result<WindowScores<T>> {
    if !weights.same_layout(grad_weights) {
        return Err(Error::shape("softmax_over_leading_window_backward", "weights and gradient layouts differ"));
    }
    let k2 = weights.k * weights.k;
    let stride = weights.n * weights.h * weights.w;
    let mut out = grad_weights.clone();
    for pos in 0..stride {
        let mut dot = T::zero();
        for slot in 0..k2 {
            dot += weights.data[slot * stride + pos] * grad_weights.data[slot * stride + pos];
        }
        for slot in 0..k2 {
            let i = slot * stride + pos;
            out.data[i] = weights.data[i] * (grad_weights.data[i] - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_check, rng};

    #[test]
    fn unfold_k1_is_identity_rearrangement() {
        let mut r = rng(0);
        let x = Tensor::<f32>::random_uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, &mut r);
        let u = unfold(&x, 1).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                assert_eq!(u.plane(0, 0, c, n), x.plane(n, c));
            }
        }
    }

    #[test]
    fn unfold_corner_window_is_zero_padded() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = unfold(&x, 3).unwrap();
        let window: Vec<f32> =
            (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| u.at(a, b, 0, 0, 0, 0)).collect();
        assert_eq!(window, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn unfold_matches_direct_indexing() {
        let mut r = rng(4);
        for &k in &[1usize, 3, 5] {
            let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, 5, 6), -1.0, 1.0, &mut r);
            let u = unfold(&x, k).unwrap();
            let rad = (k / 2) as isize;
            for a in 0..k {
                for b in 0..k {
                    for c in 0..3 {
                        for n in 0..2 {
                            for y in 0..5 {
                                for xx in 0..6 {
                                    let want = x.at_padded(
                                        n,
                                        c,
                                        y as isize + a as isize - rad,
                                        xx as isize + b as isize - rad,
                                    );
                                    assert_eq!(u.at(a, b, c, n, y, xx), want);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unfold_rejects_even_window() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        assert!(unfold(&x, 2).is_err());
        assert!(unfold(&x, 0).is_err());
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let s = Shape::new(2, 2, 4, 5);
            let k = [1, 3, 5][seed as usize % 3];
            let x = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut r);
            let mut y = Unfolded::<f64>::zeros(k, s);
            for v in y.data.iter_mut() {
                *v = rand::Rng::gen_range(&mut r, -1.0..1.0);
            }
            let lhs = unfold(&x, k).unwrap().dot(&y);
            let rhs = x.dot(&fold(&y)).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let eq = WindowScores::<f64>::from_vec(3, 1, 1, 1, vec![2.0; 9]).unwrap();
        let w = softmax_over_leading_window(&eq).unwrap();
        assert!(w.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));

        let single = WindowScores::<f64>::from_vec(1, 1, 2, 2, vec![-5.0, 0.0, 3.0, 100.0]).unwrap();
        assert!(softmax_over_leading_window(&single).unwrap().data().iter().all(|&v| v == 1.0));

        // no odd window has two slots; mask the other seven with a huge negative score
        let pair = two_slot_softmax(0.0, 3f64.ln());
        assert!((pair.0 - 0.25).abs() < 1e-15 && (pair.1 - 0.75).abs() < 1e-15);
    }

    /// Softmax restricted to two live slots of a K=3 window (others at −∞ equivalent).
    fn two_slot_softmax(a: f64, b: f64) -> (f64, f64) {
        let mut d = vec![-1e30; 9];
        d[0] = a;
        d[1] = b;
        let w = softmax_over_leading_window(&WindowScores::from_vec(3, 1, 1, 1, d).unwrap()).unwrap();
        (w.data()[0], w.data()[1])
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut r = rng(9);
        let mut s = WindowScores::<f64>::zeros(5, 2, 3, 4);
        for v in s.data.iter_mut() {
            *v = rand::Rng::gen_range(&mut r, -20.0..20.0);
        }
        let w = softmax_over_leading_window(&s).unwrap();
        let stride = 2 * 3 * 4;
        for pos in 0..stride {
            let total: f64 = (0..25).map(|slot| w.data()[slot * stride + pos]).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((0..25).all(|slot| w.data()[slot * stride + pos] >= 0.0));
        }
        let mut shifted = s.clone();
        for pos in 0..stride {
            for slot in 0..25 {
                shifted.data[slot * stride + pos] += pos as f64 * 3.5;
            }
        }
        let w2 = softmax_over_leading_window(&shifted).unwrap();
        assert!(w.data().iter().zip(w2.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let s = WindowScores::<f32>::from_vec(1, 1, 1, 1, vec![f32::NAN]).unwrap();
        assert!(softmax_over_leading_window(&s).is_err());
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let (k, n, h, w) = (3, 1, 2, 3);
            let x = Tensor::<f64>::random_uniform(Shape::new(1, 1, 1, k * k * n * h * w), -2.0, 2.0, &mut r);
            let g = Tensor::<f64>::random_uniform(x.shape(), -1.0, 1.0, &mut r);
            let as_scores = |t: &Tensor<f64>| WindowScores::from_vec(k, n, h, w, t.data().to_vec()).unwrap();
            let weights = softmax_over_leading_window(&as_scores(&x)).unwrap();
            let back = softmax_over_leading_window_backward(&weights, &as_scores(&g)).unwrap();
            let back = Tensor::from_vec(x.shape(), back.data().to_vec()).unwrap();
            fd_check(&x, &back, 1e-4, |p| {
                let w = softmax_over_leading_window(&as_scores(p)).unwrap();
                w.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
            });
        }
    }
}
