//! Global co-attention between two feature maps, the all-pairs baseline
//! that motion guidance replaces.
//!
//! Both maps are `1×1`-compressed to `C/d` channels and flattened to
//! `(C/d, HW)`. With `S = Āᵀ·B̄ ∈ R^{HW×HW}`:
//!
//! ```text
//! U_a(p) = Σ_q softmax_q(S(p, ·))(q) · V_b(q)
//! U_b(q) = Σ_p softmax_p(S(·, q))(p) · V_a(p)
//! ```

use crate::attention::config::CoAttentionConfig;
use crate::error::Result;
use crate::flops::{NoTally, Step, Tally};
use crate::tensor::{Real, Tensor};

/// Returns `(U_a, U_b)`.
pub fn co_attention<T: Real>(
    va: &Tensor<T>,
    vb: &Tensor<T>,
    cfg: &CoAttentionConfig,
    kernel_a: &Tensor<T>,
    kernel_b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    co_attention_counted(va, vb, cfg, kernel_a, kernel_b, &mut NoTally)
}

fn compress<T: Real>(x: &Tensor<T>, n: usize, kernel: &Tensor<T>, tally: &mut impl Tally) -> Vec<T> {
    let s = x.shape();
    let (co, ci) = (kernel.shape().n, kernel.shape().c);
    let hw = s.plane();
    let mut out = vec![T::zero(); co * hw];
    for o in 0..co {
        let dst = &mut out[o * hw..(o + 1) * hw];
        for i in 0..ci {
            let w = kernel.data()[o * ci + i];
            for (d, &v) in dst.iter_mut().zip(x.plane(n, i)) {
                *d += w * v;
            }
        }
    }
    tally.mac(Step::Compression, (co * ci * hw) as u64);
    out
}

/// In-place softmax over `len` entries spaced `stride` apart starting at `start`.
fn softmax_strided<T: Real>(m: &mut [T], start: usize, len: usize, stride: usize, tally: &mut impl Tally) {
    let idx = |j: usize| start + j * stride;
    let max = (0..len).map(|j| m[idx(j)]).fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for j in 0..len {
        let e = (m[idx(j)] - max).exp();
        m[idx(j)] = e;
        sum += e;
    }
    for j in 0..len {
        m[idx(j)] /= sum;
    }
    tally.elementary(3 * len as u64);
}

pub fn co_attention_counted<T: Real>(
    va: &Tensor<T>,
    vb: &Tensor<T>,
    cfg: &CoAttentionConfig,
    kernel_a: &Tensor<T>,
    kernel_b: &Tensor<T>,
    tally: &mut impl Tally,
) -> Result<(Tensor<T>, Tensor<T>)> {
    const OP: &str = "co_attention";
    va.expect_same_shape(OP, vb)?;
    let s = va.shape();
    cfg.validate(s.c)?;
    kernel_a.expect_shape(OP, cfg.kernel_shape(s.c))?;
    kernel_b.expect_shape(OP, cfg.kernel_shape(s.c))?;
    let cd = kernel_a.shape().n;
    let hw = s.plane();

    let mut ua = Tensor::zeros(s);
    let mut ub = Tensor::zeros(s);
    for n in 0..s.n {
        let a = compress(va, n, kernel_a, tally);
        let b = compress(vb, n, kernel_b, tally);

        // S[p, q] row-major
        let mut sim = vec![T::zero(); hw * hw];
        for k in 0..cd {
            let ar = &a[k * hw..(k + 1) * hw];
            let br = &b[k * hw..(k + 1) * hw];
            for (p, &ap) in ar.iter().enumerate() {
                for (d, &bq) in sim[p * hw..(p + 1) * hw].iter_mut().zip(br) {
                    *d += ap * bq;
                }
            }
        }
        tally.mac(Step::Similarity, (hw * hw * cd) as u64);

        let mut rows = sim.clone();
        for p in 0..hw {
            softmax_strided(&mut rows, p * hw, hw, 1, tally);
        }
        let mut cols = sim;
        for q in 0..hw {
            softmax_strided(&mut cols, q, hw, hw, tally);
        }

        for c in 0..s.c {
            let src_b = vb.plane(n, c);
            let dst = ua.plane_mut(n, c);
            for (p, d) in dst.iter_mut().enumerate() {
                *d = rows[p * hw..(p + 1) * hw].iter().zip(src_b).map(|(&w, &v)| w * v).sum();
            }
            let src_a = va.plane(n, c);
            let dst = ub.plane_mut(n, c);
            for (p, &v) in src_a.iter().enumerate() {
                for (d, &w) in dst.iter_mut().zip(&cols[p * hw..(p + 1) * hw]) {
                    *d += w * v;
                }
            }
        }
        tally.mac(Step::WeightedSum, (2 * hw * hw * s.c) as u64);
    }
    Ok((ua.checked(OP)?, ub.checked(OP)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::testutil::rng;

    /// Double loop over all pairs, straight from the definition.
    fn all_pairs(va: &Tensor<f64>, vb: &Tensor<f64>, ka: &Tensor<f64>, kb: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let s = va.shape();
        let cd = ka.shape().n;
        let pos: Vec<(usize, usize)> = (0..s.h).flat_map(|y| (0..s.w).map(move |x| (y, x))).collect();
        let comp = |t: &Tensor<f64>, k: &Tensor<f64>, (y, x): (usize, usize)| -> Vec<f64> {
            (0..cd).map(|o| (0..s.c).map(|i| k.at(o, i, 0, 0) * t.at(0, i, y, x)).sum()).collect()
        };
        let score = |p: (usize, usize), q: (usize, usize)| -> f64 {
            comp(va, ka, p).iter().zip(comp(vb, kb, q)).map(|(a, b)| a * b).sum()
        };
        let mut ua = Tensor::zeros(s);
        let mut ub = Tensor::zeros(s);
        for &p in &pos {
            let z: f64 = pos.iter().map(|&q| score(p, q).exp()).sum();
            for c in 0..s.c {
                *ua.at_mut(0, c, p.0, p.1) = pos.iter().map(|&q| score(p, q).exp() / z * vb.at(0, c, q.0, q.1)).sum();
            }
            let zq: f64 = pos.iter().map(|&q| score(q, p).exp()).sum();
            for c in 0..s.c {
                *ub.at_mut(0, c, p.0, p.1) = pos.iter().map(|&q| score(q, p).exp() / zq * va.at(0, c, q.0, q.1)).sum();
            }
        }
        (ua, ub)
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let mut r = rng(21);
        let cfg = CoAttentionConfig { compression: 2 };
        let s = Shape::new(1, 4, 3, 3);
        let va = Tensor::random_uniform(s, -1.0, 1.0, &mut r);
        let vb = Tensor::random_uniform(s, -1.0, 1.0, &mut r);
        let ka = Tensor::random_uniform(cfg.kernel_shape(4), -1.0, 1.0, &mut r);
        let kb = Tensor::random_uniform(cfg.kernel_shape(4), -1.0, 1.0, &mut r);
        let (ua, ub) = co_attention(&va, &vb, &cfg, &ka, &kb).unwrap();
        let (wa, wb) = all_pairs(&va, &vb, &ka, &kb);
        assert!(ua.max_abs_diff(&wa).unwrap() < 1e-5);
        assert!(ub.max_abs_diff(&wb).unwrap() < 1e-5);
    }

    #[test]
    fn single_position_swaps_inputs() {
        let mut r = rng(22);
        let cfg = CoAttentionConfig { compression: 1 };
        let s = Shape::new(2, 3, 1, 1);
        let va = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut r);
        let vb = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut r);
        let k = Tensor::random_uniform(cfg.kernel_shape(3), -1.0, 1.0, &mut r);
        let (ua, ub) = co_attention(&va, &vb, &cfg, &k, &k).unwrap();
        assert!(ua.max_abs_diff(&vb).unwrap() < 1e-15);
        assert!(ub.max_abs_diff(&va).unwrap() < 1e-15);
    }

    #[test]
    fn dominant_position_takes_over_as_scores_grow() {
        let cfg = CoAttentionConfig { compression: 1 };
        let s = Shape::new(1, 2, 2, 2);
        let mut v = Tensor::<f64>::full(s, 0.1);
        *v.at_mut(0, 0, 1, 0) = 1.0;
        *v.at_mut(0, 1, 1, 0) = 1.0;
        let k = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut last_gap = f64::INFINITY;
        for scale in [1.0, 4.0, 10.0] {
            let x = v.scale(scale);
            let (ua, _) = co_attention(&x, &x, &cfg, &k, &k).unwrap();
            let gap = (0..2)
                .flat_map(|y| (0..2).map(move |xx| (y, xx)))
                .map(|(y, xx)| (ua.at(0, 0, y, xx) - x.at(0, 0, 1, 0)).abs())
                .fold(0.0, f64::max)
                / scale;
            assert!(gap < last_gap);
            last_gap = gap;
        }
        assert!(last_gap < 1e-3);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let cfg = CoAttentionConfig { compression: 2 };
        let a = Tensor::<f32>::zeros(Shape::new(1, 4, 3, 3));
        let b = Tensor::<f32>::zeros(Shape::new(1, 4, 3, 2));
        let k = Tensor::zeros(cfg.kernel_shape(4));
        assert!(co_attention(&a, &b, &cfg, &k, &k).is_err());
        assert!(co_attention(&a, &a, &CoAttentionConfig { compression: 3 }, &k, &k).is_err());
    }
}
