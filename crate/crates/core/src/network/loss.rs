use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::tensor::{Gradient, Real, Tensor};

/// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Foreground probability per pixel.
pub fn predict_mask<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    sigmoid(logits)
}

fn check<T: Real>(op: &'static str, prob: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    prob.expect_same_shape(op, gt)?;
    if let Some(v) = gt.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::invalid(op, format!("ground truth must be 0 or 1, found {v}")));
    }
    if prob.is_empty() {
        return Err(Error::invalid(op, "empty prediction"));
    }
    Ok(())
}

fn clamp<T: Real>(p: T) -> T {
    let eps = T::of(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy over all pixels.
pub fn bce_loss<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    check("bce_loss", prob, gt)?;
    let sum: T = prob
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let p = clamp(p);
            -(g * p.ln() + (T::one() - g) * (T::one() - p).ln())
        })
        .sum();
    Ok(sum / T::of(prob.len() as f64))
}

/// `∂ bce_loss / ∂ prob`; zero where the clamp is active.
pub fn bce_loss_backward<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>) -> Result<Gradient<T>> {
    check("bce_loss_backward", prob, gt)?;
    let n = T::of(prob.len() as f64);
    let data = prob
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| if clamp(p) != p { T::zero() } else { (-g / p + (T::one() - g) / (T::one() - p)) / n })
        .collect();
    Tensor::from_vec(prob.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sigmoid_scalar;
    use crate::tensor::Shape;
    use crate::testutil::{fd_check, rng};
    use rand::Rng;

    #[test]
    fn half_probability_gives_ln_two() {
        let s = Shape::new(2, 1, 3, 4);
        let mut r = rng(41);
        let gt = Tensor::<f64>::from_fn(s, |_, _, _, _| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
        let l = bce_loss(&Tensor::full(s, 0.5), &gt).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_eps_level() {
        let s = Shape::new(1, 1, 4, 4);
        let gt = Tensor::<f32>::from_fn(s, |_, _, y, x| ((x + y) % 2) as f32);
        let l = bce_loss(&gt, &gt).unwrap();
        assert!(l > 0.0 && l < 2e-7, "{l}");
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut r = rng(42);
        let s = Shape::new(2, 1, 5, 6);
        let prob = Tensor::<f64>::random_uniform(s, 0.0, 1.0, &mut r);
        let gt = Tensor::from_fn(s, |_, _, _, _| if r.gen_bool(0.3) { 1.0 } else { 0.0 });
        let mut acc = 0.0;
        for (&p, &g) in prob.data().iter().zip(gt.data()) {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            acc += if g == 1.0 { -p.ln() } else { -(1.0 - p).ln() };
        }
        assert!((bce_loss(&prob, &gt).unwrap() - acc / prob.len() as f64).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(43);
        let s = Shape::new(1, 1, 4, 5);
        let prob = Tensor::<f64>::random_uniform(s, 0.05, 0.95, &mut r);
        let gt = Tensor::from_fn(s, |_, _, _, _| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
        let g = bce_loss_backward(&prob, &gt).unwrap();
        fd_check(&prob, &g, 1e-6, |p| bce_loss(p, &gt).unwrap());
    }

    #[test]
    fn rejects_soft_labels_and_shape_mismatch() {
        let s = Shape::new(1, 1, 2, 2);
        let p = Tensor::<f32>::full(s, 0.5);
        assert!(bce_loss(&p, &Tensor::full(s, 0.5)).is_err());
        assert!(bce_loss(&p, &Tensor::zeros(Shape::new(1, 1, 2, 3))).is_err());
    }

    #[test]
    fn predict_mask_matches_scalar_sigmoid() {
        let mut r = rng(44);
        let logits = Tensor::<f64>::random_uniform(Shape::new(1, 1, 6, 6), -8.0, 8.0, &mut r);
        let p = predict_mask(&logits);
        for (&l, &v) in logits.data().iter().zip(p.data()) {
            assert!((v - 1.0 / (1.0 + (-l).exp())).abs() < 1e-15);
        }
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        assert!(sigmoid_scalar(60.0f32) > 0.999_999);
    }
}
