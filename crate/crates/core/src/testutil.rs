use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{numerical_gradient, relative_error};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Asserts that `analytic` is the gradient of `f` at `x` to relative error `< 1e-4`.
pub fn fd_check(x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64, f: impl FnMut(&Tensor<f64>) -> f64) {
    let numeric = numerical_gradient(x, eps, f);
    let err = relative_error(analytic, &numeric);
    assert!(err < 1e-4, "relative error {err:e}\nanalytic {analytic:?}\nnumeric {numeric:?}");
}
