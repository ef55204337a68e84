use crate::error::Result;
use crate::tensor::{Gradient, Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of [`relu`]; `x` is the forward input. The subgradient at 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Gradient<T>> {
    x.expect_same_shape("relu_backward", grad_out)?;
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    // split on sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`]; `out` is the forward output.
pub fn sigmoid_backward<T: Real>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Gradient<T>> {
    out.expect_same_shape("sigmoid_backward", grad_out)?;
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(out.data()) {
        *gv *= s * (T::one() - s);
    }
    Ok(g)
}

pub fn elementwise_mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_same_shape("elementwise_mul", b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data)?.checked("elementwise_mul")
}

/// Returns `(∂/∂a, ∂/∂b)` of [`elementwise_mul`].
pub fn elementwise_mul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Gradient<T>, Gradient<T>)> {
    a.expect_same_shape("elementwise_mul_backward", b)?;
    a.expect_same_shape("elementwise_mul_backward", grad_out)?;
    let ga = elementwise_mul(grad_out, b)?;
    let gb = elementwise_mul(grad_out, a)?;
    Ok((ga, gb))
}
