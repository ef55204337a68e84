//! Forward/backward of the composite layers. Each `*Trace` keeps exactly what
//! the matching backward consumes; backward accumulates into a gradient
//! layout of the same type.

use crate::error::Result;
use crate::network::params::{Conv, ResBlock};
use crate::ops::{bias_add, bias_backward, conv2d, conv2d_backward, relu, relu_backward};
use crate::tensor::{Gradient, Real, Tensor};

impl<T: Real> Conv<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = conv2d(x, &self.weight, self.stride, self.padding())?;
        bias_add(&mut y, &self.bias)?;
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Conv<T>) -> Result<Gradient<T>> {
        let (gx, gw) = conv2d_backward(x, &self.weight, grad_out, self.stride, self.padding())?;
        grads.weight.add_assign(&gw)?;
        grads.bias.add_assign(&bias_backward(grad_out))?;
        Ok(gx)
    }
}

/// `relu(conv(x))`.
#[derive(Clone, Debug)]
pub struct ConvReluTrace<T> {
    pub input: Tensor<T>,
    pub pre: Tensor<T>,
    pub out: Tensor<T>,
}

pub fn conv_relu<T: Real>(conv: &Conv<T>, x: &Tensor<T>) -> Result<ConvReluTrace<T>> {
    let pre = conv.forward(x)?;
    let out = relu(&pre);
    Ok(ConvReluTrace { input: x.clone(), pre, out })
}

pub fn conv_relu_backward<T: Real>(
    conv: &Conv<T>,
    t: &ConvReluTrace<T>,
    grad_out: &Tensor<T>,
    grads: &mut Conv<T>,
) -> Result<Gradient<T>> {
    let g = relu_backward(&t.pre, grad_out)?;
    conv.backward(&t.input, &g, grads)
}

#[derive(Clone, Debug)]
pub struct ResBlockTrace<T> {
    pub first: ConvReluTrace<T>,
    /// `conv2(mid) + skip(x)` before the final ReLU.
    pub sum: Tensor<T>,
    pub out: Tensor<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<ResBlockTrace<T>> {
        let first = conv_relu(&self.conv1, x)?;
        let mut sum = self.conv2.forward(&first.out)?;
        match &self.skip {
            Some(p) => sum.add_assign(&p.forward(x)?)?,
            None => sum.add_assign(x)?,
        }
        let out = relu(&sum);
        Ok(ResBlockTrace { first, sum, out })
    }

    pub fn backward(&self, t: &ResBlockTrace<T>, grad_out: &Tensor<T>, grads: &mut ResBlock<T>) -> Result<Gradient<T>> {
        let g_sum = relu_backward(&t.sum, grad_out)?;
        let g_mid = self.conv2.backward(&t.first.out, &g_sum, &mut grads.conv2)?;
        let mut g_x = conv_relu_backward(&self.conv1, &t.first, &g_mid, &mut grads.conv1)?;
        match (&self.skip, &mut grads.skip) {
            (Some(p), Some(gp)) => g_x.add_assign(&p.backward(&t.first.input, &g_sum, gp)?)?,
            _ => g_x.add_assign(&g_sum)?,
        }
        Ok(g_x)
    }
}
