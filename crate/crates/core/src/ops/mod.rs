//! Forward/backward primitive pairs. There is no autograd graph: callers
//! keep what each backward needs and invoke it in reverse order.

mod conv;
mod pointwise;
mod resample;
mod window;

pub use conv::{bias_add, bias_backward, conv2d, conv2d_backward, conv2d_direct, conv2d_direct_backward, conv_out_dim};
pub use pointwise::{
    elementwise_mul, elementwise_mul_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use resample::{concat_channels, concat_channels_backward, upsample2x, upsample2x_backward};
pub use window::{
    fold, softmax_over_leading_window, softmax_over_leading_window_backward, unfold, Unfolded, WindowScores,
};

pub(crate) use window::softmax_over_leading_window_counted;
