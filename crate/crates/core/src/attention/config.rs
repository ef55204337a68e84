use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// How window similarities become weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Softmax over the `K×K` window.
    #[default]
    Softmax,
    /// Raw dot-product scores used directly as weights. Experimental.
    Unnormalized,
}

/// Hyperparameters of a (possibly cascaded) motion guidance module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionGuidanceConfig {
    /// Odd window side `K` in pixels.
    pub window: usize,
    /// Channel compression divisor `d`; must divide the channel count.
    pub compression: usize,
    /// Number of stacked modules, each with its own compression kernel.
    pub cascade: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

impl Default for MotionGuidanceConfig {
    fn default() -> Self {
        Self { window: 3, compression: 2, cascade: 1, normalization: Normalization::Softmax }
    }
}

impl MotionGuidanceConfig {
    pub fn new(window: usize, compression: usize, cascade: usize) -> Self {
        Self { window, compression, cascade, normalization: Normalization::Softmax }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        const OP: &str = "MotionGuidanceConfig";
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid(OP, format!("window size must be odd, got {}", self.window)));
        }
        if self.cascade == 0 {
            return Err(Error::invalid(OP, "cascade must be at least 1"));
        }
        if self.compression == 0 || channels % self.compression != 0 {
            return Err(Error::invalid(
                OP,
                format!("compression {} must divide channel count {channels}", self.compression),
            ));
        }
        Ok(())
    }

    /// Shape of one stage's `1×1` compression kernel for `channels` inputs.
    pub fn kernel_shape(&self, channels: usize) -> Shape {
        Shape::new(channels / self.compression.max(1), channels, 1, 1)
    }

    pub(crate) fn check_inputs<T: Real>(&self, op: &'static str, va: &Tensor<T>, vm: &Tensor<T>) -> Result<()> {
        va.expect_same_shape(op, vm)?;
        self.validate(va.shape().c)
    }

    pub(crate) fn check_kernel<T: Real>(&self, op: &'static str, channels: usize, kernel: &Tensor<T>) -> Result<()> {
        kernel.expect_shape(op, self.kernel_shape(channels))
    }
}

/// Hyperparameters of the global co-attention reference module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoAttentionConfig {
    pub compression: usize,
}

impl Default for CoAttentionConfig {
    fn default() -> Self {
        Self { compression: 2 }
    }
}

impl CoAttentionConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.compression == 0 || channels % self.compression != 0 {
            return Err(Error::invalid(
                "CoAttentionConfig",
                format!("compression {} must divide channel count {channels}", self.compression),
            ));
        }
        Ok(())
    }

    pub fn kernel_shape(&self, channels: usize) -> Shape {
        Shape::new(channels / self.compression.max(1), channels, 1, 1)
    }
}
