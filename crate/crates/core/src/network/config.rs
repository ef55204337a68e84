use serde::{Deserialize, Serialize};

use crate::attention::MotionGuidanceConfig;
use crate::error::{Error, Result};

/// Decoder topology.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Every adjacent branch pair is merged at every level, deepest first,
    /// until a single full-detail branch remains.
    #[default]
    Progressive,
    /// Classic top-down decoder: upsample, concatenate, convolve, repeat.
    UnetBaseline,
}

/// How appearance features of stages 2.. are enhanced by motion features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementMode {
    #[default]
    MotionGuidance,
    ElementwiseMul,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel width of each encoder stage; stage `i` (0-based) sits at stride `2^(i+2)`.
    pub widths: Vec<usize>,
    /// Motion guidance settings for stages 2.. (`widths.len() − 1` entries).
    pub guidance: Vec<MotionGuidanceConfig>,
    pub fusion: FusionMode,
    pub enhancement: EnhancementMode,
    /// Input `(height, width)`.
    pub input: (usize, usize),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::new(vec![8, 16, 32, 64], MotionGuidanceConfig::new(3, 2, 3), (96, 160))
    }
}

impl NetworkConfig {
    /// Same guidance settings on every stage after the first.
    pub fn new(widths: Vec<usize>, guidance: MotionGuidanceConfig, input: (usize, usize)) -> Self {
        let stages = widths.len().saturating_sub(1);
        Self {
            widths,
            guidance: vec![guidance; stages],
            fusion: FusionMode::Progressive,
            enhancement: EnhancementMode::MotionGuidance,
            input,
        }
    }

    pub fn with_fusion(mut self, fusion: FusionMode) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_enhancement(mut self, enhancement: EnhancementMode) -> Self {
        self.enhancement = enhancement;
        self
    }

    pub fn with_guidance(mut self, guidance: MotionGuidanceConfig) -> Self {
        self.guidance = vec![guidance; self.widths.len().saturating_sub(1)];
        self
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Total downsampling of the deepest stage.
    pub fn max_stride(&self) -> usize {
        1 << (self.widths.len() + 1)
    }

    pub fn stride(&self, stage: usize) -> usize {
        1 << (stage + 2)
    }

    /// Channels of the fused stage output `Concat(U_a, U_m)`.
    pub fn fused_channels(&self, stage: usize) -> usize {
        2 * self.widths[stage]
    }

    /// Guidance settings of `stage` (0-based); stage 0 never has any.
    pub fn guidance_for(&self, stage: usize) -> Option<&MotionGuidanceConfig> {
        if stage == 0 || self.enhancement != EnhancementMode::MotionGuidance {
            None
        } else {
            self.guidance.get(stage - 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "NetworkConfig";
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(
                OP,
                format!("stage widths must be non-empty and positive, got {:?}", self.widths),
            ));
        }
        if self.guidance.len() != self.widths.len() - 1 {
            return Err(Error::invalid(
                OP,
                format!(
                    "{} guidance entries for {} stages; stages 2.. need one each",
                    self.guidance.len(),
                    self.widths.len()
                ),
            ));
        }
        if self.enhancement == EnhancementMode::MotionGuidance {
            for (g, &w) in self.guidance.iter().zip(&self.widths[1..]) {
                g.validate(w)?;
            }
        }
        self.check_resolution(self.input.0, self.input.1)
    }

    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let m = self.max_stride();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid("NetworkConfig", format!("input {h}×{w} must be a positive multiple of {m}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_stride_schedule() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!((0..4).map(|i| c.stride(i)).collect::<Vec<_>>(), vec![4, 8, 16, 32]);
        assert_eq!(c.max_stride(), 32);
        assert!(c.guidance_for(0).is_none());
        assert!(c.guidance_for(1).is_some());
        assert_eq!(c.fused_channels(2), 64);
    }

    #[test]
    fn rejects_bad_resolution_and_guidance() {
        let mut c = NetworkConfig::default();
        c.input = (100, 160);
        assert!(c.validate().is_err());
        let c = NetworkConfig::new(vec![8, 12], MotionGuidanceConfig::new(3, 5, 1), (32, 32));
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.guidance.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_guidance_modes_skip_guidance_validation() {
        let c = NetworkConfig::new(vec![8, 12], MotionGuidanceConfig::new(3, 5, 1), (32, 32))
            .with_enhancement(EnhancementMode::ElementwiseMul);
        c.validate().unwrap();
        assert!(c.guidance_for(1).is_none());
    }

    #[test]
    fn serde_roundtrip() {
        let c = NetworkConfig::default().with_fusion(FusionMode::UnetBaseline);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("unet_baseline"));
        assert_eq!(serde_json::from_str::<NetworkConfig>(&s).unwrap(), c);
    }
}
