//! Motion guidance (local, window-restricted) and co-attention (global)
//! feature enhancement.

mod co_attention;
mod config;
mod motion_guidance;

pub use co_attention::{co_attention, co_attention_counted};
pub use config::{CoAttentionConfig, MotionGuidanceConfig, Normalization};
pub use motion_guidance::{
    motion_guidance_backward, motion_guidance_cascade, motion_guidance_cascade_backward,
    motion_guidance_cascade_counted, motion_guidance_fast, motion_guidance_fast_counted, motion_guidance_naive,
    motion_guidance_naive_counted, motion_guidance_weights, CascadeGrads, MotionGuidanceGrads,
};
