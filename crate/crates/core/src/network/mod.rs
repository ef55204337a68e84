//! Dual-stream encoder with stage-wise motion enhancement, the progressive
//! fusion and U-Net decoders, prediction head, loss and checkpoints.
//!
//! Each encoder stream is a stride-2 stem followed by stages of
//! `stride-2 conv + ReLU + conv + ReLU`, so stage `i` (0-based) sits at
//! stride `2^(i+2)`. Appearance features of every stage after the first are
//! enhanced by the motion features of the same stage before feeding the next
//! appearance stage.

mod checkpoint;
mod config;
mod layers;
mod loss;
mod model;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{EnhancementMode, FusionMode, NetworkConfig};
pub use layers::{conv_relu, conv_relu_backward, ConvReluTrace, ResBlockTrace};
pub use loss::{bce_loss, bce_loss_backward, predict_mask, BCE_EPS};
pub use model::{dual_stream_forward, progressive_fusion, unet_baseline_fusion, ForwardTrace, Network, StageFeatures};
pub use params::{
    Conv, Decoder, Encoder, EncoderStage, ModelParams, ParamGroup, ParamMut, ParamRef, ResBlock, INIT_GAIN,
};
