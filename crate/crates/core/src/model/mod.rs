//! Multimodal expert network: encoders, classifier module with confidence heads,
//! three logit experts, training loop and checkpoints.

pub mod checkpoint;
pub mod encoder;
pub mod network;
pub mod train;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{Encoder, ImageEncoderConfig, TabularEncoderConfig};
pub use network::{
    fuse, ConfidenceOutputs, EncoderSharing, ExpertBundle, ForwardTrace, FusionMode, ModelConfig, OutputGrads,
    NUM_EXPERTS,
};
pub use train::{
    argmax, expert_predictions, train_experts, train_experts_with, EpochLosses, TrainConfig, TrainOutcome, TrainState,
};
