//! The modulated U-Net: layout, training, inference and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod infer;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use infer::enhance;
pub use train::{evaluate_loss, finetune_modulation, train_base, EpochLog, TrainReport, TrainSchedule};
pub use unet::{
    build_unet, conv_specs, forward_features, forward_graph, modulate_weights, Anchor, ConvSpec, Model, Param,
    UNetConfig,
};
