//! The I-ViT model: configuration, parameters, forward pass and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod oracle;
mod params;

pub use config::{GateMode, ModelConfig};
pub use forward::{
    baseline_forward, build_forward, forward, forward_with, ForwardGraph, ForwardOptions, GateSource, Image,
    InteractionTrace, LayerTrace, LayerVars,
};
pub use params::{
    attach_interaction, freeze_mask, init_backbone, names, FreezePolicy, Params, INTERACTION_QUERY_JITTER,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use oracle::PatchOracle;
