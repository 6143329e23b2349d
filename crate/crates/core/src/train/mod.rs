//! Objectives, synthetic data, optimization and the ablation switchboard.

mod config;
mod data;
mod loss;
mod optim;
mod run;

pub use config::{validate_config, Freeze, RunConfig, Stage, Switches, TrainSettings, CONFIG_KEYS};
pub use data::{gen_synthetic, glyphs, sample_seed, DataSpec, Dataset, Sample, GLYPH_PATCHES, MAX_CLASSES};
pub use loss::{
    alignment_loss, alignment_var, class_row, class_row_var, measured_alignment, objective_var, total_loss,
    LossBreakdown, LossVars,
};
pub use optim::{cosine_lr, Sgd, MOMENTUM};
pub use run::{
    ablate, accuracy, finetune, finetune_setup, metrics_header, metrics_log, parse_metrics, pretrain, pretrained_from,
    train, EpochRecord, Pretrained, TrainOutcome,
};
