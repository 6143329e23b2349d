//! Accuracy and map-similarity evaluation, gate trends, heatmaps and human
//! annotations.

mod eval;
mod heatmap;
mod human;

pub use eval::{cosine, evaluate, gate_trend, EvalReport, GateTrend, HumanCosines, COSINE_CONVENTION};
pub use heatmap::{heatmap, HeatmapScale};
pub use human::{human_map, HumanAnnotation};
