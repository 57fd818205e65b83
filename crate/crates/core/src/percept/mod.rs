//! Segmentation math: receptive-field recursion, the uncertainty-weighted
//! multi-task loss, focal loss, corner-offset box matching, prior clustering
//! and offset-voting instance assembly.

mod boxes;
mod cluster;
mod instances;
mod loss;
mod receptive;

pub use boxes::{
    d_change, d_change_with, match_priors, BBox, DChangeMode, PriorMatch, PriorMatches,
};
pub use cluster::{
    cluster_priors, kmeans, KMeansConfig, KMeansResult, PriorBox, DEFAULT_PRIOR_COUNT,
};
pub use instances::{
    assemble_instances, iou, miou, miou_by_instance, BoxDetection, ClassMap, InstanceMap, OffsetMap,
};
pub use loss::{focal_loss, focal_loss_grad, hybrid_loss, FocalParams, TaskLosses, TaskSigmas};
pub use receptive::{
    assign_priors_to_layers, parse_layer_stack, receptive_field, receptive_fields, LayerAssignment,
    LayerSpec,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("clustering error: {0}")]
    Clustering(String),
    #[error("layer stack line {line}: {message}")]
    Parse { line: usize, message: String },
}
