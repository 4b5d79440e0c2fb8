//! Projection of predictions into the image, the training losses and metrics.

pub mod fusion;
pub mod loss;
pub mod metrics;

pub use fusion::{direct_project, fuse, render_labels, FusedGrid};
pub use loss::{seg_loss, total_loss, vis_loss, LossReport, LossTerm, ProjectionMode, SegLossKind};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
