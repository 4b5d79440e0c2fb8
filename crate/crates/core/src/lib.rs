//! Weakly 2D-supervised semantic segmentation of 3D scene point clouds.
//!
//! A graph pyramid encoder with segmentation and visibility heads is trained
//! only from per-pixel 2D label maps: per-point class distributions are
//! projected into the image, fused per pixel, and compared with the 2D labels.
//!
//! Module map:
//!
//! * [`model`]: point clouds, viewpoints, label maps and their text formats
//! * [`geometry`]: camera transforms, pixel binning, frustum truncation
//! * [`visibility`]: depth-buffer distance filter for visible/occluded labels
//! * [`graph`]: k-NN graphs and edge features
//! * [`nn`]: reverse-mode tape, the network, Adam, checkpoints
//! * [`render_loss`]: semantic fusion, projection, losses and metrics
//! * [`harness`]: synthetic scenes, datasets, training and evaluation

pub mod error;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod real;
pub mod render_loss;
pub mod visibility;

pub use error::{Error, Result};
