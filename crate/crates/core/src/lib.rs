//! Self-training domain adaptation for LiDAR semantic segmentation.

pub mod cli;
pub mod cloud;
pub mod config;
pub mod dplf;
pub mod error;
pub mod experiment;
pub mod io;
pub mod matrix;
pub mod mixing;
pub mod pgdap;
pub mod report;
pub mod rng;
pub mod scene;
pub mod trainer;

pub use cloud::{LabelSet, Normalization, PointCloud, UNKNOWN};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::{RandomStream, Stage};
