//! Diverse exemplar selection for class-incremental keypoint pose estimation.
//!
//! * [`kernel`]: pose feature matrices, linear and RBF L-ensemble kernels.
//! * [`dpp`]: k-DPP probabilities, greedy and exhaustive MAP selection.
//! * [`cluster`]: k-means and the clustered linear-kernel selector.
//! * [`memory`]: fixed-budget and growing exemplar memories, baseline samplers.
//! * [`augment`]: limb warping with thin-plate splines, inpainting, heatmaps,
//!   cropping and basic augmentations.
//! * [`harness`]: COCO-style ingestion, schedule runs, PCK and losses.

pub mod augment;
pub mod cluster;
pub mod dpp;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod manifest;
pub mod memory;
pub mod pose;

pub use error::{Error, Result};
pub use kernel::{FeatureMatrix, KernelKind, KernelMatrix, Scaling};
pub use memory::{ExemplarMemory, SamplerStrategy, StrategyKind};
pub use pose::{BBox, Keypoint, PoseInstance};
