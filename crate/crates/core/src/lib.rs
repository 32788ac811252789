//! Supervoxel oversegmentation of organized RGB-D point clouds.
//!
//! Two methods are provided: uniform VCCS, and saliency-guided supervoxels
//! (SSV), which clusters a bottom-up saliency map into `K` levels and runs
//! VCCS on each level with a seed resolution that shrinks geometrically as
//! saliency grows. The [`metrics`] module scores 2-D projections of either
//! result against ground truth; [`bench`] and [`synth`] drive experiments.

pub mod bench;
pub mod color;
pub mod config;
pub mod error;
pub mod metrics;
pub mod partition;
pub mod rgbd_io;
pub mod saliency;
pub mod segmentation;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};
pub use partition::{build_partition, kmeans_1d, seed_schedule, ClusterPartition, KMeans1d};
pub use rgbd_io::{CameraIntrinsics, CloudPoint, LabelMap2D, OrganizedCloud, UNLABELED};
pub use saliency::{compute_saliency, SaliencyMap, SaliencyParams};
pub use segmentation::{
    feature_distance, place_seeds, project_labels, ssv_segment, vccs_segment, vccs_segment_cloud,
    Segmentation, SsvResult, VccsParams,
};
pub use voxel::{hik_distance, VoxelFeature, VoxelGrid, VoxelKey};
