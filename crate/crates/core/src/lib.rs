//! Ground-plane depth priors for monocular 3D detection.
//!
//! Box bottoms are sampled densely and projected into the image to give
//! grounded depth samples; a depth grid is fitted to them through bilinear
//! interpolation and read back at sub-cell keypoint locations. The crate also
//! carries the pinhole geometry, KITTI file formats, depth fusion and the
//! detection metrics needed to evaluate the result on synthetic scenes.

pub mod camera;
pub mod cli;
pub mod depth_grid;
pub mod evaluation;
pub mod experiment;
pub mod inference;
pub mod kitti_io;
pub mod sampler;
pub mod synth;

pub use camera::{CameraModel, GeometryError, ObjectBox3D, Plane3D};
pub use depth_grid::{
    depth_align_loss, fit_grid, AlignLossReport, DepthGrid, FitConfig, FitReport, GridError,
    GridShape,
};
pub use evaluation::{ap_r40, bev_iou, iou_3d, mpe, PRCurvePoint, ScoredBox};
pub use inference::{
    compute_offsets, fuse_depths, geometry_depth, offset_loss, one_stage_grounded_depth,
    two_stage_grounded_depths, DepthEstimate, KeypointSet2D, OffsetSet,
};
pub use kitti_io::{parse_calib, parse_labels, write_labels, CalibRecord, LabelRecord, Precision};
pub use sampler::{grounded_samples, sample_count, sample_ground_points, GroundSample, GroundSampleSet};
pub use synth::{generate_scene, Scene, SceneSpec};
