//! Depth estimators and their uncertainty-weighted fusion.
//!
//! Eleven image points describe an object: the projected 3D center `c2d`, the
//! eight projected vertices `k1..k8` (bottom face first), and the projected
//! bottom and top face centers `b2d`, `t2d`. Offsets are expressed in grid
//! units relative to the heatmap anchor `floor(c2d / S)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, GeometryError, ObjectBox3D};
use crate::depth_grid::DepthGrid;

/// Minimum vertical pixel extent accepted by [`geometry_depth`].
pub const MIN_PIXEL_HEIGHT: f64 = 1e-3;

pub const NUM_KEYPOINTS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Keypoint {
    Center,
    Corner(u8),
    Bottom,
    Top,
}

impl Keypoint {
    /// Order used by [`KeypointSet2D::points`] and [`OffsetSet`].
    pub const ALL: [Keypoint; NUM_KEYPOINTS] = [
        Keypoint::Center,
        Keypoint::Corner(1),
        Keypoint::Corner(2),
        Keypoint::Corner(3),
        Keypoint::Corner(4),
        Keypoint::Corner(5),
        Keypoint::Corner(6),
        Keypoint::Corner(7),
        Keypoint::Corner(8),
        Keypoint::Bottom,
        Keypoint::Top,
    ];

    pub fn slot(self) -> usize {
        match self {
            Keypoint::Center => 0,
            Keypoint::Corner(i) => i as usize,
            Keypoint::Bottom => 9,
            Keypoint::Top => 10,
        }
    }
}

impl fmt::Display for Keypoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Keypoint::Center => write!(f, "c2d"),
            Keypoint::Corner(i) => write!(f, "k{i}"),
            Keypoint::Bottom => write!(f, "b2d"),
            Keypoint::Top => write!(f, "t2d"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("degenerate pixel height {0}")]
    DegeneratePixelHeight(f64),
    #[error("focal length and object height must be positive")]
    NonPositiveScale,
    #[error("estimate {index} has non-positive sigma {sigma}")]
    NonPositiveSigma { index: usize, sigma: f64 },
    #[error("estimate {index} has invalid depth {z}")]
    InvalidDepth { index: usize, z: f64 },
    #[error("no estimates to fuse")]
    Empty,
    #[error("refined point {0} lies outside the depth grid")]
    OutOfGrid(Keypoint),
    #[error("anchor cell ({0}, {1}) lies outside the depth grid")]
    AnchorOutOfGrid(i64, i64),
    #[error("stride must be positive")]
    BadStride,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The eleven projected keypoints of one object, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet2D {
    pub c2d: [f64; 2],
    pub k2d: [[f64; 2]; 8],
    pub b2d: [f64; 2],
    pub t2d: [f64; 2],
}

impl KeypointSet2D {
    /// Exact keypoints of a box under `cam`.
    pub fn from_box(cam: &CameraModel, bx: &ObjectBox3D) -> Result<Self, GeometryError> {
        let uv = |p| cam.project(&p).map(|[u, v, _]| [u, v]);
        let corners = bx.corners();
        let mut k2d = [[0.0; 2]; 8];
        for (slot, c) in k2d.iter_mut().zip(corners) {
            *slot = uv(c)?;
        }
        Ok(Self {
            c2d: uv(bx.center())?,
            k2d,
            b2d: uv(bx.bottom_center())?,
            t2d: uv(bx.top_center())?,
        })
    }

    pub fn points(&self) -> [[f64; 2]; NUM_KEYPOINTS] {
        let k = &self.k2d;
        [
            self.c2d, k[0], k[1], k[2], k[3], k[4], k[5], k[6], k[7], self.b2d, self.t2d,
        ]
    }

    pub fn from_points(p: &[[f64; 2]; NUM_KEYPOINTS]) -> Self {
        Self {
            c2d: p[0],
            k2d: [p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]],
            b2d: p[9],
            t2d: p[10],
        }
    }

    pub fn get(&self, kp: Keypoint) -> [f64; 2] {
        self.points()[kp.slot()]
    }

    /// Vertical pixel extent between bottom and top face centers.
    pub fn pixel_height(&self) -> f64 {
        self.b2d[1] - self.t2d[1]
    }

    /// Vertical pixel extent of the box edge through bottom corner `i` (1..=4).
    pub fn edge_pixel_height(&self, i: usize) -> f64 {
        self.k2d[i - 1][1] - self.k2d[i + 3][1]
    }
}

/// Heatmap anchor: the integer cell `floor(c2d / S)`, as (column, row).
pub fn anchor_cell(c2d: [f64; 2], stride: f64) -> [i64; 2] {
    [
        (c2d[0] / stride).floor() as i64,
        (c2d[1] / stride).floor() as i64,
    ]
}

/// Offsets of the eleven keypoints from the anchor, in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetSet {
    pub offsets: [[f64; 2]; NUM_KEYPOINTS],
}

impl OffsetSet {
    pub fn get(&self, kp: Keypoint) -> [f64; 2] {
        self.offsets[kp.slot()]
    }

    /// `anchor + delta` for one keypoint, in grid units.
    pub fn refined(&self, anchor: [i64; 2], kp: Keypoint) -> [f64; 2] {
        let d = self.get(kp);
        [anchor[0] as f64 + d[0], anchor[1] as f64 + d[1]]
    }
}

/// `delta_p = p / S - floor(c2d / S)` for every keypoint.
pub fn compute_offsets(kps: &KeypointSet2D, stride: f64) -> Result<OffsetSet, InferenceError> {
    if !(stride > 0.0) {
        return Err(InferenceError::BadStride);
    }
    let anchor = anchor_cell(kps.c2d, stride);
    let (a0, a1) = (anchor[0] as f64, anchor[1] as f64);
    let offsets = kps
        .points()
        .map(|[u, v]| [u / stride - a0, v / stride - a1]);
    Ok(OffsetSet { offsets })
}

/// Sum over the eleven points of the L1 distance between offsets.
pub fn offset_loss(pred: &OffsetSet, gt: &OffsetSet) -> f64 {
    pred.offsets
        .iter()
        .zip(&gt.offsets)
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .sum()
}

/// A depth with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub z: f64,
    pub sigma: f64,
}

impl DepthEstimate {
    pub fn new(z: f64, sigma: f64) -> Self {
        Self { z, sigma }
    }
}

/// Pinhole depth `f * h / h2d`.
pub fn geometry_depth(f: f64, h: f64, h2d: f64) -> Result<f64, InferenceError> {
    if !(f > 0.0 && h > 0.0) {
        return Err(InferenceError::NonPositiveScale);
    }
    if !(h2d > MIN_PIXEL_HEIGHT) {
        return Err(InferenceError::DegeneratePixelHeight(h2d));
    }
    Ok(f * h / h2d)
}

/// Geometry depths from the center pair (b2d, t2d) and from the averaged
/// vertical edges of the diagonals (k1, k3) and (k2, k4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryDepths {
    pub center: f64,
    pub diag13: f64,
    pub diag24: f64,
}

impl GeometryDepths {
    pub fn as_array(&self) -> [f64; 3] {
        [self.center, self.diag13, self.diag24]
    }
}

pub fn geometry_depths(
    f: f64,
    h: f64,
    kps: &KeypointSet2D,
) -> Result<GeometryDepths, InferenceError> {
    let edge = |i| geometry_depth(f, h, kps.edge_pixel_height(i));
    Ok(GeometryDepths {
        center: geometry_depth(f, h, kps.pixel_height())?,
        diag13: (edge(1)? + edge(3)?) / 2.0,
        diag24: (edge(2)? + edge(4)?) / 2.0,
    })
}

/// Grounded depths read from the grid at refined sub-cell locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundedDepths {
    pub bottom: f64,
    pub diag13: f64,
    pub diag24: f64,
}

impl GroundedDepths {
    pub fn as_array(&self) -> [f64; 3] {
        [self.bottom, self.diag13, self.diag24]
    }
}

fn read_refined(
    grid: &DepthGrid,
    anchor: [i64; 2],
    offsets: &OffsetSet,
    kp: Keypoint,
) -> Result<f64, InferenceError> {
    let [ug, vg] = offsets.refined(anchor, kp);
    grid.interpolate(ug, vg)
        .map_err(|_| InferenceError::OutOfGrid(kp))
}

/// Two-stage inference: refine the anchor with the regressed offsets, then
/// interpolate the grid at b2d and at the four bottom corners. Each diagonal
/// estimate is the mean of its two corner depths.
pub fn two_stage_depths(
    grid: &DepthGrid,
    anchor: [i64; 2],
    offsets: &OffsetSet,
) -> Result<GroundedDepths, InferenceError> {
    let read = |kp| read_refined(grid, anchor, offsets, kp);
    let k: Vec<f64> = (1..=4)
        .map(|i| read(Keypoint::Corner(i)))
        .collect::<Result<_, _>>()?;
    Ok(GroundedDepths {
        bottom: read(Keypoint::Bottom)?,
        diag13: (k[0] + k[2]) / 2.0,
        diag24: (k[1] + k[3]) / 2.0,
    })
}

/// [`two_stage_depths`] with caller-provided uncertainties attached, in the
/// order (b2d, k1/k3, k2/k4).
pub fn two_stage_grounded_depths(
    grid: &DepthGrid,
    anchor: [i64; 2],
    offsets: &OffsetSet,
    sigmas: [f64; 3],
) -> Result<[DepthEstimate; 3], InferenceError> {
    let d = two_stage_depths(grid, anchor, offsets)?.as_array();
    Ok([0, 1, 2].map(|i| DepthEstimate::new(d[i], sigmas[i])))
}

/// Grid value at an integer cell `(column, row)`, without sub-cell refinement.
pub fn one_stage_depth(grid: &DepthGrid, cell: [i64; 2]) -> Result<f64, InferenceError> {
    let err = InferenceError::AnchorOutOfGrid(cell[0], cell[1]);
    if cell[0] < 0 || cell[1] < 0 {
        return Err(err);
    }
    grid.get(cell[1] as usize, cell[0] as usize).ok_or(err)
}

pub fn one_stage_grounded_depth(
    grid: &DepthGrid,
    cell: [i64; 2],
    sigma: f64,
) -> Result<DepthEstimate, InferenceError> {
    Ok(DepthEstimate::new(one_stage_depth(grid, cell)?, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedDepth {
    pub z: f64,
    /// `1 / sum(1 / sigma_i)`.
    pub sigma: f64,
}

/// Uncertainty voting: `sum(z_i / sigma_i) / sum(1 / sigma_i)`.
pub fn fuse_depths(estimates: &[DepthEstimate]) -> Result<FusedDepth, InferenceError> {
    if estimates.is_empty() {
        return Err(InferenceError::Empty);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (index, e) in estimates.iter().enumerate() {
        if !(e.sigma > 0.0) || !e.sigma.is_finite() {
            return Err(InferenceError::NonPositiveSigma {
                index,
                sigma: e.sigma,
            });
        }
        if !e.z.is_finite() {
            return Err(InferenceError::InvalidDepth { index, z: e.z });
        }
        num += e.z / e.sigma;
        den += 1.0 / e.sigma;
    }
    // Clamp away the last-ulp drift so the result stays inside the inputs.
    let lo = estimates.iter().map(|e| e.z).fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().map(|e| e.z).fold(f64::NEG_INFINITY, f64::max);
    Ok(FusedDepth {
        z: (num / den).clamp(lo, hi),
        sigma: 1.0 / den,
    })
}
