//! Seeded synthetic scenes: boxes resting on a flat ground plane, their exact
//! keypoints, and noisy observations standing in for network outputs.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, GeometryError, ObjectBox3D, Plane3D};
use crate::evaluation::bev_intersection_area;
use crate::inference::{KeypointSet2D, NUM_KEYPOINTS};
use crate::kitti_io::{write_calib, write_labels, CalibRecord, LabelRecord, Precision};
use crate::sampler::seeded_rng;

/// KITTI-like intrinsics (zero translation so the pinhole height identity is
/// exact).
pub const DEFAULT_CAMERA: [f64; 12] = [
    721.5377, 0.0, 609.5593, 0.0, 0.0, 721.5377, 172.854, 0.0, 0.0, 0.0, 1.0, 0.0,
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("placed only {placed} of {requested} objects")]
    Placement { placed: usize, requested: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Std dev of every keypoint coordinate, pixels.
    pub keypoint_px: f64,
    /// Std dev of the observed object height, meters.
    pub height_m: f64,
    /// Std dev of the direct depth, relative to the true depth.
    pub direct_depth_rel: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            keypoint_px: 0.5,
            height_m: 0.05,
            direct_depth_rel: 0.05,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            keypoint_px: 0.0,
            height_m: 0.0,
            direct_depth_rel: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectSpec {
    pub count: usize,
    pub class: String,
    pub depth_range: [f64; 2],
    pub lateral_range: [f64; 2],
    pub height_range: [f64; 2],
    pub width_range: [f64; 2],
    pub length_range: [f64; 2],
    pub yaw_range: [f64; 2],
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            count: 6,
            class: "Car".into(),
            depth_range: [8.0, 40.0],
            lateral_range: [-12.0, 12.0],
            height_range: [1.4, 1.7],
            width_range: [1.5, 1.9],
            length_range: [3.5, 4.6],
            yaw_range: [-PI, PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Row-major 3x4 projection matrix.
    pub camera: [f64; 12],
    /// Image width and height in pixels.
    pub image_size: [f64; 2],
    /// Every projected vertex must stay this far inside the image.
    pub margin_px: f64,
    pub ground: Plane3D,
    pub objects: ObjectSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            camera: DEFAULT_CAMERA,
            image_size: [1242.0, 375.0],
            margin_px: 5.0,
            ground: Plane3D::default(),
            objects: ObjectSpec::default(),
            noise: NoiseSpec::default(),
            seed: 0,
            max_attempts: 1000,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn camera_model(&self) -> Result<CameraModel, GeometryError> {
        CameraModel::from_row_major(&self.camera)
    }

    fn ground_height(&self) -> Result<f64, SynthError> {
        let (n, d) = self.ground.normal_offset()?;
        if (n.y.abs() - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidSpec(
                "ground plane must be horizontal".into(),
            ));
        }
        Ok(d / n.y)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let o = &self.objects;
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let positive = |r: [f64; 2]| ordered(r) && r[0] > 0.0;
        if !positive(o.depth_range) {
            return Err(SynthError::InvalidSpec("depth range must be positive".into()));
        }
        if !(positive(o.height_range) && positive(o.width_range) && positive(o.length_range)) {
            return Err(SynthError::InvalidSpec("dimension ranges must be positive".into()));
        }
        if !(ordered(o.lateral_range) && ordered(o.yaw_range)) {
            return Err(SynthError::InvalidSpec("ranges must be ordered".into()));
        }
        let n = &self.noise;
        if !(n.keypoint_px >= 0.0 && n.height_m >= 0.0 && n.direct_depth_rel >= 0.0) {
            return Err(SynthError::InvalidSpec("noise std devs must be >= 0".into()));
        }
        Ok(())
    }
}

/// What a detector would report for one object, with noise applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub keypoints: KeypointSet2D,
    pub height: f64,
    pub direct_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bx: ObjectBox3D,
    pub truth: KeypointSet2D,
    pub observed: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spec: SceneSpec,
    pub objects: Vec<SceneObject>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.gen::<f64>()
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    n * std
}

fn visible(cam: &CameraModel, bx: &ObjectBox3D, spec: &SceneSpec) -> bool {
    let [w, h] = spec.image_size;
    let m = spec.margin_px;
    bx.corners().iter().all(|c| match cam.project(c) {
        Ok([u, v, _]) => u >= m && v >= m && u <= w - m && v <= h - m,
        Err(_) => false,
    })
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let cam = spec.camera_model()?;
    let ground_y = spec.ground_height()?;
    let o = &spec.objects;

    let mut rng = seeded_rng(spec.seed);
    let mut boxes: Vec<ObjectBox3D> = Vec::with_capacity(o.count);
    for _ in 0..o.count {
        let mut placed = None;
        for _ in 0..spec.max_attempts {
            let z = uniform(&mut rng, o.depth_range);
            let x = uniform(&mut rng, o.lateral_range);
            let dims = [
                uniform(&mut rng, o.height_range),
                uniform(&mut rng, o.width_range),
                uniform(&mut rng, o.length_range),
            ];
            let yaw = uniform(&mut rng, o.yaw_range);
            let bx = ObjectBox3D::new([x, ground_y, z], dims, yaw);
            if !visible(&cam, &bx, spec) {
                continue;
            }
            if boxes.iter().any(|b| bev_intersection_area(b, &bx) > 0.0) {
                continue;
            }
            placed = Some(bx);
            break;
        }
        match placed {
            Some(bx) => boxes.push(bx),
            None => {
                return Err(SynthError::Placement {
                    placed: boxes.len(),
                    requested: o.count,
                })
            }
        }
    }

    let mut noise_rng = seeded_rng(spec.seed);
    noise_rng.set_stream(1);
    let n = &spec.noise;
    let objects = boxes
        .into_iter()
        .map(|bx| {
            let truth = KeypointSet2D::from_box(&cam, &bx)?;
            let mut pts = truth.points();
            for p in pts.iter_mut().take(NUM_KEYPOINTS) {
                p[0] += gaussian(&mut noise_rng, n.keypoint_px);
                p[1] += gaussian(&mut noise_rng, n.keypoint_px);
            }
            let height = bx.height() + gaussian(&mut noise_rng, n.height_m);
            let direct_depth =
                bx.location[2] * (1.0 + gaussian(&mut noise_rng, n.direct_depth_rel));
            Ok(SceneObject {
                bx,
                truth,
                observed: Observation {
                    keypoints: KeypointSet2D::from_points(&pts),
                    height,
                    direct_depth,
                },
            })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;

    Ok(Scene {
        spec: spec.clone(),
        objects,
    })
}

impl Scene {
    pub fn camera(&self) -> CameraModel {
        // Validated during generation.
        self.spec.camera_model().expect("scene camera is valid")
    }

    pub fn boxes(&self) -> Vec<ObjectBox3D> {
        self.objects.iter().map(|o| o.bx).collect()
    }

    pub fn labels(&self) -> Vec<LabelRecord> {
        self.objects
            .iter()
            .map(|o| {
                let bx = &o.bx;
                let (mut l, mut t, mut r, mut b) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for k in &o.truth.k2d {
                    l = l.min(k[0]);
                    r = r.max(k[0]);
                    t = t.min(k[1]);
                    b = b.max(k[1]);
                }
                let [x, _, z] = bx.location;
                let mut alpha = bx.yaw - x.atan2(z);
                if alpha > PI {
                    alpha -= 2.0 * PI;
                } else if alpha < -PI {
                    alpha += 2.0 * PI;
                }
                LabelRecord {
                    class: self.spec.objects.class.clone(),
                    truncated: 0.0,
                    occluded: 0,
                    alpha,
                    bbox2d: [l, t, r, b],
                    dims: bx.dims,
                    location: bx.location,
                    rotation_y: bx.yaw,
                    score: None,
                }
            })
            .collect()
    }

    pub fn calib(&self) -> CalibRecord {
        let mut rec = CalibRecord::default();
        for name in ["P0", "P1", "P2", "P3"] {
            rec.entries.insert(name.into(), self.spec.camera);
        }
        rec.raw
            .insert("R0_rect".into(), "1 0 0 0 1 0 0 0 1".into());
        rec
    }

    /// Write `label.txt`, `calib.txt` and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("label.txt"), write_labels(&self.labels(), Precision::Full))?;
        std::fs::write(dir.join("calib.txt"), write_calib(&self.calib()))?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("truth.json"), json)?;
        Ok(())
    }
}
