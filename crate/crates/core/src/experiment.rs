//! End-to-end synthetic depth experiment. A depth grid is fitted once to the
//! grounded samples of a set of training scenes, then every estimator is run
//! on the noisy observations of separate evaluation scenes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::depth_grid::{fit_grid, DepthGrid, FitConfig, GridError, GridShape};
use crate::evaluation::{mpe, MetricError};
use crate::inference::{
    anchor_cell, compute_offsets, fuse_depths, geometry_depths, one_stage_depth,
    two_stage_depths, DepthEstimate, GeometryDepths, GroundedDepths, InferenceError, Keypoint,
    KeypointSet2D, OffsetSet,
};
use crate::sampler::{grounded_samples, GroundSample};
use crate::synth::{generate_scene, NoiseSpec, Scene, SceneSpec, SynthError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Geometry(#[from] crate::camera::GeometryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub stride: f64,
    pub fit: FitConfig,
    pub noise: NoiseSpec,
    /// Scenes whose samples supervise the grid.
    pub train_scenes: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stride: 4.0,
            fit: FitConfig {
                curvature: 1e-7,
                ..FitConfig::default()
            },
            noise: NoiseSpec::default(),
            train_scenes: 40,
        }
    }
}

/// Training scene seeds live in their own range so they never coincide with
/// evaluation seeds.
const TRAIN_SEED_TAG: u64 = 0x7472_6169_6e00_0000;

pub fn train_seed(base_seed: u64, k: u64) -> u64 {
    (base_seed ^ TRAIN_SEED_TAG).wrapping_add(k << 20)
}

/// The estimators compared by the experiment, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Direct,
    Geo,
    Geo13,
    Geo24,
    Gnd,
    Gnd13,
    Gnd24,
    OneStage,
    Fused,
}

impl Estimator {
    pub const ALL: [Estimator; 9] = [
        Estimator::Direct,
        Estimator::Geo,
        Estimator::Geo13,
        Estimator::Geo24,
        Estimator::Gnd,
        Estimator::Gnd13,
        Estimator::Gnd24,
        Estimator::OneStage,
        Estimator::Fused,
    ];

    /// The seven estimates that enter the fusion.
    pub const FUSED_INPUTS: [Estimator; 7] = [
        Estimator::Direct,
        Estimator::Geo,
        Estimator::Geo13,
        Estimator::Geo24,
        Estimator::Gnd,
        Estimator::Gnd13,
        Estimator::Gnd24,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Direct => "direct",
            Estimator::Geo => "geo",
            Estimator::Geo13 => "geo13",
            Estimator::Geo24 => "geo24",
            Estimator::Gnd => "gnd",
            Estimator::Gnd13 => "gnd13",
            Estimator::Gnd24 => "gnd24",
            Estimator::OneStage => "one_stage",
            Estimator::Fused => "fused",
        }
    }
}

/// Everything inferred for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDepths {
    pub object_id: usize,
    pub z_true: f64,
    pub anchor: [i64; 2],
    pub offsets: OffsetSet,
    pub direct: DepthEstimate,
    pub geometry: [DepthEstimate; 3],
    pub grounded: [DepthEstimate; 3],
    pub one_stage: f64,
    pub fused: f64,
    pub fused_sigma: f64,
}

impl ObjectDepths {
    pub fn value(&self, e: Estimator) -> f64 {
        match e {
            Estimator::Direct => self.direct.z,
            Estimator::Geo => self.geometry[0].z,
            Estimator::Geo13 => self.geometry[1].z,
            Estimator::Geo24 => self.geometry[2].z,
            Estimator::Gnd => self.grounded[0].z,
            Estimator::Gnd13 => self.grounded[1].z,
            Estimator::Gnd24 => self.grounded[2].z,
            Estimator::OneStage => self.one_stage,
            Estimator::Fused => self.fused,
        }
    }

    /// The seven fusion inputs in the order of [`Estimator::FUSED_INPUTS`].
    pub fn fusion_inputs(&self) -> [DepthEstimate; 7] {
        let g = &self.geometry;
        let d = &self.grounded;
        [self.direct, g[0], g[1], g[2], d[0], d[1], d[2]]
    }
}

/// Observed quantities for one object, as a detector would supply them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectObservation {
    pub keypoints: KeypointSet2D,
    pub height: f64,
    pub direct_depth: f64,
}

/// Error-propagation uncertainties for the geometry estimates, in the order
/// (center, k1/k3, k2/k4).
pub fn geometry_sigmas(
    depths: &GeometryDepths,
    kps: &KeypointSet2D,
    height: f64,
    noise: &NoiseSpec,
) -> [f64; 3] {
    let rel_h = noise.height_m / height;
    // a pixel height is a difference of two noisy coordinates
    let rel_px = |h2d: f64| std::f64::consts::SQRT_2 * noise.keypoint_px / h2d.abs().max(1e-3);
    let center = depths.center * rel_h.hypot(rel_px(kps.pixel_height()));
    let pair = |a: usize, b: usize, z: f64| {
        let px = rel_px(kps.edge_pixel_height(a)).hypot(rel_px(kps.edge_pixel_height(b))) / 2.0;
        z * rel_h.hypot(px)
    };
    [
        center,
        pair(1, 3, depths.diag13),
        pair(2, 4, depths.diag24),
    ]
}

/// Local depth change per pixel of the grid around a grid-unit location.
fn grid_slope(grid: &DepthGrid, ug: f64, vg: f64) -> f64 {
    let s = grid.stride();
    let h = 0.5 / s;
    let read = |du: f64, dv: f64| {
        let u = (ug + du).clamp(0.0, (grid.width() - 1) as f64);
        let v = (vg + dv).clamp(0.0, (grid.height() - 1) as f64);
        grid.interpolate(u, v).unwrap_or(0.0)
    };
    let du = (read(h, 0.0) - read(-h, 0.0)) / (2.0 * h * s);
    let dv = (read(0.0, h) - read(0.0, -h)) / (2.0 * h * s);
    du.hypot(dv)
}

/// Uncertainties for the grounded estimates: keypoint noise pushed through the
/// local slope of the fitted grid, plus the grid's mean absolute fit residual.
pub fn grounded_sigmas(
    grid: &DepthGrid,
    anchor: [i64; 2],
    offsets: &OffsetSet,
    keypoint_px: f64,
    fit_residual: f64,
) -> [f64; 3] {
    let slope = |kp| {
        let [ug, vg] = offsets.refined(anchor, kp);
        grid_slope(grid, ug, vg)
    };
    let px = keypoint_px;
    let b = px * slope(Keypoint::Bottom);
    let pair = |a, c| {
        let sa: f64 = px * slope(Keypoint::Corner(a));
        let sc: f64 = px * slope(Keypoint::Corner(c));
        sa.hypot(sc) / 2.0
    };
    [
        b.hypot(fit_residual),
        pair(1, 3).hypot(fit_residual),
        pair(2, 4).hypot(fit_residual),
    ]
    .map(|s| s.max(1e-6))
}

/// Run every estimator for one observed object against a fitted grid.
pub fn estimate_object(
    cam: &CameraModel,
    grid: &DepthGrid,
    obs: &ObjectObservation,
    noise: &NoiseSpec,
    fit_residual: f64,
) -> Result<(OffsetSet, [i64; 2], [DepthEstimate; 7], f64), ExperimentError> {
    let stride = grid.stride();
    let kps = &obs.keypoints;
    let offsets = compute_offsets(kps, stride)?;
    let anchor = anchor_cell(kps.c2d, stride);

    let geo = geometry_depths(cam.f(), obs.height, kps)?;
    let geo_sigma = geometry_sigmas(&geo, kps, obs.height, noise);
    let gnd: GroundedDepths = two_stage_depths(grid, anchor, &offsets)?;
    let gnd_sigma = grounded_sigmas(grid, anchor, &offsets, noise.keypoint_px, fit_residual);
    let direct_sigma = (noise.direct_depth_rel * obs.direct_depth).max(1e-6);

    let g = geo.as_array();
    let d = gnd.as_array();
    let estimates = [
        DepthEstimate::new(obs.direct_depth, direct_sigma),
        DepthEstimate::new(g[0], geo_sigma[0].max(1e-6)),
        DepthEstimate::new(g[1], geo_sigma[1].max(1e-6)),
        DepthEstimate::new(g[2], geo_sigma[2].max(1e-6)),
        DepthEstimate::new(d[0], gnd_sigma[0]),
        DepthEstimate::new(d[1], gnd_sigma[1]),
        DepthEstimate::new(d[2], gnd_sigma[2]),
    ];

    // Integer-cell read-out at the cell holding the observed bottom center.
    let cell = anchor_cell(kps.b2d, stride);
    let one_stage = one_stage_depth(grid, cell)?;
    Ok((offsets, anchor, estimates, one_stage))
}

/// Samples for every object of a scene, seeded per object.
pub fn scene_samples(scene: &Scene) -> Result<Vec<Vec<GroundSample>>, ExperimentError> {
    let cam = scene.camera();
    scene
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let seed = object_seed(scene.spec.seed, i);
            Ok(grounded_samples(&cam, &o.bx, seed)?.samples)
        })
        .collect()
}

pub fn object_seed(scene_seed: u64, object: usize) -> u64 {
    scene_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(object as u64 + 1)
}

/// A grid fitted to training scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGrid {
    pub grid: DepthGrid,
    /// Mean absolute residual over the training samples.
    pub fit_residual: f64,
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

pub fn train_grid(base_seed: u64, cfg: &ExperimentConfig) -> Result<TrainedGrid, ExperimentError> {
    let mut sets = Vec::new();
    let mut image = [0.0, 0.0];
    for k in 0..cfg.train_scenes {
        let spec = SceneSpec::with_seed(train_seed(base_seed, k));
        image = spec.image_size;
        sets.extend(scene_samples(&generate_scene(&spec)?)?);
    }
    if sets.is_empty() {
        return Err(GridError::NoSamples.into());
    }
    let shape = GridShape::covering(image[0], image[1], cfg.stride)?;
    let refs: Vec<&[GroundSample]> = sets.iter().map(Vec::as_slice).collect();
    let report = fit_grid(&refs, shape, &cfg.fit)?;
    let all: Vec<GroundSample> = sets.concat();
    let residual = report.grid.residuals(&all)?;
    let fit_residual = residual.iter().map(|r| r.abs()).sum::<f64>() / residual.len() as f64;
    Ok(TrainedGrid {
        fit_residual,
        samples: all.len(),
        initial_loss: report.initial_loss,
        final_loss: report.final_loss(),
        iterations: report.history.len(),
        grid: report.grid,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub seed: u64,
    pub objects: Vec<ObjectDepths>,
}

/// Run every estimator on the observed objects of one evaluation scene.
pub fn evaluate_scene(
    seed: u64,
    trained: &TrainedGrid,
    cfg: &ExperimentConfig,
) -> Result<SceneResult, ExperimentError> {
    let spec = SceneSpec {
        noise: cfg.noise,
        ..SceneSpec::with_seed(seed)
    };
    let scene = generate_scene(&spec)?;
    let cam = scene.camera();
    let objects = scene
        .objects
        .iter()
        .enumerate()
        .map(|(object_id, o)| {
            let obs = ObjectObservation {
                keypoints: o.observed.keypoints,
                height: o.observed.height,
                direct_depth: o.observed.direct_depth,
            };
            let (offsets, anchor, est, one_stage) =
                estimate_object(&cam, &trained.grid, &obs, &cfg.noise, trained.fit_residual)?;
            let fused = fuse_depths(&est)?;
            Ok(ObjectDepths {
                object_id,
                z_true: o.bx.location[2],
                anchor,
                offsets,
                direct: est[0],
                geometry: [est[1], est[2], est[3]],
                grounded: [est[4], est[5], est[6]],
                one_stage,
                fused: fused.z,
                fused_sigma: fused.sigma,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(SceneResult { seed, objects })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub trained: TrainedGrid,
    pub scenes: Vec<SceneResult>,
}

/// Train on scenes derived from `base_seed`, evaluate on seeds
/// `base_seed .. base_seed + scenes`.
pub fn run_experiment(
    base_seed: u64,
    scenes: u64,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRun, ExperimentError> {
    let trained = train_grid(base_seed, cfg)?;
    let scenes = (0..scenes)
        .map(|k| evaluate_scene(base_seed.wrapping_add(k), &trained, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentRun { trained, scenes })
}

/// Pooled MPE per estimator over all objects of all scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub objects: usize,
    pub mpe: Vec<(Estimator, f64)>,
}

impl Summary {
    pub fn get(&self, e: Estimator) -> f64 {
        self.mpe
            .iter()
            .find(|(k, _)| *k == e)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "scenes: {}  objects: {}\n{:<10} {:>10}\n",
            self.scenes, self.objects, "estimator", "MPE (%)"
        );
        for (e, v) in &self.mpe {
            out.push_str(&format!("{:<10} {:>10.4}\n", e.name(), 100.0 * v));
        }
        out
    }
}

pub fn summarize(results: &[SceneResult]) -> Result<Summary, ExperimentError> {
    let objects: Vec<&ObjectDepths> = results.iter().flat_map(|r| &r.objects).collect();
    let gts: Vec<f64> = objects.iter().map(|o| o.z_true).collect();
    let mpe = Estimator::ALL
        .iter()
        .map(|&e| {
            let preds: Vec<f64> = objects.iter().map(|o| o.value(e)).collect();
            Ok((e, mpe(&preds, &gts)?))
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    Ok(Summary {
        scenes: results.len(),
        objects: objects.len(),
        mpe,
    })
}

/// Per-object CSV for plotting: true depth, then each estimator's depth.
pub fn objects_csv(results: &[SceneResult]) -> String {
    let mut out = String::from("scene,object,z_true");
    for e in Estimator::ALL {
        out.push(',');
        out.push_str(e.name());
    }
    out.push('\n');
    for r in results {
        for o in &r.objects {
            out.push_str(&format!("{},{},{}", r.seed, o.object_id, o.z_true));
            for e in Estimator::ALL {
                out.push_str(&format!(",{}", o.value(e)));
            }
            out.push('\n');
        }
    }
    out
}
