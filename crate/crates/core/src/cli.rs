//! The `gpk` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, ObjectBox3D};
use crate::depth_grid::{decode_grid, encode_grid, fit_grid, FitConfig, GridShape};
use crate::evaluation::{ap_r40, bev_iou, iou_3d, mpe, ScoredBox};
use crate::experiment::{
    estimate_object, objects_csv, run_experiment, summarize, ExperimentConfig, ObjectObservation,
};
use crate::inference::{fuse_depths, DepthEstimate, KeypointSet2D, OffsetSet, NUM_KEYPOINTS};
use crate::kitti_io::{parse_calib, parse_labels, LabelRecord};
use crate::sampler::{grounded_samples, read_samples_csv, seeded_rng, write_samples_csv};
use crate::synth::{generate_scene, NoiseSpec, SceneSpec};

pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "GPK_SEED";

#[derive(Debug, Parser)]
#[command(name = "gpk", version, about = "Ground-plane depth priors for monocular 3D detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write grounded depth samples (one CSV per object) for a label file.
    Sample(SampleArgs),
    /// Fit a depth grid to sample CSVs.
    Fit(FitArgs),
    /// Run the depth estimators for every labelled object.
    Infer(InferArgs),
    /// Depth error and AP metrics for predictions against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Full synthetic pipeline with an estimator comparison table.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Calibration matrix used as the camera.
    #[arg(long, default_value = "P2")]
    pub camera: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory of sample CSVs (every `*.csv` below it is used).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub stride: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    /// Constant initial depth; defaults to the mean sample depth.
    #[arg(long)]
    pub init: Option<f64>,
    /// Weight of the quadratic neighbour smoothness penalty.
    #[arg(long, default_value_t = 0.0)]
    pub smoothness: f64,
    /// Weight of the squared second-difference penalty.
    #[arg(long, default_value_t = 0.0)]
    pub curvature: f64,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct NoiseArgs {
    /// Keypoint noise std dev, pixels.
    #[arg(long, default_value_t = 0.5)]
    pub kp_noise: f64,
    /// Height noise std dev, meters.
    #[arg(long, default_value_t = 0.05)]
    pub height_noise: f64,
    /// Direct depth noise std dev, relative.
    #[arg(long, default_value_t = 0.05)]
    pub depth_noise: f64,
}

impl NoiseArgs {
    fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            keypoint_px: self.kp_noise,
            height_m: self.height_noise,
            direct_depth_rel: self.depth_noise,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long, default_value = "P2")]
    pub camera: String,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Mean absolute fit residual of the grid, meters (enters the grounded sigmas).
    #[arg(long, default_value_t = 0.05)]
    pub fit_residual: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// KITTI label file, JSON-lines predictions, or a directory of either.
    #[arg(long)]
    pub preds: PathBuf,
    /// KITTI label file or directory.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long = "iou-3d", default_value_t = 0.7)]
    pub iou_3d: f64,
    #[arg(long = "iou-bev", default_value_t = 0.7)]
    pub iou_bev: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec JSON; missing fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub scenes: u64,
    /// Scenes whose grounded samples supervise the grid.
    #[arg(long, default_value_t = 40)]
    pub train_scenes: u64,
    #[arg(long, default_value_t = 4.0)]
    pub stride: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Seed from the flag, else `GPK_SEED`, else [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => sample(a),
        Command::Fit(a) => fit(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Demo(a) => demo(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_camera(calib: &Path, name: &str) -> Result<CameraModel> {
    let rec = parse_calib(&read_text(calib)?).with_context(|| format!("parsing {}", calib.display()))?;
    rec.camera(name)
        .with_context(|| format!("camera {name} in {}", calib.display()))
}

fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    parse_labels(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sample(a: SampleArgs) -> Result<()> {
    require_file(&a.calib)?;
    require_file(&a.labels)?;
    let seed = resolve_seed(a.seed)?;
    let cam = load_camera(&a.calib, &a.camera)?;
    let labels = load_labels(&a.labels)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, label) in labels.iter().enumerate() {
        if label.is_dont_care() {
            continue;
        }
        let set = grounded_samples(&cam, &label.to_box(), seed.wrapping_add(i as u64))
            .with_context(|| format!("object {i}"))?;
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &set.samples)?;
        write_file(&a.out.join(format!("object_{i:04}.csv")), buf)?;
    }
    Ok(())
}

/// Every `*.csv` under `dir`, subdirectories included, in path order.
fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("sample directory {} does not exist", dir.display());
    }
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn fit(a: FitArgs) -> Result<()> {
    let files = csv_files(&a.samples)?;
    if files.is_empty() {
        bail!("no sample CSVs in {}", a.samples.display());
    }
    let shape = GridShape::new(a.height, a.width, a.stride)?;
    let mut sets = Vec::new();
    for f in &files {
        let file = fs::File::open(f).with_context(|| format!("opening {}", f.display()))?;
        sets.push(read_samples_csv(file).with_context(|| format!("reading {}", f.display()))?);
    }
    let cfg = FitConfig {
        iterations: a.iterations,
        step: a.step,
        init: a.init,
        smoothness: a.smoothness,
        curvature: a.curvature,
        ..FitConfig::default()
    };
    let refs: Vec<&[_]> = sets.iter().map(Vec::as_slice).collect();
    let report = fit_grid(&refs, shape, &cfg)?;
    write_file(&a.out, encode_grid(&report.grid))?;
    let loss_path = a.loss.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_file(&loss_path, report.history_csv())?;
    println!(
        "fitted {}x{} grid on {} samples: loss {:.6} -> {:.6} after {} iterations",
        a.height,
        a.width,
        refs.iter().map(|s| s.len()).sum::<usize>(),
        report.initial_loss,
        report.final_loss(),
        report.history.len()
    );
    Ok(())
}

/// One line of the prediction interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub object_id: usize,
    pub class: String,
    pub anchor: [i64; 2],
    pub offsets: Vec<[f64; 2]>,
    pub direct: DepthEstimate,
    pub geometry: [DepthEstimate; 3],
    pub grounded: [DepthEstimate; 3],
    pub one_stage: f64,
    pub fused_depth: f64,
    pub fused_sigma: f64,
    pub gt_depth: Option<f64>,
    /// Predicted box: ground-truth size and yaw, re-placed at the fused depth.
    #[serde(rename = "box")]
    pub bx: ObjectBox3D,
    pub score: f64,
}

fn infer(a: InferArgs) -> Result<()> {
    require_file(&a.grid)?;
    require_file(&a.labels)?;
    require_file(&a.calib)?;
    let seed = resolve_seed(a.seed)?;
    let cam = load_camera(&a.calib, &a.camera)?;
    let labels = load_labels(&a.labels)?;
    let bytes = fs::read(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let grid = decode_grid(&bytes).with_context(|| format!("decoding {}", a.grid.display()))?;
    let noise = a.noise.spec();
    let mut rng = seeded_rng(seed);
    let mut gauss = |std: f64| -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        n * std
    };

    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        if label.is_dont_care() {
            continue;
        }
        let bx = label.to_box();
        let truth = KeypointSet2D::from_box(&cam, &bx).with_context(|| format!("object {i}"))?;
        let mut pts = truth.points();
        for p in pts.iter_mut().take(NUM_KEYPOINTS) {
            p[0] += gauss(noise.keypoint_px);
            p[1] += gauss(noise.keypoint_px);
        }
        let obs = ObjectObservation {
            keypoints: KeypointSet2D::from_points(&pts),
            height: bx.height() + gauss(noise.height_m),
            direct_depth: bx.location[2] * (1.0 + gauss(noise.direct_depth_rel)),
        };
        let (offsets, anchor, est, one_stage) =
            estimate_object(&cam, &grid, &obs, &noise, a.fit_residual)
                .with_context(|| format!("object {i}"))?;
        let fused = fuse_depths(&est)?;
        let b2d = obs.keypoints.b2d;
        let location = cam.backproject(b2d[0], b2d[1], fused.z);
        let rec = PredictionRecord {
            object_id: i,
            class: label.class.clone(),
            anchor,
            offsets: offsets_vec(&offsets),
            direct: est[0],
            geometry: [est[1], est[2], est[3]],
            grounded: [est[4], est[5], est[6]],
            one_stage,
            fused_depth: fused.z,
            fused_sigma: fused.sigma,
            gt_depth: Some(bx.location[2]),
            bx: ObjectBox3D::new([location.x, location.y, location.z], bx.dims, bx.yaw),
            score: label.score.unwrap_or(1.0),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_file(&a.out, out)
}

fn offsets_vec(o: &OffsetSet) -> Vec<[f64; 2]> {
    o.offsets.to_vec()
}

/// A prediction reduced to what evaluation needs.
struct EvalPrediction {
    bx: ObjectBox3D,
    score: f64,
    /// Index into the frame's scored ground truth, when known.
    gt_index: Option<usize>,
}

fn load_predictions(path: &Path, gts: &[LabelRecord]) -> Result<Vec<EvalPrediction>> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|x| x == "jsonl") {
        // object ids index the full label list; map them onto the kept boxes
        let kept: Vec<usize> = (0..gts.len()).filter(|i| !gts[*i].is_dont_care()).collect();
        let mut preds = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord = serde_json::from_str(line)
                .with_context(|| format!("{} line {}", path.display(), n + 1))?;
            preds.push(EvalPrediction {
                bx: rec.bx,
                score: rec.score,
                gt_index: kept.iter().position(|i| *i == rec.object_id),
            });
        }
        Ok(preds)
    } else {
        let labels =
            parse_labels(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(labels
            .iter()
            .filter(|l| !l.is_dont_care())
            .map(|l| EvalPrediction {
                bx: l.to_box(),
                score: l.score.unwrap_or(1.0),
                gt_index: None,
            })
            .collect())
    }
}

/// Depth pairs: explicit ids when present, otherwise greedy association by
/// BEV overlap in descending score order.
fn depth_pairs(preds: &[EvalPrediction], gts: &[ObjectBox3D]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].score.total_cmp(&preds[i].score));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for i in order {
        let p = &preds[i];
        let idx = match p.gt_index {
            Some(g) if g < gts.len() && !taken[g] => Some(g),
            Some(_) => None,
            None => gts
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, b)| (g, bev_iou(&p.bx, b)))
                .filter(|(_, iou)| *iou > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(g, _)| g),
        };
        if let Some(g) = idx {
            taken[g] = true;
            pairs.push((p.bx.location[2], gts[g].location[2]));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpe: Option<f64>,
    pub ap_3d: f64,
    pub ap_bev: f64,
    pub iou_3d_threshold: f64,
    pub iou_bev_threshold: f64,
    pub frames: usize,
    pub num_gt: usize,
    pub num_pred: usize,
    pub depth_pairs: usize,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mpe = self
            .mpe
            .map(|m| format!("{:.4}", 100.0 * m))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "frames {}  gt {}  pred {}  depth pairs {}\n\
             MPE (%)          {mpe}\n\
             AP_3D|R40 @{:.2}  {:.4}\n\
             AP_BEV|R40 @{:.2} {:.4}\n",
            self.frames,
            self.num_gt,
            self.num_pred,
            self.depth_pairs,
            self.iou_3d_threshold,
            100.0 * self.ap_3d,
            self.iou_bev_threshold,
            100.0 * self.ap_bev
        )
    }
}

fn frame_pairs(preds: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if gt.is_dir() {
        if !preds.is_dir() {
            bail!("--gt is a directory, so --preds must be one too");
        }
        let mut gts: Vec<PathBuf> = fs::read_dir(gt)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        gts.sort();
        let mut out = Vec::new();
        for g in gts {
            let stem = g.file_stem().unwrap_or_default();
            let txt = preds.join(stem).with_extension("txt");
            let jsonl = preds.join(stem).with_extension("jsonl");
            let p = if jsonl.is_file() { jsonl } else { txt };
            out.push((p, g));
        }
        Ok(out)
    } else {
        require_file(gt)?;
        require_file(preds)?;
        Ok(vec![(preds.to_path_buf(), gt.to_path_buf())])
    }
}

pub fn evaluate_paths(preds: &Path, gt: &Path, iou_3d_thr: f64, iou_bev_thr: f64) -> Result<EvalReport> {
    let frames = frame_pairs(preds, gt)?;
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    let mut pairs = Vec::new();
    for (p, g) in &frames {
        let labels = load_labels(g)?;
        let boxes: Vec<ObjectBox3D> = labels
            .iter()
            .filter(|l| !l.is_dont_care())
            .map(LabelRecord::to_box)
            .collect();
        let frame_preds = if p.is_file() {
            load_predictions(p, &labels)?
        } else {
            Vec::new()
        };
        pairs.extend(depth_pairs(&frame_preds, &boxes));
        dets.push(
            frame_preds
                .iter()
                .map(|e| ScoredBox {
                    bx: e.bx,
                    score: e.score,
                })
                .collect::<Vec<_>>(),
        );
        gts.push(boxes);
    }
    let (pz, gz): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(EvalReport {
        mpe: if pz.is_empty() { None } else { Some(mpe(&pz, &gz)?) },
        ap_3d: ap_r40(&dets, &gts, iou_3d, iou_3d_thr),
        ap_bev: ap_r40(&dets, &gts, bev_iou, iou_bev_thr),
        iou_3d_threshold: iou_3d_thr,
        iou_bev_threshold: iou_bev_thr,
        frames: frames.len(),
        num_gt: gts.iter().map(Vec::len).sum(),
        num_pred: dets.iter().map(Vec::len).sum(),
        depth_pairs: pairs.len(),
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    for thr in [a.iou_3d, a.iou_bev] {
        if !(thr > 0.0 && thr < 1.0) {
            bail!("IoU thresholds must lie in (0, 1), got {thr}");
        }
    }
    let report = evaluate_paths(&a.preds, &a.gt, a.iou_3d, a.iou_bev)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&a.out, json)?;
    print!("{}", report.table());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p)?;
            serde_json::from_str::<SceneSpec>(&read_text(p)?)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    if a.seed.is_some() || a.spec.is_none() {
        spec.seed = resolve_seed(a.seed)?;
    }
    let scene = generate_scene(&spec)?;
    scene.write_to(&a.out)?;
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if a.scenes == 0 {
        bail!("--scenes must be at least 1");
    }
    let cfg = ExperimentConfig {
        stride: a.stride,
        noise: a.noise.spec(),
        train_scenes: a.train_scenes,
        ..ExperimentConfig::default()
    };
    let run = run_experiment(seed, a.scenes, &cfg)?;
    let summary = summarize(&run.scenes)?;
    let results = run.scenes;
    let table = summary.table();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("summary.txt"), &table)?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&a.out.join("summary.json"), json)?;
    write_file(&a.out.join("depths.csv"), objects_csv(&results))?;
    print!("{table}");
    Ok(())
}
