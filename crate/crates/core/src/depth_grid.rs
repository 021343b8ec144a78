//! Dense grounded-depth grid: bilinear read-out, depth-align L1 loss with its
//! analytic (sub)gradient, a deterministic fitter and the DGRD binary format.
//!
//! Grid node `(row, col)` sits at pixel `(col * stride, row * stride)`. A
//! pixel `(u, v)` is addressed in grid units as `(u / stride, v / stride)`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::sampler::GroundSample;

pub const DGRD_MAGIC: &[u8; 4] = b"DGRD";
pub const DGRD_HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must be at least 2x2 with a positive finite stride (got {height}x{width}, stride {stride})")]
    InvalidShape {
        height: usize,
        width: usize,
        stride: f64,
    },
    #[error("expected {expected} grid values, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("grid value at index {0} is not finite")]
    NonFiniteValue(usize),
    #[error("point ({u}, {v}) lies outside the grid")]
    OutOfBounds { u: f64, v: f64 },
    #[error("{} sample(s) fall outside the grid, first indices {:?}", .0.len(), first_few(.0))]
    SamplesOutOfBounds(Vec<usize>),
    #[error("no samples to fit")]
    NoSamples,
    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("bad magic, expected DGRD")]
    BadMagic,
    #[error("grid stream has {found} bytes, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

fn first_few(indices: &[usize]) -> &[usize] {
    &indices[..indices.len().min(8)]
}

impl From<std::io::Error> for GridError {
    fn from(e: std::io::Error) -> Self {
        GridError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
}

impl GridShape {
    pub fn new(height: usize, width: usize, stride: f64) -> Result<Self, GridError> {
        if height < 2 || width < 2 || !(stride > 0.0 && stride.is_finite()) {
            return Err(GridError::InvalidShape {
                height,
                width,
                stride,
            });
        }
        Ok(Self {
            height,
            width,
            stride,
        })
    }

    /// Smallest grid whose nodes cover an image of the given pixel size.
    pub fn covering(image_width: f64, image_height: f64, stride: f64) -> Result<Self, GridError> {
        let cells = |extent: f64| (extent / stride).ceil() as usize + 1;
        Self::new(cells(image_height).max(2), cells(image_width).max(2), stride)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An H x W field of depths, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    shape: GridShape,
    values: Vec<f64>,
}

/// The four nodes surrounding a point and their bilinear weights, ordered
/// clockwise from the upper-left node: (c0, r0), (c0+1, r0), (c0+1, r0+1),
/// (c0, r0+1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub indices: [usize; 4],
    pub weights: [f64; 4],
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights[0] * values[self.indices[0]]
            + self.weights[1] * values[self.indices[1]]
            + self.weights[2] * values[self.indices[2]]
            + self.weights[3] * values[self.indices[3]]
    }
}

/// Lower node index and the (far, near) weights along one axis.
///
/// When the coordinate is an integer the upper node is taken as `floor + 1`,
/// giving weight 1 to the lower node. On the last node the cell to its left is
/// used instead, with weight 1 on its right node.
fn axis_weights(x: f64, nodes: usize) -> (usize, f64, f64) {
    let lower = x.floor();
    let mut i0 = lower as usize;
    if i0 + 1 >= nodes {
        i0 = nodes - 2;
    }
    let frac = x - i0 as f64; // distance from the lower node
    let rest = (i0 + 1) as f64 - x; // distance to the upper node
    (i0, frac, rest)
}

impl DepthGrid {
    pub fn filled(shape: GridShape, value: f64) -> Result<Self, GridError> {
        Self::from_values(shape, vec![value; shape.len()])
    }

    pub fn from_values(shape: GridShape, values: Vec<f64>) -> Result<Self, GridError> {
        let shape = GridShape::new(shape.height, shape.width, shape.stride)?;
        if values.len() != shape.len() {
            return Err(GridError::ValueCount {
                expected: shape.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue(i));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn stride(&self) -> f64 {
        self.shape.stride
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        (row < self.height() && col < self.width()).then(|| self.values[row * self.width() + col])
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width() + col
    }

    /// Pixel coordinates to grid units.
    pub fn to_grid(&self, u: f64, v: f64) -> (f64, f64) {
        (u / self.stride(), v / self.stride())
    }

    pub fn contains(&self, ug: f64, vg: f64) -> bool {
        ug >= 0.0
            && vg >= 0.0
            && ug <= (self.width() - 1) as f64
            && vg <= (self.height() - 1) as f64
    }

    pub fn stencil(&self, ug: f64, vg: f64) -> Result<Stencil, GridError> {
        if !self.contains(ug, vg) {
            return Err(GridError::OutOfBounds { u: ug, v: vg });
        }
        let (c0, l1, l2) = axis_weights(ug, self.width());
        let (r0, l3, l4) = axis_weights(vg, self.height());
        let w = self.width();
        let g1 = r0 * w + c0;
        Ok(Stencil {
            indices: [g1, g1 + 1, g1 + w + 1, g1 + w],
            weights: [l2 * l4, l1 * l4, l1 * l3, l2 * l3],
        })
    }

    /// Bilinear read-out at grid coordinates `(ug, vg)`.
    pub fn interpolate(&self, ug: f64, vg: f64) -> Result<f64, GridError> {
        Ok(self.stencil(ug, vg)?.apply(&self.values))
    }

    /// Bilinear read-out at pixel coordinates.
    pub fn interpolate_pixel(&self, u: f64, v: f64) -> Result<f64, GridError> {
        let (ug, vg) = self.to_grid(u, v);
        self.interpolate(ug, vg)
    }

    /// Stencils for pixel-space samples; reports every out-of-grid index.
    pub fn stencils_for(&self, samples: &[GroundSample]) -> Result<Vec<Stencil>, GridError> {
        let mut bad = Vec::new();
        let mut out = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let (ug, vg) = self.to_grid(s.u, s.v);
            match self.stencil(ug, vg) {
                Ok(st) => out.push(st),
                Err(_) => bad.push(i),
            }
        }
        if bad.is_empty() {
            Ok(out)
        } else {
            Err(GridError::SamplesOutOfBounds(bad))
        }
    }

    /// Residuals `pred_i - z_i` for every sample.
    pub fn residuals(&self, samples: &[GroundSample]) -> Result<Vec<f64>, GridError> {
        let stencils = self.stencils_for(samples)?;
        Ok(stencils
            .iter()
            .zip(samples)
            .map(|(st, s)| st.apply(&self.values) - s.z)
            .collect())
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.index(row, col);
        self.values[i] = value;
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Depth-align loss and its gradient with respect to every grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignLossReport {
    /// Mean absolute depth error over the samples.
    pub loss: f64,
    /// `d loss / d value`, row-major like the grid.
    pub grad: Vec<f64>,
}

pub fn depth_align_loss(
    grid: &DepthGrid,
    samples: &[GroundSample],
) -> Result<AlignLossReport, GridError> {
    if samples.is_empty() {
        return Err(GridError::NoSamples);
    }
    let stencils = grid.stencils_for(samples)?;
    let mut grad = vec![0.0; grid.values.len()];
    let loss = accumulate_l1(&grid.values, samples, &stencils, &mut grad);
    Ok(AlignLossReport { loss, grad })
}

/// Mean L1 loss; adds the subgradient into `grad` (subgradient 0 at a tie).
fn accumulate_l1(
    values: &[f64],
    samples: &[GroundSample],
    stencils: &[Stencil],
    grad: &mut [f64],
) -> f64 {
    let inv_n = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    for (st, s) in stencils.iter().zip(samples) {
        let residual = st.apply(values) - s.z;
        total += residual.abs();
        let sign = if residual > 0.0 {
            inv_n
        } else if residual < 0.0 {
            -inv_n
        } else {
            0.0
        };
        if sign != 0.0 {
            for k in 0..4 {
                grad[st.indices[k]] += sign * st.weights[k];
            }
        }
    }
    total * inv_n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    /// Initial per-cell step in meters.
    pub step: f64,
    /// Upper bound for the adaptive per-cell step.
    pub max_step: f64,
    /// Constant initial value; `None` uses the mean sample depth.
    pub init: Option<f64>,
    /// Weight of the quadratic 4-neighbour smoothness penalty (0 = off).
    pub smoothness: f64,
    /// Weight of the squared second-difference penalty along rows and columns
    /// (0 = off). Unlike `smoothness` it leaves planar fields unpenalized, so
    /// weakly supported cells extrapolate linearly.
    pub curvature: f64,
    /// The fit stops once every per-cell step is below this.
    pub min_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step: 0.05,
            max_step: 1.0,
            init: None,
            smoothness: 0.0,
            curvature: 0.0,
            min_step: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub grid: DepthGrid,
    /// Objective before the first iteration.
    pub initial_loss: f64,
    /// Objective after each completed iteration; non-increasing.
    pub history: Vec<f64>,
    /// Set when the run ended because every step collapsed below `min_step`.
    pub converged: bool,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.history.last().copied().unwrap_or(self.initial_loss)
    }

    /// `iter,loss` CSV, row 0 being the initial objective.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,loss\n");
        out.push_str(&format!("0,{}\n", self.initial_loss));
        for (i, l) in self.history.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

fn smoothness_term(values: &[f64], shape: GridShape, weight: f64, grad: &mut [f64]) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    let mut pair = |a: usize, b: usize| {
        let d = values[a] - values[b];
        total += d * d;
        grad[a] += 2.0 * weight * d;
        grad[b] -= 2.0 * weight * d;
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                pair(i, i + 1);
            }
            if r + 1 < h {
                pair(i, i + w);
            }
        }
    }
    weight * total
}

fn curvature_term(values: &[f64], shape: GridShape, weight: f64, grad: &mut [f64]) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    let mut triple = |a: usize, b: usize, c: usize| {
        let d = values[a] - 2.0 * values[b] + values[c];
        total += d * d;
        let g = 2.0 * weight * d;
        grad[a] += g;
        grad[b] -= 2.0 * g;
        grad[c] += g;
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 2 < w {
                triple(i, i + 1, i + 2);
            }
            if r + 2 < h {
                triple(i, i + w, i + 2 * w);
            }
        }
    }
    weight * total
}

/// Fit a grid to one or more sample sets by minimizing the depth-align loss.
///
/// Each iteration proposes a sign-of-gradient move with a per-cell adaptive
/// step (grown by 1.2 while the gradient sign persists, halved when it flips).
/// A proposal that raises the objective is rejected and the steps of cells
/// whose gradient sign flipped in it are halved (all steps when none flipped),
/// so the recorded objective never increases. Cells that no sample touches
/// keep their initial value unless a smoothness or curvature penalty is enabled.
pub fn fit_grid(
    sets: &[&[GroundSample]],
    shape: GridShape,
    config: &FitConfig,
) -> Result<FitReport, GridError> {
    let samples: Vec<GroundSample> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    if samples.is_empty() {
        return Err(GridError::NoSamples);
    }
    let init = config
        .init
        .unwrap_or_else(|| samples.iter().map(|s| s.z).sum::<f64>() / samples.len() as f64);
    fit_samples(&samples, DepthGrid::filled(shape, init)?, config)
}

/// [`fit_grid`] starting from an existing grid instead of a constant one;
/// `config.init` is ignored.
pub fn fit_grid_from(
    sets: &[&[GroundSample]],
    start: DepthGrid,
    config: &FitConfig,
) -> Result<FitReport, GridError> {
    let samples: Vec<GroundSample> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    if samples.is_empty() {
        return Err(GridError::NoSamples);
    }
    fit_samples(&samples, start, config)
}

fn fit_samples(
    samples: &[GroundSample],
    mut grid: DepthGrid,
    config: &FitConfig,
) -> Result<FitReport, GridError> {
    let shape = grid.shape();
    let stencils = grid.stencils_for(samples)?;

    let n = grid.values.len();
    let objective = |values: &[f64], grad: &mut [f64]| {
        grad.iter_mut().for_each(|g| *g = 0.0);
        accumulate_l1(values, samples, &stencils, grad)
            + smoothness_term(values, shape, config.smoothness, grad)
            + curvature_term(values, shape, config.curvature, grad)
    };

    let mut grad = vec![0.0; n];
    let mut current = objective(&grid.values, &mut grad);
    if !current.is_finite() {
        return Err(GridError::Diverged { iteration: 0 });
    }
    let initial_loss = current;
    // Cells the objective depends on; the stopping rule only looks at these.
    let mut active = vec![config.smoothness != 0.0 || config.curvature != 0.0; n];
    for st in &stencils {
        for k in 0..4 {
            if st.weights[k] != 0.0 {
                active[st.indices[k]] = true;
            }
        }
    }
    let mut steps = vec![config.step; n];
    let mut prev_sign = vec![0i8; n];
    let mut trial = grid.values.clone();
    let mut trial_grad = vec![0.0; n];
    let mut history = Vec::with_capacity(config.iterations);
    let mut converged = false;

    for iteration in 1..=config.iterations {
        for i in 0..n {
            let sign = sign_of(grad[i]);
            if sign != 0 && prev_sign[i] != 0 {
                steps[i] = if sign == prev_sign[i] {
                    (steps[i] * 1.2).min(config.max_step)
                } else {
                    steps[i] * 0.5
                };
            }
            trial[i] = grid.values[i] - f64::from(sign) * steps[i];
        }
        let candidate = objective(&trial, &mut trial_grad);
        if !candidate.is_finite() {
            return Err(GridError::Diverged { iteration });
        }
        if candidate <= current {
            for i in 0..n {
                prev_sign[i] = sign_of(grad[i]);
            }
            std::mem::swap(&mut grid.values, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            current = candidate;
        } else {
            // Halve the cells that overshot (gradient sign flipped in the
            // trial); if none did, the increase came from coupling, so halve all.
            let mut any = false;
            for i in 0..n {
                if sign_of(grad[i]) * sign_of(trial_grad[i]) < 0 {
                    steps[i] *= 0.5;
                    prev_sign[i] = 0;
                    any = true;
                }
            }
            if !any {
                steps.iter_mut().for_each(|s| *s *= 0.5);
                prev_sign.iter_mut().for_each(|s| *s = 0);
            }
        }
        history.push(current);
        if steps
            .iter()
            .zip(&active)
            .all(|(s, a)| !*a || *s < config.min_step)
        {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        grid,
        initial_loss,
        history,
        converged,
    })
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Encode in the DGRD layout: magic, u32 H, u32 W, f32 stride, then H*W f32
/// values row-major, all little-endian.
pub fn encode_grid(grid: &DepthGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(DGRD_HEADER_LEN + 4 * grid.values.len());
    out.extend_from_slice(DGRD_MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.stride() as f32).to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<DepthGrid, GridError> {
    if bytes.len() < DGRD_HEADER_LEN {
        return Err(GridError::Length {
            expected: DGRD_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != DGRD_MAGIC {
        return Err(GridError::BadMagic);
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let height = u32::from_le_bytes(word(4)) as usize;
    let width = u32::from_le_bytes(word(8)) as usize;
    let stride = f32::from_le_bytes(word(12)) as f64;
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(DGRD_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(GridError::Length {
            expected: expected.unwrap_or(usize::MAX),
            found: bytes.len(),
        });
    }
    let shape = GridShape::new(height, width, stride)?;
    let values = bytes[DGRD_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DepthGrid::from_values(shape, values)
}

pub fn write_grid<W: Write>(grid: &DepthGrid, mut out: W) -> Result<(), GridError> {
    out.write_all(&encode_grid(grid))?;
    Ok(())
}

pub fn read_grid<R: Read>(mut input: R) -> Result<DepthGrid, GridError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_grid(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, values: Vec<f64>) -> DepthGrid {
        DepthGrid::from_values(GridShape::new(h, w, 4.0).unwrap(), values).unwrap()
    }

    #[test]
    fn node_identity() {
        let mut g = DepthGrid::filled(GridShape::new(30, 30, 4.0).unwrap(), 0.0).unwrap();
        g.set(20, 10, 2.0);
        assert_eq!(g.interpolate(10.0, 20.0).unwrap(), 2.0);
        let st = g.stencil(10.0, 20.0).unwrap();
        assert_eq!(st.weights, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cell_examples() {
        // g1..g4 clockwise from upper-left
        let g = grid(2, 2, vec![2.0, 4.0, 8.0, 6.0]);
        assert_eq!(g.interpolate(0.5, 0.5).unwrap(), 5.0);
        assert_eq!(g.interpolate(0.25, 0.0).unwrap(), 2.5);
    }

    #[test]
    fn last_node_is_reachable() {
        let g = grid(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(g.interpolate(2.0, 1.0).unwrap(), 6.0);
        assert_eq!(g.interpolate(2.0, 0.0).unwrap(), 3.0);
        let st = g.stencil(2.0, 1.0).unwrap();
        assert_eq!(st.weights.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn out_of_bounds() {
        let g = grid(2, 2, vec![0.0; 4]);
        assert!(matches!(g.interpolate(1.0001, 0.0), Err(GridError::OutOfBounds { .. })));
        assert!(g.interpolate(-0.1, 0.0).is_err());
        assert!(g.interpolate(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn loss_at_node() {
        let mut g = DepthGrid::filled(GridShape::new(4, 4, 2.0).unwrap(), 0.0).unwrap();
        g.set(1, 2, 5.0);
        let s = [GroundSample { u: 4.0, v: 2.0, z: 3.0 }];
        let rep = depth_align_loss(&g, &s).unwrap();
        assert_eq!(rep.loss, 2.0);
        let mut expected = vec![0.0; 16];
        expected[g.index(1, 2)] = 1.0;
        assert_eq!(rep.grad, expected);
    }

    #[test]
    fn loss_zero_on_exact_samples() {
        let g = grid(3, 3, vec![1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 4.0, 5.0]);
        let samples: Vec<GroundSample> = [(1.0, 1.0), (3.3, 6.1), (7.9, 0.2)]
            .iter()
            .map(|&(u, v)| GroundSample {
                u,
                v,
                z: g.interpolate_pixel(u, v).unwrap(),
            })
            .collect();
        let rep = depth_align_loss(&g, &samples).unwrap();
        assert_eq!(rep.loss, 0.0);
        assert!(rep.grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_lists_out_of_grid_samples() {
        let g = grid(2, 2, vec![0.0; 4]);
        let s = [
            GroundSample { u: 1.0, v: 1.0, z: 1.0 },
            GroundSample { u: 9.0, v: 1.0, z: 1.0 },
            GroundSample { u: 1.0, v: -1.0, z: 1.0 },
        ];
        assert_eq!(
            depth_align_loss(&g, &s).unwrap_err(),
            GridError::SamplesOutOfBounds(vec![1, 2])
        );
    }

    #[test]
    fn fit_zero_iterations_returns_init() {
        let s = [GroundSample { u: 1.0, v: 1.0, z: 4.0 }];
        let cfg = FitConfig {
            iterations: 0,
            init: Some(1.5),
            ..FitConfig::default()
        };
        let rep = fit_grid(&[&s], GridShape::new(3, 3, 1.0).unwrap(), &cfg).unwrap();
        assert!(rep.grid.values().iter().all(|v| *v == 1.5));
        assert!(rep.history.is_empty());
    }

    #[test]
    fn fit_is_monotone_and_converges_on_constant_field() {
        let samples: Vec<GroundSample> = (0..200)
            .map(|i| GroundSample {
                u: 0.37 * i as f64 % 19.0,
                v: 0.61 * i as f64 % 11.0,
                z: 10.0,
            })
            .collect();
        let cfg = FitConfig {
            init: Some(0.0),
            ..FitConfig::default()
        };
        let rep = fit_grid(&[&samples], GridShape::new(4, 6, 4.0).unwrap(), &cfg).unwrap();
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.final_loss() < 1e-2);
    }

    #[test]
    fn smoothness_fills_untouched_cells() {
        let s = [GroundSample { u: 0.0, v: 0.0, z: 3.0 }];
        let cfg = FitConfig {
            init: Some(0.0),
            smoothness: 0.1,
            ..FitConfig::default()
        };
        let rep = fit_grid(&[&s], GridShape::new(3, 3, 1.0).unwrap(), &cfg).unwrap();
        assert!(rep.grid.get(2, 2).unwrap() > 0.0);
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn curvature_extrapolates_linearly() {
        // samples on z = 2 + u cover only the first two columns
        let s: Vec<GroundSample> = (0..20)
            .map(|k| {
                let u = 0.05 * k as f64;
                GroundSample { u, v: 0.5, z: 2.0 + u }
            })
            .collect();
        let cfg = FitConfig {
            curvature: 1e-4,
            iterations: 5000,
            ..FitConfig::default()
        };
        let rep = fit_grid(&[&s], GridShape::new(2, 4, 1.0).unwrap(), &cfg).unwrap();
        for c in 0..4 {
            let z = rep.grid.get(0, c).unwrap();
            assert!((z - (2.0 + c as f64)).abs() < 1e-2, "col {c}: {z}");
        }
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dgrd_round_trip_and_errors() {
        let g = grid(2, 2, vec![1.25, -3.5, 1e-3, 42.0]);
        let bytes = encode_grid(&g);
        assert_eq!(bytes.len(), 16 + 4 * 4);
        assert_eq!(&bytes[..4], b"DGRD");
        assert_eq!(decode_grid(&bytes).unwrap().values()[2], 1e-3f32 as f64);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_grid(&bad).unwrap_err(), GridError::BadMagic);
        assert!(matches!(
            decode_grid(&bytes[..bytes.len() - 1]),
            Err(GridError::Length { expected: 32, found: 31 })
        ));
        assert!(matches!(decode_grid(b"DG"), Err(GridError::Length { .. })));
    }
}
