//! Depth error and detection metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{signed_polygon_area, ObjectBox3D};

pub const RECALL_POSITIONS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions vs {gts} ground truths")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("no values")]
    Empty,
    #[error("ground truth {0} is zero")]
    ZeroGroundTruth(usize),
}

/// Mean absolute percentage error, as a fraction: `mean(|(p - g) / g|)`.
pub fn mpe(preds: &[f64], gts: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if *g == 0.0 {
            return Err(MetricError::ZeroGroundTruth(i));
        }
        total += ((p - g) / g).abs();
    }
    Ok(total / preds.len() as f64)
}

/// Clip `subject` against the convex, counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Footprint intersection area of two boxes in bird's-eye view.
pub fn bev_intersection_area(a: &ObjectBox3D, b: &ObjectBox3D) -> f64 {
    let clipped = clip_convex(&a.bev_polygon(), &b.bev_polygon());
    signed_polygon_area(&clipped).abs()
}

pub fn bev_iou(a: &ObjectBox3D, b: &ObjectBox3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let area_a = a.length() * a.width();
    let area_b = b.length() * b.width();
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU for y-down boxes whose location is the bottom-face center, so each
/// box spans `[y - h, y]` vertically.
pub fn iou_3d(a: &ObjectBox3D, b: &ObjectBox3D) -> f64 {
    let (a_top, a_bot) = a.y_interval();
    let (b_top, b_bot) = b.y_interval();
    let overlap = (a_bot.min(b_bot) - a_top.max(b_top)).max(0.0);
    if overlap == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bx: ObjectBox3D,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRCurvePoint {
    pub recall: f64,
    pub precision: f64,
}

/// Greedy per-frame matching: detections in descending score order take the
/// unmatched ground truth with the highest IoU, and count as true positives
/// when that IoU reaches `threshold`. Returns `(score, is_tp)` per detection.
pub fn match_frame<F>(
    detections: &[ScoredBox],
    gts: &[ObjectBox3D],
    iou_fn: &F,
    threshold: f64,
) -> Vec<(f64, bool)>
where
    F: Fn(&ObjectBox3D, &ObjectBox3D) -> f64,
{
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| detections[j].score.total_cmp(&detections[i].score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let det = &detections[i];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, gt)| (g, iou_fn(&det.bx, gt)))
                .fold(None, |acc: Option<(usize, f64)>, (g, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((g, iou)),
                });
            match best {
                Some((g, iou)) if iou >= threshold => {
                    taken[g] = true;
                    (det.score, true)
                }
                _ => (det.score, false),
            }
        })
        .collect()
}

/// Precision/recall after each detection, all frames pooled by score.
pub fn pr_curve<F>(
    detections: &[Vec<ScoredBox>],
    gts: &[Vec<ObjectBox3D>],
    iou_fn: F,
    threshold: f64,
) -> Vec<PRCurvePoint>
where
    F: Fn(&ObjectBox3D, &ObjectBox3D) -> f64,
{
    let total_gt: usize = gts.iter().map(Vec::len).sum();
    let empty = Vec::new();
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for (frame, dets) in detections.iter().enumerate() {
        let frame_gts = gts.get(frame).unwrap_or(&empty);
        pooled.extend(match_frame(dets, frame_gts, &iou_fn, threshold));
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    if total_gt == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    pooled
        .iter()
        .enumerate()
        .map(|(k, &(_, is_tp))| {
            tp += usize::from(is_tp);
            PRCurvePoint {
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect()
}

/// Average of interpolated precision at recall levels 1/40 .. 40/40.
pub fn ap_from_curve(curve: &[PRCurvePoint]) -> f64 {
    let mut sum = 0.0;
    for j in 1..=RECALL_POSITIONS {
        let r = j as f64 / RECALL_POSITIONS as f64;
        let p = curve
            .iter()
            // tolerate rounding in tp / total_gt
            .filter(|pt| pt.recall >= r - 1e-12)
            .map(|pt| pt.precision)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / RECALL_POSITIONS as f64
}

pub fn ap_r40<F>(
    detections: &[Vec<ScoredBox>],
    gts: &[Vec<ObjectBox3D>],
    iou_fn: F,
    threshold: f64,
) -> f64
where
    F: Fn(&ObjectBox3D, &ObjectBox3D) -> f64,
{
    ap_from_curve(&pr_curve(detections, gts, iou_fn, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, z: f64) -> ObjectBox3D {
        ObjectBox3D::new([x, 1.0, z], [1.0, 1.0, 1.0], 0.0)
    }

    #[test]
    fn mpe_examples() {
        assert_eq!(mpe(&[10.0, 20.0], &[10.0, 20.0]).unwrap(), 0.0);
        assert!((mpe(&[11.0, 9.0], &[10.0, 10.0]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(
            mpe(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch { preds: 1, gts: 2 })
        );
        assert_eq!(mpe(&[1.0, 2.0], &[1.0, 0.0]), Err(MetricError::ZeroGroundTruth(1)));
        assert_eq!(mpe(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn bev_iou_examples() {
        let a = square(0.0, 10.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &square(5.0, 10.0)), 0.0);
        assert!((bev_iou(&a, &square(0.5, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bev_iou_rotated_square_in_square() {
        // a unit square rotated 45 degrees inside a 2x2 square: inter = 1
        let big = ObjectBox3D::new([0.0, 1.0, 0.0], [1.0, 2.0, 2.0], 0.0);
        let small = ObjectBox3D::new([0.0, 1.0, 0.0], [1.0, 1.0, 1.0], std::f64::consts::FRAC_PI_4);
        assert!((bev_iou(&big, &small) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_examples() {
        let a = ObjectBox3D::new([0.0, 1.0, 10.0], [2.0, 1.0, 1.0], 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let shifted = ObjectBox3D::new([0.0, 2.0, 10.0], [2.0, 1.0, 1.0], 0.0);
        assert!((iou_3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
        let apart = ObjectBox3D::new([0.0, 4.0, 10.0], [2.0, 1.0, 1.0], 0.0);
        assert_eq!(iou_3d(&a, &apart), 0.0);
    }

    #[test]
    fn ap_examples() {
        let g = vec![vec![square(0.0, 10.0), square(5.0, 20.0)]];
        let perfect = vec![g[0].iter().map(|b| ScoredBox { bx: *b, score: 0.9 }).collect()];
        assert_eq!(ap_r40(&perfect, &g, bev_iou, 0.7), 1.0);
        assert_eq!(ap_r40(&[vec![]], &g, bev_iou, 0.7), 0.0);
        let half = vec![vec![
            ScoredBox { bx: g[0][0], score: 0.9 },
            ScoredBox { bx: square(-20.0, 40.0), score: 0.8 },
        ]];
        assert!((ap_r40(&half, &g, bev_iou, 0.7) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let g = vec![vec![square(0.0, 10.0)]];
        let d = vec![vec![
            ScoredBox { bx: g[0][0], score: 0.9 },
            ScoredBox { bx: g[0][0], score: 0.8 },
        ]];
        let curve = pr_curve(&d, &g, bev_iou, 0.5);
        assert_eq!(curve[1], PRCurvePoint { recall: 1.0, precision: 0.5 });
        assert_eq!(ap_from_curve(&curve), 1.0);
    }
}
