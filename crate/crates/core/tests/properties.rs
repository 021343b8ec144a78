use std::f64::consts::PI;

use proptest::prelude::*;

use gpk_core::camera::{signed_polygon_area, CameraModel, ObjectBox3D};
use gpk_core::depth_grid::{
    decode_grid, depth_align_loss, encode_grid, fit_grid, fit_grid_from, DepthGrid, FitConfig, GridShape,
};
use gpk_core::evaluation::{bev_iou, iou_3d};
use gpk_core::inference::{
    anchor_cell, compute_offsets, fuse_depths, one_stage_depth, two_stage_depths, DepthEstimate,
    Keypoint, KeypointSet2D,
};
use gpk_core::kitti_io::{parse_labels, write_labels, LabelRecord, Precision};
use gpk_core::sampler::{grounded_samples, GroundSample};
use gpk_core::synth::DEFAULT_CAMERA;

fn camera() -> CameraModel {
    CameraModel::from_row_major(&DEFAULT_CAMERA).unwrap()
}

prop_compose! {
    fn any_box()(
        x in -10.0..10.0f64, y in 1.0..2.0f64, z in 10.0..60.0f64,
        h in 0.5..3.0f64, w in 0.4..3.0f64, l in 0.4..6.0f64, yaw in -PI..PI,
    ) -> ObjectBox3D {
        ObjectBox3D::new([x, y, z], [h, w, l], yaw)
    }
}

prop_compose! {
    fn any_grid()(h in 2usize..7, w in 2usize..7, stride in 0.5..8.0f64)
        (values in prop::collection::vec(1.0..60.0f64, h * w), h in Just(h), w in Just(w), stride in Just(stride))
        -> DepthGrid {
        DepthGrid::from_values(GridShape::new(h, w, stride).unwrap(), values).unwrap()
    }
}

prop_compose! {
    fn any_label()(
        class in prop::sample::select(vec!["Car", "Pedestrian", "Cyclist", "DontCare"]),
        truncated in 0.0..1.0f64, occluded in 0..4i32, alpha in -PI..PI,
        bbox in prop::array::uniform4(0.0..1242.0f64),
        dims in prop::array::uniform3(0.1..10.0f64),
        location in prop::array::uniform3(-50.0..50.0f64),
        ry in -PI..PI, score in prop::option::of(0.0..1.0f64),
    ) -> LabelRecord {
        LabelRecord {
            class: class.to_string(), truncated, occluded, alpha, bbox2d: bbox, dims,
            location, rotation_y: ry, score,
        }
    }
}

proptest! {
    #[test]
    fn labels_round_trip_at_full_precision(labels in prop::collection::vec(any_label(), 0..6)) {
        let text = write_labels(&labels, Precision::Full);
        prop_assert_eq!(parse_labels(&text).unwrap(), labels);
    }

    #[test]
    fn bottom_face_is_a_ccw_rectangle(bx in any_box()) {
        let [k1, k2, k3, k4] = bx.bottom_corners();
        prop_assert_eq!(k3, (k2 - k1) + k4);
        let poly = bx.bev_polygon();
        let area = signed_polygon_area(&poly);
        prop_assert!(area > 0.0);
        prop_assert!((area - bx.length() * bx.width()).abs() < 1e-9 * area.max(1.0));
        prop_assert!(k1.y == bx.location[1] && k3.y == bx.location[1]);
    }

    #[test]
    fn grounded_samples_lie_on_the_ground(bx in any_box(), seed in any::<u64>()) {
        let cam = camera();
        let set = grounded_samples(&cam, &bx, seed).unwrap();
        for s in &set.samples {
            let z = cam.ray_plane_depth(s.u, s.v, &bx.bottom_plane()).unwrap();
            prop_assert!(((z - s.z) / s.z).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_stays_between_its_nodes(grid in any_grid(), fu in 0.0..1.0f64, fv in 0.0..1.0f64) {
        let ug = fu * (grid.width() - 1) as f64;
        let vg = fv * (grid.height() - 1) as f64;
        let st = grid.stencil(ug, vg).unwrap();
        prop_assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let nodes: Vec<f64> = st.indices.iter().map(|i| grid.values()[*i]).collect();
        let lo = nodes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = grid.interpolate(ug, vg).unwrap();
        prop_assert!(z >= lo - 1e-12 && z <= hi + 1e-12);
    }

    #[test]
    fn grid_bytes_round_trip(grid in any_grid()) {
        let bytes = encode_grid(&grid);
        prop_assert_eq!(bytes.len(), 16 + 4 * grid.values().len());
        let back = decode_grid(&bytes).unwrap();
        prop_assert_eq!(encode_grid(&back), bytes);
    }

    #[test]
    fn duplicated_samples_leave_loss_and_gradient_unchanged(grid in any_grid(), seed in any::<u64>()) {
        let mut x = seed;
        let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 };
        let s = grid.stride();
        let samples: Vec<GroundSample> = (0..10)
            .map(|_| GroundSample {
                u: next() * (grid.width() - 1) as f64 * s * 0.999,
                v: next() * (grid.height() - 1) as f64 * s * 0.999,
                z: 1.0 + 59.0 * next(),
            })
            .collect();
        let doubled: Vec<GroundSample> = samples.iter().chain(&samples).copied().collect();
        let a = depth_align_loss(&grid, &samples).unwrap();
        let b = depth_align_loss(&grid, &doubled).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        for (ga, gb) in a.grad.iter().zip(&b.grad) {
            prop_assert!((ga - gb).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_is_bounded_and_scale_free(
        z in prop::collection::vec(1.0..80.0f64, 1..8),
        sig in prop::collection::vec(0.01..10.0f64, 8),
        c in 0.01..100.0f64,
    ) {
        let est: Vec<DepthEstimate> = z.iter().zip(&sig).map(|(z, s)| DepthEstimate::new(*z, *s)).collect();
        let fused = fuse_depths(&est).unwrap();
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fused.z >= lo && fused.z <= hi);
        let best = sig[..z.len()].iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(fused.sigma <= best * (1.0 + 1e-12));
        let scaled: Vec<DepthEstimate> = est.iter().map(|e| DepthEstimate::new(e.z, e.sigma * c)).collect();
        prop_assert!((fuse_depths(&scaled).unwrap().z - fused.z).abs() < 1e-12 * hi);
    }

    #[test]
    fn iou_is_symmetric_and_unit_on_self(a in any_box(), b in any_box()) {
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
        let (ab, ba) = (bev_iou(&a, &b), bev_iou(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((0.0..=1.0).contains(&iou_3d(&a, &b)));
    }

    #[test]
    fn two_stage_is_exact_on_affine_fields(
        a in -0.05..0.05f64, b in 0.01..0.2f64, c in 5.0..20.0f64,
        bx in any_box(),
    ) {
        // field z = c + a u + b v sampled on a stride-4 grid over the image
        let shape = GridShape::covering(1242.0, 375.0, 4.0).unwrap();
        let values = (0..shape.height)
            .flat_map(|r| (0..shape.width).map(move |col| c + a * 4.0 * col as f64 + b * 4.0 * r as f64))
            .collect();
        let grid = DepthGrid::from_values(shape, values).unwrap();
        let kps = KeypointSet2D::from_box(&camera(), &bx).unwrap();
        let inside = kps.points().iter().all(|[u, v]| (0.0..1240.0).contains(u) && (0.0..372.0).contains(v));
        prop_assume!(inside);
        let field = |p: [f64; 2]| c + a * p[0] + b * p[1];
        let offsets = compute_offsets(&kps, 4.0).unwrap();
        let anchor = anchor_cell(kps.c2d, 4.0);
        let two = two_stage_depths(&grid, anchor, &offsets).unwrap();
        let b2d = kps.get(Keypoint::Bottom);
        prop_assert!((two.bottom - field(b2d)).abs() < 1e-9);
        let one = one_stage_depth(&grid, anchor_cell(b2d, 4.0)).unwrap();
        prop_assert!((one - field(b2d)).abs() + 1e-9 >= (two.bottom - field(b2d)).abs());
    }
}

#[test]
fn fitting_from_a_fitted_grid_does_not_raise_the_loss() {
    let shape = GridShape::new(4, 5, 2.0).unwrap();
    let truth: Vec<f64> = (0..20).map(|i| 10.0 + 0.5 * i as f64).collect();
    let truth = DepthGrid::from_values(shape, truth).unwrap();
    let samples: Vec<GroundSample> = (0..40)
        .map(|k| {
            let (u, v) = ((k % 8) as f64, (k / 8) as f64 * 1.5);
            GroundSample { u, v, z: truth.interpolate_pixel(u, v).unwrap() }
        })
        .collect();
    let first = fit_grid(&[&samples], shape, &FitConfig::default()).unwrap();
    assert!(first.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(first.final_loss() < 1e-2);

    let again = fit_grid_from(&[&samples], first.grid.clone(), &FitConfig::default()).unwrap();
    assert_eq!(again.initial_loss, first.final_loss());
    assert!(again.history.iter().all(|l| *l <= again.initial_loss));

    // the exact field is optimal: loss 0 and it stays there
    let exact = fit_grid_from(&[&samples], truth, &FitConfig::default()).unwrap();
    assert!(exact.initial_loss < 1e-12);
    assert!(exact.final_loss() <= exact.initial_loss);
}

#[test]
fn duplicate_sets_fit_to_the_same_grid() {
    let samples: Vec<GroundSample> = (0..30)
        .map(|k| GroundSample { u: (k % 6) as f64 * 1.3, v: (k / 6) as f64 * 1.7, z: 8.0 + 0.3 * k as f64 })
        .collect();
    let shape = GridShape::new(5, 5, 2.0).unwrap();
    let single = fit_grid(&[&samples], shape, &FitConfig::default()).unwrap();
    let double = fit_grid(&[&samples, &samples], shape, &FitConfig::default()).unwrap();
    assert!((single.final_loss() - double.final_loss()).abs() < 1e-6);
    for (a, b) in single.grid.values().iter().zip(double.grid.values()) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}
