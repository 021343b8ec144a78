//! Dense random sampling of box bottom faces and projection to grounded depth
//! samples.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{signed_polygon_area, CameraModel, GeometryError, ObjectBox3D};

/// Floor on the number of samples per object.
pub const MIN_SAMPLES: usize = 8;
/// Cap on the number of samples per object.
pub const MAX_SAMPLES: usize = 5500;

/// One grounded depth sample: pixel coordinates and the depth at that pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSample {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSampleSet {
    pub samples: Vec<GroundSample>,
    pub source_box: Option<ObjectBox3D>,
    pub seed: u64,
}

impl GroundSampleSet {
    pub fn from_samples(samples: Vec<GroundSample>) -> Self {
        Self {
            samples,
            source_box: None,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_depth(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        Some(self.samples.iter().map(|s| s.z).sum::<f64>() / self.samples.len() as f64)
    }
}

/// Deterministic generator used for all seeded sampling.
///
/// ChaCha8 is counter based and its output stream is fixed by the seed on every
/// platform.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of samples for a box: the projected bottom-quad area in pixels²,
/// rounded, clamped to `[MIN_SAMPLES, MAX_SAMPLES]`.
pub fn sample_count(cam: &CameraModel, bx: &ObjectBox3D) -> Result<usize, GeometryError> {
    let projected = cam.project_points(&bx.bottom_corners())?;
    let quad: Vec<[f64; 2]> = projected.iter().map(|p| [p[0], p[1]]).collect();
    Ok(count_from_area(signed_polygon_area(&quad).abs()))
}

pub fn count_from_area(area: f64) -> usize {
    let rounded = area.round();
    if !(rounded >= MIN_SAMPLES as f64) {
        MIN_SAMPLES
    } else if rounded >= MAX_SAMPLES as f64 {
        MAX_SAMPLES
    } else {
        rounded as usize
    }
}

/// Map parallelogram coefficients `(r1, r2)` to a point on the bottom face:
/// `k1 + r1 (k2 - k1) + r2 (k4 - k1)`.
///
/// Evaluated as `(1 - r1 - r2) k1 + r1 k2 + r2 k4` in x and z so that the
/// unit coefficients reproduce the corners exactly; y is the bottom plane.
pub fn bottom_point(corners: &[Vector3<f64>; 4], r1: f64, r2: f64) -> Vector3<f64> {
    let [k1, k2, _, k4] = corners;
    let w0 = 1.0 - r1 - r2;
    let mix = |a: f64, b: f64, c: f64| (w0 * a + r1 * b) + r2 * c;
    Vector3::new(mix(k1.x, k2.x, k4.x), k1.y, mix(k1.z, k2.z, k4.z))
}

/// Points for explicit coefficient rows.
pub fn points_from_coefficients(bx: &ObjectBox3D, coeffs: &[[f64; 2]]) -> Vec<Vector3<f64>> {
    let corners = bx.bottom_corners();
    coeffs
        .iter()
        .map(|[r1, r2]| bottom_point(&corners, *r1, *r2))
        .collect()
}

/// `n` points drawn uniformly over the bottom parallelogram spanned by
/// (k1, k2, k4).
pub fn sample_ground_points(bx: &ObjectBox3D, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let corners = bx.bottom_corners();
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            bottom_point(&corners, r1, r2)
        })
        .collect()
}

pub fn grounded_samples(
    cam: &CameraModel,
    bx: &ObjectBox3D,
    seed: u64,
) -> Result<GroundSampleSet, GeometryError> {
    let n = sample_count(cam, bx)?;
    let points = sample_ground_points(bx, n, seed);
    let samples = cam
        .project_points(&points)?
        .into_iter()
        .map(|[u, v, z]| GroundSample { u, v, z })
        .collect();
    Ok(GroundSampleSet {
        samples,
        source_box: Some(*bx),
        seed,
    })
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("non-finite sample on row {0}")]
    NonFinite(usize),
}

/// Write samples as CSV with header `u,v,z`, full precision.
pub fn write_samples_csv<W: Write>(out: W, samples: &[GroundSample]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "v", "z"])?;
    for s in samples {
        w.write_record([s.u.to_string(), s.v.to_string(), s.z.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Concatenated form with a leading `object_id` column.
pub fn write_tagged_samples_csv<W: Write>(
    out: W,
    sets: &[(usize, &[GroundSample])],
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["object_id", "u", "v", "z"])?;
    for (id, samples) in sets {
        for s in *samples {
            w.write_record([
                id.to_string(),
                s.u.to_string(),
                s.v.to_string(),
                s.z.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Read either CSV form; an `object_id` column, if present, is ignored.
pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<GroundSample>, CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(CsvError::MissingColumn(name))
    };
    let (iu, iv, iz) = (col("u")?, col("v")?, col("z")?);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64, CsvError> {
            rec.get(i)
                .and_then(|t| t.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or(CsvError::NonFinite(row + 1))
        };
        out.push(GroundSample {
            u: get(iu)?,
            v: get(iv)?,
            z: get(iz)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::from_intrinsics(700.0, 600.0, 180.0).unwrap()
    }

    #[test]
    fn count_clamps() {
        // Rectangle (100,200)-(150,220) has shoelace area 1000.
        let quad = [[100.0, 200.0], [150.0, 200.0], [150.0, 220.0], [100.0, 220.0]];
        assert_eq!(count_from_area(signed_polygon_area(&quad).abs()), 1000);
        assert_eq!(count_from_area(40000.0), MAX_SAMPLES);
        assert_eq!(count_from_area(2.0), MIN_SAMPLES);
        assert_eq!(count_from_area(0.0), MIN_SAMPLES);
        assert_eq!(count_from_area(f64::NAN), MIN_SAMPLES);
    }

    #[test]
    fn coefficient_corners_are_exact() {
        let bx = ObjectBox3D::new([1.37, 1.65, 13.1], [1.5, 1.63, 3.9], 0.4123);
        let k = bx.bottom_corners();
        let pts = points_from_coefficients(&bx, &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(pts, vec![k[0], k[1], k[3], k[2]]);
    }

    #[test]
    fn samples_are_planar_and_deterministic() {
        let bx = ObjectBox3D::new([-2.0, 1.65, 20.0], [1.5, 1.6, 4.0], 1.1);
        let a = sample_ground_points(&bx, 100, 7);
        let b = sample_ground_points(&bx, 100, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.y == 1.65));
        assert_ne!(a, sample_ground_points(&bx, 100, 8));
    }

    #[test]
    fn grounded_depths_lie_within_corner_range() {
        let bx = ObjectBox3D::new([0.5, 1.65, 10.0], [1.5, 1.6, 4.0], 0.3);
        let set = grounded_samples(&cam(), &bx, 3).unwrap();
        let zs: Vec<f64> = bx.bottom_corners().iter().map(|k| k.z).collect();
        let lo = zs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(set.len(), sample_count(&cam(), &bx).unwrap());
        assert!(set.samples.iter().all(|s| s.z >= lo - 1e-12 && s.z <= hi + 1e-12));
        let plane = bx.bottom_plane();
        for s in &set.samples {
            let z = cam().ray_plane_depth(s.u, s.v, &plane).unwrap();
            assert!((z - s.z).abs() <= 1e-9 * s.z);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let bx = ObjectBox3D::new([0.5, 1.65, 10.0], [1.5, 1.6, 4.0], 0.3);
        let set = grounded_samples(&cam(), &bx, 11).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &set.samples).unwrap();
        assert!(buf.starts_with(b"u,v,z\n"));
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), set.samples);

        let mut tagged = Vec::new();
        write_tagged_samples_csv(&mut tagged, &[(3, &set.samples[..2])]).unwrap();
        assert!(tagged.starts_with(b"object_id,u,v,z\n3,"));
        assert_eq!(read_samples_csv(&tagged[..]).unwrap(), set.samples[..2].to_vec());
    }

    #[test]
    fn csv_missing_column() {
        assert!(matches!(
            read_samples_csv(&b"u,v\n1,2\n"[..]),
            Err(CsvError::MissingColumn("z"))
        ));
    }
}
