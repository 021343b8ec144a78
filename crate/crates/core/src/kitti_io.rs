//! KITTI calibration and label files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, GeometryError, ObjectBox3D};

pub const LABEL_FIELDS: usize = 15;
pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("input is not valid UTF-8 (byte {0})")]
    Utf8(usize),
    #[error("line {line}: expected `NAME: values`")]
    MissingName { line: usize },
    #[error("line {line}: {name} has {found} values, expected 12")]
    MatrixArity {
        line: usize,
        name: String,
        found: usize,
    },
    #[error("line {line}: malformed number `{token}`")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: non-finite value `{token}`")]
    NonFinite { line: usize, token: String },
    #[error("line {line}: duplicate entry {name}")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: expected 15 or 16 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid dimensions for {class}")]
    BadDimensions { line: usize, class: String },
}

fn parse_number(token: &str, line: usize) -> Result<f64, ParseError> {
    let v: f64 = token.parse().map_err(|_| ParseError::BadNumber {
        line,
        token: token.to_string(),
    })?;
    if !v.is_finite() {
        return Err(ParseError::NonFinite {
            line,
            token: token.to_string(),
        });
    }
    Ok(v)
}

fn is_projection_name(name: &str) -> bool {
    matches!(name, "P0" | "P1" | "P2" | "P3")
}

/// Parsed calibration file.
///
/// Every line carrying 12 numbers is stored as a row-major 3x4 matrix. Lines
/// with other arities (e.g. `R0_rect`) are kept verbatim in `raw` when
/// [`CalibOptions::keep_raw`] is set. `P0`..`P3` must always have 12 numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibRecord {
    pub entries: BTreeMap<String, [f64; 12]>,
    pub raw: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibOptions {
    pub keep_raw: bool,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self { keep_raw: true }
    }
}

impl CalibRecord {
    pub fn matrix(&self, name: &str) -> Option<&[f64; 12]> {
        self.entries.get(name)
    }

    pub fn camera(&self, name: &str) -> Result<CameraModel, CalibError> {
        let m = self
            .matrix(name)
            .ok_or_else(|| CalibError::Missing(name.to_string()))?;
        Ok(CameraModel::from_row_major(m)?)
    }
}

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration has no matrix named {0}")]
    Missing(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn parse_calib(text: &str) -> Result<CalibRecord, ParseError> {
    parse_calib_with(text, CalibOptions::default())
}

pub fn parse_calib_bytes(bytes: &[u8]) -> Result<CalibRecord, ParseError> {
    parse_calib(as_utf8(bytes)?)
}

pub fn parse_calib_with(text: &str, opts: CalibOptions) -> Result<CalibRecord, ParseError> {
    let mut rec = CalibRecord::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, rest) = line
            .split_once(':')
            .ok_or(ParseError::MissingName { line: lineno })?;
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(ParseError::MissingName { line: lineno });
        }
        if rec.entries.contains_key(name) || rec.raw.contains_key(name) {
            return Err(ParseError::Duplicate {
                line: lineno,
                name: name.to_string(),
            });
        }
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        if is_projection_name(name) {
            if tokens.len() != 12 {
                return Err(ParseError::MatrixArity {
                    line: lineno,
                    name: name.to_string(),
                    found: tokens.len(),
                });
            }
            rec.entries
                .insert(name.to_string(), parse_matrix(&tokens, lineno)?);
            continue;
        }
        match (tokens.len() == 12)
            .then(|| parse_matrix(&tokens, lineno).ok())
            .flatten()
        {
            Some(m) => {
                rec.entries.insert(name.to_string(), m);
            }
            None if opts.keep_raw => {
                rec.raw.insert(name.to_string(), rest.trim().to_string());
            }
            None => {}
        }
    }
    Ok(rec)
}

fn parse_matrix(tokens: &[&str], line: usize) -> Result<[f64; 12], ParseError> {
    let mut m = [0.0; 12];
    for (slot, tok) in m.iter_mut().zip(tokens) {
        *slot = parse_number(tok, line)?;
    }
    Ok(m)
}

/// Write a calibration file; matrices first, then raw lines, each group in
/// name order.
pub fn write_calib(rec: &CalibRecord) -> String {
    let mut out = String::new();
    for (name, m) in &rec.entries {
        out.push_str(name);
        out.push(':');
        for v in m {
            let _ = write!(out, " {v:e}");
        }
        out.push('\n');
    }
    for (name, rest) in &rec.raw {
        let _ = writeln!(out, "{name}: {rest}");
    }
    out
}

/// One object annotation (or detection, when `score` is present).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// left, top, right, bottom in pixels.
    pub bbox2d: [f64; 4],
    /// h, w, l in meters.
    pub dims: [f64; 3],
    /// Bottom-face center in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == DONT_CARE
    }

    pub fn to_box(&self) -> ObjectBox3D {
        ObjectBox3D::new(self.location, self.dims, self.rotation_y)
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, ParseError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != LABEL_FIELDS && fields.len() != LABEL_FIELDS + 1 {
            return Err(ParseError::FieldCount {
                line: lineno,
                found: fields.len(),
            });
        }
        let num = |i: usize| parse_number(fields[i], lineno);
        let occluded: i32 = fields[2].parse().map_err(|_| ParseError::BadNumber {
            line: lineno,
            token: fields[2].to_string(),
        })?;
        let rec = LabelRecord {
            class: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        };
        // DontCare rows carry -1 placeholders; everything else needs a real box.
        if !rec.is_dont_care() && rec.dims.iter().any(|d| *d <= 0.0) {
            return Err(ParseError::BadDimensions {
                line: lineno,
                class: rec.class,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_labels_bytes(bytes: &[u8]) -> Result<Vec<LabelRecord>, ParseError> {
    parse_labels(as_utf8(bytes)?)
}

fn as_utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| ParseError::Utf8(e.valid_up_to()))
}

/// Number formatting used by [`write_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Two decimals, as in the official label files.
    Kitti,
    /// Shortest representation that parses back to the same `f64`.
    Full,
}

pub fn write_labels(records: &[LabelRecord], precision: Precision) -> String {
    let fmt = |v: f64| match precision {
        Precision::Kitti => format!("{v:.2}"),
        Precision::Full => format!("{v}"),
    };
    let mut out = String::new();
    for r in records {
        let mut fields = vec![
            r.class.clone(),
            fmt(r.truncated),
            r.occluded.to_string(),
            fmt(r.alpha),
        ];
        fields.extend(r.bbox2d.iter().map(|v| fmt(*v)));
        fields.extend(r.dims.iter().map(|v| fmt(*v)));
        fields.extend(r.location.iter().map(|v| fmt(*v)));
        fields.push(fmt(r.rotation_y));
        if let Some(s) = r.score {
            fields.push(fmt(s));
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str =
        "Car 0.00 0 -1.58 587.0 173.3 614.1 200.1 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn calib_plain_and_scientific_agree() {
        let a = parse_calib("P2: 700 0 600 0 0 700 180 0 0 0 1 0").unwrap();
        let b = parse_calib("P2: 7.0e+02 0 6.0e+02 0 0 7.0e+02 1.8e+02 0 0 0 1 0").unwrap();
        assert_eq!(a, b);
        let cam = a.camera("P2").unwrap();
        assert_eq!((cam.f(), cam.cu(), cam.cv()), (700.0, 600.0, 180.0));
        assert_eq!(cam.matrix()[(0, 3)], 0.0);
    }

    #[test]
    fn calib_arity_error_reports_line() {
        assert_eq!(
            parse_calib("P2: 700 0 600").unwrap_err(),
            ParseError::MatrixArity {
                line: 1,
                name: "P2".into(),
                found: 3
            }
        );
    }

    #[test]
    fn calib_bad_token_and_duplicates() {
        let err = parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP1: 1 0 0 0 0 1 0 0 0 0 x 0").unwrap_err();
        assert_eq!(
            err,
            ParseError::BadNumber {
                line: 2,
                token: "x".into()
            }
        );
        let dup = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\r\nP2: 1 0 0 0 0 1 0 0 0 0 1 0\r\n";
        assert!(matches!(parse_calib(dup), Err(ParseError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn calib_raw_lines() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n";
        let rec = parse_calib(text).unwrap();
        assert_eq!(rec.raw.get("R0_rect").unwrap(), "1 0 0 0 1 0 0 0 1");
        assert!(rec.entries.contains_key("Tr_velo_to_cam"));
        let skipped = parse_calib_with(text, CalibOptions { keep_raw: false }).unwrap();
        assert!(skipped.raw.is_empty());
        assert_eq!(parse_calib(&write_calib(&rec)).unwrap(), rec);
    }

    #[test]
    fn parses_car_line() {
        let recs = parse_labels(CAR).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.class, "Car");
        assert_eq!(r.dims, [1.65, 1.67, 3.64]);
        assert_eq!(r.location, [-0.65, 1.71, 46.70]);
        assert_eq!(r.rotation_y, -1.59);
        assert_eq!(r.bbox2d, [587.0, 173.3, 614.1, 200.1]);
        assert_eq!(r.score, None);

        let scored = parse_labels(&format!("{CAR} 0.95")).unwrap();
        assert_eq!(scored[0].score, Some(0.95));
        assert!(parse_labels("").unwrap().is_empty());
    }

    #[test]
    fn field_count_error() {
        let text = format!("{CAR}\nCar 0 0 0 1 2 3\n");
        assert_eq!(
            parse_labels(&text).unwrap_err(),
            ParseError::FieldCount { line: 2, found: 7 }
        );
    }

    #[test]
    fn dont_care_keeps_placeholders() {
        let line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";
        let r = &parse_labels(line).unwrap()[0];
        assert!(r.is_dont_care());
        assert_eq!(r.dims, [-1.0, -1.0, -1.0]);
        let bad = line.replacen("DontCare", "Car", 1);
        assert!(matches!(parse_labels(&bad), Err(ParseError::BadDimensions { line: 1, .. })));
    }

    #[test]
    fn kitti_precision_is_a_fixed_point() {
        let once = write_labels(&parse_labels(CAR).unwrap(), Precision::Kitti);
        assert_eq!(
            once.trim_end(),
            "Car 0.00 0 -1.58 587.00 173.30 614.10 200.10 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"
        );
        let twice = write_labels(&parse_labels(&once).unwrap(), Precision::Kitti);
        assert_eq!(once, twice);
    }

    #[test]
    fn writer_field_counts() {
        let mut r = parse_labels(CAR).unwrap();
        r[0].score = Some(0.5);
        let text = write_labels(&r, Precision::Full);
        assert_eq!(text.split_whitespace().count(), 16);
        assert_eq!(write_labels(&[], Precision::Kitti), "");
    }

    #[test]
    fn invalid_utf8_is_an_error() {
        assert_eq!(parse_labels_bytes(b"Car \xff"), Err(ParseError::Utf8(4)));
    }
}
