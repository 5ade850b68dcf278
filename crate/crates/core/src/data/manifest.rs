use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{FEATURE_LEN, FRAME_HEIGHT, FRAME_WIDTH};

/// One labelled sample: a driver's eye crop, facial features and the gaze
/// point on the road image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub driver_id: String,
    /// Path to a `[channels, height, width]` tensor file, relative to the
    /// manifest directory unless absolute.
    pub eye_image: PathBuf,
    pub features: [f64; FEATURE_LEN],
    pub gaze: [f64; 2],
    pub road_image: Option<PathBuf>,
}

fn gaze_in_frame(gaze: [f64; 2]) -> bool {
    (0.0..FRAME_WIDTH).contains(&gaze[0]) && (0.0..FRAME_HEIGHT).contains(&gaze[1])
}

/// Parse manifest text: one tab-separated record per line.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest { line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        let base = 2 + FEATURE_LEN + 2;
        if fields.len() != base && fields.len() != base + 1 {
            return Err(err(format!(
                "expected {base} or {} tab-separated fields, found {}",
                base + 1,
                fields.len()
            )));
        }
        let real = |idx: usize, what: &str| -> Result<f64> {
            let v: f64 = fields[idx]
                .parse()
                .map_err(|_| err(format!("{what} {:?} is not a number", fields[idx])))?;
            if !v.is_finite() {
                return Err(err(format!("{what} is not finite")));
            }
            Ok(v)
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("driver id and eye image path must be non-empty".into()));
        }
        let mut features = [0.0; FEATURE_LEN];
        for (j, slot) in features.iter_mut().enumerate() {
            *slot = real(2 + j, &format!("feature {j}"))?;
        }
        let gaze = [real(2 + FEATURE_LEN, "gaze_x")?, real(3 + FEATURE_LEN, "gaze_y")?];
        if !gaze_in_frame(gaze) {
            return Err(err(format!(
                "gaze ({}, {}) lies outside the {FRAME_WIDTH}x{FRAME_HEIGHT} frame",
                gaze[0], gaze[1]
            )));
        }
        let road_image = fields.get(base).filter(|s| !s.is_empty()).map(PathBuf::from);
        records.push(SampleRecord {
            driver_id: fields[0].to_string(),
            eye_image: PathBuf::from(fields[1]),
            features,
            gaze,
            road_image,
        });
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// Render records in manifest form. Reals use the shortest representation
/// that parses back to the same value.
pub fn format_manifest(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.driver_id);
        out.push('\t');
        out.push_str(&r.eye_image.to_string_lossy());
        for v in r.features.iter().chain(&r.gaze) {
            write!(out, "\t{v}").expect("writing to a String");
        }
        if let Some(road) = &r.road_image {
            out.push('\t');
            out.push_str(&road.to_string_lossy());
        }
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_manifest(records)).map_err(|e| Error::io(path, e))
}

/// Resolve a record path against the directory holding the manifest.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
