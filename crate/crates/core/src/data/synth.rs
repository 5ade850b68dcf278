//! Deterministic synthetic stand-in for recorded driver data.
//!
//! Each driver gets a head position, face size and eye-image brightness.
//! Each sample draws a head pose and head offset; the facial features follow
//! from those, and the gaze target is a fixed linear map of the features
//! plus sub-pixel label noise. The eye image carries the same pose as a dark
//! iris disc displaced by yaw and pitch, so both branches see the signal.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::io::save_tensor;
use crate::model::FEATURE_LEN;
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Driver-camera frame the synthetic facial landmarks live in.
const DRIVER_FRAME: (f64, f64) = (1280.0, 720.0);

/// Maximum absolute label noise in pixels.
const LABEL_NOISE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub drivers: usize,
    pub samples_per_driver: usize,
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl SynthConfig {
    pub fn new(drivers: usize, samples_per_driver: usize, seed: u64) -> Self {
        SynthConfig {
            drivers,
            samples_per_driver,
            seed,
            channels: 3,
            height: 36,
            width: 60,
        }
    }

    pub fn with_image(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub manifest: PathBuf,
    pub records: Vec<SampleRecord>,
    /// Mean absolute residual of an ordinary least-squares fit from the
    /// feature vector (plus intercept) to the gaze coordinates.
    pub least_squares_l1: f64,
}

struct Driver {
    id: String,
    head: (f64, f64),
    face_width: f64,
    brightness: f64,
    tint: Vec<f64>,
}

/// Gaze as a function of the feature vector. Linear by construction.
fn planted_gaze(f: &[f64; FEATURE_LEN]) -> [f64; 2] {
    let face_cx = f[0] + 0.5 * f[2];
    let face_cy = f[1] + 0.5 * f[3];
    let (roll, pitch, yaw) = (f[4], f[5], f[6]);
    let gx = 960.0 + 22.0 * yaw + 0.4 * (face_cx - 640.0) + 1.5 * roll;
    let gy = 540.0 - 14.0 * pitch + 0.3 * (face_cy - 360.0) + 0.05 * (f[11] - f[7]);
    [gx, gy]
}

fn draw_features(rng: &mut ChaCha8Rng, d: &Driver) -> [f64; FEATURE_LEN] {
    let yaw = rng.gen_range(-28.0..28.0);
    let pitch = rng.gen_range(-18.0..18.0);
    let roll = rng.gen_range(-8.0..8.0);
    let dx = rng.gen_range(-40.0..40.0);
    let dy = rng.gen_range(-30.0..30.0);
    let w = d.face_width * rng.gen_range(0.95..1.05);
    let h = 1.2 * w;
    let x = d.head.0 + dx - 0.5 * w;
    let y = d.head.1 + dy - 0.5 * h;
    let shift = 0.01 * w * yaw;
    [
        x,
        y,
        w,
        h,
        roll,
        pitch,
        yaw,
        x + 0.3 * w + shift,
        y + 0.4 * h + 0.3 * pitch,
        x + 0.7 * w + shift,
        y + 0.4 * h + 0.3 * pitch,
        x + 0.5 * w + 2.0 * shift,
        y + 0.62 * h + 0.5 * pitch,
    ]
}

fn draw_eye(rng: &mut ChaCha8Rng, d: &Driver, cfg: &SynthConfig, yaw: f64, pitch: f64) -> Tensor<f32> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let cx = 0.5 * w + (yaw / 28.0) * 0.25 * w;
    let cy = 0.5 * h - (pitch / 18.0) * 0.25 * h;
    let radius = 0.22 * h.min(w) + 0.5;
    let noise = Uniform::new_inclusive(-6.0, 6.0);
    let mut data = Vec::with_capacity(cfg.channels * cfg.height * cfg.width);
    for c in 0..cfg.channels {
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let r2 = (px - cx).powi(2) + (py - cy).powi(2);
                // smooth iris edge
                let iris = 1.0 / (1.0 + ((r2.sqrt() - radius) * 1.5).exp());
                let base = d.brightness * d.tint[c];
                let v = base * (1.0 - 0.7 * iris) + noise.sample(rng);
                data.push(v.clamp(0.0, 255.0) as f32);
            }
        }
    }
    Tensor::new(vec![cfg.channels, cfg.height, cfg.width], data).expect("shape from config")
}

/// Mean absolute residual of the least-squares fit `gaze ≈ A·features + b`.
pub fn least_squares_l1(records: &[SampleRecord]) -> Result<f64> {
    if records.len() <= FEATURE_LEN + 1 {
        return Err(Error::Config(format!(
            "least-squares check needs more than {} samples",
            FEATURE_LEN + 1
        )));
    }
    let n = records.len();
    let design = DMatrix::from_fn(n, FEATURE_LEN + 1, |i, j| {
        if j == FEATURE_LEN {
            1.0
        } else {
            records[i].features[j]
        }
    });
    let svd = design.clone().svd(true, true);
    let mut total = 0.0;
    for axis in 0..2 {
        let target = DVector::from_fn(n, |i, _| records[i].gaze[axis]);
        let coef = svd
            .solve(&target, 1e-12)
            .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
        let residual = &design * coef - target;
        total += residual.iter().map(|r| r.abs()).sum::<f64>();
    }
    Ok(total / (2 * n) as f64)
}

/// Write `drivers × samples_per_driver` eye tensors under `dir/eyes/` and a
/// manifest at `dir/manifest.tsv`. Output is a pure function of `cfg`.
pub fn synthesize_dataset(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthReport> {
    let dir = dir.as_ref();
    if cfg.drivers < 3 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 3 drivers, got {}",
            cfg.drivers
        )));
    }
    if cfg.samples_per_driver == 0 || cfg.channels == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::Config("synthetic dataset extents must be positive".into()));
    }
    let eyes = dir.join("eyes");
    fs::create_dir_all(&eyes).map_err(|e| Error::io(&eyes, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let drivers: Vec<Driver> = (0..cfg.drivers)
        .map(|i| Driver {
            id: format!("driver{i:02}"),
            head: (
                rng.gen_range(0.35..0.65) * DRIVER_FRAME.0,
                rng.gen_range(0.35..0.6) * DRIVER_FRAME.1,
            ),
            face_width: rng.gen_range(170.0..250.0),
            brightness: rng.gen_range(70.0..190.0),
            tint: (0..cfg.channels).map(|_| rng.gen_range(0.85..1.15)).collect(),
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.drivers * cfg.samples_per_driver);
    for d in &drivers {
        for s in 0..cfg.samples_per_driver {
            let features = draw_features(&mut rng, d);
            let image = draw_eye(&mut rng, d, cfg, features[6], features[5]);
            let mut gaze = planted_gaze(&features);
            for g in &mut gaze {
                *g += rng.gen_range(-LABEL_NOISE..LABEL_NOISE);
            }
            let rel = PathBuf::from("eyes").join(format!("{}_{s:04}.drgz", d.id));
            save_tensor(dir.join(&rel), &image)?;
            records.push(SampleRecord {
                driver_id: d.id.clone(),
                eye_image: rel,
                features,
                gaze,
                road_image: None,
            });
        }
    }
    let manifest = dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &records)?;
    let least_squares_l1 = if records.len() > FEATURE_LEN + 1 {
        least_squares_l1(&records)?
    } else {
        f64::NAN
    };
    Ok(SynthReport {
        manifest,
        records,
        least_squares_l1,
    })
}
