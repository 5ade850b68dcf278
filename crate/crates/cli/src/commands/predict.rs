use anyhow::{anyhow, Context};
use drgaze::data::{channel_stats, NormalizationStats};
use drgaze::io::load_tensor;
use drgaze::model::{load_checkpoint, FEATURE_LEN, FRAME_HEIGHT, FRAME_WIDTH};
use drgaze::{Element, Precision, Tensor};
use image::RgbImage;

use crate::args::PredictArgs;
use crate::error::{CliError, CliResult};
use crate::overlay::{clamp_to_frame, draw_marker, load_road, save_ppm, PREDICTION, TRUTH};

fn parse_reals(text: &str, expected: usize, what: &str) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::usage(anyhow!(
                "{what}: expected {expected} comma-separated numbers, got {text:?}"
            ))
        })?;
    if values.len() != expected {
        return Err(CliError::usage(anyhow!(
            "{what}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Predicts the gaze point, prints it and writes the overlay. Returns the
/// raw (unclamped) prediction in frame pixels.
pub fn predict(args: &PredictArgs) -> CliResult<[f64; 2]> {
    let precision = load_checkpoint::<f32>(&args.checkpoint)?
        .meta
        .get("precision")
        .map(|p| p.parse::<Precision>())
        .transpose()?
        .unwrap_or_default();
    let xy = match precision {
        Precision::F32 => forward::<f32>(args)?,
        Precision::F64 => forward::<f64>(args)?,
    };
    println!("prediction {} {}", xy[0], xy[1]);

    let (marker, clamped) = clamp_to_frame(xy[0], xy[1]);
    if clamped {
        eprintln!(
            "warning: prediction ({}, {}) lies outside the {FRAME_WIDTH}x{FRAME_HEIGHT} frame; marker clamped to ({}, {})",
            xy[0], xy[1], marker.0, marker.1
        );
    }
    let mut road = match &args.road {
        Some(path) => load_road(path).map_err(CliError::usage)?,
        None => RgbImage::new(FRAME_WIDTH as u32, FRAME_HEIGHT as u32),
    };
    if let Some(truth) = &args.truth {
        let t = parse_reals(truth, 2, "--truth")?;
        draw_marker(&mut road, clamp_to_frame(t[0], t[1]).0, TRUTH);
    }
    draw_marker(&mut road, marker, PREDICTION);
    save_ppm(&road, &args.out).map_err(CliError::usage)?;
    Ok(xy)
}

fn forward<T: Element>(args: &PredictArgs) -> CliResult<[f64; 2]> {
    let model = load_checkpoint::<T>(&args.checkpoint)?.model;
    let eye_cfg = model.config.eye;
    let eye: Tensor<T> = load_tensor(&args.eye)?;
    let expected = [eye_cfg.channels, eye_cfg.height, eye_cfg.width];
    if eye.shape() != expected {
        return Err(CliError::usage(anyhow!(
            "{}: eye image has shape {:?}, checkpoint expects {expected:?}",
            args.eye.display(),
            eye.shape()
        )));
    }
    let normalized = match (&args.stats, &args.driver) {
        (Some(path), Some(driver)) => NormalizationStats::load(path)?.apply(driver, &eye)?,
        _ => {
            let own = channel_stats("input", &[&eye])?;
            let stats = NormalizationStats {
                drivers: [("input".to_string(), own)].into(),
            };
            stats.apply("input", &eye)?
        }
    };
    let features = parse_reals(&args.features, FEATURE_LEN, "--features")?;
    let mut shape = vec![1];
    shape.extend_from_slice(&expected);
    let batch_eye = normalized.reshape(&shape)?;
    let batch_features = Tensor::from_f64(&[1, FEATURE_LEN], &features)?;
    let out = model
        .predict(&batch_eye, &batch_features)
        .context("running the model")?;
    let d = out.data();
    Ok([d[0].as_f64(), d[1].as_f64()])
}
