//! Gaze markers drawn on the road image.

use std::path::Path;

use anyhow::{bail, Context, Result};
use drgaze::io::load_tensor;
use drgaze::model::{FRAME_HEIGHT, FRAME_WIDTH};
use image::codecs::pnm::{PnmSubtype, SampleEncoding};
use image::{Rgb, RgbImage};

pub const PREDICTION: Rgb<u8> = Rgb([255, 0, 0]);
pub const TRUTH: Rgb<u8> = Rgb([0, 255, 0]);
/// Marker radius on a full-resolution road image.
pub const MARKER_RADIUS: f64 = 12.0;

/// Clamp a frame coordinate into the road-image frame; the flag reports
/// whether anything moved.
pub fn clamp_to_frame(x: f64, y: f64) -> ((f64, f64), bool) {
    let cx = x.clamp(0.0, FRAME_WIDTH - 1.0);
    let cy = y.clamp(0.0, FRAME_HEIGHT - 1.0);
    ((cx, cy), cx != x || cy != y)
}

/// Road image from a PPM file or a `[3, H, W]` DRGZ tensor of 0–255 values.
pub fn load_road(path: &Path) -> Result<RgbImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("drgz")) {
        let t = load_tensor::<f32>(path)?;
        let [3, h, w] = t.shape() else {
            bail!(
                "{}: road tensor must be [3, height, width], got {:?}",
                path.display(),
                t.shape()
            );
        };
        let (h, w) = (*h, *w);
        let plane = h * w;
        let data = t.data();
        return Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            let px = |c: usize| data[c * plane + i].round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        }));
    }
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .with_guessed_format()?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    Ok(img.to_rgb8())
}

/// Filled disc centred on a frame coordinate, scaled to the image size.
pub fn draw_marker(img: &mut RgbImage, frame_xy: (f64, f64), color: Rgb<u8>) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let cx = frame_xy.0 * w / FRAME_WIDTH;
    let cy = frame_xy.1 * h / FRAME_HEIGHT;
    let r = MARKER_RADIUS * w / FRAME_WIDTH;
    let x0 = (cx - r).floor().max(0.0) as u32;
    let y0 = (cy - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil().max(0.0) as u32).min(img.width().saturating_sub(1));
    let y1 = ((cy + r).ceil().max(0.0) as u32).min(img.height().saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub fn save_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let encoder = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
    img.write_with_encoder(encoder)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
