//! Files in and out: images, float maps, overlays and CSV tables.

mod overlay;
mod pfm;

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::evaluation::EvalCurve;
use crate::types::{Image, ImageDims};

pub use overlay::{colormap, render_overlay};
pub use pfm::{decode_pfm, encode_pfm, load_pfm, save_pfm};

/// Centered crop of a `w`×`h` source to the aspect ratio of `tw`×`th`:
/// `(left, top, width, height)`.
fn center_crop(w: usize, h: usize, tw: usize, th: usize) -> (usize, usize, usize, usize) {
    if w * th > h * tw {
        let cw = ((h * tw) as f64 / th as f64).round().max(1.0) as usize;
        ((w - cw) / 2, 0, cw, h)
    } else if w * th < h * tw {
        let ch = ((w * th) as f64 / tw as f64).round().max(1.0) as usize;
        (0, (h - ch) / 2, w, ch)
    } else {
        (0, 0, w, h)
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
fn resize_bilinear(src: &[f32], sw: usize, sh: usize, c: usize, tw: usize, th: usize) -> Vec<f32> {
    if (sw, sh) == (tw, th) {
        return src.to_vec();
    }
    let axis = |t: usize, s: usize, n: usize| {
        let x = ((t as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(s - 1), x - i0 as f64)
    };
    let mut out = Vec::with_capacity(tw * th * c);
    for ty in 0..th {
        let (y0, y1, fy) = axis(ty, sh, th);
        for tx in 0..tw {
            let (x0, x1, fx) = axis(tx, sw, tw);
            for ch in 0..c {
                let at = |y: usize, x: usize| f64::from(src[(y * sw + x) * c + ch]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    out
}

/// Decodes PNG/JPEG/BMP, center-crops to the target aspect ratio, resizes
/// bilinearly to `target` and scales to [0, 1]. Grayscale files are
/// replicated for 3-channel targets; color files are converted to luma for
/// 1-channel targets.
pub fn load_image(path: &Path, target: ImageDims) -> Result<Image> {
    if target.channels != 1 && target.channels != 3 {
        return Err(Error::Dimension(format!(
            "target must have 1 or 3 channels, got {}",
            target.channels
        )));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        image::ImageError::Unsupported(u) => Error::format("image", path, u.to_string()),
        source => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let raw: Vec<u8> = if target.channels == 3 {
        decoded.to_rgb8().into_raw()
    } else {
        decoded.to_luma8().into_raw()
    };
    let c = target.channels;
    let (left, top, cw, ch) = center_crop(w, h, target.width, target.height);
    let mut cropped = Vec::with_capacity(cw * ch * c);
    for y in top..top + ch {
        let row = &raw[(y * w + left) * c..(y * w + left + cw) * c];
        cropped.extend(row.iter().map(|&v| f32::from(v) / 255.0));
    }
    let data = resize_bilinear(&cropped, cw, ch, c, target.width, target.height);
    Image::new(
        target.height,
        target.width,
        c,
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

fn to_bytes(image: &Image) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect()
}

/// 8-bit PNG (RGB or grayscale, following the image's channels).
pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = if image.channels() == 3 {
        DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, to_bytes(image)).expect("buffer matches dimensions"),
        )
    } else {
        DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, to_bytes(image)).expect("buffer matches dimensions"),
        )
    };
    dynamic.save(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// `fraction,value` rows.
pub fn write_curve_csv(curve: &EvalCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fraction", "value"])?;
    for (f, v) in curve.fractions.iter().zip(&curve.values) {
        w.write_record([f.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `mask_index,sc_a,sc_b` rows.
pub fn write_scores_csv(scores_a: &[f64], scores_b: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mask_index", "sc_a", "sc_b"])?;
    for (k, (a, b)) in scores_a.iter().zip(scores_b).enumerate() {
        w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_keeps_the_center() {
        assert_eq!(center_crop(200, 100, 112, 112), (50, 0, 100, 100));
        assert_eq!(center_crop(100, 201, 50, 50), (0, 50, 100, 100));
        assert_eq!(center_crop(64, 64, 112, 112), (0, 0, 64, 64));
    }

    #[test]
    fn half_scale_averages_two_by_two_blocks() {
        let src: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let out = resize_bilinear(&src, 4, 4, 1, 2, 2);
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn png_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f32> = (0..4 * 5 * 3).map(|i| (i as f32 * 0.0173) % 1.0).collect();
        let img = Image::new(4, 5, 3, data).unwrap();
        save_png(&img, &p).unwrap();
        let back = load_image(&p, img.dims()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn missing_and_undecodable_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.png");
        assert!(matches!(
            load_image(&missing, ImageDims::standard()),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(load_image(&junk, ImageDims::standard()).is_err());
    }
}
