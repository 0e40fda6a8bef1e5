use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::types::{Image, SaliencyMap};

/// 256-entry blue→red lookup table.
pub fn colormap() -> &'static [[f32; 3]; 256] {
    static LUT: OnceLock<[[f32; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0.0f32; 3]; 256];
        let rows = include_str!("../../data/jet256.txt").lines();
        for (entry, line) in lut.iter_mut().zip(rows) {
            for (c, t) in entry.iter_mut().zip(line.split_whitespace()) {
                *c = t.parse().expect("colormap table is well formed");
            }
        }
        lut
    })
}

/// Blends the colorized map over the image.
///
/// Values are divided by the map's max |value| and clamped to [0, 1], so
/// negative values and an all-zero map render as the blue end of the scale.
pub fn render_overlay(image: &Image, map: &SaliencyMap, alpha: f32) -> Result<Image> {
    if (image.height(), image.width()) != (map.height, map.width) {
        return Err(Error::Dimension(format!(
            "map is {}x{}, image is {}x{}",
            map.height,
            map.width,
            image.height(),
            image.width()
        )));
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let rgb = image.clone().with_channels(3)?;
    let lut = colormap();
    let peak = map.max_abs();
    let data = rgb
        .data()
        .chunks_exact(3)
        .zip(&map.values)
        .flat_map(|(px, &v)| {
            let t = if peak > 0.0 {
                (v / peak).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let color = lut[(t * 255.0).round() as usize];
            (0..3).map(move |c| ((1.0 - alpha) * px[c] + alpha * color[c]).clamp(0.0, 1.0))
        })
        .collect();
    Ok(Image::from_trusted(rgb.dims(), data))
}
