use crate::error::{Error, Result};
use crate::types::{Image, SaliencyMap};

/// Permutation of the row-major pixel indices of an H×W grid, most salient
/// first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelOrder {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<usize>,
}

impl PixelOrder {
    /// Number of pixels modified at `fraction`: `round(fraction · H · W)`.
    pub fn count(&self, fraction: f64) -> usize {
        let n = self.indices.len();
        ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n)
    }

    pub fn head(&self, fraction: f64) -> &[usize] {
        &self.indices[..self.count(fraction)]
    }
}

/// Pixels by descending value; equal values keep row-major order.
pub fn rank_pixels(map: &SaliencyMap) -> PixelOrder {
    let mut indices: Vec<usize> = (0..map.values.len()).collect();
    // +0.0 folds -0.0 into 0.0 so signed zeros tie
    indices.sort_by(|&i, &j| {
        let (a, b) = (map.values[i] + 0.0, map.values[j] + 0.0);
        b.total_cmp(&a).then(i.cmp(&j))
    });
    PixelOrder {
        height: map.height,
        width: map.width,
        indices,
    }
}

fn check(image: &Image, order: &PixelOrder) -> Result<()> {
    if (image.height(), image.width()) != (order.height, order.width) {
        return Err(Error::Dimension(format!(
            "order is for {}x{}, image is {}x{}",
            order.height,
            order.width,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Zeroes the first `round(fraction · H · W)` ranked pixels in every channel.
pub fn delete_pixels(image: &Image, order: &PixelOrder, fraction: f64) -> Result<Image> {
    check(image, order)?;
    let c = image.channels();
    let mut data = image.data().to_vec();
    for &p in order.head(fraction) {
        data[p * c..(p + 1) * c].fill(0.0);
    }
    Ok(Image::from_trusted(image.dims(), data))
}

/// Copies the first `round(fraction · H · W)` ranked pixels of `source` into
/// `base`.
pub fn insert_pixels(
    base: &Image,
    source: &Image,
    order: &PixelOrder,
    fraction: f64,
) -> Result<Image> {
    check(source, order)?;
    if base.dims() != source.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            base.dims(),
            source.dims()
        )));
    }
    let c = source.channels();
    let mut data = base.data().to_vec();
    for &p in order.head(fraction) {
        data[p * c..(p + 1) * c].copy_from_slice(&source.data()[p * c..(p + 1) * c]);
    }
    Ok(Image::from_trusted(base.dims(), data))
}
