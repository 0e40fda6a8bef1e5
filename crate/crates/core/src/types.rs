//! Shared domain types: images, masks, embeddings, signed saliency maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial and channel shape shared by every image in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageDims {
            height,
            width,
            channels,
        }
    }

    /// 112×112 RGB, the standard face-crop geometry.
    pub const fn standard() -> Self {
        ImageDims::new(112, 112, 3)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// H×W×C float image with values in [0, 1], row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    dims: ImageDims,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let dims = ImageDims::new(height, width, channels);
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::PixelRange { index, value });
        }
        Ok(Image { dims, data })
    }

    pub fn filled(dims: ImageDims, value: f32) -> Result<Self> {
        Image::new(
            dims.height,
            dims.width,
            dims.channels,
            vec![value; dims.len()],
        )
    }

    pub fn zeros(dims: ImageDims) -> Self {
        Image {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    /// Internal constructor for buffers already known to be in range.
    pub(crate) fn from_trusted(dims: ImageDims, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Image { dims, data }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.dims.width + x) * self.dims.channels + c]
    }

    /// Replicates a grayscale image to `channels` channels; other conversions
    /// are rejected.
    pub fn with_channels(self, channels: usize) -> Result<Image> {
        match (self.dims.channels, channels) {
            (a, b) if a == b => Ok(self),
            (1, 3) => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Ok(Image::from_trusted(
                    ImageDims::new(self.dims.height, self.dims.width, 3),
                    data,
                ))
            }
            (a, b) => Err(Error::Dimension(format!(
                "cannot convert a {a}-channel image to {b} channels"
            ))),
        }
    }

    pub(crate) fn same_grid(&self, height: usize, width: usize) -> Result<()> {
        if self.dims.height != height || self.dims.width != width {
            return Err(Error::Dimension(format!(
                "expected {height}x{width}, got {}x{}",
                self.dims.height, self.dims.width
            )));
        }
        Ok(())
    }
}

/// Spatial multiplier with values in [0, 1]; broadcast across channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.values.iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.values.len() as f64
    }
}

/// Unit-norm feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalizes raw features; an all-zero (or non-finite) vector is
    /// rejected as degenerate.
    pub fn from_raw(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateEmbedding);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Cosine similarity of two unit-norm embeddings, clamped to [−1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Per-mask similarity scores of one image of a pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreList(pub Vec<f64>);

impl ScoreList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Single-channel H×W map. Values are raw Pearson coefficients for
/// CorrRISE output; positive marks similarity evidence, negative
/// dissimilarity.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(SaliencyMap {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        SaliencyMap {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Row-major index of the largest value; ties resolve to the first.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Pixelwise mean of equally sized maps.
pub fn average_maps(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("no saliency maps to average".into()))?;
    let mut acc = vec![0.0f64; first.values.len()];
    for m in maps {
        if m.height != first.height || m.width != first.width {
            return Err(Error::Dimension(format!(
                "cannot average {}x{} with {}x{}",
                first.height, first.width, m.height, m.width
            )));
        }
        acc.iter_mut()
            .zip(&m.values)
            .for_each(|(a, &v)| *a += f64::from(v));
    }
    let n = maps.len() as f64;
    SaliencyMap::new(
        first.height,
        first.width,
        acc.into_iter().map(|v| (v / n) as f32).collect(),
    )
}

/// Splits a signed map into its positive part and the magnitude of its
/// negative part. `plus - minus` reproduces the input exactly.
pub fn split_saliency(map: &SaliencyMap) -> (SaliencyMap, SaliencyMap) {
    let plus = map.map(|v| if v > 0.0 { v } else { 0.0 });
    let minus = map.map(|v| if v < 0.0 { -v } else { 0.0 });
    (plus, minus)
}
