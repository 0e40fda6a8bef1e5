//! Random square-patch perturbation masks.
//!
//! Every mask starts as all ones. `patches_per_mask` square patches are then
//! stamped at uniformly random integer positions; later patches overwrite
//! earlier ones where they overlap. What goes inside a patch is decided by a
//! [`PatchFill`] strategy selected by [`MaskType`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Image, Mask};

const STREAM: &str = "maskgen";

/// Fills the interior of one patch.
pub trait PatchFill: Send + Sync {
    fn name(&self) -> &'static str;

    /// Writes `out.len()` patch values, row-major.
    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f32]);
}

/// Zero-valued patches; the resulting masks are binary.
pub struct BinaryFill;

/// I.i.d. uniform [0, 1] patch values.
pub struct UniformFill;

/// I.i.d. Normal(0.5, 0.25²) patch values clamped to [0, 1].
pub struct GaussianFill {
    dist: Normal<f32>,
}

impl Default for GaussianFill {
    fn default() -> Self {
        GaussianFill {
            dist: Normal::new(0.5, 0.25).expect("valid normal parameters"),
        }
    }
}

impl PatchFill for BinaryFill {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn fill(&self, _rng: &mut ChaCha8Rng, out: &mut [f32]) {
        out.fill(0.0);
    }
}

impl PatchFill for UniformFill {
    fn name(&self) -> &'static str {
        "random"
    }

    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f32]) {
        out.iter_mut().for_each(|v| *v = rng.random::<f32>());
    }
}

impl PatchFill for GaussianFill {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f32]) {
        out.iter_mut()
            .for_each(|v| *v = self.dist.sample(rng).clamp(0.0, 1.0));
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskType {
    #[default]
    Binary,
    Random,
    Gaussian,
}

impl MaskType {
    pub const ALL: [MaskType; 3] = [MaskType::Binary, MaskType::Random, MaskType::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            MaskType::Binary => "binary",
            MaskType::Random => "random",
            MaskType::Gaussian => "gaussian",
        }
    }

    pub fn fill(self) -> Box<dyn PatchFill> {
        match self {
            MaskType::Binary => Box::new(BinaryFill),
            MaskType::Random => Box::new(UniformFill),
            MaskType::Gaussian => Box::new(GaussianFill::default()),
        }
    }
}

impl fmt::Display for MaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "mask type",
                name: s.to_string(),
                known: "binary, random, gaussian".into(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskGenConfig {
    pub num_masks: usize,
    pub patches_per_mask: usize,
    pub patch_size: usize,
    pub mask_type: MaskType,
}

impl Default for MaskGenConfig {
    /// 1000 masks of ten 30×30 zero patches.
    fn default() -> Self {
        MaskGenConfig {
            num_masks: 1000,
            patches_per_mask: 10,
            patch_size: 30,
            mask_type: MaskType::Binary,
        }
    }
}

impl MaskGenConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.num_masks == 0 {
            return Err(Error::config("num_masks", "must be at least 1"));
        }
        if self.patches_per_mask == 0 {
            return Err(Error::config("patches_per_mask", "must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size > height.min(width) {
            return Err(Error::config(
                "patch_size",
                format!(
                    "must lie in [1, {}] for {height}x{width} images, got {}",
                    height.min(width),
                    self.patch_size
                ),
            ));
        }
        Ok(())
    }
}

/// A generated mask set together with the inputs that reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<Mask>,
    pub config: MaskGenConfig,
    pub seed: u64,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Stateless generator for mask `index` of a run; masks can be produced in
/// any order.
pub struct MaskGenerator {
    config: MaskGenConfig,
    height: usize,
    width: usize,
    seed: u64,
    fill: Box<dyn PatchFill>,
}

impl MaskGenerator {
    pub fn new(config: MaskGenConfig, dims: (usize, usize), seed: u64) -> Result<Self> {
        config.validate(dims.0, dims.1)?;
        Ok(MaskGenerator {
            config,
            height: dims.0,
            width: dims.1,
            seed,
            fill: config.mask_type.fill(),
        })
    }

    pub fn config(&self) -> &MaskGenConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.config.num_masks
    }

    pub fn is_empty(&self) -> bool {
        self.config.num_masks == 0
    }

    pub fn mask(&self, index: usize) -> Mask {
        let (h, w, ps) = (self.height, self.width, self.config.patch_size);
        let mut rng = seed::stream(self.seed, STREAM, index as u64);
        let mut mask = Mask::ones(h, w);
        let mut patch = vec![0.0f32; ps * ps];
        for _ in 0..self.config.patches_per_mask {
            let top = rng.random_range(0..=h - ps);
            let left = rng.random_range(0..=w - ps);
            self.fill.fill(&mut rng, &mut patch);
            for (dy, row) in patch.chunks_exact(ps).enumerate() {
                let start = (top + dy) * w + left;
                mask.values[start..start + ps].copy_from_slice(row);
            }
        }
        mask
    }

    /// Masks `range.start..range.end`, computed in parallel, returned in index
    /// order.
    pub fn masks(&self, range: std::ops::Range<usize>) -> Vec<Mask> {
        range.into_par_iter().map(|k| self.mask(k)).collect()
    }
}

pub fn generate_masks(config: MaskGenConfig, dims: (usize, usize), seed: u64) -> Result<MaskSet> {
    let generator = MaskGenerator::new(config, dims, seed)?;
    Ok(MaskSet {
        masks: generator.masks(0..config.num_masks),
        config,
        seed,
    })
}

/// `image ⊙ mask`, with the mask broadcast across channels.
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    image.same_grid(mask.height, mask.width)?;
    let c = image.channels();
    let data = image
        .data()
        .chunks_exact(c)
        .zip(&mask.values)
        .flat_map(|(px, &m)| px.iter().map(move |&v| v * m))
        .collect();
    Ok(Image::from_trusted(image.dims(), data))
}
