//! Synthetic identities with planted differences.
//!
//! Every subject has a base pattern of smooth colored blobs. Its variants
//! add their own faint background clutter and pixel noise, so same-subject
//! images agree on structure but not on pixels. A planted pair couples a
//! subject's first variant with a copy of itself whose square patch, placed
//! on a dark region, is overwritten with bright noise: the only
//! dissimilarity is at known coordinates.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalPair, Labelled};
use crate::io::save_png;
use crate::seed;
use crate::types::{Image, ImageDims};

const BACKGROUND: f64 = 0.05;
const NOISE: f64 = 0.02;
const BASE_BLOBS: usize = 6;
const CLUTTER_BLOBS: usize = 4;
const DARK: f64 = 0.2;
const PLACEMENT_TRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySetConfig {
    pub subjects: usize,
    pub images_per_subject: usize,
    pub dims: ImageDims,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for ToySetConfig {
    fn default() -> Self {
        ToySetConfig {
            subjects: 10,
            images_per_subject: 4,
            dims: ImageDims::standard(),
            patch_size: 24,
            seed: 0,
        }
    }
}

impl ToySetConfig {
    fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::config("subjects", "must be at least 1"));
        }
        if self.images_per_subject < 2 {
            return Err(Error::config(
                "images_per_subject",
                "must be at least 2 to form matching pairs",
            ));
        }
        let (h, w) = (self.dims.height, self.dims.width);
        if h < 32 || w < 32 {
            return Err(Error::config(
                "dims",
                format!("must be at least 32x32, got {h}x{w}"),
            ));
        }
        if self.patch_size == 0 || self.patch_size > h.min(w) {
            return Err(Error::config(
                "patch_size",
                format!("must lie in [1, {}]", h.min(w)),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyImage {
    /// Path relative to the set's root directory.
    pub name: String,
    pub identity: String,
    pub image: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl Patch {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.size).contains(&y)
            && (self.left..self.left + self.size).contains(&x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPair {
    pub a: usize,
    pub b: usize,
    pub matching: bool,
    /// Where image `b` differs from `a`, for planted pairs.
    pub planted: Option<Patch>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySet {
    pub config: ToySetConfig,
    pub images: Vec<ToyImage>,
    pub pairs: Vec<ToyPair>,
}

fn quantize(v: f64) -> f32 {
    // same arithmetic as decoding an 8-bit file, so PNG round trips are exact
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// Sum of `count` Gaussian blobs, accumulated into `acc` (H×W×C).
fn add_blobs(
    acc: &mut [f64],
    dims: ImageDims,
    rng: &mut ChaCha8Rng,
    count: usize,
    sigma: (f64, f64),
    amplitude: (f64, f64),
) {
    let (h, w, c) = (dims.height, dims.width, dims.channels);
    for _ in 0..count {
        let cy = rng.random_range(12.0..(h as f64 - 12.0));
        let cx = rng.random_range(12.0..(w as f64 - 12.0));
        let s = rng.random_range(sigma.0..sigma.1);
        let color: Vec<f64> = (0..c)
            .map(|_| rng.random_range(amplitude.0..amplitude.1))
            .collect();
        let inv = 1.0 / (2.0 * s * s);
        let gy: Vec<f64> = (0..h)
            .map(|y| (-(y as f64 - cy).powi(2) * inv).exp())
            .collect();
        let gx: Vec<f64> = (0..w)
            .map(|x| (-(x as f64 - cx).powi(2) * inv).exp())
            .collect();
        for (y, &vy) in gy.iter().enumerate() {
            for (x, &vx) in gx.iter().enumerate() {
                let g = vy * vx;
                let px = &mut acc[(y * w + x) * c..(y * w + x + 1) * c];
                for (p, &col) in px.iter_mut().zip(&color) {
                    *p += g * col;
                }
            }
        }
    }
}

fn patch_mean(image: &Image, p: Patch) -> f64 {
    let (w, c) = (image.width(), image.channels());
    let mut sum = 0.0;
    for y in p.top..p.top + p.size {
        let row = &image.data()[(y * w + p.left) * c..(y * w + p.left + p.size) * c];
        sum += row.iter().map(|&v| f64::from(v)).sum::<f64>();
    }
    sum / (p.size * p.size * c) as f64
}

/// First random position whose patch is dark, else the darkest one tried.
fn place_patch(image: &Image, size: usize, rng: &mut ChaCha8Rng) -> Patch {
    let mut best: Option<(f64, Patch)> = None;
    for _ in 0..PLACEMENT_TRIES {
        let p = Patch {
            top: rng.random_range(0..=image.height() - size),
            left: rng.random_range(0..=image.width() - size),
            size,
        };
        let mean = patch_mean(image, p);
        if best.is_none_or(|(m, _)| mean < m) {
            best = Some((mean, p));
        }
        if mean < DARK {
            break;
        }
    }
    best.expect("at least one try").1
}

fn plant(image: &Image, p: Patch, rng: &mut ChaCha8Rng) -> Image {
    let (w, c) = (image.width(), image.channels());
    let mut data = image.data().to_vec();
    for y in p.top..p.top + p.size {
        for v in &mut data[(y * w + p.left) * c..(y * w + p.left + p.size) * c] {
            *v = quantize(rng.random_range(0.8..1.0));
        }
    }
    Image::from_trusted(image.dims(), data)
}

impl ToySet {
    pub fn generate(config: ToySetConfig) -> Result<ToySet> {
        config.validate()?;
        let dims = config.dims;
        let noise = Normal::new(0.0, NOISE).expect("valid deviation");
        let mut images = Vec::new();
        let mut pairs = Vec::new();
        for s in 0..config.subjects {
            let mut rng = seed::stream(config.seed, "toyset", s as u64);
            let mut base = vec![0.0f64; dims.len()];
            add_blobs(
                &mut base,
                dims,
                &mut rng,
                BASE_BLOBS,
                (5.0, 10.0),
                (0.4, 0.9),
            );
            let first = images.len();
            for v in 0..config.images_per_subject {
                let mut px: Vec<f64> = base.iter().map(|b| b + BACKGROUND).collect();
                add_blobs(
                    &mut px,
                    dims,
                    &mut rng,
                    CLUTTER_BLOBS,
                    (10.0, 16.0),
                    (0.08, 0.16),
                );
                let data = px
                    .into_iter()
                    .map(|p| quantize(p + noise.sample(&mut rng)))
                    .collect();
                images.push(ToyImage {
                    name: format!("images/s{s:03}_v{v:02}.png"),
                    identity: format!("s{s:03}"),
                    image: Image::from_trusted(dims, data),
                });
            }
            for i in 0..config.images_per_subject {
                for j in i + 1..config.images_per_subject {
                    pairs.push(ToyPair {
                        a: first + i,
                        b: first + j,
                        matching: true,
                        planted: None,
                    });
                }
            }
        }
        for s in 0..config.subjects {
            let base = s * config.images_per_subject;
            let mut rng = seed::stream(config.seed, "toyset-plant", s as u64);
            let patch = place_patch(&images[base].image, config.patch_size, &mut rng);
            let planted = plant(&images[base].image, patch, &mut rng);
            images.push(ToyImage {
                name: format!("planted/s{s:03}_p.png"),
                identity: format!("s{s:03}p"),
                image: planted,
            });
            pairs.push(ToyPair {
                a: base,
                b: images.len() - 1,
                matching: false,
                planted: Some(patch),
            });
        }
        Ok(ToySet {
            config,
            images,
            pairs,
        })
    }

    pub fn eval_pairs(&self) -> Vec<EvalPair> {
        self.pairs
            .iter()
            .map(|p| EvalPair {
                a: self.images[p.a].image.clone(),
                b: self.images[p.b].image.clone(),
                matching: p.matching,
                name_a: self.images[p.a].name.clone(),
                name_b: self.images[p.b].name.clone(),
            })
            .collect()
    }

    fn labelled(&self, keep: impl Fn(usize) -> bool) -> Vec<Labelled> {
        let m = self.config.images_per_subject;
        (0..self.config.subjects * m)
            .filter(|&i| keep(i % m))
            .map(|i| Labelled {
                image: self.images[i].image.clone(),
                identity: self.images[i].identity.clone(),
                name: self.images[i].name.clone(),
            })
            .collect()
    }

    /// First variant of every subject.
    pub fn gallery(&self) -> Vec<Labelled> {
        self.labelled(|v| v == 0)
    }

    /// Remaining variants of every subject.
    pub fn probes(&self) -> Vec<Labelled> {
        self.labelled(|v| v != 0)
    }

    /// Writes images, `pairs.txt`, `gallery.txt`, `probes.txt` and
    /// `toyset.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for sub in ["images", "planted"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for im in &self.images {
            save_png(&im.image, &dir.join(&im.name))?;
        }
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let pairs: String = self
            .pairs
            .iter()
            .map(|p| {
                format!(
                    "{}\t{}\t{}\n",
                    self.images[p.a].name,
                    self.images[p.b].name,
                    u8::from(p.matching)
                )
            })
            .collect();
        write("pairs.txt", pairs)?;
        let manifest = |items: Vec<Labelled>| -> String {
            items
                .iter()
                .map(|l| format!("{}\t{}\n", l.name, l.identity))
                .collect()
        };
        write("gallery.txt", manifest(self.gallery()))?;
        write("probes.txt", manifest(self.probes()))?;
        let planted: Vec<PlantedRecord> = self
            .pairs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                p.planted.map(|patch| PlantedRecord {
                    pair: i,
                    base: self.images[p.a].name.clone(),
                    image: self.images[p.b].name.clone(),
                    top: patch.top,
                    left: patch.left,
                    size: patch.size,
                })
            })
            .collect();
        let meta = ToySetMeta {
            config: self.config,
            images: self.images.len(),
            pairs: self.pairs.len(),
            planted,
        };
        write("toyset.json", serde_json::to_string_pretty(&meta)? + "\n")
    }
}

/// Contents of `toyset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySetMeta {
    pub config: ToySetConfig,
    pub images: usize,
    pub pairs: usize,
    pub planted: Vec<PlantedRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecord {
    /// Line index in `pairs.txt`.
    pub pair: usize,
    pub base: String,
    pub image: String,
    pub top: usize,
    pub left: usize,
    pub size: usize,
}
