//! Deletion/insertion scoring of saliency maps through a recognition task.
//!
//! Pixels are ranked by (blurred) saliency; at fractions `k/n` the top
//! pixels are zeroed (deletion) or copied onto a blank image (insertion),
//! and the task metric is recomputed. A faithful map makes deletion fall
//! fast and insertion rise fast.

mod blur;
mod lists;
mod surgery;
mod threshold;

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrrise::rank_gallery;
use crate::embedder::{embed_lenient, lenient_score, Embedder};
use crate::error::{Error, Result};
use crate::saliency::{MapKind, MapSource, PairRef};
use crate::types::{average_maps, Embedding, Image, SaliencyMap};

pub use blur::{blur_saliency, gaussian_kernel};
pub use lists::{load_manifest, parse_manifest, ManifestEntry, PairEntry, PairList};
pub use surgery::{delete_pixels, insert_pixels, rank_pixels, PixelOrder};
pub use threshold::{accuracy_at, calibrate_threshold, Threshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Deletion,
    Insertion,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Deletion => "deletion",
            Mode::Insertion => "insertion",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deletion" => Ok(Mode::Deletion),
            "insertion" => Ok(Mode::Insertion),
            _ => Err(Error::Unknown {
                kind: "mode",
                name: s.to_string(),
                known: "deletion, insertion".into(),
            }),
        }
    }
}

/// Metric values at fractions `k/n`, `k = 1..=n`, with their mean as AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl EvalCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Ok(EvalCurve {
            fractions: fractions(n),
            auc: auc(&values)?,
            values,
        })
    }
}

pub fn fractions(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / n as f64).collect()
}

/// Rectangle-rule area under uniformly spaced samples: their mean.
pub fn auc(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("curve has no values".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub steps: usize,
    /// Blur applied to maps before ranking; 0 disables it.
    pub sigma: f64,
    pub mode: Mode,
    /// Images per embedder call.
    pub batch_size: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            steps: 20,
            sigma: 4.0,
            mode: Mode::Deletion,
            batch_size: 64,
        }
    }
}

impl CurveOptions {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(
                "sigma",
                format!("must be finite and non-negative, got {}", self.sigma),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// A loaded verification pair.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub a: Image,
    pub b: Image,
    pub matching: bool,
    pub name_a: String,
    pub name_b: String,
}

impl EvalPair {
    fn as_ref(&self, index: usize) -> PairRef<'_> {
        PairRef {
            index,
            a: &self.a,
            b: &self.b,
            name_a: &self.name_a,
            name_b: &self.name_b,
        }
    }
}

fn modify(image: &Image, order: &PixelOrder, fraction: f64, mode: Mode) -> Result<Image> {
    match mode {
        Mode::Deletion => delete_pixels(image, order, fraction),
        Mode::Insertion => insert_pixels(&Image::zeros(image.dims()), image, order, fraction),
    }
}

/// Lenient embeddings of `images`, chunked and computed in parallel; output
/// follows input order.
fn embed_all(
    embedder: &dyn Embedder,
    images: &[Image],
    batch: usize,
) -> Result<Vec<Option<Embedding>>> {
    let chunks: Vec<Result<Vec<Option<Embedding>>>> = images
        .par_chunks(batch)
        .map(|c| embed_lenient(embedder, c))
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn pair_scores(
    embedder: &dyn Embedder,
    a: &[Image],
    b: &[Image],
    batch: usize,
) -> Result<Vec<f64>> {
    let ea = embed_all(embedder, a, batch)?;
    let eb = embed_all(embedder, b, batch)?;
    ea.iter()
        .zip(&eb)
        .map(|(x, y)| lenient_score(x.as_ref(), y.as_ref()))
        .collect()
}

/// Threshold maximizing accuracy on the unmodified pairs.
pub fn calibrate_on_pairs(
    pairs: &[EvalPair],
    embedder: &dyn Embedder,
    batch: usize,
) -> Result<Threshold> {
    let a: Vec<Image> = pairs.iter().map(|p| p.a.clone()).collect();
    let b: Vec<Image> = pairs.iter().map(|p| p.b.clone()).collect();
    let scores = pair_scores(embedder, &a, &b, batch.max(1))?;
    let labelled: Vec<(f64, bool)> = scores
        .into_iter()
        .zip(pairs.iter().map(|p| p.matching))
        .collect();
    calibrate_threshold(&labelled)
}

fn order_of(map: &SaliencyMap, sigma: f64) -> PixelOrder {
    rank_pixels(&blur_saliency(map, sigma))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub curve: EvalCurve,
    pub threshold: Threshold,
    pub kind: MapKind,
    pub mode: Mode,
    /// Number of pairs the curve was computed on.
    pub pairs: usize,
}

/// Deletion or insertion curve of verification accuracy.
///
/// Similarity maps are scored on the matching pairs, dissimilarity maps on
/// the non-matching ones, signed maps on all. Both images of every pair are
/// modified, each by its own map. The threshold is fixed beforehand; when
/// not given it is calibrated on the unmodified pair list.
pub fn verification_metric(
    pairs: &[EvalPair],
    source: &dyn MapSource,
    embedder: &dyn Embedder,
    kind: MapKind,
    opts: &CurveOptions,
    threshold: Option<Threshold>,
) -> Result<VerificationReport> {
    opts.validate()?;
    let threshold = match threshold {
        Some(t) => t,
        None => calibrate_on_pairs(pairs, embedder, opts.batch_size)?,
    };
    let selected: Vec<usize> = (0..pairs.len())
        .filter(|&i| match kind {
            MapKind::Similarity => pairs[i].matching,
            MapKind::Dissimilarity => !pairs[i].matching,
            MapKind::Signed => true,
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Empty(format!("no pairs to evaluate {kind} maps on")));
    }
    debug!(
        "{} {kind} maps from {} on {} pairs",
        opts.mode,
        source.name(),
        selected.len()
    );

    let orders = selected
        .iter()
        .map(|&i| {
            let [ma, mb] = source.pair_maps(&pairs[i].as_ref(i), kind)?;
            Ok([order_of(&ma, opts.sigma), order_of(&mb, opts.sigma)])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::with_capacity(opts.steps);
    for p in fractions(opts.steps) {
        let (a, b): (Vec<Image>, Vec<Image>) = selected
            .par_iter()
            .zip(&orders)
            .map(|(&i, [oa, ob])| {
                Ok((
                    modify(&pairs[i].a, oa, p, opts.mode)?,
                    modify(&pairs[i].b, ob, p, opts.mode)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let scores = pair_scores(embedder, &a, &b, opts.batch_size)?;
        let correct = scores
            .iter()
            .zip(&selected)
            .filter(|&(&s, &i)| (s >= threshold.value) == pairs[i].matching)
            .count();
        values.push(correct as f64 / selected.len() as f64);
    }
    Ok(VerificationReport {
        curve: EvalCurve::new(values)?,
        threshold,
        kind,
        mode: opts.mode,
        pairs: selected.len(),
    })
}

/// Labelled image for identification.
#[derive(Clone, Debug)]
pub struct Labelled {
    pub image: Image,
    pub identity: String,
    pub name: String,
}

/// Probe map for identification: the mean of the probe-side signed maps
/// against the probe's top-`k` gallery matches.
///
/// Pair indices passed to the source are `probe · |gallery| + gallery index`.
pub fn probe_maps(
    probes: &[Labelled],
    gallery: &[Labelled],
    k: usize,
    source: &dyn MapSource,
    embedder: &dyn Embedder,
    batch: usize,
) -> Result<Vec<SaliencyMap>> {
    if gallery.is_empty() {
        return Err(Error::Empty("gallery has no entries".into()));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::config(
            "top_k",
            format!("must lie in [1, {}], got {k}", gallery.len()),
        ));
    }
    let g_images: Vec<Image> = gallery.iter().map(|g| g.image.clone()).collect();
    let g_emb = embed_all(embedder, &g_images, batch.max(1))?;
    let p_images: Vec<Image> = probes.iter().map(|p| p.image.clone()).collect();
    let p_emb = embed_all(embedder, &p_images, batch.max(1))?;
    probes
        .iter()
        .zip(&p_emb)
        .enumerate()
        .map(|(pi, (probe, emb))| {
            let emb = emb.as_ref().ok_or(Error::DegenerateEmbedding)?;
            let maps = rank_gallery(emb, &g_emb)?
                .into_iter()
                .take(k)
                .map(|m| {
                    let g = &gallery[m.index];
                    let pair = PairRef {
                        index: pi * gallery.len() + m.index,
                        a: &probe.image,
                        b: &g.image,
                        name_a: &probe.name,
                        name_b: &g.name,
                    };
                    let [pa, _] = source.pair_maps(&pair, MapKind::Signed)?;
                    Ok(pa)
                })
                .collect::<Result<Vec<_>>>()?;
            average_maps(&maps)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub curve: EvalCurve,
    pub mode: Mode,
    pub rank_n: usize,
    /// Probes the curve was computed on.
    pub probes: usize,
    /// Indices of probes whose identity has no gallery entry.
    pub excluded: Vec<usize>,
}

/// Rank-N identification rate as each probe is modified by its map; the
/// gallery stays intact.
pub fn identification_metric(
    probes: &[Labelled],
    maps: &[SaliencyMap],
    gallery: &[Labelled],
    embedder: &dyn Embedder,
    rank_n: usize,
    opts: &CurveOptions,
) -> Result<IdentificationReport> {
    opts.validate()?;
    if gallery.is_empty() {
        return Err(Error::Empty("gallery has no entries".into()));
    }
    if rank_n == 0 {
        return Err(Error::config("rank_n", "must be at least 1"));
    }
    if maps.len() != probes.len() {
        return Err(Error::Dimension(format!(
            "{} maps for {} probes",
            maps.len(),
            probes.len()
        )));
    }
    let (included, excluded): (Vec<usize>, Vec<usize>) =
        (0..probes.len()).partition(|&i| gallery.iter().any(|g| g.identity == probes[i].identity));
    for &i in &excluded {
        warn!(
            "probe {} ({}) excluded: identity `{}` has no gallery entry",
            i, probes[i].name, probes[i].identity
        );
    }
    if included.is_empty() {
        return Err(Error::Empty(
            "no probe identity appears in the gallery".into(),
        ));
    }
    let g_images: Vec<Image> = gallery.iter().map(|g| g.image.clone()).collect();
    let g_emb = embed_all(embedder, &g_images, opts.batch_size)?;
    let orders: Vec<PixelOrder> = included
        .iter()
        .map(|&i| order_of(&maps[i], opts.sigma))
        .collect();

    let mut values = Vec::with_capacity(opts.steps);
    for p in fractions(opts.steps) {
        let modified = included
            .par_iter()
            .zip(&orders)
            .map(|(&i, o)| modify(&probes[i].image, o, p, opts.mode))
            .collect::<Result<Vec<_>>>()?;
        let emb = embed_all(embedder, &modified, opts.batch_size)?;
        let mut hits = 0;
        for (&i, e) in included.iter().zip(&emb) {
            let hit = match e {
                // a blank probe ranks every entry at 0: ties keep gallery order
                Some(e) => rank_gallery(e, &g_emb)?,
                None => rank_gallery_blank(gallery.len()),
            }
            .iter()
            .take(rank_n)
            .any(|m| gallery[m.index].identity == probes[i].identity);
            hits += usize::from(hit);
        }
        values.push(hits as f64 / included.len() as f64);
    }
    Ok(IdentificationReport {
        curve: EvalCurve::new(values)?,
        mode: opts.mode,
        rank_n,
        probes: included.len(),
        excluded,
    })
}

fn rank_gallery_blank(n: usize) -> Vec<crate::corrrise::RankedMatch> {
    (0..n)
        .map(|i| crate::corrrise::RankedMatch {
            rank: i + 1,
            index: i,
            score: 0.0,
        })
        .collect()
}
