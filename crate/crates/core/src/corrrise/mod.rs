//! CorrRISE: perturbation scores correlated pixel by pixel with the masks
//! that produced them.
//!
//! For a pair `(A, B)` and masks `M_1..M_N`, image A is scored as
//! `SC_A[k] = cos(f(A ⊙ M_k), f(B))` with the counterpart left intact, and
//! `S_A(i, j)` is the Pearson correlation between `M_k(i, j)` and `SC_A[k]`
//! over k. Occluding a region whose presence supports the match lowers the
//! score, so supporting regions correlate positively (similarity) and
//! contradicting regions negatively (dissimilarity).

mod identify;
mod pearson;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{embed_lenient, lenient_score, Embedder};
use crate::error::{Error, Result};
use crate::maskgen::{apply_mask, MaskGenConfig, MaskGenerator};
use crate::types::{
    cosine_similarity, split_saliency, Embedding, Image, Mask, SaliencyMap, ScoreList,
};

pub use identify::{explain_identification, rank_gallery, RankedExplanation, RankedMatch};
pub use pearson::{pixelwise_pearson, PearsonAccumulator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub mask_config: MaskGenConfig,
    pub seed: u64,
    /// Add the λ-weighted counterpart-filled score to every perturbed score.
    pub regularization: bool,
    /// When set, pairs scoring at or above it are treated as matching and
    /// explained without regularization.
    pub regularization_threshold: Option<f64>,
    /// Masked images per embedder call.
    pub batch_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            mask_config: MaskGenConfig::default(),
            seed: 0,
            regularization: false,
            regularization_threshold: None,
            batch_size: 64,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.mask_config.validate(height, width)?;
        if self.mask_config.num_masks < 2 {
            return Err(Error::InsufficientSamples(self.mask_config.num_masks));
        }
        Ok(())
    }
}

/// Signed maps for both images of a pair, their splits, and the raw score
/// lists they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExplanation {
    pub signed_a: SaliencyMap,
    pub signed_b: SaliencyMap,
    pub plus_a: SaliencyMap,
    pub minus_a: SaliencyMap,
    pub plus_b: SaliencyMap,
    pub minus_b: SaliencyMap,
    /// Cosine of the unperturbed pair.
    pub score: f64,
    pub scores_a: ScoreList,
    pub scores_b: ScoreList,
    /// Regularization weight, if regularization was applied.
    pub lambda: Option<f64>,
}

/// `λ = (b − 1)/(b + 1)` with the base score clamped to [0, 1], so λ always
/// lies in [−1, 0].
pub fn regularization_lambda(base_score: f64) -> f64 {
    let b = base_score.clamp(0.0, 1.0);
    if b != base_score {
        warn!(
            "base score {base_score} outside [0, 1]; clamped to {b} for the regularization weight"
        );
    }
    (b - 1.0) / (b + 1.0)
}

/// `a ⊙ (1 − m) + b ⊙ m`: the occluded part of `a` filled from `b`.
fn counterpart_fill(a: &Image, b: &Image, mask: &Mask) -> Result<Image> {
    a.same_grid(mask.height, mask.width)?;
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let c = a.channels();
    let data = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .zip(&mask.values)
        .flat_map(|((pa, pb), &m)| {
            pa.iter()
                .zip(pb)
                .map(move |(&x, &y)| (x * (1.0 - m) + y * m).clamp(0.0, 1.0))
        })
        .collect();
    Ok(Image::from_trusted(a.dims(), data))
}

/// Regularized perturbation score of `a` under `mask` against `b`:
/// `cos(f(a ⊙ m), f(b)) + λ · cos(f(a ⊙ (1 − m) + b ⊙ m), f(b))`.
pub fn regularized_score(
    a: &Image,
    b: &Image,
    mask: &Mask,
    embedder: &dyn Embedder,
    base_score: f64,
) -> Result<f64> {
    let lambda = regularization_lambda(base_score);
    let x_b = embedder
        .embed(std::slice::from_ref(b))?
        .pop()
        .expect("one embedding per image");
    let scores = score_masked(
        a,
        b,
        &x_b,
        std::slice::from_ref(mask),
        embedder,
        Some(lambda),
        2,
    )?;
    Ok(scores[0])
}

/// Scores of `image ⊙ m` against `counterpart` for each mask, in mask order.
fn score_masked(
    image: &Image,
    other: &Image,
    counterpart: &Embedding,
    masks: &[Mask],
    embedder: &dyn Embedder,
    lambda: Option<f64>,
    batch: usize,
) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = masks
        .par_chunks(batch)
        .map(|chunk| {
            let masked = chunk
                .iter()
                .map(|m| apply_mask(image, m))
                .collect::<Result<Vec<_>>>()?;
            let mut scores = embed_lenient(embedder, &masked)?
                .iter()
                .map(|e| lenient_score(e.as_ref(), Some(counterpart)))
                .collect::<Result<Vec<_>>>()?;
            if let Some(lambda) = lambda {
                let filled = chunk
                    .iter()
                    .map(|m| counterpart_fill(image, other, m))
                    .collect::<Result<Vec<_>>>()?;
                for (s, e) in scores.iter_mut().zip(embed_lenient(embedder, &filled)?) {
                    *s += lambda * lenient_score(e.as_ref(), Some(counterpart))?;
                }
            }
            Ok(scores)
        })
        .collect();
    let mut out = Vec::with_capacity(masks.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Explains the decision on `(a, b)`.
///
/// Masks are generated and scored in streaming chunks; accumulation runs in
/// mask-index order, so the maps do not depend on the number of workers.
pub fn explain_pair(
    a: &Image,
    b: &Image,
    embedder: &dyn Embedder,
    cfg: &ExplainConfig,
) -> Result<PairExplanation> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "pair images differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (h, w) = (a.height(), a.width());
    cfg.validate(h, w)?;
    let generator = MaskGenerator::new(cfg.mask_config, (h, w), cfg.seed)?;
    let n = generator.len();

    let mut base = embedder.embed(&[a.clone(), b.clone()])?;
    let x_b = base.pop().expect("two embeddings");
    let x_a = base.pop().expect("two embeddings");
    let score = cosine_similarity(&x_a, &x_b)?;
    let lambda = match cfg.regularization_threshold {
        _ if !cfg.regularization => None,
        Some(t) if score >= t => None,
        _ => Some(regularization_lambda(score)),
    };
    debug!("explaining pair: score {score:.6}, lambda {lambda:?}, {n} masks");

    let mut acc_a = PearsonAccumulator::new(h, w, score);
    let mut acc_b = PearsonAccumulator::new(h, w, score);
    let mut scores_a = Vec::with_capacity(n);
    let mut scores_b = Vec::with_capacity(n);
    let chunk = cfg.batch_size * rayon::current_num_threads().max(1);
    for start in (0..n).step_by(chunk) {
        let masks = generator.masks(start..(start + chunk).min(n));
        let (sa, sb) = rayon::join(
            || score_masked(a, b, &x_b, &masks, embedder, lambda, cfg.batch_size),
            || score_masked(b, a, &x_a, &masks, embedder, lambda, cfg.batch_size),
        );
        let (sa, sb) = (sa?, sb?);
        for ((m, &s_a), &s_b) in masks.iter().zip(&sa).zip(&sb) {
            acc_a.push(m, s_a)?;
            acc_b.push(m, s_b)?;
        }
        scores_a.extend(sa);
        scores_b.extend(sb);
    }

    let signed_a = acc_a.finish()?;
    let signed_b = acc_b.finish()?;
    let (plus_a, minus_a) = split_saliency(&signed_a);
    let (plus_b, minus_b) = split_saliency(&signed_b);
    Ok(PairExplanation {
        signed_a,
        signed_b,
        plus_a,
        minus_a,
        plus_b,
        minus_b,
        score,
        scores_a: ScoreList(scores_a),
        scores_b: ScoreList(scores_b),
        lambda,
    })
}
