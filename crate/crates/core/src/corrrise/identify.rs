use crate::embedder::{embed_lenient, lenient_score, Embedder};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::types::{Embedding, Image};

use super::{explain_pair, ExplainConfig, PairExplanation};

#[derive(Clone, Debug, PartialEq)]
pub struct RankedMatch {
    /// 1-based rank.
    pub rank: usize,
    pub index: usize,
    pub score: f64,
}

/// Sorts gallery entries by cosine to the probe, descending; equal scores
/// keep gallery order. Degenerate gallery embeddings score 0.
pub fn rank_gallery(probe: &Embedding, gallery: &[Option<Embedding>]) -> Result<Vec<RankedMatch>> {
    let mut scored = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((i, lenient_score(Some(probe), g.as_ref())?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(r, (index, score))| RankedMatch {
            rank: r + 1,
            index,
            score,
        })
        .collect())
}

/// One of the top-K gallery matches with the explanation of the
/// (probe, gallery entry) pair: side A is the probe, side B the gallery
/// image.
#[derive(Clone, Debug)]
pub struct RankedExplanation {
    pub rank: usize,
    pub index: usize,
    pub identity: String,
    pub score: f64,
    pub explanation: PairExplanation,
}

pub(crate) fn embed_gallery(
    embedder: &dyn Embedder,
    images: &[&Image],
    batch: usize,
) -> Result<Vec<Option<Embedding>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let owned: Vec<Image> = chunk.iter().map(|&im| im.clone()).collect();
        out.extend(embed_lenient(embedder, &owned)?);
    }
    Ok(out)
}

/// Ranks the gallery against `probe` and explains the top `k` pairs.
///
/// Pair `i` of the gallery uses masks seeded with
/// `derive_seed(cfg.seed, "identify", i)`, so an entry's explanation does
/// not depend on which other entries made the cut.
pub fn explain_identification(
    probe: &Image,
    gallery: &[(Image, String)],
    k: usize,
    embedder: &dyn Embedder,
    cfg: &ExplainConfig,
) -> Result<Vec<RankedExplanation>> {
    if gallery.is_empty() {
        return Err(Error::Empty("gallery has no entries".into()));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::config(
            "top_k",
            format!("must lie in [1, {}], got {k}", gallery.len()),
        ));
    }
    let x_probe = embedder
        .embed(std::slice::from_ref(probe))?
        .pop()
        .expect("one embedding");
    let images: Vec<&Image> = gallery.iter().map(|(im, _)| im).collect();
    let embeddings = embed_gallery(embedder, &images, cfg.batch_size)?;
    let ranking = rank_gallery(&x_probe, &embeddings)?;
    ranking
        .into_iter()
        .take(k)
        .map(|m| {
            let pair_cfg = ExplainConfig {
                seed: derive_seed(cfg.seed, "identify", m.index as u64),
                ..*cfg
            };
            let (image, identity) = &gallery[m.index];
            Ok(RankedExplanation {
                rank: m.rank,
                index: m.index,
                identity: identity.clone(),
                score: m.score,
                explanation: explain_pair(probe, image, embedder, &pair_cfg)?,
            })
        })
        .collect()
}
