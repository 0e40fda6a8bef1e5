//! Model-randomization sanity check.
//!
//! An explainer that reflects the model must produce maps that beat random
//! pixel rankings when the model is structured, and must not when the model
//! is an untrained random projection. Each trial compares the deletion AUC
//! of random maps with that of CorrRISE similarity maps, under both models:
//! `gap = auc(random maps) − auc(CorrRISE maps)`.

use log::info;
use serde::{Deserialize, Serialize};

use crate::corrrise::ExplainConfig;
use crate::embedder::{BlockAvg, Embedder, RandProj};
use crate::error::{Error, Result};
use crate::evaluation::{verification_metric, CurveOptions, EvalPair, Mode};
use crate::saliency::{CorrRiseSource, MapKind, RandomSource};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityConfig {
    pub explain: ExplainConfig,
    pub curve: CurveOptions,
    pub trials: usize,
    /// Root seed; every trial derives its model, mask and map seeds from it.
    pub seed: u64,
    /// Largest |gap| tolerated under the randomized model.
    pub epsilon: f64,
    /// Smallest gap required under the structured model.
    pub margin: f64,
    /// Pooling grid of the structured model.
    pub grid: usize,
    /// Output dimension of the randomized model.
    pub random_dim: usize,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig {
            explain: ExplainConfig::default(),
            curve: CurveOptions {
                mode: Mode::Deletion,
                ..CurveOptions::default()
            },
            trials: 10,
            seed: 0,
            epsilon: 0.02,
            margin: 0.05,
            grid: 8,
            random_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub embedder: String,
    pub auc_random: f64,
    pub auc_method: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub structured: Gap,
    pub randomized: Gap,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub epsilon: f64,
    pub margin: f64,
    pub trials: Vec<TrialReport>,
    pub passed: bool,
}

fn gap(
    pairs: &[EvalPair],
    embedder: &dyn Embedder,
    explain: ExplainConfig,
    map_seed: u64,
    curve: &CurveOptions,
) -> Result<Gap> {
    let random = verification_metric(
        pairs,
        &RandomSource::new(map_seed),
        embedder,
        MapKind::Similarity,
        curve,
        None,
    )?;
    let method = verification_metric(
        pairs,
        &CorrRiseSource::new(embedder, explain),
        embedder,
        MapKind::Similarity,
        curve,
        Some(random.threshold),
    )?;
    Ok(Gap {
        embedder: embedder.spec(),
        auc_random: random.curve.auc,
        auc_method: method.curve.auc,
        gap: random.curve.auc - method.curve.auc,
    })
}

/// Runs `cfg.trials` independent trials on `pairs` (which must contain
/// both matching and non-matching pairs for threshold calibration).
pub fn sanity_check(pairs: &[EvalPair], cfg: &SanityConfig) -> Result<SanityReport> {
    if cfg.trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let dims = pairs
        .first()
        .ok_or_else(|| Error::Empty("sanity check needs pairs".into()))?
        .a
        .dims();
    let structured = BlockAvg::new(cfg.grid, dims)?;
    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let t64 = t as u64;
        let explain = ExplainConfig {
            seed: derive_seed(cfg.seed, "sanity-masks", t64),
            ..cfg.explain
        };
        let map_seed = derive_seed(cfg.seed, "sanity-maps", t64);
        let randomized = RandProj::new(
            cfg.random_dim,
            derive_seed(cfg.seed, "sanity-model", t64),
            dims,
        )?;
        let s = gap(pairs, &structured, explain, map_seed, &cfg.curve)?;
        let r = gap(pairs, &randomized, explain, map_seed, &cfg.curve)?;
        let passed = s.gap > cfg.margin && r.gap.abs() <= cfg.epsilon;
        info!(
            "trial {t}: structured gap {:+.4}, randomized gap {:+.4} -> {}",
            s.gap,
            r.gap,
            if passed { "pass" } else { "fail" }
        );
        trials.push(TrialReport {
            trial: t,
            structured: s,
            randomized: r,
            passed,
        });
    }
    Ok(SanityReport {
        epsilon: cfg.epsilon,
        margin: cfg.margin,
        passed: trials.iter().all(|t| t.passed),
        trials,
    })
}
