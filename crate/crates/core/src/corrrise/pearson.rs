use crate::error::{Error, Result};
use crate::maskgen::MaskSet;
use crate::types::{Mask, SaliencyMap, ScoreList};

/// Relative variance below which a sequence counts as constant.
const ZERO_VARIANCE: f64 = 1e-12;

/// Streaming per-pixel Pearson correlation between mask values and scores.
///
/// Holds raw sums only, so partial accumulators over disjoint mask ranges
/// can be merged by addition. Scores are stored relative to `shift` (any
/// value near their mean) to keep the second moments well conditioned.
#[derive(Clone, Debug)]
pub struct PearsonAccumulator {
    height: usize,
    width: usize,
    shift: f64,
    n: usize,
    sum_s: f64,
    sum_ss: f64,
    sum_m: Vec<f64>,
    sum_mm: Vec<f64>,
    sum_ms: Vec<f64>,
}

impl PearsonAccumulator {
    pub fn new(height: usize, width: usize, shift: f64) -> Self {
        let n = height * width;
        PearsonAccumulator {
            height,
            width,
            shift,
            n: 0,
            sum_s: 0.0,
            sum_ss: 0.0,
            sum_m: vec![0.0; n],
            sum_mm: vec![0.0; n],
            sum_ms: vec![0.0; n],
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, mask: &Mask, score: f64) -> Result<()> {
        if (mask.height, mask.width) != (self.height, self.width) {
            return Err(Error::Dimension(format!(
                "mask is {}x{}, accumulator is {}x{}",
                mask.height, mask.width, self.height, self.width
            )));
        }
        let s = score - self.shift;
        self.n += 1;
        self.sum_s += s;
        self.sum_ss += s * s;
        for (((m, mm), ms), &v) in self
            .sum_m
            .iter_mut()
            .zip(&mut self.sum_mm)
            .zip(&mut self.sum_ms)
            .zip(&mask.values)
        {
            let v = f64::from(v);
            *m += v;
            *mm += v * v;
            *ms += v * s;
        }
        Ok(())
    }

    /// Adds the sums of `other`, which must share grid and shift.
    pub fn merge(&mut self, other: &PearsonAccumulator) -> Result<()> {
        if (other.height, other.width) != (self.height, self.width) || other.shift != self.shift {
            return Err(Error::Dimension(
                "cannot merge accumulators of different grid or shift".into(),
            ));
        }
        self.n += other.n;
        self.sum_s += other.sum_s;
        self.sum_ss += other.sum_ss;
        for (a, b) in self.sum_m.iter_mut().zip(&other.sum_m) {
            *a += b;
        }
        for (a, b) in self.sum_mm.iter_mut().zip(&other.sum_mm) {
            *a += b;
        }
        for (a, b) in self.sum_ms.iter_mut().zip(&other.sum_ms) {
            *a += b;
        }
        Ok(())
    }

    /// Correlation map; pixels where either sequence is constant get 0.
    pub fn finish(&self) -> Result<SaliencyMap> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples(self.n));
        }
        let n = self.n as f64;
        let mean_s = self.sum_s / n;
        let var_s = self.sum_ss / n - mean_s * mean_s;
        if var_s <= ZERO_VARIANCE * (self.sum_ss / n) || var_s <= 0.0 {
            return Ok(SaliencyMap::zeros(self.height, self.width));
        }
        let values = (0..self.sum_m.len())
            .map(|i| {
                let mean_m = self.sum_m[i] / n;
                let var_m = self.sum_mm[i] / n - mean_m * mean_m;
                if var_m <= ZERO_VARIANCE * (self.sum_mm[i] / n) || var_m <= 0.0 {
                    return 0.0;
                }
                let cov = self.sum_ms[i] / n - mean_m * mean_s;
                let r = (cov / (var_m * var_s).sqrt()).clamp(-1.0, 1.0) as f32;
                // canonical zero so maps compare bitwise
                if r == 0.0 {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        SaliencyMap::new(self.height, self.width, values)
    }
}

/// Pearson correlation, per pixel, between mask values and scores.
pub fn pixelwise_pearson(scores: &ScoreList, masks: &MaskSet) -> Result<SaliencyMap> {
    pearson_of(scores.as_slice(), &masks.masks)
}

pub(crate) fn pearson_of(scores: &[f64], masks: &[Mask]) -> Result<SaliencyMap> {
    if scores.len() != masks.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} masks",
            scores.len(),
            masks.len()
        )));
    }
    if masks.len() < 2 {
        return Err(Error::InsufficientSamples(masks.len()));
    }
    let shift = scores.iter().sum::<f64>() / scores.len() as f64;
    let mut acc = PearsonAccumulator::new(masks[0].height, masks[0].width, shift);
    for (m, &s) in masks.iter().zip(scores) {
        acc.push(m, s)?;
    }
    acc.finish()
}
