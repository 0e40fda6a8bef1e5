use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Image, ImageDims};

use super::{check_batch, Embedder};

/// Fixed Gaussian random projection of the flattened pixels.
///
/// The d×(H·W·C) weight matrix is drawn from Normal(0, 1) with the
/// `rand-proj` stream of the weight seed. With a fresh seed per run this is
/// an untrained model, the randomized counterpart used by the sanity check.
pub struct RandProj {
    dim: usize,
    seed: u64,
    dims: ImageDims,
    weights: Vec<f32>,
}

impl RandProj {
    pub fn new(dim: usize, seed: u64, dims: ImageDims) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("d", format!("must be at least 2, got {dim}")));
        }
        let len = dims.len();
        let weights = (0..dim)
            .into_par_iter()
            .flat_map_iter(|row| {
                let mut rng = seed::stream(seed, "rand-proj", row as u64);
                (0..len).map(move |_| StandardNormal.sample(&mut rng))
            })
            .collect();
        Ok(RandProj {
            dim,
            seed,
            dims,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row `r` of the weight matrix.
    pub fn weight_row(&self, r: usize) -> &[f32] {
        let len = self.dims.len();
        &self.weights[r * len..(r + 1) * len]
    }

    fn project(&self, batch: &[Image]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0f64; self.dim]; batch.len()];
        // row-outer so each weight row is streamed once per batch
        for r in 0..self.dim {
            let w = self.weight_row(r);
            for (o, im) in out.iter_mut().zip(batch) {
                o[r] = dot(w, im.data());
            }
        }
        out
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    const LANES: usize = 16;
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().map(|&v| f64::from(v)).sum::<f64>() + tail
}

impl Embedder for RandProj {
    fn spec(&self) -> String {
        format!("toy:rand-proj:d={},seed={}", self.dim, self.seed)
    }

    fn features(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
        let dims = check_batch(batch)?;
        if dims != self.dims {
            return Err(Error::Dimension(format!(
                "rand-proj was built for {:?}, got {:?}",
                self.dims, dims
            )));
        }
        Ok(self.project(batch))
    }

    fn preferred_batch(&self) -> usize {
        32
    }
}
