use crate::error::{Error, Result};
use crate::types::{Image, ImageDims};

use super::{check_batch, Embedder};

/// Mean-pools every channel onto a g×g grid and flattens the result in
/// (row, column, channel) order.
///
/// Cell `r` along an axis of length `n` covers `[r·n/g, (r+1)·n/g)`, so
/// grids that do not divide the image still partition every pixel. Changing
/// pixels inside one cell only changes that cell's components.
#[derive(Clone, Debug)]
pub struct BlockAvg {
    grid: usize,
    dims: ImageDims,
    row_cell: Vec<usize>,
    col_cell: Vec<usize>,
    cell_area: Vec<f64>,
}

impl BlockAvg {
    pub fn new(grid: usize, dims: ImageDims) -> Result<Self> {
        if grid == 0 || grid > dims.height.min(dims.width) {
            return Err(Error::config(
                "g",
                format!(
                    "must lie in [1, {}] for {}x{} images, got {grid}",
                    dims.height.min(dims.width),
                    dims.height,
                    dims.width
                ),
            ));
        }
        let bounds = |n: usize| -> Vec<usize> {
            (0..n)
                .map(|i| (0..grid).rfind(|&r| r * n / grid <= i).unwrap())
                .collect()
        };
        let row_cell = bounds(dims.height);
        let col_cell = bounds(dims.width);
        let mut cell_area = vec![0.0; grid * grid];
        for &r in &row_cell {
            for &c in &col_cell {
                cell_area[r * grid + c] += 1.0;
            }
        }
        Ok(BlockAvg {
            grid,
            dims,
            row_cell,
            col_cell,
            cell_area,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn pool(&self, image: &Image) -> Vec<f64> {
        let ch = image.channels();
        let mut out = vec![0.0f64; self.grid * self.grid * ch];
        let data = image.data();
        for (y, &rc) in self.row_cell.iter().enumerate() {
            let row = &data[y * self.dims.width * ch..(y + 1) * self.dims.width * ch];
            let base = rc * self.grid;
            for (px, &cc) in row.chunks_exact(ch).zip(&self.col_cell) {
                let cell = &mut out[(base + cc) * ch..(base + cc + 1) * ch];
                for (o, &v) in cell.iter_mut().zip(px) {
                    *o += f64::from(v);
                }
            }
        }
        for (cell, area) in out.chunks_exact_mut(ch).zip(&self.cell_area) {
            cell.iter_mut().for_each(|v| *v /= area);
        }
        out
    }
}

impl Embedder for BlockAvg {
    fn spec(&self) -> String {
        format!("toy:block-avg:g={}", self.grid)
    }

    fn features(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
        let dims = check_batch(batch)?;
        if (dims.height, dims.width) != (self.dims.height, self.dims.width) {
            return Err(Error::Dimension(format!(
                "block-avg was built for {}x{}, got {}x{}",
                self.dims.height, self.dims.width, dims.height, dims.width
            )));
        }
        Ok(batch.iter().map(|im| self.pool(im)).collect())
    }
}
