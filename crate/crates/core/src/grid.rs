//! Cartesian state grids with multilinear interpolation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A product grid: one strictly increasing axis per state dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateGrid {
    axes: Vec<Vec<f64>>,
}

impl StateGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::EmptyInput("grid axes"));
        }
        for axis in &axes {
            if axis.is_empty() {
                return Err(Error::EmptyInput("grid axis"));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidConfig(
                    "grid axes must strictly increase".into(),
                ));
            }
        }
        Ok(Self { axes })
    }

    /// Uniform axis helper.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat index (row-major, last axis fastest).
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            let n = self.axes[d].len();
            out[d] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for (d, &i) in multi.iter().enumerate() {
            idx = idx * self.axes[d].len() + i;
        }
        idx
    }

    /// The state vector at a flat index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.axes[d][i])
            .collect()
    }

    /// Lower corner multi-index of the cell containing `x`; `None` outside
    /// the convex hull of the grid.
    pub fn locate_cell(&self, x: &[f64]) -> Option<Vec<usize>> {
        if x.len() != self.dim() {
            return None;
        }
        let mut cell = Vec::with_capacity(self.dim());
        for (axis, &xi) in self.axes.iter().zip(x) {
            let first = *axis.first().expect("validated axis");
            let last = *axis.last().expect("validated axis");
            if xi < first || xi > last || axis.len() < 2 {
                return None;
            }
            let idx = axis.partition_point(|&g| g <= xi);
            cell.push(idx.clamp(1, axis.len() - 1) - 1);
        }
        Some(cell)
    }

    /// The `2^dim` flat corner indices of a cell.
    pub fn cell_corners(&self, cell: &[usize]) -> Vec<usize> {
        let dim = self.dim();
        (0..1usize << dim)
            .map(|mask| {
                let multi: Vec<usize> = (0..dim)
                    .map(|d| cell[d] + ((mask >> d) & 1))
                    .collect();
                self.flat_index(&multi)
            })
            .collect()
    }

    /// Center of a cell.
    pub fn cell_center(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter()
            .enumerate()
            .map(|(d, &i)| 0.5 * (self.axes[d][i] + self.axes[d][i + 1]))
            .collect()
    }

    /// Multilinear interpolation of per-point `values` at `x`; `None`
    /// outside the hull.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let cell = self.locate_cell(x)?;
        let dim = self.dim();
        let weights: Vec<f64> = (0..dim)
            .map(|d| {
                let lo = self.axes[d][cell[d]];
                let hi = self.axes[d][cell[d] + 1];
                (x[d] - lo) / (hi - lo)
            })
            .collect();
        let mut acc = 0.0;
        for mask in 0..1usize << dim {
            let mut weight = 1.0;
            let multi: Vec<usize> = (0..dim)
                .map(|d| {
                    let hi_side = (mask >> d) & 1 == 1;
                    weight *= if hi_side { weights[d] } else { 1.0 - weights[d] };
                    cell[d] + usize::from(hi_side)
                })
                .collect();
            acc += weight * values[self.flat_index(&multi)];
        }
        Some(acc)
    }

    /// All grid points in flat order.
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}
