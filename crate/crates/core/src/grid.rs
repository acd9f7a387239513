//! Regular grids over a box domain and row-chunk plans for block products.
//!
//! Flat indices are row-major: the last axis varies fastest. Every vector,
//! operator column and kernel block in the crate uses this ordering.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of grid points per chunk.
pub const DEFAULT_CHUNK_SIZE: usize = 2000;

/// Geometry of a regular grid. This is what gets serialized; points are
/// derived on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    /// Flattened coordinates, `dim` values per point.
    coords: Vec<f64>,
}

impl Grid {
    pub fn new(dim: usize, shape: &[usize], spacing: &[f64], origin: &[f64]) -> Result<Self> {
        Self::from_spec(GridSpec {
            dim,
            shape: shape.to_vec(),
            spacing: spacing.to_vec(),
            origin: origin.to_vec(),
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        let dim = spec.dim;
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        if spec.shape.len() != dim || spec.spacing.len() != dim || spec.origin.len() != dim {
            return Err(Error::invalid("shape, spacing and origin must have one entry per axis"));
        }
        if spec.shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid("grid shape entries must be >= 1"));
        }
        if spec.spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("grid spacing must be positive and finite"));
        }
        if spec.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        let m: usize = spec.shape.iter().product();
        let mut coords = Vec::with_capacity(m * dim);
        let mut multi = vec![0usize; dim];
        for _ in 0..m {
            for axis in 0..dim {
                coords.push(spec.origin[axis] + multi[axis] as f64 * spec.spacing[axis]);
            }
            for axis in (0..dim).rev() {
                multi[axis] += 1;
                if multi[axis] < spec.shape[axis] {
                    break;
                }
                multi[axis] = 0;
            }
        }
        Ok(Grid { spec, coords })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.spec.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spec.spacing
    }

    /// Number of points `m`.
    pub fn len(&self) -> usize {
        self.coords.len() / self.spec.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.spacing.iter().product()
    }

    /// Total volume of the domain covered by the cells.
    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    pub fn point(&self, index: usize) -> &[f64] {
        let d = self.spec.dim;
        &self.coords[index * d..(index + 1) * d]
    }

    /// All coordinates, `dim` values per point.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.spec.dim];
        for axis in (0..self.spec.dim).rev() {
            out[axis] = index % self.spec.shape[axis];
            index /= self.spec.shape[axis];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> Option<usize> {
        if multi.len() != self.spec.dim {
            return None;
        }
        let mut flat = 0;
        for (axis, &i) in multi.iter().enumerate() {
            if i >= self.spec.shape[axis] {
                return None;
            }
            flat = flat * self.spec.shape[axis] + i;
        }
        Some(flat)
    }

    /// Flat index of the grid point nearest to `coords`, if it falls within
    /// half a spacing of a node on every axis.
    pub fn locate(&self, coords: &[f64]) -> Option<usize> {
        let mut multi = Vec::with_capacity(self.spec.dim);
        for axis in 0..self.spec.dim {
            let t = (coords[axis] - self.spec.origin[axis]) / self.spec.spacing[axis];
            let i = t.round();
            if i < 0.0 || (t - i).abs() > 0.5 + 1e-9 {
                return None;
            }
            multi.push(i as usize);
        }
        self.flat_index(&multi)
    }

    /// Axis-aligned bounds `[low, high]` of the cell centred on point `index`.
    pub fn cell_bounds(&self, index: usize) -> Vec<(f64, f64)> {
        self.point(index)
            .iter()
            .zip(&self.spec.spacing)
            .map(|(&c, &h)| (c - 0.5 * h, c + 0.5 * h))
            .collect()
    }

    /// Largest distance between two grid points.
    pub fn diameter(&self) -> f64 {
        self.spec
            .shape
            .iter()
            .zip(&self.spec.spacing)
            .map(|(&n, &h)| ((n - 1) as f64 * h).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Partition of `0..m` into contiguous chunks of at most `chunk_size` points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    chunk_size: usize,
    ranges: Vec<Range<usize>>,
}

impl ChunkPlan {
    pub fn new(m: usize, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::invalid("chunk size must be >= 1"));
        }
        let ranges = (0..m)
            .step_by(chunk_size)
            .map(|start| start..(start + chunk_size).min(m))
            .collect();
        Ok(ChunkPlan { chunk_size, ranges })
    }

    pub fn for_grid(grid: &Grid, chunk_size: usize) -> Result<Self> {
        Self::new(grid.len(), chunk_size)
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Number of indices covered.
    pub fn extent(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Rows in the largest chunk.
    pub fn max_chunk_len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_points() {
        let g = Grid::new(1, &[3], &[1.0], &[-1.0]).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.coords(), &[-1.0, 0.0, 1.0]);
        assert_eq!(g.cell_volume(), 1.0);
    }

    #[test]
    fn large_grid_size() {
        let g = Grid::new(2, &[400, 400], &[0.005, 0.005], &[-1.0, -1.0]).unwrap();
        assert_eq!(g.len(), 160_000);
    }

    #[test]
    fn cube_cell_volume() {
        let g = Grid::new(3, &[10, 10, 10], &[50.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(g.cell_volume(), 125_000.0);
        assert_eq!(g.len(), 1000);
    }

    #[test]
    fn row_major_order() {
        let g = Grid::new(2, &[2, 3], &[1.0, 10.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g.point(1), &[0.0, 10.0]);
        assert_eq!(g.point(3), &[1.0, 0.0]);
        assert_eq!(g.multi_index(5), vec![1, 2]);
        assert_eq!(g.locate(&[1.0, 20.0]), Some(5));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Grid::new(1, &[3], &[0.0], &[0.0]).is_err());
        assert!(Grid::new(1, &[3], &[-1.0], &[0.0]).is_err());
        assert!(Grid::new(2, &[0, 3], &[1.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(Grid::new(1, &[], &[], &[]).is_err());
        assert!(Grid::new(4, &[1; 4], &[1.0; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn chunk_ranges() {
        let p = ChunkPlan::new(10, 4).unwrap();
        assert_eq!(p.ranges(), &[0..4, 4..8, 8..10]);
        assert_eq!(ChunkPlan::new(10, 10).unwrap().ranges(), &[0..10]);
        assert_eq!(ChunkPlan::new(160_000, 2000).unwrap().len(), 80);
        assert!(ChunkPlan::new(10, 0).is_err());
    }
}
