//! Stationary isotropic covariance kernels and the chunked prior product.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::MemoryBudget;
use crate::error::{Error, Result};
use crate::grid::{ChunkPlan, Grid};

/// Correlation level that defines the practical range.
pub const PRACTICAL_RANGE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Exponential,
    Matern32,
    Matern52,
}

impl KernelFamily {
    /// Correlation at scaled distance `t = d / lambda0`.
    #[inline]
    pub fn correlation(self, t: f64) -> f64 {
        match self {
            KernelFamily::Exponential => (-t).exp(),
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * t;
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * t;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' ', '/'], "").as_str() {
            "exponential" | "exp" | "matern12" => Ok(KernelFamily::Exponential),
            "matern32" => Ok(KernelFamily::Matern32),
            "matern52" => Ok(KernelFamily::Matern52),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub sigma0: f64,
    pub lambda0: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, sigma0: f64, lambda0: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::invalid(format!("sigma0 must be positive, got {sigma0}")));
        }
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::invalid(format!("lambda0 must be positive, got {lambda0}")));
        }
        Ok(Kernel {
            family,
            sigma0,
            lambda0,
        })
    }

    pub fn variance(&self) -> f64 {
        self.sigma0 * self.sigma0
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        self.variance() * self.family.correlation(d / self.lambda0)
    }

    /// Same correlation structure with a different scale.
    pub fn with_sigma(&self, sigma0: f64) -> Result<Self> {
        Kernel::new(self.family, sigma0, self.lambda0)
    }

    /// Distance at which the correlation falls to 5%, by bisection on the
    /// strictly decreasing correlation.
    pub fn practical_range(&self) -> f64 {
        let f = |t: f64| self.family.correlation(t) - PRACTICAL_RANGE_LEVEL;
        let (mut lo, mut hi) = (0.0, 1.0);
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        while (hi - lo) > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) * self.lambda0
    }
}

/// GP prior with constant mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub kernel: Kernel,
    pub m0: f64,
}

impl PriorModel {
    pub fn new(kernel: Kernel, m0: f64) -> Self {
        PriorModel { kernel, m0 }
    }
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Kernel matrix between two point sets given as flattened coordinates with
/// `dim` values per point.
pub fn cross_cov_block(kernel: &Kernel, a: &[f64], b: &[f64], dim: usize) -> DMatrix<f64> {
    assert!(dim > 0 && a.len() % dim == 0 && b.len() % dim == 0);
    let (na, nb) = (a.len() / dim, b.len() / dim);
    DMatrix::from_fn(na, nb, |i, j| {
        kernel.eval(distance(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim]))
    })
}

/// Prior covariance matrix on the whole grid. Only for small grids.
pub fn prior_cov_dense(model: &PriorModel, grid: &Grid) -> DMatrix<f64> {
    cross_cov_block(&model.kernel, grid.coords(), grid.coords(), grid.dim())
}

/// Counts multiply-adds performed by instrumented products.
#[derive(Debug, Default)]
pub struct FlopCounter(AtomicU64);

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Column tile width for a row chunk of `rows` points so that the kernel
/// slab stays within what is left of the budget after the output.
fn column_tile(rows: usize, m: usize, q: usize, budget: &MemoryBudget) -> Result<usize> {
    let out = MemoryBudget::matrix_bytes(m, q);
    budget.check("covariance product output", out)?;
    let per_col = MemoryBudget::matrix_bytes(rows.max(1), 1);
    let left = budget.bytes - out;
    if left < per_col {
        return Err(Error::Budget {
            what: "kernel block".into(),
            needed: out + per_col,
            budget: budget.bytes,
        });
    }
    Ok(((left / per_col) as usize).clamp(1, m.max(1)))
}

/// `K0 * a` with the kernel built block by block: rows follow the chunk plan,
/// columns are tiled further when a full slab would not fit the budget.
pub fn prior_covmul(
    model: &PriorModel,
    grid: &Grid,
    a: &DMatrix<f64>,
    plan: &ChunkPlan,
    budget: &MemoryBudget,
) -> Result<DMatrix<f64>> {
    prior_covmul_counted(model, grid, a, plan, budget, None)
}

pub fn prior_covmul_counted(
    model: &PriorModel,
    grid: &Grid,
    a: &DMatrix<f64>,
    plan: &ChunkPlan,
    budget: &MemoryBudget,
    counter: Option<&FlopCounter>,
) -> Result<DMatrix<f64>> {
    let m = grid.len();
    if a.nrows() != m {
        return Err(Error::invalid(format!(
            "prior product expects {m} rows, got {}",
            a.nrows()
        )));
    }
    if plan.extent() != m {
        return Err(Error::invalid("chunk plan does not cover the grid"));
    }
    let q = a.ncols();
    let tile = column_tile(plan.max_chunk_len(), m, q, budget)?;
    let dim = grid.dim();
    let coords = grid.coords();
    let kernel = &model.kernel;

    let blocks: Vec<DMatrix<f64>> = plan
        .ranges()
        .par_iter()
        .map(|rows| {
            let mut out = DMatrix::zeros(rows.len(), q);
            if q == 0 {
                return out;
            }
            let row_pts = &coords[rows.start * dim..rows.end * dim];
            for start in (0..m).step_by(tile) {
                let width = tile.min(m - start);
                let col_pts = &coords[start * dim..(start + width) * dim];
                let block = cross_cov_block(kernel, row_pts, col_pts, dim);
                out.gemm(1.0, &block, &a.rows(start, width), 1.0);
                if let Some(c) = counter {
                    c.add((rows.len() * width * q) as u64);
                }
            }
            out
        })
        .collect();

    let mut result = DMatrix::zeros(m, q);
    for (rows, block) in plan.ranges().iter().zip(blocks) {
        result.rows_mut(rows.start, rows.len()).copy_from(&block);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(family: KernelFamily) -> Kernel {
        Kernel::new(family, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_distance_gives_variance() {
        for f in [KernelFamily::Exponential, KernelFamily::Matern32, KernelFamily::Matern52] {
            let k = Kernel::new(f, 3.0, 2.0).unwrap();
            assert_eq!(k.eval(0.0), 9.0);
        }
    }

    #[test]
    fn closed_form_values() {
        let expected = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((unit(KernelFamily::Matern32).eval(1.0) - expected).abs() < 1e-15);
        assert!((expected - 0.48335772).abs() < 1e-8);
        assert!((unit(KernelFamily::Exponential).eval(20f64.ln()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn practical_ranges() {
        assert!((unit(KernelFamily::Exponential).practical_range() - 20f64.ln()).abs() < 1e-9);
        let exp = Kernel::new(KernelFamily::Exponential, 1.0, 1925.0).unwrap();
        assert!((exp.practical_range() - 5766.8).abs() < 0.05);
        // Root of (1 + s) e^{-s} = 0.05 is s = 4.743864518..., so the range is
        // s / sqrt(3) * lambda0.
        let m32 = Kernel::new(KernelFamily::Matern32, 1.0, 651.6).unwrap();
        let r = m32.practical_range();
        assert!((r - 1784.6486411804517).abs() < 1e-6, "{r}");
        assert!((m32.family.correlation(r / 651.6) - 0.05).abs() < 1e-10);
        let m52 = Kernel::new(KernelFamily::Matern52, 1.0, 1.0).unwrap();
        assert!((m52.practical_range() - 5.9186493463104455 / 5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(Kernel::new(KernelFamily::Matern32, 0.0, 1.0).is_err());
        assert!(Kernel::new(KernelFamily::Matern32, 1.0, -1.0).is_err());
        assert!("matern-5/2".parse::<KernelFamily>().is_ok());
        assert!("gaussian".parse::<KernelFamily>().is_err());
    }

    #[test]
    fn collinear_exponential_block() {
        let k = unit(KernelFamily::Exponential);
        let pts = [0.0, 1.0, 2.0];
        let c = cross_cov_block(&k, &pts, &pts, 1);
        assert!((c[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert!((c[(0, 2)] - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(c, c.transpose());
        assert_eq!(cross_cov_block(&k, &[0.3], &[0.3], 1)[(0, 0)], 1.0);
    }

    fn small_setup() -> (PriorModel, Grid) {
        let grid = Grid::new(2, &[5, 10], &[0.1, 0.1], &[0.0, 0.0]).unwrap();
        let model = PriorModel::new(Kernel::new(KernelFamily::Matern52, 1.3, 0.25).unwrap(), 0.0);
        (model, grid)
    }

    #[test]
    fn chunked_matches_dense() {
        let (model, grid) = small_setup();
        let k = prior_cov_dense(&model, &grid);
        let a = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let dense = &k * &a;
        for cs in [7, 50] {
            let plan = ChunkPlan::for_grid(&grid, cs).unwrap();
            let got = prior_covmul(&model, &grid, &a, &plan, &MemoryBudget::default()).unwrap();
            assert!((got - &dense).amax() < 1e-12);
        }
        // basis column extraction
        let mut e0 = DMatrix::zeros(50, 1);
        e0[(0, 0)] = 1.0;
        let plan = ChunkPlan::for_grid(&grid, 7).unwrap();
        let col = prior_covmul(&model, &grid, &e0, &plan, &MemoryBudget::default()).unwrap();
        assert!((col - k.column(0)).amax() == 0.0);
        let zero = prior_covmul(&model, &grid, &DMatrix::zeros(50, 2), &plan, &MemoryBudget::default())
            .unwrap();
        assert_eq!(zero, DMatrix::zeros(50, 2));
    }

    #[test]
    fn column_tiling_under_tight_budget() {
        let (model, grid) = small_setup();
        let a = DMatrix::from_fn(50, 2, |i, j| (i as f64 * 0.1).sin() + j as f64);
        let plan = ChunkPlan::for_grid(&grid, 10).unwrap();
        let roomy = prior_covmul(&model, &grid, &a, &plan, &MemoryBudget::default()).unwrap();
        // output 800 bytes + 10 rows x 3 cols of kernel slab
        let tight = MemoryBudget::new(800 + 240);
        let tiled = prior_covmul(&model, &grid, &a, &plan, &tight).unwrap();
        assert!((roomy - tiled).amax() < 1e-12);
    }

    #[test]
    fn budget_violation_is_reported_up_front() {
        let (model, grid) = small_setup();
        let a = DMatrix::zeros(50, 4);
        let plan = ChunkPlan::for_grid(&grid, 10).unwrap();
        let err = prior_covmul(&model, &grid, &a, &plan, &MemoryBudget::new(100)).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
        assert_eq!(err.exit_code(), 4);
    }
}
