//! Implicit posterior covariance for sequential assimilation.
//!
//! After `n` stages the posterior covariance is never formed. It is only
//! available through its action on thin matrices,
//!
//! ```text
//! K_n A = K_0 A - sum_i Lambda_i S_i^{-1} Lambda_i^T A,
//! Lambda_i = K_{i-1} G_i^T,   S_i = G_i Lambda_i + tau_i^2 I,
//! ```
//!
//! where `K_0 A` is evaluated chunk by chunk from the kernel. Each stage keeps
//! one `m x p_i` pushforward and a Cholesky factor of the `p_i x p_i` inner
//! matrix. Pushforwards can live on disk and are then streamed in row blocks.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::budget::MemoryBudget;
use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid, GridSpec};
use crate::io::{self, ScalarKind};
use crate::kernels::{prior_covmul_counted, FlopCounter, PriorModel};
use crate::linalg::SpdFactor;
use crate::operators::{Operator, OperatorKind, RowLabel};

#[derive(Debug, Clone)]
enum LambdaStore {
    Memory(DMatrix<f64>),
    /// SGPM file with `m` rows and `p` columns.
    Disk(PathBuf),
}

/// Low-rank state added by one assimilation stage.
#[derive(Debug, Clone)]
pub struct StageRecord {
    lambda: LambdaStore,
    factor: SpdFactor,
    op: Arc<Operator>,
    tau2: f64,
}

impl StageRecord {
    pub fn rows(&self) -> usize {
        self.op.rows()
    }

    pub fn operator(&self) -> &Arc<Operator> {
        &self.op
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// Jitter added to `S_i` by the factorization ladder.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn is_resident(&self) -> bool {
        matches!(self.lambda, LambdaStore::Memory(_))
    }

    /// Loads the pushforward, from disk if needed.
    pub fn lambda(&self) -> Result<DMatrix<f64>> {
        match &self.lambda {
            LambdaStore::Memory(l) => Ok(l.clone()),
            LambdaStore::Disk(path) => io::read_matrix(path),
        }
    }

    /// Runs `f(row_start, block)` over row blocks of the pushforward.
    fn for_each_block<F>(&self, plan: &ChunkPlan, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &DMatrix<f64>),
    {
        match &self.lambda {
            LambdaStore::Memory(l) => {
                f(0, l);
                Ok(())
            }
            LambdaStore::Disk(path) => {
                for r in plan.ranges() {
                    let block = io::read_rows(path, r.start, r.len())?;
                    f(r.start, &block);
                }
                Ok(())
            }
        }
    }

    /// `Lambda S^{-1} Lambda^T a`, subtracted from `out`.
    fn subtract_correction(
        &self,
        a: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        plan: &ChunkPlan,
        counter: Option<&FlopCounter>,
    ) -> Result<()> {
        let p = self.rows();
        let q = a.ncols();
        let mut t = DMatrix::zeros(p, q);
        self.for_each_block(plan, |start, block| {
            t.gemm_tr(1.0, block, &a.rows(start, block.nrows()), 1.0);
        })?;
        let u = self.factor.solve(&t);
        self.for_each_block(plan, |start, block| {
            let mut rows = out.rows_mut(start, block.nrows());
            rows.gemm(-1.0, block, &u, 1.0);
        })?;
        if let Some(c) = counter {
            let m = a.nrows() as u64;
            c.add(2 * m * p as u64 * q as u64 + (p * p * q) as u64);
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    index: usize,
    rows: usize,
    tau2: f64,
    jitter: f64,
    operator_kind: OperatorKind,
    labels: Vec<RowLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorMeta {
    model: PriorModel,
    grid: GridSpec,
    stages: usize,
}

/// Updatable posterior defined by a covariance multiplication routine.
#[derive(Debug, Clone)]
pub struct ImplicitPosterior {
    model: PriorModel,
    grid: Arc<Grid>,
    plan: ChunkPlan,
    budget: MemoryBudget,
    stages: Vec<StageRecord>,
    mean: DVector<f64>,
    run_dir: Option<PathBuf>,
}

impl ImplicitPosterior {
    pub fn new(model: PriorModel, grid: impl Into<Arc<Grid>>, plan: ChunkPlan) -> Result<Self> {
        let grid = grid.into();
        if plan.extent() != grid.len() {
            return Err(Error::invalid("chunk plan does not cover the grid"));
        }
        let mean = DVector::from_element(grid.len(), model.m0);
        Ok(ImplicitPosterior {
            model,
            grid,
            plan,
            budget: MemoryBudget::default(),
            stages: Vec::new(),
            mean,
            run_dir: None,
        })
    }

    pub fn with_budget(mut self, budget: MemoryBudget) -> Self {
        self.budget = budget;
        self
    }

    /// Persists every stage under `dir` from now on, and writes the stages
    /// already present. Pushforwards that no longer fit the budget are
    /// streamed from these files.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.run_dir = Some(dir);
        for i in 0..self.stages.len() {
            self.persist_stage(i)?;
        }
        self.persist_mean()?;
        Ok(self)
    }

    /// Reopens a posterior persisted with [`with_run_dir`](Self::with_run_dir).
    pub fn open(
        dir: impl Into<PathBuf>,
        model: PriorModel,
        grid: impl Into<Arc<Grid>>,
        plan: ChunkPlan,
        budget: MemoryBudget,
    ) -> Result<Self> {
        let dir = dir.into();
        let grid = grid.into();
        let meta: PosteriorMeta = io::read_json(&dir.join("posterior.json"))?;
        if meta.model != model || &meta.grid != grid.spec() {
            return Err(Error::Config(format!(
                "run directory {} was written for a different prior or grid",
                dir.display()
            )));
        }
        let mut post = ImplicitPosterior::new(model, grid, plan)?.with_budget(budget);
        let m = post.grid.len();
        let mut resident = 0u64;
        for i in 1..=meta.stages {
            let sdir = stage_dir(&dir, i);
            let smeta: StageMeta = io::read_json(&sdir.join("meta.json"))?;
            let l = io::read_matrix(&sdir.join("s_factor.bin"))?;
            let factor = SpdFactor::from_lower(l, smeta.jitter)?;
            let g = io::read_matrix(&sdir.join("operator.bin"))?;
            let op = Operator::new(g, smeta.labels, smeta.operator_kind)?;
            let lambda_path = sdir.join("lambda.bin");
            let bytes = MemoryBudget::matrix_bytes(m, smeta.rows);
            let lambda = if resident + bytes <= budget.bytes {
                resident += bytes;
                LambdaStore::Memory(io::read_matrix(&lambda_path)?)
            } else {
                LambdaStore::Disk(lambda_path)
            };
            post.stages.push(StageRecord {
                lambda,
                factor,
                op: Arc::new(op),
                tau2: smeta.tau2,
            });
        }
        let mean = io::read_matrix(&dir.join("mean.bin"))?;
        if mean.nrows() != m || mean.ncols() != 1 {
            return Err(Error::Format {
                path: dir.join("mean.bin"),
                reason: "mean has wrong shape".into(),
            });
        }
        post.mean = mean.column(0).into_owned();
        post.run_dir = Some(dir);
        Ok(post)
    }

    pub fn model(&self) -> &PriorModel {
        &self.model
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn plan(&self) -> &ChunkPlan {
        &self.plan
    }

    pub fn budget(&self) -> MemoryBudget {
        self.budget
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    /// Number of assimilated stages.
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `K_n a` for a thin `m x q` matrix.
    pub fn covmul(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.covmul_inner(a, None)
    }

    /// Same as [`covmul`](Self::covmul), counting multiply-adds.
    pub fn covmul_counted(&self, a: &DMatrix<f64>, counter: &FlopCounter) -> Result<DMatrix<f64>> {
        self.covmul_inner(a, Some(counter))
    }

    fn covmul_inner(&self, a: &DMatrix<f64>, counter: Option<&FlopCounter>) -> Result<DMatrix<f64>> {
        let mut out = prior_covmul_counted(&self.model, &self.grid, a, &self.plan, &self.budget, counter)?;
        for stage in &self.stages {
            stage.subtract_correction(a, &mut out, &self.plan, counter)?;
        }
        Ok(out)
    }

    fn resident_bytes(&self) -> u64 {
        let m = self.grid.len();
        self.stages
            .iter()
            .filter(|s| s.is_resident())
            .map(|s| MemoryBudget::matrix_bytes(m, s.rows()))
            .sum()
    }

    /// Conditions on one more batch of data.
    pub fn assimilate(&mut self, stage: &DataStage) -> Result<()> {
        let m = self.grid.len();
        let g = stage.op.matrix();
        if g.ncols() != m {
            return Err(Error::invalid(format!(
                "operator has {} columns, grid has {m} points",
                g.ncols()
            )));
        }
        let p = g.nrows();
        let lambda_bytes = MemoryBudget::matrix_bytes(m, p);
        self.budget.check("stage pushforward", lambda_bytes)?;
        let spill = self.resident_bytes() + lambda_bytes > self.budget.bytes;
        if spill && self.run_dir.is_none() {
            return Err(Error::Budget {
                what: "resident pushforwards (no run directory to spill to)".into(),
                needed: self.resident_bytes() + lambda_bytes,
                budget: self.budget.bytes,
            });
        }

        let lambda = self.covmul(&g.transpose())?;
        let mut s = g * &lambda;
        s = (&s + s.transpose()) * 0.5;
        for i in 0..p {
            s[(i, i)] += stage.tau2;
        }
        let factor = SpdFactor::with_scale(&s, self.data_scale(g, stage.tau2))?;
        let innovation = &stage.y - g * &self.mean;
        let weights = factor.solve_vec(&innovation);
        self.mean.gemv(1.0, &lambda, &weights, 1.0);

        debug!(
            "stage {}: p={p}, tau2={}, jitter={:e}",
            self.stages.len() + 1,
            stage.tau2,
            factor.jitter()
        );
        self.stages.push(StageRecord {
            lambda: LambdaStore::Memory(lambda),
            factor,
            op: stage.op.clone(),
            tau2: stage.tau2,
        });
        if self.run_dir.is_some() {
            let idx = self.stages.len() - 1;
            self.persist_stage(idx)?;
            self.persist_mean()?;
            if spill {
                let path = stage_dir(self.run_dir.as_ref().unwrap(), idx + 1).join("lambda.bin");
                self.stages[idx].lambda = LambdaStore::Disk(path);
            }
        }
        Ok(())
    }

    /// Upper bound on the prior variance of the observations, used as the
    /// reference level for the jitter ladder.
    fn data_scale(&self, g: &DMatrix<f64>, tau2: f64) -> f64 {
        let p = g.nrows() as f64;
        let rows: f64 = g
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>().powi(2))
            .sum();
        self.model.kernel.variance() * rows / p + tau2
    }

    /// Pointwise posterior variances without forming `K_n`.
    pub fn variance_diag(&self) -> Result<DVector<f64>> {
        let mut var = DVector::from_element(self.grid.len(), self.model.kernel.variance());
        for stage in &self.stages {
            stage.for_each_block(&self.plan, |start, block| {
                // columns of L^{-1} Lambda^T are rows of Lambda L^{-T}
                let w = stage.factor.solve_lower(&block.transpose());
                for (j, col) in w.column_iter().enumerate() {
                    var[start + j] -= col.norm_squared();
                }
            })?;
        }
        Ok(var)
    }

    /// Per-sample mean recursion sharing this posterior's stage state:
    /// starting from the prior mean for every column, applies
    /// `M += Lambda_i S_i^{-1} (Y_i - G_i M)` for each stage.
    pub fn replay_means(&self, data: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        if data.len() != self.stages.len() {
            return Err(Error::StageMismatch {
                stage: data.len().min(self.stages.len()),
                reason: format!("{} data blocks for {} stages", data.len(), self.stages.len()),
            });
        }
        let n = data.first().map_or(0, |d| d.ncols());
        let mut means = DMatrix::from_element(self.grid.len(), n, self.model.m0);
        for (i, (stage, y)) in self.stages.iter().zip(data).enumerate() {
            if y.nrows() != stage.rows() || y.ncols() != n {
                return Err(Error::StageMismatch {
                    stage: i + 1,
                    reason: "simulated data block has the wrong shape".into(),
                });
            }
            let innovation = y - stage.op.matrix() * &means;
            let w = stage.factor.solve(&innovation);
            stage.for_each_block(&self.plan, |start, block| {
                means.rows_mut(start, block.nrows()).gemm(1.0, block, &w, 1.0);
            })?;
        }
        Ok(means)
    }

    /// Bytes held by the representation: `sum_i (m p_i + p_i^2) + m`.
    pub fn storage_bytes(&self, bytes_per_scalar: u64) -> u64 {
        let sizes: Vec<usize> = self.stages.iter().map(|s| s.rows()).collect();
        implicit_storage_bytes(self.grid.len(), &sizes, bytes_per_scalar)
    }

    /// Leading-order multiply-adds of one `covmul` with `q` columns.
    pub fn flop_estimate(&self, q: usize) -> u64 {
        let sizes: Vec<usize> = self.stages.iter().map(|s| s.rows()).collect();
        covmul_flops(self.grid.len(), &sizes, q)
    }

    /// Leading-order cost of building the current representation.
    pub fn build_flop_estimate(&self) -> u64 {
        let sizes: Vec<usize> = self.stages.iter().map(|s| s.rows()).collect();
        representation_flops(self.grid.len(), &sizes)
    }

    fn persist_stage(&self, idx: usize) -> Result<()> {
        let Some(dir) = &self.run_dir else {
            return Ok(());
        };
        let stage = &self.stages[idx];
        let sdir = stage_dir(dir, idx + 1);
        fs::create_dir_all(&sdir)?;
        let lambda_path = sdir.join("lambda.bin");
        match &stage.lambda {
            LambdaStore::Memory(l) => io::write_matrix(&lambda_path, l, ScalarKind::F64)?,
            LambdaStore::Disk(path) if path != &lambda_path => {
                io::write_matrix(&lambda_path, &io::read_matrix(path)?, ScalarKind::F64)?
            }
            LambdaStore::Disk(_) => {}
        }
        io::write_matrix(&sdir.join("s_factor.bin"), &stage.factor.l(), ScalarKind::F64)?;
        io::write_matrix(&sdir.join("operator.bin"), stage.op.matrix(), ScalarKind::F64)?;
        io::write_json(
            &sdir.join("meta.json"),
            &StageMeta {
                index: idx + 1,
                rows: stage.rows(),
                tau2: stage.tau2,
                jitter: stage.factor.jitter(),
                operator_kind: stage.op.kind(),
                labels: stage.op.labels().to_vec(),
            },
        )
    }

    fn persist_mean(&self) -> Result<()> {
        let Some(dir) = &self.run_dir else {
            return Ok(());
        };
        let mean = DMatrix::from_column_slice(self.mean.len(), 1, self.mean.as_slice());
        io::write_matrix(&dir.join("mean.bin"), &mean, ScalarKind::F64)?;
        // written last: the stage count is the commit point
        io::write_json(
            &dir.join("posterior.json"),
            &PosteriorMeta {
                model: self.model,
                grid: self.grid.spec().clone(),
                stages: self.stages.len(),
            },
        )
    }
}

fn stage_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("stage_{index}"))
}

/// `m^2 * bytes`: a dense posterior covariance.
pub fn explicit_storage_bytes(m: usize, bytes_per_scalar: u64) -> u64 {
    (m as u64) * (m as u64) * bytes_per_scalar
}

pub fn implicit_storage_bytes(m: usize, stage_sizes: &[usize], bytes_per_scalar: u64) -> u64 {
    let m = m as u64;
    let stages: u64 = stage_sizes
        .iter()
        .map(|&p| m * p as u64 + (p as u64).pow(2))
        .sum();
    (stages + m) * bytes_per_scalar
}

/// `m^2 q + sum_i (m p_i q + p_i^2 q)`.
pub fn covmul_flops(m: usize, stage_sizes: &[usize], q: usize) -> u64 {
    let (m, q) = (m as u64, q as u64);
    m * m * q
        + stage_sizes
            .iter()
            .map(|&p| {
                let p = p as u64;
                m * p * q + p * p * q
            })
            .sum::<u64>()
}

/// Cost of defining the multiplication routine after the given stages: one
/// `covmul` with `q = p_i` against the previous stages, the `p_i x m` product
/// forming `S_i`, and its factorization.
pub fn representation_flops(m: usize, stage_sizes: &[usize]) -> u64 {
    let mm = m as u64;
    (0..stage_sizes.len())
        .map(|i| {
            let p = stage_sizes[i] as u64;
            covmul_flops(m, &stage_sizes[..i], stage_sizes[i]) + mm * p * p + p * p * p
        })
        .sum()
}
