//! Dense reference conditioning for small grids.
//!
//! Everything here forms the full `m x m` covariance. The implicit engine is
//! checked against these routines; they are not meant for large `m`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{prior_cov_dense, PriorModel};
use crate::linalg::{condition_number, numerical_rank, SpdFactor};
use crate::operators::Operator;

/// Largest condition number accepted for noiseless data covariances.
pub const NOISELESS_MAX_CONDITION: f64 = 1e12;

/// One batch of observations `y = G z + eps`, `eps ~ N(0, tau2 I)`.
#[derive(Debug, Clone)]
pub struct DataStage {
    pub op: Arc<Operator>,
    pub y: DVector<f64>,
    pub tau2: f64,
}

impl DataStage {
    pub fn new(op: impl Into<Arc<Operator>>, y: DVector<f64>, tau2: f64) -> Result<Self> {
        let op = op.into();
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be >= 0, got {tau2}")));
        }
        if y.len() != op.rows() {
            return Err(Error::invalid(format!(
                "data has {} entries but operator has {} rows",
                y.len(),
                op.rows()
            )));
        }
        if op.rows() == 0 {
            return Err(Error::invalid("a data stage needs at least one observation"));
        }
        Ok(DataStage { op, y, tau2 })
    }

    pub fn rows(&self) -> usize {
        self.op.rows()
    }

    /// Concatenation of stages sharing one noise level.
    pub fn stack(stages: &[&DataStage]) -> Result<DataStage> {
        let first = stages
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero stages"))?;
        if stages.iter().any(|s| s.tau2 != first.tau2) {
            return Err(Error::invalid("stacked stages must share the noise variance"));
        }
        let ops: Vec<&Operator> = stages.iter().map(|s| s.op.as_ref()).collect();
        let op = Operator::stack(&ops)?;
        let y = DVector::from_iterator(
            op.rows(),
            stages.iter().flat_map(|s| s.y.iter().copied()),
        );
        DataStage::new(op, y, first.tau2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub stage: usize,
}

impl ExplicitPosterior {
    pub fn prior(model: &PriorModel, grid: &Grid) -> Self {
        ExplicitPosterior {
            mean: DVector::from_element(grid.len(), model.m0),
            cov: prior_cov_dense(model, grid),
            stage: 0,
        }
    }

    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Factor of `G K G^T + tau2 I`, rejecting noiseless systems whose condition
/// number is too large to trust.
fn factor_data_cov(r: &DMatrix<f64>, tau2: f64) -> Result<SpdFactor> {
    if tau2 == 0.0 && condition_number(r) >= NOISELESS_MAX_CONDITION {
        return Err(Error::Singular {
            size: r.nrows(),
            rank: numerical_rank(r),
        });
    }
    SpdFactor::new(r)
}

fn check_grid(op: &Operator, m: usize) -> Result<()> {
    if op.cols() != m {
        return Err(Error::invalid(format!(
            "operator has {} columns, grid has {m} points",
            op.cols()
        )));
    }
    Ok(())
}

/// Posterior from the prior in a single batch.
pub fn condition_batch(model: &PriorModel, grid: &Grid, stage: &DataStage) -> Result<ExplicitPosterior> {
    check_grid(&stage.op, grid.len())?;
    let prior = ExplicitPosterior::prior(model, grid);
    let g = stage.op.matrix();
    let kgt = &prior.cov * g.transpose();
    let mut r = g * &kgt;
    for i in 0..r.nrows() {
        r[(i, i)] += stage.tau2;
    }
    let factor = factor_data_cov(&r, stage.tau2)?;
    let innovation = &stage.y - g * &prior.mean;
    let mean = &prior.mean + &kgt * factor.solve_vec(&innovation);
    let cov = &prior.cov - &kgt * factor.solve(&kgt.transpose());
    Ok(ExplicitPosterior {
        mean,
        cov: symmetrize(cov),
        stage: 1,
    })
}

/// One low-rank update of an explicit posterior.
pub fn update_stage_explicit(post: &ExplicitPosterior, stage: &DataStage) -> Result<ExplicitPosterior> {
    check_grid(&stage.op, post.mean.len())?;
    let g = stage.op.matrix();
    let gk = g * &post.cov;
    let mut s = &gk * g.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += stage.tau2;
    }
    let factor = factor_data_cov(&s, stage.tau2)?;
    // weights W = S^{-1} G K, p x m
    let w = factor.solve(&gk);
    let innovation = &stage.y - g * &post.mean;
    let mean = &post.mean + w.transpose() * innovation;
    let cov = &post.cov - w.transpose() * (&s * &w);
    Ok(ExplicitPosterior {
        mean,
        cov: symmetrize(cov),
        stage: post.stage + 1,
    })
}

/// Symmetric inverse square root `C^{-1/2}` of a full-rank data covariance;
/// its columns form a representing sequence.
pub fn representing_sequence(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = c.nrows();
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let floor = 1e-12 * c.trace() / p as f64;
    let rank = eig.eigenvalues.iter().filter(|v| **v >= floor && **v > 0.0).count();
    if rank < p {
        return Err(Error::Singular { size: p, rank });
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// Noiseless posterior written as a sum over a representing sequence.
pub fn condition_via_representing_sequence(
    model: &PriorModel,
    grid: &Grid,
    op: &Operator,
    y: &DVector<f64>,
) -> Result<ExplicitPosterior> {
    check_grid(op, grid.len())?;
    if y.len() != op.rows() {
        return Err(Error::invalid("data length does not match operator rows"));
    }
    let prior = ExplicitPosterior::prior(model, grid);
    let g = op.matrix();
    let kgt = &prior.cov * g.transpose();
    let c = g * &kgt;
    let seq = representing_sequence(&c)?;
    let innovation = y - g * &prior.mean;
    let mut mean = prior.mean.clone();
    let mut cov = prior.cov.clone();
    for i in 0..seq.ncols() {
        let yi = seq.column(i);
        let direction = &kgt * yi;
        mean += &direction * innovation.dot(&yi);
        cov -= &direction * direction.transpose();
    }
    Ok(ExplicitPosterior {
        mean,
        cov: symmetrize(cov),
        stage: 1,
    })
}

fn symmetrize(c: DMatrix<f64>) -> DMatrix<f64> {
    (&c + c.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelFamily};
    use crate::operators::pointwise_operator;

    fn setup() -> (PriorModel, Grid) {
        let grid = Grid::new(1, &[6], &[0.2], &[0.0]).unwrap();
        let model = PriorModel::new(Kernel::new(KernelFamily::Matern32, 1.5, 0.4).unwrap(), 2.0);
        (model, grid)
    }

    #[test]
    fn noiseless_dirac_interpolates() {
        let (model, grid) = setup();
        let op = pointwise_operator(&grid, &[3]).unwrap();
        let stage = DataStage::new(op, DVector::from_vec(vec![5.0]), 0.0).unwrap();
        let post = condition_batch(&model, &grid, &stage).unwrap();
        assert!((post.mean[3] - 5.0).abs() < 1e-10);
        assert!(post.cov[(3, 3)].abs() < 1e-10 * 2.25);
    }

    #[test]
    fn huge_noise_keeps_prior() {
        let (model, grid) = setup();
        let op = pointwise_operator(&grid, &[1, 4]).unwrap();
        let tau2 = 1e12 * 2.25;
        let stage = DataStage::new(op, DVector::from_vec(vec![10.0, -4.0]), tau2).unwrap();
        let post = condition_batch(&model, &grid, &stage).unwrap();
        let prior = ExplicitPosterior::prior(&model, &grid);
        let shift = (&post.mean - &prior.mean).amax();
        // first-order shift is K G^T (y - G m) / tau2
        assert!(shift <= 8.0 * 2.25 * 6.0 / tau2);
        assert!((&post.cov - &prior.cov).amax() <= 2.25 * 2.25 * 2.0 / tau2);
    }

    #[test]
    fn single_stage_update_equals_batch() {
        let (model, grid) = setup();
        let op = pointwise_operator(&grid, &[0, 5]).unwrap();
        let stage = DataStage::new(op, DVector::from_vec(vec![1.0, 3.0]), 0.01).unwrap();
        let batch = condition_batch(&model, &grid, &stage).unwrap();
        let seq = update_stage_explicit(&ExplicitPosterior::prior(&model, &grid), &stage).unwrap();
        assert!((batch.mean - seq.mean).amax() < 1e-10);
        assert!((batch.cov - seq.cov).amax() < 1e-10);
    }

    #[test]
    fn zero_innovation_keeps_mean_but_shrinks() {
        let (model, grid) = setup();
        let prior = ExplicitPosterior::prior(&model, &grid);
        let op = pointwise_operator(&grid, &[2]).unwrap();
        let y = op.apply(&prior.mean);
        let post = update_stage_explicit(&prior, &DataStage::new(op, y, 0.1).unwrap()).unwrap();
        assert!((&post.mean - &prior.mean).amax() < 1e-14);
        assert!(post.cov[(2, 2)] < prior.cov[(2, 2)]);
    }

    #[test]
    fn rank_deficient_noiseless_is_rejected() {
        let (model, grid) = setup();
        let row = DMatrix::from_row_slice(2, 6, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let op = Operator::from_matrix(row).unwrap();
        let stage = DataStage::new(op.clone(), DVector::from_vec(vec![1.0, 2.0]), 0.0).unwrap();
        let err = condition_batch(&model, &grid, &stage).unwrap_err();
        assert!(matches!(err, Error::Singular { size: 2, rank: 1 }));
        let err = condition_via_representing_sequence(&model, &grid, &op, &stage.y).unwrap_err();
        assert!(matches!(err, Error::Singular { size: 2, rank: 1 }));
    }

    #[test]
    fn single_term_representing_sequence_is_normalized() {
        let c = DMatrix::from_element(1, 1, 4.0);
        let seq = representing_sequence(&c).unwrap();
        assert!(((seq.transpose() * &c * &seq)[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stage_validation() {
        let (_, grid) = setup();
        let op = pointwise_operator(&grid, &[0]).unwrap();
        assert!(DataStage::new(op.clone(), DVector::zeros(2), 0.0).is_err());
        assert!(DataStage::new(op, DVector::zeros(1), -1.0).is_err());
    }
}
