//! Noiseless conditioning written as a sum over a representing sequence,
//! compared with the usual Schur-complement formula.

use nalgebra::DVector;
use seqgp::explicit::{condition_batch, condition_via_representing_sequence, DataStage};
use seqgp::grid::Grid;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::weighted_operator;

fn main() -> seqgp::error::Result<()> {
    let grid = Grid::new(1, &[60], &[1.0 / 60.0], &[1.0 / 120.0])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern52, 1.0, 0.2)?, 0.5);
    // three local averages and one contrast
    let op = weighted_operator(
        &grid,
        &[
            (0..10).map(|i| (i, 0.1)).collect(),
            (25..35).map(|i| (i, 0.1)).collect(),
            (50..60).map(|i| (i, 0.1)).collect(),
            vec![(15, 1.0), (45, -1.0)],
        ],
    )?;
    let y = DVector::from_vec(vec![0.2, 1.1, -0.4, 0.3]);
    let rs = condition_via_representing_sequence(&model, &grid, &op, &y)?;
    let schur = condition_batch(&model, &grid, &DataStage::new(op.clone(), y.clone(), 0.0)?)?;
    println!("mean difference       {:.2e}", (&rs.mean - &schur.mean).amax());
    println!("covariance difference {:.2e}", (&rs.cov - &schur.cov).amax());
    println!("data misfit |G m - y| {:.2e}", (op.apply(&rs.mean) - y).amax());
    Ok(())
}
