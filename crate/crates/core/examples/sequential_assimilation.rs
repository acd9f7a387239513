//! Stage-by-stage conditioning with the implicit posterior, compared with a
//! single batch update and with the explicit dense posterior.

use nalgebra::{DMatrix, DVector};
use seqgp::explicit::{condition_batch, DataStage};
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::{pointwise_operator, weighted_operator};

fn main() -> seqgp::error::Result<()> {
    let grid = Grid::new(1, &[200], &[0.005], &[0.0025])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern32, 1.0, 0.1)?, 0.0);
    let plan = ChunkPlan::for_grid(&grid, 64)?;
    let tau2 = 1e-4;
    let truth = DVector::from_fn(200, |i, _| (i as f64 * 0.05).sin());

    let ops = vec![
        pointwise_operator(&grid, &[10, 60, 110, 160])?,
        weighted_operator(&grid, &[(40..60).map(|i| (i, 0.05)).collect()])?,
        pointwise_operator(&grid, &[30, 130, 190])?,
    ];
    let stages: Vec<DataStage> = ops
        .into_iter()
        .map(|op| {
            let y = op.apply(&truth);
            DataStage::new(op, y, tau2)
        })
        .collect::<seqgp::error::Result<_>>()?;

    let mut post = ImplicitPosterior::new(model, grid.clone(), plan.clone())?;
    for (i, s) in stages.iter().enumerate() {
        post.assimilate(s)?;
        let var = post.variance_diag()?;
        println!("after stage {}: {} rows, mean variance {:.5}", i + 1, s.rows(), var.mean());
    }

    let refs: Vec<&DataStage> = stages.iter().collect();
    let all = DataStage::stack(&refs)?;
    let mut batch = ImplicitPosterior::new(model, grid.clone(), plan)?;
    batch.assimilate(&all)?;
    let dense = condition_batch(&model, &grid, &all)?;

    let probe = DMatrix::from_fn(200, 2, |i, j| ((i + j) % 5) as f64);
    let seq_vs_batch = (post.covmul(&probe)? - batch.covmul(&probe)?).amax();
    let seq_vs_dense = (post.mean() - &dense.mean).amax().max((post.variance_diag()? - dense.variance()).amax());
    println!("sequential vs batch covmul: {seq_vs_batch:.2e}");
    println!("sequential vs dense mean/variance: {seq_vs_dense:.2e}");
    Ok(())
}
