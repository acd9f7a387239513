//! Fourier coefficients versus point values on a 2D field: mean posterior
//! variance after each block of observations.

use std::sync::Arc;

use seqgp::app::config::SquareGridConfig;
use seqgp::app::fourier::{design_operators, Design};
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::sampling::sample_prior;

fn main() -> seqgp::error::Result<()> {
    let counts = [10, 50, 100];
    let grid = Arc::new(Grid::from_spec(SquareGridConfig { m: 30, lo: -1.0, hi: 1.0 }.spec())?);
    let plan = ChunkPlan::for_grid(&grid, 300)?;
    for lambda0 in [0.2, 0.8] {
        let model = PriorModel::new(Kernel::new(KernelFamily::Matern52, 1.0, lambda0)?, 0.0);
        let truth = sample_prior(&model, &grid, 1, 5)?.samples.column(0).into_owned();
        println!("lambda0 = {lambda0}");
        for design in [Design::Fourier, Design::Pointwise] {
            let mut post = ImplicitPosterior::new(model, grid.clone(), plan.clone())?;
            let mut line = format!("  {:<10}", design.name());
            for (op, n) in design_operators(&grid, design, &counts)?.into_iter().zip(counts) {
                let y = op.apply(&truth);
                post.assimilate(&DataStage::new(op, y, 1e-8)?)?;
                let err = (post.mean() - &truth).amax();
                line += &format!("  n={n:<3} var {:.4} err {:.3}", post.variance_diag()?.mean(), err);
            }
            println!("{line}");
        }
    }
    Ok(())
}
