//! Prior covariance products `K0 A` evaluated chunk by chunk, so that no
//! m x m matrix is formed, checked against the dense product on a small grid.

use nalgebra::DMatrix;
use seqgp::budget::MemoryBudget;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::kernels::{prior_cov_dense, prior_covmul_counted, FlopCounter, Kernel, KernelFamily, PriorModel};

fn main() -> seqgp::error::Result<()> {
    let grid = Grid::new(2, &[40, 40], &[0.025, 0.025], &[0.0125, 0.0125])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern52, 1.0, 0.2)?, 0.0);
    let a = DMatrix::from_fn(grid.len(), 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let dense = prior_cov_dense(&model, &grid) * &a;

    for chunk in [100, 400, 1600] {
        let plan = ChunkPlan::for_grid(&grid, chunk)?;
        let flops = FlopCounter::new();
        let out = prior_covmul_counted(&model, &grid, &a, &plan, &MemoryBudget::default(), Some(&flops))?;
        let err = (&out - &dense).amax();
        println!(
            "chunk {chunk:>5}: {} chunks, {} multiply-adds, max |diff| {err:.2e}",
            plan.len(),
            flops.get()
        );
    }

    let tight = MemoryBudget::new(64 * 1024);
    let plan = ChunkPlan::for_grid(&grid, 100)?;
    let out = prior_covmul_counted(&model, &grid, &a, &plan, &tight, None)?;
    println!("64 KiB budget: max |diff| {:.2e}", (&out - &dense).amax());
    Ok(())
}
