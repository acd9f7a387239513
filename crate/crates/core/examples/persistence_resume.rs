//! A posterior persisted to a run directory, reopened in a fresh process
//! state, and extended; the matrix files use the SGPM binary layout.

use nalgebra::{DMatrix, DVector};
use seqgp::budget::MemoryBudget;
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::io::read_header;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::pointwise_operator;

fn main() -> seqgp::error::Result<()> {
    let dir = std::env::temp_dir().join("seqgp_persistence_example");
    let _ = std::fs::remove_dir_all(&dir);
    let grid = Grid::new(1, &[500], &[0.002], &[0.001])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern32, 1.0, 0.05)?, 0.0);
    let plan = ChunkPlan::for_grid(&grid, 128)?;
    let stage = |idx: &[usize]| -> seqgp::error::Result<DataStage> {
        let op = pointwise_operator(&grid, idx)?;
        let y = DVector::from_fn(idx.len(), |i, _| (idx[i] as f64 / 80.0).sin());
        DataStage::new(op, y, 1e-4)
    };

    let mut post = ImplicitPosterior::new(model, grid.clone(), plan.clone())?.with_run_dir(&dir)?;
    post.assimilate(&stage(&[50, 150, 250])?)?;
    post.assimilate(&stage(&[350, 450])?)?;
    let h = read_header(&dir.join("stage_1").join("lambda.bin"))?;
    println!("stage 1 pushforward on disk: {} x {}, {} payload bytes", h.rows, h.cols, h.payload_bytes());

    // 10 KB keeps the first pushforward on disk; products stream it back
    let mut reopened = ImplicitPosterior::open(&dir, model, grid.clone(), plan, MemoryBudget::new(10_000))?;
    let resident: Vec<bool> = reopened.stages().iter().map(|s| s.is_resident()).collect();
    println!("reopened {} stages, resident in memory: {resident:?}", reopened.n_stages());

    let probe = DMatrix::from_fn(500, 1, |i, _| (i % 3) as f64);
    let diff = (post.covmul(&probe)? - reopened.covmul(&probe)?).amax();
    println!("covmul difference after reopening: {diff:.2e}");

    post.assimilate(&stage(&[100, 300])?)?;
    reopened.assimilate(&stage(&[100, 300])?)?;
    println!("mean difference after a further stage: {:.2e}", (post.mean() - reopened.mean()).amax());
    Ok(())
}
