//! Marginal-likelihood fit of sigma0 and m0 over a grid of length scales,
//! then test-set metrics of the selected model.

use nalgebra::DVector;
use rand::seq::index::sample;
use seqgp::budget::MemoryBudget;
use seqgp::design::sample_truth;
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::hyper::{fit, predictive_metrics, FitOptions, Workspace};
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::pointwise_operator;
use seqgp::rng;

fn main() -> seqgp::error::Result<()> {
    let grid = Grid::new(2, &[25, 25], &[0.04, 0.04], &[0.02, 0.02])?;
    let plan = ChunkPlan::for_grid(&grid, 200)?;
    let budget = MemoryBudget::default();
    let ws = Workspace {
        grid: &grid,
        plan: &plan,
        budget: &budget,
    };
    let truth_model = PriorModel::new(Kernel::new(KernelFamily::Matern32, 2.0, 0.2)?, 1.0);
    let z = sample_truth(&truth_model, &grid, 8)?;

    let idx = sample(&mut rng::stream(8, 1), grid.len(), 200).into_vec();
    let (train_idx, test_idx) = idx.split_at(150);
    let noise = 0.05;
    let stage = |ids: &[usize], stream: u64| -> seqgp::error::Result<DataStage> {
        let op = pointwise_operator(&grid, ids)?;
        let eps = rng::normal_vector(&mut rng::stream(8, stream), ids.len()) * noise;
        let y: DVector<f64> = op.apply(&z) + eps;
        DataStage::new(op, y, noise * noise)
    };
    let train = stage(train_idx, 2)?;
    let test = stage(test_idx, 3)?;

    let res = fit(ws, &train, KernelFamily::Matern32, &[0.05, 0.1, 0.2, 0.4, 0.8], &FitOptions::default())?;
    println!("{:>8} {:>10} {:>10} {:>12}", "lambda0", "sigma0", "m0", "nmll");
    for r in &res.records {
        println!("{:>8.2} {:>10.4} {:>10.4} {:>12.4}", r.lambda0, r.sigma0, r.m0, r.nmll);
    }
    println!("selected lambda0 = {} (generating 0.2, sigma0 2.0, m0 1.0)", res.best.lambda0);
    let m = predictive_metrics(ws, &res.best_model(), &train, &test)?;
    println!("test rmse {:.4}, nlpd {:.4}", m.rmse, m.nlpd);
    Ok(())
}
