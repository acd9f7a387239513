//! Posterior realizations by residual kriging, and the distribution of the
//! excursion volume they induce.

use seqgp::design::sample_truth;
use seqgp::excursion::coverage;
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::pointwise_operator;
use seqgp::sampling::{residual_update, sample_prior, volume_distribution};

fn main() -> seqgp::error::Result<()> {
    let grid = Grid::new(2, &[30, 30], &[1.0 / 30.0; 2], &[1.0 / 60.0; 2])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern32, 1.0, 0.3)?, 0.0);
    let truth = sample_truth(&model, &grid, 3)?;
    let idx: Vec<usize> = (0..grid.len()).step_by(37).collect();
    let op = pointwise_operator(&grid, &idx)?;
    let y = op.apply(&truth);
    let stage = DataStage::new(op, y, 1e-4)?;

    let mut post = ImplicitPosterior::new(model, grid.clone(), ChunkPlan::for_grid(&grid, 300)?)?;
    post.assimilate(&stage)?;
    let prior = sample_prior(&model, &grid, 2000, 17)?;
    let ens = residual_update(&prior, std::slice::from_ref(&stage), &post)?;

    let t = 1.0;
    let cv = grid.cell_volume();
    let truth_volume = truth.iter().filter(|v| **v >= t).count() as f64 * cv;
    let var = post.variance_diag()?;
    let cov = coverage(post.mean(), &var, t, model.kernel.variance(), cv)?;
    for (name, e) in [("prior", &prior), ("posterior", &ens)] {
        let vd = volume_distribution(e, t, cv)?;
        let q: Vec<String> = vd.quantiles.iter().map(|(q, v)| format!("q{q}={v:.4}")).collect();
        println!("{name:<9} mean {:.4} +- {:.4}  {}", vd.mean, vd.std_error, q.join(" "));
    }
    println!("integrated coverage {:.4}, true volume {truth_volume:.4}", cov.expected_volume());
    Ok(())
}
