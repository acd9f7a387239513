//! Coverage function, Vorob'ev quantiles and expectation for a 1D posterior,
//! scored against the true excursion set.

use nalgebra::DVector;
use seqgp::excursion::{coverage, detection_metrics, plugin_estimate};
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::pointwise_operator;

fn main() -> seqgp::error::Result<()> {
    let m = 100;
    let grid = Grid::new(1, &[m], &[0.01], &[0.005])?;
    let model = PriorModel::new(Kernel::new(KernelFamily::Matern52, 1.0, 0.15)?, 0.0);
    let truth = DVector::from_fn(m, |i, _| {
        let x = grid.point(i)[0];
        1.5 * (6.0 * x).sin() + 0.5 * (17.0 * x).cos()
    });
    let op = pointwise_operator(&grid, &[5, 20, 35, 50, 65, 80, 95])?;
    let y = op.apply(&truth);
    let mut post = ImplicitPosterior::new(model, grid.clone(), ChunkPlan::for_grid(&grid, 50)?)?;
    post.assimilate(&DataStage::new(op, y, 0.01)?)?;

    let t = 1.0;
    let var = post.variance_diag()?;
    let cov = coverage(post.mean(), &var, t, model.kernel.variance(), grid.cell_volume())?;
    let truth_mask: Vec<bool> = truth.iter().map(|v| *v >= t).collect();
    println!("true volume {:.3}, expected volume {:.3}", truth_mask.iter().filter(|b| **b).count() as f64 * 0.01, cov.expected_volume());
    for alpha in [0.95, 0.5, 0.05] {
        let q = cov.quantile(alpha)?;
        let d = detection_metrics(&q.mask, &truth_mask)?;
        println!("Q_{alpha:<4}: volume {:.3}, tp {:.3}, fp {:.3}", q.volume, d.tp, d.fp);
    }
    let v = cov.vorobev_expectation();
    let d = detection_metrics(&v.mask, &truth_mask)?;
    println!("Vorob'ev expectation: alpha_V {:.4}, volume {:.3}, tp {:.3}, fp {:.3}", v.alpha, v.volume, d.tp, d.fp);
    let p = plugin_estimate(post.mean(), t, grid.cell_volume());
    let d = detection_metrics(&p.mask, &truth_mask)?;
    println!("plug-in estimate: volume {:.3}, tp {:.3}, fp {:.3}", p.volume, d.tp, d.fp);
    Ok(())
}
