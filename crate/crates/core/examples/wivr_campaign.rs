//! Sequential gravimetric survey of a synthetic volcano: wIVR against a
//! random walk on the same ground truth.

use seqgp::app::campaign::initial_state;
use seqgp::app::config::CampaignConfig;
use seqgp::app::RunOptions;
use seqgp::design::{initial_record, run_steps, Policy};

fn main() -> seqgp::error::Result<()> {
    let mut cfg = CampaignConfig::with_threshold(0.0);
    cfg.kernel.lambda0 = 88.44;
    cfg.threshold = cfg.kernel.m0 + 1.2816 * cfg.kernel.sigma0;
    let seed = 4;
    let opts = RunOptions::new(std::env::temp_dir());
    let mut adaptive = initial_state(&cfg, seed, &opts)?;
    let mut walk = adaptive.clone();
    let start = initial_record(&adaptive)?;
    println!("{} sites, {} cells; prior tp {:.3}", adaptive.sites.len(), adaptive.truth.len(), start.tp);

    let a = run_steps(&mut adaptive, Policy::Wivr, 30)?;
    let w = run_steps(&mut walk, Policy::RandomWalk, 30)?;
    println!("{:>4} {:>6} {:>16} {:>8} {:>8} {:>12}", "step", "site", "criterion", "tp", "fp", "mean var");
    for r in a.iter().filter(|r| r.step % 5 == 0) {
        println!(
            "{:>4} {:>6} {:>16.4e} {:>8.3} {:>8.3} {:>12.1}",
            r.step, r.site, r.criterion, r.tp, r.fp, r.mean_variance
        );
    }
    let (ea, ew) = (a.last().unwrap(), w.last().unwrap());
    println!("after 30 steps: wIVR tp {:.3} fp {:.3} | random walk tp {:.3} fp {:.3}", ea.tp, ea.fp, ew.tp, ew.fp);
    println!("mean variance: wIVR {:.1} | random walk {:.1}", ea.mean_variance, ew.mean_variance);
    Ok(())
}
