//! Storage of the explicit posterior covariance versus the implicit one, and
//! what happens when a product does not fit the memory budget.

use seqgp::app::config::{FourierDemoConfig, SquareGridConfig};
use seqgp::app::fourier::memory_plan;
use seqgp::budget::MemoryBudget;
use seqgp::implicit::{explicit_storage_bytes, implicit_storage_bytes};

fn gb(b: u64) -> f64 {
    b as f64 / 1e9
}

fn main() {
    println!("{:>9} {:>8} {:>14} {:>14}", "cells", "stages", "explicit GB", "implicit GB");
    for m in [10_000usize, 50_000, 200_000] {
        for stages in [50usize, 450] {
            println!(
                "{m:>9} {stages:>8} {:>14.2} {:>14.3}",
                gb(explicit_storage_bytes(m, 4)),
                gb(implicit_storage_bytes(m, &vec![1; stages], 4))
            );
        }
    }

    let mut cfg = FourierDemoConfig::default();
    cfg.grid = SquareGridConfig { m: 400, lo: -1.0, hi: 1.0 };
    for budget in [MemoryBudget::default(), MemoryBudget::new(1 << 20)] {
        match memory_plan(&cfg, budget) {
            Ok(plan) => println!(
                "\nM = 400 with {} B budget: {} cells, explicit f32 {:.1} GB, plan fits",
                budget.bytes,
                plan.grid_points,
                gb(plan.explicit_bytes_f32)
            ),
            Err(e) => println!("M = 400 with {} B budget: {e} (exit code {})", budget.bytes, e.exit_code()),
        }
    }
}
