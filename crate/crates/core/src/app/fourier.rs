//! Two-dimensional demo: Fourier coefficients versus pointwise values.
//!
//! A Matérn field on a square is observed either through its DFT
//! coefficients, taken in order of increasing l-infinity frequency norm, or
//! through field values along a Halton sequence. Posterior mean and standard
//! deviation are written after each block of observations.

use std::fs;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::FourierDemoConfig;
use super::manifest::RunManifest;
use super::RunOptions;
use crate::budget::MemoryBudget;
use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::implicit::{explicit_storage_bytes, implicit_storage_bytes, ImplicitPosterior};
use crate::io::{self, fmt_f64};
use crate::operators::{dft_operator, independent_frequencies, pointwise_operator, Operator};
use crate::rng::{self, streams};
use crate::sampling::sample_prior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Fourier,
    Pointwise,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Fourier => "fourier",
            Design::Pointwise => "pointwise",
        }
    }
}

/// Radical inverse of `i` in `base`.
pub fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `n` distinct grid nodes hit by the 2D Halton sequence.
pub fn space_filling_indices(grid: &Grid, n: usize) -> Result<Vec<usize>> {
    if n > grid.len() {
        return Err(Error::invalid("more design points than grid nodes"));
    }
    let spec = grid.spec();
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::with_capacity(n);
    let mut i = 1;
    while out.len() < n {
        let p: Vec<f64> = [halton(i, 2), halton(i, 3)]
            .iter()
            .enumerate()
            .map(|(a, t)| {
                let lo = spec.origin[a] - 0.5 * spec.spacing[a];
                lo + t * spec.shape[a] as f64 * spec.spacing[a]
            })
            .collect();
        if let Some(j) = grid.locate(&p) {
            if !seen[j] {
                seen[j] = true;
                out.push(j);
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Number of observation rows contributed by each block of coefficients.
fn fourier_block_rows(mside: usize, counts: &[usize]) -> Result<Vec<usize>> {
    let freqs = independent_frequencies(mside);
    if *counts.last().unwrap() > freqs.len() {
        return Err(Error::Config(format!(
            "only {} independent Fourier coefficients exist on a {mside}x{mside} grid",
            freqs.len()
        )));
    }
    let mut prev = 0;
    Ok(counts
        .iter()
        .map(|&c| {
            let rows = freqs[prev..c].iter().map(|(_, imag)| 1 + usize::from(*imag)).sum();
            prev = c;
            rows
        })
        .collect())
}

/// Observation operators for each block, without zero rows.
pub fn design_operators(grid: &Grid, design: Design, counts: &[usize]) -> Result<Vec<Operator>> {
    let mut prev = 0;
    match design {
        Design::Fourier => {
            let mside = grid.shape()[0];
            fourier_block_rows(mside, counts)?;
            let freqs: Vec<(usize, usize)> = independent_frequencies(mside).into_iter().map(|(f, _)| f).collect();
            counts
                .iter()
                .map(|&c| {
                    let op = dft_operator(grid, &freqs[prev..c])?;
                    prev = c;
                    let zero = op.degenerate_rows();
                    let keep: Vec<usize> = (0..op.rows()).filter(|i| !zero.contains(i)).collect();
                    Ok(op.select_rows(&keep))
                })
                .collect()
        }
        Design::Pointwise => {
            let idx = space_filling_indices(grid, *counts.last().unwrap())?;
            counts
                .iter()
                .map(|&c| {
                    let op = pointwise_operator(grid, &idx[prev..c]);
                    prev = c;
                    op
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPlan {
    pub design: Design,
    pub stage_rows: Vec<usize>,
    /// Implicit representation after all stages, f64.
    pub implicit_bytes: u64,
    /// Largest single pushforward, f64.
    pub largest_pushforward_bytes: u64,
}

/// Storage needed by the demo, computed from sizes alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub grid_points: usize,
    pub explicit_bytes_f64: u64,
    pub explicit_bytes_f32: u64,
    pub tracks: Vec<TrackPlan>,
    pub budget: MemoryBudget,
}

pub fn memory_plan(cfg: &FourierDemoConfig, budget: MemoryBudget) -> Result<MemoryPlan> {
    cfg.validate()?;
    let mside = cfg.grid.m;
    let m = mside * mside;
    let mut tracks = Vec::new();
    for design in [Design::Fourier, Design::Pointwise] {
        let stage_rows = match design {
            Design::Fourier => fourier_block_rows(mside, &cfg.design.counts)?,
            Design::Pointwise => {
                let mut prev = 0;
                cfg.design
                    .counts
                    .iter()
                    .map(|&c| {
                        let r = c - prev;
                        prev = c;
                        r
                    })
                    .collect()
            }
        };
        let largest = stage_rows.iter().map(|&p| MemoryBudget::matrix_bytes(m, p)).max().unwrap_or(0);
        budget.check(&format!("{} pushforward", design.name()), largest)?;
        tracks.push(TrackPlan {
            design,
            implicit_bytes: implicit_storage_bytes(m, &stage_rows, 8),
            largest_pushforward_bytes: largest,
            stage_rows,
        });
    }
    Ok(MemoryPlan {
        grid_points: m,
        explicit_bytes_f64: explicit_storage_bytes(m, 8),
        explicit_bytes_f32: explicit_storage_bytes(m, 4),
        tracks,
        budget,
    })
}

/// Posterior summary after one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub design: Design,
    pub n: usize,
    pub rows: usize,
    pub mean_variance: f64,
    pub max_variance: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct FourierOutcome {
    pub plan: MemoryPlan,
    pub summaries: Vec<BlockSummary>,
    pub manifest: RunManifest,
}

fn write_grid_field(path: &std::path::Path, grid: &Grid, values: &DVector<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            vec![i.to_string(), fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(values[i])]
        })
        .collect();
    io::write_csv(path, &["index", "x", "y", "value"], &rows)
}

pub fn run(cfg: &FourierDemoConfig, opts: &RunOptions) -> Result<FourierOutcome> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let model = cfg.kernel.model()?;
    let spec = cfg.grid.spec();
    fs::create_dir_all(&opts.out)?;
    let mut manifest = RunManifest::create(
        &opts.out,
        "fourier-demo",
        cfg,
        seed,
        opts.threads,
        opts.budget,
        spec.clone(),
        model,
    )?;

    let plan = memory_plan(cfg, opts.budget)?;
    io::write_json(&manifest.output("memory_plan.json", "storage plan"), &plan)?;
    manifest.save()?;
    if cfg.plan_only {
        manifest.finish()?;
        return Ok(FourierOutcome {
            plan,
            summaries: Vec::new(),
            manifest,
        });
    }

    let grid = Arc::new(Grid::from_spec(spec)?);
    let chunks = ChunkPlan::for_grid(&grid, cfg.chunk_size)?;
    let truth = sample_prior(&model, &grid, 1, seed)?.samples.column(0).into_owned();
    write_grid_field(&manifest.output("ground_truth.csv", "ground truth field"), &grid, &truth)?;
    let tau2 = cfg.design.noise_std.powi(2);

    let mut summaries = Vec::new();
    for (d, design) in [Design::Fourier, Design::Pointwise].into_iter().enumerate() {
        let ops = design_operators(&grid, design, &cfg.design.counts)?;
        let mut post = ImplicitPosterior::new(model, grid.clone(), chunks.clone())?.with_budget(opts.budget);
        for (k, (op, &n)) in ops.into_iter().zip(&cfg.design.counts).enumerate() {
            let mut r = rng::stream(seed, streams::DATA + (d * 1000 + k) as u64);
            let noise = rng::normal_vector(&mut r, op.rows()) * cfg.design.noise_std;
            let y = op.apply(&truth) + noise;
            let rows = op.rows();
            post.assimilate(&DataStage::new(op, y, tau2)?)?;
            let var = post.variance_diag()?.map(|v| v.max(0.0));
            let name = design.name();
            write_grid_field(
                &manifest.output(&format!("{name}_n{n}_mean.csv"), "posterior mean"),
                &grid,
                post.mean(),
            )?;
            write_grid_field(
                &manifest.output(&format!("{name}_n{n}_std.csv"), "posterior standard deviation"),
                &grid,
                &var.map(f64::sqrt),
            )?;
            summaries.push(BlockSummary {
                design,
                n,
                rows,
                mean_variance: var.mean(),
                max_variance: var.max(),
                max_abs_error: (post.mean() - &truth).amax(),
            });
            manifest.log_stages(name, &post);
            manifest.record_storage(name, &post);
            manifest.save()?;
        }
    }
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.design.name().to_string(),
                s.n.to_string(),
                s.rows.to_string(),
                fmt_f64(s.mean_variance),
                fmt_f64(s.max_variance),
                fmt_f64(s.max_abs_error),
            ]
        })
        .collect();
    io::write_csv(
        &manifest.output("summary.csv", "posterior variance per block"),
        &["design", "n", "rows", "mean_variance", "max_variance", "max_abs_error"],
        &rows,
    )?;
    manifest.finish()?;
    Ok(FourierOutcome {
        plan,
        summaries,
        manifest,
    })
}
