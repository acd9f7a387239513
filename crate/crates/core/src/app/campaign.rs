//! Synthetic gravimetric campaign: a prior draw plays the unknown density,
//! and stations are chosen one at a time on the volcano surface.
//!
//! The run directory holds the implicit posterior (`posterior/`), the
//! committed trajectory (`trajectory.json`) and, while a step is in flight,
//! `pending.json`. Together they let an interrupted run continue exactly
//! where it stopped.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{to_config, CampaignConfig};
use super::manifest::RunManifest;
use super::RunOptions;
use crate::design::{
    campaign_volume_distribution, choose_site, initial_record, limiting_distribution, observation, record_step, replay_design,
    sample_truth, write_trajectory_csv, CampaignState, LimitingDistribution, StepRecord, SurfaceSites,
};
use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::implicit::ImplicitPosterior;
use crate::io::{self, fmt_f64};
use crate::operators::GravityConfig;
use crate::rng::{self, streams};
use crate::sampling::VolumeDistribution;

const POSTERIOR_DIR: &str = "posterior";
const TRAJECTORY_FILE: &str = "trajectory.json";
const PENDING_FILE: &str = "pending.json";

/// Acquisition chosen but not yet committed to the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Pending {
    step: usize,
    site: usize,
    criterion: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    /// Step 0 is the prior; later entries are acquisitions.
    pub trajectory: Vec<StepRecord>,
    pub complete: bool,
    pub final_variance: Option<DVector<f64>>,
    pub limiting: Option<LimitingDistribution>,
    pub volume: Option<VolumeDistribution>,
    pub static_trajectory: Vec<StepRecord>,
    pub manifest: RunManifest,
}

/// Reads `x,y,z` rows; a non-numeric first line is taken as a header.
pub fn read_sites(path: &Path) -> Result<SurfaceSites> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read sites file {}: {e}", path.display())))?;
    let mut sites = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == 3 => sites.push([v[0], v[1], v[2]]),
            Err(_) if n == 0 => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: expected three numbers x,y,z",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    SurfaceSites::new(&sites).map_err(to_config)
}

/// Grid, sites and a fresh state at the prior, with the ground truth drawn
/// from `seed`.
pub fn initial_state(cfg: &CampaignConfig, seed: u64, opts: &RunOptions) -> Result<CampaignState> {
    cfg.validate()?;
    let model = cfg.kernel.model()?;
    let grid = Arc::new(cfg.volcano.grid()?);
    let sites = match &cfg.sites_file {
        Some(p) => read_sites(Path::new(p))?,
        None => cfg.volcano.sites()?,
    };
    let site_ops = Arc::new(cfg.volcano.operator(&grid, &sites, &GravityConfig::default())?);
    let chunks = ChunkPlan::for_grid(&grid, cfg.chunk_size)?;
    let truth = sample_truth(&model, &grid, seed)?;
    let post = ImplicitPosterior::new(model, grid, chunks)?.with_budget(opts.budget);
    let last = cfg.start.unwrap_or_else(|| sites.get(0));
    Ok(CampaignState {
        post,
        sites,
        site_ops,
        visited: Vec::new(),
        last,
        radius: cfg.candidate_radius,
        weight_mode: cfg.weight,
        threshold: cfg.threshold,
        tau2: cfg.noise_std * cfg.noise_std,
        seed,
        truth,
    })
}

/// Every site observed once, with seeded noise.
fn all_sites_data(state: &CampaignState) -> Result<DataStage> {
    let mut r = rng::stream(state.seed, streams::DATA);
    let noise = rng::normal_vector(&mut r, state.site_ops.rows()) * state.tau2.sqrt();
    let y = state.site_ops.apply(&state.truth) + noise;
    DataStage::new(state.site_ops.clone(), y, state.tau2)
}

fn write_vector_csv(path: &Path, columns: &[&str], cols: &[&DVector<f64>]) -> Result<()> {
    let n = cols[0].len();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(cols.iter().map(|c| fmt_f64(c[i])));
            row
        })
        .collect();
    let mut header = vec!["index"];
    header.extend_from_slice(columns);
    io::write_csv(path, &header, &rows)
}

/// Restores the state saved in `out`, finishing a step that was committed to
/// the posterior but not yet to the trajectory.
fn restore(cfg: &CampaignConfig, seed: u64, opts: &RunOptions, state: &mut CampaignState) -> Result<Vec<StepRecord>> {
    let out = &opts.out;
    let manifest = RunManifest::load(out)?;
    if manifest.config != serde_json::to_value(cfg)? || manifest.seed != seed {
        return Err(Error::Config(format!(
            "{} was produced by a different configuration or seed",
            out.display()
        )));
    }
    let post = ImplicitPosterior::open(
        out.join(POSTERIOR_DIR),
        *state.post.model(),
        state.post.grid().clone(),
        state.post.plan().clone(),
        opts.budget,
    )?;
    let mut records: Vec<StepRecord> = if out.join(TRAJECTORY_FILE).exists() {
        io::read_json(&out.join(TRAJECTORY_FILE))?
    } else {
        Vec::new()
    };
    state.post = post;
    for r in &records {
        state.visited.push(r.site);
        state.last = state.sites.get(r.site);
    }
    let pending_path = out.join(PENDING_FILE);
    let committed = state.post.n_stages();
    if committed == records.len() + 1 {
        let p: Pending = io::read_json(&pending_path)?;
        if p.step != committed {
            return Err(Error::Config("pending step does not match the stored posterior".into()));
        }
        info!("completing step {} from the saved posterior", p.step);
        let rec = finish_step(state, p)?;
        records.push(rec);
        io::write_json(&out.join(TRAJECTORY_FILE), &records)?;
    } else if committed != records.len() {
        return Err(Error::Config(format!(
            "stored posterior has {committed} stages but the trajectory has {}",
            records.len()
        )));
    }
    if pending_path.exists() {
        fs::remove_file(&pending_path)?;
    }
    Ok(records)
}

fn finish_step(state: &mut CampaignState, p: Pending) -> Result<StepRecord> {
    let y = observation(state, p.site, p.step);
    record_step(state, p.site, p.criterion, p.step, y)
}

/// Runs or resumes the campaign. With `stop_after`, the run pauses once that
/// many acquisitions are committed and can be resumed later.
pub fn run(cfg: &CampaignConfig, opts: &RunOptions, resume: bool, stop_after: Option<usize>) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut state = initial_state(cfg, seed, opts)?;
    fs::create_dir_all(&opts.out)?;

    let mut records = if resume && opts.out.join(POSTERIOR_DIR).join("posterior.json").exists() {
        restore(cfg, seed, opts, &mut state)?
    } else {
        if opts.out.join(TRAJECTORY_FILE).exists() {
            fs::remove_file(opts.out.join(TRAJECTORY_FILE))?;
        }
        if opts.out.join(POSTERIOR_DIR).exists() {
            fs::remove_dir_all(opts.out.join(POSTERIOR_DIR))?;
        }
        RunManifest::create(
            &opts.out,
            "grav-campaign",
            cfg,
            seed,
            opts.threads,
            opts.budget,
            state.post.grid().spec().clone(),
            *state.post.model(),
        )?;
        Vec::new()
    };
    let mut manifest = RunManifest::load(&opts.out)?;
    if state.post.run_dir().is_none() {
        state.post = state.post.clone().with_run_dir(opts.out.join(POSTERIOR_DIR))?;
    }

    let write_sites = manifest.output("sites.csv", "instrument sites x,y,z");
    let site_rows: Vec<Vec<String>> = state
        .sites
        .coords()
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), fmt_f64(s[0]), fmt_f64(s[1]), fmt_f64(s[2])])
        .collect();
    io::write_csv(&write_sites, &["site", "x", "y", "z"], &site_rows)?;
    write_vector_csv(&manifest.output("truth.csv", "ground truth density"), &["value"], &[&state.truth])?;
    manifest.save()?;

    let target = stop_after.map_or(cfg.n_steps, |s| s.min(cfg.n_steps));
    while records.len() < target {
        let step = records.len() + 1;
        let (site, criterion) = match choose_site(&state, cfg.policy, step) {
            Err(Error::CampaignComplete) => {
                info!("all sites visited after {} steps", records.len());
                break;
            }
            other => other?,
        };
        let pending = Pending { step, site, criterion };
        io::write_json(&opts.out.join(PENDING_FILE), &pending)?;
        let y = observation(&state, site, step);
        let op = state.site_ops.select_rows(&[site]);
        state.post.assimilate(&DataStage::new(op, DVector::from_element(1, y), state.tau2)?)?;
        let rec = finish_step(&mut state, pending)?;
        records.push(rec);
        io::write_json(&opts.out.join(TRAJECTORY_FILE), &records)?;
        fs::remove_file(opts.out.join(PENDING_FILE))?;
        manifest.log_stages("campaign", &state.post);
        manifest.save()?;
        info!("step {step}: site {site}, tp {:.3}, fp {:.3}", rec.tp, rec.fp);
    }

    let mut trajectory = vec![initial_record_for(cfg, seed, opts)?];
    trajectory.extend(records.iter().copied());
    write_trajectory_csv(&manifest.output("trajectory.csv", "per-step trajectory and detection"), &trajectory)?;
    let det_rows: Vec<Vec<String>> = trajectory
        .iter()
        .map(|r| vec![r.step.to_string(), fmt_f64(r.tp), fmt_f64(r.fp), fmt_f64(r.alpha_v)])
        .collect();
    io::write_csv(
        &manifest.output("detection.csv", "Vorob'ev expectation true/false positives"),
        &["step", "tp", "fp", "alpha_v"],
        &det_rows,
    )?;
    manifest.log_stages("campaign", &state.post);
    manifest.record_storage("campaign", &state.post);

    let finished = records.len() == cfg.n_steps || state.visited.len() == state.sites.len();
    if !finished {
        manifest.save()?;
        return Ok(CampaignOutcome {
            trajectory,
            complete: false,
            final_variance: None,
            limiting: None,
            volume: None,
            static_trajectory: Vec::new(),
            manifest,
        });
    }

    let final_variance = state.post.variance_diag()?;
    let cov = state.coverage()?;
    cov.write_csv(&manifest.output("coverage_final.csv", "coverage after the campaign"))?;
    cov.vorobev_expectation()
        .write_csv(&manifest.output("vorobev_final.csv", "Vorob'ev expectation after the campaign"))?;

    let limiting = limiting_distribution(
        state.post.model(),
        state.post.grid().clone(),
        state.post.plan().clone(),
        opts.budget,
        &all_sites_data(&state)?,
        cfg.limiting_batch,
        cfg.threshold,
    )?;
    write_vector_csv(
        &manifest.output("limiting.csv", "variance and coverage with every site observed"),
        &["limiting_variance", "limiting_coverage", "final_variance"],
        &[&limiting.variance, &DVector::from_column_slice(&limiting.coverage.p), &final_variance],
    )?;

    let volume = campaign_volume_distribution(&state, &trajectory, cfg.volume_samples)?;
    volume.write_csv(&manifest.output("volumes.csv", "posterior excursion volumes"))?;
    io::write_json(&manifest.output("volume_summary.json", "volume quantiles"), &(&volume.quantiles, volume.mean))?;

    let static_trajectory = if cfg.static_design.is_empty() {
        Vec::new()
    } else {
        let mut fresh = initial_state(cfg, seed, opts)?;
        let recs = replay_design(&mut fresh, &cfg.static_design)?;
        write_trajectory_csv(&manifest.output("static_trajectory.csv", "replayed static design"), &recs)?;
        recs
    };

    manifest.finish()?;
    Ok(CampaignOutcome {
        trajectory,
        complete: true,
        final_variance: Some(final_variance),
        limiting: Some(limiting),
        volume: Some(volume),
        static_trajectory,
        manifest,
    })
}

fn initial_record_for(cfg: &CampaignConfig, seed: u64, opts: &RunOptions) -> Result<StepRecord> {
    initial_record(&initial_state(cfg, seed, opts)?)
}

/// Grid of the configured volcano, for callers that post-process outputs.
pub fn campaign_grid(cfg: &CampaignConfig) -> Result<Grid> {
    cfg.volcano.grid()
}
