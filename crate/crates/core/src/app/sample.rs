//! Prior and posterior ensembles with excursion-volume statistics.

use std::fs;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::index::sample;

use super::config::SampleConfig;
use super::manifest::RunManifest;
use super::RunOptions;
use crate::design::sample_truth;
use crate::error::Result;
use crate::excursion::coverage;
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::implicit::ImplicitPosterior;
use crate::io::{self, ScalarKind};
use crate::operators::pointwise_operator;
use crate::rng::{self, streams};
use crate::sampling::{residual_update, sample_prior, volume_distribution, Ensemble, VolumeDistribution};

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub prior: Ensemble,
    pub posterior: Option<Ensemble>,
    pub volumes: Option<VolumeDistribution>,
    pub manifest: RunManifest,
}

pub fn run(cfg: &SampleConfig, opts: &RunOptions) -> Result<SampleOutcome> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let model = cfg.kernel.model()?;
    let grid = Arc::new(Grid::from_spec(cfg.grid.clone())?);
    fs::create_dir_all(&opts.out)?;
    let mut manifest = RunManifest::create(
        &opts.out,
        "sample",
        cfg,
        seed,
        opts.threads,
        opts.budget,
        grid.spec().clone(),
        model,
    )?;

    let prior = sample_prior(&model, &grid, cfg.n_samples, seed)?;
    prior.write(&manifest.output("prior.bin", "prior realizations, one per row"), ScalarKind::F64)?;

    let mut post = ImplicitPosterior::new(model, grid.clone(), ChunkPlan::for_grid(&grid, cfg.chunk_size)?)?
        .with_budget(opts.budget);
    let posterior = if cfg.n_obs > 0 {
        let n_obs = cfg.n_obs.min(grid.len());
        let truth = sample_truth(&model, &grid, seed)?;
        let idx = sample(&mut rng::stream(seed, streams::DESIGN), grid.len(), n_obs).into_vec();
        let noise = rng::normal_vector(&mut rng::stream(seed, streams::DATA), n_obs) * cfg.noise_std;
        let y = DVector::from_iterator(n_obs, idx.iter().map(|&i| truth[i])) + noise;
        let stage = DataStage::new(pointwise_operator(&grid, &idx)?, y, cfg.noise_std.powi(2))?;
        post.assimilate(&stage)?;
        manifest.log_stages("sample", &post);
        io::write_field_csv(&manifest.output("truth.csv", "field the data were drawn from"), "value", truth.as_slice())?;
        let ens = residual_update(&prior, &[stage], &post)?;
        ens.write(
            &manifest.output("posterior.bin", "posterior realizations, one per row"),
            ScalarKind::F64,
        )?;
        Some(ens)
    } else {
        None
    };

    let volumes = match cfg.threshold {
        Some(t) => {
            let ens = posterior.as_ref().unwrap_or(&prior);
            let vd = volume_distribution(ens, t, grid.cell_volume())?;
            vd.write_csv(&manifest.output("volumes.csv", "excursion volume of each realization"))?;
            let var = post.variance_diag()?;
            let cov = coverage(post.mean(), &var, t, model.kernel.variance(), grid.cell_volume())?;
            cov.write_csv(&manifest.output("coverage.csv", "coverage function"))?;
            Some(vd)
        }
        None => None,
    };
    manifest.finish()?;
    Ok(SampleOutcome {
        prior,
        posterior,
        volumes,
        manifest,
    })
}
