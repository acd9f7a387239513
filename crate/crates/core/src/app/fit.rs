//! Hyperparameter fit on pointwise data, read from a file or simulated from
//! a known prior.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;

use super::config::FitConfig;
use super::manifest::RunManifest;
use super::RunOptions;
use crate::design::sample_truth;
use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::hyper::{fit, FitOptions, FitResult, Workspace};
use crate::io::{self, fmt_f64};
use crate::operators::pointwise_operator;
use crate::rng::{self, streams};

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub result: FitResult,
    pub data: DataStage,
    pub manifest: RunManifest,
}

/// Reads `index,value` rows; a non-numeric first line is taken as a header.
pub fn read_pointwise_data(path: &Path, grid: &Grid) -> Result<(Vec<usize>, DVector<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read data file {}: {e}", path.display())))?;
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parsed = match (parts.next(), parts.next(), parts.next()) {
            (Some(i), Some(v), None) => i.parse::<usize>().ok().zip(v.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((i, v)) if i < grid.len() => {
                idx.push(i);
                vals.push(v);
            }
            None if n == 0 => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: expected index,value with index below {}",
                    path.display(),
                    n + 1,
                    grid.len()
                )))
            }
        }
    }
    if idx.is_empty() {
        return Err(Error::Config(format!("{} holds no observations", path.display())));
    }
    Ok((idx, DVector::from_vec(vals)))
}

/// Observations at `n_obs` distinct random nodes of a prior draw.
pub fn synthetic_data(cfg: &FitConfig, grid: &Grid, seed: u64) -> Result<(Vec<usize>, DVector<f64>)> {
    let syn = cfg.synthetic.as_ref().ok_or_else(|| Error::Config("missing [synthetic]".into()))?;
    if syn.n_obs > grid.len() {
        return Err(Error::Config("synthetic.n_obs exceeds the number of grid nodes".into()));
    }
    let truth = sample_truth(&syn.truth.model()?, grid, seed)?;
    let mut r = rng::stream(seed, streams::DESIGN);
    let idx = sample(&mut r, grid.len(), syn.n_obs).into_vec();
    let mut r = rng::stream(seed, streams::DATA);
    let noise = rng::normal_vector(&mut r, idx.len()) * cfg.noise_std;
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| truth[i])) + noise;
    Ok((idx, y))
}

pub fn run(cfg: &FitConfig, opts: &RunOptions) -> Result<FitOutcome> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let grid = Grid::from_spec(cfg.grid.clone())?;
    let plan = ChunkPlan::for_grid(&grid, cfg.chunk_size)?;
    fs::create_dir_all(&opts.out)?;

    let (idx, y) = match &cfg.data_file {
        Some(p) => read_pointwise_data(Path::new(p), &grid)?,
        None => synthetic_data(cfg, &grid, seed)?,
    };
    let data = DataStage::new(pointwise_operator(&grid, &idx)?, y, cfg.noise_std.powi(2))?;

    let fit_opts = FitOptions {
        sigma_init: cfg.sigma_init,
        max_iter: cfg.max_iter,
        ..FitOptions::default()
    };
    let ws = Workspace {
        grid: &grid,
        plan: &plan,
        budget: &opts.budget,
    };
    let result = fit(ws, &data, cfg.family, &cfg.lambda_grid, &fit_opts)?;

    let mut manifest = RunManifest::create(
        &opts.out,
        "fit",
        cfg,
        seed,
        opts.threads,
        opts.budget,
        grid.spec().clone(),
        result.best_model(),
    )?;
    let data_rows: Vec<Vec<String>> = idx
        .iter()
        .zip(data.y.iter())
        .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
        .collect();
    io::write_csv(&manifest.output("data.csv", "observations used in the fit"), &["index", "value"], &data_rows)?;
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.lambda0),
                fmt_f64(r.sigma0),
                fmt_f64(r.m0),
                fmt_f64(r.nmll),
                r.converged.to_string(),
                r.iterations.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &manifest.output("fit_table.csv", "profile over the length-scale grid"),
        &["lambda0", "sigma0", "m0", "nmll", "converged", "iterations"],
        &rows,
    )?;
    io::write_json(&manifest.output("best.json", "selected hyperparameters"), &result)?;
    manifest.finish()?;
    Ok(FitOutcome { result, data, manifest })
}

/// Plain-text table of the fit, one length scale per line.
pub fn format_table(result: &FitResult) -> String {
    let mut s = format!(
        "{:>12} {:>12} {:>12} {:>14} {:>9}\n",
        "lambda0", "sigma0", "m0", "nmll", "converged"
    );
    for r in &result.records {
        let mark = if r.lambda0 == result.best.lambda0 { " *" } else { "" };
        s.push_str(&format!(
            "{:>12.4} {:>12.4} {:>12.4} {:>14.4} {:>9}{mark}\n",
            r.lambda0, r.sigma0, r.m0, r.nmll, r.converged
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::config::{KernelConfig, SyntheticData};
    use crate::grid::GridSpec;
    use crate::kernels::KernelFamily;

    fn config() -> FitConfig {
        FitConfig {
            seed: 3,
            grid: GridSpec {
                dim: 1,
                shape: vec![120],
                spacing: vec![1.0 / 120.0],
                origin: vec![0.5 / 120.0],
            },
            family: KernelFamily::Matern52,
            lambda_grid: vec![0.05, 0.1, 0.2, 0.4],
            sigma_init: 1.0,
            noise_std: 0.05,
            data_file: None,
            synthetic: Some(SyntheticData {
                truth: KernelConfig {
                    family: KernelFamily::Matern52,
                    sigma0: 2.0,
                    lambda0: 0.2,
                    m0: 1.0,
                },
                n_obs: 80,
            }),
            max_iter: 200,
            chunk_size: 64,
        }
    }

    #[test]
    fn synthetic_fit_writes_table_and_recovers_scale() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&config(), &RunOptions::new(dir.path())).unwrap();
        assert_eq!(out.result.records.len(), 4);
        assert!(out.result.records.iter().all(|r| r.converged));
        assert!(out.result.best.sigma0 > 0.5 && out.result.best.sigma0 < 8.0);
        let table = fs::read_to_string(dir.path().join("fit_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 5);
        let best: FitResult = io::read_json(&dir.path().join("best.json")).unwrap();
        assert_eq!(best, out.result);
        assert!(format_table(&best).contains(" *"));
    }

    #[test]
    fn data_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let first = run(&config(), &RunOptions::new(dir.path().join("a"))).unwrap();
        let mut cfg = config();
        cfg.synthetic = None;
        cfg.data_file = Some(dir.path().join("a/data.csv").to_string_lossy().into_owned());
        let second = run(&cfg, &RunOptions::new(dir.path().join("b"))).unwrap();
        assert_eq!(first.result, second.result);
    }

    #[test]
    fn bad_data_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "index,value\n0,1.0\n9999,2.0\n").unwrap();
        let mut cfg = config();
        cfg.synthetic = None;
        cfg.data_file = Some(p.to_string_lossy().into_owned());
        let err = run(&cfg, &RunOptions::new(dir.path().join("o"))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
