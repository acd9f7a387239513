//! Prior ensembles and their transport to the posterior by residual kriging.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::Grid;
use crate::implicit::ImplicitPosterior;
use crate::io::{self, fmt_f64, ScalarKind};
use crate::kernels::{prior_cov_dense, PriorModel};
use crate::linalg::SpdFactor;
use crate::rng::{self, streams};

/// Largest grid sampled through a dense factorization.
pub const MAX_DENSE_SAMPLING_POINTS: usize = 20_000;

/// Samples per stage reserved in the residual noise stream space.
const STAGE_STREAM_STRIDE: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Prior,
    Posterior { stages: usize },
}

/// Realizations stored column-wise, `m x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub samples: DMatrix<f64>,
    pub seed: u64,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Stores the samples one realization per row.
    pub fn write(&self, path: &Path, kind: ScalarKind) -> Result<()> {
        io::write_matrix(path, &self.samples.transpose(), kind)
    }
}

/// `N` prior realizations `m0 + L xi` with `L L^T = K`, column `j` drawn from
/// its own stream so any subset can be regenerated.
pub fn sample_prior(model: &PriorModel, grid: &Grid, n: usize, seed: u64) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    let m = grid.len();
    if m > MAX_DENSE_SAMPLING_POINTS {
        return Err(Error::Budget {
            what: "dense prior factorization for sampling".into(),
            needed: (m as u64).pow(2) * 8,
            budget: (MAX_DENSE_SAMPLING_POINTS as u64).pow(2) * 8,
        });
    }
    let mut samples = DMatrix::from_element(m, n, model.m0);
    if model.kernel.variance() > 0.0 {
        let l = SpdFactor::new(&prior_cov_dense(model, grid))?.l();
        let xi = rng::normal_columns(seed, streams::PRIOR_SAMPLES, m, n);
        samples.gemm(1.0, &l, &xi, 1.0);
    }
    Ok(Ensemble {
        samples,
        seed,
        provenance: Provenance::Prior,
    })
}

fn check_stages(stages: &[DataStage], post: &ImplicitPosterior) -> Result<()> {
    if stages.len() != post.n_stages() {
        return Err(Error::StageMismatch {
            stage: stages.len().min(post.n_stages()),
            reason: format!(
                "{} data stages given, posterior holds {}",
                stages.len(),
                post.n_stages()
            ),
        });
    }
    for (i, (data, rec)) in stages.iter().zip(post.stages()).enumerate() {
        if data.op.matrix() != rec.operator().matrix() || data.tau2 != rec.tau2() {
            return Err(Error::StageMismatch {
                stage: i + 1,
                reason: "operator or noise level differs from the assimilated stage".into(),
            });
        }
    }
    Ok(())
}

/// Turns prior realizations into posterior ones: each sample is observed
/// through the same operators with fresh noise, and its own conditioning
/// residual is added to the posterior mean.
pub fn residual_update(prior: &Ensemble, stages: &[DataStage], post: &ImplicitPosterior) -> Result<Ensemble> {
    if prior.provenance != Provenance::Prior {
        return Err(Error::StageMismatch {
            stage: 0,
            reason: "input ensemble is not a prior ensemble".into(),
        });
    }
    check_stages(stages, post)?;
    if stages.is_empty() {
        return Ok(prior.clone());
    }
    if prior.samples.nrows() != post.grid().len() {
        return Err(Error::invalid("ensemble and posterior grids differ"));
    }
    let n = prior.len();
    let simulated: Vec<DMatrix<f64>> = stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let base = streams::RESIDUAL_NOISE + i as u64 * STAGE_STREAM_STRIDE;
            let noise = rng::normal_columns(prior.seed, base, s.rows(), n) * s.tau2.sqrt();
            s.op.matrix() * &prior.samples + noise
        })
        .collect();
    let sample_means = post.replay_means(&simulated)?;
    let mut samples = &prior.samples - sample_means;
    for mut col in samples.column_iter_mut() {
        col += post.mean();
    }
    Ok(Ensemble {
        samples,
        seed: prior.seed,
        provenance: Provenance::Posterior {
            stages: post.n_stages(),
        },
    })
}

/// Levels reported by [`volume_distribution`].
pub const VOLUME_QUANTILES: [f64; 5] = [0.05, 0.275, 0.5, 0.725, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeDistribution {
    /// Excursion volume of each sample, ascending.
    pub volumes: Vec<f64>,
    pub quantiles: Vec<(f64, f64)>,
    pub mean: f64,
    /// Monte-Carlo standard error of the mean.
    pub std_error: f64,
}

/// Linear interpolation between order statistics at position `q (n - 1)`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution of `cell_volume * #{x : Z(x) >= T}` over the ensemble.
pub fn volume_distribution(ens: &Ensemble, threshold: f64, cell_volume: f64) -> Result<VolumeDistribution> {
    if ens.is_empty() {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    let mut volumes: Vec<f64> = ens
        .samples
        .column_iter()
        .map(|c| c.iter().filter(|v| **v >= threshold).count() as f64 * cell_volume)
        .collect();
    volumes.sort_by(f64::total_cmp);
    let n = volumes.len() as f64;
    let mean = volumes.iter().sum::<f64>() / n;
    let var = if volumes.len() > 1 {
        volumes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let quantiles = VOLUME_QUANTILES
        .iter()
        .map(|&q| (q, empirical_quantile(&volumes, q)))
        .collect();
    Ok(VolumeDistribution {
        volumes,
        quantiles,
        mean,
        std_error: (var / n).sqrt(),
    })
}

impl VolumeDistribution {
    /// `rank,volume` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .volumes
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
            .collect();
        io::write_csv(path, &["rank", "volume"], &rows)
    }
}
