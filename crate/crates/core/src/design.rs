//! Sequential experimental design for excursion set estimation.
//!
//! Candidates are scored by weighted integrated variance reduction (wIVR):
//! the drop in pointwise posterior variance an observation would cause,
//! weighted by the current coverage and integrated over the domain.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursion::{coverage, detection_metrics, CoverageField, Detection};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::implicit::ImplicitPosterior;
use crate::budget::MemoryBudget;
use crate::io::{fmt_f64, write_csv};
use crate::kernels::PriorModel;
use crate::operators::{gravity_operator, GravityConfig, Operator};
use crate::rng::{self, streams};
use crate::sampling::{residual_update, sample_prior, volume_distribution, VolumeDistribution};

/// wIVR of each candidate row of `candidates`, evaluated with a single
/// `m x q` covariance product.
pub fn wivr(post: &ImplicitPosterior, candidates: &Operator, tau2: f64, weight: &DVector<f64>) -> Result<Vec<f64>> {
    let m = post.grid().len();
    if candidates.cols() != m || weight.len() != m {
        return Err(Error::invalid("candidate operator and weight must match the grid"));
    }
    if weight.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    let g = candidates.matrix();
    let u = post.covmul(&g.transpose())?;
    let cell_volume = post.grid().cell_volume();
    (0..g.nrows())
        .map(|j| {
            let col = u.column(j);
            let s2 = g.row(j).dot(&col.transpose()) + tau2;
            if !(s2 > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive predictive variance {s2:e} for candidate {j}"
                )));
            }
            let num: f64 = col.iter().zip(weight.iter()).map(|(u, w)| u * u * w).sum();
            Ok(num / s2 * cell_volume)
        })
        .collect()
}

/// Surface locations where the instrument can be placed, duplicates removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSites {
    coords: Vec<[f64; 3]>,
}

impl SurfaceSites {
    /// Keeps the first of any exactly colocated sites.
    pub fn new(sites: &[[f64; 3]]) -> Result<Self> {
        let mut coords: Vec<[f64; 3]> = Vec::with_capacity(sites.len());
        for s in sites {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("site coordinates must be finite"));
            }
            if !coords.contains(s) {
                coords.push(*s);
            }
        }
        if coords.is_empty() {
            return Err(Error::invalid("at least one surface site is required"));
        }
        Ok(SurfaceSites { coords })
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> [f64; 3] {
        self.coords[i]
    }

    /// Index of the site nearest to `p`, lowest index on ties.
    pub fn nearest(&self, p: [f64; 3]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| dist(self.coords[a], p).total_cmp(&dist(self.coords[b], p)))
            .expect("sites are non-empty")
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Unvisited sites within `radius` of `last`; the nearest unvisited site when
/// the ball holds none.
pub fn candidate_set(sites: &SurfaceSites, visited: &[usize], last: [f64; 3], radius: f64) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("candidate radius must be positive"));
    }
    let mut taken = vec![false; sites.len()];
    for &v in visited {
        taken[v] = true;
    }
    let free: Vec<usize> = (0..sites.len()).filter(|&i| !taken[i]).collect();
    if free.is_empty() {
        return Err(Error::CampaignComplete);
    }
    let ball: Vec<usize> = free
        .iter()
        .copied()
        .filter(|&i| dist(sites.get(i), last) <= radius)
        .collect();
    if !ball.is_empty() {
        return Ok(ball);
    }
    let nearest = free
        .iter()
        .copied()
        .min_by(|&a, &b| dist(sites.get(a), last).total_cmp(&dist(sites.get(b), last)))
        .expect("free is non-empty");
    Ok(vec![nearest])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Coverage,
    Uniform,
}

/// How the next site is picked among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Largest weighted variance reduction, lowest site index on ties.
    Wivr,
    /// Uniformly random candidate.
    RandomWalk,
}

/// One acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub site: usize,
    pub coords: [f64; 3],
    pub criterion: f64,
    pub observation: f64,
    pub tp: f64,
    pub fp: f64,
    pub alpha_v: f64,
    pub mean_variance: f64,
}

/// A running campaign: posterior, visit history and the truth being probed.
#[derive(Debug, Clone)]
pub struct CampaignState {
    pub post: ImplicitPosterior,
    pub sites: SurfaceSites,
    /// One observation row per site.
    pub site_ops: Arc<Operator>,
    pub visited: Vec<usize>,
    pub last: [f64; 3],
    pub radius: f64,
    pub weight_mode: WeightMode,
    pub threshold: f64,
    pub tau2: f64,
    pub seed: u64,
    pub truth: DVector<f64>,
}

impl CampaignState {
    pub fn truth_mask(&self) -> Vec<bool> {
        self.truth.iter().map(|v| *v >= self.threshold).collect()
    }

    pub fn coverage(&self) -> Result<CoverageField> {
        let var = self.post.variance_diag()?;
        coverage(
            self.post.mean(),
            &var,
            self.threshold,
            self.post.model().kernel.variance(),
            self.post.grid().cell_volume(),
        )
    }

    fn weight(&self, cov: &CoverageField) -> DVector<f64> {
        match self.weight_mode {
            WeightMode::Coverage => DVector::from_column_slice(&cov.p),
            WeightMode::Uniform => DVector::from_element(cov.p.len(), 1.0),
        }
    }

    /// Detection scores of the current Vorob'ev expectation.
    pub fn detection(&self) -> Result<(Detection, f64)> {
        let v = self.coverage()?.vorobev_expectation();
        Ok((detection_metrics(&v.mask, &self.truth_mask())?, v.alpha))
    }

    /// Data stages assimilated so far, rebuilt from the trajectory.
    pub fn stages(&self, trajectory: &[StepRecord]) -> Result<Vec<DataStage>> {
        trajectory
            .iter()
            .map(|r| {
                DataStage::new(
                    self.site_ops.select_rows(&[r.site]),
                    DVector::from_element(1, r.observation),
                    self.tau2,
                )
            })
            .collect()
    }
}

/// Scores all candidates and returns the chosen site with its criterion.
pub fn choose_site(state: &CampaignState, policy: Policy, step: usize) -> Result<(usize, f64)> {
    let cands = candidate_set(&state.sites, &state.visited, state.last, state.radius)?;
    let ops = state.site_ops.select_rows(&cands);
    let cov = state.coverage()?;
    let scores = wivr(&state.post, &ops, state.tau2, &state.weight(&cov))?;
    let pick = match policy {
        Policy::Wivr => {
            let mut best = 0;
            for k in 1..cands.len() {
                let better = scores[k] > scores[best]
                    || (scores[k] == scores[best] && cands[k] < cands[best]);
                if better {
                    best = k;
                }
            }
            best
        }
        Policy::RandomWalk => {
            let mut r = rng::stream(state.seed, streams::DESIGN + step as u64);
            r.random_range(0..cands.len())
        }
    };
    Ok((cands[pick], scores[pick]))
}

/// Noisy reading of `site` in the truth; the noise depends only on the seed
/// and the step.
pub fn observation(state: &CampaignState, site: usize, step: usize) -> f64 {
    let mut r = rng::stream(state.seed, streams::CAMPAIGN_NOISE + step as u64);
    let noise = rng::normal_vector(&mut r, 1)[0] * state.tau2.sqrt();
    state.site_ops.matrix().row(site).transpose().dot(&state.truth) + noise
}

/// Marks `site` visited after its stage has been assimilated and scores the
/// new state.
pub fn record_step(state: &mut CampaignState, site: usize, criterion: f64, step: usize, y: f64) -> Result<StepRecord> {
    state.visited.push(site);
    state.last = state.sites.get(site);
    let var = state.post.variance_diag()?;
    let (det, alpha_v) = state.detection()?;
    Ok(StepRecord {
        step,
        site,
        coords: state.sites.get(site),
        criterion,
        observation: y,
        tp: det.tp,
        fp: det.fp,
        alpha_v,
        mean_variance: var.mean(),
    })
}

/// Observes `site` in the truth with seeded noise and assimilates it.
pub fn observe(state: &mut CampaignState, site: usize, criterion: f64, step: usize) -> Result<StepRecord> {
    let y = observation(state, site, step);
    let op = state.site_ops.select_rows(&[site]);
    state
        .post
        .assimilate(&DataStage::new(op, DVector::from_element(1, y), state.tau2)?)?;
    record_step(state, site, criterion, step, y)
}

/// One myopic acquisition.
pub fn myopic_step(state: &mut CampaignState, policy: Policy) -> Result<StepRecord> {
    let step = state.visited.len() + 1;
    let (site, criterion) = choose_site(state, policy, step)?;
    observe(state, site, criterion, step)
}

/// Record of the state before any acquisition.
pub fn initial_record(state: &CampaignState) -> Result<StepRecord> {
    let var = state.post.variance_diag()?;
    let (det, alpha_v) = state.detection()?;
    Ok(StepRecord {
        step: 0,
        site: usize::MAX,
        coords: state.last,
        criterion: f64::NAN,
        observation: f64::NAN,
        tp: det.tp,
        fp: det.fp,
        alpha_v,
        mean_variance: var.mean(),
    })
}

/// `n_steps` acquisitions, continuing from the current visit count.
pub fn run_steps(state: &mut CampaignState, policy: Policy, n_steps: usize) -> Result<Vec<StepRecord>> {
    (0..n_steps).map(|_| myopic_step(state, policy)).collect()
}

/// Re-runs a fixed list of sites in order.
pub fn replay_design(state: &mut CampaignState, sites: &[usize]) -> Result<Vec<StepRecord>> {
    sites
        .iter()
        .map(|&site| {
            if site >= state.sites.len() {
                return Err(Error::invalid(format!("site {site} out of range")));
            }
            let step = state.visited.len() + 1;
            observe(state, site, f64::NAN, step)
        })
        .collect()
}

/// Posterior excursion-volume distribution at the campaign's current state,
/// by residual kriging of `n_samples` prior realizations.
pub fn campaign_volume_distribution(
    state: &CampaignState,
    trajectory: &[StepRecord],
    n_samples: usize,
) -> Result<VolumeDistribution> {
    let acquired: Vec<StepRecord> = trajectory.iter().filter(|r| r.step > 0).copied().collect();
    let stages = state.stages(&acquired)?;
    let prior = sample_prior(state.post.model(), state.post.grid(), n_samples, state.seed)?;
    let posterior = residual_update(&prior, &stages, &state.post)?;
    volume_distribution(&posterior, state.threshold, state.post.grid().cell_volume())
}

/// Posterior after assimilating every allowed observation.
#[derive(Debug, Clone)]
pub struct LimitingDistribution {
    pub variance: DVector<f64>,
    pub coverage: CoverageField,
}

/// Assimilates all of `data` in batches of `batch_size` rows.
pub fn limiting_distribution(
    model: &PriorModel,
    grid: Arc<Grid>,
    plan: ChunkPlan,
    budget: MemoryBudget,
    data: &DataStage,
    batch_size: usize,
    threshold: f64,
) -> Result<LimitingDistribution> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut post = ImplicitPosterior::new(*model, grid.clone(), plan)?.with_budget(budget);
    let p = data.rows();
    for start in (0..p).step_by(batch_size) {
        let rows: Vec<usize> = (start..(start + batch_size).min(p)).collect();
        let op = data.op.select_rows(&rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i]));
        post.assimilate(&DataStage::new(op, y, data.tau2)?)?;
    }
    let variance = post.variance_diag()?;
    let coverage = coverage(post.mean(), &variance, threshold, model.kernel.variance(), grid.cell_volume())?;
    Ok(LimitingDistribution { variance, coverage })
}

/// `step,site,x,y,z,criterion,observation,tp,fp,alpha_v,mean_variance` CSV.
pub fn write_trajectory_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let site = if r.step == 0 { String::new() } else { r.site.to_string() };
            vec![
                r.step.to_string(),
                site,
                fmt_f64(r.coords[0]),
                fmt_f64(r.coords[1]),
                fmt_f64(r.coords[2]),
                fmt_f64(r.criterion),
                fmt_f64(r.observation),
                fmt_f64(r.tp),
                fmt_f64(r.fp),
                fmt_f64(r.alpha_v),
                fmt_f64(r.mean_variance),
            ]
        })
        .collect();
    write_csv(
        path,
        &["step", "site", "x", "y", "z", "criterion", "observation", "tp", "fp", "alpha_v", "mean_variance"],
        &rows,
    )
}

/// Box of cells under a conical volcano surface, with instrument sites on
/// the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticVolcano {
    /// Cells per axis.
    pub shape: [usize; 3],
    /// Cell edge length in meters.
    pub cell: f64,
    /// Height of the cone summit above the top of the box.
    pub summit: f64,
    /// Sites per horizontal axis.
    pub sites_per_axis: usize,
    /// Clearance between the surface and the instrument.
    pub standoff: f64,
}

impl Default for SyntheticVolcano {
    fn default() -> Self {
        SyntheticVolcano {
            shape: [10, 10, 5],
            cell: 50.0,
            summit: 100.0,
            sites_per_axis: 12,
            standoff: 1.0,
        }
    }
}

impl SyntheticVolcano {
    /// Cell-centred grid whose top face lies at `z = 0`.
    pub fn grid(&self) -> Result<Grid> {
        let [nx, ny, nz] = self.shape;
        let h = self.cell;
        Grid::new(
            3,
            &[nx, ny, nz],
            &[h, h, h],
            &[0.5 * h, 0.5 * h, -(nz as f64 - 0.5) * h],
        )
    }

    /// Sites on a regular lattice over the box, lifted onto the cone.
    pub fn sites(&self) -> Result<SurfaceSites> {
        let n = self.sites_per_axis;
        if n == 0 {
            return Err(Error::invalid("need at least one site per axis"));
        }
        let lx = self.shape[0] as f64 * self.cell;
        let ly = self.shape[1] as f64 * self.cell;
        let (cx, cy) = (0.5 * lx, 0.5 * ly);
        let radius = cx.min(cy);
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) * lx / n as f64;
                let y = (j as f64 + 0.5) * ly / n as f64;
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let z = self.summit * (1.0 - r / radius).max(0.0) + self.standoff;
                out.push([x, y, z]);
            }
        }
        SurfaceSites::new(&out)
    }

    pub fn operator(&self, grid: &Grid, sites: &SurfaceSites, cfg: &GravityConfig) -> Result<Operator> {
        gravity_operator(grid, sites.coords(), cfg)
    }
}

/// Prior draw used as the ground truth of a synthetic campaign.
pub fn sample_truth(model: &PriorModel, grid: &Grid, seed: u64) -> Result<DVector<f64>> {
    let ens = sample_prior(model, grid, 1, seed ^ streams::GROUND_TRUTH)?;
    Ok(ens.samples.column(0).into_owned())
}
