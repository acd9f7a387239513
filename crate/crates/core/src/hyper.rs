//! Marginal likelihood, mean concentration and the two-level hyperparameter
//! fit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::MemoryBudget;
use crate::error::{Error, Result};
use crate::explicit::DataStage;
use crate::grid::{ChunkPlan, Grid};
use crate::implicit::ImplicitPosterior;
use crate::kernels::{prior_covmul, Kernel, KernelFamily, PriorModel};
use crate::linalg::SpdFactor;

/// Matérn 3/2 prior fitted to the Stromboli gravimetric survey.
pub fn reference_model() -> PriorModel {
    PriorModel::new(
        Kernel {
            family: KernelFamily::Matern32,
            sigma0: 284.65,
            lambda0: 651.6,
        },
        2139.1,
    )
}

/// Negative log marginal likelihood reported with [`reference_model`].
pub const REFERENCE_NMLL: f64 = -1283.5;

/// Gravimetric noise standard deviation in mGal.
pub const REFERENCE_NOISE_STD: f64 = 0.1;

/// Shared inputs of every likelihood evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Workspace<'a> {
    pub grid: &'a Grid,
    pub plan: &'a ChunkPlan,
    pub budget: &'a MemoryBudget,
}

/// `G K G^T` for the given kernel, with `K` applied chunk by chunk.
pub fn data_gram(ws: Workspace<'_>, kernel: &Kernel, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let model = PriorModel::new(*kernel, 0.0);
    let kgt = prior_covmul(&model, ws.grid, &g.transpose(), ws.plan, ws.budget)?;
    let r = g * kgt;
    Ok((&r + r.transpose()) * 0.5)
}

fn add_noise(mut r: DMatrix<f64>, tau2: f64) -> DMatrix<f64> {
    for i in 0..r.nrows() {
        r[(i, i)] += tau2;
    }
    r
}

fn gaussian_nll(factor: &SpdFactor, resid: &DVector<f64>) -> f64 {
    let n = resid.len() as f64;
    let alpha = factor.solve_vec(resid);
    0.5 * factor.log_det() + 0.5 * resid.dot(&alpha) + 0.5 * n * (2.0 * PI).ln()
}

/// Negative log marginal likelihood of `y` under `y = G z + eps`.
pub fn nmll(ws: Workspace<'_>, model: &PriorModel, g: &DMatrix<f64>, y: &DVector<f64>, tau2: f64) -> Result<f64> {
    check_shapes(ws.grid, g, y)?;
    let r = add_noise(data_gram(ws, &model.kernel, g)?, tau2);
    let factor = SpdFactor::new(&r)?;
    let resid = y - g * DVector::from_element(g.ncols(), model.m0);
    Ok(gaussian_nll(&factor, &resid))
}

fn check_shapes(grid: &Grid, g: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if g.ncols() != grid.len() {
        return Err(Error::invalid(format!(
            "operator has {} columns, grid has {} points",
            g.ncols(),
            grid.len()
        )));
    }
    if g.nrows() != y.len() || y.is_empty() {
        return Err(Error::invalid("data length must match a non-empty operator"));
    }
    Ok(())
}

/// Row sums `G 1`: the response of each observation to a unit constant.
fn constant_response(g: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(g.nrows(), g.row_iter().map(|r| r.sum()))
}

fn concentrate(factor: &SpdFactor, h: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let rinv_h = factor.solve_vec(h);
    let denom = h.dot(&rinv_h);
    if !(denom > 1e-300) || h.amax() == 0.0 {
        return Err(Error::ZeroSensitivity);
    }
    Ok(y.dot(&rinv_h) / denom)
}

/// Constant mean maximizing the marginal likelihood for fixed kernel and
/// noise.
pub fn concentrated_m0(ws: Workspace<'_>, kernel: &Kernel, g: &DMatrix<f64>, y: &DVector<f64>, tau2: f64) -> Result<f64> {
    check_shapes(ws.grid, g, y)?;
    let h = constant_response(g);
    if h.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroSensitivity);
    }
    let r = add_noise(data_gram(ws, kernel, g)?, tau2);
    concentrate(&SpdFactor::new(&r)?, &h, y)
}

/// Best scale, concentrated mean and likelihood for one length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub lambda0: f64,
    pub sigma0: f64,
    pub m0: f64,
    pub nmll: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: KernelFamily,
    pub records: Vec<FitRecord>,
    pub best: FitRecord,
    pub search_grid: Vec<f64>,
}

impl FitResult {
    pub fn best_model(&self) -> PriorModel {
        PriorModel::new(
            Kernel {
                family: self.family,
                sigma0: self.best.sigma0,
                lambda0: self.best.lambda0,
            },
            self.best.m0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Initial guess for the prior standard deviation.
    pub sigma_init: f64,
    /// Half-width of the search bracket in `ln sigma0`.
    pub log_sigma_halfwidth: f64,
    /// Relative tolerance on `sigma0`.
    pub rel_tol: f64,
    /// Iteration budget of the scalar search, per length scale.
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sigma_init: 1.0,
            log_sigma_halfwidth: 6.0,
            rel_tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Concentrated likelihood profile in `ln sigma0` for a fixed correlation
/// Gram matrix.
struct Profile<'a> {
    corr: &'a DMatrix<f64>,
    h: DVector<f64>,
    y: &'a DVector<f64>,
    tau2: f64,
}

impl Profile<'_> {
    fn eval(&self, log_sigma: f64) -> Result<(f64, f64)> {
        let s2 = (2.0 * log_sigma).exp();
        let r = add_noise(self.corr * s2, self.tau2);
        let factor = SpdFactor::new(&r)?;
        let m0 = concentrate(&factor, &self.h, self.y)?;
        let resid = self.y - &self.h * m0;
        Ok((gaussian_nll(&factor, &resid), m0))
    }
}

const COARSE_POINTS: usize = 25;

/// Coarse scan of the bracket followed by golden-section refinement around
/// the best scan point.
fn minimize_log_sigma(profile: &Profile<'_>, center: f64, opts: &FitOptions) -> Result<(f64, f64, f64, bool, usize)> {
    let lo = center - opts.log_sigma_halfwidth;
    let hi = center + opts.log_sigma_halfwidth;
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..COARSE_POINTS {
        let (v, _) = profile.eval(lo + k as f64 * step)?;
        if v < best.0 {
            best = (v, k);
        }
    }
    let at_edge = best.1 == 0 || best.1 == COARSE_POINTS - 1;
    let mut a = lo + best.1.saturating_sub(1) as f64 * step;
    let mut b = lo + (best.1 + 1).min(COARSE_POINTS - 1) as f64 * step;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = profile.eval(c)?.0;
    let mut fd = profile.eval(d)?.0;
    let mut iterations = 0;
    // |ln s1 - ln s2| bounds the relative error on sigma0
    while b - a > opts.rel_tol {
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = profile.eval(c)?.0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = profile.eval(d)?.0;
        }
    }
    let x = 0.5 * (a + b);
    let (v, m0) = profile.eval(x)?;
    let converged = b - a <= opts.rel_tol && !at_edge;
    Ok((x.exp(), m0, v, converged, iterations))
}

/// Two-level fit: for each length scale, the scale is optimized with the
/// mean concentrated out; the best length scale has the lowest likelihood.
pub fn fit(
    ws: Workspace<'_>,
    data: &DataStage,
    family: KernelFamily,
    lambda_grid: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let g = data.op.matrix();
    check_shapes(ws.grid, g, &data.y)?;
    if lambda_grid.is_empty() {
        return Err(Error::invalid("length-scale grid is empty"));
    }
    if lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::invalid("length scales must be positive"));
    }
    if !(opts.sigma_init > 0.0) {
        return Err(Error::invalid("initial sigma0 must be positive"));
    }
    let mut search_grid = lambda_grid.to_vec();
    search_grid.sort_by(f64::total_cmp);
    search_grid.dedup();

    let h = constant_response(g);
    if h.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroSensitivity);
    }
    let center = opts.sigma_init.ln();

    let records: Vec<FitRecord> = search_grid
        .par_iter()
        .map(|&lambda0| -> Result<FitRecord> {
            let corr = data_gram(ws, &Kernel::new(family, 1.0, lambda0)?, g)?;
            let profile = Profile {
                corr: &corr,
                h: h.clone(),
                y: &data.y,
                tau2: data.tau2,
            };
            let (sigma0, m0, nmll, converged, iterations) = minimize_log_sigma(&profile, center, opts)?;
            if !converged {
                log::warn!("sigma0 search did not converge for lambda0 = {lambda0}");
            }
            Ok(FitRecord {
                lambda0,
                sigma0,
                m0,
                nmll,
                converged,
                iterations,
            })
        })
        .collect::<Result<_>>()?;

    // records are ascending in lambda0, so the first minimum is the smaller
    let best = *records
        .iter()
        .fold(None::<&FitRecord>, |acc, r| match acc {
            Some(b) if b.nmll <= r.nmll => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty");
    Ok(FitResult {
        family,
        records,
        best,
        search_grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    pub rmse: f64,
    pub nlpd: f64,
}

/// Test-set root mean squared error and negative log predictive density
/// after conditioning on `train`.
pub fn predictive_metrics(
    ws: Workspace<'_>,
    model: &PriorModel,
    train: &DataStage,
    test: &DataStage,
) -> Result<PredictiveMetrics> {
    let mut post = ImplicitPosterior::new(*model, ws.grid.clone(), ws.plan.clone())?
        .with_budget(*ws.budget);
    post.assimilate(train)?;
    predictive_metrics_from(&post, test)
}

/// Same as [`predictive_metrics`] for an already conditioned posterior.
pub fn predictive_metrics_from(post: &ImplicitPosterior, test: &DataStage) -> Result<PredictiveMetrics> {
    let g = test.op.matrix();
    let pred_mean = g * post.mean();
    let pred_cov = g * post.covmul(&g.transpose())?;
    let n = test.y.len() as f64;
    let mut sq = 0.0;
    let mut nlp = 0.0;
    for i in 0..test.y.len() {
        let r = test.y[i] - pred_mean[i];
        let var = pred_cov[(i, i)].max(0.0) + test.tau2;
        if !(var > 0.0) {
            return Err(Error::Numerical(format!(
                "zero predictive variance at test point {i}"
            )));
        }
        sq += r * r;
        nlp += 0.5 * (2.0 * PI * var).ln() + 0.5 * r * r / var;
    }
    Ok(PredictiveMetrics {
        rmse: (sq / n).sqrt(),
        nlpd: nlp / n,
    })
}
