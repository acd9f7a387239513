//! Dense reference computations shared by the integration tests. Nothing
//! here calls into the library's numerics: kernels, conditioning and
//! quadrature are written out directly.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::{gravity_operator, pointwise_operator, weighted_operator, GravityConfig, Operator, Prism};

pub const FAMILIES: [KernelFamily; 3] = [KernelFamily::Exponential, KernelFamily::Matern32, KernelFamily::Matern52];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------------------ kernels

pub fn covariance(family: KernelFamily, sigma0: f64, lambda0: f64, d: f64) -> f64 {
    let t = d / lambda0;
    let rho = match family {
        KernelFamily::Exponential => (-t).exp(),
        KernelFamily::Matern32 => (1.0 + 3f64.sqrt() * t) * (-(3f64.sqrt()) * t).exp(),
        KernelFamily::Matern52 => {
            (1.0 + 5f64.sqrt() * t + 5.0 * t * t / 3.0) * (-(5f64.sqrt()) * t).exp()
        }
    };
    sigma0 * sigma0 * rho
}

pub fn dense_cov(model: &PriorModel, grid: &Grid) -> DMatrix<f64> {
    let m = grid.len();
    let k = model.kernel;
    DMatrix::from_fn(m, m, |i, j| {
        let d = grid
            .point(i)
            .iter()
            .zip(grid.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        covariance(k.family, k.sigma0, k.lambda0, d)
    })
}

// --------------------------------------------------------------- posterior

#[derive(Debug, Clone)]
pub struct Dense {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Dense {
    pub fn prior(model: &PriorModel, grid: &Grid) -> Self {
        Dense {
            mean: DVector::from_element(grid.len(), model.m0),
            cov: dense_cov(model, grid),
        }
    }

    /// Schur complement update with an LU solve of the data covariance.
    pub fn condition(&self, g: &DMatrix<f64>, y: &DVector<f64>, tau2: f64) -> Dense {
        let kgt = &self.cov * g.transpose();
        let s = g * &kgt + DMatrix::identity(g.nrows(), g.nrows()) * tau2;
        let lu = s.lu();
        let gain = lu.solve(&kgt.transpose()).expect("data covariance is invertible").transpose();
        Dense {
            mean: &self.mean + &gain * (y - g * &self.mean),
            cov: &self.cov - &gain * kgt.transpose(),
        }
    }

    pub fn condition_stages(&self, stages: &[DataStage]) -> Dense {
        stages
            .iter()
            .fold(self.clone(), |d, s| d.condition(s.op.matrix(), &s.y, s.tau2))
    }

    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// `-log N(y; mean, cov)` by LU.
pub fn gaussian_nll(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let lu = cov.clone().lu();
    let r = y - mean;
    let alpha = lu.solve(&r).unwrap();
    0.5 * lu.determinant().ln() + 0.5 * r.dot(&alpha) + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

// --------------------------------------------------------------- quadrature

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference to the embedded 7-point
/// Gauss rule.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod integration to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (v, err) = whole;
        if err <= tol || depth == 0 {
            return v;
        }
        let c = 0.5 * (a + b);
        let l = gk15(f, a, c);
        let r = gk15(f, c, b);
        rec(f, a, c, 0.5 * tol, l, depth - 1) + rec(f, c, b, 0.5 * tol, r, depth - 1)
    }
    rec(f, a, b, tol, gk15(f, a, b), 40)
}

/// `gamma * rho * unit * \int (x3 - s3) / |x - s|^3 dx` over the prism; the
/// vertical integral is taken in closed form and the remaining two by
/// nested adaptive quadrature.
pub fn green_gz(p: &Prism, s: [f64; 3], rho: f64, cfg: &GravityConfig, rel_tol: f64) -> f64 {
    let inner = |x: f64, y: f64| {
        let h2 = (x - s[0]).powi(2) + (y - s[1]).powi(2);
        let r = |z: f64| (h2 + (z - s[2]).powi(2)).sqrt();
        1.0 / r(p.z_l) - 1.0 / r(p.z_h)
    };
    // crude magnitude for the tolerance: value at the centre times volume
    let c = [
        0.5 * (p.x_l + p.x_h),
        0.5 * (p.y_l + p.y_h),
        0.5 * (p.z_l + p.z_h),
    ];
    let d2 = (0..3).map(|i| (c[i] - s[i]).powi(2)).sum::<f64>();
    let scale = p.volume() / d2.max(1e-12);
    let tol = rel_tol * scale;
    let dx = p.x_h - p.x_l;
    let total = integrate(
        &|x: f64| integrate(&|y: f64| inner(x, y), p.y_l, p.y_h, tol / dx * 0.1),
        p.x_l,
        p.x_h,
        tol,
    );
    total * cfg.gamma_n * rho * cfg.output_unit
}

// ---------------------------------------------------------------- instances

/// Unscaled gravity so that operator entries are of order one on unit cells.
pub fn unit_gravity() -> GravityConfig {
    GravityConfig {
        gamma_n: 1.0,
        output_unit: 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: Grid,
    pub model: PriorModel,
    pub stages: Vec<DataStage>,
    pub plan: ChunkPlan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Pointwise,
    Weighted,
    Gravity,
}

fn random_grid(r: &mut ChaCha8Rng, max_m: usize) -> Grid {
    match r.random_range(0..3) {
        0 => {
            let n = r.random_range(8..=max_m);
            Grid::new(1, &[n], &[1.0 / n as f64], &[0.5 / n as f64]).unwrap()
        }
        1 => {
            let a = r.random_range(3..=7);
            let b = r.random_range(3..=(max_m / a).min(8));
            Grid::new(2, &[a, b], &[0.25, 0.25], &[0.0, 0.0]).unwrap()
        }
        _ => {
            let a = r.random_range(3..=4);
            let b = r.random_range(3..=4);
            let c = r.random_range(2..=(max_m / (a * b)).clamp(2, 3));
            Grid::new(3, &[a, b, c], &[1.0, 1.0, 1.0], &[0.5, 0.5, -0.5 - (c - 1) as f64]).unwrap()
        }
    }
}

fn random_operator(
    r: &mut ChaCha8Rng,
    grid: &Grid,
    kind: OpKind,
    rows: usize,
    unused: &mut Vec<usize>,
) -> Operator {
    let m = grid.len();
    match kind {
        OpKind::Pointwise => {
            let idx: Vec<usize> = (0..rows.min(unused.len()))
                .map(|_| unused.swap_remove(r.random_range(0..unused.len())))
                .collect();
            pointwise_operator(grid, &idx).unwrap()
        }
        OpKind::Weighted => {
            let ws: Vec<Vec<(usize, f64)>> = (0..rows)
                .map(|_| {
                    let k = r.random_range(2..=6.min(m));
                    (0..k).map(|_| (r.random_range(0..m), r.random_range(-1.0..1.0))).collect()
                })
                .collect();
            weighted_operator(grid, &ws).unwrap()
        }
        OpKind::Gravity => {
            let spec = grid.spec();
            let ext: Vec<f64> = (0..3).map(|a| spec.shape[a] as f64 * spec.spacing[a]).collect();
            let stations: Vec<[f64; 3]> = (0..rows)
                .map(|_| {
                    [
                        r.random_range(0.0..ext[0]),
                        r.random_range(0.0..ext[1]),
                        r.random_range(0.3..2.0),
                    ]
                })
                .collect();
            gravity_operator(grid, &stations, &unit_gravity()).unwrap()
        }
    }
}

/// Random prior and up to `max_stages` stages of mixed operators observing
/// a prior draw, all sharing one noise level.
pub fn random_instance(seed: u64, max_m: usize, max_stages: usize, tau2_choices: &[f64]) -> Instance {
    let mut r = rng(seed);
    loop {
        let grid = random_grid(&mut r, max_m);
        let ext = grid.diameter();
        let family = FAMILIES[r.random_range(0..3)];
        let sigma0 = r.random_range(0.5..2.0);
        let lambda0 = ext * r.random_range(0.1..0.5);
        let model = PriorModel::new(Kernel::new(family, sigma0, lambda0).unwrap(), r.random_range(-1.0..1.0));
        let tau2 = tau2_choices[r.random_range(0..tau2_choices.len())] * sigma0 * sigma0;
        let n_stages = r.random_range(1..=max_stages);
        let mut kinds = vec![OpKind::Pointwise, OpKind::Weighted];
        if grid.dim() == 3 {
            kinds.extend([OpKind::Gravity; 2]);
        }
        let mut unused: Vec<usize> = (0..grid.len()).collect();
        let max_rows = if tau2 == 0.0 { 3 } else { 5 };
        let ops: Vec<Operator> = (0..n_stages)
            .map(|_| {
                let kind = kinds[r.random_range(0..kinds.len())];
                let rows = r.random_range(1..=max_rows);
                random_operator(&mut r, &grid, kind, rows, &mut unused)
            })
            .filter(|op| op.rows() > 0)
            .collect();
        if ops.is_empty() {
            continue;
        }
        let prior = Dense::prior(&model, &grid);
        let g = DMatrix::from_rows(
            &ops.iter()
                .flat_map(|o| o.matrix().row_iter().map(|r| r.into_owned()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        // noiseless instances must be well posed to be comparable at 1e-8
        let s = &g * &prior.cov * g.transpose();
        let eig = s.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::MAX, 0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        if tau2 == 0.0 && !(lo > 0.0 && hi / lo < 1e6) {
            continue;
        }
        let truth = sample_gaussian(&mut r, &prior.mean, &prior.cov);
        let stages = ops
            .into_iter()
            .map(|op| {
                let noise = DVector::from_fn(op.rows(), |_, _| normal(&mut r) * tau2.sqrt());
                let y = op.apply(&truth) + noise;
                DataStage::new(op, y, tau2).unwrap()
            })
            .collect();
        let chunk = r.random_range(3..=grid.len());
        let plan = ChunkPlan::for_grid(&grid, chunk).unwrap();
        return Instance {
            grid,
            model,
            stages,
            plan,
        };
    }
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(rand_distr::StandardNormal)
}

/// Draw by eigen-decomposition, tolerant of semi-definite covariances.
pub fn sample_gaussian(r: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let eig = cov.clone().symmetric_eigen();
    let z = DVector::from_fn(mean.len(), |i, _| eig.eigenvalues[i].max(0.0).sqrt() * normal(r));
    mean + &eig.eigenvectors * z
}
