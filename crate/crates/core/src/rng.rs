//! Seeded counter-based random streams.
//!
//! Every consumer asks for a `(seed, stream)` pair, so draws for one sample
//! or one campaign step never depend on how work was scheduled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Stream offsets keeping unrelated consumers apart under one seed.
pub mod streams {
    pub const PRIOR_SAMPLES: u64 = 0;
    pub const RESIDUAL_NOISE: u64 = 1 << 40;
    pub const CAMPAIGN_NOISE: u64 = 2 << 40;
    pub const GROUND_TRUTH: u64 = 3 << 40;
    pub const DESIGN: u64 = 4 << 40;
    pub const DATA: u64 = 5 << 40;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `rows x cols` standard normals, column `j` drawn from stream `base + j`.
pub fn normal_columns(seed: u64, base: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..cols)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut rng = stream(seed, base + j as u64);
            (0..rows).map(move |_| rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    DMatrix::from_vec(rows, cols, data)
}
