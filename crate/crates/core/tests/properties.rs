use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use seqgp::app::config::{self, ConfigFormat, KernelConfig};
use seqgp::design::wivr;
use seqgp::excursion::coverage;
use seqgp::explicit::DataStage;
use seqgp::grid::{ChunkPlan, Grid};
use seqgp::implicit::ImplicitPosterior;
use seqgp::io::{read_matrix, write_matrix, ScalarKind};
use seqgp::kernels::{Kernel, KernelFamily, PriorModel};
use seqgp::operators::{banerjee_gz, pointwise_operator, GravityConfig, Prism};

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Exponential),
        Just(KernelFamily::Matern32),
        Just(KernelFamily::Matern52)
    ]
}

fn posterior(fam: KernelFamily, lambda0: f64, idx: &[usize], tau2: f64) -> ImplicitPosterior {
    let grid = Grid::new(1, &[40], &[0.025], &[0.0125]).unwrap();
    let model = PriorModel::new(Kernel::new(fam, 1.3, lambda0).unwrap(), 0.2);
    let plan = ChunkPlan::for_grid(&grid, 16).unwrap();
    let mut post = ImplicitPosterior::new(model, grid.clone(), plan).unwrap();
    let op = pointwise_operator(&grid, idx).unwrap();
    let y = DVector::from_fn(idx.len(), |i, _| (idx[i] as f64 * 0.3).cos());
    post.assimilate(&DataStage::new(op, y, tau2).unwrap()).unwrap();
    post
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_variance_lies_between_zero_and_prior(
        fam in family(),
        lambda0 in 0.05f64..1.0,
        idx in proptest::sample::subsequence((0..40).collect::<Vec<usize>>(), 1..8),
        tau2 in prop_oneof![Just(1e-6), Just(1e-2), Just(0.5)],
    ) {
        let post = posterior(fam, lambda0, &idx, tau2);
        let var = post.variance_diag().unwrap();
        for v in var.iter() {
            prop_assert!(*v >= -1e-10 && *v <= 1.3f64.powi(2) + 1e-10);
        }
    }

    #[test]
    fn variance_reduction_is_non_negative(
        fam in family(),
        lambda0 in 0.05f64..1.0,
        idx in proptest::sample::subsequence((0..40).collect::<Vec<usize>>(), 1..6),
        weight in proptest::collection::vec(0.0f64..1.0, 40),
    ) {
        let post = posterior(fam, lambda0, &idx, 1e-3);
        let candidates = pointwise_operator(post.grid(), &(0..40).collect::<Vec<_>>()).unwrap();
        let w = wivr(&post, &candidates, 1e-3, &DVector::from_vec(weight)).unwrap();
        prop_assert!(w.iter().all(|c| *c >= -1e-10));
    }

    #[test]
    fn coverage_is_a_probability_and_quantiles_nest(
        mean in proptest::collection::vec(-2.0f64..2.0, 30),
        sd in proptest::collection::vec(0.0f64..1.5, 30),
        t in -1.0f64..1.0,
        a in 0.01f64..1.0,
        b in 0.01f64..1.0,
    ) {
        let var = DVector::from_iterator(30, sd.iter().map(|s| s * s));
        let cov = coverage(&DVector::from_vec(mean), &var, t, 2.25, 0.5).unwrap();
        prop_assert!(cov.p.iter().all(|p| (0.0..=1.0).contains(p)));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let q_lo = cov.quantile(lo).unwrap();
        let q_hi = cov.quantile(hi).unwrap();
        prop_assert!(q_hi.mask.iter().zip(&q_lo.mask).all(|(h, l)| !h || *l));
        let v = cov.vorobev_expectation();
        prop_assert!((0.0..=1.0).contains(&v.alpha));
    }

    #[test]
    fn prism_gravity_is_additive(
        lo in proptest::array::uniform3(-2.0f64..0.0),
        size in proptest::array::uniform3(0.2f64..2.0),
        cut in 0.1f64..0.9,
        station in proptest::array::uniform2(-3.0f64..3.0),
        height in 0.5f64..3.0,
    ) {
        let cfg = GravityConfig::default();
        let hi = [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]];
        let s = [station[0], station[1], hi[2] + height];
        let whole = Prism::new((lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2])).unwrap();
        let xm = lo[0] + cut * size[0];
        let left = Prism::new((lo[0], xm), (lo[1], hi[1]), (lo[2], hi[2])).unwrap();
        let right = Prism::new((xm, hi[0]), (lo[1], hi[1]), (lo[2], hi[2])).unwrap();
        let g = banerjee_gz(&whole, s, 1000.0, &cfg).unwrap();
        let parts = banerjee_gz(&left, s, 1000.0, &cfg).unwrap() + banerjee_gz(&right, s, 1000.0, &cfg).unwrap();
        prop_assert!((g - parts).abs() <= 1e-9 * g.abs().max(1e-12));
    }

    #[test]
    fn kernel_config_round_trips(
        fam in family(),
        sigma0 in 1e-3f64..1e3,
        lambda0 in 1e-3f64..1e3,
        m0 in -1e3f64..1e3,
        json in any::<bool>(),
    ) {
        let k = KernelConfig { family: fam, sigma0, lambda0, m0 };
        let format = if json { ConfigFormat::Json } else { ConfigFormat::Toml };
        let text = config::to_string(&k, format).unwrap();
        let back: KernelConfig = config::parse(&text, format).unwrap();
        prop_assert_eq!(back, k);
    }

    #[test]
    fn matrix_file_round_trips(rows in 1usize..20, cols in 1usize..20, seed in any::<u32>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = DMatrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) as f64 + seed as f64).sin() * 1e3);
        write_matrix(&path, &m, ScalarKind::F64).unwrap();
        prop_assert_eq!(read_matrix(&path).unwrap(), m);
    }
}
