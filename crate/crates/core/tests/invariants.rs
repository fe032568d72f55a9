use std::sync::Arc;

use proptest::prelude::*;

use coagdrift_core::evolution::{pair_sums_direct, EvolutionOptions, EvolutionState, FftConvolver, Simulator};
use coagdrift_core::grid::{half_convolution, log_integral, Grid, GridFunction, TauFunction};
use coagdrift_core::model::{admissible_threshold, derive_constants, supersolution_value, ModelParams};
use coagdrift_core::profile::exponential_seed;
use coagdrift_core::tau::{apply_h, apply_h_constant, h_operator};

fn seed(v: f64, m0: f64, nodes: usize) -> GridFunction {
    let p = ModelParams::new(v, m0).unwrap();
    let grid = Arc::new(Grid::build(1e4, nodes, v).unwrap());
    exponential_seed(grid, &p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn threshold_inside_existence_range(v in 0.01f64..0.99) {
        let bar = admissible_threshold(v).unwrap();
        prop_assert!(bar > 0.0 && bar <= 0.5 * v);
    }

    #[test]
    fn barrier_constant_exists_below_threshold(v in 0.05f64..0.95, frac in 0.01f64..1.0) {
        let m0 = frac * admissible_threshold(v).unwrap();
        let c = derive_constants(&ModelParams::new(v, m0).unwrap()).unwrap();
        prop_assert!(c.tau_star >= c.a_0);
        prop_assert!(c.b_m0 * c.tau_star.exp2() <= c.sigma_star);
        prop_assert!((c.alpha - (c.tau_inf - 2.0 * m0 / (1.0 - v))).abs() < 1e-12);
    }

    #[test]
    fn grid_nodes_increase_and_roundtrip(zmax in 1.0f64..1e7, n in 2usize..300, v in 0.05f64..0.95) {
        let g = Grid::build(zmax, n, v).unwrap();
        prop_assert_eq!(g.nodes()[0], 0.0);
        prop_assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        let back = Grid::from_nodes(g.nodes().to_vec(), v).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn log_integral_additive(a in 0.0f64..50.0, b in 0.0f64..50.0, c in 0.0f64..50.0, k in 0.1f64..4.0) {
        let grid = Arc::new(Grid::build(100.0, 129, 0.5).unwrap());
        let vals = grid.nodes().iter().map(|z| k * z / (1.0 + z)).collect();
        let tau = TauFunction::new(grid, vals, k, k, None).unwrap();
        let mut p = [a, b, c];
        p.sort_by(f64::total_cmp);
        let whole = log_integral(&tau, p[0], p[2]).unwrap();
        let parts = log_integral(&tau, p[0], p[1]).unwrap() + log_integral(&tau, p[1], p[2]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));
        prop_assert!(whole >= 0.0);
    }

    #[test]
    fn supersolution_barrier_holds(v in 0.2f64..0.8, frac in 0.05f64..1.0, shift in 0.0f64..2.0) {
        let m0 = frac * admissible_threshold(v).unwrap();
        let p = ModelParams::new(v, m0).unwrap();
        let c = derive_constants(&p).unwrap();
        // data of mass m0 with a varying shape
        let grid = Arc::new(Grid::build(1e4, 129, v).unwrap());
        let raw = GridFunction::from_fn(grid, c.tau_inf, |z| (1.0 + shift * z).powi(-4)).unwrap();
        let g = raw.scaled(m0 / raw.moment(0).unwrap()).unwrap();
        let out = apply_h_constant(&g, c.tau_star, &p).unwrap();
        prop_assert!(out.values().iter().all(|&t| t >= 0.0 && t <= c.tau_star * (1.0 + 1e-12)));
    }

    #[test]
    fn h_positive_and_monotone_in_tau(scale in 0.2f64..1.0) {
        let (v, m0) = (0.5, 0.01);
        let p = ModelParams::new(v, m0).unwrap();
        let g = seed(v, m0, 65);
        let grid = g.grid().clone();
        let big = TauFunction::new(grid.clone(), grid.nodes().iter().map(|z| 3.0 * z / (1.0 + z)).collect(), 3.0, 3.0, None).unwrap();
        let small = TauFunction::new(grid.clone(), big.values().iter().map(|t| scale * t).collect(), 3.0 * scale, 3.0 * scale, None).unwrap();
        let hb = h_operator(&g, &big, &p).unwrap();
        let hs = h_operator(&g, &small, &p).unwrap();
        prop_assert!(hs.iter().all(|&x| x >= 0.0));
        prop_assert!(hs.iter().zip(&hb).all(|(s, b)| s <= &(b * (1.0 + 1e-12))));
        let ts = apply_h(&g, &small, &p).unwrap();
        prop_assert!(ts.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn half_convolution_nonnegative_and_below_supersolution_product(z in 0.0f64..500.0) {
        let p = ModelParams::new(0.5, 0.01).unwrap();
        let grid = Arc::new(Grid::build(1e3, 257, 0.5).unwrap());
        let f = GridFunction::from_fn(grid, p.alpha(), |x| supersolution_value(&p, x).unwrap()).unwrap();
        let c = half_convolution(&f, &f, z).unwrap();
        prop_assert!(c >= 0.0);
        prop_assert!(c <= 2.0 * 0.01 * f.moment(0).unwrap());
    }

    #[test]
    fn fft_agrees_with_direct(vals in prop::collection::vec(0.0f64..1.0, 2..300)) {
        let direct = pair_sums_direct(&vals);
        let fast = FftConvolver::new(vals.len()).pair_sums(&vals);
        let peak = direct.iter().copied().fold(0.0, f64::max);
        prop_assert!(direct.iter().zip(&fast).all(|(a, b)| (a - b).abs() <= 1e-12 * peak.max(f64::MIN_POSITIVE)));
    }

    #[test]
    fn evolution_stays_nonnegative(vals in prop::collection::vec(0.0f64..1.0, 8..120), u in 0.0f64..2.0) {
        let n = vals.len();
        let m1 = vals.iter().enumerate().map(|(i, f)| (i as f64 + 0.5) * f).sum::<f64>() * 0.01 + 1e-3;
        let state = EvolutionState::new(vals, n as f64 * 0.1, 1.0, m1).unwrap();
        let opts = EvolutionOptions { frozen_u: Some(u), ..Default::default() };
        let mut sim = Simulator::new(state, opts).unwrap();
        for _ in 0..20 {
            let dt = sim.max_step();
            sim.step(dt).unwrap();
            prop_assert!(sim.state().values().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn mean_field_identity(vals in prop::collection::vec(0.0f64..1.0, 8..80)) {
        prop_assume!(vals.iter().sum::<f64>() > 0.1);
        let n = vals.len();
        let state = EvolutionState::new(vals, n as f64 * 0.1, 1.0, 2.0).unwrap();
        let mut sim = Simulator::new(state, EvolutionOptions::default()).unwrap();
        for _ in 0..10 {
            let dt = sim.max_step();
            sim.step(dt).unwrap();
            let s = sim.state();
            prop_assert!((s.u() * s.m1_target() - s.m0()).abs() <= 1e-14 * s.m0().max(1e-300));
        }
    }
}
