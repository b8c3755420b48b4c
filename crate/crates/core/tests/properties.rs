use std::collections::BTreeMap;

use proptest::prelude::*;
use stnp_core::anp::{collapse_mixture, AnpConfig, PredictiveGaussian};
use stnp_core::baselines::{FlatFeature, QrfForest, QrfParams};
use stnp_core::config::RunConfig;
use stnp_core::diffcore::{kl_diag_gaussian, Tape, Tensor, LAYER_NORM_EPS};
use stnp_core::evalcal::{coverage, disturbance_delta, partition_tiles, Role, Stratum};
use stnp_core::synthworld::{DisturbanceEvent, TileGrid, World, WorldConfig};
use stnp_core::training::{beta_schedule, make_episode, TrainingConfig};

fn row(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, v in row(20)) {
        let cols = v.len() / rows;
        let t = Tensor::new(vec![rows, cols], v[..rows * cols].to_vec()).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let s = tape.softmax(x);
        let out = tape.value(s);
        for r in 0..rows {
            let r = out.row_slice(r);
            prop_assert!(r.iter().all(|&p| p > 0.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(v in prop::collection::vec(-50.0..50.0f64, 24)) {
        let t = Tensor::new(vec![3, 8], v).unwrap();
        let spread = (0..3).all(|r| {
            let x = t.row_slice(r);
            x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-2
        });
        prop_assume!(spread);
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let n = tape.layer_norm(x);
        let out = tape.value(n);
        for r in 0..3 {
            let input = t.row_slice(r);
            let m0 = input.iter().sum::<f64>() / 8.0;
            let s2 = input.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / 8.0;
            let x = out.row_slice(r);
            let m = x.iter().sum::<f64>() / 8.0;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(m.abs() <= 1e-10);
            prop_assert!((var - s2 / (s2 + LAYER_NORM_EPS)).abs() <= 1e-8);
        }
    }

    #[test]
    fn kl_is_never_negative(mq in row(6), mp in row(6), sq in prop::collection::vec(0.01..3.0f64, 6), sp in prop::collection::vec(0.01..3.0f64, 6)) {
        prop_assert!(kl_diag_gaussian(&mq, &sq, &mp, &sp).unwrap() >= 0.0);
        prop_assert!(kl_diag_gaussian(&mq, &sq, &mq, &sq).unwrap() == 0.0);
    }

    #[test]
    fn shared_subexpressions_accumulate(v in row(5)) {
        // f = sum(x*x) + sum(x*x) through one shared node; df/dx = 4x.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&v));
        let sq = tape.mul(x, x);
        let a = tape.sum(sq);
        let b = tape.sum(sq);
        let f = tape.add(a, b);
        let g = tape.backward(f).unwrap();
        for (gi, xi) in g.get(x).unwrap().data().iter().zip(&v) {
            prop_assert!((gi - 4.0 * xi).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixture_variance_dominates_mean_component_variance(
        comps in prop::collection::vec((-3.0..3.0f64, 0.001..2.0f64), 1..20)
    ) {
        let g: Vec<PredictiveGaussian> = comps.iter().map(|&(mu, sigma)| PredictiveGaussian { mu, sigma }).collect();
        let c = collapse_mixture(&g);
        let mean_var = g.iter().map(|p| p.sigma * p.sigma).sum::<f64>() / g.len() as f64;
        prop_assert!(c.sigma * c.sigma >= mean_var * (1.0 - 1e-12));
    }

    #[test]
    fn beta_never_decreases(steps in 1usize..5000, beta_max in 0.0..4.0f64) {
        let cfg = TrainingConfig { beta_max, ..TrainingConfig::with_steps(steps) };
        let mut prev = beta_schedule(0, &cfg);
        prop_assert_eq!(prev, 0.0);
        for s in 1..steps.min(400) {
            let b = beta_schedule(s, &cfg);
            prop_assert!(b >= prev && b <= beta_max);
            prev = b;
        }
    }

    #[test]
    fn coverage_is_monotone_in_k(y in row(30), mu in row(30), sigma in prop::collection::vec(0.05..3.0f64, 30), k1 in 0.0..4.0f64, dk in 0.0..2.0f64) {
        let a = coverage(&y, &mu, &sigma, k1).unwrap();
        let b = coverage(&y, &mu, &sigma, k1 + dk).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn buffer_separates_test_tiles(rows in 3usize..12, cols in 3usize..12, seed in any::<u64>(), radius in 0usize..3) {
        let grid = TileGrid { rows, cols };
        if let Ok(p) = partition_tiles(&grid, seed, radius) {
            let test = p.tiles(Role::Test);
            for other in p.tiles(Role::Train).into_iter().chain(p.tiles(Role::Val)) {
                for &t in &test {
                    prop_assert!(grid.chebyshev(t, other) > radius);
                }
            }
        }
    }

    #[test]
    fn gains_are_stable(means in prop::collection::vec(10.0..300.0f64, 4), gain in 0.0..200.0f64) {
        let mut yearly: BTreeMap<i32, f64> = (0..4).map(|i| (2019 + if i >= 2 { i + 1 } else { i }, means[i as usize])).collect();
        let exp = means.iter().sum::<f64>() / 4.0;
        yearly.insert(2021, exp + gain + 1e-9);
        let r = disturbance_delta(0, &yearly, 2021).unwrap();
        prop_assert!(r.delta < 0.0);
        prop_assert_eq!(r.stratum, Stratum::Stable);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn episodes_are_disjoint_partitions(n in 4usize..60, ratio in 0.05..0.95f64, seed in any::<u64>()) {
        let world = World::new(WorldConfig { embed_dim: 2, footprints_per_tile_year: 80.0, ..WorldConfig::default() }).unwrap();
        let fps: Vec<_> = world.sample_footprints().unwrap().footprints.into_iter().filter(|f| f.tile_id == 6).take(n).collect();
        prop_assume!(fps.len() == n);
        let ep = make_episode(&fps, ratio, seed).unwrap();
        prop_assert!(!ep.context.is_empty() && !ep.targets.is_empty());
        prop_assert_eq!(ep.context.len() + ep.targets.len(), n);
        let mut ids: Vec<u64> = ep.context.iter().chain(&ep.targets).map(|f| f.id).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }

    #[test]
    fn events_only_remove_biomass(
        events in prop::collection::vec((0.0..0.5f64, 0.0..0.5f64, 0.01..0.3f64, 0.0..1.0f64, 0.0..0.99f64), 0..5),
        lon in 0.0..0.5f64, lat in 0.0..0.5f64, t1 in 0.0..1.0f64, dt in 0.0..1.0f64,
    ) {
        let events = events.into_iter().map(|(lon, lat, radius, tau, retained_fraction)| DisturbanceEvent { lon, lat, radius, tau, retained_fraction }).collect();
        let w = World::new(WorldConfig { events, embed_dim: 2, ..WorldConfig::default() }).unwrap();
        let t2 = (t1 + dt).min(1.0);
        prop_assert!(w.true_biomass(lon, lat, t2).unwrap() <= w.true_biomass(lon, lat, t1).unwrap());
    }

    #[test]
    fn qrf_quantiles_are_monotone(seed in any::<u64>(), x0 in -1.0..2.0f64, qs in prop::collection::vec(0.0..1.0f64, 2..8)) {
        let xs: Vec<FlatFeature> = (0..300).map(|i| FlatFeature(vec![i as f64 / 300.0, ((i * 37) % 300) as f64 / 300.0])).collect();
        let ys: Vec<f64> = (0..300).map(|i| (i as f64 / 300.0) + (((i * 7919) % 97) as f64 / 97.0 - 0.5) * 0.2).collect();
        let f = QrfForest::fit(&xs, &ys, &QrfParams { trees: 10, seed, ..QrfParams::default() }).unwrap();
        let mut qs = qs;
        qs.sort_by(f64::total_cmp);
        let out = f.predict(&FlatFeature(vec![x0, 0.5]), &qs).unwrap();
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn config_text_round_trips(
        seeds in 1usize..50, steps in 0usize..10_000, lr in 1e-6..1.0f64, density in 1.0..1000.0f64,
        noise in 0.01..1.0f64, heads in prop::sample::select(vec![1usize, 2, 4, 8]), trees in 1usize..500,
    ) {
        let mut c = RunConfig { seeds, ..RunConfig::default() };
        c.training.steps = steps;
        c.training.learning_rate = lr;
        c.world.footprints_per_tile_year = density;
        c.world.noise_sigma_log = noise;
        c.model = AnpConfig { heads, repr_dim: 64, ..c.model.clone() };
        c.qrf.trees = trees;
        c.training.holdout_year = Some(c.holdout_year);
        let back = RunConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}
