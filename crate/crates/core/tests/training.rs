use stnp_core::anp::{AnpConfig, ModelParams};
use stnp_core::synthworld::{World, WorldConfig};
use stnp_core::training::{train, train_with_log, TrainingConfig};
use stnp_core::Error;

fn small_model() -> AnpConfig {
    AnpConfig {
        conv_channels: 16,
        feature_dim: 64,
        repr_dim: 64,
        latent_dim: 32,
        decoder_hidden: 64,
        ..AnpConfig::default()
    }
}

/// One tile with roughly 200 footprints spread over five years.
fn one_tile() -> Vec<stnp_core::anp::Footprint> {
    let world = World::new(WorldConfig {
        lon_max: 0.1,
        lat_max: 0.1,
        footprints_per_tile_year: 36.0,
        seed: 5,
        ..WorldConfig::default()
    })
    .unwrap();
    world.sample_footprints().unwrap().footprints
}

#[test]
fn smoke_training_halves_the_loss() {
    let data = one_tile();
    assert!((160..=240).contains(&data.len()), "{}", data.len());
    let cfg = TrainingConfig {
        learning_rate: 1e-3,
        ..TrainingConfig::with_steps(500)
    };
    let out = train(&data, &small_model(), &cfg).unwrap();
    assert_eq!(out.history.len(), 500);
    let initial = out.history[0];
    let last: f64 = out.history[490..].iter().sum::<f64>() / 10.0;
    println!("initial loss {initial:.4}, final {last:.4}");
    assert!(last < 0.5 * initial);
}

#[test]
fn zero_steps_returns_initial_parameters() {
    let data = one_tile();
    let cfg = TrainingConfig {
        seed: 9,
        ..TrainingConfig::with_steps(0)
    };
    let out = train(&data, &small_model(), &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.params, ModelParams::init(small_model(), 9).unwrap());
}

#[test]
fn same_seed_same_bits() {
    let data = one_tile();
    let cfg = TrainingConfig::with_steps(6);
    let a = train(&data, &small_model(), &cfg).unwrap();
    let b = train(&data, &small_model(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params.to_container().to_bytes(), b.params.to_container().to_bytes());
    assert_eq!(a.params, b.params);
}

#[test]
fn log_lines_follow_the_interval() {
    let data = one_tile();
    let cfg = TrainingConfig {
        log_every: 2,
        ..TrainingConfig::with_steps(5)
    };
    let mut lines = Vec::new();
    train_with_log(&data, &small_model(), &cfg, |l| lines.push(l.to_string())).unwrap();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("step=0 loss="));
    assert!(lines[2].starts_with("step=4 "));
    assert!(lines[2].contains("beta=1.0000"));
}

#[test]
fn bad_inputs_are_refused() {
    let data = one_tile();
    let cfg = TrainingConfig::with_steps(1);
    assert!(matches!(train(&data[..3], &small_model(), &cfg), Err(Error::Config(_))));

    let guarded = TrainingConfig {
        holdout_year: Some(2021),
        ..cfg.clone()
    };
    assert!(train(&data, &small_model(), &guarded).is_err());

    let mut poisoned = data.clone();
    poisoned[10].y_norm = f64::NAN;
    assert!(train(&poisoned, &small_model(), &cfg).is_err());
}
