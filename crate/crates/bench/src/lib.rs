//! Shared fixtures for the criterion benches under `benches/`.

use stnp_core::anp::{AnpConfig, Footprint};
use stnp_core::synthworld::{World, WorldConfig};

/// Footprints from a small default world with `per_tile_year` shots per tile-year.
pub fn footprints(per_tile_year: f64, embed_dim: usize) -> Vec<Footprint> {
    World::new(WorldConfig {
        footprints_per_tile_year: per_tile_year,
        embed_dim,
        seed: 1,
        ..WorldConfig::default()
    })
    .expect("valid world")
    .sample_footprints()
    .expect("sampling succeeds")
    .footprints
}

/// The model size used by the acceptance runs.
pub fn small_model(embed_dim: usize) -> AnpConfig {
    AnpConfig {
        embed_dim,
        conv_channels: 16,
        feature_dim: 64,
        repr_dim: 64,
        latent_dim: 32,
        decoder_hidden: 64,
        heads: 16,
        ..AnpConfig::default()
    }
}
