//! Attentive neural process over embedding patches and spatiotemporal coordinates.

mod coord;
mod footprint;
mod model;
mod checkpoint;
mod params;

pub use coord::{coord_for, doy_phase, temporal_encode, SpatioTemporalCoord, StudyPeriod, COORD_DIM};
pub use footprint::Footprint;
pub use model::{collapse_mixture, latent_noise, sample_latent, AnpModel, Attention, LatentDistribution, PredictiveGaussian};
pub use checkpoint::ANP_KIND;
pub use params::{AnpConfig, ModelParams, INIT_STD};

