//! ANP checkpoints: one f32 entry per parameter tensor plus the architecture
//! under `anp.*` header keys. Values are widened back to f64 on load, so
//! saving a loaded checkpoint reproduces the original bytes.

use std::collections::BTreeMap;
use std::path::Path;

use super::params::{AnpConfig, ModelParams};
use crate::container::{Container, EntryData};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const ANP_KIND: &str = "anp";

fn config_header(c: &mut Container, cfg: &AnpConfig) {
    c.set("anp.embed_dim", cfg.embed_dim);
    c.set("anp.conv_channels", cfg.conv_channels);
    c.set("anp.feature_dim", cfg.feature_dim);
    c.set("anp.repr_dim", cfg.repr_dim);
    c.set("anp.latent_dim", cfg.latent_dim);
    c.set("anp.decoder_hidden", cfg.decoder_hidden);
    c.set("anp.heads", cfg.heads);
    c.set("anp.sigma_floor", cfg.sigma_floor);
    c.set("anp.latent_samples", cfg.latent_samples);
    c.set("anp.decoder_target_inputs", cfg.decoder_target_inputs);
}

fn config_from_header(c: &Container) -> Result<AnpConfig> {
    Ok(AnpConfig {
        embed_dim: c.get("anp.embed_dim")?,
        conv_channels: c.get("anp.conv_channels")?,
        feature_dim: c.get("anp.feature_dim")?,
        repr_dim: c.get("anp.repr_dim")?,
        latent_dim: c.get("anp.latent_dim")?,
        decoder_hidden: c.get("anp.decoder_hidden")?,
        heads: c.get("anp.heads")?,
        sigma_floor: c.get("anp.sigma_floor")?,
        latent_samples: c.get("anp.latent_samples")?,
        decoder_target_inputs: c.get("anp.decoder_target_inputs")?,
    })
}

impl ModelParams {
    /// Copy with every value rounded to the nearest f32, i.e. exactly what a
    /// checkpoint stores.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ANP_KIND);
        config_header(&mut c, &self.config);
        for (name, t) in self.tensors() {
            let data = t.data().iter().map(|&v| v as f32).collect();
            c.insert(name, t.shape().to_vec(), EntryData::F32(data))
                .expect("tensor shape matches its data");
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != ANP_KIND {
            return Err(Error::Format(format!("container holds a {} model, expected {ANP_KIND}", c.kind)));
        }
        let config = config_from_header(c)?;
        let mut tensors = BTreeMap::new();
        for (name, e) in &c.entries {
            let EntryData::F32(v) = &e.data else {
                return Err(Error::Format(format!("parameter {name} is not stored as f32")));
            };
            tensors.insert(name.clone(), Tensor::new(e.shape.clone(), v.iter().map(|&x| x as f64).collect())?);
        }
        Self::from_tensors(config, tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
