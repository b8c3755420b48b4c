use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::coord::COORD_DIM;
use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AnpConfig {
    /// Embedding channels per patch pixel.
    pub embed_dim: usize,
    pub conv_channels: usize,
    /// Width of the patch-encoder feature vector.
    pub feature_dim: usize,
    /// Width of context representations and the attention output.
    pub repr_dim: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub heads: usize,
    /// Lower bound added to every emitted standard deviation.
    pub sigma_floor: f64,
    /// Latent samples averaged at prediction time.
    pub latent_samples: usize,
    /// Whether the decoder also sees the target feature and coordinate.
    pub decoder_target_inputs: bool,
}

impl Default for AnpConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            conv_channels: 64,
            feature_dim: 256,
            repr_dim: 256,
            latent_dim: 128,
            decoder_hidden: 256,
            heads: 16,
            sigma_floor: 1e-3,
            latent_samples: 16,
            decoder_target_inputs: true,
        }
    }
}

impl AnpConfig {
    /// 128-channel embeddings and 1024-wide patch features.
    pub fn full_scale() -> Self {
        Self {
            embed_dim: 128,
            conv_channels: 128,
            feature_dim: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.conv_channels,
            self.feature_dim,
            self.repr_dim,
            self.latent_dim,
            self.decoder_hidden,
            self.heads,
            self.latent_samples,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model widths, heads and latent samples must be positive".into()));
        }
        if !self.repr_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "repr_dim {} is not divisible by {} heads",
                self.repr_dim, self.heads
            )));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }

    /// Name, shape and kind of every parameter tensor, in a fixed order.
    pub(crate) fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let (d, c, f, r, l, h) = (
            self.embed_dim,
            self.conv_channels,
            self.feature_dim,
            self.repr_dim,
            self.latent_dim,
            self.decoder_hidden,
        );
        let w = |name: &str, shape: Vec<usize>| (name.to_string(), shape, Init::Normal);
        let z = |name: &str, n: usize| (name.to_string(), vec![n], Init::Zeros);
        let o = |name: &str, n: usize| (name.to_string(), vec![n], Init::Ones);
        let mut v = vec![
            w("patch.conv1.w", vec![3, 3, d, c]),
            z("patch.conv1.b", c),
            w("patch.conv2.w", vec![3, 3, c, c]),
            z("patch.conv2.b", c),
            w("patch.conv3.w", vec![3, 3, c, c]),
            z("patch.conv3.b", c),
            w("patch.proj.w", vec![c, f]),
            z("patch.proj.b", f),
            w("ctx.l1.w_feat", vec![f, r]),
            w("ctx.l1.w_coord", vec![COORD_DIM, r]),
            w("ctx.l1.w_y", vec![1, r]),
            z("ctx.l1.b", r),
            o("ctx.ln1.g", r),
            z("ctx.ln1.b", r),
            w("ctx.l2.w", vec![r, r]),
            z("ctx.l2.b", r),
            o("ctx.ln2.g", r),
            z("ctx.ln2.b", r),
            w("ctx.l3.w", vec![r, r]),
            z("ctx.l3.b", r),
            w("attn.q.w_feat", vec![f, r]),
            w("attn.q.w_coord", vec![COORD_DIM, r]),
            z("attn.q.b", r),
            w("attn.k.w_feat", vec![f, r]),
            w("attn.k.w_coord", vec![COORD_DIM, r]),
            z("attn.k.b", r),
            w("attn.v.w", vec![r, r]),
            z("attn.v.b", r),
            w("attn.o.w", vec![r, r]),
            z("attn.o.b", r),
            w("lat.l1.w", vec![r, r]),
            z("lat.l1.b", r),
            w("lat.mu.w", vec![r, l]),
            z("lat.mu.b", l),
            w("lat.sigma.w", vec![r, l]),
            z("lat.sigma.b", l),
            w("dec.l1.w_det", vec![r, h]),
            w("dec.l1.w_z", vec![l, h]),
            z("dec.l1.b", h),
            w("dec.l2.w", vec![h, h]),
            z("dec.l2.b", h),
            w("dec.out.w", vec![h, 2]),
            z("dec.out.b", 2),
        ];
        if self.decoder_target_inputs {
            v.push(w("dec.l1.w_feat", vec![f, h]));
            v.push(w("dec.l1.w_coord", vec![COORD_DIM, h]));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Named parameter tensors plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: AnpConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Truncated normal (±2 std) weights, zero biases, unit layer-norm gains.
    pub fn init(config: AnpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0x1A17]);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in config.layout() {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal => (0..n)
                    .map(|_| loop {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        if v.abs() <= 2.0 {
                            break v * INIT_STD;
                        }
                    })
                    .collect(),
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { config, tensors })
    }

    /// Rebuilds a parameter set from named tensors, checking every shape.
    pub fn from_tensors(config: AnpConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &layout {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf of `tape`.
    pub(crate) fn bind(&self, tape: &mut Tape) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Bound { ids }
    }
}

/// Parameter leaves recorded on one tape.
pub(crate) struct Bound {
    pub(crate) ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub(crate) fn p(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}
