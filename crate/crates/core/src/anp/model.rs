//! Forward graphs of the attentive neural process.
//!
//! Data flow for one set of targets:
//!
//! ```text
//! patch ──conv×3──► feature ─┬─► context encoder (+coord, y) ─► r_i ─┬─► mean ─► latent MLP ─► (μ_z, σ_z)
//!                            │                                        └─► values
//!                            └─► keys / queries (+coord) ──► multihead cross-attention ─► det
//! decoder(det, z, target feature, target coord) ─► (μ, σ)
//! ```

use super::coord::{SpatioTemporalCoord, COORD_DIM};
use super::footprint::Footprint;
use super::params::{AnpConfig, Bound, ModelParams};
use crate::diffcore::{taped_kl, taped_mean_nll, NodeId, Tape, Tensor};
use crate::error::{contract, Error, Result};
use crate::rng::stream;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

/// Targets decoded per tape during prediction; bounds attention memory.
const PREDICT_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu_z: Vec<f64>,
    pub sigma_z: Vec<f64>,
}

/// Gaussian predictive distribution in normalized log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveGaussian {
    pub mu: f64,
    pub sigma: f64,
}

/// Result of one cross-attention query.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: Vec<f64>,
    /// Post-softmax weights over the context, one row per head.
    pub weights: Vec<Vec<f64>>,
}

/// Stacked model inputs for a set of footprints or query points.
pub(crate) struct Batch {
    pub patches: Tensor,
    pub coords: Tensor,
    pub y: Option<Tensor>,
}

impl Batch {
    pub(crate) fn from_footprints(fps: &[&Footprint], d: usize) -> Result<Self> {
        let mut b = Self::from_points(fps.iter().map(|f| (&f.patch, &f.coord)), fps.len(), d)?;
        b.y = Some(Tensor::new(vec![fps.len(), 1], fps.iter().map(|f| f.y_norm).collect())?);
        Ok(b)
    }

    pub(crate) fn from_points<'a>(
        points: impl Iterator<Item = (&'a Tensor, &'a SpatioTemporalCoord)>,
        n: usize,
        d: usize,
    ) -> Result<Self> {
        let mut patches = Vec::with_capacity(n * 9 * d);
        let mut coords = Vec::with_capacity(n * COORD_DIM);
        for (patch, coord) in points {
            check_patch(patch, d)?;
            patches.extend_from_slice(patch.data());
            coords.extend_from_slice(&coord.to_array());
        }
        Ok(Self {
            patches: Tensor::new(vec![n, 3, 3, d], patches)?,
            coords: Tensor::new(vec![n, COORD_DIM], coords)?,
            y: None,
        })
    }

    fn len(&self) -> usize {
        self.coords.rows()
    }
}

fn check_patch(patch: &Tensor, d: usize) -> Result<()> {
    if patch.shape() != [3, 3, d] {
        return Err(contract(format!("patch shape {:?}, expected [3, 3, {d}]", patch.shape())));
    }
    Ok(())
}

fn linear(t: &mut Tape, b: &Bound, x: NodeId, w: &str, bias: &str) -> NodeId {
    let h = t.matmul(x, b.p(w));
    t.add(h, b.p(bias))
}

fn affine_norm(t: &mut Tape, b: &Bound, x: NodeId, g: &str, beta: &str) -> NodeId {
    let n = t.layer_norm(x);
    let s = t.mul(n, b.p(g));
    t.add(s, b.p(beta))
}

/// `[N,3,3,D]` patches to `[N,F]` features.
pub(crate) fn g_patch(t: &mut Tape, b: &Bound, patches: NodeId) -> NodeId {
    let c1 = t.conv3x3(patches, b.p("patch.conv1.w"));
    let c1 = t.add(c1, b.p("patch.conv1.b"));
    let h1 = t.gelu(c1);
    let c2 = t.conv3x3(h1, b.p("patch.conv2.w"));
    let c2 = t.add(c2, b.p("patch.conv2.b"));
    let c2 = t.add(c2, h1);
    let h2 = t.gelu(c2);
    let c3 = t.conv3x3(h2, b.p("patch.conv3.w"));
    let c3 = t.add(c3, b.p("patch.conv3.b"));
    let pooled = t.mean_pool(c3, 9);
    linear(t, b, pooled, "patch.proj.w", "patch.proj.b")
}

/// Context encoder over `[N,F]` features, `[N,5]` coordinates and `[N,1]` targets.
pub(crate) fn g_context(t: &mut Tape, b: &Bound, feat: NodeId, coord: NodeId, y: NodeId) -> NodeId {
    let a = t.matmul(feat, b.p("ctx.l1.w_feat"));
    let c = t.matmul(coord, b.p("ctx.l1.w_coord"));
    let yy = t.matmul(y, b.p("ctx.l1.w_y"));
    let h = t.add(a, c);
    let h = t.add(h, yy);
    let h = t.add(h, b.p("ctx.l1.b"));
    let h = affine_norm(t, b, h, "ctx.ln1.g", "ctx.ln1.b");
    let h = t.gelu(h);
    let h = linear(t, b, h, "ctx.l2.w", "ctx.l2.b");
    let h = affine_norm(t, b, h, "ctx.ln2.g", "ctx.ln2.b");
    let h = t.gelu(h);
    linear(t, b, h, "ctx.l3.w", "ctx.l3.b")
}

fn g_project_xy(t: &mut Tape, b: &Bound, feat: NodeId, coord: NodeId, which: &str) -> NodeId {
    let a = t.matmul(feat, b.p(&format!("attn.{which}.w_feat")));
    let c = t.matmul(coord, b.p(&format!("attn.{which}.w_coord")));
    let h = t.add(a, c);
    t.add(h, b.p(&format!("attn.{which}.b")))
}

pub(crate) fn g_queries(t: &mut Tape, b: &Bound, feat: NodeId, coord: NodeId) -> NodeId {
    g_project_xy(t, b, feat, coord, "q")
}

pub(crate) fn g_keys(t: &mut Tape, b: &Bound, feat: NodeId, coord: NodeId) -> NodeId {
    g_project_xy(t, b, feat, coord, "k")
}

pub(crate) fn g_values(t: &mut Tape, b: &Bound, reprs: NodeId) -> NodeId {
    linear(t, b, reprs, "attn.v.w", "attn.v.b")
}

/// Scaled dot-product attention per head over projected `q [nt,R]`,
/// `k [nc,R]`, `v [nc,R]`, followed by the output projection.
pub(crate) fn g_attend(t: &mut Tape, b: &Bound, cfg: &AnpConfig, q: NodeId, k: NodeId, v: NodeId) -> (NodeId, Vec<NodeId>) {
    let dh = cfg.repr_dim / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = t.slice(q, lo, hi);
        let kh = t.slice(k, lo, hi);
        let vh = t.slice(v, lo, hi);
        let kt = t.transpose(kh);
        let s = t.matmul(qh, kt);
        let s = t.scale(s, scale);
        let a = t.softmax(s);
        weights.push(a);
        outs.push(t.matmul(a, vh));
    }
    let cat = t.concat(&outs);
    (linear(t, b, cat, "attn.o.w", "attn.o.b"), weights)
}

/// Latent MLP over a pooled `[1,R]` representation.
pub(crate) fn g_latent(t: &mut Tape, b: &Bound, cfg: &AnpConfig, pooled: NodeId) -> (NodeId, NodeId) {
    let h = linear(t, b, pooled, "lat.l1.w", "lat.l1.b");
    let h = t.gelu(h);
    let mu = linear(t, b, h, "lat.mu.w", "lat.mu.b");
    let raw = linear(t, b, h, "lat.sigma.w", "lat.sigma.b");
    let sp = t.softplus(raw);
    (mu, t.offset(sp, cfg.sigma_floor))
}

/// Target-dependent part of the first decoder layer (everything but `z`).
pub(crate) fn g_decoder_base(t: &mut Tape, b: &Bound, cfg: &AnpConfig, det: NodeId, feat: NodeId, coord: NodeId) -> NodeId {
    let mut h = t.matmul(det, b.p("dec.l1.w_det"));
    if cfg.decoder_target_inputs {
        let f = t.matmul(feat, b.p("dec.l1.w_feat"));
        let c = t.matmul(coord, b.p("dec.l1.w_coord"));
        h = t.add(h, f);
        h = t.add(h, c);
    }
    t.add(h, b.p("dec.l1.b"))
}

/// Finishes decoding for one latent sample `z [1,L]`; returns `[nt,1]` mean and std nodes.
pub(crate) fn g_decoder_head(t: &mut Tape, b: &Bound, cfg: &AnpConfig, base: NodeId, z: NodeId) -> (NodeId, NodeId) {
    let zc = t.matmul(z, b.p("dec.l1.w_z"));
    let h = t.add(base, zc);
    let h = t.gelu(h);
    let h = linear(t, b, h, "dec.l2.w", "dec.l2.b");
    let h = t.gelu(h);
    let out = linear(t, b, h, "dec.out.w", "dec.out.b");
    let mu = t.slice(out, 0, 1);
    let raw = t.slice(out, 1, 2);
    let sp = t.softplus(raw);
    (mu, t.offset(sp, cfg.sigma_floor))
}

pub(crate) struct ElboNodes {
    pub loss: NodeId,
}

/// Negative ELBO for one episode: mean target NLL under a posterior latent
/// sample plus `beta` times `KL(q(z|C∪T) ‖ p(z|C))`.
pub(crate) fn g_elbo(t: &mut Tape, b: &Bound, cfg: &AnpConfig, ctx: &Batch, tgt: &Batch, beta: f64, noise: &[f64]) -> ElboNodes {
    let (nc, nt) = (ctx.len() as f64, tgt.len() as f64);
    let pc = t.leaf(ctx.patches.clone());
    let cc = t.leaf(ctx.coords.clone());
    let yc = t.leaf(ctx.y.clone().expect("context targets"));
    let pt = t.leaf(tgt.patches.clone());
    let ct = t.leaf(tgt.coords.clone());
    let yt = t.leaf(tgt.y.clone().expect("target values"));

    let fc = g_patch(t, b, pc);
    let ft = g_patch(t, b, pt);
    let rc = g_context(t, b, fc, cc, yc);
    let rt = g_context(t, b, ft, ct, yt);

    let mean_c = t.mean_rows(rc);
    let mean_t = t.mean_rows(rt);
    let (mu_p, sig_p) = g_latent(t, b, cfg, mean_c);
    let wc = t.scale(mean_c, nc / (nc + nt));
    let wt = t.scale(mean_t, nt / (nc + nt));
    let pooled_all = t.add(wc, wt);
    let (mu_q, sig_q) = g_latent(t, b, cfg, pooled_all);

    let eps = t.leaf(Tensor::row(noise));
    let spread = t.mul(sig_q, eps);
    let z = t.add(mu_q, spread);

    let q = g_queries(t, b, ft, ct);
    let k = g_keys(t, b, fc, cc);
    let v = g_values(t, b, rc);
    let (det, _) = g_attend(t, b, cfg, q, k, v);
    let base = g_decoder_base(t, b, cfg, det, ft, ct);
    let (mu, sigma) = g_decoder_head(t, b, cfg, base, z);

    let nll = taped_mean_nll(t, yt, mu, sigma);
    let loss = if beta > 0.0 {
        let kl = taped_kl(t, mu_q, sig_q, mu_p, sig_p);
        let weighted = t.scale(kl, beta);
        t.add(nll, weighted)
    } else {
        nll
    };
    ElboNodes { loss }
}

/// `z = μ_z + σ_z ⊙ noise`.
pub fn sample_latent(dist: &LatentDistribution, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != dist.mu_z.len() || dist.sigma_z.len() != dist.mu_z.len() {
        return Err(contract(format!(
            "noise length {} does not match latent width {}",
            noise.len(),
            dist.mu_z.len()
        )));
    }
    Ok(dist
        .mu_z
        .iter()
        .zip(&dist.sigma_z)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Moment-matched single Gaussian for an equal-weight mixture:
/// `μ = mean μ_k`, `σ² = mean σ_k² + var μ_k` (population variance).
pub fn collapse_mixture(components: &[PredictiveGaussian]) -> PredictiveGaussian {
    let k = components.len() as f64;
    let mu = components.iter().map(|c| c.mu).sum::<f64>() / k;
    let second = components.iter().map(|c| c.sigma * c.sigma).sum::<f64>() / k;
    let spread = components.iter().map(|c| (c.mu - mu).powi(2)).sum::<f64>() / k;
    PredictiveGaussian {
        mu,
        sigma: (second + spread).sqrt(),
    }
}

/// Standard-normal latent noise for prediction sample `k`.
pub fn latent_noise(seed: u64, k: usize, width: usize) -> Vec<f64> {
    let mut rng = stream(seed, &[0x7A7E, k as u64]);
    (0..width).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn finite_or_fail(t: &Tape) -> Result<()> {
    match t.first_non_finite() {
        Some(id) => Err(Error::NumericFailure {
            node: id.index(),
            op: "forward",
        }),
        None => Ok(()),
    }
}

/// A parameter set together with the forward computations of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct AnpModel {
    params: ModelParams,
}

impl AnpModel {
    pub fn new(params: ModelParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &AnpConfig {
        &self.params.config
    }

    fn run<R>(&self, f: impl FnOnce(&mut Tape, &Bound) -> Result<R>) -> Result<R> {
        let mut t = Tape::new();
        let b = self.params.bind(&mut t);
        let out = f(&mut t, &b)?;
        finite_or_fail(&t)?;
        Ok(out)
    }

    /// Patch encoder for one `[3,3,D]` patch.
    pub fn encode_patch(&self, patch: &Tensor) -> Result<Vec<f64>> {
        check_patch(patch, self.config().embed_dim)?;
        self.run(|t, b| {
            let x = t.leaf(patch.clone().reshaped(vec![1, 3, 3, patch.cols()])?);
            let f = g_patch(t, b, x);
            Ok(t.value(f).data().to_vec())
        })
    }

    /// Context encoder for one (feature, coordinate, target) triple.
    pub fn encode_context(&self, feature: &[f64], coord: &SpatioTemporalCoord, y_norm: f64) -> Result<Vec<f64>> {
        if feature.len() != self.config().feature_dim {
            return Err(contract("feature width mismatch"));
        }
        self.run(|t, b| {
            let f = t.leaf(Tensor::row(feature));
            let c = t.leaf(Tensor::row(&coord.to_array()));
            let y = t.leaf(Tensor::row(&[y_norm]));
            let r = g_context(t, b, f, c, y);
            Ok(t.value(r).data().to_vec())
        })
    }

    /// Multihead cross-attention for one target.
    ///
    /// Queries and keys are `[feature, coordinate]` vectors (width `F + 5`);
    /// values are context representations (width `R`).
    pub fn cross_attend(&self, target_query: &[f64], context_keys: &[Vec<f64>], context_values: &[Vec<f64>]) -> Result<Attention> {
        let cfg = self.config();
        let kw = cfg.feature_dim + COORD_DIM;
        if context_keys.is_empty() {
            return Err(Error::EmptyContext);
        }
        if context_keys.len() != context_values.len() {
            return Err(contract("key and value lists differ in length"));
        }
        if target_query.len() != kw || context_keys.iter().any(|k| k.len() != kw) {
            return Err(contract(format!("query/key width must be {kw}")));
        }
        if context_values.iter().any(|v| v.len() != cfg.repr_dim) {
            return Err(contract(format!("value width must be {}", cfg.repr_dim)));
        }
        let split = |rows: &[&[f64]]| -> Result<(Tensor, Tensor)> {
            let f: Vec<Vec<f64>> = rows.iter().map(|r| r[..cfg.feature_dim].to_vec()).collect();
            let c: Vec<Vec<f64>> = rows.iter().map(|r| r[cfg.feature_dim..].to_vec()).collect();
            Ok((Tensor::from_rows(&f)?, Tensor::from_rows(&c)?))
        };
        let (qf, qc) = split(&[target_query])?;
        let keys: Vec<&[f64]> = context_keys.iter().map(Vec::as_slice).collect();
        let (kf, kc) = split(&keys)?;
        let vals = Tensor::from_rows(context_values)?;
        self.run(|t, b| {
            let (qf, qc, kf, kc, vals) = (t.leaf(qf), t.leaf(qc), t.leaf(kf), t.leaf(kc), t.leaf(vals));
            let q = g_queries(t, b, qf, qc);
            let k = g_keys(t, b, kf, kc);
            let v = g_values(t, b, vals);
            let (out, weights) = g_attend(t, b, cfg, q, k, v);
            Ok(Attention {
                output: t.value(out).data().to_vec(),
                weights: weights.iter().map(|&w| t.value(w).data().to_vec()).collect(),
            })
        })
    }

    /// Mean-pools context representations and maps them to a latent Gaussian.
    pub fn latent_summary(&self, context_reprs: &[Vec<f64>]) -> Result<LatentDistribution> {
        if context_reprs.is_empty() {
            return Err(Error::EmptyContext);
        }
        if context_reprs.iter().any(|r| r.len() != self.config().repr_dim) {
            return Err(contract("representation width mismatch"));
        }
        let reprs = Tensor::from_rows(context_reprs)?;
        self.run(|t, b| {
            let r = t.leaf(reprs);
            let pooled = t.mean_rows(r);
            let (mu, sigma) = g_latent(t, b, self.config(), pooled);
            Ok(LatentDistribution {
                mu_z: t.value(mu).data().to_vec(),
                sigma_z: t.value(sigma).data().to_vec(),
            })
        })
    }

    pub fn decode(&self, det_repr: &[f64], z: &[f64], target_feature: &[f64], coord: &SpatioTemporalCoord) -> Result<PredictiveGaussian> {
        let cfg = self.config();
        if det_repr.len() != cfg.repr_dim || z.len() != cfg.latent_dim || target_feature.len() != cfg.feature_dim {
            return Err(contract("decoder input width mismatch"));
        }
        self.run(|t, b| {
            let det = t.leaf(Tensor::row(det_repr));
            let zz = t.leaf(Tensor::row(z));
            let f = t.leaf(Tensor::row(target_feature));
            let c = t.leaf(Tensor::row(&coord.to_array()));
            let base = g_decoder_base(t, b, cfg, det, f, c);
            let (mu, sigma) = g_decoder_head(t, b, cfg, base, zz);
            Ok(PredictiveGaussian {
                mu: t.value(mu).item(),
                sigma: t.value(sigma).item(),
            })
        })
    }

    /// Predictive Gaussians for `targets` given `context`.
    ///
    /// The latent is drawn `k` times from the context-only prior with noise
    /// derived from `seed`; the resulting mixture is moment-matched per target.
    pub fn predict(
        &self,
        context: &[Footprint],
        targets: &[(Tensor, SpatioTemporalCoord)],
        k: usize,
        seed: u64,
    ) -> Result<Vec<PredictiveGaussian>> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        if k == 0 {
            return Err(contract("at least one latent sample is required"));
        }
        let cfg = self.config();
        let d = cfg.embed_dim;
        let refs: Vec<&Footprint> = context.iter().collect();
        let ctx = Batch::from_footprints(&refs, d)?;

        // Context-side quantities are shared by every target chunk.
        let (keys, values, mu_p, sig_p) = self.run(|t, b| {
            let pc = t.leaf(ctx.patches.clone());
            let cc = t.leaf(ctx.coords.clone());
            let yc = t.leaf(ctx.y.clone().expect("context targets"));
            let fc = g_patch(t, b, pc);
            let rc = g_context(t, b, fc, cc, yc);
            let k = g_keys(t, b, fc, cc);
            let v = g_values(t, b, rc);
            let pooled = t.mean_rows(rc);
            let (mu, sig) = g_latent(t, b, cfg, pooled);
            Ok((t.value(k).clone(), t.value(v).clone(), t.value(mu).clone(), t.value(sig).clone()))
        })?;
        let zs: Vec<Tensor> = (0..k)
            .map(|s| {
                let eps = latent_noise(seed, s, cfg.latent_dim);
                let z: Vec<f64> = mu_p.data().iter().zip(sig_p.data()).zip(&eps).map(|((m, s), e)| m + s * e).collect();
                Tensor::row(&z)
            })
            .collect();

        let mut out = Vec::with_capacity(targets.len());
        for chunk in targets.chunks(PREDICT_CHUNK) {
            let tb = Batch::from_points(chunk.iter().map(|(p, c)| (p, c)), chunk.len(), d)?;
            let comps: Vec<(Vec<f64>, Vec<f64>)> = self.run(|t, b| {
                let kk = t.leaf(keys.clone());
                let vv = t.leaf(values.clone());
                let pt = t.leaf(tb.patches);
                let ct = t.leaf(tb.coords);
                let ft = g_patch(t, b, pt);
                let q = g_queries(t, b, ft, ct);
                let (det, _) = g_attend(t, b, cfg, q, kk, vv);
                let base = g_decoder_base(t, b, cfg, det, ft, ct);
                let mut comps = Vec::with_capacity(k);
                for z in &zs {
                    let zz = t.leaf(z.clone());
                    let (mu, sigma) = g_decoder_head(t, b, cfg, base, zz);
                    comps.push((t.value(mu).data().to_vec(), t.value(sigma).data().to_vec()));
                }
                Ok(comps)
            })?;
            for i in 0..chunk.len() {
                let mix: Vec<PredictiveGaussian> = comps
                    .iter()
                    .map(|(m, s)| PredictiveGaussian { mu: m[i], sigma: s[i] })
                    .collect();
                out.push(collapse_mixture(&mix));
            }
        }
        Ok(out)
    }

    /// Scalar negative ELBO for one context/target split.
    pub fn elbo_loss(&self, context: &[Footprint], targets: &[Footprint], beta: f64, noise: &[f64]) -> Result<f64> {
        let c: Vec<&Footprint> = context.iter().collect();
        let t: Vec<&Footprint> = targets.iter().collect();
        self.elbo_grads(&c, &t, beta, noise, false).map(|(l, _)| l)
    }

    /// Negative ELBO and its gradient with respect to every named parameter.
    pub fn elbo_gradients(
        &self,
        context: &[Footprint],
        targets: &[Footprint],
        beta: f64,
        noise: &[f64],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let c: Vec<&Footprint> = context.iter().collect();
        let t: Vec<&Footprint> = targets.iter().collect();
        self.elbo_grads(&c, &t, beta, noise, true)
    }

    /// Loss and, when `with_grads`, the gradient of every parameter.
    pub(crate) fn elbo_grads(
        &self,
        context: &[&Footprint],
        targets: &[&Footprint],
        beta: f64,
        noise: &[f64],
        with_grads: bool,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        if context.is_empty() || targets.is_empty() {
            return Err(contract("context and target sets must be non-empty"));
        }
        if !(beta >= 0.0) {
            return Err(contract("beta must be non-negative"));
        }
        let cfg = self.config();
        if noise.len() != cfg.latent_dim {
            return Err(contract("latent noise width mismatch"));
        }
        let ctx = Batch::from_footprints(context, cfg.embed_dim)?;
        let tgt = Batch::from_footprints(targets, cfg.embed_dim)?;
        let mut t = Tape::new();
        let b = self.params.bind(&mut t);
        let nodes = g_elbo(&mut t, &b, cfg, &ctx, &tgt, beta, noise);
        let loss = t.value(nodes.loss).item();
        if !with_grads {
            finite_or_fail(&t)?;
            return Ok((loss, BTreeMap::new()));
        }
        let mut grads = t.backward(nodes.loss)?;
        let out = b
            .ids
            .iter()
            .map(|(name, &id)| {
                let g = grads
                    .take(id)
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(name).expect("bound parameter").shape()));
                (name.clone(), g)
            })
            .collect();
        Ok((loss, out))
    }
}
