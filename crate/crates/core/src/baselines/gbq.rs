use super::qrf::TreeArrays;
use super::tree::{grow, GrowParams, Presorted, Tree, LEAF};
use super::{check_xy, mean_pinball, pinball_minimizer, quantiles_to_gaussian, CenterRule, FlatFeature, Q_HIGH, Q_LOW, Q_MID};
use crate::anp::PredictiveGaussian;
use crate::container::Container;
use crate::error::{contract, Error, Result};
use crate::rng::stream;

pub const GBQ_KIND: &str = "gbq";

#[derive(Clone, Debug, PartialEq)]
pub struct GbqParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means all.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for GbqParams {
    fn default() -> Self {
        Self {
            rounds: 300,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 5,
            feature_subsample: None,
            seed: 0,
        }
    }
}

/// Boosted trees for a single conditional quantile under pinball loss.
///
/// Each round fits a variance-reduction tree to the negative loss gradient
/// and then replaces its leaf values with the pinball-optimal constant of the
/// residuals in that leaf, shrunk by the learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct GbqModel {
    pub q: f64,
    pub init: f64,
    n_features: usize,
    trees: Vec<Tree>,
    /// Shrunk leaf value per node (zero for internal nodes).
    steps: Vec<Vec<f64>>,
}

impl GbqModel {
    pub fn fit(x: &[FlatFeature], y: &[f64], q: f64, params: &GbqParams) -> Result<Self> {
        Self::fit_traced(x, y, q, params).map(|(m, _)| m)
    }

    /// Also returns the mean training pinball loss before round 1 and after every round.
    pub fn fit_traced(x: &[FlatFeature], y: &[f64], q: f64, params: &GbqParams) -> Result<(Self, Vec<f64>)> {
        if !(q > 0.0 && q < 1.0) {
            return Err(contract(format!("quantile level {q} outside (0, 1)")));
        }
        if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
            return Err(contract("learning rate must lie in (0, 1]"));
        }
        let p = check_xy(x, y, params.min_leaf)?;
        let rows: Vec<&[f64]> = x.iter().map(|r| r.0.as_slice()).collect();
        let data = Presorted::new(&rows);
        let grow_params = GrowParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: params.feature_subsample.unwrap_or(p),
        };
        let init = pinball_minimizer(y, q);
        let mut pred = vec![init; y.len()];
        let mut trace = vec![mean_pinball(y, &pred, q)];
        let ones = vec![1u32; y.len()];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut steps = Vec::with_capacity(params.rounds);
        for round in 0..params.rounds {
            let grad: Vec<f64> = y.iter().zip(&pred).map(|(&a, &b)| if a >= b { q } else { q - 1.0 }).collect();
            let mut rng = stream(params.seed, &[0x6B0, round as u64]);
            let (tree, members) = grow(&data, &grad, &ones, &grow_params, &mut rng);
            let mut step = vec![0.0; tree.nodes.len()];
            for (node, rs) in members.iter().enumerate() {
                if tree.nodes[node].feature != LEAF || rs.is_empty() {
                    continue;
                }
                let resid: Vec<f64> = rs.iter().map(|&r| y[r as usize] - pred[r as usize]).collect();
                step[node] = params.learning_rate * pinball_minimizer(&resid, q);
                for &r in rs {
                    pred[r as usize] += step[node];
                }
            }
            trace.push(mean_pinball(y, &pred, q));
            trees.push(tree);
            steps.push(step);
        }
        Ok((
            Self {
                q,
                init,
                n_features: p,
                trees,
                steps,
            },
            trace,
        ))
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &FlatFeature) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(contract(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        Ok(self
            .trees
            .iter()
            .zip(&self.steps)
            .fold(self.init, |acc, (t, s)| acc + s[t.leaf(&x.0)]))
    }

    fn store(&self, c: &mut Container, prefix: &str) {
        c.set(&format!("{prefix}.q"), self.q);
        c.set(&format!("{prefix}.init"), self.init);
        c.set(&format!("{prefix}.n_features"), self.n_features);
        let mut arrays = TreeArrays::default();
        for (t, s) in self.trees.iter().zip(&self.steps) {
            arrays.push(t, |i| if t.nodes[i].feature == LEAF { vec![s[i]] } else { Vec::new() });
        }
        let mut inner = Container::new("");
        arrays.store(&mut inner);
        for (name, e) in inner.entries {
            c.insert(&format!("{prefix}.{name}"), e.shape, e.data).expect("consistent arrays");
        }
    }

    fn load(c: &Container, prefix: &str) -> Result<Self> {
        let mut inner = Container::new("");
        for (name, e) in &c.entries {
            if let Some(rest) = name.strip_prefix(&format!("{prefix}.")) {
                inner.entries.insert(rest.to_string(), e.clone());
            }
        }
        let (trees, vals) = TreeArrays::load(&inner)?;
        let mut steps = Vec::with_capacity(trees.len());
        for (t, v) in trees.iter().zip(vals) {
            let mut s = vec![0.0; t.nodes.len()];
            for (i, node_vals) in v.into_iter().enumerate() {
                match (t.nodes[i].feature == LEAF, node_vals.as_slice()) {
                    (true, [x]) => s[i] = *x,
                    (false, []) => {}
                    _ => return Err(Error::Format("leaf values do not match tree structure".into())),
                }
            }
            steps.push(s);
        }
        Ok(Self {
            q: c.get(&format!("{prefix}.q"))?,
            init: c.get(&format!("{prefix}.init"))?,
            n_features: c.get(&format!("{prefix}.n_features"))?,
            trees,
            steps,
        })
    }
}

/// Lower and upper quantile models, optionally with a median model for the center.
#[derive(Clone, Debug, PartialEq)]
pub struct GbqPair {
    pub params: GbqParams,
    pub low: GbqModel,
    pub high: GbqModel,
    pub median: Option<GbqModel>,
}

impl GbqPair {
    pub fn fit(x: &[FlatFeature], y: &[f64], params: &GbqParams, center: CenterRule) -> Result<Self> {
        let seeded = |k: u64| GbqParams {
            seed: crate::rng::derive_seed(params.seed, &[k]),
            ..params.clone()
        };
        Ok(Self {
            params: params.clone(),
            low: GbqModel::fit(x, y, Q_LOW, &seeded(1))?,
            high: GbqModel::fit(x, y, Q_HIGH, &seeded(2))?,
            median: match center {
                CenterRule::Median => Some(GbqModel::fit(x, y, Q_MID, &seeded(3))?),
                CenterRule::Midpoint => None,
            },
        })
    }

    pub fn center(&self) -> CenterRule {
        if self.median.is_some() {
            CenterRule::Median
        } else {
            CenterRule::Midpoint
        }
    }

    /// Gaussian approximation plus whether the two quantiles crossed.
    pub fn predict(&self, x: &FlatFeature, sigma_floor: f64) -> Result<(PredictiveGaussian, bool)> {
        let lo = self.low.predict(x)?;
        let hi = self.high.predict(x)?;
        let mid = match &self.median {
            Some(m) => m.predict(x)?,
            None => 0.5 * (lo + hi),
        };
        Ok(quantiles_to_gaussian(lo, mid, hi, self.center(), sigma_floor))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(GBQ_KIND);
        let p = &self.params;
        c.set("gbq.rounds", p.rounds);
        c.set("gbq.learning_rate", p.learning_rate);
        c.set("gbq.max_depth", p.max_depth);
        c.set("gbq.min_leaf", p.min_leaf);
        c.set("gbq.feature_subsample", p.feature_subsample.map_or("all".to_string(), |m| m.to_string()));
        c.set("gbq.seed", p.seed);
        c.set("gbq.center", if self.median.is_some() { "median" } else { "midpoint" });
        self.low.store(&mut c, "low");
        self.high.store(&mut c, "high");
        if let Some(m) = &self.median {
            m.store(&mut c, "median");
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != GBQ_KIND {
            return Err(Error::Format(format!("container holds a {} model, expected {GBQ_KIND}", c.kind)));
        }
        let sub: String = c.get("gbq.feature_subsample")?;
        let center: String = c.get("gbq.center")?;
        let params = GbqParams {
            rounds: c.get("gbq.rounds")?,
            learning_rate: c.get("gbq.learning_rate")?,
            max_depth: c.get("gbq.max_depth")?,
            min_leaf: c.get("gbq.min_leaf")?,
            feature_subsample: if sub == "all" {
                None
            } else {
                Some(sub.parse().map_err(|_| Error::Format(format!("bad feature_subsample {sub}")))?)
            },
            seed: c.get("gbq.seed")?,
        };
        Ok(Self {
            params,
            low: GbqModel::load(c, "low")?,
            high: GbqModel::load(c, "high")?,
            median: match center.as_str() {
                "median" => Some(GbqModel::load(c, "median")?),
                "midpoint" => None,
                other => return Err(Error::Format(format!("unknown center rule {other}"))),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn toy(n: usize, seed: u64) -> (Vec<FlatFeature>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<FlatFeature> = (0..n).map(|_| FlatFeature(vec![rng.random(), rng.random()])).collect();
        let y = x.iter().map(|f| 2.0 * f.0[0] + 0.3 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn zero_rounds_is_the_empirical_quantile() {
        let (x, y) = toy(101, 1);
        let p = GbqParams { rounds: 0, ..GbqParams::default() };
        for q in [0.16, 0.5, 0.84] {
            let m = GbqModel::fit(&x, &y, q, &p).unwrap();
            assert_eq!(m.predict(&x[7]).unwrap(), pinball_minimizer(&y, q));
        }
    }

    #[test]
    fn training_loss_never_increases() {
        for seed in 0..4 {
            let (x, y) = toy(300, seed);
            let p = GbqParams { rounds: 60, learning_rate: 0.3, min_leaf: 3, ..GbqParams::default() };
            for q in [0.16, 0.84] {
                let (_, trace) = GbqModel::fit_traced(&x, &y, q, &p).unwrap();
                assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{trace:?}");
                assert!(trace.last().unwrap() < &(0.5 * trace[0]));
            }
        }
    }

    #[test]
    fn quantile_level_is_checked() {
        let (x, y) = toy(50, 2);
        for q in [0.0, 1.0, -0.1] {
            assert!(GbqModel::fit(&x, &y, q, &GbqParams::default()).is_err());
        }
    }

    #[test]
    fn pair_round_trips_through_container() {
        let (x, y) = toy(80, 3);
        let p = GbqParams { rounds: 15, ..GbqParams::default() };
        for center in [CenterRule::Midpoint, CenterRule::Median] {
            let m = GbqPair::fit(&x, &y, &p, center).unwrap();
            let bytes = m.to_container().to_bytes();
            let back = GbqPair::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_container().to_bytes(), bytes);
            let (g, _) = back.predict(&x[0], 1e-3).unwrap();
            assert!(g.sigma >= 1e-3);
        }
    }
}
