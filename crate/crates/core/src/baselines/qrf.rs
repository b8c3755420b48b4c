use rand::Rng;
use rayon::prelude::*;

use super::tree::{grow, GrowParams, Node, Presorted, Tree, LEAF};
use super::{check_xy, quantile_sorted, FlatFeature};
use crate::container::{Container, EntryData};
use crate::error::{contract, Error, Result};
use crate::rng::stream;

pub const QRF_KIND: &str = "qrf";

#[derive(Clone, Debug, PartialEq)]
pub struct QrfParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈√p⌉`.
    pub feature_subsample: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for QrfParams {
    fn default() -> Self {
        Self {
            trees: 200,
            max_depth: 12,
            min_leaf: 5,
            feature_subsample: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Bagged regression trees. Splits are grown on the bootstrap sample; each
/// leaf then keeps the targets of every training row that falls into it.
#[derive(Clone, Debug, PartialEq)]
pub struct QrfForest {
    pub params: QrfParams,
    n_features: usize,
    trees: Vec<Tree>,
    /// Per tree and node, the sorted targets of all training rows routed there.
    leaves: Vec<Vec<Vec<f64>>>,
}

impl QrfForest {
    pub fn fit(x: &[FlatFeature], y: &[f64], params: &QrfParams) -> Result<Self> {
        let p = check_xy(x, y, params.min_leaf)?;
        if params.trees == 0 {
            return Err(contract("a forest needs at least one tree"));
        }
        let rows: Vec<&[f64]> = x.iter().map(|r| r.0.as_slice()).collect();
        let data = Presorted::new(&rows);
        let mtry = params
            .feature_subsample
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
        let grow_params = GrowParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry,
        };
        let n = y.len();
        let fitted: Vec<(Tree, Vec<Vec<f64>>)> = (0..params.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(params.seed, &[0x0F0E, t as u64]);
                let mut weight = vec![0u32; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weight[rng.random_range(0..n)] += 1;
                    }
                } else {
                    weight.fill(1);
                }
                let (tree, _) = grow(&data, y, &weight, &grow_params, &mut rng);
                let mut leaves = vec![Vec::new(); tree.nodes.len()];
                for (r, &t) in rows.iter().zip(y) {
                    leaves[tree.leaf(r)].push(t);
                }
                for v in &mut leaves {
                    v.sort_by(f64::total_cmp);
                }
                (tree, leaves)
            })
            .collect();
        let (trees, leaves) = fitted.into_iter().unzip();
        Ok(Self {
            params: params.clone(),
            n_features: p,
            trees,
            leaves,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Sorted union of the leaf samples reached by `x` in every tree.
    pub fn pooled(&self, x: &FlatFeature) -> Result<Vec<f64>> {
        if self.trees.is_empty() {
            return Err(contract("forest is not fitted"));
        }
        if x.len() != self.n_features {
            return Err(contract(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        let mut v = Vec::new();
        for (t, leaves) in self.trees.iter().zip(&self.leaves) {
            v.extend_from_slice(&leaves[t.leaf(&x.0)]);
        }
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    pub fn predict(&self, x: &FlatFeature, quantiles: &[f64]) -> Result<Vec<f64>> {
        if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(contract("quantile levels must lie in [0, 1]"));
        }
        let pooled = self.pooled(x)?;
        Ok(quantiles.iter().map(|&q| quantile_sorted(&pooled, q)).collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(QRF_KIND);
        c.set("qrf.trees", self.params.trees);
        c.set("qrf.max_depth", self.params.max_depth);
        c.set("qrf.min_leaf", self.params.min_leaf);
        c.set(
            "qrf.feature_subsample",
            self.params.feature_subsample.map_or("sqrt".to_string(), |m| m.to_string()),
        );
        c.set("qrf.bootstrap", self.params.bootstrap);
        c.set("qrf.seed", self.params.seed);
        c.set("qrf.n_features", self.n_features);
        let mut arrays = TreeArrays::default();
        for (t, leaves) in self.trees.iter().zip(&self.leaves) {
            arrays.push(t, |i| leaves[i].clone());
        }
        arrays.store(&mut c);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != QRF_KIND {
            return Err(Error::Format(format!("container holds a {} model, expected {QRF_KIND}", c.kind)));
        }
        let sub: String = c.get("qrf.feature_subsample")?;
        let params = QrfParams {
            trees: c.get("qrf.trees")?,
            max_depth: c.get("qrf.max_depth")?,
            min_leaf: c.get("qrf.min_leaf")?,
            feature_subsample: if sub == "sqrt" {
                None
            } else {
                Some(sub.parse().map_err(|_| Error::Format(format!("bad feature_subsample {sub}")))?)
            },
            bootstrap: c.get("qrf.bootstrap")?,
            seed: c.get("qrf.seed")?,
        };
        let (trees, leaves) = TreeArrays::load(c)?;
        Ok(Self {
            params,
            n_features: c.get("qrf.n_features")?,
            trees,
            leaves,
        })
    }
}

/// Flattened node arrays of a tree ensemble; each node carries a (possibly
/// empty) run of leaf values.
#[derive(Default)]
pub(crate) struct TreeArrays {
    tree_start: Vec<u32>,
    feature: Vec<u32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value_start: Vec<u32>,
    values: Vec<f64>,
}

impl TreeArrays {
    pub fn push(&mut self, t: &Tree, node_values: impl Fn(usize) -> Vec<f64>) {
        self.tree_start.push(self.feature.len() as u32);
        for (i, n) in t.nodes.iter().enumerate() {
            self.feature.push(n.feature);
            self.threshold.push(n.threshold);
            self.left.push(n.left);
            self.right.push(n.right);
            self.value_start.push(self.values.len() as u32);
            self.values.extend(node_values(i));
        }
    }

    pub fn store(mut self, c: &mut Container) {
        self.tree_start.push(self.feature.len() as u32);
        self.value_start.push(self.values.len() as u32);
        let n = |v: &Vec<u32>| vec![v.len()];
        let put = |c: &mut Container, name: &str, shape, data| c.insert(name, shape, data).expect("consistent arrays");
        put(c, "tree_start", n(&self.tree_start), EntryData::U32(self.tree_start.clone()));
        put(c, "feature", n(&self.feature), EntryData::U32(self.feature.clone()));
        put(c, "threshold", vec![self.threshold.len()], EntryData::F64(self.threshold));
        put(c, "left", n(&self.left), EntryData::U32(self.left.clone()));
        put(c, "right", n(&self.right), EntryData::U32(self.right.clone()));
        put(c, "value_start", n(&self.value_start), EntryData::U32(self.value_start.clone()));
        put(c, "values", vec![self.values.len()], EntryData::F64(self.values));
    }

    pub fn load(c: &Container) -> Result<(Vec<Tree>, Vec<Vec<Vec<f64>>>)> {
        let ts = c.u32s("tree_start")?;
        let feature = c.u32s("feature")?;
        let threshold = c.f64s("threshold")?;
        let left = c.u32s("left")?;
        let right = c.u32s("right")?;
        let vs = c.u32s("value_start")?;
        let values = c.f64s("values")?;
        let nn = feature.len();
        let bad = || Error::Format("inconsistent tree arrays".into());
        if threshold.len() != nn || left.len() != nn || right.len() != nn || vs.len() != nn + 1 || ts.last() != Some(&(nn as u32)) {
            return Err(bad());
        }
        let mut trees = Vec::new();
        let mut leaves = Vec::new();
        for w in ts.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            if a >= b || b > nn {
                return Err(bad());
            }
            let mut nodes = Vec::with_capacity(b - a);
            let mut vals = Vec::with_capacity(b - a);
            for i in a..b {
                let size = b - a;
                if feature[i] != LEAF && (left[i] as usize >= size || right[i] as usize >= size || left[i] as usize <= i - a || right[i] as usize <= i - a) {
                    return Err(bad());
                }
                let (s, e) = (vs[i] as usize, vs[i + 1] as usize);
                if s > e || e > values.len() {
                    return Err(bad());
                }
                nodes.push(Node {
                    feature: feature[i],
                    threshold: threshold[i],
                    left: left[i],
                    right: right[i],
                });
                vals.push(values[s..e].to_vec());
            }
            trees.push(Tree { nodes });
            leaves.push(vals);
        }
        Ok((trees, leaves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy(n: usize, seed: u64) -> (Vec<FlatFeature>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<FlatFeature> = (0..n).map(|_| FlatFeature(vec![rng.random(), rng.random(), rng.random()])).collect();
        let y = x.iter().map(|f| f.0[0] + 0.2 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn constant_target_gives_constant_quantiles() {
        let (x, _) = toy(100, 1);
        let f = QrfForest::fit(&x, &[2.5; 100], &QrfParams { trees: 10, ..QrfParams::default() }).unwrap();
        assert_eq!(f.predict(&x[3], &[0.0, 0.16, 0.5, 0.84, 1.0]).unwrap(), vec![2.5; 5]);
    }

    #[test]
    fn stump_without_bagging_pools_the_training_set() {
        let (x, y) = toy(40, 2);
        let params = QrfParams {
            trees: 1,
            max_depth: 0,
            bootstrap: false,
            ..QrfParams::default()
        };
        let f = QrfForest::fit(&x, &y, &params).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(f.pooled(&x[0]).unwrap(), sorted);
    }

    #[test]
    fn quantiles_increase_with_level() {
        let (x, y) = toy(300, 3);
        let f = QrfForest::fit(&x, &y, &QrfParams { trees: 20, ..QrfParams::default() }).unwrap();
        let qs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for xi in x.iter().take(30) {
            let v = f.predict(xi, &qs).unwrap();
            assert!(v.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn fit_is_seeded_and_serializes() {
        let (x, y) = toy(120, 4);
        let p = QrfParams { trees: 8, seed: 3, ..QrfParams::default() };
        let a = QrfForest::fit(&x, &y, &p).unwrap();
        assert_eq!(a, QrfForest::fit(&x, &y, &p).unwrap());
        let bytes = a.to_container().to_bytes();
        let back = QrfForest::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_container().to_bytes(), bytes);
    }

    #[test]
    fn invalid_inputs() {
        let (x, y) = toy(9, 5);
        assert!(QrfForest::fit(&x, &y, &QrfParams::default()).is_err());
        assert!(QrfForest::fit(&x[..5], &y, &QrfParams { min_leaf: 1, ..QrfParams::default() }).is_err());
        let (x, y) = toy(30, 5);
        let f = QrfForest::fit(&x, &y, &QrfParams { trees: 2, ..QrfParams::default() }).unwrap();
        assert!(f.predict(&FlatFeature(vec![0.0; 2]), &[0.5]).is_err());
        assert!(f.predict(&x[0], &[1.5]).is_err());
    }
}
