//! Level-wise CART regression trees on presorted features.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

/// Marks a leaf in [`Node::feature`].
pub(crate) const LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf reached by `x` (`x[f] <= threshold` goes left).
    pub fn leaf(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return i;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }
}

/// Column-major training matrix with each column's row order presorted.
pub(crate) struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(rows: &[&[f64]]) -> Self {
        let p = rows[0].len();
        let cols: Vec<Vec<f64>> = (0..p).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..c.len() as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        Self { cols, order }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per node.
    pub mtry: usize,
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    node: usize,
    w: f64,
    sy: f64,
    syy: f64,
    candidates: Vec<bool>,
    best: Option<Split>,
}

/// Grows one tree with integer sample weights (bootstrap multiplicities or
/// all ones) by variance reduction. Returns the tree and, per node, the rows
/// that end in it (empty for internal nodes).
pub(crate) fn grow(data: &Presorted, target: &[f64], weight: &[u32], params: &GrowParams, rng: &mut ChaCha8Rng) -> (Tree, Vec<Vec<u32>>) {
    let n = target.len();
    let p = data.n_features();
    let mtry = params.mtry.clamp(1, p);
    let mut nodes = vec![Node {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
    }];
    const NONE: u32 = u32::MAX;
    // Open node slot (index into `open`) for every row still being split.
    let mut slot: Vec<u32> = weight.iter().map(|&w| if w > 0 { 0 } else { NONE }).collect();
    let mut leaf_of = vec![NONE; n];
    let (mut w, mut sy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let wi = weight[i] as f64;
        w += wi;
        sy += wi * target[i];
        syy += wi * target[i] * target[i];
    }
    let mut open = vec![Open {
        node: 0,
        w,
        sy,
        syy,
        candidates: Vec::new(),
        best: None,
    }];
    let min_leaf = params.min_leaf as f64;
    let mut depth = 0;
    while !open.is_empty() {
        let splittable: Vec<bool> = open
            .iter()
            .map(|o| depth < params.max_depth && o.w >= 2.0 * min_leaf)
            .collect();
        for (o, &s) in open.iter_mut().zip(&splittable) {
            o.candidates = vec![false; p];
            if s {
                for f in sample(rng, p, mtry) {
                    o.candidates[f] = true;
                }
            }
        }
        if splittable.iter().any(|&s| s) {
            let k = open.len();
            let mut wl = vec![0.0; k];
            let mut sl = vec![0.0; k];
            let mut last = vec![0.0; k];
            for f in 0..p {
                if !open.iter().any(|o| o.candidates[f]) {
                    continue;
                }
                wl.iter_mut().for_each(|v| *v = 0.0);
                sl.iter_mut().for_each(|v| *v = 0.0);
                let col = &data.cols[f];
                for &r in &data.order[f] {
                    let r = r as usize;
                    let s = slot[r];
                    if s == NONE {
                        continue;
                    }
                    let s = s as usize;
                    let o = &mut open[s];
                    if !o.candidates[f] {
                        continue;
                    }
                    let x = col[r];
                    if wl[s] >= min_leaf && x > last[s] && o.w - wl[s] >= min_leaf {
                        let wr = o.w - wl[s];
                        let sr = o.sy - sl[s];
                        let gain = sl[s] * sl[s] / wl[s] + sr * sr / wr - o.sy * o.sy / o.w;
                        if o.best.is_none_or(|b| gain > b.gain) {
                            let mut threshold = 0.5 * (last[s] + x);
                            if threshold >= x {
                                threshold = last[s];
                            }
                            o.best = Some(Split {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                    let wi = weight[r] as f64;
                    wl[s] += wi;
                    sl[s] += wi * target[r];
                    last[s] = x;
                }
            }
        }

        // Commit splits with a real reduction in squared error.
        let mut next: Vec<Open> = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32)>> = Vec::with_capacity(open.len());
        for o in &open {
            // Tolerance relative to the sums, so rounding in a constant node never splits it.
            match o.best {
                Some(b) if b.gain > 1e-12 * o.syy.max(f64::MIN_POSITIVE) => {
                    let l = nodes.len();
                    nodes.push(Node {
                        feature: LEAF,
                        threshold: 0.0,
                        left: 0,
                        right: 0,
                    });
                    nodes.push(nodes[l]);
                    nodes[o.node] = Node {
                        feature: b.feature as u32,
                        threshold: b.threshold,
                        left: l as u32,
                        right: l as u32 + 1,
                    };
                    child_slots.push(Some((next.len() as u32, next.len() as u32 + 1)));
                    for c in 0..2 {
                        next.push(Open {
                            node: l + c,
                            w: 0.0,
                            sy: 0.0,
                            syy: 0.0,
                            candidates: Vec::new(),
                            best: None,
                        });
                    }
                }
                _ => child_slots.push(None),
            }
        }
        for r in 0..n {
            let s = slot[r];
            if s == NONE {
                continue;
            }
            let o = &open[s as usize];
            match child_slots[s as usize] {
                Some((l, rr)) => {
                    let node = &nodes[o.node];
                    let c = if data.cols[node.feature as usize][r] <= node.threshold { l } else { rr };
                    let wi = weight[r] as f64;
                    let ch = &mut next[c as usize];
                    ch.w += wi;
                    ch.sy += wi * target[r];
                    ch.syy += wi * target[r] * target[r];
                    slot[r] = c;
                }
                None => {
                    leaf_of[r] = o.node as u32;
                    slot[r] = NONE;
                }
            }
        }
        open = next;
        depth += 1;
    }

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
    for (r, &leaf) in leaf_of.iter().enumerate() {
        if leaf != NONE {
            rows[leaf as usize].push(r as u32);
        }
    }
    (Tree { nodes }, rows)
}
