//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value. Node ids are
//! assigned in recording order, so the tape is already topologically sorted
//! and [`Tape::backward`] walks it once in reverse.

use super::tensor::{dot, matmul_at_acc, matmul_bt_acc, matmul_into, Tensor};
use crate::error::{contract, Error, Result};

/// Index of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand is one row, repeated over every row of the left operand.
    Row,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId, Bcast),
    Sub(NodeId, NodeId, Bcast),
    Mul(NodeId, NodeId, Bcast),
    Div(NodeId, NodeId, Bcast),
    Scale(NodeId, f64),
    Offset(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Conv3x3(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LayerNorm(NodeId),
    MeanGroups(NodeId, usize),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Conv3x3(..) => "conv3x3",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::MeanGroups(..) => "mean_pool",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Per-op cache for backward (layer-norm inverse standard deviations).
    aux: Vec<f64>,
}

/// Gradients of a scalar root with respect to every node recorded before it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Recording tape. Single-threaded; build one per concurrent computation.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
    first_bad: Option<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Finite-value checking follows `debug_assertions`.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: Vec::new(),
            check_finite,
            first_bad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// First node (if any) whose forward value contained NaN or infinity.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.first_bad.map(NodeId)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.push_aux(op, value, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Tensor, aux: Vec<f64>) -> NodeId {
        let id = self.nodes.len();
        if self.check_finite && self.first_bad.is_none() && !value.all_finite() {
            self.first_bad = Some(id);
        }
        self.nodes.push(Node { op, value, aux });
        NodeId(id)
    }

    /// Records an input, parameter or constant.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn bcast(&self, a: NodeId, b: NodeId, what: &str) -> Bcast {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Bcast::Same
        } else if bv.len() == 1 {
            Bcast::Scalar
        } else if bv.len() == av.cols() && bv.cols() == av.cols() {
            Bcast::Row
        } else {
            panic!(
                "{what}: incompatible shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )
        }
    }

    fn binary(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(f64, f64) -> f64) -> (Tensor, Bcast) {
        let mode = self.bcast(a, b, what);
        let av = self.value(a);
        let bv = self.value(b).data();
        let cols = av.cols();
        let mut out = av.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let rhs = match mode {
                Bcast::Same => bv[i],
                Bcast::Row => bv[i % cols],
                Bcast::Scalar => bv[0],
            };
            *o = f(*o, rhs);
        }
        (out, mode)
    }

    /// Elementwise sum; `b` may also be a single row or a scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (v, m) = self.binary(a, b, "add", |x, y| x + y);
        self.push(Op::Add(a, b, m), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (v, m) = self.binary(a, b, "sub", |x, y| x - y);
        self.push(Op::Sub(a, b, m), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (v, m) = self.binary(a, b, "mul", |x, y| x * y);
        self.push(Op::Mul(a, b, m), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (v, m) = self.binary(a, b, "div", |x, y| x / y);
        self.push(Op::Div(a, b, m), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, k), v)
    }

    pub fn offset(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::Offset(a), v)
    }

    /// `[m,k] · [k,n]`, both operands viewed as matrices.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let n = bv.cols();
        assert_eq!(bv.rows(), k, "matmul: inner dimensions {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let v = Tensor::new(vec![m, n], out).expect("matmul shape");
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        let v = Tensor::new(vec![c, r], out).expect("transpose shape");
        self.push(Op::Transpose(a), v)
    }

    /// 3×3 convolution, stride 1, zero padding 1, over a batch of 3×3 grids.
    ///
    /// `x` is `[N,3,3,Cin]`, `w` is `[3,3,Cin,Cout]`; the result is `[N,3,3,Cout]`.
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(wv.shape().len(), 4, "conv3x3: kernel must be [3,3,Cin,Cout]");
        assert_eq!(&wv.shape()[..2], &[3, 3], "conv3x3: kernel must be 3x3");
        let (cin, cout) = (wv.shape()[2], wv.shape()[3]);
        assert_eq!(xv.cols(), cin, "conv3x3: channel mismatch");
        assert_eq!(xv.rows() % 9, 0, "conv3x3: input must be a batch of 3x3 grids");
        let n = xv.rows() / 9;
        let mut out = vec![0.0; n * 9 * cout];
        let (xd, wd) = (xv.data(), wv.data());
        for s in 0..n {
            for (pos, orow) in out[s * 9 * cout..(s + 1) * 9 * cout].chunks_mut(cout).enumerate() {
                for (tap, src) in taps(pos) {
                    let xrow = &xd[(s * 9 + src) * cin..(s * 9 + src + 1) * cin];
                    let wtap = &wd[tap * cin * cout..(tap + 1) * cin * cout];
                    for (ci, &xvv) in xrow.iter().enumerate() {
                        let wrow = &wtap[ci * cout..(ci + 1) * cout];
                        for (o, &wvv) in orow.iter_mut().zip(wrow) {
                            *o += xvv * wvv;
                        }
                    }
                }
            }
        }
        let v = Tensor::new(vec![n, 3, 3, cout], out).expect("conv shape");
        self.push(Op::Conv3x3(x, w), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| {
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        self.push(Op::Gelu(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let cols = v.cols();
        for row in v.data_mut().chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(Op::Softmax(a), v)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let cols = v.cols();
        let mut inv_std = Vec::with_capacity(v.rows());
        for row in v.data_mut().chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push_aux(Op::LayerNorm(a), v, inv_std)
    }

    /// Averages consecutive groups of `group` rows: `[R,C] -> [R/group, C]`.
    pub fn mean_pool(&mut self, a: NodeId, group: usize) -> NodeId {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert!(group > 0 && rows % group == 0, "mean_pool: {rows} rows not divisible by {group}");
        let out_rows = rows / group;
        let mut out = vec![0.0; out_rows * cols];
        for (r, src) in av.data().chunks(cols).enumerate() {
            let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let v = Tensor::new(vec![out_rows, cols], out).expect("pool shape");
        self.push(Op::MeanGroups(a, group), v)
    }

    /// Mean over all rows, giving a single row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let rows = self.value(a).rows();
        self.mean_pool(a, rows)
    }

    /// Concatenation along the last dimension; every part has the same row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat: no inputs");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            assert_eq!(self.value(p).rows(), rows, "concat: row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::new(vec![rows, total], out).expect("concat shape");
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let av = self.value(a);
        assert!(start < end && end <= av.cols(), "slice: bad range {start}..{end}");
        let mut out = Vec::with_capacity(av.rows() * (end - start));
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row_slice(r)[start..end]);
        }
        let v = Tensor::new(vec![av.rows(), end - start], out).expect("slice shape");
        self.push(Op::Slice(a, start, end), v)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self
            .value(a)
            .clone()
            .reshaped(shape.to_vec())
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        self.push(Op::Reshape(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Gradient of the scalar `root` with respect to every earlier node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if let Some(bad) = self.first_bad.filter(|&b| b <= root.0) {
            return Err(Error::NumericFailure {
                node: bad,
                op: self.nodes[bad].op.name(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        let mut seed = self.value(root).clone();
        seed.data_mut()[0] = 1.0;
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.check_finite && !g.all_finite() {
                return Err(Error::NumericFailure {
                    node: id,
                    op: self.nodes[id].op.name(),
                });
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> &'g mut [f64] {
        grads[id.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()))
            .data_mut()
    }

    fn reduce_into(&self, grads: &mut [Option<Tensor>], id: NodeId, mode: Bcast, contrib: impl Fn(usize) -> f64, n: usize) {
        let cols = self.value(id).len();
        let dst = self.slot(grads, id);
        match mode {
            Bcast::Same => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += contrib(i);
                }
            }
            Bcast::Row => {
                for i in 0..n {
                    dst[i % cols] += contrib(i);
                }
            }
            Bcast::Scalar => {
                dst[0] += (0..n).map(contrib).sum::<f64>();
            }
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        let n = gd.len();
        let bval = |b: NodeId, mode: Bcast, i: usize, cols: usize| -> f64 {
            let d = self.value(b).data();
            match mode {
                Bcast::Same => d[i],
                Bcast::Row => d[i % cols],
                Bcast::Scalar => d[0],
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b, m) => {
                for (d, x) in self.slot(grads, a).iter_mut().zip(gd) {
                    *d += x;
                }
                self.reduce_into(grads, b, m, |i| gd[i], n);
            }
            &Op::Sub(a, b, m) => {
                for (d, x) in self.slot(grads, a).iter_mut().zip(gd) {
                    *d += x;
                }
                self.reduce_into(grads, b, m, |i| -gd[i], n);
            }
            &Op::Mul(a, b, m) => {
                let cols = self.value(a).cols();
                let ad = self.value(a).data();
                let da: Vec<f64> = (0..n).map(|i| gd[i] * bval(b, m, i, cols)).collect();
                self.reduce_into(grads, b, m, |i| gd[i] * ad[i], n);
                for (d, x) in self.slot(grads, a).iter_mut().zip(da) {
                    *d += x;
                }
            }
            &Op::Div(a, b, m) => {
                let cols = self.value(a).cols();
                let ad = self.value(a).data();
                let da: Vec<f64> = (0..n).map(|i| gd[i] / bval(b, m, i, cols)).collect();
                self.reduce_into(
                    grads,
                    b,
                    m,
                    |i| {
                        let bv = bval(b, m, i, cols);
                        -gd[i] * ad[i] / (bv * bv)
                    },
                    n,
                );
                for (d, x) in self.slot(grads, a).iter_mut().zip(da) {
                    *d += x;
                }
            }
            &Op::Scale(a, k) => {
                for (d, x) in self.slot(grads, a).iter_mut().zip(gd) {
                    *d += k * x;
                }
            }
            &Op::Offset(a) | &Op::Reshape(a) => {
                for (d, x) in self.slot(grads, a).iter_mut().zip(gd) {
                    *d += x;
                }
            }
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, nn) = (av.rows(), av.cols(), bv.cols());
                matmul_bt_acc(gd, bv.data(), self.slot(grads, a), m, k, nn);
                matmul_at_acc(av.data(), gd, self.slot(grads, b), m, k, nn);
            }
            &Op::Transpose(a) => {
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                let dst = self.slot(grads, a);
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] += gd[j * r + i];
                    }
                }
            }
            &Op::Conv3x3(x, w) => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (cin, cout) = (wv.shape()[2], wv.shape()[3]);
                let ns = xv.rows() / 9;
                let (xd, wd) = (xv.data(), wv.data());
                {
                    let dx = self.slot(grads, x);
                    for s in 0..ns {
                        for pos in 0..9 {
                            let grow = &gd[(s * 9 + pos) * cout..(s * 9 + pos + 1) * cout];
                            for (tap, src) in taps(pos) {
                                let wtap = &wd[tap * cin * cout..(tap + 1) * cin * cout];
                                let drow = &mut dx[(s * 9 + src) * cin..(s * 9 + src + 1) * cin];
                                for (ci, d) in drow.iter_mut().enumerate() {
                                    *d += dot(&wtap[ci * cout..(ci + 1) * cout], grow);
                                }
                            }
                        }
                    }
                }
                let dw = self.slot(grads, w);
                for s in 0..ns {
                    for pos in 0..9 {
                        let grow = &gd[(s * 9 + pos) * cout..(s * 9 + pos + 1) * cout];
                        for (tap, src) in taps(pos) {
                            let xrow = &xd[(s * 9 + src) * cin..(s * 9 + src + 1) * cin];
                            let dtap = &mut dw[tap * cin * cout..(tap + 1) * cin * cout];
                            for (ci, &xvv) in xrow.iter().enumerate() {
                                for (d, &gv) in dtap[ci * cout..(ci + 1) * cout].iter_mut().zip(grow) {
                                    *d += xvv * gv;
                                }
                            }
                        }
                    }
                }
            }
            &Op::Relu(a) => {
                let ad = self.value(a).data();
                for ((d, x), gv) in self.slot(grads, a).iter_mut().zip(ad).zip(gd) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }
            &Op::Gelu(a) => {
                let ad = self.value(a).data();
                for ((d, &x), gv) in self.slot(grads, a).iter_mut().zip(ad).zip(gd) {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *d += gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                }
            }
            &Op::Softplus(a) => {
                let ad = self.value(a).data();
                for ((d, &x), gv) in self.slot(grads, a).iter_mut().zip(ad).zip(gd) {
                    *d += gv * sigmoid(x);
                }
            }
            &Op::Exp(a) => {
                let yd = node.value.data();
                for ((d, y), gv) in self.slot(grads, a).iter_mut().zip(yd).zip(gd) {
                    *d += gv * y;
                }
            }
            &Op::Log(a) => {
                let ad = self.value(a).data();
                for ((d, x), gv) in self.slot(grads, a).iter_mut().zip(ad).zip(gd) {
                    *d += gv / x;
                }
            }
            &Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let dst = self.slot(grads, a);
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let inner = dot(yr, gr);
                    for j in 0..cols {
                        dst[r * cols + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            &Op::LayerNorm(a) => {
                let y = &node.value;
                let cols = y.cols();
                let inv = cols as f64;
                let dst = self.slot(grads, a);
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let mean_g = gr.iter().sum::<f64>() / inv;
                    let mean_gy = dot(gr, yr) / inv;
                    let is = node.aux[r];
                    for j in 0..cols {
                        dst[r * cols + j] += is * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
            &Op::MeanGroups(a, group) => {
                let cols = g.cols();
                let k = 1.0 / group as f64;
                let dst = self.slot(grads, a);
                for (r, drow) in dst.chunks_mut(cols).enumerate() {
                    let grow = &gd[(r / group) * cols..(r / group + 1) * cols];
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += k * gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let dst = self.slot(grads, p);
                    for (r, drow) in dst.chunks_mut(w).enumerate() {
                        let grow = &gd[r * total + offset..r * total + offset + w];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                    offset += w;
                }
            }
            &Op::Slice(a, start, end) => {
                let cols = self.value(a).cols();
                let w = end - start;
                let dst = self.slot(grads, a);
                for (r, grow) in gd.chunks(w).enumerate() {
                    for (d, gv) in dst[r * cols + start..r * cols + end].iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
            }
            &Op::Sum(a) => {
                let s = gd[0];
                self.slot(grads, a).iter_mut().for_each(|d| *d += s);
            }
            &Op::Mean(a) => {
                let s = gd[0] / self.value(a).len() as f64;
                self.slot(grads, a).iter_mut().for_each(|d| *d += s);
            }
        }
    }
}

/// Valid `(kernel tap, source position)` pairs for an output position of a
/// padded 3×3 convolution on a 3×3 grid.
fn taps(pos: usize) -> impl Iterator<Item = (usize, usize)> {
    let (r, c) = ((pos / 3) as isize, (pos % 3) as isize);
    (0..9usize).filter_map(move |tap| {
        let sr = r + (tap / 3) as isize - 1;
        let sc = c + (tap % 3) as isize - 1;
        ((0..3).contains(&sr) && (0..3).contains(&sc)).then(|| (tap, (sr * 3 + sc) as usize))
    })
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
