//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Graph`] records operations eagerly: every node holds its forward value
//! plus whatever the backward pass needs. LSTM recurrences are fused into
//! single nodes so a sentence produces a few hundred nodes, not thousands.
//! Everything is generic over [`Real`] so the same model code runs in 32-bit
//! for training and 64-bit for finite-difference checks.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{s, Array1, Array2, ArrayView1, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn lit<F: Real>(x: f64) -> F {
    F::from(x).expect("representable constant")
}

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Array2<F>) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = tensor;
            return ParamId(i);
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn map_all(&mut self, mut f: impl FnMut(&mut Array2<F>)) {
        self.tensors.iter_mut().for_each(&mut f);
    }

    /// Same tensors in another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|x| G::from(x).expect("finite parameter")))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.iter()
            .map(|(n, t)| {
                let sq: f64 = t.iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)).sum();
                (n.to_string(), sq.sqrt())
            })
            .collect()
    }
}

/// Gradient of a scalar with respect to every parameter.
///
/// Embedding tables accumulate sparse rows; everything else is dense.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    dense: Vec<Option<Array2<F>>>,
    rows: Vec<BTreeMap<usize, Array1<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros(param_count: usize) -> Self {
        Gradients {
            dense: vec![None; param_count],
            rows: vec![BTreeMap::new(); param_count],
        }
    }

    fn add_dense(&mut self, id: ParamId, g: Array2<F>) {
        match &mut self.dense[id.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn add_row(&mut self, id: ParamId, row: usize, g: ArrayView1<F>) {
        match self.rows[id.0].get_mut(&row) {
            Some(acc) => *acc += &g,
            None => {
                self.rows[id.0].insert(row, g.to_owned());
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for (i, d) in other.dense.iter().enumerate() {
            if let Some(d) = d {
                self.add_dense(ParamId(i), d.clone());
            }
        }
        for (i, rows) in other.rows.iter().enumerate() {
            for (&r, g) in rows {
                self.add_row(ParamId(i), r, g.view());
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for d in self.dense.iter_mut().flatten() {
            d.mapv_inplace(|x| x * s);
        }
        for rows in &mut self.rows {
            for g in rows.values_mut() {
                g.mapv_inplace(|x| x * s);
            }
        }
    }

    /// Materializes the full gradient of one parameter.
    pub fn dense(&self, id: ParamId, shape: (usize, usize)) -> Array2<F> {
        let mut out = match &self.dense[id.0] {
            Some(d) => d.clone(),
            None => Array2::zeros(shape),
        };
        for (&r, g) in &self.rows[id.0] {
            let mut row = out.row_mut(r);
            row += g;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().flatten().all(|d| d.iter().all(|x| x.is_finite()))
            && self.rows.iter().all(|r| r.values().all(|g| g.iter().all(|x| x.is_finite())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    Embed { table: ParamId, ids: Vec<usize> },
    Concat { a: NodeId, b: NodeId },
    RepeatRows { a: NodeId },
    MulConst { a: NodeId, mask: Array2<F> },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRow { a: NodeId, b: NodeId },
    Tanh { a: NodeId },
    Scale { a: NodeId, s: F },
    Softmax { a: NodeId },
    Reshape { a: NodeId },
    SliceCols { a: NodeId, start: usize },
    LstmSeq(Box<LstmSeqCache<F>>),
    LstmCell(Box<LstmCellCache<F>>),
    NllPick { a: NodeId, idx: usize },
    Sum { inputs: Vec<NodeId> },
}

#[derive(Debug)]
struct LstmWeights {
    w_ih: NodeId,
    w_hh: NodeId,
    b: NodeId,
}

#[derive(Debug)]
struct LstmSeqCache<F> {
    x: NodeId,
    weights: LstmWeights,
    reverse: bool,
    /// Activated gates `[i f g o]` per position, n x 4h.
    gates: Array2<F>,
    /// Cell states per position, n x h.
    cells: Array2<F>,
}

#[derive(Debug)]
struct LstmCellCache<F> {
    x: NodeId,
    h: NodeId,
    c: NodeId,
    weights: LstmWeights,
    gates: Array1<F>,
    cell: Array1<F>,
}

struct Node<'p, F: Real> {
    value: Cow<'p, Array2<F>>,
    op: Op<F>,
}

pub struct Graph<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<'p, F>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Applies the LSTM nonlinearities to pre-activations `z = [i f g o]`.
fn activate_gates<F: Real>(z: &mut [F]) {
    let h = z.len() / 4;
    for (k, v) in z.iter_mut().enumerate() {
        *v = if k / h == 2 { v.tanh() } else { sigmoid(*v) };
    }
}

type Accumulate<F> = fn(&mut [Option<Array2<F>>], NodeId, Array2<F>);

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).dim()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    /// Gathers rows of an embedding table.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> NodeId {
        let t = self.params.get(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols: row mismatch");
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("concat");
        self.push(out, Op::Concat { a, b })
    }

    /// Stacks a 1 x d row `n` times.
    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.nrows(), 1, "repeat_rows expects a row vector");
        let out = va.broadcast((n, va.ncols())).expect("broadcast").to_owned();
        self.push(out, Op::RepeatRows { a })
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Array2<F>) -> NodeId {
        let out = self.value(a) * &mask;
        self.push(out, Op::MulConst { a, mask })
    }

    /// `x W^T + b` with `x: n x in`, `W: out x in`, `b: 1 x out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let mut out = self.value(x).dot(&self.value(w).t());
        if let Some(b) = b {
            out += self.value(b);
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add { a, b })
    }

    /// Adds the 1 x d row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(b).nrows(), 1);
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow { a, b })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(F::tanh);
        self.push(out, Op::Tanh { a })
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let out = self.value(a) * s;
        self.push(out, Op::Scale { a, s })
    }

    /// Softmax over all elements of `a`, keeping its shape.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let max = va.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let mut out = va.mapv(|x| (x - max).exp());
        let total: F = out.iter().copied().sum();
        out.mapv_inplace(|x| x / total);
        self.push(out, Op::Softmax { a })
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = self.value(a);
        let flat: Vec<F> = va.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape size");
        self.push(out, Op::Reshape { a })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols { a, start })
    }

    /// Runs a unidirectional LSTM over the rows of `x` from zero state.
    ///
    /// Weights use the `[input, forget, cell, output]` gate layout:
    /// `w_ih: 4h x in`, `w_hh: 4h x h`, `b: 1 x 4h`. Returns `n x h`, with row
    /// `t` the state after reading position `t` (in reverse order when
    /// `reverse` is set).
    pub fn lstm_seq(&mut self, x: NodeId, w_ih: NodeId, w_hh: NodeId, b: NodeId, reverse: bool) -> NodeId {
        let vx = self.value(x);
        let (wi, wh, vb) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let n = vx.nrows();
        let hidden = wh.ncols();
        assert_eq!(wi.nrows(), 4 * hidden);
        assert_eq!(wi.ncols(), vx.ncols(), "lstm_seq: input width");
        let mut gates = (vx.dot(&wi.t()) + vb).as_standard_layout().into_owned();
        let mut cells = Array2::zeros((n, hidden));
        let mut out = Array2::zeros((n, hidden));
        let mut h_prev = Array1::<F>::zeros(hidden);
        let mut c_prev = Array1::<F>::zeros(hidden);
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let rec = wh.dot(&h_prev);
            let mut z = gates.row_mut(t);
            z += &rec;
            activate_gates(z.as_slice_mut().expect("contiguous row"));
            let z = gates.row(t);
            for k in 0..hidden {
                let (i, f, g, o) = (z[k], z[hidden + k], z[2 * hidden + k], z[3 * hidden + k]);
                let c = f * c_prev[k] + i * g;
                cells[[t, k]] = c;
                out[[t, k]] = o * c.tanh();
            }
            h_prev.assign(&out.row(t));
            c_prev.assign(&cells.row(t));
        }
        let cache = LstmSeqCache {
            x,
            weights: LstmWeights { w_ih, w_hh, b },
            reverse,
            gates,
            cells,
        };
        self.push(out, Op::LstmSeq(Box::new(cache)))
    }

    /// One LSTM step; returns the 1 x 2h row `[h_new, c_new]`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(&mut self, x: NodeId, h: NodeId, c: NodeId, w_ih: NodeId, w_hh: NodeId, b: NodeId) -> NodeId {
        let (vx, vh, vc) = (self.value(x), self.value(h), self.value(c));
        let (wi, wh, vb) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let hidden = wh.ncols();
        assert_eq!(wi.ncols(), vx.ncols(), "lstm_cell: input width");
        let z = vx.dot(&wi.t()) + vh.dot(&wh.t()) + vb;
        let mut gates: Array1<F> = z.row(0).to_owned();
        activate_gates(gates.as_slice_mut().expect("contiguous"));
        let mut cell = Array1::zeros(hidden);
        let mut out = Array2::zeros((1, 2 * hidden));
        for k in 0..hidden {
            let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
            let cn = f * vc[[0, k]] + i * g;
            cell[k] = cn;
            out[[0, k]] = o * cn.tanh();
            out[[0, hidden + k]] = cn;
        }
        let cache = LstmCellCache {
            x,
            h,
            c,
            weights: LstmWeights { w_ih, w_hh, b },
            gates,
            cell,
        };
        self.push(out, Op::LstmCell(Box::new(cache)))
    }

    /// `-ln(max(a[idx], floor))` as a 1 x 1 node; `idx` indexes `a` flattened.
    pub fn nll_pick(&mut self, a: NodeId, idx: usize) -> NodeId {
        let p = *self.value(a).iter().nth(idx).expect("nll_pick index in range");
        let v = -p.max(lit(PROB_FLOOR)).ln();
        self.push(Array2::from_elem((1, 1), v), Op::NllPick { a, idx })
    }

    /// Sum of all elements of all inputs, as a 1 x 1 node.
    pub fn sum(&mut self, inputs: &[NodeId]) -> NodeId {
        let total = inputs
            .iter()
            .fold(F::zero(), |acc, &i| acc + self.value(i).iter().copied().sum::<F>());
        self.push(Array2::from_elem((1, 1), total), Op::Sum { inputs: inputs.to_vec() })
    }

    /// Gradient of the 1 x 1 node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Gradients<F> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));
        let mut out = Gradients::zeros(self.params.len());

        fn acc<F: Real>(grads: &mut [Option<Array2<F>>], id: NodeId, g: Array2<F>) {
            match &mut grads[id.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => out.add_dense(*pid, dy),
                Op::Embed { table, ids } => {
                    for (r, &id) in ids.iter().enumerate() {
                        out.add_row(*table, id, dy.row(r));
                    }
                }
                Op::Concat { a, b } => {
                    let wa = self.value(*a).ncols();
                    acc(&mut grads, *a, dy.slice(s![.., ..wa]).to_owned());
                    acc(&mut grads, *b, dy.slice(s![.., wa..]).to_owned());
                }
                Op::RepeatRows { a } => {
                    acc(&mut grads, *a, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::MulConst { a, mask } => acc(&mut grads, *a, dy * mask),
                Op::Linear { x, w, b } => {
                    acc(&mut grads, *x, dy.dot(self.value(*w)));
                    acc(&mut grads, *w, dy.t().dot(self.value(*x)));
                    if let Some(b) = b {
                        acc(&mut grads, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::MatMul { a, b } => {
                    acc(&mut grads, *a, dy.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&dy));
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::AddRow { a, b } => {
                    acc(&mut grads, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, dy);
                }
                Op::Tanh { a } => {
                    let mut g = dy;
                    Zip::from(&mut g).and(&*node.value).for_each(|g, &y| *g *= F::one() - y * y);
                    acc(&mut grads, *a, g);
                }
                Op::Scale { a, s } => acc(&mut grads, *a, dy * *s),
                Op::Softmax { a } => {
                    let y = &*node.value;
                    let dot: F = y.iter().zip(dy.iter()).map(|(&y, &g)| y * g).sum();
                    let mut g = dy;
                    Zip::from(&mut g).and(y).for_each(|g, &y| *g = y * (*g - dot));
                    acc(&mut grads, *a, g);
                }
                Op::Reshape { a } => {
                    let shape = self.value(*a).dim();
                    let flat: Vec<F> = dy.iter().copied().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec(shape, flat).expect("reshape"));
                }
                Op::SliceCols { a, start } => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    g.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    acc(&mut grads, *a, g);
                }
                Op::LstmSeq(cache) => self.backward_lstm_seq(cache, &node.value, dy, &mut grads, acc),
                Op::LstmCell(cache) => self.backward_lstm_cell(cache, dy, &mut grads, acc),
                Op::NllPick { a, idx: pick } => {
                    let va = self.value(*a);
                    let mut g = Array2::zeros(va.dim());
                    let p = *va.iter().nth(*pick).expect("index");
                    if p > lit(PROB_FLOOR) {
                        let cols = va.ncols();
                        g[[pick / cols, pick % cols]] = -dy[[0, 0]] / p;
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sum { inputs } => {
                    let d = dy[[0, 0]];
                    for &i in inputs {
                        acc(&mut grads, i, Array2::from_elem(self.value(i).dim(), d));
                    }
                }
            }
        }
        out
    }

    fn backward_lstm_seq(
        &self,
        cache: &LstmSeqCache<F>,
        out: &Array2<F>,
        dy: Array2<F>,
        grads: &mut [Option<Array2<F>>],
        acc: Accumulate<F>,
    ) {
        let x = self.value(cache.x);
        let wi = self.value(cache.weights.w_ih);
        let wh = self.value(cache.weights.w_hh);
        let (n, hidden) = cache.cells.dim();
        let order: Vec<usize> = if cache.reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let mut dz = Array2::<F>::zeros((n, 4 * hidden));
        let mut h_prev_rows = Array2::<F>::zeros((n, hidden));
        for (step, &t) in order.iter().enumerate().skip(1) {
            h_prev_rows.row_mut(t).assign(&out.row(order[step - 1]));
        }
        let mut dh_next = Array1::<F>::zeros(hidden);
        let mut dc_next = Array1::<F>::zeros(hidden);
        for step in (0..n).rev() {
            let t = order[step];
            let g = cache.gates.row(t);
            for k in 0..hidden {
                let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
                let c = cache.cells[[t, k]];
                let c_prev = if step > 0 { cache.cells[[order[step - 1], k]] } else { F::zero() };
                let tc = c.tanh();
                let dh = dy[[t, k]] + dh_next[k];
                let dc = dh * o * (F::one() - tc * tc) + dc_next[k];
                dz[[t, k]] = dc * gg * i * (F::one() - i);
                dz[[t, hidden + k]] = dc * c_prev * f * (F::one() - f);
                dz[[t, 2 * hidden + k]] = dc * i * (F::one() - gg * gg);
                dz[[t, 3 * hidden + k]] = dh * tc * o * (F::one() - o);
                dc_next[k] = dc * f;
            }
            dh_next = dz.row(t).dot(wh);
        }
        acc(grads, cache.x, dz.dot(wi));
        acc(grads, cache.weights.w_ih, dz.t().dot(x));
        acc(grads, cache.weights.w_hh, dz.t().dot(&h_prev_rows));
        acc(grads, cache.weights.b, dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
    }

    fn backward_lstm_cell(
        &self,
        cache: &LstmCellCache<F>,
        dy: Array2<F>,
        grads: &mut [Option<Array2<F>>],
        acc: Accumulate<F>,
    ) {
        let hidden = cache.cell.len();
        let c_prev = self.value(cache.c);
        let g = &cache.gates;
        let mut dz = Array2::<F>::zeros((1, 4 * hidden));
        let mut dc_prev = Array2::<F>::zeros((1, hidden));
        for k in 0..hidden {
            let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
            let tc = cache.cell[k].tanh();
            let dh = dy[[0, k]];
            let dc = dh * o * (F::one() - tc * tc) + dy[[0, hidden + k]];
            dz[[0, k]] = dc * gg * i * (F::one() - i);
            dz[[0, hidden + k]] = dc * c_prev[[0, k]] * f * (F::one() - f);
            dz[[0, 2 * hidden + k]] = dc * i * (F::one() - gg * gg);
            dz[[0, 3 * hidden + k]] = dh * tc * o * (F::one() - o);
            dc_prev[[0, k]] = dc * f;
        }
        let wi = self.value(cache.weights.w_ih);
        let wh = self.value(cache.weights.w_hh);
        acc(grads, cache.x, dz.dot(wi));
        acc(grads, cache.h, dz.dot(wh));
        acc(grads, cache.c, dc_prev);
        acc(grads, cache.weights.w_ih, dz.t().dot(self.value(cache.x)));
        acc(grads, cache.weights.w_hh, dz.t().dot(self.value(cache.h)));
        acc(grads, cache.weights.b, dz);
    }
}
