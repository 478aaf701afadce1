//! Reverse-mode differentiation over a recorded operation tape.
//!
//! The tape is rebuilt per utterance: forward calls append nodes eagerly,
//! `backward` walks them in reverse and scatters parameter gradients into
//! the ParamStore. Evaluation is a pure function of (params, input); all
//! mutation is confined to the tape itself.

use crate::ctc;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{log_sum_exp, Tensor};

pub type NodeId = usize;

/// Clamp applied inside binary cross-entropy so saturated probabilities
/// cannot produce infinite loss.
pub const BCE_CLAMP: f64 = 1e-12;

enum Op {
    Input,
    Param(String),
    MatMul(NodeId, NodeId),
    /// Broadcast row-vector add: lhs T×D plus rhs 1×D.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    MeanRows(NodeId),
    LogSoftmax(NodeId),
    /// Saved exact CTC gradient with respect to the input lattice.
    CtcLoss { input: NodeId, grad: Tensor },
    /// Binary cross-entropy on a scalar probability, target in {0,1}.
    Bce { prob: NodeId, target: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite tensor produced on tape");
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Bring a named parameter onto the tape; its gradient is scattered
    /// back to the store during `backward`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.value(name)?.clone();
        Ok(self.push(Op::Param(name.to_string()), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// lhs T×D plus a 1×D bias broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[bias].value);
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim("add_bias", &av.shape(), &bv.shape()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(Error::dim("add", &av.shape(), &bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(Error::dim("mul", &av.shape(), &bv.shape()));
        }
        let mut out = av.clone();
        for (o, &b) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= b;
        }
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        if r >= av.rows() {
            return Err(Error::InvalidInput(format!(
                "row {r} out of range for {:?}",
                av.shape()
            )));
        }
        let v = Tensor::row_vec(av.row(r).to_vec());
        Ok(self.push(Op::Row(a, r), v))
    }

    /// Stack 1×D nodes into a T×D tensor.
    pub fn stack_rows(&mut self, rows: Vec<NodeId>) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("stack_rows of empty sequence".into()));
        }
        let cols = self.nodes[rows[0]].value.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &id in &rows {
            let v = &self.nodes[id].value;
            if v.rows() != 1 || v.cols() != cols {
                return Err(Error::dim("stack_rows", &[1, cols], &v.shape()));
            }
            data.extend_from_slice(v.row(0));
        }
        let t = Tensor::from_vec(rows.len(), cols, data)?;
        Ok(self.push(Op::StackRows(rows), t))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", &av.shape(), &bv.shape()));
        }
        let mut out = Tensor::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(Op::ConcatCols(a, b), out))
    }

    /// Temporal average pool: T×D down to 1×D.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        if av.rows() == 0 {
            return Err(Error::InvalidInput("mean over empty sequence".into()));
        }
        let mut acc = vec![0.0; av.cols()];
        for r in 0..av.rows() {
            for (o, &x) in acc.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / av.rows() as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(Op::MeanRows(a), Tensor::row_vec(acc)))
    }

    /// Row-wise log-softmax with max-shift for stability.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        if av.cols() < 1 {
            return Err(Error::InvalidInput("log_softmax over zero classes".into()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let z = log_sum_exp(out.row(r));
            for v in out.row_mut(r) {
                *v -= z;
            }
        }
        Ok(self.push(Op::LogSoftmax(a), out))
    }

    /// CTC loss over a log-probability lattice node; the exact lattice
    /// gradient is computed now and replayed during backward.
    pub fn ctc_loss(&mut self, log_probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let res = ctc::ctc_forward_backward(&self.nodes[log_probs].value, labels)?;
        let value = Tensor::row_vec(vec![res.neg_log_likelihood]);
        Ok(self.push(
            Op::CtcLoss {
                input: log_probs,
                grad: res.grad_log_probs,
            },
            value,
        ))
    }

    /// Binary cross-entropy on a 1×1 probability node.
    pub fn bce(&mut self, prob: NodeId, target: f64) -> Result<NodeId> {
        let pv = &self.nodes[prob].value;
        if pv.shape() != [1, 1] {
            return Err(Error::dim("bce", &[1, 1], &pv.shape()));
        }
        let p = pv.at(0, 0).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
        Ok(self.push(Op::Bce { prob, target }, Tensor::row_vec(vec![loss])))
    }

    /// Propagate d(loss)/d(node) from a scalar loss node back to every
    /// parameter, accumulating into the store's gradient buffers.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if loss >= self.nodes.len() {
            return Err(Error::Contract(
                "backward target is not a node on this tape".into(),
            ));
        }
        if self.nodes[loss].value.shape() != [1, 1] {
            return Err(Error::Contract("backward target must be scalar".into()));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::row_vec(vec![1.0]));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                None => continue,
                // A bitwise-zero upstream contributes nothing; skipping it
                // keeps untouched gradients exactly zero.
                Some(g) if g.is_all_zero() => continue,
                Some(g) => g,
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(name) => {
                    let entry = store.get_mut(name)?;
                    if entry.grad.shape() != g.shape() {
                        return Err(Error::dim(
                            format!("gradient for `{name}`"),
                            &entry.grad.shape(),
                            &g.shape(),
                        ));
                    }
                    entry.grad.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_transpose_b(&self.nodes[*b].value)?;
                    let db = self.nodes[*a].value.matmul_transpose_a(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(a, bias) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let mut da = g.clone();
                    for (o, &x) in da.data_mut().iter_mut().zip(self.nodes[*b].value.data()) {
                        *o *= x;
                    }
                    let mut db = g;
                    for (o, &x) in db.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        *o *= x;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    if *c != 0.0 {
                        accumulate(&mut grads, *a, g.map(|x| c * x));
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = g;
                    for (o, &s) in da.data_mut().iter_mut().zip(y.data()) {
                        *o *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = g;
                    for (o, &t) in da.data_mut().iter_mut().zip(y.data()) {
                        *o *= 1.0 - t * t;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Row(a, r) => {
                    let av = &self.nodes[*a].value;
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    da.row_mut(*r).copy_from_slice(g.row(0));
                    accumulate(&mut grads, *a, da);
                }
                Op::StackRows(rows) => {
                    for (r, &src) in rows.iter().enumerate() {
                        accumulate(&mut grads, src, Tensor::row_vec(g.row(r).to_vec()));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.nodes[*a].value.cols();
                    let mut da = Tensor::zeros(g.rows(), ac);
                    let mut db = Tensor::zeros(g.rows(), g.cols() - ac);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MeanRows(a) => {
                    let av = &self.nodes[*a].value;
                    let inv = 1.0 / av.rows() as f64;
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for (o, &x) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = x * inv;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = g.clone();
                    for r in 0..g.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (o, &ly) in da.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o -= ly.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::CtcLoss { input, grad } => {
                    let scale = g.at(0, 0);
                    let mut da = grad.clone();
                    for v in da.data_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::Bce { prob, target } => {
                    let p = self.nodes[*prob].value.at(0, 0).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let d = -(target / p) + (1.0 - target) / (1.0 - p);
                    accumulate(&mut grads, *prob, Tensor::row_vec(vec![g.at(0, 0) * d]));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Logistic function, clamped to the open interval (0, 1): saturation
/// would otherwise round to exactly 0.0 or 1.0 in f64.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t);
        s
    }

    use crate::testutil::finite_diff_check;

    #[test]
    fn sum_of_param_gives_ones() {
        let mut store = store_with("w", Tensor::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        // sum via matmul with ones on both sides
        let ones_r = tape.input(Tensor::row_vec(vec![1.0, 1.0]));
        let ones_c = tape.input(Tensor::from_vec(2, 1, vec![1.0, 1.0]).unwrap());
        let rw = tape.matmul(ones_r, w).unwrap();
        let s = tape.matmul(rw, ones_c).unwrap();
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_scaled_loss_leaves_grads_untouched() {
        let mut store = store_with("w", Tensor::row_vec(vec![2.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.tanh(w);
        let z = tape.scale(y, 0.0);
        tape.backward(z, &mut store).unwrap();
        assert!(store.grad("w").unwrap().is_all_zero());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = store_with("w", Tensor::row_vec(vec![3.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.scale(w, 2.0);
        tape.backward(y, &mut store).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut store = store_with("w", Tensor::zeros(2, 2));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        assert!(matches!(
            tape.backward(w, &mut store).unwrap_err(),
            Error::Contract(_)
        ));
        assert!(matches!(
            tape.backward(99, &mut store).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn log_softmax_rows_normalize_and_shift_invariant() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(2, 2, vec![0.0, 0.0, 1000.0, 0.0]).unwrap());
        let y = tape.log_softmax(a).unwrap();
        let v = tape.value(y);
        assert!((v.at(0, 0) - 0.5f64.ln()).abs() < 1e-12);
        assert!((v.at(0, 1) - 0.5f64.ln()).abs() < 1e-12);
        assert!(v.at(1, 0).abs() < 1e-12 && v.at(1, 1) + 1000.0 < 1e-9);
        for r in 0..2 {
            let s: f64 = v.row(r).iter().map(|&x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // shift invariance
        let mut tape2 = Tape::new();
        let a2 = tape2.input(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let y2 = tape2.log_softmax(a2).unwrap();
        let mut tape3 = Tape::new();
        let a3 = tape3.input(Tensor::from_vec(1, 3, vec![8.5, 9.5, 10.5]).unwrap());
        let y3 = tape3.log_softmax(a3).unwrap();
        for k in 0..3 {
            assert!((tape2.value(y2).at(0, k) - tape3.value(y3).at(0, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_symmetry_and_saturation() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-3.0, -0.7, 0.2, 5.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        let s = sigmoid(100.0);
        assert!(s < 1.0 && (1.0 - s).abs() < 1e-12);
    }

    #[test]
    fn mean_rows_distributes_gradient_uniformly() {
        let mut store = store_with("w", Tensor::from_vec(4, 2, vec![1.; 8]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let m = tape.mean_rows(w).unwrap();
        let ones = tape.input(Tensor::from_vec(2, 1, vec![1.0, 1.0]).unwrap());
        let s = tape.matmul(m, ones).unwrap();
        tape.backward(s, &mut store).unwrap();
        for &g in store.grad("w").unwrap().data() {
            assert_eq!(g, 0.25);
        }
    }

    #[test]
    fn bce_hand_values() {
        let mut tape = Tape::new();
        let half = tape.input(Tensor::row_vec(vec![0.5]));
        for target in [0.0, 1.0] {
            let l = tape.bce(half, target).unwrap();
            assert!((tape.value(l).at(0, 0) - 2f64.ln()).abs() < 1e-12);
        }
        let p9 = tape.input(Tensor::row_vec(vec![0.9]));
        let l = tape.bce(p9, 0.0).unwrap();
        assert!((tape.value(l).at(0, 0) - 2.302585092994046).abs() < 1e-12);
        let sat = tape.input(Tensor::row_vec(vec![1.0 - 1e-15]));
        let l = tape.bce(sat, 1.0).unwrap();
        assert!(tape.value(l).at(0, 0).abs() < 1e-10);
    }

    #[test]
    fn composed_graph_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.insert("w1", Tensor::zeros(3, 4));
        store.insert("b1", Tensor::zeros(1, 4));
        store.insert("w2", Tensor::zeros(4, 3));
        store.insert("b2", Tensor::zeros(1, 3));
        store.init_uniform(&mut rng, -0.5, 0.5);
        let x = Tensor::from_vec(4, 3, (0..12).map(|i| (i as f64) * 0.1 - 0.5).collect()).unwrap();
        let labels = vec![1usize, 2];

        let run = |store: &ParamStore| -> (Tape, NodeId) {
            let mut tape = Tape::new();
            let xin = tape.input(x.clone());
            let w1 = tape.param(store, "w1").unwrap();
            let b1 = tape.param(store, "b1").unwrap();
            let w2 = tape.param(store, "w2").unwrap();
            let b2 = tape.param(store, "b2").unwrap();
            let h = tape.matmul(xin, w1).unwrap();
            let h = tape.add_bias(h, b1).unwrap();
            let h = tape.tanh(h);
            let o = tape.matmul(h, w2).unwrap();
            let o = tape.add_bias(o, b2).unwrap();
            let lp = tape.log_softmax(o).unwrap();
            let loss = tape.ctc_loss(lp, &labels).unwrap();
            (tape, loss)
        };

        store.zero_grads();
        let (tape, loss) = run(&store);
        tape.backward(loss, &mut store).unwrap();
        finite_diff_check(
            &mut store,
            |s| {
                let (t, l) = run(s);
                t.value(l).at(0, 0)
            },
            1e-4,
            1e-7,
        );
    }
}
