//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] is a flat tape: every operation appends a node holding its
//! forward value, and [`Graph::backward`] walks the tape in reverse,
//! accumulating gradients for every node that (transitively) depends on a
//! gradient-requiring leaf. One graph is built per loss evaluation and
//! dropped afterwards; parameters live outside the graph and are attached
//! as leaves each time.
//!
//! The op set is exactly what a small transformer needs: matrix products,
//! broadcasts over rows, SiLU, layer normalization, masked row softmax,
//! row gating, slicing/concatenation, and a mean-squared-error readout.

use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};

/// Index of a node on the tape.
pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    /// `A · B`.
    MatMul(NodeId, NodeId),
    /// `Aᵀ`.
    Transpose(NodeId),
    /// Elementwise `A + B` (same shape).
    Add(NodeId, NodeId),
    /// Each row of `A` plus the single-row node `r`.
    AddRow(NodeId, NodeId),
    /// Each row of `A` times the single-row node `r`, elementwise.
    MulRow(NodeId, NodeId),
    /// Elementwise `A ⊙ B` (same shape).
    Mul(NodeId, NodeId),
    /// `k · A`.
    Scale(NodeId, f64),
    /// `A + k` elementwise.
    AddConst(NodeId),
    /// `x · σ(x)` elementwise.
    Silu(NodeId),
    /// Per-row standardization `(x − μ)/√(σ² + ε)`, no affine part.
    LayerNorm(NodeId),
    /// Per-row softmax; `false` mask entries are excluded from the
    /// distribution (weight exactly zero). The backward pass only needs
    /// the output probabilities, so the mask is not retained.
    SoftmaxRows(NodeId),
    /// Row `i` of `A` times the constant `gate[i]`.
    RowGate(NodeId, Rc<Array1<f64>>),
    /// Rows `start..` of `A` (length recoverable from the node value).
    SliceRows(NodeId, usize),
    /// Columns `start..` of `A`.
    SliceCols(NodeId, usize),
    /// Horizontal concatenation.
    ConcatCols(Vec<NodeId>),
    /// `mean((A − T)²)` over all elements, as a 1×1 node.
    MseAgainst(NodeId, Rc<Array2<f64>>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`. Zero-shaped
    /// gradients are materialized on demand for nodes the loss never
    /// touched.
    pub fn grad(&self, id: NodeId) -> Array2<f64> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[id].value.dim()),
        }
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // ---------------------------------------------------------------------
    // Forward ops
    // ---------------------------------------------------------------------

    /// Attach an input. `needs_grad` marks trainable parameters; constants
    /// (data, positional tables) should pass `false` so backward skips them.
    pub fn leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, needs_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.t().to_owned();
        let ng = self.needs(a);
        self.push(Op::Transpose(a), value, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a].value.dim(),
            self.nodes[b].value.dim(),
            "add shape mismatch"
        );
        let value = &self.nodes[a].value + &self.nodes[b].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = &self.nodes[row].value;
        assert_eq!(r.dim().0, 1, "add_row expects a single-row node");
        assert_eq!(self.nodes[a].value.dim().1, r.dim().1, "add_row width");
        let value = &self.nodes[a].value + &r.row(0);
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), value, ng)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = &self.nodes[row].value;
        assert_eq!(r.dim().0, 1, "mul_row expects a single-row node");
        assert_eq!(self.nodes[a].value.dim().1, r.dim().1, "mul_row width");
        let value = &self.nodes[a].value * &r.row(0);
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::MulRow(a, row), value, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a].value.dim(),
            self.nodes[b].value.dim(),
            "mul shape mismatch"
        );
        let value = &self.nodes[a].value * &self.nodes[b].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = &self.nodes[a].value * k;
        let ng = self.needs(a);
        self.push(Op::Scale(a, k), value, ng)
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = &self.nodes[a].value + k;
        let ng = self.needs(a);
        self.push(Op::AddConst(a), value, ng)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(Op::Silu(a), value, ng)
    }

    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let d = row.len() as f64;
            let mu = row.sum() / d;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mu) * inv);
        }
        let ng = self.needs(a);
        self.push(Op::LayerNorm(a), value, ng)
    }

    /// Masked per-row softmax. Every row must keep at least one admissible
    /// entry; model construction guarantees the diagonal is admissible.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<Rc<Array2<bool>>>) -> NodeId {
        let x = &self.nodes[a].value;
        if let Some(m) = &mask {
            assert_eq!(m.dim(), x.dim(), "softmax mask shape mismatch");
        }
        let (n, w) = x.dim();
        let mut value = Array2::<f64>::zeros((n, w));
        for i in 0..n {
            let admissible = |j: usize| mask.as_ref().is_none_or(|m| m[[i, j]]);
            // The emptiness guard is structural (mask-only), so non-finite
            // scores still flow through to the loss as NaN rather than
            // masquerading as a construction bug.
            let mut count = 0usize;
            let mut max = f64::NEG_INFINITY;
            for j in 0..w {
                if admissible(j) {
                    count += 1;
                    max = max.max(x[[i, j]]);
                }
            }
            assert!(count > 0, "softmax row {i} has no admissible entries");
            let mut denom = 0.0;
            for j in 0..w {
                if admissible(j) {
                    let e = (x[[i, j]] - max).exp();
                    value[[i, j]] = e;
                    denom += e;
                }
            }
            for j in 0..w {
                value[[i, j]] /= denom;
            }
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, ng)
    }

    /// Multiply row `i` by the constant `gate[i]` (not differentiated
    /// through the gate).
    pub fn row_gate(&mut self, a: NodeId, gate: Rc<Array1<f64>>) -> NodeId {
        let x = &self.nodes[a].value;
        assert_eq!(gate.len(), x.dim().0, "row_gate length mismatch");
        let mut value = x.clone();
        for (mut row, &g) in value.rows_mut().into_iter().zip(gate.iter()) {
            row.mapv_inplace(|v| v * g);
        }
        let ng = self.needs(a);
        self.push(Op::RowGate(a, gate), value, ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = &self.nodes[a].value;
        assert!(start + len <= x.dim().0, "slice_rows out of range");
        let value = x.slice(ndarray::s![start..start + len, ..]).to_owned();
        let ng = self.needs(a);
        self.push(Op::SliceRows(a, start), value, ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = &self.nodes[a].value;
        assert!(start + len <= x.dim().1, "slice_cols out of range");
        let value = x.slice(ndarray::s![.., start..start + len]).to_owned();
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), value, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.nodes[parts[0]].value.dim().0;
        let width: usize = parts.iter().map(|&p| self.nodes[p].value.dim().1).sum();
        let mut value = Array2::<f64>::zeros((rows, width));
        let mut at = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.dim().0, rows, "concat_cols row mismatch");
            value
                .slice_mut(ndarray::s![.., at..at + v.dim().1])
                .assign(v);
            at += v.dim().1;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, ng)
    }

    /// Scalar loss `mean((A − T)²)` as a 1×1 node.
    pub fn mse_against(&mut self, a: NodeId, target: Rc<Array2<f64>>) -> NodeId {
        let x = &self.nodes[a].value;
        assert_eq!(x.dim(), target.dim(), "mse target shape mismatch");
        let n = x.len() as f64;
        let loss = x
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        let value = Array2::from_elem((1, 1), loss);
        let ng = self.needs(a);
        self.push(Op::MseAgainst(a, target), value, ng)
    }

    // ---------------------------------------------------------------------
    // Backward
    // ---------------------------------------------------------------------

    fn accumulate(&mut self, id: NodeId, delta: Array2<f64>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Backpropagate from a 1×1 loss node. Gradients of earlier backward
    /// calls are cleared.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].value.dim(), (1, 1), "loss must be scalar");
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].clone() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.dot(&self.nodes[b].value.t());
                    let db = self.nodes[a].value.t().dot(&g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    self.accumulate(a, g.t().to_owned());
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(a, g);
                    self.accumulate(row, dr);
                }
                Op::MulRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let da = &g * &self.nodes[row].value.row(0);
                    let dr = (&g * &self.nodes[a].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    self.accumulate(a, da);
                    self.accumulate(row, dr);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = &g * &self.nodes[b].value;
                    let db = &g * &self.nodes[a].value;
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    self.accumulate(a, g * k);
                }
                Op::AddConst(a) => {
                    let a = *a;
                    self.accumulate(a, g);
                }
                Op::Silu(a) => {
                    let a = *a;
                    let da = ndarray::Zip::from(&g)
                        .and(&self.nodes[a].value)
                        .map_collect(|&gv, &x| {
                            let s = sigmoid(x);
                            gv * s * (1.0 + x * (1.0 - s))
                        });
                    self.accumulate(a, da);
                }
                Op::LayerNorm(a) => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let (n, w) = x.dim();
                    let d = w as f64;
                    let mut da = Array2::<f64>::zeros((n, w));
                    for i in 0..n {
                        let row = x.row(i);
                        let mu = row.sum() / d;
                        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mu) * inv).collect();
                        let g_row = g.row(i);
                        let sum_g: f64 = g_row.sum();
                        let sum_gx: f64 =
                            g_row.iter().zip(&xhat).map(|(gv, xh)| gv * xh).sum();
                        for j in 0..w {
                            da[[i, j]] =
                                inv / d * (d * g_row[j] - sum_g - xhat[j] * sum_gx);
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let y = &self.nodes[id].value;
                    let (n, w) = y.dim();
                    let mut da = Array2::<f64>::zeros((n, w));
                    for i in 0..n {
                        let dot: f64 =
                            (0..w).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..w {
                            da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::RowGate(a, gate) => {
                    let a = *a;
                    let gate = Rc::clone(gate);
                    let mut da = g.clone();
                    for (mut row, &gv) in da.rows_mut().into_iter().zip(gate.iter()) {
                        row.mapv_inplace(|v| v * gv);
                    }
                    self.accumulate(a, da);
                }
                Op::SliceRows(a, start) => {
                    let (a, start) = (*a, *start);
                    let mut da = Array2::<f64>::zeros(self.nodes[a].value.dim());
                    da.slice_mut(ndarray::s![start..start + g.dim().0, ..])
                        .assign(&g);
                    self.accumulate(a, da);
                }
                Op::SliceCols(a, start) => {
                    let (a, start) = (*a, *start);
                    let mut da = Array2::<f64>::zeros(self.nodes[a].value.dim());
                    da.slice_mut(ndarray::s![.., start..start + g.dim().1])
                        .assign(&g);
                    self.accumulate(a, da);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[p].value.dim().1;
                        let dp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        at += w;
                        self.accumulate(p, dp);
                    }
                }
                Op::MseAgainst(a, target) => {
                    let a = *a;
                    let target = Rc::clone(target);
                    let x = &self.nodes[a].value;
                    let n = x.len() as f64;
                    let scale = g[[0, 0]] * 2.0 / n;
                    let da = ndarray::Zip::from(x)
                        .and(&*target)
                        .map_collect(|&xv, &tv| scale * (xv - tv));
                    self.accumulate(a, da);
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
    }

    /// Generic finite-difference check: `build` wires leaves (all
    /// gradient-requiring) into a scalar loss; every input element is
    /// perturbed centrally and compared against the analytic gradient.
    fn check_grads(
        inputs: &[Array2<f64>],
        build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|x| g.leaf(x.clone(), true))
            .collect();
        let loss = build(&mut g, &ids);
        assert_eq!(g.value(loss).dim(), (1, 1));
        g.backward(loss);
        let analytic: Vec<Array2<f64>> = ids.iter().map(|&id| g.grad(id)).collect();

        let h = 1e-5;
        let eval = |inputs: &[Array2<f64>]| -> f64 {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = inputs
                .iter()
                .map(|x| g.leaf(x.clone(), false))
                .collect();
            let loss = build(&mut g, &ids);
            g.value(loss)[[0, 0]]
        };

        for (i, input) in inputs.iter().enumerate() {
            let (rows, cols) = input.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = inputs.to_vec();
                    plus[i][[r, c]] += h;
                    let mut minus = inputs.to_vec();
                    minus[i][[r, c]] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let an = analytic[i][[r, c]];
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / denom < tol,
                        "input {i} [{r},{c}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    fn loss_of(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
        let dim = g.value(out).dim();
        let target = Rc::new(randn(dim.0, dim.1, seed));
        g.mse_against(out, target)
    }

    #[test]
    fn matmul_forward_matches_hand_computation() {
        let mut g = Graph::new();
        let a = g.leaf(ndarray::array![[1.0, 2.0], [3.0, 4.0]], false);
        let b = g.leaf(ndarray::array![[5.0, 6.0], [7.0, 8.0]], false);
        let c = g.matmul(a, b);
        assert_eq!(
            g.value(c),
            &ndarray::array![[19.0, 22.0], [43.0, 50.0]]
        );
    }

    #[test]
    fn matmul_chain_gradients() {
        check_grads(
            &[randn(3, 4, 1), randn(4, 5, 2), randn(5, 2, 3)],
            &|g, ids| {
                let ab = g.matmul(ids[0], ids[1]);
                let abc = g.matmul(ab, ids[2]);
                loss_of(g, abc, 99)
            },
            1e-5,
        );
    }

    #[test]
    fn transpose_gradients() {
        check_grads(
            &[randn(3, 4, 4), randn(3, 5, 5)],
            &|g, ids| {
                let at = g.transpose(ids[0]);
                let prod = g.matmul(at, ids[1]);
                loss_of(g, prod, 98)
            },
            1e-5,
        );
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        check_grads(
            &[randn(3, 4, 6), randn(3, 4, 7), randn(1, 4, 8), randn(1, 4, 9)],
            &|g, ids| {
                let prod = g.mul(ids[0], ids[1]);
                let scaled = g.mul_row(prod, ids[2]);
                let shifted = g.add_row(scaled, ids[3]);
                let bumped = g.add_const(shifted, 0.5);
                let halved = g.scale(bumped, -1.7);
                loss_of(g, halved, 97)
            },
            1e-5,
        );
    }

    #[test]
    fn add_gradients_flow_to_both_sides() {
        check_grads(
            &[randn(2, 3, 10), randn(2, 3, 11)],
            &|g, ids| {
                let s = g.add(ids[0], ids[1]);
                loss_of(g, s, 96)
            },
            1e-5,
        );
    }

    #[test]
    fn silu_gradients() {
        check_grads(
            &[randn(3, 5, 12)],
            &|g, ids| {
                let y = g.silu(ids[0]);
                loss_of(g, y, 95)
            },
            1e-5,
        );
    }

    #[test]
    fn layer_norm_forward_standardizes_rows() {
        let mut g = Graph::new();
        let x = g.leaf(randn(4, 16, 13), false);
        let y = g.layer_norm(x);
        for row in g.value(y).rows() {
            let mean = row.sum() / row.len() as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3); // eps shifts variance slightly
        }
    }

    #[test]
    fn layer_norm_gradients() {
        check_grads(
            &[randn(3, 6, 14)],
            &|g, ids| {
                let y = g.layer_norm(ids[0]);
                loss_of(g, y, 94)
            },
            1e-4,
        );
    }

    #[test]
    fn dense_softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.leaf(randn(5, 7, 15), false);
        let y = g.softmax_rows(x, None);
        for row in g.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn dense_softmax_gradients() {
        check_grads(
            &[randn(4, 6, 16)],
            &|g, ids| {
                let y = g.softmax_rows(ids[0], None);
                loss_of(g, y, 93)
            },
            1e-5,
        );
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut rng = rng_from(17);
        let mask = Rc::new(Array2::from_shape_fn((5, 5), |(i, j)| {
            i == j || rng.random_bool(0.5)
        }));
        let mut g = Graph::new();
        let x = g.leaf(randn(5, 5, 18), false);
        let y = g.softmax_rows(x, Some(Rc::clone(&mask)));
        let v = g.value(y);
        for i in 0..5 {
            let mut sum = 0.0;
            for j in 0..5 {
                if mask[[i, j]] {
                    sum += v[[i, j]];
                } else {
                    assert_eq!(v[[i, j]], 0.0);
                }
            }
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_gradients() {
        let mut rng = rng_from(19);
        let mask = Rc::new(Array2::from_shape_fn((4, 4), |(i, j)| {
            i == j || rng.random_bool(0.5)
        }));
        check_grads(
            &[randn(4, 4, 20)],
            &|g, ids| {
                let y = g.softmax_rows(ids[0], Some(Rc::clone(&mask)));
                loss_of(g, y, 92)
            },
            1e-5,
        );
    }

    #[test]
    fn row_gate_zeroes_rows_and_their_gradients() {
        let gate = Rc::new(ndarray::array![1.0, 0.0, 1.0]);
        let mut g = Graph::new();
        let x = g.leaf(randn(3, 4, 21), true);
        let y = g.row_gate(x, Rc::clone(&gate));
        assert!(g.value(y).row(1).iter().all(|&v| v == 0.0));
        let loss = loss_of(&mut g, y, 91);
        g.backward(loss);
        assert!(g.grad(x).row(1).iter().all(|&v| v == 0.0));

        check_grads(
            &[randn(3, 4, 21)],
            &|g, ids| {
                let y = g.row_gate(ids[0], Rc::clone(&gate));
                loss_of(g, y, 91)
            },
            1e-5,
        );
    }

    #[test]
    fn slicing_and_concat_gradients() {
        check_grads(
            &[randn(4, 8, 22)],
            &|g, ids| {
                let head0 = g.slice_cols(ids[0], 0, 4);
                let head1 = g.slice_cols(ids[0], 4, 4);
                let swapped = g.concat_cols(&[head1, head0]);
                let top = g.slice_rows(swapped, 1, 2);
                loss_of(g, top, 90)
            },
            1e-5,
        );
    }

    #[test]
    fn mse_matches_hand_computation() {
        let mut g = Graph::new();
        let a = g.leaf(ndarray::array![[1.0, 2.0], [3.0, 4.0]], false);
        let target = Rc::new(ndarray::array![[0.0, 0.0], [0.0, 0.0]]);
        let l = g.mse_against(a, target);
        assert_eq!(g.value(l)[[0, 0]], (1.0 + 4.0 + 9.0 + 16.0) / 4.0);
    }

    #[test]
    fn attention_shaped_composite_gradients() {
        // One masked single-head attention readout, end to end.
        let mut rng = rng_from(23);
        let n = 5;
        let mask = Rc::new(Array2::from_shape_fn((n, n), |(i, j)| {
            i == j || rng.random_bool(0.6)
        }));
        check_grads(
            &[randn(n, 4, 24), randn(4, 3, 25), randn(4, 3, 26), randn(4, 3, 27)],
            &|g, ids| {
                let q = g.matmul(ids[0], ids[1]);
                let k = g.matmul(ids[0], ids[2]);
                let v = g.matmul(ids[0], ids[3]);
                let kt = g.transpose(k);
                let scores = g.matmul(q, kt);
                let scaled = g.scale(scores, 1.0 / (3.0f64).sqrt());
                let probs = g.softmax_rows(scaled, Some(Rc::clone(&mask)));
                let out = g.matmul(probs, v);
                loss_of(g, out, 89)
            },
            1e-4,
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(randn(2, 2, 28), true);
        let c = g.leaf(randn(2, 2, 29), false);
        let s = g.add(p, c);
        let loss = loss_of(&mut g, s, 88);
        g.backward(loss);
        assert!(g.grad(c).iter().all(|&v| v == 0.0));
        assert!(g.grad(p).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_twice_does_not_double_count() {
        let mut g = Graph::new();
        let p = g.leaf(randn(2, 3, 30), true);
        let y = g.silu(p);
        let loss = loss_of(&mut g, y, 87);
        g.backward(loss);
        let first = g.grad(p);
        g.backward(loss);
        assert_eq!(g.grad(p), first);
    }
}
