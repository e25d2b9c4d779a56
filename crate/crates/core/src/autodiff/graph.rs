use std::cell::Cell;

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operations understood by the tape.
///
/// Shape rules, with `[r, c]` a matrix:
///
/// | primitive | inputs | output |
/// |---|---|---|
/// | `MatMul` | `[n,k]`, `[k,m]` | `[n,m]` |
/// | `Add`, `Mul` | equal shapes | same |
/// | `AddBias` | `[n,m]`, `[m]` | `[n,m]` |
/// | `Scale(c)` | any | same |
/// | `ConcatLast` | one or more, equal leading dims | last dims summed |
/// | `Sum`, `Mean` | any | scalar |
/// | `Relu`, `Sigmoid`, `Log` | any | same |
/// | `Softmax` | rank 1 or 2, over the last dim | same |
/// | `GatherRows(idx)` | `[n,d]` | `[idx.len(),d]` |
/// | `MixRows` | `[n,d]`, weights `[m,K]` | `[m,d]` |
/// | `NormalizeRows` | `[m,K]` | `[m,K]` |
/// | `SoftmaxCrossEntropy` | logits `[m,C]`, targets `[m,C]` | scalar |
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    AddBias,
    Scale(f64),
    Mul,
    ConcatLast,
    Sum,
    Relu,
    Sigmoid,
    Softmax,
    Log,
    Mean,
    /// Picks rows by index; repeated indices accumulate in the backward pass.
    GatherRows(Vec<usize>),
    /// Row `g` of the output is `sum_k w[g,k] * x[indices[g*K + k]]`.
    MixRows {
        indices: Vec<usize>,
        group_size: usize,
    },
    /// Each row divided by its sum plus `eps`.
    NormalizeRows { eps: f64 },
    /// Mean over rows of `-sum_c t[c] * log softmax(z)[c]`.
    SoftmaxCrossEntropy,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::AddBias => "add_bias",
            Primitive::Scale(_) => "scale",
            Primitive::Mul => "mul",
            Primitive::ConcatLast => "concat",
            Primitive::Sum => "sum",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::Log => "log",
            Primitive::Mean => "mean",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::MixRows { .. } => "mix_rows",
            Primitive::NormalizeRows { .. } => "normalize_rows",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

thread_local! {
    static FLIP_MATMUL_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Fault-injection hook: while enabled on the current thread, the backward
/// pass of `MatMul` returns the negated gradient for its left operand.
/// Exists so the verification suite can prove it detects a broken gradient.
pub fn set_fault_flip_matmul_grad(enabled: bool) {
    FLIP_MATMUL_GRAD.with(|f| f.set(enabled));
}

fn fault_enabled() -> bool {
    FLIP_MATMUL_GRAD.with(|f| f.get())
}

struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
    saved: Vec<f64>,
}

/// Append-only tape of tensor values and the primitives that produced them.
///
/// Node ids are assigned in creation order, so the node list is already a
/// topological order and [`Graph::backward`] is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, None, Vec::new(), requires_grad, Vec::new())
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    /// Number of recorded operations (leaves excluded).
    pub fn tape_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Concatenated activation masks (`input > 0`) of every relu node.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if node.op == Some(Primitive::Relu) {
                sig.extend(self.nodes[node.inputs[0].0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<Primitive>,
        inputs: Vec<Var>,
        requires_grad: bool,
        saved: Vec<f64>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `prim` on `inputs` and records it on the tape.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return shape_err(format!("{}: unknown node {}", prim.name(), v.0));
            }
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&prim, &vals)?;
        if let Some(pos) = value.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value at flat index {}",
                prim.name(),
                pos
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, Some(prim), inputs.to_vec(), requires_grad, saved))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.apply(Primitive::AddBias, &[x, bias])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[x])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatLast, parts)
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[x])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[x])
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[x])
    }
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::GatherRows(rows), &[x])
    }
    pub fn mix_rows(
        &mut self,
        x: Var,
        weights: Var,
        indices: Vec<usize>,
        group_size: usize,
    ) -> Result<Var> {
        self.apply(
            Primitive::MixRows {
                indices,
                group_size,
            },
            &[x, weights],
        )
    }
    pub fn normalize_rows(&mut self, w: Var, eps: f64) -> Result<Var> {
        self.apply(Primitive::NormalizeRows { eps }, &[w])
    }
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.apply(Primitive::SoftmaxCrossEntropy, &[logits, targets])
    }

    /// Reverse sweep from a one-element `root`; every node that requires a
    /// gradient ends up holding `d root / d node`. Earlier gradients are
    /// discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_val = &self.nodes[root.0].value;
        if root_val.numel() != 1 {
            return shape_err(format!(
                "backward needs a scalar root, got shape {:?}",
                root_val.shape()
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                if node.requires_grad {
                    let vals: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let wants: Vec<bool> = node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect();
                    let input_grads = backward_op(op, &vals, &node.value, &node.saved, &g, &wants);
                    let inputs = node.inputs.clone();
                    for ((inp, ig), want) in inputs.iter().zip(input_grads).zip(wants) {
                        let Some(ig) = ig else { continue };
                        if !want {
                            continue;
                        }
                        if let Some(pos) = ig.iter().position(|x| !x.is_finite()) {
                            return Err(Error::Numeric(format!(
                                "non-finite gradient flowing out of {} at index {}",
                                op.name(),
                                pos
                            )));
                        }
                        match &mut self.grads[inp.0] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }
}

fn same_shape(prim: &Primitive, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "{}: shapes {:?} and {:?} differ",
            prim.name(),
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax and log-softmax with max subtraction.
fn softmax_rows(data: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut probs = vec![0.0; data.len()];
    let mut logp = vec![0.0; data.len()];
    if cols == 0 {
        return (probs, logp);
    }
    for (row, (p, lp)) in data
        .chunks(cols)
        .zip(probs.chunks_mut(cols).zip(logp.chunks_mut(cols)))
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (pi, &x) in p.iter_mut().zip(row) {
            *pi = (x - max).exp();
            z += *pi;
        }
        let log_z = z.ln();
        for ((pi, lpi), &x) in p.iter_mut().zip(lp.iter_mut()).zip(row) {
            *pi /= z;
            *lpi = x - max - log_z;
        }
    }
    (probs, logp)
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn forward(prim: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let arity = match prim {
        Primitive::MatMul
        | Primitive::Add
        | Primitive::AddBias
        | Primitive::Mul
        | Primitive::MixRows { .. }
        | Primitive::SoftmaxCrossEntropy => Some(2),
        Primitive::ConcatLast => None,
        _ => Some(1),
    };
    match arity {
        Some(a) if x.len() != a => {
            return shape_err(format!(
                "{} takes {} inputs, got {}",
                prim.name(),
                a,
                x.len()
            ))
        }
        None if x.is_empty() => return shape_err("concat needs at least one input"),
        _ => {}
    }
    let none = Vec::new;
    let out = match prim {
        Primitive::MatMul => {
            let (n, k) = x[0].dims2()?;
            let (k2, m) = x[1].dims2()?;
            if k != k2 {
                return shape_err(format!(
                    "matmul: {:?} x {:?}",
                    x[0].shape(),
                    x[1].shape()
                ));
            }
            (
                Tensor::from_parts(vec![n, m], matmul_raw(x[0].data(), x[1].data(), n, k, m)),
                none(),
            )
        }
        Primitive::Add | Primitive::Mul => {
            same_shape(prim, x[0], x[1])?;
            let data = x[0]
                .data()
                .iter()
                .zip(x[1].data())
                .map(|(a, b)| if *prim == Primitive::Add { a + b } else { a * b })
                .collect();
            (Tensor::from_parts(x[0].shape().to_vec(), data), none())
        }
        Primitive::AddBias => {
            let (n, m) = x[0].dims2()?;
            let b = x[1];
            let ok = match b.shape() {
                [len] => *len == m,
                [1, len] => *len == m,
                _ => false,
            };
            if !ok {
                return shape_err(format!(
                    "add_bias: bias {:?} does not match matrix {:?}",
                    b.shape(),
                    x[0].shape()
                ));
            }
            let mut data = x[0].data().to_vec();
            if m > 0 {
                for row in data.chunks_mut(m) {
                    row.iter_mut().zip(b.data()).for_each(|(r, bv)| *r += bv);
                }
            }
            (Tensor::from_parts(vec![n, m], data), none())
        }
        Primitive::Scale(c) => {
            if !c.is_finite() {
                return Err(Error::Numeric(format!("scale by non-finite {c}")));
            }
            let data = x[0].data().iter().map(|v| v * c).collect();
            (Tensor::from_parts(x[0].shape().to_vec(), data), none())
        }
        Primitive::ConcatLast => {
            let lead = &x[0].shape()[..x[0].rank().saturating_sub(1)];
            if x[0].rank() == 0 {
                return shape_err("concat: scalars have no last dim");
            }
            for t in x {
                if t.rank() != x[0].rank() || &t.shape()[..t.rank() - 1] != lead {
                    return shape_err(format!(
                        "concat: leading dims {:?} vs {:?}",
                        t.shape(),
                        x[0].shape()
                    ));
                }
            }
            let rows: usize = lead.iter().product();
            let width: usize = x.iter().map(|t| last_dim(t)).sum();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                for t in x {
                    let w = last_dim(t);
                    data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(width);
            (Tensor::from_parts(shape, data), none())
        }
        Primitive::Sum => (
            Tensor::from_parts(vec![], vec![x[0].data().iter().sum()]),
            none(),
        ),
        Primitive::Mean => {
            if x[0].numel() == 0 {
                return shape_err("mean of an empty tensor");
            }
            let s: f64 = x[0].data().iter().sum();
            (
                Tensor::from_parts(vec![], vec![s / x[0].numel() as f64]),
                none(),
            )
        }
        Primitive::Relu => {
            let data = x[0].data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            (Tensor::from_parts(x[0].shape().to_vec(), data), none())
        }
        Primitive::Sigmoid => {
            let data = x[0].data().iter().map(|&v| sigmoid(v)).collect();
            (Tensor::from_parts(x[0].shape().to_vec(), data), none())
        }
        Primitive::Log => {
            if let Some(v) = x[0].data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Numeric(format!("log of non-positive value {v}")));
            }
            let data = x[0].data().iter().map(|v| v.ln()).collect();
            (Tensor::from_parts(x[0].shape().to_vec(), data), none())
        }
        Primitive::Softmax => {
            if x[0].rank() == 0 || x[0].rank() > 2 {
                return shape_err(format!("softmax: rank {} input", x[0].rank()));
            }
            let (p, _) = softmax_rows(x[0].data(), last_dim(x[0]));
            (Tensor::from_parts(x[0].shape().to_vec(), p), none())
        }
        Primitive::GatherRows(rows) => (x[0].select_rows(rows)?, none()),
        Primitive::MixRows {
            indices,
            group_size,
        } => {
            let (n, d) = x[0].dims2()?;
            let (m, k) = x[1].dims2()?;
            if k != *group_size || indices.len() != m * k {
                return shape_err(format!(
                    "mix_rows: weights {:?}, {} indices, group size {}",
                    x[1].shape(),
                    indices.len(),
                    group_size
                ));
            }
            if let Some(bad) = indices.iter().find(|&&i| i >= n) {
                return shape_err(format!("mix_rows: index {bad} out of range for {n} rows"));
            }
            let mut data = vec![0.0; m * d];
            let w = x[1].data();
            for g in 0..m {
                let out = &mut data[g * d..(g + 1) * d];
                for j in 0..k {
                    let wk = w[g * k + j];
                    let src = x[0].row(indices[g * k + j]);
                    out.iter_mut().zip(src).for_each(|(o, s)| *o += wk * s);
                }
            }
            (Tensor::from_parts(vec![m, d], data), none())
        }
        Primitive::NormalizeRows { eps } => {
            let (m, k) = x[0].dims2()?;
            if !(eps.is_finite() && *eps >= 0.0) {
                return Err(Error::Numeric(format!("normalize_rows: bad eps {eps}")));
            }
            let mut data = x[0].data().to_vec();
            let mut denoms = Vec::with_capacity(m);
            if k > 0 {
                for row in data.chunks_mut(k) {
                    let s: f64 = row.iter().sum::<f64>() + eps;
                    if s == 0.0 {
                        return Err(Error::Numeric("normalize_rows: zero row sum".into()));
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                    denoms.push(s);
                }
            }
            (Tensor::from_parts(vec![m, k], data), denoms)
        }
        Primitive::SoftmaxCrossEntropy => {
            same_shape(prim, x[0], x[1])?;
            let (m, c) = x[0].dims2()?;
            if m == 0 {
                return shape_err("cross-entropy over zero rows");
            }
            let (p, logp) = softmax_rows(x[0].data(), c);
            let total: f64 = x[1].data().iter().zip(&logp).map(|(t, lp)| -t * lp).sum();
            let mut saved = p;
            saved.extend(logp);
            (Tensor::from_parts(vec![], vec![total / m as f64]), saved)
        }
    };
    Ok(out)
}

/// Gradients for each input of `prim` given the output gradient `g`.
fn backward_op(
    prim: &Primitive,
    x: &[&Tensor],
    out: &Tensor,
    saved: &[f64],
    g: &[f64],
    wants: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let want = |i: usize| wants.get(i).copied().unwrap_or(false);
    match prim {
        Primitive::MatMul => {
            let (n, k) = (x[0].shape()[0], x[0].shape()[1]);
            let m = x[1].shape()[1];
            let (a, b) = (x[0].data(), x[1].data());
            let da = want(0).then(|| {
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let b_row = &b[p * m..(p + 1) * m];
                        da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                    }
                }
                if fault_enabled() {
                    da.iter_mut().for_each(|v| *v = -*v);
                }
                da
            });
            let db = want(1).then(|| {
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let av = a[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        db[p * m..(p + 1) * m]
                            .iter_mut()
                            .zip(g_row)
                            .for_each(|(d, gv)| *d += av * gv);
                    }
                }
                db
            });
            vec![da, db]
        }
        Primitive::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Primitive::AddBias => {
            let m = x[0].shape()[1];
            let mut db = vec![0.0; m];
            if m > 0 {
                for row in g.chunks(m) {
                    db.iter_mut().zip(row).for_each(|(d, gv)| *d += gv);
                }
            }
            vec![Some(g.to_vec()), Some(db)]
        }
        Primitive::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Primitive::Mul => {
            let da = want(0).then(|| g.iter().zip(x[1].data()).map(|(a, b)| a * b).collect());
            let db = want(1).then(|| g.iter().zip(x[0].data()).map(|(a, b)| a * b).collect());
            vec![da, db]
        }
        Primitive::ConcatLast => {
            let width = last_dim(out);
            let rows = out.numel().checked_div(width).unwrap_or(0);
            let mut grads: Vec<Vec<f64>> = x.iter().map(|t| Vec::with_capacity(t.numel())).collect();
            for r in 0..rows {
                let mut off = r * width;
                for (t, gi) in x.iter().zip(grads.iter_mut()) {
                    let w = last_dim(t);
                    gi.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }
        Primitive::Sum => vec![Some(vec![g[0]; x[0].numel()])],
        Primitive::Mean => {
            let n = x[0].numel() as f64;
            vec![Some(vec![g[0] / n; x[0].numel()])]
        }
        Primitive::Relu => vec![Some(
            g.iter()
                .zip(x[0].data())
                .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                .collect(),
        )],
        Primitive::Sigmoid => vec![Some(
            g.iter()
                .zip(out.data())
                .map(|(gv, s)| gv * s * (1.0 - s))
                .collect(),
        )],
        Primitive::Log => vec![Some(
            g.iter().zip(x[0].data()).map(|(gv, xv)| gv / xv).collect(),
        )],
        Primitive::Softmax => {
            let c = last_dim(out);
            let mut dx = vec![0.0; g.len()];
            if c > 0 {
                for ((dr, gr), sr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for ((d, gv), s) in dr.iter_mut().zip(gr).zip(sr) {
                        *d = s * (gv - dot);
                    }
                }
            }
            vec![Some(dx)]
        }
        Primitive::GatherRows(rows) => {
            let d = last_dim(x[0]);
            let mut dx = vec![0.0; x[0].numel()];
            for (r, &src) in rows.iter().enumerate() {
                dx[src * d..(src + 1) * d]
                    .iter_mut()
                    .zip(&g[r * d..(r + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(dx)]
        }
        Primitive::MixRows {
            indices,
            group_size: k,
        } => {
            let d = x[0].shape()[1];
            let m = x[1].shape()[0];
            let w = x[1].data();
            let dx = want(0).then(|| {
                let mut dx = vec![0.0; x[0].numel()];
                for grp in 0..m {
                    let g_row = &g[grp * d..(grp + 1) * d];
                    for j in 0..*k {
                        let wk = w[grp * k + j];
                        let src = indices[grp * k + j];
                        dx[src * d..(src + 1) * d]
                            .iter_mut()
                            .zip(g_row)
                            .for_each(|(a, b)| *a += wk * b);
                    }
                }
                dx
            });
            let dw = want(1).then(|| {
                let mut dw = vec![0.0; m * k];
                for grp in 0..m {
                    let g_row = &g[grp * d..(grp + 1) * d];
                    for j in 0..*k {
                        let src = x[0].row(indices[grp * k + j]);
                        dw[grp * k + j] = g_row.iter().zip(src).map(|(a, b)| a * b).sum();
                    }
                }
                dw
            });
            vec![dx, dw]
        }
        Primitive::NormalizeRows { .. } => {
            let k = x[0].shape()[1];
            let mut dw = vec![0.0; g.len()];
            if k > 0 {
                for (((dr, gr), or), s) in dw
                    .chunks_mut(k)
                    .zip(g.chunks(k))
                    .zip(out.data().chunks(k))
                    .zip(saved)
                {
                    let dot: f64 = gr.iter().zip(or).map(|(a, b)| a * b).sum();
                    for (d, gv) in dr.iter_mut().zip(gr) {
                        *d = (gv - dot) / s;
                    }
                }
            }
            vec![Some(dw)]
        }
        Primitive::SoftmaxCrossEntropy => {
            let (m, c) = (x[0].shape()[0], x[0].shape()[1]);
            let scale = g[0] / m as f64;
            let (p, logp) = saved.split_at(m * c);
            let t = x[1].data();
            let dz = want(0).then(|| {
                let mut dz = vec![0.0; m * c];
                for r in 0..m {
                    let tr = &t[r * c..(r + 1) * c];
                    let mass: f64 = tr.iter().sum();
                    for j in 0..c {
                        dz[r * c + j] = scale * (p[r * c + j] * mass - tr[j]);
                    }
                }
                dz
            });
            let dt = want(1).then(|| logp.iter().map(|lp| -scale * lp).collect());
            vec![dz, dt]
        }
    }
}
