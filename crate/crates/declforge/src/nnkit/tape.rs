//! Define-by-run tape: forward ops record their operands, `backward` walks the
//! recording in reverse and accumulates parameter gradients.
//!
//! Values are eager [`Tensor`]s, so a tape node is usable as an ordinary
//! forward result whether or not `backward` is ever called. Nodes that cannot
//! influence any parameter (`needs_grad == false`) are skipped during the
//! reverse sweep.
//!
//! GRU convention, with `s` the logistic function and `o` elementwise product:
//!
//! ```text
//! z  = s(Wz x + Uz h + bz)
//! r  = s(Wr x + Ur h + br)
//! h~ = tanh(Wh x + Uh (r o h) + bh)
//! h' = (1 - z) o h + z o h~
//! ```

use super::tensor::{linear_backprop_input, linear_backprop_weight, linear_into, Tensor};
use super::{Init, NnError, ParamId, ParamSet};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

/// Parameter handles for one GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruParamIds {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruParamIds {
    /// Create the nine arrays of a GRU cell under `prefix`.
    ///
    /// Input-to-hidden weights use fan-in `in_dim`, recurrent weights and
    /// biases use fan-in `d`.
    pub fn create(params: &mut ParamSet, prefix: &str, in_dim: usize, d: usize, rng: &mut Rng) -> Self {
        let w = |p: &mut ParamSet, r: &mut Rng, gate: &str| {
            p.add(format!("{prefix}.w{gate}"), &[d, in_dim], Init::UniformFanIn(in_dim), r)
        };
        let u = |p: &mut ParamSet, r: &mut Rng, gate: &str| {
            p.add(format!("{prefix}.u{gate}"), &[d, d], Init::UniformFanIn(d), r)
        };
        let b = |p: &mut ParamSet, r: &mut Rng, gate: &str| {
            p.add(format!("{prefix}.b{gate}"), &[d], Init::UniformFanIn(d), r)
        };
        // Creation order is part of the checkpoint layout; keep gate order z, r, h.
        let wz = w(params, rng, "z");
        let uz = u(params, rng, "z");
        let bz = b(params, rng, "z");
        let wr = w(params, rng, "r");
        let ur = u(params, rng, "r");
        let br = b(params, rng, "r");
        let wh = w(params, rng, "h");
        let uh = u(params, rng, "h");
        let bh = b(params, rng, "h");
        GruParamIds { wz, uz, bz, wr, ur, br, wh, uh, bh }
    }

    pub fn all_ids(&self) -> [ParamId; 9] {
        [self.wz, self.uz, self.bz, self.wr, self.ur, self.br, self.wh, self.uh, self.bh]
    }
}

#[derive(Debug)]
enum Op {
    Const,
    Linear { w: ParamId, b: Option<ParamId>, x: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Abs { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// k*x + c, k and c plain scalars.
    Affine { x: NodeId, k: f32 },
    Concat { a: NodeId, b: NodeId },
    /// Per-row matrix-vector product: mat rows are `r x c` matrices.
    BatchedMatVec { mat: NodeId, vec: NodeId, r: usize, c: usize },
    /// Per-row single-column gather.
    GatherCols { x: NodeId, idx: Vec<usize> },
    SumAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0 as usize].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId((self.nodes.len() - 1) as u32)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0 as usize].needs_grad
    }

    fn shape_err(op: &'static str, expected: String, got: (usize, usize)) -> NnError {
        NnError::Shape { op, expected, got: format!("{}x{}", got.0, got.1) }
    }

    /// Leaf holding data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value, false)
    }

    /// y = x . W^T + b. `w` is `out x in`.
    pub fn linear(&mut self, params: &ParamSet, w: ParamId, b: Option<ParamId>, x: NodeId) -> Result<NodeId, NnError> {
        let wa = params.get(w);
        let (out, inn) = (wa.shape[0], wa.shape[1]);
        let xv = self.value(x);
        if xv.cols != inn {
            return Err(Self::shape_err("linear_forward", format!("input cols {inn}"), xv.shape()));
        }
        if let Some(b) = b {
            let ba = params.get(b);
            if ba.values.len() != out {
                return Err(Self::shape_err("linear_forward", format!("bias len {out}"), (1, ba.values.len())));
            }
        }
        let mut y = Tensor::zeros(xv.rows, out);
        linear_into(&mut y, xv, &wa.values, b.map(|b| params.get(b).values.as_slice()), out, inn);
        Ok(self.push(Op::Linear { w, b, x }, y, true))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = a.max(0.0));
        let needs = self.needs(x);
        self.push(Op::Relu { x }, v, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = 1.0 / (1.0 + (-*a).exp()));
        let needs = self.needs(x);
        self.push(Op::Sigmoid { x }, v, needs)
    }

    pub fn tanh_node(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = a.tanh());
        let needs = self.needs(x);
        self.push(Op::Tanh { x }, v, needs)
    }

    pub fn abs_node(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = a.abs());
        let needs = self.needs(x);
        self.push(Op::Abs { x }, v, needs)
    }

    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::shape_err(op, format!("{}x{}", av.rows, av.cols), bv.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.binary_shapes("add", a, b)?;
        let mut v = self.value(a).clone();
        for (o, &x) in v.data.iter_mut().zip(&self.nodes[b.0 as usize].value.data) {
            *o += x;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, v, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.binary_shapes("sub", a, b)?;
        let mut v = self.value(a).clone();
        for (o, &x) in v.data.iter_mut().zip(&self.nodes[b.0 as usize].value.data) {
            *o -= x;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, v, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.binary_shapes("mul", a, b)?;
        let mut v = self.value(a).clone();
        for (o, &x) in v.data.iter_mut().zip(&self.nodes[b.0 as usize].value.data) {
            *o *= x;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, v, needs))
    }

    /// k*x + c elementwise.
    pub fn affine(&mut self, x: NodeId, k: f32, c: f32) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = k * *a + c);
        let needs = self.needs(x);
        self.push(Op::Affine { x, k }, v, needs)
    }

    /// Concatenate along columns.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(Self::shape_err("concat", format!("rows {}", av.rows), bv.shape()));
        }
        let mut v = Tensor::zeros(av.rows, av.cols + bv.cols);
        for r in 0..av.rows {
            v.row_mut(r)[..av.cols].copy_from_slice(av.row(r));
        }
        for r in 0..bv.rows {
            let ac = av.cols;
            v.row_mut(r)[ac..].copy_from_slice(bv.row(r));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat { a, b }, v, needs))
    }

    /// Per-row product of an `r x c` matrix (stored flat per row of `mat`)
    /// with a length-`c` vector.
    pub fn batched_matvec(&mut self, mat: NodeId, vec: NodeId, r: usize, c: usize) -> Result<NodeId, NnError> {
        let (mv, vv) = (self.value(mat), self.value(vec));
        if mv.cols != r * c {
            return Err(Self::shape_err("batched_matvec", format!("mat cols {}", r * c), mv.shape()));
        }
        if vv.cols != c || vv.rows != mv.rows {
            return Err(Self::shape_err("batched_matvec", format!("vec {}x{c}", mv.rows), vv.shape()));
        }
        let mut out = Tensor::zeros(mv.rows, r);
        for row in 0..mv.rows {
            let m = mv.row(row);
            let v = vv.row(row);
            let o = out.row_mut(row);
            for i in 0..r {
                let mr = &m[i * c..(i + 1) * c];
                o[i] = mr.iter().zip(v).map(|(a, b)| a * b).sum();
            }
        }
        let needs = self.needs(mat) || self.needs(vec);
        Ok(self.push(Op::BatchedMatVec { mat, vec, r, c }, out, needs))
    }

    /// Pick one column per row: `out[r, 0] = x[r, idx[r]]`.
    pub fn gather_cols(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        if idx.len() != xv.rows {
            return Err(Self::shape_err("gather_cols", format!("{} indices", xv.rows), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.cols) {
            return Err(NnError::Usage(format!("gather_cols index {bad} out of range 0..{}", xv.cols)));
        }
        let mut out = Tensor::zeros(xv.rows, 1);
        for r in 0..xv.rows {
            out.data[r] = xv.row(r)[idx[r]];
        }
        let needs = self.needs(x);
        Ok(self.push(Op::GatherCols { x, idx: idx.to_vec() }, out, needs))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f32 = self.value(x).data.iter().sum();
        let needs = self.needs(x);
        self.push(Op::SumAll { x }, Tensor::from_vec(1, 1, vec![s]), needs)
    }

    /// One GRU step. `x` is `rows x in_dim`, `h` is `rows x d`; returns h'.
    pub fn gru_step(&mut self, params: &ParamSet, gru: &GruParamIds, x: NodeId, h: NodeId) -> Result<NodeId, NnError> {
        let zx = self.linear(params, gru.wz, Some(gru.bz), x)?;
        let zh = self.linear(params, gru.uz, None, h)?;
        let z_pre = self.add(zx, zh)?;
        let z = self.sigmoid(z_pre);
        let rx = self.linear(params, gru.wr, Some(gru.br), x)?;
        let rh_lin = self.linear(params, gru.ur, None, h)?;
        let r_pre = self.add(rx, rh_lin)?;
        let r = self.sigmoid(r_pre);
        let r_h = self.mul(r, h)?;
        let hx = self.linear(params, gru.wh, Some(gru.bh), x)?;
        let hh = self.linear(params, gru.uh, None, r_h)?;
        let h_pre = self.add(hx, hh)?;
        let h_tilde = self.tanh_node(h_pre);
        let keep = self.affine(z, -1.0, 1.0);
        let old_part = self.mul(keep, h)?;
        let new_part = self.mul(z, h_tilde)?;
        self.add(old_part, new_part)
    }

    /// Reverse sweep from `loss` (must be 1x1), seeding with `loss_grad`.
    /// Parameter gradients accumulate additively into `params`.
    pub fn backward(&self, params: &mut ParamSet, loss: NodeId, loss_grad: f32) -> Result<(), NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::Usage("backward called on an empty tape".into()));
        }
        let loss_idx = loss.0 as usize;
        if loss_idx >= self.nodes.len() {
            return Err(NnError::Usage(format!("backward: node {loss_idx} was never recorded")));
        }
        if self.nodes[loss_idx].value.shape() != (1, 1) {
            return Err(Self::shape_err("backward", "1x1 loss".into(), self.nodes[loss_idx].value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss_idx] = Some(Tensor::from_vec(1, 1, vec![loss_grad]));

        for i in (0..=loss_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Linear { w, b, x } => {
                    let xv = &self.nodes[x.0 as usize].value;
                    let (out, inn) = {
                        let s = &params.get(*w).shape;
                        (s[0], s[1])
                    };
                    if self.needs(*x) {
                        let dx = Self::grad_slot(&mut grads, *x, xv.shape());
                        linear_backprop_input(dx, &g, &params.get(*w).values, out, inn);
                    }
                    {
                        let (_, wg) = params.get_mut(*w).values_and_grad_mut();
                        linear_backprop_weight(wg, &g, xv, out, inn);
                    }
                    if let Some(b) = b {
                        let bg = &mut params.get_mut(*b).grad;
                        for r in 0..g.rows {
                            for (o, gb) in bg.iter_mut().enumerate() {
                                *gb += g.row(r)[o];
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0 as usize].value;
                    let dx = Self::grad_slot(&mut grads, *x, xv.shape());
                    for (j, (&gv, &xvj)) in g.data.iter().zip(&xv.data).enumerate() {
                        if xvj > 0.0 {
                            dx.data[j] += gv;
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let yv = &self.nodes[i].value;
                    let dx = Self::grad_slot(&mut grads, *x, yv.shape());
                    for (j, (&gv, &y)) in g.data.iter().zip(&yv.data).enumerate() {
                        dx.data[j] += gv * y * (1.0 - y);
                    }
                }
                Op::Tanh { x } => {
                    let yv = &self.nodes[i].value;
                    let dx = Self::grad_slot(&mut grads, *x, yv.shape());
                    for (j, (&gv, &y)) in g.data.iter().zip(&yv.data).enumerate() {
                        dx.data[j] += gv * (1.0 - y * y);
                    }
                }
                Op::Abs { x } => {
                    let xv = &self.nodes[x.0 as usize].value;
                    let dx = Self::grad_slot(&mut grads, *x, xv.shape());
                    for (j, (&gv, &xvj)) in g.data.iter().zip(&xv.data).enumerate() {
                        dx.data[j] += gv * if xvj > 0.0 { 1.0 } else if xvj < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Add { a, b } => {
                    for side in [a, b] {
                        if self.needs(*side) {
                            let d = Self::grad_slot(&mut grads, *side, g.shape());
                            for (o, &gv) in d.data.iter_mut().zip(&g.data) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*a) {
                        let d = Self::grad_slot(&mut grads, *a, g.shape());
                        for (o, &gv) in d.data.iter_mut().zip(&g.data) {
                            *o += gv;
                        }
                    }
                    if self.needs(*b) {
                        let d = Self::grad_slot(&mut grads, *b, g.shape());
                        for (o, &gv) in d.data.iter_mut().zip(&g.data) {
                            *o -= gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let bv = &self.nodes[b.0 as usize].value.data;
                        let d = Self::grad_slot(&mut grads, *a, g.shape());
                        for (j, (&gv, &bvj)) in g.data.iter().zip(bv).enumerate() {
                            d.data[j] += gv * bvj;
                        }
                    }
                    if self.needs(*b) {
                        let av = &self.nodes[a.0 as usize].value.data;
                        let d = Self::grad_slot(&mut grads, *b, g.shape());
                        for (j, (&gv, &avj)) in g.data.iter().zip(av).enumerate() {
                            d.data[j] += gv * avj;
                        }
                    }
                }
                Op::Affine { x, k } => {
                    let d = Self::grad_slot(&mut grads, *x, g.shape());
                    for (o, &gv) in d.data.iter_mut().zip(&g.data) {
                        *o += k * gv;
                    }
                }
                Op::Concat { a, b } => {
                    let ac = self.nodes[a.0 as usize].value.cols;
                    if self.needs(*a) {
                        let ash = self.nodes[a.0 as usize].value.shape();
                        let d = Self::grad_slot(&mut grads, *a, ash);
                        for r in 0..g.rows {
                            for (o, &gv) in d.row_mut(r).iter_mut().zip(&g.row(r)[..ac]) {
                                *o += gv;
                            }
                        }
                    }
                    if self.needs(*b) {
                        let bsh = self.nodes[b.0 as usize].value.shape();
                        let d = Self::grad_slot(&mut grads, *b, bsh);
                        for r in 0..g.rows {
                            for (o, &gv) in d.row_mut(r).iter_mut().zip(&g.row(r)[ac..]) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::BatchedMatVec { mat, vec, r, c } => {
                    let (r, c) = (*r, *c);
                    if self.needs(*mat) {
                        let vv = &self.nodes[vec.0 as usize].value;
                        let msh = self.nodes[mat.0 as usize].value.shape();
                        let d = Self::grad_slot(&mut grads, *mat, msh);
                        for row in 0..g.rows {
                            let gr = g.row(row);
                            let vr = vv.row(row);
                            let dr = d.row_mut(row);
                            for i in 0..r {
                                for j in 0..c {
                                    dr[i * c + j] += gr[i] * vr[j];
                                }
                            }
                        }
                    }
                    if self.needs(*vec) {
                        let mv = &self.nodes[mat.0 as usize].value;
                        let vsh = self.nodes[vec.0 as usize].value.shape();
                        let d = Self::grad_slot(&mut grads, *vec, vsh);
                        for row in 0..g.rows {
                            let gr = g.row(row);
                            let mr = mv.row(row);
                            let dr = d.row_mut(row);
                            for i in 0..r {
                                for j in 0..c {
                                    dr[j] += gr[i] * mr[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::GatherCols { x, idx } => {
                    let xsh = self.nodes[x.0 as usize].value.shape();
                    let d = Self::grad_slot(&mut grads, *x, xsh);
                    for (row, &col) in idx.iter().enumerate() {
                        d.row_mut(row)[col] += g.data[row];
                    }
                }
                Op::SumAll { x } => {
                    let xsh = self.nodes[x.0 as usize].value.shape();
                    let d = Self::grad_slot(&mut grads, *x, xsh);
                    let gv = g.data[0];
                    d.data.iter_mut().for_each(|o| *o += gv);
                }
            }
        }
        Ok(())
    }

    fn grad_slot(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize)) -> &mut Tensor {
        let slot = &mut grads[id.0 as usize];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape.0, shape.1));
        }
        slot.as_mut().unwrap()
    }
}
