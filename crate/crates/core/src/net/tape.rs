use super::params::{matrix_dims, ParamId, ParamStore, Tensor};
use super::NetError;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Batch geometry for fused attention: `batch` groups of `nq` query rows attending
/// over `nk` key rows. `key_mask[b * nk + j]` is true for usable keys.
#[derive(Clone, Debug)]
pub struct AttentionShape<'a> {
    pub batch: usize,
    pub nq: usize,
    pub nk: usize,
    pub heads: usize,
    pub key_mask: Option<&'a [bool]>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddGroupRows { x: Var, c: Var, group: usize },
    Scale(Var, f64),
    Sum(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax(Var),
    MaskedFill { x: Var, mask: Vec<bool> },
    Gelu(Var),
    Embedding { table: Var, indices: Vec<usize> },
    BlockMix { z: Var, mats: Vec<f64>, n: usize },
    Attention { q: Var, k: Var, v: Var, batch: usize, nq: usize, nk: usize, heads: usize, probs: Vec<f64> },
    BondLogits { q: Var, k: Var, batch: usize, n: usize, classes: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
}

/// Records a forward computation over parameters of one [`ParamStore`] for a single
/// reverse pass.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: Vec<Option<ParamId>>,
    consumed: bool,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    params: Vec<Vec<f64>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a parameter; zeros if it was not on the loss path.
    pub fn param(&self, id: ParamId) -> &[f64] {
        &self.params[id.index()]
    }

    pub fn into_params(self) -> Vec<Vec<f64>> {
        self.params
    }

    pub fn var(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NetError {
    NetError::Shape { op, a: a.to_vec(), b: b.to_vec() }
}

/// C (m×n) += A (m×k) · B (k×n) with explicit strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the callers size every slice to cover the strided extents used here.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gelu(x: f64) -> (f64, f64) {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Tape<'p> {
        Tape { store, nodes: Vec::new(), params: Vec::new(), consumed: false }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, value: Value::Owned(data), op });
        self.params.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => &self.store.get(*id).value.data,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        matrix_dims(self.shape(v))
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor { shape: self.shape(v).to_vec(), data: self.value(v).to_vec() }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { shape: self.store.get(id).value.shape.clone(), value: Value::Param(id), op: Op::Leaf });
        self.params.push(Some(id));
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf)
    }

    /// A (m×k) · B (k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NetError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(b).len() != 2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), k, 1, self.value(b), n, 1, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// x (r×din) · W (din×dout) + b.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NetError> {
        let (m, k) = self.dims(x);
        let (k2, n) = self.dims(w);
        if k != k2 || self.shape(w).len() != 2 {
            return Err(shape_err("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            if self.value(b).len() != n {
                return Err(shape_err("linear bias", self.shape(w), self.shape(b)));
            }
            let bias = self.value(b);
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(m, k, n, self.value(x), k, 1, self.value(w), n, 1, &mut out);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NetError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    /// Adds row `r / group` of `c` to row `r` of `x`.
    pub fn add_group_rows(&mut self, x: Var, c: Var, group: usize) -> Result<Var, NetError> {
        let (rows, d) = self.dims(x);
        let (crows, cd) = self.dims(c);
        if group == 0 || d != cd || crows * group != rows {
            return Err(shape_err("add_group_rows", self.shape(x), self.shape(c)));
        }
        let mut out = self.value(x).to_vec();
        let cv = self.value(c);
        for (r, row) in out.chunks_mut(d).enumerate() {
            add_into(row, &cv[(r / group) * d..(r / group + 1) * d]);
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddGroupRows { x, c, group }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    /// Row-wise (x − mean)/√(var + 1e-5) · gain + bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NetError> {
        let (rows, d) = self.dims(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let (g, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + bv[c];
            }
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Row-wise softmax over the last dimension; −∞ entries receive zero mass.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, d) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x))
    }

    /// Replaces entries where `mask` is true by `value`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var, NetError> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err("masked_fill", self.shape(x), &[mask.len()]));
        }
        let out = self.value(x).iter().zip(mask).map(|(&v, &m)| if m { value } else { v }).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::MaskedFill { x, mask: mask.to_vec() }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu(v).0).collect();
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x))
    }

    /// Gathers rows of `table` (V×D).
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NetError> {
        let (vocab, d) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= vocab {
                return Err(NetError::Index { op: "embedding", index: i, bound: vocab });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(vec![indices.len(), d], out, Op::Embedding { table, indices: indices.to_vec() }))
    }

    /// Per-group constant mixing: rows of group b become M_b · z_b, with `mats`
    /// holding `batch` row-major n×n matrices.
    pub fn block_mix(&mut self, z: Var, mats: &[f64], n: usize) -> Result<Var, NetError> {
        let (rows, d) = self.dims(z);
        if n == 0 || rows % n != 0 || mats.len() != (rows / n) * n * n {
            return Err(shape_err("block_mix", self.shape(z), &[mats.len()]));
        }
        let zv = self.value(z);
        let mut out = vec![0.0; rows * d];
        for b in 0..rows / n {
            let m = &mats[b * n * n..(b + 1) * n * n];
            for i in 0..n {
                let dst = &mut out[(b * n + i) * d..(b * n + i + 1) * d];
                for j in 0..n {
                    let w = m[i * n + j];
                    if w != 0.0 {
                        let src = &zv[(b * n + j) * d..(b * n + j + 1) * d];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += w * s;
                        }
                    }
                }
            }
        }
        Ok(self.push(self.shape(z).to_vec(), out, Op::BlockMix { z, mats: mats.to_vec(), n }))
    }

    /// Multi-head scaled dot-product attention over already-projected q, k, v.
    /// Masked keys get −∞ scores; every group needs at least one usable key.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, s: &AttentionShape) -> Result<Var, NetError> {
        let (qr, d) = self.dims(q);
        let (kr, kd) = self.dims(k);
        if s.nq == 0 || s.nk == 0 || s.batch == 0 {
            return Err(NetError::Empty("attention"));
        }
        if qr != s.batch * s.nq || kr != s.batch * s.nk || kd != d || self.shape(v) != self.shape(k) {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if s.heads == 0 || d % s.heads != 0 {
            return Err(shape_err("attention heads", self.shape(q), &[s.heads]));
        }
        if let Some(mask) = s.key_mask {
            if mask.len() != kr {
                return Err(shape_err("attention mask", self.shape(k), &[mask.len()]));
            }
            if (0..s.batch).any(|b| !mask[b * s.nk..(b + 1) * s.nk].iter().any(|&m| m)) {
                return Err(NetError::Empty("attention keys"));
            }
        }
        let dh = d / s.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; s.batch * s.heads * s.nq * s.nk];
        let mut out = vec![0.0; qr * d];
        for b in 0..s.batch {
            for h in 0..s.heads {
                for i in 0..s.nq {
                    let qrow = &qv[(b * s.nq + i) * d + h * dh..][..dh];
                    let p = &mut probs[((b * s.heads + h) * s.nq + i) * s.nk..][..s.nk];
                    for j in 0..s.nk {
                        let usable = s.key_mask.is_none_or(|m| m[b * s.nk + j]);
                        p[j] = if usable {
                            let krow = &kv[(b * s.nk + j) * d + h * dh..][..dh];
                            scale * qrow.iter().zip(krow).map(|(a, c)| a * c).sum::<f64>()
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    softmax_in_place(p);
                    let orow = &mut out[(b * s.nq + i) * d + h * dh..][..dh];
                    for j in 0..s.nk {
                        if p[j] != 0.0 {
                            let vrow = &vv[(b * s.nk + j) * d + h * dh..][..dh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        let op = Op::Attention { q, k, v, batch: s.batch, nq: s.nq, nk: s.nk, heads: s.heads, probs };
        Ok(self.push(vec![qr, d], out, op))
    }

    /// Pairwise class scores from per-class projections: q, k are (batch·n)×(classes·D);
    /// out[(b,i,j), c] = ½(q_i^c·k_j^c + q_j^c·k_i^c)/√D, shape (batch·n·n)×classes.
    pub fn bond_logits(&mut self, q: Var, k: Var, n: usize, classes: usize) -> Result<Var, NetError> {
        let (rows, width) = self.dims(q);
        if self.shape(q) != self.shape(k) || n == 0 || rows % n != 0 || classes == 0 || width % classes != 0 {
            return Err(shape_err("bond_logits", self.shape(q), self.shape(k)));
        }
        let batch = rows / n;
        let d = width / classes;
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv) = (self.value(q), self.value(k));
        let mut raw = vec![0.0; batch * n * n * classes];
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    for c in 0..classes {
                        let qi = &qv[(b * n + i) * width + c * d..][..d];
                        let kj = &kv[(b * n + j) * width + c * d..][..d];
                        raw[((b * n + i) * n + j) * classes + c] =
                            scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        }
        let mut out = vec![0.0; raw.len()];
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    for c in 0..classes {
                        let ij = ((b * n + i) * n + j) * classes + c;
                        let ji = ((b * n + j) * n + i) * classes + c;
                        out[ij] = 0.5 * (raw[ij] + raw[ji]);
                    }
                }
            }
        }
        Ok(self.push(vec![batch * n * n, classes], out, Op::BondLogits { q, k, batch, n, classes }))
    }

    /// Σ_r weights[r] · CE(logits_r, targets[r]) as a scalar; rows with zero weight
    /// are skipped entirely.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var, NetError> {
        let (rows, k) = self.dims(logits);
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_err("cross_entropy", self.shape(logits), &[targets.len(), weights.len()]));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; rows * k];
        let mut total = 0.0;
        for r in 0..rows {
            if weights[r] == 0.0 {
                continue;
            }
            if targets[r] >= k {
                return Err(NetError::Index { op: "cross_entropy", index: targets[r], bound: k });
            }
            let row = &lv[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            total += weights[r] * (lse - row[targets[r]]);
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        Ok(self.push(vec![1], vec![total], op))
    }

    /// Reverse pass from a scalar. The tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NetError> {
        if self.consumed {
            return Err(NetError::BackwardConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(NetError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Vec<f64>> = self.store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            if let Some(id) = self.params[i] {
                add_into(&mut param_grads[id.index()], &g);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { params: param_grads, nodes: grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let len = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Linear { x: a, w: b, .. } => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                gemm(m, n, k, g, n, 1, bv, 1, n, self.slot(grads, *a));
                gemm(k, m, n, av, 1, k, g, n, 1, self.slot(grads, *b));
                if let Op::Linear { b: Some(bias), .. } = &self.nodes[i].op {
                    let db = self.slot(grads, *bias);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g);
                add_into(self.slot(grads, *b), g);
            }
            Op::AddGroupRows { x, c, group } => {
                add_into(self.slot(grads, *x), g);
                let d = self.dims(*x).1;
                let dc = self.slot(grads, *c);
                for (r, row) in g.chunks(d).enumerate() {
                    add_into(&mut dc[(r / group) * d..(r / group + 1) * d], row);
                }
            }
            Op::Scale(a, s) => {
                for (d, x) in self.slot(grads, *a).iter_mut().zip(g) {
                    *d += s * x;
                }
            }
            Op::Sum(a) => {
                for d in self.slot(grads, *a).iter_mut() {
                    *d += g[0];
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, d) = self.dims(*x);
                let gv = self.value(*gain);
                let mut dx = vec![0.0; rows * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..d {
                        let dh = gr[c] * gv[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[c];
                        dgain[c] += gr[c] * hr[c];
                        dbias[c] += gr[c];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for c in 0..d {
                        let dh = gr[c] * gv[c];
                        dx[r * d + c] = inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                    }
                }
                add_into(self.slot(grads, *x), &dx);
                add_into(self.slot(grads, *gain), &dgain);
                add_into(self.slot(grads, *bias), &dbias);
            }
            Op::Softmax(x) => {
                let d = self.dims(*x).1;
                let y = self.value(Var(i));
                let dx = self.slot(grads, *x);
                for ((yr, gr), dr) in y.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dr[c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                for ((d, gv), m) in self.slot(grads, *x).iter_mut().zip(g).zip(mask) {
                    if !m {
                        *d += gv;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                for ((d, gv), &v) in self.slot(grads, *x).iter_mut().zip(g).zip(xv) {
                    *d += gv * gelu(v).1;
                }
            }
            Op::Embedding { table, indices } => {
                let d = self.dims(*table).1;
                let dt = self.slot(grads, *table);
                for (r, &idx) in indices.iter().enumerate() {
                    add_into(&mut dt[idx * d..(idx + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::BlockMix { z, mats, n } => {
                let n = *n;
                let (rows, d) = self.dims(*z);
                let dz = self.slot(grads, *z);
                for b in 0..rows / n {
                    let m = &mats[b * n * n..(b + 1) * n * n];
                    for i in 0..n {
                        let gi = &g[(b * n + i) * d..(b * n + i + 1) * d];
                        for j in 0..n {
                            let w = m[i * n + j];
                            if w != 0.0 {
                                for (o, s) in dz[(b * n + j) * d..(b * n + j + 1) * d].iter_mut().zip(gi) {
                                    *o += w * s;
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention { q, k, v, batch, nq, nk, heads, probs } => {
                let (batch, nq, nk, heads) = (*batch, *nq, *nk, *heads);
                let d = self.dims(*q).1;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut ds = vec![0.0; nk];
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..nq {
                            let p = &probs[((b * heads + h) * nq + i) * nk..][..nk];
                            let go = &g[(b * nq + i) * d + h * dh..][..dh];
                            let mut dot = 0.0;
                            for j in 0..nk {
                                if p[j] == 0.0 {
                                    ds[j] = 0.0;
                                    continue;
                                }
                                let voff = (b * nk + j) * d + h * dh;
                                let dp: f64 = go.iter().zip(&vv[voff..voff + dh]).map(|(a, c)| a * c).sum();
                                ds[j] = dp;
                                dot += p[j] * dp;
                                for (o, x) in dv[voff..voff + dh].iter_mut().zip(go) {
                                    *o += p[j] * x;
                                }
                            }
                            let qoff = (b * nq + i) * d + h * dh;
                            for j in 0..nk {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let w = scale * p[j] * (ds[j] - dot);
                                let koff = (b * nk + j) * d + h * dh;
                                for c in 0..dh {
                                    dq[qoff + c] += w * kv[koff + c];
                                    dk[koff + c] += w * qv[qoff + c];
                                }
                            }
                        }
                    }
                }
                add_into(self.slot(grads, *q), &dq);
                add_into(self.slot(grads, *k), &dk);
                add_into(self.slot(grads, *v), &dv);
            }
            Op::BondLogits { q, k, batch, n, classes } => {
                let (batch, n, classes) = (*batch, *n, *classes);
                let width = self.dims(*q).1;
                let d = width / classes;
                let scale = 1.0 / (d as f64).sqrt();
                let (qv, kv) = (self.value(*q), self.value(*k));
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..n {
                            for c in 0..classes {
                                let gij = g[((b * n + i) * n + j) * classes + c];
                                let gji = g[((b * n + j) * n + i) * classes + c];
                                let w = 0.5 * scale * (gij + gji);
                                if w == 0.0 {
                                    continue;
                                }
                                let qi = (b * n + i) * width + c * d;
                                let kj = (b * n + j) * width + c * d;
                                for e in 0..d {
                                    dq[qi + e] += w * kv[kj + e];
                                    dk[kj + e] += w * qv[qi + e];
                                }
                            }
                        }
                    }
                }
                add_into(self.slot(grads, *q), &dq);
                add_into(self.slot(grads, *k), &dk);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let k = self.dims(*logits).1;
                let dl = self.slot(grads, *logits);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let s = g[0] * w;
                    for c in 0..k {
                        dl[r * k + c] += s * probs[r * k + c];
                    }
                    dl[r * k + t] -= s;
                }
            }
        }
    }
}

/// Numerically stable softmax; entries at −∞ get exactly zero.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = f64::NAN);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
