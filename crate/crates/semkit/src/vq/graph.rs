//! Eager tape-based reverse-mode autodiff over f64 matrices. Forward values
//! are computed at node construction; `backward` walks the tape in reverse
//! and accumulates gradients, exposing them per parameter slot.

use super::mat::Mat;

/// Named parameter store. Gradients are kept in a parallel vector of the
/// same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    mats: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet {
            names: Vec::new(),
            mats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, mat: Mat) -> usize {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name.to_string());
        self.mats.push(mat);
        self.mats.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.mats[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.mats[id]
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn zero_grads(&self) -> Vec<Mat> {
        self.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.names.iter().zip(&self.mats)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Const,
    Param { id: usize },
    /// Row gather from a parameter table.
    Gather { param: usize, ids: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRowBroadcast { a: NodeId, bias: NodeId },
    AddConst { a: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, s: f64 },
    Relu { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNormRows { x: NodeId, gain: NodeId, bias: NodeId },
    SliceCols { a: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    CumSumRows { a: NodeId },
    SumAll { a: NodeId },
    MaskedMaxRows { x: NodeId, argmax: Vec<Vec<usize>> },
    CrossEntropyRows { logits: NodeId, targets: Vec<usize> },
}

struct Node {
    value: Mat,
    op: Op,
}

const LN_EPS: f64 = 1e-5;

/// One forward tape. Build nodes eagerly, call [`Graph::backward`] on a
/// scalar node, then read parameter gradients from [`Graph::param_grads`].
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Graph<'p> {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let m = self.value(id);
        assert_eq!((m.rows, m.cols), (1, 1), "scalar node expected");
        m.data[0]
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: usize) -> NodeId {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param { id })
    }

    pub fn param_named(&mut self, name: &str) -> NodeId {
        let id = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn gather(&mut self, param: usize, ids: &[usize]) -> NodeId {
        let table = self.params.get(param);
        let mut value = Mat::zeros(ids.len(), table.cols);
        for (r, &i) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(table.row(i));
        }
        self.push(
            value,
            Op::Gather {
                param,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul { a, b })
    }

    /// `a @ b^T`, used for attention scores.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(value, Op::MatMulNT { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add { a, b })
    }

    /// Adds a 1 x c bias row to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let bias_row = self.value(bias).clone();
        assert_eq!(bias_row.rows, 1);
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            for (v, &b) in value.row_mut(r).iter_mut().zip(&bias_row.data) {
                *v += b;
            }
        }
        self.push(value, Op::AddRowBroadcast { a, bias })
    }

    /// Adds a constant matrix (no gradient through the constant); the
    /// straight-through building block.
    pub fn add_const(&mut self, a: NodeId, constant: &Mat) -> NodeId {
        let mut value = self.value(a).clone();
        value.add_assign(constant);
        self.push(value, Op::AddConst { a })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b).clone();
        let mut value = self.value(a).clone();
        assert_eq!((value.rows, value.cols), (bv.rows, bv.cols));
        for (v, &m) in value.data.iter_mut().zip(&bv.data) {
            *v *= m;
        }
        self.push(value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.scale_assign(s);
        self.push(value, Op::Scale { a, s })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for v in &mut value.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(value, Op::Relu { a })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(value, Op::SoftmaxRows { a })
    }

    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let gain_row = self.value(gain).clone();
        let bias_row = self.value(bias).clone();
        let mut value = self.value(x).clone();
        let cols = value.cols as f64;
        for r in 0..value.rows {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gain_row.data[c] + bias_row.data[c];
            }
        }
        self.push(value, Op::LayerNormRows { x, gain, bias })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(a);
        let mut value = Mat::zeros(src.rows, len);
        for r in 0..src.rows {
            value
                .row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Mat::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let part = self.value(p);
            assert_eq!(part.rows, rows);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + part.cols].copy_from_slice(part.row(r));
            }
            offset += part.cols;
        }
        self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn cumsum_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            let row = value.row_mut(r);
            for c in 1..row.len() {
                row[c] += row[c - 1];
            }
        }
        self.push(value, Op::CumSumRows { a })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::SumAll { a })
    }

    /// Summed softmax cross-entropy of each row against its target column.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let values = self.value(logits);
        assert_eq!(values.rows, targets.len());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = values.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t];
        }
        self.push(
            Mat::from_vec(1, 1, vec![total]),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Componentwise max over the masked rows, one output row per mask.
    /// Gradient flows to the first position attaining each max. Empty masks
    /// yield zero rows with no gradient.
    pub fn masked_max_rows(&mut self, x: NodeId, masks: &[Vec<bool>]) -> NodeId {
        let src = self.value(x);
        let mut value = Mat::zeros(masks.len(), src.cols);
        let mut argmax = vec![vec![usize::MAX; src.cols]; masks.len()];
        for (r, mask) in masks.iter().enumerate() {
            assert_eq!(mask.len(), src.rows, "mask length must match rows");
            for c in 0..src.cols {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for (i, &on) in mask.iter().enumerate() {
                    if on && src.get(i, c) > best {
                        best = src.get(i, c);
                        best_i = i;
                    }
                }
                if best_i != usize::MAX {
                    value.set(r, c, best);
                    argmax[r][c] = best_i;
                }
            }
        }
        self.push(value, Op::MaskedMaxRows { x, argmax })
    }

    /// Reverse pass from a scalar loss node; returns per-parameter
    /// gradients aligned with the [`ParamSet`].
    pub fn backward(&self, loss: NodeId) -> Vec<Mat> {
        let mut grads: Vec<Option<Mat>> = self.nodes.iter().map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut param_grads = self.params.zero_grads();

        for idx in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param { id } => param_grads[*id].add_assign(&grad),
                Op::Gather { param, ids } => {
                    for (r, &i) in ids.iter().enumerate() {
                        let dst = param_grads[*param].row_mut(i);
                        for (d, &g) in dst.iter_mut().zip(grad.row(r)) {
                            *d += g;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let da = grad.matmul_nt(&self.nodes[b.0].value);
                    let db = self.nodes[a.0].value.matmul_tn(&grad);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNT { a, b } => {
                    // y = a b^T: da = g b, db = g^T a.
                    let da = grad.matmul(&self.nodes[b.0].value);
                    let db = grad.matmul_tn(&self.nodes[a.0].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddRowBroadcast { a, bias } => {
                    let mut db = Mat::zeros(1, grad.cols);
                    for r in 0..grad.rows {
                        for (d, &g) in db.data.iter_mut().zip(grad.row(r)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *a, grad);
                    accumulate(&mut grads, *bias, db);
                }
                Op::AddConst { a } => accumulate(&mut grads, *a, grad),
                Op::Mul { a, b } => {
                    let mut da = grad.clone();
                    for (d, &v) in da.data.iter_mut().zip(&self.nodes[b.0].value.data) {
                        *d *= v;
                    }
                    let mut db = grad;
                    for (d, &v) in db.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        *d *= v;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale { a, s } => {
                    let mut da = grad;
                    da.scale_assign(*s);
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu { a } => {
                    let mut da = grad;
                    for (d, &v) in da.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows { a } => {
                    let y = &node.value;
                    let mut da = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 = y
                            .row(r)
                            .iter()
                            .zip(grad.row(r))
                            .map(|(&yv, &g)| yv * g)
                            .sum();
                        for c in 0..y.cols {
                            da.set(r, c, y.get(r, c) * (grad.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let xv = &self.nodes[x.0].value;
                    let gain_row = &self.nodes[gain.0].value;
                    let cols = xv.cols as f64;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    let mut dgain = Mat::zeros(1, xv.cols);
                    let mut dbias = Mat::zeros(1, xv.cols);
                    for r in 0..xv.rows {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / cols;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols;
                        let inv_std = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> = (0..xv.cols)
                            .map(|c| grad.get(r, c) * gain_row.data[c])
                            .collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / cols;
                        let mean_dxhat_xhat: f64 = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(&d, &h)| d * h)
                            .sum::<f64>()
                            / cols;
                        for c in 0..xv.cols {
                            dx.set(
                                r,
                                c,
                                inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat),
                            );
                            dgain.data[c] += grad.get(r, c) * xhat[c];
                            dbias.data[c] += grad.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::SliceCols { a, start } => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Mat::zeros(src.rows, src.cols);
                    for r in 0..grad.rows {
                        da.row_mut(r)[*start..*start + grad.cols].copy_from_slice(grad.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p.0].value.cols;
                        let mut dp = Mat::zeros(grad.rows, cols);
                        for r in 0..grad.rows {
                            dp.row_mut(r)
                                .copy_from_slice(&grad.row(r)[offset..offset + cols]);
                        }
                        accumulate(&mut grads, p, dp);
                        offset += cols;
                    }
                }
                Op::CumSumRows { a } => {
                    let mut da = grad;
                    for r in 0..da.rows {
                        let row = da.row_mut(r);
                        for c in (0..row.len().saturating_sub(1)).rev() {
                            row[c] += row[c + 1];
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll { a } => {
                    let src = &self.nodes[a.0].value;
                    let g = grad.data[0];
                    let da = Mat::from_vec(src.rows, src.cols, vec![g; src.rows * src.cols]);
                    accumulate(&mut grads, *a, da);
                }
                Op::MaskedMaxRows { x, argmax } => {
                    let src = &self.nodes[x.0].value;
                    let mut da = Mat::zeros(src.rows, src.cols);
                    for (r, row_argmax) in argmax.iter().enumerate() {
                        for (c, &i) in row_argmax.iter().enumerate() {
                            if i != usize::MAX {
                                da.set(i, c, da.get(i, c) + grad.get(r, c));
                            }
                        }
                    }
                    accumulate(&mut grads, *x, da);
                }
                Op::CrossEntropyRows { logits, targets } => {
                    let values = &self.nodes[logits.0].value;
                    let g = grad.data[0];
                    let mut da = Mat::zeros(values.rows, values.cols);
                    for (r, &t) in targets.iter().enumerate() {
                        let row = values.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        for c in 0..values.cols {
                            let soft = (row[c] - max).exp() / total;
                            let y = if c == t { 1.0 } else { 0.0 };
                            da.set(r, c, g * (soft - y));
                        }
                    }
                    accumulate(&mut grads, *logits, da);
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, delta: Mat) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
