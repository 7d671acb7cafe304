//! A small reverse-mode tape over dense f64 matrices.
//!
//! Every value is a 2-D matrix; vectors are 1×n rows and scalars are 1×1.
//! The op set is exactly what the encoder, the heads and the CRF need.

use std::collections::HashMap;

use ndarray::{s, Axis, Zip};

use crate::params::{Grads, Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    /// a + broadcast 1×n row
    AddRow(Var, Var),
    Mul(Var, Var),
    /// each row r of a scaled by col[r, 0]
    MulCol(Var, Var),
    RepeatRows(Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows(Var, Vec<usize>),
    MeanRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    /// elementwise multiply by a fixed (pre-scaled) mask
    Dropout(Var, Mat),
    /// sum of chosen entries, as 1×1
    PickSum(Var, Vec<(usize, usize)>),
    /// weighted sum of 1×1 scalars
    WeightedSum(Vec<(Var, f64)>),
    /// 1×1 output whose gradients w.r.t. the inputs were computed in the forward pass
    Custom(Vec<(Var, Mat)>),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records operations for one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    /// The tape node for a parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let out = self.value(a) * self.value(col);
        self.push(out, Op::MulCol(a, col))
    }

    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let out = r.broadcast((n, r.ncols())).expect("1-row broadcast").to_owned();
        self.push(out, Op::RepeatRows(row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let out = self.value(table).select(Axis(0), ids);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        self.push(out, Op::SelectRows(a, rows.to_vec()))
    }

    /// Mean over the listed rows, as a 1×n row.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "mean over no rows");
        let picked = self.value(a).select(Axis(0), rows);
        let out = picked.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a, rows.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, end))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// Multiplies by a fixed mask (already divided by the keep probability).
    pub fn dropout_mask(&mut self, a: Var, mask: Mat) -> Var {
        let out = self.value(a) * &mask;
        self.push(out, Op::Dropout(a, mask))
    }

    pub fn pick_sum(&mut self, a: Var, entries: &[(usize, usize)]) -> Var {
        let v = self.value(a);
        let total: f64 = entries.iter().map(|&(r, c)| v[[r, c]]).sum();
        self.push(Mat::from_elem((1, 1), total), Op::PickSum(a, entries.to_vec()))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        self.push(Mat::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()))
    }

    /// A scalar computed outside the tape, with its input gradients supplied.
    pub fn custom_scalar(&mut self, value: f64, input_grads: Vec<(Var, Mat)>) -> Var {
        for (v, g) in &input_grads {
            debug_assert_eq!(self.value(*v).dim(), g.dim());
        }
        self.push(Mat::from_elem((1, 1), value), Op::Custom(input_grads))
    }

    /// Backpropagates from a 1×1 node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones(self.value(loss).dim()));
        let mut out = Grads::zeros_like(self.params);

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulCol(a, col) => {
                    let ga = &g * self.value(*col);
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, gc);
                }
                Op::RepeatRows(row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, y * &(&g - &dot));
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, &g - &(p * &total));
                }
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).clone();
                    Zip::from(&mut ga).and(&g).for_each(|x, &g| {
                        let u = GELU_C * (*x + 0.044715 * *x * *x * *x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * *x * *x);
                        *x = g * (0.5 * (1.0 + t) + 0.5 * *x * (1.0 - t * t) * du);
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = xhat.ncols() as f64;
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * self.value(*gamma);
                    let mut gx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = (&dh * &xh).sum();
                        let scale = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = scale * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Mat::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    let share = &g.row(0) / rows.len() as f64;
                    for &src in rows {
                        let mut dst = ga.row_mut(src);
                        dst += &share;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SliceCols(a, start, end) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g * mask),
                Op::PickSum(a, entries) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    for &(r, c) in entries {
                        ga[[r, c]] += g[[0, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        acc(&mut grads, v, Mat::from_elem((1, 1), w * g[[0, 0]]));
                    }
                }
                Op::Custom(inputs) => {
                    for (v, local) in inputs {
                        acc(&mut grads, *v, local * g[[0, 0]]);
                    }
                }
            }
        }
        out
    }
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

pub fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` w.r.t. every parameter entry,
    /// compared against the tape's backward pass.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let analytic = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss)
        };
        let eval = |store: &ParamStore| {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.scalar(loss)
        };
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            let (rows, cols) = store.get(id).dim();
            for r in 0..rows {
                for c in 0..cols {
                    let orig = store.get(id)[[r, c]];
                    store.get_mut(id)[[r, c]] = orig + h;
                    let plus = eval(store);
                    store.get_mut(id)[[r, c]] = orig - h;
                    let minus = eval(store);
                    store.get_mut(id)[[r, c]] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = analytic.get(id).map_or(0.0, |g| g[[r, c]]);
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(err < 1e-5, "{} [{r},{c}]: analytic {a} numeric {numeric}", store.name(id));
                }
            }
        }
    }

    fn random_store(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        for &(n, r, c) in shapes {
            store.add_normal(n, r, c, 0.7, &mut rng);
        }
        store
    }

    #[test]
    fn matmul_softmax_layernorm_chain() {
        let mut store = random_store(&[("x", 3, 4), ("w", 4, 5), ("b", 1, 5), ("g", 1, 5), ("beta", 1, 5)]);
        let ids: Vec<_> = store.ids().collect();
        check(&mut store, |t| {
            let x = t.param(ids[0]);
            let w = t.param(ids[1]);
            let b = t.param(ids[2]);
            let h = t.matmul(x, w);
            let h = t.add_row(h, b);
            let gamma = t.param(ids[3]);
            let beta = t.param(ids[4]);
            let h = t.layer_norm(h, gamma, beta);
            let h = t.gelu(h);
            let p = t.log_softmax_rows(h);
            t.pick_sum(p, &[(0, 1), (1, 3), (2, 0)])
        });
    }

    #[test]
    fn attention_style_ops() {
        let mut store = random_store(&[("q", 4, 3), ("k", 4, 3), ("v", 4, 6), ("col", 4, 1), ("row", 1, 6)]);
        let ids: Vec<_> = store.ids().collect();
        check(&mut store, |t| {
            let q = t.param(ids[0]);
            let k = t.param(ids[1]);
            let v = t.param(ids[2]);
            let scores = t.matmul_t(q, k);
            let scores = t.scale(scores, 0.5);
            let attn = t.softmax_rows(scores);
            let ctx = t.matmul(attn, v);
            let left = t.slice_cols(ctx, 0, 3);
            let right = t.slice_cols(ctx, 3, 6);
            let mixed = t.mul(left, right);
            let col = t.param(ids[3]);
            let scaled = t.mul_col(v, col);
            let row = t.param(ids[4]);
            let rep = t.repeat_rows(row, 4);
            let both = t.add(scaled, rep);
            let top = t.slice_rows(both, 0, 2);
            let cat = t.concat_rows(&[top, both]);
            let cat = t.tanh(cat);
            let wide = t.concat_cols(&[mixed, mixed]);
            let m1 = t.mean_rows(cat, &[0, 2, 5]);
            let m2 = t.select_rows(wide, &[3, 1]);
            let tr = t.transpose(m2);
            let s1 = t.pick_sum(m1, &[(0, 0), (0, 4)]);
            let s2 = t.pick_sum(tr, &[(1, 0), (5, 1)]);
            t.weighted_sum(&[(s1, 1.5), (s2, -0.5)])
        });
    }

    #[test]
    fn gather_and_dropout() {
        let mut store = random_store(&[("emb", 5, 3)]);
        let id = store.ids().next().unwrap();
        let mask = array![[2.0, 0.0, 2.0], [0.0, 2.0, 2.0], [2.0, 2.0, 0.0]];
        check(&mut store, |t| {
            let e = t.param(id);
            let rows = t.gather(e, &[4, 1, 4]);
            let d = t.dropout_mask(rows, mask.clone());
            let sq = t.mul(d, d);
            t.pick_sum(sq, &[(0, 0), (1, 1), (2, 1), (0, 2)])
        });
    }

    #[test]
    fn param_nodes_are_shared() {
        let store = random_store(&[("w", 2, 2)]);
        let id = store.ids().next().unwrap();
        let mut tape = Tape::new(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_helpers_are_stable() {
        let x = array![[1000.0, 1000.0], [-1000.0, 0.0]];
        let p = softmax_rows(&x);
        assert!((p[[0, 0]] - 0.5).abs() < 1e-12);
        let lp = log_softmax_rows(&x);
        assert!(lp.iter().all(|v| v.is_finite()));
    }
}
