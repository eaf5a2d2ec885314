//! Reverse-mode automatic differentiation over 2-D f64 matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! so nodes are topologically ordered by construction. Parameters are read
//! in place from a borrowed [`ParamStore`]; [`Graph::backward`] walks the
//! tape once in reverse and returns per-parameter adjoints.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    SumAll(Var),
    RowSum(Var),
    Broadcast(Var),
    CrossEntropy { logits: Var, gold: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    /// Empty for parameters, which are read from the store.
    value: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

// out[r,c] = a[r,k] * b[k,c]
fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let o = &mut out[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (ov, &bv) in o.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *ov += av * bv;
            }
        }
    }
    out
}

// out[r,c] = a[r,k] * b[c,k]^T
fn matmul_bt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..c {
            out[i * c + j] = ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

// out[k,c] = a[r,k]^T * b[r,c]
fn matmul_at(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let br = &b[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (ov, &bv) in out[p * c..(p + 1) * c].iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
    out
}

/// Row-wise max-shifted softmax. Entries with `valid[k] == false` get
/// probability 0; a row with no valid entry is all zeros.
pub fn softmax_rows_in_place(x: &mut [f64], cols: usize, valid: Option<&[bool]>) {
    for (i, row) in x.chunks_mut(cols).enumerate() {
        let ok = |j: usize| valid.is_none_or(|m| m[i * cols + j]);
        let max = row.iter().enumerate().filter(|(j, _)| ok(*j)).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v = if ok(j) { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Max-shifted softmax of a vector.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut out = x.to_vec();
    softmax_rows_in_place(&mut out, x.len(), None);
    Ok(out)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: HashMap::new(), consumed: false }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Constant with no gradient.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("input {rows}x{cols} with {} values", data.len())));
        }
        Ok(self.push(Op::Input, rows, cols, data))
    }

    /// The parameter as a matrix (vectors are single rows). Repeated calls
    /// return the same node so adjoints accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let (r, c) = self.params.get(id).dims2();
        let v = self.push(Op::Param(id), r, c, Vec::new());
        self.param_vars.insert(id, v);
        v
    }

    /// Rows `ids` of an embedding table.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.params.get(table);
        let (rows, cols) = t.dims2();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(Error::Shape(format!("gather: row {i} of {rows}")));
            }
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(Op::Gather { table, ids: ids.to_vec() }, ids.len(), cols, out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = matmul(self.value(a), self.value(b), sa.0, sa.1, sb.1);
        Ok(self.push(Op::MatMul(a, b), sa.0, sb.1, out))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_bt", sa, sb));
        }
        let out = matmul_bt(self.value(a), self.value(b), sa.0, sa.1, sb.0);
        Ok(self.push(Op::MatMulBT(a, b), sa.0, sb.0, out))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(op, sa.0, sa.1, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    fn row_broadcast(&mut self, a: Var, b: Var, sub: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb != (1, sa.1) {
            return Err(shape_err("row broadcast", sa, sb));
        }
        let bv = self.value(b);
        let out: Vec<f64> = self
            .value(a)
            .chunks(sa.1)
            .flat_map(|row| row.iter().zip(bv).map(move |(&x, &y)| if sub { x - y } else { x + y }))
            .collect();
        let op = if sub { Op::SubRow(a, b) } else { Op::AddRow(a, b) };
        Ok(self.push(op, sa.0, sa.1, out))
    }

    /// `a + b` with the single row `b` broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast(a, b, false)
    }

    /// `a - b` with the single row `b` broadcast over `a`'s rows.
    pub fn sub_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast(a, b, true)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, r, c, out)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Per-row normalization to zero mean and unit variance, then
    /// `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(shape_err("layer_norm", (r, c), self.shape(gain)));
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.value(x).chunks(c) {
            let (xh, is) = normalize(row);
            xhat.extend(xh);
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let out = xhat.chunks(c).flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b)).collect();
        Ok(self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, r, c, out))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        softmax_rows_in_place(&mut out, c, None);
        self.push(Op::SoftmaxRows(x), r, c, out)
    }

    /// Row softmax restricted to valid entries: entry `(i, j)` takes part iff
    /// `rows_valid[i] && cols_valid[j]`. Excluded entries get weight 0 and
    /// receive no gradient; a row with nothing valid is all zeros.
    pub fn masked_softmax_rows(
        &mut self,
        x: Var,
        rows_valid: Option<&[bool]>,
        cols_valid: Option<&[bool]>,
    ) -> Result<Var> {
        let (r, c) = self.shape(x);
        if rows_valid.is_some_and(|m| m.len() != r) || cols_valid.is_some_and(|m| m.len() != c) {
            return Err(Error::Shape(format!("mask does not match {r}x{c}")));
        }
        let valid: Vec<bool> =
            (0..r * c).map(|k| rows_valid.is_none_or(|m| m[k / c]) && cols_valid.is_none_or(|m| m[k % c])).collect();
        let mut out = self.value(x).to_vec();
        softmax_rows_in_place(&mut out, c, Some(&valid));
        Ok(self.push(Op::SoftmaxRows(x), r, c, out))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let out = self.value(x).chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        Ok(self.push(Op::SliceCols { x, start }, r, len, out))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > r {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {r}")));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.push(Op::SliceRows { x, start }, len, c, out))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.shape(*parts.first().ok_or(Error::Empty("concat_cols"))?).0;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), r, c, out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.shape(*parts.first().ok_or(Error::Empty("concat_rows"))?).1;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let r: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), r, c, out))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(Op::Transpose(x), c, r, out)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Op::SumAll(x), 1, 1, vec![s])
    }

    /// `[r, c] -> [r, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).chunks(c).map(|row| row.iter().sum()).collect();
        self.push(Op::RowSum(x), r, 1, out)
    }

    /// Expands a 1x1 node to `rows x cols`.
    pub fn broadcast(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.shape(x) != (1, 1) {
            return Err(shape_err("broadcast", self.shape(x), (1, 1)));
        }
        let v = self.value(x)[0];
        Ok(self.push(Op::Broadcast(x), rows, cols, vec![v; rows * cols]))
    }

    /// `-log softmax(logits)[gold]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if r != 1 || gold >= c {
            return Err(Error::Shape(format!("cross_entropy: {r}x{c} logits, gold {gold}")));
        }
        let z = self.value(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[gold];
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        Ok(self.push(Op::CrossEntropy { logits, gold, probs }, 1, 1, vec![loss]))
    }

    /// Exact adjoints of the scalar `loss` with respect to every parameter
    /// reached from it. A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params.len());

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            let n = nodes[v.0].rows * nodes[v.0].cols;
            grads[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            let nodes = &self.nodes;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.add_dense(*id, g.len(), &g),
                Op::Gather { table, ids } => {
                    for (k, &row) in ids.iter().enumerate() {
                        out.add_row(*table, cols, row, &g[k * cols..(k + 1) * cols]);
                    }
                }
                Op::MatMul(a, b) => {
                    let k = nodes[a.0].cols;
                    let da = matmul_bt(&g, self.value(*b), rows, cols, k);
                    let db = matmul_at(self.value(*a), &g, rows, k, cols);
                    add_into(acc(&mut grads, nodes, *a), &da);
                    add_into(acc(&mut grads, nodes, *b), &db);
                }
                Op::MatMulBT(a, b) => {
                    let k = nodes[a.0].cols;
                    let da = matmul(&g, self.value(*b), rows, cols, k);
                    let db = matmul_at(&g, self.value(*a), rows, cols, k);
                    add_into(acc(&mut grads, nodes, *a), &da);
                    add_into(acc(&mut grads, nodes, *b), &db);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, nodes, *a), &g);
                    add_into(acc(&mut grads, nodes, *b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, nodes, *a), &g);
                    let gb = acc(&mut grads, nodes, *b);
                    gb.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    add_into(acc(&mut grads, nodes, *a), &da);
                    add_into(acc(&mut grads, nodes, *b), &db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let y = &node.value;
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g / b).collect();
                    let db: Vec<f64> = g.iter().zip(bv).zip(y).map(|((g, b), y)| -g * y / b).collect();
                    add_into(acc(&mut grads, nodes, *a), &da);
                    add_into(acc(&mut grads, nodes, *b), &db);
                }
                Op::AddRow(a, b) | Op::SubRow(a, b) => {
                    let sign = if matches!(node.op, Op::SubRow(..)) { -1.0 } else { 1.0 };
                    add_into(acc(&mut grads, nodes, *a), &g);
                    let gb = acc(&mut grads, nodes, *b);
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += sign * y);
                    }
                }
                Op::Scale(a, k) => {
                    let ga = acc(&mut grads, nodes, *a);
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += k * y);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_into(acc(&mut grads, nodes, *a), &d);
                }
                Op::Relu(a) => {
                    let d: Vec<f64> =
                        g.iter().zip(self.value(*a)).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                    add_into(acc(&mut grads, nodes, *a), &d);
                }
                Op::Abs(a) => {
                    let d: Vec<f64> =
                        g.iter().zip(self.value(*a)).map(|(g, x)| g * x.signum() * f64::from(*x != 0.0)).collect();
                    add_into(acc(&mut grads, nodes, *a), &d);
                }
                Op::Sqrt(a) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * 0.5 / y).collect();
                    add_into(acc(&mut grads, nodes, *a), &d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    let mut dx = vec![0.0; rows * cols];
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                            dg[j] += gr[j] * xh[j];
                            db[j] += gr[j];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            dx[i * cols + j] = inv_std[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                    add_into(acc(&mut grads, nodes, *x), &dx);
                    add_into(acc(&mut grads, nodes, *gain), &dg);
                    add_into(acc(&mut grads, nodes, *bias), &db);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[i * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    add_into(acc(&mut grads, nodes, *x), &dx);
                }
                Op::SliceCols { x, start } => {
                    let xc = nodes[x.0].cols;
                    let gx = acc(&mut grads, nodes, *x);
                    for i in 0..rows {
                        let dst = &mut gx[i * xc + start..i * xc + start + cols];
                        dst.iter_mut().zip(&g[i * cols..(i + 1) * cols]).for_each(|(a, b)| *a += b);
                    }
                }
                Op::SliceRows { x, start } => {
                    let gx = acc(&mut grads, nodes, *x);
                    let dst = &mut gx[start * cols..(start + rows) * cols];
                    dst.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = nodes[p.0].cols;
                        let gp = acc(&mut grads, nodes, p);
                        for i in 0..rows {
                            let src = &g[i * cols + offset..i * cols + offset + pc];
                            gp[i * pc..(i + 1) * pc].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p.0].rows * cols;
                        add_into(acc(&mut grads, nodes, p), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Transpose(x) => {
                    // node is cols x rows of x
                    let gx = acc(&mut grads, nodes, *x);
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
                Op::SumAll(x) => {
                    let gx = acc(&mut grads, nodes, *x);
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
                Op::RowSum(x) => {
                    let xc = nodes[x.0].cols;
                    let gx = acc(&mut grads, nodes, *x);
                    for (i, row) in gx.chunks_mut(xc).enumerate() {
                        row.iter_mut().for_each(|a| *a += g[i]);
                    }
                }
                Op::Broadcast(x) => {
                    let s: f64 = g.iter().sum();
                    acc(&mut grads, nodes, *x)[0] += s;
                }
                Op::CrossEntropy { logits, gold, probs } => {
                    let gl = acc(&mut grads, nodes, *logits);
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *gold { 1.0 } else { 0.0 };
                        gl[j] += g[0] * (p - onehot);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// `(x - mean) / sqrt(var + eps)` and the inverse standard deviation.
pub fn normalize(row: &[f64]) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}
