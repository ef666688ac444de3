use super::params::{Gradients, ParamId, ParamStore};
use super::{gemm, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberately wrong backward rules, used as negative controls for the
/// finite-difference harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// GELU backward drops the cubic term of its derivative.
    GeluBackward,
    /// Softmax backward skips the centering term.
    SoftmaxBackward,
}

type Result<T> = std::result::Result<T, TensorError>;

enum Op<T> {
    Constant,
    Variable,
    Param,
    MatMul { a: Var, b: Var, a_t: bool, b_t: bool, k: usize },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    Mask(Var, Vec<T>),
    RowScale(Var, Var),
    Softmax(Var),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    StackRows(Vec<(Var, usize)>),
    Colwise { query: Var, cands: Vec<Var>, weights: Option<Var>, scale: T, attn: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    Bce { probs: Var, targets: Vec<Option<T>>, count: usize },
    Sum(Var),
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-threaded operation tape.
///
/// Parameters are read from a borrowed [`ParamStore`]; their gradients are
/// accumulated on the tape and handed back as [`Gradients`].
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
    accumulated: Vec<Option<Vec<T>>>,
    fault: Option<Fault>,
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T, T) {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + three * k * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy, t)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            accumulated: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.rows_cols();
        self.push(t.data().to_vec(), r, c, Op::Constant, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(TensorError::shape("constant", "data length"));
        }
        Ok(self.push(data, rows, cols, Op::Constant, false))
    }

    /// A leaf whose gradient is accumulated and readable through [`Graph::grad`].
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.rows_cols();
        self.push(t.data().to_vec(), r, c, Op::Variable, true)
    }

    /// The parameter `id` as a leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let t = self.params.get(id);
        let (r, c) = t.rows_cols();
        let v = self.push(t.data().to_vec(), r, c, Op::Param, true);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    fn matmul_general(&mut self, a: Var, b: Var, a_t: bool, b_t: bool, op: &'static str) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(TensorError::shape(
                op,
                format!("{ar}x{ac} (t={a_t}) with {br}x{bc} (t={b_t})"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a), a_t, self.value(b), b_t, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, m, n, Op::MatMul { a, b, a_t, b_t, k }, rg))
    }

    /// `a·b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, false, "matmul")
    }

    /// `a·bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, true, "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(TensorError::shape(
                "add",
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, r, c, Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(TensorError::shape(
                "add_row",
                format!("{r}x{c} with row {:?}", self.dims(row)),
            ));
        }
        let rv = self.value(row);
        let out: Vec<T> = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| *x + *y))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, r, c, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|x| *x * s).collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a);
        self.push(out, r, c, Op::Scale(a, s), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(TensorError::shape(
                "mul",
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x * *y)
            .collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, r, c, Op::Mul(a, b), rg))
    }

    /// Multiplies by a fixed mask, e.g. an inverted-dropout Bernoulli mask.
    pub fn mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(TensorError::shape("mask", "mask length"));
        }
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a);
        Ok(self.push(out, r, c, Op::Mask(a, mask), rg))
    }

    /// Scales row `i` of `a` by the `i`-th entry of `w` (`r×1` or `1×r`).
    pub fn row_scale(&mut self, a: Var, w: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.value(w).len() != r {
            return Err(TensorError::shape(
                "row_scale",
                format!("{r} rows with {:?} weights", self.dims(w)),
            ));
        }
        let wv = self.value(w);
        let out = self
            .value(a)
            .chunks(c.max(1))
            .zip(wv)
            .flat_map(|(row, s)| row.iter().map(move |x| *x * *s))
            .collect();
        let rg = self.rg(a) || self.rg(w);
        Ok(self.push(out, r, c, Op::RowScale(a, w), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(out, r, c, Op::Softmax(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a);
        self.push(out, r, c, Op::Sigmoid(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu_parts(x).0).collect();
        let (r, c) = self.dims(a);
        let rg = self.rg(a);
        self.push(out, r, c, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1×c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(TensorError::shape("layer_norm", "gamma/beta must be 1xc"));
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(c).unwrap();
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c.max(1)) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, r, c, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Gathers rows `ids` of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, c) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index {
                    op: "embedding",
                    index: id,
                    size: vocab,
                });
            }
            out.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let rg = self.rg(table);
        Ok(self.push(out, ids.len(), c, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(TensorError::shape(
                "slice_cols",
                format!("[{start}, {}) of {c} columns", start + len),
            ));
        }
        let out = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(out, r, len, Op::SliceCols { a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.dims(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(TensorError::shape("concat_cols", "row counts differ"));
        }
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, r, c, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks one chosen row from each source into a new matrix.
    pub fn stack_rows(&mut self, rows: &[(Var, usize)]) -> Result<Var> {
        let c = rows.first().map(|&(v, _)| self.dims(v).1).unwrap_or(0);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &(v, row) in rows {
            let (vr, vc) = self.dims(v);
            if vc != c {
                return Err(TensorError::shape("stack_rows", "column counts differ"));
            }
            if row >= vr {
                return Err(TensorError::Index {
                    op: "stack_rows",
                    index: row,
                    size: vr,
                });
            }
            out.extend_from_slice(&self.value(v)[row * c..(row + 1) * c]);
        }
        let rg = rows.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(out, rows.len(), c, Op::StackRows(rows.to_vec()), rg))
    }

    /// Col-wise attention: row `j` of the result attends with query row
    /// `query[j]` over the `m` candidate rows `cands[i][j]`, scaled by
    /// `1/√c`. With `weights`, candidate `i`'s value vector is multiplied by
    /// `weights[i]` while its key is left unweighted.
    pub fn colwise_attention(&mut self, query: Var, cands: &[Var], weights: Option<Var>) -> Result<Var> {
        let (l, c) = self.dims(query);
        if cands.is_empty() {
            return Err(TensorError::shape("colwise_attention", "no candidates"));
        }
        if cands.iter().any(|&k| self.dims(k) != (l, c)) {
            return Err(TensorError::shape("colwise_attention", "candidate shape differs from query"));
        }
        let m = cands.len();
        if let Some(w) = weights {
            if self.value(w).len() != m {
                return Err(TensorError::shape("colwise_attention", "weight count"));
            }
        }
        let scale = T::one() / T::from_usize(c).unwrap().sqrt();
        let q = self.value(query);
        let wv: Vec<T> = match weights {
            Some(w) => self.value(w).to_vec(),
            None => vec![T::one(); m],
        };
        let mut attn = vec![T::zero(); l * m];
        let mut out = vec![T::zero(); l * c];
        for j in 0..l {
            let qj = &q[j * c..(j + 1) * c];
            let a = &mut attn[j * m..(j + 1) * m];
            for (i, &k) in cands.iter().enumerate() {
                let kj = &self.nodes[k.0].value[j * c..(j + 1) * c];
                a[i] = qj.iter().zip(kj).map(|(x, y)| *x * *y).sum::<T>() * scale;
            }
            softmax_in_place(a);
            let oj = &mut out[j * c..(j + 1) * c];
            for (i, &k) in cands.iter().enumerate() {
                let kj = &self.nodes[k.0].value[j * c..(j + 1) * c];
                let f = a[i] * wv[i];
                oj.iter_mut().zip(kj).for_each(|(o, x)| *o += f * *x);
            }
        }
        let rg = self.rg(query) || cands.iter().any(|&k| self.rg(k)) || weights.is_some_and(|w| self.rg(w));
        Ok(self.push(
            out,
            l,
            c,
            Op::Colwise {
                query,
                cands: cands.to_vec(),
                weights,
                scale,
                attn,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over rows with a target; `None` rows are masked.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("{r} rows, {} targets", targets.len()),
            ));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = T::zero();
        let mut count = 0;
        for (row, t) in probs.chunks_mut(c.max(1)).zip(targets) {
            softmax_in_place(row);
            if let Some(t) = *t {
                if t >= c {
                    return Err(TensorError::Index {
                        op: "cross_entropy",
                        index: t,
                        size: c,
                    });
                }
                total -= row[t].max(T::min_positive_value()).ln();
                count += 1;
            }
        }
        let loss = if count > 0 {
            total / T::from_usize(count).unwrap()
        } else {
            T::zero()
        };
        let rg = self.rg(logits);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities against `0/1` targets.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[Option<T>]) -> Result<Var> {
        let p = self.value(probs);
        if targets.len() != p.len() {
            return Err(TensorError::shape(
                "binary_cross_entropy",
                format!("{} probabilities, {} targets", p.len(), targets.len()),
            ));
        }
        let mut total = T::zero();
        let mut count = 0;
        for (&pi, t) in p.iter().zip(targets) {
            if let Some(y) = *t {
                let pc = clamp_prob(pi);
                total -= y * pc.ln() + (T::one() - y) * (T::one() - pc).ln();
                count += 1;
            }
        }
        let loss = if count > 0 {
            total / T::from_usize(count).unwrap()
        } else {
            T::zero()
        };
        let rg = self.rg(probs);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(vec![s], 1, 1, Op::Sum(a), rg)
    }

    /// Accumulated gradient of a variable or parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.accumulated.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.accumulated.clear();
    }

    /// Parameter gradients accumulated so far.
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::for_store(self.params);
        self.accumulate_param_grads(&mut out);
        out
    }

    pub fn accumulate_param_grads(&self, out: &mut Gradients<T>) {
        for (pid, v) in self.param_nodes.iter().enumerate() {
            if let Some(g) = v.and_then(|v| self.grad(v)) {
                out.accumulate(ParamId(pid), g);
            }
        }
    }

    /// Reverse-mode sweep from a `1×1` loss. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NotScalar { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        if self.accumulated.len() < self.nodes.len() {
            self.accumulated.resize(self.nodes.len(), None);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Variable | Op::Param) {
                match &mut self.accumulated[idx] {
                    Some(acc) => add_into(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::MatMul { a, b, a_t, b_t, k } => {
                let (m, n, k) = (rows, cols, *k);
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.buf(grads, *a) {
                    if !a_t {
                        // dA (m×k) = dC·op(B)ᵀ
                        gemm(m, n, k, g, false, bv, !b_t, da, true);
                    } else {
                        // stored A is k×m: op(B)·dCᵀ
                        gemm(k, n, m, bv, *b_t, g, true, da, true);
                    }
                }
                if let Some(db) = self.buf(grads, *b) {
                    if !b_t {
                        // dB (k×n) = op(A)ᵀ·dC
                        gemm(k, m, n, av, !a_t, g, false, db, true);
                    } else {
                        // stored B is n×k: dCᵀ·op(A)
                        gemm(n, m, k, g, true, av, *a_t, db, true);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.buf(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.buf(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(da) = self.buf(grads, *a) {
                    add_into(da, g);
                }
                if let Some(dr) = self.buf(grads, *row) {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(dr, chunk);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.buf(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += *x * *s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += *x * *y;
                    }
                }
                if let Some(db) = self.buf(grads, *b) {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(av) {
                        *d += *x * *y;
                    }
                }
            }
            Op::Mask(a, mask) => {
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, x), m) in da.iter_mut().zip(g).zip(mask) {
                        *d += *x * *m;
                    }
                }
            }
            Op::RowScale(a, w) => {
                let (av, wv) = (self.value(*a), self.value(*w));
                let c = cols.max(1);
                if let Some(da) = self.buf(grads, *a) {
                    for ((drow, grow), s) in da.chunks_mut(c).zip(g.chunks(c)).zip(wv) {
                        drow.iter_mut().zip(grow).for_each(|(d, x)| *d += *x * *s);
                    }
                }
                if let Some(dw) = self.buf(grads, *w) {
                    for (i, (grow, arow)) in g.chunks(c).zip(av.chunks(c)).enumerate() {
                        dw[i] += grow.iter().zip(arow).map(|(x, y)| *x * *y).sum::<T>();
                    }
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let skip_center = self.fault == Some(Fault::SoftmaxBackward);
                if let Some(da) = self.buf(grads, *a) {
                    let c = cols.max(1);
                    for ((drow, grow), yrow) in da.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = if skip_center {
                            T::zero()
                        } else {
                            grow.iter().zip(yrow).map(|(x, y)| *x * *y).sum()
                        };
                        for ((d, gx), yx) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += *yx * (*gx - dot);
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gx), yx) in da.iter_mut().zip(g).zip(y) {
                        *d += *gx * *yx * (T::one() - *yx);
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = self.value(*a);
                let faulty = self.fault == Some(Fault::GeluBackward);
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gx), x) in da.iter_mut().zip(g).zip(xv) {
                        let (_, dy, t) = gelu_parts(*x);
                        let deriv = if faulty {
                            T::from_f64_lossy(0.5) * (T::one() + t)
                        } else {
                            dy
                        };
                        *d += *gx * deriv;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = cols.max(1);
                let gv = self.value(*gamma);
                let n = T::from_usize(cols).unwrap();
                if let Some(dx) = self.buf(grads, *x) {
                    for (r, ((dxr, gr), hr)) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate() {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..cols {
                            let dh = gr[j] * gv[j];
                            sum_d += dh;
                            sum_dh += dh * hr[j];
                        }
                        let (md, mdh) = (sum_d / n, sum_dh / n);
                        for j in 0..cols {
                            let dh = gr[j] * gv[j];
                            dxr[j] += rstd[r] * (dh - md - hr[j] * mdh);
                        }
                    }
                }
                if let Some(dg) = self.buf(grads, *gamma) {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..cols {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = self.buf(grads, *beta) {
                    for gr in g.chunks(c) {
                        add_into(db, gr);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = self.buf(grads, *table) {
                    let c = cols;
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let ac = self.dims(*a).1;
                if let Some(da) = self.buf(grads, *a) {
                    for r in 0..rows {
                        add_into(
                            &mut da[r * ac + start..r * ac + start + cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if let Some(dp) = self.buf(grads, p) {
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * pc..(r + 1) * pc],
                                &g[r * cols + offset..r * cols + offset + pc],
                            );
                        }
                    }
                    offset += pc;
                }
            }
            Op::StackRows(srcs) => {
                for (i, &(v, row)) in srcs.iter().enumerate() {
                    if let Some(dv) = self.buf(grads, v) {
                        add_into(&mut dv[row * cols..(row + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::Colwise { query, cands, weights, scale, attn } => {
                let (l, c, m) = (rows, cols, cands.len());
                let q = self.value(*query);
                let wv: Vec<T> = match weights {
                    Some(w) => self.value(*w).to_vec(),
                    None => vec![T::one(); m],
                };
                let mut dq = vec![T::zero(); l * c];
                let mut dk: Vec<Vec<T>> = vec![vec![T::zero(); l * c]; m];
                let mut dw = vec![T::zero(); m];
                let mut da = vec![T::zero(); m];
                let mut dots = vec![T::zero(); m];
                for j in 0..l {
                    let gj = &g[j * c..(j + 1) * c];
                    let qj = &q[j * c..(j + 1) * c];
                    let a = &attn[j * m..(j + 1) * m];
                    for (i, &k) in cands.iter().enumerate() {
                        let kj = &self.nodes[k.0].value[j * c..(j + 1) * c];
                        dots[i] = gj.iter().zip(kj).map(|(x, y)| *x * *y).sum();
                        da[i] = wv[i] * dots[i];
                        dw[i] += a[i] * dots[i];
                    }
                    let centre: T = a.iter().zip(&da).map(|(x, y)| *x * *y).sum();
                    for (i, &k) in cands.iter().enumerate() {
                        let kj = &self.nodes[k.0].value[j * c..(j + 1) * c];
                        let ds = a[i] * (da[i] - centre) * *scale;
                        let value_coef = a[i] * wv[i];
                        let dqj = &mut dq[j * c..(j + 1) * c];
                        dqj.iter_mut().zip(kj).for_each(|(d, x)| *d += ds * *x);
                        let dkj = &mut dk[i][j * c..(j + 1) * c];
                        for t in 0..c {
                            dkj[t] += ds * qj[t] + value_coef * gj[t];
                        }
                    }
                }
                if let Some(b) = self.buf(grads, *query) {
                    add_into(b, &dq);
                }
                for (i, &k) in cands.iter().enumerate() {
                    if let Some(b) = self.buf(grads, k) {
                        add_into(b, &dk[i]);
                    }
                }
                if let Some(w) = weights {
                    if let Some(b) = self.buf(grads, *w) {
                        add_into(b, &dw);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let c = self.dims(*logits).1;
                let f = g[0] / T::from_usize(*count).unwrap();
                if let Some(dl) = self.buf(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..c {
                                let onehot = if j == t { T::one() } else { T::zero() };
                                dl[r * c + j] += f * (probs[r * c + j] - onehot);
                            }
                        }
                    }
                }
            }
            Op::Bce { probs, targets, count } => {
                if *count == 0 {
                    return;
                }
                let f = g[0] / T::from_usize(*count).unwrap();
                let pv = self.value(*probs);
                if let Some(dp) = self.buf(grads, *probs) {
                    for ((d, &p), t) in dp.iter_mut().zip(pv).zip(targets) {
                        if let Some(y) = *t {
                            let pc = clamp_prob(p);
                            *d += f * (pc - y) / (pc * (T::one() - pc));
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = self.buf(grads, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::from_f64_lossy(1e-7);
    p.max(eps).min(T::one() - eps)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.constant(&t(1, 1, &[0.0]));
        let y = g.sigmoid(x);
        assert_eq!(g.scalar(y), 0.5);
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.variable(&t(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn matmul_gradient_follows_transpose_rules() {
        // loss = sum(x·w): dx = 1·wᵀ, dw = xᵀ·1
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.variable(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = g.variable(&t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.grad(w).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.variable(&t(1, 2, &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.variable(&t(1, 2, &[1.0, 2.0]));
        assert_eq!(
            g.backward(x),
            Err(TensorError::NotScalar { rows: 1, cols: 2 })
        );
    }

    #[test]
    fn shape_errors_raise_before_compute() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.constant(&t(2, 3, &[0.0; 6]));
        let b = g.constant(&t(2, 3, &[0.0; 6]));
        let before = g.len();
        assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
        assert!(g.embedding(a, &[5]).is_err());
        assert_eq!(g.len(), before);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let x = g.constant(&Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap());
        let y = g.softmax_rows(x);
        for row in g.value(y).chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let store = ParamStore::<f64>::new();
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let mut g = Graph::new(&store);
            let x = g.constant(&t(2, 3, &[margin, 0.0, 0.0, 0.0, 0.0, margin]));
            let l = g.cross_entropy(x, &[Some(0), Some(2)]).unwrap();
            let v = g.scalar(l);
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.constant(&t(1, 3, &[0.0; 3]));
        assert!(matches!(
            g.cross_entropy(x, &[Some(3)]),
            Err(TensorError::Index { .. })
        ));
    }

    #[test]
    fn single_candidate_colwise_attention_copies_rows() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let q = g.constant(&t(2, 2, &[0.3, -1.0, 2.0, 0.1]));
        let k = g.constant(&t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let out = g.colwise_attention(q, &[k], None).unwrap();
        assert_eq!(g.value(out), &[5.0, 6.0, 7.0, 8.0]);
    }
}
