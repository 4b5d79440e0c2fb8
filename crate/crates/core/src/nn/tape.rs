//! Define-by-run reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a `rows × cols` matrix; scalars are `1 × 1`.
//! Operations are evaluated eagerly when recorded. [`Tape::backward`] walks the
//! record in reverse insertion order, so gradient accumulation is deterministic.

use crate::nn::tensor::Tensor;
use crate::nn::NnError;
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    LeakyRelu(Var, T),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GroupMax(Var, usize, Vec<u32>),
    LogSoftmax(Var),
    Exp(Var),
    Sigmoid(Var),
    Sum(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<T>,
        negatives: bool,
        eps: T,
        divisor: T,
    },
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the variable does not influence the loss through a differentiable path.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, inputs: &[Var], op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a matrix. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<T>, requires_grad: bool) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf: data length does not match shape");
        self.nodes.push(Node {
            value: data,
            rows,
            cols,
            needs_grad: requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter tensor (rank 1 is treated as a single row).
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.matrix_dims();
        self.leaf(r, c, t.data().to_vec(), true)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        self.leaf(rows, cols, data, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    pub fn is_finite(&self, v: Var) -> bool {
        self.nodes[v.0].value.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions {k} and {k2} differ");
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a),
            k as isize,
            1,
            self.value(b),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        self.push(out, m, n, &[a, b], Op::MatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise op on mismatched shapes");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(out, sa.0, sa.1, &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + 1ᵀ·row`: adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(row), (1, n), "add_row: row shape mismatch");
        let r = self.value(row);
        let mut out = self.value(x).to_vec();
        for chunk in out.chunks_mut(n) {
            add_into(chunk, r);
        }
        self.push(out, m, n, &[x, row], Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        self.push(out, m, n, &[x], Op::Scale(x, c))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let (m, n) = self.shape(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        self.push(out, m, n, &[x], Op::LeakyRelu(x, slope))
    }

    /// Row `r` of the result is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let (m, n) = self.shape(x);
        let src = self.value(x);
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in &index {
            assert!(i < m, "gather_rows: index {i} out of {m} rows");
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rows = index.len();
        self.push(out, rows, n, &[x], Op::Gather(x, index))
    }

    /// Row `g` of the result sums the rows `r` of `x` with `group[r] == g`,
    /// accumulated in ascending `r`.
    pub fn scatter_add_rows(&mut self, x: Var, group: Vec<usize>, groups: usize) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(group.len(), m, "scatter_add_rows: one group id per row");
        let src = self.value(x);
        let mut out = vec![T::zero(); groups * n];
        for (r, &g) in group.iter().enumerate() {
            assert!(g < groups, "scatter_add_rows: group {g} out of {groups}");
            add_into(&mut out[g * n..(g + 1) * n], &src[r * n..(r + 1) * n]);
        }
        self.push(out, groups, n, &[x], Op::ScatterAdd(x, group))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: nothing to concatenate");
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, m, "concat_cols: row counts differ");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(out, m, total, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(start < end && end <= m, "slice_rows: bad range {start}..{end} of {m}");
        let out = self.value(x)[start * n..end * n].to_vec();
        self.push(out, end - start, n, &[x], Op::SliceRows(x, start))
    }

    /// Column-wise maximum over consecutive groups of `group` rows; the first
    /// maximal row of each group receives the gradient.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(
            group > 0 && m % group == 0,
            "group_max: {m} rows not divisible by {group}"
        );
        let groups = m / group;
        let src = self.value(x);
        let mut out = Vec::with_capacity(groups * n);
        let mut arg = Vec::with_capacity(groups * n);
        for g in 0..groups {
            let base = g * group;
            out.extend_from_slice(&src[base * n..(base + 1) * n]);
            arg.extend(std::iter::repeat_n(0u32, n));
            let o = &mut out[g * n..(g + 1) * n];
            let a = &mut arg[g * n..(g + 1) * n];
            for r in 1..group {
                let row = &src[(base + r) * n..(base + r + 1) * n];
                for c in 0..n {
                    if row[c] > o[c] {
                        o[c] = row[c];
                        a[c] = r as u32;
                    }
                }
            }
        }
        self.push(out, groups, n, &[x], Op::GroupMax(x, group, arg))
    }

    /// Row-wise `log softmax` with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        self.push(out, m, n, &[x], Op::LogSoftmax(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|v| v.exp()).collect();
        self.push(out, m, n, &[x], Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(out, m, n, &[x], Op::Sigmoid(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], 1, 1, &[x], Op::Sum(x))
    }

    /// `-(1/divisor) Σ [t·ln p + (1-t)·ln(1-p)]` with `p` clamped to
    /// `[eps, 1-eps]`; the second term is dropped when `negatives` is false.
    /// Entries at the clamp receive no gradient.
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<T>, negatives: bool, eps: T, divisor: T) -> Var {
        assert_eq!(targets.len(), self.value(probs).len(), "cross_entropy: target shape");
        let hi = T::one() - eps;
        let mut acc = T::zero();
        for (&p, &t) in self.value(probs).iter().zip(&targets) {
            let pc = p.max(eps).min(hi);
            acc = acc + t * pc.ln();
            if negatives {
                acc = acc + (T::one() - t) * (T::one() - pc).ln();
            }
        }
        let value = -acc / divisor;
        self.push(
            vec![value],
            1,
            1,
            &[probs],
            Op::CrossEntropy {
                probs,
                targets,
                negatives,
                eps,
                divisor,
            },
        )
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(NnError::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // only leaves that asked for gradients keep them
        for (i, g) in grads.iter_mut().enumerate() {
            let n = &self.nodes[i];
            if !(matches!(n.op, Op::Leaf) && n.needs_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let n = &self.nodes[v.0];
        if !n.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.rows * n.cols]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // ga += g · bᵀ
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        self.value(*b),
                        1,
                        n as isize,
                        T::one(),
                        ga,
                        k as isize,
                        1,
                    );
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    // gb += aᵀ · g
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        self.value(*a),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::one(),
                        gb,
                        n as isize,
                        1,
                    );
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d = *d - s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d = *d + s * y;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d = *d + s * x;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gr) = self.grad_buf(grads, *row) {
                    for chunk in g.chunks(node.cols) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d = *d + s * *c;
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x);
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((d, &s), &v) in gx.iter_mut().zip(g).zip(vx) {
                        *d = *d + if v > T::zero() { s } else { s * *slope };
                    }
                }
            }
            Op::Gather(x, index) => {
                let n = node.cols;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut gx[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::ScatterAdd(x, group) => {
                let n = node.cols;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (r, &gi) in group.iter().enumerate() {
                        add_into(&mut gx[r * n..(r + 1) * n], &g[gi * n..(gi + 1) * n]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for i in 0..node.rows {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let n = node.cols;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    add_into(&mut gx[start * n..(start + node.rows) * n], g);
                }
            }
            Op::GroupMax(x, group, arg) => {
                let n = node.cols;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for gi in 0..node.rows {
                        for c in 0..n {
                            let r = gi * group + arg[gi * n + c] as usize;
                            gx[r * n + c] = gx[r * n + c] + g[gi * n + c];
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let n = node.cols;
                let y = &node.value;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let s: T = gr.iter().copied().sum();
                        for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                            *d = *d + gv - yv.exp() * s;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *d = *d + s * yv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *d = *d + s * yv * (T::one() - yv);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for d in gx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::CrossEntropy {
                probs,
                targets,
                negatives,
                eps,
                divisor,
            } => {
                let p = self.value(*probs);
                let hi = T::one() - *eps;
                let scale = -g[0] / *divisor;
                if let Some(gp) = self.grad_buf(grads, *probs) {
                    for ((d, &pv), &t) in gp.iter_mut().zip(p).zip(targets) {
                        if pv <= *eps || pv >= hi {
                            continue;
                        }
                        let mut dv = t / pv;
                        if *negatives {
                            dv = dv - (T::one() - t) / (T::one() - pv);
                        }
                        *d = *d + scale * dv;
                    }
                }
            }
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
