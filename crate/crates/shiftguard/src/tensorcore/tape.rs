//! Reverse-mode differentiation over dense matrix operations.
//!
//! A [`Tape`] records every operation whose inputs include a traced
//! tensor. Calling [`Tape::backward`] on a scalar result sweeps the
//! recorded nodes in reverse topological order and accumulates an
//! adjoint matrix per traced node. Summation order is fixed everywhere,
//! so identical inputs give bit-identical forward values and gradients.
//!
//! A tape is meant to live for exactly one forward/backward pass; it
//! refuses a second `backward`.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensorcore::{SparseMatrix, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Trace {
    pub tape: u64,
    pub node: usize,
}

/// One recorded input: the node it came from (absent for untraced
/// constants) plus a detached copy of its forward value.
#[derive(Debug)]
struct Arg {
    node: Option<usize>,
    value: Tensor,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Arg, b: Arg },
    Spmm { s: SparseMatrix, x: Arg },
    Add { a: Arg, b: Arg },
    Sub { a: Arg, b: Arg },
    Mul { a: Arg, b: Arg },
    Scale { a: Arg, factor: f64 },
    Relu { a: Arg },
    AddRow { x: Arg, row: Arg },
    GatherRows { x: Arg, indices: Vec<usize> },
    Sum { x: Arg },
    RowSoftmax { x: Arg, temperature: f64, out: Tensor },
    KlRows { p: Arg, q: Arg },
    BceWithLogits { logits: Arg, labels: Vec<u8>, positive_weight: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Records matrix operations for one forward/backward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Numeric floor applied to the second argument of the row-wise KL
/// divergence before the logarithm.
pub const KL_EPSILON: f64 = 1e-12;

/// Tolerance on row sums when validating probability inputs to
/// [`Tape::kl_rows`].
pub const PROB_ROW_TOLERANCE: f64 = 1e-6;

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(TapeInner::default()),
        }
    }

    /// Registers `t` as a differentiable leaf and returns the traced copy.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let node = self.push(Op::Leaf);
        let mut out = t.detach();
        out.trace = Some(Trace { tape: self.id, node });
        out
    }

    fn push(&self, op: Op) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op });
        inner.nodes.len() - 1
    }

    /// Converts an operand into a recorded argument, validating that a
    /// traced operand belongs to this tape.
    fn arg(&self, op: &'static str, t: &Tensor) -> Result<Arg> {
        if let Some(trace) = t.trace {
            if trace.tape != self.id {
                return Err(Error::arg(op, "operand belongs to a different tape"));
            }
        }
        Ok(Arg {
            node: t.trace.map(|tr| tr.node),
            value: t.detach(),
        })
    }

    fn traced(&self, t: &Tensor) -> bool {
        t.trace.is_some()
    }

    /// Wraps `value` as the output of `op` when any operand was traced;
    /// otherwise returns it untraced and records nothing.
    fn finish(&self, any_traced: bool, op: Op, mut value: Tensor) -> Result<Tensor> {
        if any_traced {
            if self.inner.borrow().consumed {
                return Err(Error::TapeConsumed);
            }
            let node = self.push(op);
            value.trace = Some(Trace { tape: self.id, node });
        }
        Ok(value)
    }

    /// Matrix product `a * b`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} * {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            ));
        }
        let value = matmul_nn(a, b);
        let traced = self.traced(a) || self.traced(b);
        self.finish(traced, Op::MatMul { a: self.arg("matmul", a)?, b: self.arg("matmul", b)? }, value)
    }

    /// Sparse-dense product `s * x`. The sparse operand is a constant.
    pub fn spmm(&self, s: &SparseMatrix, x: &Tensor) -> Result<Tensor> {
        if s.n() != x.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} * {}x{}", s.n(), s.n(), x.rows(), x.cols()),
            ));
        }
        let value = spmm_value(s, x);
        let traced = self.traced(x);
        self.finish(traced, Op::Spmm { s: s.clone(), x: self.arg("spmm", x)? }, value)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let value = zip_same_shape("add", a, b, |x, y| x + y)?;
        let traced = self.traced(a) || self.traced(b);
        self.finish(traced, Op::Add { a: self.arg("add", a)?, b: self.arg("add", b)? }, value)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let value = zip_same_shape("sub", a, b, |x, y| x - y)?;
        let traced = self.traced(a) || self.traced(b);
        self.finish(traced, Op::Sub { a: self.arg("sub", a)?, b: self.arg("sub", b)? }, value)
    }

    /// Entry-wise product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let value = zip_same_shape("mul", a, b, |x, y| x * y)?;
        let traced = self.traced(a) || self.traced(b);
        self.finish(traced, Op::Mul { a: self.arg("mul", a)?, b: self.arg("mul", b)? }, value)
    }

    /// Multiplication by a scalar constant.
    pub fn scale(&self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let mut value = a.detach();
        for v in value.data_mut() {
            *v *= factor;
        }
        let traced = self.traced(a);
        self.finish(traced, Op::Scale { a: self.arg("scale", a)?, factor }, value)
    }

    /// Entry-wise `max(x, 0)`.
    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let mut value = a.detach();
        for v in value.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let traced = self.traced(a);
        self.finish(traced, Op::Relu { a: self.arg("relu", a)? }, value)
    }

    /// Adds a `1 x c` row vector to every row of an `n x c` matrix.
    pub fn add_row(&self, x: &Tensor, row: &Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != x.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{}x{} + {}x{}", x.rows(), x.cols(), row.rows(), row.cols()),
            ));
        }
        let mut value = x.detach();
        let c = x.cols();
        for i in 0..x.rows() {
            for j in 0..c {
                value.data_mut()[i * c + j] += row.data()[j];
            }
        }
        let traced = self.traced(x) || self.traced(row);
        self.finish(
            traced,
            Op::AddRow { x: self.arg("add_row", x)?, row: self.arg("add_row", row)? },
            value,
        )
    }

    /// Selects rows of `x` by strictly increasing indices.
    pub fn gather_rows(&self, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
        for (k, &i) in indices.iter().enumerate() {
            if i >= x.rows() {
                return Err(Error::arg("gather_rows", format!("row index {} out of range", i)));
            }
            if k > 0 && indices[k - 1] >= i {
                return Err(Error::arg("gather_rows", "indices must be strictly increasing"));
            }
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(x.row_slice(i));
        }
        let value = Tensor::from_vec(indices.len(), c, data)?;
        let traced = self.traced(x);
        self.finish(
            traced,
            Op::GatherRows { x: self.arg("gather_rows", x)?, indices: indices.to_vec() },
            value,
        )
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc = 0.0;
        for v in x.data() {
            acc += v;
        }
        let value = Tensor::from_vec(1, 1, vec![acc])?;
        let traced = self.traced(x);
        self.finish(traced, Op::Sum { x: self.arg("sum", x)? }, value)
    }

    /// Row-wise softmax at the given temperature, with max-subtraction.
    pub fn row_softmax(&self, x: &Tensor, temperature: f64) -> Result<Tensor> {
        if !(temperature > 0.0) {
            return Err(Error::arg(
                "row_softmax",
                format!("temperature must be positive, got {}", temperature),
            ));
        }
        let value = row_softmax_value(x, temperature);
        let traced = self.traced(x);
        self.finish(
            traced,
            Op::RowSoftmax {
                x: self.arg("row_softmax", x)?,
                temperature,
                out: value.detach(),
            },
            value,
        )
    }

    /// Mean over rows of the KL divergence `KL(p_i || q_i)`.
    ///
    /// Every row of both inputs must be a probability vector (entries
    /// nonnegative, summing to 1 within [`PROB_ROW_TOLERANCE`]). Entries
    /// of `q` are clamped below by [`KL_EPSILON`] before the logarithm.
    pub fn kl_rows(&self, p: &Tensor, q: &Tensor) -> Result<Tensor> {
        if p.shape() != q.shape() {
            return Err(Error::shape(
                "kl_rows",
                format!("{:?} vs {:?}", p.shape(), q.shape()),
            ));
        }
        check_probability_rows("kl_rows", p)?;
        check_probability_rows("kl_rows", q)?;
        let rows = p.rows();
        let cols = p.cols();
        let mut total = 0.0;
        for i in 0..rows {
            let pr = p.row_slice(i);
            let qr = q.row_slice(i);
            let mut row_kl = 0.0;
            for j in 0..cols {
                if pr[j] > 0.0 {
                    let qc = qr[j].max(KL_EPSILON);
                    row_kl += pr[j] * (pr[j].ln() - qc.ln());
                }
            }
            total += row_kl;
        }
        let value = Tensor::from_vec(1, 1, vec![total / rows as f64])?;
        let traced = self.traced(p) || self.traced(q);
        self.finish(traced, Op::KlRows { p: self.arg("kl_rows", p)?, q: self.arg("kl_rows", q)? }, value)
    }

    /// Mean weighted binary cross-entropy on `n x 1` logits.
    ///
    /// `positive_weight` multiplies the positive-class term. The loss is
    /// computed in the log-sum-exp form, so saturated logits stay finite.
    pub fn bce_with_logits(&self, logits: &Tensor, labels: &[u8], positive_weight: f64) -> Result<Tensor> {
        if logits.cols() != 1 {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits must be n x 1, got {}x{}", logits.rows(), logits.cols()),
            ));
        }
        if labels.len() != logits.rows() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} labels for {} logits", labels.len(), logits.rows()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::arg("bce_with_logits", format!("label {} outside {{0,1}}", bad)));
        }
        if !(positive_weight > 0.0) {
            return Err(Error::arg(
                "bce_with_logits",
                format!("positive_weight must be positive, got {}", positive_weight),
            ));
        }
        let n = logits.rows();
        let mut total = 0.0;
        for i in 0..n {
            let z = logits.data()[i];
            total += if labels[i] == 1 {
                positive_weight * softplus(-z)
            } else {
                softplus(z)
            };
        }
        let value = Tensor::from_vec(1, 1, vec![total / n as f64])?;
        let traced = self.traced(logits);
        self.finish(
            traced,
            Op::BceWithLogits {
                logits: self.arg("bce_with_logits", logits)?,
                labels: labels.to_vec(),
                positive_weight,
            },
            value,
        )
    }

    /// Reverse sweep from a traced scalar `loss`. Consumes the tape:
    /// a second call fails with [`Error::TapeConsumed`].
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let trace = match loss.trace {
            Some(tr) if tr.tape == self.id => tr,
            Some(_) => return Err(Error::arg("backward", "loss belongs to a different tape")),
            None => return Err(Error::arg("backward", "loss is not traced on this tape")),
        };
        if loss.shape() != (1, 1) {
            return Err(Error::arg(
                "backward",
                format!("loss must be 1x1, got {}x{}", loss.rows(), loss.cols()),
            ));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut adjoints: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        adjoints[trace.node] = Some(Tensor::from_vec(1, 1, vec![1.0])?);

        for idx in (0..n).rev() {
            let grad = match adjoints[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &inner.nodes[idx];
            propagate(&node.op, &grad, &mut adjoints);
            adjoints[idx] = Some(grad);
        }

        Ok(Gradients { tape: self.id, adjoints })
    }
}

/// Adjoints produced by [`Tape::backward`], queryable by traced tensor.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The gradient with respect to `t`, or `None` when `t` is untraced
    /// or no gradient reached it.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        let trace = t.trace?;
        if trace.tape != self.tape {
            return None;
        }
        self.adjoints.get(trace.node)?.as_ref()
    }

    /// Like [`Gradients::get`] but materializes zeros for absent adjoints.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        match self.get(t) {
            Some(g) => g.detach(),
            None => Tensor::zeros(t.rows(), t.cols()),
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), delta.shape());
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn propagate(op: &Op, grad: &Tensor, adjoints: &mut [Option<Tensor>]) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            if let Some(ai) = a.node {
                accumulate(&mut adjoints[ai], matmul_nt(grad, &b.value));
            }
            if let Some(bi) = b.node {
                accumulate(&mut adjoints[bi], matmul_tn(&a.value, grad));
            }
        }
        Op::Spmm { s, x } => {
            if let Some(xi) = x.node {
                accumulate(&mut adjoints[xi], spmm_transpose_value(s, grad));
            }
        }
        Op::Add { a, b } => {
            if let Some(ai) = a.node {
                accumulate(&mut adjoints[ai], grad.detach());
            }
            if let Some(bi) = b.node {
                accumulate(&mut adjoints[bi], grad.detach());
            }
        }
        Op::Sub { a, b } => {
            if let Some(ai) = a.node {
                accumulate(&mut adjoints[ai], grad.detach());
            }
            if let Some(bi) = b.node {
                let mut neg = grad.detach();
                for v in neg.data_mut() {
                    *v = -*v;
                }
                accumulate(&mut adjoints[bi], neg);
            }
        }
        Op::Mul { a, b } => {
            if let Some(ai) = a.node {
                let mut d = grad.detach();
                for (v, w) in d.data_mut().iter_mut().zip(b.value.data()) {
                    *v *= w;
                }
                accumulate(&mut adjoints[ai], d);
            }
            if let Some(bi) = b.node {
                let mut d = grad.detach();
                for (v, w) in d.data_mut().iter_mut().zip(a.value.data()) {
                    *v *= w;
                }
                accumulate(&mut adjoints[bi], d);
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ai) = a.node {
                let mut d = grad.detach();
                for v in d.data_mut() {
                    *v *= factor;
                }
                accumulate(&mut adjoints[ai], d);
            }
        }
        Op::Relu { a } => {
            if let Some(ai) = a.node {
                let mut d = grad.detach();
                for (v, x) in d.data_mut().iter_mut().zip(a.value.data()) {
                    if *x <= 0.0 {
                        *v = 0.0;
                    }
                }
                accumulate(&mut adjoints[ai], d);
            }
        }
        Op::AddRow { x, row } => {
            if let Some(xi) = x.node {
                accumulate(&mut adjoints[xi], grad.detach());
            }
            if let Some(ri) = row.node {
                let c = grad.cols();
                let mut sums = vec![0.0; c];
                for i in 0..grad.rows() {
                    for j in 0..c {
                        sums[j] += grad.data()[i * c + j];
                    }
                }
                accumulate(&mut adjoints[ri], Tensor::row(sums));
            }
        }
        Op::GatherRows { x, indices } => {
            if let Some(xi) = x.node {
                let c = x.value.cols();
                let mut d = Tensor::zeros(x.value.rows(), c);
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        d.data_mut()[i * c + j] += grad.data()[k * c + j];
                    }
                }
                accumulate(&mut adjoints[xi], d);
            }
        }
        Op::Sum { x } => {
            if let Some(xi) = x.node {
                let g = grad.scalar();
                accumulate(&mut adjoints[xi], Tensor::filled(x.value.rows(), x.value.cols(), g));
            }
        }
        Op::RowSoftmax { x, temperature, out } => {
            if let Some(xi) = x.node {
                let (rows, cols) = out.shape();
                let mut d = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    let p = out.row_slice(i);
                    let g = grad.row_slice(i);
                    let mut dot = 0.0;
                    for j in 0..cols {
                        dot += g[j] * p[j];
                    }
                    for j in 0..cols {
                        d.data_mut()[i * cols + j] = p[j] * (g[j] - dot) / temperature;
                    }
                }
                accumulate(&mut adjoints[xi], d);
            }
        }
        Op::KlRows { p, q } => {
            let g = grad.scalar();
            let (rows, cols) = p.value.shape();
            let scale = g / rows as f64;
            if let Some(pi) = p.node {
                let mut d = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    let pr = p.value.row_slice(i);
                    let qr = q.value.row_slice(i);
                    for j in 0..cols {
                        if pr[j] > 0.0 {
                            let qc = qr[j].max(KL_EPSILON);
                            d.data_mut()[i * cols + j] = scale * (pr[j].ln() - qc.ln() + 1.0);
                        }
                    }
                }
                accumulate(&mut adjoints[pi], d);
            }
            if let Some(qi) = q.node {
                let mut d = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    let pr = p.value.row_slice(i);
                    let qr = q.value.row_slice(i);
                    for j in 0..cols {
                        // The clamp is flat below KL_EPSILON, so no gradient
                        // there. The p/q grouping makes this the exact
                        // negation of the p-side gradient when p == q,
                        // which the zero-shift fixed point relies on.
                        if pr[j] > 0.0 && qr[j] > KL_EPSILON {
                            d.data_mut()[i * cols + j] = -(scale * (pr[j] / qr[j]));
                        }
                    }
                }
                accumulate(&mut adjoints[qi], d);
            }
        }
        Op::BceWithLogits { logits, labels, positive_weight } => {
            if let Some(li) = logits.node {
                let g = grad.scalar();
                let n = logits.value.rows();
                let scale = g / n as f64;
                let mut d = Tensor::zeros(n, 1);
                for i in 0..n {
                    let z = logits.value.data()[i];
                    d.data_mut()[i] = if labels[i] == 1 {
                        -positive_weight * sigmoid(-z) * scale
                    } else {
                        sigmoid(z) * scale
                    };
                }
                accumulate(&mut adjoints[li], d);
            }
        }
    }
}

// ---- forward kernels -------------------------------------------------------

fn zip_same_shape(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.detach();
    for (v, w) in out.data_mut().iter_mut().zip(b.data()) {
        *v = f(*v, *w);
    }
    Ok(out)
}

/// `a * b` with the classic i-k-j loop; accumulation order is fixed.
fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for kk in 0..k {
            let av = a.data()[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[kk * m..(kk + 1) * m];
            let orow = &mut out.data_mut()[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a * b^T`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.shape();
    let m = b.rows();
    debug_assert_eq!(b.cols(), k);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let arow = a.row_slice(i);
        for j in 0..m {
            let brow = b.row_slice(j);
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            out.data_mut()[i * m + j] = acc;
        }
    }
    out
}

/// `a^T * b`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.shape();
    let m = b.cols();
    debug_assert_eq!(b.rows(), n);
    let mut out = Tensor::zeros(k, m);
    for i in 0..n {
        let arow = a.row_slice(i);
        let brow = &b.data()[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = arow[kk];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn spmm_value(s: &SparseMatrix, x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = Tensor::zeros(s.n(), c);
    for i in 0..s.n() {
        for (j, v) in s.row(i) {
            let xrow = x.row_slice(j);
            let orow = &mut out.data_mut()[i * c..(i + 1) * c];
            for t in 0..c {
                orow[t] += v * xrow[t];
            }
        }
    }
    out
}

/// `s^T * g`, scattering row contributions in row order.
fn spmm_transpose_value(s: &SparseMatrix, g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = Tensor::zeros(s.n(), c);
    for i in 0..s.n() {
        let grow = g.row_slice(i);
        for (j, v) in s.row(i) {
            let orow = &mut out.data_mut()[j * c..(j + 1) * c];
            for t in 0..c {
                orow[t] += v * grow[t];
            }
        }
    }
    out
}

fn row_softmax_value(x: &Tensor, temperature: f64) -> Tensor {
    let (rows, cols) = x.shape();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let xr = x.row_slice(i);
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..cols {
            let e = ((xr[j] - max) / temperature).exp();
            out.data_mut()[i * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out.data_mut()[i * cols + j] /= sum;
        }
    }
    out
}

fn check_probability_rows(op: &'static str, t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let row = t.row_slice(i);
        let mut sum = 0.0;
        for &v in row {
            if v < 0.0 {
                return Err(Error::arg(op, format!("row {} has negative entry {}", i, v)));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > PROB_ROW_TOLERANCE {
            return Err(Error::arg(op, format!("row {} sums to {}, not 1", i, sum)));
        }
    }
    Ok(())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::gradcheck::{finite_difference, relative_error, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng))
            .collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 4.0, 0.0, -1.0]).unwrap());
        let loss = tape.sum(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.wrt(&x).bits_eq(&Tensor::filled(2, 3, 1.0)));
    }

    #[test]
    fn untraced_constant_has_no_adjoint() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::filled(2, 2, 1.0));
        let c = Tensor::filled(2, 2, 5.0);
        let loss = tape.sum(&tape.mul(&x, &c).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&c).is_none());
        assert!(grads.wrt(&c).bits_eq(&Tensor::zeros(2, 2)));
        assert!(grads.wrt(&x).bits_eq(&Tensor::filled(2, 2, 5.0)));
    }

    #[test]
    fn tape_refuses_second_backward() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::filled(1, 1, 2.0));
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.backward(&loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn consumed_tape_refuses_new_ops() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::filled(1, 1, 2.0));
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.sum(&x), Err(Error::TapeConsumed)));
    }

    #[test]
    fn foreign_tensors_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.watch(&Tensor::filled(2, 2, 1.0));
        let y = t2.watch(&Tensor::filled(2, 2, 1.0));
        assert!(t1.add(&x, &y).is_err());
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::filled(2, 2, 1.0));
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn row_softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let x = randn(&mut rng, 5, 4);
        let p = tape.row_softmax(&x, 0.5).unwrap();
        for i in 0..5 {
            let s: f64 = p.row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let mut shifted = x.detach();
        for i in 0..5 {
            for j in 0..4 {
                shifted.data_mut()[i * 4 + j] += 3.25;
            }
        }
        let q = tape.row_softmax(&shifted, 0.5).unwrap();
        assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_at_equality() {
        let tape = Tape::new();
        let p = Tensor::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.7, 0.1, 0.2]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.4, 0.4, 0.2], vec![0.5, 0.25, 0.25]]).unwrap();
        assert!(tape.kl_rows(&p, &q).unwrap().scalar() > 0.0);
        assert_eq!(tape.kl_rows(&p, &p).unwrap().scalar(), 0.0);
    }

    #[test]
    fn kl_rejects_non_probability_rows() {
        let tape = Tape::new();
        let p = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let bad = Tensor::from_rows(&[vec![0.9, 0.3]]).unwrap();
        assert!(tape.kl_rows(&p, &bad).is_err());
        assert!(tape.kl_rows(&bad, &p).is_err());
    }

    #[test]
    fn kl_survives_underflowed_q() {
        // A q entry of exactly 0 would blow up without the clamp.
        let tape = Tape::new();
        let p = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let v = tape.kl_rows(&p, &q).unwrap().scalar();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn bce_stays_finite_at_saturated_logits() {
        let tape = Tape::new();
        let z = Tensor::from_vec(2, 1, vec![500.0, -500.0]).unwrap();
        let v = tape.bce_with_logits(&z, &[0, 1], 3.0).unwrap().scalar();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn spmm_agrees_with_dense_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(2..9);
            let c = rng.random_range(1..5);
            let mut triplets = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if rng.random::<f64>() < 0.3 {
                        triplets.push((i, j, rng.random::<f64>() - 0.5));
                    }
                }
            }
            let s = SparseMatrix::from_triplets(n, &triplets).unwrap();
            let x = randn(&mut rng, n, c);
            let tape = Tape::new();
            let sparse = tape.spmm(&s, &x).unwrap();
            let dense = tape.matmul(&s.to_dense(), &x).unwrap();
            assert!(sparse.max_abs_diff(&dense) < 1e-12);
        }
    }

    #[test]
    fn gather_rows_requires_strictly_increasing_indices() {
        let tape = Tape::new();
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(tape.gather_rows(&x, &[0, 2]).is_ok());
        assert!(tape.gather_rows(&x, &[2, 0]).is_err());
        assert!(tape.gather_rows(&x, &[1, 1]).is_err());
        assert!(tape.gather_rows(&x, &[3]).is_err());
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 6, 4);
        let b = randn(&mut rng, 4, 3);
        let run = || {
            let tape = Tape::new();
            let aw = tape.watch(&a);
            let h = tape.relu(&tape.matmul(&aw, &b).unwrap()).unwrap();
            let loss = tape.sum(&h).unwrap();
            let grads = tape.backward(&loss).unwrap();
            (loss.scalar(), grads.wrt(&aw))
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(g1.bits_eq(&g2));
    }

    // Gradient spot checks; the exhaustive per-op battery lives in the
    // acceptance suite.

    fn check_grad<F>(build: F, x0: &Tensor)
    where
        F: Fn(&Tape, &Tensor) -> Tensor,
    {
        let tape = Tape::new();
        let xw = tape.watch(x0);
        let loss = build(&tape, &xw);
        let grads = tape.backward(&loss).unwrap();
        let analytic = grads.wrt(&xw);
        let fd = finite_difference(
            |probe| {
                let t = Tape::new();
                let w = t.watch(probe);
                Ok(build(&t, &w).scalar())
            },
            x0,
            DEFAULT_STEP,
        )
        .unwrap();
        let err = relative_error(&analytic, &fd);
        assert!(err <= DEFAULT_TOLERANCE, "gradient mismatch: {}", err);
    }

    #[test]
    fn mlp_composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w1 = randn(&mut rng, 4, 3);
        let w2 = randn(&mut rng, 3, 1);
        let x0 = randn(&mut rng, 5, 4);
        let labels = [1u8, 0, 0, 1, 0];
        check_grad(
            |tape, x| {
                let h = tape.relu(&tape.matmul(x, &w1).unwrap()).unwrap();
                let z = tape.matmul(&h, &w2).unwrap();
                tape.bce_with_logits(&z, &labels, 2.0).unwrap()
            },
            &x0,
        );
    }

    #[test]
    fn softmax_kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x0 = randn(&mut rng, 4, 5);
        let target = {
            let tape = Tape::new();
            tape.row_softmax(&randn(&mut rng, 4, 5), 1.0).unwrap()
        };
        check_grad(
            |tape, x| {
                let p = tape.row_softmax(x, 2.0).unwrap();
                tape.kl_rows(&p, &target).unwrap()
            },
            &x0,
        );
        // Gradient through the second argument as well.
        let q0 = randn(&mut rng, 4, 5);
        let p_fixed = {
            let tape = Tape::new();
            tape.row_softmax(&randn(&mut rng, 4, 5), 1.0).unwrap()
        };
        check_grad(
            |tape, q| {
                let qs = tape.row_softmax(q, 1.0).unwrap();
                tape.kl_rows(&p_fixed, &qs).unwrap()
            },
            &q0,
        );
    }

    #[test]
    fn spmm_gather_scale_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = SparseMatrix::from_triplets(
            4,
            &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 1, 0.25), (3, 3, 1.0)],
        )
        .unwrap();
        let x0 = randn(&mut rng, 4, 3);
        let bias = randn(&mut rng, 1, 3);
        check_grad(
            |tape, x| {
                let h = tape.add_row(&tape.spmm(&s, x).unwrap(), &bias).unwrap();
                let picked = tape.gather_rows(&h, &[0, 2]).unwrap();
                tape.sum(&tape.scale(&tape.mul(&picked, &picked).unwrap(), 0.5).unwrap()).unwrap()
            },
            &x0,
        );
    }

    #[test]
    fn shared_operand_accumulates_both_paths() {
        // loss = sum(x*x) + sum(x) exercises adjoint accumulation.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x0 = randn(&mut rng, 3, 3);
        check_grad(
            |tape, x| {
                let sq = tape.sum(&tape.mul(x, x).unwrap()).unwrap();
                let lin = tape.sum(x).unwrap();
                tape.add(&sq, &lin).unwrap()
            },
            &x0,
        );
    }
}
