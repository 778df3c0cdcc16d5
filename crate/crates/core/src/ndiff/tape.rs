//! Reverse-mode tape over [`Tensor2`] values.
//!
//! Every operation evaluates eagerly and records how to propagate gradients.
//! [`Tape::backward`] walks the records in reverse and returns gradients for
//! every node and every parameter that took part in the computation.

use std::collections::HashMap;

use super::exact::ExactSum;
use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow { a: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Hadamard(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Gather { a: Var, index: Vec<usize>, width: usize },
    SoftmaxOverRows(Var),
    MatMulTnExact(Var, Var),
    NormalizeRows { a: Var, norms: Vec<f64> },
    SoftmaxXent { logits: Var, probs: Tensor2, targets: Vec<Option<usize>>, count: usize },
    GradReverse(Var, f64),
    SumSquares(Var),
    Sum(Var),
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor2>>,
    params: Vec<(ParamId, Tensor2)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn of(&self, v: Var) -> Option<&Tensor2> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &[(ParamId, Tensor2)] {
        &self.params
    }

    /// Adds the parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in &self.params {
            store.accumulate(*id, g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn same_shape(op: &'static str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor2) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter; repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Param(id))?;
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, ka) = if ta { (av.cols(), av.rows()) } else { av.shape() };
        let (kb, n) = if tb { (bv.cols(), bv.rows()) } else { bv.shape() };
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("{m}x{ka} times {kb}x{n}"),
            ));
        }
        let mut out = Tensor2::zeros(m, n);
        gemm(ta, tb, 1.0, av, bv, 0.0, &mut out);
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.1 != ws.0 || bs != (1, ws.1) {
            return Err(Error::shape(
                "affine",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} plus bias {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow { a, bias })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        self.push(out, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        self.push(out, Op::Hadamard(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor2> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor2::concat_cols(&values)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor2> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor2::concat_rows(&values)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{end} of {:?}", av.shape()),
            ));
        }
        let out = av.slice_cols(start, end);
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{end} of {:?}", av.shape()),
            ));
        }
        let out = av.slice_rows(start, end);
        self.push(out, Op::SliceRows { a, start })
    }

    /// Row gather with concatenation: output row `r` is the concatenation of
    /// input rows `index[r * width .. (r + 1) * width]`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, width: usize) -> Result<Var> {
        let av = self.value(a);
        if width == 0 || index.len() % width != 0 {
            return Err(Error::shape(
                "gather",
                format!("{} indices for width {width}", index.len()),
            ));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape(
                "gather",
                format!("row index {bad} out of {} rows", av.rows()),
            ));
        }
        let c = av.cols();
        let rows = index.len() / width;
        let mut out = Tensor2::zeros(rows, c * width);
        for r in 0..rows {
            let dst = out.row_mut(r);
            for j in 0..width {
                dst[j * c..(j + 1) * c].copy_from_slice(av.row(index[r * width + j]));
            }
        }
        self.push(out, Op::Gather { a, index, width })
    }

    /// Softmax down each column (normalised over rows), with order-independent sums.
    pub fn softmax_over_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        if rows == 0 {
            return Err(Error::shape("softmax_over_rows", "no rows"));
        }
        let mut out = Tensor2::zeros(rows, cols);
        let mut acc = ExactSum::new();
        for c in 0..cols {
            let max = (0..rows).map(|r| av.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            acc.clear();
            for r in 0..rows {
                let e = (av.get(r, c) - max).exp();
                out.set(r, c, e);
                acc.add(e);
            }
            let z = acc.value();
            for r in 0..rows {
                out.set(r, c, out.get(r, c) / z);
            }
        }
        self.push(out, Op::SoftmaxOverRows(a))
    }

    /// `a^T * b` where the reduction over rows is correctly rounded, so the
    /// result is bitwise invariant to a joint permutation of the rows.
    pub fn matmul_tn_exact(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "matmul_tn_exact",
                format!("{:?} and {:?} differ in rows", av.shape(), bv.shape()),
            ));
        }
        let mut out = Tensor2::zeros(av.cols(), bv.cols());
        let mut acc = ExactSum::new();
        for i in 0..av.cols() {
            for j in 0..bv.cols() {
                acc.clear();
                for t in 0..av.rows() {
                    acc.add(av.get(t, i) * bv.get(t, j));
                }
                out.set(i, j, acc.value());
            }
        }
        self.push(out, Op::MatMulTnExact(a, b))
    }

    /// Scales every row to unit Euclidean norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut out = av.clone();
        let mut norms = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let n = av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::invalid(format!(
                    "normalize_rows: row {r} has zero norm"
                )));
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(out, Op::NormalizeRows { a, norms })
    }

    /// Mean softmax cross-entropy over rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
        self.softmax_cross_entropy_masked(logits, &t)
    }

    /// Like [`Tape::softmax_cross_entropy`], averaging only over rows with a target.
    pub fn softmax_cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
    ) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} targets for {} rows", targets.len(), lv.rows()),
            ));
        }
        let k = lv.cols();
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= k) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: target {bad} out of range for {k} classes"
            )));
        }
        let mut probs = Tensor2::zeros(lv.rows(), k);
        let mut loss = 0.0;
        let mut count = 0usize;
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            if let Some(t) = targets[r] {
                loss += log_z - row[t];
                count += 1;
            }
        }
        let loss = if count > 0 { loss / count as f64 } else { 0.0 };
        self.push(
            Tensor2::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                targets: targets.to_vec(),
                count,
            },
        )
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    pub fn gradient_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "gradient_reverse: lambda must be >= 0, got {lambda}"
            )));
        }
        let out = self.value(a).clone();
        self.push(out, Op::GradReverse(a, lambda))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push(Tensor2::scalar(s), Op::SumSquares(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor2::scalar(s), Op::Sum(a))
    }

    /// Column means (1 x cols).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let out = av.mean_rows();
        self.push(out, Op::MeanRows(a))
    }

    /// Reverse pass from `loss`, seeded with ones.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        let lv = self.value(loss);
        grads[loss.0] = Some(Tensor2::filled(lv.rows(), lv.cols(), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((*id, g.clone())),
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // C = op(A) op(B)
                    let mut ga = Tensor2::zeros(av.rows(), av.cols());
                    if *ta {
                        // A^T: dA = op(B) G^T
                        gemm(*tb, true, 1.0, bv, &g, 0.0, &mut ga);
                    } else {
                        gemm(false, !*tb, 1.0, &g, bv, 0.0, &mut ga);
                    }
                    let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                    if *tb {
                        // B^T: dB = G^T op(A)
                        gemm(true, *ta, 1.0, &g, av, 0.0, &mut gb);
                    } else {
                        gemm(!*ta, false, 1.0, av, &g, 0.0, &mut gb);
                    }
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::AddRow { a, bias } => {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    add_grad(&mut grads, *bias, gb);
                    add_grad(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *b, g.clone());
                    add_grad(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *b, g.map(|v| -v));
                    add_grad(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => add_grad(&mut grads, *a, g.map(|v| v * s)),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    for (d, x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    for (d, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::Hadamard(a, b) => {
                    let mut ga = g.clone();
                    for (d, v) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *d *= v;
                    }
                    let mut gb = g.clone();
                    for (d, v) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= v;
                    }
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        add_grad(&mut grads, *p, g.slice_cols(off, off + w));
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        add_grad(&mut grads, *p, g.slice_rows(off, off + h));
                        off += h;
                    }
                }
                Op::SliceCols { a, start } => {
                    let av = self.value(*a);
                    let mut ga = Tensor2::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::SliceRows { a, start } => {
                    let av = self.value(*a);
                    let mut ga = Tensor2::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::Gather { a, index, width } => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut ga = Tensor2::zeros(av.rows(), c);
                    for r in 0..g.rows() {
                        let src = g.row(r);
                        for j in 0..*width {
                            let dst = ga.row_mut(index[r * width + j]);
                            for (d, s) in dst.iter_mut().zip(&src[j * c..(j + 1) * c]) {
                                *d += s;
                            }
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::SoftmaxOverRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for c in 0..y.cols() {
                        let dot: f64 = (0..y.rows()).map(|r| y.get(r, c) * g.get(r, c)).sum();
                        for r in 0..y.rows() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::MatMulTnExact(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // C = A^T B: dA = B G^T, dB = A G
                    let mut ga = Tensor2::zeros(av.rows(), av.cols());
                    gemm(false, true, 1.0, bv, &g, 0.0, &mut ga);
                    let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                    gemm(false, false, 1.0, av, &g, 0.0, &mut gb);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::NormalizeRows { a, norms } => {
                    let y = &node.value;
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (k, d) in ga.row_mut(r).iter_mut().enumerate() {
                            *d = (gr[k] - yr[k] * dot) / norms[r];
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    targets,
                    count,
                } => {
                    let mut gl = Tensor2::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let s = g.item() / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = t {
                                for (d, p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                                    *d = p * s;
                                }
                                gl.set(r, *t, gl.get(r, *t) - s);
                            }
                        }
                    }
                    add_grad(&mut grads, *logits, gl);
                }
                Op::GradReverse(a, lambda) => add_grad(&mut grads, *a, g.map(|v| -lambda * v)),
                Op::SumSquares(a) => {
                    let s = g.item();
                    add_grad(&mut grads, *a, self.value(*a).map(|v| 2.0 * v * s));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    add_grad(&mut grads, *a, Tensor2::filled(r, c, g.item()));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor2::zeros(r, c);
                    let inv = 1.0 / r as f64;
                    for row in 0..r {
                        for (d, v) in ga.row_mut(row).iter_mut().zip(g.data()) {
                            *d = v * inv;
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }

        for (id, g) in &params {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter #{}", id.0)));
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

fn add_grad(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "input",
        Op::Param(_) => "param",
        Op::MatMul { .. } => "matmul",
        Op::AddRow { .. } => "add_row",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::Hadamard(..) => "hadamard",
        Op::ConcatCols(_) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::SliceRows { .. } => "slice_rows",
        Op::Gather { .. } => "gather",
        Op::SoftmaxOverRows(_) => "softmax_over_rows",
        Op::MatMulTnExact(..) => "matmul_tn_exact",
        Op::NormalizeRows { .. } => "normalize_rows",
        Op::SoftmaxXent { .. } => "softmax_cross_entropy",
        Op::GradReverse(..) => "gradient_reverse",
        Op::SumSquares(_) => "sum_squares",
        Op::Sum(_) => "sum",
        Op::MeanRows(_) => "mean_rows",
    }
}
