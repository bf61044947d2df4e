use super::array::{matmul_at_acc, matmul_bt_acc};
use super::{Array, NumericsError, Real};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Softmax(Var, Real),
    LogSoftmax(Var, Real),
    Log(Var),
    Exp(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Minimum(Var, Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// A define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] is a single reverse sweep.
/// Nodes that do not depend on any gradient-carrying leaf are skipped during
/// the sweep and report no gradient.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_tau(op: &'static str, tau: Real) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(NumericsError::InvalidArgument {
            op,
            reason: format!("temperature must be positive, got {tau}"),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let mut out = va.clone();
        out.axpy(-1.0, vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Array::new(va.rows(), va.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Row-wise `softmax(a / tau)`.
    pub fn softmax_rows(&mut self, a: Var, tau: Real) -> Result<Var> {
        check_tau("softmax_rows", tau)?;
        let va = self.value(a);
        let mut out = Array::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&super::softmax(va.row(r), tau));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a, tau), rg))
    }

    /// Row-wise `log(softmax(a / tau))`, computed stably.
    pub fn log_softmax_rows(&mut self, a: Var, tau: Real) -> Result<Var> {
        check_tau("log_softmax_rows", tau)?;
        let va = self.value(a);
        let mut out = Array::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            let lse = super::log_sum_exp(va.row(r), tau);
            for (o, &x) in out.row_mut(r).iter_mut().zip(va.row(r)) {
                *o = x / tau - lse;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a, tau), rg))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some((index, &value)) = va.data().iter().enumerate().find(|(_, &v)| v <= 0.0 || v.is_nan()) {
            return Err(NumericsError::NonPositiveLog { index, value });
        }
        let out = va.map(Real::ln);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Real::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Real::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Sum of all entries, as a `1 × 1` array.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: Real = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Array::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s: Real = va.data().iter().sum::<Real>() / va.len().max(1) as Real;
        let rg = self.rg(a);
        self.push(Array::scalar(s), Op::Mean(a), rg)
    }

    /// Stacks `a[idx[0]], a[idx[1]], ...` into a new array.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let mut out = Array::zeros(idx.len(), va.cols());
        for (i, &r) in idx.iter().enumerate() {
            if r >= va.rows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    bound: va.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(va.row(r));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Collects individual entries `a[r, c]` into a `1 × m` row.
    pub fn pick(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let va = self.value(a);
        let mut data = Vec::with_capacity(idx.len());
        for &(r, c) in idx {
            if r >= va.rows() || c >= va.cols() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "pick",
                    index: r * va.cols() + c,
                    bound: va.len(),
                });
            }
            data.push(va.get(r, c));
        }
        let rg = self.rg(a);
        Ok(self.push(Array::row_vector(data), Op::Pick(a, idx.to_vec()), rg))
    }

    /// Elementwise minimum. The gradient goes to the smaller operand, and to
    /// `a` on ties.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("minimum", va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| if x <= y { x } else { y })
            .collect();
        let out = Array::new(va.rows(), va.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Minimum(a, b), rg))
    }

    /// Concatenation along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::InvalidArgument {
                op: "concat_rows",
                reason: "no operands".into(),
            });
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(first).shape(),
                    right: vp.shape(),
                });
            }
            rows += vp.rows();
            data.extend_from_slice(vp.data());
        }
        let out = Array::new(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: va.rows(),
            });
        }
        let cols = va.cols();
        let out = Array::new(len, cols, va.data()[start * cols..(start + len) * cols].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Reverse sweep from a scalar output. Afterwards [`Graph::grad`] returns
    /// `d output / d node` for every gradient-carrying node the output
    /// depends on.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let shape = self.shape(output);
        if shape != [1, 1] {
            return Err(NumericsError::NotScalar { shape });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(Array::scalar(1.0));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Array> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let [r, c] = node.value.shape();
        Some(self.grads[v.0].get_or_insert_with(|| Array::zeros(r, c)))
    }

    fn propagate(&mut self, i: usize, g: &Array) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.acc(b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.acc(b) {
                    gb.axpy(-1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let vb = self.nodes[b.0].value.clone();
                    let ga = self.acc(a).unwrap();
                    for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * y;
                    }
                }
                if self.rg(b) {
                    let va = self.nodes[a.0].value.clone();
                    let gb = self.acc(b).unwrap();
                    for ((o, &gv), &x) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(a) {
                    ga.axpy(c, g);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.acc(b) {
                    for r in 0..g.rows() {
                        for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                if self.rg(a) {
                    let vb = std::mem::replace(&mut self.nodes[b.0].value, Array::zeros(0, 0));
                    let ga = self.acc(a).unwrap();
                    matmul_bt_acc(g, &vb, ga);
                    self.nodes[b.0].value = vb;
                }
                if self.rg(b) {
                    let va = std::mem::replace(&mut self.nodes[a.0].value, Array::zeros(0, 0));
                    let gb = self.acc(b).unwrap();
                    matmul_at_acc(&va, g, gb);
                    self.nodes[a.0].value = va;
                }
            }
            Op::Softmax(a, tau) => {
                if self.rg(a) {
                    let s = std::mem::replace(&mut self.nodes[i].value, Array::zeros(0, 0));
                    let ga = self.acc(a).unwrap();
                    for r in 0..s.rows() {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let dot: Real = sr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for ((o, &sv), &gv) in ga.row_mut(r).iter_mut().zip(sr).zip(gr) {
                            *o += sv * (gv - dot) / tau;
                        }
                    }
                    self.nodes[i].value = s;
                }
            }
            Op::LogSoftmax(a, tau) => {
                if self.rg(a) {
                    let l = std::mem::replace(&mut self.nodes[i].value, Array::zeros(0, 0));
                    let ga = self.acc(a).unwrap();
                    for r in 0..l.rows() {
                        let (lr, gr) = (l.row(r), g.row(r));
                        let gsum: Real = gr.iter().sum();
                        for ((o, &lv), &gv) in ga.row_mut(r).iter_mut().zip(lr).zip(gr) {
                            *o += (gv - lv.exp() * gsum) / tau;
                        }
                    }
                    self.nodes[i].value = l;
                }
            }
            Op::Log(a) => {
                if self.rg(a) {
                    let va = self.nodes[a.0].value.clone();
                    let ga = self.acc(a).unwrap();
                    for ((o, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv / x;
                    }
                }
            }
            Op::Exp(a) | Op::Tanh(a) => {
                if self.rg(a) {
                    let is_exp = matches!(self.nodes[i].op, Op::Exp(_));
                    let y = std::mem::replace(&mut self.nodes[i].value, Array::zeros(0, 0));
                    let ga = self.acc(a).unwrap();
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += if is_exp { gv * yv } else { gv * (1.0 - yv * yv) };
                    }
                    self.nodes[i].value = y;
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                if let Some(ga) = self.acc(a) {
                    ga.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len().max(1) as Real;
                let gv = g.item() / n;
                if let Some(ga) = self.acc(a) {
                    ga.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = self.acc(a) {
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                if let Some(ga) = self.acc(a) {
                    for (k, &(r, c)) in idx.iter().enumerate() {
                        let cur = ga.get(r, c);
                        ga.set(r, c, cur + g.data()[k]);
                    }
                }
            }
            Op::Minimum(a, b) => {
                let take_a: Vec<bool> = self.nodes[a.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[b.0].value.data())
                    .map(|(x, y)| x <= y)
                    .collect();
                if let Some(ga) = self.acc(a) {
                    for ((o, &gv), &t) in ga.data_mut().iter_mut().zip(g.data()).zip(&take_a) {
                        if t {
                            *o += gv;
                        }
                    }
                }
                if let Some(gb) = self.acc(b) {
                    for ((o, &gv), &t) in gb.data_mut().iter_mut().zip(g.data()).zip(&take_a) {
                        if !t {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p.0].value.rows();
                    if let Some(gp) = self.acc(p) {
                        for (o, &x) in gp
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[offset * cols..(offset + rows) * cols])
                        {
                            *o += x;
                        }
                    }
                    offset += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = g.cols();
                if let Some(ga) = self.acc(a) {
                    let dst = &mut ga.data_mut()[start * cols..start * cols + g.len()];
                    for (o, &x) in dst.iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
            }
        }
    }
}
