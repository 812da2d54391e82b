//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a [`Tensor`] (scalars are `1×1`, vectors are columns `n×1`
//! unless stated otherwise). Operations append a node to a [`Tape`] and return
//! a [`Var`] handle; [`Tape::backward`] then walks the tape once in reverse and
//! accumulates adjoints into every node reachable from the output.
//!
//! ```
//! use neural_fgp::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::column(vec![2.0, 3.0]));
//! let y = tape.leaf(Tensor::column(vec![1.0, 1.0]));
//! let p = tape.mul(x, y).unwrap();
//! let s = tape.sum(p);
//! tape.backward(s).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
//! ```

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(
                "tensor",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Column vector `n×1`.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    /// Row vector `1×n`.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    /// The single entry of a `1×1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim(
                "item",
                format!("expected 1x1, got {}x{}", self.rows, self.cols),
            ));
        }
        Ok(self.data[0])
    }

    pub fn column_at(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`; shapes are assumed compatible.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            rows: m,
            cols: n,
            data: out,
        }
    }

    /// `self · otherᵀ`.
    fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor {
            rows: m,
            cols: n,
            data: out,
        }
    }

    /// `selfᵀ · other`.
    fn matmul_tn(&self, other: &Tensor) -> Tensor {
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            rows: m,
            cols: n,
            data: out,
        }
    }
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Transpose(Var),
    Softplus(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    /// Elementwise `max(x, s)` against a constant.
    MaxScalar(Var, f64),
    /// Euclidean norm of all entries.
    Norm(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    /// `r×c → 1×c` column sums.
    ColSums(Var),
    /// Repeat a `1×c` row `r` times.
    BroadcastRows(Var, usize),
    /// Repeat an `r×1` column `c` times.
    BroadcastCols(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// Topologically ordered record of one forward evaluation.
///
/// Parents always precede children because a node can only be created from
/// handles that already exist.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> Op {
        self.nodes[v.0].op
    }

    /// Accumulated adjoint, `None` until a backward pass reaches the node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clear every accumulated adjoint.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(
                op,
                format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} times {}x{}", ta.rows, ta.cols, tb.rows, tb.cols),
            ));
        }
        let value = ta.matmul(tb);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x / y);
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let d = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn max_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::MaxScalar(a, s), |x| x.max(s))
    }

    /// Elementwise `min(x, s)`, expressed through the maximum primitive.
    pub fn min_scalar(&mut self, a: Var, s: f64) -> Var {
        let neg = self.scale(a, -1.0);
        let clipped = self.max_scalar(neg, -s);
        self.scale(clipped, -1.0)
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.value(a).data.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::Norm(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a, k), |x| x + k)
    }

    pub fn col_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols];
        for r in 0..t.rows {
            for (o, v) in out.iter_mut().zip(&t.data[r * t.cols..(r + 1) * t.cols]) {
                *o += v;
            }
        }
        self.push(Tensor::row(out), Op::ColSums(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows != 1 {
            return Err(Error::dim(
                "broadcast_rows",
                format!("expected a 1xc row, got {}x{}", t.rows, t.cols),
            ));
        }
        let mut data = Vec::with_capacity(rows * t.cols);
        for _ in 0..rows {
            data.extend_from_slice(&t.data);
        }
        let value = Tensor {
            rows,
            cols: t.cols,
            data,
        };
        Ok(self.push(value, Op::BroadcastRows(a, rows)))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols != 1 {
            return Err(Error::dim(
                "broadcast_cols",
                format!("expected an rx1 column, got {}x{}", t.rows, t.cols),
            ));
        }
        let data = t
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cols))
            .collect();
        let value = Tensor {
            rows: t.rows,
            cols,
            data,
        };
        Ok(self.push(value, Op::BroadcastCols(a, cols)))
    }

    /// Propagate `d output / d node` to every node reachable from `output`,
    /// adding into previously accumulated adjoints.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got {}x{}",
                out_shape.0, out_shape.1
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let op = self.nodes[i].op;
            let out = &self.nodes[i].value;
            let val = |v: Var| &self.nodes[v.0].value;
            let mut contributions: [Option<(Var, Tensor)>; 2] = [None, None];
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    contributions[0] = Some((a, g.matmul_nt(val(b))));
                    contributions[1] = Some((b, val(a).matmul_tn(&g)));
                }
                Op::Add(a, b) => {
                    contributions[0] = Some((a, g.clone()));
                    contributions[1] = Some((b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contributions[0] = Some((a, g.clone()));
                    contributions[1] = Some((b, g.map(|x| -x)));
                }
                Op::Mul(a, b) => {
                    contributions[0] = Some((a, g.zip(val(b), |d, y| d * y)));
                    contributions[1] = Some((b, g.zip(val(a), |d, x| d * x)));
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    contributions[0] = Some((a, g.zip(tb, |d, y| d / y)));
                    let mut gb = g.zip(ta, |d, x| -d * x);
                    gb = gb.zip(tb, |num, y| num / (y * y));
                    contributions[1] = Some((b, gb));
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    contributions[0] = Some((a, Tensor::filled(r, c, g.data[0])));
                }
                Op::Mean(a) => {
                    let (r, c) = val(a).shape();
                    let k = g.data[0] / (r * c) as f64;
                    contributions[0] = Some((a, Tensor::filled(r, c, k)));
                }
                Op::Dot(a, b) => {
                    let d = g.data[0];
                    contributions[0] = Some((a, val(b).map(|y| d * y)));
                    contributions[1] = Some((b, val(a).map(|x| d * x)));
                }
                Op::Transpose(a) => contributions[0] = Some((a, g.transpose())),
                Op::Softplus(a) => {
                    contributions[0] = Some((a, g.zip(val(a), |d, x| d * sigmoid(x))));
                }
                Op::Sigmoid(a) => {
                    contributions[0] = Some((a, g.zip(out, |d, s| d * s * (1.0 - s))));
                }
                Op::Log(a) => contributions[0] = Some((a, g.zip(val(a), |d, x| d / x))),
                Op::Exp(a) => contributions[0] = Some((a, g.zip(out, |d, e| d * e))),
                Op::Square(a) => {
                    contributions[0] = Some((a, g.zip(val(a), |d, x| 2.0 * d * x)));
                }
                Op::Sqrt(a) => {
                    contributions[0] = Some((a, g.zip(out, |d, s| 0.5 * d / s)));
                }
                Op::MaxScalar(a, s) => {
                    contributions[0] = Some((a, g.zip(val(a), |d, x| if x > s { d } else { 0.0 })));
                }
                Op::Norm(a) => {
                    let (n, d) = (out.data[0], g.data[0]);
                    let ga = if n > 0.0 {
                        val(a).map(|x| d * x / n)
                    } else {
                        let (r, c) = val(a).shape();
                        Tensor::zeros(r, c)
                    };
                    contributions[0] = Some((a, ga));
                }
                Op::Scale(a, k) => contributions[0] = Some((a, g.map(|d| k * d))),
                Op::AddScalar(a, _) => contributions[0] = Some((a, g.clone())),
                Op::ColSums(a) => {
                    let rows = val(a).rows;
                    let mut data = Vec::with_capacity(rows * g.cols);
                    for _ in 0..rows {
                        data.extend_from_slice(&g.data);
                    }
                    let ga = Tensor {
                        rows,
                        cols: g.cols,
                        data,
                    };
                    contributions[0] = Some((a, ga));
                }
                Op::BroadcastRows(a, _) => {
                    let mut sum = vec![0.0; g.cols];
                    for r in 0..g.rows {
                        for (s, v) in sum.iter_mut().zip(&g.data[r * g.cols..(r + 1) * g.cols]) {
                            *s += v;
                        }
                    }
                    contributions[0] = Some((a, Tensor::row(sum)));
                }
                Op::BroadcastCols(a, _) => {
                    let sums = g.data.chunks(g.cols).map(|row| row.iter().sum()).collect();
                    contributions[0] = Some((a, Tensor::column(sums)));
                }
            }
            for (parent, contribution) in contributions.into_iter().flatten() {
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            adj[i] = Some(g);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let Some(a) = a {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&a),
                    slot => *slot = Some(a),
                }
            }
        }
        Ok(())
    }
}
