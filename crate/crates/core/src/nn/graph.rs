//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records operations as they are evaluated. Parameters live in a
//! [`ParamSet`] outside the graph and are referenced, not copied, so building a
//! graph per policy step stays cheap.

use super::tensor::{
    conv2d, conv_transpose2d, conv_transpose2d_kernel_grad, dims4, matmul_acc, matmul_nt_acc,
    matmul_tn_acc, ConvGeometry, Tensor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients(self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Replaces all values, keeping names; shapes must match.
    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.tensors.len()
            || tensors.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("parameter set layout mismatch"));
        }
        self.tensors = tensors;
        Ok(())
    }
}

/// One gradient tensor per parameter, aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Tensor::norm_squared).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m, n] + [1, n]`
    AddRow(Var, Var),
    /// `[m, n] * [1, n]`
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// Gates `[B, 4H]` in order input, forget, cell, output plus the previous
    /// cell state `[B, H]`; the result is `[B, 2H]` holding `[h | c]`.
    LstmCell(Var, Var),
    Sum(Var),
    /// Sum over columns, `[m, n] -> [m, 1]`.
    RowSum(Var),
    Reshape(Var),
    ConvTranspose2d(Var, Var, ConvGeometry),
    /// `[N, C, H, W] + [C]`
    AddChannelBias(Var, Var),
    CenterCrop(Var, usize, usize),
}

struct Node {
    op: Op,
    /// `None` for parameters, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => &self.params.tensors[i],
            _ => node.value.as_ref().expect("non-parameter node has a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id.0),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    fn row_broadcast(&self, a: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let (m, n) = self.value(a).dims2();
        if self.value(row).len() != n {
            return Err(Error::shape(format!(
                "{what}: {:?} with row {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        Ok((m, n))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast(a, row, "add_row")?;
        let (av, rv) = (self.value(a).data(), self.value(row).data());
        let mut out = av.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rv[j];
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::AddRow(a, row), Tensor::from_parts(shape, out)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast(a, row, "mul_row")?;
        let (av, rv) = (self.value(a).data(), self.value(row).data());
        let mut out = av.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= rv[j];
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::MulRow(a, row), Tensor::from_parts(shape, out)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = map(self.value(a), |x| x * s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = map(self.value(a), |x| x + s);
        self.push(Op::AddScalar(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map(self.value(a), softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "minimum")?;
        let v = zip_map(self.value(a), self.value(b), f64::min);
        Ok(self.push(Op::Minimum(a, b), v))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if start > end || end > n {
            return Err(Error::shape(format!("slice_cols {start}..{end} of {n}")));
        }
        let w = end - start;
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + end]);
        }
        Ok(self.push(Op::SliceCols(a, start, end), Tensor::from_parts(vec![m, w], out)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if start > end || end > m {
            return Err(Error::shape(format!("slice_rows {start}..{end} of {m}")));
        }
        let out = self.value(a).data()[start * n..end * n].to_vec();
        Ok(self.push(
            Op::SliceRows(a, start, end),
            Tensor::from_parts(vec![end - start, n], out),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map(|&p| self.value(p).dims2().0).unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pm != m {
                return Err(Error::shape("concat_cols: row counts differ"));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map(|&p| self.value(p).dims2().1).unwrap_or(0);
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pn != n {
                return Err(Error::shape("concat_rows: column counts differ"));
            }
            out.extend_from_slice(self.value(p).data());
            m += pm;
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(vec![m, n], out)))
    }

    /// Fused LSTM cell update; returns `[B, 2H]` holding `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (b, g4) = self.value(gates).dims2();
        let (b2, h) = self.value(c_prev).dims2();
        if b != b2 || g4 != 4 * h {
            return Err(Error::shape(format!(
                "lstm_cell: gates {:?}, cell {:?}",
                self.shape(gates),
                self.shape(c_prev)
            )));
        }
        let (z, cp) = (self.value(gates).data(), self.value(c_prev).data());
        let mut out = vec![0.0; b * 2 * h];
        for r in 0..b {
            let zr = &z[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                let c = f * cp[r * h + j] + i * g;
                out[r * 2 * h + j] = o * c.tanh();
                out[r * 2 * h + h + j] = c;
            }
        }
        Ok(self.push(Op::LstmCell(gates, c_prev), Tensor::from_parts(vec![b, 2 * h], out)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let av = self.value(a).data();
        let out = (0..m).map(|i| av[i * n..(i + 1) * n].iter().sum()).collect();
        self.push(Op::RowSum(a), Tensor::from_parts(vec![m, 1], out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Result<Var> {
        let v = conv_transpose2d(self.value(x), self.value(w), geom)?;
        Ok(self.push(Op::ConvTranspose2d(x, w, geom), v))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x))?;
        if self.value(bias).len() != c {
            return Err(Error::shape("add_channel_bias: channel mismatch"));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for v in &mut out[base..base + h * w] {
                    *v += bv[ch];
                }
            }
        }
        Ok(self.push(Op::AddChannelBias(x, bias), Tensor::from_parts(vec![n, c, h, w], out)))
    }

    /// Centre crop of the two spatial axes to `h × w`.
    pub fn center_crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, hi, wi) = dims4(self.value(x))?;
        if h > hi || w > wi {
            return Err(Error::shape("center_crop larger than input"));
        }
        let (oy, ox) = ((hi - h) / 2, (wi - w) / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let start = plane * hi * wi + (y + oy) * wi + ox;
                out.extend_from_slice(&xv[start..start + w]);
            }
        }
        Ok(self.push(Op::CenterCrop(x, h, w), Tensor::from_parts(vec![n, c, h, w], out)))
    }

    /// Reverse sweep from a scalar `loss`. Returns one gradient per
    /// parameter of the bound [`ParamSet`]; unused parameters get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::shape("backward: loss is not a node of this graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![1.0]));
        let mut out = self.params.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(i) => out.0[*i].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let (_, n) = self.value(*b).dims2();
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(g.data(), self.value(*b).data(), &mut da, m, k, n);
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    acc(*a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                    acc(*b, Tensor::from_parts(self.shape(*b).to_vec(), db));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, map(&g, |x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, zip_map(&g, self.value(*b), |x, y| x * y));
                    acc(*b, zip_map(&g, self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    let (m, n) = self.value(*a).dims2();
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g.data()[i * n + j];
                        }
                    }
                    acc(*row, Tensor::from_parts(self.shape(*row).to_vec(), dr));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let (m, n) = self.value(*a).dims2();
                    let (av, rv, gv) = (self.value(*a).data(), self.value(*row).data(), g.data());
                    let mut da = vec![0.0; m * n];
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = gv[i * n + j] * rv[j];
                            dr[j] += gv[i * n + j] * av[i * n + j];
                        }
                    }
                    acc(*a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                    acc(*row, Tensor::from_parts(self.shape(*row).to_vec(), dr));
                }
                Op::Scale(a, s) => acc(*a, map(&g, |x| x * s)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, zip_map(&g, y, |gi, yi| gi * yi * (1.0 - yi)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, zip_map(&g, y, |gi, yi| gi * (1.0 - yi * yi)));
                }
                Op::Relu(a) => {
                    acc(*a, zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
                }
                Op::Softplus(a) => {
                    acc(*a, zip_map(&g, self.value(*a), |gi, x| gi * sigmoid(x)));
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, zip_map(&g, y, |gi, yi| gi * yi));
                }
                Op::Square(a) => {
                    acc(*a, zip_map(&g, self.value(*a), |gi, x| 2.0 * gi * x));
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let shape = g.shape().to_vec();
                    let mut da = vec![0.0; g.len()];
                    let mut db = vec![0.0; g.len()];
                    for (i, &gi) in g.data().iter().enumerate() {
                        if av[i] <= bv[i] {
                            da[i] = gi;
                        } else {
                            db[i] = gi;
                        }
                    }
                    acc(*a, Tensor::from_parts(shape.clone(), da));
                    acc(*b, Tensor::from_parts(shape, db));
                }
                Op::Clamp(a, lo, hi) => {
                    acc(
                        *a,
                        zip_map(&g, self.value(*a), |gi, x| if x > *lo && x < *hi { gi } else { 0.0 }),
                    );
                }
                Op::SliceCols(a, start, end) => {
                    let (m, n) = self.value(*a).dims2();
                    let w = end - start;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        da[i * n + start..i * n + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    acc(*a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                }
                Op::SliceRows(a, start, end) => {
                    let (m, n) = self.value(*a).dims2();
                    let mut da = vec![0.0; m * n];
                    da[start * n..end * n].copy_from_slice(g.data());
                    acc(*a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = g.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2().1;
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(&g.data()[i * n + offset..i * n + offset + w]);
                        }
                        acc(p, Tensor::from_parts(self.shape(p).to_vec(), dp));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let dp = g.data()[offset..offset + len].to_vec();
                        acc(p, Tensor::from_parts(self.shape(p).to_vec(), dp));
                        offset += len;
                    }
                }
                Op::LstmCell(gates, c_prev) => {
                    let (b, h) = self.value(*c_prev).dims2();
                    let z = self.value(*gates).data();
                    let cp = self.value(*c_prev).data();
                    let y = node.value.as_ref().unwrap().data();
                    let gv = g.data();
                    let mut dz = vec![0.0; b * 4 * h];
                    let mut dcp = vec![0.0; b * h];
                    for r in 0..b {
                        let zr = &z[r * 4 * h..(r + 1) * 4 * h];
                        for j in 0..h {
                            let i = sigmoid(zr[j]);
                            let f = sigmoid(zr[h + j]);
                            let gg = zr[2 * h + j].tanh();
                            let o = sigmoid(zr[3 * h + j]);
                            let c = y[r * 2 * h + h + j];
                            let tc = c.tanh();
                            let dh = gv[r * 2 * h + j];
                            let dc = gv[r * 2 * h + h + j] + dh * o * (1.0 - tc * tc);
                            let base = r * 4 * h;
                            dz[base + j] = dc * gg * i * (1.0 - i);
                            dz[base + h + j] = dc * cp[r * h + j] * f * (1.0 - f);
                            dz[base + 2 * h + j] = dc * i * (1.0 - gg * gg);
                            dz[base + 3 * h + j] = dh * tc * o * (1.0 - o);
                            dcp[r * h + j] = dc * f;
                        }
                    }
                    acc(*gates, Tensor::from_parts(self.shape(*gates).to_vec(), dz));
                    acc(*c_prev, Tensor::from_parts(self.shape(*c_prev).to_vec(), dcp));
                }
                Op::Sum(a) => {
                    let gi = g.data()[0];
                    acc(*a, Tensor::filled(self.shape(*a), gi));
                }
                Op::RowSum(a) => {
                    let (m, n) = self.value(*a).dims2();
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        da[i * n..(i + 1) * n].fill(g.data()[i]);
                    }
                    acc(*a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    acc(*a, g.reshaped(&shape)?);
                }
                Op::ConvTranspose2d(x, w, geom) => {
                    let (_, _, h, wd) = dims4(self.value(*x))?;
                    acc(*x, conv2d(&g, self.value(*w), *geom, h, wd)?);
                    let dw = conv_transpose2d_kernel_grad(self.value(*x), &g, *geom, self.shape(*w));
                    acc(*w, dw);
                }
                Op::AddChannelBias(x, bias) => {
                    let (n, c, h, w) = dims4(&g)?;
                    let mut db = vec![0.0; c];
                    for b in 0..n {
                        for (ch, d) in db.iter_mut().enumerate() {
                            let base = (b * c + ch) * h * w;
                            *d += g.data()[base..base + h * w].iter().sum::<f64>();
                        }
                    }
                    acc(*bias, Tensor::from_parts(self.shape(*bias).to_vec(), db));
                    acc(*x, g);
                }
                Op::CenterCrop(x, h, w) => {
                    let (n, c, hi, wi) = dims4(self.value(*x))?;
                    let (oy, ox) = ((hi - h) / 2, (wi - w) / 2);
                    let mut dx = vec![0.0; n * c * hi * wi];
                    for plane in 0..n * c {
                        for y in 0..*h {
                            let start = plane * hi * wi + (y + oy) * wi + ox;
                            let src = (plane * h + y) * w;
                            dx[start..start + w].copy_from_slice(&g.data()[src..src + w]);
                        }
                    }
                    acc(*x, Tensor::from_parts(vec![n, c, hi, wi], dx));
                }
            }
        }
        Ok(out)
    }
}
