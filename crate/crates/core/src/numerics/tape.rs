//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. Nodes only reference earlier nodes, so walking the tape
//! backwards visits every node after all of its consumers. Leaves are either
//! trainable parameters (registered under a [`ParamKey`]) or constants.
//! Nodes that do not depend on any parameter are skipped during backward.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Name of a trainable tensor, e.g. `critic.q1.w0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamKey(pub String);

impl ParamKey {
    pub fn new(s: impl Into<String>) -> Self {
        ParamKey(s.into())
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamKey),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Tanh(Var),
    Sech2(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    SumCols(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamKey, Tensor>,
}

impl Gradients {
    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.map.get(key)
    }

    pub fn insert(&mut self, key: ParamKey, grad: Tensor) {
        self.map.insert(key, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, key: ParamKey, value: Tensor) -> Var {
        self.push(value, Op::Param(key), true)
    }

    /// `x · wᵀ` with `w` stored `[out, in]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = tensor::matmul_nt(self.value(x), self.value(w))?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::MatMulT(x, w), rg))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = tensor::add_row(self.value(x), self.value(bias))?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Min(a, b), f64::min)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Add a scalar to every element.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Shift(x), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// `1 - tanh²(x)` evaluated from `x`, accurate where tanh saturates.
    pub fn sech2(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sech2(x), |v| v.cosh().powi(-2))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero strictly outside the range.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat_cols(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = tensor::slice_cols(self.value(x), start, end)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCols(x, start), rg))
    }

    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let value = tensor::gather_cols(self.value(x), index)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherCols(x, index.to_vec()), rg))
    }

    /// `[b, n] -> [b, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.value(x).expect_matrix("sum_cols")?;
        let value = tensor::row_sums(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumCols(x), rg))
    }

    /// Mean over all elements, as a `[1, 1]` scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Backpropagate from a scalar node with seed gradient 1.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let seed = Tensor::filled(self.value(loss).shape(), 1.0);
        if seed.len() != 1 {
            return Err(Error::usage(format!(
                "backward() needs a scalar loss, got shape {:?}; use backward_with_seed",
                self.value(loss).shape()
            )));
        }
        self.backward_with_seed(loss, seed)
    }

    pub fn backward_with_seed(self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward on an empty tape"));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::usage("backward from a variable of another tape"));
        }
        self.value(output).expect_same_shape(&seed, "backward seed")?;

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut out = Gradients::default();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, d: Tensor| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(key) => match out.map.get_mut(key) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.map.insert(key.clone(), g);
                    }
                },
                Op::MatMulT(x, w) => {
                    if self.rg(*x) {
                        send(*x, tensor::matmul_nn(&g, val(*w)));
                    }
                    if self.rg(*w) {
                        send(*w, tensor::matmul_tn(&g, val(*x)));
                    }
                }
                Op::AddRow(x, b) => {
                    if self.rg(*b) {
                        let shape = val(*b).shape().to_vec();
                        send(*b, Tensor::new(shape, tensor::col_sums(&g))?);
                    }
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        send(*a, g.zip_map(val(*b), |d, y| d * y)?);
                    }
                    if self.rg(*b) {
                        send(*b, g.zip_map(val(*a), |d, x| d * x)?);
                    }
                }
                Op::Min(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let mut ga = g.clone();
                    let mut gb = g;
                    for (k, (x, y)) in va.iter().zip(vb).enumerate() {
                        if x <= y {
                            gb.data_mut()[k] = 0.0;
                        } else {
                            ga.data_mut()[k] = 0.0;
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(x, c) => send(*x, g.map(|d| d * c)),
                Op::Shift(x) => send(*x, g),
                Op::Relu(x) => send(*x, g.zip_map(val(*x), |d, v| if v > 0.0 { d } else { 0.0 })?),
                Op::Tanh(x) => send(*x, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))?),
                Op::Sech2(x) => {
                    let t = val(*x).map(f64::tanh);
                    send(*x, g.zip_map(&node.value, |d, y| d * y)?.zip_map(&t, |d, t| -2.0 * d * t)?)
                }
                Op::Exp(x) => send(*x, g.zip_map(&node.value, |d, y| d * y)?),
                Op::Ln(x) => send(*x, g.zip_map(val(*x), |d, v| d / v)?),
                Op::Square(x) => send(*x, g.zip_map(val(*x), |d, v| 2.0 * v * d)?),
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(*x, g.zip_map(val(*x), |d, v| if v >= lo && v <= hi { d } else { 0.0 })?)
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        if self.rg(*p) {
                            send(*p, tensor::slice_cols(&g, start, start + w)?);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let src = val(*x);
                    let (rows, cols) = (src.rows(), src.cols());
                    let w = g.cols();
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                    }
                    send(*x, Tensor::matrix(rows, cols, d)?);
                }
                Op::GatherCols(x, index) => {
                    let src = val(*x);
                    let (rows, cols) = (src.rows(), src.cols());
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for (j, &i) in index.iter().enumerate() {
                            d[r * cols + i] += g.at(r, j);
                        }
                    }
                    send(*x, Tensor::matrix(rows, cols, d)?);
                }
                Op::SumCols(x) => {
                    let src = val(*x);
                    let cols = src.cols();
                    let d: Vec<f64> = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
                    send(*x, Tensor::new(src.shape().to_vec(), d)?);
                }
                Op::Mean(x) => {
                    let src = val(*x);
                    let scale = g.item()? / src.len() as f64;
                    send(*x, Tensor::filled(src.shape(), scale));
                }
            }
        }
        Ok(out)
    }
}
