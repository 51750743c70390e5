//! Dense row-major `f64` tensors and the kernels the tape and networks build on.
//!
//! Almost everything in the crate works on rank-2 tensors laid out as
//! `[batch, features]`; rank-1 tensors show up at API edges (a single state,
//! a bias vector) and are promoted with [`Tensor::as_row`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    /// A `[1, 1]` tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns of a rank-2 tensor; the length of a rank-1 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[self.shape.len() - 1],
        }
    }

    /// View a rank-1 tensor as `[1, n]`; rank-2 tensors pass through.
    pub fn as_row(&self) -> Result<Tensor> {
        match self.shape.len() {
            1 => Ok(Tensor { shape: vec![1, self.shape[0]], data: self.data.clone() }),
            2 => Ok(self.clone()),
            r => Err(Error::shape(format!("expected rank 1 or 2, got rank {r}"))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Single element of a rank-2 tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// The only element of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "zip")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!("{what}: expected rank 2, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Stack rank-1 tensors of equal length as rows of a matrix.
    pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut n = 0;
        for r in rows {
            match cols {
                None => cols = Some(r.len()),
                Some(c) if c != r.len() => {
                    return Err(Error::shape(format!("stack_rows: row {n} has {} values, expected {c}", r.len())))
                }
                _ => {}
            }
            data.extend_from_slice(&r.data);
            n += 1;
        }
        Tensor::matrix(n, cols.unwrap_or(0), data)
    }
}

/// `x · wᵀ` for `x: [b, k]`, `w: [n, k]`.
pub(crate) fn matmul_nt(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, k) = x.expect_matrix("matmul")?;
    let (n, kw) = w.expect_matrix("matmul")?;
    if k != kw {
        return Err(Error::shape(format!("matmul: input width {k} but weight expects {kw}")));
    }
    let mut out = vec![0.0; b * n];
    // SAFETY: slices are sized b*k, n*k and b*n with the strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            b, k, n, 1.0,
            x.data.as_ptr(), k as isize, 1,
            w.data.as_ptr(), 1, k as isize,
            0.0,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
    Ok(Tensor { shape: vec![b, n], data: out })
}

/// `dy · w` for `dy: [b, n]`, `w: [n, k]`.
pub(crate) fn matmul_nn(dy: &Tensor, w: &Tensor) -> Tensor {
    let (b, n) = (dy.shape[0], dy.shape[1]);
    let k = w.shape[1];
    let mut out = vec![0.0; b * k];
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            b, n, k, 1.0,
            dy.data.as_ptr(), n as isize, 1,
            w.data.as_ptr(), k as isize, 1,
            0.0,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
    Tensor { shape: vec![b, k], data: out }
}

/// `dyᵀ · x` for `dy: [b, n]`, `x: [b, k]`.
pub(crate) fn matmul_tn(dy: &Tensor, x: &Tensor) -> Tensor {
    let (b, n) = (dy.shape[0], dy.shape[1]);
    let k = x.shape[1];
    let mut out = vec![0.0; n * k];
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            n, b, k, 1.0,
            dy.data.as_ptr(), 1, n as isize,
            x.data.as_ptr(), k as isize, 1,
            0.0,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
    Tensor { shape: vec![n, k], data: out }
}

/// Add a length-`n` bias to every row of `[b, n]`.
pub(crate) fn add_row(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = x.expect_matrix("bias add")?;
    if bias.len() != n {
        return Err(Error::shape(format!("bias of length {} for width {n}", bias.len())));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(out)
}

/// Column sums of `[b, n]` as a length-`n` vector.
pub(crate) fn col_sums(x: &Tensor) -> Vec<f64> {
    let n = x.cols();
    let mut out = vec![0.0; n];
    for row in x.data.chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Row sums of `[b, n]` as `[b, 1]`.
pub(crate) fn row_sums(x: &Tensor) -> Tensor {
    let n = x.cols();
    let data: Vec<f64> = x.data.chunks(n).map(|r| r.iter().sum()).collect();
    Tensor { shape: vec![data.len(), 1], data }
}

/// Horizontal concatenation of rank-2 tensors with equal row counts.
pub(crate) fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().map_or(0, |p| p.rows());
    let mut width = 0;
    for p in parts {
        p.expect_matrix("concat")?;
        if p.rows() != rows {
            return Err(Error::shape(format!("concat: {} rows vs {rows}", p.rows())));
        }
        width += p.cols();
    }
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Ok(Tensor { shape: vec![rows, width], data })
}

pub(crate) fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("slice")?;
    if start > end || end > cols {
        return Err(Error::shape(format!("slice {start}..{end} of width {cols}")));
    }
    let mut data = Vec::with_capacity(rows * (end - start));
    for r in 0..rows {
        data.extend_from_slice(&x.row(r)[start..end]);
    }
    Ok(Tensor { shape: vec![rows, end - start], data })
}

/// `out[:, j] = x[:, index[j]]`.
pub(crate) fn gather_cols(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("gather")?;
    if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
        return Err(Error::shape(format!("gather: column {bad} out of width {cols}")));
    }
    let mut data = Vec::with_capacity(rows * index.len());
    for r in 0..rows {
        let row = x.row(r);
        data.extend(index.iter().map(|&i| row[i]));
    }
    Ok(Tensor { shape: vec![rows, index.len()], data })
}
