//! Dense row-major tensors and the FP32 / Int8 GEMM kernels.

use crate::error::{Error, Result};
use crate::par;

/// Largest inner dimension accepted by the Int8 GEMM. `2^15 * 127 * 127`
/// still fits in an `i32`, so no accumulator can overflow below this.
pub const MAX_I8_INNER_DIM: usize = 1 << 15;

// Below this many multiply-adds the row-parallel path is not worth the
// scheduling overhead. Output is identical either way.
const PAR_THRESHOLD: usize = 1 << 15;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} has a zero dimension"
        )));
    }
    if numel(shape) != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} needs {} values, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

/// Dense FP32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(
            vec![rows.len(), cols],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix over the last dimension.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_len(shape, self.data.len())?;
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// Int8 tensor: quantized weights, activations and embedding tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor8 {
    shape: Vec<usize>,
    data: Vec<i8>,
}

impl IntTensor8 {
    pub fn new(shape: Vec<usize>, data: Vec<i8>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn from_rows(rows: &[&[i8]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(
            vec![rows.len(), cols],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[i8] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_f32(&self) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// Int32 tensor: GEMM accumulators and quantized biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor32 {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl IntTensor32 {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

fn matrix_dims(a: &[usize], b: &[usize], b_transposed: bool) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 {
        return Err(Error::Dimension(format!(
            "gemm needs 2-D operands, got {a:?} and {b:?}"
        )));
    }
    let (m, k) = (a[0], a[1]);
    let (kb, n) = if b_transposed { (b[1], b[0]) } else { (b[0], b[1]) };
    if k != kb {
        return Err(Error::Dimension(format!(
            "gemm inner dimensions disagree: {a:?} x {b:?}{}",
            if b_transposed { "^T" } else { "" }
        )));
    }
    Ok((m, k, n))
}

#[inline]
fn f32_row_kernel(a_row: &[f32], b: &[f32], n: usize, out: &mut [f32]) {
    // c[i, j] accumulates a[i, 0] b[0, j] + a[i, 1] b[1, j] + ... strictly in t order.
    out.iter_mut().for_each(|v| *v = 0.0);
    for (t, &av) in a_row.iter().enumerate() {
        let b_row = &b[t * n..(t + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// `a [m x k] * b [k x n]` in FP32. Each output element is reduced left to
/// right over the inner index, so results are bit-identical across runs and
/// across the parallel and sequential paths.
pub fn gemm_f32(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matrix_dims(&a.shape, &b.shape, false)?;
    let mut out = vec![0.0f32; m * n];
    let kernel = |i: usize, row: &mut [f32]| f32_row_kernel(&a.data[i * k..(i + 1) * k], &b.data, n, row);
    if m * n * k >= PAR_THRESHOLD {
        par::for_each_row(&mut out, n, kernel);
    } else {
        par::for_each_row_seq(&mut out, n, kernel);
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Same contract as [`gemm_f32`], always on the calling thread.
pub fn gemm_f32_seq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matrix_dims(&a.shape, &b.shape, false)?;
    let mut out = vec![0.0f32; m * n];
    par::for_each_row_seq(&mut out, n, |i, row| {
        f32_row_kernel(&a.data[i * k..(i + 1) * k], &b.data, n, row)
    });
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a [m x k] * b^T` for `b [n x k]`.
pub fn gemm_f32_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matrix_dims(&a.shape, &b.shape, true)?;
    gemm_f32(a, &b.transpose())
}

/// `a^T * b` for `a [k x m]`, `b [k x n]`.
pub fn gemm_f32_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    gemm_f32(&a.transpose(), b)
}

#[inline]
fn i8_row_kernel(a_row: &[i8], b: &[i8], n: usize, out: &mut [i32]) {
    out.iter_mut().for_each(|v| *v = 0);
    for (t, &av) in a_row.iter().enumerate() {
        let av = av as i32;
        let b_row = &b[t * n..(t + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv as i32;
        }
    }
}

#[inline]
fn i8_dot(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

fn check_inner(k: usize) -> Result<()> {
    if k > MAX_I8_INNER_DIM {
        return Err(Error::Capacity(format!(
            "inner dimension {k} exceeds {MAX_I8_INNER_DIM}; i32 accumulator could overflow"
        )));
    }
    Ok(())
}

/// Exact `a [m x k] * b [k x n]` with Int8 operands and Int32 accumulation.
pub fn gemm_i8_i32(a: &IntTensor8, b: &IntTensor8) -> Result<IntTensor32> {
    let (m, k, n) = matrix_dims(&a.shape, &b.shape, false)?;
    check_inner(k)?;
    let mut out = vec![0i32; m * n];
    let kernel = |i: usize, row: &mut [i32]| i8_row_kernel(&a.data[i * k..(i + 1) * k], &b.data, n, row);
    if m * n * k >= PAR_THRESHOLD {
        par::for_each_row(&mut out, n, kernel);
    } else {
        par::for_each_row_seq(&mut out, n, kernel);
    }
    Ok(IntTensor32 {
        shape: vec![m, n],
        data: out,
    })
}

/// Sequential [`gemm_i8_i32`].
pub fn gemm_i8_i32_seq(a: &IntTensor8, b: &IntTensor8) -> Result<IntTensor32> {
    let (m, k, n) = matrix_dims(&a.shape, &b.shape, false)?;
    check_inner(k)?;
    let mut out = vec![0i32; m * n];
    par::for_each_row_seq(&mut out, n, |i, row| {
        i8_row_kernel(&a.data[i * k..(i + 1) * k], &b.data, n, row)
    });
    Ok(IntTensor32 {
        shape: vec![m, n],
        data: out,
    })
}

/// `a [m x k] * b^T` for `b [n x k]`; the layout FC weights are stored in.
pub fn gemm_i8_i32_nt(a: &IntTensor8, b: &IntTensor8) -> Result<IntTensor32> {
    let (m, k, n) = matrix_dims(&a.shape, &b.shape, true)?;
    check_inner(k)?;
    let mut out = vec![0i32; m * n];
    let kernel = |i: usize, row: &mut [i32]| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = i8_dot(a_row, &b.data[j * k..(j + 1) * k]);
        }
    };
    if m * n * k >= PAR_THRESHOLD {
        par::for_each_row(&mut out, n, kernel);
    } else {
        par::for_each_row_seq(&mut out, n, kernel);
    }
    Ok(IntTensor32 {
        shape: vec![m, n],
        data: out,
    })
}
