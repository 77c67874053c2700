//! Dense and coordinate-sparse tensor containers and the multilinear kernels
//! the rest of the crate builds on.
//!
//! Conventions:
//!
//! * All tensors have order `d >= 2`.
//! * [`DenseTensor`] stores its entries in **row-major** order: the last
//!   index varies fastest. `linear_index` and `multi_index` convert between
//!   the two views; file formats always spell out full multi-indices so the
//!   linearization never leaks.
//! * Indices are 0-based everywhere in memory. The 1-based convention of the
//!   text formats is handled by the parsers and printers alone.
//! * A CPD model keeps its weights separate from the factor columns, so the
//!   factor matrices always have unit-norm columns.

use crate::error::{Error, Result};

/// Tolerance for the unit-norm column invariant of factors and rank-1 terms.
pub const UNIT_NORM_TOL: f64 = 1e-12;

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.len() < 2 {
        return Err(Error::invalid(format!(
            "tensor order must be at least 2, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::invalid("tensor extents must be positive"));
    }
    let mut len = 1usize;
    for &n in shape {
        len = len
            .checked_mul(n)
            .ok_or_else(|| Error::invalid(format!("tensor shape {shape:?} is too large")))?;
    }
    // Refuse shapes whose dense buffer cannot be addressed.
    if len > isize::MAX as usize / 8 {
        return Err(Error::invalid(format!("tensor shape {shape:?} is too large")));
    }
    Ok(len)
}

/// Walks every multi-index of `shape` in row-major order, passing the
/// multi-index and the matching linear index to `f`.
pub(crate) fn visit_indices(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let d = shape.len();
    let mut idx = vec![0usize; d];
    let len: usize = shape.iter().product();
    for lin in 0..len {
        f(&idx, lin);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// A dense real tensor of order `d >= 2` with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&shape)?;
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = checked_len(&shape)?;
        Ok(DenseTensor {
            shape,
            data: vec![0.0; len],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    /// Row-major linear index of a multi-index.
    ///
    /// Panics if the index has the wrong length or is out of range.
    pub fn linear_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index order mismatch");
        let mut lin = 0usize;
        for (k, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of range for extent {n} in mode {k}");
            lin = lin * n + i;
        }
        lin
    }

    /// Writes the multi-index of a row-major linear index into `out`.
    pub fn multi_index(&self, mut linear: usize, out: &mut [usize]) {
        assert!(linear < self.data.len(), "linear index out of range");
        assert_eq!(out.len(), self.shape.len());
        for k in (0..self.shape.len()).rev() {
            out[k] = linear % self.shape[k];
            linear /= self.shape[k];
        }
    }

    /// Panics if the index is out of range, like slice indexing.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.linear_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let lin = self.linear_index(index);
        self.data[lin] = value;
    }

    /// Euclidean norm of the entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius inner product with another tensor of the same shape.
    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch(&self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// An observed-entry set: a coordinate list over a fixed shape.
///
/// Index tuples are distinct and in range. The entry list may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservations {
    shape: Vec<usize>,
    /// Flattened index tuples, `order()` entries per observation.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseObservations {
    pub fn new(shape: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        checked_len_for_sparse(&shape)?;
        let d = shape.len();
        let mut indices = Vec::with_capacity(entries.len() * d);
        let mut values = Vec::with_capacity(entries.len());
        for (idx, value) in &entries {
            if idx.len() != d {
                return Err(Error::invalid(format!(
                    "index tuple {idx:?} has order {} but shape {shape:?} has order {d}",
                    idx.len()
                )));
            }
            for (k, (&i, &n)) in idx.iter().zip(&shape).enumerate() {
                if i >= n {
                    return Err(Error::invalid(format!(
                        "index {i} out of range for extent {n} in mode {k}"
                    )));
                }
            }
            indices.extend_from_slice(idx);
            values.push(*value);
        }
        let obs = SparseObservations {
            shape,
            indices,
            values,
        };
        obs.check_distinct()?;
        Ok(obs)
    }

    /// Internal constructor for callers that guarantee validity (same index
    /// set as an existing observation list, for example).
    pub(crate) fn from_parts_unchecked(
        shape: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indices.len(), values.len() * shape.len());
        SparseObservations {
            shape,
            indices,
            values,
        }
    }

    fn check_distinct(&self) -> Result<()> {
        let d = self.shape.len();
        let mut keys: Vec<u128> = self
            .indices
            .chunks_exact(d)
            .map(|idx| {
                let mut key = 0u128;
                for (&i, &n) in idx.iter().zip(&self.shape) {
                    key = key * n as u128 + i as u128;
                }
                key
            })
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate index tuple in observations"));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.shape.len())
            .zip(self.values.iter().copied())
    }

    /// Every entry of a dense tensor as an observation list.
    pub fn from_dense(tensor: &DenseTensor) -> Self {
        let d = tensor.order();
        let mut indices = Vec::with_capacity(tensor.len() * d);
        let mut values = Vec::with_capacity(tensor.len());
        visit_indices(tensor.shape(), |idx, lin| {
            indices.extend_from_slice(idx);
            values.push(tensor.data()[lin]);
        });
        SparseObservations {
            shape: tensor.shape().to_vec(),
            indices,
            values,
        }
    }

    /// Dense materialization with zeros at unobserved entries.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(self.shape.clone())?;
        for (idx, value) in self.iter() {
            out.set(idx, value);
        }
        Ok(out)
    }
}

/// Sparse shapes only need per-mode validity, not an addressable product,
/// but orders below 2 are still rejected. Zero extents are allowed (the
/// entry list is then necessarily empty); densification rejects them.
fn checked_len_for_sparse(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::invalid(format!(
            "tensor order must be at least 2, got {}",
            shape.len()
        )));
    }
    Ok(())
}

/// A dense column-major matrix. Used for factor matrices (`n_k` rows, `r`
/// columns, one column per rank-1 term) and for contraction outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl ColMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        ColMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = columns.len();
        if ncols == 0 {
            return Err(Error::invalid("matrix needs at least one column"));
        }
        let nrows = columns[0].len();
        if columns.iter().any(|c| c.len() != nrows) {
            return Err(Error::invalid("columns have inconsistent lengths"));
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for c in &columns {
            data.extend_from_slice(c);
        }
        Ok(ColMatrix { nrows, ncols, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[j * self.nrows + i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A positively weighted outer product of unit vectors, one per mode.
///
/// This is both the rank-1 building block of a CPD and a point of the Segre
/// manifold in its cone-over-spheres parametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Term {
    weight: f64,
    vectors: Vec<Vec<f64>>,
}

impl Rank1Term {
    pub fn new(weight: f64, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::invalid("rank-1 term needs at least two modes"));
        }
        if weight <= 0.0 || !weight.is_finite() {
            return Err(Error::invalid(format!(
                "rank-1 weight must be positive and finite, got {weight}"
            )));
        }
        for (k, v) in vectors.iter().enumerate() {
            if v.is_empty() {
                return Err(Error::invalid(format!("mode {k} vector is empty")));
            }
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "mode {k} vector has norm {n}, expected 1 within {UNIT_NORM_TOL:e}"
                )));
            }
        }
        Ok(Rank1Term { weight, vectors })
    }

    pub(crate) fn new_unchecked(weight: f64, vectors: Vec<Vec<f64>>) -> Self {
        Rank1Term { weight, vectors }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, mode: usize) -> &[f64] {
        &self.vectors[mode]
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.vectors.iter().map(|v| v.len()).collect()
    }

    /// Dense materialization: entry `(i_1, ..., i_d)` equals
    /// `weight * prod_k vectors[k][i_k]`.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let shape = self.shape();
        let mut out = DenseTensor::zeros(shape.clone())?;
        add_rank1(out.data_mut(), &shape, self.weight, &self.vectors);
        Ok(out)
    }
}

/// Accumulates `weight * outer(vectors)` into a row-major dense buffer.
fn add_rank1(data: &mut [f64], shape: &[usize], weight: f64, vectors: &[Vec<f64>]) {
    fn rec(data: &mut [f64], shape: &[usize], vectors: &[Vec<f64>], level: usize, partial: f64) {
        let v = &vectors[level];
        if level + 1 == shape.len() {
            for (slot, &x) in data.iter_mut().zip(v) {
                *slot += partial * x;
            }
        } else {
            let stride = data.len() / shape[level];
            for i in 0..shape[level] {
                rec(
                    &mut data[i * stride..(i + 1) * stride],
                    shape,
                    vectors,
                    level + 1,
                    partial * v[i],
                );
            }
        }
    }
    rec(data, shape, vectors, 0, weight);
}

/// A rank-`r` canonical polyadic model: `r` positive weights plus `d` factor
/// matrices with unit-norm columns. Equivalently, a point of the `r`-fold
/// product of Segre manifolds.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdModel {
    shape: Vec<usize>,
    weights: Vec<f64>,
    factors: Vec<ColMatrix>,
}

impl CpdModel {
    pub fn new(weights: Vec<f64>, factors: Vec<ColMatrix>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::invalid("model needs at least two modes"));
        }
        let r = weights.len();
        if r == 0 {
            return Err(Error::invalid("model rank must be at least 1"));
        }
        if weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
            return Err(Error::invalid("model weights must be positive and finite"));
        }
        for (k, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(Error::invalid(format!(
                    "factor {k} has {} columns, expected rank {r}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::invalid(format!("factor {k} has zero rows")));
            }
            for j in 0..r {
                let n = norm(f.col(j));
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::invalid(format!(
                        "factor {k} column {j} has norm {n}, expected 1 within {UNIT_NORM_TOL:e}"
                    )));
                }
            }
        }
        let shape = factors.iter().map(|f| f.nrows()).collect();
        Ok(CpdModel {
            shape,
            weights,
            factors,
        })
    }

    pub(crate) fn new_unchecked(weights: Vec<f64>, factors: Vec<ColMatrix>) -> Self {
        let shape = factors.iter().map(|f| f.nrows()).collect();
        CpdModel {
            shape,
            weights,
            factors,
        }
    }

    pub fn from_terms(terms: &[Rank1Term]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("model needs at least one term"));
        }
        let shape = terms[0].shape();
        if terms.iter().any(|t| t.shape() != shape) {
            return Err(Error::invalid("terms have inconsistent shapes"));
        }
        let weights = terms.iter().map(|t| t.weight()).collect();
        let factors = shape
            .iter()
            .enumerate()
            .map(|(k, _)| {
                ColMatrix::from_columns(terms.iter().map(|t| t.vector(k).to_vec()).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        CpdModel::new(weights, factors)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[ColMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &ColMatrix {
        &self.factors[mode]
    }

    /// Extracts term `j` as an owned rank-1 term.
    pub fn term(&self, j: usize) -> Rank1Term {
        Rank1Term::new_unchecked(
            self.weights[j],
            self.factors.iter().map(|f| f.col(j).to_vec()).collect(),
        )
    }

    /// Model entry at one multi-index: `sum_j w_j prod_k factor_k[i_k, j]`.
    ///
    /// Panics if the index is out of range.
    pub fn entry(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index order mismatch");
        for (k, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of range for extent {n} in mode {k}");
        }
        let mut sum = 0.0;
        for j in 0..self.rank() {
            let mut prod = self.weights[j];
            for (k, &i) in index.iter().enumerate() {
                prod *= self.factors[k].get(i, j);
            }
            sum += prod;
        }
        sum
    }

    /// Dense materialization of the full model.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(self.shape.clone())?;
        for j in 0..self.rank() {
            let cols: Vec<Vec<f64>> = self.factors.iter().map(|f| f.col(j).to_vec()).collect();
            add_rank1(out.data_mut(), &self.shape, self.weights[j], &cols);
        }
        Ok(out)
    }
}

/// Residual `observed - model` restricted to the observed index set.
pub fn masked_residual(obs: &SparseObservations, model: &CpdModel) -> Result<SparseObservations> {
    if obs.shape() != model.shape() {
        return Err(Error::shape_mismatch(model.shape(), obs.shape()));
    }
    let values = obs
        .iter()
        .map(|(idx, v)| v - model.entry(idx))
        .collect::<Vec<_>>();
    Ok(SparseObservations::from_parts_unchecked(
        obs.shape.clone(),
        obs.indices.clone(),
        values,
    ))
}

/// Sparse matricized-tensor-times-Khatri-Rao kernel.
///
/// Column `j`, row `i` of the result accumulates, over the residual entries
/// whose mode-`mode` index equals `i`, the entry value times the product of
/// the off-mode factor entries of term `j`. This is the one heavy kernel;
/// Riemannian gradients are assembled from it.
pub fn contract_residual(
    res: &SparseObservations,
    model: &CpdModel,
    mode: usize,
) -> Result<ColMatrix> {
    if res.shape() != model.shape() {
        return Err(Error::shape_mismatch(model.shape(), res.shape()));
    }
    if mode >= model.order() {
        return Err(Error::invalid(format!(
            "mode {mode} out of range for order {}",
            model.order()
        )));
    }
    let r = model.rank();
    let n_mode = model.shape()[mode];
    let mut out = ColMatrix::zeros(n_mode, r);
    for (idx, value) in res.iter() {
        for j in 0..r {
            let mut prod = value;
            for (k, &i) in idx.iter().enumerate() {
                if k != mode {
                    prod *= model.factors[k].get(i, j);
                }
            }
            out.data[j * n_mode + idx[mode]] += prod;
        }
    }
    Ok(out)
}

/// Dense analogue of [`contract_residual`], used when the ambient gradient
/// has to be materialized (complete observations or the range penalty).
pub(crate) fn contract_dense(
    tensor: &DenseTensor,
    model: &CpdModel,
    mode: usize,
) -> Result<ColMatrix> {
    if tensor.shape() != model.shape() {
        return Err(Error::shape_mismatch(model.shape(), tensor.shape()));
    }
    let r = model.rank();
    let n_mode = model.shape()[mode];
    let mut out = ColMatrix::zeros(n_mode, r);
    visit_indices(tensor.shape(), |idx, lin| {
        let value = tensor.data()[lin];
        if value != 0.0 {
            for j in 0..r {
                let mut prod = value;
                for (k, &i) in idx.iter().enumerate() {
                    if k != mode {
                        prod *= model.factors[k].get(i, j);
                    }
                }
                out.data[j * n_mode + idx[mode]] += prod;
            }
        }
    });
    Ok(out)
}

/// Multiplies `tensor` along `mode` by a matrix given in column-major form
/// with `matrix.ncols() == shape[mode]`; the mode extent becomes
/// `matrix.nrows()`.
pub fn mode_multiply(tensor: &DenseTensor, matrix: &ColMatrix, mode: usize) -> Result<DenseTensor> {
    if mode >= tensor.order() {
        return Err(Error::invalid(format!(
            "mode {mode} out of range for order {}",
            tensor.order()
        )));
    }
    if matrix.ncols() != tensor.shape()[mode] {
        return Err(Error::invalid(format!(
            "matrix has {} columns but mode {mode} extent is {}",
            matrix.ncols(),
            tensor.shape()[mode]
        )));
    }
    let mut out_shape = tensor.shape().to_vec();
    out_shape[mode] = matrix.nrows();
    let mut out = DenseTensor::zeros(out_shape)?;
    let mut out_idx = vec![0usize; tensor.order()];
    visit_indices(tensor.shape(), |idx, lin| {
        let value = tensor.data()[lin];
        if value != 0.0 {
            out_idx.copy_from_slice(idx);
            for a in 0..matrix.nrows() {
                out_idx[mode] = a;
                let olin = out.linear_index(&out_idx);
                out.data_mut()[olin] += matrix.get(a, idx[mode]) * value;
            }
        }
    });
    Ok(out)
}
