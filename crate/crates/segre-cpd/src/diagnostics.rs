//! Model-quality metrics: RMSE, relative reconstruction error, rating
//! prediction rules, the secant-dimension sampling budget, and the core
//! consistency diagnostic.

use crate::error::{Error, Result};
use crate::tensor::{mode_multiply, visit_indices, ColMatrix, CpdModel, DenseTensor};
use nalgebra::DMatrix;
use serde::Serialize;

/// Root mean square error between paired prediction and truth lists.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::invalid(format!(
            "rmse length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("rmse of empty lists"));
    }
    let sum: f64 = pred
        .iter()
        .zip(actual)
        .map(|(x, y)| (y - x) * (y - x))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// `||T - reconstruction||_F / ||T||_F`. The model is densified, which is
/// fine at the shapes this crate targets.
pub fn relative_error(reference: &DenseTensor, model: &CpdModel) -> Result<f64> {
    if reference.shape() != model.shape() {
        return Err(Error::shape_mismatch(model.shape(), reference.shape()));
    }
    let norm = reference.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::invalid("relative error of a zero reference tensor"));
    }
    let rec = model.to_dense()?;
    let diff = reference
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// How a 5-vector of per-star scores becomes a single predicted rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionRule {
    /// `sum_k k * s_k`.
    WeightedAverage,
    /// Rescale the scores to sum 1, then the weighted average.
    RescaleThenAverage,
    /// Clamp each score to `[0, 1]`, then the weighted average.
    ClampThenAverage,
    /// The star index of the largest score, ties to the smallest index.
    Argmax,
}

impl PredictionRule {
    pub fn all() -> [PredictionRule; 4] {
        [
            PredictionRule::WeightedAverage,
            PredictionRule::RescaleThenAverage,
            PredictionRule::ClampThenAverage,
            PredictionRule::Argmax,
        ]
    }

    /// 1-based rule number used on the command line and in report files.
    pub fn index(&self) -> usize {
        match self {
            PredictionRule::WeightedAverage => 1,
            PredictionRule::RescaleThenAverage => 2,
            PredictionRule::ClampThenAverage => 3,
            PredictionRule::Argmax => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(PredictionRule::WeightedAverage),
            2 => Ok(PredictionRule::RescaleThenAverage),
            3 => Ok(PredictionRule::ClampThenAverage),
            4 => Ok(PredictionRule::Argmax),
            _ => Err(Error::invalid(format!("prediction rule {i} out of 1..=4"))),
        }
    }
}

fn weighted_average(scores: &[f64; 5]) -> f64 {
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1) as f64 * s)
        .sum()
}

/// Predicted rating from the five per-star scores under `rule`.
pub fn predict_rating(scores: &[f64; 5], rule: PredictionRule) -> Result<f64> {
    match rule {
        PredictionRule::WeightedAverage => Ok(weighted_average(scores)),
        PredictionRule::RescaleThenAverage => {
            let sum: f64 = scores.iter().sum();
            if sum.abs() <= 1e-12 {
                return Err(Error::invalid(
                    "rescale rule: scores sum to zero within tolerance",
                ));
            }
            let rescaled: [f64; 5] = std::array::from_fn(|i| scores[i] / sum);
            Ok(weighted_average(&rescaled))
        }
        PredictionRule::ClampThenAverage => {
            let clamped: [f64; 5] = std::array::from_fn(|i| scores[i].clamp(0.0, 1.0));
            Ok(weighted_average(&clamped))
        }
        PredictionRule::Argmax => {
            let mut best = 0usize;
            for i in 1..5 {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            Ok((best + 1) as f64)
        }
    }
}

/// Upper bound on the dimension of the r-th secant variety of the Segre
/// manifold: `r * (sum_i n_i - d + 1)`. For order 3 this is the familiar
/// `r (n1 + n2 + n3 - 2)`; higher orders are a direct generalization.
pub fn secant_dim_bound(rank: usize, dims: &[usize]) -> Result<usize> {
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if dims.len() < 2 {
        return Err(Error::invalid("need at least two modes"));
    }
    let sum: usize = dims.iter().sum();
    Ok(rank * (sum - dims.len() + 1))
}

/// Core consistency result. `regularized` is set when some factor was
/// rank-deficient and its pseudo-inverse had to truncate singular values.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoreConsistency {
    pub value: f64,
    pub regularized: bool,
}

/// Relative singular-value cutoff for the factor pseudo-inverses.
const PINV_CUTOFF: f64 = 1e-12;

fn pseudo_inverse(factor: &ColMatrix, weights: Option<&[f64]>) -> Result<(ColMatrix, bool)> {
    let n = factor.nrows();
    let r = factor.ncols();
    let mut m = DMatrix::<f64>::zeros(n, r);
    for j in 0..r {
        let w = weights.map_or(1.0, |ws| ws[j]);
        for i in 0..n {
            m[(i, j)] = factor.get(i, j) * w;
        }
    }
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::invalid("cannot invert an all-zero factor"));
    }
    let cutoff = smax * PINV_CUTOFF;
    let mut regularized = false;
    // pinv = V * diag(1/s) * U^T, truncating singular values at the cutoff.
    let k = svd.singular_values.len();
    let mut inv_s = DMatrix::<f64>::zeros(k, k);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            inv_s[(i, i)] = 1.0 / s;
        } else {
            regularized = true;
        }
    }
    let pinv = v_t.transpose() * inv_s * u.transpose(); // r x n
    let cols = (0..n)
        .map(|c| (0..r).map(|row| pinv[(row, c)]).collect::<Vec<f64>>())
        .collect::<Vec<_>>();
    Ok((ColMatrix::from_columns(cols)?, regularized))
}

/// Core consistency of `model` against a complete reference tensor.
///
/// The least-squares Tucker core of the reference with respect to the
/// weighted factor matrices (weights folded into mode 0) is computed via
/// mode-wise pseudo-inverses; the result is `100 * (1 - ||G - D||^2 / r)`
/// where `D` is the superdiagonal identity core. Near 100 means the CP
/// structure explains the data; the value degrades, typically far below
/// 100, when the model is overfactored.
pub fn corcondia(reference: &DenseTensor, model: &CpdModel) -> Result<CoreConsistency> {
    if reference.shape() != model.shape() {
        return Err(Error::shape_mismatch(model.shape(), reference.shape()));
    }
    let r = model.rank();
    let mut core = reference.clone();
    let mut regularized = false;
    for k in 0..model.order() {
        let weights = if k == 0 { Some(model.weights()) } else { None };
        let (pinv, reg) = pseudo_inverse(model.factor(k), weights)?;
        regularized |= reg;
        core = mode_multiply(&core, &pinv, k)?;
    }
    let mut defect = 0.0;
    visit_indices(core.shape(), |idx, lin| {
        let target = if idx.iter().all(|&i| i == idx[0]) { 1.0 } else { 0.0 };
        let d = core.data()[lin] - target;
        defect += d * d;
    });
    Ok(CoreConsistency {
        value: 100.0 * (1.0 - defect / r as f64),
        regularized,
    })
}
