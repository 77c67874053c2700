//! Least-squares objectives over the product Segre manifold and their
//! Riemannian gradients.
//!
//! The objective is
//!
//! ```text
//! f(A) = 1/2 * sum_{I} (T - A)^2  +  lambda * sum_{domain} (A^2 - A)^power
//! ```
//!
//! where `A` is the model's reconstruction evaluated entry by entry, `I` is
//! the observed index set (all entries for a complete tensor), and the
//! second term is an optional range penalty that pushes entries toward
//! `[0, 1]`. The power is odd, so inside `[0, 1]` the summand stays close to
//! zero from below while growing fast outside.
//!
//! The penalty sums over every entry of the ambient shape by default, which
//! costs `O(prod n_i)` per evaluation; that is exact and matches how it is
//! defined, but it densifies the reconstruction. For large shapes a fixed
//! random subsample of penalty entries can be supplied instead
//! ([`ObjectiveSpec::with_penalty_subsample`]); this is an extension, off by
//! default. With the penalty disabled the masked objective never builds a
//! dense tensor.
//!
//! The Riemannian gradient is the metric projection of the ambient
//! least-squares gradient `A - T` (plus the penalty's ambient gradient)
//! onto each term's tangent space; the optimizer descends along its
//! negative. It is assembled from the sparse contraction kernel, so with the
//! penalty off it works entirely on the observed entries.

use crate::error::{Error, Result};
use crate::segre::ProductTangent;
use crate::tensor::{
    contract_dense, contract_residual, dot, masked_residual, ColMatrix, CpdModel, DenseTensor,
    SparseObservations,
};
#[cfg(test)]
use crate::tensor::visit_indices;

/// Observed data for a fit: either the complete tensor or a coordinate list.
#[derive(Debug, Clone)]
pub enum Observations {
    Dense(DenseTensor),
    Sparse(SparseObservations),
}

impl Observations {
    pub fn shape(&self) -> &[usize] {
        match self {
            Observations::Dense(t) => t.shape(),
            Observations::Sparse(o) => o.shape(),
        }
    }

    /// Number of observed entries.
    pub fn len(&self) -> usize {
        match self {
            Observations::Dense(t) => t.len(),
            Observations::Sparse(o) => o.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An objective: observations plus penalty settings.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    observations: Observations,
    penalty_weight: f64,
    penalty_power: u32,
    /// When set, the penalty sums only over these entries (values ignored).
    penalty_sample: Option<SparseObservations>,
}

impl ObjectiveSpec {
    /// Plain masked least squares, no penalty.
    pub fn least_squares(observations: Observations) -> Self {
        ObjectiveSpec {
            observations,
            penalty_weight: 0.0,
            penalty_power: 9,
            penalty_sample: None,
        }
    }

    /// Least squares plus the range penalty at its default strength
    /// (weight 1, power 9).
    pub fn penalized(observations: Observations) -> Self {
        ObjectiveSpec {
            observations,
            penalty_weight: 1.0,
            penalty_power: 9,
            penalty_sample: None,
        }
    }

    pub fn with_penalty(mut self, weight: f64, power: u32) -> Result<Self> {
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::invalid("penalty weight must be nonnegative"));
        }
        if power == 0 || power.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "penalty power must be a positive odd integer, got {power}"
            )));
        }
        self.penalty_weight = weight;
        self.penalty_power = power;
        Ok(self)
    }

    /// Restricts the penalty sum to a fixed entry subsample. Extension for
    /// large shapes; the exact penalty is the default.
    pub fn with_penalty_subsample(mut self, sample: SparseObservations) -> Result<Self> {
        if sample.shape() != self.observations.shape() {
            return Err(Error::shape_mismatch(
                self.observations.shape(),
                sample.shape(),
            ));
        }
        self.penalty_sample = Some(sample);
        Ok(self)
    }

    pub fn observations(&self) -> &Observations {
        &self.observations
    }

    pub fn penalty_weight(&self) -> f64 {
        self.penalty_weight
    }

    pub fn penalty_power(&self) -> u32 {
        self.penalty_power
    }

    pub fn shape(&self) -> &[usize] {
        self.observations.shape()
    }

    fn check_model(&self, model: &CpdModel) -> Result<()> {
        if model.shape() != self.shape() {
            return Err(Error::shape_mismatch(self.shape(), model.shape()));
        }
        Ok(())
    }
}

/// Objective value at `model`.
pub fn objective(model: &CpdModel, spec: &ObjectiveSpec) -> Result<f64> {
    spec.check_model(model)?;
    let mut value = match &spec.observations {
        Observations::Sparse(obs) => {
            let mut acc = 0.0;
            for (idx, t) in obs.iter() {
                let r = t - model.entry(idx);
                acc += r * r;
            }
            0.5 * acc
        }
        Observations::Dense(t) => {
            let a = model.to_dense()?;
            0.5 * t
                .data()
                .iter()
                .zip(a.data())
                .map(|(t, a)| (t - a) * (t - a))
                .sum::<f64>()
        }
    };
    if spec.penalty_weight > 0.0 {
        let q = spec.penalty_power as i32;
        let mut pen = 0.0;
        match &spec.penalty_sample {
            Some(sample) => {
                for (idx, _) in sample.iter() {
                    let a = model.entry(idx);
                    pen += (a * a - a).powi(q);
                }
            }
            None => {
                let a = model.to_dense()?;
                for &v in a.data() {
                    pen += (v * v - v).powi(q);
                }
            }
        }
        value += spec.penalty_weight * pen;
    }
    Ok(value)
}

/// Riemannian gradient of the objective at `model`, tangent at `model`.
pub fn riemannian_gradient(model: &CpdModel, spec: &ObjectiveSpec) -> Result<ProductTangent> {
    spec.check_model(model)?;
    let d = model.order();
    let r = model.rank();

    // Mode contractions of the ambient gradient with the off-mode factor
    // columns. The ambient least-squares gradient is A - T, the negated
    // residual.
    let mut contractions: Vec<ColMatrix> = Vec::with_capacity(d);
    match &spec.observations {
        Observations::Sparse(obs) => {
            let res = masked_residual(obs, model)?;
            for k in 0..d {
                let w = contract_residual(&res, model, k)?;
                contractions.push(negated(w));
            }
        }
        Observations::Dense(t) => {
            let a = model.to_dense()?;
            let mut grad = a.clone();
            for (g, t) in grad.data_mut().iter_mut().zip(t.data()) {
                *g -= t;
            }
            for k in 0..d {
                contractions.push(contract_dense(&grad, model, k)?);
            }
        }
    }

    if spec.penalty_weight > 0.0 {
        let q = spec.penalty_power as i32;
        let scale = spec.penalty_weight * spec.penalty_power as f64;
        match &spec.penalty_sample {
            Some(sample) => {
                let values: Vec<f64> = sample
                    .iter()
                    .map(|(idx, _)| {
                        let a = model.entry(idx);
                        scale * (a * a - a).powi(q - 1) * (2.0 * a - 1.0)
                    })
                    .collect();
                let grad_entries: Vec<(Vec<usize>, f64)> = sample
                    .iter()
                    .map(|(idx, _)| idx.to_vec())
                    .zip(values)
                    .collect();
                let sparse_grad =
                    SparseObservations::new(model.shape().to_vec(), grad_entries)?;
                for (k, c) in contractions.iter_mut().enumerate() {
                    let w = contract_residual(&sparse_grad, model, k)?;
                    add_into(c, &w, 1.0);
                }
            }
            None => {
                let a = model.to_dense()?;
                let mut pen_grad = DenseTensor::zeros(model.shape().to_vec())?;
                for (g, &v) in pen_grad.data_mut().iter_mut().zip(a.data()) {
                    *g = scale * (v * v - v).powi(q - 1) * (2.0 * v - 1.0);
                }
                for (k, c) in contractions.iter_mut().enumerate() {
                    let w = contract_dense(&pen_grad, model, k)?;
                    add_into(c, &w, 1.0);
                }
            }
        }
    }

    // Metric projection per term: the scale component is the contraction
    // with the term's own column, the sphere components are the off-mode
    // contractions with the parallel part removed and rescaled.
    let mut grad = ProductTangent::zeros_like(model);
    for j in 0..r {
        let w_j = model.weights()[j];
        grad.weights[j] = dot(contractions[0].col(j), model.factor(0).col(j));
        for (k, contraction) in contractions.iter().enumerate() {
            let x = model.factor(k).col(j);
            let c = contraction.col(j);
            let along = dot(c, x);
            let out = grad.factors[k].col_mut(j);
            for ((o, &ci), &xi) in out.iter_mut().zip(c).zip(x) {
                *o = (ci - along * xi) / w_j;
            }
        }
    }
    Ok(grad)
}

fn negated(m: ColMatrix) -> ColMatrix {
    let mut out = m;
    for j in 0..out.ncols() {
        for v in out.col_mut(j) {
            *v = -*v;
        }
    }
    out
}

fn add_into(dst: &mut ColMatrix, src: &ColMatrix, s: f64) {
    for j in 0..dst.ncols() {
        let d = dst.col_mut(j);
        let scol = src.col(j);
        for (x, y) in d.iter_mut().zip(scol) {
            *x += s * y;
        }
    }
}

/// Full-domain entry iterator used by tests.
#[cfg(test)]
pub(crate) fn dense_objective_oracle(model: &CpdModel, reference: &DenseTensor) -> f64 {
    let mut acc = 0.0;
    visit_indices(reference.shape(), |idx, lin| {
        let r = reference.data()[lin] - model.entry(idx);
        acc += r * r;
    });
    0.5 * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segre::{exp_retract, metric_inner, product_exp, product_inner, random_point};
    use crate::tensor::Rank1Term;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tangent(model: &CpdModel, seed: u64) -> ProductTangent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = ProductTangent::zeros_like(model);
        for j in 0..model.rank() {
            t.weights[j] = rng.gen::<f64>() - 0.5;
            for k in 0..model.order() {
                let x = model.factor(k).col(j).to_vec();
                let raw: Vec<f64> = (0..x.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
                let along = dot(&raw, &x);
                let col = t.factors[k].col_mut(j);
                for ((c, &r), &xi) in col.iter_mut().zip(&raw).zip(&x) {
                    *c = r - along * xi;
                }
            }
        }
        t
    }

    fn observe_model(model: &CpdModel, density: f64, seed: u64) -> SparseObservations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        visit_indices(model.shape(), |idx, _| {
            if rng.gen::<f64>() < density {
                entries.push((idx.to_vec(), model.entry(idx)));
            }
        });
        SparseObservations::new(model.shape().to_vec(), entries).unwrap()
    }

    #[test]
    fn objective_zero_when_interpolating() {
        let model = random_point(&[3, 4, 2], 2, 1.0, 5).unwrap();
        let obs = observe_model(&model, 0.5, 6);
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        assert!(objective(&model, &spec).unwrap() < 1e-20);
    }

    #[test]
    fn objective_single_entry_half_square() {
        let mut model = random_point(&[3, 3], 1, 1.0, 2).unwrap();
        // Effectively zero model.
        model = CpdModel::new(vec![1e-12], model.factors().to_vec()).unwrap();
        let obs =
            SparseObservations::new(vec![3, 3], vec![(vec![1, 2], 2.0)]).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let f = objective(&model, &spec).unwrap();
        assert!((f - 2.0).abs() < 1e-9, "{f}");
    }

    #[test]
    fn penalty_hand_values() {
        // A single entry with value 2: (4 - 2)^9 = 512.
        let term = Rank1Term::new(2.0, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let model = CpdModel::from_terms(&[term]).unwrap();
        let empty = SparseObservations::new(vec![2, 2], vec![]).unwrap();
        let spec = ObjectiveSpec::penalized(Observations::Sparse(empty.clone()));
        let f = objective(&model, &spec).unwrap();
        assert!((f - 512.0).abs() < 1e-10, "{f}");

        // Entries of exactly 1 or 0 contribute nothing.
        let term = Rank1Term::new(1.0, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let model = CpdModel::from_terms(&[term]).unwrap();
        let spec = ObjectiveSpec::penalized(Observations::Sparse(empty));
        assert!(objective(&model, &spec).unwrap().abs() < 1e-15);
    }

    #[test]
    fn penalty_power_must_be_odd() {
        let empty = SparseObservations::new(vec![2, 2], vec![]).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(empty));
        assert!(spec.clone().with_penalty(1.0, 8).is_err());
        assert!(spec.clone().with_penalty(1.0, 0).is_err());
        assert!(spec.with_penalty(1.0, 9).is_ok());
    }

    #[test]
    fn dense_objective_matches_masked_full_observations() {
        let target = random_point(&[3, 3, 3], 2, 1.0, 11).unwrap();
        let reference = target.to_dense().unwrap();
        let model = random_point(&[3, 3, 3], 2, 1.0, 12).unwrap();

        let dense_spec =
            ObjectiveSpec::least_squares(Observations::Dense(reference.clone()));
        let full_obs = SparseObservations::from_dense(&reference);
        let sparse_spec = ObjectiveSpec::least_squares(Observations::Sparse(full_obs));

        let fd = objective(&model, &dense_spec).unwrap();
        let fs = objective(&model, &sparse_spec).unwrap();
        let oracle = dense_objective_oracle(&model, &reference);
        assert!((fd - oracle).abs() < 1e-10 * (1.0 + oracle.abs()));
        assert!((fs - oracle).abs() < 1e-10 * (1.0 + oracle.abs()));
    }

    #[test]
    fn gradient_zero_when_interpolating() {
        let model = random_point(&[3, 2, 4], 2, 1.0, 21).unwrap();
        let obs = observe_model(&model, 0.6, 22);
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let g = riemannian_gradient(&model, &spec).unwrap();
        let norm = product_inner(&model, &g, &g).sqrt();
        assert!(norm < 1e-10, "{norm}");
    }

    #[test]
    fn gradient_hand_case_single_observation() {
        // Rank 1, basis factors, one observed entry at the term's support.
        // Ambient gradient G has the single value (A - T) = (w - t0) at
        // (0, 0): scale component <G, x1 ox x2> = w - t0; sphere components
        // vanish after removing the parallel part.
        let term = Rank1Term::new(1.5, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let model = CpdModel::from_terms(&[term]).unwrap();
        let obs = SparseObservations::new(vec![2, 2], vec![(vec![0, 0], 1.0)]).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let g = riemannian_gradient(&model, &spec).unwrap();
        assert!((g.weights[0] - 0.5).abs() < 1e-12);
        for k in 0..2 {
            assert!(g.factors[k].col(0).iter().all(|v| v.abs() < 1e-12));
        }

        // Observation off the support: only the sphere component of the
        // observed mode row reacts.
        let obs = SparseObservations::new(vec![2, 2], vec![(vec![1, 0], 1.0)]).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let g = riemannian_gradient(&model, &spec).unwrap();
        // G = -1 at (1, 0). Scale: <G, e1 ox e1> = 0. Mode 0 contraction
        // with off-mode column e1: w_0 = (0, -1); remove the part along e1
        // (zero) and divide by the weight 1.5.
        assert!(g.weights[0].abs() < 1e-12);
        assert!((g.factors[0].get(1, 0) + 1.0 / 1.5).abs() < 1e-12);
        assert!(g.factors[1].col(0).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = random_point(&[4, 4, 4], 2, 1.0, 31).unwrap();
        let obs = observe_model(&random_point(&[4, 4, 4], 2, 1.0, 32).unwrap(), 0.5, 33);
        for (pw, seed0) in [(0.0, 40u64), (1.0, 60u64)] {
            let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs.clone()))
                .with_penalty(pw, 9)
                .unwrap();
            let g = riemannian_gradient(&model, &spec).unwrap();
            let h = 1e-5;
            for s in 0..10 {
                let u = random_tangent(&model, seed0 + s);
                let analytic = product_inner(&model, &g, &u);
                let plus = objective(&product_exp(&model, &u.scaled(h)).unwrap(), &spec).unwrap();
                let minus =
                    objective(&product_exp(&model, &u.scaled(-h)).unwrap(), &spec).unwrap();
                let numeric = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "penalty {pw}, dir {s}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradient_tangency() {
        let model = random_point(&[4, 3, 2], 3, 1.0, 71).unwrap();
        let obs = observe_model(&random_point(&[4, 3, 2], 3, 1.0, 72).unwrap(), 0.7, 73);
        let spec = ObjectiveSpec::penalized(Observations::Sparse(obs));
        let g = riemannian_gradient(&model, &spec).unwrap();
        for j in 0..model.rank() {
            let t = g.component(j);
            assert!(t.tangency_defect(&model.term(j)) < 1e-10);
        }
    }

    #[test]
    fn objective_invariant_under_paired_sign_flips() {
        let model = random_point(&[3, 4, 2], 2, 1.0, 81).unwrap();
        let obs = observe_model(&random_point(&[3, 4, 2], 2, 1.0, 82).unwrap(), 0.5, 83);
        let spec = ObjectiveSpec::penalized(Observations::Sparse(obs));
        let f0 = objective(&model, &spec).unwrap();

        // Flip the sign of two different factor columns of the same term.
        let mut factors = model.factors().to_vec();
        for v in factors[0].col_mut(1) {
            *v = -*v;
        }
        for v in factors[2].col_mut(1) {
            *v = -*v;
        }
        let flipped = CpdModel::new(model.weights().to_vec(), factors).unwrap();
        let f1 = objective(&flipped, &spec).unwrap();
        assert!((f0 - f1).abs() <= 1e-12 * (1.0 + f0.abs()));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let model = random_point(&[3, 3], 1, 1.0, 91).unwrap();
        let obs = SparseObservations::new(vec![3, 4], vec![(vec![0, 0], 1.0)]).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        assert!(matches!(
            objective(&model, &spec),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            riemannian_gradient(&model, &spec),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn penalty_subsample_restricts_the_domain() {
        let term = Rank1Term::new(2.0, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let model = CpdModel::from_terms(&[term]).unwrap();
        let empty = SparseObservations::new(vec![2, 2], vec![]).unwrap();
        // Subsample that avoids the (0, 0) entry where the penalty lives.
        let sample =
            SparseObservations::new(vec![2, 2], vec![(vec![1, 1], 0.0)]).unwrap();
        let spec = ObjectiveSpec::penalized(Observations::Sparse(empty))
            .with_penalty_subsample(sample)
            .unwrap();
        assert!(objective(&model, &spec).unwrap().abs() < 1e-15);
    }

    #[test]
    fn directional_derivative_through_retraction_single_term() {
        // exp_retract and metric_inner agree on the definition of slope.
        let model = random_point(&[3, 3], 1, 1.0, 99).unwrap();
        let obs = observe_model(&random_point(&[3, 3], 1, 1.0, 98).unwrap(), 0.8, 97);
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let g = riemannian_gradient(&model, &spec).unwrap();
        let p = model.term(0);
        let gt = g.component(0);
        let h = 1e-6;
        let plus = {
            let q = exp_retract(&p, &gt.scaled(h)).unwrap();
            objective(&CpdModel::from_terms(&[q]).unwrap(), &spec).unwrap()
        };
        let minus = {
            let q = exp_retract(&p, &gt.scaled(-h)).unwrap();
            objective(&CpdModel::from_terms(&[q]).unwrap(), &spec).unwrap()
        };
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = metric_inner(&p, &gt, &gt);
        assert!((numeric - analytic).abs() < 1e-4 * (1.0 + analytic.abs()));
    }
}
