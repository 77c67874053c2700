//! Riemannian geometry of the Segre manifold and its r-fold products.
//!
//! A rank-1 tensor of shape `(n_1, ..., n_d)` is parametrized as a positive
//! scale `w` times an outer product of unit vectors `x_1, ..., x_d`, so the
//! manifold of rank-1 tensors is identified with the cone
//! `R+ x S^{n_1 - 1} x ... x S^{n_d - 1}`. Pulling back the ambient
//! Euclidean metric through that parametrization gives
//!
//! ```text
//! <(a, u_1..u_d), (b, v_1..v_d)>_(w, x) = a*b + w^2 * sum_i <u_i, v_i>
//! ```
//!
//! a warped product: a cone over the product of spheres. Geodesics of this
//! metric have a closed form, implemented in [`geodesic`]; it is used as the
//! optimizer's retraction via the exponential map (see [`exp_retract`]).
//!
//! For a unit-speed direction `(a, u_1..u_d)` with sphere speed
//! `M = sqrt(sum ||u_i||^2)` the curve through `(w, x)` is
//!
//! ```text
//! w(t)   = hypot(t + w*a, w^2 * M)
//! f(t)   = atan2(t*M, 1 + a*t/w)
//! x_i(t) = x_i * cos(||u_i|| f(t) / M) + u_i/||u_i|| * sin(||u_i|| f(t) / M)
//! ```
//!
//! `w(t)` expands to `sqrt(t^2 + 2*w*a*t + w^2)`, which satisfies
//! `w(0) = w` and `w'(0) = a`; the `hypot` form keeps the evaluation stable
//! when the curve passes close to the cone apex. `M -> 0` recovers the
//! radial line `w(t) = w + a*t` with constant sphere part. For `M > 0` the
//! scale never reaches zero (its minimum is `w^2 * M`), but it can dip below
//! the numerical floor; crossings of that floor are reported as
//! [`Error::ApexCrossed`] so line searches can shrink the step instead of
//! silently leaving the model's domain.
//!
//! Vector transport follows the embedded-submanifold construction: a tangent
//! vector is carried through the ambient space unchanged (ambient parallel
//! transport in a flat space is the identity) and orthogonally projected
//! onto the tangent space at the destination. That concrete formula is this
//! crate's reading of the construction; the composition
//! `project_to_tangent(q, embed_tangent(p, u))` defines the contract.
//! Because the cone parametrization is an isometry onto the embedded
//! tangent space, the projection can be evaluated on the factored
//! representation without materializing any dense tensor; [`transport`]
//! does exactly that and agrees with the dense composition to rounding.

use crate::error::{Error, Result};
use crate::tensor::{dot, ColMatrix, CpdModel, DenseTensor, Rank1Term};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A point of the Segre manifold: a positive scale and one unit vector per
/// mode. Identical to a rank-1 term of a CPD.
pub type SegrePoint = Rank1Term;

/// Norms below this are treated as exactly zero when branching on the
/// geodesic formulas.
pub const ZERO_SPEED_TOL: f64 = 1e-12;

/// Scales at or below this value count as the cone apex.
pub const MIN_WEIGHT: f64 = 1e-12;

/// Tolerance on the unit-speed precondition of [`geodesic`].
const UNIT_SPEED_TOL: f64 = 1e-8;

/// A tangent vector at a [`SegrePoint`]: a scale component and one vector
/// per mode, each orthogonal to the point's corresponding unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SegreTangent {
    /// Derivative of the scale.
    pub weight: f64,
    /// Per-mode sphere components, `vectors[i]` orthogonal to the base
    /// point's `vector(i)`.
    pub vectors: Vec<Vec<f64>>,
}

impl SegreTangent {
    pub fn zero_like(p: &SegrePoint) -> Self {
        SegreTangent {
            weight: 0.0,
            vectors: p.vectors().iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    /// Euclidean speed of the sphere part: `sqrt(sum_i ||vectors[i]||^2)`.
    pub fn sphere_speed(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SegreTangent {
            weight: self.weight * s,
            vectors: self
                .vectors
                .iter()
                .map(|v| v.iter().map(|x| x * s).collect())
                .collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &SegreTangent) {
        self.weight += s * other.weight;
        for (a, b) in self.vectors.iter_mut().zip(&other.vectors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    /// Largest violation of `<vectors[i], p.vector(i)> = 0`.
    pub fn tangency_defect(&self, p: &SegrePoint) -> f64 {
        self.vectors
            .iter()
            .zip(p.vectors())
            .map(|(u, x)| dot(u, x).abs())
            .fold(0.0, f64::max)
    }
}

/// Warped-product metric at `p`.
pub fn metric_inner(p: &SegrePoint, u: &SegreTangent, v: &SegreTangent) -> f64 {
    debug_assert!(tangent_ok(p, u), "u is not tangent at p");
    debug_assert!(tangent_ok(p, v), "v is not tangent at p");
    let w2 = p.weight() * p.weight();
    let mut sphere = 0.0;
    for (a, b) in u.vectors.iter().zip(&v.vectors) {
        sphere += dot(a, b);
    }
    u.weight * v.weight + w2 * sphere
}

pub fn metric_norm(p: &SegrePoint, u: &SegreTangent) -> f64 {
    metric_inner(p, u, u).sqrt()
}

fn tangent_ok(p: &SegrePoint, u: &SegreTangent) -> bool {
    u.vectors.len() == p.order()
        && u.vectors
            .iter()
            .zip(p.vectors())
            .all(|(t, x)| {
                let scale = 1.0 + t.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot(t, x).abs() <= 1e-8 * scale
            })
}

/// Pushes a tangent vector into the ambient tensor space:
/// `u.weight * outer(x) + p.weight * sum_k outer(x_1 .. u_k .. x_d)`.
pub fn embed_tangent(p: &SegrePoint, u: &SegreTangent) -> Result<DenseTensor> {
    if u.order() != p.order() {
        return Err(Error::invalid("tangent order does not match point"));
    }
    let shape = p.shape();
    let mut out = Rank1Term::new_unchecked(1.0, p.vectors().to_vec())
        .to_dense()?;
    for v in out.data_mut() {
        *v *= u.weight;
    }
    for k in 0..p.order() {
        let mut vectors = p.vectors().to_vec();
        vectors[k] = u.vectors[k].clone();
        let mut term = DenseTensor::zeros(shape.clone())?;
        add_outer(term.data_mut(), &shape, p.weight(), &vectors);
        for (o, t) in out.data_mut().iter_mut().zip(term.data()) {
            *o += t;
        }
    }
    Ok(out)
}

fn add_outer(data: &mut [f64], shape: &[usize], weight: f64, vectors: &[Vec<f64>]) {
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

/// Metric-orthogonal projection of an ambient tensor onto the tangent space
/// at `q`. Satisfies `metric_inner(q, project(Z), u) = <Z, embed(q, u)>` for
/// every tangent `u`, and is the identity on embedded tangent vectors.
pub fn project_to_tangent(q: &SegrePoint, z: &DenseTensor) -> Result<SegreTangent> {
    if z.shape() != q.shape().as_slice() {
        return Err(Error::shape_mismatch(&q.shape(), z.shape()));
    }
    let d = q.order();
    let shape = q.shape();
    // w_k = Z contracted with q's unit vector on every mode except k,
    // computed for all k in one pass over the entries.
    let mut contracted: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
    let mut full = 0.0;
    let mut prefix = vec![0.0; d + 1];
    let mut suffix = vec![0.0; d + 1];
    crate::tensor::visit_indices(&shape, |idx, lin| {
        let value = z.data()[lin];
        if value == 0.0 {
            return;
        }
        prefix[0] = 1.0;
        for k in 0..d {
            prefix[k + 1] = prefix[k] * q.vector(k)[idx[k]];
        }
        suffix[d] = 1.0;
        for k in (0..d).rev() {
            suffix[k] = suffix[k + 1] * q.vector(k)[idx[k]];
        }
        full += value * prefix[d];
        for k in 0..d {
            contracted[k][idx[k]] += value * prefix[k] * suffix[k + 1];
        }
    });
    let mut vectors = Vec::with_capacity(d);
    for (k, contraction) in contracted.iter().enumerate() {
        let x = q.vector(k);
        let along = dot(contraction, x);
        let v: Vec<f64> = contraction
            .iter()
            .zip(x)
            .map(|(&w, &xi)| (w - along * xi) / q.weight())
            .collect();
        vectors.push(v);
    }
    Ok(SegreTangent {
        weight: full,
        vectors,
    })
}

/// Closed-form unit-speed geodesic through `p` in direction `v` evaluated at
/// arc length `t`.
///
/// `v` must have unit metric norm at `p`. If all sphere components vanish
/// the curve is the radial line `(w + a*t, x_1, ..., x_d)`; a mode whose own
/// sphere component vanishes keeps its vector constant. Reaching a scale of
/// [`MIN_WEIGHT`] or below yields [`Error::ApexCrossed`] with the smallest
/// positive arc length at which the floor is first touched.
pub fn geodesic(p: &SegrePoint, v: &SegreTangent, t: f64) -> Result<SegrePoint> {
    if v.order() != p.order() {
        return Err(Error::invalid("tangent order does not match point"));
    }
    let speed2 = metric_inner(p, v, v);
    if (speed2 - 1.0).abs() > UNIT_SPEED_TOL {
        return Err(Error::invalid(format!(
            "geodesic direction must have unit metric norm, got {}",
            speed2.sqrt()
        )));
    }
    let w = p.weight();
    let a = v.weight;
    let speeds: Vec<f64> = v
        .vectors
        .iter()
        .map(|u| u.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let m = speeds.iter().map(|s| s * s).sum::<f64>().sqrt();

    if m < ZERO_SPEED_TOL {
        // Radial branch: the sphere part is constant.
        let w_t = w + a * t;
        if w_t <= MIN_WEIGHT {
            let t_critical = if a == 0.0 { 0.0 } else { (MIN_WEIGHT - w) / a };
            return Err(Error::ApexCrossed {
                t_critical,
                min_weight: MIN_WEIGHT,
            });
        }
        return Ok(Rank1Term::new_unchecked(w_t, p.vectors().to_vec()));
    }

    let w_t = f64::hypot(t + w * a, w * w * m);
    if w_t <= MIN_WEIGHT {
        let radicand = (MIN_WEIGHT * MIN_WEIGHT - w.powi(4) * m * m).max(0.0);
        let t_critical = -w * a - radicand.sqrt();
        return Err(Error::ApexCrossed {
            t_critical,
            min_weight: MIN_WEIGHT,
        });
    }
    let f_t = f64::atan2(t * m, 1.0 + a * t / w);

    let mut vectors = Vec::with_capacity(p.order());
    for (k, u) in v.vectors.iter().enumerate() {
        let x = p.vector(k);
        if speeds[k] < ZERO_SPEED_TOL {
            vectors.push(x.to_vec());
            continue;
        }
        let angle = speeds[k] / m * f_t;
        let (sin_a, cos_a) = angle.sin_cos();
        let mut rotated: Vec<f64> = x
            .iter()
            .zip(u)
            .map(|(&xi, &ui)| cos_a * xi + sin_a * ui / speeds[k])
            .collect();
        // Columns are re-normalized after every retraction step.
        let n = rotated.iter().map(|v| v * v).sum::<f64>().sqrt();
        for e in &mut rotated {
            *e /= n;
        }
        vectors.push(rotated);
    }
    Ok(Rank1Term::new_unchecked(w_t, vectors))
}

/// Exponential-map retraction: follow the geodesic in direction `v` for the
/// metric length of `v`. `exp_retract(p, 0) = p`.
pub fn exp_retract(p: &SegrePoint, v: &SegreTangent) -> Result<SegrePoint> {
    let n = metric_norm(p, v);
    if n < 1e-300 {
        return Ok(p.clone());
    }
    geodesic(p, &v.scaled(1.0 / n), n)
}

/// Vector transport from `p` to `q`: ambient parallel transport (the
/// identity on tensors) followed by orthogonal projection onto the tangent
/// space at `q`, evaluated on the factored representation.
pub fn transport(p: &SegrePoint, q: &SegrePoint, u: &SegreTangent) -> Result<SegreTangent> {
    if p.shape() != q.shape() {
        return Err(Error::shape_mismatch(&p.shape(), &q.shape()));
    }
    if u.order() != p.order() {
        return Err(Error::invalid("tangent order does not match point"));
    }
    let d = p.order();
    // c[m] = <x_m, y_m>, s[m] = <u_m, y_m>.
    let c: Vec<f64> = (0..d).map(|m| dot(p.vector(m), q.vector(m))).collect();
    let s: Vec<f64> = (0..d).map(|m| dot(&u.vectors[m], q.vector(m))).collect();
    let off = |k: usize| -> f64 {
        (0..d).filter(|&m| m != k).map(|m| c[m]).product()
    };
    let pair = |k: usize, l: usize| -> f64 {
        (0..d)
            .filter(|&m| m != k && m != l)
            .map(|m| c[m])
            .product()
    };
    let full: f64 = c.iter().product();

    // Scale component of the projection: <Z, outer(y)>.
    let mut weight = u.weight * full;
    for (k, &s_k) in s.iter().enumerate() {
        weight += p.weight() * s_k * off(k);
    }

    let mut vectors = Vec::with_capacity(d);
    for k in 0..d {
        let y = q.vector(k);
        let n_k = y.len();
        // w_k = Z contracted with y on every mode except k.
        let mut w_k = vec![0.0; n_k];
        let coeff_x = u.weight * off(k)
            + p.weight()
                * (0..d)
                    .filter(|&l| l != k)
                    .map(|l| s[l] * pair(k, l))
                    .sum::<f64>();
        for (slot, &xi) in w_k.iter_mut().zip(p.vector(k)) {
            *slot += coeff_x * xi;
        }
        let coeff_u = p.weight() * off(k);
        for (slot, &ui) in w_k.iter_mut().zip(&u.vectors[k]) {
            *slot += coeff_u * ui;
        }
        // Remove the component along y and rescale by the new weight.
        let along = dot(&w_k, y);
        let v: Vec<f64> = w_k
            .iter()
            .zip(y)
            .map(|(&wi, &yi)| (wi - along * yi) / q.weight())
            .collect();
        vectors.push(v);
    }
    Ok(SegreTangent { weight, vectors })
}

/// A tangent vector at a [`CpdModel`], stored like the model itself: a
/// weight-derivative vector plus per-mode matrices whose column `j` is the
/// sphere component of term `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTangent {
    pub weights: Vec<f64>,
    pub factors: Vec<ColMatrix>,
}

impl ProductTangent {
    pub fn zeros_like(model: &CpdModel) -> Self {
        ProductTangent {
            weights: vec![0.0; model.rank()],
            factors: model
                .shape()
                .iter()
                .map(|&n| ColMatrix::zeros(n, model.rank()))
                .collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn component(&self, j: usize) -> SegreTangent {
        SegreTangent {
            weight: self.weights[j],
            vectors: self.factors.iter().map(|f| f.col(j).to_vec()).collect(),
        }
    }

    pub fn set_component(&mut self, j: usize, t: &SegreTangent) {
        self.weights[j] = t.weight;
        for (f, v) in self.factors.iter_mut().zip(&t.vectors) {
            f.col_mut(j).copy_from_slice(v);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= s;
        }
        for f in &mut out.factors {
            for j in 0..f.ncols() {
                for v in f.col_mut(j) {
                    *v *= s;
                }
            }
        }
        out
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &ProductTangent) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += s * b;
        }
        for (fa, fb) in self.factors.iter_mut().zip(&other.factors) {
            for j in 0..fa.ncols() {
                let dst = fa.col_mut(j);
                let src = fb.col(j);
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += s * y;
                }
            }
        }
    }
}

/// Product metric: sum of the component metrics.
pub fn product_inner(p: &CpdModel, u: &ProductTangent, v: &ProductTangent) -> f64 {
    let mut total = 0.0;
    for j in 0..p.rank() {
        let w2 = p.weights()[j] * p.weights()[j];
        let mut sphere = 0.0;
        for k in 0..p.order() {
            sphere += dot(u.factors[k].col(j), v.factors[k].col(j));
        }
        total += u.weights[j] * v.weights[j] + w2 * sphere;
    }
    total
}

pub fn product_norm(p: &CpdModel, u: &ProductTangent) -> f64 {
    product_inner(p, u, u).sqrt()
}

/// Componentwise exponential map on the product manifold.
pub fn product_exp(p: &CpdModel, v: &ProductTangent) -> Result<CpdModel> {
    let terms = (0..p.rank())
        .map(|j| exp_retract(&p.term(j), &v.component(j)))
        .collect::<Result<Vec<_>>>()?;
    let weights = terms.iter().map(|t| t.weight()).collect();
    let factors = (0..p.order())
        .map(|k| ColMatrix::from_columns(terms.iter().map(|t| t.vector(k).to_vec()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CpdModel::new_unchecked(weights, factors))
}

/// Componentwise transport on the product manifold.
pub fn product_transport(
    from: &CpdModel,
    to: &CpdModel,
    u: &ProductTangent,
) -> Result<ProductTangent> {
    let mut out = ProductTangent::zeros_like(to);
    for j in 0..from.rank() {
        let t = transport(&from.term(j), &to.term(j), &u.component(j))?;
        out.set_component(j, &t);
    }
    Ok(out)
}

/// Seeded random starting point: factor columns are uniform on their
/// spheres (normalized Gaussians) and weights are `scale` times a uniform
/// draw from `[0.5, 1.5]`. Deterministic for a fixed seed.
pub fn random_point(shape: &[usize], rank: usize, scale: f64, seed: u64) -> Result<CpdModel> {
    if scale <= 0.0 || scale.is_nan() {
        return Err(Error::invalid("scale must be positive"));
    }
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if shape.len() < 2 {
        return Err(Error::invalid("shape must have at least two modes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::with_capacity(shape.len());
    for &n in shape {
        let mut cols = Vec::with_capacity(rank);
        for _ in 0..rank {
            loop {
                let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    cols.push(v.into_iter().map(|x| x / norm).collect());
                    break;
                }
            }
        }
        factors.push(ColMatrix::from_columns(cols)?);
    }
    let weights = (0..rank)
        .map(|_| scale * rng.gen_range(0.5..1.5))
        .collect();
    CpdModel::new(weights, factors)
}
