//! Riemannian conjugate gradient over the product Segre manifold.
//!
//! Each iteration computes the Riemannian gradient, transports the previous
//! gradient and direction to the current point, combines them with a
//! Hestenes-Stiefel coefficient, line-searches along the new direction, and
//! retracts with the exponential map (closed-form geodesics).
//!
//! Two line searches are used. Without the range penalty the objective
//! behaves almost quadratically in the step, so two probes at one and two
//! times the incumbent step determine an interpolating parabola whose
//! minimizer is taken (then verified against the Armijo-Goldstein
//! condition); with the penalty on, plain backtracking is used. Steps whose
//! retraction would cross the cone apex are treated as rejections and
//! shrink the probe.

use crate::error::{Error, Result};
use crate::objective::{objective, riemannian_gradient, ObjectiveSpec};
use crate::segre::{product_exp, product_inner, product_norm, product_transport, ProductTangent};
use crate::tensor::CpdModel;
use serde::Serialize;
use std::time::Instant;

/// Rule for the conjugate-direction coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    HestenesStiefel,
    SteepestDescent,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerConfig {
    /// Absolute metric gradient norm below which the fit stops.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Armijo-Goldstein sufficient-decrease constant.
    pub armijo_c: f64,
    /// Step shrink factor for backtracking and apex recovery.
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Step scale for the first iteration; later iterations warm-start
    /// from the previously accepted step.
    pub initial_step: f64,
    pub beta_rule: BetaRule,
    /// Replace non-descent conjugate directions by steepest descent.
    pub restart_on_nondescent: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grad_tol: 1e-6,
            max_iters: 1000,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 25,
            initial_step: 1.0,
            beta_rule: BetaRule::HestenesStiefel,
            restart_on_nondescent: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_tol <= 0.0 || self.grad_tol.is_nan() {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("armijo_c must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack_factor must lie in (0, 1)"));
        }
        if self.initial_step <= 0.0 || self.initial_step.is_nan() {
            return Err(Error::invalid("initial_step must be positive"));
        }
        Ok(())
    }
}

/// Why a fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Metric gradient norm dropped below `grad_tol`.
    Converged,
    MaxIterations,
    /// The line search could not find an acceptable step.
    Stalled,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::MaxIterations => write!(f, "max_iterations"),
            Termination::Stalled => write!(f, "stalled"),
        }
    }
}

/// One accepted iteration: state at the start of the iteration plus the
/// accepted step.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub beta: f64,
    /// Seconds elapsed since the fit started, measured after the step.
    pub seconds: f64,
}

/// Result of a fit: the final point plus the per-iteration trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: CpdModel,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub initial_grad_norm: f64,
    pub wall_seconds: f64,
    /// Objective evaluations across the whole fit.
    pub evaluations: usize,
}

/// Hestenes-Stiefel coefficient. `g_new` is the gradient at the current
/// point; `g_old_t` and `d_old_t` are the previous gradient and direction
/// already transported there. Degenerate denominators restart (return 0)
/// and negative values are clamped to 0.
pub fn hs_beta(
    p: &CpdModel,
    g_new: &ProductTangent,
    g_old_t: &ProductTangent,
    d_old_t: &ProductTangent,
) -> f64 {
    let mut y = g_new.clone();
    y.add_scaled(-1.0, g_old_t);
    let num = product_inner(p, g_new, &y);
    let den = product_inner(p, d_old_t, &y);
    let g_norm2 = product_inner(p, g_new, g_new);
    if den.abs() < 1e-15 * (1.0 + g_norm2) {
        return 0.0;
    }
    (num / den).max(0.0)
}

/// Stationary point of the parabola through `(0, f0)`, `(1, f1)`, `(2, f2)`,
/// in probe-step units. Returns `None` when the parabola has no minimum
/// (denominator `2 f0 - 4 f1 + 2 f2 <= 0`), signalling the backtracking
/// fallback.
pub fn quad_step(f0: f64, f1: f64, f2: f64) -> Option<f64> {
    let den = 2.0 * f0 - 4.0 * f1 + 2.0 * f2;
    if den <= 0.0 || !den.is_finite() {
        return None;
    }
    Some((3.0 * f0 - 4.0 * f1 + f2) / den)
}

/// Armijo-Goldstein sufficient decrease test.
pub fn armijo_ok(f0: f64, f_alpha: f64, alpha: f64, slope: f64, c: f64) -> bool {
    f_alpha <= f0 + c * alpha * slope
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchResult {
    /// Accepted step length along the direction.
    pub step: f64,
    /// Objective value at the accepted step.
    pub value: f64,
    /// Objective evaluations performed by the search.
    pub evals: usize,
}

/// Searches `phi(t)`, the objective along a retracted ray, for a step
/// satisfying the Armijo condition. `phi` may fail with
/// [`Error::ApexCrossed`], which is treated as a rejection of that step.
///
/// With `use_quad`, probes at `initial_step` and twice it fit a parabola
/// whose minimizer is accepted if it passes the Armijo test (probe values
/// are reused when the minimizer lands on a probe, so a well-scaled
/// quadratic costs exactly two evaluations); any failure falls back to
/// backtracking from `initial_step`.
pub fn line_search<F>(
    mut phi: F,
    f0: f64,
    slope: f64,
    use_quad: bool,
    initial_step: f64,
    config: &OptimizerConfig,
) -> Result<LineSearchResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evals = 0usize;
    let mut probe = |t: f64, evals: &mut usize| -> Result<Option<f64>> {
        match phi(t) {
            Ok(v) => {
                *evals += 1;
                Ok(Some(v))
            }
            Err(Error::ApexCrossed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    if use_quad {
        // Find a probe scale at which both evaluations stay on the manifold.
        let mut s = initial_step;
        let mut pair = None;
        for _ in 0..=config.max_backtracks {
            let f1 = probe(s, &mut evals)?;
            let f2 = match f1 {
                Some(_) => probe(2.0 * s, &mut evals)?,
                None => None,
            };
            if let (Some(f1), Some(f2)) = (f1, f2) {
                pair = Some((s, f1, f2));
                break;
            }
            s *= config.backtrack_factor;
        }
        if let Some((s, f1, f2)) = pair {
            if let Some(alpha_units) = quad_step(f0, f1, f2) {
                let t = alpha_units * s;
                if t > 0.0 && t.is_finite() {
                    // Reuse probe values when the minimizer lands on a probe.
                    let f_t = if (t - s).abs() <= 1e-12 * s {
                        Some(f1)
                    } else if (t - 2.0 * s).abs() <= 1e-12 * s {
                        Some(f2)
                    } else {
                        probe(t, &mut evals)?
                    };
                    if let Some(f_t) = f_t {
                        if armijo_ok(f0, f_t, t, slope, config.armijo_c) {
                            return Ok(LineSearchResult {
                                step: t,
                                value: f_t,
                                evals,
                            });
                        }
                    }
                }
            }
            // The probes themselves may already satisfy Armijo; prefer the
            // cheaper reuse over restarting the backtracking from scratch.
            if armijo_ok(f0, f1, s, slope, config.armijo_c) {
                return Ok(LineSearchResult {
                    step: s,
                    value: f1,
                    evals,
                });
            }
        }
    }

    // Backtracking from the initial step.
    let mut t = initial_step;
    for _ in 0..=config.max_backtracks {
        if let Some(v) = probe(t, &mut evals)? {
            if armijo_ok(f0, v, t, slope, config.armijo_c) {
                return Ok(LineSearchResult {
                    step: t,
                    value: v,
                    evals,
                });
            }
        }
        t *= config.backtrack_factor;
    }
    Err(Error::StepStalled {
        max_backtracks: config.max_backtracks,
    })
}

/// Minimizes the objective from `start` and returns the fit report.
///
/// Accepted objective values are strictly decreasing; the trace records the
/// state at the start of each accepted iteration. Stopping: gradient norm
/// below `grad_tol`, the iteration budget, or a stalled line search.
pub fn minimize(
    start: CpdModel,
    spec: &ObjectiveSpec,
    config: &OptimizerConfig,
) -> Result<FitReport> {
    config.validate()?;
    let clock = Instant::now();
    let use_quad = spec.penalty_weight() == 0.0;

    let mut point = start;
    let mut f_current = objective(&point, spec)?;
    let mut evaluations = 1usize;
    let mut grad = riemannian_gradient(&point, spec)?;
    let mut grad_norm = product_norm(&point, &grad);
    let initial_grad_norm = grad_norm;

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut warm_step = config.initial_step;
    let mut previous: Option<(CpdModel, ProductTangent, ProductTangent)> = None;
    let mut termination = Termination::MaxIterations;

    for _ in 0..config.max_iters {
        if grad_norm < config.grad_tol {
            termination = Termination::Converged;
            break;
        }

        // Conjugate direction: d = -g + beta * transported d_old.
        let mut beta = 0.0;
        let mut direction = grad.scaled(-1.0);
        if config.beta_rule == BetaRule::HestenesStiefel {
            if let Some((ref p_old, ref g_old, ref d_old)) = previous {
                let g_old_t = product_transport(p_old, &point, g_old)?;
                let d_old_t = product_transport(p_old, &point, d_old)?;
                beta = hs_beta(&point, &grad, &g_old_t, &d_old_t);
                if beta > 0.0 {
                    direction.add_scaled(beta, &d_old_t);
                }
            }
        }

        let mut slope = product_inner(&point, &grad, &direction);
        if slope >= 0.0 && config.restart_on_nondescent {
            direction = grad.scaled(-1.0);
            beta = 0.0;
            slope = -grad_norm * grad_norm;
        }

        let phi = |t: f64| -> Result<f64> {
            let candidate = product_exp(&point, &direction.scaled(t))?;
            objective(&candidate, spec)
        };
        let ls = match line_search(phi, f_current, slope, use_quad, warm_step, config) {
            Ok(r) => r,
            Err(Error::StepStalled { .. }) => {
                termination = Termination::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
        evaluations += ls.evals;

        let new_point = product_exp(&point, &direction.scaled(ls.step))?;
        trace.push(IterationRecord {
            objective: f_current,
            grad_norm,
            step: ls.step,
            beta,
            seconds: clock.elapsed().as_secs_f64(),
        });

        previous = Some((point.clone(), grad, direction));
        point = new_point;
        f_current = ls.value;
        grad = riemannian_gradient(&point, spec)?;
        grad_norm = product_norm(&point, &grad);
        warm_step = ls.step.clamp(1e-8, 1e8);
    }
    if termination == Termination::MaxIterations && grad_norm < config.grad_tol {
        termination = Termination::Converged;
    }

    Ok(FitReport {
        iterations: trace.len(),
        trace,
        termination,
        final_objective: f_current,
        final_grad_norm: grad_norm,
        initial_grad_norm,
        wall_seconds: clock.elapsed().as_secs_f64(),
        evaluations,
        model: point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Observations;
    use crate::segre::random_point;
    use crate::tensor::{DenseTensor, SparseObservations};

    fn planted_dense(shape: &[usize], rank: usize, seed: u64) -> (CpdModel, DenseTensor) {
        let model = random_point(shape, rank, 1.0, seed).unwrap();
        let dense = model.to_dense().unwrap();
        (model, dense)
    }

    fn relative_error(reference: &DenseTensor, model: &CpdModel) -> f64 {
        let rec = model.to_dense().unwrap();
        let diff = reference
            .data()
            .iter()
            .zip(rec.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / reference.frobenius_norm()
    }

    #[test]
    fn hs_beta_hand_cases() {
        // Scalar-like setup: radial tangents on a rank-1 model make the
        // metric inner products plain products of the weight components.
        let p = random_point(&[2, 2], 1, 1.0, 3).unwrap();
        let radial = |w: f64| -> ProductTangent {
            let mut t = ProductTangent::zeros_like(&p);
            t.weights[0] = w;
            t
        };
        // g_new = 1, g_old_t = -1 (so y = 2), d_old_t = 2:
        // beta = <g, y> / <d, y> = 2 / 4.
        let beta = hs_beta(&p, &radial(1.0), &radial(-1.0), &radial(2.0));
        assert!((beta - 0.5).abs() < 1e-14);

        // y = 0 triggers the degenerate-denominator restart.
        let beta = hs_beta(&p, &radial(1.0), &radial(1.0), &radial(2.0));
        assert_eq!(beta, 0.0);

        // Negative ratios are clamped to zero.
        let beta = hs_beta(&p, &radial(1.0), &radial(-1.0), &radial(-2.0));
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn quad_step_examples() {
        assert_eq!(quad_step(1.0, 0.0, 1.0), Some(1.0));
        // (3*3 - 4*2 + 3) / (2*3 - 4*2 + 2*3) = 4/4.
        assert_eq!(quad_step(3.0, 2.0, 3.0), Some(1.0));
        // Flat data: no curvature, no minimum.
        assert_eq!(quad_step(1.0, 1.0, 1.0), None);
        // Concave data.
        assert_eq!(quad_step(0.0, 1.0, 0.0), None);
    }

    #[test]
    fn armijo_examples() {
        // No decrease at all fails for negative slope.
        assert!(!armijo_ok(1.0, 1.0, 1.0, -1.0, 1e-4));
        // Exactly on the boundary passes (<=).
        let c = 1e-4;
        let slope = -2.0;
        let alpha = 0.5;
        assert!(armijo_ok(1.0, 1.0 + c * alpha * slope, alpha, slope, c));
        // f(alpha) = 0.5 * (alpha - 1)^2 from f0 = 0.5, slope = -1.
        assert!(armijo_ok(0.5, 0.0, 1.0, -1.0, 1e-4));
    }

    #[test]
    fn line_search_quadratic_surrogate_two_evals() {
        // phi(t) = (t - 1)^2: probes at 1 and 2 give 0 and 1, the parabola
        // minimizer is exactly the first probe, so its value is reused.
        let config = OptimizerConfig::default();
        let phi = |t: f64| Ok((t - 1.0) * (t - 1.0));
        let r = line_search(phi, 1.0, -2.0, true, 1.0, &config).unwrap();
        assert!((r.step - 1.0).abs() < 1e-12);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.evals, 2);
    }

    #[test]
    fn line_search_flat_direction_stalls() {
        let config = OptimizerConfig::default();
        let phi = |_t: f64| Ok(1.0);
        let err = line_search(phi, 1.0, -1.0, true, 1.0, &config);
        assert!(matches!(err, Err(Error::StepStalled { .. })));
    }

    #[test]
    fn line_search_backtracking_trace() {
        // Penalty-style search (no quadratic probes). With
        // phi(t) = 1 - t + 2 t^2 and slope -1, Armijo at c = 1e-4 rejects
        // t = 1 and t = 0.5 and accepts t = 0.25.
        let config = OptimizerConfig::default();
        let phi = |t: f64| Ok(1.0 - t + 2.0 * t * t);
        let r = line_search(phi, 1.0, -1.0, false, 1.0, &config).unwrap();
        assert!((r.step - 0.25).abs() < 1e-12);
        assert_eq!(r.evals, 3);
    }

    #[test]
    fn line_search_shrinks_past_apex() {
        // Steps at or beyond t = 0.8 leave the manifold; the search must
        // recover by shrinking and still accept a valid step.
        let config = OptimizerConfig::default();
        let phi = |t: f64| {
            if t >= 0.8 {
                Err(Error::ApexCrossed {
                    t_critical: 0.8,
                    min_weight: 1e-12,
                })
            } else {
                Ok(1.0 - t)
            }
        };
        let r = line_search(phi, 1.0, -1.0, true, 1.0, &config).unwrap();
        assert!(r.step < 0.8);
        assert!(r.value < 1.0);
    }

    #[test]
    fn minimize_already_optimal_takes_no_iterations() {
        let (model, dense) = planted_dense(&[3, 4, 2], 2, 5);
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense));
        let config = OptimizerConfig {
            grad_tol: 1e-8,
            ..OptimizerConfig::default()
        };
        let report = minimize(model, &spec, &config).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.termination, Termination::Converged);
    }

    #[test]
    fn minimize_recovers_exact_rank2() {
        let (_, dense) = planted_dense(&[6, 7, 8], 2, 11);
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense.clone()));
        let config = OptimizerConfig {
            grad_tol: 1e-11,
            max_iters: 500,
            ..OptimizerConfig::default()
        };
        let start = random_point(&[6, 7, 8], 2, 1.0, 12).unwrap();
        let report = minimize(start, &spec, &config).unwrap();
        let err = relative_error(&dense, &report.model);
        assert!(
            err < 1e-8,
            "relative error {err} after {} iterations ({:?})",
            report.iterations,
            report.termination
        );
        assert!(report.iterations <= 500);
    }

    #[test]
    fn minimize_rank1_from_many_seeds() {
        let (_, dense) = planted_dense(&[4, 5, 6], 1, 21);
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense.clone()));
        let config = OptimizerConfig {
            grad_tol: 1e-10,
            max_iters: 300,
            ..OptimizerConfig::default()
        };
        for seed in 0..20 {
            let start = random_point(&[4, 5, 6], 1, 1.0, 100 + seed).unwrap();
            let report = minimize(start, &spec, &config).unwrap();
            let err = relative_error(&dense, &report.model);
            assert!(err < 1e-6, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn minimize_trace_is_strictly_decreasing_and_iterates_valid() {
        let (_, dense) = planted_dense(&[5, 4, 3], 2, 31);
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense));
        let config = OptimizerConfig {
            grad_tol: 1e-9,
            max_iters: 200,
            ..OptimizerConfig::default()
        };
        let start = random_point(&[5, 4, 3], 2, 1.0, 32).unwrap();
        let report = minimize(start, &spec, &config).unwrap();
        // No history on the first iteration.
        assert_eq!(report.trace[0].beta, 0.0);
        for w in report.trace.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
        if let Some(last) = report.trace.last() {
            assert!(report.final_objective < last.objective);
        }
        // Final iterate satisfies the manifold invariants.
        for k in 0..report.model.order() {
            for j in 0..report.model.rank() {
                let n: f64 = report
                    .model
                    .factor(k)
                    .col(j)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                assert!((n - 1.0).abs() < 1e-10);
            }
        }
        assert!(report.model.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn minimize_steepest_descent_also_converges() {
        let (_, dense) = planted_dense(&[6, 7, 8], 2, 11);
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense.clone()));
        let config = OptimizerConfig {
            grad_tol: 1e-11,
            max_iters: 4000,
            beta_rule: BetaRule::SteepestDescent,
            ..OptimizerConfig::default()
        };
        let start = random_point(&[6, 7, 8], 2, 1.0, 12).unwrap();
        let report = minimize(start, &spec, &config).unwrap();
        let err = relative_error(&dense, &report.model);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn minimize_masked_observations() {
        let (model, dense) = planted_dense(&[5, 6, 4], 2, 41);
        // Observe 60% of the entries.
        let mut entries = Vec::new();
        let mut k = 0usize;
        crate::tensor::visit_indices(&[5, 6, 4], |idx, _| {
            if !k.is_multiple_of(5) && !k.is_multiple_of(3) {
                entries.push((idx.to_vec(), model.entry(idx)));
            }
            k += 1;
        });
        let obs = SparseObservations::new(vec![5, 6, 4], entries).unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
        let config = OptimizerConfig {
            grad_tol: 1e-11,
            max_iters: 1000,
            ..OptimizerConfig::default()
        };
        let start = random_point(&[5, 6, 4], 2, 1.0, 42).unwrap();
        let report = minimize(start, &spec, &config).unwrap();
        let err = relative_error(&dense, &report.model);
        assert!(err < 1e-6, "relative error {err}");
    }
}
