use nalgebra::{DMatrix, DVector};

use super::{linear_least_squares, NumoptError, Result};

/// Hyper-parameters of [`trust_region_nls`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionConfig {
    pub max_iter: usize,
    /// Initial radius as a multiple of the scaled norm of the starting point.
    pub radius0: f64,
    /// Convergence when every scaled gradient component drops below this cosine.
    pub tol_grad: f64,
    /// Convergence when the scaled step is this small relative to the iterate.
    pub tol_step: f64,
    pub radius_shrink: f64,
    pub radius_grow: f64,
    /// Minimum actual/predicted reduction ratio for a step to be accepted.
    pub accept_ratio: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            radius0: 1.0,
            tol_grad: 1e-10,
            tol_step: 1e-12,
            radius_shrink: 0.25,
            radius_grow: 2.0,
            accept_ratio: 1e-4,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.radius0,
            self.tol_grad,
            self.tol_step,
            self.radius_shrink,
            self.radius_grow,
            self.accept_ratio,
        ];
        if self.max_iter == 0 || positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(NumoptError::InvalidConfig("all settings must be positive".into()));
        }
        if !(self.radius_shrink < 1.0 && self.radius_grow > 1.0) {
            return Err(NumoptError::InvalidConfig(
                "radius_shrink must be < 1 < radius_grow".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustRegionStatus {
    /// Scaled gradient below `tol_grad` (includes an exact zero residual).
    GradientConverged,
    /// Step or radius collapsed below `tol_step`.
    StepConverged,
    /// The local model predicts no further reduction at machine precision.
    NoFurtherReduction,
    /// Iteration budget exhausted; the best point found is returned.
    MaxIterations,
}

impl TrustRegionStatus {
    pub fn converged(self) -> bool {
        !matches!(self, TrustRegionStatus::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct TrustRegionResult {
    pub params: Vec<f64>,
    pub sse: f64,
    pub status: TrustRegionStatus,
    pub iterations: usize,
    /// SSE after the initial point and after every accepted step.
    pub sse_trace: Vec<f64>,
}

/// A nonlinear least-squares objective `Σ r_i(θ)²`.
pub trait LeastSquaresProblem {
    fn residuals(&self, params: &[f64]) -> Vec<f64>;

    /// Jacobian `∂r_i/∂θ_j`; central differences unless overridden.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        finite_difference_jacobian(|p| self.residuals(p), params)
    }
}

/// Central-difference Jacobian with step `1e-6·max(1, |θ_j|)`.
pub fn finite_difference_jacobian<F>(residuals: F, params: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let base_len = residuals(params).len();
    let mut jac = DMatrix::zeros(base_len, params.len());
    let mut probe = params.to_vec();
    for j in 0..params.len() {
        let h = 1e-6 * params[j].abs().max(1.0);
        probe[j] = params[j] + h;
        let hi = residuals(&probe);
        probe[j] = params[j] - h;
        let lo = residuals(&probe);
        probe[j] = params[j];
        let width = 2.0 * h;
        for i in 0..base_len {
            jac[(i, j)] = (hi[i] - lo[i]) / width;
        }
    }
    jac
}

/// Closure-backed [`LeastSquaresProblem`].
pub struct FnProblem<R, J = fn(&[f64]) -> DMatrix<f64>> {
    residual: R,
    jacobian: Option<J>,
}

impl<R> FnProblem<R>
where
    R: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(residual: R) -> Self {
        Self {
            residual,
            jacobian: None,
        }
    }
}

impl<R, J> FnProblem<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    pub fn with_jacobian(residual: R, jacobian: J) -> Self {
        Self {
            residual,
            jacobian: Some(jacobian),
        }
    }
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    fn residuals(&self, params: &[f64]) -> Vec<f64> {
        (self.residual)(params)
    }

    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(params),
            None => finite_difference_jacobian(&self.residual, params),
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn scaled_norm(diag: &[f64], v: &DVector<f64>) -> f64 {
    diag.iter()
        .zip(v.iter())
        .map(|(d, x)| (d * x) * (d * x))
        .sum::<f64>()
        .sqrt()
}

/// Step of the damped system `(JᵀJ + μ·D²)·δ = −Jᵀr`.
fn damped_step(jtj: &DMatrix<f64>, grad: &DVector<f64>, diag: &[f64], mu: f64) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    for (j, d) in diag.iter().enumerate() {
        a[(j, j)] += mu * d * d;
    }
    let chol = a.cholesky()?;
    let step = chol.solve(&(-grad));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Finds the step whose scaled length matches the radius (within 10%),
/// or the Gauss-Newton step when that already fits inside.
fn constrained_step(
    jac: &DMatrix<f64>,
    resid: &DVector<f64>,
    grad: &DVector<f64>,
    diag: &[f64],
    radius: f64,
) -> Option<DVector<f64>> {
    let gn = linear_least_squares(jac, &(-resid)).ok()?;
    if scaled_norm(diag, &gn) <= radius * 1.1 {
        return Some(gn);
    }
    let jtj = jac.transpose() * jac;
    // ‖D⁻¹g‖/Δ bounds μ from above: the step at that damping is inside the region.
    let dinv_g = grad
        .iter()
        .zip(diag)
        .map(|(g, d)| (g / d) * (g / d))
        .sum::<f64>()
        .sqrt();
    let mut hi = (dinv_g / radius).max(f64::MIN_POSITIVE);
    let mut lo = 0.0_f64;
    let mut best = damped_step(&jtj, grad, diag, hi)?;
    for _ in 0..100 {
        let mu = if lo > 0.0 { (lo * hi).sqrt() } else { hi * 1e-3 };
        let Some(step) = damped_step(&jtj, grad, diag, mu) else {
            lo = mu;
            continue;
        };
        let len = scaled_norm(diag, &step);
        if len > 1.1 * radius {
            lo = mu;
        } else {
            best = step;
            if len >= 0.9 * radius {
                break;
            }
            hi = mu;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Some(best)
}

/// Trust-region (Levenberg–Marquardt) minimization of `Σ r_i(θ)²`.
///
/// Each iteration solves the damped normal equations for a step whose scaled
/// length fits the current radius. The step is accepted when the actual
/// reduction is at least `accept_ratio` of the reduction predicted by the
/// linearized model; the radius grows after good steps and shrinks after
/// rejected ones. The returned SSE never exceeds the SSE at `init`.
pub fn trust_region_nls<P>(problem: &P, init: &[f64], cfg: &TrustRegionConfig) -> Result<TrustRegionResult>
where
    P: LeastSquaresProblem + ?Sized,
{
    cfg.validate()?;
    let n_par = init.len();
    let mut params = DVector::from_column_slice(init);
    let mut resid = problem.residuals(init);
    if resid.iter().any(|v| !v.is_finite()) {
        return Err(NumoptError::NonFinite("residuals at initial point"));
    }
    let mut sse = sum_sq(&resid);
    let mut trace = vec![sse];
    if n_par == 0 || resid.is_empty() {
        return Ok(TrustRegionResult {
            params: init.to_vec(),
            sse,
            status: TrustRegionStatus::GradientConverged,
            iterations: 0,
            sse_trace: trace,
        });
    }

    let mut jac = problem.jacobian(init);
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(NumoptError::NonFinite("jacobian"));
    }
    let mut diag: Vec<f64> = (0..n_par)
        .map(|j| {
            let c = jac.column(j).norm();
            if c > 0.0 {
                c
            } else {
                1.0
            }
        })
        .collect();
    let mut radius = cfg.radius0 * scaled_norm(&diag, &params);
    if radius == 0.0 {
        radius = cfg.radius0;
    }

    let mut status = TrustRegionStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        if sse == 0.0 {
            status = TrustRegionStatus::GradientConverged;
            break;
        }
        let r = DVector::from_column_slice(&resid);
        let grad = jac.transpose() * &r;
        let rnorm = sse.sqrt();
        let gcos = (0..n_par)
            .map(|j| {
                let c = jac.column(j).norm();
                if c > 0.0 {
                    grad[j].abs() / (c * rnorm)
                } else {
                    0.0
                }
            })
            .fold(0.0_f64, f64::max);
        if gcos <= cfg.tol_grad {
            status = TrustRegionStatus::GradientConverged;
            break;
        }

        let Some(step) = constrained_step(&jac, &r, &grad, &diag, radius) else {
            status = TrustRegionStatus::NoFurtherReduction;
            break;
        };
        let step_len = scaled_norm(&diag, &step);
        let linear_resid = &r + &jac * &step;
        let predicted = sse - linear_resid.norm_squared();
        if !(predicted > f64::EPSILON * sse) {
            status = TrustRegionStatus::NoFurtherReduction;
            break;
        }

        let trial = &params + &step;
        let trial_resid = problem.residuals(trial.as_slice());
        let trial_sse = if trial_resid.iter().all(|v| v.is_finite()) {
            sum_sq(&trial_resid)
        } else {
            f64::INFINITY
        };
        let ratio = (sse - trial_sse) / predicted;

        let x_norm = scaled_norm(&diag, &params);
        if ratio >= cfg.accept_ratio {
            params = trial;
            resid = trial_resid;
            sse = trial_sse;
            trace.push(sse);
            if ratio > 0.25 {
                radius = radius.max(cfg.radius_grow * step_len);
            }
            jac = problem.jacobian(params.as_slice());
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(NumoptError::NonFinite("jacobian"));
            }
            for (j, d) in diag.iter_mut().enumerate() {
                *d = d.max(jac.column(j).norm());
            }
            if step_len <= cfg.tol_step * (scaled_norm(&diag, &params) + cfg.tol_step) {
                status = TrustRegionStatus::StepConverged;
                break;
            }
        } else {
            radius = cfg.radius_shrink * radius.min(step_len);
            if radius <= cfg.tol_step * (x_norm + cfg.tol_step) {
                status = TrustRegionStatus::StepConverged;
                break;
            }
        }
    }

    Ok(TrustRegionResult {
        params: params.iter().cloned().collect(),
        sse,
        status,
        iterations,
        sse_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_linear_residual() {
        let problem = FnProblem::new(|p: &[f64]| vec![p[0] - 3.0]);
        let out = trust_region_nls(&problem, &[0.0], &TrustRegionConfig::default()).unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-12);
        assert!(out.sse < 1e-24);
        assert!(out.status.converged());
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (-0.1 * x).exp()).collect();
        let problem =
            FnProblem::new(|p: &[f64]| xs.iter().zip(&ys).map(|(x, y)| p[0] * (p[1] * x).exp() - y).collect());
        let out = trust_region_nls(&problem, &[1.0, 0.0], &TrustRegionConfig::default()).unwrap();
        assert!((out.params[0] - 2.0).abs() < 1e-6, "{:?}", out.params);
        assert!((out.params[1] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_converges_monotonically() {
        let problem = FnProblem::new(|p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
        let out = trust_region_nls(&problem, &[-1.2, 1.0], &TrustRegionConfig::default()).unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-8 && (out.params[1] - 1.0).abs() < 1e-8);
        assert!(out.sse_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn max_iterations_returns_best_point() {
        let problem = FnProblem::new(|p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
        let cfg = TrustRegionConfig {
            max_iter: 2,
            ..Default::default()
        };
        let out = trust_region_nls(&problem, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(out.status, TrustRegionStatus::MaxIterations);
        assert!(out.sse <= out.sse_trace[0]);
    }

    #[test]
    fn non_finite_initial_residual() {
        let problem = FnProblem::new(|p: &[f64]| vec![p[0].ln()]);
        assert!(matches!(
            trust_region_nls(&problem, &[-1.0], &TrustRegionConfig::default()),
            Err(NumoptError::NonFinite(_))
        ));
    }

    #[test]
    fn finite_difference_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            let p = [a, b];
            let f = |p: &[f64]| {
                vec![
                    (p[0] * p[1]).sin() + p[0] * p[0],
                    (0.3 * p[0]).exp() - p[1].cos() * p[0],
                ]
            };
            let fd = finite_difference_jacobian(f, &p);
            let an = DMatrix::from_row_slice(
                2,
                2,
                &[
                    p[1] * (p[0] * p[1]).cos() + 2.0 * p[0],
                    p[0] * (p[0] * p[1]).cos(),
                    0.3 * (0.3 * p[0]).exp() - p[1].cos(),
                    p[1].sin() * p[0],
                ],
            );
            for (x, y) in fd.iter().zip(an.iter()) {
                assert!((x - y).abs() <= 1e-4 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrustRegionConfig {
            radius_shrink: 1.5,
            ..Default::default()
        };
        let problem = FnProblem::new(|p: &[f64]| vec![p[0]]);
        assert!(matches!(
            trust_region_nls(&problem, &[1.0], &cfg),
            Err(NumoptError::InvalidConfig(_))
        ));
    }
}
