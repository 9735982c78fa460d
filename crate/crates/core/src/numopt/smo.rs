use super::{NumoptError, Result};

/// ε-insensitive support vector regression with a linear kernel on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrProblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub c: f64,
    pub epsilon: f64,
    pub tol_kkt: f64,
    /// Iteration budget, in units of `x.len()` pair updates.
    pub max_passes: usize,
}

impl SvrProblem {
    /// Problem with `C = 1` and `ε = 0.1·std(y)`.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let epsilon = 0.1 * std_dev(&y);
        Self {
            x,
            y,
            c: 1.0,
            epsilon,
            tol_kkt: 1e-6,
            max_passes: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(NumoptError::DimensionMismatch(format!(
                "{} inputs vs {} targets",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.len() < 2 {
            return Err(NumoptError::DimensionMismatch("at least two samples required".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(NumoptError::NonFinite("svr samples"));
        }
        if !(self.c > 0.0) || !(self.epsilon >= 0.0) || !(self.tol_kkt > 0.0) || self.max_passes == 0 {
            return Err(NumoptError::InvalidConfig(
                "svr needs C > 0, epsilon >= 0, tol_kkt > 0, max_passes >= 1".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvrStatus {
    Converged,
    MaxPasses,
}

#[derive(Debug, Clone)]
pub struct SvrSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    /// Primal weight `Σ(α_i − α*_i)·x_i`.
    pub weight: f64,
    pub status: SvrStatus,
    pub iterations: usize,
    /// Largest KKT violation `m − M` at termination.
    pub kkt_gap: f64,
}

impl SvrSolution {
    /// `α − α*`, the expansion coefficients of the regression function.
    pub fn dual_coeffs(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.alpha_star).map(|(a, s)| a - s).collect()
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.weight * x + self.bias
    }

    /// Dual objective `½‖w‖² + ε·Σ(α + α*) − Σ y(α − α*)` (to be minimized).
    pub fn dual_objective(&self, problem: &SvrProblem) -> f64 {
        let mut obj = 0.5 * self.weight * self.weight;
        for i in 0..problem.y.len() {
            obj += problem.epsilon * (self.alpha[i] + self.alpha_star[i])
                - problem.y[i] * (self.alpha[i] - self.alpha_star[i]);
        }
        obj
    }
}

/// Primal objective `½w² + C·Σ max(0, |y − wx − b| − ε)`.
pub fn svr_primal_objective(problem: &SvrProblem, weight: f64, bias: f64) -> f64 {
    let loss: f64 = problem
        .x
        .iter()
        .zip(&problem.y)
        .map(|(x, y)| ((y - weight * x - bias).abs() - problem.epsilon).max(0.0))
        .sum();
    0.5 * weight * weight + problem.c * loss
}

/// Sequential minimal optimization for the ε-SVR dual.
///
/// The 2n dual variables are `β = (α, α*)` with labels `+1`/`−1`. Each step
/// picks the maximal violating pair and optimizes it analytically inside the
/// box `[0, C]` while keeping `Σ(α − α*) = 0`.
pub fn smo_svr(p: &SvrProblem) -> Result<SvrSolution> {
    p.validate()?;
    let n = p.x.len();
    let c = p.c;
    let total = 2 * n;
    let label = |t: usize| if t < n { 1.0 } else { -1.0 };
    let sample = |t: usize| if t < n { t } else { t - n };

    let mut beta = vec![0.0_f64; total];
    // G_t = y_t·x_t·w + p_t, with w = Σ y_s β_s x_s
    let linear: Vec<f64> = (0..total)
        .map(|t| {
            let i = sample(t);
            if t < n {
                p.epsilon - p.y[i]
            } else {
                p.epsilon + p.y[i]
            }
        })
        .collect();
    let mut weight = 0.0_f64;
    let grad = |t: usize, w: f64| label(t) * p.x[sample(t)] * w + linear[t];

    let max_iter = p.max_passes.saturating_mul(n.max(1));
    let tau = 1e-12;
    let mut iterations = 0;
    let mut status = SvrStatus::MaxPasses;
    let mut gap;

    loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut i_sel = usize::MAX;
        let mut j_sel = usize::MAX;
        for t in 0..total {
            let yt = label(t);
            let v = -yt * grad(t, weight);
            let up = (yt > 0.0 && beta[t] < c) || (yt < 0.0 && beta[t] > 0.0);
            let low = (yt > 0.0 && beta[t] > 0.0) || (yt < 0.0 && beta[t] < c);
            if up && v > gmax {
                gmax = v;
                i_sel = t;
            }
            if low && v < gmin {
                gmin = v;
                j_sel = t;
            }
        }
        gap = if i_sel == usize::MAX || j_sel == usize::MAX {
            0.0
        } else {
            gmax - gmin
        };
        if gap <= p.tol_kkt {
            status = SvrStatus::Converged;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (yi, yj) = (label(i), label(j));
        let (xi, xj) = (p.x[sample(i)], p.x[sample(j)]);
        let qii = xi * xi;
        let qjj = xj * xj;
        let qij = yi * yj * xi * xj;
        let gi = grad(i, weight);
        let gj = grad(j, weight);
        let (old_i, old_j) = (beta[i], beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);

        if yi != yj {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        beta[i] = ai;
        beta[j] = aj;
        weight += yi * (ai - old_i) * xi + yj * (aj - old_j) * xj;
        if !weight.is_finite() {
            return Err(NumoptError::NonFinite("svr weight"));
        }
    }

    // Recompute the weight from scratch to shed accumulated rounding.
    weight = (0..n).map(|i| (beta[i] - beta[i + n]) * p.x[i]).sum();

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut n_free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..total {
        let yt = label(t);
        let yg = yt * grad(t, weight);
        let at_upper = beta[t] >= c;
        let at_lower = beta[t] <= 0.0;
        if at_upper {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    Ok(SvrSolution {
        alpha: beta[..n].to_vec(),
        alpha_star: beta[n..].to_vec(),
        bias: -rho,
        weight,
        status,
        iterations,
        kkt_gap: gap,
    })
}
