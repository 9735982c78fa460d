use std::time::Instant;

use super::{check_training_set, finish, FitOptions, ModelKind, ModelParams, Result, SolverStatus, TrainReport};
use crate::dataset::RangingDataset;
use crate::numopt::{smo_svr, SvrProblem, SvrStatus};

/// Linear ε-SVR on the standardized input `z = (rssi − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrLinearParams {
    pub center: f64,
    pub scale: f64,
    /// Weight and bias in the standardized input.
    pub weight: f64,
    pub bias: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl SvrLinearParams {
    pub fn predict(&self, rssi: f64) -> f64 {
        self.weight * (rssi - self.center) / self.scale + self.bias
    }
}

/// Median of the targets, the bias of a flat model.
fn flat_bias(y: &[f64]) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn fit_svr_linear(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::SvrLinear;
    check_training_set(kind, train, 2)?;
    let x = train.rssi();
    let y = train.distances();
    let n = x.len() as f64;
    let center = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt();

    let mut problem = SvrProblem::new(Vec::new(), y.clone());
    problem.c = opts.svr_c;
    if let Some(eps) = opts.svr_epsilon {
        problem.epsilon = eps;
    }
    if !(sd > 0.0) {
        let params = SvrLinearParams {
            center,
            scale: 1.0,
            weight: 0.0,
            bias: flat_bias(&y),
            c: problem.c,
            epsilon: problem.epsilon,
        };
        return finish(
            train,
            ModelParams::SvrLinear(params),
            opts,
            SolverStatus::Exact,
            started,
        );
    }
    problem.x = x.iter().map(|v| (v - center) / sd).collect();
    let sol = smo_svr(&problem).map_err(|e| (kind, e))?;
    let status = match sol.status {
        SvrStatus::Converged => SolverStatus::Converged,
        SvrStatus::MaxPasses => SolverStatus::MaxIterations,
    };
    let params = SvrLinearParams {
        center,
        scale: sd,
        weight: sol.weight,
        bias: sol.bias,
        c: problem.c,
        epsilon: problem.epsilon,
    };
    finish(train, ModelParams::SvrLinear(params), opts, status, started)
}
