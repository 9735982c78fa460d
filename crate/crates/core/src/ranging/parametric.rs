use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    check_training_set, columns, finish, solver_failure, FitOptions, ModelKind, ModelParams, Result, SolverStatus,
    TrainReport,
};
use crate::dataset::RangingDataset;
use crate::numopt::{linear_least_squares, trust_region_nls, FnProblem, TrustRegionResult};

/// Cubic in the standardized input `z = (rssi − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial3Params {
    pub center: f64,
    pub scale: f64,
    /// `c0 + c1·z + c2·z² + c3·z³`.
    pub coeffs: [f64; 4],
}

impl Polynomial3Params {
    pub fn evaluate(&self, rssi: f64) -> f64 {
        let z = (rssi - self.center) / self.scale;
        let c = &self.coeffs;
        c[0] + z * (c[1] + z * (c[2] + z * c[3]))
    }

    /// Coefficients of the same cubic in raw rssi, lowest order first.
    pub fn raw_coefficients(&self) -> [f64; 4] {
        let (m, s) = (self.center, self.scale);
        let c = &self.coeffs;
        // z^j = ((r − m)/s)^j expanded binomially
        let mut out = [0.0; 4];
        let binom = [
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0],
            [1.0, 3.0, 3.0, 1.0],
        ];
        for j in 0..4 {
            let cj = c[j] / s.powi(j as i32);
            for (i, slot) in out.iter_mut().enumerate().take(j + 1) {
                *slot += cj * binom[j][i] * (-m).powi((j - i) as i32);
            }
        }
        out
    }
}

/// `amplitude · exp(−((rssi − centroid)/width)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub centroid: f64,
    pub width: f64,
}

impl GaussianTerm {
    pub fn evaluate(&self, rssi: f64) -> f64 {
        let u = (rssi - self.centroid) / self.width;
        self.amplitude * (-u * u).exp()
    }
}

fn status_of(res: &TrustRegionResult) -> SolverStatus {
    if res.status.converged() {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIterations
    }
}

fn lstsq(kind: ModelKind, rows: Vec<[f64; 2]>, y: &[f64]) -> Result<(f64, f64)> {
    let design = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
    let beta = linear_least_squares(&design, &DVector::from_column_slice(y)).map_err(|e| (kind, e))?;
    Ok((beta[0], beta[1]))
}

pub fn fit_path_loss(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::PathLoss;
    check_training_set(kind, train, 3)?;
    let (rssi, dist) = columns(train);
    if dist.iter().any(|d| *d <= 0.0) {
        return Err(solver_failure(kind, "distances must be positive"));
    }
    let rows = dist.iter().map(|d| [1.0, d.log10()]).collect();
    let (mut intercept, mut slope) = lstsq(kind, rows, &rssi)?;
    if !(slope.abs() > 0.0) || !slope.is_finite() {
        return Err(solver_failure(kind, "rssi does not vary with distance"));
    }
    let mut status = SolverStatus::Exact;
    if opts.path_loss_refine {
        let problem = FnProblem::new(|p: &[f64]| {
            rssi.iter()
                .zip(&dist)
                .map(|(r, d)| 10f64.powf((r - p[0]) / p[1]) - d)
                .collect()
        });
        let res = trust_region_nls(&problem, &[intercept, slope], &opts.trust_region).map_err(|e| (kind, e))?;
        if res.params[1] != 0.0 {
            intercept = res.params[0];
            slope = res.params[1];
            status = status_of(&res);
        }
    }
    finish(train, ModelParams::PathLoss { intercept, slope }, opts, status, started)
}

pub fn fit_linear(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::Linear;
    check_training_set(kind, train, 3)?;
    let (rssi, dist) = columns(train);
    let rows = rssi.iter().map(|r| [1.0, *r]).collect();
    let (intercept, slope) = lstsq(kind, rows, &dist)?;
    finish(
        train,
        ModelParams::Linear { intercept, slope },
        opts,
        SolverStatus::Exact,
        started,
    )
}

pub fn fit_polynomial3(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::Polynomial3;
    check_training_set(kind, train, 5)?;
    let (rssi, dist) = columns(train);
    let n = rssi.len() as f64;
    let center = rssi.iter().sum::<f64>() / n;
    let sd = (rssi.iter().map(|r| (r - center).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let design = DMatrix::from_fn(rssi.len(), 4, |i, j| ((rssi[i] - center) / scale).powi(j as i32));
    let beta = linear_least_squares(&design, &DVector::from_vec(dist)).map_err(|e| (kind, e))?;
    let params = Polynomial3Params {
        center,
        scale,
        coeffs: [beta[0], beta[1], beta[2], beta[3]],
    };
    finish(
        train,
        ModelParams::Polynomial3(params),
        opts,
        SolverStatus::Exact,
        started,
    )
}

pub fn fit_exponential(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::Exponential;
    check_training_set(kind, train, 3)?;
    let (rssi, dist) = columns(train);
    let center = rssi.iter().sum::<f64>() / rssi.len() as f64;

    // log-linear start on the positive distances
    let (log_r, log_d): (Vec<f64>, Vec<f64>) = rssi
        .iter()
        .zip(&dist)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, d)| (r - center, d.ln()))
        .unzip();
    let init = if log_d.len() >= 2 {
        let rows = log_r.iter().map(|r| [1.0, *r]).collect();
        let (c0, b) = lstsq(kind, rows, &log_d)?;
        [c0.exp(), b]
    } else {
        [dist.iter().sum::<f64>() / dist.len() as f64, 0.0]
    };

    let x: Vec<f64> = rssi.iter().map(|r| r - center).collect();
    let problem = FnProblem::with_jacobian(
        |p: &[f64]| x.iter().zip(&dist).map(|(x, d)| p[0] * (p[1] * x).exp() - d).collect(),
        |p: &[f64]| {
            DMatrix::from_fn(x.len(), 2, |i, j| {
                let e = (p[1] * x[i]).exp();
                if j == 0 {
                    e
                } else {
                    p[0] * x[i] * e
                }
            })
        },
    );
    let res = trust_region_nls(&problem, &init, &opts.trust_region).map_err(|e| (kind, e))?;
    let (big_a, b) = (res.params[0], res.params[1]);
    let a = big_a * (-b * center).exp();
    finish(train, ModelParams::Exponential { a, b }, opts, status_of(&res), started)
}

fn gaussian_residuals(x: &[f64], y: &[f64], p: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(x, y)| {
            let f: f64 = p
                .chunks_exact(3)
                .map(|t| {
                    let u = (x - t[1]) / t[2].exp();
                    t[0] * (-u * u).exp()
                })
                .sum();
            f - y
        })
        .collect()
}

fn gaussian_jacobian(x: &[f64], p: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(x.len(), p.len());
    for (i, xi) in x.iter().enumerate() {
        for (k, t) in p.chunks_exact(3).enumerate() {
            let w = t[2].exp();
            let u = (xi - t[1]) / w;
            let e = (-u * u).exp();
            jac[(i, 3 * k)] = e;
            jac[(i, 3 * k + 1)] = t[0] * e * 2.0 * u / w;
            jac[(i, 3 * k + 2)] = t[0] * e * 2.0 * u * u;
        }
    }
    jac
}

/// Quantile start: centroids at equally spaced rssi quantiles, widths
/// `range / 2k`, amplitudes the mean distance of the nearest samples.
fn gaussian_init(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let lo = x[order[0]];
    let hi = x[order[order.len() - 1]];
    let range = hi - lo;
    let width = if range > 0.0 { range / (2.0 * k as f64) } else { 1.0 };
    let mut p = Vec::with_capacity(3 * k);
    for i in 0..k {
        let start = i * order.len() / k;
        let end = ((i + 1) * order.len() / k).max(start + 1);
        let bin = &order[start..end];
        let q = (i as f64 + 0.5) / k as f64;
        let pos = q * (order.len() - 1) as f64;
        let (f, c) = (pos.floor() as usize, pos.ceil() as usize);
        let centroid = x[order[f]] + (pos - f as f64) * (x[order[c]] - x[order[f]]);
        let amplitude = bin.iter().map(|j| y[*j]).sum::<f64>() / bin.len() as f64;
        p.extend([amplitude, centroid, width.ln()]);
    }
    p
}

pub fn fit_gaussian_sum(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::GaussianSum;
    let k = opts.gaussian_terms;
    if k == 0 {
        return Err(solver_failure(kind, "at least one term is required"));
    }
    check_training_set(kind, train, 3 * k + 1)?;
    let (x, y) = columns(train);

    let problem = FnProblem::with_jacobian(
        |p: &[f64]| gaussian_residuals(&x, &y, p),
        |p: &[f64]| gaussian_jacobian(&x, p),
    );
    let solve = |init: &[f64]| trust_region_nls(&problem, init, &opts.trust_region).map_err(|e| (kind, e));

    // Each order is started both from quantiles and from the previous order
    // plus a zero-amplitude term, so adding a term never raises the SSE.
    let mut best: Option<TrustRegionResult> = None;
    for order in 1..=k {
        let mut res = solve(&gaussian_init(&x, &y, order))?;
        if let Some(prev) = &best {
            let mut warm = prev.params.clone();
            let fresh = gaussian_init(&x, &y, order);
            warm.extend([0.0, fresh[3 * (order - 1) + 1], fresh[3 * (order - 1) + 2]]);
            let alt = solve(&warm)?;
            if alt.sse < res.sse || !res.sse.is_finite() {
                res = alt;
            }
        }
        best = Some(res);
    }
    let res = best.expect("k >= 1");
    let terms = res
        .params
        .chunks_exact(3)
        .map(|t| GaussianTerm {
            amplitude: t[0],
            centroid: t[1],
            width: t[2].exp(),
        })
        .collect();
    finish(train, ModelParams::GaussianSum(terms), opts, status_of(&res), started)
}
