use std::time::Instant;

use super::{
    check_training_set, finish, solver_failure, FitOptions, ModelKind, ModelParams, RangingError, Result, SolverStatus,
    TrainReport,
};
use crate::dataset::RangingDataset;
use crate::numopt::{solve_banded, solve_banded_many, BandedSystem};

/// How the smoothing parameter `p` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplineSmoothing {
    /// Generalized cross-validation over a log grid of `1 − p`.
    Auto,
    /// Fixed `p ∈ (0, 1]`; `p = 1` interpolates the knot means.
    Fixed(f64),
}

/// Natural cubic spline in value / second-derivative form.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    pub second_derivs: Vec<f64>,
    pub p: f64,
}

impl SmoothingSpline {
    pub fn evaluate(&self, x: f64) -> f64 {
        let t = &self.knots;
        let g = &self.values;
        let c = &self.second_derivs;
        let n = t.len();
        if x <= t[0] {
            let h = t[1] - t[0];
            let slope = (g[1] - g[0]) / h - h * (2.0 * c[0] + c[1]) / 6.0;
            return g[0] + (x - t[0]) * slope;
        }
        if x >= t[n - 1] {
            let h = t[n - 1] - t[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * (c[n - 2] + 2.0 * c[n - 1]) / 6.0;
            return g[n - 1] + (x - t[n - 1]) * slope;
        }
        let i = t.partition_point(|k| *k <= x).saturating_sub(1).min(n - 2);
        let h = t[i + 1] - t[i];
        let (a, b) = (x - t[i], t[i + 1] - x);
        (a * g[i + 1] + b * g[i]) / h - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.p.is_finite()
            && self
                .knots
                .iter()
                .chain(&self.values)
                .chain(&self.second_derivs)
                .all(|v| v.is_finite())
    }
}

/// Unique sorted inputs with multiplicities and mean targets.
pub(crate) fn collapse_knots(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut knots, mut weights, mut means) = (Vec::new(), Vec::<f64>::new(), Vec::<f64>::new());
    for (xi, yi) in pairs {
        if knots.last() == Some(&xi) {
            let last = knots.len() - 1;
            weights[last] += 1.0;
            means[last] += yi;
        } else {
            knots.push(xi);
            weights.push(1.0);
            means.push(yi);
        }
    }
    for (m, w) in means.iter_mut().zip(&weights) {
        *m /= w;
    }
    (knots, weights, means)
}

/// Banded pieces of the Reinsch system for fixed knots and weights.
struct Reinsch {
    h: Vec<f64>,
    /// `Qᵀ·W⁻¹·Q` (bandwidth 2).
    qwq: BandedSystem,
    /// `R` (bandwidth 1, stored with bandwidth 2).
    r: BandedSystem,
}

impl Reinsch {
    fn new(knots: &[f64], weights: &[f64]) -> Self {
        let n = knots.len();
        let m = n - 2;
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut qwq = BandedSystem::new(2, m);
        let mut r = BandedSystem::new(2, m);
        // column j of Q has nonzeros in rows j, j+1, j+2
        let col = |j: usize| [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]];
        for row in 0..n {
            let winv = 1.0 / weights[row];
            let lo = row.saturating_sub(2);
            let hi = row.min(m - 1);
            for a in lo..=hi {
                for b in a..=hi {
                    let qa = col(a)[row - a];
                    let qb = col(b)[row - b];
                    qwq.add(a, b, qa * qb * winv);
                }
            }
        }
        for j in 0..m {
            r.add(j, j, (h[j] + h[j + 1]) / 3.0);
            if j + 1 < m {
                r.add(j, j + 1, h[j + 1] / 6.0);
            }
        }
        Self { h, qwq, r }
    }

    fn q_transpose(&self, y: &[f64]) -> Vec<f64> {
        let h = &self.h;
        (0..h.len() - 1)
            .map(|j| (y[j + 2] - y[j + 1]) / h[j + 1] - (y[j + 1] - y[j]) / h[j])
            .collect()
    }

    /// `pR + (1 − p)·QᵀW⁻¹Q`.
    fn system(&self, p: f64) -> BandedSystem {
        let mut sys = BandedSystem::new(2, self.r.dim());
        for k in 0..=2 {
            for (i, slot) in sys.diagonals[k].iter_mut().enumerate() {
                *slot = p * self.r.diagonals[k][i] + (1.0 - p) * self.qwq.diagonals[k][i];
            }
        }
        sys
    }

    fn solve(&self, p: f64, weights: &[f64], means: &[f64]) -> Result<(Vec<f64>, Vec<f64>, BandedSystem)> {
        let mut sys = self.system(p);
        sys.rhs = self.q_transpose(means);
        let u = solve_banded(&sys).map_err(|e| (ModelKind::SmoothingSpline, e))?;
        let n = means.len();
        let mut qu = vec![0.0; n];
        for (j, uj) in u.iter().enumerate() {
            qu[j] += uj / self.h[j];
            qu[j + 1] -= uj * (1.0 / self.h[j] + 1.0 / self.h[j + 1]);
            qu[j + 2] += uj / self.h[j + 1];
        }
        let values = (0..n).map(|i| means[i] - (1.0 - p) * qu[i] / weights[i]).collect();
        let mut gamma = Vec::with_capacity(n);
        gamma.push(0.0);
        gamma.extend(u.iter().map(|v| p * v));
        gamma.push(0.0);
        Ok((values, gamma, sys))
    }

    /// `tr(M⁻¹·QᵀW⁻¹Q)` for the already assembled `M`.
    fn trace_term(&self, sys: &BandedSystem) -> Result<f64> {
        let m = sys.dim();
        let cols: Vec<Vec<f64>> = (0..m).map(|j| (0..m).map(|i| self.qwq.get(i, j)).collect()).collect();
        let sol = solve_banded_many(sys, &cols).map_err(|e| (ModelKind::SmoothingSpline, e))?;
        Ok((0..m).map(|j| sol[j][j]).sum())
    }
}

const GCV_GRID: usize = 121;

fn gcv_grid() -> Vec<f64> {
    let (lo, hi) = (1e-6f64.log10(), (1.0 - 1e-6f64).log10());
    (0..GCV_GRID)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (GCV_GRID - 1) as f64))
        .collect()
}

/// Fits with a fixed `p` and returns the spline plus its GCV score.
fn fit_fixed(
    x: &[f64],
    y: &[f64],
    knots: &[f64],
    weights: &[f64],
    means: &[f64],
    p: f64,
    with_gcv: bool,
) -> Result<(SmoothingSpline, f64)> {
    let reinsch = Reinsch::new(knots, weights);
    let (values, second_derivs, sys) = reinsch.solve(p, weights, means)?;
    let spline = SmoothingSpline {
        knots: knots.to_vec(),
        values,
        second_derivs,
        p,
    };
    if !with_gcv {
        return Ok((spline, f64::NAN));
    }
    let trace = knots.len() as f64 - (1.0 - p) * reinsch.trace_term(&sys)?;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - spline.evaluate(*xi)).powi(2))
        .sum();
    let big_n = x.len() as f64;
    let denom = big_n - trace;
    let score = if denom > 1e-9 * big_n {
        big_n * rss / (denom * denom)
    } else {
        f64::INFINITY
    };
    Ok((spline, score))
}

pub fn fit_smoothing_spline(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::SmoothingSpline;
    check_training_set(kind, train, 4)?;
    let x = train.rssi();
    let y = train.distances();
    let (knots, weights, means) = collapse_knots(&x, &y);
    if knots.len() < 4 {
        return Err(RangingError::TooFewPoints {
            kind,
            needed: 4,
            got: knots.len(),
        });
    }
    let spline = match opts.spline {
        SplineSmoothing::Fixed(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(solver_failure(kind, format!("smoothing p = {p} is outside (0, 1]")));
            }
            fit_fixed(&x, &y, &knots, &weights, &means, p, false)?.0
        }
        SplineSmoothing::Auto => {
            let mut best: Option<(SmoothingSpline, f64)> = None;
            for one_minus_p in gcv_grid() {
                let (s, score) = fit_fixed(&x, &y, &knots, &weights, &means, 1.0 - one_minus_p, true)?;
                if best.as_ref().is_none_or(|(_, b)| score < *b) {
                    best = Some((s, score));
                }
            }
            let (s, score) = best.expect("grid is non-empty");
            log::debug!("gateway {}: spline p = {} (gcv {score:.4})", train.gateway_id, s.p);
            s
        }
    };
    finish(
        train,
        ModelParams::SmoothingSpline(spline),
        opts,
        SolverStatus::Exact,
        started,
    )
}
