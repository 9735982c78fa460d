//! Planar trilateration from per-gateway range estimates.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataset::SitePlan;
use crate::numopt::{linear_least_squares, trust_region_nls, FnProblem, TrustRegionConfig};
use crate::ranging::{predict_distance, RangingModel};

#[derive(Debug, Error, PartialEq)]
pub enum PositionError {
    #[error("{gateways} gateways but {distances} distances")]
    DimensionMismatch { gateways: usize, distances: usize },
    #[error("need at least 3 distinct gateways, got {0}")]
    DegenerateGeometry(usize),
    #[error("distance {0} is negative or not finite")]
    InvalidDistance(f64),
    #[error("only {usable} usable gateways (3 required)")]
    InsufficientGateways { usable: usize },
    #[error("non-finite rssi reading for gateway {0}")]
    NonFiniteReading(String),
}

pub type Result<T> = std::result::Result<T, PositionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixStatus {
    /// All range residuals vanish.
    Exact,
    LeastSquares,
    /// Gateways (nearly) collinear; the fix may be a mirror image.
    IllConditioned,
}

impl FixStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FixStatus::Exact => "exact",
            FixStatus::LeastSquares => "least_squares",
            FixStatus::IllConditioned => "ill_conditioned",
        }
    }
}

impl fmt::Display for FixStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionFix {
    pub x: f64,
    pub y: f64,
    /// RMS of `‖p − g_i‖ − d_i` at the fix.
    pub residual_rms: f64,
    pub status: FixStatus,
    pub n_gateways: usize,
}

const EXACT_RMS: f64 = 1e-9;
const COLLINEAR_AREA: f64 = 1e-9;

/// Largest triangle area over all gateway triples, relative to the squared
/// longest side of that triangle (twice the area, so an equilateral triangle
/// scores √3/2).
fn normalized_area(g: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            for k in j + 1..g.len() {
                let (ax, ay) = (g[j].0 - g[i].0, g[j].1 - g[i].1);
                let (bx, by) = (g[k].0 - g[i].0, g[k].1 - g[i].1);
                let cross = (ax * by - ay * bx).abs();
                let d2 = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                let longest = d2(g[i], g[j]).max(d2(g[i], g[k])).max(d2(g[j], g[k]));
                if longest > 0.0 {
                    best = best.max(cross / longest);
                }
            }
        }
    }
    best
}

fn residuals(g: &[(f64, f64)], d: &[f64], p: &[f64]) -> Vec<f64> {
    g.iter()
        .zip(d)
        .map(|(gi, di)| (p[0] - gi.0).hypot(p[1] - gi.1) - di)
        .collect()
}

fn jacobian(g: &[(f64, f64)], p: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(g.len(), 2, |i, j| {
        let (dx, dy) = (p[0] - g[i].0, p[1] - g[i].1);
        let r = dx.hypot(dy);
        if r == 0.0 {
            0.0
        } else if j == 0 {
            dx / r
        } else {
            dy / r
        }
    })
}

fn sse(g: &[(f64, f64)], d: &[f64], p: &[f64]) -> f64 {
    residuals(g, d, p).iter().map(|r| r * r).sum()
}

/// Newton iterations on the exact SSE Hessian; the trust-region result is
/// already near the minimum, so this only tightens the last digits.
fn newton_polish(g: &[(f64, f64)], d: &[f64], start: Vec<f64>) -> Vec<f64> {
    // gradient (halved) and Hessian (halved) of the SSE at p
    let local = |p: &[f64]| {
        let (mut gx, mut gy, mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (gi, di) in g.iter().zip(d) {
            let (dx, dy) = (p[0] - gi.0, p[1] - gi.1);
            let rho = dx.hypot(dy);
            if rho == 0.0 {
                return None;
            }
            let (ux, uy) = (dx / rho, dy / rho);
            let r = rho - di;
            let k = r / rho;
            gx += r * ux;
            gy += r * uy;
            hxx += ux * ux + k * (1.0 - ux * ux);
            hxy += ux * uy - k * ux * uy;
            hyy += uy * uy + k * (1.0 - uy * uy);
        }
        Some(([gx, gy], [hxx, hxy, hyy]))
    };
    let mut p = start;
    let Some((mut grad, mut hess)) = local(&p) else {
        return p;
    };
    for _ in 0..20 {
        let [hxx, hxy, hyy] = hess;
        let det = hxx * hyy - hxy * hxy;
        if !(det > 0.0 && hxx > 0.0) {
            break;
        }
        let trial = vec![
            p[0] - (hyy * grad[0] - hxy * grad[1]) / det,
            p[1] - (hxx * grad[1] - hxy * grad[0]) / det,
        ];
        let Some((g2, h2)) = local(&trial) else { break };
        if !(g2[0].hypot(g2[1]) < grad[0].hypot(grad[1])) {
            break;
        }
        p = trial;
        grad = g2;
        hess = h2;
    }
    p
}

/// Closed-form start: subtracting the first circle equation from the others
/// leaves a linear system in `p`.
fn linearized(g: &[(f64, f64)], d: &[f64]) -> [f64; 2] {
    let m = g.len() - 1;
    let a = DMatrix::from_fn(m, 2, |i, j| {
        2.0 * if j == 0 {
            g[i + 1].0 - g[0].0
        } else {
            g[i + 1].1 - g[0].1
        }
    });
    let b = DVector::from_fn(m, |i, _| {
        let (gi, g0) = (g[i + 1], g[0]);
        d[0] * d[0] - d[i + 1] * d[i + 1] + gi.0 * gi.0 + gi.1 * gi.1 - g0.0 * g0.0 - g0.1 * g0.1
    });
    match linear_least_squares(&a, &b) {
        Ok(p) => [p[0], p[1]],
        Err(_) => [0.0, 0.0],
    }
}

/// Least-squares position from three or more gateway ranges.
pub fn trilaterate(gateways: &[(f64, f64)], distances: &[f64]) -> Result<PositionFix> {
    if gateways.len() != distances.len() {
        return Err(PositionError::DimensionMismatch {
            gateways: gateways.len(),
            distances: distances.len(),
        });
    }
    if let Some(bad) = distances.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(PositionError::InvalidDistance(*bad));
    }
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for g in gateways {
        if !g.0.is_finite() || !g.1.is_finite() {
            return Err(PositionError::DegenerateGeometry(0));
        }
        if !distinct.contains(g) {
            distinct.push(*g);
        }
    }
    if distinct.len() < 3 {
        return Err(PositionError::DegenerateGeometry(distinct.len()));
    }

    // Work in coordinates centred on the gateway centroid.
    let n = gateways.len() as f64;
    let cx = gateways.iter().map(|g| g.0).sum::<f64>() / n;
    let cy = gateways.iter().map(|g| g.1).sum::<f64>() / n;
    let g: Vec<(f64, f64)> = gateways.iter().map(|p| (p.0 - cx, p.1 - cy)).collect();

    let init = linearized(&g, distances);
    let problem = FnProblem::with_jacobian(|p: &[f64]| residuals(&g, distances, p), |p: &[f64]| jacobian(&g, p));
    let cfg = TrustRegionConfig {
        tol_grad: 1e-14,
        tol_step: 1e-15,
        ..TrustRegionConfig::default()
    };
    let mut best = init.to_vec();
    if let Ok(res) = trust_region_nls(&problem, &init, &cfg) {
        if res.params.iter().all(|v| v.is_finite()) && res.sse <= sse(&g, distances, &init) {
            best = res.params;
        }
    }
    let best = newton_polish(&g, distances, best);
    let residual_rms = (sse(&g, distances, &best) / n).sqrt();
    let status = if normalized_area(&distinct) < COLLINEAR_AREA {
        FixStatus::IllConditioned
    } else if residual_rms < EXACT_RMS {
        FixStatus::Exact
    } else {
        FixStatus::LeastSquares
    };
    Ok(PositionFix {
        x: best[0] + cx,
        y: best[1] + cy,
        residual_rms,
        status,
        n_gateways: gateways.len(),
    })
}

/// Ranges each gateway's mean reading with its model, then trilaterates.
/// Gateways lacking a model, a plan entry or readings are skipped.
pub fn position_from_rssi(
    models: &BTreeMap<String, RangingModel>,
    plan: &SitePlan,
    readings: &BTreeMap<String, Vec<f64>>,
) -> Result<PositionFix> {
    let mut anchors = Vec::new();
    let mut ranges = Vec::new();
    for gw in &plan.gateways {
        let (Some(model), Some(values)) = (models.get(&gw.id), readings.get(&gw.id)) else {
            continue;
        };
        if values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let d = predict_distance(model, mean).map_err(|_| PositionError::NonFiniteReading(gw.id.clone()))?;
        anchors.push((gw.x, gw.y));
        ranges.push(d);
    }
    if anchors.len() < 3 {
        return Err(PositionError::InsufficientGateways { usable: anchors.len() });
    }
    trilaterate(&anchors, &ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G3: [(f64, f64); 3] = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];

    fn exact(g: &[(f64, f64)], p: (f64, f64)) -> Vec<f64> {
        g.iter().map(|q| (q.0 - p.0).hypot(q.1 - p.1)).collect()
    }

    #[test]
    fn noiseless_fix() {
        let fix = trilaterate(&G3, &exact(&G3, (3.0, 4.0))).unwrap();
        assert!((fix.x - 3.0).abs() < 1e-9 && (fix.y - 4.0).abs() < 1e-9);
        assert_eq!(fix.status, FixStatus::Exact);
        assert_eq!(fix.n_gateways, 3);
    }

    #[test]
    fn inflated_ranges_are_least_squares() {
        let d: Vec<f64> = exact(&G3, (3.0, 4.0)).iter().map(|d| d + 1.0).collect();
        let fix = trilaterate(&G3, &d).unwrap();
        assert_eq!(fix.status, FixStatus::LeastSquares);
        assert!(fix.residual_rms > 0.0);
    }

    #[test]
    fn collinear_is_flagged() {
        let g = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        let fix = trilaterate(&g, &exact(&g, (1.0, 1.0))).unwrap();
        assert_eq!(fix.status, FixStatus::IllConditioned);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            trilaterate(&G3, &[1.0, 2.0]),
            Err(PositionError::DimensionMismatch { .. })
        ));
        let dup = [(0.0, 0.0), (0.0, 0.0), (5.0, 5.0)];
        assert_eq!(
            trilaterate(&dup, &[1.0, 1.0, 1.0]),
            Err(PositionError::DegenerateGeometry(2))
        );
        assert!(matches!(
            trilaterate(&G3, &[1.0, f64::NAN, 2.0]),
            Err(PositionError::InvalidDistance(_))
        ));
        assert!(matches!(
            trilaterate(&G3, &[1.0, -1.0, 2.0]),
            Err(PositionError::InvalidDistance(_))
        ));
    }

    #[test]
    fn refinement_never_worse_than_start() {
        let d = [7.0, 3.0, 12.0];
        let fix = trilaterate(&G3, &d).unwrap();
        let start = linearized(&G3, &d);
        assert!(sse(&G3, &d, &[fix.x, fix.y]) <= sse(&G3, &d, &start));
    }

    fn coord() -> impl Strategy<Value = f64> {
        -500.0..500.0f64
    }

    proptest! {
        #[test]
        fn exact_ranges_recover_point(
            g in prop::collection::vec((coord(), coord()), 3..6),
            p in (coord(), coord()),
        ) {
            prop_assume!(normalized_area(&g) > 0.05);
            let fix = trilaterate(&g, &exact(&g, p)).unwrap();
            prop_assert!((fix.x - p.0).abs() < 1e-6 && (fix.y - p.1).abs() < 1e-6);
            prop_assert!(fix.residual_rms < 1e-9);
        }

        #[test]
        fn translation_and_rotation_equivariance(
            g in prop::collection::vec((coord(), coord()), 3..5),
            noise in prop::collection::vec(0.0..20.0f64, 5),
            t in (coord(), coord()),
            theta in 0.0..std::f64::consts::TAU,
        ) {
            prop_assume!(normalized_area(&g) > 0.05);
            let d: Vec<f64> = exact(&g, (30.0, -20.0)).iter().zip(&noise).map(|(d, e)| d + e).collect();
            let base = trilaterate(&g, &d).unwrap();
            let shifted: Vec<(f64, f64)> = g.iter().map(|q| (q.0 + t.0, q.1 + t.1)).collect();
            let moved = trilaterate(&shifted, &d).unwrap();
            prop_assert!((moved.x - base.x - t.0).abs() < 1e-9 && (moved.y - base.y - t.1).abs() < 1e-9);
            let (s, c) = theta.sin_cos();
            let rot = |q: (f64, f64)| (c * q.0 - s * q.1, s * q.0 + c * q.1);
            let rotated: Vec<(f64, f64)> = g.iter().map(|q| rot(*q)).collect();
            let spun = trilaterate(&rotated, &d).unwrap();
            let want = rot((base.x, base.y));
            prop_assert!((spun.x - want.0).abs() < 1e-9 && (spun.y - want.1).abs() < 1e-9);
        }
    }
}
