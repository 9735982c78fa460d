//! Slow, obviously-correct reference implementations used to check the
//! fast solvers. Shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use lpskit_core::dataset::{FingerprintRecord, RangingDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(gateway: &str, rssi: &[f64], distance: &[f64]) -> RangingDataset {
    let records = rssi
        .iter()
        .zip(distance)
        .enumerate()
        .map(|(i, (r, d))| FingerprintRecord {
            gateway_id: gateway.to_string(),
            point_id: format!("P{i}"),
            rssi: *r,
            distance: *d,
        })
        .collect();
    RangingDataset::new(gateway, records)
}

/// Noisy decaying (rssi, distance) pairs with repeated integer rssi values.
pub fn noisy_ranging_set(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 4.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let d: f64 = r.random_range(5.0..150.0);
        let rssi = (-40.0 - 25.0 * d.log10() + noise.sample(&mut r)).round();
        x.push(rssi);
        y.push(d);
    }
    (x, y)
}

// ---------------------------------------------------------------- SVR dual

/// Minimum of the ε-SVR dual with a linear kernel, by accelerated projected
/// gradient over `(α, α*) ∈ [0, C]^2n` with `Σ(α − α*) = 0`.
pub fn svr_dual_qp(x: &[f64], y: &[f64], c: f64, eps: f64, iters: usize) -> f64 {
    let n = x.len();
    let objective = |v: &[f64]| {
        let w: f64 = (0..n).map(|i| (v[i] - v[n + i]) * x[i]).sum();
        0.5 * w * w
            + (0..n)
                .map(|i| eps * (v[i] + v[n + i]) - y[i] * (v[i] - v[n + i]))
                .sum::<f64>()
    };
    let gradient = |v: &[f64]| {
        let w: f64 = (0..n).map(|i| (v[i] - v[n + i]) * x[i]).sum();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = w * x[i] + eps - y[i];
            g[n + i] = -w * x[i] + eps + y[i];
        }
        g
    };
    // Lipschitz constant of the gradient: 2‖x‖²
    let lip = 2.0 * x.iter().map(|v| v * v).sum::<f64>();
    let step = 1.0 / lip.max(1e-12);

    let mut cur = vec![0.0; 2 * n];
    let mut look = cur.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let g = gradient(&look);
        let raw: Vec<f64> = look.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
        let next = project_svr(&raw, n, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        look = next.iter().zip(&cur).map(|(a, b)| a + mom * (a - b)).collect();
        cur = next;
        t = t_next;
    }
    objective(&cur)
}

/// Euclidean projection onto the box intersected with the balance plane,
/// by bisection on the plane's multiplier.
fn project_svr(v: &[f64], n: usize, c: f64) -> Vec<f64> {
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    let at = |lam: f64| -> Vec<f64> { (0..2 * n).map(|i| (v[i] - lam * sign(i)).clamp(0.0, c)).collect() };
    let balance = |p: &[f64]| (0..n).map(|i| p[i] - p[n + i]).sum::<f64>();
    let span = v.iter().fold(0.0_f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

// ---------------------------------------------------------- spline (dense)

/// Penalized regression solved as one dense KKT system in the knot values
/// `g`, interior second derivatives `γ` and the multipliers of `Qᵀg = Rγ`.
/// Returns `(knots, g, γ with zero ends)`.
pub fn spline_dense(x: &[f64], y: &[f64], p: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut knots: Vec<f64> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    let mut sum: Vec<f64> = Vec::new();
    for (xi, yi) in pairs {
        if knots.last() == Some(&xi) {
            *weight.last_mut().unwrap() += 1.0;
            *sum.last_mut().unwrap() += yi;
        } else {
            knots.push(xi);
            weight.push(1.0);
            sum.push(yi);
        }
    }
    let n = knots.len();
    let mean: Vec<f64> = sum.iter().zip(&weight).map(|(s, w)| s / w).collect();
    let m = n - 2;
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = DMatrix::zeros(n, m);
    let mut r = DMatrix::zeros(m, m);
    for j in 0..m {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < m {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    // unknowns [g (n), γ (m), λ (m)]
    let dim = n + 2 * m;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for i in 0..n {
        a[(i, i)] = 2.0 * p * weight[i];
        b[i] = 2.0 * p * weight[i] * mean[i];
        for j in 0..m {
            a[(i, n + m + j)] = q[(i, j)];
            a[(n + m + j, i)] = q[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..m {
            a[(n + i, n + j)] = 2.0 * (1.0 - p) * r[(i, j)];
            a[(n + i, n + m + j)] = -r[(i, j)];
            a[(n + m + i, n + j)] = -r[(i, j)];
        }
    }
    let sol = a.lu().solve(&b).expect("dense KKT system is nonsingular");
    let g = sol.rows(0, n).iter().copied().collect();
    let mut gamma = vec![0.0; n];
    for j in 0..m {
        gamma[j + 1] = sol[n + j];
    }
    (knots, g, gamma)
}

// ------------------------------------------------------------------- CART

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleNode {
    Split(f64),
    Leaf(f64),
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Greedy regression tree where every node tries every midpoint between
/// distinct sorted inputs and recomputes both child SSEs from scratch.
/// Nodes come back in preorder, left subtree first.
pub fn cart_exhaustive(x: &[f64], y: &[f64], min_leaf: usize, depth: usize) -> Vec<OracleNode> {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    cart_node(&pairs, min_leaf, depth, &mut out);
    out
}

fn cart_node(pairs: &[(f64, f64)], min_leaf: usize, depth: usize, out: &mut Vec<OracleNode>) {
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let parent = sse(&ys);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    if depth > 0 {
        let mut cands: Vec<f64> = pairs
            .windows(2)
            .filter(|w| w[0].0 < w[1].0)
            .map(|w| 0.5 * (w[0].0 + w[1].0))
            .collect();
        cands.dedup();
        for thr in cands {
            let left: Vec<f64> = pairs.iter().filter(|p| p.0 <= thr).map(|p| p.1).collect();
            let right: Vec<f64> = pairs.iter().filter(|p| p.0 > thr).map(|p| p.1).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let gain = parent - sse(&left) - sse(&right);
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, thr));
            }
        }
    }
    match best.filter(|(g, _)| *g > 1e-12 * parent.max(f64::MIN_POSITIVE)) {
        Some((_, thr)) => {
            out.push(OracleNode::Split(thr));
            let k = pairs.partition_point(|p| p.0 <= thr);
            cart_node(&pairs[..k], min_leaf, depth - 1, out);
            cart_node(&pairs[k..], min_leaf, depth - 1, out);
        }
        None => out.push(OracleNode::Leaf(mean)),
    }
}

// ------------------------------------------------------------ exponential

/// Smallest SSE of `d ≈ a·exp(b·r)`. `a` is profiled out in closed form;
/// `b` is scanned on a 1e-3 grid and then polished by golden section.
pub fn exponential_min_sse(r: &[f64], d: &[f64], b_range: (f64, f64)) -> f64 {
    let center = r.iter().sum::<f64>() / r.len() as f64;
    let x: Vec<f64> = r.iter().map(|v| v - center).collect();
    let profile = |b: f64| {
        let e: Vec<f64> = x.iter().map(|xi| (b * xi).exp()).collect();
        let a = e.iter().zip(d).map(|(ei, di)| ei * di).sum::<f64>() / e.iter().map(|ei| ei * ei).sum::<f64>();
        e.iter().zip(d).map(|(ei, di)| (a * ei - di).powi(2)).sum::<f64>()
    };
    let steps = ((b_range.1 - b_range.0) / 1e-3).round() as usize;
    let (mut best_b, mut best) = (b_range.0, f64::INFINITY);
    for k in 0..=steps {
        let b = b_range.0 + k as f64 * 1e-3;
        let s = profile(b);
        if s < best {
            best = s;
            best_b = b;
        }
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (best_b - 1e-3, best_b + 1e-3);
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if profile(m1) < profile(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    profile(0.5 * (lo + hi)).min(best)
}

// ---------------------------------------------------------- trilateration

pub fn trilat_sse(g: &[(f64, f64)], d: &[f64], p: (f64, f64)) -> f64 {
    g.iter()
        .zip(d)
        .map(|(q, di)| ((p.0 - q.0).hypot(p.1 - q.1) - di).powi(2))
        .sum()
}

/// Grid search over the gateways' box padded by the largest range,
/// refined down to a 1 mm lattice around the incumbent.
pub fn trilat_grid(g: &[(f64, f64)], d: &[f64]) -> (f64, f64) {
    let pad = d.iter().fold(0.0_f64, |m, v| m.max(*v));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for q in g {
        x0 = x0.min(q.0 - pad);
        x1 = x1.max(q.0 + pad);
        y0 = y0.min(q.1 - pad);
        y1 = y1.max(q.1 + pad);
    }
    let mut best = (x0, y0);
    let mut step = ((x1 - x0).max(y1 - y0) / 400.0).max(1e-3);
    let (mut lo, mut hi) = ((x0, y0), (x1, y1));
    loop {
        let nx = ((hi.0 - lo.0) / step).ceil() as usize;
        let ny = ((hi.1 - lo.1) / step).ceil() as usize;
        let mut best_v = f64::INFINITY;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = (lo.0 + i as f64 * step, lo.1 + j as f64 * step);
                let v = trilat_sse(g, d, p);
                if v < best_v {
                    best_v = v;
                    best = p;
                }
            }
        }
        if step <= 1e-3 {
            return best;
        }
        lo = (best.0 - 3.0 * step, best.1 - 3.0 * step);
        hi = (best.0 + 3.0 * step, best.1 + 3.0 * step);
        step = (step / 10.0).max(1e-3);
    }
}

// ---------------------------------------------------------------- boosting

/// Evaluates a preorder node list from [`cart_exhaustive`].
pub fn oracle_predict(nodes: &[OracleNode], x: f64) -> f64 {
    fn skip(nodes: &[OracleNode], i: usize) -> usize {
        match nodes[i] {
            OracleNode::Leaf(_) => i + 1,
            OracleNode::Split(_) => skip(nodes, skip(nodes, i + 1)),
        }
    }
    let mut i = 0;
    loop {
        match nodes[i] {
            OracleNode::Leaf(v) => return v,
            OracleNode::Split(thr) => i = if x <= thr { i + 1 } else { skip(nodes, i + 1) },
        }
    }
}

/// Stagewise least-squares boosting composed by hand from oracle trees.
pub fn boost_compose(
    x: &[f64],
    y: &[f64],
    stages: usize,
    rate: f64,
    min_leaf: usize,
    depth: usize,
) -> impl Fn(f64) -> f64 {
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut f = vec![base; y.len()];
    let mut trees = Vec::new();
    for _ in 0..stages {
        let resid: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let t = cart_exhaustive(x, &resid, min_leaf, depth);
        for (fi, xi) in f.iter_mut().zip(x) {
            *fi += rate * oracle_predict(&t, *xi);
        }
        trees.push(t);
    }
    move |q| base + trees.iter().map(|t| rate * oracle_predict(t, q)).sum::<f64>()
}
