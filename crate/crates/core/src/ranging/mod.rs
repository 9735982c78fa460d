//! RSSI → distance models.
//!
//! Nine model kinds share one contract: `fit_*` turns a per-gateway
//! [`RangingDataset`] into a [`TrainReport`] holding an immutable
//! [`RangingModel`], and [`predict_distance`] evaluates it. Predictions are
//! always clamped to `[0, clamp_factor · max trained distance]`.

mod boost;
mod io;
mod parametric;
mod spline;
mod svr;
mod tree;

pub use boost::{fit_lsboost, LsBoostParams};
pub use io::{format_model, load_model, parse_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use parametric::{
    fit_exponential, fit_gaussian_sum, fit_linear, fit_path_loss, fit_polynomial3, GaussianTerm, Polynomial3Params,
};
pub use spline::{fit_smoothing_spline, SmoothingSpline, SplineSmoothing};
pub use svr::{fit_svr_linear, SvrLinearParams};
pub use tree::{fit_cart, grow_tree, RegressionTree, TreeNode};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::dataset::RangingDataset;
use crate::numopt::{NumoptError, TrustRegionConfig};

#[derive(Debug, Error)]
pub enum RangingError {
    #[error("{kind} needs at least {needed} training points, got {got}")]
    TooFewPoints { kind: ModelKind, needed: usize, got: usize },
    #[error("{kind} solver failed: {reason}")]
    SolverFailure { kind: ModelKind, reason: String },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("model file line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: String },
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RangingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    PathLoss,
    Linear,
    Polynomial3,
    Exponential,
    GaussianSum,
    SmoothingSpline,
    Cart,
    LsBoost,
    SvrLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::PathLoss,
        ModelKind::Linear,
        ModelKind::Polynomial3,
        ModelKind::Exponential,
        ModelKind::GaussianSum,
        ModelKind::SmoothingSpline,
        ModelKind::Cart,
        ModelKind::LsBoost,
        ModelKind::SvrLinear,
    ];

    /// Row order of the accuracy table: regression models, then learners.
    pub const TABLE_ORDER: [ModelKind; 9] = [
        ModelKind::PathLoss,
        ModelKind::Linear,
        ModelKind::Polynomial3,
        ModelKind::Exponential,
        ModelKind::GaussianSum,
        ModelKind::SmoothingSpline,
        ModelKind::SvrLinear,
        ModelKind::Cart,
        ModelKind::LsBoost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PathLoss => "path_loss",
            ModelKind::Linear => "linear",
            ModelKind::Polynomial3 => "polynomial3",
            ModelKind::Exponential => "exponential",
            ModelKind::GaussianSum => "gaussian_sum",
            ModelKind::SmoothingSpline => "smoothing_spline",
            ModelKind::Cart => "cart",
            ModelKind::LsBoost => "lsboost",
            ModelKind::SvrLinear => "svr_linear",
        }
    }

    pub fn table_position(self) -> usize {
        Self::TABLE_ORDER.iter().position(|k| *k == self).unwrap_or(usize::MAX)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = RangingError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| RangingError::UnknownKind(s.to_string()))
    }
}

/// Kind-specific coefficients of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    /// `rssi = intercept + slope·log10(d)`, inverted for prediction.
    PathLoss {
        intercept: f64,
        slope: f64,
    },
    /// `d = intercept + slope·rssi`.
    Linear {
        intercept: f64,
        slope: f64,
    },
    Polynomial3(Polynomial3Params),
    /// `d = a·exp(b·rssi)`.
    Exponential {
        a: f64,
        b: f64,
    },
    GaussianSum(Vec<GaussianTerm>),
    SmoothingSpline(SmoothingSpline),
    Cart(RegressionTree),
    LsBoost(LsBoostParams),
    SvrLinear(SvrLinearParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::PathLoss { .. } => ModelKind::PathLoss,
            ModelParams::Linear { .. } => ModelKind::Linear,
            ModelParams::Polynomial3(_) => ModelKind::Polynomial3,
            ModelParams::Exponential { .. } => ModelKind::Exponential,
            ModelParams::GaussianSum(_) => ModelKind::GaussianSum,
            ModelParams::SmoothingSpline(_) => ModelKind::SmoothingSpline,
            ModelParams::Cart(_) => ModelKind::Cart,
            ModelParams::LsBoost(_) => ModelKind::LsBoost,
            ModelParams::SvrLinear(_) => ModelKind::SvrLinear,
        }
    }

    /// Unclamped model output.
    pub fn evaluate(&self, rssi: f64) -> f64 {
        match self {
            ModelParams::PathLoss { intercept, slope } => 10f64.powf((rssi - intercept) / slope),
            ModelParams::Linear { intercept, slope } => intercept + slope * rssi,
            ModelParams::Polynomial3(p) => p.evaluate(rssi),
            ModelParams::Exponential { a, b } => a * (b * rssi).exp(),
            ModelParams::GaussianSum(terms) => terms.iter().map(|t| t.evaluate(rssi)).sum(),
            ModelParams::SmoothingSpline(s) => s.evaluate(rssi),
            ModelParams::Cart(t) => t.predict(rssi),
            ModelParams::LsBoost(b) => b.predict(rssi),
            ModelParams::SvrLinear(s) => s.predict(rssi),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            ModelParams::PathLoss { intercept, slope } | ModelParams::Linear { intercept, slope } => {
                intercept.is_finite() && slope.is_finite()
            }
            ModelParams::Polynomial3(p) => {
                p.center.is_finite() && p.scale.is_finite() && p.coeffs.iter().all(|c| c.is_finite())
            }
            ModelParams::Exponential { a, b } => a.is_finite() && b.is_finite(),
            ModelParams::GaussianSum(terms) => terms
                .iter()
                .all(|t| t.amplitude.is_finite() && t.centroid.is_finite() && t.width.is_finite()),
            ModelParams::SmoothingSpline(s) => s.is_finite(),
            ModelParams::Cart(t) => t.is_finite(),
            ModelParams::LsBoost(b) => {
                b.base.is_finite() && b.learn_rate.is_finite() && b.trees.iter().all(|t| t.is_finite())
            }
            ModelParams::SvrLinear(s) => [s.center, s.scale, s.weight, s.bias, s.c, s.epsilon]
                .iter()
                .all(|v| v.is_finite()),
        }
    }
}

/// A trained RSSI → distance function for one gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingModel {
    pub kind: ModelKind,
    pub gateway_id: String,
    pub params: ModelParams,
    pub train_rmse: f64,
    /// Smallest and largest training distance (m).
    pub train_range: (f64, f64),
    pub clamp_factor: f64,
}

impl RangingModel {
    pub fn upper_clamp(&self) -> f64 {
        self.clamp_factor * self.train_range.1
    }

    /// Clamped prediction; callers guarantee a finite `rssi`.
    pub fn predict(&self, rssi: f64) -> f64 {
        let raw = self.params.evaluate(rssi);
        if raw.is_nan() {
            return 0.0;
        }
        raw.clamp(0.0, self.upper_clamp())
    }
}

/// Distance estimate for one RSSI reading.
pub fn predict_distance(model: &RangingModel, rssi: f64) -> Result<f64> {
    if !rssi.is_finite() {
        return Err(RangingError::NonFinite("rssi"));
    }
    Ok(model.predict(rssi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    /// Closed-form or direct solve.
    Exact,
    Converged,
    /// Iteration budget hit; the best iterate was kept.
    MaxIterations,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Exact => "exact",
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: RangingModel,
    pub n_train: usize,
    pub solver_status: SolverStatus,
    /// Seconds spent fitting.
    pub wall_time: f64,
}

/// Knobs shared by the `fit_*` functions. Defaults follow the documented
/// model settings (30 boosting stages, 2 Gaussian terms, GCV spline, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub clamp_factor: f64,
    /// Refine the path-loss fit by minimizing distance-domain SSE.
    pub path_loss_refine: bool,
    pub gaussian_terms: usize,
    pub spline: SplineSmoothing,
    pub cart_min_leaf: usize,
    pub cart_max_depth: usize,
    pub cart_prune: bool,
    pub cart_folds: usize,
    pub boost_learners: usize,
    pub boost_learn_rate: f64,
    pub boost_depth: usize,
    pub svr_c: f64,
    /// `None` selects `0.1 · std(distance)`.
    pub svr_epsilon: Option<f64>,
    pub trust_region: TrustRegionConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            clamp_factor: 2.0,
            path_loss_refine: false,
            gaussian_terms: 2,
            spline: SplineSmoothing::Auto,
            cart_min_leaf: 5,
            cart_max_depth: 12,
            cart_prune: true,
            cart_folds: 5,
            boost_learners: 30,
            boost_learn_rate: 0.1,
            boost_depth: 3,
            svr_c: 1.0,
            svr_epsilon: None,
            trust_region: TrustRegionConfig::default(),
        }
    }
}

/// Trains any kind with the given options.
pub fn fit(kind: ModelKind, train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    match kind {
        ModelKind::PathLoss => fit_path_loss(train, opts),
        ModelKind::Linear => fit_linear(train, opts),
        ModelKind::Polynomial3 => fit_polynomial3(train, opts),
        ModelKind::Exponential => fit_exponential(train, opts),
        ModelKind::GaussianSum => fit_gaussian_sum(train, opts),
        ModelKind::SmoothingSpline => fit_smoothing_spline(train, opts),
        ModelKind::Cart => fit_cart(train, opts),
        ModelKind::LsBoost => fit_lsboost(train, opts),
        ModelKind::SvrLinear => fit_svr_linear(train, opts),
    }
}

/// Root-mean-square error of clamped predictions over a dataset.
pub(crate) fn rmse(model: &RangingModel, ds: &RangingDataset) -> f64 {
    let sse: f64 = ds
        .records
        .iter()
        .map(|r| {
            let e = model.predict(r.rssi) - r.distance;
            e * e
        })
        .sum();
    (sse / ds.len() as f64).sqrt()
}

fn check_training_set(kind: ModelKind, train: &RangingDataset, needed: usize) -> Result<()> {
    if train.len() < needed.max(1) {
        return Err(RangingError::TooFewPoints {
            kind,
            needed: needed.max(1),
            got: train.len(),
        });
    }
    for r in &train.records {
        if !r.rssi.is_finite() || !r.distance.is_finite() {
            return Err(RangingError::NonFinite("training record"));
        }
    }
    Ok(())
}

fn solver_failure(kind: ModelKind, err: impl fmt::Display) -> RangingError {
    RangingError::SolverFailure {
        kind,
        reason: err.to_string(),
    }
}

impl From<(ModelKind, NumoptError)> for RangingError {
    fn from((kind, err): (ModelKind, NumoptError)) -> Self {
        solver_failure(kind, err)
    }
}

/// Wraps fitted parameters into a report, computing the training RMSE.
fn finish(
    train: &RangingDataset,
    params: ModelParams,
    opts: &FitOptions,
    status: SolverStatus,
    started: Instant,
) -> Result<TrainReport> {
    let kind = params.kind();
    if !params.all_finite() {
        return Err(solver_failure(kind, "non-finite parameters"));
    }
    let train_range = train
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.distance), hi.max(r.distance))
        });
    let mut model = RangingModel {
        kind,
        gateway_id: train.gateway_id.clone(),
        params,
        train_rmse: 0.0,
        train_range,
        clamp_factor: opts.clamp_factor,
    };
    model.train_rmse = rmse(&model, train);
    Ok(TrainReport {
        model,
        n_train: train.len(),
        solver_status: status,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// `(rssi, distance)` columns of a dataset.
fn columns(train: &RangingDataset) -> (Vec<f64>, Vec<f64>) {
    (train.rssi(), train.distances())
}
