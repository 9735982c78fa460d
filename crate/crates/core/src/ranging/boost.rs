use std::time::Instant;

use super::tree::grow_tree;
use super::{
    check_training_set, finish, solver_failure, FitOptions, ModelKind, ModelParams, RegressionTree, Result,
    SolverStatus, TrainReport,
};
use crate::dataset::RangingDataset;

/// Stagewise least-squares boosted trees.
#[derive(Debug, Clone, PartialEq)]
pub struct LsBoostParams {
    pub base: f64,
    pub learn_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl LsBoostParams {
    pub fn predict(&self, x: f64) -> f64 {
        self.predict_partial(x, self.trees.len())
    }

    /// Prediction of the first `stages` learners.
    pub fn predict_partial(&self, x: f64, stages: usize) -> f64 {
        self.base + self.learn_rate * self.trees.iter().take(stages).map(|t| t.predict(x)).sum::<f64>()
    }
}

pub fn fit_lsboost(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    let kind = ModelKind::LsBoost;
    check_training_set(kind, train, 1)?;
    if !(opts.boost_learn_rate > 0.0 && opts.boost_learn_rate <= 1.0) {
        return Err(solver_failure(kind, "learning rate must lie in (0, 1]"));
    }
    let x = train.rssi();
    let y = train.distances();
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut fitted = vec![base; y.len()];
    let mut trees = Vec::with_capacity(opts.boost_learners);
    for _ in 0..opts.boost_learners {
        let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(t, f)| t - f).collect();
        let tree = grow_tree(&x, &residuals, opts.cart_min_leaf, opts.boost_depth);
        for (f, xi) in fitted.iter_mut().zip(&x) {
            *f += opts.boost_learn_rate * tree.predict(*xi);
        }
        trees.push(tree);
    }
    let params = LsBoostParams {
        base,
        learn_rate: opts.boost_learn_rate,
        trees,
    };
    finish(train, ModelParams::LsBoost(params), opts, SolverStatus::Exact, started)
}
