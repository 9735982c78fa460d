//! End-to-end case study: simulate a campaign, hold out test points, train
//! every model kind per gateway, then score ranging and positioning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::dataset::{fuse, random_holdout, split_train_test, DatasetError, Environment, RangingDataset, SitePlan};
use crate::evaluate::{
    emit_report, point_fixes, positioning_accuracy, ranging_rmse, testpoint_profile, write_accuracy_csv,
    write_ranging_csv, AccuracyRow, DNormPolicy, EvaluateError, PointFix, RangingRow, Split, TestPointProfile,
};
use crate::ranging::{fit, FitOptions, ModelKind, RangingModel, TrainReport};
use crate::simulate::{generate_campaign, ScenarioFile, SimulateError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Number of points held out when a scenario names none.
pub const DEFAULT_HOLDOUT: usize = 5;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub kinds: Vec<ModelKind>,
    pub fit: FitOptions,
    pub policy: DNormPolicy,
    /// Replaces the scenario seed when set.
    pub seed: Option<u64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            kinds: ModelKind::TABLE_ORDER.to_vec(),
            fit: FitOptions::default(),
            policy: DNormPolicy::default(),
            seed: None,
        }
    }
}

/// Outcome of fitting one (kind, gateway) cell.
#[derive(Debug, Clone)]
pub struct TrainCell {
    pub kind: ModelKind,
    pub gateway_id: String,
    pub outcome: std::result::Result<TrainReport, String>,
}

#[derive(Debug, Clone)]
pub struct EnvironmentRun {
    pub environment: Environment,
    pub plan: SitePlan,
    pub holdout: BTreeSet<String>,
    pub train: Vec<RangingDataset>,
    pub test: Vec<RangingDataset>,
    pub cells: Vec<TrainCell>,
    /// Positioning accuracy on held-out points, one row per kind.
    pub accuracy: Vec<AccuracyRow>,
    /// The same metric on the training points.
    pub train_accuracy: Vec<AccuracyRow>,
    pub ranging: Vec<RangingRow>,
    /// Held-out fixes per kind.
    pub fixes: BTreeMap<ModelKind, Vec<PointFix>>,
    /// Smoothing-spline ranging errors at the held-out points.
    pub profile: Vec<TestPointProfile>,
}

impl EnvironmentRun {
    /// Trained models of one kind keyed by gateway; `None` if any failed.
    pub fn models(&self, kind: ModelKind) -> Option<BTreeMap<String, RangingModel>> {
        let cells: Vec<&TrainCell> = self.cells.iter().filter(|c| c.kind == kind).collect();
        if cells.is_empty() {
            return None;
        }
        cells
            .into_iter()
            .map(|c| c.outcome.as_ref().ok().map(|r| (c.gateway_id.clone(), r.model.clone())))
            .collect()
    }

    pub fn accuracy_of(&self, kind: ModelKind) -> Option<&AccuracyRow> {
        self.accuracy.iter().find(|r| r.model_kind == kind)
    }

    pub fn rmse(&self, kind: ModelKind, gateway_id: &str, split: Split) -> Option<f64> {
        self.ranging
            .iter()
            .find(|r| r.model_kind == kind && r.gateway_id == gateway_id && r.split == split)
            .map(|r| r.rmse)
    }
}

/// Fits every requested kind on every gateway. Kinds train on separate
/// threads; results come back in request order.
pub fn train_grid(train: &[RangingDataset], kinds: &[ModelKind], opts: &FitOptions) -> Vec<TrainCell> {
    let per_kind: Vec<Vec<TrainCell>> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|kind| {
                s.spawn(move || {
                    train
                        .iter()
                        .map(|ds| TrainCell {
                            kind: *kind,
                            gateway_id: ds.gateway_id.clone(),
                            outcome: fit(*kind, ds, opts).map_err(|e| e.to_string()),
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    per_kind.into_iter().flatten().collect()
}

/// Runs one scenario through simulation, training and evaluation.
pub fn run_scenario(sf: &ScenarioFile, opts: &PipelineOptions) -> Result<EnvironmentRun> {
    let mut scenario = sf.scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    let plan = scenario.plan.clone();
    let (raw, map) = generate_campaign(&scenario)?;
    let datasets = fuse(&raw, &plan, &map)?;
    let holdout = if sf.holdout.is_empty() {
        let ids: Vec<String> = plan.points.iter().map(|p| p.id.clone()).collect();
        random_holdout(&ids, DEFAULT_HOLDOUT, scenario.seed)
    } else {
        sf.holdout.clone()
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ds in &datasets {
        let (tr, te) = split_train_test(ds, &holdout)?;
        train.push(tr);
        test.push(te);
    }

    let cells = train_grid(&train, &opts.kinds, &opts.fit);
    for c in &cells {
        match &c.outcome {
            Ok(r) => log::debug!(
                "{} {} {}: rmse {:.3} m ({}, {:.3}s)",
                plan.environment,
                c.kind,
                c.gateway_id,
                r.model.train_rmse,
                r.solver_status.as_str(),
                r.wall_time
            ),
            Err(e) => log::warn!("{} {} {}: {e}", plan.environment, c.kind, c.gateway_id),
        }
    }

    let mut run = EnvironmentRun {
        environment: plan.environment,
        plan,
        holdout,
        train,
        test,
        cells,
        accuracy: Vec::new(),
        train_accuracy: Vec::new(),
        ranging: Vec::new(),
        fixes: BTreeMap::new(),
        profile: Vec::new(),
    };
    for kind in &opts.kinds {
        let Some(models) = run.models(*kind) else { continue };
        for (split, sets) in [(Split::Train, &run.train), (Split::Test, &run.test)] {
            for ds in sets.iter().filter(|ds| !ds.is_empty()) {
                run.ranging.push(RangingRow {
                    environment: run.environment,
                    model_kind: *kind,
                    gateway_id: ds.gateway_id.clone(),
                    split,
                    rmse: ranging_rmse(&models[&ds.gateway_id], ds)?,
                });
            }
        }
        run.accuracy
            .push(positioning_accuracy(&models, &run.plan, &run.test, opts.policy)?);
        run.train_accuracy
            .push(positioning_accuracy(&models, &run.plan, &run.train, opts.policy)?);
        run.fixes
            .insert(*kind, point_fixes(&models, &run.plan, &run.test, opts.policy)?);
        if *kind == ModelKind::SmoothingSpline {
            run.profile = testpoint_profile(&models, &run.test, &run.plan)?;
        }
    }
    Ok(run)
}

/// Writes `accuracy.csv`, `accuracy_train.csv`, `ranging_rmse.csv` and a
/// `profile_<env>.csv` per run.
pub fn write_pipeline_report(runs: &[EnvironmentRun], dir: &Path) -> Result<()> {
    let rows: Vec<AccuracyRow> = runs.iter().flat_map(|r| r.accuracy.clone()).collect();
    let profiles: BTreeMap<Environment, Vec<TestPointProfile>> =
        runs.iter().map(|r| (r.environment, r.profile.clone())).collect();
    emit_report(&rows, &profiles, dir)?;

    let train_rows: Vec<AccuracyRow> = runs.iter().flat_map(|r| r.train_accuracy.clone()).collect();
    let mut buf = Vec::new();
    write_accuracy_csv(&train_rows, &mut buf)?;
    std::fs::write(dir.join("accuracy_train.csv"), buf)?;

    let ranging: Vec<RangingRow> = runs.iter().flat_map(|r| r.ranging.clone()).collect();
    let mut buf = Vec::new();
    write_ranging_csv(&ranging, &mut buf)?;
    std::fs::write(dir.join("ranging_rmse.csv"), buf)?;
    Ok(())
}
