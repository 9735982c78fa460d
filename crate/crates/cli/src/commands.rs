use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lpskit_core::dataset::{
    fuse, infer_point_of_msg, load_dataset, load_raw_log, load_site_plan, summarize, write_dataset, write_raw_log,
    write_site_plan, RssiWindow,
};
use lpskit_core::evaluate::{emit_report, positioning_accuracy, ranging_rmse, testpoint_profile};
use lpskit_core::pipeline::{run_scenario, train_grid, write_pipeline_report, PipelineOptions};
use lpskit_core::position::{position_from_rssi, PositionError};
use lpskit_core::ranging::{load_model, save_model, SplineSmoothing};
use lpskit_core::simulate::{generate_campaign, parse_scenario, preset, preset_names};
use lpskit_core::{DNormPolicy, FitOptions, ModelKind, RangingDataset, RangingModel, ScenarioFile, SitePlan};

use crate::args::{
    Command, FitArgs, PipelineArgs, PositionArgs, RangeArgs, ReportArgs, SimulateArgs, SourceArgs, TrainArgs,
};
use crate::error::{CliError, Result};

const RAW_LOG: &str = "raw_log.csv";
const SITE_PLAN: &str = "site_plan.csv";
const TRAIN_REPORT: &str = "train_report.csv";
const MODEL_EXT: &str = "model";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Range(a) => range(a),
        Command::Position(a) => position(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn load_preset(name: &str) -> Result<ScenarioFile> {
    match preset(name) {
        Some(sf) => sf.map_err(|e| CliError::runtime(format!("preset {name}: {e}"))),
        None => Err(CliError::usage(format!(
            "unknown preset {name:?} (available: {})",
            preset_names().join(", ")
        ))),
    }
}

fn load_scenario_file(path: &Path) -> Result<ScenarioFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read scenario file {}: {e}", path.display())))?;
    parse_scenario(&text, path.parent()).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// The scenarios named on the command line; `None` when neither flag is set.
fn scenario_source(src: &SourceArgs) -> Result<Option<ScenarioFile>> {
    let mut sf = match (&src.scenario, &src.preset) {
        (Some(path), _) => load_scenario_file(path)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) => return Ok(None),
    };
    if let Some(seed) = src.seed {
        sf.scenario.seed = seed;
    }
    Ok(Some(sf))
}

fn parse_kinds(list: &[String]) -> Result<Vec<ModelKind>> {
    if list.is_empty() {
        return Ok(ModelKind::TABLE_ORDER.to_vec());
    }
    let mut kinds = Vec::new();
    for name in list.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let kind: ModelKind = name.parse().map_err(|_| {
            let names: Vec<&str> = ModelKind::TABLE_ORDER.iter().map(|k| k.as_str()).collect();
            CliError::usage(format!(
                "unknown model kind {name:?} (expected one of {})",
                names.join(", ")
            ))
        })?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::usage("--kinds names no model kind"));
    }
    Ok(kinds)
}

fn fit_options(a: &FitArgs) -> Result<FitOptions> {
    let mut opts = FitOptions::default();
    if let Some(c) = a.clamp_factor {
        if !(c.is_finite() && c > 0.0) {
            return Err(CliError::usage("--clamp-factor must be positive"));
        }
        opts.clamp_factor = c;
    }
    if let Some(c) = a.svr_c {
        if !(c.is_finite() && c > 0.0) {
            return Err(CliError::usage("--svr-c must be positive"));
        }
        opts.svr_c = c;
    }
    if let Some(eps) = a.svr_eps {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(CliError::usage("--svr-eps must be non-negative"));
        }
        opts.svr_epsilon = Some(eps);
    }
    if let Some(p) = a.spline_p {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::usage("--spline-p must lie in [0, 1]"));
        }
        opts.spline = SplineSmoothing::Fixed(p);
    }
    if let Some(m) = a.learners {
        opts.boost_learners = m;
    }
    Ok(opts)
}

fn parse_policy(s: &str) -> Result<DNormPolicy> {
    s.parse().map_err(CliError::usage)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} is not a directory", path.display())))
    }
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    fs::write(tmp.path(), contents)?;
    tmp.persist(path).map_err(|e| CliError::runtime(e.error))?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let sf = scenario_source(&a.source)?.ok_or_else(|| CliError::usage("simulate needs --scenario or --preset"))?;
    let sc = &sf.scenario;
    let (raw, map) = generate_campaign(sc).map_err(CliError::runtime)?;
    let datasets = fuse(&raw, &sc.plan, &map).map_err(CliError::runtime)?;

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    write_raw_log(&raw, &mut buf).map_err(CliError::runtime)?;
    files.push((a.out.join(RAW_LOG), buf));
    let mut buf = Vec::new();
    write_site_plan(&sc.plan, &mut buf).map_err(CliError::runtime)?;
    files.push((a.out.join(SITE_PLAN), buf));
    for ds in &datasets {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).map_err(CliError::runtime)?;
        files.push((a.out.join(format!("dataset_{}.csv", ds.gateway_id)), buf));
    }
    for (path, contents) in &files {
        write_atomic(path, contents)?;
    }

    println!("gateway,n_records,n_points,mean_rssi_dbm,min_distance_m,max_distance_m");
    for ds in &datasets {
        let s = summarize(ds).map_err(CliError::runtime)?;
        println!(
            "{},{},{},{:.2},{:.2},{:.2}",
            ds.gateway_id, s.n_records, s.n_points, s.mean_rssi, s.min_distance, s.max_distance
        );
    }
    Ok(())
}

/// Fused datasets of a directory, plus its site plan when one is present.
///
/// `dataset_<gateway>.csv` files win; otherwise a raw log is fused against
/// the site plan, with message ids of the form `<point>:<sample>`.
fn load_data_dir(dir: &Path) -> Result<(Vec<RangingDataset>, Option<SitePlan>)> {
    require_dir(dir, "data directory")?;
    let plan_path = dir.join(SITE_PLAN);
    let plan = if plan_path.is_file() {
        Some(load_site_plan(&plan_path).map_err(CliError::runtime)?)
    } else {
        None
    };

    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("dataset_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    let mut datasets = Vec::with_capacity(paths.len());
    for p in &paths {
        datasets.push(load_dataset(p).map_err(CliError::runtime)?);
    }

    if datasets.is_empty() {
        let raw_path = dir.join(RAW_LOG);
        let plan = plan.as_ref().filter(|_| raw_path.is_file()).ok_or_else(|| {
            CliError::usage(format!(
                "{} holds neither dataset_<gateway>.csv files nor {RAW_LOG} + {SITE_PLAN}",
                dir.display()
            ))
        })?;
        let raw = load_raw_log(&raw_path, RssiWindow::default()).map_err(CliError::runtime)?;
        datasets = fuse(&raw, plan, &infer_point_of_msg(&raw, ':')).map_err(CliError::runtime)?;
    } else if let Some(plan) = &plan {
        datasets.sort_by_key(|ds| {
            plan.gateways
                .iter()
                .position(|g| g.id == ds.gateway_id)
                .unwrap_or(usize::MAX)
        });
    }
    Ok((datasets, plan))
}

fn model_file_name(kind: ModelKind, gateway_id: &str) -> String {
    format!("{kind}_{gateway_id}.{MODEL_EXT}")
}

fn train(a: TrainArgs) -> Result<()> {
    let kinds = parse_kinds(&a.fit.kinds)?;
    let opts = fit_options(&a.fit)?;
    let (datasets, _) = load_data_dir(&a.data_dir)?;
    if let Some(ds) = datasets.iter().find(|ds| ds.is_empty()) {
        return Err(CliError::runtime(format!(
            "dataset for gateway {:?} is empty",
            ds.gateway_id
        )));
    }

    let cells = train_grid(&datasets, &kinds, &opts);
    let mut report = String::from("model,gateway_id,status,n_train,train_rmse_m,message\n");
    let mut files: Vec<(String, RangingModel)> = Vec::new();
    for c in &cells {
        match &c.outcome {
            Ok(r) => {
                log::info!(
                    "{} {}: rmse {:.3} m in {:.3}s",
                    c.kind,
                    c.gateway_id,
                    r.model.train_rmse,
                    r.wall_time
                );
                let _ = writeln!(
                    report,
                    "{},{},{},{},{},",
                    c.kind,
                    c.gateway_id,
                    r.solver_status.as_str(),
                    r.n_train,
                    r.model.train_rmse
                );
                files.push((model_file_name(c.kind, &c.gateway_id), r.model.clone()));
            }
            Err(e) => {
                log::warn!("{} {}: {e}", c.kind, c.gateway_id);
                let _ = writeln!(
                    report,
                    "{},{},failed,,,\"{}\"",
                    c.kind,
                    c.gateway_id,
                    e.replace('"', "'")
                );
            }
        }
    }

    // stage everything, then move it into place
    fs::create_dir_all(&a.out)?;
    let stage = tempfile::Builder::new().prefix(".lpskit-train").tempdir_in(&a.out)?;
    for (name, model) in &files {
        save_model(model, &stage.path().join(name)).map_err(CliError::runtime)?;
    }
    fs::write(stage.path().join(TRAIN_REPORT), &report)?;
    for (name, _) in &files {
        fs::rename(stage.path().join(name), a.out.join(name))?;
    }
    fs::rename(stage.path().join(TRAIN_REPORT), a.out.join(TRAIN_REPORT))?;

    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    println!(
        "trained {} of {} models into {}",
        files.len(),
        cells.len(),
        a.out.display()
    );
    if failed > 0 {
        println!("{failed} failed; see {TRAIN_REPORT}");
    }
    Ok(())
}

/// Every model file in `dir` whose kind is in `kinds`.
fn load_models(dir: &Path, kinds: &[ModelKind]) -> Result<Vec<RangingModel>> {
    require_dir(dir, "model directory")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == MODEL_EXT))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let m = load_model(&p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?;
        if kinds.contains(&m.kind) {
            out.push(m);
        }
    }
    Ok(out)
}

fn by_kind(models: Vec<RangingModel>) -> BTreeMap<ModelKind, BTreeMap<String, RangingModel>> {
    let mut out: BTreeMap<ModelKind, BTreeMap<String, RangingModel>> = BTreeMap::new();
    for m in models {
        out.entry(m.kind).or_default().insert(m.gateway_id.clone(), m);
    }
    out
}

fn range(a: RangeArgs) -> Result<()> {
    let kinds = parse_kinds(&a.kinds)?;
    let models = by_kind(load_models(&a.models, &kinds)?);
    let (datasets, _) = load_data_dir(&a.data_dir)?;
    let mut out = String::from("model,gateway_id,n_records,rmse_m\n");
    for kind in ModelKind::TABLE_ORDER.iter().filter(|k| models.contains_key(k)) {
        for ds in &datasets {
            let Some(m) = models[kind].get(&ds.gateway_id) else {
                continue;
            };
            let rmse = ranging_rmse(m, ds).map_err(CliError::runtime)?;
            let _ = writeln!(out, "{kind},{},{},{rmse}", ds.gateway_id, ds.len());
        }
    }
    write_atomic(&a.out, out.as_bytes())
}

/// Splits a readings file into queries. Blank lines separate queries;
/// every query maps gateway ids to their readings.
pub fn parse_readings(text: &str) -> Result<Vec<BTreeMap<String, Vec<f64>>>> {
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "gateway_id,rssi_dbm" => {}
        _ => return Err(CliError::runtime("readings: expected header gateway_id,rssi_dbm")),
    }
    let mut queries = Vec::new();
    let mut current: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                queries.push(std::mem::take(&mut current));
            }
            continue;
        }
        let bad = |msg: &str| CliError::runtime(format!("readings line {}: {msg}", i + 1));
        let (gw, rssi) = line
            .split_once(',')
            .ok_or_else(|| bad("expected gateway_id,rssi_dbm"))?;
        let rssi: f64 = rssi.trim().parse().map_err(|_| bad("rssi is not a number"))?;
        let gw = gw.trim();
        if gw.is_empty() {
            return Err(bad("empty gateway id"));
        }
        current.entry(gw.to_string()).or_default().push(rssi);
    }
    if !current.is_empty() {
        queries.push(current);
    }
    Ok(queries)
}

fn position(a: PositionArgs) -> Result<()> {
    let kinds = parse_kinds(std::slice::from_ref(&a.kinds))?;
    let [kind] = kinds[..] else {
        return Err(CliError::usage("position ranges with exactly one model kind"));
    };
    if !a.site.is_file() {
        return Err(CliError::usage(format!("site plan {} not found", a.site.display())));
    }
    if !a.readings.is_file() {
        return Err(CliError::usage(format!(
            "readings file {} not found",
            a.readings.display()
        )));
    }
    let plan = load_site_plan(&a.site).map_err(CliError::runtime)?;
    let models = by_kind(load_models(&a.models, &[kind])?)
        .remove(&kind)
        .unwrap_or_default();
    if models.is_empty() {
        return Err(CliError::runtime(format!("no {kind} models in {}", a.models.display())));
    }
    let queries = parse_readings(&fs::read_to_string(&a.readings)?)?;

    let mut out = String::from("x_m,y_m,residual_rms,status\n");
    for q in &queries {
        match position_from_rssi(&models, &plan, q) {
            Ok(fix) => {
                let _ = writeln!(out, "{},{},{},{}", fix.x, fix.y, fix.residual_rms, fix.status);
            }
            Err(PositionError::InsufficientGateways { .. }) => out.push_str(",,,insufficient_gateways\n"),
            Err(e) => {
                log::warn!("query skipped: {e}");
                out.push_str(",,,failed\n");
            }
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    println!("{} queries positioned with {kind}", queries.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let kinds = parse_kinds(&a.kinds)?;
    let policy = parse_policy(&a.d_norm_policy)?;
    let models = by_kind(load_models(&a.models, &kinds)?);
    let (datasets, plan) = load_data_dir(&a.data_dir)?;
    let plan = plan.ok_or_else(|| CliError::usage(format!("{} has no {SITE_PLAN}", a.data_dir.display())))?;

    let mut rows = Vec::new();
    for kind in ModelKind::TABLE_ORDER.iter().filter(|k| models.contains_key(k)) {
        rows.push(positioning_accuracy(&models[kind], &plan, &datasets, policy).map_err(CliError::runtime)?);
    }
    if rows.is_empty() {
        return Err(CliError::runtime(format!("no models in {}", a.models.display())));
    }
    let mut profiles = BTreeMap::new();
    if let Some(spline) = models.get(&ModelKind::SmoothingSpline) {
        profiles.insert(
            plan.environment,
            testpoint_profile(spline, &datasets, &plan).map_err(CliError::runtime)?,
        );
    }
    emit_report(&rows, &profiles, &a.out).map_err(CliError::runtime)?;
    print_table(&rows);
    Ok(())
}

fn print_table(rows: &[lpskit_core::AccuracyRow]) {
    println!("{:<8} {:<17} {:>12} {:>10}", "env", "model", "mean_err_m", "accuracy%");
    for r in rows {
        println!(
            "{:<8} {:<17} {:>12.2} {:>10.2}",
            r.environment.as_str(),
            r.model_kind.as_str(),
            r.mean_error,
            r.percent_accuracy
        );
    }
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let kinds = parse_kinds(&a.fit.kinds)?;
    let opts = PipelineOptions {
        kinds,
        fit: fit_options(&a.fit)?,
        policy: parse_policy(&a.d_norm_policy)?,
        seed: a.source.seed,
    };
    let scenarios = match scenario_source(&a.source)? {
        Some(sf) => vec![sf],
        None => preset_names().into_iter().map(load_preset).collect::<Result<_>>()?,
    };
    let mut seen = BTreeSet::new();
    let mut runs = Vec::with_capacity(scenarios.len());
    for sf in &scenarios {
        let run = run_scenario(sf, &opts).map_err(CliError::runtime)?;
        if !seen.insert(run.environment) {
            return Err(CliError::usage(format!(
                "two scenarios share the {} environment",
                run.environment
            )));
        }
        runs.push(run);
    }
    fs::create_dir_all(&a.out)?;
    write_pipeline_report(&runs, &a.out).map_err(CliError::runtime)?;
    let rows: Vec<_> = runs.iter().flat_map(|r| r.accuracy.clone()).collect();
    print_table(&rows);
    Ok(())
}
