//! Ranging errors, per-test-point profiles and the positioning accuracy table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use thiserror::Error;

use crate::dataset::{Environment, RangingDataset, SitePlan};
use crate::position::{position_from_rssi, PositionError};
use crate::ranging::{ModelKind, RangingModel};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no model for gateway {0:?}")]
    MissingGateway(String),
    #[error("point {0:?} is not on the site plan")]
    UnknownPoint(String),
    #[error("no test point has readings from 3 gateways")]
    InsufficientGateways,
    #[error("invalid d_norm policy {0:?} (expected centroid, site_diagonal or fixed:<metres>)")]
    InvalidPolicy(String),
    #[error("report line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Position(#[from] PositionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvaluateError>;

/// Root-mean-square ranging error of a model over a dataset.
pub fn ranging_rmse(m: &RangingModel, ds: &RangingDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(EvaluateError::EmptyDataset);
    }
    let sse: f64 = ds
        .records
        .iter()
        .map(|r| (m.predict(r.rssi) - r.distance).powi(2))
        .sum();
    Ok((sse / ds.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestPointProfile {
    pub point_id: String,
    pub per_gateway_error: BTreeMap<String, f64>,
}

/// Points present in any dataset, in site-plan order.
fn points_in(plan: &SitePlan, data: &[RangingDataset]) -> Result<Vec<String>> {
    for ds in data {
        for r in &ds.records {
            if plan.point(&r.point_id).is_none() {
                return Err(EvaluateError::UnknownPoint(r.point_id.clone()));
            }
        }
    }
    Ok(plan
        .points
        .iter()
        .filter(|p| data.iter().any(|ds| ds.records.iter().any(|r| r.point_id == p.id)))
        .map(|p| p.id.clone())
        .collect())
}

/// Absolute ranging error of the mean reading at each test point, per gateway.
pub fn testpoint_profile(
    models: &BTreeMap<String, RangingModel>,
    test: &[RangingDataset],
    plan: &SitePlan,
) -> Result<Vec<TestPointProfile>> {
    for ds in test.iter().filter(|ds| !ds.is_empty()) {
        if !models.contains_key(&ds.gateway_id) || plan.gateway(&ds.gateway_id).is_none() {
            return Err(EvaluateError::MissingGateway(ds.gateway_id.clone()));
        }
    }
    let mut out = Vec::new();
    for point in points_in(plan, test)? {
        let mut per_gateway_error = BTreeMap::new();
        for ds in test {
            let Some(mean) = ds.mean_rssi_at(&point) else { continue };
            let truth = plan
                .distance(&ds.gateway_id, &point)
                .map_err(|_| EvaluateError::MissingGateway(ds.gateway_id.clone()))?;
            per_gateway_error.insert(
                ds.gateway_id.clone(),
                (models[&ds.gateway_id].predict(mean) - truth).abs(),
            );
        }
        out.push(TestPointProfile {
            point_id: point,
            per_gateway_error,
        });
    }
    Ok(out)
}

/// Reference length that turns a positioning error into a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DNormPolicy {
    /// Distance from the true point to the gateway centroid.
    #[default]
    Centroid,
    /// Diagonal of the site bounding box.
    SiteDiagonal,
    Fixed(f64),
}

impl fmt::Display for DNormPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DNormPolicy::Centroid => f.write_str("centroid"),
            DNormPolicy::SiteDiagonal => f.write_str("site_diagonal"),
            DNormPolicy::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for DNormPolicy {
    type Err = EvaluateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(DNormPolicy::Centroid),
            "site_diagonal" => Ok(DNormPolicy::SiteDiagonal),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(DNormPolicy::Fixed)
                .ok_or_else(|| EvaluateError::InvalidPolicy(s.to_string())),
        }
    }
}

impl DNormPolicy {
    fn reference(&self, plan: &SitePlan, point: (f64, f64)) -> f64 {
        match self {
            DNormPolicy::Centroid => {
                let (cx, cy) = plan.gateway_centroid();
                (point.0 - cx).hypot(point.1 - cy)
            }
            DNormPolicy::SiteDiagonal => {
                let (x0, y0, x1, y1) = plan.bounding_box();
                (x1 - x0).hypot(y1 - y0)
            }
            DNormPolicy::Fixed(v) => *v,
        }
    }
}

/// `100·max(0, 1 − error/reference)`.
pub fn percent_accuracy(error: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        100.0 * (1.0 - error / reference).max(0.0)
    } else if error == 0.0 {
        100.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub environment: Environment,
    pub model_kind: ModelKind,
    pub mean_error: f64,
    pub percent_accuracy: f64,
}

/// Positioning outcome at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFix {
    pub point_id: String,
    pub x: f64,
    pub y: f64,
    pub error: f64,
    pub reference: f64,
}

/// Trilaterates every point that has readings from three or more gateways.
pub fn point_fixes(
    models: &BTreeMap<String, RangingModel>,
    plan: &SitePlan,
    data: &[RangingDataset],
    policy: DNormPolicy,
) -> Result<Vec<PointFix>> {
    let mut out = Vec::new();
    for point in points_in(plan, data)? {
        let readings: BTreeMap<String, Vec<f64>> = data
            .iter()
            .map(|ds| {
                let v = ds
                    .records
                    .iter()
                    .filter(|r| r.point_id == point)
                    .map(|r| r.rssi)
                    .collect();
                (ds.gateway_id.clone(), v)
            })
            .collect();
        let fix = match position_from_rssi(models, plan, &readings) {
            Ok(fix) => fix,
            Err(PositionError::InsufficientGateways { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let truth = plan.point(&point).expect("checked by points_in");
        out.push(PointFix {
            error: (fix.x - truth.x).hypot(fix.y - truth.y),
            reference: policy.reference(plan, (truth.x, truth.y)),
            point_id: point,
            x: fix.x,
            y: fix.y,
        });
    }
    Ok(out)
}

/// One accuracy-table row: mean Euclidean error and mean percent accuracy.
pub fn positioning_accuracy(
    models: &BTreeMap<String, RangingModel>,
    plan: &SitePlan,
    test: &[RangingDataset],
    policy: DNormPolicy,
) -> Result<AccuracyRow> {
    let kind = models.values().next().ok_or(EvaluateError::InsufficientGateways)?.kind;
    let fixes = point_fixes(models, plan, test, policy)?;
    if fixes.is_empty() {
        return Err(EvaluateError::InsufficientGateways);
    }
    let n = fixes.len() as f64;
    Ok(AccuracyRow {
        environment: plan.environment,
        model_kind: kind,
        mean_error: fixes.iter().map(|f| f.error).sum::<f64>() / n,
        percent_accuracy: fixes
            .iter()
            .map(|f| percent_accuracy(f.error, f.reference))
            .sum::<f64>()
            / n,
    })
}

/// Per-gateway ranging RMSE on the training or held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingRow {
    pub environment: Environment,
    pub model_kind: ModelKind,
    pub gateway_id: String,
    pub split: Split,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub const ACCURACY_HEADER: [&str; 4] = ["environment", "model", "kind_mean_error_m", "percent_accuracy"];
pub const PROFILE_HEADER: [&str; 3] = ["point_id", "gateway_id", "error_m"];
pub const RANGING_HEADER: [&str; 5] = ["environment", "model", "gateway_id", "split", "rmse_m"];

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

fn csv_io(e: csv::Error) -> EvaluateError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => EvaluateError::Io(io),
        other => EvaluateError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn sorted_rows(rows: &[AccuracyRow]) -> Vec<&AccuracyRow> {
    let mut sorted: Vec<&AccuracyRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.environment, r.model_kind.table_position()));
    sorted
}

/// Writes accuracy rows ordered by environment, then table order.
pub fn write_accuracy_csv<W: Write>(rows: &[AccuracyRow], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(ACCURACY_HEADER).map_err(csv_io)?;
    for r in sorted_rows(rows) {
        out.write_record([
            r.environment.as_str().to_string(),
            r.model_kind.as_str().to_string(),
            r.mean_error.to_string(),
            r.percent_accuracy.to_string(),
        ])
        .map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(profiles: &[TestPointProfile], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(PROFILE_HEADER).map_err(csv_io)?;
    for p in profiles {
        for (gw, err) in &p.per_gateway_error {
            out.write_record([p.point_id.as_str(), gw.as_str(), &err.to_string()])
                .map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_ranging_csv<W: Write>(rows: &[RangingRow], w: W) -> Result<()> {
    let mut sorted: Vec<&RangingRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.environment, a.model_kind.table_position(), &a.gateway_id, a.split).cmp(&(
            b.environment,
            b.model_kind.table_position(),
            &b.gateway_id,
            b.split,
        ))
    });
    let mut out = csv_writer(w);
    out.write_record(RANGING_HEADER).map_err(csv_io)?;
    for r in sorted {
        out.write_record([
            r.environment.as_str(),
            r.model_kind.as_str(),
            r.gateway_id.as_str(),
            r.split.as_str(),
            &r.rmse.to_string(),
        ])
        .map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `accuracy.csv` plus one `profile_<env>.csv` per environment.
pub fn emit_report(
    rows: &[AccuracyRow],
    profiles: &BTreeMap<Environment, Vec<TestPointProfile>>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_accuracy_csv(rows, &mut buf)?;
    std::fs::write(dir.join("accuracy.csv"), buf)?;
    for (env, list) in profiles {
        let mut buf = Vec::new();
        write_profile_csv(list, &mut buf)?;
        std::fs::write(dir.join(format!("profile_{env}.csv")), buf)?;
    }
    Ok(())
}

/// Reads rows written by [`write_accuracy_csv`].
pub fn parse_accuracy_csv(text: &str) -> Result<Vec<AccuracyRow>> {
    let mut rdr = ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let perr = |line: u64, message: String| EvaluateError::Parse { line, message };
    let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if header.iter().ne(ACCURACY_HEADER) {
        return Err(perr(1, format!("expected header {}", ACCURACY_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| perr(line, format!("missing column {}", ACCURACY_HEADER[i])))
        };
        let number = |i: usize| -> Result<f64> {
            let v = field(i)?;
            v.parse().map_err(|_| perr(line, format!("{v:?} is not a number")))
        };
        rows.push(AccuracyRow {
            environment: field(0)?
                .parse()
                .map_err(|_| perr(line, "unknown environment".into()))?,
            model_kind: field(1)?.parse().map_err(|_| perr(line, "unknown model kind".into()))?,
            mean_error: number(2)?,
            percent_accuracy: number(3)?,
        });
    }
    Ok(rows)
}
