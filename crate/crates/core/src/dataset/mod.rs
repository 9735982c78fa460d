//! Fingerprint campaign data: site plans, raw gateway logs and the fused
//! per-gateway `(rssi, distance)` datasets the ranging models train on.
//!
//! Coordinates live in a local planar frame in meters. Ground-truth
//! distances are plain Euclidean distances on that frame.

mod io;

pub use io::{
    load_dataset, load_raw_log, load_site_plan, parse_dataset, parse_raw_log, parse_site_plan, write_dataset,
    write_raw_log, write_site_plan,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("message {0:?} does not map to a known collection point")]
    UnknownPoint(String),
    #[error("unknown gateway {0:?}")]
    UnknownGateway(String),
    #[error("holding out every point leaves no training data")]
    EmptyTrain,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Environment {
    Outdoor,
    Indoor,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Outdoor => "outdoor",
            Environment::Indoor => "indoor",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outdoor" => Ok(Environment::Outdoor),
            "indoor" => Ok(Environment::Indoor),
            other => Err(DatasetError::Validation(format!("unknown environment {other:?}"))),
        }
    }
}

/// A named location on the site plan (gateway or collection point).
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Landmark {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { id: id.into(), x, y }
    }

    pub fn distance_to(&self, other: &Landmark) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SitePlan {
    pub site_id: String,
    pub environment: Environment,
    pub gateways: Vec<Landmark>,
    pub points: Vec<Landmark>,
}

impl SitePlan {
    /// Builds a plan, rejecting duplicate ids and non-finite coordinates.
    pub fn new(
        site_id: impl Into<String>,
        environment: Environment,
        gateways: Vec<Landmark>,
        points: Vec<Landmark>,
    ) -> Result<Self> {
        let plan = Self {
            site_id: site_id.into(),
            environment,
            gateways,
            points,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, list) in [("gateway", &self.gateways), ("point", &self.points)] {
            let mut seen = HashSet::new();
            for lm in list {
                if lm.id.is_empty() {
                    return Err(DatasetError::Validation(format!("empty {what} id")));
                }
                if !seen.insert(lm.id.as_str()) {
                    return Err(DatasetError::Validation(format!("duplicate {what} id {:?}", lm.id)));
                }
                if !lm.x.is_finite() || !lm.y.is_finite() {
                    return Err(DatasetError::Validation(format!(
                        "{what} {:?} has a non-finite coordinate",
                        lm.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn gateway(&self, id: &str) -> Option<&Landmark> {
        self.gateways.iter().find(|g| g.id == id)
    }

    pub fn point(&self, id: &str) -> Option<&Landmark> {
        self.points.iter().find(|p| p.id == id)
    }

    pub fn gateway_ids(&self) -> Vec<String> {
        self.gateways.iter().map(|g| g.id.clone()).collect()
    }

    /// Euclidean distance between a gateway and a collection point.
    pub fn distance(&self, gateway_id: &str, point_id: &str) -> Result<f64> {
        let g = self
            .gateway(gateway_id)
            .ok_or_else(|| DatasetError::UnknownGateway(gateway_id.to_string()))?;
        let p = self
            .point(point_id)
            .ok_or_else(|| DatasetError::UnknownPoint(point_id.to_string()))?;
        Ok(g.distance_to(p))
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of every landmark.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.gateways.iter().chain(&self.points).fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), lm| (a.min(lm.x), b.min(lm.y), c.max(lm.x), d.max(lm.y)),
        )
    }

    pub fn gateway_centroid(&self) -> (f64, f64) {
        let n = self.gateways.len().max(1) as f64;
        let sx: f64 = self.gateways.iter().map(|g| g.x).sum();
        let sy: f64 = self.gateways.iter().map(|g| g.y).sum();
        (sx / n, sy / n)
    }
}

/// Accepted RSSI range for ingested uplinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiWindow {
    pub min_dbm: f64,
    pub max_dbm: f64,
}

impl Default for RssiWindow {
    fn default() -> Self {
        Self {
            min_dbm: -140.0,
            max_dbm: 0.0,
        }
    }
}

impl RssiWindow {
    pub fn contains(&self, rssi: f64) -> bool {
        rssi.is_finite() && rssi >= self.min_dbm && rssi <= self.max_dbm
    }
}

/// One logged reception: which gateway heard which message, and how loud.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUplink {
    pub gateway_id: String,
    pub msg_id: String,
    pub rssi: f64,
}

impl RawUplink {
    pub fn new(gateway_id: impl Into<String>, msg_id: impl Into<String>, rssi: f64) -> Self {
        Self {
            gateway_id: gateway_id.into(),
            msg_id: msg_id.into(),
            rssi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRecord {
    pub gateway_id: String,
    pub point_id: String,
    pub rssi: f64,
    pub distance: f64,
}

/// Training data of a single gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingDataset {
    pub gateway_id: String,
    pub records: Vec<FingerprintRecord>,
}

impl RangingDataset {
    pub fn new(gateway_id: impl Into<String>, records: Vec<FingerprintRecord>) -> Self {
        Self {
            gateway_id: gateway_id.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rssi(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rssi).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.distance).collect()
    }

    /// Distinct point ids in first-seen order.
    pub fn point_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.point_id.as_str()))
            .map(|r| r.point_id.clone())
            .collect()
    }

    /// Mean RSSI of the records collected at `point_id`.
    pub fn mean_rssi_at(&self, point_id: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.point_id == point_id)
            .map(|r| r.rssi)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub n_points: usize,
    pub mean_rssi: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

/// Message id → collection point id.
pub type PointOfMsg = BTreeMap<String, String>;

/// Turns raw receptions into per-gateway fingerprint datasets.
///
/// One dataset is returned for every gateway of the plan, in plan order.
/// Duplicate receptions are kept; record order follows the input.
pub fn fuse(raw: &[RawUplink], plan: &SitePlan, point_of_msg: &PointOfMsg) -> Result<Vec<RangingDataset>> {
    let mut out: Vec<RangingDataset> = plan
        .gateways
        .iter()
        .map(|g| RangingDataset::new(g.id.clone(), Vec::new()))
        .collect();
    for up in raw {
        let point_id = point_of_msg
            .get(&up.msg_id)
            .ok_or_else(|| DatasetError::UnknownPoint(up.msg_id.clone()))?;
        let point = plan
            .point(point_id)
            .ok_or_else(|| DatasetError::UnknownPoint(up.msg_id.clone()))?;
        let idx = plan
            .gateways
            .iter()
            .position(|g| g.id == up.gateway_id)
            .ok_or_else(|| DatasetError::UnknownGateway(up.gateway_id.clone()))?;
        if !up.rssi.is_finite() {
            return Err(DatasetError::Validation(format!("non-finite rssi for {:?}", up.msg_id)));
        }
        let distance = plan.gateways[idx].distance_to(point);
        if !(distance > 0.0) {
            return Err(DatasetError::Validation(format!(
                "point {point_id:?} coincides with gateway {:?}",
                up.gateway_id
            )));
        }
        out[idx].records.push(FingerprintRecord {
            gateway_id: up.gateway_id.clone(),
            point_id: point_id.clone(),
            rssi: up.rssi,
            distance,
        });
    }
    Ok(out)
}

/// Builds the message map from ids of the form `<point_id><sep><anything>`.
///
/// Ids without the separator map to themselves.
pub fn infer_point_of_msg(raw: &[RawUplink], sep: char) -> PointOfMsg {
    raw.iter()
        .map(|u| {
            let point = match u.msg_id.rfind(sep) {
                Some(pos) => &u.msg_id[..pos],
                None => u.msg_id.as_str(),
            };
            (u.msg_id.clone(), point.to_string())
        })
        .collect()
}

/// Groups receptions of the same message heard by several gateways.
///
/// Within a group each gateway appears once, keeping its strongest reception.
pub fn dedupe_cross_gateway(raw: &[RawUplink]) -> BTreeMap<String, Vec<RawUplink>> {
    let mut groups: BTreeMap<String, Vec<RawUplink>> = BTreeMap::new();
    for up in raw {
        let group = groups.entry(up.msg_id.clone()).or_default();
        match group.iter_mut().find(|g| g.gateway_id == up.gateway_id) {
            Some(existing) => {
                if up.rssi > existing.rssi {
                    existing.rssi = up.rssi;
                }
            }
            None => group.push(up.clone()),
        }
    }
    groups
}

/// Splits by held-out collection points.
pub fn split_train_test(
    ds: &RangingDataset,
    test_point_ids: &BTreeSet<String>,
) -> Result<(RangingDataset, RangingDataset)> {
    let (test, train): (Vec<_>, Vec<_>) = ds
        .records
        .iter()
        .cloned()
        .partition(|r| test_point_ids.contains(&r.point_id));
    if train.is_empty() && !ds.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    Ok((
        RangingDataset::new(ds.gateway_id.clone(), train),
        RangingDataset::new(ds.gateway_id.clone(), test),
    ))
}

/// Picks `k` hold-out points uniformly at random (seeded).
pub fn random_holdout(point_ids: &[String], k: usize, seed: u64) -> BTreeSet<String> {
    let mut ids = point_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.into_iter().take(k).collect()
}

pub fn summarize(ds: &RangingDataset) -> Result<DatasetSummary> {
    if ds.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = ds.len();
    let mean_rssi = ds.records.iter().map(|r| r.rssi).sum::<f64>() / n as f64;
    let (min_distance, max_distance) = ds
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.distance), hi.max(r.distance))
        });
    Ok(DatasetSummary {
        n_records: n,
        n_points: ds.point_ids().len(),
        mean_rssi,
        min_distance,
        max_distance,
    })
}
