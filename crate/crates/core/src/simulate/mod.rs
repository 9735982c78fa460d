//! Synthetic fingerprint campaigns from a log-distance shadowing channel.
//!
//! Received power follows `tx − (PL(d0) + 10·n·log10(d/d0)) + X`, with `X`
//! drawn i.i.d. from `N(0, σ²)` per reception. Obstructed links lose a fixed
//! number of dB on top of that.

mod presets;
mod scenario;

pub use presets::{preset, preset_names, Preset};
pub use scenario::{parse_scenario, ScenarioFile};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{DatasetSummary, Environment, PointOfMsg, RawUplink, SitePlan};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("distance must be positive, got {0}")]
    DomainError(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("no pl0 in [0, 160] dB reaches a mean rssi of {target} dBm")]
    NoConvergence { target: f64 },
    #[error("unknown gateway {0:?}")]
    UnknownGateway(String),
    #[error("scenario line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

pub type Result<T> = std::result::Result<T, SimulateError>;

/// Log-distance path loss with log-normal shadowing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Path loss at the reference distance (dB).
    pub pl0: f64,
    /// Reference distance (m).
    pub d0: f64,
    /// Path-loss exponent.
    pub n_exp: f64,
    /// Shadowing standard deviation (dB).
    pub sigma: f64,
    pub tx_power: f64,
    /// Round received power to whole dBm like a radio front end does.
    pub quantize: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pl0: 40.0,
            d0: 1.0,
            n_exp: 2.7,
            sigma: 6.0,
            tx_power: 14.0,
            quantize: true,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.pl0, self.d0, self.n_exp, self.sigma, self.tx_power]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.n_exp > 0.0) || !(self.sigma >= 0.0) || !(self.d0 > 0.0) {
            return Err(SimulateError::InvalidParams(
                "channel needs finite values with n_exp > 0, sigma >= 0, d0 > 0".into(),
            ));
        }
        Ok(())
    }

    /// Mean received power at `distance`, before shadowing and rounding.
    pub fn mean_rssi(&self, distance: f64) -> f64 {
        self.tx_power - (self.pl0 + 10.0 * self.n_exp * (distance / self.d0).log10())
    }
}

/// Default path-loss exponent used as a calibration prior.
pub fn default_exponent(env: Environment) -> f64 {
    match env {
        Environment::Outdoor => 2.7,
        Environment::Indoor => 2.0,
    }
}

/// Received power at `distance` for a given shadowing draw (dB).
pub fn rssi_at(channel: &ChannelParams, distance: f64, noise_draw: f64) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(SimulateError::DomainError(distance));
    }
    let rssi = channel.mean_rssi(distance) + noise_draw;
    // f64::round rounds half away from zero
    Ok(if channel.quantize { rssi.round() } else { rssi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraPhyParams {
    pub sf: u32,
    pub bw_hz: u32,
}

impl LoraPhyParams {
    pub fn new(sf: u32, bw_hz: u32) -> Result<Self> {
        if !(7..=12).contains(&sf) {
            return Err(SimulateError::InvalidParams(format!(
                "spreading factor {sf} outside 7..=12"
            )));
        }
        if ![125_000, 250_000, 500_000].contains(&bw_hz) {
            return Err(SimulateError::InvalidParams(format!(
                "bandwidth {bw_hz} Hz not supported"
            )));
        }
        Ok(Self { sf, bw_hz })
    }
}

/// LoRa chirp duration `2^SF / BW` in seconds.
pub fn chirp_duration(phy: LoraPhyParams) -> f64 {
    f64::from(1u32 << phy.sf) / f64::from(phy.bw_hz)
}

/// Everything needed to synthesize one measurement campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub plan: SitePlan,
    pub channel: ChannelParams,
    /// Gateway-specific channels (e.g. calibrated `pl0`) replacing `channel`.
    pub channel_overrides: BTreeMap<String, ChannelParams>,
    pub samples_per_point: usize,
    /// Extra loss applied to every reception at a gateway (dB).
    pub per_gateway_nlos_penalty: BTreeMap<String, f64>,
    /// Extra loss on individual `(gateway, point)` links (dB).
    pub link_penalty: BTreeMap<(String, String), f64>,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(plan: SitePlan, channel: ChannelParams, samples_per_point: usize, seed: u64) -> Self {
        Self {
            plan,
            channel,
            channel_overrides: BTreeMap::new(),
            samples_per_point,
            per_gateway_nlos_penalty: BTreeMap::new(),
            link_penalty: BTreeMap::new(),
            seed,
        }
    }

    pub fn channel_for(&self, gateway_id: &str) -> &ChannelParams {
        self.channel_overrides.get(gateway_id).unwrap_or(&self.channel)
    }

    /// Total obstruction loss on a link (dB).
    pub fn penalty(&self, gateway_id: &str, point_id: &str) -> f64 {
        let gw = self.per_gateway_nlos_penalty.get(gateway_id).copied().unwrap_or(0.0);
        let link = self
            .link_penalty
            .get(&(gateway_id.to_string(), point_id.to_string()))
            .copied()
            .unwrap_or(0.0);
        gw + link
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.channel.validate()?;
        for (gw, ch) in &self.channel_overrides {
            if self.plan.gateway(gw).is_none() {
                return Err(SimulateError::UnknownGateway(gw.clone()));
            }
            ch.validate()?;
        }
        for gw in self.per_gateway_nlos_penalty.keys() {
            if self.plan.gateway(gw).is_none() {
                return Err(SimulateError::UnknownGateway(gw.clone()));
            }
        }
        for (gw, point) in self.link_penalty.keys() {
            if self.plan.gateway(gw).is_none() {
                return Err(SimulateError::UnknownGateway(gw.clone()));
            }
            if self.plan.point(point).is_none() {
                return Err(SimulateError::InvalidParams(format!("unknown point {point:?}")));
            }
        }
        if self.samples_per_point == 0 {
            return Err(SimulateError::InvalidParams("samples_per_point must be >= 1".into()));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-gateway RNG seed: `seed ⊕ FNV-1a(gateway_id)`.
pub fn gateway_seed(seed: u64, gateway_id: &str) -> u64 {
    seed ^ fnv1a(gateway_id.as_bytes())
}

/// Message id for the `sample`-th broadcast at a collection point.
pub fn message_id(point_id: &str, sample: usize) -> String {
    format!("{point_id}:{sample}")
}

/// Generates the raw log of a campaign plus the message → point map.
///
/// Every point broadcasts `samples_per_point` messages and every gateway
/// hears each of them. Output order is point, then sample, then gateway.
pub fn generate_campaign(sc: &SimScenario) -> Result<(Vec<RawUplink>, PointOfMsg)> {
    sc.validate()?;
    let n_points = sc.plan.points.len();
    let spp = sc.samples_per_point;

    // rssi[g][point * spp + s]; each gateway draws from its own stream
    let mut per_gateway: Vec<Vec<f64>> = Vec::with_capacity(sc.plan.gateways.len());
    for gw in &sc.plan.gateways {
        let channel = sc.channel_for(&gw.id);
        let mut rng = ChaCha8Rng::seed_from_u64(gateway_seed(sc.seed, &gw.id));
        let normal = Normal::new(0.0, channel.sigma).map_err(|e| SimulateError::InvalidParams(e.to_string()))?;
        let mut values = Vec::with_capacity(n_points * spp);
        for point in &sc.plan.points {
            let d = gw.distance_to(point);
            let penalty = sc.penalty(&gw.id, &point.id);
            for _ in 0..spp {
                let noise = if channel.sigma > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
                values.push(rssi_at(channel, d, noise - penalty)?);
            }
        }
        per_gateway.push(values);
    }

    let mut raw = Vec::with_capacity(n_points * spp * sc.plan.gateways.len());
    let mut map = PointOfMsg::new();
    for (pi, point) in sc.plan.points.iter().enumerate() {
        for s in 0..spp {
            let msg = message_id(&point.id, s);
            for (gi, gw) in sc.plan.gateways.iter().enumerate() {
                raw.push(RawUplink::new(
                    gw.id.clone(),
                    msg.clone(),
                    per_gateway[gi][pi * spp + s],
                ));
            }
            map.insert(msg, point.id.clone());
        }
    }
    Ok((raw, map))
}

/// Inputs held fixed while [`calibrate_to_stats`] solves for `pl0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationOptions {
    /// Path-loss exponent prior; `None` picks the environment default.
    pub n_exp: Option<f64>,
    /// Supplies `d0`, `sigma`, `tx_power` and `quantize` of the result.
    pub template: ChannelParams,
    /// Obstruction loss per point id for this gateway (dB).
    pub point_penalty: BTreeMap<String, f64>,
}

/// Solves for the `pl0` whose noiseless mean RSSI over the plan's points
/// matches `target.mean_rssi`, by bisection on `[0, 160]` dB.
pub fn calibrate_to_stats(
    target: &DatasetSummary,
    plan: &SitePlan,
    gateway_id: &str,
    opts: &CalibrationOptions,
) -> Result<ChannelParams> {
    if target.n_records == 0 || !target.mean_rssi.is_finite() {
        return Err(SimulateError::InvalidParams("calibration target needs records".into()));
    }
    let gw = plan
        .gateway(gateway_id)
        .ok_or_else(|| SimulateError::UnknownGateway(gateway_id.to_string()))?;
    if plan.points.is_empty() {
        return Err(SimulateError::InvalidParams("plan has no collection points".into()));
    }
    let mut channel = ChannelParams {
        n_exp: opts.n_exp.unwrap_or_else(|| default_exponent(plan.environment)),
        ..opts.template.clone()
    };
    channel.validate()?;
    let mut links = Vec::with_capacity(plan.points.len());
    for p in &plan.points {
        let d = gw.distance_to(p);
        if !(d > 0.0) {
            return Err(SimulateError::DomainError(d));
        }
        links.push((d, opts.point_penalty.get(&p.id).copied().unwrap_or(0.0)));
    }
    let mean_at = |pl0: f64| {
        let ch = ChannelParams { pl0, ..channel.clone() };
        links.iter().map(|(d, pen)| ch.mean_rssi(*d) - pen).sum::<f64>() / links.len() as f64
    };
    let goal = target.mean_rssi;
    let (mut lo, mut hi) = (0.0_f64, 160.0_f64);
    // mean rssi decreases with pl0
    if !(mean_at(lo) >= goal && mean_at(hi) <= goal) {
        return Err(SimulateError::NoConvergence { target: goal });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) >= goal {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    channel.pl0 = 0.5 * (lo + hi);
    Ok(channel)
}
