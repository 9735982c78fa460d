//! Flat `key = value` scenario files.
//!
//! ```text
//! # comment
//! site_plan = plan.csv          # path, relative to the scenario file
//! site = outdoor-paper          # or: a built-in site plan
//! pl0 = 40                      # channel: pl0 d0 n_exp sigma tx_power quantize
//! samples_per_point = 54
//! seed = 7
//! holdout = TP1,TP2             # test points for the evaluation pipeline
//! nlos.B = 3                    # dB lost on every reception at B
//! link_nlos.B.P07 = 10          # dB lost on the B–P07 link only
//! n_exp.A = 3.1                 # per-gateway channel override (pl0, n_exp, sigma)
//! target_mean_rssi.C = -89.92   # calibrate pl0 of C to this mean
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{calibrate_to_stats, presets, CalibrationOptions, ChannelParams, Result, SimScenario, SimulateError};
use crate::dataset::{load_site_plan, parse_site_plan, DatasetSummary, SitePlan};

/// A parsed scenario plus the evaluation settings that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: SimScenario,
    pub holdout: BTreeSet<String>,
    /// Mean-RSSI targets that produced the `pl0` overrides.
    pub calibration_targets: BTreeMap<String, f64>,
}

fn config_err(line: usize, message: impl Into<String>) -> SimulateError {
    SimulateError::Config {
        line,
        message: message.into(),
    }
}

fn number(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| config_err(line, format!("{key}: {value:?} is not a number")))?;
    if !v.is_finite() {
        return Err(config_err(line, format!("{key} must be finite")));
    }
    Ok(v)
}

fn integer(line: usize, key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("{key}: {value:?} is not a non-negative integer")))
}

/// Parses a scenario; relative `site_plan` paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<ScenarioFile> {
    let mut seen = BTreeSet::new();
    let mut plan: Option<SitePlan> = None;
    let mut channel = ChannelParams::default();
    let mut n_exp_set = false;
    let mut samples_per_point = 54usize;
    let mut seed = 0u64;
    let mut holdout = BTreeSet::new();
    let mut nlos = BTreeMap::new();
    let mut link = BTreeMap::new();
    let mut overrides: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    let mut targets = BTreeMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(config_err(line, "empty key"));
        }
        if !seen.insert(key.to_string()) {
            return Err(config_err(line, format!("duplicate key {key:?}")));
        }
        match key {
            "site_plan" => {
                if plan.is_some() {
                    return Err(config_err(line, "site given twice"));
                }
                let path = match base_dir {
                    Some(dir) => dir.join(value),
                    None => value.into(),
                };
                plan = Some(load_site_plan(&path)?);
            }
            "site" => {
                if plan.is_some() {
                    return Err(config_err(line, "site given twice"));
                }
                let csv = presets::site_csv(value).ok_or_else(|| {
                    config_err(
                        line,
                        format!(
                            "unknown built-in site {value:?} (available: {})",
                            presets::preset_names().join(", ")
                        ),
                    )
                })?;
                plan = Some(parse_site_plan(csv.as_bytes(), value)?);
            }
            "pl0" => channel.pl0 = number(line, key, value)?,
            "d0" => channel.d0 = number(line, key, value)?,
            "n_exp" => {
                channel.n_exp = number(line, key, value)?;
                n_exp_set = true;
            }
            "sigma" => channel.sigma = number(line, key, value)?,
            "tx_power" => channel.tx_power = number(line, key, value)?,
            "quantize" => {
                channel.quantize = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    _ => return Err(config_err(line, format!("quantize: {value:?} is not a flag"))),
                }
            }
            "samples_per_point" => samples_per_point = integer(line, key, value)? as usize,
            "seed" => seed = integer(line, key, value)?,
            "holdout" => {
                holdout = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            _ => {
                let (family, rest) = key
                    .split_once('.')
                    .ok_or_else(|| config_err(line, format!("unknown key {key:?}")))?;
                match family {
                    "nlos" => {
                        nlos.insert(rest.to_string(), number(line, key, value)?);
                    }
                    "link_nlos" => {
                        let (gw, point) = rest
                            .split_once('.')
                            .ok_or_else(|| config_err(line, "expected link_nlos.<gateway>.<point>"))?;
                        link.insert((gw.to_string(), point.to_string()), number(line, key, value)?);
                    }
                    "pl0" | "n_exp" | "sigma" => {
                        overrides.entry(rest.to_string()).or_default().push((
                            line,
                            family.to_string(),
                            number(line, key, value)?,
                        ));
                    }
                    "target_mean_rssi" => {
                        targets.insert(rest.to_string(), number(line, key, value)?);
                    }
                    _ => return Err(config_err(line, format!("unknown key {key:?}"))),
                }
            }
        }
    }

    let plan = plan.ok_or_else(|| config_err(0, "missing `site_plan` or `site`"))?;
    if !n_exp_set {
        channel.n_exp = super::default_exponent(plan.environment);
    }
    for id in &holdout {
        if plan.point(id).is_none() {
            return Err(config_err(0, format!("holdout point {id:?} is not on the site plan")));
        }
    }

    let mut scenario = SimScenario::new(plan, channel, samples_per_point, seed);
    scenario.per_gateway_nlos_penalty = nlos;
    scenario.link_penalty = link;
    for (gw, items) in overrides {
        let mut ch = scenario.channel.clone();
        for (line, field, v) in items {
            match field.as_str() {
                "pl0" => ch.pl0 = v,
                "n_exp" => ch.n_exp = v,
                "sigma" => ch.sigma = v,
                _ => return Err(config_err(line, "unreachable override")),
            }
        }
        scenario.channel_overrides.insert(gw, ch);
    }
    for (gw, mean) in &targets {
        if scenario.plan.gateway(gw).is_none() {
            return Err(SimulateError::UnknownGateway(gw.clone()));
        }
        let template = scenario.channel_for(gw).clone();
        let point_penalty = scenario
            .plan
            .points
            .iter()
            .map(|p| (p.id.clone(), scenario.penalty(gw, &p.id)))
            .collect();
        let opts = CalibrationOptions {
            n_exp: Some(template.n_exp),
            template,
            point_penalty,
        };
        let target = DatasetSummary {
            n_records: scenario.plan.points.len(),
            n_points: scenario.plan.points.len(),
            mean_rssi: *mean,
            min_distance: 0.0,
            max_distance: 0.0,
        };
        let ch = calibrate_to_stats(&target, &scenario.plan, gw, &opts)?;
        scenario.channel_overrides.insert(gw.clone(), ch);
    }
    scenario.validate()?;
    Ok(ScenarioFile {
        scenario,
        holdout,
        calibration_targets: targets,
    })
}
