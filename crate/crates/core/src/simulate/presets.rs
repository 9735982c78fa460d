//! Built-in scenarios echoing the two published measurement campaigns.

use super::{parse_scenario, Result, ScenarioFile};

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub scenario: &'static str,
    pub site_csv: &'static str,
}

const PRESETS: [Preset; 2] = [
    Preset {
        name: "outdoor-paper",
        scenario: include_str!("../../presets/outdoor-paper.conf"),
        site_csv: include_str!("../../presets/outdoor-paper-site.csv"),
    },
    Preset {
        name: "indoor-paper",
        scenario: include_str!("../../presets/indoor-paper.conf"),
        site_csv: include_str!("../../presets/indoor-paper-site.csv"),
    },
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub(crate) fn site_csv(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.name == name).map(|p| p.site_csv)
}

/// Loads a built-in scenario; `None` for unknown names.
pub fn preset(name: &str) -> Option<Result<ScenarioFile>> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .map(|p| parse_scenario(p.scenario, None))
}
