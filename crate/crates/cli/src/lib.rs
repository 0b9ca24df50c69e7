//! Scenario runner for the hybrid attitude controllers: scenario files,
//! parallel simulation, CSV trajectories, certification reports and SVG plots.

pub mod config;
pub mod output;
pub mod run;

use std::path::Path;

pub use config::{bundled, list_scenarios, ConfigError, Overrides, Scenario, ScenarioConfig};
pub use run::{run_scenario, simulate, MemberResult, RunError, RunSummary};

/// Loads a scenario by bundled name or from a file path.
pub fn load_config(source: &str) -> Result<ScenarioConfig, ConfigError> {
    if let Some(text) = bundled(source) {
        return ScenarioConfig::from_toml(text);
    }
    let text = std::fs::read_to_string(Path::new(source))
        .map_err(|e| ConfigError::Parse(format!("{source}: {e}")))?;
    ScenarioConfig::from_toml(&text)
}

/// Loads, applies overrides and validates.
pub fn prepare(source: &str, overrides: &Overrides) -> Result<Scenario, ConfigError> {
    let mut cfg = load_config(source)?;
    cfg.apply(overrides);
    cfg.build()
}
