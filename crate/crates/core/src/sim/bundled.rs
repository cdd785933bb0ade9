//! Scenarios shipped with the crate, addressable by name.

use std::path::Path;

use super::scenario::{Scenario, ScenarioError};

pub const BUNDLED: &[(&str, &str)] = &[
    ("fig6_stagger", include_str!("../../scenarios/fig6_stagger.toml")),
    ("fig7_skip", include_str!("../../scenarios/fig7_skip.toml")),
    ("table2_resnet50", include_str!("../../scenarios/table2_resnet50.toml")),
    ("table2_inceptionresnet", include_str!("../../scenarios/table2_inceptionresnet.toml")),
    ("fig2_flattop", include_str!("../../scenarios/fig2_flattop.toml")),
    ("fig4a_beta_sweep", include_str!("../../scenarios/fig4a_beta_sweep.toml")),
    ("fig4b_timeout_sweep", include_str!("../../scenarios/fig4b_timeout_sweep.toml")),
    ("fig4b_timeout_mixed", include_str!("../../scenarios/fig4b_timeout_mixed.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a bundled scenario by name.
pub fn load(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    source(name).map(|text| Scenario::from_toml(text, name, Path::new(".")))
}

/// A bundled name or a path to a scenario file.
pub fn load_any(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    load_any_with_seed(name_or_path, None)
}

/// Like `load_any`, with the seed overridden before validation.
pub fn load_any_with_seed(name_or_path: &str, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    match source(name_or_path) {
        Some(text) => Scenario::from_toml_with_seed(text, name_or_path, Path::new("."), seed),
        None => Scenario::from_path_with_seed(Path::new(name_or_path), seed),
    }
}
