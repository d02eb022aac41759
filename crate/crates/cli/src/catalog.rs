//! Experiments shipped with the binary.

use crate::config::{parse_config, ExperimentConfig, ParseError};

pub const BUNDLED: &[(&str, &str)] = &[
    ("fig2", include_str!("../configs/fig2.toml")),
    ("fig3", include_str!("../configs/fig3.toml")),
    ("fig4", include_str!("../configs/fig4.toml")),
    ("fig7", include_str!("../configs/fig7.toml")),
    ("fig8", include_str!("../configs/fig8.toml")),
    ("orth3", include_str!("../configs/orth3.toml")),
    ("csma10", include_str!("../configs/csma10.toml")),
];

/// Source text of a bundled experiment. Accepts the bare name or the name
/// with a `.toml` or `.cfg` extension.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    let stem = name
        .strip_suffix(".toml")
        .or_else(|| name.strip_suffix(".cfg"))
        .unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, s)| *s)
}

pub fn bundled(name: &str) -> Option<Result<ExperimentConfig, ParseError>> {
    bundled_source(name).map(|s| parse_config(s, name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub scenario: &'static str,
    pub schema_version: u32,
    pub policies: Vec<String>,
    pub description: String,
    pub note: Option<String>,
}

pub fn list_experiments() -> Vec<CatalogEntry> {
    BUNDLED
        .iter()
        .map(|(name, src)| {
            let cfg = parse_config(src, name).expect("bundled configs parse");
            CatalogEntry {
                name,
                scenario: cfg.scenario.name(),
                schema_version: cfg.schema_version,
                policies: cfg.policies.iter().map(|p| p.label.clone()).collect(),
                description: cfg.description,
                note: cfg.note,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Rule, Scenario};
    use harvest_core::{DistributionSpec, PolicyKind, RateFunction};

    #[test]
    fn every_bundled_config_parses() {
        for (name, src) in BUNDLED {
            let cfg = parse_config(src, name).unwrap_or_else(|e| panic!("{e}"));
            assert_eq!(cfg.experiment_id, *name);
        }
        assert!(list_experiments().len() >= 7);
    }

    #[test]
    fn fig4_matches_its_description() {
        let cfg = bundled("fig4.cfg").unwrap().unwrap();
        assert_eq!(cfg.rf, RateFunction::natural_log(1.0));
        assert_eq!(cfg.arrivals, DistributionSpec::exponential(1.0));
        assert_eq!(cfg.harvest, DistributionSpec::exponential(10.0));
        let kinds: Vec<Rule> = cfg.policies.iter().map(|p| p.rule).collect();
        assert_eq!(
            kinds,
            [PolicyKind::Unbuffered, PolicyKind::Greedy, PolicyKind::To, PolicyKind::Mto].map(Rule::Node)
        );
    }

    #[test]
    fn fig8_declares_its_stability_note() {
        let e = list_experiments().into_iter().find(|e| e.name == "fig8").unwrap();
        assert_eq!(e.note.as_deref(), Some("WF, MWF stable for E[X]<0.70"));
        assert_eq!(e.scenario, Scenario::SingleNodeFading.name());
        assert!(list_experiments().iter().all(|e| e.schema_version == crate::config::SCHEMA_VERSION));
    }

    #[test]
    fn unknown_names_are_not_bundled() {
        assert!(bundled("fig5").is_none());
        assert!(bundled_source("csma10.toml").is_some());
    }
}
