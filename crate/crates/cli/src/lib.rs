//! Experiment runner: parses experiment files, sweeps policies over
//! arrival rates with common random numbers and writes result CSVs with a
//! manifest.

pub mod catalog;
pub mod config;
pub mod run;

pub use catalog::{bundled, list_experiments, CatalogEntry};
pub use config::{parse_config, parse_config_file, ExperimentConfig, ParseError, Scenario, SCHEMA_VERSION};
pub use run::{run_experiment, Outcome, Overrides, Prepared, ResultRow, RunError, RunSummary};

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "HARVEST_OUT_DIR";

/// Reads `name` as a file if one exists, otherwise as a bundled experiment.
/// Returns the source text and the parsed config.
pub fn load(name: &str) -> Result<(String, ExperimentConfig), ParseError> {
    let path = std::path::Path::new(name);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| ParseError {
            source_name: name.to_string(),
            message: e.to_string(),
        })?;
        let cfg = parse_config(&text, name)?;
        return Ok((text, cfg));
    }
    match catalog::bundled_source(name) {
        Some(src) => Ok((src.to_string(), parse_config(src, name)?)),
        None => Err(ParseError {
            source_name: name.to_string(),
            message: "no such file or bundled experiment (see `harvest list`)".into(),
        }),
    }
}
