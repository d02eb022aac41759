//! Experiment files.
//!
//! An experiment is a TOML document. Top-level keys name the experiment and
//! the sweep; tables describe the model:
//!
//! ```toml
//! schema_version = 1
//! experiment_id = "fig4"
//! scenario = "single-node"      # single-node | single-node-fading | mac-orthogonal | csma
//! policies = ["unbuffered", "greedy", "TO", "MTO"]
//! replications = 1
//! seed = 0
//! horizon = 1000000
//!
//! [sweep]                       # or: points = [0.5, 1.0]
//! min = 0.2
//! max = 2.6
//! step = 0.1
//!
//! [rate]
//! kind = "log"                  # log | linear
//! beta = 1.0
//! base = "e"                    # "e" or a number
//!
//! [arrivals]                    # mean comes from the sweep
//! dist = "exponential"
//!
//! [harvest]
//! dist = "exponential"
//! mean = 10.0
//! ```
//!
//! Unknown keys are errors. Validation failures are reported with the line
//! of the offending table.

use std::path::{Path, PathBuf};

use harvest_core::csma::BackoffKind;
use harvest_core::dist::Truncation;
use harvest_core::mac::SchedulerKind;
use harvest_core::{DistributionSpec, PolicyKind, RateFunction};
use serde::Deserialize;
use thiserror::Error;

/// Version of the result CSV layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("{what}: probabilities sum to {sum}, not 1")]
    Probabilities { what: String, sum: f64 },
    #[error("epsilon ({epsilon}) must be below E[Y] ({mean})")]
    Epsilon { epsilon: f64, mean: f64 },
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A parse failure with the file it came from. The message carries the
/// line and column for anything found inside the document.
#[derive(Debug, Error)]
#[error("{source_name}: {message}")]
pub struct ParseError {
    pub source_name: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SingleNode,
    SingleNodeFading,
    MacOrthogonal,
    Csma,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SingleNode => "single-node",
            Self::SingleNodeFading => "single-node-fading",
            Self::MacOrthogonal => "mac-orthogonal",
            Self::Csma => "csma",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::SingleNode, Self::SingleNodeFading, Self::MacOrthogonal, Self::Csma]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// One simulated policy. `label` is what the config file wrote and what the
/// CSV reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChoice {
    pub label: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Node(PolicyKind),
    /// The MDP-optimal policy for each arrival point.
    Optimal,
    Mac { kind: SchedulerKind, waterfilling: bool },
    Csma { kind: BackoffKind, waterfilling: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffers {
    pub data_cap: Option<f64>,
    pub energy_cap: Option<f64>,
    /// `(q_step, e_step)` of the quantized state grid.
    pub grid: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpParams {
    /// `None` solves the average-cost problem.
    pub alpha: Option<f64>,
    pub drop_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub n_nodes: usize,
    pub lms_mu: f64,
    pub lms_update_period: u64,
    pub wf_samples: usize,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmaParams {
    pub n_nodes: usize,
    pub packet_size: f64,
    pub buffer: usize,
    pub sensing_window: f64,
    pub slot_length: f64,
    pub dither: f64,
    pub tau_max: f64,
    pub target_mean_backoff: f64,
    pub calibration_draws: usize,
    pub lms_mu: f64,
    pub lms_update_period: f64,
    pub wf_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment_id: String,
    pub scenario: Scenario,
    pub description: String,
    /// What the experiment is expected to show.
    pub note: Option<String>,
    pub policies: Vec<PolicyChoice>,
    /// Mean arrivals per slot (packets per time unit for CSMA).
    pub sweep: Vec<f64>,
    pub replications: u32,
    pub seed: u64,
    pub horizon: u64,
    pub output: Option<PathBuf>,
    pub rf: RateFunction,
    /// Template; each sweep point rescales it to the point's mean.
    pub arrivals: DistributionSpec,
    pub harvest: DistributionSpec,
    pub fading: Option<DistributionSpec>,
    pub epsilon: Option<f64>,
    pub c_mto: Option<f64>,
    pub buffers: Buffers,
    pub mdp: Option<MdpParams>,
    pub mac: Option<MacParams>,
    pub csma: Option<CsmaParams>,
}

impl ExperimentConfig {
    /// Rows one run produces.
    pub fn job_count(&self) -> usize {
        self.policies.len() * self.sweep.len() * self.replications as usize
    }

    /// Energy margin below `E[Y]`, defaulting to 1% of it.
    pub fn epsilon_or_default(&self) -> f64 {
        self.epsilon.unwrap_or(0.01 * self.harvest.exact_mean())
    }

    /// CSV file name relative to the output directory.
    pub fn output_name(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", self.experiment_id)))
    }
}

pub fn parse_config(text: &str, source_name: &str) -> Result<ExperimentConfig, ParseError> {
    toml::from_str(text).map_err(|e: toml::de::Error| ParseError {
        source_name: source_name.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError {
        source_name: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    experiment_id: Option<String>,
    scenario: Option<String>,
    description: Option<String>,
    note: Option<String>,
    policies: Option<Vec<String>>,
    replications: Option<u32>,
    seed: Option<u64>,
    horizon: Option<u64>,
    output: Option<PathBuf>,
    sweep: Option<Sweep>,
    rate: Option<Rate>,
    arrivals: Option<Dist>,
    harvest: Option<Dist>,
    fading: Option<Dist>,
    policy: Option<RawPolicyParams>,
    buffers: Option<RawBuffers>,
    mdp: Option<RawMdp>,
    mac: Option<RawMac>,
    csma: Option<RawCsma>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyParams {
    epsilon: Option<f64>,
    c: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBuffers {
    data_cap: Option<f64>,
    energy_cap: Option<f64>,
    q_step: Option<f64>,
    e_step: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMdp {
    alpha: Option<f64>,
    drop_cost: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMac {
    n_nodes: usize,
    lms_mu: Option<f64>,
    lms_update_period: Option<u64>,
    wf_samples: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCsma {
    n_nodes: usize,
    packet_size: Option<f64>,
    buffer: Option<usize>,
    sensing_window: Option<f64>,
    slot_length: Option<f64>,
    dither: Option<f64>,
    tau_max: Option<f64>,
    target_mean_backoff: Option<f64>,
    calibration_draws: Option<usize>,
    lms_mu: Option<f64>,
    lms_update_period: Option<f64>,
    wf_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawSweep")]
struct Sweep(Vec<f64>);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    min: Option<f64>,
    max: Option<f64>,
    step: Option<f64>,
    points: Option<Vec<f64>>,
}

/// Rounds away the binary noise of `min + i * step`.
fn tidy(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

impl TryFrom<RawSweep> for Sweep {
    type Error = ConfigError;

    fn try_from(r: RawSweep) -> Result<Self, ConfigError> {
        let points = match (r.points, r.min, r.max, r.step) {
            (Some(p), None, None, None) => p,
            (None, Some(lo), Some(hi), Some(step)) => {
                if !(step > 0.0) || !(hi >= lo) {
                    return invalid(format!("sweep needs step > 0 and max >= min, got {lo}..{hi} by {step}"));
                }
                let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| tidy(lo + i as f64 * step)).collect()
            }
            (Some(_), ..) => return invalid("sweep takes either points or min/max/step"),
            _ => return Err(ConfigError::Missing("sweep min, max or step")),
        };
        if points.is_empty() {
            return invalid("sweep is empty");
        }
        if let Some(p) = points.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return invalid(format!("sweep point {p} must be finite and >= 0"));
        }
        Ok(Sweep(points))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawRate")]
struct Rate(RateFunction);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRate {
    kind: String,
    gamma: Option<f64>,
    beta: Option<f64>,
    base: Option<LogBase>,
    half_factor: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LogBase {
    Number(f64),
    Name(String),
}

impl TryFrom<RawRate> for Rate {
    type Error = ConfigError;

    fn try_from(r: RawRate) -> Result<Self, ConfigError> {
        let rf = match r.kind.as_str() {
            "linear" => {
                if r.beta.is_some() || r.base.is_some() || r.half_factor.is_some() {
                    return invalid("linear rate takes only gamma");
                }
                RateFunction::linear(r.gamma.ok_or(ConfigError::Missing("rate gamma"))?)
            }
            "log" => {
                if r.gamma.is_some() {
                    return invalid("log rate takes beta, base and half_factor, not gamma");
                }
                let base = match r.base {
                    None => std::f64::consts::E,
                    Some(LogBase::Number(b)) => b,
                    Some(LogBase::Name(s)) if s == "e" => std::f64::consts::E,
                    Some(LogBase::Name(s)) => return Err(ConfigError::Unknown { what: "log base", value: s }),
                };
                RateFunction::log(r.beta.unwrap_or(1.0), base, r.half_factor.unwrap_or(false))
            }
            other => {
                return Err(ConfigError::Unknown {
                    what: "rate kind",
                    value: other.into(),
                })
            }
        };
        rf.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Rate(rf))
    }
}

/// A distribution whose mean may be left to the sweep.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawDist")]
struct Dist {
    spec: DistributionSpec,
    mean_given: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDist {
    dist: String,
    mean: Option<f64>,
    shape: Option<u32>,
    cap: Option<u32>,
    truncation: Option<String>,
    values: Option<Vec<f64>>,
    probs: Option<Vec<f64>>,
}

impl TryFrom<RawDist> for Dist {
    type Error = ConfigError;

    fn try_from(r: RawDist) -> Result<Self, ConfigError> {
        let mean = r.mean.unwrap_or(1.0);
        let unused = |name: &str, present: bool| -> Result<(), ConfigError> {
            if present {
                invalid(format!("{} does not take {name}", r.dist))
            } else {
                Ok(())
            }
        };
        let no_atoms = r.values.is_none() && r.probs.is_none();
        let spec = match r.dist.as_str() {
            "deterministic" | "exponential" | "hyperexponential" => {
                unused("shape", r.shape.is_some())?;
                unused("cap", r.cap.is_some() || r.truncation.is_some())?;
                unused("values/probs", !no_atoms)?;
                match r.dist.as_str() {
                    "deterministic" => DistributionSpec::deterministic(mean),
                    "exponential" => DistributionSpec::exponential(mean),
                    _ => DistributionSpec::hyperexponential(mean),
                }
            }
            "erlang" => {
                unused("cap", r.cap.is_some() || r.truncation.is_some())?;
                unused("values/probs", !no_atoms)?;
                DistributionSpec::erlang(r.shape.ok_or(ConfigError::Missing("erlang shape"))?, mean)
            }
            "truncated-poisson" => {
                unused("shape", r.shape.is_some())?;
                unused("values/probs", !no_atoms)?;
                let truncation = match r.truncation.as_deref() {
                    None | Some("clamp") => Truncation::Clamp,
                    Some("conditional") => Truncation::Conditional,
                    Some(other) => {
                        return Err(ConfigError::Unknown {
                            what: "truncation",
                            value: other.into(),
                        })
                    }
                };
                DistributionSpec::TruncatedPoisson {
                    rate: mean,
                    cap: r.cap.ok_or(ConfigError::Missing("truncated-poisson cap"))?,
                    truncation,
                }
            }
            "discrete" => {
                unused("shape", r.shape.is_some())?;
                unused("cap", r.cap.is_some() || r.truncation.is_some())?;
                let values = r.values.ok_or(ConfigError::Missing("discrete values"))?;
                let probs = r.probs.ok_or(ConfigError::Missing("discrete probs"))?;
                if values.len() != probs.len() {
                    return invalid(format!(
                        "discrete values ({}) and probs ({}) differ in length",
                        values.len(),
                        probs.len()
                    ));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ConfigError::Probabilities {
                        what: "discrete probs".into(),
                        sum,
                    });
                }
                let d = DistributionSpec::discrete(values.into_iter().zip(probs).collect());
                if r.mean.is_some() {
                    d.with_mean(mean)
                } else {
                    d
                }
            }
            other => {
                return Err(ConfigError::Unknown {
                    what: "distribution",
                    value: other.into(),
                })
            }
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Dist {
            spec,
            mean_given: r.mean.is_some() || r.dist == "discrete",
        })
    }
}

fn parse_policy(scenario: Scenario, label: &str) -> Result<PolicyChoice, ConfigError> {
    let unknown = || ConfigError::Unknown {
        what: "policy",
        value: label.into(),
    };
    let (base, waterfilling) = match label.strip_suffix("+wf") {
        Some(b) => (b, true),
        None => (label, false),
    };
    let rule = match scenario {
        Scenario::SingleNode | Scenario::SingleNodeFading => {
            if label == "OP" {
                Rule::Optimal
            } else {
                match PolicyKind::parse(label) {
                    Some(PolicyKind::Tabular) | None => return Err(unknown()),
                    Some(k) => Rule::Node(k),
                }
            }
        }
        Scenario::MacOrthogonal => Rule::Mac {
            kind: SchedulerKind::parse(base).ok_or_else(unknown)?,
            waterfilling,
        },
        Scenario::Csma => {
            let kind = BackoffKind::parse(base).ok_or_else(unknown)?;
            if waterfilling && kind == BackoffKind::ExponentialBaseline {
                return invalid("the exponential baseline has no water-filling variant");
            }
            Rule::Csma { kind, waterfilling }
        }
    };
    Ok(PolicyChoice {
        label: label.to_string(),
        rule,
    })
}

impl TryFrom<RawConfig> for ExperimentConfig {
    type Error = ConfigError;

    fn try_from(r: RawConfig) -> Result<Self, ConfigError> {
        let scenario_name = r.scenario.ok_or(ConfigError::Missing("scenario"))?;
        let scenario = Scenario::parse(&scenario_name).ok_or(ConfigError::Unknown {
            what: "scenario",
            value: scenario_name,
        })?;
        let experiment_id = r.experiment_id.ok_or(ConfigError::Missing("experiment_id"))?;
        if experiment_id.is_empty()
            || !experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return invalid(format!(
                "experiment_id {experiment_id:?} must be nonempty ASCII letters, digits, '-' or '_'"
            ));
        }
        let schema_version = r.schema_version.unwrap_or(SCHEMA_VERSION);
        if schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {schema_version} is not supported (expected {SCHEMA_VERSION})"
            ));
        }
        let labels = r.policies.ok_or(ConfigError::Missing("policies"))?;
        if labels.is_empty() {
            return invalid("policies is empty");
        }
        let policies = labels
            .iter()
            .map(|l| parse_policy(scenario, l))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, p) in policies.iter().enumerate() {
            if policies[..i].iter().any(|q| q.label == p.label) {
                return invalid(format!("policy {:?} listed twice", p.label));
            }
        }
        let sweep = r.sweep.ok_or(ConfigError::Missing("sweep"))?.0;
        let replications = r.replications.unwrap_or(1);
        if replications == 0 {
            return invalid("replications must be at least 1");
        }
        let rf = r.rate.ok_or(ConfigError::Missing("rate"))?.0;
        let harvest = r.harvest.ok_or(ConfigError::Missing("harvest"))?;
        if !harvest.mean_given {
            return Err(ConfigError::Missing("harvest mean"));
        }
        let harvest = harvest.spec;
        let arrivals = match (scenario, r.arrivals) {
            (Scenario::Csma, Some(_)) => {
                return invalid("csma arrivals are Poisson packets; drop the arrivals table")
            }
            (Scenario::Csma, None) => DistributionSpec::exponential(1.0),
            (_, Some(a)) => a.spec,
            (_, None) => return Err(ConfigError::Missing("arrivals")),
        };
        let fading = r.fading.map(|f| f.spec);
        match (scenario, &fading) {
            (Scenario::SingleNode, Some(_)) => {
                return invalid("single-node has no fading; use single-node-fading")
            }
            (Scenario::SingleNode, None) => {}
            (_, None) => return Err(ConfigError::Missing("fading")),
            _ => {}
        }

        let (epsilon, c_mto) = match r.policy {
            Some(p) => (p.epsilon, p.c),
            None => (None, None),
        };
        let mean_y = harvest.exact_mean();
        if let Some(eps) = epsilon {
            if eps >= mean_y {
                return Err(ConfigError::Epsilon { epsilon: eps, mean: mean_y });
            }
            if !(eps > 0.0) {
                return invalid(format!("epsilon must be positive, got {eps}"));
            }
        }
        if let Some(c) = c_mto {
            if !(c > 0.0) {
                return invalid(format!("policy c must be positive, got {c}"));
            }
        }

        let buffers = match r.buffers {
            None => Buffers {
                data_cap: None,
                energy_cap: None,
                grid: None,
            },
            Some(b) => {
                let grid = match (b.q_step, b.e_step) {
                    (None, None) => None,
                    (Some(q), Some(e)) => Some((q, e)),
                    _ => return invalid("a state grid needs both q_step and e_step"),
                };
                if grid.is_some() && (b.data_cap.is_none() || b.energy_cap.is_none()) {
                    return invalid("a state grid needs data_cap and energy_cap");
                }
                Buffers {
                    data_cap: b.data_cap,
                    energy_cap: b.energy_cap,
                    grid,
                }
            }
        };
        let node_scenario = matches!(scenario, Scenario::SingleNode | Scenario::SingleNodeFading);
        if !node_scenario && (buffers.energy_cap.is_some() || buffers.grid.is_some()) {
            return invalid(format!("{} takes no buffers table", scenario.name()));
        }

        let wants_mdp = policies.iter().any(|p| p.rule == Rule::Optimal);
        let mdp = match (wants_mdp, r.mdp) {
            (true, m) => {
                if scenario != Scenario::SingleNode {
                    return invalid("the OP policy is only defined without fading");
                }
                if buffers.grid.is_none() {
                    return invalid("the OP policy needs finite buffers and a state grid");
                }
                if harvest.pmf().is_none() || arrivals.pmf().is_none() {
                    return invalid("the OP policy needs finite-support arrivals and harvest");
                }
                let (alpha, drop_cost) = m.map_or((None, None), |m| (m.alpha, m.drop_cost));
                if let Some(a) = alpha {
                    if !(0.0..1.0).contains(&a) {
                        return invalid(format!("mdp alpha must lie in [0, 1), got {a}"));
                    }
                }
                Some(MdpParams {
                    alpha,
                    drop_cost: drop_cost.unwrap_or(0.0),
                })
            }
            (false, Some(_)) => return invalid("mdp table given but no OP policy listed"),
            (false, None) => None,
        };
        for p in &policies {
            if let Rule::Node(k) = p.rule {
                if k.uses_csi() && fading.is_none() {
                    return invalid(format!("policy {} needs a fading table", p.label));
                }
                if k == PolicyKind::ConstantRate {
                    return invalid("constant-rate needs a sensing model, which experiments do not configure");
                }
            }
        }

        let mac = match (scenario, r.mac) {
            (Scenario::MacOrthogonal, Some(m)) => {
                if m.n_nodes == 0 {
                    return invalid("mac n_nodes must be positive");
                }
                Some(MacParams {
                    n_nodes: m.n_nodes,
                    lms_mu: m.lms_mu.unwrap_or(0.01),
                    lms_update_period: m.lms_update_period.unwrap_or(40),
                    wf_samples: m.wf_samples.unwrap_or(1000),
                    threshold: m.threshold,
                })
            }
            (Scenario::MacOrthogonal, None) => return Err(ConfigError::Missing("mac")),
            (_, Some(_)) => return invalid("mac table given for a non-MAC scenario"),
            (_, None) => None,
        };
        let csma = match (scenario, r.csma) {
            (Scenario::Csma, Some(c)) => {
                if c.n_nodes == 0 {
                    return invalid("csma n_nodes must be positive");
                }
                Some(CsmaParams {
                    n_nodes: c.n_nodes,
                    packet_size: c.packet_size.unwrap_or(1.0),
                    buffer: c.buffer.or(buffers.data_cap.map(|b| b as usize)).unwrap_or(50),
                    sensing_window: c.sensing_window.unwrap_or(0.1),
                    slot_length: c.slot_length.unwrap_or(1.0),
                    dither: c.dither.unwrap_or(0.0),
                    tau_max: c.tau_max.unwrap_or(20.0),
                    target_mean_backoff: c.target_mean_backoff.unwrap_or(1.55),
                    calibration_draws: c.calibration_draws.unwrap_or(1_000_000),
                    lms_mu: c.lms_mu.unwrap_or(0.01),
                    lms_update_period: c.lms_update_period.unwrap_or(40.0),
                    wf_samples: c.wf_samples.unwrap_or(1000),
                })
            }
            (Scenario::Csma, None) => return Err(ConfigError::Missing("csma")),
            (_, Some(_)) => return invalid("csma table given for a non-CSMA scenario"),
            (_, None) => None,
        };
        if scenario == Scenario::MacOrthogonal && buffers.data_cap.is_some() {
            return invalid("mac-orthogonal queues are unbounded");
        }

        let default_horizon = if scenario == Scenario::Csma { 100_000 } else { 1_000_000 };
        let horizon = r.horizon.unwrap_or(default_horizon);
        if horizon < 10 {
            return invalid(format!("horizon {horizon} is too short"));
        }

        Ok(ExperimentConfig {
            schema_version,
            experiment_id,
            scenario,
            description: r.description.unwrap_or_default(),
            note: r.note,
            policies,
            sweep,
            replications,
            seed: r.seed.unwrap_or(0),
            horizon,
            output: r.output,
            rf,
            arrivals,
            harvest,
            fading,
            epsilon,
            c_mto,
            buffers,
            mdp,
            mac,
            csma,
        })
    }
}

impl<'de> Deserialize<'de> for ExperimentConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawConfig::deserialize(d)?;
        ExperimentConfig::try_from(raw).map_err(serde::de::Error::custom)
    }
}
