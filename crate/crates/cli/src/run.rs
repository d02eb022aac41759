//! Executing an experiment: one job per (policy, arrival point,
//! replication), run in parallel and written in job order by a single
//! writer.
//!
//! Every policy and arrival point of replication `r` uses seed `seed + r`,
//! so policies are compared on common random numbers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use harvest_core::csma::{calibrated_specs, run_csma, BackoffSpec, Calibration, CsmaConfig};
use harvest_core::mac::{run_mac, symmetric_nodes, MacConfig, SchedulerSpec};
use harvest_core::mdp::{
    build_transition, grid_pmf, policy_iteration, relative_value_iteration, MdpConfig, MdpSolution,
    StartPolicy,
};
use harvest_core::node::{run, NodeSimConfig, StateGrid};
use harvest_core::{PolicySpec, PolicyTable};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ExperimentConfig, Rule, Scenario, SCHEMA_VERSION};

pub const RESULT_COLUMNS: [&str; 10] = [
    "experiment_id",
    "policy",
    "E[X]",
    "replication",
    "mean_q",
    "mean_delay",
    "verdict",
    "wasted_energy_rate",
    "drop_rate",
    "runtime",
];

/// First line of every result CSV.
pub fn schema_comment() -> String {
    format!("# harvest-results schema={SCHEMA_VERSION}")
}

/// First line of the CSMA companion CSV.
pub fn csma_schema_comment() -> String {
    format!("# harvest-csma schema={SCHEMA_VERSION}")
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] harvest_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub policy: String,
    pub mean_arrival: f64,
    pub replication: u32,
    pub mean_q: f64,
    pub mean_delay: f64,
    pub verdict: String,
    pub wasted_energy_rate: f64,
    pub drop_rate: f64,
    /// Simulated horizon, in slots (time units for CSMA). Wall time is in
    /// the manifest so reruns stay bit-identical.
    pub runtime: f64,
}

impl ResultRow {
    pub fn fields(&self) -> [String; 10] {
        [
            self.experiment_id.clone(),
            self.policy.clone(),
            num(self.mean_arrival),
            self.replication.to_string(),
            num(self.mean_q),
            num(self.mean_delay),
            self.verdict.clone(),
            num(self.wasted_energy_rate),
            num(self.drop_rate),
            num(self.runtime),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmaRow {
    pub loss_probability: f64,
    pub collision_rate: f64,
    pub airtime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub row: ResultRow,
    pub csma: Option<CsmaRow>,
    /// Worst relative bit or energy conservation error over the nodes.
    pub max_imbalance: f64,
    /// Lowest battery level seen by any node.
    pub min_energy: f64,
}

fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub policy: usize,
    pub point: usize,
    pub replication: u32,
}

/// A config with the per-experiment work done: MDP solutions for the OP
/// policy and calibrated CSMA backoffs.
pub struct Prepared<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub horizon: u64,
    tables: Vec<Option<PolicyTable>>,
    backoffs: Vec<Option<BackoffSpec>>,
}

/// The MDP of the config at one arrival mean.
pub fn mdp_config(cfg: &ExperimentConfig, mean_arrival: f64) -> Result<MdpConfig, RunError> {
    let params = cfg
        .mdp
        .as_ref()
        .ok_or_else(|| RunError::Unsupported(format!("{} has no OP policy to solve", cfg.experiment_id)))?;
    let (q_step, e_step) = cfg.buffers.grid.expect("validated: OP needs a grid");
    let x = grid_pmf(&cfg.arrivals.with_mean(mean_arrival), q_step)?;
    let y = grid_pmf(&cfg.harvest, e_step)?;
    let mut m = MdpConfig::new(cfg.rf, x, y, params.alpha.unwrap_or(1.0)).with_caps(
        cfg.buffers.data_cap.expect("validated"),
        cfg.buffers.energy_cap.expect("validated"),
    );
    m.q_step = q_step;
    m.e_step = e_step;
    m.action_step = e_step;
    m.drop_cost = params.drop_cost;
    Ok(m)
}

/// Average-cost RVI, or policy iteration from greedy when a discount is set.
pub fn solve_optimal(cfg: &ExperimentConfig, mean_arrival: f64) -> Result<MdpSolution, RunError> {
    let m = mdp_config(cfg, mean_arrival)?;
    let k = build_transition(&m)?;
    Ok(if m.alpha >= 1.0 {
        relative_value_iteration(&m, &k)?
    } else {
        policy_iteration(&m, &k, StartPolicy::Greedy)?
    })
}

impl<'a> Prepared<'a> {
    pub fn new(cfg: &'a ExperimentConfig, overrides: &Overrides) -> Result<Self, RunError> {
        let seed = overrides.seed.unwrap_or(cfg.seed);
        let horizon = overrides.horizon.unwrap_or(cfg.horizon);
        if horizon < 10 {
            return Err(RunError::Unsupported(format!("horizon {horizon} is too short")));
        }
        let tables = if cfg.policies.iter().any(|p| p.rule == Rule::Optimal) {
            cfg.sweep
                .par_iter()
                .map(|&m| solve_optimal(cfg, m).map(|s| Some(s.to_table())))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            vec![None; cfg.sweep.len()]
        };
        let backoffs = match cfg.scenario {
            Scenario::Csma => {
                let kinds: Vec<_> = cfg
                    .policies
                    .iter()
                    .map(|p| match p.rule {
                        Rule::Csma { kind, waterfilling } => (kind, waterfilling),
                        _ => unreachable!("validated"),
                    })
                    .collect();
                let c = cfg.csma.as_ref().expect("validated");
                let cal = Calibration {
                    target_mean_backoff: c.target_mean_backoff,
                    tau_max: c.tau_max,
                    draws: c.calibration_draws,
                    seed,
                    dither: c.dither,
                    ..Calibration::default()
                };
                let template = csma_config(cfg, cfg.sweep[0], seed, horizon);
                calibrated_specs(&template, &cal, &kinds)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            _ => vec![None; cfg.policies.len()],
        };
        Ok(Self {
            cfg,
            seed,
            horizon,
            tables,
            backoffs,
        })
    }

    /// Policy-major, then arrival point, then replication.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::with_capacity(self.cfg.job_count());
        for policy in 0..self.cfg.policies.len() {
            for point in 0..self.cfg.sweep.len() {
                for replication in 0..self.cfg.replications {
                    out.push(Job {
                        policy,
                        point,
                        replication,
                    });
                }
            }
        }
        out
    }

    pub fn backoff(&self, policy: usize) -> Option<&BackoffSpec> {
        self.backoffs[policy].as_ref()
    }

    pub fn run_job(&self, job: Job) -> Result<Outcome, RunError> {
        let cfg = self.cfg;
        let choice = &cfg.policies[job.policy];
        let mean_arrival = cfg.sweep[job.point];
        let seed = self.seed + job.replication as u64;
        let row = |mean_q: f64, mean_delay: f64, verdict: &str, wasted: f64, drop: f64| ResultRow {
            experiment_id: cfg.experiment_id.clone(),
            policy: choice.label.clone(),
            mean_arrival,
            replication: job.replication,
            mean_q,
            mean_delay,
            verdict: verdict.to_string(),
            wasted_energy_rate: wasted,
            drop_rate: drop,
            runtime: self.horizon as f64,
        };
        match choice.rule {
            Rule::Node(_) | Rule::Optimal => {
                let sim = node_config(cfg, job.policy, mean_arrival, self.tables[job.point].as_ref())?
                    .with_horizon(self.horizon)
                    .with_seed(seed);
                let r = run(&sim)?;
                Ok(Outcome {
                    row: row(r.mean_q, r.mean_delay, r.verdict.as_str(), r.wasted_energy_rate, r.drop_rate),
                    csma: None,
                    max_imbalance: r.totals.bit_imbalance().max(r.totals.energy_imbalance()),
                    min_energy: r.totals.min_energy,
                })
            }
            Rule::Mac { .. } => {
                let r = run_mac(&mac_config(cfg, job.policy, mean_arrival, seed, self.horizon))?;
                let n = r.nodes.len() as f64;
                let avg = |f: &dyn Fn(&harvest_core::node::SimResult) -> f64| r.nodes.iter().map(f).sum::<f64>() / n;
                Ok(Outcome {
                    row: row(
                        avg(&|s| s.mean_q),
                        avg(&|s| s.mean_delay),
                        r.verdict.as_str(),
                        avg(&|s| s.wasted_energy_rate),
                        avg(&|s| s.drop_rate),
                    ),
                    csma: None,
                    max_imbalance: r
                        .nodes
                        .iter()
                        .map(|s| s.totals.bit_imbalance().max(s.totals.energy_imbalance()))
                        .fold(0.0, f64::max),
                    min_energy: r.nodes.iter().map(|s| s.totals.min_energy).fold(f64::INFINITY, f64::min),
                })
            }
            Rule::Csma { .. } => {
                let sim = csma_config(cfg, mean_arrival, seed, self.horizon);
                let spec = self.backoffs[job.policy].as_ref().expect("calibrated");
                let r = run_csma(&sim, spec)?;
                let n = r.nodes.len() as f64;
                let measured = sim.horizon - sim.warmup;
                let mean_q = r.nodes.iter().map(|s| s.mean_q).sum::<f64>() / n;
                let dropped = r.nodes.iter().map(|s| s.measured_dropped as f64).sum::<f64>();
                let packets_imbalanced = r.nodes.iter().any(|s| s.packet_imbalance() != 0);
                Ok(Outcome {
                    row: row(
                        mean_q,
                        r.mean_delay,
                        "na",
                        0.0,
                        dropped * sim.packet_size / (measured * n),
                    ),
                    csma: Some(CsmaRow {
                        loss_probability: r.loss_probability,
                        collision_rate: r.collision_rate,
                        airtime: r.nodes.iter().map(|s| s.airtime).collect(),
                    }),
                    max_imbalance: if packets_imbalanced {
                        f64::INFINITY
                    } else {
                        r.nodes.iter().map(|s| s.energy_imbalance()).fold(0.0, f64::max)
                    },
                    min_energy: r.nodes.iter().map(|s| s.min_energy).fold(f64::INFINITY, f64::min),
                })
            }
        }
    }

    /// Runs every job, handing outcomes to `sink` in job order. Stops at
    /// the first failure (of a job or of the sink) and returns it; outcomes
    /// before it have already been delivered.
    pub fn run_all<F>(&self, mut sink: F) -> Result<usize, RunError>
    where
        F: FnMut(&Outcome) -> Result<(), RunError>,
    {
        let jobs = self.jobs();
        let abort = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<(usize, Option<Result<Outcome, RunError>>)>();
        std::thread::scope(|s| {
            let (jobs, abort) = (&jobs, &abort);
            s.spawn(move || {
                jobs.par_iter().enumerate().for_each_with(tx, |tx, (i, job)| {
                    let r = (!abort.load(Ordering::Relaxed)).then(|| self.run_job(*job));
                    let _ = tx.send((i, r));
                });
            });
            let mut pending = BTreeMap::new();
            let mut written = 0;
            let mut failure = None;
            for (i, r) in rx {
                pending.insert(i, r);
                while failure.is_none() {
                    let Some(r) = pending.remove(&written) else { break };
                    let step = match r {
                        Some(Ok(o)) => sink(&o),
                        Some(Err(e)) => Err(e),
                        None => Err(RunError::Unsupported("job skipped".into())),
                    };
                    match step {
                        Ok(()) => written += 1,
                        Err(e) => {
                            abort.store(true, Ordering::Relaxed);
                            failure = Some(e);
                        }
                    }
                }
            }
            match failure {
                Some(e) => Err(e),
                None => Ok(written),
            }
        })
    }
}

pub fn node_config(
    cfg: &ExperimentConfig,
    policy: usize,
    mean_arrival: f64,
    table: Option<&PolicyTable>,
) -> Result<NodeSimConfig, RunError> {
    let mean_y = cfg.harvest.exact_mean();
    let spec = match cfg.policies[policy].rule {
        Rule::Node(kind) => {
            let mut p = PolicySpec::new(kind, cfg.rf, mean_y);
            if let Some(e) = cfg.epsilon {
                p = p.with_epsilon(e);
            }
            if let Some(c) = cfg.c_mto {
                p = p.with_c(c);
            }
            if let Some(h) = &cfg.fading {
                p = p.with_fading(h)?;
            }
            p
        }
        Rule::Optimal => PolicySpec::tabular(table.expect("solved").clone(), cfg.rf, mean_y),
        _ => unreachable!("node scenarios hold node policies"),
    };
    let mut sim = NodeSimConfig::new(cfg.arrivals.with_mean(mean_arrival), cfg.harvest.clone(), spec)
        .with_horizon(cfg.horizon)
        .with_seed(cfg.seed);
    sim.h_dist = cfg.fading.clone();
    sim.data_buffer_cap = cfg.buffers.data_cap;
    sim.energy_buffer_cap = cfg.buffers.energy_cap;
    sim.grid = cfg.buffers.grid.map(|(q_step, e_step)| StateGrid { q_step, e_step });
    Ok(sim)
}

pub fn mac_config(cfg: &ExperimentConfig, policy: usize, mean_arrival: f64, seed: u64, horizon: u64) -> MacConfig {
    let m = cfg.mac.as_ref().expect("validated");
    let Rule::Mac { kind, waterfilling } = cfg.policies[policy].rule else {
        unreachable!("MAC scenarios hold schedulers")
    };
    let mut spec = SchedulerSpec::new(kind).with_waterfilling(waterfilling);
    spec.epsilon = cfg.epsilon;
    spec.lms_mu = m.lms_mu;
    spec.lms_update_period = m.lms_update_period;
    spec.wf_samples = m.wf_samples;
    spec.threshold = m.threshold;
    let nodes = symmetric_nodes(
        m.n_nodes,
        cfg.arrivals.with_mean(mean_arrival),
        cfg.harvest.clone(),
        cfg.fading.clone().expect("validated"),
        cfg.rf,
    );
    MacConfig::new(nodes, spec).with_horizon(horizon).with_seed(seed)
}

pub fn csma_config(cfg: &ExperimentConfig, arrival_rate: f64, seed: u64, horizon: u64) -> CsmaConfig {
    let c = cfg.csma.as_ref().expect("validated");
    let mut sim = CsmaConfig::new(c.n_nodes, arrival_rate, cfg.fading.clone().expect("validated"), cfg.rf)
        .with_horizon(horizon as f64)
        .with_seed(seed);
    sim.packet_size = c.packet_size;
    sim.y_dist = cfg.harvest.clone();
    sim.data_buffer_cap = c.buffer;
    sim.sensing_window = c.sensing_window;
    sim.slot_length = c.slot_length;
    sim.epsilon = cfg.epsilon;
    sim.lms_mu = c.lms_mu;
    sim.lms_update_period = c.lms_update_period;
    sim.wf_samples = c.wf_samples;
    sim
}

pub fn config_hash(source: &str) -> String {
    Sha256::digest(source.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment_id: String,
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub horizon: u64,
    pub replications: u32,
    pub code_version: String,
    pub wall_time_s: f64,
    pub status: String,
    pub rows: usize,
    pub results: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub companion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub csv: PathBuf,
    pub companion: Option<PathBuf>,
    pub manifest: PathBuf,
    pub rows: usize,
}

fn csv_writer(path: &Path, comment: &str, header: &[String]) -> Result<csv::Writer<File>, RunError> {
    let mut f = File::create(path)?;
    writeln!(f, "{comment}")?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(f);
    w.write_record(header)?;
    w.flush()?;
    Ok(w)
}

fn mark_failed(w: csv::Writer<File>, msg: &str) -> Result<(), RunError> {
    let mut f = w.into_inner().map_err(|e| RunError::Io(e.into_error()))?;
    writeln!(f, "# FAILED: {}", msg.replace('\n', " "))?;
    Ok(())
}

/// Runs `cfg` and writes `<out_dir>/<output>` (results), a CSMA companion
/// `<id>_csma.csv` when relevant, and `<id>.manifest.toml`. On failure the
/// rows written so far stay, followed by a `# FAILED:` line, and the
/// manifest records the error.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    source: &str,
    overrides: &Overrides,
    out_dir: &Path,
) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(cfg.output_name());
    if let Some(parent) = csv_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let header: Vec<String> = RESULT_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut main = csv_writer(&csv_path, &schema_comment(), &header)?;
    let companion_path = (cfg.scenario == Scenario::Csma).then(|| out_dir.join(format!("{}_csma.csv", cfg.experiment_id)));
    let mut companion = match &companion_path {
        Some(p) => {
            let n = cfg.csma.as_ref().expect("validated").n_nodes;
            let mut h: Vec<String> = ["experiment_id", "policy", "E[X]", "replication", "loss_probability", "collision_rate"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            h.extend((0..n).map(|i| format!("airtime_{i}")));
            Some(csv_writer(p, &csma_schema_comment(), &h)?)
        }
        None => None,
    };

    let seed = overrides.seed.unwrap_or(cfg.seed);
    let horizon = overrides.horizon.unwrap_or(cfg.horizon);
    let result = Prepared::new(cfg, overrides).and_then(|prep| {
        prep.run_all(|o| {
            main.write_record(o.row.fields())?;
            main.flush()?;
            if let (Some(w), Some(c)) = (companion.as_mut(), &o.csma) {
                let r = &o.row;
                let mut rec = vec![
                    r.experiment_id.clone(),
                    r.policy.clone(),
                    num(r.mean_arrival),
                    r.replication.to_string(),
                    num(c.loss_probability),
                    num(c.collision_rate),
                ];
                rec.extend(c.airtime.iter().map(|a| num(*a)));
                w.write_record(&rec)?;
                w.flush()?;
            }
            Ok(())
        })
    });

    let (status, rows, error) = match &result {
        Ok(n) => ("ok", *n, None),
        Err(e) => ("failed", 0, Some(e.to_string())),
    };
    if let Some(msg) = &error {
        mark_failed(main, msg)?;
        if let Some(w) = companion {
            mark_failed(w, msg)?;
        }
    }
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = Manifest {
        experiment_id: cfg.experiment_id.clone(),
        schema_version: SCHEMA_VERSION,
        config_sha256: config_hash(source),
        seed,
        horizon,
        replications: cfg.replications,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: status.to_string(),
        rows,
        results: name(&csv_path),
        companion: companion_path.as_deref().map(name),
        error,
    };
    let manifest_path = out_dir.join(format!("{}.manifest.toml", cfg.experiment_id));
    let text = toml::to_string(&manifest).map_err(|e| RunError::Manifest(e.to_string()))?;
    std::fs::write(&manifest_path, text)?;
    let rows = result?;
    Ok(RunSummary {
        csv: csv_path,
        companion: companion_path,
        manifest: manifest_path,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(scenario_extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
experiment_id = "small"
scenario = "single-node"
policies = ["greedy", "TO", "unbuffered"]
replications = 2
seed = 7
horizon = 20000
[sweep]
points = [0.3, 0.6]
[rate]
kind = "log"
[arrivals]
dist = "exponential"
[harvest]
dist = "exponential"
mean = 1.0
{scenario_extra}"#
        );
        parse_config(&text, "small").unwrap()
    }

    #[test]
    fn jobs_cover_the_grid_in_order() {
        let cfg = small("");
        let prep = Prepared::new(&cfg, &Overrides::default()).unwrap();
        let jobs = prep.jobs();
        assert_eq!(jobs.len(), 12);
        assert_eq!(jobs[0], Job { policy: 0, point: 0, replication: 0 });
        assert_eq!(jobs[1], Job { policy: 0, point: 0, replication: 1 });
        assert_eq!(jobs[11], Job { policy: 2, point: 1, replication: 1 });
    }

    #[test]
    fn outcomes_arrive_in_job_order() {
        let cfg = small("");
        let prep = Prepared::new(&cfg, &Overrides::default()).unwrap();
        let mut seen = Vec::new();
        let n = prep
            .run_all(|o| {
                seen.push((o.row.policy.clone(), o.row.mean_arrival, o.row.replication));
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 12);
        let expected: Vec<_> = prep
            .jobs()
            .iter()
            .map(|j| (cfg.policies[j.policy].label.clone(), cfg.sweep[j.point], j.replication))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn jobs_match_direct_runs() {
        let cfg = small("");
        let prep = Prepared::new(&cfg, &Overrides::default()).unwrap();
        let a = prep.run_job(Job { policy: 0, point: 1, replication: 1 }).unwrap();
        let b = prep.run_job(Job { policy: 0, point: 1, replication: 1 }).unwrap();
        assert_eq!(a, b);
        let sim = node_config(&cfg, 0, 0.6, None).unwrap().with_seed(8).with_horizon(20000);
        let direct = run(&sim).unwrap();
        assert_eq!(a.row.mean_q, direct.mean_q);
    }

    #[test]
    fn sink_failure_stops_the_run() {
        let cfg = small("");
        let prep = Prepared::new(&cfg, &Overrides::default()).unwrap();
        let mut count = 0;
        let r = prep.run_all(|_| {
            count += 1;
            if count == 3 {
                Err(RunError::Unsupported("disk full".into()))
            } else {
                Ok(())
            }
        });
        assert!(matches!(r, Err(RunError::Unsupported(m)) if m == "disk full"));
        assert_eq!(count, 3);
    }

    #[test]
    fn overrides_replace_seed_and_horizon() {
        let cfg = small("");
        let prep = Prepared::new(&cfg, &Overrides { seed: Some(3), horizon: Some(5000) }).unwrap();
        let o = prep.run_job(Job { policy: 1, point: 0, replication: 0 }).unwrap();
        assert_eq!(o.row.runtime, 5000.0);
        let sim = node_config(&cfg, 1, 0.3, None).unwrap().with_seed(3).with_horizon(5000);
        assert_eq!(o.row.mean_q, run(&sim).unwrap().mean_q);
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
