//! Slotted single-node simulator.
//!
//! A slot runs: observe `(q, E, h)`, deduct the sensing drain `z` (capped at
//! the battery), let the policy pick `T`, serve `min(q, g(h T))` bits, then
//! add the arrivals `x` and harvest `y` and apply the buffer caps. Arrivals
//! of slot `k` are first eligible for service in slot `k + 1`.

mod stability;

pub use stability::{detect_stability, detect_stability_trace, ls_slope, StabilityParams, Verdict};

use rayon::prelude::*;

use crate::dist::DistributionSpec;
use crate::error::{config_err, Result};
use crate::policy::{grid_index, NodeState, PolicySpec};
use crate::rate::RateFunction;
use crate::rng::RandomStream;

/// Streams within a run's seed; kept fixed so that runs with the same seed
/// share arrival, harvest, sensing and fading sequences.
const ARRIVAL_STREAM: u64 = 0;
const HARVEST_STREAM: u64 = 1;
const SENSING_STREAM: u64 = 2;
const FADING_STREAM: u64 = 3;

/// Uniform quantization of `(q, E)` applied after every slot, with the caps
/// as the top grid levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    pub q_step: f64,
    pub e_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSimConfig {
    pub x_dist: DistributionSpec,
    pub y_dist: DistributionSpec,
    pub z_dist: Option<DistributionSpec>,
    pub h_dist: Option<DistributionSpec>,
    pub rf: RateFunction,
    pub policy: PolicySpec,
    pub data_buffer_cap: Option<f64>,
    pub energy_buffer_cap: Option<f64>,
    pub grid: Option<StateGrid>,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub initial: NodeState,
    pub stability: StabilityParams,
    pub record_trace: bool,
}

impl NodeSimConfig {
    /// Unbounded buffers, no fading or sensing, `10^6` slots with 10% warmup.
    pub fn new(x_dist: DistributionSpec, y_dist: DistributionSpec, policy: PolicySpec) -> Self {
        Self {
            x_dist,
            y_dist,
            z_dist: None,
            h_dist: None,
            rf: policy.rf,
            policy,
            data_buffer_cap: None,
            energy_buffer_cap: None,
            grid: None,
            horizon: 1_000_000,
            warmup: 100_000,
            seed: 0,
            initial: NodeState::default(),
            stability: StabilityParams::default(),
            record_trace: false,
        }
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self.warmup = horizon / 10;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_fading(mut self, h: DistributionSpec) -> Self {
        self.h_dist = Some(h);
        self
    }

    pub fn with_arrival_mean(&self, mean: f64) -> Self {
        let mut c = self.clone();
        c.x_dist = self.x_dist.with_mean(mean);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.x_dist.validate()?;
        self.y_dist.validate()?;
        if let Some(z) = &self.z_dist {
            z.validate()?;
        }
        if let Some(h) = &self.h_dist {
            h.validate()?;
        }
        self.rf.validate()?;
        self.policy.validate()?;
        if self.warmup >= self.horizon {
            return config_err(format!(
                "warmup ({}) must be shorter than the horizon ({})",
                self.warmup, self.horizon
            ));
        }
        for (name, cap) in [("data", self.data_buffer_cap), ("energy", self.energy_buffer_cap)] {
            if let Some(c) = cap {
                if !(c > 0.0) {
                    return config_err(format!("{name} buffer cap must be positive, got {c}"));
                }
            }
        }
        if let Some(g) = self.grid {
            if !(g.q_step > 0.0 && g.e_step > 0.0) {
                return config_err("grid steps must be positive");
            }
            if self.data_buffer_cap.is_none() || self.energy_buffer_cap.is_none() {
                return config_err("a quantized state grid needs finite data and energy caps");
            }
        }
        if !self.initial.is_valid() {
            return config_err("initial state must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: NodeState,
    /// Energy the policy spent on transmission.
    pub spent: f64,
    /// Sensing energy actually drawn (`min(z, E)`).
    pub sensed: f64,
    pub served: f64,
    /// Transmit energy beyond what the served bits needed.
    pub wasted: f64,
    /// Harvest lost to a full energy buffer.
    pub overflow: f64,
    /// Bits lost to a full data buffer.
    pub dropped: f64,
    /// Net bits added by rounding `q` to the grid.
    pub q_rounding: f64,
    /// Net energy added by rounding `E` to the grid.
    pub e_rounding: f64,
}

/// One slot of the recurrences. Panics if the policy overdraws the battery.
#[allow(clippy::too_many_arguments)]
pub fn step(
    s: NodeState,
    x: f64,
    y: f64,
    z: f64,
    h: f64,
    policy: &PolicySpec,
    rf: &RateFunction,
    data_cap: Option<f64>,
    energy_cap: Option<f64>,
    grid: Option<StateGrid>,
) -> Transition {
    let sensed = z.min(s.energy).max(0.0);
    let available = NodeState::new(s.q, s.energy - sensed);
    let t = policy.decide(available, h);
    assert!(
        t >= 0.0 && t <= available.energy,
        "policy {:?} spent {t} with only {} available",
        policy.kind,
        available.energy
    );
    let capacity = if h > 0.0 { rf.bits(h * t) } else { 0.0 };
    let served = capacity.min(s.q);
    let wasted = if capacity > s.q && h > 0.0 {
        (t - rf.energy_for(s.q) / h).max(0.0)
    } else {
        0.0
    };
    let mut q = (s.q - capacity).max(0.0) + x;
    let mut e = available.energy - t + y;

    let (mut q_rounding, mut e_rounding) = (0.0, 0.0);
    if let Some(g) = grid {
        // caps are multiples of the steps
        let qr = (q / g.q_step + 0.5).floor() * g.q_step;
        let er = (e / g.e_step + 0.5).floor() * g.e_step;
        q_rounding = qr - q;
        e_rounding = er - e;
        q = qr;
        e = er;
    }
    let mut dropped = 0.0;
    if let Some(cap) = data_cap {
        if q > cap {
            dropped = q - cap;
            q = cap;
        }
    }
    let mut overflow = 0.0;
    if let Some(cap) = energy_cap {
        if e > cap {
            overflow = e - cap;
            e = cap;
        }
    }
    Transition {
        next: NodeState::new(q, e.max(0.0)),
        spent: t,
        sensed,
        served,
        wasted,
        overflow,
        dropped,
        q_rounding,
        e_rounding,
    }
}

/// Cumulative flows over the whole run (warmup included) for bookkeeping
/// checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Totals {
    pub arrived: f64,
    pub served: f64,
    pub dropped: f64,
    pub q_rounding: f64,
    pub harvested: f64,
    pub spent: f64,
    pub sensed: f64,
    pub overflow: f64,
    pub e_rounding: f64,
    pub initial: NodeState,
    pub last: NodeState,
    pub min_energy: f64,
}

impl Totals {
    /// `arrived - served - dropped + rounding - (q_last - q_initial)`,
    /// relative to the arrivals.
    pub fn bit_imbalance(&self) -> f64 {
        let lhs = self.initial.q + self.arrived + self.q_rounding;
        let rhs = self.last.q + self.served + self.dropped;
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }

    pub fn energy_imbalance(&self) -> f64 {
        let lhs = self.initial.energy + self.harvested + self.e_rounding;
        let rhs = self.last.energy + self.spent + self.sensed + self.overflow;
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mean_arrival: f64,
    pub mean_q: f64,
    /// Little's law: `mean_q / E[X]`.
    pub mean_delay: f64,
    pub wasted_energy_rate: f64,
    pub drop_rate: f64,
    /// Mean transmit energy per slot.
    pub mean_spent: f64,
    pub verdict: Verdict,
    pub window_means: Vec<f64>,
    pub totals: Totals,
    /// Per-slot `(q, E, T)` when requested.
    pub trace: Option<Vec<(f64, f64, f64)>>,
}

/// Runs `cfg.horizon` slots; statistics cover the slots after the warmup.
pub fn run(cfg: &NodeSimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let mut xs = RandomStream::new(cfg.seed, ARRIVAL_STREAM);
    let mut ys = RandomStream::new(cfg.seed, HARVEST_STREAM);
    let mut zs = RandomStream::new(cfg.seed, SENSING_STREAM);
    let mut hs = RandomStream::new(cfg.seed, FADING_STREAM);
    let x_s = cfg.x_dist.sampler();
    let y_s = cfg.y_dist.sampler();
    let z_s = cfg.z_dist.as_ref().map(|d| d.sampler());
    let h_s = cfg.h_dist.as_ref().map(|d| d.sampler());

    let measured = cfg.horizon - cfg.warmup;
    let windows = cfg.stability.windows.max(1) as u64;
    let window_len = (measured / windows).max(1);
    // Drop the remainder at the start of the measured span so all windows match.
    let first_window_slot = cfg.horizon - window_len * windows.min(measured);

    let mut s = cfg.initial;
    if let Some(g) = cfg.grid {
        let ql = (cfg.data_buffer_cap.unwrap() / g.q_step).round() as usize + 1;
        let el = (cfg.energy_buffer_cap.unwrap() / g.e_step).round() as usize + 1;
        s = NodeState::new(
            grid_index(s.q, g.q_step, ql) as f64 * g.q_step,
            grid_index(s.energy, g.e_step, el) as f64 * g.e_step,
        );
    }
    let mut totals = Totals {
        initial: s,
        min_energy: s.energy,
        ..Totals::default()
    };
    let mut trace = cfg
        .record_trace
        .then(|| Vec::with_capacity(cfg.horizon as usize));
    let (mut sum_q, mut wasted, mut dropped, mut spent) = (0.0, 0.0, 0.0, 0.0);
    let mut window_means = Vec::with_capacity(windows as usize);
    let mut window_sum = 0.0;

    for k in 0..cfg.horizon {
        let x = x_s.sample(&mut xs);
        let y = y_s.sample(&mut ys);
        let z = z_s.as_ref().map_or(0.0, |d| d.sample(&mut zs));
        let h = h_s.as_ref().map_or(1.0, |d| d.sample(&mut hs));
        let tr = step(
            s,
            x,
            y,
            z,
            h,
            &cfg.policy,
            &cfg.rf,
            cfg.data_buffer_cap,
            cfg.energy_buffer_cap,
            cfg.grid,
        );
        if let Some(t) = trace.as_mut() {
            t.push((s.q, s.energy, tr.spent));
        }
        if k >= cfg.warmup {
            sum_q += s.q;
            wasted += tr.wasted + tr.overflow;
            dropped += tr.dropped;
            spent += tr.spent;
        }
        if k >= first_window_slot {
            window_sum += s.q;
            if (k - first_window_slot + 1).is_multiple_of(window_len) {
                window_means.push(window_sum / window_len as f64);
                window_sum = 0.0;
            }
        }
        totals.arrived += x;
        totals.served += tr.served;
        totals.dropped += tr.dropped;
        totals.q_rounding += tr.q_rounding;
        totals.harvested += y;
        totals.spent += tr.spent;
        totals.sensed += tr.sensed;
        totals.overflow += tr.overflow;
        totals.e_rounding += tr.e_rounding;
        s = tr.next;
        totals.min_energy = totals.min_energy.min(s.energy);
    }
    totals.last = s;

    let n = measured as f64;
    let mean_arrival = cfg.x_dist.exact_mean();
    let mean_q = sum_q / n;
    let verdict = detect_stability(&window_means, window_len as usize, mean_arrival, &cfg.stability);
    Ok(SimResult {
        mean_arrival,
        mean_q,
        mean_delay: if mean_arrival > 0.0 { mean_q / mean_arrival } else { 0.0 },
        wasted_energy_rate: wasted / n,
        drop_rate: dropped / n,
        mean_spent: spent / n,
        verdict,
        window_means,
        totals,
        trace,
    })
}

/// One run per arrival mean, all with the template's seed so that every
/// policy and load sees the same underlying random numbers.
pub fn sweep(template: &NodeSimConfig, arrival_means: &[f64]) -> Result<Vec<SimResult>> {
    if arrival_means.is_empty() {
        return config_err("sweep needs at least one arrival mean");
    }
    arrival_means
        .par_iter()
        .map(|m| run(&template.with_arrival_mean(*m)))
        .collect()
}

/// Bisection for the largest arrival mean the policy keeps stable, between
/// `lo` (expected stable) and `hi` (expected not stable). Non-stable verdicts
/// count as unstable.
pub fn stability_boundary(template: &NodeSimConfig, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let stable = |m: f64| -> Result<bool> {
        Ok(run(&template.with_arrival_mean(m))?.verdict == Verdict::Stable)
    };
    let (mut lo, mut hi) = (lo, hi);
    if !stable(lo)? {
        return Ok(lo);
    }
    if stable(hi)? {
        return Ok(hi);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;

    fn ln1p() -> RateFunction {
        RateFunction::natural_log(1.0)
    }

    #[test]
    fn one_step_arithmetic() {
        let p = PolicySpec::new(PolicyKind::To, ln1p(), 1.0).with_epsilon(0.01);
        let tr = step(NodeState::new(5.0, 2.0), 1.0, 1.0, 0.0, 1.0, &p, &ln1p(), None, None, None);
        assert!((tr.spent - 0.99).abs() < 1e-15);
        assert!((tr.next.q - (5.0 - 1.99f64.ln() + 1.0)).abs() < 1e-12);
        assert!((tr.next.q - 5.3119).abs() < 1e-4);
        assert!((tr.next.energy - 2.01).abs() < 1e-12);
    }

    #[test]
    fn empty_queue_is_absorbing_without_input() {
        let p = PolicySpec::new(PolicyKind::Greedy, ln1p(), 1.0);
        let tr = step(NodeState::new(0.0, 3.0), 0.0, 0.0, 0.0, 1.0, &p, &ln1p(), None, None, None);
        assert_eq!(tr.next.q, 0.0);
        assert_eq!(tr.next.energy, 3.0);
    }

    #[test]
    fn energy_cap_clamps_and_counts_overflow() {
        let p = PolicySpec::new(PolicyKind::Greedy, ln1p(), 1.0);
        let tr = step(NodeState::new(0.0, 1.0), 0.0, 5.0, 0.0, 1.0, &p, &ln1p(), None, Some(1.0), None);
        assert_eq!(tr.next.energy, 1.0);
        assert_eq!(tr.overflow, 5.0);
    }

    #[test]
    fn sensing_has_priority_over_transmission() {
        let p = PolicySpec::new(PolicyKind::To, ln1p(), 1.0).with_epsilon(0.01);
        let tr = step(NodeState::new(4.0, 0.3), 0.0, 0.0, 0.5, 1.0, &p, &ln1p(), None, None, None);
        assert_eq!(tr.sensed, 0.3);
        assert_eq!(tr.spent, 0.0);
        assert_eq!(tr.next.q, 4.0);
    }

    #[test]
    fn data_cap_drops_excess() {
        let p = PolicySpec::new(PolicyKind::Greedy, ln1p(), 1.0);
        let tr = step(NodeState::new(9.0, 0.0), 3.0, 0.0, 0.0, 1.0, &p, &ln1p(), Some(10.0), None, None);
        assert_eq!(tr.next.q, 10.0);
        assert_eq!(tr.dropped, 2.0);
    }

    #[test]
    fn to_wastes_energy_on_short_queue() {
        let p = PolicySpec::new(PolicyKind::To, ln1p(), 1.0).with_epsilon(0.01);
        let tr = step(NodeState::new(0.1, 5.0), 0.0, 0.0, 0.0, 1.0, &p, &ln1p(), None, None, None);
        assert!((tr.wasted - (0.99 - 0.1f64.exp_m1())).abs() < 1e-12);
        assert_eq!(tr.served, 0.1);
    }

    #[test]
    #[should_panic]
    fn overdrawing_policy_panics() {
        let mut p = PolicySpec::new(PolicyKind::Tabular, ln1p(), 1.0);
        p.table = Some(std::sync::Arc::new(crate::policy::PolicyTable {
            q_step: 1.0,
            e_step: 1.0,
            q_levels: 1,
            e_levels: 1,
            actions: vec![5.0],
        }));
        // Tabular clamps to the battery, so force an overdraw through a
        // negative battery instead.
        step(NodeState::new(1.0, -1.0), 0.0, 0.0, 0.0, 1.0, &p, &ln1p(), None, None, None);
    }

    #[test]
    fn zero_arrivals_give_empty_queue() {
        let p = PolicySpec::new(PolicyKind::To, ln1p(), 1.0).with_epsilon(0.01);
        let cfg = NodeSimConfig::new(DistributionSpec::exponential(0.0), DistributionSpec::exponential(1.0), p)
            .with_horizon(20_000);
        let r = run(&cfg).unwrap();
        assert_eq!(r.mean_q, 0.0);
        assert_eq!(r.verdict, Verdict::Stable);
        assert_eq!(r.mean_delay, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = PolicySpec::new(PolicyKind::Mto, ln1p(), 1.0);
        let cfg = NodeSimConfig::new(DistributionSpec::exponential(0.5), DistributionSpec::exponential(1.0), p)
            .with_horizon(50_000)
            .with_seed(9);
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let p = PolicySpec::new(PolicyKind::Greedy, ln1p(), 1.0);
        let mut cfg = NodeSimConfig::new(DistributionSpec::exponential(0.5), DistributionSpec::exponential(1.0), p);
        cfg.warmup = cfg.horizon;
        assert!(run(&cfg).is_err());
        cfg.warmup = 0;
        cfg.data_buffer_cap = Some(0.0);
        assert!(run(&cfg).is_err());
        assert!(sweep(&cfg, &[]).is_err());
    }
}
