//! Centralized slotted MAC: one node transmits per slot over orthogonal
//! channels.
//!
//! Schedulers pick the transmitting node from the queue lengths and the
//! channel gains of the slot. Nodes that are not scheduled only accumulate
//! arrivals and harvest. Each node's share of slots is tracked by an LMS
//! estimate that sets its per-transmission energy `(E[Y] - eps) / share`.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::dist::DistributionSpec;
use crate::error::{config_err, Error, Result};
use crate::node::{detect_stability, SimResult, StabilityParams, Totals, Verdict};
use crate::policy::{water_filling, NodeState};
use crate::rate::RateFunction;
use crate::rng::RandomStream;

/// Node `i` draws arrivals, harvest and fading from streams
/// `4 i + {0, 1, 3}`, so node 0 sees the same numbers as a single-node run.
const STREAMS_PER_NODE: u64 = 4;
const SCHEDULER_STREAM: u64 = 1 << 32;
const WF_INIT_STREAM: u64 = (1 << 32) + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MacNode {
    pub id: usize,
    pub state: NodeState,
    pub x_dist: DistributionSpec,
    pub y_dist: DistributionSpec,
    pub h_dist: DistributionSpec,
    pub rf: RateFunction,
    pub alpha_hat: f64,
}

impl MacNode {
    pub fn new(
        id: usize,
        x_dist: DistributionSpec,
        y_dist: DistributionSpec,
        h_dist: DistributionSpec,
        rf: RateFunction,
    ) -> Self {
        Self {
            id,
            state: NodeState::default(),
            x_dist,
            y_dist,
            h_dist,
            rf,
            alpha_hat: 1.0,
        }
    }
}

/// `n` identical nodes with the LMS estimates at `1/n`.
pub fn symmetric_nodes(
    n: usize,
    x_dist: DistributionSpec,
    y_dist: DistributionSpec,
    h_dist: DistributionSpec,
    rf: RateFunction,
) -> Vec<MacNode> {
    (0..n)
        .map(|id| {
            let mut node = MacNode::new(id, x_dist.clone(), y_dist.clone(), h_dist.clone(), rf);
            node.alpha_hat = 1.0 / n as f64;
            node
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    /// Fixed time shares, slots spread by smooth weighted round robin.
    Tdma,
    /// Best channel gain.
    MaxGain,
    /// Largest `q * rate`.
    ToSched,
    /// Largest `min(rate, q)`.
    GreedySched,
    /// Greedy until some queue exceeds the threshold, then `q * rate` among
    /// the queues above it.
    ModifiedGreedy,
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Tdma => "tdma",
            Self::MaxGain => "max-gain",
            Self::ToSched => "to-sched",
            Self::GreedySched => "greedy-sched",
            Self::ModifiedGreedy => "modified-greedy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tdma" => Self::Tdma,
            "max-gain" => Self::MaxGain,
            "to-sched" => Self::ToSched,
            "greedy-sched" => Self::GreedySched,
            "modified-greedy" => Self::ModifiedGreedy,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSpec {
    pub kind: SchedulerKind,
    /// TDMA shares; uniform when absent.
    pub alphas: Option<Vec<f64>>,
    /// Queue threshold for the modified greedy rule; defaults to ten times
    /// the mean per-node arrivals per slot.
    pub threshold: Option<f64>,
    /// Energy margin below `E[Y]`; defaults to `0.01 E[Y]` per node.
    pub epsilon: Option<f64>,
    pub use_waterfilling: bool,
    pub lms_mu: f64,
    pub lms_update_period: u64,
    /// Channel gains remembered per node for the water level.
    pub wf_samples: usize,
}

impl SchedulerSpec {
    pub fn new(kind: SchedulerKind) -> Self {
        Self {
            kind,
            alphas: None,
            threshold: None,
            epsilon: None,
            use_waterfilling: false,
            lms_mu: 0.01,
            lms_update_period: 40,
            wf_samples: 1000,
        }
    }

    pub fn with_waterfilling(mut self, on: bool) -> Self {
        self.use_waterfilling = on;
        self
    }

    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alphas = Some(alphas);
        self
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if !(self.lms_mu > 0.0 && self.lms_mu < 1.0) {
            return config_err(format!("LMS step must lie in (0, 1), got {}", self.lms_mu));
        }
        if self.lms_update_period == 0 {
            return config_err("LMS update period must be positive");
        }
        if let Some(l) = self.threshold {
            if !(l > 0.0) {
                return config_err(format!("queue threshold must be positive, got {l}"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return config_err(format!("epsilon must be >= 0, got {e}"));
            }
        }
        if let Some(a) = &self.alphas {
            if a.len() != n_nodes {
                return config_err(format!("{} TDMA shares for {n_nodes} nodes", a.len()));
            }
            if a.iter().any(|&x| !(x >= 0.0)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return config_err("TDMA shares must be nonnegative and sum to 1");
            }
        }
        if self.use_waterfilling && self.wf_samples < 2 {
            return config_err("water filling needs at least two remembered gains");
        }
        Ok(())
    }
}

/// Per-node stability margin `alpha g(E[Y] / alpha) - E[X]` under TDMA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdmaMargin {
    pub margin: f64,
    pub feasible: bool,
}

pub fn tdma_feasible(nodes: &[MacNode], alphas: &[f64]) -> Result<Vec<TdmaMargin>> {
    if nodes.len() != alphas.len() {
        return config_err("one TDMA share per node");
    }
    if alphas.iter().any(|&a| !(a >= 0.0)) || (alphas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return config_err("TDMA shares must be nonnegative and sum to 1");
    }
    Ok(nodes
        .iter()
        .zip(alphas)
        .map(|(n, &a)| {
            let x = n.x_dist.exact_mean();
            let bound = if a > 0.0 {
                a * n.rf.bits(n.y_dist.exact_mean() / a)
            } else {
                0.0
            };
            let margin = bound - x;
            TdmaMargin {
                margin,
                feasible: margin > 0.0 || x == 0.0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmaAllocation {
    pub alphas: Vec<f64>,
    pub margins: Vec<TdmaMargin>,
    pub feasible: bool,
}

/// The smallest per-node margin; the default search objective.
pub fn min_margin(m: &[TdmaMargin]) -> f64 {
    m.iter().map(|x| x.margin).fold(f64::INFINITY, f64::min)
}

/// Grid search with step 0.01 over the simplex for the shares maximizing
/// `objective`. Up to six nodes.
pub fn tdma_search(
    nodes: &[MacNode],
    objective: &(dyn Fn(&[TdmaMargin]) -> f64 + Sync),
) -> Result<TdmaAllocation> {
    let n = nodes.len();
    if n == 0 || n > 6 {
        return config_err(format!("TDMA search supports 1 to 6 nodes, got {n}"));
    }
    const STEPS: usize = 100;
    // Enumerate compositions of STEPS into n parts; the first part is split
    // across threads.
    fn rest(
        nodes: &[MacNode],
        objective: &(dyn Fn(&[TdmaMargin]) -> f64 + Sync),
        parts: &mut Vec<usize>,
        left: usize,
        slots: usize,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if slots == 1 {
            parts.push(left);
            let alphas: Vec<f64> = parts.iter().map(|&p| p as f64 / STEPS as f64).collect();
            let m = tdma_feasible(nodes, &alphas).expect("valid shares");
            let score = objective(&m);
            if best.as_ref().is_none_or(|b| score > b.0) {
                *best = Some((score, parts.clone()));
            }
            parts.pop();
            return;
        }
        for p in 0..=left {
            parts.push(p);
            rest(nodes, objective, parts, left - p, slots - 1, best);
            parts.pop();
        }
    }
    let best = (0..=STEPS)
        .into_par_iter()
        .filter_map(|first| {
            let mut parts = vec![first];
            let mut best = None;
            if n == 1 {
                if first == STEPS {
                    best = Some((objective(&tdma_feasible(nodes, &[1.0]).ok()?), parts));
                }
                return best;
            }
            rest(nodes, objective, &mut parts, STEPS - first, n - 1, &mut best);
            best
        })
        .reduce_with(|a, b| if b.0 > a.0 { b } else { a })
        .ok_or_else(|| Error::Config("empty TDMA search".into()))?;
    let alphas: Vec<f64> = best.1.iter().map(|&p| p as f64 / STEPS as f64).collect();
    let margins = tdma_feasible(nodes, &alphas)?;
    let feasible = margins.iter().all(|m| m.feasible);
    Ok(TdmaAllocation {
        alphas,
        margins,
        feasible,
    })
}

/// `alpha - mu (alpha - observed)`.
pub fn lms_update(alpha_hat: f64, observed: f64, mu: f64) -> f64 {
    alpha_hat - mu * (alpha_hat - observed)
}

/// What the scheduler sees of one node in the current slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub q: f64,
    pub energy: f64,
    pub h: f64,
    pub alpha_hat: f64,
    pub mean_harvest: f64,
    pub epsilon: f64,
    pub rf: RateFunction,
    /// Water level when water filling is on.
    pub h0: Option<f64>,
}

impl Candidate {
    /// Energy per transmission, `(E[Y] - eps) / alpha`.
    pub fn budget(&self) -> f64 {
        (self.mean_harvest - self.epsilon).max(0.0) / self.alpha_hat.max(1e-9)
    }

    /// Energy the node would spend if picked, before the battery clamp.
    pub fn nominal_energy(&self) -> f64 {
        match self.h0 {
            Some(h0) => water_filling(h0, self.h),
            None => self.budget(),
        }
    }

    pub fn rate(&self) -> f64 {
        if self.h <= 0.0 {
            0.0
        } else {
            self.rf.bits(self.h * self.nominal_energy())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub node: usize,
    pub energy: f64,
}

/// Energy for the chosen node: nominal, clamped to the battery, and with
/// water filling cut back to what the queue can use.
fn transmit_energy(c: &Candidate) -> f64 {
    let mut t = c.nominal_energy().min(c.energy);
    if c.h0.is_some() && c.h > 0.0 {
        t = t.min(c.rf.energy_for(c.q) / c.h);
    }
    t.max(0.0)
}

fn argmax_random(scores: &[(usize, f64)], rs: &mut RandomStream) -> Option<usize> {
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return None;
    }
    let ties: Vec<usize> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    Some(if ties.len() == 1 {
        ties[0]
    } else {
        ties[rs.index(ties.len())]
    })
}

/// Picks the transmitting node for an opportunistic scheduler. `None` means
/// no node has a positive score and the slot stays idle. TDMA slots are
/// assigned by [`run_mac`] and are not handled here.
pub fn schedule_slot(
    cands: &[Candidate],
    kind: SchedulerKind,
    threshold: f64,
    rs: &mut RandomStream,
) -> Option<Selection> {
    let scores: Vec<(usize, f64)> = match kind {
        SchedulerKind::Tdma => return None,
        SchedulerKind::MaxGain => cands.iter().enumerate().map(|(i, c)| (i, c.h)).collect(),
        SchedulerKind::ToSched => cands.iter().enumerate().map(|(i, c)| (i, c.q * c.rate())).collect(),
        SchedulerKind::GreedySched => cands
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.rate().min(c.q)))
            .collect(),
        SchedulerKind::ModifiedGreedy => {
            if cands.iter().any(|c| c.q > threshold) {
                cands
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.q > threshold)
                    .map(|(i, c)| (i, c.q * c.rate()))
                    .collect()
            } else {
                cands
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, c.rate().min(c.q)))
                    .collect()
            }
        }
    };
    let node = argmax_random(&scores, rs)?;
    Some(Selection {
        node,
        energy: transmit_energy(&cands[node]),
    })
}

/// Exact water level for equally weighted gains: the `h0` with
/// `mean((1/h0 - 1/h)^+) = budget`. Sorts `gains` in place.
pub fn water_level(gains: &mut [f64], budget: f64) -> Result<f64> {
    if !(budget > 0.0) || gains.is_empty() {
        return config_err("water level needs a positive budget and some gains");
    }
    gains.sort_by(|a, b| b.total_cmp(a));
    if !(gains[0] > 0.0) {
        return config_err("all channel gains are zero");
    }
    let m = gains.len() as f64;
    let mut inv_sum = 0.0;
    for k in 0..gains.len() {
        if !(gains[k] > 0.0) {
            break;
        }
        inv_sum += 1.0 / gains[k];
        let h0 = (k + 1) as f64 / (m * budget + inv_sum);
        let next = gains.get(k + 1).copied().unwrap_or(0.0);
        if h0 >= next {
            return Ok(h0);
        }
    }
    let k = gains.iter().filter(|&&g| g > 0.0).count();
    Ok(k as f64 / (m * budget + inv_sum))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacConfig {
    pub nodes: Vec<MacNode>,
    pub spec: SchedulerSpec,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub stability: StabilityParams,
}

impl MacConfig {
    pub fn new(nodes: Vec<MacNode>, spec: SchedulerSpec) -> Self {
        Self {
            nodes,
            spec,
            horizon: 1_000_000,
            warmup: 100_000,
            seed: 0,
            stability: StabilityParams::default(),
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

    /// Same configuration with every node's arrival mean set to `mean`.
    pub fn with_arrival_mean(&self, mean: f64) -> Self {
        let mut c = self.clone();
        for n in &mut c.nodes {
            n.x_dist = n.x_dist.with_mean(mean);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return config_err("MAC needs at least one node");
        }
        for n in &self.nodes {
            n.x_dist.validate()?;
            n.y_dist.validate()?;
            n.h_dist.validate()?;
            n.rf.validate()?;
            if !(n.alpha_hat > 0.0 && n.alpha_hat <= 1.0) {
                return config_err(format!("node {} share estimate must lie in (0, 1]", n.id));
            }
            if !n.state.is_valid() {
                return config_err(format!("node {} has an invalid initial state", n.id));
            }
        }
        self.spec.validate(self.nodes.len())?;
        if self.warmup >= self.horizon {
            return config_err("warmup must be shorter than the horizon");
        }
        Ok(())
    }

    fn epsilon(&self, i: usize) -> f64 {
        self.spec
            .epsilon
            .unwrap_or(0.01 * self.nodes[i].y_dist.exact_mean())
    }

    fn threshold(&self) -> f64 {
        self.spec.threshold.unwrap_or_else(|| {
            10.0 * self.nodes.iter().map(|n| n.x_dist.exact_mean()).sum::<f64>() / self.nodes.len() as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacResult {
    pub nodes: Vec<SimResult>,
    /// Unstable if any node is, stable if all are.
    pub verdict: Verdict,
    pub alpha_hat: Vec<f64>,
    /// Estimates after each LMS update.
    pub alpha_history: Vec<Vec<f64>>,
    /// Fraction of measured slots each node was scheduled.
    pub share: Vec<f64>,
    /// Mean energy per transmission, per node.
    pub energy_per_transmission: Vec<f64>,
    /// Mean of the per-transmission budget `(E[Y] - eps) / alpha` over the
    /// node's transmissions.
    pub mean_budget: Vec<f64>,
    pub idle_slots: u64,
    /// Slots given to a node with an empty battery.
    pub empty_battery_slots: u64,
}

/// Smooth weighted round robin: adds every share to a credit and serves the
/// largest credit, spacing each node's slots evenly.
struct RoundRobin {
    alphas: Vec<f64>,
    credit: Vec<f64>,
}

impl RoundRobin {
    fn new(alphas: Vec<f64>) -> Self {
        let n = alphas.len();
        Self {
            alphas,
            credit: vec![0.0; n],
        }
    }

    fn next(&mut self) -> usize {
        for (c, a) in self.credit.iter_mut().zip(&self.alphas) {
            *c += a;
        }
        let mut best = 0;
        for i in 1..self.credit.len() {
            if self.credit[i] > self.credit[best] {
                best = i;
            }
        }
        self.credit[best] -= 1.0;
        best
    }
}

/// Runs the MAC for `cfg.horizon` slots.
pub fn run_mac(cfg: &MacConfig) -> Result<MacResult> {
    cfg.validate()?;
    let n = cfg.nodes.len();
    let spec = &cfg.spec;
    let mut xs: Vec<RandomStream> = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let base = STREAMS_PER_NODE * i;
        xs.push(RandomStream::new(cfg.seed, base));
        ys.push(RandomStream::new(cfg.seed, base + 1));
        hs.push(RandomStream::new(cfg.seed, base + 3));
    }
    let mut sched_rs = RandomStream::new(cfg.seed, SCHEDULER_STREAM);
    let x_s: Vec<_> = cfg.nodes.iter().map(|d| d.x_dist.sampler()).collect();
    let y_s: Vec<_> = cfg.nodes.iter().map(|d| d.y_dist.sampler()).collect();
    let h_s: Vec<_> = cfg.nodes.iter().map(|d| d.h_dist.sampler()).collect();
    let mean_y: Vec<f64> = cfg.nodes.iter().map(|d| d.y_dist.exact_mean()).collect();
    let eps: Vec<f64> = (0..n).map(|i| cfg.epsilon(i)).collect();
    let threshold = cfg.threshold();

    let tdma_alphas = spec.alphas.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut rr = RoundRobin::new(tdma_alphas.clone());
    let mut alpha_hat: Vec<f64> = cfg.nodes.iter().map(|d| d.alpha_hat).collect();
    let mut alpha_history = Vec::new();
    // The share that sets each node's energy per transmission.
    let share_for_budget = |i: usize, alpha_hat: &[f64]| -> f64 {
        if spec.kind == SchedulerKind::Tdma {
            tdma_alphas[i]
        } else {
            alpha_hat[i]
        }
    };

    // Gains seen in each node's own slots, seeded from the fading law.
    let mut gains: Vec<VecDeque<f64>> = Vec::new();
    let mut h0: Vec<Option<f64>> = vec![None; n];
    if spec.use_waterfilling {
        for i in 0..n {
            let mut rs = RandomStream::new(cfg.seed, WF_INIT_STREAM + i as u64);
            let d: VecDeque<f64> = (0..spec.wf_samples).map(|_| h_s[i].sample(&mut rs)).collect();
            gains.push(d);
        }
    }
    let refresh_h0 = |gains: &[VecDeque<f64>], alpha_hat: &[f64], h0: &mut [Option<f64>]| -> Result<()> {
        for i in 0..n {
            let budget = (mean_y[i] - eps[i]).max(0.0) / share_for_budget(i, alpha_hat).max(1e-9);
            let mut g: Vec<f64> = gains[i].iter().copied().collect();
            h0[i] = if budget > 0.0 { Some(water_level(&mut g, budget)?) } else { Some(f64::INFINITY) };
        }
        Ok(())
    };
    if spec.use_waterfilling {
        refresh_h0(&gains, &alpha_hat, &mut h0)?;
    }

    let measured = cfg.horizon - cfg.warmup;
    let windows = cfg.stability.windows.max(1) as u64;
    let window_len = (measured / windows).max(1);
    let first_window_slot = cfg.horizon - window_len * windows.min(measured);

    let mut state: Vec<NodeState> = cfg.nodes.iter().map(|d| d.state).collect();
    let mut totals: Vec<Totals> = state
        .iter()
        .map(|s| Totals {
            initial: *s,
            min_energy: s.energy,
            ..Totals::default()
        })
        .collect();
    let mut sum_q = vec![0.0; n];
    let mut wasted = vec![0.0; n];
    let mut spent = vec![0.0; n];
    let mut picks = vec![0u64; n];
    let mut tx_budget = vec![0.0; n];
    let mut window_picks = vec![0u64; n];
    let mut window_sum = vec![0.0; n];
    let mut window_means: Vec<Vec<f64>> = vec![Vec::with_capacity(windows as usize); n];
    let (mut idle_slots, mut empty_battery_slots) = (0u64, 0u64);
    let mut cands = Vec::with_capacity(n);
    let mut h = vec![0.0; n];

    for k in 0..cfg.horizon {
        for i in 0..n {
            h[i] = h_s[i].sample(&mut hs[i]);
        }
        cands.clear();
        for i in 0..n {
            cands.push(Candidate {
                q: state[i].q,
                energy: state[i].energy,
                h: h[i],
                alpha_hat: share_for_budget(i, &alpha_hat),
                mean_harvest: mean_y[i],
                epsilon: eps[i],
                rf: cfg.nodes[i].rf,
                h0: h0[i],
            });
        }
        let sel = if spec.kind == SchedulerKind::Tdma {
            let node = rr.next();
            Some(Selection {
                node,
                energy: transmit_energy(&cands[node]),
            })
        } else {
            schedule_slot(&cands, spec.kind, threshold, &mut sched_rs)
        };

        let measuring = k >= cfg.warmup;
        match sel {
            Some(s) => {
                let i = s.node;
                window_picks[i] += 1;
                if spec.use_waterfilling {
                    gains[i].pop_front();
                    gains[i].push_back(h[i]);
                }
                if state[i].energy <= 0.0 {
                    empty_battery_slots += measuring as u64;
                }
                let c = &cands[i];
                let capacity = if h[i] > 0.0 { c.rf.bits(h[i] * s.energy) } else { 0.0 };
                let served = capacity.min(state[i].q);
                let waste = if capacity > state[i].q && h[i] > 0.0 {
                    (s.energy - c.rf.energy_for(state[i].q) / h[i]).max(0.0)
                } else {
                    0.0
                };
                state[i].q -= served;
                state[i].energy -= s.energy;
                totals[i].served += served;
                totals[i].spent += s.energy;
                if measuring {
                    picks[i] += 1;
                    spent[i] += s.energy;
                    wasted[i] += waste;
                    tx_budget[i] += c.budget();
                }
            }
            None => idle_slots += measuring as u64,
        }

        for i in 0..n {
            if measuring {
                sum_q[i] += cands[i].q;
            }
            if k >= first_window_slot {
                window_sum[i] += cands[i].q;
            }
            let x = x_s[i].sample(&mut xs[i]);
            let y = y_s[i].sample(&mut ys[i]);
            state[i].q += x;
            state[i].energy = (state[i].energy + y).max(0.0);
            totals[i].arrived += x;
            totals[i].harvested += y;
            totals[i].min_energy = totals[i].min_energy.min(state[i].energy);
        }
        if k >= first_window_slot && (k - first_window_slot + 1).is_multiple_of(window_len) {
            for i in 0..n {
                window_means[i].push(window_sum[i] / window_len as f64);
                window_sum[i] = 0.0;
            }
        }

        if (k + 1) % spec.lms_update_period == 0 {
            for i in 0..n {
                let observed = window_picks[i] as f64 / spec.lms_update_period as f64;
                alpha_hat[i] = lms_update(alpha_hat[i], observed, spec.lms_mu);
                window_picks[i] = 0;
            }
            alpha_history.push(alpha_hat.clone());
            if spec.use_waterfilling {
                refresh_h0(&gains, &alpha_hat, &mut h0)?;
            }
        }
    }

    let m = measured as f64;
    let mut results = Vec::with_capacity(n);
    for i in 0..n {
        totals[i].last = state[i];
        let mean_arrival = cfg.nodes[i].x_dist.exact_mean();
        let mean_q = sum_q[i] / m;
        let verdict = detect_stability(&window_means[i], window_len as usize, mean_arrival, &cfg.stability);
        results.push(SimResult {
            mean_arrival,
            mean_q,
            mean_delay: if mean_arrival > 0.0 { mean_q / mean_arrival } else { 0.0 },
            wasted_energy_rate: wasted[i] / m,
            drop_rate: 0.0,
            mean_spent: spent[i] / m,
            verdict,
            window_means: std::mem::take(&mut window_means[i]),
            totals: totals[i],
            trace: None,
        });
    }
    let verdict = if results.iter().any(|r| r.verdict == Verdict::Unstable) {
        Verdict::Unstable
    } else if results.iter().all(|r| r.verdict == Verdict::Stable) {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    };
    Ok(MacResult {
        nodes: results,
        verdict,
        alpha_hat,
        alpha_history,
        share: picks.iter().map(|&p| p as f64 / m).collect(),
        energy_per_transmission: (0..n)
            .map(|i| if picks[i] > 0 { spent[i] / picks[i] as f64 } else { 0.0 })
            .collect(),
        mean_budget: (0..n)
            .map(|i| if picks[i] > 0 { tx_budget[i] / picks[i] as f64 } else { 0.0 })
            .collect(),
        idle_slots,
        empty_battery_slots,
    })
}

/// Bisection on the common arrival mean for the largest load the MAC keeps
/// stable; non-stable verdicts count as unstable.
pub fn mac_stability_boundary(template: &MacConfig, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let stable = |m: f64| -> Result<bool> { Ok(run_mac(&template.with_arrival_mean(m))?.verdict == Verdict::Stable) };
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
    use crate::policy::solve_h0_atoms;
    use proptest::prelude::*;

    fn ln1p() -> RateFunction {
        RateFunction::natural_log(1.0)
    }

    fn sym(n: usize, x: f64) -> Vec<MacNode> {
        symmetric_nodes(
            n,
            DistributionSpec::exponential(x),
            DistributionSpec::exponential(1.0),
            DistributionSpec::exponential(1.0),
            ln1p(),
        )
    }

    fn cand(q: f64, h: f64) -> Candidate {
        Candidate {
            q,
            energy: 100.0,
            h,
            alpha_hat: 0.5,
            mean_harvest: 1.0,
            epsilon: 0.01,
            rf: ln1p(),
            h0: None,
        }
    }

    #[test]
    fn tdma_bound_examples() {
        let m = tdma_feasible(&sym(3, 0.0), &[1.0 / 3.0; 3]).unwrap();
        assert!(m.iter().all(|x| x.feasible));
        assert!((m[0].margin - 4f64.ln() / 3.0).abs() < 1e-12);
        let mut lin = sym(2, 0.5);
        for n in &mut lin {
            n.rf = RateFunction::linear(3.0);
        }
        for a in [0.2, 0.5] {
            let m = tdma_feasible(&lin, &[a, 1.0 - a]).unwrap();
            assert!((m[0].margin - 2.5).abs() < 1e-12);
        }
        let m = tdma_feasible(&sym(2, 0.3), &[0.0, 1.0]).unwrap();
        assert!(!m[0].feasible && m[1].feasible);
        assert!(tdma_feasible(&sym(2, 0.3), &[0.6, 0.6]).is_err());
    }

    #[test]
    fn tdma_search_examples() {
        let a = tdma_search(&sym(3, 0.3), &min_margin).unwrap();
        assert!(a.alphas.iter().all(|x| (x - 1.0 / 3.0).abs() <= 0.01 + 1e-12));
        assert!(a.feasible);
        let mut two = sym(2, 0.1);
        two[1].x_dist = DistributionSpec::exponential(0.4);
        let a = tdma_search(&two, &min_margin).unwrap();
        assert!(a.alphas[1] > a.alphas[0]);
        let a = tdma_search(&sym(1, 0.3), &min_margin).unwrap();
        assert_eq!(a.alphas, vec![1.0]);
        let a = tdma_search(&sym(2, 5.0), &min_margin).unwrap();
        assert!(!a.feasible && min_margin(&a.margins) < 0.0);
    }

    #[test]
    fn schedulers_disagree_on_worked_example() {
        let c = [cand(10.0, 0.5), cand(2.0, 2.2)];
        let to_scores: Vec<f64> = c.iter().map(|c| c.q * c.rate()).collect();
        assert!((to_scores[0] - 10.0 * 1.99f64.ln()).abs() < 1e-12);
        assert!((to_scores[0] - 6.881).abs() < 1e-3 && (to_scores[1] - 3.356).abs() < 1e-3);
        let mut rs = RandomStream::new(1, 0);
        assert_eq!(schedule_slot(&c, SchedulerKind::ToSched, 1e9, &mut rs).unwrap().node, 0);
        let g = schedule_slot(&c, SchedulerKind::GreedySched, 1e9, &mut rs).unwrap();
        assert_eq!(g.node, 1);
        assert!((g.energy - 1.98).abs() < 1e-12);
        // Modified greedy switches to the queue-weighted rule above the threshold.
        assert_eq!(schedule_slot(&c, SchedulerKind::ModifiedGreedy, 5.0, &mut rs).unwrap().node, 0);
        assert_eq!(schedule_slot(&c, SchedulerKind::ModifiedGreedy, 50.0, &mut rs).unwrap().node, 1);
    }

    #[test]
    fn empty_queues_leave_the_slot_idle() {
        let c = [cand(0.0, 1.0), cand(0.0, 3.0)];
        let mut rs = RandomStream::new(1, 0);
        assert!(schedule_slot(&c, SchedulerKind::GreedySched, 1e9, &mut rs).is_none());
        assert!(schedule_slot(&c, SchedulerKind::ToSched, 1e9, &mut rs).is_none());
    }

    #[test]
    fn max_gain_splits_ties_evenly() {
        let c = [cand(1.0, 5.0), cand(1.0, 5.0)];
        let mut rs = RandomStream::new(9, 0);
        let n = 20_000;
        let first = (0..n)
            .filter(|_| schedule_slot(&c, SchedulerKind::MaxGain, 1e9, &mut rs).unwrap().node == 0)
            .count() as f64;
        let expect = n as f64 / 2.0;
        let chi2 = 2.0 * (first - expect).powi(2) / expect;
        // 99.9% point of chi-square with one degree of freedom.
        assert!(chi2 < 10.83, "chi2 {chi2}");
    }

    #[test]
    fn battery_and_waterfilling_limits() {
        let mut c = cand(10.0, 1.0);
        c.energy = 0.5;
        let mut rs = RandomStream::new(1, 0);
        let s = schedule_slot(&[c], SchedulerKind::ToSched, 1e9, &mut rs).unwrap();
        assert_eq!(s.energy, 0.5);
        let mut c = cand(0.1, 2.0);
        c.h0 = Some(0.5);
        let s = schedule_slot(&[c], SchedulerKind::GreedySched, 1e9, &mut rs).unwrap();
        // Water filling would spend 1.5; the queue only needs (e^0.1 - 1) / 2.
        assert!((s.energy - 0.1f64.exp_m1() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lms_examples() {
        assert!((lms_update(1.0 / 3.0, 0.4, 0.01) - 0.334).abs() < 1e-12);
        assert_eq!(lms_update(0.3, 0.3, 0.01), 0.3);
        let mut a = 0.5;
        for n in 1..=300 {
            a = lms_update(a, 0.25, 0.01);
            let closed = 0.25 + 0.25 * 0.99f64.powi(n);
            assert!((a - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn water_level_matches_bisection() {
        let atoms = [(0.1, 0.1), (0.5, 0.3), (1.0, 0.4), (2.2, 0.2)];
        // Ten equally weighted copies reproduce the four-atom law.
        let mut gains = vec![0.1, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 2.2, 2.2];
        for budget in [0.05, 0.5, 0.99, 3.0, 20.0] {
            let a = water_level(&mut gains, budget).unwrap();
            let b = solve_h0_atoms(&atoms, budget).unwrap();
            assert!((a - b).abs() < 1e-10 * b, "{a} vs {b} at {budget}");
        }
    }

    #[test]
    fn round_robin_spreads_slots() {
        let mut rr = RoundRobin::new(vec![0.45, 0.35, 0.2]);
        let mut counts = [0; 3];
        for _ in 0..40 {
            counts[rr.next()] += 1;
        }
        assert_eq!(counts, [18, 14, 8]);
    }

    #[test]
    fn single_node_reduces_to_node_sim() {
        use crate::node::{run, NodeSimConfig};
        use crate::policy::{PolicyKind, PolicySpec};
        let x = DistributionSpec::exponential(0.5);
        let y = DistributionSpec::exponential(1.0);
        let nodes = vec![MacNode::new(0, x.clone(), y.clone(), DistributionSpec::deterministic(1.0), ln1p())];
        let mac = run_mac(&MacConfig::new(nodes, SchedulerSpec::new(SchedulerKind::ToSched)).with_horizon(200_000))
            .unwrap();
        let node = run(
            &NodeSimConfig::new(x, y, PolicySpec::new(PolicyKind::To, ln1p(), 1.0))
                .with_horizon(200_000)
                .with_fading(DistributionSpec::deterministic(1.0)),
        )
        .unwrap();
        let (a, b) = (mac.nodes[0].mean_q, node.mean_q);
        assert!((a - b).abs() < 0.05 * b, "mac {a} vs node {b}");
        assert!((mac.alpha_hat[0] - 1.0).abs() < 0.5);
    }

    #[test]
    fn bookkeeping_and_one_transmitter() {
        let cfg = MacConfig::new(sym(3, 0.2), SchedulerSpec::new(SchedulerKind::GreedySched)).with_horizon(50_000);
        let r = run_mac(&cfg).unwrap();
        let total_share: f64 = r.share.iter().sum();
        assert!(total_share <= 1.0 + 1e-12);
        assert!((total_share + r.idle_slots as f64 / 45_000.0 - 1.0).abs() < 1e-12);
        for n in &r.nodes {
            assert!(n.totals.bit_imbalance() < 1e-9);
            assert!(n.totals.energy_imbalance() < 1e-9);
            assert!(n.totals.min_energy >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn lms_stays_in_unit_interval(a in 0.0f64..=1.0, obs in prop::collection::vec(0.0f64..=1.0, 1..50), mu in 0.001f64..0.999) {
            let mut x = a;
            for o in obs {
                x = lms_update(x, o, mu);
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn selection_is_scale_invariant(qs in prop::collection::vec(0.1f64..50.0, 2..6), hs in prop::collection::vec(0.01f64..5.0, 6), scale in 0.01f64..100.0) {
            let c: Vec<Candidate> = qs.iter().zip(&hs).map(|(&q, &h)| cand(q, h)).collect();
            let scores: Vec<(usize, f64)> = c.iter().enumerate().map(|(i, c)| (i, c.q * c.rate())).collect();
            let scaled: Vec<(usize, f64)> = scores.iter().map(|&(i, s)| (i, s * scale)).collect();
            let mut r1 = RandomStream::new(3, 0);
            let mut r2 = RandomStream::new(3, 0);
            prop_assert_eq!(argmax_random(&scores, &mut r1), argmax_random(&scaled, &mut r2));
        }
    }
}
