//! Continuous-time CSMA among energy-harvesting nodes sharing one channel.
//!
//! Backlogged nodes that can pay for a whole packet contend when the channel
//! is idle. Each draws a channel gain for the round and a backoff; the
//! earliest expiry seizes the channel, and every other node whose backoff
//! runs out within the sensing window of it transmits too, which collides.
//! Collided packets stay queued. A packet occupies the channel for
//! `packet_size / g(h T)` time units at `T` energy per unit time.
//!
//! Time is measured in the units of the arrival and harvest processes. The
//! harvest `Y_k` of unit interval `k` trickles in at a constant rate over
//! that interval, so nodes waiting for energy become ready at distinct
//! instants. Backoffs are counted in backoff slots of `slot_length`.

use std::collections::VecDeque;

use crate::dist::DistributionSpec;
use crate::error::{config_err, Result};
use crate::mac::{lms_update, water_level};
use crate::policy::water_filling;
use crate::rate::RateFunction;
use crate::rng::RandomStream;

const STREAMS_PER_NODE: u64 = 4;
const WF_INIT_STREAM: u64 = 1 << 32;
/// Collision count at which the baseline contention window stops doubling.
const MAX_DOUBLINGS: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackoffKind {
    /// Binary exponential backoff: uniform on a window that doubles with
    /// every collision of the head packet.
    ExponentialBaseline,
    /// `beta / g(h T)`.
    ChannelAware,
    /// `beta / (q g(h T))`.
    QueueChannelAware,
}

impl BackoffKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ExponentialBaseline => "exponential",
            Self::ChannelAware => "channel-aware",
            Self::QueueChannelAware => "queue-channel-aware",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "exponential" => Self::ExponentialBaseline,
            "channel-aware" => Self::ChannelAware,
            "queue-channel-aware" => Self::QueueChannelAware,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffSpec {
    pub kind: BackoffKind,
    /// Scale of the reciprocal backoff, or the mean initial backoff of the
    /// baseline.
    pub beta: f64,
    pub tau_max: f64,
    /// Mean backoff the scale was calibrated to, when known.
    pub target_mean_backoff: Option<f64>,
    /// Spend by water filling instead of a constant energy per slot.
    pub use_waterfilling: bool,
    /// Reciprocal backoffs are scaled by a uniform factor on
    /// `[1 - dither, 1 + dither]` so that equal scores do not always collide.
    pub dither: f64,
}

impl BackoffSpec {
    pub fn new(kind: BackoffKind, beta: f64) -> Self {
        Self {
            kind,
            beta,
            tau_max: 20.0,
            target_mean_backoff: None,
            use_waterfilling: false,
            dither: 0.0,
        }
    }

    pub fn with_dither(mut self, dither: f64) -> Self {
        self.dither = dither;
        self
    }

    pub fn with_waterfilling(mut self, on: bool) -> Self {
        self.use_waterfilling = on;
        self
    }

    pub fn label(&self) -> String {
        if self.use_waterfilling {
            format!("{}+wf", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return config_err(format!("backoff scale must be positive, got {}", self.beta));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return config_err(format!("maximum backoff must be positive, got {}", self.tau_max));
        }
        if !(0.0..1.0).contains(&self.dither) {
            return config_err(format!("dither must lie in [0, 1), got {}", self.dither));
        }
        Ok(())
    }

    /// The reciprocal backoff `clamp(beta / score, 0, tau_max)`; a zero
    /// score waits the maximum.
    pub fn reciprocal(&self, score: f64) -> f64 {
        if score > 0.0 {
            (self.beta / score).min(self.tau_max)
        } else {
            self.tau_max
        }
    }
}

/// What a node knows when it draws a backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    /// Queued packets.
    pub q: f64,
    pub h: f64,
    pub mean_harvest: f64,
    pub epsilon: f64,
    pub alpha_hat: f64,
}

impl Observables {
    /// Constant energy per slot of airtime, `(E[Y] - eps) / alpha`.
    pub fn energy_per_slot(&self) -> f64 {
        (self.mean_harvest - self.epsilon).max(0.0) / self.alpha_hat.max(1e-9)
    }
}

/// Backoff for the reciprocal policies. The baseline has no deterministic
/// backoff; use [`baseline_backoff`].
pub fn backoff_time(obs: &Observables, rf: &RateFunction, spec: &BackoffSpec) -> f64 {
    let rate = rf.bits(obs.h.max(0.0) * obs.energy_per_slot());
    match spec.kind {
        BackoffKind::ChannelAware => spec.reciprocal(rate),
        BackoffKind::QueueChannelAware => spec.reciprocal(obs.q * rate),
        BackoffKind::ExponentialBaseline => spec.tau_max,
    }
}

/// Uniform on `[0, 2 beta 2^c]` after `c` collisions, so the first attempt
/// has mean `beta`.
pub fn baseline_backoff(spec: &BackoffSpec, collisions: u32, rs: &mut RandomStream) -> f64 {
    let window = 2.0 * spec.beta * f64::from(1u32 << collisions.min(MAX_DOUBLINGS));
    (window * rs.open01()).min(spec.tau_max)
}

/// Bisection on `beta` so that the mean of `clamp(beta / s, 0, tau_max)`
/// over the sampled scores equals `target`.
pub fn calibrate_beta(scores: &[f64], target: f64, tau_max: f64) -> Result<f64> {
    if !(target > 0.0) {
        return config_err(format!("target backoff must be positive, got {target}"));
    }
    if scores.is_empty() {
        return config_err("calibration needs score samples");
    }
    if target >= tau_max {
        return config_err(format!(
            "target backoff {target} is not below the maximum {tau_max}"
        ));
    }
    let mean_at = |beta: f64| -> f64 {
        scores
            .iter()
            .map(|&s| if s > 0.0 { (beta / s).min(tau_max) } else { tau_max })
            .sum::<f64>()
            / scores.len() as f64
    };
    if mean_at(0.0) >= target {
        return config_err(format!(
            "zero scores alone already give a mean backoff above {target}"
        ));
    }
    let positive: Vec<f64> = scores.iter().copied().filter(|&s| s > 0.0).collect();
    if positive.len() == scores.len() && positive.windows(2).all(|w| w[0] == w[1]) {
        // Single score value: closed form.
        return Ok(target * positive[0]);
    }
    let mut hi = target * positive.iter().cloned().fold(0.0, f64::max);
    while mean_at(hi) < target {
        hi *= 2.0;
        if !hi.is_finite() {
            return config_err("target backoff unreachable");
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scores `q g(h T)` with `q` and `h` drawn independently; a queue fixed
/// at 1 gives the channel-aware score `g(h T)`.
pub fn score_samples(
    h_dist: &DistributionSpec,
    q_dist: &DistributionSpec,
    rf: &RateFunction,
    energy_per_slot: f64,
    n: usize,
    rs: &mut RandomStream,
) -> Vec<f64> {
    let hs = h_dist.sampler();
    let qs = q_dist.sampler();
    (0..n)
        .map(|_| {
            let h = hs.sample(rs);
            qs.sample(rs) * rf.bits(h * energy_per_slot)
        })
        .collect()
}

/// How every policy's backoff scale is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub target_mean_backoff: f64,
    pub tau_max: f64,
    /// Queue law of the queue-aware scores.
    pub queue: DistributionSpec,
    pub draws: usize,
    pub seed: u64,
    pub dither: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            target_mean_backoff: 1.55,
            tau_max: 20.0,
            queue: DistributionSpec::deterministic(1.0),
            draws: 1_000_000,
            seed: 0,
            dither: 0.0,
        }
    }
}

/// Backoff specs of `kinds` calibrated to the same mean backoff under the
/// scores a node sees with `alpha = 1 / n_nodes`. The baseline's first
/// attempt has that mean directly.
pub fn calibrated_specs(
    cfg: &CsmaConfig,
    cal: &Calibration,
    kinds: &[(BackoffKind, bool)],
) -> Result<Vec<BackoffSpec>> {
    cfg.validate()?;
    let mean_y = cfg.y_dist.exact_mean();
    let eps = cfg.epsilon.unwrap_or(0.01 * mean_y);
    let energy = (mean_y - eps) * cfg.n_nodes as f64;
    let mut rs = RandomStream::new(cal.seed, 0);
    let one = DistributionSpec::deterministic(1.0);
    let channel = score_samples(&cfg.h_dist, &one, &cfg.rf, energy, cal.draws, &mut rs);
    let beta_channel = calibrate_beta(&channel, cal.target_mean_backoff, cal.tau_max)?;
    let beta_queue = if cal.queue == one {
        beta_channel
    } else {
        let mut rs = RandomStream::new(cal.seed, 1);
        let scores = score_samples(&cfg.h_dist, &cal.queue, &cfg.rf, energy, cal.draws, &mut rs);
        calibrate_beta(&scores, cal.target_mean_backoff, cal.tau_max)?
    };
    kinds
        .iter()
        .map(|&(kind, wf)| {
            let beta = match kind {
                BackoffKind::ExponentialBaseline => cal.target_mean_backoff,
                BackoffKind::ChannelAware => beta_channel,
                BackoffKind::QueueChannelAware => beta_queue,
            };
            let mut spec = BackoffSpec::new(kind, beta).with_waterfilling(wf);
            spec.tau_max = cal.tau_max;
            spec.target_mean_backoff = Some(cal.target_mean_backoff);
            if kind != BackoffKind::ExponentialBaseline {
                spec.dither = cal.dither;
            }
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmaConfig {
    pub n_nodes: usize,
    /// Bits per packet.
    pub packet_size: f64,
    /// Poisson packet arrivals per slot at each node.
    pub arrival_rate: f64,
    pub y_dist: DistributionSpec,
    pub h_dist: DistributionSpec,
    pub rf: RateFunction,
    /// Packets; arrivals to a full buffer are lost.
    pub data_buffer_cap: usize,
    /// Backoffs expiring within this many backoff slots of the first one
    /// collide with it.
    pub sensing_window: f64,
    /// Duration of one backoff slot in the time unit of arrivals and
    /// harvest. Backoffs, `tau_max` and the sensing window count these.
    pub slot_length: f64,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    /// Defaults to `0.01 E[Y]`.
    pub epsilon: Option<f64>,
    pub lms_mu: f64,
    pub lms_update_period: f64,
    pub wf_samples: usize,
    /// Keep the queue and channel score seen at each contention draw, for
    /// calibration.
    pub record_scores: bool,
}

impl CsmaConfig {
    pub fn new(n_nodes: usize, arrival_rate: f64, h_dist: DistributionSpec, rf: RateFunction) -> Self {
        Self {
            n_nodes,
            packet_size: 1.0,
            arrival_rate,
            y_dist: DistributionSpec::exponential(1.0),
            h_dist,
            rf,
            data_buffer_cap: 50,
            sensing_window: 0.1,
            slot_length: 1.0,
            horizon: 100_000.0,
            warmup: 10_000.0,
            seed: 0,
            epsilon: None,
            lms_mu: 0.01,
            lms_update_period: 40.0,
            wf_samples: 1000,
            record_scores: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self.warmup = horizon / 10.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return config_err("CSMA needs at least one node");
        }
        if !(self.packet_size > 0.0) {
            return config_err(format!("packet size must be positive, got {}", self.packet_size));
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return config_err(format!("arrival rate must be >= 0, got {}", self.arrival_rate));
        }
        if !(self.sensing_window >= 0.0) {
            return config_err("sensing window must be >= 0");
        }
        if !(self.slot_length > 0.0 && self.slot_length.is_finite()) {
            return config_err(format!("slot length must be positive, got {}", self.slot_length));
        }
        if self.data_buffer_cap == 0 {
            return config_err("data buffer must hold at least one packet");
        }
        if !(self.horizon > self.warmup && self.warmup >= 0.0) {
            return config_err("warmup must be shorter than the horizon");
        }
        if !(self.lms_mu > 0.0 && self.lms_mu < 1.0) || !(self.lms_update_period > 0.0) {
            return config_err("LMS step must lie in (0, 1) with a positive period");
        }
        self.y_dist.validate()?;
        self.h_dist.validate()?;
        self.rf.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsmaNodeStats {
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued_at_end: u64,
    /// Counted over packets delivered after the warmup.
    pub delay_sum: f64,
    pub measured_delivered: u64,
    pub measured_arrived: u64,
    pub measured_dropped: u64,
    /// Time-average queue after the warmup.
    pub mean_q: f64,
    pub airtime: f64,
    pub harvested: f64,
    pub spent: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub min_energy: f64,
    pub alpha_hat: f64,
}

impl CsmaNodeStats {
    pub fn mean_delay(&self) -> f64 {
        if self.measured_delivered > 0 {
            self.delay_sum / self.measured_delivered as f64
        } else {
            0.0
        }
    }

    /// `arrived - delivered - dropped - queued`; zero when packets are
    /// conserved.
    pub fn packet_imbalance(&self) -> i64 {
        self.arrived as i64 - self.delivered as i64 - self.dropped as i64 - self.queued_at_end as i64
    }

    pub fn energy_imbalance(&self) -> f64 {
        let lhs = self.initial_energy + self.harvested;
        let rhs = self.final_energy + self.spent;
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmaResult {
    pub policy: String,
    pub nodes: Vec<CsmaNodeStats>,
    /// Over packets delivered after the warmup.
    pub mean_delay: f64,
    pub loss_probability: f64,
    /// Fraction of contention rounds that collided.
    pub collision_rate: f64,
    pub rounds: u64,
    pub collisions: u64,
    /// `(queue, g(h T))` at each contention draw after the warmup, when
    /// recorded.
    pub observed: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct Plan {
    h: f64,
    power: f64,
    duration: f64,
}

struct NodeRt {
    queue: VecDeque<f64>,
    energy: f64,
    /// Harvest arrives at a constant rate within each slot.
    harvest_rate: f64,
    synced_at: f64,
    alpha_hat: f64,
    window_airtime: f64,
    expiry: Option<f64>,
    /// Channel and spending drawn for the current round.
    plan: Option<Plan>,
    /// When the battery will cover the plan.
    ready_at: Option<f64>,
    /// Drew a channel it cannot use; retry at the next slot or round.
    blocked: bool,
    collisions: u32,
    next_arrival: f64,
    gains: VecDeque<f64>,
    h0: f64,
    q_area: f64,
    last_change: f64,
    stats: CsmaNodeStats,
}

impl NodeRt {
    fn sync(&mut self, t: f64) {
        if t <= self.synced_at {
            return;
        }
        let add = self.harvest_rate * (t - self.synced_at);
        self.energy += add;
        self.stats.harvested += add;
        self.synced_at = t;
    }

    fn reset_round(&mut self) {
        self.expiry = None;
        self.plan = None;
        self.ready_at = None;
        self.blocked = false;
    }
}

struct Pending {
    end: f64,
    transmitters: Vec<usize>,
}

struct Contention<'a> {
    cfg: &'a CsmaConfig,
    spec: &'a BackoffSpec,
    h_s: &'a crate::dist::Sampler,
    mean_y: f64,
    eps: f64,
}

impl Contention<'_> {
    /// Draw a plan if needed, then set the backoff once the battery covers
    /// it or schedule when it will.
    fn try_arm(
        &self,
        node: &mut NodeRt,
        now: f64,
        slot_end: f64,
        fade: &mut RandomStream,
        back: &mut RandomStream,
        observed: &mut Vec<(f64, f64)>,
    ) {
        if node.expiry.is_some() || node.queue.is_empty() || node.blocked {
            return;
        }
        let q = node.queue.len() as f64;
        let nominal = Observables {
            q,
            h: 0.0,
            mean_harvest: self.mean_y,
            epsilon: self.eps,
            alpha_hat: node.alpha_hat,
        }
        .energy_per_slot();
        let plan = match node.plan {
            Some(p) => p,
            None => {
                let h = self.h_s.sample(fade);
                let power = if self.spec.use_waterfilling {
                    water_filling(node.h0, h)
                } else {
                    nominal
                };
                let rate = self.cfg.rf.bits(h * power);
                if !(rate > 0.0) {
                    node.blocked = true;
                    return;
                }
                let p = Plan {
                    h,
                    power,
                    duration: self.cfg.packet_size / rate,
                };
                node.plan = Some(p);
                p
            }
        };
        node.sync(now);
        let need = plan.power * plan.duration;
        if node.energy < need {
            let t = if node.harvest_rate > 0.0 {
                now + (need - node.energy) / node.harvest_rate
            } else {
                f64::INFINITY
            };
            // A shortfall below the clock's resolution counts as ready.
            if t > now {
                node.ready_at = (t <= slot_end).then_some(t);
                return;
            }
        }
        node.ready_at = None;
        let channel = self.cfg.rf.bits(plan.h * nominal);
        if self.cfg.record_scores && now > self.cfg.warmup {
            observed.push((q, channel));
        }
        let b = match self.spec.kind {
            BackoffKind::ExponentialBaseline => baseline_backoff(self.spec, node.collisions, back),
            BackoffKind::ChannelAware => self.dithered(self.spec.reciprocal(channel), back),
            BackoffKind::QueueChannelAware => {
                // The water-filling variant ranks by the rate it will use.
                let g = if self.spec.use_waterfilling {
                    self.cfg.packet_size / plan.duration
                } else {
                    channel
                };
                self.dithered(self.spec.reciprocal(q * g), back)
            }
        };
        node.expiry = Some(now + b * self.cfg.slot_length);
    }

    fn dithered(&self, b: f64, back: &mut RandomStream) -> f64 {
        if self.spec.dither > 0.0 {
            (b * (1.0 + self.spec.dither * (2.0 * back.uniform() - 1.0))).min(self.spec.tau_max)
        } else {
            b
        }
    }
}

pub fn run_csma(cfg: &CsmaConfig, spec: &BackoffSpec) -> Result<CsmaResult> {
    cfg.validate()?;
    spec.validate()?;
    let n = cfg.n_nodes;
    let mean_y = cfg.y_dist.exact_mean();
    let eps = cfg.epsilon.unwrap_or(0.01 * mean_y);
    let y_s = cfg.y_dist.sampler();
    let h_s = cfg.h_dist.sampler();
    let mut arr_rs = Vec::with_capacity(n);
    let mut harv_rs = Vec::with_capacity(n);
    let mut back_rs = Vec::with_capacity(n);
    let mut fade_rs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let b = STREAMS_PER_NODE * i;
        arr_rs.push(RandomStream::new(cfg.seed, b));
        harv_rs.push(RandomStream::new(cfg.seed, b + 1));
        back_rs.push(RandomStream::new(cfg.seed, b + 2));
        fade_rs.push(RandomStream::new(cfg.seed, b + 3));
    }
    let interarrival = |rs: &mut RandomStream| -> f64 {
        if cfg.arrival_rate > 0.0 {
            -rs.open01().ln() / cfg.arrival_rate
        } else {
            f64::INFINITY
        }
    };

    let mut nodes: Vec<NodeRt> = (0..n)
        .map(|i| {
            let mut gains = VecDeque::new();
            if spec.use_waterfilling {
                let mut rs = RandomStream::new(cfg.seed, WF_INIT_STREAM + i as u64);
                gains = (0..cfg.wf_samples.max(2)).map(|_| h_s.sample(&mut rs)).collect();
            }
            let harvest_rate = y_s.sample(&mut harv_rs[i]);
            NodeRt {
                queue: VecDeque::new(),
                energy: 0.0,
                harvest_rate,
                synced_at: 0.0,
                alpha_hat: 1.0 / n as f64,
                window_airtime: 0.0,
                expiry: None,
                plan: None,
                ready_at: None,
                blocked: false,
                collisions: 0,
                next_arrival: interarrival(&mut arr_rs[i]),
                gains,
                h0: f64::INFINITY,
                q_area: 0.0,
                last_change: cfg.warmup,
                stats: CsmaNodeStats::default(),
            }
        })
        .collect();
    let refresh_h0 = |node: &mut NodeRt| -> Result<()> {
        let budget = (mean_y - eps).max(0.0) / node.alpha_hat.max(1e-9);
        let mut g: Vec<f64> = node.gains.iter().copied().collect();
        node.h0 = if budget > 0.0 { water_level(&mut g, budget)? } else { f64::INFINITY };
        Ok(())
    };
    if spec.use_waterfilling {
        for node in nodes.iter_mut() {
            refresh_h0(node)?;
        }
    }
    let ctx = Contention {
        cfg,
        spec,
        h_s: &h_s,
        mean_y,
        eps,
    };

    let mut pending: Option<Pending> = None;
    let mut slot_end = 1.0;
    let mut next_lms = cfg.lms_update_period;
    let (mut rounds, mut collisions) = (0u64, 0u64);
    let mut observed = Vec::new();

    // Queue-length area accrues only after the warmup.
    let touch = |node: &mut NodeRt, t: f64| {
        if t > cfg.warmup {
            let from = node.last_change.max(cfg.warmup);
            node.q_area += node.queue.len() as f64 * (t - from);
            node.last_change = t;
        }
    };

    loop {
        let mut t_next = cfg.horizon.min(slot_end).min(next_lms);
        if let Some(p) = &pending {
            t_next = t_next.min(p.end);
        }
        for node in &nodes {
            t_next = t_next.min(node.next_arrival);
            if pending.is_none() {
                for t in [node.expiry, node.ready_at].into_iter().flatten() {
                    t_next = t_next.min(t);
                }
            }
        }
        let now = t_next;
        if now >= cfg.horizon {
            break;
        }
        let mut new_round = false;

        if pending.as_ref().is_some_and(|p| p.end <= now) {
            let p = pending.take().unwrap();
            if p.transmitters.len() == 1 {
                let node = &mut nodes[p.transmitters[0]];
                touch(node, now);
                let arrived = node.queue.pop_front().expect("transmitter had a packet");
                node.stats.delivered += 1;
                node.collisions = 0;
                if now > cfg.warmup {
                    node.stats.delay_sum += now - arrived;
                    node.stats.measured_delivered += 1;
                }
            }
            new_round = true;
        }

        if slot_end <= now {
            for (i, node) in nodes.iter_mut().enumerate() {
                node.sync(slot_end);
                node.harvest_rate = y_s.sample(&mut harv_rs[i]);
                node.blocked = false;
                node.ready_at = None;
            }
            slot_end += 1.0;
        }

        if next_lms <= now {
            for node in nodes.iter_mut() {
                let observed = (node.window_airtime / cfg.lms_update_period).min(1.0);
                node.alpha_hat = lms_update(node.alpha_hat, observed, cfg.lms_mu);
                node.window_airtime = 0.0;
                if spec.use_waterfilling {
                    refresh_h0(node)?;
                }
            }
            next_lms += cfg.lms_update_period;
        }

        for (i, node) in nodes.iter_mut().enumerate() {
            while node.next_arrival <= now {
                let t = node.next_arrival;
                touch(node, t);
                node.stats.arrived += 1;
                let measured = t > cfg.warmup;
                node.stats.measured_arrived += measured as u64;
                if node.queue.len() >= cfg.data_buffer_cap {
                    node.stats.dropped += 1;
                    node.stats.measured_dropped += measured as u64;
                } else {
                    node.queue.push_back(t);
                }
                node.next_arrival = t + interarrival(&mut arr_rs[i]);
            }
        }

        if new_round {
            for node in nodes.iter_mut() {
                node.reset_round();
            }
        }

        if pending.is_none() {
            let first = nodes
                .iter()
                .filter_map(|nd| nd.expiry)
                .fold(f64::INFINITY, f64::min);
            if first <= now {
                let cutoff = first + cfg.sensing_window * cfg.slot_length;
                let transmitters: Vec<usize> = (0..n)
                    .filter(|&i| nodes[i].expiry.is_some_and(|e| e <= cutoff))
                    .collect();
                rounds += 1;
                let collided = transmitters.len() > 1;
                collisions += collided as u64;
                let mut end: f64 = now;
                for &i in &transmitters {
                    let node = &mut nodes[i];
                    let start = node.expiry.unwrap();
                    let plan = node.plan.expect("armed node has a plan");
                    node.sync(start);
                    let energy = plan.power * plan.duration;
                    node.energy = (node.energy - energy).max(0.0);
                    node.stats.min_energy = node.stats.min_energy.min(node.energy);
                    node.stats.spent += energy;
                    node.stats.airtime += plan.duration;
                    node.window_airtime += plan.duration;
                    if spec.use_waterfilling && !collided {
                        node.gains.pop_front();
                        node.gains.push_back(plan.h);
                    }
                    if collided {
                        node.collisions += 1;
                    }
                    end = end.max(start + plan.duration);
                }
                for node in nodes.iter_mut() {
                    node.reset_round();
                }
                pending = Some(Pending { end, transmitters });
            }
        }

        if pending.is_none() {
            for (i, node) in nodes.iter_mut().enumerate() {
                ctx.try_arm(node, now, slot_end, &mut fade_rs[i], &mut back_rs[i], &mut observed);
            }
        }
    }

    let span = cfg.horizon - cfg.warmup;
    let label = spec.label();
    let mut out = Vec::with_capacity(n);
    for mut node in nodes {
        touch(&mut node, cfg.horizon);
        node.sync(cfg.horizon);
        let mut s = node.stats;
        s.queued_at_end = node.queue.len() as u64;
        s.mean_q = node.q_area / span;
        s.final_energy = node.energy;
        s.alpha_hat = node.alpha_hat;
        out.push(s);
    }
    let delivered: u64 = out.iter().map(|s| s.measured_delivered).sum();
    let delay: f64 = out.iter().map(|s| s.delay_sum).sum();
    let arrived: u64 = out.iter().map(|s| s.measured_arrived).sum();
    let dropped: u64 = out.iter().map(|s| s.measured_dropped).sum();
    Ok(CsmaResult {
        policy: label,
        nodes: out,
        mean_delay: if delivered > 0 { delay / delivered as f64 } else { 0.0 },
        loss_probability: if arrived > 0 { dropped as f64 / arrived as f64 } else { 0.0 },
        collision_rate: if rounds > 0 { collisions as f64 / rounds as f64 } else { 0.0 },
        rounds,
        collisions,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_fading() -> DistributionSpec {
        DistributionSpec::discrete(vec![(0.1, 0.1), (0.5, 0.3), (1.0, 0.4), (2.2, 0.2)])
    }

    fn obs(q: f64, h: f64) -> Observables {
        Observables {
            q,
            h,
            mean_harvest: 1.0,
            epsilon: 0.01,
            alpha_hat: 0.1,
        }
    }

    fn small_config(seed: u64) -> CsmaConfig {
        let mut cfg = CsmaConfig::new(4, 0.15, paper_fading(), RateFunction::natural_log(1.0))
            .with_horizon(5_000.0)
            .with_seed(seed);
        cfg.slot_length = 0.3;
        cfg
    }

    #[test]
    fn channel_aware_backoff_example() {
        let spec = BackoffSpec::new(BackoffKind::ChannelAware, 1.0);
        let b = backoff_time(&obs(1.0, 2.2), &RateFunction::natural_log(1.0), &spec);
        assert!((b - 1.0 / 22.78f64.ln()).abs() < 1e-12);
        assert!((b - 0.3199).abs() < 1e-4);
    }

    #[test]
    fn queue_and_channel_shorten_backoff() {
        let rf = RateFunction::natural_log(1.0);
        let q_spec = BackoffSpec::new(BackoffKind::QueueChannelAware, 1.0);
        let one = backoff_time(&obs(3.0, 1.0), &rf, &q_spec);
        let two = backoff_time(&obs(6.0, 1.0), &rf, &q_spec);
        assert!((one - 2.0 * two).abs() < 1e-12);
        let c_spec = BackoffSpec::new(BackoffKind::ChannelAware, 1.0);
        assert!(backoff_time(&obs(1.0, 2.2), &rf, &c_spec) < backoff_time(&obs(1.0, 0.1), &rf, &c_spec));
    }

    #[test]
    fn zero_score_waits_the_maximum() {
        let spec = BackoffSpec::new(BackoffKind::ChannelAware, 1.0);
        assert_eq!(backoff_time(&obs(1.0, 0.0), &RateFunction::natural_log(1.0), &spec), spec.tau_max);
        let spec = BackoffSpec::new(BackoffKind::QueueChannelAware, 1.0);
        assert_eq!(backoff_time(&obs(0.0, 1.0), &RateFunction::natural_log(1.0), &spec), spec.tau_max);
    }

    #[test]
    fn calibration_closed_form_and_errors() {
        let beta = calibrate_beta(&[2.5; 10], 1.55, 20.0).unwrap();
        assert_eq!(beta, 1.55 * 2.5);
        assert!(calibrate_beta(&[1.0, 2.0], 20.0, 20.0).is_err());
        assert!(calibrate_beta(&[1.0, 2.0], 0.0, 20.0).is_err());
        assert!(calibrate_beta(&[], 1.0, 20.0).is_err());
        // Half the draws already wait the maximum.
        assert!(calibrate_beta(&[0.0, 1.0], 5.0, 20.0).is_err());
    }

    #[test]
    fn calibrated_scale_reproduces_target_mean() {
        let rf = RateFunction::natural_log(1.0);
        let mut rs = RandomStream::new(3, 0);
        let one = DistributionSpec::deterministic(1.0);
        let scores = score_samples(&paper_fading(), &one, &rf, 0.99 / 0.1, 1_000_000, &mut rs);
        let beta = calibrate_beta(&scores, 1.55, 20.0).unwrap();
        // Exact mean over the four channel states.
        let mean: f64 = paper_fading()
            .pmf()
            .unwrap()
            .iter()
            .map(|&(h, p)| p * (beta / rf.bits(h * 9.9)).min(20.0))
            .sum();
        assert!((mean - 1.55).abs() < 0.02, "mean backoff {mean}");
    }

    #[test]
    fn specs_share_the_calibration() {
        let cfg = CsmaConfig::new(10, 0.17, paper_fading(), RateFunction::natural_log(1.0));
        let cal = Calibration {
            draws: 100_000,
            ..Calibration::default()
        };
        let kinds = [
            (BackoffKind::ExponentialBaseline, false),
            (BackoffKind::ChannelAware, false),
            (BackoffKind::QueueChannelAware, false),
        ];
        let specs = calibrated_specs(&cfg, &cal, &kinds).unwrap();
        assert_eq!(specs[0].beta, 1.55);
        assert_eq!(specs[1].beta, specs[2].beta);
        let cal = Calibration {
            queue: DistributionSpec::discrete(vec![(1.0, 0.5), (3.0, 0.5)]),
            ..cal
        };
        let specs = calibrated_specs(&cfg, &cal, &kinds).unwrap();
        assert!(specs[2].beta > specs[1].beta);
    }

    #[test]
    fn baseline_window_doubles() {
        let spec = BackoffSpec::new(BackoffKind::ExponentialBaseline, 1.5);
        let mut rs = RandomStream::new(1, 0);
        let n = 200_000;
        let first: f64 = (0..n).map(|_| baseline_backoff(&spec, 0, &mut rs)).sum::<f64>() / n as f64;
        let second: f64 = (0..n).map(|_| baseline_backoff(&spec, 1, &mut rs)).sum::<f64>() / n as f64;
        assert!((first - 1.5).abs() < 0.01);
        assert!((second - 3.0).abs() < 0.02);
        assert!((0..1000).all(|c| baseline_backoff(&spec, c, &mut rs) <= spec.tau_max));
    }

    #[test]
    fn bookkeeping_holds_for_every_policy() {
        let cfg = small_config(7);
        for spec in [
            BackoffSpec::new(BackoffKind::ExponentialBaseline, 1.55),
            BackoffSpec::new(BackoffKind::ChannelAware, 2.8).with_dither(0.3),
            BackoffSpec::new(BackoffKind::QueueChannelAware, 2.8).with_dither(0.3),
            BackoffSpec::new(BackoffKind::QueueChannelAware, 2.8).with_waterfilling(true),
        ] {
            let res = run_csma(&cfg, &spec).unwrap();
            assert!(res.rounds > 0);
            for node in &res.nodes {
                assert_eq!(node.packet_imbalance(), 0, "{}", spec.label());
                assert!(node.energy_imbalance() < 1e-9, "{}", spec.label());
                assert!(node.min_energy >= 0.0 && node.final_energy >= 0.0);
                assert!(node.delivered > 0);
            }
        }
    }

    #[test]
    fn same_seed_same_run() {
        let spec = BackoffSpec::new(BackoffKind::QueueChannelAware, 2.8).with_dither(0.3);
        let a = run_csma(&small_config(3), &spec).unwrap();
        let b = run_csma(&small_config(3), &spec).unwrap();
        assert_eq!(a, b);
        let c = run_csma(&small_config(4), &spec).unwrap();
        assert_ne!(a.mean_delay, c.mean_delay);
    }

    #[test]
    fn continuous_backoffs_without_window_never_collide() {
        let mut cfg = small_config(5);
        cfg.h_dist = DistributionSpec::exponential(1.0);
        cfg.sensing_window = 0.0;
        for kind in [BackoffKind::ChannelAware, BackoffKind::ExponentialBaseline] {
            let res = run_csma(&cfg, &BackoffSpec::new(kind, 1.55)).unwrap();
            assert_eq!(res.collisions, 0);
        }
    }

    #[test]
    fn equal_scores_collide_without_dither() {
        let mut cfg = small_config(5);
        cfg.h_dist = DistributionSpec::deterministic(1.0);
        cfg.arrival_rate = 0.3;
        cfg.sensing_window = 0.01;
        let plain = run_csma(&cfg, &BackoffSpec::new(BackoffKind::ChannelAware, 1.55)).unwrap();
        let dithered = run_csma(&cfg, &BackoffSpec::new(BackoffKind::ChannelAware, 1.55).with_dither(0.3)).unwrap();
        assert!(plain.collision_rate > 2.0 * dithered.collision_rate);
    }

    #[test]
    fn lone_node_loses_nothing() {
        let mut cfg = small_config(2);
        cfg.n_nodes = 1;
        cfg.arrival_rate = 0.2;
        cfg.data_buffer_cap = 10_000;
        let res = run_csma(&cfg, &BackoffSpec::new(BackoffKind::ChannelAware, 1.55)).unwrap();
        assert_eq!(res.collisions, 0);
        assert_eq!(res.nodes[0].dropped, 0);
        assert!(res.mean_delay > 0.0 && res.mean_delay.is_finite());
    }

    #[test]
    fn full_buffers_drop_arrivals() {
        let mut cfg = small_config(2);
        cfg.arrival_rate = 2.0;
        cfg.data_buffer_cap = 5;
        let res = run_csma(&cfg, &BackoffSpec::new(BackoffKind::ChannelAware, 1.55)).unwrap();
        assert!(res.loss_probability > 0.5);
        for node in &res.nodes {
            assert_eq!(node.packet_imbalance(), 0);
            assert!(node.queued_at_end <= 5);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small_config(0);
        cfg.packet_size = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(0);
        cfg.sensing_window = -1.0;
        assert!(cfg.validate().is_err());
        assert!(BackoffSpec::new(BackoffKind::ChannelAware, 0.0).validate().is_err());
        assert!(BackoffSpec::new(BackoffKind::ChannelAware, 1.0).with_dither(1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn backoff_stays_in_range(q in 0.0f64..100.0, h in 0.0f64..10.0, alpha in 0.001f64..1.0, beta in 0.01f64..100.0) {
            let rf = RateFunction::natural_log(1.0);
            for kind in [BackoffKind::ChannelAware, BackoffKind::QueueChannelAware] {
                let spec = BackoffSpec::new(kind, beta);
                let o = Observables { q, h, mean_harvest: 1.0, epsilon: 0.01, alpha_hat: alpha };
                let b = backoff_time(&o, &rf, &spec);
                prop_assert!((0.0..=spec.tau_max).contains(&b));
            }
        }

        #[test]
        fn calibration_hits_target(scores in proptest::collection::vec(0.01f64..10.0, 1..50), target in 0.1f64..5.0) {
            let beta = calibrate_beta(&scores, target, 20.0).unwrap();
            let mean = scores.iter().map(|&s| (beta / s).min(20.0)).sum::<f64>() / scores.len() as f64;
            prop_assert!((mean - target).abs() < 1e-9 * target.max(1.0));
        }
    }
}
