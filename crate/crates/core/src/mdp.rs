//! Finite MDP over a quantized `(q, E)` grid with stage cost `q`.
//!
//! States are indexed row-major in `q` (`iq * e_levels + ie`) to match
//! [`PolicyTable`]. The action in a state is a transmit energy on a uniform
//! grid `0, a_step, 2 a_step, ...` up to the stored energy.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dist::DistributionSpec;
use crate::error::{config_err, Error, Result};
use crate::policy::{NodeState, PolicyTable};
use crate::rate::RateFunction;

const PMF_TOL: f64 = 1e-12;
const GRID_TOL: f64 = 1e-9;

/// Which action wins among (near-)minimizers during policy extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Spend more; keeps the battery from overflowing later.
    #[default]
    Largest,
    Smallest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub q_cap: f64,
    pub e_cap: f64,
    pub q_step: f64,
    pub e_step: f64,
    /// Spacing of admissible transmit energies.
    pub action_step: f64,
    /// Discount factor; `1.0` selects the average-cost criterion where
    /// supported.
    pub alpha: f64,
    pub rf: RateFunction,
    pub x_pmf: Vec<(f64, f64)>,
    pub y_pmf: Vec<(f64, f64)>,
    pub tol: f64,
    pub max_iter: usize,
    pub tie_break: TieBreak,
    /// Cost charged per bit lost to the data cap. Zero makes the stage cost
    /// the queue length alone, which rewards letting the buffer overflow.
    pub drop_cost: f64,
}

impl MdpConfig {
    /// Unit grid with both caps at 50.
    pub fn new(rf: RateFunction, x_pmf: Vec<(f64, f64)>, y_pmf: Vec<(f64, f64)>, alpha: f64) -> Self {
        Self {
            q_cap: 50.0,
            e_cap: 50.0,
            q_step: 1.0,
            e_step: 1.0,
            action_step: 1.0,
            alpha,
            rf,
            x_pmf,
            y_pmf,
            tol: 1e-9,
            max_iter: 1_000_000,
            tie_break: TieBreak::Largest,
            drop_cost: 0.0,
        }
    }

    pub fn with_caps(mut self, q_cap: f64, e_cap: f64) -> Self {
        self.q_cap = q_cap;
        self.e_cap = e_cap;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn q_levels(&self) -> usize {
        (self.q_cap / self.q_step).round() as usize + 1
    }

    pub fn e_levels(&self) -> usize {
        (self.e_cap / self.e_step).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.rf.validate()?;
        for (name, cap, step) in [("q", self.q_cap, self.q_step), ("E", self.e_cap, self.e_step)] {
            if !(step > 0.0 && step.is_finite()) {
                return config_err(format!("{name} step must be positive, got {step}"));
            }
            if !(cap >= 0.0 && cap.is_finite()) || !on_grid(cap, step) {
                return config_err(format!(
                    "{name} cap {cap} must be a nonnegative multiple of the step {step}"
                ));
            }
        }
        if !(self.action_step > 0.0) || (self.e_cap > 0.0 && self.action_step > self.e_cap) {
            return config_err(format!(
                "action step {} must lie in (0, e_cap = {}]",
                self.action_step, self.e_cap
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return config_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.drop_cost >= 0.0 && self.drop_cost.is_finite()) {
            return config_err(format!("drop cost must be >= 0, got {}", self.drop_cost));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return config_err("tolerance and iteration cap must be positive");
        }
        check_pmf("x", &self.x_pmf, self.q_step)?;
        check_pmf("y", &self.y_pmf, self.e_step)?;
        Ok(())
    }
}

fn on_grid(v: f64, step: f64) -> bool {
    let r = v / step;
    (r - r.round()).abs() < GRID_TOL
}

fn check_pmf(name: &str, pmf: &[(f64, f64)], step: f64) -> Result<()> {
    if pmf.is_empty() {
        return config_err(format!("{name} pmf is empty"));
    }
    let mut total = 0.0;
    for &(v, p) in pmf {
        if !(v >= 0.0 && v.is_finite()) || !(p >= 0.0) {
            return config_err(format!("{name} pmf has bad atom ({v}, {p})"));
        }
        if !on_grid(v, step) {
            return config_err(format!(
                "{name} pmf atom {v} is not a multiple of the grid step {step}"
            ));
        }
        total += p;
    }
    if (total - 1.0).abs() > PMF_TOL {
        return config_err(format!("{name} pmf sums to {total}"));
    }
    Ok(())
}

/// The pmf of a finite-support distribution, checked against a grid step.
pub fn grid_pmf(d: &DistributionSpec, step: f64) -> Result<Vec<(f64, f64)>> {
    let pmf = d
        .pmf()
        .ok_or_else(|| Error::Config("MDP arrivals and harvest need a finite-support distribution".into()))?;
    check_pmf("distribution", &pmf, step)?;
    Ok(pmf)
}

/// Sparse transition kernel: for every state, one row per admissible action.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub q_levels: usize,
    pub e_levels: usize,
    pub q_step: f64,
    pub e_step: f64,
    pub action_step: f64,
    /// `row_start[s]..row_start[s + 1]` are the rows of state `s`; row
    /// `row_start[s] + j` is action `j * action_step`.
    row_start: Vec<usize>,
    entry_start: Vec<usize>,
    next: Vec<u32>,
    prob: Vec<f64>,
    /// Expected stage cost of each row.
    row_cost: Vec<f64>,
    n_states: usize,
}

impl Kernel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn index(&self, iq: usize, ie: usize) -> usize {
        iq * self.e_levels + ie
    }

    pub fn state(&self, s: usize) -> NodeState {
        NodeState::new(
            (s / self.e_levels) as f64 * self.q_step,
            (s % self.e_levels) as f64 * self.e_step,
        )
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.row_start[s + 1] - self.row_start[s]
    }

    pub fn action_energy(&self, j: usize) -> f64 {
        j as f64 * self.action_step
    }

    /// Expected stage cost of action `j` in state `s`.
    pub fn cost(&self, s: usize, j: usize) -> f64 {
        self.row_cost[self.row_start[s] + j]
    }

    /// `(next state, probability)` pairs for action index `j` in state `s`.
    pub fn row(&self, s: usize, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[s] + j;
        let range = self.entry_start[r]..self.entry_start[r + 1];
        self.next[range.clone()]
            .iter()
            .zip(&self.prob[range])
            .map(|(&n, &p)| (n as usize, p))
    }

    fn expect(&self, s: usize, j: usize, v: &[f64]) -> f64 {
        self.row(s, j).map(|(n, p)| p * v[n]).sum()
    }

    /// `c(s, j) + alpha E[v(next)]`.
    fn q_value(&self, s: usize, j: usize, v: &[f64], alpha: f64) -> f64 {
        self.cost(s, j) + alpha * self.expect(s, j, v)
    }

    /// Quantized greedy action: the least grid energy that drains `q`, capped
    /// by the battery.
    pub fn greedy_action(&self, s: usize, rf: &RateFunction) -> usize {
        let st = self.state(s);
        let need = rf.energy_for(st.q);
        let jmax = self.n_actions(s) - 1;
        if !need.is_finite() {
            return jmax;
        }
        let j = (need / self.action_step - GRID_TOL).ceil().max(0.0);
        (j as usize).min(jmax)
    }
}

/// Enumerates next-state distributions through the slot dynamics with
/// round-half-up quantization followed by the caps.
pub fn build_transition(cfg: &MdpConfig) -> Result<Kernel> {
    cfg.validate()?;
    let (nq, ne) = (cfg.q_levels(), cfg.e_levels());
    let n = nq * ne;
    if n > u32::MAX as usize {
        return config_err("state space too large");
    }
    let quant = |v: f64, step: f64, levels: usize| -> usize {
        let i = (v / step + 0.5).floor().max(0.0) as usize;
        i.min(levels - 1)
    };

    let rows: Vec<Vec<(Vec<(u32, f64)>, f64)>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let q = (s / ne) as f64 * cfg.q_step;
            let e = (s % ne) as f64 * cfg.e_step;
            let jmax = (e / cfg.action_step + GRID_TOL).floor() as usize;
            (0..=jmax)
                .map(|j| {
                    let a = (j as f64 * cfg.action_step).min(e);
                    let q_left = (q - cfg.rf.bits(a)).max(0.0);
                    let e_left = e - a;
                    let mut row: Vec<(u32, f64)> = Vec::new();
                    let mut dropped = 0.0;
                    for &(x, px) in &cfg.x_pmf {
                        let iq = quant(q_left + x, cfg.q_step, nq);
                        let rounded = ((q_left + x) / cfg.q_step + 0.5).floor() * cfg.q_step;
                        dropped += px * (rounded - cfg.q_cap).max(0.0);
                        for &(y, py) in &cfg.y_pmf {
                            let p = px * py;
                            if p == 0.0 {
                                continue;
                            }
                            let ie = quant(e_left + y, cfg.e_step, ne);
                            row.push(((iq * ne + ie) as u32, p));
                        }
                    }
                    row.sort_unstable_by_key(|e| e.0);
                    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
                    for (t, p) in row {
                        match merged.last_mut() {
                            Some(last) if last.0 == t => last.1 += p,
                            _ => merged.push((t, p)),
                        }
                    }
                    (merged, q + cfg.drop_cost * dropped)
                })
                .collect()
        })
        .collect();

    let mut row_start = Vec::with_capacity(n + 1);
    let mut entry_start = vec![0];
    let mut next = Vec::new();
    let mut prob = Vec::new();
    let mut row_cost = Vec::new();
    row_start.push(0);
    for state_rows in rows {
        for (r, c) in state_rows {
            row_cost.push(c);
            for (t, p) in r {
                next.push(t);
                prob.push(p);
            }
            entry_start.push(next.len());
        }
        row_start.push(entry_start.len() - 1);
    }
    Ok(Kernel {
        q_levels: nq,
        e_levels: ne,
        q_step: cfg.q_step,
        e_step: cfg.e_step,
        action_step: cfg.action_step,
        row_start,
        entry_start,
        next,
        prob,
        row_cost,
        n_states: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    /// Action index per state; energy is `index * action_step`.
    pub policy: Vec<usize>,
    /// Discounted cost-to-go, or the relative bias for average cost.
    pub value: Vec<f64>,
    pub avg_cost: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Per-iteration residuals (sup-norm for value iteration, span for
    /// relative value iteration, changed-action count for policy iteration).
    pub history: Vec<f64>,
    pub q_levels: usize,
    pub e_levels: usize,
    pub q_step: f64,
    pub e_step: f64,
    pub action_step: f64,
}

impl MdpSolution {
    fn new(k: &Kernel) -> Self {
        Self {
            policy: Vec::new(),
            value: Vec::new(),
            avg_cost: None,
            iterations: 0,
            residual: 0.0,
            history: Vec::new(),
            q_levels: k.q_levels,
            e_levels: k.e_levels,
            q_step: k.q_step,
            e_step: k.e_step,
            action_step: k.action_step,
        }
    }

    pub fn action_energy(&self, s: usize) -> f64 {
        self.policy[s] as f64 * self.action_step
    }

    pub fn to_table(&self) -> PolicyTable {
        PolicyTable {
            q_step: self.q_step,
            e_step: self.e_step,
            q_levels: self.q_levels,
            e_levels: self.e_levels,
            actions: (0..self.policy.len()).map(|s| self.action_energy(s)).collect(),
        }
    }
}

/// Chooses among actions whose value is within `slack` of the minimum.
fn extract(k: &Kernel, v: &[f64], alpha: f64, s: usize, tie: TieBreak, slack: f64) -> (usize, f64) {
    let qs: Vec<f64> = (0..k.n_actions(s)).map(|j| k.q_value(s, j, v, alpha)).collect();
    let m = qs.iter().cloned().fold(f64::INFINITY, f64::min);
    let thresh = m + slack * (1.0 + m.abs());
    let pick = match tie {
        TieBreak::Largest => qs.iter().rposition(|&q| q <= thresh),
        TieBreak::Smallest => qs.iter().position(|&q| q <= thresh),
    };
    (pick.unwrap_or(0), m)
}

fn check_discount(cfg: &MdpConfig, method: &str) -> Result<()> {
    if !(0.0..1.0).contains(&cfg.alpha) {
        return config_err(format!(
            "{method} needs alpha in [0, 1), got {}",
            cfg.alpha
        ));
    }
    Ok(())
}

/// Discounted value iteration from `v = 0`, stopping on a sup-norm change
/// below `cfg.tol`.
pub fn value_iteration(cfg: &MdpConfig, k: &Kernel) -> Result<MdpSolution> {
    check_discount(cfg, "value iteration")?;
    let n = k.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sol = MdpSolution::new(k);
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        next.par_iter_mut().enumerate().for_each(|(s, out)| {
            *out = (0..k.n_actions(s))
                .map(|j| k.q_value(s, j, &v, cfg.alpha))
                .fold(f64::INFINITY, f64::min);
        });
        residual = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        sol.history.push(residual);
        sol.iterations = it;
        if residual < cfg.tol {
            break;
        }
    }
    if residual >= cfg.tol {
        return Err(Error::NotConverged {
            method: "value iteration",
            iterations: cfg.max_iter,
            residual,
        });
    }
    // Values are within alpha * r / (1 - alpha) of optimal; actions that
    // close are treated as tied.
    let slack = if cfg.alpha > 0.0 {
        (2.0 * cfg.alpha * residual / (1.0 - cfg.alpha)).max(1e-12)
    } else {
        1e-12
    };
    sol.policy = (0..n)
        .into_par_iter()
        .map(|s| extract(k, &v, cfg.alpha, s, cfg.tie_break, slack).0)
        .collect();
    sol.value = v;
    sol.residual = residual;
    Ok(sol)
}

/// Initial policy for policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum StartPolicy {
    Greedy,
    Idle,
    Given(Vec<usize>),
}

/// Exact evaluation of a stationary policy.
///
/// With `alpha < 1` solves `(I - alpha P) v = c`. With `alpha == 1` solves
/// `g + h(s) - (P h)(s) = c(s)` with `h(reference) = 0` and returns the bias
/// `h` alongside the average cost `g`.
pub fn evaluate_policy(
    k: &Kernel,
    policy: &[usize],
    alpha: f64,
    reference: usize,
) -> Result<(Vec<f64>, Option<f64>)> {
    let n = k.n_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for (t, p) in k.row(s, policy[s]) {
            a[(s, t)] -= alpha * p;
        }
    }
    let b = DVector::from_iterator(n, (0..n).map(|s| k.cost(s, policy[s])));
    let average = alpha >= 1.0;
    if average {
        // The bias at the reference state is pinned at zero, so its column
        // carries the average cost instead.
        for s in 0..n {
            a[(s, reference)] = 1.0;
        }
    }
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    let mut v: Vec<f64> = x.iter().copied().collect();
    if average {
        let g = v[reference];
        v[reference] = 0.0;
        Ok((v, Some(g)))
    } else {
        Ok((v, None))
    }
}

/// Howard policy iteration. An action is replaced only when another one
/// improves on it by more than a relative `1e-9`, so the loop stops on the
/// first policy that is optimal up to round-off.
pub fn policy_iteration(cfg: &MdpConfig, k: &Kernel, start: StartPolicy) -> Result<MdpSolution> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return config_err(format!("alpha must lie in [0, 1], got {}", cfg.alpha));
    }
    let n = k.n_states();
    let mut policy = match start {
        StartPolicy::Greedy => (0..n).map(|s| k.greedy_action(s, &cfg.rf)).collect(),
        StartPolicy::Idle => vec![0; n],
        StartPolicy::Given(p) => {
            if p.len() != n || p.iter().enumerate().any(|(s, &j)| j >= k.n_actions(s)) {
                return config_err("starting policy does not fit the state space");
            }
            p
        }
    };
    let mut sol = MdpSolution::new(k);
    const IMPROVE: f64 = 1e-9;
    for it in 1..=cfg.max_iter.min(10_000) {
        let (v, g) = evaluate_policy(k, &policy, cfg.alpha, 0)?;
        let updated: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|s| {
                let current = k.q_value(s, policy[s], &v, cfg.alpha);
                let (best, m) = extract(k, &v, cfg.alpha, s, cfg.tie_break, 0.0);
                if current - m > IMPROVE * (1.0 + m.abs()) {
                    best
                } else {
                    policy[s]
                }
            })
            .collect();
        let changed = updated.iter().zip(&policy).filter(|(a, b)| a != b).count();
        sol.history.push(changed as f64);
        sol.iterations = it;
        policy = updated;
        if changed == 0 {
            sol.policy = policy;
            sol.value = v;
            sol.avg_cost = g;
            sol.residual = 0.0;
            return Ok(sol);
        }
    }
    Err(Error::NotConverged {
        method: "policy iteration",
        iterations: sol.iterations,
        residual: sol.history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Relative value iteration for the average cost, normalized at state (0, 0).
pub fn relative_value_iteration(cfg: &MdpConfig, k: &Kernel) -> Result<MdpSolution> {
    relative_value_iteration_at(cfg, k, 0)
}

/// Relative value iteration normalized at `reference`. Stops when the span
/// of `T h - h` falls below `cfg.tol`; its midpoint is the average cost.
pub fn relative_value_iteration_at(cfg: &MdpConfig, k: &Kernel, reference: usize) -> Result<MdpSolution> {
    let n = k.n_states();
    if reference >= n {
        return config_err(format!("reference state {reference} out of range"));
    }
    let mut h = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut sol = MdpSolution::new(k);
    let mut span = f64::INFINITY;
    let mut gain = 0.0;
    for it in 1..=cfg.max_iter {
        w.par_iter_mut().enumerate().for_each(|(s, out)| {
            *out = (0..k.n_actions(s))
                .map(|j| k.q_value(s, j, &h, 1.0))
                .fold(f64::INFINITY, f64::min);
        });
        let (lo, hi) = w
            .iter()
            .zip(&h)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        gain = 0.5 * (lo + hi);
        let offset = w[reference];
        for (hs, ws) in h.iter_mut().zip(&w) {
            *hs = ws - offset;
        }
        sol.history.push(span);
        sol.iterations = it;
        if span < cfg.tol {
            break;
        }
    }
    if !(span < cfg.tol) {
        return Err(Error::NotConverged {
            method: "relative value iteration (chain may be multichain or periodic)",
            iterations: cfg.max_iter,
            residual: span,
        });
    }
    sol.policy = (0..n)
        .into_par_iter()
        .map(|s| extract(k, &h, 1.0, s, cfg.tie_break, 1e-9).0)
        .collect();
    sol.value = h;
    sol.avg_cost = Some(gain);
    sol.residual = span;
    Ok(sol)
}

/// Outcome of comparing the quantized greedy policy with the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyCheck {
    /// Greedy value equals the optimal value everywhere up to round-off.
    pub optimal: bool,
    pub max_gap: f64,
    /// States where the optimal policy picks a different action.
    pub differing_states: usize,
    pub optimal_solution: MdpSolution,
}

/// Evaluates the greedy policy exactly and compares it with the policy
/// iteration optimum started from greedy.
pub fn verify_greedy_optimal(cfg: &MdpConfig, k: &Kernel) -> Result<GreedyCheck> {
    check_discount(cfg, "greedy verification")?;
    let n = k.n_states();
    let greedy: Vec<usize> = (0..n).map(|s| k.greedy_action(s, &cfg.rf)).collect();
    let (vg, _) = evaluate_policy(k, &greedy, cfg.alpha, 0)?;
    let opt = policy_iteration(cfg, k, StartPolicy::Greedy)?;
    let max_gap = vg
        .iter()
        .zip(&opt.value)
        .map(|(a, b)| a - b)
        .fold(0.0, f64::max);
    let scale = 1.0 + opt.value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let differing_states = greedy.iter().zip(&opt.policy).filter(|(a, b)| a != b).count();
    Ok(GreedyCheck {
        optimal: max_gap <= 1e-9 * scale,
        max_gap,
        differing_states,
        optimal_solution: opt,
    })
}

/// Writes `q,E,action` rows, one per state.
pub fn write_policy_csv<W: Write>(table: &PolicyTable, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    writeln!(w, "q,E,action").map_err(io)?;
    for iq in 0..table.q_levels {
        for ie in 0..table.e_levels {
            writeln!(
                w,
                "{},{},{}",
                iq as f64 * table.q_step,
                ie as f64 * table.e_step,
                table.actions[iq * table.e_levels + ie]
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Reads a table written by [`write_policy_csv`]. The grid is inferred from
/// the distinct `q` and `E` values, which must form complete uniform grids
/// starting at zero.
pub fn read_policy_csv<R: BufRead>(r: R) -> Result<PolicyTable> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Io(e.to_string()))?;
        let line = line.trim();
        if n == 0 || line.is_empty() || line.starts_with('#') {
            if n == 0 && line != "q,E,action" {
                return config_err(format!("policy CSV header must be q,E,action, got {line:?}"));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("line {}: bad number {s:?}", n + 1)))
        };
        if fields.len() != 3 {
            return config_err(format!("line {}: expected 3 fields", n + 1));
        }
        rows.push((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
    }
    let levels = |vals: Vec<f64>| -> Result<(f64, usize)> {
        let mut v = vals;
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
        if v.first() != Some(&0.0) {
            return config_err("policy grid must start at zero");
        }
        let step = if v.len() > 1 { v[1] } else { 1.0 };
        for (i, x) in v.iter().enumerate() {
            if (x - i as f64 * step).abs() > GRID_TOL * step.max(1.0) {
                return config_err("policy grid is not uniform");
            }
        }
        Ok((step, v.len()))
    };
    let (q_step, q_levels) = levels(rows.iter().map(|r| r.0).collect())?;
    let (e_step, e_levels) = levels(rows.iter().map(|r| r.1).collect())?;
    if rows.len() != q_levels * e_levels {
        return config_err(format!(
            "policy CSV has {} rows, expected {}",
            rows.len(),
            q_levels * e_levels
        ));
    }
    let mut actions = vec![f64::NAN; q_levels * e_levels];
    for (q, e, a) in rows {
        let iq = (q / q_step).round() as usize;
        let ie = (e / e_step).round() as usize;
        if a < 0.0 || a > e + GRID_TOL {
            return config_err(format!("action {a} infeasible at E = {e}"));
        }
        actions[iq * e_levels + ie] = a;
    }
    if actions.iter().any(|a| a.is_nan()) {
        return config_err("policy CSV has duplicate states");
    }
    Ok(PolicyTable {
        q_step,
        e_step,
        q_levels,
        e_levels,
        actions,
    })
}
