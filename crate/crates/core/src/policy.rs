//! Per-slot transmit-energy decisions for a single node.
//!
//! Every rule maps the node's queue and battery (and, for the channel-aware
//! rules, the current gain `h`) to the energy `T` spent in the slot. All of
//! them satisfy `0 <= T <= E`.

use std::sync::Arc;

use crate::dist::{expected_g_exact, DistributionSpec};
use crate::error::{config_err, Error, Result};
use crate::rate::RateFunction;

/// Scale applied to the energy target in the modified rules.
pub const MTO_SCALE: f64 = 0.99;
/// Weight of the battery surplus `(E - c q)^+` in the modified rules.
pub const SURPLUS_GAIN: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeState {
    /// Bits waiting in the data queue.
    pub q: f64,
    /// Energy stored in the battery.
    pub energy: f64,
}

impl NodeState {
    pub fn new(q: f64, energy: f64) -> Self {
        Self { q, energy }
    }

    pub fn is_valid(&self) -> bool {
        self.q >= 0.0 && self.energy >= 0.0 && self.q.is_finite() && self.energy.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Spend whatever was harvested, `T_k = Y_k` (no energy storage).
    Unbuffered,
    /// Throughput optimal: `min(E, E[Y] - eps)`.
    To,
    /// `min(E, g^{-1}(q))`.
    Greedy,
    /// Modified TO.
    Mto,
    /// TO applied without channel knowledge under fading.
    UnfadedTo,
    /// Linear `g` with CSI: spend only in the best fading state.
    FadingLinearTo,
    /// Water filling on the channel gain.
    Wf,
    /// Modified water filling.
    Mwf,
    /// Constant energy per slot (sensing-aware operation).
    ConstantRate,
    /// Lookup table, e.g. an MDP solution.
    Tabular,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Unbuffered => "unbuffered",
            Self::To => "TO",
            Self::Greedy => "greedy",
            Self::Mto => "MTO",
            Self::UnfadedTo => "unfaded-TO",
            Self::FadingLinearTo => "fading-linear-TO",
            Self::Wf => "WF",
            Self::Mwf => "MWF",
            Self::ConstantRate => "constant-rate",
            Self::Tabular => "tabular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let all = [
            Self::Unbuffered,
            Self::To,
            Self::Greedy,
            Self::Mto,
            Self::UnfadedTo,
            Self::FadingLinearTo,
            Self::Wf,
            Self::Mwf,
            Self::ConstantRate,
            Self::Tabular,
        ];
        all.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Whether the rule reads the channel gain.
    pub fn uses_csi(&self) -> bool {
        matches!(self, Self::FadingLinearTo | Self::Wf | Self::Mwf)
    }
}

/// Actions of a stationary policy on a quantized `(q, E)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub q_step: f64,
    pub e_step: f64,
    pub q_levels: usize,
    pub e_levels: usize,
    /// Row-major in `q`: `actions[iq * e_levels + ie]`.
    pub actions: Vec<f64>,
}

impl PolicyTable {
    pub fn action(&self, s: NodeState) -> f64 {
        let iq = grid_index(s.q, self.q_step, self.q_levels);
        let ie = grid_index(s.energy, self.e_step, self.e_levels);
        self.actions[iq * self.e_levels + ie]
    }
}

/// Nearest grid index with round-half-up, clamped to the grid.
pub fn grid_index(v: f64, step: f64, levels: usize) -> usize {
    let i = (v / step + 0.5).floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(levels - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub rf: RateFunction,
    /// `E[Y]`, energy harvested per slot on average.
    pub mean_harvest: f64,
    pub epsilon: f64,
    /// The constant `c` of the modified rules.
    pub c_mto: f64,
    /// Water-filling threshold.
    pub h0: f64,
    /// Best fading state and its probability.
    pub hbar: f64,
    pub p_hbar: f64,
    pub c_rate: f64,
    pub table: Option<Arc<PolicyTable>>,
}

impl PolicySpec {
    /// A policy of `kind` with default parameters: `eps = 0.01 E[Y]`, `c = 0.1`.
    /// Channel-aware kinds still need [`PolicySpec::with_fading`].
    pub fn new(kind: PolicyKind, rf: RateFunction, mean_harvest: f64) -> Self {
        Self {
            kind,
            rf,
            mean_harvest,
            epsilon: 0.01 * mean_harvest,
            c_mto: 0.1,
            h0: 0.0,
            hbar: 0.0,
            p_hbar: 0.0,
            c_rate: 0.0,
            table: None,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c_mto = c;
        self
    }

    pub fn with_rate_constant(mut self, c: f64) -> Self {
        self.c_rate = c;
        self
    }

    pub fn tabular(table: PolicyTable, rf: RateFunction, mean_harvest: f64) -> Self {
        let mut p = Self::new(PolicyKind::Tabular, rf, mean_harvest);
        p.table = Some(Arc::new(table));
        p
    }

    /// Fills the channel-dependent parameters from the fading distribution:
    /// `h0` for the water-filling rules and `(hbar, p_hbar)` for the linear one.
    pub fn with_fading(mut self, h: &DistributionSpec) -> Result<Self> {
        match self.kind {
            PolicyKind::Wf | PolicyKind::Mwf => {
                self.h0 = solve_h0(h, self.mean_harvest - self.epsilon)?;
            }
            PolicyKind::FadingLinearTo => {
                let atoms = h.pmf().ok_or_else(|| {
                    Error::Config("fading-linear-TO needs a finite-support fading gain".into())
                })?;
                let (hbar, p) = atoms
                    .iter()
                    .filter(|a| a.1 > 0.0)
                    .fold((f64::NEG_INFINITY, 0.0), |best, a| {
                        if a.0 > best.0 {
                            *a
                        } else {
                            best
                        }
                    });
                self.hbar = hbar;
                self.p_hbar = p;
            }
            _ => {}
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.rf.validate()?;
        let needs_eps = matches!(
            self.kind,
            PolicyKind::To | PolicyKind::UnfadedTo | PolicyKind::FadingLinearTo | PolicyKind::Wf | PolicyKind::Mwf
        );
        if needs_eps && !(self.epsilon > 0.0 && self.epsilon < self.mean_harvest) {
            return config_err(format!(
                "epsilon must satisfy 0 < epsilon < E[Y] = {}, got {}",
                self.mean_harvest, self.epsilon
            ));
        }
        match self.kind {
            PolicyKind::Mto | PolicyKind::Mwf if !(self.c_mto > 0.0) => {
                config_err(format!("c must be positive, got {}", self.c_mto))
            }
            PolicyKind::Wf | PolicyKind::Mwf if !(self.h0 > 0.0) => {
                config_err("water-filling policy needs h0 > 0 (call with_fading)")
            }
            PolicyKind::FadingLinearTo if !(self.p_hbar > 0.0) => {
                config_err("fading-linear-TO needs P(h = hbar) > 0")
            }
            PolicyKind::ConstantRate if !(self.c_rate >= 0.0) => {
                config_err("constant-rate policy needs c >= 0")
            }
            PolicyKind::Tabular if self.table.is_none() => config_err("tabular policy without a table"),
            _ => Ok(()),
        }
    }

    /// Energy to spend this slot given the state and current gain `h`
    /// (ignored by rules without channel knowledge).
    pub fn decide(&self, s: NodeState, h: f64) -> f64 {
        let t = match self.kind {
            PolicyKind::Unbuffered => s.energy,
            PolicyKind::To | PolicyKind::UnfadedTo => decide_to(s, self),
            PolicyKind::Greedy => decide_greedy(s, self),
            PolicyKind::Mto => decide_mto(s, self),
            PolicyKind::FadingLinearTo => decide_fading_linear_to(s, h, self),
            PolicyKind::Wf => decide_wf(s, h, self),
            PolicyKind::Mwf => decide_mwf(s, h, self),
            PolicyKind::ConstantRate => decide_constant_rate(s, self),
            PolicyKind::Tabular => s.energy.min(self.table.as_ref().unwrap().action(s)),
        };
        debug_assert!(t >= 0.0 && t <= s.energy, "{:?} chose {t} with E = {}", self.kind, s.energy);
        t
    }
}

pub fn decide_to(s: NodeState, p: &PolicySpec) -> f64 {
    s.energy.min(p.mean_harvest - p.epsilon)
}

pub fn decide_greedy(s: NodeState, p: &PolicySpec) -> f64 {
    s.energy.min(p.rf.energy_for(s.q))
}

pub fn decide_mto(s: NodeState, p: &PolicySpec) -> f64 {
    let surplus = (s.energy - p.c_mto * s.q).max(0.0);
    p.rf
        .energy_for(s.q)
        .min(s.energy)
        .min(MTO_SCALE * (p.mean_harvest + SURPLUS_GAIN * surplus))
}

/// Water-filling power `(1/h0 - 1/h)^+`, without the battery clamp.
#[inline]
pub fn water_filling(h0: f64, h: f64) -> f64 {
    if h <= 0.0 {
        0.0
    } else {
        (1.0 / h0 - 1.0 / h).max(0.0)
    }
}

pub fn decide_wf(s: NodeState, h: f64, p: &PolicySpec) -> f64 {
    s.energy.min(water_filling(p.h0, h))
}

pub fn decide_mwf(s: NodeState, h: f64, p: &PolicySpec) -> f64 {
    let level = if h <= 0.0 {
        0.0
    } else {
        1.0 / p.h0 - 1.0 / h
    };
    let surplus = (s.energy - p.c_mto * s.q).max(0.0);
    p.rf
        .energy_for(s.q)
        .min(s.energy)
        .min((level + SURPLUS_GAIN * surplus).max(0.0))
}

pub fn decide_fading_linear_to(s: NodeState, h: f64, p: &PolicySpec) -> f64 {
    if h == p.hbar {
        s.energy.min((p.mean_harvest - p.epsilon) / p.p_hbar)
    } else {
        0.0
    }
}

/// `min(E, c)`. The simulator deducts the sensing drain separately.
pub fn decide_constant_rate(s: NodeState, p: &PolicySpec) -> f64 {
    s.energy.min(p.c_rate)
}

/// Sensing drain `Z_k` and the stability margin `delta` for the
/// constant-rate rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingConfig {
    pub z_dist: DistributionSpec,
    pub delta: f64,
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        self.z_dist.validate()?;
        if !(self.delta > 0.0) {
            return config_err(format!("sensing delta must be positive, got {}", self.delta));
        }
        Ok(())
    }

    /// Energy-neutral operation with constant spend `c`: `c + E[Z] < E[Y] - delta`.
    pub fn is_feasible(&self, c: f64, mean_harvest: f64) -> bool {
        c + self.z_dist.exact_mean() < mean_harvest - self.delta
    }
}

/// The infimum of constants `c` with `E[X] < g(c)`, i.e. `g^{-1}(E[X])`.
pub fn find_min_rate_constant(mean_arrival: f64, rf: &RateFunction) -> Result<f64> {
    rf.inverse(mean_arrival)
}

/// Stability bounds on `E[X]`: `(E[g(Y)], g(E[Y]))` for the greedy/unbuffered
/// rules and for TO respectively.
pub fn stability_bounds(y: &DistributionSpec, rf: &RateFunction) -> (f64, f64) {
    (expected_g_exact(y, rf), rf.bits(y.exact_mean()))
}

/// Expected water-filling energy `E[(1/h0 - 1/h)^+]`.
pub fn water_filling_energy(h: &[(f64, f64)], h0: f64) -> f64 {
    h.iter().map(|(g, p)| p * water_filling(h0, *g)).sum()
}

/// Solves `E[(1/h0 - 1/h)^+] = budget` for `h0` by bisection on
/// `[1e-9, max h]`. The map is decreasing in `h0`.
pub fn solve_h0(h: &DistributionSpec, budget: f64) -> Result<f64> {
    let atoms = h
        .pmf()
        .ok_or_else(|| Error::Config("water filling needs a finite-support fading gain".into()))?;
    solve_h0_atoms(&atoms, budget)
}

pub fn solve_h0_atoms(atoms: &[(f64, f64)], budget: f64) -> Result<f64> {
    if !(budget > 0.0) {
        return config_err(format!("water-filling budget must be positive, got {budget}"));
    }
    let hmax = atoms
        .iter()
        .filter(|a| a.1 > 0.0)
        .fold(0.0f64, |m, a| m.max(a.0));
    if hmax <= 0.0 {
        return config_err("fading gain is identically zero");
    }
    let (mut lo, mut hi) = (1e-9, hmax);
    if water_filling_energy(atoms, lo) < budget {
        return config_err(format!("budget {budget} unreachable for h0 >= 1e-9"));
    }
    // f(lo) >= budget >= f(hi) = 0
    while hi - lo > 1e-14 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if water_filling_energy(atoms, mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E1: f64 = std::f64::consts::E - 1.0;

    fn ln1p() -> RateFunction {
        RateFunction::natural_log(1.0)
    }

    fn spec(kind: PolicyKind) -> PolicySpec {
        PolicySpec::new(kind, ln1p(), 1.0).with_epsilon(0.01)
    }

    #[test]
    fn to_examples() {
        let p = spec(PolicyKind::To);
        assert!((decide_to(NodeState::new(3.0, 5.0), &p) - 0.99).abs() < 1e-15);
        assert_eq!(decide_to(NodeState::new(3.0, 0.5), &p), 0.5);
        assert_eq!(decide_to(NodeState::new(3.0, 0.0), &p), 0.0);
    }

    #[test]
    fn greedy_examples() {
        let p = PolicySpec::new(PolicyKind::Greedy, RateFunction::linear(10.0), 1.0);
        assert!((decide_greedy(NodeState::new(2.0, 5.0), &p) - 0.2).abs() < 1e-15);
        let p = spec(PolicyKind::Greedy);
        assert!((decide_greedy(NodeState::new(1.0, 10.0), &p) - E1).abs() < 1e-12);
        assert_eq!(decide_greedy(NodeState::new(0.0, 3.0), &p), 0.0);
    }

    #[test]
    fn mto_examples() {
        let p = spec(PolicyKind::Mto).with_c(0.1);
        let t = decide_mto(NodeState::new(5.0, 2.0), &p);
        assert!((t - 0.99 * (1.0 + 0.001 * 1.5)).abs() < 1e-12);
        assert!((t - 0.9915).abs() < 1e-4);
        assert_eq!(decide_mto(NodeState::new(0.0, 7.0), &p), 0.0);
        let t = decide_mto(NodeState::new(100.0, 50.0), &p);
        assert!((t - 1.0296).abs() < 1e-12);
    }

    #[test]
    fn wf_examples() {
        let mut p = spec(PolicyKind::Wf);
        p.h0 = 0.5;
        assert_eq!(decide_wf(NodeState::new(1.0, 10.0), 0.4, &p), 0.0);
        assert_eq!(decide_wf(NodeState::new(1.0, 10.0), 0.5, &p), 0.0);
        assert!((decide_wf(NodeState::new(1.0, f64::INFINITY), 2.0, &p) - 1.5).abs() < 1e-15);
        assert_eq!(decide_wf(NodeState::new(1.0, 10.0), 0.0, &p), 0.0);
        assert_eq!(decide_wf(NodeState::new(1.0, 0.7), 2.0, &p), 0.7);
    }

    #[test]
    fn wf_threshold_meets_budget() {
        let h = DistributionSpec::four_state_fading();
        let h0 = solve_h0(&h, 0.99).unwrap();
        let spent = water_filling_energy(&h.pmf().unwrap(), h0);
        assert!((spent - 0.99).abs() < 1e-9, "{spent}");
        // Active set {0.5, 1.0, 2.2}: 0.9 / h0 - (0.3/0.5 + 0.4/1.0 + 0.2/2.2) = 0.99
        let level = (0.99 + 0.6 + 0.4 + 0.2 / 2.2) / 0.9;
        assert!((h0 - 1.0 / level).abs() < 1e-10);
    }

    #[test]
    fn wf_rejects_bad_budget() {
        let h = DistributionSpec::four_state_fading();
        assert!(solve_h0(&h, 0.0).is_err());
        assert!(solve_h0(&DistributionSpec::exponential(1.0), 1.0).is_err());
    }

    #[test]
    fn mwf_examples() {
        let mut p = spec(PolicyKind::Mwf).with_c(0.1);
        p.h0 = 0.5;
        assert_eq!(decide_mwf(NodeState::new(0.0, 5.0), 2.0, &p), 0.0);
        assert_eq!(decide_mwf(NodeState::new(10.0, 1.0), 0.5, &p), 0.0);
        let t = decide_mwf(NodeState::new(10.0, 100.0), 2.0, &p);
        assert!((t - 1.599).abs() < 1e-12, "{t}");
    }

    #[test]
    fn fading_linear_to_examples() {
        let p = PolicySpec::new(PolicyKind::FadingLinearTo, RateFunction::linear(10.0), 1.0)
            .with_epsilon(0.01)
            .with_fading(&DistributionSpec::four_state_fading())
            .unwrap();
        assert_eq!((p.hbar, p.p_hbar), (2.2, 0.2));
        assert!((decide_fading_linear_to(NodeState::new(1.0, 100.0), 2.2, &p) - 4.95).abs() < 1e-12);
        assert_eq!(decide_fading_linear_to(NodeState::new(1.0, 100.0), 1.0, &p), 0.0);
        assert_eq!(decide_fading_linear_to(NodeState::new(1.0, 2.0), 2.2, &p), 2.0);
        let mut bad = p.clone();
        bad.p_hbar = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_rate_examples() {
        let p = spec(PolicyKind::ConstantRate).with_rate_constant(0.5);
        assert_eq!(decide_constant_rate(NodeState::new(1.0, 3.0), &p), 0.5);
        assert_eq!(decide_constant_rate(NodeState::new(1.0, 0.2), &p), 0.2);
        let sc = SensingConfig {
            z_dist: DistributionSpec::deterministic(0.2),
            delta: 0.05,
        };
        assert!(sc.is_feasible(0.5, 1.0));
        assert!(!sc.is_feasible(0.8, 1.0));
    }

    #[test]
    fn min_rate_constant() {
        assert_eq!(find_min_rate_constant(0.0, &ln1p()).unwrap(), 0.0);
        assert!((find_min_rate_constant(1.0, &ln1p()).unwrap() - E1).abs() < 1e-12);
        let lin = RateFunction::linear(10.0);
        assert!((find_min_rate_constant(2.0, &lin).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn stability_bound_examples() {
        let (gb, tb) = stability_bounds(&DistributionSpec::exponential(10.0), &ln1p());
        assert!((gb / 2.01 - 1.0).abs() < 0.01, "{gb}");
        assert!((tb / 2.40 - 1.0).abs() < 0.01, "{tb}");
        let (gb, tb) = stability_bounds(&DistributionSpec::exponential(1.0), &RateFunction::linear(10.0));
        assert!((gb - 10.0).abs() < 1e-9 && (tb - 10.0).abs() < 1e-12);
        let (gb, tb) = stability_bounds(&DistributionSpec::deterministic(3.0), &ln1p());
        assert_eq!(gb, tb);
    }

    #[test]
    fn validation_catches_bad_parameters() {
        assert!(spec(PolicyKind::To).with_epsilon(0.0).validate().is_err());
        assert!(spec(PolicyKind::To).with_epsilon(1.0).validate().is_err());
        assert!(spec(PolicyKind::Mto).with_c(0.0).validate().is_err());
        assert!(spec(PolicyKind::Wf).validate().is_err());
        assert!(spec(PolicyKind::To).validate().is_ok());
    }

    #[test]
    fn tabular_lookup_rounds_half_up() {
        let table = PolicyTable {
            q_step: 1.0,
            e_step: 1.0,
            q_levels: 3,
            e_levels: 3,
            actions: (0..9).map(|i| (i % 3) as f64).collect(),
        };
        let p = PolicySpec::tabular(table, ln1p(), 1.0);
        assert_eq!(p.decide(NodeState::new(0.5, 1.5), 1.0), 1.5f64.min(2.0));
        assert_eq!(p.decide(NodeState::new(7.0, 9.0), 1.0), 2.0);
        assert_eq!(grid_index(0.49, 1.0, 10), 0);
        assert_eq!(grid_index(0.5, 1.0, 10), 1);
    }

    fn any_kind() -> impl Strategy<Value = PolicyKind> {
        prop_oneof![
            Just(PolicyKind::Unbuffered),
            Just(PolicyKind::To),
            Just(PolicyKind::Greedy),
            Just(PolicyKind::Mto),
            Just(PolicyKind::FadingLinearTo),
            Just(PolicyKind::Wf),
            Just(PolicyKind::Mwf),
            Just(PolicyKind::ConstantRate),
        ]
    }

    proptest! {
        #[test]
        fn never_overdraws(kind in any_kind(), q in 0.0f64..200.0, e in 0.0f64..200.0,
                           hi in 0usize..4, linear in any::<bool>()) {
            let rf = if linear { RateFunction::linear(10.0) } else { ln1p() };
            let hd = DistributionSpec::four_state_fading();
            let p = PolicySpec::new(kind, rf, 1.0).with_rate_constant(0.7).with_fading(&hd).unwrap();
            let h = [0.1, 0.5, 1.0, 2.2][hi];
            let t = p.decide(NodeState::new(q, e), h);
            prop_assert!(t >= 0.0 && t <= e);
        }

        #[test]
        fn greedy_idle_on_empty_queue(e in 0.0f64..100.0) {
            prop_assert_eq!(decide_greedy(NodeState::new(0.0, e), &spec(PolicyKind::Greedy)), 0.0);
        }

        #[test]
        fn linear_greedy_serves_min_of_queue_and_budget(q in 0.0f64..100.0, e in 0.0f64..20.0) {
            let p = PolicySpec::new(PolicyKind::Greedy, RateFunction::linear(10.0), 1.0);
            let t = decide_greedy(NodeState::new(q, e), &p);
            prop_assert!((p.rf.bits(t) - q.min(10.0 * e)).abs() <= 1e-12 * q.max(1.0));
        }

        #[test]
        fn wf_nondecreasing_in_gain(a in 0.0f64..5.0, d in 0.0f64..5.0) {
            let h0 = solve_h0(&DistributionSpec::four_state_fading(), 0.99).unwrap();
            prop_assert!(water_filling(h0, a) <= water_filling(h0, a + d));
        }

        #[test]
        fn jensen_bounds(mean in 0.01f64..20.0, which in 0usize..3) {
            let y = match which {
                0 => DistributionSpec::exponential(mean),
                1 => DistributionSpec::erlang(5, mean),
                _ => DistributionSpec::hyperexponential(mean),
            };
            let (gb, tb) = stability_bounds(&y, &ln1p());
            prop_assert!(gb <= tb + 1e-9);
        }
    }
}
