//! Solvers against brute force on a 9-state instance: q, E in {0, 1, 2},
//! arrivals and harvest in {0, 1} with probability 1/2 each.

use harvest_core::mdp::{
    build_transition, policy_iteration, relative_value_iteration, value_iteration, MdpConfig,
    StartPolicy,
};
use harvest_core::node::{run, NodeSimConfig, StateGrid};
use harvest_core::{DistributionSpec, PolicySpec, RateFunction};

const CAP: usize = 2;
const N: usize = (CAP + 1) * (CAP + 1);

fn idx(q: usize, e: usize) -> usize {
    q * (CAP + 1) + e
}

/// Transition matrix of action `a` in state `(q, e)`, written out directly.
fn transition(g: &dyn Fn(f64) -> f64, q: usize, e: usize, a: usize) -> [f64; N] {
    let mut row = [0.0; N];
    let left = (q as f64 - g(a as f64)).max(0.0);
    for x in 0..2 {
        for y in 0..2 {
            let nq = ((left + x as f64 + 0.5).floor() as usize).min(CAP);
            let ne = (e - a + y).min(CAP);
            row[idx(nq, ne)] += 0.25;
        }
    }
    row
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<[f64; N]>, mut b: [f64; N]) -> [f64; N] {
    for c in 0..N {
        let p = (c..N).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..N {
            let f = a[r][c] / a[c][c];
            for k in c..N {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; N];
    for r in (0..N).rev() {
        let s: f64 = (r + 1..N).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

struct Oracle {
    value: [f64; N],
    /// Largest action among those whose Q-value is within 1e-10 of the
    /// minimum, and whether that minimizer is unique.
    action: [usize; N],
    unique: [bool; N],
}

fn enumerate(g: &dyn Fn(f64) -> f64, alpha: f64) -> Oracle {
    let states: Vec<(usize, usize)> = (0..=CAP).flat_map(|q| (0..=CAP).map(move |e| (q, e))).collect();
    let total: usize = states.iter().map(|&(_, e)| e + 1).product();
    let mut best = [f64::INFINITY; N];
    for code in 0..total {
        let mut c = code;
        let mut mat = Vec::with_capacity(N);
        let mut cost = [0.0; N];
        for &(q, e) in &states {
            let a = c % (e + 1);
            c /= e + 1;
            let t = transition(g, q, e, a);
            let mut r = [0.0; N];
            for k in 0..N {
                r[k] = -alpha * t[k];
            }
            r[idx(q, e)] += 1.0;
            mat.push(r);
            cost[idx(q, e)] = q as f64;
        }
        let v = solve(mat, cost);
        for s in 0..N {
            best[s] = best[s].min(v[s]);
        }
    }
    let mut action = [0; N];
    let mut unique = [true; N];
    for &(q, e) in &states {
        let qs: Vec<f64> = (0..=e)
            .map(|a| {
                let t = transition(g, q, e, a);
                q as f64 + alpha * (0..N).map(|k| t[k] * best[k]).sum::<f64>()
            })
            .collect();
        let m = qs.iter().cloned().fold(f64::INFINITY, f64::min);
        let ties: Vec<usize> = (0..=e).filter(|&a| qs[a] <= m + 1e-10).collect();
        action[idx(q, e)] = *ties.last().unwrap();
        unique[idx(q, e)] = ties.len() == 1;
    }
    Oracle {
        value: best,
        action,
        unique,
    }
}

fn coin() -> Vec<(f64, f64)> {
    vec![(0.0, 0.5), (1.0, 0.5)]
}

fn check_instance(rf: RateFunction, alpha: f64) {
    let g = move |t: f64| rf.bits(t);
    let oracle = enumerate(&g, alpha);
    let cfg = MdpConfig::new(rf, coin(), coin(), alpha).with_caps(2.0, 2.0);
    let k = build_transition(&cfg).unwrap();
    let vi = value_iteration(&cfg, &k).unwrap();
    let pi = policy_iteration(&cfg, &k, StartPolicy::Idle).unwrap();
    for s in 0..N {
        assert!((vi.value[s] - oracle.value[s]).abs() < 1e-8, "VI value at {s}");
        assert!((pi.value[s] - oracle.value[s]).abs() < 1e-8, "PI value at {s}");
        assert_eq!(vi.policy[s], oracle.action[s], "VI action at {s}");
        if oracle.unique[s] {
            assert_eq!(pi.policy[s], oracle.action[s], "PI action at {s}");
        }
    }
}

#[test]
fn toy_solvers_match_enumeration_linear() {
    check_instance(RateFunction::linear(1.0), 0.9);
}

#[test]
fn toy_solvers_match_enumeration_log() {
    check_instance(RateFunction::natural_log(1.0), 0.9);
    check_instance(RateFunction::natural_log(2.0), 0.5);
}

#[test]
fn toy_optimal_actions_are_unique() {
    // With ties absent, every method must land on the same policy.
    let rf = RateFunction::natural_log(1.0);
    let g = move |t: f64| rf.bits(t);
    let oracle = enumerate(&g, 0.9);
    assert!(oracle.unique.iter().all(|&u| u));
    let cfg = MdpConfig::new(rf, coin(), coin(), 0.9).with_caps(2.0, 2.0);
    let k = build_transition(&cfg).unwrap();
    let pi = policy_iteration(&cfg, &k, StartPolicy::Greedy).unwrap();
    assert_eq!(pi.policy, oracle.action.to_vec());
}

#[test]
fn toy_average_cost_matches_simulation() {
    let rf = RateFunction::natural_log(1.0);
    let cfg = MdpConfig::new(rf, coin(), coin(), 1.0).with_caps(2.0, 2.0);
    let k = build_transition(&cfg).unwrap();
    let sol = relative_value_iteration(&cfg, &k).unwrap();
    let coin_dist = DistributionSpec::discrete(coin());
    let mut sim = NodeSimConfig::new(
        coin_dist.clone(),
        coin_dist,
        PolicySpec::tabular(sol.to_table(), rf, 0.5),
    )
    .with_seed(11);
    sim.data_buffer_cap = Some(2.0);
    sim.energy_buffer_cap = Some(2.0);
    sim.grid = Some(StateGrid {
        q_step: 1.0,
        e_step: 1.0,
    });
    let res = run(&sim).unwrap();
    let avg = sol.avg_cost.unwrap();
    assert!((res.mean_q - avg).abs() < 0.01 * avg, "sim {} vs {avg}", res.mean_q);
}

#[test]
fn discounted_values_approach_average_cost() {
    let rf = RateFunction::natural_log(1.0);
    let avg_cfg = MdpConfig::new(rf, coin(), coin(), 1.0).with_caps(2.0, 2.0);
    let k = build_transition(&avg_cfg).unwrap();
    let avg = relative_value_iteration(&avg_cfg, &k).unwrap().avg_cost.unwrap();
    let mut last_gap = f64::INFINITY;
    for alpha in [0.9, 0.99, 0.999] {
        let sol = policy_iteration(&avg_cfg.clone().with_alpha(alpha), &k, StartPolicy::Greedy).unwrap();
        let inf = sol.value.iter().cloned().fold(f64::INFINITY, f64::min);
        let gap = ((1.0 - alpha) * inf - avg).abs();
        assert!(gap < last_gap);
        last_gap = gap;
    }
    assert!(last_gap < 0.02 * avg);
}
