#![allow(dead_code)]
//! Independent oracles and fixtures shared by the integration tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use mmdp_detect_core::model::{Distribution, Mdp, Mmdp, TransitionSystem};
use mmdp_detect_core::parse_mmdp;
use mmdp_detect_core::policy::{ActiveSet, Controller};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// State to enabled actions of an end component.
pub type Members = BTreeMap<usize, Vec<usize>>;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn example1() -> Mmdp {
    parse_mmdp(&std::fs::read_to_string(data_path("example1.json")).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn st(m: &Mmdp, name: &str) -> usize {
    m.state_index(name).unwrap_or_else(|| panic!("no state {name}"))
}

pub fn act(m: &Mmdp, s: &str, a: &str) -> usize {
    let si = st(m, s);
    m.action_index(si, a).unwrap_or_else(|| panic!("no action {a} at {s}"))
}

/// Max reach probability of `targets` by value iteration on `m`.
pub fn pmax_reach(m: &Mdp, targets: &BTreeSet<usize>) -> Vec<f64> {
    let n = m.n_states();
    let mut v: Vec<f64> = (0..n).map(|s| if targets.contains(&s) { 1.0 } else { 0.0 }).collect();
    for _ in 0..200_000 {
        let mut next = v.clone();
        let mut delta = 0.0f64;
        for s in (0..n).filter(|s| !targets.contains(s)) {
            let best = (0..m.n_actions(s))
                .map(|a| m.row(s, a).entries().iter().map(|&(t, p)| p * v[t]).sum::<f64>())
                .fold(0.0, f64::max);
            delta = delta.max((best - v[s]).abs());
            next[s] = best;
        }
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

/// Reach probability of `targets` under a deterministic choice on `m`;
/// states outside the choice and targets are absorbing failures.
pub fn policy_reach(m: &Mdp, choice: &BTreeMap<usize, usize>, targets: &BTreeSet<usize>) -> Vec<f64> {
    let n = m.n_states();
    let mut v: Vec<f64> = (0..n).map(|s| if targets.contains(&s) { 1.0 } else { 0.0 }).collect();
    for _ in 0..200_000 {
        let mut next = v.clone();
        let mut delta = 0.0f64;
        for (&s, &a) in choice {
            if targets.contains(&s) {
                continue;
            }
            let x: f64 = m.row(s, a).entries().iter().map(|&(t, p)| p * v[t]).sum();
            delta = delta.max((x - v[s]).abs());
            next[s] = x;
        }
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

/// Uniform-weight MDP over the supports of `ts`.
pub fn uniform_mdp(ts: &TransitionSystem) -> Mdp {
    Mdp {
        states: ts.states.clone(),
        actions: ts.actions.clone(),
        kernel: ts
            .successors
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|succ| Distribution::new(succ.iter().map(|&t| (t, 1.0 / succ.len() as f64))))
                    .collect()
            })
            .collect(),
        initial: ts.initial,
    }
}

fn strongly_connected(ts: &TransitionSystem, members: &BTreeMap<usize, Vec<usize>>) -> bool {
    let states: Vec<usize> = members.keys().copied().collect();
    let reach = |from: usize| {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(x) = stack.pop() {
            for &a in &members[&x] {
                for &t in ts.succ(x, a) {
                    if seen.insert(t) {
                        stack.push(t);
                    }
                }
            }
        }
        seen
    };
    states.iter().all(|&s| reach(s).len() == states.len())
}

/// End component with state set `x` and all actions staying in `x`, if any.
pub fn largest_ec_on(ts: &TransitionSystem, x: &BTreeSet<usize>) -> Option<BTreeMap<usize, Vec<usize>>> {
    let mut members = BTreeMap::new();
    for &s in x {
        let acts: Vec<usize> = (0..ts.n_actions(s))
            .filter(|&a| ts.succ(s, a).iter().all(|t| x.contains(t)))
            .collect();
        if acts.is_empty() {
            return None;
        }
        members.insert(s, acts);
    }
    strongly_connected(ts, &members).then_some(members)
}

/// MECs by enumerating every state subset (≤ 12 states).
pub fn brute_force_mecs(ts: &TransitionSystem) -> BTreeSet<BTreeMap<usize, Vec<usize>>> {
    let n = ts.n_states();
    assert!(n <= 12);
    let mut ecs: Vec<(BTreeSet<usize>, Members)> = Vec::new();
    for mask in 1u32..(1 << n) {
        let x: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if let Some(ec) = largest_ec_on(ts, &x) {
            ecs.push((x, ec));
        }
    }
    ecs.iter()
        .filter(|(x, _)| !ecs.iter().any(|(y, _)| x != y && x.is_subset(y)))
        .map(|(_, ec)| ec.clone())
        .collect()
}

/// `Σ_h √(P_i(h) P_j(h))` over explicit histories of length `t`, with the
/// controller replayed along every history and each model's probability
/// accumulated separately.
pub fn bc_by_histories<C: Controller>(m: &Mmdp, i: usize, j: usize, policy: &C, t: usize) -> f64 {
    let mut histories: Vec<(Vec<usize>, Vec<usize>)> = vec![(vec![m.initial()], vec![])];
    for _ in 0..t {
        let mut next = Vec::new();
        for (states, actions) in &histories {
            let s = *states.last().unwrap();
            for a in 0..m.base().n_actions(s) {
                let succ: BTreeSet<usize> = m.models().iter().flat_map(|md| md.row(s, a).support()).collect();
                for t in succ {
                    let mut st = states.clone();
                    let mut ac = actions.clone();
                    st.push(t);
                    ac.push(a);
                    next.push((st, ac));
                }
            }
        }
        histories = next;
    }
    histories
        .iter()
        .map(|(states, actions)| {
            let pi = history_prob(m, i, policy, states, actions);
            let pj = history_prob(m, j, policy, states, actions);
            (pi * pj).sqrt()
        })
        .sum()
}

/// Probability of the history in model `k` under `policy`, where the
/// controller observes the active set implied by the whole family.
pub fn history_prob<C: Controller>(m: &Mmdp, k: usize, policy: &C, states: &[usize], actions: &[usize]) -> f64 {
    let mut active = ActiveSet::full(m.n_models());
    let Some(mut mem) = policy.start(active, states[0]) else {
        return 0.0;
    };
    let mut p = 1.0;
    for (step, &a) in actions.iter().enumerate() {
        let s = states[step];
        let next = states[step + 1];
        let Some((m2, dist)) = policy.decide(&mem, s) else {
            return 0.0;
        };
        let pa = dist.iter().find(|x| x.0 == a).map_or(0.0, |x| x.1);
        p *= pa * m.model(k).prob(s, a, next);
        if p == 0.0 {
            return 0.0;
        }
        let next_active = ActiveSet::from_indices(active.iter().filter(|&x| m.model(x).prob(s, a, next) > 0.0));
        mem = if next_active == active {
            m2
        } else {
            match policy.start(next_active, next) {
                Some(x) => x,
                None => return p,
            }
        };
        active = next_active;
    }
    p
}

/// States reachable in `ts` from `start` using only the chosen actions of a
/// policy `choose(s) -> actions`.
pub fn reachable_under(ts: &TransitionSystem, start: usize, choose: impl Fn(usize) -> Vec<usize>) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        for a in choose(s) {
            for &t in ts.succ(s, a) {
                if seen.insert(t) {
                    stack.push(t);
                }
            }
        }
    }
    seen
}
