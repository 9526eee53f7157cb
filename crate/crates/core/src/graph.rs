//! Qualitative graph algorithms on transition systems: maximal end
//! components, almost-sure reachability and the two policy fragments
//! (reach phase, uniform in-component phase) used by the synthesis
//! algorithms.
//!
//! Nothing here looks at probability values; only supports matter.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::model::TransitionSystem;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("contract breach: {0}")]
    ContractBreach(String),
}

/// An end component: a state set with, per state, a nonempty action subset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mec {
    members: BTreeMap<usize, Vec<usize>>,
}

impl Mec {
    /// Action lists are sorted and deduplicated.
    pub fn new(members: BTreeMap<usize, Vec<usize>>) -> Self {
        let members = members
            .into_iter()
            .map(|(s, mut acts)| {
                acts.sort_unstable();
                acts.dedup();
                (s, acts)
            })
            .collect();
        Mec { members }
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.keys().copied()
    }

    pub fn state_set(&self) -> BTreeSet<usize> {
        self.members.keys().copied().collect()
    }

    pub fn actions(&self, state: usize) -> &[usize] {
        self.members.get(&state).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn members(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.members
    }

    pub fn contains_state(&self, state: usize) -> bool {
        self.members.contains_key(&state)
    }

    pub fn contains_pair(&self, state: usize, action: usize) -> bool {
        self.members
            .get(&state)
            .is_some_and(|a| a.binary_search(&action).is_ok())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.members
            .iter()
            .flat_map(|(&s, acts)| acts.iter().map(move |&a| (s, a)))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn min_state(&self) -> usize {
        *self.members.keys().next().expect("end components are nonempty")
    }

    /// Closure and strong connectivity in `ts`.
    pub fn is_end_component(&self, ts: &TransitionSystem) -> bool {
        if self.members.is_empty() || self.members.values().any(Vec::is_empty) {
            return false;
        }
        for (&s, acts) in &self.members {
            for &a in acts {
                if a >= ts.n_actions(s) || ts.succ(s, a).iter().any(|t| !self.contains_state(*t)) {
                    return false;
                }
            }
        }
        let start = self.min_state();
        let forward = self.reachable_within(ts, start, false);
        let backward = self.reachable_within(ts, start, true);
        forward.len() == self.len() && backward.len() == self.len()
    }

    fn reachable_within(&self, ts: &TransitionSystem, start: usize, reverse: bool) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for (&s, acts) in &self.members {
                for &a in acts {
                    for &t in ts.succ(s, a) {
                        let (from, to) = if reverse { (t, s) } else { (s, t) };
                        if from == x && seen.insert(to) {
                            queue.push_back(to);
                        }
                    }
                }
            }
        }
        seen
    }
}

/// Strongly connected components of the graph restricted to live states and
/// live actions. Returns a component id per state (`usize::MAX` for dead ones).
fn scc_ids(ts: &TransitionSystem, live_state: &[bool], live_action: &[Vec<bool>]) -> Vec<usize> {
    let n = ts.n_states();
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, 0);
    for _ in 0..n {
        g.add_node(());
    }
    for s in (0..n).filter(|&s| live_state[s]) {
        for a in (0..ts.n_actions(s)).filter(|&a| live_action[s][a]) {
            for &t in ts.succ(s, a) {
                if live_state[t] {
                    g.add_edge(NodeIndex::new(s), NodeIndex::new(t), ());
                }
            }
        }
    }
    let mut ids = vec![usize::MAX; n];
    for (k, comp) in tarjan_scc(&g).into_iter().enumerate() {
        for v in comp {
            ids[v.index()] = k;
        }
    }
    ids
}

/// Decomposes `ts` into its maximal end components by iterated SCC
/// refinement: actions that can leave their component are discarded, states
/// left without actions die, until nothing changes. Components are returned
/// ordered by their smallest state.
pub fn mec_decompose(ts: &TransitionSystem) -> Vec<Mec> {
    let n = ts.n_states();
    let mut live_state = vec![true; n];
    let mut live_action: Vec<Vec<bool>> = (0..n).map(|s| vec![true; ts.n_actions(s)]).collect();
    let ids = loop {
        let ids = scc_ids(ts, &live_state, &live_action);
        let mut changed = false;
        for s in 0..n {
            if !live_state[s] {
                continue;
            }
            for a in 0..ts.n_actions(s) {
                if live_action[s][a] && ts.succ(s, a).iter().any(|&t| !live_state[t] || ids[t] != ids[s]) {
                    live_action[s][a] = false;
                    changed = true;
                }
            }
            if !live_action[s].iter().any(|&x| x) {
                live_state[s] = false;
                changed = true;
            }
        }
        if !changed {
            break ids;
        }
    };
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for s in (0..n).filter(|&s| live_state[s]) {
        let acts = (0..ts.n_actions(s)).filter(|&a| live_action[s][a]).collect();
        groups.entry(ids[s]).or_default().insert(s, acts);
    }
    let mut mecs: Vec<Mec> = groups.into_values().map(Mec::new).collect();
    mecs.sort_by_key(Mec::min_state);
    mecs
}

/// Reverse adjacency: for each state `t`, the `(s, a)` pairs that can move to it.
fn predecessors(ts: &TransitionSystem) -> Vec<Vec<(usize, usize)>> {
    let mut pred = vec![Vec::new(); ts.n_states()];
    for (s, a, t) in ts.transitions() {
        pred[t].push((s, a));
    }
    for p in &mut pred {
        p.dedup();
    }
    pred
}

/// States from which some policy reaches `targets` with probability one.
///
/// Greatest fixed point over candidate sets `U`: keep the states that can
/// reach `targets` using only actions whose successors all stay in `U`.
pub fn almost_sure_reach_set(ts: &TransitionSystem, targets: &BTreeSet<usize>) -> BTreeSet<usize> {
    let n = ts.n_states();
    let pred = predecessors(ts);
    let mut in_u = vec![true; n];
    loop {
        let safe: Vec<Vec<bool>> = (0..n)
            .map(|s| {
                (0..ts.n_actions(s))
                    .map(|a| ts.succ(s, a).iter().all(|&t| in_u[t]))
                    .collect()
            })
            .collect();
        let mut in_r = vec![false; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &t in targets {
            if t < n && !in_r[t] {
                in_r[t] = true;
                queue.push_back(t);
            }
        }
        while let Some(t) = queue.pop_front() {
            for &(s, a) in &pred[t] {
                if in_u[s] && !in_r[s] && safe[s][a] {
                    in_r[s] = true;
                    queue.push_back(s);
                }
            }
        }
        if in_r == in_u {
            break;
        }
        in_u = in_r;
    }
    (0..n).filter(|&s| in_u[s]).collect()
}

/// A deterministic action choice on a subset of states.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialDeterministicPolicy {
    pub choice: BTreeMap<usize, usize>,
}

impl PartialDeterministicPolicy {
    pub fn action(&self, state: usize) -> Option<usize> {
        self.choice.get(&state).copied()
    }

    pub fn domain(&self) -> impl Iterator<Item = usize> + '_ {
        self.choice.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }
}

/// Deterministic policy that reaches `targets` almost surely from every state
/// of `rmax \ targets`.
///
/// Each state plays an action whose successors stay in `rmax` and that
/// minimizes the BFS distance to `targets`; ties go to the smallest action
/// identifier.
pub fn reach_policy(
    ts: &TransitionSystem,
    targets: &BTreeSet<usize>,
    rmax: &BTreeSet<usize>,
) -> Result<PartialDeterministicPolicy, GraphError> {
    let n = ts.n_states();
    if let Some(t) = targets.iter().find(|t| !rmax.contains(t)) {
        return Err(GraphError::ContractBreach(format!(
            "target {} is not in the almost-sure reach set",
            ts.states.get(*t).map(String::as_str).unwrap_or("?")
        )));
    }
    let in_rmax: Vec<bool> = (0..n).map(|s| rmax.contains(&s)).collect();
    let admissible = |s: usize, a: usize| -> bool { ts.succ(s, a).iter().all(|&t| in_rmax[t]) };
    let pred = predecessors(ts);
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &t in targets {
        dist[t] = 0;
        queue.push_back(t);
    }
    while let Some(t) = queue.pop_front() {
        for &(s, a) in &pred[t] {
            if in_rmax[s] && dist[s] == usize::MAX && admissible(s, a) {
                dist[s] = dist[t] + 1;
                queue.push_back(s);
            }
        }
    }
    let mut choice = BTreeMap::new();
    for &s in rmax.iter().filter(|s| !targets.contains(s)) {
        let best = (0..ts.n_actions(s))
            .filter(|&a| admissible(s, a))
            .map(|a| {
                let d = ts.succ(s, a).iter().map(|&t| dist[t]).min().unwrap_or(usize::MAX);
                (d, &ts.actions[s][a], a)
            })
            .filter(|(d, _, _)| *d != usize::MAX)
            .min();
        match best {
            Some((_, _, a)) => {
                choice.insert(s, a);
            }
            None => {
                return Err(GraphError::ContractBreach(format!(
                    "state {} has no action making progress inside the reach set",
                    ts.states[s]
                )))
            }
        }
    }
    Ok(PartialDeterministicPolicy { choice })
}

/// Randomized in-component policy of an end component. Weights default to
/// uniform over the component's actions.
#[derive(Debug, Clone, PartialEq)]
pub struct MecUniformPolicy {
    pub mec: Mec,
    weights: BTreeMap<usize, Vec<(usize, f64)>>,
}

impl MecUniformPolicy {
    /// `(action, probability)` pairs at `state`, or `None` outside the component.
    pub fn distribution(&self, state: usize) -> Option<&[(usize, f64)]> {
        self.weights.get(&state).map(Vec::as_slice)
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.values().all(|row| {
            let k = row.len() as f64;
            row.iter().all(|&(_, p)| p == 1.0 / k)
        })
    }

    /// Replaces the in-component weights at `state`. Weights are normalized;
    /// actions outside the component or a zero total are rejected.
    pub fn with_weights(mut self, state: usize, weights: &[(usize, f64)]) -> Result<Self, GraphError> {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if total.is_nan()
            || total <= 0.0
            || weights
                .iter()
                .any(|&(a, w)| w < 0.0 || !self.mec.contains_pair(state, a))
        {
            return Err(GraphError::ContractBreach(format!(
                "weights at state index {state} must be nonnegative, positive in total, and use component actions"
            )));
        }
        let row = weights
            .iter()
            .filter(|w| w.1 > 0.0)
            .map(|&(a, w)| (a, w / total))
            .collect();
        self.weights.insert(state, row);
        Ok(self)
    }
}

/// Uniform distribution over the component's actions at each of its states.
pub fn mec_uniform_policy(mec: &Mec) -> MecUniformPolicy {
    let weights = mec
        .members()
        .iter()
        .map(|(&s, acts)| {
            let p = 1.0 / acts.len() as f64;
            (s, acts.iter().map(|&a| (a, p)).collect())
        })
        .collect();
    MecUniformPolicy {
        mec: mec.clone(),
        weights,
    }
}

/// States reachable from `start` along any action.
pub fn reachable_states(ts: &TransitionSystem, start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for a in 0..ts.n_actions(s) {
            for &t in ts.succ(s, a) {
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
    }
    seen
}
