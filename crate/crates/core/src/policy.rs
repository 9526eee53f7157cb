//! Detection policies, their runtime semantics, and synthesis outcomes.
//!
//! A [`DetectionPolicy`] is a table keyed by `(active set, entry state)`.
//! Each entry holds a reach fragment and the in-component fragments of its
//! informative MECs. At runtime the controller keeps `(active set, entry
//! state, mode)`: it plays the reach fragment until it enters one of the
//! entry's components, then commits to that component's randomized policy
//! for as long as the active set stays the same.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{mec_uniform_policy, Mec, MecUniformPolicy, PartialDeterministicPolicy};
use crate::model::{Mdp, Mmdp, TransitionSystem};

/// Maximum number of models an [`ActiveSet`] can index.
pub const MAX_MODELS: usize = 64;

/// A nonempty subset of model indices, stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActiveSet(u64);

impl ActiveSet {
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_MODELS, "at most {MAX_MODELS} models are supported");
        if n == MAX_MODELS {
            ActiveSet(u64::MAX)
        } else {
            ActiveSet((1u64 << n) - 1)
        }
    }

    pub fn empty() -> Self {
        ActiveSet(0)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = 0u64;
        for i in indices {
            assert!(i < MAX_MODELS, "model index {i} out of range");
            bits |= 1 << i;
        }
        ActiveSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_MODELS && self.0 & (1 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_singleton(self) -> bool {
        self.len() == 1
    }

    pub fn intersect(self, other: ActiveSet) -> ActiveSet {
        ActiveSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ActiveSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Indices in increasing order (the canonical encoding).
    pub fn indices(self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_MODELS).filter(move |&i| self.contains(i))
    }
}

impl fmt::Debug for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// `(action index, probability)` pairs.
pub type ActionDist = Vec<(usize, f64)>;

/// Anything that can drive an MMDP: chooses action distributions from a
/// finite memory, reset whenever observations shrink the active set.
pub trait Controller {
    type Memory: Clone + Ord;

    /// Memory on entering `active` at `state`; `None` when the policy has
    /// nothing for that configuration.
    fn start(&self, active: ActiveSet, state: usize) -> Option<Self::Memory>;

    /// Updated memory and action distribution at `state`.
    fn decide(&self, memory: &Self::Memory, state: usize) -> Option<(Self::Memory, ActionDist)>;
}

/// Time-invariant Markov policy: `probs[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn uniform(m: &Mdp) -> Self {
        StationaryPolicy {
            probs: m
                .actions
                .iter()
                .map(|acts| vec![1.0 / acts.len() as f64; acts.len()])
                .collect(),
        }
    }

    /// Random rows drawn from `rng`; each action gets a positive weight.
    pub fn random<R: Rng + ?Sized>(m: &Mdp, rng: &mut R) -> Self {
        StationaryPolicy {
            probs: m
                .actions
                .iter()
                .map(|acts| {
                    let w: Vec<f64> = acts.iter().map(|_| rng.random::<f64>() + 0.05).collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / total).collect()
                })
                .collect(),
        }
    }

    /// Rows must match the action sets of `m` and sum to one.
    pub fn fits(&self, m: &Mdp) -> bool {
        self.probs.len() == m.n_states()
            && self.probs.iter().enumerate().all(|(s, row)| {
                row.len() == m.n_actions(s)
                    && row.iter().all(|p| (0.0..=1.0).contains(p))
                    && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            })
    }
}

impl Controller for StationaryPolicy {
    type Memory = ();

    fn start(&self, _active: ActiveSet, _state: usize) -> Option<()> {
        Some(())
    }

    fn decide(&self, _memory: &(), state: usize) -> Option<((), ActionDist)> {
        let row = self.probs.get(state)?;
        Some((
            (),
            row.iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, &p)| (a, p))
                .collect(),
        ))
    }
}

/// Policy for one `(active set, entry state)` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub reach: PartialDeterministicPolicy,
    pub mecs: Vec<MecUniformPolicy>,
}

impl PolicyEntry {
    pub fn mec_containing(&self, state: usize) -> Option<usize> {
        self.mecs.iter().position(|m| m.mec.contains_state(state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Reach,
    Committed(usize),
}

/// Runtime memory of a [`DetectionPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControllerState {
    pub active: ActiveSet,
    pub entry_state: usize,
    pub mode: Mode,
}

/// Composite memory policy produced by synthesis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionPolicy {
    entries: BTreeMap<(ActiveSet, usize), PolicyEntry>,
}

impl DetectionPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, active: ActiveSet, entry_state: usize, entry: PolicyEntry) {
        self.entries.insert((active, entry_state), entry);
    }

    pub fn extend(&mut self, other: &DetectionPolicy) {
        for (k, v) in &other.entries {
            self.entries.entry(*k).or_insert_with(|| v.clone());
        }
    }

    pub fn entry(&self, active: ActiveSet, entry_state: usize) -> Option<&PolicyEntry> {
        self.entries.get(&(active, entry_state))
    }

    pub fn entry_mut(&mut self, active: ActiveSet, entry_state: usize) -> Option<&mut PolicyEntry> {
        self.entries.get_mut(&(active, entry_state))
    }

    pub fn entries(&self) -> impl Iterator<Item = (ActiveSet, usize, &PolicyEntry)> {
        self.entries.iter().map(|(&(a, s), e)| (a, s, e))
    }

    pub fn keys(&self) -> BTreeSet<(ActiveSet, usize)> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stationary equivalent of a single-entry policy: reach actions on the
    /// reach domain, component weights inside components, uniform elsewhere.
    /// Valid because the components are state-disjoint and never left.
    pub fn to_stationary(&self, active: ActiveSet, entry_state: usize, m: &Mdp) -> Option<StationaryPolicy> {
        let entry = self.entry(active, entry_state)?;
        let mut pol = StationaryPolicy::uniform(m);
        for (s, a) in &entry.reach.choice {
            pol.probs[*s] = vec![0.0; m.n_actions(*s)];
            pol.probs[*s][*a] = 1.0;
        }
        for frag in &entry.mecs {
            for s in frag.mec.states() {
                let mut row = vec![0.0; m.n_actions(s)];
                for &(a, p) in frag.distribution(s)? {
                    row[a] = p;
                }
                pol.probs[s] = row;
            }
        }
        Some(pol)
    }
}

impl Controller for DetectionPolicy {
    type Memory = ControllerState;

    fn start(&self, active: ActiveSet, state: usize) -> Option<ControllerState> {
        self.entry(active, state).map(|_| ControllerState {
            active,
            entry_state: state,
            mode: Mode::Reach,
        })
    }

    fn decide(&self, memory: &ControllerState, state: usize) -> Option<(ControllerState, ActionDist)> {
        let entry = self.entry(memory.active, memory.entry_state)?;
        let mut next = *memory;
        if next.mode == Mode::Reach {
            if let Some(k) = entry.mec_containing(state) {
                next.mode = Mode::Committed(k);
            }
        }
        let dist = match next.mode {
            Mode::Reach => vec![(entry.reach.action(state)?, 1.0)],
            Mode::Committed(k) => entry.mecs.get(k)?.distribution(state)?.to_vec(),
        };
        Some((next, dist))
    }
}

/// Cache statistics of the recursive synthesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// An edge of the general-case structure into one of its terminals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TerminalEdge {
    pub state: usize,
    pub action: usize,
    pub successor: usize,
    pub active: ActiveSet,
    pub flag: bool,
}

/// What synthesis looked at, in terms of the structure it built.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Informative structure (binary) or detection structure (general case).
    pub structure: TransitionSystem,
    pub mecs: Vec<Mec>,
    pub informative_mecs: Vec<Mec>,
    pub rmax: BTreeSet<usize>,
    /// A reachable non-informative MEC, reported when no policy exists.
    pub witness: Option<Mec>,
    /// Original state indices explored by the general-case search; structure
    /// index `k` corresponds to `explored[k]`.
    pub explored: Vec<usize>,
    /// Edges into the terminals, with original state/action/successor indices.
    pub terminal_edges: Vec<TerminalEdge>,
    pub cache: CacheStats,
}

/// Result of a synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApdOutcome {
    pub exists: bool,
    pub policy: Option<DetectionPolicy>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy refers to unknown state {0}")]
    UnknownState(String),
    #[error("policy refers to action {action} unavailable at state {state}")]
    UnknownAction { state: String, action: String },
    #[error("active set {0:?} is empty or uses model indices outside 1..={1}")]
    BadActiveSet(Vec<usize>, usize),
    #[error("component listed in an entry is not uniform-representable: {0}")]
    BadComponent(String),
    #[error("malformed policy JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk form of a [`DetectionPolicy`]; model indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDocument {
    pub active: Vec<usize>,
    pub entry_state: String,
    pub reach: IndexMap<String, String>,
    pub mecs: Vec<MecDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MecDocument {
    pub states: IndexMap<String, Vec<String>>,
}

/// Names the members of `mec` using the identifiers of `ts`.
pub fn mec_to_document(mec: &Mec, states: &[String], actions: &[Vec<String>]) -> MecDocument {
    MecDocument {
        states: mec
            .members()
            .iter()
            .map(|(&s, acts)| (states[s].clone(), acts.iter().map(|&a| actions[s][a].clone()).collect()))
            .collect(),
    }
}

impl DetectionPolicy {
    pub fn to_document(&self, m: &Mmdp) -> PolicyDocument {
        let base = m.base();
        PolicyDocument {
            entries: self
                .entries()
                .map(|(active, s, entry)| EntryDocument {
                    active: active.iter().map(|i| i + 1).collect(),
                    entry_state: base.states[s].clone(),
                    reach: entry
                        .reach
                        .choice
                        .iter()
                        .map(|(&x, &a)| (base.states[x].clone(), base.actions[x][a].clone()))
                        .collect(),
                    mecs: entry
                        .mecs
                        .iter()
                        .map(|f| mec_to_document(&f.mec, &base.states, &base.actions))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self, m: &Mmdp) -> String {
        serde_json::to_string_pretty(&self.to_document(m)).expect("policy documents always serialize")
    }

    /// Resolves identifiers against `m`. Component fragments are uniform.
    pub fn from_document(doc: &PolicyDocument, m: &Mmdp) -> Result<Self, PolicyError> {
        let state = |name: &str| {
            m.state_index(name)
                .ok_or_else(|| PolicyError::UnknownState(name.to_string()))
        };
        let action = |s: usize, name: &str| {
            m.action_index(s, name).ok_or_else(|| PolicyError::UnknownAction {
                state: m.states()[s].clone(),
                action: name.to_string(),
            })
        };
        let mut policy = DetectionPolicy::new();
        for e in &doc.entries {
            let n = m.n_models();
            if e.active.is_empty() || e.active.iter().any(|&i| i == 0 || i > n) {
                return Err(PolicyError::BadActiveSet(e.active.clone(), n));
            }
            let active = ActiveSet::from_indices(e.active.iter().map(|i| i - 1));
            let entry_state = state(&e.entry_state)?;
            let mut reach = PartialDeterministicPolicy::default();
            for (s, a) in &e.reach {
                let si = state(s)?;
                reach.choice.insert(si, action(si, a)?);
            }
            let mut mecs = Vec::new();
            for md in &e.mecs {
                let mut members = BTreeMap::new();
                for (s, acts) in &md.states {
                    let si = state(s)?;
                    if acts.is_empty() {
                        return Err(PolicyError::BadComponent(format!("no actions at {s}")));
                    }
                    let ai = acts.iter().map(|a| action(si, a)).collect::<Result<Vec<_>, _>>()?;
                    members.insert(si, ai);
                }
                if members.is_empty() {
                    return Err(PolicyError::BadComponent("empty component".into()));
                }
                mecs.push(mec_uniform_policy(&Mec::new(members)));
            }
            policy.insert(active, entry_state, PolicyEntry { reach, mecs });
        }
        Ok(policy)
    }

    pub fn from_json(text: &str, m: &Mmdp) -> Result<Self, PolicyError> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        Self::from_document(&doc, m)
    }
}

/// On-disk form of [`Diagnostics`]; structure states by name, original
/// states and actions by their model identifiers, model indices 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsDocument {
    pub exists: bool,
    pub structure_states: Vec<String>,
    pub mecs: Vec<MecDocument>,
    pub informative_mecs: Vec<MecDocument>,
    pub rmax: Vec<String>,
    pub witness: Option<MecDocument>,
    pub explored: Vec<String>,
    pub terminal_edges: Vec<TerminalEdgeDocument>,
    pub cache: CacheStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalEdgeDocument {
    pub state: String,
    pub action: String,
    pub successor: String,
    pub active: Vec<usize>,
    pub flag: bool,
}

impl ApdOutcome {
    pub fn diagnostics_document(&self, m: &Mmdp) -> DiagnosticsDocument {
        let d = &self.diagnostics;
        let ts = &d.structure;
        let mec = |x: &Mec| mec_to_document(x, &ts.states, &ts.actions);
        DiagnosticsDocument {
            exists: self.exists,
            structure_states: ts.states.clone(),
            mecs: d.mecs.iter().map(mec).collect(),
            informative_mecs: d.informative_mecs.iter().map(mec).collect(),
            rmax: d.rmax.iter().map(|&s| ts.states[s].clone()).collect(),
            witness: d.witness.as_ref().map(mec),
            explored: d.explored.iter().map(|&s| m.states()[s].clone()).collect(),
            terminal_edges: d
                .terminal_edges
                .iter()
                .map(|e| TerminalEdgeDocument {
                    state: m.states()[e.state].clone(),
                    action: m.actions(e.state)[e.action].clone(),
                    successor: m.states()[e.successor].clone(),
                    active: e.active.iter().map(|i| i + 1).collect(),
                    flag: e.flag,
                })
                .collect(),
            cache: d.cache,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_set_basics() {
        let a = ActiveSet::from_indices([2, 0, 5]);
        assert_eq!(a.indices(), vec![0, 2, 5]);
        assert_eq!(a.len(), 3);
        assert!(a.contains(5) && !a.contains(1));
        let b = ActiveSet::from_indices([0, 5]);
        assert!(b.is_subset(a) && !a.is_subset(b));
        assert_eq!(a.intersect(b), b);
        assert_eq!(ActiveSet::full(3).indices(), vec![0, 1, 2]);
        assert_eq!(ActiveSet::full(64).len(), 64);
    }

    fn entry_with_mec() -> PolicyEntry {
        let mec = Mec::new(BTreeMap::from([(2, vec![0, 1]), (3, vec![0])]));
        PolicyEntry {
            reach: PartialDeterministicPolicy {
                choice: BTreeMap::from([(0, 1), (1, 0)]),
            },
            mecs: vec![mec_uniform_policy(&mec)],
        }
    }

    #[test]
    fn controller_commits_on_entering_a_component() {
        let mut pol = DetectionPolicy::new();
        let full = ActiveSet::full(3);
        pol.insert(full, 0, entry_with_mec());
        let mem = pol.start(full, 0).unwrap();
        let (mem, dist) = pol.decide(&mem, 0).unwrap();
        assert_eq!(dist, vec![(1, 1.0)]);
        assert_eq!(mem.mode, Mode::Reach);
        let (mem, dist) = pol.decide(&mem, 2).unwrap();
        assert_eq!(mem.mode, Mode::Committed(0));
        assert_eq!(dist, vec![(0, 0.5), (1, 0.5)]);
        // committed memory never returns to the reach fragment
        assert!(pol.decide(&mem, 1).is_none());
        assert!(pol.start(ActiveSet::from_indices([0, 1]), 0).is_none());
    }

    #[test]
    fn stationary_controller_skips_zero_actions() {
        let pol = StationaryPolicy {
            probs: vec![vec![0.0, 1.0]],
        };
        let (_, dist) = pol.decide(&(), 0).unwrap();
        assert_eq!(dist, vec![(1, 1.0)]);
    }
}
