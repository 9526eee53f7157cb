//! The two-model pipeline: classify state-action pairs, preprocess into a
//! pair with detection terminals, build the informative structure, keep the
//! MECs that contain an informative pair and synthesize the reach + in-MEC
//! policy.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{
    almost_sure_reach_set, mec_decompose, mec_uniform_policy, reach_policy, reachable_states, GraphError, Mec,
    PartialDeterministicPolicy,
};
use crate::model::{Distribution, Mdp, Mmdp, TransitionSystem};
use crate::policy::{ActiveSet, ApdOutcome, CacheStats, DetectionPolicy, Diagnostics, PolicyEntry};

/// Entrywise tolerance when comparing two transition rows.
pub const DIST_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairClass {
    Revealing,
    Informative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateClass {
    Revealing,
    Informative,
    Plain,
}

#[derive(Debug, Error)]
pub enum ApdError {
    #[error("expected a two-model family, got {0} models")]
    NotBinary(usize),
    #[error("initial state index {0} is out of range")]
    BadInitial(usize),
    #[error("models do not share one transition structure")]
    StructureMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// True when the rows differ: different supports, or some mass differs by
/// more than [`DIST_TOLERANCE`].
pub fn rows_differ(d1: &Distribution, d2: &Distribution) -> bool {
    let (e1, e2) = (d1.entries(), d2.entries());
    e1.len() != e2.len()
        || e1
            .iter()
            .zip(e2)
            .any(|(x, y)| x.0 != y.0 || (x.1 - y.1).abs() > DIST_TOLERANCE)
}

pub fn supports_intersect(d1: &Distribution, d2: &Distribution) -> bool {
    d1.support().any(|s| d2.prob(s) > 0.0)
}

pub fn classify_pair_rows(d1: &Distribution, d2: &Distribution) -> PairClass {
    if !supports_intersect(d1, d2) {
        PairClass::Revealing
    } else if rows_differ(d1, d2) {
        PairClass::Informative
    } else {
        PairClass::Neutral
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaClassification {
    /// `pairs[s][a]`
    pub pairs: Vec<Vec<PairClass>>,
    pub states: Vec<StateClass>,
    /// Revealing state → its lexicographically first revealing action.
    pub chosen_revealing: BTreeMap<usize, usize>,
}

impl SaClassification {
    pub fn pairs_of(&self, class: PairClass) -> BTreeSet<(usize, usize)> {
        self.pairs
            .iter()
            .enumerate()
            .flat_map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |(_, c)| **c == class)
                    .map(move |(a, _)| (s, a))
            })
            .collect()
    }

    /// Every pair meeting the informative condition, revealing states included.
    pub fn informative_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.pairs_of(PairClass::Informative)
    }

    /// Informative pairs that survive preprocessing: those at non-revealing
    /// states. This is the ISA reported to users.
    pub fn isa(&self) -> BTreeSet<(usize, usize)> {
        self.informative_pairs()
            .into_iter()
            .filter(|(s, _)| self.states[*s] != StateClass::Revealing)
            .collect()
    }

    pub fn revealing_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.pairs_of(PairClass::Revealing)
    }

    pub fn states_of(&self, class: StateClass) -> BTreeSet<usize> {
        (0..self.states.len()).filter(|&s| self.states[s] == class).collect()
    }
}

/// Labels every state-action pair and state of a two-model family.
pub fn classify_pairs(m1: &Mdp, m2: &Mdp) -> SaClassification {
    let mut pairs = Vec::with_capacity(m1.n_states());
    let mut states = Vec::with_capacity(m1.n_states());
    let mut chosen_revealing = BTreeMap::new();
    for s in 0..m1.n_states() {
        let row: Vec<PairClass> = (0..m1.n_actions(s))
            .map(|a| classify_pair_rows(m1.row(s, a), m2.row(s, a)))
            .collect();
        let first_revealing = row
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == PairClass::Revealing)
            .map(|(a, _)| a)
            .min_by(|&x, &y| m1.actions[s][x].cmp(&m1.actions[s][y]));
        let class = if let Some(a) = first_revealing {
            chosen_revealing.insert(s, a);
            StateClass::Revealing
        } else if row.contains(&PairClass::Informative) {
            StateClass::Informative
        } else {
            StateClass::Plain
        };
        pairs.push(row);
        states.push(class);
    }
    SaClassification {
        pairs,
        states,
        chosen_revealing,
    }
}

/// The preprocessed pair over the original states followed by `⊥1`, `⊥2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedPair {
    pub m1: Mdp,
    pub m2: Mdp,
    /// Informative pairs of the preprocessed pair plus the two terminal pairs.
    pub isa: BTreeSet<(usize, usize)>,
    /// `action_map[s][a]` is the original index of preprocessed action `a`
    /// at original state `s`; empty for the terminals.
    pub action_map: Vec<Vec<usize>>,
    /// Indices of `⊥1` and `⊥2`.
    pub bottom: [usize; 2],
    pub classification: SaClassification,
}

impl PreprocessedPair {
    pub fn n_original(&self) -> usize {
        self.bottom[0]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s >= self.bottom[0]
    }

    /// ISA restricted to original states, with original action indices.
    pub fn reported_isa(&self) -> BTreeSet<(usize, usize)> {
        self.isa
            .iter()
            .filter(|(s, _)| !self.is_terminal(*s))
            .map(|&(s, a)| (s, self.action_map[s][a]))
            .collect()
    }

    pub fn original_action(&self, s: usize, a: usize) -> usize {
        self.action_map[s][a]
    }
}

fn fresh_name(base: &str, taken: &BTreeSet<&str>) -> String {
    let mut name = base.to_string();
    while taken.contains(name.as_str()) {
        name.push('\'');
    }
    name
}

/// Builds the preprocessed pair: revealing states keep only their chosen
/// revealing action, which leads to `⊥i` in model `i`; informative rows send
/// the mass on successors impossible in the other model to `⊥i`; everything
/// else is copied.
pub fn preprocess(m1: &Mdp, m2: &Mdp) -> PreprocessedPair {
    let cls = classify_pairs(m1, m2);
    let n = m1.n_states();
    let bottom = [n, n + 1];
    let taken: BTreeSet<&str> = m1.states.iter().map(String::as_str).collect();
    let b1 = fresh_name("⊥1", &taken);
    let b2 = fresh_name("⊥2", &taken);

    let mut states = m1.states.clone();
    states.push(b1);
    states.push(b2);
    let mut actions = Vec::with_capacity(n + 2);
    let mut action_map = Vec::with_capacity(n + 2);
    let mut kernels: [Vec<Vec<Distribution>>; 2] = [Vec::with_capacity(n + 2), Vec::with_capacity(n + 2)];
    let models = [m1, m2];
    for s in 0..n {
        if let Some(&a) = cls.chosen_revealing.get(&s) {
            actions.push(vec![m1.actions[s][a].clone()]);
            action_map.push(vec![a]);
            for (i, k) in kernels.iter_mut().enumerate() {
                k.push(vec![Distribution::point(bottom[i])]);
            }
            continue;
        }
        actions.push(m1.actions[s].clone());
        action_map.push((0..m1.n_actions(s)).collect());
        for (i, k) in kernels.iter_mut().enumerate() {
            let rows = (0..m1.n_actions(s))
                .map(|a| {
                    let own = models[i].row(s, a);
                    if cls.pairs[s][a] != PairClass::Informative {
                        return own.clone();
                    }
                    let other = models[1 - i].row(s, a);
                    let mut moved = 0.0;
                    let mut entries = Vec::with_capacity(own.len() + 1);
                    for &(t, p) in own.entries() {
                        if other.prob(t) > 0.0 {
                            entries.push((t, p));
                        } else {
                            moved += p;
                        }
                    }
                    entries.push((bottom[i], moved));
                    Distribution::new(entries)
                })
                .collect();
            k.push(rows);
        }
    }
    for (j, name) in ["a^⊥1", "a^⊥2"].iter().enumerate() {
        actions.push(vec![name.to_string()]);
        action_map.push(Vec::new());
        for k in kernels.iter_mut() {
            k.push(vec![Distribution::point(bottom[j])]);
        }
    }
    let [k1, k2] = kernels;
    let p1 = Mdp {
        states: states.clone(),
        actions: actions.clone(),
        kernel: k1,
        initial: m1.initial,
    };
    let p2 = Mdp {
        states,
        actions,
        kernel: k2,
        initial: m1.initial,
    };
    let mut isa = classify_pairs(&p1, &p2).informative_pairs();
    isa.insert((bottom[0], 0));
    isa.insert((bottom[1], 0));
    PreprocessedPair {
        m1: p1,
        m2: p2,
        isa,
        action_map,
        bottom,
        classification: cls,
    }
}

/// Union of the supports of the two preprocessed kernels.
pub fn informative_structure(p: &PreprocessedPair) -> TransitionSystem {
    let successors = (0..p.m1.n_states())
        .map(|s| {
            (0..p.m1.n_actions(s))
                .map(|a| {
                    let set: BTreeSet<usize> = p.m1.row(s, a).support().chain(p.m2.row(s, a).support()).collect();
                    set.into_iter().collect()
                })
                .collect()
        })
        .collect();
    TransitionSystem {
        states: p.m1.states.clone(),
        actions: p.m1.actions.clone(),
        successors,
        initial: p.m1.initial,
    }
}

/// The MECs of `ts` containing at least one pair of `isa`.
pub fn informative_mecs(ts: &TransitionSystem, isa: &BTreeSet<(usize, usize)>) -> Vec<Mec> {
    mec_decompose(ts)
        .into_iter()
        .filter(|mec| mec.pairs().any(|p| isa.contains(&p)))
        .collect()
}

/// Some MEC reachable from `initial` that is not informative.
pub(crate) fn find_witness(ts: &TransitionSystem, initial: usize, mecs: &[Mec], informative: &[Mec]) -> Option<Mec> {
    let reach = reachable_states(ts, initial);
    mecs.iter()
        .find(|m| !informative.contains(m) && reach.contains(&m.min_state()))
        .cloned()
}

/// Runs the two-model pipeline on `m` from `initial`.
pub fn bi_apd(m: &Mmdp, initial: usize) -> Result<ApdOutcome, ApdError> {
    if m.n_models() != 2 {
        return Err(ApdError::NotBinary(m.n_models()));
    }
    bi_apd_pair(m.model(0), m.model(1), initial, ActiveSet::full(2))
}

/// Two-model pipeline on an arbitrary pair; the resulting policy entry is
/// keyed by `(active, initial)`.
pub fn bi_apd_pair(m1: &Mdp, m2: &Mdp, initial: usize, active: ActiveSet) -> Result<ApdOutcome, ApdError> {
    if initial >= m1.n_states() {
        return Err(ApdError::BadInitial(initial));
    }
    if m1.states != m2.states || m1.actions != m2.actions {
        return Err(ApdError::StructureMismatch);
    }
    let p = preprocess(m1, m2);
    let ts = informative_structure(&p);
    let mecs = mec_decompose(&ts);
    let informative: Vec<Mec> = mecs
        .iter()
        .filter(|mec| mec.pairs().any(|x| p.isa.contains(&x)))
        .cloned()
        .collect();
    let targets: BTreeSet<usize> = informative.iter().flat_map(|c| c.states()).collect();
    let rmax = almost_sure_reach_set(&ts, &targets);
    let exists = rmax.contains(&initial);

    let policy = if exists {
        let reach = reach_policy(&ts, &targets, &rmax)?;
        let reach = PartialDeterministicPolicy {
            choice: reach
                .choice
                .iter()
                .filter(|(s, _)| !p.is_terminal(**s))
                .map(|(&s, &a)| (s, p.original_action(s, a)))
                .collect(),
        };
        let fragments = informative
            .iter()
            .filter(|c| !c.states().any(|s| p.is_terminal(s)))
            .map(|c| {
                let members = c
                    .members()
                    .iter()
                    .map(|(&s, acts)| (s, acts.iter().map(|&a| p.original_action(s, a)).collect()))
                    .collect();
                mec_uniform_policy(&Mec::new(members))
            })
            .collect();
        let mut policy = DetectionPolicy::new();
        policy.insert(active, initial, PolicyEntry { reach, mecs: fragments });
        Some(policy)
    } else {
        None
    };
    let witness = if exists {
        None
    } else {
        find_witness(&ts, initial, &mecs, &informative)
    };
    Ok(ApdOutcome {
        exists,
        policy,
        diagnostics: Diagnostics {
            structure: ts,
            mecs,
            informative_mecs: informative,
            rmax,
            witness,
            explored: Vec::new(),
            terminal_edges: Vec::new(),
            cache: CacheStats::default(),
        },
    })
}
