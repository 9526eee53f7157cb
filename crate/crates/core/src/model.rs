//! MDPs, multi-model MDPs, transition systems and the JSON model format.
//!
//! State and action identifiers are strings in files and dense indices in
//! memory. Actions are indexed locally per state: `kernel[s][a]` is the
//! distribution obtained by playing the `a`-th action of state `s`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-sum tolerance for transition distributions.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("transition probabilities of model {model} at ({state}, {action}) sum to {sum}")]
    ProbabilitySum {
        model: String,
        state: String,
        action: String,
        sum: f64,
    },
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// A sparse probability distribution over state indices, sorted by successor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distribution {
    entries: Vec<(usize, f64)>,
}

impl Distribution {
    /// Builds a distribution, merging duplicate successors and dropping
    /// zero-probability entries so that the support is structural.
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut entries: Vec<(usize, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (s, p) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += p,
                _ => merged.push((s, p)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Distribution { entries: merged }
    }

    pub fn point(state: usize) -> Self {
        Distribution {
            entries: vec![(state, 1.0)],
        }
    }

    /// Keeps the entries exactly as given. Only useful to build deliberately
    /// malformed rows.
    pub fn from_raw(entries: Vec<(usize, f64)>) -> Self {
        Distribution { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn prob(&self, state: usize) -> f64 {
        match self.entries.binary_search_by_key(&state, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A finite MDP with a single initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub states: Vec<String>,
    /// `actions[s]` lists the action identifiers available at state `s`.
    pub actions: Vec<Vec<String>>,
    /// `kernel[s][a]` is the successor distribution of the `a`-th action at `s`.
    pub kernel: Vec<Vec<Distribution>>,
    pub initial: usize,
}

impl Mdp {
    pub fn new(
        states: Vec<String>,
        actions: Vec<Vec<String>>,
        kernel: Vec<Vec<Distribution>>,
        initial: usize,
    ) -> Result<Self, ModelError> {
        let mdp = Mdp {
            states,
            actions,
            kernel,
            initial,
        };
        let violations = validate_mdp(&mdp, 0);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    pub fn row(&self, state: usize, action: usize) -> &Distribution {
        &self.kernel[state][action]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.kernel[state][action].prob(next)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, state: usize, name: &str) -> Option<usize> {
        self.actions[state].iter().position(|a| a == name)
    }

    /// Copy of `self` with a different kernel but the same structure.
    pub fn with_kernel(&self, kernel: Vec<Vec<Distribution>>) -> Mdp {
        Mdp {
            states: self.states.clone(),
            actions: self.actions.clone(),
            kernel,
            initial: self.initial,
        }
    }
}

/// A structural defect found by [`validate_mmdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewModels {
        count: usize,
    },
    EmptyStateSpace {
        model: usize,
    },
    DuplicateState {
        model: usize,
        state: String,
    },
    InitialOutOfRange {
        model: usize,
        initial: usize,
    },
    NoActions {
        model: usize,
        state: String,
    },
    DuplicateAction {
        model: usize,
        state: String,
        action: String,
    },
    KernelShape {
        model: usize,
        state: String,
    },
    ProbabilityOutOfRange {
        model: usize,
        state: String,
        action: String,
        p: f64,
    },
    ProbabilitySum {
        model: usize,
        state: String,
        action: String,
        sum: f64,
    },
    DanglingSuccessor {
        model: usize,
        state: String,
        action: String,
        successor: usize,
    },
    SharedStates {
        model: usize,
    },
    SharedStructure {
        model: usize,
        state: String,
    },
    SharedInitial {
        model: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewModels { count } => write!(f, "an MMDP needs at least 2 models, found {count}"),
            EmptyStateSpace { model } => write!(f, "model {} has no states", model + 1),
            DuplicateState { model, state } => {
                write!(f, "model {} declares state {state} twice", model + 1)
            }
            InitialOutOfRange { model, initial } => {
                write!(f, "model {} has initial index {initial} outside its states", model + 1)
            }
            NoActions { model, state } => {
                write!(f, "model {} has no actions at state {state}", model + 1)
            }
            DuplicateAction { model, state, action } => {
                write!(f, "model {} declares action {action} twice at state {state}", model + 1)
            }
            KernelShape { model, state } => write!(
                f,
                "model {} kernel rows at state {state} do not match its action set",
                model + 1
            ),
            ProbabilityOutOfRange {
                model,
                state,
                action,
                p,
            } => write!(
                f,
                "model {} has probability {p} outside [0,1] at ({state}, {action})",
                model + 1
            ),
            ProbabilitySum {
                model,
                state,
                action,
                sum,
            } => write!(
                f,
                "model {} probabilities at ({state}, {action}) sum to {sum}",
                model + 1
            ),
            DanglingSuccessor {
                model,
                state,
                action,
                successor,
            } => write!(
                f,
                "dangling successor {successor} in model {} at ({state}, {action})",
                model + 1
            ),
            SharedStates { model } => {
                write!(f, "model {} has a different state space", model + 1)
            }
            SharedStructure { state, .. } => write!(f, "shared-structure violation at state {state}"),
            SharedInitial { model } => {
                write!(f, "model {} has a different initial state", model + 1)
            }
        }
    }
}

/// Checks every MDP invariant of `m`, tagging violations with `model`.
pub fn validate_mdp(m: &Mdp, model: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = m.states.len();
    if n == 0 {
        out.push(Violation::EmptyStateSpace { model });
    }
    let mut seen = HashSet::new();
    for s in &m.states {
        if !seen.insert(s) {
            out.push(Violation::DuplicateState {
                model,
                state: s.clone(),
            });
        }
    }
    if m.initial >= n {
        out.push(Violation::InitialOutOfRange {
            model,
            initial: m.initial,
        });
    }
    if m.actions.len() != n || m.kernel.len() != n {
        out.push(Violation::KernelShape {
            model,
            state: "*".into(),
        });
        return out;
    }
    for s in 0..n {
        let state = &m.states[s];
        if m.actions[s].is_empty() {
            out.push(Violation::NoActions {
                model,
                state: state.clone(),
            });
        }
        let mut seen = HashSet::new();
        for a in &m.actions[s] {
            if !seen.insert(a) {
                out.push(Violation::DuplicateAction {
                    model,
                    state: state.clone(),
                    action: a.clone(),
                });
            }
        }
        if m.kernel[s].len() != m.actions[s].len() {
            out.push(Violation::KernelShape {
                model,
                state: state.clone(),
            });
            continue;
        }
        for (a, row) in m.kernel[s].iter().enumerate() {
            let action = &m.actions[s][a];
            for &(t, p) in row.entries() {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    out.push(Violation::ProbabilityOutOfRange {
                        model,
                        state: state.clone(),
                        action: action.clone(),
                        p,
                    });
                }
                if t >= n {
                    out.push(Violation::DanglingSuccessor {
                        model,
                        state: state.clone(),
                        action: action.clone(),
                        successor: t,
                    });
                }
            }
            let sum = row.total();
            if (sum - 1.0).abs() > PROB_TOLERANCE {
                out.push(Violation::ProbabilitySum {
                    model,
                    state: state.clone(),
                    action: action.clone(),
                    sum,
                });
            }
        }
    }
    out
}

/// A finite family of MDPs sharing states, per-state actions and the
/// initial state. Exactly one of them governs the observed dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmdp {
    models: Vec<Mdp>,
    names: Vec<String>,
}

impl Mmdp {
    pub fn new(models: Vec<Mdp>, names: Vec<String>) -> Result<Self, ModelError> {
        let m = Self::new_unchecked(models, names);
        let violations = validate_mmdp(&m);
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Builds an MMDP named `M1..MN`.
    pub fn from_models(models: Vec<Mdp>) -> Result<Self, ModelError> {
        let names = (1..=models.len()).map(|i| format!("M{i}")).collect();
        Self::new(models, names)
    }

    /// Skips validation; pair with [`validate_mmdp`].
    pub fn new_unchecked(models: Vec<Mdp>, mut names: Vec<String>) -> Self {
        while names.len() < models.len() {
            names.push(format!("M{}", names.len() + 1));
        }
        names.truncate(models.len());
        Mmdp { models, names }
    }

    pub fn models(&self) -> &[Mdp] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &Mdp {
        &self.models[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    /// The shared structure, carried by the first model.
    pub fn base(&self) -> &Mdp {
        &self.models[0]
    }

    pub fn n_states(&self) -> usize {
        self.base().n_states()
    }

    pub fn states(&self) -> &[String] {
        &self.base().states
    }

    pub fn actions(&self, state: usize) -> &[String] {
        &self.base().actions[state]
    }

    pub fn initial(&self) -> usize {
        self.base().initial
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.base().state_index(name)
    }

    pub fn action_index(&self, state: usize, name: &str) -> Option<usize> {
        self.base().action_index(state, name)
    }

    /// The sub-family made of the listed models, in the given order.
    pub fn select(&self, indices: &[usize]) -> Mmdp {
        Mmdp {
            models: indices.iter().map(|&i| self.models[i].clone()).collect(),
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }

    /// Copy of `self` whose models start from `initial`.
    pub fn with_initial(&self, initial: usize) -> Mmdp {
        let mut m = self.clone();
        for model in &mut m.models {
            model.initial = initial;
        }
        m
    }
}

/// Lists every violated MDP or MMDP invariant; empty means valid.
pub fn validate_mmdp(m: &Mmdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.models.len() < 2 {
        out.push(Violation::TooFewModels { count: m.models.len() });
    }
    for (i, model) in m.models.iter().enumerate() {
        out.extend(validate_mdp(model, i));
    }
    let Some(base) = m.models.first() else {
        return out;
    };
    for (i, model) in m.models.iter().enumerate().skip(1) {
        if model.states != base.states {
            out.push(Violation::SharedStates { model: i });
            continue;
        }
        for s in 0..base.states.len().min(model.actions.len()).min(base.actions.len()) {
            if model.actions[s] != base.actions[s] {
                out.push(Violation::SharedStructure {
                    model: i,
                    state: base.states[s].clone(),
                });
            }
        }
        if model.initial != base.initial {
            out.push(Violation::SharedInitial { model: i });
        }
    }
    out
}

/// An observed alternating sequence of states and actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct History {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl History {
    pub fn start(state: usize) -> Self {
        History {
            states: vec![state],
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: usize, next: usize) {
        self.actions.push(action);
        self.states.push(next);
    }

    /// Number of transitions observed so far.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn last_state(&self) -> usize {
        *self.states.last().expect("history always holds a state")
    }

    /// Starts at the initial state and uses only available actions.
    pub fn is_valid_for(&self, m: &Mdp) -> bool {
        self.states.len() == self.actions.len() + 1
            && self.states[0] == m.initial
            && self.states.iter().all(|&s| s < m.n_states())
            && self.actions.iter().zip(&self.states).all(|(&a, &s)| a < m.n_actions(s))
    }
}

/// Qualitative structure: which transitions are possible, without
/// probabilities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSystem {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    /// `successors[s][a]` is the sorted, duplicate-free successor list.
    pub successors: Vec<Vec<Vec<usize>>>,
    pub initial: usize,
}

impl TransitionSystem {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    pub fn succ(&self, state: usize, action: usize) -> &[usize] {
        &self.successors[state][action]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, state: usize, name: &str) -> Option<usize> {
        self.actions[state].iter().position(|a| a == name)
    }

    /// All `(state, action, successor)` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.successors.iter().enumerate().flat_map(|(s, per_action)| {
            per_action
                .iter()
                .enumerate()
                .flat_map(move |(a, succ)| succ.iter().map(move |&t| (s, a, t)))
        })
    }

    /// Triples with identifiers instead of indices.
    pub fn named_transitions(&self) -> BTreeSet<(String, String, String)> {
        self.transitions()
            .map(|(s, a, t)| {
                (
                    self.states[s].clone(),
                    self.actions[s][a].clone(),
                    self.states[t].clone(),
                )
            })
            .collect()
    }

    /// Human-readable invariant violations; empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let n = self.states.len();
        let mut out = Vec::new();
        if self.initial >= n {
            out.push("initial state out of range".to_string());
        }
        if self.actions.len() != n || self.successors.len() != n {
            out.push("per-state tables do not match the state count".to_string());
            return out;
        }
        for s in 0..n {
            if self.successors[s].len() != self.actions[s].len() {
                out.push(format!("successor table mismatch at {}", self.states[s]));
                continue;
            }
            for (a, succ) in self.successors[s].iter().enumerate() {
                if succ.is_empty() {
                    out.push(format!(
                        "({}, {}) has no outgoing transition",
                        self.states[s], self.actions[s][a]
                    ));
                }
                if succ.iter().any(|&t| t >= n) {
                    out.push(format!(
                        "({}, {}) leads outside the state set",
                        self.states[s], self.actions[s][a]
                    ));
                }
            }
        }
        out
    }
}

/// The transition system whose triples are the nonzero kernel entries of `m`.
pub fn induced_transition_system(m: &Mdp) -> TransitionSystem {
    TransitionSystem {
        states: m.states.clone(),
        actions: m.actions.clone(),
        successors: m
            .kernel
            .iter()
            .map(|rows| rows.iter().map(|d| d.support().collect()).collect())
            .collect(),
        initial: m.initial,
    }
}

/// On-disk representation of an MMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdpDocument {
    pub states: Vec<String>,
    pub actions: IndexMap<String, Vec<String>>,
    pub initial: String,
    pub models: Vec<ModelDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub delta: Vec<TransitionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub from: String,
    pub action: String,
    pub to: String,
    pub p: f64,
}

/// Parses and validates a JSON model document.
pub fn parse_mmdp(text: &str) -> Result<Mmdp, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: MmdpDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(
            if path.is_empty() { "$".into() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    from_document(&doc)
}

/// Builds an [`Mmdp`] from an already-deserialized document.
pub fn from_document(doc: &MmdpDocument) -> Result<Mmdp, ModelError> {
    if doc.states.is_empty() {
        return Err(schema("states", "state list is empty"));
    }
    let mut state_ix: HashMap<&str, usize> = HashMap::new();
    for (i, s) in doc.states.iter().enumerate() {
        if state_ix.insert(s.as_str(), i).is_some() {
            return Err(schema(format!("states[{i}]"), format!("duplicate state {s}")));
        }
    }
    for key in doc.actions.keys() {
        if !state_ix.contains_key(key.as_str()) {
            return Err(schema(format!("actions.{key}"), "unknown state"));
        }
    }
    let mut actions = Vec::with_capacity(doc.states.len());
    let mut action_ix: Vec<HashMap<&str, usize>> = Vec::with_capacity(doc.states.len());
    for s in &doc.states {
        let list = doc
            .actions
            .get(s)
            .ok_or_else(|| schema(format!("actions.{s}"), "missing action list"))?;
        if list.is_empty() {
            return Err(schema(format!("actions.{s}"), "empty action list"));
        }
        let mut ix = HashMap::new();
        for (j, a) in list.iter().enumerate() {
            if ix.insert(a.as_str(), j).is_some() {
                return Err(schema(format!("actions.{s}[{j}]"), format!("duplicate action {a}")));
            }
        }
        actions.push(list.clone());
        action_ix.push(ix);
    }
    let initial = *state_ix
        .get(doc.initial.as_str())
        .ok_or_else(|| schema("initial", format!("unknown state {}", doc.initial)))?;
    if doc.models.len() < 2 {
        return Err(schema(
            "models",
            format!("need at least 2 models, found {}", doc.models.len()),
        ));
    }

    let mut models = Vec::with_capacity(doc.models.len());
    for (mi, model) in doc.models.iter().enumerate() {
        let mut raw: Vec<Vec<Vec<(usize, f64)>>> = actions.iter().map(|a| vec![Vec::new(); a.len()]).collect();
        let mut seen = HashSet::new();
        for (k, e) in model.delta.iter().enumerate() {
            let path = |field: &str| format!("models[{mi}].delta[{k}].{field}");
            let s = *state_ix
                .get(e.from.as_str())
                .ok_or_else(|| schema(path("from"), format!("unknown state {}", e.from)))?;
            let a = *action_ix[s].get(e.action.as_str()).ok_or_else(|| {
                schema(
                    path("action"),
                    format!("action {} not available at {}", e.action, e.from),
                )
            })?;
            let t = *state_ix
                .get(e.to.as_str())
                .ok_or_else(|| schema(path("to"), format!("unknown state {}", e.to)))?;
            if !e.p.is_finite() || !(0.0..=1.0).contains(&e.p) {
                return Err(schema(path("p"), format!("probability {} outside [0,1]", e.p)));
            }
            if !seen.insert((s, a, t)) {
                return Err(schema(path("to"), "duplicate transition entry"));
            }
            raw[s][a].push((t, e.p));
        }
        let mut kernel = Vec::with_capacity(raw.len());
        for (s, rows) in raw.into_iter().enumerate() {
            let mut out = Vec::with_capacity(rows.len());
            for (a, row) in rows.into_iter().enumerate() {
                let d = Distribution::new(row);
                let sum = d.total();
                if (sum - 1.0).abs() > PROB_TOLERANCE {
                    return Err(ModelError::ProbabilitySum {
                        model: model.name.clone(),
                        state: doc.states[s].clone(),
                        action: actions[s][a].clone(),
                        sum,
                    });
                }
                out.push(d);
            }
            kernel.push(out);
        }
        models.push(Mdp {
            states: doc.states.clone(),
            actions: actions.clone(),
            kernel,
            initial,
        });
    }
    Mmdp::new(models, doc.models.iter().map(|m| m.name.clone()).collect())
}

/// The document form of `m`; transitions are listed by state, action and
/// successor index.
pub fn to_document(m: &Mmdp) -> MmdpDocument {
    let base = m.base();
    let actions = base.states.iter().cloned().zip(base.actions.iter().cloned()).collect();
    let models = m
        .models()
        .iter()
        .zip(m.names())
        .map(|(model, name)| ModelDocument {
            name: name.clone(),
            delta: model
                .kernel
                .iter()
                .enumerate()
                .flat_map(|(s, rows)| {
                    rows.iter().enumerate().flat_map(move |(a, d)| {
                        d.entries().iter().map(move |&(t, p)| TransitionEntry {
                            from: model.states[s].clone(),
                            action: model.actions[s][a].clone(),
                            to: model.states[t].clone(),
                            p,
                        })
                    })
                })
                .collect(),
        })
        .collect();
    MmdpDocument {
        states: base.states.clone(),
        actions,
        initial: base.states[base.initial].clone(),
        models,
    }
}

pub fn serialize_mmdp(m: &Mmdp) -> String {
    serde_json::to_string_pretty(&to_document(m)).expect("model documents always serialize")
}
