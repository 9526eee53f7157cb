//! Synthesis for families of any size: breadth-first exploration of the
//! jointly possible transitions, recursion on the surviving model subsets
//! after identity-revealing transitions, and assembly of the memory policy.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::binary::{bi_apd, bi_apd_pair, classify_pairs, find_witness, rows_differ, ApdError};
use crate::graph::{
    almost_sure_reach_set, mec_decompose, mec_uniform_policy, reach_policy, GraphError, Mec, PartialDeterministicPolicy,
};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::model::{Mmdp, TransitionSystem};
use crate::policy::{ActiveSet, ApdOutcome, CacheStats, DetectionPolicy, Diagnostics, PolicyEntry, TerminalEdge};

/// Informative pairs of models `i` and `j`, on the original models.
pub fn pairwise_isa(m: &Mmdp, i: usize, j: usize) -> BTreeSet<(usize, usize)> {
    assert_ne!(i, j, "pairwise_isa needs two distinct models");
    classify_pairs(m.model(i), m.model(j)).informative_pairs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverOptions {
    /// Reuse results of repeated `(active set, entry state)` subproblems.
    pub memoize: bool,
    /// Solve the subproblems of one exploration on separate threads.
    pub parallel: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            memoize: true,
            parallel: false,
        }
    }
}

/// True when every model puts positive mass on exactly the same successors
/// at every state-action pair.
pub fn shares_structure(m: &Mmdp) -> bool {
    let base = m.base();
    m.models().iter().skip(1).all(|model| {
        (0..base.n_states())
            .all(|s| (0..base.n_actions(s)).all(|a| base.row(s, a).support().eq(model.row(s, a).support())))
    })
}

/// Solves a family whose models share one support structure, treating every
/// MEC that contains an informative pair for each model pair as informative.
pub fn base_case_apd(m: &Mmdp, initial: usize) -> Result<ApdOutcome, ApdError> {
    if !shares_structure(m) {
        return Err(ApdError::StructureMismatch);
    }
    check_initial(m, initial)?;
    let solver = Solver::new(m, SolverOptions::default());
    let mut out = solver.explore(ActiveSet::full(m.n_models()), initial, 0)?;
    out.diagnostics.cache = solver.stats();
    Ok(out)
}

pub fn general_apd(m: &Mmdp, initial: usize) -> Result<ApdOutcome, ApdError> {
    general_apd_with(m, initial, SolverOptions::default())
}

pub fn general_apd_with(m: &Mmdp, initial: usize, opts: SolverOptions) -> Result<ApdOutcome, ApdError> {
    check_initial(m, initial)?;
    if m.n_models() == 2 {
        return bi_apd(m, initial);
    }
    if m.n_models() < 2 {
        return Err(ApdError::NotBinary(m.n_models()));
    }
    let solver = Solver::new(m, opts);
    let mut out = solver.explore(ActiveSet::full(m.n_models()), initial, 0)?;
    out.diagnostics.cache = solver.stats();
    Ok(out)
}

/// Runs the exploration on a family of any size without delegating
/// two-model families to the binary pipeline.
pub fn explore_apd(m: &Mmdp, initial: usize) -> Result<ApdOutcome, ApdError> {
    check_initial(m, initial)?;
    let solver = Solver::new(m, SolverOptions::default());
    let mut out = solver.explore(ActiveSet::full(m.n_models()), initial, 0)?;
    out.diagnostics.cache = solver.stats();
    Ok(out)
}

fn check_initial(m: &Mmdp, initial: usize) -> Result<(), ApdError> {
    if initial >= m.n_states() {
        Err(ApdError::BadInitial(initial))
    } else {
        Ok(())
    }
}

#[derive(Debug)]
struct SubResult {
    exists: bool,
    policy: DetectionPolicy,
}

type Key = (ActiveSet, usize);
type Cell = Arc<OnceLock<Result<Arc<SubResult>, String>>>;

struct Solver<'a> {
    m: &'a Mmdp,
    opts: SolverOptions,
    cache: Mutex<HashMap<Key, Cell>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

struct Request {
    state: usize,
    action: usize,
    successor: usize,
    active: ActiveSet,
}

impl<'a> Solver<'a> {
    fn new(m: &'a Mmdp, opts: SolverOptions) -> Self {
        Solver {
            m,
            opts,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Outcome of the subproblem `(active, state)`, through the cache.
    fn sub(&self, active: ActiveSet, state: usize, depth: usize) -> Result<Arc<SubResult>, ApdError> {
        if !self.opts.memoize {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return self.compute(active, state, depth).map(Arc::new);
        }
        let cell = {
            let mut map = self.cache.lock().expect("cache lock poisoned");
            match map.get(&(active, state)) {
                Some(c) => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    c.clone()
                }
                None => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    let c: Cell = Arc::default();
                    map.insert((active, state), c.clone());
                    c
                }
            }
        };
        cell.get_or_init(|| {
            self.compute(active, state, depth)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(|e| ApdError::Graph(GraphError::ContractBreach(e)))
    }

    fn compute(&self, active: ActiveSet, state: usize, depth: usize) -> Result<SubResult, ApdError> {
        let out = if active.len() == 2 {
            let ix = active.indices();
            bi_apd_pair(self.m.model(ix[0]), self.m.model(ix[1]), state, active)?
        } else {
            self.explore(active, state, depth)?
        };
        Ok(SubResult {
            exists: out.exists,
            policy: out.policy.unwrap_or_default(),
        })
    }

    /// Exploration, subproblem resolution and MEC analysis for one active set.
    fn explore(&self, active: ActiveSet, initial: usize, depth: usize) -> Result<ApdOutcome, ApdError> {
        assert!(
            depth + active.len() <= self.m.n_models(),
            "recursion deeper than the number of models allows"
        );
        let models: Vec<_> = active.iter().map(|i| self.m.model(i)).collect();
        let base = self.m.base();

        let mut explored = vec![initial];
        let mut index = HashMap::from([(initial, 0usize)]);
        let mut queue = VecDeque::from([initial]);
        // successors[k][a]: structure-index successors; terminals are added later
        let mut successors: Vec<Vec<BTreeSet<usize>>> = Vec::new();
        let mut requests: Vec<Request> = Vec::new();
        let mut singles: Vec<(usize, usize, usize)> = Vec::new();
        while let Some(s) = queue.pop_front() {
            let k = index[&s];
            debug_assert_eq!(k, successors.len());
            let mut rows = Vec::with_capacity(base.n_actions(s));
            for a in 0..base.n_actions(s) {
                let union: BTreeSet<usize> = models.iter().flat_map(|m| m.row(s, a).support()).collect();
                let mut row = BTreeSet::new();
                for t in union {
                    let sub = ActiveSet::from_indices(active.iter().filter(|&i| self.m.model(i).prob(s, a, t) > 0.0));
                    if sub == active {
                        let next = *index.entry(t).or_insert_with(|| {
                            explored.push(t);
                            queue.push_back(t);
                            explored.len() - 1
                        });
                        row.insert(next);
                    } else if sub.is_singleton() {
                        singles.push((s, a, t));
                    } else {
                        assert!(sub.is_subset(active) && sub.len() < active.len());
                        requests.push(Request {
                            state: s,
                            action: a,
                            successor: t,
                            active: sub,
                        });
                    }
                }
                rows.push(row);
            }
            successors.push(rows);
        }

        let results = self.solve_requests(&requests, depth)?;

        let n = explored.len();
        let (bad, good) = (n, n + 1);
        let mut terminal_edges = Vec::new();
        for &(s, a, t) in &singles {
            successors[index[&s]][a].insert(good);
            terminal_edges.push(TerminalEdge {
                state: s,
                action: a,
                successor: t,
                active: ActiveSet::from_indices(active.iter().filter(|&i| self.m.model(i).prob(s, a, t) > 0.0)),
                flag: true,
            });
        }
        let mut policy = DetectionPolicy::new();
        for (req, res) in requests.iter().zip(&results) {
            successors[index[&req.state]][req.action].insert(if res.exists { good } else { bad });
            terminal_edges.push(TerminalEdge {
                state: req.state,
                action: req.action,
                successor: req.successor,
                active: req.active,
                flag: res.exists,
            });
            if res.exists {
                policy.extend(&res.policy);
            }
        }
        terminal_edges.sort();
        terminal_edges.dedup();

        let taken: BTreeSet<&str> = explored.iter().map(|&s| base.states[s].as_str()).collect();
        let bad_name = fresh(&taken, "⊥g0");
        let good_name = fresh(&taken, "⊥g1");
        let mut states: Vec<String> = explored.iter().map(|&s| base.states[s].clone()).collect();
        states.push(bad_name);
        states.push(good_name);
        let mut actions: Vec<Vec<String>> = explored.iter().map(|&s| base.actions[s].clone()).collect();
        actions.push(vec!["a^⊥g0".into()]);
        actions.push(vec!["a^⊥g1".into()]);
        let mut succ: Vec<Vec<Vec<usize>>> = successors
            .into_iter()
            .map(|rows| rows.into_iter().map(|r| r.into_iter().collect()).collect())
            .collect();
        succ.push(vec![vec![bad]]);
        succ.push(vec![vec![good]]);
        let ts = TransitionSystem {
            states,
            actions,
            successors: succ,
            initial: 0,
        };
        debug_assert!(ts.violations().is_empty());

        let pairs: Vec<(usize, usize)> = {
            let ix = active.indices();
            let mut v = Vec::new();
            for x in 0..ix.len() {
                for y in x + 1..ix.len() {
                    v.push((ix[x], ix[y]));
                }
            }
            v
        };
        let mecs = mec_decompose(&ts);
        let informative: Vec<Mec> = mecs
            .iter()
            .filter(|c| {
                if c.contains_state(good) {
                    return true;
                }
                if c.contains_state(bad) {
                    return false;
                }
                pairs.iter().all(|&(i, j)| {
                    c.pairs().any(|(k, a)| {
                        let s = explored[k];
                        rows_differ(self.m.model(i).row(s, a), self.m.model(j).row(s, a))
                    })
                })
            })
            .cloned()
            .collect();
        let targets: BTreeSet<usize> = informative.iter().flat_map(|c| c.states()).collect();
        let rmax = almost_sure_reach_set(&ts, &targets);
        let union_exists = rmax.contains(&0);

        // The union structure lets an edge that only some models allow count
        // as an exit for all of them. Each model is therefore checked on its
        // own supports.
        let exits: HashMap<(ActiveSet, usize), bool> = requests
            .iter()
            .zip(&results)
            .map(|(r, res)| ((r.active, r.successor), res.exists))
            .collect();
        let view = ModelView::new(self.m, active, &explored, &index, &exits, good, bad);

        let union_choice = if union_exists {
            let reach = reach_policy(&ts, &targets, &rmax)?;
            let mut played: BTreeMap<usize, Vec<usize>> = reach
                .choice
                .iter()
                .filter(|(k, _)| **k < n)
                .map(|(&k, &a)| (k, vec![a]))
                .collect();
            for c in informative.iter().filter(|c| !c.contains_state(good)) {
                for (&k, acts) in c.members() {
                    played.insert(k, acts.clone());
                }
            }
            view.confirms(&played).then_some(reach)
        } else {
            None
        };
        let (region, allowed, trap) = view.winning_region(n);
        let exists = region.contains(&0);
        debug_assert!(union_choice.is_none() || exists);

        let entry = if let Some(reach) = &union_choice {
            let reach = PartialDeterministicPolicy {
                choice: reach
                    .choice
                    .iter()
                    .filter(|(k, _)| **k < n)
                    .map(|(&k, &a)| (explored[k], a))
                    .collect(),
            };
            let fragments = informative
                .iter()
                .filter(|c| !c.contains_state(good))
                .map(|c| {
                    let members: BTreeMap<usize, Vec<usize>> = c
                        .members()
                        .iter()
                        .map(|(&k, acts)| (explored[k], acts.clone()))
                        .collect();
                    mec_uniform_policy(&Mec::new(members))
                })
                .collect();
            Some(PolicyEntry { reach, mecs: fragments })
        } else if exists {
            // Uniform over the region's safe actions, kept as one fragment.
            let members: BTreeMap<usize, Vec<usize>> =
                allowed.iter().map(|(&k, acts)| (explored[k], acts.clone())).collect();
            Some(PolicyEntry {
                reach: PartialDeterministicPolicy::default(),
                mecs: vec![mec_uniform_policy(&Mec::new(members))],
            })
        } else {
            None
        };
        let policy = entry.map(|e| {
            policy.insert(active, initial, e);
            policy
        });
        let witness = if exists {
            None
        } else {
            find_witness(&ts, 0, &mecs, &informative).or(trap)
        };
        Ok(ApdOutcome {
            exists,
            policy,
            diagnostics: Diagnostics {
                structure: ts,
                mecs,
                informative_mecs: informative,
                rmax: if union_choice.is_some() { rmax } else { region },
                witness,
                explored,
                terminal_edges,
                cache: CacheStats::default(),
            },
        })
    }

    fn solve_requests(&self, requests: &[Request], depth: usize) -> Result<Vec<Arc<SubResult>>, ApdError> {
        if !self.opts.parallel || requests.len() < 2 {
            return requests
                .iter()
                .map(|r| self.sub(r.active, r.successor, depth + 1))
                .collect();
        }
        let workers = std::thread::available_parallelism()
            .map_or(2, |n| n.get())
            .min(requests.len());
        let chunk = requests.len().div_ceil(workers);
        let mut out: Vec<Result<Arc<SubResult>, ApdError>> = Vec::with_capacity(requests.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|r| self.sub(r.active, r.successor, depth + 1))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                out.extend(h.join().expect("subproblem worker panicked"));
            }
        });
        out.into_iter().collect()
    }
}

/// Per-model successors on the exploration structure.
struct ModelView<'v> {
    m: &'v Mmdp,
    active: ActiveSet,
    explored: &'v [usize],
    good: usize,
    bad: usize,
    /// `succ[i][k][a]`: structure successors model `i` can produce.
    succ: Vec<Vec<Vec<Vec<usize>>>>,
}

impl<'v> ModelView<'v> {
    fn new(
        m: &'v Mmdp,
        active: ActiveSet,
        explored: &'v [usize],
        index: &HashMap<usize, usize>,
        exits: &HashMap<(ActiveSet, usize), bool>,
        good: usize,
        bad: usize,
    ) -> Self {
        let target = |s: usize, a: usize, t: usize| {
            let sub = ActiveSet::from_indices(active.iter().filter(|&x| m.model(x).prob(s, a, t) > 0.0));
            if sub == active {
                index[&t]
            } else if sub.is_singleton() || exits[&(sub, t)] {
                good
            } else {
                bad
            }
        };
        let succ = (0..m.n_models())
            .map(|i| {
                if !active.contains(i) {
                    return Vec::new();
                }
                explored
                    .iter()
                    .map(|&s| {
                        (0..m.base().n_actions(s))
                            .map(|a| {
                                let mut out: Vec<usize> =
                                    m.model(i).row(s, a).support().map(|t| target(s, a, t)).collect();
                                out.sort_unstable();
                                out.dedup();
                                out
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ModelView {
            m,
            active,
            explored,
            good,
            bad,
            succ,
        }
    }

    fn succ(&self, i: usize, k: usize, a: usize) -> &[usize] {
        &self.succ[i][k][a]
    }

    /// Whether playing `actions` on `class` forever tells `i` apart from
    /// every other active model.
    fn separates(&self, i: usize, class: &BTreeSet<usize>, actions: &BTreeMap<usize, Vec<usize>>) -> bool {
        self.active.iter().filter(|&j| j != i).all(|j| {
            class.iter().any(|&k| {
                let s = self.explored[k];
                actions[&k]
                    .iter()
                    .any(|&a| rows_differ(self.m.model(i).row(s, a), self.m.model(j).row(s, a)))
            })
        })
    }

    /// Closed classes of model `i` among `nodes` when every listed action is
    /// played with positive probability.
    fn closed_classes(
        &self,
        i: usize,
        nodes: &BTreeSet<usize>,
        actions: &BTreeMap<usize, Vec<usize>>,
    ) -> Vec<BTreeSet<usize>> {
        let mut g: DiGraph<usize, ()> = DiGraph::new();
        let ix: BTreeMap<usize, NodeIndex> = nodes.iter().map(|&k| (k, g.add_node(k))).collect();
        let mut leaks = BTreeSet::new();
        for &k in nodes {
            for &a in &actions[&k] {
                for &t in self.succ(i, k, a) {
                    match ix.get(&t) {
                        Some(&to) => {
                            g.add_edge(ix[&k], to, ());
                        }
                        None => {
                            leaks.insert(k);
                        }
                    }
                }
            }
        }
        tarjan_scc(&g)
            .into_iter()
            .map(|comp| comp.into_iter().map(|v| g[v]).collect::<BTreeSet<usize>>())
            .filter(|comp| {
                comp.iter()
                    .all(|&k| !leaks.contains(&k) && g.neighbors(ix[&k]).all(|v| comp.contains(&g[v])))
            })
            .collect()
    }

    /// Whether the per-state action sets, started at structure index 0,
    /// detect under every active model.
    fn confirms(&self, played: &BTreeMap<usize, Vec<usize>>) -> bool {
        for i in self.active.iter() {
            let mut seen = BTreeSet::from([0usize]);
            let mut stack = vec![0usize];
            while let Some(k) = stack.pop() {
                let Some(acts) = played.get(&k) else {
                    return false;
                };
                for &a in acts {
                    for &t in self.succ(i, k, a) {
                        if t == self.bad {
                            return false;
                        }
                        if t != self.good && seen.insert(t) {
                            stack.push(t);
                        }
                    }
                }
            }
            if self
                .closed_classes(i, &seen, played)
                .iter()
                .any(|c| !self.separates(i, c, played))
            {
                return false;
            }
        }
        true
    }

    /// Greatest set of explored indices from which playing every safe action
    /// uniformly detects under every active model, its safe actions, and a
    /// class that was found to trap some model.
    fn winning_region(&self, n: usize) -> (BTreeSet<usize>, BTreeMap<usize, Vec<usize>>, Option<Mec>) {
        let mut region: BTreeSet<usize> = (0..n).collect();
        let mut trap = None;
        loop {
            let mut allowed = BTreeMap::new();
            for &k in &region {
                let s = self.explored[k];
                let acts: Vec<usize> = (0..self.m.base().n_actions(s))
                    .filter(|&a| {
                        self.active
                            .iter()
                            .all(|i| self.succ(i, k, a).iter().all(|t| *t == self.good || region.contains(t)))
                    })
                    .collect();
                if !acts.is_empty() {
                    allowed.insert(k, acts);
                }
            }
            if allowed.len() < region.len() {
                region = allowed.keys().copied().collect();
                continue;
            }
            let mut removed = false;
            for i in self.active.iter() {
                for class in self.closed_classes(i, &region, &allowed) {
                    if !self.separates(i, &class, &allowed) {
                        let members = class.iter().map(|k| (*k, allowed[k].clone())).collect();
                        trap.get_or_insert(Mec::new(members));
                        region.retain(|k| !class.contains(k));
                        removed = true;
                    }
                }
                if removed {
                    break;
                }
            }
            if !removed {
                return (region, allowed, trap);
            }
        }
    }
}

fn fresh(taken: &BTreeSet<&str>, base: &str) -> String {
    let mut name = base.to_string();
    while taken.contains(name.as_str()) {
        name.push('\'');
    }
    name
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Distribution, Mdp};

    /// One absorbing state whose self-loop spreads over `x`/`y` with the
    /// given probability of `x`.
    fn loop_model(p: f64) -> Mdp {
        let states = vec!["x".to_string(), "y".to_string()];
        let actions = vec![vec!["a".to_string()]; 2];
        let row = Distribution::new([(0, p), (1, 1.0 - p)]);
        Mdp::new(states, actions, vec![vec![row.clone()], vec![row]], 0).unwrap()
    }

    #[test]
    fn three_distinct_loops_detect() {
        let m = Mmdp::from_models(vec![loop_model(0.2), loop_model(0.5), loop_model(0.8)]).unwrap();
        let out = general_apd(&m, 0).unwrap();
        assert!(out.exists);
        let base = base_case_apd(&m, 0).unwrap();
        assert!(base.exists);
        let policy = out.policy.unwrap();
        let entry = policy.entry(ActiveSet::full(3), 0).unwrap();
        assert_eq!(entry.mecs.len(), 1);
    }

    #[test]
    fn missing_pair_blocks_detection() {
        let m = Mmdp::from_models(vec![loop_model(0.2), loop_model(0.5), loop_model(0.5)]).unwrap();
        let out = general_apd(&m, 0).unwrap();
        assert!(!out.exists);
        assert!(out.diagnostics.witness.is_some());
    }

    #[test]
    fn pairwise_isa_of_identical_models_is_empty() {
        let m = Mmdp::from_models(vec![loop_model(0.3); 3]).unwrap();
        assert!(pairwise_isa(&m, 0, 2).is_empty());
        assert!(!general_apd(&m, 0).unwrap().exists);
    }

    #[test]
    fn base_case_rejects_different_supports() {
        let m = Mmdp::from_models(vec![loop_model(1.0), loop_model(0.5), loop_model(0.5)]).unwrap();
        assert!(matches!(base_case_apd(&m, 0), Err(ApdError::StructureMismatch)));
    }
}
