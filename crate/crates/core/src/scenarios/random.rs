//! Random models and transition systems.

use rand::seq::index::sample;
use rand::Rng;

use crate::model::{Distribution, Mdp, Mmdp, TransitionSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub n_states: usize,
    pub max_actions: usize,
    pub max_support: usize,
    /// All models use the same support at every pair.
    pub shared_support: bool,
    /// Chance that a row is copied verbatim from the first model.
    pub identical_rows: f64,
}

impl RandomSpec {
    pub fn new(n_states: usize, max_actions: usize) -> Self {
        RandomSpec {
            n_states,
            max_actions,
            max_support: 3,
            shared_support: false,
            identical_rows: 0.3,
        }
    }
}

fn random_support<R: Rng + ?Sized>(rng: &mut R, n: usize, max_support: usize) -> Vec<usize> {
    let k = rng.random_range(1..=max_support.min(n).max(1));
    let mut s = sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R, support: &[usize]) -> Distribution {
    let w: Vec<f64> = support.iter().map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = w.iter().sum();
    Distribution::new(support.iter().zip(w).map(|(&s, x)| (s, x / total)))
}

/// A family of `n_models` models over `spec.n_states` states named `s0..`.
pub fn random_family<R: Rng + ?Sized>(rng: &mut R, n_models: usize, spec: &RandomSpec) -> Mmdp {
    let n = spec.n_states;
    let states: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let actions: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=spec.max_actions.max(1));
            (0..k).map(|a| format!("a{a}")).collect()
        })
        .collect();
    let mut kernels: Vec<Vec<Vec<Distribution>>> = vec![Vec::with_capacity(n); n_models];
    for s in 0..n {
        let mut rows: Vec<Vec<Distribution>> = vec![Vec::new(); n_models];
        for _ in 0..actions[s].len() {
            let support = random_support(rng, n, spec.max_support);
            let first = random_weights(rng, &support);
            for (i, r) in rows.iter_mut().enumerate() {
                let row = if i == 0 || rng.random::<f64>() < spec.identical_rows {
                    first.clone()
                } else if spec.shared_support {
                    random_weights(rng, &support)
                } else {
                    let sup = if rng.random::<f64>() < 0.5 {
                        support.clone()
                    } else {
                        random_support(rng, n, spec.max_support)
                    };
                    random_weights(rng, &sup)
                };
                r.push(row);
            }
        }
        for (k, r) in kernels.iter_mut().zip(rows) {
            k.push(r);
        }
    }
    let models = kernels
        .into_iter()
        .map(|kernel| Mdp {
            states: states.clone(),
            actions: actions.clone(),
            kernel,
            initial: 0,
        })
        .collect();
    Mmdp::from_models(models).expect("random families are valid by construction")
}

/// A random valid transition system; every pair has 1..=`max_succ` successors.
pub fn random_ts<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    max_actions: usize,
    max_succ: usize,
) -> TransitionSystem {
    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let mut actions = Vec::with_capacity(n_states);
    let mut successors = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let k = rng.random_range(1..=max_actions.max(1));
        actions.push((0..k).map(|a| format!("a{a}")).collect());
        successors.push((0..k).map(|_| random_support(rng, n_states, max_succ)).collect());
    }
    TransitionSystem {
        states,
        actions,
        successors,
        initial: 0,
    }
}

/// Uniform-weight MDP whose supports are those of `ts`.
pub fn ts_to_mdp(ts: &TransitionSystem) -> Mdp {
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
