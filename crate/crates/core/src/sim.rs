//! Bayesian belief tracking, the MAP rule and seeded simulation of
//! detection policies on a chosen ground-truth model.
//!
//! Every run draws from its own ChaCha20 stream selected by `(seed, stream)`,
//! so batches can run in parallel and still merge deterministically.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Distribution, Mmdp};
use crate::policy::{ActionDist, ActiveSet, Controller};

pub const DEFAULT_THRESHOLD: f64 = 0.98;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("impossible observation: no model with positive belief allows this transition")]
    ImpossibleObservation,
    #[error("policy has no entry for the initial configuration")]
    MissingInitialEntry,
    #[error("invalid priors: {0}")]
    InvalidPriors(String),
    #[error("model index {0} out of range")]
    BadTruth(usize),
    #[error("threshold {0} must lie in (0.5, 1)")]
    BadThreshold(f64),
    #[error("at least 100 trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Posterior over the candidate models.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub probs: Vec<f64>,
}

impl BeliefState {
    pub fn new(priors: Vec<f64>) -> Result<Self, SimError> {
        if priors.len() < 2 {
            return Err(SimError::InvalidPriors("need at least two entries".into()));
        }
        if priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(SimError::InvalidPriors("entries must be nonnegative".into()));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidPriors(format!("entries sum to {sum}")));
        }
        Ok(BeliefState { probs: priors })
    }

    pub fn uniform(n: usize) -> Self {
        BeliefState {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Models with positive posterior.
    pub fn active(&self) -> ActiveSet {
        ActiveSet::from_indices((0..self.probs.len()).filter(|&i| self.probs[i] > 0.0))
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }
}

/// Bayes update after observing `(s, a, next)`.
pub fn belief_update(b: &BeliefState, s: usize, a: usize, next: usize, m: &Mmdp) -> Result<BeliefState, SimError> {
    let weighted: Vec<f64> = b
        .probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if p == 0.0 { 0.0 } else { p * m.model(i).prob(s, a, next) })
        .collect();
    let total: f64 = weighted.iter().sum();
    if total <= 0.0 {
        return Err(SimError::ImpossibleObservation);
    }
    Ok(BeliefState {
        probs: weighted.into_iter().map(|w| w / total).collect(),
    })
}

/// Index of the largest posterior; ties go to the smaller index.
pub fn map_decide(b: &BeliefState) -> usize {
    let mut best = 0;
    for (i, &p) in b.probs.iter().enumerate() {
        if p > b.probs[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng>(rng: &mut R, weights: impl Iterator<Item = (usize, f64)> + Clone) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (x, p) in weights {
        acc += p;
        last = x;
        if u < acc {
            return x;
        }
    }
    last
}

fn sample_action<R: Rng>(rng: &mut R, dist: &ActionDist) -> usize {
    sample_index(rng, dist.iter().copied())
}

fn sample_successor<R: Rng>(rng: &mut R, row: &Distribution) -> usize {
    sample_index(rng, row.entries().iter().copied())
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub max_steps: usize,
    pub threshold: f64,
    /// Initial belief; uniform when `None`.
    pub priors: Option<Vec<f64>>,
    pub stream: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_steps: DEFAULT_MAX_STEPS,
            threshold: DEFAULT_THRESHOLD,
            priors: None,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxSteps,
    UndetectableContinuation,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Threshold => "threshold",
            StopReason::MaxSteps => "max_steps",
            StopReason::UndetectableContinuation => "undetectable",
        }
    }
}

/// State `s_t`, the action then played (none on the last row) and the
/// belief after observing `s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub state: usize,
    pub action: Option<usize>,
    pub belief: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub stream: u64,
    pub truth: usize,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
}

impl Trace {
    pub fn final_belief(&self) -> BeliefState {
        BeliefState {
            probs: self.rows.last().expect("traces hold at least one row").belief.clone(),
        }
    }

    pub fn decision(&self) -> usize {
        map_decide(&self.final_belief())
    }

    pub fn stop_time(&self) -> usize {
        self.rows.last().map_or(0, |r| r.t)
    }

    /// `t,state,action,b_1,…,b_N` with identifiers from `m`.
    pub fn write_csv<W: Write>(&self, out: W, m: &Mmdp) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "state".into(), "action".into()];
        header.extend((1..=m.n_models()).map(|i| format!("b_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.t.to_string(),
                m.states()[r.state].clone(),
                r.action.map_or(String::new(), |a| m.actions(r.state)[a].clone()),
            ];
            rec.extend(r.belief.iter().map(|b| b.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn initial_belief(m: &Mmdp, priors: &Option<Vec<f64>>) -> Result<BeliefState, SimError> {
    match priors {
        Some(p) if p.len() != m.n_models() => Err(SimError::InvalidPriors(format!(
            "{} priors for {} models",
            p.len(),
            m.n_models()
        ))),
        Some(p) => {
            let b = BeliefState::new(p.clone())?;
            if b.probs.iter().any(|x| *x <= 0.0) {
                return Err(SimError::InvalidPriors("priors must be positive".into()));
            }
            Ok(b)
        }
        None => Ok(BeliefState::uniform(m.n_models())),
    }
}

/// Runs `policy` on model `truth` until the largest posterior reaches the
/// threshold, `max_steps` transitions were observed, or the policy has no
/// entry for the configuration reached.
pub fn simulate<C: Controller>(
    m: &Mmdp,
    truth: usize,
    policy: &C,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    if truth >= m.n_models() {
        return Err(SimError::BadTruth(truth));
    }
    if !(cfg.threshold > 0.5 && cfg.threshold < 1.0) {
        return Err(SimError::BadThreshold(cfg.threshold));
    }
    let mut rng = rng_for(seed, cfg.stream);
    let mut belief = initial_belief(m, &cfg.priors)?;
    let mut state = m.initial();
    let mut active = belief.active();
    let mut memory = Some(policy.start(active, state).ok_or(SimError::MissingInitialEntry)?);
    let model = m.model(truth);
    let mut rows = Vec::new();
    let mut t = 0;
    let stop = loop {
        if belief.max() >= cfg.threshold {
            break StopReason::Threshold;
        }
        if t == cfg.max_steps {
            break StopReason::MaxSteps;
        }
        let Some((mem, dist)) = memory.as_ref().and_then(|mem| policy.decide(mem, state)) else {
            break StopReason::UndetectableContinuation;
        };
        let action = sample_action(&mut rng, &dist);
        rows.push(TraceRow {
            t,
            state,
            action: Some(action),
            belief: belief.probs.clone(),
        });
        let next = sample_successor(&mut rng, model.row(state, action));
        belief = belief_update(&belief, state, action, next, m)?;
        let next_active = belief.active();
        memory = if next_active == active {
            Some(mem)
        } else {
            policy.start(next_active, next)
        };
        active = next_active;
        state = next;
        t += 1;
    };
    rows.push(TraceRow {
        t,
        state,
        action: None,
        belief: belief.probs.clone(),
    });
    Ok(Trace {
        seed,
        stream: cfg.stream,
        truth,
        rows,
        stop,
    })
}

/// Belief after exactly `steps` transitions (or fewer when the policy stops
/// having a decision), under a truth drawn from `theta`.
fn run_fixed<C: Controller>(
    m: &Mmdp,
    policy: &C,
    steps: usize,
    rng: &mut ChaCha20Rng,
    q: &BeliefState,
    theta: &[f64],
) -> Result<(usize, BeliefState), SimError> {
    let truth = sample_index(rng, theta.iter().copied().enumerate());
    let model = m.model(truth);
    let mut belief = q.clone();
    let mut state = m.initial();
    let mut active = belief.active();
    let mut memory = policy.start(active, state);
    for _ in 0..steps {
        if active.is_singleton() {
            break;
        }
        let Some((mem, dist)) = memory.as_ref().and_then(|mem| policy.decide(mem, state)) else {
            break;
        };
        let action = sample_action(rng, &dist);
        let next = sample_successor(rng, model.row(state, action));
        belief = belief_update(&belief, state, action, next, m)?;
        let next_active = belief.active();
        memory = if next_active == active {
            Some(mem)
        } else {
            policy.start(next_active, next)
        };
        active = next_active;
        state = next;
    }
    Ok((truth, belief))
}

/// Monte-Carlo MAP error after `t` steps with assumed priors `q` and true
/// priors `theta`; returns the error frequency and its binomial standard
/// error. Trial `k` uses stream `k` of `seed`.
pub fn monte_carlo_error<C: Controller + Sync>(
    m: &Mmdp,
    policy: &C,
    t: usize,
    trials: usize,
    seed: u64,
    q: &[f64],
    theta: &[f64],
) -> Result<(f64, f64), SimError> {
    if trials < 100 {
        return Err(SimError::TooFewTrials(trials));
    }
    let qb = initial_belief(m, &Some(q.to_vec()))?;
    initial_belief(m, &Some(theta.to_vec()))?;
    if policy.start(qb.active(), m.initial()).is_none() {
        return Err(SimError::MissingInitialEntry);
    }
    let errors: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, k);
            run_fixed(m, policy, t, &mut rng, &qb, theta).map(|(truth, b)| map_decide(&b) != truth)
        })
        .collect::<Result<_, _>>()?;
    let p = errors.iter().filter(|e| **e).count() as f64 / trials as f64;
    Ok((p, (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Mean belief vector after exactly `t` steps over `trials` runs with the
/// truth drawn from `priors`.
pub fn mean_belief<C: Controller + Sync>(
    m: &Mmdp,
    policy: &C,
    t: usize,
    trials: usize,
    seed: u64,
    priors: &[f64],
) -> Result<Vec<Vec<f64>>, SimError> {
    let qb = initial_belief(m, &Some(priors.to_vec()))?;
    (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, k);
            run_fixed(m, policy, t, &mut rng, &qb, priors).map(|(_, b)| b.probs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSummary {
    /// 1-based model index.
    pub truth: usize,
    pub runs: usize,
    pub threshold_stops: usize,
    pub max_step_stops: usize,
    pub undetectable_stops: usize,
    /// Correct decisions among threshold-stopped runs.
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub mean_stop_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub seed: u64,
    pub per_truth: Vec<TruthSummary>,
    /// MAP error frequency over all runs at their stop time.
    pub error_estimate: f64,
    pub std_error: f64,
}

/// `runs` traces per listed truth; run `k` of the batch uses stream `k`.
pub fn run_batch<C: Controller + Sync>(
    m: &Mmdp,
    policy: &C,
    truths: &[usize],
    runs: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<(Vec<Trace>, BatchSummary), SimError> {
    let jobs: Vec<(usize, u64)> = truths
        .iter()
        .enumerate()
        .flat_map(|(ti, &truth)| (0..runs).map(move |r| (truth, (ti * runs + r) as u64)))
        .collect();
    let traces: Vec<Trace> = jobs
        .par_iter()
        .map(|&(truth, stream)| {
            let c = SimConfig { stream, ..cfg.clone() };
            simulate(m, truth, policy, seed, &c)
        })
        .collect::<Result<_, _>>()?;
    let per_truth = truths
        .iter()
        .map(|&truth| {
            let mine: Vec<&Trace> = traces.iter().filter(|tr| tr.truth == truth).collect();
            let count = |r: StopReason| mine.iter().filter(|tr| tr.stop == r).count();
            let threshold_stops = count(StopReason::Threshold);
            let correct = mine
                .iter()
                .filter(|tr| tr.stop == StopReason::Threshold && tr.decision() == truth)
                .count();
            TruthSummary {
                truth: truth + 1,
                runs: mine.len(),
                threshold_stops,
                max_step_stops: count(StopReason::MaxSteps),
                undetectable_stops: count(StopReason::UndetectableContinuation),
                correct,
                accuracy: (threshold_stops > 0).then(|| correct as f64 / threshold_stops as f64),
                mean_stop_time: mine.iter().map(|tr| tr.stop_time() as f64).sum::<f64>() / mine.len().max(1) as f64,
            }
        })
        .collect();
    let wrong = traces.iter().filter(|tr| tr.decision() != tr.truth).count() as f64;
    let n = traces.len().max(1) as f64;
    let p = wrong / n;
    Ok((
        traces,
        BatchSummary {
            seed,
            per_truth,
            error_estimate: p,
            std_error: (p * (1.0 - p) / n).sqrt(),
        },
    ))
}

/// One row per run: `run,truth,stop,stop_time,decision,max_belief`, model
/// indices 1-based.
pub fn write_batch_csv<W: Write>(out: W, traces: &[Trace]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "truth", "stop", "stop_time", "decision", "max_belief"])?;
    for (k, tr) in traces.iter().enumerate() {
        w.write_record([
            k.to_string(),
            (tr.truth + 1).to_string(),
            tr.stop.as_str().to_string(),
            tr.stop_time().to_string(),
            (tr.decision() + 1).to_string(),
            tr.final_belief().max().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_ties_go_to_the_first_index() {
        assert_eq!(map_decide(&BeliefState { probs: vec![0.5, 0.5] }), 0);
        assert_eq!(
            map_decide(&BeliefState {
                probs: vec![0.64, 0.36]
            }),
            0
        );
        assert_eq!(
            map_decide(&BeliefState {
                probs: vec![0.2, 0.3, 0.5]
            }),
            2
        );
    }

    #[test]
    fn rng_streams_differ() {
        let a: u64 = rng_for(7, 0).random();
        let b: u64 = rng_for(7, 1).random();
        let c: u64 = rng_for(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn priors_are_validated() {
        assert!(BeliefState::new(vec![0.5, 0.6]).is_err());
        assert!(BeliefState::new(vec![1.0]).is_err());
        assert!(BeliefState::new(vec![0.25, 0.75]).is_ok());
    }
}
