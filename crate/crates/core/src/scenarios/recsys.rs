//! Recommendation system with customer types.
//!
//! States are ordered purchase histories of length at most two, actions are
//! the recommended items. Each type buys the item of rank `r` on its own
//! preference list with probability `v_r` (the `r`-th largest entry of a
//! vector drawn from the simplex); the recommended item's probability is
//! multiplied by `1 + α` and the others are scaled down by a common factor.
//! Each type also gets one row where its least preferred item has zero
//! probability, which makes that purchase identity-revealing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::model::{Distribution, Mdp, Mmdp};

fn default_history() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecSysSpec {
    pub item_count: usize,
    #[serde(default = "default_history")]
    pub history_length: usize,
    pub type_count: usize,
    /// Shared sensitivity; drawn uniformly from its admissible range when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub seed: u64,
    /// Give every type the same preference ranking.
    #[serde(default)]
    pub identical_rankings: bool,
    /// Add the per-type identity-revealing rows.
    #[serde(default = "default_true")]
    pub revealing_rows: bool,
}

impl RecSysSpec {
    pub fn new(item_count: usize, type_count: usize, seed: u64) -> Self {
        RecSysSpec {
            item_count,
            history_length: 2,
            type_count,
            alpha: None,
            seed,
            identical_rankings: false,
            revealing_rows: true,
        }
    }
}

/// Everything drawn from the seed, exposed for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct RecSysDraw {
    /// Purchase probabilities by rank, nonincreasing.
    pub v: Vec<f64>,
    pub alpha: f64,
    /// `rankings[k][r]` is the item type `k` ranks `r`-th (0 = favourite).
    pub rankings: Vec<Vec<usize>>,
    /// Per type: `(state index, recommended item)` of its revealing row.
    pub revealing: Vec<(usize, usize)>,
}

impl RecSysDraw {
    /// Purchase distribution of type `k` without a recommendation.
    pub fn base_row(&self, k: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.v.len()];
        for (r, &item) in self.rankings[k].iter().enumerate() {
            p[item] = self.v[r];
        }
        p
    }

    /// Purchase distribution of type `k` when `rec` is recommended.
    pub fn boosted_row(&self, k: usize, rec: usize) -> Vec<f64> {
        let mut p = self.base_row(k);
        let boosted = (1.0 + self.alpha) * p[rec];
        let scale = if p[rec] < 1.0 {
            (1.0 - boosted) / (1.0 - p[rec])
        } else {
            0.0
        };
        for (i, x) in p.iter_mut().enumerate() {
            *x = if i == rec { boosted } else { *x * scale };
        }
        p
    }
}

pub fn state_names(n: usize) -> Vec<String> {
    let mut out = vec!["()".to_string()];
    out.extend((1..=n).map(|i| format!("({i})")));
    for i in 1..=n {
        out.extend((1..=n).map(|j| format!("({i},{j})")));
    }
    out
}

pub fn action_names(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("rec{i:0width$}")).collect()
}

/// Index of the state reached from `s` after buying `item` (0-based).
pub fn successor(n: usize, s: usize, item: usize) -> usize {
    if s == 0 {
        1 + item
    } else if s <= n {
        1 + n + (s - 1) * n + item
    } else {
        let last = (s - 1 - n) % n;
        1 + n + last * n + item
    }
}

fn factorial_at_least(n: usize, k: usize) -> bool {
    let mut f: usize = 1;
    for i in 1..=n {
        f = f.saturating_mul(i);
        if f >= k {
            return true;
        }
    }
    f >= k
}

pub fn draw(spec: &RecSysSpec) -> Result<RecSysDraw, ScenarioError> {
    let bad = |m: String| Err(ScenarioError::Spec(m));
    if spec.item_count < 3 {
        return bad(format!("item_count must be at least 3, got {}", spec.item_count));
    }
    if spec.type_count < 2 {
        return bad(format!("type_count must be at least 2, got {}", spec.type_count));
    }
    if spec.history_length != 2 {
        return bad(format!("history_length must be 2, got {}", spec.history_length));
    }
    let n = spec.item_count;
    if !spec.identical_rankings && !factorial_at_least(n, spec.type_count) {
        return bad("more types than distinct rankings".into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let alpha_max = 1.0 / v[0] - 1.0;
    let alpha = match spec.alpha {
        Some(a) if !(0.0..=alpha_max).contains(&a) => {
            return bad(format!("alpha = {a} outside [0, {alpha_max}]"));
        }
        Some(a) => a,
        None => rng.random::<f64>() * alpha_max,
    };
    let mut rankings: Vec<Vec<usize>> = Vec::with_capacity(spec.type_count);
    while rankings.len() < spec.type_count {
        let mut r: Vec<usize> = (0..n).collect();
        if !spec.identical_rankings {
            r.shuffle(&mut rng);
            if rankings.contains(&r) {
                continue;
            }
        }
        rankings.push(r);
    }
    let n_states = 1 + n + n * n;
    let mut revealing: Vec<(usize, usize)> = Vec::new();
    if spec.revealing_rows {
        for ranking in rankings.iter() {
            let lowest = *ranking.last().expect("nonempty ranking");
            loop {
                let s = rng.random_range(1..n_states);
                let rec = rng.random_range(0..n);
                if rec != lowest && !revealing.contains(&(s, rec)) {
                    revealing.push((s, rec));
                    break;
                }
            }
        }
    }
    Ok(RecSysDraw {
        v,
        alpha,
        rankings,
        revealing,
    })
}

/// One model per customer type, named `T1..TN`.
pub fn gen_recsys(spec: &RecSysSpec) -> Result<Mmdp, ScenarioError> {
    let d = draw(spec)?;
    let n = spec.item_count;
    let states = state_names(n);
    let acts = action_names(n);
    let actions = vec![acts; states.len()];
    let mut models = Vec::with_capacity(spec.type_count);
    for k in 0..spec.type_count {
        let rows: Vec<Vec<f64>> = (0..n).map(|rec| d.boosted_row(k, rec)).collect();
        let lowest = *d.rankings[k].last().expect("nonempty ranking");
        let kernel = (0..states.len())
            .map(|s| {
                (0..n)
                    .map(|rec| {
                        let mut p = rows[rec].clone();
                        if d.revealing.get(k) == Some(&(s, rec)) {
                            p[lowest] = 0.0;
                            let total: f64 = p.iter().sum();
                            p.iter_mut().for_each(|x| *x /= total);
                        }
                        Distribution::new(p.into_iter().enumerate().map(|(i, x)| (successor(n, s, i), x)))
                    })
                    .collect()
            })
            .collect();
        models.push(Mdp::new(states.clone(), actions.clone(), kernel, 0)?);
    }
    let names = (1..=spec.type_count).map(|k| format!("T{k}")).collect();
    Ok(Mmdp::new(models, names)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_space_size() {
        let m = gen_recsys(&RecSysSpec::new(10, 6, 0)).unwrap();
        assert_eq!(m.n_states(), 111);
        assert_eq!(m.actions(0)[0], "rec01");
    }

    #[test]
    fn successor_shifts_history() {
        let n = 4;
        let names = state_names(n);
        assert_eq!(names[successor(n, 0, 2)], "(3)");
        assert_eq!(names[successor(n, 3, 0)], "(3,1)");
        let s = names.iter().position(|x| x == "(2,4)").unwrap();
        assert_eq!(names[successor(n, s, 1)], "(4,2)");
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let mut spec = RecSysSpec::new(5, 2, 3);
        spec.alpha = Some(1e6);
        assert!(gen_recsys(&spec).is_err());
        spec.alpha = Some(-0.1);
        assert!(gen_recsys(&spec).is_err());
    }
}
