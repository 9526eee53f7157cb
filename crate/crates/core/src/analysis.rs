//! Bhattacharyya coefficients, MAP error bounds and decay fits.
//!
//! `B(t) = Σ_h √(P_i(h)·P_j(h))` over histories of length `t`. Three ways to
//! compute it are provided: exhaustive history enumeration (small horizons,
//! used as an oracle), the matrix form for stationary policies and a forward
//! dynamic program over `(active set, controller memory, state)` for
//! memory policies.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::model::{Mdp, Mmdp};
use crate::policy::{ActiveSet, Controller, StationaryPolicy};

/// Largest horizon accepted by [`bc_exact`].
pub const EXACT_HORIZON_CAP: usize = 10;
/// Largest horizon accepted by [`bc_exact_augmented`].
pub const AUGMENTED_ORACLE_CAP: usize = 6;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("horizon {horizon} exceeds the enumeration cap {cap}")]
    HorizonExceedsCap { horizon: usize, cap: usize },
    #[error("policy is not a stationary policy over the model's states and actions: {0}")]
    NotStationary(String),
    #[error("policy has no entry for active set {active:?} at state index {state}")]
    MissingEntry { active: Vec<usize>, state: usize },
    #[error("model index {0} out of range")]
    BadModel(usize),
    #[error("invalid priors: {0}")]
    InvalidPriors(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Bhattacharyya coefficient {0} is outside [0,1]")]
    InvalidCoefficient(f64),
    #[error("fit window {0:?} holds fewer than two points of the curve")]
    BadWindow((usize, usize)),
    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

fn pair_family(m1: &Mdp, m2: &Mdp) -> Mmdp {
    Mmdp::new_unchecked(vec![m1.clone(), m2.clone()], Vec::new())
}

/// Exact `B(t)` for two models by history enumeration; `t ≤ 10`.
pub fn bc_exact<C: Controller>(m1: &Mdp, m2: &Mdp, policy: &C, t: usize) -> Result<f64, AnalysisError> {
    if t > EXACT_HORIZON_CAP {
        return Err(AnalysisError::HorizonExceedsCap {
            horizon: t,
            cap: EXACT_HORIZON_CAP,
        });
    }
    enumerate(&pair_family(m1, m2), 0, 1, policy, t)
}

/// Exact `B_ij(t)` on the augmented chain of a memory policy driving the
/// whole family; `t ≤ 6`.
pub fn bc_exact_augmented<C: Controller>(
    m: &Mmdp,
    i: usize,
    j: usize,
    policy: &C,
    t: usize,
) -> Result<f64, AnalysisError> {
    if t > AUGMENTED_ORACLE_CAP {
        return Err(AnalysisError::HorizonExceedsCap {
            horizon: t,
            cap: AUGMENTED_ORACLE_CAP,
        });
    }
    enumerate(m, i, j, policy, t)
}

/// Memory after observing `t` at the new state, given the surviving set.
fn next_memory<C: Controller>(
    policy: &C,
    memory: C::Memory,
    active: ActiveSet,
    next_active: ActiveSet,
    next: usize,
) -> Result<C::Memory, AnalysisError> {
    if next_active == active {
        return Ok(memory);
    }
    policy
        .start(next_active, next)
        .ok_or_else(|| AnalysisError::MissingEntry {
            active: next_active.indices(),
            state: next,
        })
}

fn surviving(m: &Mmdp, active: ActiveSet, s: usize, a: usize, t: usize) -> ActiveSet {
    ActiveSet::from_indices(active.iter().filter(|&k| m.model(k).prob(s, a, t) > 0.0))
}

fn enumerate<C: Controller>(m: &Mmdp, i: usize, j: usize, policy: &C, t: usize) -> Result<f64, AnalysisError> {
    let n = m.n_models();
    if i >= n || j >= n {
        return Err(AnalysisError::BadModel(i.max(j)));
    }
    let active = ActiveSet::full(n);
    let s0 = m.initial();
    let memory = policy.start(active, s0).ok_or_else(|| AnalysisError::MissingEntry {
        active: active.indices(),
        state: s0,
    })?;
    walk(m, i, j, policy, active, memory, s0, 1.0, t)
}

#[allow(clippy::too_many_arguments)]
fn walk<C: Controller>(
    m: &Mmdp,
    i: usize,
    j: usize,
    policy: &C,
    active: ActiveSet,
    memory: C::Memory,
    s: usize,
    weight: f64,
    remaining: usize,
) -> Result<f64, AnalysisError> {
    if remaining == 0 {
        return Ok(weight);
    }
    let (memory, dist) = policy.decide(&memory, s).ok_or_else(|| AnalysisError::MissingEntry {
        active: active.indices(),
        state: s,
    })?;
    let (mi, mj) = (m.model(i), m.model(j));
    let mut total = 0.0;
    for &(a, pa) in &dist {
        for &(t, pi) in mi.row(s, a).entries() {
            let pj = mj.prob(s, a, t);
            if pj == 0.0 {
                continue;
            }
            let next_active = surviving(m, active, s, a, t);
            let mem = next_memory(policy, memory.clone(), active, next_active, t)?;
            total += walk(
                m,
                i,
                j,
                policy,
                next_active,
                mem,
                t,
                weight * pa * (pi * pj).sqrt(),
                remaining - 1,
            )?;
        }
    }
    Ok(total)
}

/// `W_xy = Σ_a π(a|x)·√(δ1(y|x,a)·δ2(y|x,a))` for a stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BcMatrix {
    pub w: Vec<Vec<f64>>,
    pub initial: usize,
    pub policy: StationaryPolicy,
}

pub fn bc_matrix(m1: &Mdp, m2: &Mdp, policy: &StationaryPolicy) -> Result<BcMatrix, AnalysisError> {
    if !policy.fits(m1) {
        return Err(AnalysisError::NotStationary(
            "rows must match every state's action set and sum to one".into(),
        ));
    }
    if m1.states != m2.states || m1.actions != m2.actions {
        return Err(AnalysisError::DimensionMismatch(
            "models do not share a structure".into(),
        ));
    }
    let n = m1.n_states();
    let mut w = vec![vec![0.0; n]; n];
    for x in 0..n {
        for (a, &pa) in policy.probs[x].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for &(y, p1) in m1.row(x, a).entries() {
                let p2 = m2.prob(x, a, y);
                if p2 > 0.0 {
                    w[x][y] += pa * (p1 * p2).sqrt();
                }
            }
        }
    }
    Ok(BcMatrix {
        w,
        initial: m1.initial,
        policy: policy.clone(),
    })
}

impl BcMatrix {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    fn step(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (x, &vx) in v.iter().enumerate() {
            if vx == 0.0 {
                continue;
            }
            for (y, &wxy) in self.w[x].iter().enumerate() {
                out[y] += vx * wxy;
            }
        }
        out
    }

    /// `e_init · W^t · 1`.
    pub fn value(&self, t: usize) -> f64 {
        self.curve(t)[t]
    }

    /// `B(0), …, B(horizon)` by repeated vector-matrix products.
    pub fn curve(&self, horizon: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n()];
        v[self.initial] = 1.0;
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(v.iter().sum());
        for _ in 0..horizon {
            v = self.step(&v);
            out.push(v.iter().sum());
        }
        out
    }

    pub fn max_row_sum(&self) -> f64 {
        self.w.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max)
    }

    /// `(max_x (W^k 1)_x)^(1/k)`, an upper estimate of the spectral radius
    /// that converges as `k` grows.
    pub fn spectral_radius_estimate(&self, k: usize) -> f64 {
        let k = k.max(1);
        let mut v = vec![1.0; self.n()];
        let mut log_scale = 0.0;
        for _ in 0..k {
            let mut next = vec![0.0; self.n()];
            for (x, row) in self.w.iter().enumerate() {
                next[x] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let top = next.iter().cloned().fold(0.0, f64::max);
            if top == 0.0 {
                return 0.0;
            }
            log_scale += top.ln();
            v = next.into_iter().map(|x| x / top).collect();
        }
        (log_scale / k as f64).exp()
    }
}

/// `B_ij(t)` for `t = 0..=horizon`; model indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct BcCurve {
    pub pair: (usize, usize),
    pub values: Vec<f64>,
}

impl BcCurve {
    pub fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// One curve per unordered pair `i < j`, by forward accumulation of
/// `√(P_i·P_j)` over `(active set, memory, state)`. No horizon cap.
pub fn pairwise_bc_curve<C: Controller>(m: &Mmdp, policy: &C, horizon: usize) -> Result<Vec<BcCurve>, AnalysisError> {
    let n = m.n_models();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push(BcCurve {
                pair: (i, j),
                values: pair_curve(m, i, j, policy, horizon)?,
            });
        }
    }
    Ok(out)
}

pub fn pair_curve<C: Controller>(
    m: &Mmdp,
    i: usize,
    j: usize,
    policy: &C,
    horizon: usize,
) -> Result<Vec<f64>, AnalysisError> {
    let n = m.n_models();
    if i >= n || j >= n || i == j {
        return Err(AnalysisError::BadModel(i.max(j)));
    }
    let active = ActiveSet::full(n);
    let s0 = m.initial();
    let memory = policy.start(active, s0).ok_or_else(|| AnalysisError::MissingEntry {
        active: active.indices(),
        state: s0,
    })?;
    let (mi, mj) = (m.model(i), m.model(j));
    let mut mass: BTreeMap<(ActiveSet, C::Memory, usize), f64> = BTreeMap::from([((active, memory, s0), 1.0)]);
    let mut values = Vec::with_capacity(horizon + 1);
    values.push(1.0);
    for _ in 0..horizon {
        let mut next: BTreeMap<(ActiveSet, C::Memory, usize), f64> = BTreeMap::new();
        for ((act, mem, s), w) in mass {
            let (mem, dist) = policy.decide(&mem, s).ok_or_else(|| AnalysisError::MissingEntry {
                active: act.indices(),
                state: s,
            })?;
            for &(a, pa) in &dist {
                for &(t, pi) in mi.row(s, a).entries() {
                    let pj = mj.prob(s, a, t);
                    if pj == 0.0 {
                        continue;
                    }
                    let nact = surviving(m, act, s, a, t);
                    let nmem = next_memory(policy, mem.clone(), act, nact, t)?;
                    *next.entry((nact, nmem, t)).or_insert(0.0) += w * pa * (pi * pj).sqrt();
                }
            }
        }
        mass = next;
        values.push(mass.values().sum());
    }
    Ok(values)
}

/// MAP error bounds; `upper_raw` may exceed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    pub lower: f64,
    pub upper_raw: f64,
}

impl ErrorBounds {
    pub fn upper_clamped(&self) -> f64 {
        self.upper_raw.min(1.0)
    }
}

fn check_prior(p: f64, name: &str) -> Result<(), AnalysisError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::InvalidPriors(format!("{name} = {p} is not in (0,1)")))
    }
}

fn check_coefficient(b: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0 + 1e-12).contains(&b) {
        Ok(())
    } else {
        Err(AnalysisError::InvalidCoefficient(b))
    }
}

/// Bounds for two hypotheses with assumed prior `q` and true prior `θ` on
/// the first model.
pub fn error_bounds_binary(b: f64, q: f64, theta: f64) -> Result<ErrorBounds, AnalysisError> {
    check_prior(q, "q")?;
    check_prior(theta, "theta")?;
    check_coefficient(b)?;
    let lower = 0.5 * theta.min(1.0 - theta) * b * b;
    let upper = ((1.0 - q) / q).sqrt() * theta;
    let upper = upper.max((q / (1.0 - q)).sqrt() * (1.0 - theta));
    Ok(ErrorBounds {
        lower,
        upper_raw: upper * b,
    })
}

fn check_prior_vector(p: &[f64], name: &str) -> Result<(), AnalysisError> {
    if p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(AnalysisError::InvalidPriors(format!("{name} has a non-positive entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::InvalidPriors(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Bounds for `N` hypotheses from the pairwise coefficients `bc[i][j]`
/// (only `i ≠ j` entries are read).
pub fn error_bounds_multi(bc: &[Vec<f64>], q: &[f64], theta: &[f64]) -> Result<ErrorBounds, AnalysisError> {
    let n = bc.len();
    if q.len() != n || theta.len() != n || bc.iter().any(|r| r.len() != n) {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{n}x{n} coefficients with {} and {} priors",
            q.len(),
            theta.len()
        )));
    }
    if n < 2 {
        return Err(AnalysisError::DimensionMismatch("need at least two hypotheses".into()));
    }
    check_prior_vector(q, "q")?;
    check_prior_vector(theta, "theta")?;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                check_coefficient(bc[i][j])?;
                if (bc[i][j] - bc[j][i]).abs() > 1e-9 {
                    return Err(AnalysisError::DimensionMismatch(format!(
                        "coefficients are not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
    }
    let mut lower = 0.0f64;
    for k in 0..n {
        let s: f64 = (0..n)
            .filter(|&i| i != k)
            .map(|i| theta[i].min(theta[k]) * bc[i][k] * bc[i][k])
            .sum();
        lower = lower.max(s);
    }
    let ratio = (0..n).map(|i| theta[i] / q[i]).fold(0.0, f64::max);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += (q[i] * q[j]).sqrt() * bc[i][j];
        }
    }
    Ok(ErrorBounds {
        lower: 0.5 * lower,
        upper_raw: ratio * sum,
    })
}

/// Symmetric coefficient matrix at time `t` from pairwise curves.
pub fn bc_matrix_at(curves: &[BcCurve], n: usize, t: usize) -> Vec<Vec<f64>> {
    let mut b = vec![vec![1.0; n]; n];
    for c in curves {
        let v = c.values[t.min(c.horizon())];
        b[c.pair.0][c.pair.1] = v;
        b[c.pair.1][c.pair.0] = v;
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Fit,
    /// The curve is constant on the window; `λ = 1` and R² is undefined.
    Degenerate,
    /// A zero value in the window: detection is already certain, `λ = 0`.
    Collapsed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub lambda: f64,
    pub r_squared: Option<f64>,
    pub status: FitStatus,
    pub window: (usize, usize),
}

/// Least-squares fit of `log B(t) = log c + t·log λ` over `t ∈ [lo, hi]`.
/// The default window is the second half of the curve.
pub fn decay_fit(values: &[f64], window: Option<(usize, usize)>) -> Result<DecayFit, AnalysisError> {
    let last = values.len().saturating_sub(1);
    let (lo, hi) = window.unwrap_or((values.len() / 2, last));
    if hi > last || lo >= hi {
        return Err(AnalysisError::BadWindow((lo, hi)));
    }
    let pts = &values[lo..=hi];
    if pts.iter().any(|&v| v <= 0.0) {
        return Ok(DecayFit {
            lambda: 0.0,
            r_squared: None,
            status: FitStatus::Collapsed,
            window: (lo, hi),
        });
    }
    let k = pts.len() as f64;
    let xs: Vec<f64> = (lo..=hi).map(|t| t as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    // Rounding alone moves a constant curve by a few ULP.
    if ys.iter().all(|y| (y - my).abs() <= 1e-12) {
        return Ok(DecayFit {
            lambda: 1.0,
            r_squared: None,
            status: FitStatus::Degenerate,
            window: (lo, hi),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    Ok(DecayFit {
        lambda: slope.exp(),
        r_squared: Some(1.0 - ss_res / syy),
        status: FitStatus::Fit,
        window: (lo, hi),
    })
}

/// Writes `t,B` rows.
pub fn write_bc_csv<W: Write>(out: W, values: &[f64]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "B"])?;
    for (t, v) in values.iter().enumerate() {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `t,lower,upper_raw,upper_clamped` rows.
pub fn write_bounds_csv<W: Write>(out: W, bounds: &[ErrorBounds]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "lower", "upper_raw", "upper_clamped"])?;
    for (t, b) in bounds.iter().enumerate() {
        w.write_record([
            t.to_string(),
            b.lower.to_string(),
            b.upper_raw.to_string(),
            b.upper_clamped().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
