//! Exact computations on small finite MDPs.
//!
//! Every positive-probability path from the fixed initial state is enumerated
//! together with its probability `Q(τ)` under the uniform-action policy. On
//! that space the partition function, the exponential-family law and the
//! surrogate gradient are exact sums, and the primal relative-entropy
//! problem can be solved through its dual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{subgradient_sign, surrogate_objective_ln, ToleranceVector};
use crate::numeric::{dot, sup_norm, weighted_log_sum_exp};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("enumeration would produce {estimated:.0} trajectories, above the cap of {cap}")]
    CapExceeded { estimated: f64, cap: usize },
    #[error("constraint box infeasible for features {violated:?}: {detail}")]
    Infeasible { violated: Vec<usize>, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `transition[s][a][s']` is `p(s' | s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_state: usize,
    pub state_features: Vec<Vec<f64>>,
}

impl FiniteMdp {
    pub fn k(&self) -> usize {
        self.state_features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |msg: String| Err(OracleError::InvalidMdp(msg));
        if self.n_states == 0 || self.n_actions == 0 {
            return bad("needs at least one state and one action".into());
        }
        if self.initial_state >= self.n_states {
            return bad(format!("initial state {} out of range", self.initial_state));
        }
        if self.transition.len() != self.n_states || self.state_features.len() != self.n_states {
            return bad(format!(
                "expected {} transition blocks and feature rows, got {} and {}",
                self.n_states,
                self.transition.len(),
                self.state_features.len()
            ));
        }
        let k = self.k();
        if k == 0 {
            return bad("state features are empty".into());
        }
        for (s, f) in self.state_features.iter().enumerate() {
            if f.len() != k || f.iter().any(|v| !v.is_finite()) {
                return bad(format!("state {s}: features must be {k} finite values"));
            }
        }
        for (s, block) in self.transition.iter().enumerate() {
            if block.len() != self.n_actions {
                return bad(format!("state {s}: expected {} action rows", self.n_actions));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != self.n_states {
                    return bad(format!("row ({s}, {a}) has {} entries", row.len()));
                }
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return bad(format!("row ({s}, {a}) has an entry outside [0, 1]"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("row ({s}, {a}) sums to {total}"));
                }
            }
        }
        Ok(())
    }
}

/// Number of positive-probability paths of horizon `H` from the initial state.
pub fn count_paths(mdp: &FiniteMdp, horizon: usize) -> f64 {
    let mut paths = vec![0.0; mdp.n_states];
    paths[mdp.initial_state] = 1.0;
    for _ in 0..horizon {
        let mut next = vec![0.0; mdp.n_states];
        for (s, &n) in paths.iter().enumerate() {
            if n == 0.0 {
                continue;
            }
            for row in &mdp.transition[s] {
                for (s2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        next[s2] += n;
                    }
                }
            }
        }
        paths = next;
    }
    paths.iter().sum()
}

/// The enumerated trajectory space. Paths are stored flat: `H + 1` state
/// indices and `H` action indices per trajectory, in lexicographic order of
/// `(a_0, s_1, a_1, …, s_H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedSpace {
    pub horizon: usize,
    pub gamma: f64,
    pub k: usize,
    pub n_actions: usize,
    states: Vec<u32>,
    actions: Vec<u32>,
    /// `ln Q(τ)`, accumulated one step at a time.
    pub log_q: Vec<f64>,
    pub q: Vec<f64>,
    counts: Vec<f64>,
}

impl EnumeratedSpace {
    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }

    pub fn states(&self, l: usize) -> &[u32] {
        let w = self.horizon + 1;
        &self.states[l * w..(l + 1) * w]
    }

    pub fn actions(&self, l: usize) -> &[u32] {
        let w = self.horizon;
        &self.actions[l * w..(l + 1) * w]
    }

    /// Discounted feature counts `s^τ`.
    pub fn counts(&self, l: usize) -> &[f64] {
        &self.counts[l * self.k..(l + 1) * self.k]
    }

    pub fn all_counts(&self) -> impl Iterator<Item = &[f64]> {
        self.counts.chunks_exact(self.k)
    }

    /// `E_Q[s^τ]`.
    pub fn base_mean_counts(&self) -> Vec<f64> {
        expected_counts(&vec![0.0; self.k], self)
    }

    /// Per-feature range of `s_k^τ` over the space.
    pub fn count_range(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.k];
        let mut hi = vec![f64::NEG_INFINITY; self.k];
        for c in self.all_counts() {
            for j in 0..self.k {
                lo[j] = lo[j].min(c[j]);
                hi[j] = hi[j].max(c[j]);
            }
        }
        (lo, hi)
    }
}

/// Enumerates every path `(a_0, s_1, …, a_{H−1}, s_H)` from the initial state
/// with `Q(τ) = Π_t (1/|A|) p(s_{t+1} | s_t, a_t) > 0`.
pub fn enumerate_trajectories(
    mdp: &FiniteMdp,
    horizon: usize,
    gamma: f64,
    cap: usize,
) -> Result<EnumeratedSpace, OracleError> {
    mdp.validate()?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(OracleError::InvalidMdp(format!("gamma {gamma} outside [0, 1]")));
    }
    let estimated = count_paths(mdp, horizon);
    if estimated > cap as f64 {
        return Err(OracleError::CapExceeded { estimated, cap });
    }
    let k = mdp.k();
    let n = estimated as usize;
    let mut space = EnumeratedSpace {
        horizon,
        gamma,
        k,
        n_actions: mdp.n_actions,
        states: Vec::with_capacity(n * (horizon + 1)),
        actions: Vec::with_capacity(n * horizon),
        log_q: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        counts: Vec::with_capacity(n * k),
    };
    let step_log = (1.0 / mdp.n_actions as f64).ln();
    let mut states = vec![mdp.initial_state as u32];
    let mut actions = Vec::with_capacity(horizon);
    extend_paths(mdp, horizon, step_log, &mut states, &mut actions, 0.0, &mut space);
    Ok(space)
}

fn extend_paths(
    mdp: &FiniteMdp,
    horizon: usize,
    step_log: f64,
    states: &mut Vec<u32>,
    actions: &mut Vec<u32>,
    log_q: f64,
    space: &mut EnumeratedSpace,
) {
    if actions.len() == horizon {
        space.states.extend_from_slice(states);
        space.actions.extend_from_slice(actions);
        space.log_q.push(log_q);
        space.q.push(log_q.exp());
        space.counts.extend(path_counts(mdp, states, space.gamma));
        return;
    }
    let s = *states.last().expect("path starts at the initial state") as usize;
    for a in 0..mdp.n_actions {
        for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            states.push(s2 as u32);
            actions.push(a as u32);
            extend_paths(mdp, horizon, step_log, states, actions, log_q + (step_log + p.ln()), space);
            states.pop();
            actions.pop();
        }
    }
}

/// Same accumulation order as [`crate::trajdata::feature_counts`].
fn path_counts(mdp: &FiniteMdp, states: &[u32], gamma: f64) -> Vec<f64> {
    let mut counts = vec![0.0; mdp.k()];
    let mut discount = 1.0;
    for &s in states {
        for (c, v) in counts.iter_mut().zip(&mdp.state_features[s as usize]) {
            *c += discount * v;
        }
        discount *= gamma;
    }
    counts
}

fn logits(theta: &[f64], space: &EnumeratedSpace) -> Vec<f64> {
    assert_eq!(theta.len(), space.k, "θ dimension");
    space
        .log_q
        .iter()
        .zip(space.all_counts())
        .map(|(lq, c)| lq + dot(theta, c))
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    weighted_log_sum_exp(xs, &vec![1.0; xs.len()])
}

/// `ln Z(θ) = ln Σ_τ Q(τ) e^{θ·s^τ}`, with `Q` renormalized over the space so
/// that `ln Z(0) = 0` exactly.
pub fn exact_log_partition(theta: &[f64], space: &EnumeratedSpace) -> f64 {
    if theta.iter().all(|&t| t == 0.0) {
        return 0.0;
    }
    log_sum_exp(&logits(theta, space)) - log_sum_exp(&space.log_q)
}

pub fn exact_partition(theta: &[f64], space: &EnumeratedSpace) -> f64 {
    exact_log_partition(theta, space).exp()
}

/// `P_θ(τ) = Q(τ) e^{θ·s^τ} / Z(θ)`.
pub fn trajectory_distribution(theta: &[f64], space: &EnumeratedSpace) -> Vec<f64> {
    let l = logits(theta, space);
    let norm = log_sum_exp(&l);
    l.iter().map(|v| (v - norm).exp()).collect()
}

/// `E_{P_θ}[s^τ]`.
pub fn expected_counts(theta: &[f64], space: &EnumeratedSpace) -> Vec<f64> {
    let p = trajectory_distribution(theta, space);
    expectation(&p, space)
}

fn expectation(p: &[f64], space: &EnumeratedSpace) -> Vec<f64> {
    let mut mean = vec![0.0; space.k];
    for (w, c) in p.iter().zip(space.all_counts()) {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += w * v;
        }
    }
    mean
}

fn covariance(p: &[f64], mean: &[f64], space: &EnumeratedSpace, active: &[usize]) -> Vec<Vec<f64>> {
    let n = active.len();
    let mut cov = vec![vec![0.0; n]; n];
    for (w, c) in p.iter().zip(space.all_counts()) {
        for (i, &a) in active.iter().enumerate() {
            let da = c[a] - mean[a];
            for (j, &b) in active.iter().enumerate() {
                cov[i][j] += w * da * (c[b] - mean[b]);
            }
        }
    }
    cov
}

/// `ŝ_k − E_{P_θ}[s_k^τ] − a_k ε_k`.
pub fn exact_gradient(theta: &[f64], space: &EnumeratedSpace, shat: &[f64], eps: &ToleranceVector) -> Vec<f64> {
    let mean = expected_counts(theta, space);
    (0..space.k)
        .map(|k| shat[k] - mean[k] - subgradient_sign(theta[k]) * eps.eps[k])
        .collect()
}

/// `g(θ)` with the exact partition function.
pub fn exact_surrogate(theta: &[f64], space: &EnumeratedSpace, shat: &[f64], eps: &ToleranceVector) -> f64 {
    surrogate_objective_ln(theta, shat, exact_log_partition(theta, space), &eps.eps)
}

/// `Σ_l x_l ln(x_l / q_l)`, with `0 ln 0 = 0`.
pub fn kl_divergence(x: &[f64], q: &[f64]) -> f64 {
    x.iter()
        .zip(q)
        .filter(|(xl, _)| **xl > 0.0)
        .map(|(xl, ql)| xl * (xl / ql).ln())
        .sum()
}

/// `L1(x, θ, η) = f(x) + Σ θ_k h_k(x) − Σ |θ_k| ε_k + η (Σ x − 1)` with
/// `h_k(x) = ŝ_k − Σ_l x_l s_k^{τ_l}` and `f` the relative entropy to `Q`.
pub fn lagrangian(x: &[f64], theta: &[f64], eta: f64, space: &EnumeratedSpace, shat: &[f64], eps: &[f64]) -> f64 {
    let mean = expectation(x, space);
    let h: Vec<f64> = shat.iter().zip(&mean).map(|(s, m)| s - m).collect();
    let penalty: f64 = theta.iter().zip(eps).map(|(t, e)| t.abs() * e).sum();
    kl_divergence(x, &space.q) + dot(theta, &h) - penalty + eta * (x.iter().sum::<f64>() - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalConfig {
    /// Stop when the proximal step moves `θ` by less than this (sup-norm).
    pub tol: f64,
    pub max_iters: usize,
    /// `|θ|∞` beyond which the dual is treated as unbounded.
    pub divergence_cap: f64,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 200_000,
            divergence_cap: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    /// Optimal trajectory law `x`.
    pub p: Vec<f64>,
    /// Dual maximizer `θ̂`.
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: f64,
    /// `λ − ν`.
    pub theta_from_dual: Vec<f64>,
    /// Relative entropy of `p` to `Q`.
    pub kl: f64,
    /// `g(θ̂)` with the exact partition function.
    pub dual_value: f64,
    /// `ε_k − |ŝ_k − E_p[s_k^τ]|`.
    pub slacks: Vec<f64>,
    pub iterations: usize,
}

impl PrimalSolution {
    /// For each `k`: `λ_k (h_k − ε_k)` and `ν_k (−h_k − ε_k)`, the larger in
    /// absolute value.
    pub fn complementary_slackness(&self, space: &EnumeratedSpace, shat: &[f64], eps: &[f64]) -> Vec<f64> {
        let mean = expectation(&self.p, space);
        (0..space.k)
            .map(|k| {
                let h = shat[k] - mean[k];
                let upper = self.lambda[k] * (h - eps[k]);
                let lower = self.nu[k] * (-h - eps[k]);
                if upper.abs() >= lower.abs() {
                    upper
                } else {
                    lower
                }
            })
            .collect()
    }

    /// For each `k` with `θ̂_k ≠ 0`, the distance of `h_k` from the face
    /// selected by the sign of `θ̂_k`; zero for inactive features.
    pub fn active_face_gaps(&self, space: &EnumeratedSpace, shat: &[f64], eps: &[f64]) -> Vec<f64> {
        let mean = expectation(&self.p, space);
        (0..space.k)
            .map(|k| {
                let h = shat[k] - mean[k];
                match self.theta[k] {
                    t if t > 0.0 => h - eps[k],
                    t if t < 0.0 => -h - eps[k],
                    _ => 0.0,
                }
            })
            .collect()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Smooth part of the dual, `θ·ŝ − ln Z(θ)`, and its gradient `ŝ − E_θ[s]`.
fn smooth_dual(theta: &[f64], space: &EnumeratedSpace, shat: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let l = logits(theta, space);
    let norm = log_sum_exp(&l);
    let ln_z = if theta.iter().all(|&t| t == 0.0) {
        0.0
    } else {
        norm - log_sum_exp(&space.log_q)
    };
    let p: Vec<f64> = l.iter().map(|v| (v - norm).exp()).collect();
    let mean = expectation(&p, space);
    let grad = shat.iter().zip(&mean).map(|(s, m)| s - m).collect();
    (dot(theta, shat) - ln_z, grad, p)
}

fn box_violations(mean: &[f64], shat: &[f64], eps: &[f64], tol: f64) -> Vec<usize> {
    (0..shat.len())
        .filter(|&k| (shat[k] - mean[k]).abs() > eps[k] + tol)
        .collect()
}

/// Minimizes `Σ x ln(x/Q)` subject to `|ŝ_k − E_x[s_k]| ≤ ε_k` and `Σ x = 1`
/// by maximizing the dual `g(θ)` with exact `Z`, then recovers
/// `x = Q e^{θ·s} / Z(θ)`, `λ = max(θ, 0)`, `ν = max(−θ, 0)`, `η = ln Z − 1`.
///
/// The dual is maximized by proximal gradient ascent (soft thresholding for
/// the `ε`-weighted L1 term) with halving backtracking, which is monotone in
/// `g`, followed by Newton steps on the nonzero coordinates.
pub fn solve_primal(
    space: &EnumeratedSpace,
    shat: &[f64],
    eps: &ToleranceVector,
    config: &PrimalConfig,
) -> Result<PrimalSolution, OracleError> {
    let k = space.k;
    for len in [shat.len(), eps.eps.len()] {
        if len != k {
            return Err(OracleError::DimensionMismatch { expected: k, got: len });
        }
    }
    let eps = &eps.eps;

    // a feature whose box misses the range of its counts can never be matched
    let (lo, hi) = space.count_range();
    let violated: Vec<usize> = (0..k)
        .filter(|&j| shat[j] + eps[j] < lo[j] || shat[j] - eps[j] > hi[j])
        .collect();
    if !violated.is_empty() {
        return Err(OracleError::Infeasible {
            violated,
            detail: "target outside the range of attainable feature counts".into(),
        });
    }

    let mut theta = vec![0.0; k];
    let (mut f, mut grad, _) = smooth_dual(&theta, space, shat);
    let mut step = 1.0;
    let mut iterations = 0;
    for _round in 0..4 {
        // proximal gradient ascent
        for _ in 0..config.max_iters {
            iterations += 1;
            let (next, f_next, grad_next, moved) = loop {
                let cand: Vec<f64> = (0..k)
                    .map(|j| soft_threshold(theta[j] + step * grad[j], step * eps[j]))
                    .collect();
                let d: Vec<f64> = cand.iter().zip(&theta).map(|(c, t)| c - t).collect();
                let (fc, gc, _) = smooth_dual(&cand, space, shat);
                let model = f + dot(&grad, &d) - dot(&d, &d) / (2.0 * step);
                if fc >= model - 1e-15 * f.abs().max(1.0) || step < 1e-12 {
                    break (cand, fc, gc, sup_norm(&d));
                }
                step *= 0.5;
            };
            theta = next;
            f = f_next;
            grad = grad_next;
            if sup_norm(&theta) > config.divergence_cap {
                let mean: Vec<f64> = shat.iter().zip(&grad).map(|(s, g)| s - g).collect();
                let mut violated = box_violations(&mean, shat, eps, 0.0);
                if violated.is_empty() {
                    violated = (0..k).filter(|&j| theta[j].abs() > config.divergence_cap / 2.0).collect();
                }
                return Err(OracleError::Infeasible {
                    violated,
                    detail: format!("dual unbounded: |θ|∞ exceeded {}", config.divergence_cap),
                });
            }
            if moved <= config.tol * step.max(1e-3) {
                break;
            }
            step = (step * 2.0).min(1e3);
        }

        // Newton polish on the support
        let active: Vec<usize> = (0..k).filter(|&j| theta[j] != 0.0).collect();
        if !active.is_empty() {
            for _ in 0..50 {
                let (_, g_smooth, p) = smooth_dual(&theta, space, shat);
                let r: Vec<f64> = active
                    .iter()
                    .map(|&j| g_smooth[j] - theta[j].signum() * eps[j])
                    .collect();
                if sup_norm(&r) <= 1e-14 * (1.0 + sup_norm(shat)) {
                    break;
                }
                let mean: Vec<f64> = shat.iter().zip(&g_smooth).map(|(s, g)| s - g).collect();
                let cov = covariance(&p, &mean, space, &active);
                let Some(delta) = solve_spd(cov, &r) else { break };
                let mut t = 1.0;
                let mut improved = false;
                while t > 1e-6 {
                    let mut cand = theta.clone();
                    for (i, &j) in active.iter().enumerate() {
                        cand[j] += t * delta[i];
                    }
                    let keeps_sign = active.iter().all(|&j| cand[j].signum() == theta[j].signum());
                    if keeps_sign {
                        let (_, gc, _) = smooth_dual(&cand, space, shat);
                        let rc: Vec<f64> = active.iter().map(|&j| gc[j] - cand[j].signum() * eps[j]).collect();
                        if sup_norm(&rc) < sup_norm(&r) {
                            theta = cand;
                            improved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            let (f_new, g_new, _) = smooth_dual(&theta, space, shat);
            f = f_new;
            grad = g_new;
        }

        // optimality of the zero coordinates
        let inactive_ok = (0..k).filter(|&j| theta[j] == 0.0).all(|j| grad[j].abs() <= eps[j] + 1e-12);
        if inactive_ok {
            break;
        }
    }

    let ln_z = exact_log_partition(&theta, space);
    let p = trajectory_distribution(&theta, space);
    let mean = expectation(&p, space);
    let slacks: Vec<f64> = (0..k).map(|j| eps[j] - (shat[j] - mean[j]).abs()).collect();
    let violated = box_violations(&mean, shat, eps, 1e-9);
    if !violated.is_empty() {
        return Err(OracleError::Infeasible {
            violated,
            detail: "dual ascent stopped outside the constraint box".into(),
        });
    }
    let lambda: Vec<f64> = theta.iter().map(|t| t.max(0.0)).collect();
    let nu: Vec<f64> = theta.iter().map(|t| (-t).max(0.0)).collect();
    Ok(PrimalSolution {
        kl: kl_divergence(&p, &space.q),
        dual_value: surrogate_objective_ln(&theta, shat, ln_z, eps),
        theta_from_dual: lambda.iter().zip(&nu).map(|(l, n)| l - n).collect(),
        lambda,
        nu,
        eta: ln_z - 1.0,
        theta,
        p,
        slacks,
        iterations,
    })
}

/// Solves `A x = b` for small symmetric positive definite `A`.
fn solve_spd(a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let chol = nalgebra::Cholesky::new(m)?;
    let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
    Some(x.iter().copied().collect())
}

/// Summary of an oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n_trajectories: usize,
    pub horizon: usize,
    pub theta_dual: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: f64,
    pub kl: f64,
    pub g: f64,
    pub duality_gap: f64,
    pub slacks: Vec<f64>,
    pub complementary_slackness: Vec<f64>,
    /// Total variation between the primal solution and `P_θ̂`.
    pub tv_to_exponential_form: f64,
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn oracle_report(
    space: &EnumeratedSpace,
    shat: &[f64],
    eps: &ToleranceVector,
    config: &PrimalConfig,
) -> Result<OracleReport, OracleError> {
    let sol = solve_primal(space, shat, eps, config)?;
    let exp_form = trajectory_distribution(&sol.theta_from_dual, space);
    Ok(OracleReport {
        n_trajectories: space.len(),
        horizon: space.horizon,
        complementary_slackness: sol.complementary_slackness(space, shat, &eps.eps),
        tv_to_exponential_form: total_variation(&sol.p, &exp_form),
        duality_gap: (sol.kl - sol.dual_value).abs(),
        theta_dual: sol.theta_from_dual,
        lambda: sol.lambda,
        nu: sol.nu,
        eta: sol.eta,
        kl: sol.kl,
        g: sol.dual_value,
        slacks: sol.slacks,
    })
}
