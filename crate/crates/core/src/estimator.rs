//! The RE-IRL estimator.
//!
//! Maximizes the surrogate objective
//!
//! ```text
//! g(θ) = θ·ŝ − ln Z(θ) − Σ_k |θ_k| ε_k
//! ```
//!
//! by plain gradient ascent, where `Z(θ)` and its gradient are estimated by
//! importance sampling the demonstrations against a uniform-action base
//! policy. Transition probabilities cancel in the ratio `π_Q(τ) / π*(τ)`, so
//! only the behavior-policy table is needed.
//!
//! Exponentials are evaluated as `exp(l − max l)` and the shift is folded
//! back into `ln Z`; the gradient ratio is shift-free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knnpolicy::{policy_log_likelihood, PolicyTable};
use crate::numeric::{dot, sup_norm};
use crate::trajdata::{empirical_mean_counts, feature_bounds, feature_counts, FeatureBounds, StateVector, TrajectorySet};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no trajectory has a policy likelihood")]
    NoUsableTrajectories,
    #[error("diverged at iteration {iteration}: |θ|∞ = {norm:e} exceeds cap {cap:e}")]
    Divergence { iteration: usize, norm: f64, cap: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Reward weights with the context that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub weights: Vec<f64>,
    pub iteration: usize,
    pub seed: u64,
    pub gamma: f64,
    pub horizon: usize,
}

/// Linear reward `R(s) = Σ_k θ_k s_k`; missing entries contribute zero.
pub fn reward(theta: &ThetaVector, s: &StateVector) -> Result<f64, EstimateError> {
    if theta.weights.len() != s.dim() {
        return Err(EstimateError::DimensionMismatch {
            expected: theta.weights.len(),
            got: s.dim(),
        });
    }
    Ok(theta.weights.iter().enumerate().map(|(k, w)| w * s.value_or_zero(k)).sum())
}

/// How the feature-count tolerances are sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToleranceMode {
    /// `sqrt(−ln(1 − δ) / (2N))` per unit of count range.
    #[default]
    LogComplement,
    /// Two-sided Hoeffding: `sqrt(ln(2 / δ) / (2N))` per unit of count range.
    StandardHoeffding,
}

impl std::str::FromStr for ToleranceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log-complement" => Ok(Self::LogComplement),
            "standard-hoeffding" => Ok(Self::StandardHoeffding),
            other => Err(format!("unknown tolerance mode `{other}` (log-complement | standard-hoeffding)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceVector {
    pub eps: Vec<f64>,
    pub delta: f64,
    pub n: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub mode: ToleranceMode,
}

impl ToleranceVector {
    /// All-zero tolerances (exact feature matching).
    pub fn zeros(k: usize) -> Self {
        Self {
            eps: vec![0.0; k],
            delta: 0.5,
            n: 1,
            gamma: 1.0,
            horizon: 0,
            mode: ToleranceMode::LogComplement,
        }
    }

    pub fn from_values(eps: Vec<f64>) -> Self {
        Self { eps, ..Self::zeros(0) }
    }
}

/// `ε_k = c(N, δ) · G(γ, H) · (u_k − l_k)` with `G = Σ_{t=0}^{H} γ^t`.
pub fn epsilon_bounds(
    n: usize,
    delta: f64,
    gamma: f64,
    horizon: usize,
    bounds: &FeatureBounds,
    mode: ToleranceMode,
) -> Result<ToleranceVector, EstimateError> {
    if n == 0 {
        return Err(EstimateError::Config("N must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EstimateError::Config(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(EstimateError::Config(format!("gamma must be in [0, 1], got {gamma}")));
    }
    let log_term = match mode {
        ToleranceMode::LogComplement => -(1.0 - delta).ln(),
        ToleranceMode::StandardHoeffding => (2.0 / delta).ln(),
    };
    let scale = (log_term / (2.0 * n as f64)).sqrt();
    let eps = (0..bounds.k())
        .map(|k| scale * bounds.count_width(k, gamma, horizon))
        .collect();
    Ok(ToleranceVector {
        eps,
        delta,
        n,
        gamma,
        horizon,
        mode,
    })
}

/// Subgradient sign of `|θ_k|`, taking `+1` at zero.
pub fn subgradient_sign(theta_k: f64) -> f64 {
    if theta_k >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `g(θ)` given `ln Z(θ)`.
pub fn surrogate_objective_ln(theta: &[f64], shat: &[f64], ln_z: f64, eps: &[f64]) -> f64 {
    let penalty: f64 = theta.iter().zip(eps).map(|(t, e)| t.abs() * e).sum();
    dot(theta, shat) - ln_z - penalty
}

/// `g(θ) = Σ θ_k ŝ_k − ln Z − Σ |θ_k| ε_k`.
pub fn surrogate_objective(theta: &[f64], shat: &[f64], z: f64, eps: &ToleranceVector) -> f64 {
    debug_assert!(z > 0.0);
    surrogate_objective_ln(theta, shat, z.ln(), &eps.eps)
}

/// Precomputed per-trajectory terms of the importance-sampling estimator:
/// feature counts, `ln(π_Q(τ) / π*(τ))`, and a sample weight (one for plain
/// demonstrations).
#[derive(Debug, Clone)]
pub struct ImportanceBatch {
    k: usize,
    counts: Vec<f64>,
    log_ratio: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub trajectory: String,
    pub reason: String,
}

/// Partition estimate and the importance-weighted feature mean at one `θ`.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub ln_z: f64,
    /// `Σ_τ r(τ) e^{θ·s^τ} s^τ / Σ_τ r(τ) e^{θ·s^τ}`.
    pub weighted_mean: Vec<f64>,
}

impl ImportanceBatch {
    /// Trajectories without a policy likelihood are left out and reported.
    pub fn from_set(
        set: &TrajectorySet,
        table: &PolicyTable,
        uniform_action_count: usize,
    ) -> Result<(Self, Vec<Exclusion>), EstimateError> {
        if uniform_action_count == 0 {
            return Err(EstimateError::Config("uniform action count must be positive".into()));
        }
        let step_log_q = (1.0 / uniform_action_count as f64).ln();
        let mut counts = Vec::with_capacity(set.len() * set.k);
        let mut log_ratio = Vec::with_capacity(set.len());
        let mut excluded = Vec::new();
        for traj in &set.trajectories {
            match policy_log_likelihood(traj, table) {
                Ok(log_pi) => {
                    // summed per step like the likelihood so a uniform table cancels exactly
                    let log_q: f64 = (0..traj.horizon()).fold(0.0, |acc, _| acc + step_log_q);
                    log_ratio.push(log_q - log_pi);
                    counts.extend(feature_counts(traj, set.gamma));
                }
                Err(err) => {
                    log::warn!("trajectory `{}` excluded: {err}", traj.id);
                    excluded.push(Exclusion {
                        trajectory: traj.id.clone(),
                        reason: err.to_string(),
                    });
                }
            }
        }
        if log_ratio.is_empty() {
            return Err(EstimateError::NoUsableTrajectories);
        }
        let weights = vec![1.0; log_ratio.len()];
        Ok((
            Self {
                k: set.k,
                counts,
                log_ratio,
                weights,
            },
            excluded,
        ))
    }

    /// Batch from explicit parts; `weights` act as sample multiplicities.
    pub fn from_parts(k: usize, counts: Vec<Vec<f64>>, log_ratio: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(counts.len(), log_ratio.len());
        assert_eq!(counts.len(), weights.len());
        assert!(counts.iter().all(|c| c.len() == k));
        Self {
            k,
            counts: counts.into_iter().flatten().collect(),
            log_ratio,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.log_ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_ratio.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn count(&self, i: usize) -> &[f64] {
        &self.counts[i * self.k..(i + 1) * self.k]
    }

    pub fn evaluate(&self, theta: &[f64]) -> BatchEvaluation {
        assert_eq!(theta.len(), self.k);
        let n = self.len();
        let mut logits = Vec::with_capacity(n);
        let mut shift = f64::NEG_INFINITY;
        for i in 0..n {
            let l = self.log_ratio[i] + dot(theta, self.count(i));
            shift = shift.max(l);
            logits.push(l);
        }
        let mut total_weight = 0.0;
        let mut mass = 0.0;
        let mut moment = vec![0.0; self.k];
        for (i, l) in logits.iter().enumerate() {
            let w = self.weights[i] * (l - shift).exp();
            total_weight += self.weights[i];
            mass += w;
            for (m, c) in moment.iter_mut().zip(self.count(i)) {
                *m += w * c;
            }
        }
        BatchEvaluation {
            ln_z: shift + (mass / total_weight).ln(),
            weighted_mean: moment.iter().map(|m| m / mass).collect(),
        }
    }

    /// `Z(θ) ≈ (1/N) Σ_τ (π_Q(τ)/π*(τ)) e^{θ·s^τ}`.
    pub fn partition(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta).ln_z.exp()
    }

    /// `ŝ_k − (1/(N Z)) Σ_τ (π_Q/π*)(τ) s_k^τ e^{θ·s^τ} − a_k ε_k` with `Z` from
    /// the same batch.
    pub fn gradient(&self, theta: &[f64], shat: &[f64], eps: &[f64]) -> Vec<f64> {
        gradient_from_mean(theta, shat, &self.evaluate(theta).weighted_mean, eps)
    }
}

pub(crate) fn gradient_from_mean(theta: &[f64], shat: &[f64], mean: &[f64], eps: &[f64]) -> Vec<f64> {
    (0..theta.len())
        .map(|k| shat[k] - mean[k] - subgradient_sign(theta[k]) * eps[k])
        .collect()
}

/// Importance-sampled partition function with a uniform base policy over
/// `uniform_action_count` actions.
pub fn partition_estimate(
    theta: &ThetaVector,
    set: &TrajectorySet,
    table: &PolicyTable,
    uniform_action_count: usize,
) -> Result<f64, EstimateError> {
    let (batch, _) = ImportanceBatch::from_set(set, table, uniform_action_count)?;
    Ok(batch.partition(&theta.weights))
}

/// Importance-sampled gradient of the surrogate objective.
pub fn gradient_estimate(
    theta: &ThetaVector,
    set: &TrajectorySet,
    table: &PolicyTable,
    shat: &[f64],
    eps: &ToleranceVector,
    uniform_action_count: usize,
) -> Result<Vec<f64>, EstimateError> {
    let (batch, _) = ImportanceBatch::from_set(set, table, uniform_action_count)?;
    Ok(batch.gradient(&theta.weights, shat, &eps.eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub uniform_action_count: usize,
    pub tolerance_mode: ToleranceMode,
    /// Abort once `|θ|∞` exceeds this.
    pub theta_cap: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            max_iters: 50_000,
            grad_tol: 1e-4,
            seed: 0,
            uniform_action_count: 7,
            tolerance_mode: ToleranceMode::LogComplement,
            theta_cap: 1e4,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(EstimateError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(EstimateError::Config("max_iters must be at least 1".into()));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return Err(EstimateError::Config(format!("grad_tol must be >= 0, got {}", self.grad_tol)));
        }
        if self.uniform_action_count == 0 {
            return Err(EstimateError::Config("uniform action count must be positive".into()));
        }
        if self.theta_cap.is_nan() || self.theta_cap <= 0.0 {
            return Err(EstimateError::Config("theta cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentStep {
    pub theta: Vec<f64>,
    pub grad_norm: f64,
    pub ln_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentTrace {
    pub steps: Vec<AscentStep>,
    pub theta: ThetaVector,
    pub converged: bool,
    /// Sup-norm of the estimated gradient at the returned `θ`.
    pub final_grad_norm: f64,
    pub shat: Vec<f64>,
    pub tolerance: ToleranceVector,
    pub n_used: usize,
    pub excluded: Vec<Exclusion>,
}

/// Gradient ascent from `θ = 0` on a demonstration set. Stops when the
/// estimated gradient sup-norm reaches `grad_tol` or after `max_iters`
/// gradient evaluations.
pub fn ascend(
    set: &TrajectorySet,
    table: &PolicyTable,
    config: &AscentConfig,
    delta: f64,
) -> Result<AscentTrace, EstimateError> {
    config.validate()?;
    let shat = empirical_mean_counts(set);
    let bounds = feature_bounds(set);
    let tolerance = epsilon_bounds(set.len(), delta, set.gamma, set.horizon, &bounds, config.tolerance_mode)?;
    let (batch, excluded) = ImportanceBatch::from_set(set, table, config.uniform_action_count)?;
    let mut trace = ascend_batch(&batch, &shat, tolerance, config)?;
    trace.theta.gamma = set.gamma;
    trace.theta.horizon = set.horizon;
    trace.excluded = excluded;
    Ok(trace)
}

/// The ascent loop on a prepared batch.
pub fn ascend_batch(
    batch: &ImportanceBatch,
    shat: &[f64],
    tolerance: ToleranceVector,
    config: &AscentConfig,
) -> Result<AscentTrace, EstimateError> {
    config.validate()?;
    let k = batch.k();
    if shat.len() != k || tolerance.eps.len() != k {
        return Err(EstimateError::DimensionMismatch {
            expected: k,
            got: shat.len().min(tolerance.eps.len()),
        });
    }
    let mut theta = vec![0.0; k];
    let mut steps = Vec::new();
    let mut converged = false;
    for iteration in 0..config.max_iters {
        let eval = batch.evaluate(&theta);
        let grad = gradient_from_mean(&theta, shat, &eval.weighted_mean, &tolerance.eps);
        let grad_norm = sup_norm(&grad);
        if !grad_norm.is_finite() {
            return Err(EstimateError::NonFinite("gradient"));
        }
        steps.push(AscentStep {
            theta: theta.clone(),
            grad_norm,
            ln_z: eval.ln_z,
        });
        if grad_norm <= config.grad_tol {
            converged = true;
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += config.alpha * g;
        }
        let norm = sup_norm(&theta);
        if norm > config.theta_cap {
            return Err(EstimateError::Divergence {
                iteration,
                norm,
                cap: config.theta_cap,
            });
        }
    }
    let final_grad_norm = if converged {
        steps.last().map_or(0.0, |s| s.grad_norm)
    } else {
        sup_norm(&batch.gradient(&theta, shat, &tolerance.eps))
    };
    let iteration = steps.len();
    Ok(AscentTrace {
        steps,
        theta: ThetaVector {
            weights: theta,
            iteration,
            seed: config.seed,
            gamma: tolerance.gamma,
            horizon: tolerance.horizon,
        },
        converged,
        final_grad_norm,
        shat: shat.to_vec(),
        tolerance,
        n_used: batch.len(),
        excluded: Vec::new(),
    })
}

/// The output record of one estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub theta: Vec<f64>,
    pub feature_names: Vec<String>,
    pub k: usize,
    pub horizon: usize,
    /// Trajectories used.
    pub n: usize,
    pub n_excluded: usize,
    pub gamma: f64,
    pub delta: f64,
    pub tolerance_mode: ToleranceMode,
    pub eps: Vec<f64>,
    pub shat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub alpha: f64,
    pub grad_tol: f64,
    pub uniform_actions: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ThetaRecord {
    pub fn new(trace: &AscentTrace, config: &AscentConfig, feature_names: Vec<String>, config_hash: String) -> Self {
        Self {
            theta: trace.theta.weights.clone(),
            k: trace.theta.weights.len(),
            feature_names,
            horizon: trace.theta.horizon,
            n: trace.n_used,
            n_excluded: trace.excluded.len(),
            gamma: trace.theta.gamma,
            delta: trace.tolerance.delta,
            tolerance_mode: trace.tolerance.mode,
            eps: trace.tolerance.eps.clone(),
            shat: trace.shat.clone(),
            iterations: trace.theta.iteration,
            converged: trace.converged,
            final_grad_norm: trace.final_grad_norm,
            alpha: config.alpha,
            grad_tol: config.grad_tol,
            uniform_actions: config.uniform_action_count,
            seed: config.seed,
            config_hash,
        }
    }
}
