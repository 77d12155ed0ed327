//! Synthetic ground truth.
//!
//! Builds small random MDPs and draws demonstrations exactly from the
//! exponential-family law `P_θ*(τ) ∝ Q(τ) e^{θ*·s^τ}` by inverse-CDF sampling
//! over the enumerated trajectory space. The sampler is a construction for
//! testing; real demonstrations need not come from such a recipe.
//!
//! Under a stochastic kernel `P_θ` tilts the transitions as well as the
//! actions, so the step policy times the kernel reproduces `P_θ` only for
//! deterministic transitions. The default style is therefore the
//! deterministic cycle.
//!
//! Action index `j` of the MDP is emitted as label `j − 3`, so at most seven
//! actions are supported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knnpolicy::{ActionProbs, PolicyEntry, PolicySource, PolicyTable};
use crate::oracle::{count_paths, enumerate_trajectories, trajectory_distribution, EnumeratedSpace, FiniteMdp, OracleError};
use crate::trajdata::{ActionLabel, PanelDataset, PanelRow, StateVector, TrajDataError, Trajectory, TrajectorySet};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Data(#[from] TrajDataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionStyle {
    /// Each `(s, a)` row drawn from a flat Dirichlet.
    RandomDirichlet,
    /// `s' = (s + 1 + a) mod n_states` with probability one.
    #[default]
    DeterministicCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub k: usize,
    pub horizon: usize,
    /// Number of demonstrations.
    pub n: usize,
    pub gamma: f64,
    pub theta_star: Vec<f64>,
    pub seed: u64,
    pub transition_style: TransitionStyle,
    /// Extra draws added to the emitted panel only, to enlarge the neighbor
    /// pool of a KNN policy estimate.
    pub n_pool_extra: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 3,
            k: 3,
            horizon: 4,
            n: 5000,
            gamma: 1.0,
            theta_star: vec![1.0, -0.5, 0.5],
            seed: 0,
            transition_style: TransitionStyle::DeterministicCycle,
            n_pool_extra: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self, cap: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Spec(m));
        if self.n_states == 0 {
            return bad("n_states must be at least 1".into());
        }
        if !(1..=ActionLabel::COUNT).contains(&self.n_actions) {
            return bad(format!("n_actions must be in 1..=7, got {}", self.n_actions));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if self.theta_star.len() != self.k || self.theta_star.iter().any(|t| !t.is_finite()) {
            return bad(format!("theta_star must hold {} finite values", self.k));
        }
        // worst case: every (s, a) reaches every state
        let worst = ((self.n_states * self.n_actions) as f64).powi(self.horizon as i32);
        if worst > cap as f64 && self.transition_style == TransitionStyle::RandomDirichlet {
            return Err(OracleError::CapExceeded { estimated: worst, cap }.into());
        }
        Ok(())
    }
}

/// Sub-seed for a named stream of a root seed.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn make_mdp(spec: &GeneratorSpec) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "mdp"));
    let n = spec.n_states;
    let state_features = (0..n)
        .map(|_| (0..spec.k).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let transition = (0..n)
        .map(|s| {
            (0..spec.n_actions)
                .map(|a| match spec.transition_style {
                    TransitionStyle::RandomDirichlet => {
                        let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
                        let total: f64 = draws.iter().sum();
                        draws.iter().map(|d| d / total).collect()
                    }
                    TransitionStyle::DeterministicCycle => {
                        let mut row = vec![0.0; n];
                        row[(s + 1 + a) % n] = 1.0;
                        row
                    }
                })
                .collect()
        })
        .collect();
    FiniteMdp {
        n_states: n,
        n_actions: spec.n_actions,
        transition,
        initial_state: 0,
        state_features,
    }
}

/// `π*(a | s, t)` implied by `P_θ`, indexed `[t][s][a]`, from the backward
/// recursion `V_H(s) = e^{γ^H θ·φ(s)}`,
/// `V_t(s) = e^{γ^t θ·φ(s)} Σ_a (1/|A|) Σ_{s'} p(s'|s,a) V_{t+1}(s')`.
pub fn exact_policy(mdp: &FiniteMdp, theta: &[f64], horizon: usize, gamma: f64) -> Vec<Vec<Vec<f64>>> {
    let reward = |s: usize, t: usize| -> f64 {
        gamma.powi(t as i32) * theta.iter().zip(&mdp.state_features[s]).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut log_v: Vec<f64> = (0..mdp.n_states).map(|s| reward(s, horizon)).collect();
    let mut policy = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let mut step = Vec::with_capacity(mdp.n_states);
        let mut next_v = Vec::with_capacity(mdp.n_states);
        for s in 0..mdp.n_states {
            // ln Σ_{s'} p(s'|s,a) V_{t+1}(s') per action
            let w: Vec<f64> = mdp.transition[s]
                .iter()
                .map(|row| {
                    let m = row
                        .iter()
                        .zip(&log_v)
                        .filter(|(p, _)| **p > 0.0)
                        .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
                    let sum: f64 = row.iter().zip(&log_v).filter(|(p, _)| **p > 0.0).map(|(p, v)| p * (v - m).exp()).sum();
                    m + sum.ln()
                })
                .collect();
            let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = w.iter().map(|x| (x - m).exp()).sum();
            step.push(w.iter().map(|x| (x - m).exp() / total).collect());
            next_v.push(reward(s, t) + (1.0 / mdp.n_actions as f64).ln() + m + total.ln());
        }
        policy[t] = step;
        log_v = next_v;
    }
    policy
}

/// Demonstrations with their exact behavior policy.
#[derive(Debug, Clone)]
pub struct ExpertSample {
    pub set: TrajectorySet,
    /// Exact `π*` at every step of every demonstration, unsmoothed.
    pub policy: PolicyTable,
    /// Index of each draw in the enumerated space.
    pub draws: Vec<usize>,
}

fn sample_indices(p: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for v in p {
        acc += v;
        cdf.push(acc);
    }
    let last = p.len() - 1;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

fn draw_trajectory(mdp: &FiniteMdp, space: &EnumeratedSpace, l: usize, entity: String) -> Trajectory {
    Trajectory {
        id: format!("{entity}@0"),
        start_period: 0,
        states: space
            .states(l)
            .iter()
            .map(|&s| StateVector::new(mdp.state_features[s as usize].clone()))
            .collect(),
        actions: space
            .actions(l)
            .iter()
            .map(|&a| ActionLabel::from_index(a as usize).expect("at most seven actions"))
            .collect(),
        entity,
    }
}

fn policy_entries(
    space: &EnumeratedSpace,
    l: usize,
    entity: &str,
    policy: &[Vec<Vec<f64>>],
) -> Vec<PolicyEntry> {
    let states = space.states(l);
    (0..space.horizon).map(|t| {
        let mut probs: ActionProbs = [0.0; ActionLabel::COUNT];
        probs[..policy[t][states[t] as usize].len()].copy_from_slice(&policy[t][states[t] as usize]);
        PolicyEntry {
            entity: entity.to_string(),
            period: t as i64,
            probs: Some(probs),
            n_valid_neighbors: 0,
            excluded: false,
            neighbors: None,
        }
    })
    .collect()
}

fn entity_name(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:07}")
}

/// `n` i.i.d. draws from `P_θ` on the MDP, entities `d0000000, …`, periods
/// `0..=H`, plus the exact policy table of every visited step.
pub fn sample_expert_set(
    mdp: &FiniteMdp,
    theta_star: &[f64],
    n: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
    cap: usize,
) -> Result<ExpertSample, SimError> {
    let space = enumerate_trajectories(mdp, horizon, gamma, cap)?;
    sample_from_space(mdp, &space, theta_star, n, seed, "d")
}

fn sample_from_space(
    mdp: &FiniteMdp,
    space: &EnumeratedSpace,
    theta_star: &[f64],
    n: usize,
    seed: u64,
    prefix: &str,
) -> Result<ExpertSample, SimError> {
    if n == 0 {
        return Err(SimError::Spec("n must be at least 1".into()));
    }
    if theta_star.len() != mdp.k() {
        return Err(SimError::Spec(format!("theta_star has {} entries, MDP has {} features", theta_star.len(), mdp.k())));
    }
    let p = trajectory_distribution(theta_star, space);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("draws/{prefix}")));
    let draws = sample_indices(&p, n, &mut rng);
    let pi = exact_policy(mdp, theta_star, space.horizon, space.gamma);
    let mut trajectories = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n * space.horizon);
    for (i, &l) in draws.iter().enumerate() {
        let entity = entity_name(prefix, i);
        entries.extend(policy_entries(space, l, &entity, &pi));
        trajectories.push(draw_trajectory(mdp, space, l, entity));
    }
    let set = TrajectorySet::new(mdp.k(), space.gamma, trajectories)?;
    let policy = PolicyTable::new(PolicySource::Exact, 0.0, 0, 0, 0.0).with_entries(entries);
    Ok(ExpertSample { set, policy, draws })
}

/// Everything `simulate` emits.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub mdp: FiniteMdp,
    pub expert: ExpertSample,
    /// Demonstrations plus the extra pool draws as a discretized panel.
    pub panel: PanelDataset,
}

pub fn simulate(spec: &GeneratorSpec, cap: usize) -> Result<SimulatedData, SimError> {
    spec.validate(cap)?;
    let mdp = make_mdp(spec);
    let estimated = count_paths(&mdp, spec.horizon);
    if estimated > cap as f64 {
        return Err(OracleError::CapExceeded { estimated, cap }.into());
    }
    let space = enumerate_trajectories(&mdp, spec.horizon, spec.gamma, cap)?;
    let expert = sample_from_space(&mdp, &space, &spec.theta_star, spec.n, spec.seed, "d")?;
    let mut rows = trajectory_rows(&expert.set);
    if spec.n_pool_extra > 0 {
        let extra = sample_from_space(&mdp, &space, &spec.theta_star, spec.n_pool_extra, spec.seed, "p")?;
        rows.extend(trajectory_rows(&extra.set));
    }
    let feature_names = (0..spec.k).map(|j| format!("x{j}")).collect();
    let panel = PanelDataset::new(feature_names, rows)?;
    Ok(SimulatedData { mdp, expert, panel })
}

fn trajectory_rows(set: &TrajectorySet) -> Vec<PanelRow> {
    set.trajectories
        .iter()
        .flat_map(|traj| {
            traj.states.iter().enumerate().map(move |(t, s)| {
                let action = traj.actions.get(t).copied();
                PanelRow {
                    entity: traj.entity.clone(),
                    period: traj.period_at(t),
                    features: s.clone(),
                    raw_action: action.map(|a| f64::from(a.value())),
                    action,
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DEFAULT_ENUMERATION_CAP;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            n_states: 3,
            n_actions: 2,
            k: 2,
            horizon: 2,
            n: 100,
            theta_star: vec![0.8, -0.6],
            seed: 11,
            transition_style: TransitionStyle::RandomDirichlet,
            ..Default::default()
        }
    }

    #[test]
    fn mdp_is_seed_deterministic() {
        let spec = small_spec();
        let a = serde_json::to_string(&make_mdp(&spec)).unwrap();
        let b = serde_json::to_string(&make_mdp(&spec)).unwrap();
        assert_eq!(a, b);
        let other = make_mdp(&GeneratorSpec { seed: 12, ..spec });
        assert_ne!(serde_json::to_string(&other).unwrap(), a);
    }

    #[test]
    fn transition_rows_are_distributions() {
        let mdp = make_mdp(&GeneratorSpec {
            n_states: 6,
            n_actions: 4,
            transition_style: TransitionStyle::RandomDirichlet,
            ..small_spec()
        });
        mdp.validate().unwrap();
        for row in mdp.transition.iter().flatten() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let cyc = make_mdp(&GeneratorSpec {
            transition_style: TransitionStyle::DeterministicCycle,
            ..small_spec()
        });
        for (s, block) in cyc.transition.iter().enumerate() {
            for (a, row) in block.iter().enumerate() {
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row[(s + 1 + a) % 3], 1.0);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GeneratorSpec { n_actions: 8, ..small_spec() }.validate(1000).is_err());
        assert!(GeneratorSpec { theta_star: vec![1.0], ..small_spec() }.validate(1000).is_err());
        assert!(GeneratorSpec { n: 0, ..small_spec() }.validate(1000).is_err());
        assert!(matches!(
            GeneratorSpec { horizon: 10, transition_style: TransitionStyle::RandomDirichlet, ..small_spec() }.validate(1000),
            Err(SimError::Oracle(OracleError::CapExceeded { .. }))
        ));
        assert!(GeneratorSpec::default().validate(DEFAULT_ENUMERATION_CAP).is_ok());
    }

    #[test]
    fn single_draw() {
        let spec = small_spec();
        let mdp = make_mdp(&spec);
        let s = sample_expert_set(&mdp, &spec.theta_star, 1, 3, 1.0, 4, 10_000).unwrap();
        assert_eq!(s.set.len(), 1);
        assert_eq!(s.set.horizon, 3);
        assert_eq!(s.policy.len(), 3);
    }

    #[test]
    fn exact_policy_reproduces_the_law_under_deterministic_moves() {
        let spec = GeneratorSpec {
            n_states: 4,
            n_actions: 3,
            gamma: 0.9,
            transition_style: TransitionStyle::DeterministicCycle,
            ..small_spec()
        };
        let mdp = make_mdp(&spec);
        let h = 3;
        let space = enumerate_trajectories(&mdp, h, spec.gamma, 100_000).unwrap();
        let p = trajectory_distribution(&spec.theta_star, &space);
        let pi = exact_policy(&mdp, &spec.theta_star, h, spec.gamma);
        for (l, &pl) in p.iter().enumerate() {
            let (st, ac) = (space.states(l), space.actions(l));
            let mut prob = 1.0;
            for t in 0..h {
                let (s, a) = (st[t] as usize, ac[t] as usize);
                prob *= pi[t][s][a] * mdp.transition[s][a][st[t + 1] as usize];
            }
            assert!((prob - pl).abs() < 1e-10, "path {l}: {prob} vs {pl}");
        }
    }

    #[test]
    fn exact_policy_is_the_action_conditional() {
        let spec = GeneratorSpec {
            n_states: 3,
            n_actions: 3,
            gamma: 0.9,
            transition_style: TransitionStyle::RandomDirichlet,
            ..small_spec()
        };
        let mdp = make_mdp(&spec);
        let h = 3;
        let space = enumerate_trajectories(&mdp, h, spec.gamma, 100_000).unwrap();
        let p = trajectory_distribution(&spec.theta_star, &space);
        let pi = exact_policy(&mdp, &spec.theta_star, h, spec.gamma);
        for t in 0..h {
            let mut joint = vec![vec![0.0; 3]; 3];
            for l in 0..space.len() {
                joint[space.states(l)[t] as usize][space.actions(l)[t] as usize] += p[l];
            }
            for s in 0..3 {
                let total: f64 = joint[s].iter().sum();
                if total < 1e-12 {
                    continue;
                }
                for a in 0..3 {
                    assert!((joint[s][a] / total - pi[t][s][a]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn base_law_passes_chi_square() {
        let spec = small_spec();
        let mdp = make_mdp(&spec);
        let space = enumerate_trajectories(&mdp, 2, 1.0, 1000).unwrap();
        let n = 100_000;
        let s = sample_from_space(&mdp, &space, &[0.0, 0.0], n, 5, "d").unwrap();
        let mut freq = vec![0usize; space.len()];
        for &d in &s.draws {
            freq[d] += 1;
        }
        let stat: f64 = freq
            .iter()
            .zip(&space.q)
            .map(|(&o, q)| {
                let e = q * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new((space.len() - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi-square {stat} above {crit}");
    }

    #[test]
    fn frequencies_approach_the_law() {
        let spec = GeneratorSpec {
            n_states: 3,
            n_actions: 3,
            transition_style: TransitionStyle::RandomDirichlet,
            ..small_spec()
        };
        let mdp = make_mdp(&spec);
        let space = enumerate_trajectories(&mdp, 2, 1.0, 1000).unwrap();
        assert!(space.len() <= 200);
        let n = 100_000;
        let s = sample_from_space(&mdp, &space, &spec.theta_star, n, 9, "d").unwrap();
        let p = trajectory_distribution(&spec.theta_star, &space);
        let mut freq = vec![0.0; space.len()];
        for &d in &s.draws {
            freq[d] += 1.0 / n as f64;
        }
        let tv = 0.5 * freq.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 0.01, "tv {tv}");
    }

    #[test]
    fn exact_table_covers_demonstrations() {
        let spec = GeneratorSpec { n: 50, n_pool_extra: 30, ..small_spec() };
        let sim = simulate(&spec, 10_000).unwrap();
        assert_eq!(sim.expert.set.len(), 50);
        assert_eq!(sim.panel.rows.len(), 80 * 3);
        assert!(sim.panel.is_discretized());
        for traj in &sim.expert.set.trajectories {
            let l = crate::knnpolicy::policy_likelihood(traj, &sim.expert.policy).unwrap();
            assert!(l > 0.0);
        }
        let again = simulate(&spec, 10_000).unwrap();
        assert_eq!(again.expert.set, sim.expert.set);
        assert_eq!(again.panel, sim.panel);
    }

    #[test]
    fn disjoint_seeds_look_independent() {
        let spec = small_spec();
        let mdp = make_mdp(&spec);
        let means: Vec<(f64, f64)> = (0..40)
            .map(|seed| {
                let s = sample_expert_set(&mdp, &spec.theta_star, 200, 2, 1.0, seed, 1000).unwrap();
                let m = crate::trajdata::empirical_mean_counts(&s.set);
                (m[0], m[1])
            })
            .collect();
        let lag: Vec<(f64, f64)> = means.windows(2).map(|w| (w[0].0, w[1].0)).collect();
        let n = lag.len() as f64;
        let (mx, my) = (lag.iter().map(|p| p.0).sum::<f64>() / n, lag.iter().map(|p| p.1).sum::<f64>() / n);
        let cov: f64 = lag.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
        let vx: f64 = lag.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let vy: f64 = lag.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
        let r = cov / (vx * vy).sqrt();
        assert!(r.abs() < 0.5, "lag correlation {r}");
    }
}
