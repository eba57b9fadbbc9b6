//! The type-level bandit: arms are node types. A multiplicative-weights
//! policy turns per-type rewards into a distribution, the distribution splits
//! a global sampling budget across types, and each type's sampled
//! representatives form a context vector fused back into all its nodes.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{HeteroGraph, TypeId};
use crate::kernel::{KernelError, ParamId, ParamStore, Tape, Tensor, Var};

/// Guard in the reward normalization denominator.
pub const REWARD_EPS: f64 = 1e-8;
/// Probability of a uniform round in epsilon-greedy mode.
pub const EPSILON_GREEDY_RATE: f64 = 0.1;
/// Initial context strength `β_k`.
pub const INITIAL_STRENGTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("step size needs N >= 2, K >= 2 and T_tot >= 1 (got N={n}, K={k}, T_tot={t_tot})")]
    StepSize { n: usize, k: usize, t_tot: usize },
    #[error("p_min {p_min} must lie in [0, 1/K) for K={k}")]
    Floor { p_min: f64, k: usize },
    #[error("weight {index} is {value}; weights must be positive and finite")]
    Weight { index: usize, value: f64 },
    #[error("arm {index} has probability {value}; the bonus term needs p > 0")]
    ZeroProbability { index: usize, value: f64 },
    #[error("{what} has length {found}, expected {expected}")]
    Length { what: &'static str, found: usize, expected: usize },
    #[error("budget {budget} exceeds pool of {pool}")]
    Budget { budget: usize, pool: usize },
    #[error("context requested from an empty sample")]
    EmptySample,
}

/// `η = (p_min/2)·sqrt(ln N / (K·T_tot))`.
pub fn step_size(p_min: f64, n: usize, k: usize, t_tot: usize) -> Result<f64, BanditError> {
    if n < 2 || k < 2 || t_tot < 1 {
        return Err(BanditError::StepSize { n, k, t_tot });
    }
    Ok(0.5 * p_min * ((n as f64).ln() / (k * t_tot) as f64).sqrt())
}

fn check_floor(p_min: f64, k: usize) -> Result<(), BanditError> {
    if !(0.0..1.0 / k as f64).contains(&p_min) {
        return Err(BanditError::Floor { p_min, k });
    }
    Ok(())
}

/// `p_k = (1 − K·p_min)·w_k/Σw + p_min`.
pub fn policy_distribution(weights: &[f64], p_min: f64) -> Result<Vec<f64>, BanditError> {
    let k = weights.len();
    check_floor(p_min, k)?;
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(BanditError::Weight { index, value });
    }
    let total: f64 = weights.iter().sum();
    let spread = 1.0 - k as f64 * p_min;
    Ok(weights.iter().map(|w| spread * w / total + p_min).collect())
}

/// Mean row norm of each type's embeddings; an empty type scores 0.
pub fn raw_rewards(embeddings: &[&Tensor]) -> Vec<f64> {
    embeddings
        .iter()
        .map(|h| {
            if h.rows() == 0 {
                0.0
            } else {
                h.row_norms().iter().sum::<f64>() / h.rows() as f64
            }
        })
        .collect()
}

/// `r̄_k = r̃_k / (Σ_j r̃_j + ε)`.
pub fn normalize_rewards(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum::<f64>() + REWARD_EPS;
    raw.iter().map(|r| r / total).collect()
}

/// Normalized reward proxy from final-layer embeddings, one block per type.
pub fn reward_proxy(embeddings: &[&Tensor]) -> Vec<f64> {
    normalize_rewards(&raw_rewards(embeddings))
}

/// `w'_k ∝ w_k·exp(η·(r̄_k + 1/p_k))`, renormalized to sum to 1.
pub fn update_weights(weights: &[f64], rewards: &[f64], probs: &[f64], eta: f64) -> Result<Vec<f64>, BanditError> {
    let k = weights.len();
    for (what, v) in [("rewards", rewards), ("probabilities", probs)] {
        if v.len() != k {
            return Err(BanditError::Length { what, found: v.len(), expected: k });
        }
    }
    if let Some((index, &value)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(BanditError::ZeroProbability { index, value });
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| weights[i] * (eta * (rewards[i] + 1.0 / probs[i])).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let out: Vec<f64> = raw.iter().map(|w| w / total).collect();
    if let Some((index, &value)) = out.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(BanditError::Weight { index, value });
    }
    Ok(out)
}

/// `B_k = min(|V_k|, max(0, round(K·N·p_k)))`, rounding half away from zero.
pub fn allocate_budget(probs: &[f64], base_budget: usize, sizes: &[usize]) -> Vec<usize> {
    let total = (probs.len() * base_budget) as f64;
    probs
        .iter()
        .zip(sizes)
        .map(|(p, &size)| ((total * p).round().max(0.0) as usize).min(size))
        .collect()
}

/// How representatives are drawn inside one type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WithinType {
    /// Without replacement, inclusion weighted by representation norm.
    Norm,
    Uniform,
}

/// Draws `budget` distinct indices from `0..norms.len()`, returned ascending.
///
/// Norm mode uses exponential keys `−ln(u)/‖h‖`; zero-norm nodes only fill
/// the sample once every positive-norm node is taken, and all-zero norms
/// reduce to uniform sampling.
pub fn sample_representatives<R: Rng + ?Sized>(
    norms: &[f64],
    budget: usize,
    mode: WithinType,
    rng: &mut R,
) -> Result<Vec<usize>, BanditError> {
    let pool = norms.len();
    if budget > pool {
        return Err(BanditError::Budget { budget, pool });
    }
    if budget == pool {
        return Ok((0..pool).collect());
    }
    let all_zero = norms.iter().all(|&n| n <= 0.0);
    let mut picked = match mode {
        WithinType::Uniform => index::sample(rng, pool, budget).into_vec(),
        WithinType::Norm if all_zero => index::sample(rng, pool, budget).into_vec(),
        WithinType::Norm => {
            let mut keys: Vec<(f64, f64, usize)> = norms
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let u: f64 = rng.random();
                    let tie: f64 = rng.random();
                    let key = if n > 0.0 { -(1.0 - u).ln() / n } else { f64::INFINITY };
                    (key, tie, i)
                })
                .collect();
            keys.select_nth_unstable_by(budget, |a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            keys[..budget].iter().map(|k| k.2).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// How the round's budget is split across types and drawn within them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Budget by the policy, norm-weighted draws.
    Adaptive,
    /// Budget by the policy, uniform draws.
    Uniform,
    /// Budget proportional to type size, uniform draws.
    Proportional,
    /// Uniform split with probability 0.1, otherwise everything to the type
    /// with the highest last reward; norm-weighted draws.
    EpsilonGreedy,
}

impl SamplingMode {
    pub fn within_type(self) -> WithinType {
        match self {
            Self::Adaptive | Self::EpsilonGreedy => WithinType::Norm,
            Self::Uniform | Self::Proportional => WithinType::Uniform,
        }
    }
}

/// Mutable state of the bandit across one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
    pub p_min: f64,
    pub eta: f64,
    pub base_budget: usize,
    pub updates: usize,
    /// Normalized reward of the latest update.
    pub last_reward: Option<Vec<f64>>,
}

impl PolicyState {
    /// Uniform weights `1/K`.
    pub fn new(k: usize, p_min: f64, base_budget: usize, rounds: usize) -> Result<Self, BanditError> {
        let eta = step_size(p_min, base_budget, k, rounds)?;
        let weights = vec![1.0 / k as f64; k];
        let probs = policy_distribution(&weights, p_min)?;
        Ok(Self { weights, probs, p_min, eta, base_budget, updates: 0, last_reward: None })
    }

    pub fn num_arms(&self) -> usize {
        self.weights.len()
    }

    pub fn update(&mut self, rewards: &[f64]) -> Result<(), BanditError> {
        self.weights = update_weights(&self.weights, rewards, &self.probs, self.eta)?;
        self.probs = policy_distribution(&self.weights, self.p_min)?;
        self.last_reward = Some(rewards.to_vec());
        self.updates += 1;
        Ok(())
    }

    /// `α_k = 0.5 + p_k`.
    pub fn scaling(&self) -> Vec<f64> {
        self.probs.iter().map(|p| 0.5 + p).collect()
    }

    pub fn budgets<R: Rng + ?Sized>(&self, mode: SamplingMode, sizes: &[usize], rng: &mut R) -> Vec<usize> {
        let k = self.num_arms();
        match mode {
            SamplingMode::Adaptive | SamplingMode::Uniform => allocate_budget(&self.probs, self.base_budget, sizes),
            SamplingMode::Proportional => {
                let total: usize = sizes.iter().sum();
                let share: Vec<f64> = sizes.iter().map(|&s| s as f64 / total.max(1) as f64).collect();
                allocate_budget(&share, self.base_budget, sizes)
            }
            SamplingMode::EpsilonGreedy => {
                let explore = rng.random::<f64>() < EPSILON_GREEDY_RATE;
                match (&self.last_reward, explore) {
                    (Some(r), false) => {
                        let best = argmax(r);
                        (0..k)
                            .map(|i| if i == best { (k * self.base_budget).min(sizes[i]) } else { 0 })
                            .collect()
                    }
                    _ => sizes.iter().map(|&s| s.min(self.base_budget)).collect(),
                }
            }
        }
    }
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Context-fusion gates `W_s` (2d × d), strengths `β_k` and scale vectors `γ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams {
    pub gate_weight: Vec<ParamId>,
    pub strength: Vec<ParamId>,
    pub scale: Vec<ParamId>,
}

impl ContextParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, graph: &HeteroGraph, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self { gate_weight: Vec::new(), strength: Vec::new(), scale: Vec::new() };
        for t in graph.type_ids() {
            let name = &graph.node_type(t).name;
            p.gate_weight.push(store.add_uniform(format!("context.{name}.gate"), 2 * hidden, hidden, rng));
            p.strength.push(store.add_filled(format!("context.{name}.strength"), 1, 1, INITIAL_STRENGTH));
            p.scale.push(store.add_filled(format!("context.{name}.scale"), 1, hidden, 1.0));
        }
        p
    }
}

/// Mean of the sampled rows of `h`, as `1 × d`.
pub fn type_context(tape: &mut Tape, h: Var, sample: &[usize]) -> Result<Var, crate::Error> {
    if sample.is_empty() {
        return Err(BanditError::EmptySample.into());
    }
    let rows = tape.gather_rows(h, sample.to_vec())?;
    Ok(tape.segment_mean(rows, vec![0, sample.len()])?)
}

/// `ĥ = h + β·σ([h ∥ c] W_s) ⊙ (c − h)`; the identity (same handle) when the
/// type received no context.
pub fn fuse_context(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ContextParams,
    ty: TypeId,
    h: Var,
    context: Option<Var>,
) -> Result<Var, KernelError> {
    let Some(c) = context else {
        return Ok(h);
    };
    let n = tape.shape(h).0;
    let c = tape.gather_rows(c, vec![0; n])?;
    let w = tape.param(store, params.gate_weight[ty.0]);
    let beta = tape.param(store, params.strength[ty.0]);
    let joined = tape.concat_cols(&[h, c])?;
    let logits = tape.matmul(joined, w)?;
    let gate = tape.sigmoid(logits)?;
    let diff = tape.sub(c, h)?;
    let moved = tape.mul(gate, diff)?;
    let moved = tape.scale_by(moved, beta)?;
    tape.add(h, moved)
}

/// `z = Dropout(ĥ ⊙ γ_k · α_k)`.
#[allow(clippy::too_many_arguments)]
pub fn apply_policy_scaling<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ContextParams,
    ty: TypeId,
    h: Var,
    alpha: f64,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var, KernelError> {
    let gamma = tape.param(store, params.scale[ty.0]);
    let scaled = tape.mul(h, gamma)?;
    let scaled = tape.scale(scaled, alpha)?;
    tape.dropout(scaled, dropout, train, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_size_scaling() {
        let base = step_size(0.1, 20, 3, 60).unwrap();
        assert!((step_size(0.1, 20, 3, 240).unwrap() - base / 2.0).abs() < 1e-15);
        let ratio = step_size(0.1, 20, 4, 60).unwrap() / base;
        assert!((ratio - (3.0f64 / 4.0).sqrt()).abs() < 1e-14);
        assert!(step_size(0.1, 1, 3, 60).is_err());
    }

    #[test]
    fn distribution_examples() {
        let p = policy_distribution(&[1.0, 1.0, 1.0], 0.1).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = policy_distribution(&[2.0, 1.0, 1.0], 0.1).unwrap();
        for (a, b) in p.iter().zip([0.45, 0.275, 0.275]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = policy_distribution(&[3.0, 1.0], 0.0).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        assert!(policy_distribution(&[1.0, 1.0, 1.0], 1.0 / 3.0).is_err());
        assert!(policy_distribution(&[1.0, 0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn reward_examples() {
        let zero = Tensor::zeros(3, 2);
        assert_eq!(reward_proxy(&[&zero, &zero]), vec![0.0, 0.0]);
        let r = normalize_rewards(&[2.0, 3.0, 5.0]);
        for (a, b) in r.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-8);
        }
        let empty = Tensor::zeros(0, 2);
        assert_eq!(raw_rewards(&[&empty]), vec![0.0]);
    }

    #[test]
    fn budget_examples() {
        assert_eq!(allocate_budget(&[0.5, 0.3, 0.2], 20, &[100, 100, 100]), vec![30, 18, 12]);
        assert_eq!(allocate_budget(&[0.5, 0.3, 0.2], 20, &[100, 100, 10]), vec![30, 18, 10]);
        assert_eq!(allocate_budget(&[0.99, 0.01], 10, &[100, 100]), vec![20, 0]);
        // 2.5 rounds away from zero.
        assert_eq!(allocate_budget(&[0.125, 0.875], 10, &[100, 100]), vec![3, 18]);
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let norms = [1.0, 2.0, 0.5];
        for mode in [WithinType::Norm, WithinType::Uniform] {
            assert_eq!(sample_representatives(&norms, 3, mode, &mut rng).unwrap(), vec![0, 1, 2]);
            assert!(sample_representatives(&norms, 0, mode, &mut rng).unwrap().is_empty());
            assert!(sample_representatives(&norms, 4, mode, &mut rng).is_err());
        }
        // Zero-norm nodes only fill in after positive ones.
        let s = sample_representatives(&[0.0, 3.0, 0.0, 1.0], 2, WithinType::Norm, &mut rng).unwrap();
        assert_eq!(s, vec![1, 3]);
        let s = sample_representatives(&[0.0; 5], 2, WithinType::Norm, &mut rng).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn epsilon_greedy_budgets() {
        let mut state = PolicyState::new(3, 0.1, 20, 60).unwrap();
        let sizes = [100, 100, 100];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(state.budgets(SamplingMode::EpsilonGreedy, &sizes, &mut rng), vec![20, 20, 20]);
        state.update(&[0.2, 0.7, 0.1]).unwrap();
        let mut greedy = 0;
        for _ in 0..200 {
            let b = state.budgets(SamplingMode::EpsilonGreedy, &sizes, &mut rng);
            if b == vec![0, 60, 0] {
                greedy += 1;
            } else {
                assert_eq!(b, vec![20, 20, 20]);
            }
        }
        assert!((160..200).contains(&greedy));
    }

    #[test]
    fn proportional_budgets_follow_sizes() {
        let state = PolicyState::new(2, 0.1, 10, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(state.budgets(SamplingMode::Proportional, &[300, 100], &mut rng), vec![15, 5]);
    }
}
