//! Parametrized stochastic policies over the dense state index of a
//! [`TurnMdp`](crate::turn_mdp::TurnMdp): tabular softmax and log-linear.
//!
//! Both classes make the paired log-ratio predictor exactly linear in the
//! parameter difference, which is what lets the regression update be solved
//! as an ordinary least-squares problem.

use crate::error::{Error, Result};
use crate::scalar::{inverse_cdf, log_sum_exp, softmax, Real};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Anything that assigns a distribution over actions to every state index.
pub trait ActionDistribution<T: Real> {
    fn num_states(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Distribution at `state`. Panics on an out-of-range index; callers
    /// check the domain once up front.
    fn probs_at(&self, state: usize) -> Vec<T>;
}

/// Explicit per-state action distributions. Unlike the softmax classes this
/// can hold zeros, so it represents deterministic comparators and the
/// per-iteration probability caches used by the samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTable<T> {
    probs: Vec<Vec<T>>,
    action_count: usize,
}

impl<T: Real> ActionTable<T> {
    pub fn new(probs: Vec<Vec<T>>) -> Result<Self> {
        let action_count = probs.first().map_or(0, Vec::len);
        if action_count == 0 {
            return Err(Error::DomainMismatch("action table needs at least one state and one action".into()));
        }
        for (s, row) in probs.iter().enumerate() {
            if row.len() != action_count {
                return Err(Error::DomainMismatch(format!(
                    "row {s} has {} actions, expected {action_count}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().map(|p| p.to_f()).sum();
            if row.iter().any(|p| p.to_f() < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::DomainMismatch(format!("row {s} is not a distribution (sum {sum})")));
            }
        }
        Ok(Self { probs, action_count })
    }

    pub fn uniform(num_states: usize, action_count: usize) -> Self {
        let p = T::one() / T::count(action_count);
        Self {
            probs: vec![vec![p; action_count]; num_states],
            action_count,
        }
    }

    /// Deterministic policy picking `argmax_y scores[s][y]` (lowest index on ties).
    pub fn greedy(scores: &[Vec<T>]) -> Self {
        let action_count = scores.first().map_or(0, Vec::len);
        let probs = scores
            .iter()
            .map(|row| {
                let mut best = 0;
                for (y, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = y;
                    }
                }
                let mut p = vec![T::zero(); action_count];
                p[best] = T::one();
                p
            })
            .collect();
        Self { probs, action_count }
    }

    pub fn row(&self, state: usize) -> &[T] {
        &self.probs[state]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.probs
    }
}

impl<T: Real> ActionDistribution<T> for ActionTable<T> {
    fn num_states(&self) -> usize {
        self.probs.len()
    }
    fn action_count(&self) -> usize {
        self.action_count
    }
    fn probs_at(&self, state: usize) -> Vec<T> {
        self.probs[state].clone()
    }
}

/// Tabular softmax: one logit per (state, action), stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSoftmax<T> {
    num_states: usize,
    action_count: usize,
    logits: Vec<T>,
}

impl<T: Real> TabularSoftmax<T> {
    pub fn new(num_states: usize, action_count: usize, logits: Vec<T>) -> Result<Self> {
        if action_count == 0 || logits.len() != num_states * action_count {
            return Err(Error::DomainMismatch(format!(
                "{} logits for {num_states} states x {action_count} actions",
                logits.len()
            )));
        }
        Ok(Self {
            num_states,
            action_count,
            logits,
        })
    }

    pub fn uniform(num_states: usize, action_count: usize) -> Self {
        Self {
            num_states,
            action_count,
            logits: vec![T::zero(); num_states * action_count],
        }
    }

    pub fn logits_at(&self, state: usize) -> &[T] {
        &self.logits[state * self.action_count..(state + 1) * self.action_count]
    }
}

/// Dense feature table `phi(s, y)` of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    num_states: usize,
    action_count: usize,
    dim: usize,
    table: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    /// `rows[s][y]` is the feature vector of (s, y).
    pub fn new(rows: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let num_states = rows.len();
        let action_count = rows.first().map_or(0, Vec::len);
        let dim = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if num_states == 0 || action_count == 0 || dim == 0 {
            return Err(Error::DomainMismatch("feature map must be non-empty".into()));
        }
        let mut table = Vec::with_capacity(num_states * action_count * dim);
        for (s, per_state) in rows.into_iter().enumerate() {
            if per_state.len() != action_count {
                return Err(Error::DomainMismatch(format!("state {s}: expected {action_count} feature vectors")));
            }
            for (y, phi) in per_state.into_iter().enumerate() {
                if phi.len() != dim || phi.iter().any(|v| !v.to_f().is_finite()) {
                    return Err(Error::DomainMismatch(format!("feature ({s},{y}) must be {dim} finite reals")));
                }
                table.extend(phi);
            }
        }
        Ok(Self {
            num_states,
            action_count,
            dim,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, state: usize, action: usize) -> &[T] {
        let start = (state * self.action_count + action) * self.dim;
        &self.table[start..start + self.dim]
    }
}

/// Log-linear policy `pi(y|s) ~ exp(w . phi(s, y))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLinear<T> {
    weights: Vec<T>,
    features: Arc<FeatureMap<T>>,
}

impl<T: Real> LogLinear<T> {
    pub fn new(weights: Vec<T>, features: Arc<FeatureMap<T>>) -> Result<Self> {
        if weights.len() != features.dim {
            return Err(Error::DomainMismatch(format!(
                "{} weights for feature dimension {}",
                weights.len(),
                features.dim
            )));
        }
        Ok(Self { weights, features })
    }

    pub fn features(&self) -> &Arc<FeatureMap<T>> {
        &self.features
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy<T> {
    Tabular(TabularSoftmax<T>),
    LogLinear(LogLinear<T>),
}

impl<T: Real> From<TabularSoftmax<T>> for Policy<T> {
    fn from(p: TabularSoftmax<T>) -> Self {
        Policy::Tabular(p)
    }
}

impl<T: Real> From<LogLinear<T>> for Policy<T> {
    fn from(p: LogLinear<T>) -> Self {
        Policy::LogLinear(p)
    }
}

impl<T: Real> Policy<T> {
    pub fn uniform_tabular(num_states: usize, action_count: usize) -> Self {
        Policy::Tabular(TabularSoftmax::uniform(num_states, action_count))
    }

    pub fn num_states(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.num_states,
            Policy::LogLinear(p) => p.features.num_states,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.action_count,
            Policy::LogLinear(p) => p.features.action_count,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[T] {
        match self {
            Policy::Tabular(p) => &p.logits,
            Policy::LogLinear(p) => &p.weights,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Tabular(_) => "tabular",
            Policy::LogLinear(_) => "loglinear",
        }
    }

    /// Same class, same shape, and (for log-linear) the same feature map.
    pub fn same_class(&self, other: &Self) -> bool {
        match (self, other) {
            (Policy::Tabular(a), Policy::Tabular(b)) => a.num_states == b.num_states && a.action_count == b.action_count,
            (Policy::LogLinear(a), Policy::LogLinear(b)) => Arc::ptr_eq(&a.features, &b.features) || a.features == b.features,
            _ => false,
        }
    }

    /// Policy with parameters `params + delta`.
    pub fn shifted(&self, delta: &[T]) -> Self {
        assert_eq!(delta.len(), self.param_dim(), "parameter delta has wrong length");
        let mut out = self.clone();
        let params = match &mut out {
            Policy::Tabular(p) => &mut p.logits,
            Policy::LogLinear(p) => &mut p.weights,
        };
        for (p, d) in params.iter_mut().zip(delta) {
            *p += *d;
        }
        out
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state < self.num_states() {
            Ok(())
        } else {
            Err(Error::UnknownState(state))
        }
    }

    fn check_action(&self, action: usize) -> Result<()> {
        let count = self.action_count();
        if action < count {
            Ok(())
        } else {
            Err(Error::UnknownAction { action, count })
        }
    }

    /// Unnormalized log-preferences at `state`.
    fn scores(&self, state: usize) -> Vec<T> {
        match self {
            Policy::Tabular(p) => p.logits_at(state).to_vec(),
            Policy::LogLinear(p) => (0..p.features.action_count)
                .map(|y| dot(&p.weights, p.features.phi(state, y)))
                .collect(),
        }
    }

    pub fn action_probs(&self, state: usize) -> Result<Vec<T>> {
        self.check_state(state)?;
        Ok(softmax(&self.scores(state)))
    }

    pub fn log_probs(&self, state: usize) -> Result<Vec<T>> {
        self.check_state(state)?;
        let scores = self.scores(state);
        let lse = log_sum_exp(&scores);
        Ok(scores.into_iter().map(|x| x - lse).collect())
    }

    pub fn log_prob(&self, state: usize, action: usize) -> Result<T> {
        self.check_action(action)?;
        Ok(self.log_probs(state)?[action])
    }

    /// Score function `grad_theta ln pi(action | state)` over the full parameter vector.
    pub fn grad_log_prob(&self, state: usize, action: usize) -> Result<Vec<T>> {
        self.check_action(action)?;
        let probs = self.action_probs(state)?;
        let mut grad = vec![T::zero(); self.param_dim()];
        match self {
            Policy::Tabular(p) => {
                let base = state * p.action_count;
                for (y, &pr) in probs.iter().enumerate() {
                    grad[base + y] = -pr;
                }
                grad[base + action] += T::one();
            }
            Policy::LogLinear(p) => {
                grad.copy_from_slice(p.features.phi(state, action));
                for (y, &pr) in probs.iter().enumerate() {
                    for (g, &f) in grad.iter_mut().zip(p.features.phi(state, y)) {
                        *g -= pr * f;
                    }
                }
            }
        }
        Ok(grad)
    }

    pub fn sample_action<R: rand::Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<usize> {
        let probs = self.action_probs(state)?;
        Ok(inverse_cdf(&probs, rng.random::<f64>()))
    }

    /// Probabilities at every state, for samplers that draw many actions
    /// from a fixed policy.
    pub fn table(&self) -> ActionTable<T> {
        let probs = (0..self.num_states()).map(|s| softmax(&self.scores(s))).collect();
        ActionTable {
            probs,
            action_count: self.action_count(),
        }
    }
}

impl<T: Real> ActionDistribution<T> for Policy<T> {
    fn num_states(&self) -> usize {
        Policy::num_states(self)
    }
    fn action_count(&self) -> usize {
        Policy::action_count(self)
    }
    fn probs_at(&self, state: usize) -> Vec<T> {
        self.action_probs(state).expect("state within policy domain")
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `[ln cand(y|s) - ln ref(y|s)] - [ln cand(y2|s) - ln ref(y2|s)]`.
///
/// The per-state log-partitions cancel, so this is computed directly from
/// the parameter difference.
pub fn pair_predictor<T: Real>(candidate: &Policy<T>, reference: &Policy<T>, state: usize, action: usize, other: usize) -> Result<T> {
    if !candidate.same_class(reference) {
        return Err(Error::DomainMismatch("candidate and reference differ in class".into()));
    }
    candidate.check_state(state)?;
    candidate.check_action(action)?;
    candidate.check_action(other)?;
    Ok(match (candidate, reference) {
        (Policy::Tabular(c), Policy::Tabular(r)) => {
            let (cl, rl) = (c.logits_at(state), r.logits_at(state));
            (cl[action] - rl[action]) - (cl[other] - rl[other])
        }
        (Policy::LogLinear(c), Policy::LogLinear(r)) => {
            let (pa, pb) = (c.features.phi(state, action), c.features.phi(state, other));
            c.weights
                .iter()
                .zip(&r.weights)
                .zip(pa.iter().zip(pb))
                .fold(T::zero(), |acc, ((&wc, &wr), (&fa, &fb))| acc + (wc - wr) * (fa - fb))
        }
        _ => unreachable!("class checked above"),
    })
}

/// `KL(a(.|s) || b(.|s))`.
pub fn kl_divergence<T: Real>(a: &impl ActionDistribution<T>, b: &impl ActionDistribution<T>, state: usize) -> T {
    kl_rows(&a.probs_at(state), &b.probs_at(state))
}

pub(crate) fn kl_rows<T: Real>(p: &[T], q: &[T]) -> T {
    let mut kl = T::zero();
    for (&pa, &qb) in p.iter().zip(q) {
        if pa > T::zero() {
            kl += pa * (pa / qb).ln();
        }
    }
    kl.max(T::zero())
}

/// On-disk policy representation. Tabular logits are `[state][action]`;
/// log-linear features are `[state][action][k]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyFile {
    Tabular { logits: Vec<Vec<f64>> },
    Loglinear { weights: Vec<f64>, features: Vec<Vec<Vec<f64>>> },
}

impl<T: Real> Policy<T> {
    pub fn to_file(&self) -> PolicyFile {
        match self {
            Policy::Tabular(p) => PolicyFile::Tabular {
                logits: (0..p.num_states)
                    .map(|s| p.logits_at(s).iter().map(|x| x.to_f()).collect())
                    .collect(),
            },
            Policy::LogLinear(p) => {
                let f = &p.features;
                PolicyFile::Loglinear {
                    weights: p.weights.iter().map(|x| x.to_f()).collect(),
                    features: (0..f.num_states)
                        .map(|s| {
                            (0..f.action_count)
                                .map(|y| f.phi(s, y).iter().map(|x| x.to_f()).collect())
                                .collect()
                        })
                        .collect(),
                }
            }
        }
    }

    pub fn from_file(file: &PolicyFile) -> Result<Self> {
        match file {
            PolicyFile::Tabular { logits } => {
                let num_states = logits.len();
                let action_count = logits.first().map_or(0, Vec::len);
                if logits.iter().any(|r| r.len() != action_count) {
                    return Err(Error::DomainMismatch("ragged logit table".into()));
                }
                let flat = logits.iter().flatten().map(|&x| T::of(x)).collect();
                Ok(Policy::Tabular(TabularSoftmax::new(num_states, action_count, flat)?))
            }
            PolicyFile::Loglinear { weights, features } => {
                let rows = features
                    .iter()
                    .map(|s| s.iter().map(|phi| phi.iter().map(|&x| T::of(x)).collect()).collect())
                    .collect();
                let map = Arc::new(FeatureMap::new(rows)?);
                Ok(Policy::LogLinear(LogLinear::new(weights.iter().map(|&x| T::of(x)).collect(), map)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_tabular(seed: u64, states: usize, actions: usize) -> Policy<f64> {
        let mut r = rng::seeded(seed);
        let logits = (0..states * actions).map(|_| r.random_range(-2.0..2.0)).collect();
        Policy::Tabular(TabularSoftmax::new(states, actions, logits).unwrap())
    }

    fn prop2_features() -> Arc<FeatureMap<f64>> {
        Arc::new(FeatureMap::new(vec![vec![vec![1.0, -1.0], vec![-1.0, 1.0]]]).unwrap())
    }

    fn random_loglinear(seed: u64, states: usize, actions: usize, dim: usize) -> Policy<f64> {
        let mut r = rng::seeded(seed);
        let rows = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let w = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
        Policy::LogLinear(LogLinear::new(w, Arc::new(FeatureMap::new(rows).unwrap())).unwrap())
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = Policy::<f64>::uniform_tabular(1, 4);
        assert_eq!(p.action_probs(0).unwrap(), vec![0.25; 4]);
        assert!((p.log_prob(0, 2).unwrap() - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ln3_logits_give_three_to_one() {
        let p = Policy::Tabular(TabularSoftmax::new(1, 2, vec![3f64.ln(), 0.0]).unwrap());
        let probs = p.action_probs(0).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-15 && (probs[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn prop2_loglinear_at_unit_weights_is_uniform() {
        let p = Policy::LogLinear(LogLinear::new(vec![1.0, 1.0], prop2_features()).unwrap());
        assert_eq!(p.action_probs(0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn unknown_indices_are_errors() {
        let p = Policy::<f64>::uniform_tabular(2, 3);
        assert!(matches!(p.action_probs(2), Err(Error::UnknownState(2))));
        assert!(matches!(p.log_prob(0, 3), Err(Error::UnknownAction { action: 3, count: 3 })));
        assert!(pair_predictor(&p, &p, 0, 0, 5).is_err());
    }

    #[test]
    fn log_prob_approaches_zero_in_deterministic_limit() {
        for m in [10.0, 30.0, 200.0] {
            let p = Policy::Tabular(TabularSoftmax::new(1, 2, vec![m, 0.0]).unwrap());
            let lp = p.log_prob(0, 0).unwrap();
            assert!(lp <= 0.0 && lp > -1e-4);
        }
    }

    #[test]
    fn log_prob_matches_brute_normalization() {
        let p = random_tabular(11, 3, 4);
        let Policy::Tabular(t) = &p else { unreachable!() };
        for s in 0..3 {
            let z: f64 = t.logits_at(s).iter().map(|x| x.exp()).sum();
            for y in 0..4 {
                let brute = (t.logits_at(s)[y].exp() / z).ln();
                assert!((p.log_prob(s, y).unwrap() - brute).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pair_predictor_closed_forms() {
        let reference = random_tabular(3, 2, 3);
        assert_eq!(pair_predictor(&reference, &reference, 1, 0, 2).unwrap(), 0.0);
        let candidate = random_tabular(4, 2, 3);
        assert_eq!(pair_predictor(&candidate, &reference, 1, 2, 2).unwrap(), 0.0);
        // per-state constant shift of the candidate cancels
        let shift: Vec<f64> = (0..6).map(|i| if i < 3 { 0.7 } else { -1.9 }).collect();
        let shifted = reference.shifted(&shift);
        for s in 0..2 {
            for y in 0..3 {
                for y2 in 0..3 {
                    let direct = (shifted.log_prob(s, y).unwrap() - reference.log_prob(s, y).unwrap())
                        - (shifted.log_prob(s, y2).unwrap() - reference.log_prob(s, y2).unwrap());
                    assert!(direct.abs() < 1e-12);
                    assert_eq!(pair_predictor(&shifted, &reference, s, y, y2).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_point_masses() {
        let det = Policy::Tabular(TabularSoftmax::new(1, 3, vec![-800.0, -800.0, 0.0]).unwrap());
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            assert_eq!(det.sample_action(0, &mut r).unwrap(), 2);
        }
        let p = random_tabular(9, 1, 4);
        let a: Vec<usize> = {
            let mut r = rng::seeded(5);
            (0..50).map(|_| p.sample_action(0, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = rng::seeded(5);
            (0..50).map(|_| p.sample_action(0, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_frequencies_within_three_sigma() {
        let y = 4;
        let n = 100_000;
        let p = Policy::<f64>::uniform_tabular(1, y);
        let mut r = rng::seeded(2024);
        let mut counts = vec![0usize; y];
        for _ in 0..n {
            counts[p.sample_action(0, &mut r).unwrap()] += 1;
        }
        let q = 1.0 / y as f64;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * q).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn kl_values() {
        let u = ActionTable::<f64>::uniform(1, 2);
        assert_eq!(kl_divergence(&u, &u, 0), 0.0);
        let a = ActionTable::new(vec![vec![0.999, 0.001]]).unwrap();
        let direct = 0.999 * (0.999f64 / 0.5).ln() + 0.001 * (0.001f64 / 0.5).ln();
        let kl = kl_divergence(&a, &u, 0);
        assert!((kl - direct).abs() < 1e-15);
        assert!((kl - 0.6852).abs() < 1e-4);
        let near = ActionTable::new(vec![vec![1.0, 0.0]]).unwrap();
        assert!((kl_divergence(&near, &u, 0) - 2f64.ln()).abs() < 1e-15);
        let b = ActionTable::new(vec![vec![0.3, 0.7]]).unwrap();
        let (ab, ba) = (kl_divergence(&a, &b, 0), kl_divergence(&b, &a, 0));
        assert!(ab >= 0.0 && ba >= 0.0 && (ab - ba).abs() > 1e-3);
    }

    #[test]
    fn score_closed_forms() {
        let p = Policy::<f64>::uniform_tabular(2, 2);
        assert_eq!(p.grad_log_prob(1, 0).unwrap(), vec![0.0, 0.0, 0.5, -0.5]);
        let ll = Policy::LogLinear(LogLinear::new(vec![0.0, 0.0], prop2_features()).unwrap());
        assert_eq!(ll.grad_log_prob(0, 0).unwrap(), vec![1.0, -1.0]);
        assert_eq!(ll.grad_log_prob(0, 1).unwrap(), vec![-1.0, 1.0]);
    }

    fn check_finite_differences(p: &Policy<f64>) {
        let h = 1e-5;
        for s in 0..p.num_states() {
            for y in 0..p.action_count() {
                let g = p.grad_log_prob(s, y).unwrap();
                for k in 0..p.param_dim() {
                    let mut e = vec![0.0; p.param_dim()];
                    e[k] = h;
                    let up = p.shifted(&e).log_prob(s, y).unwrap();
                    e[k] = -h;
                    let down = p.shifted(&e).log_prob(s, y).unwrap();
                    let fd = (up - down) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6, "fd {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn grad_matches_central_differences() {
        check_finite_differences(&random_tabular(21, 3, 3));
        check_finite_differences(&random_loglinear(22, 3, 4, 5));
    }

    #[test]
    fn policy_file_round_trip_is_bit_exact() {
        for p in [random_tabular(31, 3, 2), random_loglinear(32, 2, 3, 4)] {
            let text = crate::io::to_json_string(&p.to_file()).unwrap();
            let back: PolicyFile = serde_json::from_str(&text).unwrap();
            assert_eq!(Policy::<f64>::from_file(&back).unwrap(), p);
        }
    }

    #[test]
    fn f32_policies_work() {
        let p = Policy::Tabular(TabularSoftmax::new(1, 3, vec![0.5f32, -0.25, 1.0]).unwrap());
        let s: f32 = p.action_probs(0).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn normalization_and_score_centering(seed in 0u64..10_000, states in 1usize..4, actions in 1usize..6) {
            for p in [random_tabular(seed, states, actions), random_loglinear(seed, states, actions, 3)] {
                for s in 0..states {
                    let probs = p.action_probs(s).unwrap();
                    prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(probs.iter().all(|&q| q > 0.0));
                    let mut mean = vec![0.0; p.param_dim()];
                    for (y, &q) in probs.iter().enumerate() {
                        for (m, g) in mean.iter_mut().zip(p.grad_log_prob(s, y).unwrap()) {
                            *m += q * g;
                        }
                    }
                    prop_assert!(mean.iter().all(|m| m.abs() < 1e-12));
                }
            }
        }

        #[test]
        fn predictor_is_linear_in_parameter_difference(seed in 0u64..10_000, shift in -5.0f64..5.0) {
            let reference = random_tabular(seed, 2, 3);
            let candidate = random_tabular(seed + 1, 2, 3);
            let shifted: Vec<f64> = (0..6).map(|i| if i < 3 { shift } else { -shift }).collect();
            let moved = candidate.shifted(&shifted);
            let (Policy::Tabular(c), Policy::Tabular(r)) = (&candidate, &reference) else { unreachable!() };
            for s in 0..2 {
                for y in 0..3 {
                    for y2 in 0..3 {
                        let closed = (c.logits_at(s)[y] - r.logits_at(s)[y]) - (c.logits_at(s)[y2] - r.logits_at(s)[y2]);
                        let a = pair_predictor(&candidate, &reference, s, y, y2).unwrap();
                        let b = pair_predictor(&moved, &reference, s, y, y2).unwrap();
                        prop_assert!((a - closed).abs() < 1e-12);
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                }
            }
            let ref_ll = random_loglinear(seed, 2, 3, 4);
            let Policy::LogLinear(rl) = &ref_ll else { unreachable!() };
            let w2: Vec<f64> = rl.weights.iter().map(|w| w + shift * 0.3).collect();
            let cand_ll = Policy::LogLinear(LogLinear::new(w2.clone(), rl.features.clone()).unwrap());
            for s in 0..2 {
                let pred = pair_predictor(&cand_ll, &ref_ll, s, 0, 2).unwrap();
                let closed: f64 = (0..4).map(|k| (w2[k] - rl.weights[k]) * (rl.features.phi(s, 0)[k] - rl.features.phi(s, 2)[k])).sum();
                let direct = (cand_ll.log_prob(s, 0).unwrap() - ref_ll.log_prob(s, 0).unwrap())
                    - (cand_ll.log_prob(s, 2).unwrap() - ref_ll.log_prob(s, 2).unwrap());
                prop_assert!((pred - closed).abs() < 1e-12);
                prop_assert!((pred - direct).abs() < 1e-12);
            }
        }
    }
}
