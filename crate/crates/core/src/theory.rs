//! Executable checks of the analysis: performance difference, the Fisher
//! estimator and min-norm closed form, policy completeness versus Q-fit
//! error, the multiplicative-weights regret bound, the paired-difference
//! variance identity, and gap bookkeeping for a finished run.

use crate::error::{Error, Result};
use crate::linalg::{apply_row_weights, lstsq_min_norm};
use crate::optimizers::{empirical_fisher, npg_update, solve_update_minnorm, RunResult};
use crate::policy::{ActionDistribution, FeatureMap, LogLinear, Policy};
use crate::rng::{self, Rng};
use crate::rollout::{collect_dataset, Dataset, Scheme};
use crate::scalar::{Real, ALGEBRAIC_TOL};
use crate::turn_mdp::{compute_values, concentrability, validate, CoverageReport, MdpFile, TurnMdp};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::Serialize;
use std::sync::Arc;

/// `|J(pi') - J(pi) - sum_h E_{s ~ d^{pi'}_h, y ~ pi'} A^pi_h(s, y)|`.
pub fn check_performance_difference<T: Real>(mdp: &TurnMdp<T>, pi: &Policy<T>, pi_prime: &Policy<T>) -> Result<T> {
    let base = compute_values(mdp, pi)?;
    let other = compute_values(mdp, pi_prime)?;
    let mut advantage = T::zero();
    for s in 0..mdp.num_states() {
        let d = other.occupancy[s];
        if d == T::zero() {
            continue;
        }
        let probs = pi_prime.action_probs(s)?;
        advantage += d * probs.iter().zip(&base.adv[s]).fold(T::zero(), |acc, (&p, &a)| acc + p * a);
    }
    Ok((other.ret - base.ret - advantage).abs())
}

/// `E[g g^T]` with `h` uniform, `s ~ d_h`, `y ~ pi`, `g = grad ln pi(y|s)`.
pub fn exact_fisher<T: Real>(mdp: &TurnMdp<T>, policy: &Policy<T>) -> Result<DMatrix<T>> {
    let values = compute_values(mdp, policy)?;
    let dim = policy.param_dim();
    let mut f = DMatrix::zeros(dim, dim);
    let h_weight = T::one() / T::count(mdp.horizon());
    for s in 0..mdp.num_states() {
        let d = values.occupancy[s];
        if d == T::zero() {
            continue;
        }
        for (y, &p) in policy.action_probs(s)?.iter().enumerate() {
            let g = DVector::from_vec(policy.grad_log_prob(s, y)?);
            f.ger(d * p * h_weight, &g, &g, T::one());
        }
    }
    Ok(f)
}

#[derive(Clone, Debug, Serialize)]
pub struct FisherCheck {
    /// Largest entrywise `|mean - exact| / standard error`.
    pub max_z: f64,
    /// Largest entrywise `|mean - exact|`.
    pub max_abs_dev: f64,
    pub trials: usize,
    pub samples_per_trial: usize,
}

impl FisherCheck {
    pub fn passes(&self, z_limit: f64) -> bool {
        self.max_z < z_limit
    }
}

/// Mean of `trials` independent paired-sample Fisher estimates against the
/// exact expectation. Entries with zero spread must match to rounding.
pub fn check_fisher_unbiased<T: Real>(mdp: &TurnMdp<T>, policy: &Policy<T>, n: usize, trials: usize, seed: u64) -> Result<FisherCheck> {
    if n < 2 || trials < 2 {
        return Err(Error::Config("Fisher check needs n >= 2 and trials >= 2".into()));
    }
    let exact = exact_fisher(mdp, policy)?;
    let dim = exact.nrows();
    let mut sum = DMatrix::<f64>::zeros(dim, dim);
    let mut sum_sq = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..trials {
        let ds = collect_dataset(mdp, policy, n, Scheme::Refuel, None, rng::derive(seed, k as u64))?;
        let est = empirical_fisher(&ds, policy)?.matrix.map(|x| x.to_f());
        sum += &est;
        sum_sq += est.component_mul(&est);
    }
    let t = trials as f64;
    let mut max_z = 0.0f64;
    let mut max_abs_dev = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let mean = sum[(i, j)] / t;
            let var = ((sum_sq[(i, j)] - t * mean * mean) / (t - 1.0)).max(0.0);
            let se = (var / t).sqrt();
            let dev = (mean - exact[(i, j)].to_f()).abs();
            max_abs_dev = max_abs_dev.max(dev);
            let z = if se > 0.0 {
                dev / se
            } else if dev <= ALGEBRAIC_TOL {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
    }
    Ok(FisherCheck {
        max_z,
        max_abs_dev,
        trials,
        samples_per_trial: n,
    })
}

/// Largest parameter discrepancy between the SVD min-norm step and the
/// pseudo-inverse-Fisher closed form.
pub fn check_minnorm_claim<T: Real>(dataset: &Dataset<T>, policy: &Policy<T>, eta: T, cutoff: T) -> Result<T> {
    let a = solve_update_minnorm(dataset, policy, eta, cutoff)?;
    let b = npg_update(dataset, policy, eta, cutoff)?;
    Ok(a.delta.iter().zip(&b.delta).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs())))
}

#[derive(Clone, Debug, Serialize)]
pub struct ApcReport {
    /// `min_w E (w.phi - Q)^2`.
    pub q_approx_error: f64,
    /// `min_{w, g} E (w.phi + g(s) - Q)^2`.
    pub apc_error: f64,
    /// `min_w E (w.phi + V(s) - Q)^2`.
    pub advantage_error: f64,
    pub best_w: Vec<f64>,
    pub best_state_offsets: Vec<f64>,
}

/// Weighted least squares over `(s, y)` with weights `d_h(s) pi(y|s) / H`.
/// Offsets are free per state for the completeness error, fixed to 0 for
/// the Q-fit error and to `V(s)` for the advantage fit.
pub fn apc_error<T: Real>(mdp: &TurnMdp<T>, policy: &LogLinear<T>) -> Result<ApcReport> {
    let pi = Policy::LogLinear(policy.clone());
    let values = compute_values(mdp, &pi)?;
    let features = policy.features();
    let dim = features.dim();
    let h_weight = T::one() / T::count(mdp.horizon());
    let mut cells = Vec::new();
    for s in 0..mdp.num_states() {
        let d = values.occupancy[s];
        if d == T::zero() {
            continue;
        }
        for (y, &p) in pi.action_probs(s)?.iter().enumerate() {
            if p > T::zero() {
                cells.push((s, y, d * p * h_weight));
            }
        }
    }
    let states: Vec<usize> = {
        let mut v: Vec<usize> = cells.iter().map(|c| c.0).collect();
        v.dedup();
        v
    };
    let weights: Vec<T> = cells.iter().map(|c| c.2).collect();
    let fit = |with_offsets: bool, target: &dyn Fn(usize, usize) -> T| -> (DVector<T>, T) {
        let cols = dim + if with_offsets { states.len() } else { 0 };
        let mut x = DMatrix::zeros(cells.len(), cols);
        let mut b = DVector::zeros(cells.len());
        for (i, &(s, y, _)) in cells.iter().enumerate() {
            for (k, &f) in features.phi(s, y).iter().enumerate() {
                x[(i, k)] = f;
            }
            if with_offsets {
                let col = states.iter().position(|&t| t == s).expect("state listed");
                x[(i, dim + col)] = T::one();
            }
            b[i] = target(s, y);
        }
        apply_row_weights(&mut x, &mut b, &weights);
        let sol = lstsq_min_norm(&x, &b, T::of(1e-12));
        let r = &x * &sol.x - &b;
        (sol.x, r.dot(&r))
    };
    let q = |s: usize, y: usize| values.q[s][y];
    let adv = |s: usize, y: usize| values.adv[s][y];
    let (_, q_err) = fit(false, &q);
    let (_, adv_err) = fit(false, &adv);
    let (coef, apc_err) = fit(true, &q);
    let mut offsets = vec![0.0; mdp.num_states()];
    for (k, &s) in states.iter().enumerate() {
        offsets[s] = coef[dim + k].to_f();
    }
    Ok(ApcReport {
        q_approx_error: q_err.to_f(),
        apc_error: apc_err.to_f(),
        advantage_error: adv_err.to_f(),
        best_w: coef.rows(0, dim).iter().map(|x| x.to_f()).collect(),
        best_state_offsets: offsets,
    })
}

/// One state, two actions, both rewarded 1, features `[1, -1]` and
/// `[-1, 1]`, uniform policy.
pub fn prop2_instance() -> (TurnMdp<f64>, LogLinear<f64>) {
    let mdp = validate(&MdpFile {
        horizon: 1,
        states_per_turn: vec![vec![0]],
        action_count: 2,
        initial_dist: vec![1.0],
        transition: vec![],
        terminal_reward: vec![vec![1.0, 1.0]],
        reward_range: [0.0, 1.0],
        metadata: None,
    })
    .expect("static instance is valid");
    let features = FeatureMap::new(vec![vec![vec![1.0, -1.0], vec![-1.0, 1.0]]]).expect("static features");
    let policy = LogLinear::new(vec![0.0, 0.0], Arc::new(features)).expect("dimension matches");
    (mdp, policy)
}

/// `(q_error, apc_error)` on the two-action instance above. The Q-fit
/// error is found by grid search over `w` (its objective is `1 + (w1-w2)^2`);
/// the completeness error is the definition evaluated at `pi' = pi` and
/// `C = exp(eta)`.
pub fn prop2_counterexample(eta: f64) -> (f64, f64) {
    let (mdp, policy) = prop2_instance();
    let pi = Policy::LogLinear(policy.clone());
    let probs = pi.action_probs(0).expect("state 0");
    let r = [mdp.reward(0, 0), mdp.reward(0, 1)];
    let phi = |y: usize| policy.features().phi(0, y);
    let mut q_error = f64::INFINITY;
    for i in -200i32..=200 {
        for j in -200i32..=200 {
            let w = [f64::from(i) / 100.0, f64::from(j) / 100.0];
            let e: f64 = (0..2)
                .map(|y| {
                    let f = phi(y);
                    probs[y] * (r[y] - (w[0] * f[0] + w[1] * f[1])).powi(2)
                })
                .sum();
            q_error = q_error.min(e);
        }
    }
    let log_pi = pi.log_probs(0).expect("state 0");
    let apc_error: f64 = (0..2)
        .map(|y| {
            let target = (log_pi[y] + eta * r[y] - eta) / eta;
            probs[y] * (log_pi[y] / eta - target).powi(2)
        })
        .sum();
    (q_error, apc_error)
}

/// Produces per-round advantage tables for the regret harness.
pub trait Adversary {
    /// Values for round `round` after observing the current iterate `pi`.
    /// Must satisfy `|A| <= C` and `E_pi A = 0`.
    fn advantages(&mut self, round: usize, pi: &[f64], rng: &mut Rng) -> Vec<f64>;
}

/// Subtract the mean under `pi`.
pub fn center(raw: &[f64], pi: &[f64]) -> Vec<f64> {
    let m: f64 = raw.iter().zip(pi).map(|(a, p)| a * p).sum();
    raw.iter().map(|a| a - m).collect()
}

/// Centered adversaries built from raw values in `[-C/2, C/2]`, so the
/// centered table stays within `[-C, C]`.
#[derive(Clone, Debug)]
pub enum CenteredAdversary {
    /// Fresh uniform raw values each round.
    Noise { c: f64 },
    /// Rewards the currently least likely action.
    ChaseLeastLikely { c: f64 },
    /// One raw vector drawn on the first round and then replayed.
    FixedBias { c: f64, bias: Option<Vec<f64>> },
}

impl Adversary for CenteredAdversary {
    fn advantages(&mut self, _round: usize, pi: &[f64], rng: &mut Rng) -> Vec<f64> {
        let y = pi.len();
        let raw = match self {
            CenteredAdversary::Noise { c } => (0..y).map(|_| rng.random_range(-*c / 2.0..=*c / 2.0)).collect(),
            CenteredAdversary::ChaseLeastLikely { c } => {
                let least = (0..y).fold(0, |b, i| if pi[i] < pi[b] { i } else { b });
                (0..y).map(|i| if i == least { *c / 2.0 } else { -*c / 2.0 }).collect()
            }
            CenteredAdversary::FixedBias { c, bias } => bias
                .get_or_insert_with(|| (0..y).map(|_| rng.random_range(-*c / 2.0..=*c / 2.0)).collect())
                .clone(),
        };
        center(&raw, pi)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegretTrace {
    /// `cumulative[t][y]`: sum over rounds `<= t` of `A(y)`, i.e. the
    /// comparator sum for the deterministic comparator on `y`.
    pub cumulative: Vec<Vec<f64>>,
    pub bound_value: f64,
    pub eta_used: f64,
}

impl RegretTrace {
    /// Largest final comparator sum; mixed comparators are averages of
    /// these, so this is the worst case over all comparators.
    pub fn worst_comparator_sum(&self) -> f64 {
        self.cumulative
            .last()
            .map_or(0.0, |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn within_bound(&self) -> bool {
        self.worst_comparator_sum() <= self.bound_value
    }
}

pub fn regret_bound(y_count: usize, t_count: usize, c_bound: f64) -> f64 {
    2.0 * c_bound * (t_count as f64 * (y_count as f64).ln()).sqrt()
}

/// Multiplicative weights from uniform with `eta = sqrt(ln Y / (C^2 T))`.
/// Adversary tables that are off-center or out of bounds are rejected.
pub fn regret_harness(y_count: usize, t_count: usize, c_bound: f64, adversary: &mut dyn Adversary, seed: u64) -> Result<RegretTrace> {
    if y_count == 0 || !(c_bound > 0.0) {
        return Err(Error::Config("regret harness needs Y >= 1 and C > 0".into()));
    }
    let eta = ((y_count as f64).ln() / (c_bound * c_bound * t_count.max(1) as f64)).sqrt();
    let mut r = rng::seeded(seed);
    let mut log_pi = vec![-(y_count as f64).ln(); y_count];
    let mut totals = vec![0.0; y_count];
    let mut cumulative = Vec::with_capacity(t_count);
    for round in 0..t_count {
        let pi = crate::scalar::softmax(&log_pi);
        let a = adversary.advantages(round, &pi, &mut r);
        if a.len() != y_count {
            return Err(Error::InvalidAdversary {
                round,
                reason: format!("{} entries for {y_count} actions", a.len()),
            });
        }
        if let Some(x) = a.iter().find(|x| !(x.abs() <= c_bound * (1.0 + 1e-12))) {
            return Err(Error::InvalidAdversary {
                round,
                reason: format!("entry {x} exceeds bound {c_bound}"),
            });
        }
        let mean: f64 = a.iter().zip(&pi).map(|(x, p)| x * p).sum();
        if mean.abs() > 1e-10 * c_bound {
            return Err(Error::InvalidAdversary {
                round,
                reason: format!("mean under current iterate is {mean}, not 0"),
            });
        }
        for y in 0..y_count {
            totals[y] += a[y];
            log_pi[y] += eta * a[y];
        }
        cumulative.push(totals.clone());
    }
    Ok(RegretTrace {
        cumulative,
        bound_value: regret_bound(y_count, t_count, c_bound),
        eta_used: eta,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Report {
    /// `J(comparator) - J(pi_t)` per iterate.
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    pub argmin: usize,
    /// Mean regression residual over the run, the empirical stand-in for
    /// the in-distribution error.
    pub epsilon_hat: Option<f64>,
    pub coverage: CoverageReport,
}

/// Gap of every iterate to `comparator` together with the quantities the
/// bound is stated in. Nothing is asserted.
pub fn theorem1_gap<T: Real, C: ActionDistribution<T>>(mdp: &TurnMdp<T>, run: &RunResult<T>, comparator: &C) -> Result<Theorem1Report> {
    let j_star = compute_values(mdp, comparator)?.ret.to_f();
    let gaps: Vec<f64> = run.metrics.iter().map(|m| j_star - m.return_j).collect();
    let (argmin, min_gap) = gaps
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &g)| if g < b.1 { (i, g) } else { b });
    let coverage = concentrability(mdp, comparator, &run.policies)?;
    Ok(Theorem1Report {
        gaps,
        min_gap,
        argmin,
        epsilon_hat: run.mean_residual(),
        coverage,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceIdentityCheck {
    /// `E (f(s,y) - f(s,y'))^2` by exhaustive summation.
    pub exact_paired: f64,
    /// `2 E (f(s,y) - E_pi f(s,.))^2` by exhaustive summation.
    pub exact_centered: f64,
    /// Monte-Carlo z-score of the per-sample difference of the two sides.
    pub mc_z: Option<f64>,
}

impl VarianceIdentityCheck {
    pub fn exact_deviation(&self) -> f64 {
        (self.exact_paired - self.exact_centered).abs()
    }
}

/// Paired second moment against twice the centered one for `f = Q^pi`,
/// under `h` uniform, `s ~ d_h`, `y, y'` independent from `pi`. With
/// `n > 0` the identity is also checked by sampling.
pub fn check_regression_variance_identity<T: Real>(
    mdp: &TurnMdp<T>,
    policy: &Policy<T>,
    n: usize,
    seed: u64,
) -> Result<VarianceIdentityCheck> {
    let values = compute_values(mdp, policy)?;
    let f = |s: usize, y: usize| values.q[s][y].to_f();
    let h_weight = 1.0 / mdp.horizon() as f64;
    let (mut paired, mut centered) = (0.0, 0.0);
    for s in 0..mdp.num_states() {
        let d = values.occupancy[s].to_f() * h_weight;
        if d == 0.0 {
            continue;
        }
        let probs: Vec<f64> = policy.action_probs(s)?.iter().map(|p| p.to_f()).collect();
        let mean: f64 = (0..probs.len()).map(|y| probs[y] * f(s, y)).sum();
        for (y, &py) in probs.iter().enumerate() {
            centered += 2.0 * d * py * (f(s, y) - mean).powi(2);
            for (y2, &py2) in probs.iter().enumerate() {
                paired += d * py * py2 * (f(s, y) - f(s, y2)).powi(2);
            }
        }
    }
    let mc_z = if n == 0 {
        None
    } else {
        // pairs from the sampler supply (h, s, y, y'); only Q enters
        let ds = collect_dataset(mdp, policy, n, Scheme::Refuel, None, seed)?;
        let diffs: Vec<f64> = ds
            .samples
            .iter()
            .map(|p| {
                let v = values.v[p.state].to_f();
                (f(p.state, p.action_a) - f(p.state, p.action_b)).powi(2) - 2.0 * (f(p.state, p.action_a) - v).powi(2)
            })
            .collect();
        let m = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let se = (var / n as f64).sqrt();
        Some(if se > 0.0 {
            m.abs() / se
        } else if m.abs() <= ALGEBRAIC_TOL {
            0.0
        } else {
            f64::INFINITY
        })
    };
    Ok(VarianceIdentityCheck {
        exact_paired: paired,
        exact_centered: centered,
        mc_z,
    })
}
