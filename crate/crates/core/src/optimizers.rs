//! The regression update, its exact and closed-form counterparts, and the
//! outer iteration loop.
//!
//! For tabular softmax and log-linear policies the paired log-ratio
//! predictor is linear in the parameter step, so each update is an exact
//! linear least-squares problem solved at minimum norm.

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{apply_row_weights, lstsq_min_norm, pinv_symmetric};
use crate::policy::{kl_rows, pair_predictor, ActionDistribution, ActionTable, Policy, TabularSoftmax};
use crate::rng;
use crate::rollout::{collect_dataset, shape_dataset, Dataset, OfflineBuffer, Scheme};
use crate::scalar::{log_sum_exp, Real};
use crate::turn_mdp::{compute_values, occupancy, TurnMdp, ValueTables};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// A solved regression step.
#[derive(Clone, Debug)]
pub struct UpdateSolution<T> {
    pub delta: Vec<T>,
    pub next_policy: Policy<T>,
    /// Mean squared regression residual at the solution.
    pub residual: T,
    /// Relative cutoff applied to the spectrum.
    pub cutoff: T,
    pub rank: usize,
}

/// Mean over samples of `[(1/eta) * predictor - (r_a - r_b)]^2`.
pub fn regression_loss<T: Real>(candidate: &Policy<T>, reference: &Policy<T>, dataset: &Dataset<T>, eta: T) -> Result<T> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = T::zero();
    for p in &dataset.samples {
        let pred = pair_predictor(candidate, reference, p.state, p.action_a, p.action_b)? / eta;
        let r = pred - p.reward_diff();
        total += r * r;
    }
    Ok(total / T::count(dataset.len()))
}

fn score_diff<T: Real>(reference: &Policy<T>, state: usize, a: usize, b: usize) -> Result<Vec<T>> {
    let ga = reference.grad_log_prob(state, a)?;
    let gb = reference.grad_log_prob(state, b)?;
    Ok(ga.into_iter().zip(gb).map(|(x, y)| x - y).collect())
}

/// Rows `(1/eta) * (grad ln pi(y_a|s) - grad ln pi(y_b|s))` at the
/// reference, targets `r_a - r_b`. The linear residual at `delta` equals
/// the regression loss of `reference + delta` for every `delta`.
pub fn build_design<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>, eta: T) -> Result<(DMatrix<T>, DVector<T>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n, d) = (dataset.len(), reference.param_dim());
    let mut x = DMatrix::zeros(n, d);
    let mut b = DVector::zeros(n);
    let inv_eta = T::one() / eta;
    for (i, p) in dataset.samples.iter().enumerate() {
        for (j, v) in score_diff(reference, p.state, p.action_a, p.action_b)?.into_iter().enumerate() {
            x[(i, j)] = v * inv_eta;
        }
        b[i] = p.reward_diff();
    }
    Ok((x, b))
}

fn mean_sq_residual<T: Real>(x: &DMatrix<T>, b: &DVector<T>, delta: &DVector<T>) -> T {
    let r = x * delta - b;
    r.dot(&r) / T::count(b.len())
}

/// Min-norm least-squares step via the SVD of the design.
pub fn solve_update_minnorm<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>, eta: T, cutoff: T) -> Result<UpdateSolution<T>> {
    let (x, b) = build_design(dataset, reference, eta)?;
    let sol = lstsq_min_norm(&x, &b, cutoff);
    let residual = mean_sq_residual(&x, &b, &sol.x);
    let delta: Vec<T> = sol.x.iter().copied().collect();
    Ok(UpdateSolution {
        next_policy: reference.shifted(&delta),
        delta,
        residual,
        cutoff,
        rank: sol.rank,
    })
}

/// `F = (1/2N) sum (g_a - g_b)(g_a - g_b)^T` at the reference.
#[derive(Clone, Debug)]
pub struct FisherEstimate<T: Real> {
    pub matrix: DMatrix<T>,
    pub sample_count: usize,
}

pub fn empirical_fisher<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>) -> Result<FisherEstimate<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = reference.param_dim();
    let mut f = DMatrix::zeros(d, d);
    for p in &dataset.samples {
        let g = DVector::from_vec(score_diff(reference, p.state, p.action_a, p.action_b)?);
        f.ger(T::one(), &g, &g, T::one());
    }
    let scale = T::one() / (T::of(2.0) * T::count(dataset.len()));
    Ok(FisherEstimate {
        matrix: f * scale,
        sample_count: dataset.len(),
    })
}

/// `(1/2N) sum [g_a (r_a - r_b) + g_b (r_b - r_a)]`, the leave-one-out style
/// gradient with the partner's reward as baseline.
pub fn paired_gradient<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>) -> Result<DVector<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut g = DVector::zeros(reference.param_dim());
    for p in &dataset.samples {
        let ga = DVector::from_vec(reference.grad_log_prob(p.state, p.action_a)?);
        let gb = DVector::from_vec(reference.grad_log_prob(p.state, p.action_b)?);
        let diff = p.reward_diff();
        g.axpy(diff, &ga, T::one());
        g.axpy(-diff, &gb, T::one());
    }
    Ok(g / (T::of(2.0) * T::count(dataset.len())))
}

/// `delta = eta * pinv(F) * gradient`, with the cutoff applied to the
/// eigenvalues of `F`.
pub fn npg_update<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>, eta: T, cutoff: T) -> Result<UpdateSolution<T>> {
    let fisher = empirical_fisher(dataset, reference)?;
    let grad = paired_gradient(dataset, reference)?;
    let (pinv, rank) = pinv_symmetric(&fisher.matrix, cutoff);
    let delta_v = pinv * grad * eta;
    let delta: Vec<T> = delta_v.iter().copied().collect();
    let next_policy = reference.shifted(&delta);
    let residual = regression_loss(&next_policy, reference, dataset, eta)?;
    Ok(UpdateSolution {
        delta,
        next_policy,
        residual,
        cutoff,
        rank,
    })
}

/// Plain gradient step without Fisher preconditioning.
pub fn rloo_update<T: Real>(dataset: &Dataset<T>, reference: &Policy<T>, step: T) -> Result<Policy<T>> {
    let g = paired_gradient(dataset, reference)? * step;
    Ok(reference.shifted(g.as_slice()))
}

/// Closed-form KL-regularized improvement `next ~ ref * exp(eta * Q)`.
#[derive(Clone, Debug)]
pub struct PmdResult<T> {
    /// Tabular, with logits `ln ref + eta * Q`.
    pub next_policy: Policy<T>,
    /// `ln Z(s)` per state.
    pub log_partition: Vec<T>,
}

pub fn pmd_exact<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, reference: &P, eta: T) -> Result<PmdResult<T>> {
    let values = compute_values(mdp, reference)?;
    Ok(pmd_from_values(reference, &values, eta))
}

pub(crate) fn pmd_from_values<T: Real, P: ActionDistribution<T> + ?Sized>(reference: &P, values: &ValueTables<T>, eta: T) -> PmdResult<T> {
    let (n, y_count) = (reference.num_states(), reference.action_count());
    let mut logits = Vec::with_capacity(n * y_count);
    let mut log_partition = Vec::with_capacity(n);
    for s in 0..n {
        let scores: Vec<T> = reference
            .probs_at(s)
            .iter()
            .zip(&values.q[s])
            .map(|(&p, &q)| p.ln() + eta * q)
            .collect();
        let lz = log_sum_exp(&scores);
        logits.extend(scores.iter().map(|&x| x - lz));
        log_partition.push(lz);
    }
    let next = TabularSoftmax::new(n, y_count, logits).expect("shape taken from reference");
    PmdResult {
        next_policy: Policy::Tabular(next),
        log_partition,
    }
}

/// The regression with exact targets: one row per turn, state and ordered
/// action pair, weighted by `d_h(s) pi(y|s) pi(y'|s) / H`, target
/// `Q(s,y) - Q(s,y')`.
pub fn exact_target_update<T: Real>(mdp: &TurnMdp<T>, reference: &Policy<T>, eta: T, cutoff: T) -> Result<UpdateSolution<T>> {
    let values = compute_values(mdp, reference)?;
    exact_update_from_values(mdp, reference, &values, eta, cutoff)
}

fn exact_update_from_values<T: Real>(
    mdp: &TurnMdp<T>,
    reference: &Policy<T>,
    values: &ValueTables<T>,
    eta: T,
    cutoff: T,
) -> Result<UpdateSolution<T>> {
    let y_count = mdp.action_count();
    let h_weight = T::one() / T::count(mdp.horizon());
    let inv_eta = T::one() / eta;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for s in 0..mdp.num_states() {
        let d = values.occupancy[s];
        if d <= T::zero() {
            continue;
        }
        let probs = reference.action_probs(s)?;
        for a in 0..y_count {
            for b in 0..y_count {
                let w = d * probs[a] * probs[b] * h_weight;
                if a == b || w <= T::zero() {
                    continue;
                }
                rows.push(score_diff(reference, s, a, b)?.into_iter().map(|v| v * inv_eta).collect());
                targets.push(values.q[s][a] - values.q[s][b]);
                weights.push(w);
            }
        }
    }
    let dim = reference.param_dim();
    if rows.is_empty() {
        return Ok(UpdateSolution {
            delta: vec![T::zero(); dim],
            next_policy: reference.clone(),
            residual: T::zero(),
            cutoff,
            rank: 0,
        });
    }
    let mut x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let mut b = DVector::from_vec(targets);
    apply_row_weights(&mut x, &mut b, &weights);
    let sol = lstsq_min_norm(&x, &b, cutoff);
    // rows already carry sqrt(w) and the weights sum to one over all pairs,
    // so the plain sum of squares is the weighted mean residual
    let r = &x * &sol.x - &b;
    let residual = r.dot(&r);
    let delta: Vec<T> = sol.x.iter().copied().collect();
    Ok(UpdateSolution {
        next_policy: reference.shifted(&delta),
        delta,
        residual,
        cutoff,
        rank: sol.rank,
    })
}

/// Collect a last-turn dataset with one of the single-turn schemes and
/// solve the regression on it.
#[allow(clippy::too_many_arguments)]
pub fn last_turn_update<T: Real>(
    mdp: &TurnMdp<T>,
    reference: &Policy<T>,
    eta: T,
    scheme: Scheme,
    buffer: Option<&OfflineBuffer<T>>,
    n: usize,
    seed: u64,
    cutoff: T,
) -> Result<UpdateSolution<T>> {
    if !scheme.last_turn_only() {
        return Err(Error::Config(format!("{scheme} is not a last-turn scheme")));
    }
    let ds = collect_dataset(mdp, reference, n, scheme, buffer, seed)?;
    solve_update_minnorm(&ds, reference, eta, cutoff)
}

/// Step-size rule across iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSchedule {
    Constant(f64),
    Named(EtaRule),
    PerIteration(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaRule {
    /// `sqrt(ln Y / (C^2 T))` with `C = r_max - r_min`.
    Lemma3,
}

impl EtaSchedule {
    pub fn lemma3_value(action_count: usize, span: f64, iterations: usize) -> f64 {
        ((action_count as f64).ln() / (span * span * iterations.max(1) as f64)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |x: f64| !(x.is_finite() && x > 0.0);
        match self {
            EtaSchedule::Constant(x) if bad(*x) => Err(Error::Config(format!("eta must be positive and finite, got {x}"))),
            EtaSchedule::PerIteration(v) if v.is_empty() || v.iter().any(|&x| bad(x)) => {
                Err(Error::Config("eta list must be non-empty with positive finite entries".into()))
            }
            _ => Ok(()),
        }
    }

    /// Step size at iteration `t` (0-based); lists repeat their last entry.
    pub fn at(&self, t: usize, action_count: usize, span: f64, iterations: usize) -> f64 {
        match self {
            EtaSchedule::Constant(x) => *x,
            EtaSchedule::Named(EtaRule::Lemma3) => Self::lemma3_value(action_count, span, iterations),
            EtaSchedule::PerIteration(v) => v[t.min(v.len() - 1)],
        }
    }
}

/// How a policy is improved at each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    /// Sampled regression under a collection scheme.
    Regression { scheme: Scheme, samples: usize },
    /// Regression on exact Q-difference targets.
    ExactTargets,
    /// Closed-form mirror-descent step.
    PmdExact,
    /// Unpreconditioned paired gradient with step `eta`.
    Rloo { samples: usize },
}

#[derive(Clone, Debug, Default)]
pub enum Comparator<T> {
    /// Greedy with respect to the exact Q of the run's best iterate.
    #[default]
    GreedyBestIterate,
    Fixed(ActionTable<T>),
}

#[derive(Clone, Debug)]
pub struct RunSpec<'a, T> {
    pub iterations: usize,
    pub eta: EtaSchedule,
    pub rule: UpdateRule,
    pub offline: Option<&'a OfflineBuffer<T>>,
    pub cutoff: f64,
    /// KL-shaping coefficient against the initial policy.
    pub gamma: f64,
    pub comparator: Comparator<T>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterateMetrics {
    pub iteration: usize,
    pub return_j: f64,
    pub kl_to_base: f64,
    /// Residual of the update taken from this iterate; absent for the last
    /// iterate and for rules without a regression.
    pub regression_residual: Option<f64>,
    pub gap_to_comparator: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult<T> {
    pub policies: Vec<Policy<T>>,
    pub metrics: Vec<IterateMetrics>,
    pub etas: Vec<f64>,
    pub comparator: ActionTable<T>,
    pub comparator_return: f64,
    pub config: serde_json::Value,
    pub seed: u64,
}

/// `(1/H) sum_h sum_s d_h(s) KL(pi(.|s) || base(.|s))` under the occupancy of `pi`.
pub fn kl_to_base<T: Real>(mdp: &TurnMdp<T>, pi: &Policy<T>, base: &Policy<T>) -> Result<T> {
    let d = occupancy(mdp, pi)?;
    let mut total = T::zero();
    for (s, &ds) in d.iter().enumerate() {
        if ds > T::zero() {
            total += ds * kl_rows(&pi.action_probs(s)?, &base.action_probs(s)?);
        }
    }
    Ok(total / T::count(mdp.horizon()))
}

/// Run the iteration loop for `spec.iterations` steps from `initial`.
pub fn refuel_iterate<T: Real>(mdp: &TurnMdp<T>, initial: &Policy<T>, spec: &RunSpec<'_, T>) -> Result<RunResult<T>> {
    mdp.check_domain(initial)?;
    spec.eta.validate()?;
    let span = mdp.reward_span().to_f();
    let cutoff = T::of(spec.cutoff);
    let gamma = T::of(spec.gamma);
    let mut policies = vec![initial.clone()];
    let mut residuals = Vec::with_capacity(spec.iterations);
    let mut etas = Vec::with_capacity(spec.iterations);
    for t in 0..spec.iterations {
        let current = policies.last().expect("non-empty");
        let eta_f = spec.eta.at(t, mdp.action_count(), span, spec.iterations);
        let eta = T::of(eta_f);
        let data_seed = rng::derive(spec.seed, t as u64);
        let (next, residual) = match spec.rule {
            UpdateRule::Regression { scheme, samples } => {
                let mut ds = collect_dataset(mdp, current, samples, scheme, spec.offline, data_seed)?;
                shape_dataset(&mut ds, current, initial, gamma)?;
                let sol = solve_update_minnorm(&ds, current, eta, cutoff)?;
                (sol.next_policy, Some(sol.residual.to_f()))
            }
            UpdateRule::ExactTargets => {
                let sol = exact_target_update(mdp, current, eta, cutoff)?;
                (sol.next_policy, Some(sol.residual.to_f()))
            }
            UpdateRule::PmdExact => (pmd_exact(mdp, current, eta)?.next_policy, None),
            UpdateRule::Rloo { samples } => {
                let mut ds = collect_dataset(mdp, current, samples, Scheme::Refuel, None, data_seed)?;
                shape_dataset(&mut ds, current, initial, gamma)?;
                (rloo_update(&ds, current, eta)?, None)
            }
        };
        etas.push(eta_f);
        residuals.push(residual);
        policies.push(next);
    }

    let values: Vec<ValueTables<T>> = policies.iter().map(|p| compute_values(mdp, p)).collect::<Result<_>>()?;
    let comparator = match &spec.comparator {
        Comparator::Fixed(table) => {
            mdp.check_domain(table)?;
            table.clone()
        }
        Comparator::GreedyBestIterate => {
            // ties go to the earliest iterate
            let best = (0..values.len()).fold(0, |b, i| if values[i].ret > values[b].ret { i } else { b });
            ActionTable::greedy(&values[best].q)
        }
    };
    let comparator_return = compute_values(mdp, &comparator)?.ret.to_f();
    let mut metrics = Vec::with_capacity(policies.len());
    for (t, (pi, vt)) in policies.iter().zip(&values).enumerate() {
        metrics.push(IterateMetrics {
            iteration: t,
            return_j: vt.ret.to_f(),
            kl_to_base: kl_to_base(mdp, pi, initial)?.to_f(),
            regression_residual: residuals.get(t).copied().flatten(),
            gap_to_comparator: comparator_return - vt.ret.to_f(),
        });
    }
    Ok(RunResult {
        policies,
        metrics,
        etas,
        comparator,
        comparator_return,
        config: serde_json::Value::Null,
        seed: spec.seed,
    })
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl<T: Real> RunResult<T> {
    pub fn final_metrics(&self) -> &IterateMetrics {
        self.metrics.last().expect("a run always has its initial iterate")
    }

    /// Mean residual over the iterations that ran a regression.
    pub fn mean_residual(&self) -> Option<f64> {
        let rs: Vec<f64> = self.metrics.iter().filter_map(|m| m.regression_residual).collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("t,J,KL,residual,gap\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.iteration,
                fmt_f64(m.return_j),
                fmt_f64(m.kl_to_base),
                opt_cell(m.regression_residual),
                fmt_f64(m.gap_to_comparator)
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "seed": self.seed,
            "iterations": self.metrics.len() - 1,
            "final": self.final_metrics(),
            "mean_residual": self.mean_residual(),
            "comparator_return": self.comparator_return,
            "etas": self.etas,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        crate::io::write_json(&dir.join("summary.json"), &self.summary_json())?;
        crate::io::write_json(&dir.join("policy.json"), &self.policies.last().expect("non-empty").to_file())?;
        Ok(())
    }
}
