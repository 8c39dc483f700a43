//! The self-check suite behind the `check` command: every analytic claim
//! the library encodes, run on seeded instances and reported as JSON.

use crate::error::Result;
use crate::harness::{gen_random_mdp, random_loglinear_policy, random_tabular_policy, RandomMdpSpec};
use crate::optimizers::{exact_target_update, pmd_exact, refuel_iterate, Comparator, EtaSchedule, RunSpec, UpdateRule};
use crate::policy::{ActionDistribution, Policy};
use crate::rng;
use crate::rollout::{collect_dataset, Scheme};
use crate::scalar::{CROSS_ORACLE_TOL, DEFAULT_CUTOFF, SOLVER_TOL};
use crate::theory::{
    apc_error, check_fisher_unbiased, check_minnorm_claim, check_performance_difference, check_regression_variance_identity,
    prop2_counterexample, regret_harness, theorem1_gap, CenteredAdversary,
};
use crate::turn_mdp::{occupancy, validate, TurnMdp};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub name: &'static str,
    pub passed: bool,
    pub measured: Value,
    pub tolerance: Value,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckEntry>,
}

/// Seeded random instance with `H <= 4`, at most 5 states per turn and at
/// most 4 actions.
pub fn small_instance(seed: u64) -> TurnMdp<f64> {
    let mut r = rng::seeded(rng::derive_label(seed, "small-instance"));
    use rand::Rng as _;
    let states = r.random_range(1..=5);
    let spec = RandomMdpSpec {
        horizon: r.random_range(1..=4),
        states_per_turn: states,
        actions: r.random_range(1..=4),
        branching: r.random_range(1..=states),
        reward_range: [0.0, 1.0],
        seed,
    };
    validate(&gen_random_mdp(&spec).expect("generator shapes are valid")).expect("generated instances validate")
}

/// Largest total-variation distance between two policies over states with
/// positive occupancy under `under`.
pub fn max_reachable_tv<A, B, U>(mdp: &TurnMdp<f64>, a: &A, b: &B, under: &U) -> Result<f64>
where
    A: ActionDistribution<f64> + ?Sized,
    B: ActionDistribution<f64> + ?Sized,
    U: ActionDistribution<f64> + ?Sized,
{
    let d = occupancy(mdp, under)?;
    let mut worst = 0.0f64;
    for s in (0..mdp.num_states()).filter(|&s| d[s] > 0.0) {
        let tv: f64 = a.probs_at(s).iter().zip(b.probs_at(s)).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        worst = worst.max(tv);
    }
    Ok(worst)
}

fn entry(name: &'static str, passed: bool, measured: Value, tolerance: Value, seed: u64) -> CheckEntry {
    CheckEntry {
        name,
        passed,
        measured,
        tolerance,
        seed,
    }
}

type CheckFn = fn(u64) -> Result<CheckEntry>;

fn prop2(seed: u64) -> Result<CheckEntry> {
    let (q, apc) = prop2_counterexample(1.0);
    Ok(entry(
        "prop2_counterexample",
        (q - 1.0).abs() <= 1e-12 && apc <= 1e-12,
        json!({"q_error": q, "apc_error": apc}),
        json!({"q_error": "1 +- 1e-12", "apc_error": "<= 1e-12"}),
        seed,
    ))
}

fn performance_difference(seed: u64) -> Result<CheckEntry> {
    let mut worst = 0.0f64;
    for i in 0..30 {
        let s = rng::derive(seed, i);
        let mdp = small_instance(s);
        let a = random_tabular_policy(mdp.num_states(), mdp.action_count(), 2.0, rng::derive(s, 1));
        let b = random_tabular_policy(mdp.num_states(), mdp.action_count(), 2.0, rng::derive(s, 2));
        worst = worst.max(check_performance_difference(&mdp, &a, &b)?);
    }
    Ok(entry(
        "performance_difference",
        worst < CROSS_ORACLE_TOL,
        json!({"max_residual": worst, "instances": 30}),
        json!(CROSS_ORACLE_TOL),
        seed,
    ))
}

fn exact_targets_match_pmd(seed: u64) -> Result<CheckEntry> {
    let mut worst = 0.0f64;
    for i in 0..10 {
        let s = rng::derive(seed, i);
        let mdp = small_instance(s);
        let pi = random_tabular_policy(mdp.num_states(), mdp.action_count(), 1.0, rng::derive(s, 1));
        for eta in [0.1, 1.0, 10.0] {
            let a = exact_target_update(&mdp, &pi, eta, DEFAULT_CUTOFF)?.next_policy;
            let b = pmd_exact(&mdp, &pi, eta)?.next_policy;
            worst = worst.max(max_reachable_tv(&mdp, &a, &b, &pi)?);
        }
    }
    Ok(entry(
        "exact_targets_match_pmd",
        worst < SOLVER_TOL,
        json!({"max_tv": worst}),
        json!(SOLVER_TOL),
        seed,
    ))
}

fn fisher(seed: u64) -> Result<CheckEntry> {
    let mdp = validate(&gen_random_mdp(&RandomMdpSpec {
        horizon: 2,
        states_per_turn: 2,
        actions: 3,
        branching: 2,
        reward_range: [0.0, 1.0],
        seed,
    })?)?;
    let pi = random_tabular_policy(4, 3, 1.0, seed);
    let c = check_fisher_unbiased(&mdp, &pi, 2000, 30, seed)?;
    Ok(entry(
        "fisher_unbiased",
        c.passes(4.0),
        serde_json::to_value(&c)?,
        json!({"max_z": "< 4"}),
        seed,
    ))
}

fn minnorm(seed: u64) -> Result<CheckEntry> {
    let mut worst = 0.0f64;
    for i in 0..10 {
        let s = rng::derive(seed, i);
        let mdp = small_instance(s);
        let pi = random_tabular_policy(mdp.num_states(), mdp.action_count(), 1.0, s);
        let ds = collect_dataset(&mdp, &pi, 50 + 10 * i as usize, Scheme::Refuel, None, s)?;
        worst = worst.max(check_minnorm_claim(&ds, &pi, 1.0, DEFAULT_CUTOFF)?);
    }
    Ok(entry(
        "minnorm_closed_form",
        worst < SOLVER_TOL,
        json!({"max_param_diff": worst}),
        json!(SOLVER_TOL),
        seed,
    ))
}

fn apc_nesting(seed: u64) -> Result<CheckEntry> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let s = rng::derive(seed, i);
        let mdp = small_instance(s);
        let ll = random_loglinear_policy(mdp.num_states(), mdp.action_count(), 1 + i as usize % 3, s);
        let r = apc_error(&mdp, &ll)?;
        worst = worst.max(r.apc_error - r.q_approx_error.min(r.advantage_error));
    }
    Ok(entry(
        "apc_nesting",
        worst <= 1e-10,
        json!({"max_excess": worst}),
        json!(1e-10),
        seed,
    ))
}

fn regret(seed: u64) -> Result<CheckEntry> {
    let (mut runs, mut violations, mut worst_ratio) = (0, 0, 0.0f64);
    for (i, &(y, t)) in [(2usize, 50usize), (2, 200), (4, 50), (4, 200), (8, 50), (8, 200)]
        .iter()
        .enumerate()
    {
        let advs = [
            CenteredAdversary::Noise { c: 1.0 },
            CenteredAdversary::ChaseLeastLikely { c: 1.0 },
            CenteredAdversary::FixedBias { c: 1.0, bias: None },
        ];
        for (k, mut adv) in advs.into_iter().enumerate() {
            let trace = regret_harness(y, t, 1.0, &mut adv, rng::derive(seed, (i * 3 + k) as u64))?;
            runs += 1;
            violations += usize::from(!trace.within_bound());
            worst_ratio = worst_ratio.max(trace.worst_comparator_sum() / trace.bound_value);
        }
    }
    Ok(entry(
        "regret_bound",
        violations == 0,
        json!({"runs": runs, "violations": violations, "worst_sum_over_bound": worst_ratio}),
        json!("sum <= 2C sqrt(T ln Y)"),
        seed,
    ))
}

fn variance_identity(seed: u64) -> Result<CheckEntry> {
    let (mut worst_dev, mut worst_z) = (0.0f64, 0.0f64);
    for i in 0..10 {
        let s = rng::derive(seed, i);
        let mdp = small_instance(s);
        let pi = random_tabular_policy(mdp.num_states(), mdp.action_count(), 1.0, s);
        let c = check_regression_variance_identity(&mdp, &pi, if i < 3 { 20_000 } else { 0 }, s)?;
        worst_dev = worst_dev.max(c.exact_deviation());
        worst_z = worst_z.max(c.mc_z.unwrap_or(0.0));
    }
    Ok(entry(
        "variance_identity",
        worst_dev < 1e-12 && worst_z < 4.0,
        json!({"max_exact_dev": worst_dev, "max_mc_z": worst_z}),
        json!({"exact": 1e-12, "mc_z": 4.0}),
        seed,
    ))
}

fn gap_trend(seed: u64) -> Result<CheckEntry> {
    let mdp: TurnMdp<f64> = validate(&gen_random_mdp(&RandomMdpSpec {
        horizon: 3,
        states_per_turn: 4,
        actions: 3,
        branching: 2,
        reward_range: [0.0, 1.0],
        seed,
    })?)?;
    let initial = Policy::uniform_tabular(mdp.num_states(), mdp.action_count());
    let spec = RunSpec {
        iterations: 300,
        eta: EtaSchedule::Named(crate::optimizers::EtaRule::Lemma3),
        rule: UpdateRule::ExactTargets,
        offline: None,
        cutoff: DEFAULT_CUTOFF,
        gamma: 0.0,
        comparator: Comparator::GreedyBestIterate,
        seed,
    };
    let run = refuel_iterate(&mdp, &initial, &spec)?;
    let rep = theorem1_gap(&mdp, &run, &run.comparator)?;
    let tol = 0.05 * mdp.reward_span();
    Ok(entry(
        "gap_trend",
        rep.min_gap <= tol,
        json!({"min_gap": rep.min_gap, "argmin": rep.argmin, "epsilon_hat": rep.epsilon_hat, "c_state": rep.coverage.c_state.value(), "c_action": rep.coverage.c_action.value()}),
        json!(tol),
        seed,
    ))
}

const CHECKS: [CheckFn; 9] = [
    prop2,
    performance_difference,
    exact_targets_match_pmd,
    fisher,
    minnorm,
    apc_nesting,
    regret,
    variance_identity,
    gap_trend,
];

/// Run every check; each derives its own seed from `seed` and its position.
pub fn run_check_suite(seed: u64) -> Result<CheckReport> {
    let checks = CHECKS
        .par_iter()
        .enumerate()
        .map(|(i, f)| f(rng::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
