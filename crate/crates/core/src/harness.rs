//! Instance generators, experiment configuration, the method-comparison
//! runner and the per-turn branch winrate.

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_json, write_json};
use crate::optimizers::{refuel_iterate, Comparator, EtaSchedule, RunResult, RunSpec, UpdateRule};
use crate::policy::{ActionDistribution, FeatureMap, LogLinear, Policy, PolicyFile, TabularSoftmax};
use crate::rng::{self, Rng};
use crate::rollout::{rollin, rollout_from, OfflineBuffer, Scheme};
use crate::scalar::{inverse_cdf, Real, DEFAULT_CUTOFF};
use crate::turn_mdp::{occupancy_from, validate, MdpFile, TurnMdp};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

/// Dirichlet(1, ..., 1) weights.
fn flat_dirichlet(k: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Shape of a randomly generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    pub horizon: usize,
    pub states_per_turn: usize,
    pub actions: usize,
    pub branching: usize,
    #[serde(default = "unit_range")]
    pub reward_range: [f64; 2],
    pub seed: u64,
}

fn unit_range() -> [f64; 2] {
    [0.0, 1.0]
}

/// Layered instance with `branching` distinct successors per `(s, y)`,
/// Dirichlet(1) transition weights and initial distribution, and uniform
/// terminal rewards. State ids are `1000 * turn + index`.
pub fn gen_random_mdp(spec: &RandomMdpSpec) -> Result<MdpFile> {
    let &RandomMdpSpec {
        horizon,
        states_per_turn,
        actions,
        branching,
        reward_range: [lo, hi],
        seed,
    } = spec;
    if horizon == 0 || states_per_turn == 0 || actions == 0 || branching == 0 {
        return Err(Error::InvalidMdp("generator counts must be at least 1".into()));
    }
    if branching > states_per_turn {
        return Err(Error::InvalidMdp(format!(
            "branching {branching} exceeds {states_per_turn} states per turn"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidMdp(format!("reward range [{lo}, {hi}] is empty")));
    }
    let mut r = rng::seeded(seed);
    let id = |h: usize, i: usize| (1000 * h + i) as u64;
    let states_per_turn_ids: Vec<Vec<u64>> = (1..=horizon).map(|h| (0..states_per_turn).map(|i| id(h, i)).collect()).collect();
    let initial_dist = flat_dirichlet(states_per_turn, &mut r);
    let transition = (1..horizon)
        .map(|h| {
            (0..states_per_turn)
                .map(|_| {
                    (0..actions)
                        .map(|_| {
                            let mut succ = index::sample(&mut r, states_per_turn, branching).into_vec();
                            succ.sort_unstable();
                            let w = flat_dirichlet(branching, &mut r);
                            succ.into_iter().zip(w).map(|(i, p)| (id(h + 1, i), p)).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let terminal_reward = (0..states_per_turn)
        .map(|_| (0..actions).map(|_| r.random_range(lo..=hi)).collect())
        .collect();
    let file = MdpFile {
        horizon,
        states_per_turn: states_per_turn_ids,
        action_count: actions,
        initial_dist,
        transition,
        terminal_reward,
        reward_range: [lo, hi],
        metadata: Some(json!({ "generator": "random", "spec": spec })),
    };
    validate::<f64>(&file)?;
    Ok(file)
}

/// Tabular softmax policy with logits uniform in `[-scale, scale]`.
pub fn random_tabular_policy(num_states: usize, actions: usize, scale: f64, seed: u64) -> Policy<f64> {
    let mut r = rng::seeded(seed);
    let logits = (0..num_states * actions).map(|_| r.random_range(-scale..=scale)).collect();
    Policy::Tabular(TabularSoftmax::new(num_states, actions, logits).expect("shape matches"))
}

/// Log-linear policy with features and weights uniform in `[-1, 1]`.
pub fn random_loglinear_policy(num_states: usize, actions: usize, dim: usize, seed: u64) -> LogLinear<f64> {
    let mut r = rng::seeded(seed);
    let rows = (0..num_states)
        .map(|_| {
            (0..actions)
                .map(|_| (0..dim).map(|_| r.random_range(-1.0..=1.0)).collect())
                .collect()
        })
        .collect();
    let weights = (0..dim).map(|_| r.random_range(-1.0..=1.0)).collect();
    LogLinear::new(weights, Arc::new(FeatureMap::new(rows).expect("rectangular"))).expect("dimension matches")
}

/// Probability the reference takes the high-value action at every state.
pub const STRESS_ENGAGE_PROB: f64 = 0.04;

/// Three-turn instance whose high-reward branch needs an action the
/// reference rarely takes, plus that reference policy (identical at every
/// state). The seed jitters the terminal rewards without changing their
/// order.
pub fn gen_covariate_shift_mdp(seed: u64) -> (MdpFile, PolicyFile) {
    let mut r = rng::seeded(seed);
    let mut jitter = |x: f64| x + r.random_range(-0.02..=0.02);
    // turn 1: A; turn 2: G, B1, B2; turn 3: G3, R, X
    let states_per_turn = vec![vec![0], vec![10, 11, 12], vec![20, 21, 22]];
    let transition = vec![
        vec![vec![
            vec![(10, 0.9), (11, 0.1)],
            vec![(11, 0.5), (12, 0.5)],
            vec![(11, 0.3), (12, 0.7)],
        ]],
        vec![
            vec![vec![(20, 0.9), (22, 0.1)], vec![(21, 0.3), (22, 0.7)], vec![(22, 1.0)]],
            vec![vec![(21, 0.5), (22, 0.5)], vec![(22, 1.0)], vec![(21, 0.2), (22, 0.8)]],
            vec![vec![(21, 0.5), (22, 0.5)], vec![(22, 1.0)], vec![(21, 0.2), (22, 0.8)]],
        ],
    ];
    let terminal_reward = vec![
        vec![1.0, jitter(0.5), jitter(0.45)],
        vec![jitter(0.62), jitter(0.55), jitter(0.48)],
        vec![jitter(0.3), 0.1, jitter(0.14)],
    ];
    let mdp = MdpFile {
        horizon: 3,
        states_per_turn,
        action_count: 3,
        initial_dist: vec![1.0],
        transition,
        terminal_reward,
        reward_range: [0.1, 1.0],
        metadata: Some(json!({
            "generator": "covariate-shift",
            "seed": seed,
            "recipe": "action 0 leads from the start state to the good turn-2 state G w.p. 0.9 and from G to the \
                       best terminal state G3 w.p. 0.9; other actions drift to low-value states. The reference \
                       takes action 0 w.p. 0.04 everywhere, so offline prefixes rarely reach G or G3.",
            "reference_action_probs": [STRESS_ENGAGE_PROB, (1.0 - STRESS_ENGAGE_PROB) / 2.0, (1.0 - STRESS_ENGAGE_PROB) / 2.0],
        })),
    };
    let other = ((1.0 - STRESS_ENGAGE_PROB) / 2.0).ln();
    let row = vec![STRESS_ENGAGE_PROB.ln(), other, other];
    (mdp, PolicyFile::Tabular { logits: vec![row; 7] })
}

/// One trial: rollin to turn `h` with the reference, complete once with the
/// reference and once with `policy` from the same state. Scores 1 when the
/// policy's terminal reward is strictly larger, 0.5 on ties. The reference
/// completion is drawn first, so two policies scored under the same seed
/// face identical prefixes and opponents.
pub fn branch_winrate<T: Real, P: ActionDistribution<T> + Sync + ?Sized, R: ActionDistribution<T> + Sync + ?Sized>(
    mdp: &TurnMdp<T>,
    policy: &P,
    reference: &R,
    h: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("branch winrate needs at least one trial".into()));
    }
    if !(1..=mdp.horizon()).contains(&h) {
        return Err(Error::Config(format!("turn {h} outside 1..={}", mdp.horizon())));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let s = rollin(mdp, reference, h, &mut r);
            let y_ref = inverse_cdf(&reference.probs_at(s), r.random::<f64>());
            let r_ref = rollout_from(mdp, reference, s, y_ref, &mut r);
            let y = inverse_cdf(&policy.probs_at(s), r.random::<f64>());
            let r_pol = rollout_from(mdp, policy, s, y, &mut r);
            score(r_pol, r_ref)
        })
        // scores are multiples of 0.5, so the sum is exact in any order
        .sum();
    Ok(total / n as f64)
}

fn score<T: Real>(a: T, b: T) -> f64 {
    if a > b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

/// Exact value of [`branch_winrate`] by propagating both completions to
/// terminal-reward distributions.
pub fn branch_winrate_exact<T: Real, P: ActionDistribution<T> + ?Sized, R: ActionDistribution<T> + ?Sized>(
    mdp: &TurnMdp<T>,
    policy: &P,
    reference: &R,
    h: usize,
) -> Result<f64> {
    let rollin_occ = crate::turn_mdp::occupancy(mdp, reference)?;
    let last = mdp.states(mdp.horizon());
    let outcomes = |pi: &dyn Fn(usize) -> Vec<T>, occ: &[T]| -> Vec<(T, f64)> {
        let mut out = Vec::new();
        for s in last.clone() {
            for (y, p) in pi(s).iter().enumerate() {
                let w = (occ[s] * *p).to_f();
                if w > 0.0 {
                    out.push((mdp.reward(s, y), w));
                }
            }
        }
        out
    };
    let mut total = 0.0;
    for s in mdp.states(h) {
        let d = rollin_occ[s].to_f();
        if d == 0.0 {
            continue;
        }
        let from_ref = occupancy_from(mdp, reference, s)?;
        let from_pol = occupancy_from(mdp, policy, s)?;
        let ref_out = outcomes(&|x| reference.probs_at(x), &from_ref);
        let pol_out = outcomes(&|x| policy.probs_at(x), &from_pol);
        for &(ra, pa) in &pol_out {
            for &(rb, pb) in &ref_out {
                total += d * pa * pb * score(ra, rb);
            }
        }
    }
    Ok(total)
}

/// Training methods a config may list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Refuel,
    LtOffline,
    LtMixed,
    LtOnline,
    MtMixed,
    Rloo,
    PmdExact,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Refuel,
        Method::LtOffline,
        Method::LtMixed,
        Method::LtOnline,
        Method::MtMixed,
        Method::Rloo,
        Method::PmdExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rloo => "rloo",
            Method::PmdExact => "pmd-exact",
            m => m.scheme().expect("regression methods have a scheme").name(),
        }
    }

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Method::Refuel => Some(Scheme::Refuel),
            Method::LtOffline => Some(Scheme::LtOffline),
            Method::LtMixed => Some(Scheme::LtMixed),
            Method::LtOnline => Some(Scheme::LtOnline),
            Method::MtMixed => Some(Scheme::MtMixed),
            Method::Rloo | Method::PmdExact => None,
        }
    }

    pub fn samples(self) -> bool {
        self != Method::PmdExact
    }

    fn rule(self, n: usize) -> UpdateRule {
        match self {
            Method::Rloo => UpdateRule::Rloo { samples: n },
            Method::PmdExact => UpdateRule::PmdExact,
            m => UpdateRule::Regression {
                scheme: m.scheme().expect("regression method"),
                samples: n,
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSource {
    File { path: PathBuf },
    Random(RandomMdpSpec),
    CovariateShift { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPolicy {
    Uniform,
    /// The instance's shipped reference; uniform when there is none.
    Reference,
    File(PathBuf),
}

fn default_winrate_samples() -> usize {
    2000
}

fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}

fn default_initial() -> InitialPolicy {
    InitialPolicy::Reference
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub methods: Vec<Method>,
    pub iterations: usize,
    /// Samples per iteration for sampling methods.
    pub samples: usize,
    pub eta: EtaSchedule,
    #[serde(default)]
    pub gamma: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Base policy: the first iterate, the KL anchor and the winrate opponent.
    #[serde(default = "default_initial")]
    pub initial: InitialPolicy,
    #[serde(default = "default_winrate_samples")]
    pub winrate_samples: usize,
    /// Offline buffer size; `10 * samples` when absent.
    #[serde(default)]
    pub buffer_size: Option<usize>,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field checks that must pass before any run starts.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("method list has duplicates".into()));
        }
        if self.samples == 0 && self.methods.iter().any(|m| m.samples()) {
            return Err(Error::Config("samples must be at least 1 for sampling methods".into()));
        }
        if self.winrate_samples == 0 {
            return Err(Error::Config("winrate_samples must be at least 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} must be finite and non-negative", self.gamma)));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::Config(format!("cutoff {} must lie in (0, 1)", self.cutoff)));
        }
        if self.buffer_size == Some(0) {
            return Err(Error::Config("buffer_size must be at least 1".into()));
        }
        self.eta.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn buffer_size(&self) -> usize {
        self.buffer_size.unwrap_or(10 * self.samples)
    }
}

/// Instance and optional reference policy named by a config.
pub fn load_instance(source: &MdpSource) -> Result<(TurnMdp<f64>, Option<Policy<f64>>)> {
    match source {
        MdpSource::File { path } => {
            let file: MdpFile = read_json(path)?;
            Ok((validate(&file)?, None))
        }
        MdpSource::Random(spec) => Ok((validate(&gen_random_mdp(spec)?)?, None)),
        MdpSource::CovariateShift { seed } => {
            let (mdp, reference) = gen_covariate_shift_mdp(*seed);
            Ok((validate(&mdp)?, Some(Policy::from_file(&reference)?)))
        }
    }
}

/// One method's run with its per-iterate winrates against the base policy.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: Method,
    pub run: RunResult<f64>,
    /// `winrates[t][h - 1]`.
    pub winrates: Vec<Vec<f64>>,
    /// Elapsed time; reported on stderr only, never written to artifacts.
    pub wall_seconds: f64,
}

impl MethodOutcome {
    pub fn final_winrates(&self) -> &[f64] {
        self.winrates.last().expect("at least the initial iterate")
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let horizon = self.final_winrates().len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["method", "t", "J", "KL", "residual", "gap"].map(String::from).to_vec();
        header.extend((1..=horizon).map(|h| format!("winrate_h{h}")));
        w.write_record(&header).map_err(csv_err)?;
        for (m, rates) in self.run.metrics.iter().zip(&self.winrates) {
            let mut row = vec![
                self.method.name().to_string(),
                m.iteration.to_string(),
                fmt_f64(m.return_j),
                fmt_f64(m.kl_to_base),
                m.regression_residual.map(fmt_f64).unwrap_or_default(),
                fmt_f64(m.gap_to_comparator),
            ];
            row.extend(rates.iter().map(|&x| fmt_f64(x)));
            w.write_record(&row).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let mut v = self.run.summary_json();
        v["method"] = json!(self.method.name());
        v["final_winrates"] = json!(self.final_winrates());
        v["winrate_note"] = json!(
            "branch-at-turn analog: reference rollin to turn h, then one completion each from the policy and the \
             reference, judged by the exact terminal reward with ties scored 0.5"
        );
        v
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        write_json(&dir.join("summary.json"), &self.summary_json())?;
        write_json(&dir.join("policy.json"), &self.run.policies.last().expect("non-empty").to_file())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub mdp: TurnMdp<f64>,
    pub base: Policy<f64>,
    pub methods: Vec<MethodOutcome>,
}

impl ExperimentOutcome {
    pub fn get(&self, method: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Train every configured method without touching the filesystem.
pub fn execute_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (mdp, reference) = load_instance(&config.mdp)?;
    let base = match &config.initial {
        InitialPolicy::Uniform => Policy::uniform_tabular(mdp.num_states(), mdp.action_count()),
        InitialPolicy::Reference => {
            reference.unwrap_or_else(|| Policy::Tabular(TabularSoftmax::uniform(mdp.num_states(), mdp.action_count())))
        }
        InitialPolicy::File(path) => Policy::from_file(&read_json::<PolicyFile>(path)?)?,
    };
    mdp.check_domain(&base)?;
    let needs_buffer = config.methods.iter().any(|m| m.scheme().is_some_and(Scheme::needs_buffer));
    let buffer = if needs_buffer {
        Some(OfflineBuffer::build(
            &mdp,
            &base,
            config.buffer_size(),
            rng::derive_label(config.seed, "offline-buffer"),
        )?)
    } else {
        None
    };
    let winrate_seed = rng::derive_label(config.seed, "winrate");
    let methods = config
        .methods
        .par_iter()
        .map(|&method| {
            let start = Instant::now();
            let uses_buffer = method.scheme().is_some_and(Scheme::needs_buffer);
            let spec = RunSpec {
                iterations: config.iterations,
                eta: config.eta.clone(),
                rule: method.rule(config.samples),
                offline: if uses_buffer { buffer.as_ref() } else { None },
                cutoff: config.cutoff,
                gamma: config.gamma,
                comparator: Comparator::GreedyBestIterate,
                seed: rng::derive_label(config.seed, method.name()),
            };
            let mut run = refuel_iterate(&mdp, &base, &spec)?;
            // the output location is not part of the experiment
            run.config = serde_json::to_value(config).map_err(Error::Json)?;
            if let Some(obj) = run.config.as_object_mut() {
                obj.remove("output_dir");
            }
            let winrates = run
                .policies
                .iter()
                .map(|pi| {
                    (1..=mdp.horizon())
                        .map(|h| branch_winrate(&mdp, pi, &base, h, config.winrate_samples, rng::derive(winrate_seed, h as u64)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodOutcome {
                method,
                run,
                winrates,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome { mdp, base, methods })
}

/// [`execute_experiment`] and write `mdp.json`, `base_policy.json`, one
/// directory per method and `comparison.csv` under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = execute_experiment(config)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("mdp.json"), &outcome.mdp.to_file())?;
    write_json(&dir.join("base_policy.json"), &outcome.base.to_file())?;
    for m in &outcome.methods {
        m.write(&dir.join(m.method.name()))?;
    }
    compare_methods(dir, &config.methods)?;
    Ok(outcome)
}

/// Method directories present under an artifact directory, in canonical order.
pub fn discover_methods(dir: &Path) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| dir.join(m.name()).join("metrics.csv").is_file())
        .collect()
}

/// One row per method from its written artifacts: final J, KL, mean
/// residual and per-turn winrates against the base policy. Written to
/// `comparison.csv` and returned.
pub fn compare_methods(dir: &Path, methods: &[Method]) -> Result<String> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to compare".into()));
    }
    let mut rows = Vec::new();
    let mut horizon = None;
    for &m in methods {
        let mdir = dir.join(m.name());
        let metrics = mdir.join("metrics.csv");
        let summary = mdir.join("summary.json");
        if !metrics.is_file() || !summary.is_file() {
            return Err(Error::MissingArtifact(mdir.display().to_string()));
        }
        let mut reader = csv::Reader::from_path(&metrics).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let last = reader
            .records()
            .last()
            .ok_or_else(|| Error::MissingArtifact(format!("{} has no rows", metrics.display())))?
            .map_err(csv_err)?;
        let col = |name: &str| -> Result<String> {
            let i = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingArtifact(format!("{}: column {name}", metrics.display())))?;
            Ok(last[i].to_string())
        };
        let rates: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("winrate_h"))
            .map(|(i, _)| last[i].to_string())
            .collect();
        if *horizon.get_or_insert(rates.len()) != rates.len() {
            return Err(Error::DomainMismatch("methods were run on instances of different horizon".into()));
        }
        let summary: serde_json::Value = read_json(&summary)?;
        let mut row = vec![m.name().to_string(), col("t")?, col("J")?, col("KL")?];
        row.push(summary["mean_residual"].as_f64().map(fmt_f64).unwrap_or_default());
        row.extend(rates);
        rows.push(row);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["method", "iterations", "J", "KL", "mean_residual"].map(String::from).to_vec();
    header.extend((1..=horizon.unwrap_or(0)).map(|h| format!("winrate_h{h}")));
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("comparison.csv"), &text)?;
    Ok(text)
}
