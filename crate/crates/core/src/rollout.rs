//! Rollins, resets and paired rollouts, and the data-collection schemes
//! that feed the regression update.
//!
//! Every sample of a dataset draws from its own generator, derived from the
//! collector seed and the sample index, so datasets are identical whatever
//! the thread count.

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::policy::{ActionDistribution, Policy};
use crate::rng::{self, Rng};
use crate::scalar::{inverse_cdf, Real};
use crate::turn_mdp::TurnMdp;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

/// One regression record: two independent completions from a shared
/// turn-`turn` prefix, reduced to their terminal rewards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSample<T> {
    pub turn: usize,
    pub state: usize,
    pub action_a: usize,
    pub action_b: usize,
    pub reward_a: T,
    pub reward_b: T,
}

impl<T: Real> PairSample<T> {
    pub fn reward_diff(&self) -> T {
        self.reward_a - self.reward_b
    }

    /// The same record with the two completions exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            action_a: self.action_b,
            action_b: self.action_a,
            reward_a: self.reward_b,
            reward_b: self.reward_a,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Uniform turn, on-policy rollin, on-policy pair.
    Refuel,
    /// Last turn only; prefix, actions and rewards read from the buffer.
    LtOffline,
    /// Last turn only; buffer prefix, on-policy pair.
    LtMixed,
    /// Last turn only; on-policy rollin and pair.
    LtOnline,
    /// Uniform turn; buffer prefix at that turn, on-policy pair.
    MtMixed,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Refuel,
        Scheme::LtOffline,
        Scheme::LtMixed,
        Scheme::LtOnline,
        Scheme::MtMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Refuel => "refuel",
            Scheme::LtOffline => "lt-offline",
            Scheme::LtMixed => "lt-mixed",
            Scheme::LtOnline => "lt-online",
            Scheme::MtMixed => "mt-mixed",
        }
    }

    pub fn needs_buffer(self) -> bool {
        matches!(self, Scheme::LtOffline | Scheme::LtMixed | Scheme::MtMixed)
    }

    pub fn last_turn_only(self) -> bool {
        matches!(self, Scheme::LtOffline | Scheme::LtMixed | Scheme::LtOnline)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<PairSample<T>>,
    pub scheme: Scheme,
    pub collector_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    scheme: Scheme,
    seed: u64,
    count: usize,
}

#[derive(Deserialize)]
struct SampleLine {
    h: usize,
    s: usize,
    y_a: usize,
    y_b: usize,
    r_a: f64,
    r_b: f64,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// JSON lines: a header with scheme and seed, then one record per sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            scheme: self.scheme,
            seed: self.collector_seed,
            count: self.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for p in &self.samples {
            writeln!(
                w,
                r#"{{"h":{},"s":{},"y_a":{},"y_b":{},"r_a":{},"r_b":{}}}"#,
                p.turn,
                p.state,
                p.action_a,
                p.action_b,
                fmt_f64(p.reward_a.to_f()),
                fmt_f64(p.reward_b.to_f())
            )?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::EmptyDataset),
        };
        let mut samples = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: SampleLine = serde_json::from_str(&line)?;
            samples.push(PairSample {
                turn: l.h,
                state: l.s,
                action_a: l.y_a,
                action_b: l.y_b,
                reward_a: T::of(l.r_a),
                reward_b: T::of(l.r_b),
            });
        }
        if samples.len() != header.count {
            return Err(Error::Config(format!(
                "dataset header says {} records, found {}",
                header.count,
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            scheme: header.scheme,
            collector_seed: header.seed,
        })
    }
}

fn draw<T: Real>(probs: &[T], rng: &mut Rng) -> usize {
    inverse_cdf(probs, rng.random::<f64>())
}

fn draw_successor<T: Real>(mdp: &TurnMdp<T>, state: usize, action: usize, rng: &mut Rng) -> usize {
    let row = mdp.successors(state, action);
    let u = rng.random::<f64>();
    let mut cdf = 0.0;
    let mut last = row[0].0;
    for &(next, p) in row {
        let p = p.to_f();
        if p <= 0.0 {
            continue;
        }
        cdf += p;
        last = next;
        if u <= cdf {
            return next;
        }
    }
    last
}

/// Sample a turn-`turn` state by running `policy` from the initial
/// distribution.
pub fn rollin<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, policy: &P, turn: usize, rng: &mut Rng) -> usize {
    assert!((1..=mdp.horizon()).contains(&turn), "turn {turn} outside 1..={}", mdp.horizon());
    let mut s = mdp.states(1).start + draw(mdp.initial_dist(), rng);
    for _ in 1..turn {
        let y = draw(&policy.probs_at(s), rng);
        s = draw_successor(mdp, s, y, rng);
    }
    s
}

/// Take `action` at `state`, then follow `policy` to the final turn and
/// return the terminal reward. Its mean is `Q(state, action)`.
pub fn rollout_from<T: Real, P: ActionDistribution<T> + ?Sized>(
    mdp: &TurnMdp<T>,
    policy: &P,
    state: usize,
    action: usize,
    rng: &mut Rng,
) -> T {
    let (mut s, mut y) = (state, action);
    while mdp.turn_of(s) < mdp.horizon() {
        s = draw_successor(mdp, s, y, rng);
        y = draw(&policy.probs_at(s), rng);
    }
    mdp.reward(s, y)
}

/// Two independent actions at `state` and an independent completion of
/// each.
pub fn collect_pair<T: Real, P: ActionDistribution<T> + ?Sized>(
    mdp: &TurnMdp<T>,
    policy: &P,
    state: usize,
    rng: &mut Rng,
) -> PairSample<T> {
    let probs = policy.probs_at(state);
    let action_a = draw(&probs, rng);
    let action_b = draw(&probs, rng);
    let reward_a = rollout_from(mdp, policy, state, action_a, rng);
    let reward_b = rollout_from(mdp, policy, state, action_b, rng);
    PairSample {
        turn: mdp.turn_of(state),
        state,
        action_a,
        action_b,
        reward_a,
        reward_b,
    }
}

/// A turn-`turn` prefix drawn under the buffer's generator. Final-turn
/// entries also carry a completed pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OfflineEntry<T> {
    pub turn: usize,
    pub state: usize,
    pub pair: Option<PairSample<T>>,
}

/// Prefixes drawn once from a reference policy and then frozen.
#[derive(Clone, Debug)]
pub struct OfflineBuffer<T> {
    strata: Vec<Vec<OfflineEntry<T>>>,
    generator: Policy<T>,
}

impl<T: Real> OfflineBuffer<T> {
    /// `size` prefixes split evenly across turns (earlier turns take the
    /// remainder). Within a turn the states follow the reference occupancy.
    pub fn build(mdp: &TurnMdp<T>, reference: &Policy<T>, size: usize, seed: u64) -> Result<Self> {
        mdp.check_domain(reference)?;
        let h_count = mdp.horizon();
        let table = reference.table();
        let mut strata = Vec::with_capacity(h_count);
        for h in 1..=h_count {
            let count = size / h_count + usize::from(h <= size % h_count);
            let turn_seed = rng::derive(seed, h as u64);
            let entries = (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(turn_seed, i as u64);
                    let state = rollin(mdp, &table, h, &mut r);
                    let pair = (h == h_count).then(|| collect_pair(mdp, &table, state, &mut r));
                    OfflineEntry { turn: h, state, pair }
                })
                .collect();
            strata.push(entries);
        }
        Ok(Self {
            strata,
            generator: reference.clone(),
        })
    }

    pub fn stratum(&self, turn: usize) -> &[OfflineEntry<T>] {
        &self.strata[turn - 1]
    }

    pub fn generator(&self) -> &Policy<T> {
        &self.generator
    }

    pub fn len(&self) -> usize {
        self.strata.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pick(&self, turn: usize, rng: &mut Rng) -> Result<&OfflineEntry<T>> {
        let stratum = self.stratum(turn);
        if stratum.is_empty() {
            return Err(Error::EmptyStratum(turn));
        }
        Ok(&stratum[rng.random_range(0..stratum.len())])
    }
}

/// Build an `n`-record dataset under `scheme`. The buffer must be supplied
/// exactly when the scheme reads from one.
pub fn collect_dataset<T: Real>(
    mdp: &TurnMdp<T>,
    policy: &Policy<T>,
    n: usize,
    scheme: Scheme,
    offline: Option<&OfflineBuffer<T>>,
    seed: u64,
) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    mdp.check_domain(policy)?;
    let buffer = match (scheme.needs_buffer(), offline) {
        (true, None) => {
            return Err(Error::SchemeBufferMismatch {
                scheme: scheme.to_string(),
                problem: "requires an offline buffer",
            })
        }
        (false, Some(_)) => {
            return Err(Error::SchemeBufferMismatch {
                scheme: scheme.to_string(),
                problem: "takes no offline buffer",
            })
        }
        (_, b) => b,
    };
    if let Some(b) = buffer {
        if b.strata.len() != mdp.horizon() {
            return Err(Error::DomainMismatch("offline buffer was built for a different horizon".into()));
        }
    }
    let h_count = mdp.horizon();
    let table = policy.table();
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let sample = match scheme {
                Scheme::Refuel => {
                    let h = r.random_range(1..=h_count);
                    let s = rollin(mdp, &table, h, &mut r);
                    collect_pair(mdp, &table, s, &mut r)
                }
                Scheme::LtOnline => {
                    let s = rollin(mdp, &table, h_count, &mut r);
                    collect_pair(mdp, &table, s, &mut r)
                }
                Scheme::LtMixed => {
                    let s = buffer.expect("checked").pick(h_count, &mut r)?.state;
                    collect_pair(mdp, &table, s, &mut r)
                }
                Scheme::LtOffline => buffer
                    .expect("checked")
                    .pick(h_count, &mut r)?
                    .pair
                    .expect("final-turn entries carry pairs"),
                Scheme::MtMixed => {
                    let h = r.random_range(1..=h_count);
                    let s = buffer.expect("checked").pick(h, &mut r)?.state;
                    collect_pair(mdp, &table, s, &mut r)
                }
            };
            Ok(sample)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        scheme,
        collector_seed: seed,
    })
}

/// `raw - gamma * (ln current(y|s) - ln base(y|s))`.
pub fn shape_reward_kl<T: Real>(raw: T, current: &Policy<T>, base: &Policy<T>, state: usize, action: usize, gamma: T) -> Result<T> {
    if gamma == T::zero() {
        return Ok(raw);
    }
    Ok(raw - gamma * (current.log_prob(state, action)? - base.log_prob(state, action)?))
}

/// Apply [`shape_reward_kl`] to both completions of every record, at the
/// record's own state and actions.
pub fn shape_dataset<T: Real>(dataset: &mut Dataset<T>, current: &Policy<T>, base: &Policy<T>, gamma: T) -> Result<()> {
    if gamma == T::zero() {
        return Ok(());
    }
    for p in &mut dataset.samples {
        p.reward_a = shape_reward_kl(p.reward_a, current, base, p.state, p.action_a, gamma)?;
        p.reward_b = shape_reward_kl(p.reward_b, current, base, p.state, p.action_b, gamma)?;
    }
    Ok(())
}
