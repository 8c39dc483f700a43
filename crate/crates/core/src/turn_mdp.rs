//! Layered finite-horizon MDP with turn-disjoint states and a terminal-only
//! reward, plus exact dynamic programming over it.
//!
//! States carry opaque integer ids in the file format. In memory every state
//! has a dense index, ordered by turn, and all policies and tables are keyed
//! by that index. Turns are 1-based in the public API (`1..=horizon`).

use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use crate::scalar::{Real, DISTRIBUTION_TOL};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// The on-disk description of an MDP. Transition rows and the reward table
/// are indexed by a state's position within its turn's list; successor
/// entries name the successor by id.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MdpFile {
    pub horizon: usize,
    pub states_per_turn: Vec<Vec<u64>>,
    pub action_count: usize,
    pub initial_dist: Vec<f64>,
    /// `[h][s][y]` for `h` in `0..horizon-1`.
    pub transition: Vec<Vec<Vec<Vec<(u64, f64)>>>>,
    /// `[s][y]` over the final turn's states.
    pub terminal_reward: Vec<Vec<f64>>,
    pub reward_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// A validated layered MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnMdp<T> {
    horizon: usize,
    action_count: usize,
    ids: Vec<u64>,
    layer_start: Vec<usize>,
    initial: Vec<T>,
    /// `[state][action]` successor distribution; empty rows on the last turn.
    transition: Vec<Vec<Vec<(usize, T)>>>,
    /// `[position in last turn][action]`.
    reward: Vec<Vec<T>>,
    reward_range: (T, T),
    metadata: Option<serde_json::Value>,
}

fn check_distribution(location: impl Fn() -> String, probs: impl Iterator<Item = f64>) -> Result<f64> {
    let mut sum = 0.0;
    for p in probs {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::NegativeProbability {
                location: location(),
                prob: p,
            });
        }
        sum += p;
    }
    Ok(sum)
}

/// Validate a description, returning the MDP iff every invariant holds.
pub fn validate<T: Real>(file: &MdpFile) -> Result<TurnMdp<T>> {
    let h_count = file.horizon;
    if h_count == 0 {
        return Err(Error::InvalidMdp("horizon must be positive".into()));
    }
    if file.action_count == 0 {
        return Err(Error::InvalidMdp("action_count must be positive".into()));
    }
    if file.states_per_turn.len() != h_count {
        return Err(Error::InvalidMdp(format!(
            "states_per_turn has {} layers for horizon {h_count}",
            file.states_per_turn.len()
        )));
    }
    let mut index: HashMap<u64, (usize, usize)> = HashMap::new();
    let mut ids = Vec::new();
    let mut layer_start = Vec::with_capacity(h_count + 1);
    for (h, layer) in file.states_per_turn.iter().enumerate() {
        if layer.is_empty() {
            return Err(Error::InvalidMdp(format!("turn {} has no states", h + 1)));
        }
        layer_start.push(ids.len());
        for &id in layer {
            if let Some(&(first, _)) = index.get(&id) {
                return Err(Error::OverlappingStates {
                    id,
                    first: first + 1,
                    second: h + 1,
                });
            }
            index.insert(id, (h, ids.len()));
            ids.push(id);
        }
    }
    layer_start.push(ids.len());

    let y_count = file.action_count;
    if file.initial_dist.len() != file.states_per_turn[0].len() {
        return Err(Error::InvalidMdp("initial_dist length differs from turn-1 state count".into()));
    }
    let sum = check_distribution(|| "initial_dist".into(), file.initial_dist.iter().copied())?;
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InitialNotNormalized(sum));
    }

    if file.transition.len() != h_count - 1 {
        return Err(Error::InvalidMdp(format!(
            "transition has {} layers, expected {}",
            file.transition.len(),
            h_count - 1
        )));
    }
    let mut transition = vec![Vec::new(); ids.len()];
    for (h, layer) in file.transition.iter().enumerate() {
        if layer.len() != file.states_per_turn[h].len() {
            return Err(Error::InvalidMdp(format!("transition layer {} has wrong state count", h + 1)));
        }
        for (pos, rows) in layer.iter().enumerate() {
            if rows.len() != y_count {
                return Err(Error::InvalidMdp(format!("transition ({}, {pos}) has wrong action count", h + 1)));
            }
            let global = layer_start[h] + pos;
            let mut per_action = Vec::with_capacity(y_count);
            for (y, row) in rows.iter().enumerate() {
                let loc = || format!("transition (turn {}, state {pos}, action {y})", h + 1);
                let sum = check_distribution(loc, row.iter().map(|&(_, p)| p))?;
                if (sum - 1.0).abs() > DISTRIBUTION_TOL {
                    return Err(Error::TransitionNotNormalized {
                        turn: h + 1,
                        state: pos,
                        action: y,
                        sum,
                    });
                }
                let mut entries = Vec::with_capacity(row.len());
                for &(next_id, p) in row {
                    match index.get(&next_id) {
                        Some(&(nh, g)) if nh == h + 1 => entries.push((g, T::of(p))),
                        _ => {
                            return Err(Error::InvalidMdp(format!(
                                "{}: successor id {next_id} is not a turn-{} state",
                                loc(),
                                h + 2
                            )))
                        }
                    }
                }
                per_action.push(entries);
            }
            transition[global] = per_action;
        }
    }

    let [min, max] = file.reward_range;
    if !(min <= max) {
        return Err(Error::InvalidMdp(format!("reward_range [{min}, {max}] is empty")));
    }
    let last = &file.states_per_turn[h_count - 1];
    if file.terminal_reward.len() != last.len() {
        return Err(Error::InvalidMdp(
            "terminal_reward row count differs from final-turn state count".into(),
        ));
    }
    let mut reward = Vec::with_capacity(last.len());
    for (s, row) in file.terminal_reward.iter().enumerate() {
        if row.len() != y_count {
            return Err(Error::InvalidMdp(format!("terminal_reward row {s} has wrong action count")));
        }
        for (y, &r) in row.iter().enumerate() {
            if !(r >= min && r <= max) {
                return Err(Error::RewardOutOfRange {
                    state: s,
                    action: y,
                    value: r,
                    min,
                    max,
                });
            }
        }
        reward.push(row.iter().map(|&r| T::of(r)).collect());
    }

    Ok(TurnMdp {
        horizon: h_count,
        action_count: y_count,
        ids,
        layer_start,
        initial: file.initial_dist.iter().map(|&p| T::of(p)).collect(),
        transition,
        reward,
        reward_range: (T::of(min), T::of(max)),
        metadata: file.metadata.clone(),
    })
}

impl<T: Real> TurnMdp<T> {
    pub fn from_file(file: &MdpFile) -> Result<Self> {
        validate(file)
    }

    pub fn to_file(&self) -> MdpFile {
        let states_per_turn = (1..=self.horizon).map(|h| self.states(h).map(|s| self.ids[s]).collect()).collect();
        let transition = (1..self.horizon)
            .map(|h| {
                self.states(h)
                    .map(|s| {
                        self.transition[s]
                            .iter()
                            .map(|row| row.iter().map(|&(n, p)| (self.ids[n], p.to_f())).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MdpFile {
            horizon: self.horizon,
            states_per_turn,
            action_count: self.action_count,
            initial_dist: self.initial.iter().map(|p| p.to_f()).collect(),
            transition,
            terminal_reward: self.reward.iter().map(|r| r.iter().map(|x| x.to_f()).collect()).collect(),
            reward_range: [self.reward_range.0.to_f(), self.reward_range.1.to_f()],
            metadata: self.metadata.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn num_states(&self) -> usize {
        self.ids.len()
    }

    /// Dense indices of the states at `turn` (1-based).
    pub fn states(&self, turn: usize) -> std::ops::Range<usize> {
        self.layer_start[turn - 1]..self.layer_start[turn]
    }

    pub fn turn_of(&self, state: usize) -> usize {
        self.layer_start.partition_point(|&start| start <= state)
    }

    pub fn state_id(&self, state: usize) -> u64 {
        self.ids[state]
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial
    }

    /// Successor distribution of (state, action); empty on the final turn.
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, T)] {
        self.transition[state].get(action).map_or(&[], Vec::as_slice)
    }

    /// Terminal reward of (state, action); `state` must be on the final turn.
    pub fn reward(&self, state: usize, action: usize) -> T {
        self.reward[state - self.layer_start[self.horizon - 1]][action]
    }

    pub fn reward_range(&self) -> (T, T) {
        self.reward_range
    }

    pub fn reward_span(&self) -> T {
        self.reward_range.1 - self.reward_range.0
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub(crate) fn check_domain<P: ActionDistribution<T> + ?Sized>(&self, policy: &P) -> Result<()> {
        if policy.num_states() != self.num_states() || policy.action_count() != self.action_count {
            return Err(Error::DomainMismatch(format!(
                "policy covers {} states x {} actions, MDP has {} x {}",
                policy.num_states(),
                policy.action_count(),
                self.num_states(),
                self.action_count
            )));
        }
        Ok(())
    }

    /// Occupancy vector seeded with `start` at turn `from` pushed forward
    /// under `policy`; entries for earlier turns are zero.
    fn push_forward<P: ActionDistribution<T> + ?Sized>(&self, policy: &P, mut d: Vec<T>, from: usize) -> Vec<T> {
        for h in from..self.horizon {
            for s in self.states(h) {
                if d[s] == T::zero() {
                    continue;
                }
                let probs = policy.probs_at(s);
                for (y, &py) in probs.iter().enumerate() {
                    let mass = d[s] * py;
                    if mass == T::zero() {
                        continue;
                    }
                    for &(next, p) in self.successors(s, y) {
                        d[next] += mass * p;
                    }
                }
            }
        }
        d
    }
}

/// Exact value functions and occupancies of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables<T> {
    /// `[state][action]`.
    pub q: Vec<Vec<T>>,
    pub v: Vec<T>,
    pub adv: Vec<Vec<T>>,
    /// `d_h(s)` at the state's own turn.
    pub occupancy: Vec<T>,
    pub ret: T,
}

/// Backward recursion for Q/V/A, forward recursion for occupancy.
pub fn compute_values<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, policy: &P) -> Result<ValueTables<T>> {
    mdp.check_domain(policy)?;
    let n = mdp.num_states();
    let y_count = mdp.action_count;
    let mut q = vec![vec![T::zero(); y_count]; n];
    let mut v = vec![T::zero(); n];
    let mut adv = vec![vec![T::zero(); y_count]; n];
    for h in (1..=mdp.horizon).rev() {
        for s in mdp.states(h) {
            for y in 0..y_count {
                q[s][y] = if h == mdp.horizon {
                    mdp.reward(s, y)
                } else {
                    mdp.successors(s, y).iter().fold(T::zero(), |acc, &(next, p)| acc + p * v[next])
                };
            }
            let probs = policy.probs_at(s);
            v[s] = probs.iter().zip(&q[s]).fold(T::zero(), |acc, (&p, &qv)| acc + p * qv);
            for y in 0..y_count {
                adv[s][y] = q[s][y] - v[s];
            }
        }
    }
    let occupancy = occupancy(mdp, policy)?;
    let ret = mdp.states(1).zip(&mdp.initial).fold(T::zero(), |acc, (s, &p)| acc + p * v[s]);
    Ok(ValueTables { q, v, adv, occupancy, ret })
}

/// Per-turn state distributions `d_h`, stored at each state's dense index.
pub fn occupancy<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, policy: &P) -> Result<Vec<T>> {
    mdp.check_domain(policy)?;
    let mut d = vec![T::zero(); mdp.num_states()];
    for (s, &p) in mdp.states(1).zip(&mdp.initial) {
        d[s] = p;
    }
    Ok(mdp.push_forward(policy, d, 1))
}

/// Occupancy at turns `h+1..` after a fixed state at turn `h`; used by
/// conditional checks.
pub fn occupancy_from<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, policy: &P, state: usize) -> Result<Vec<T>> {
    mdp.check_domain(policy)?;
    let mut d = vec![T::zero(); mdp.num_states()];
    d[state] = T::one();
    Ok(mdp.push_forward(policy, d, mdp.turn_of(state)))
}

pub fn expected_return<T: Real, P: ActionDistribution<T> + ?Sized>(mdp: &TurnMdp<T>, policy: &P) -> Result<T> {
    Ok(compute_values(mdp, policy)?.ret)
}

/// One complete trajectory with its probability and terminal reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    /// `(state, action)` per turn.
    pub steps: Vec<(usize, usize)>,
    pub prob: T,
    pub reward: T,
}

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Exhaustive list of positive-probability trajectories. Independent of the
/// DP in [`compute_values`]; used as its oracle.
pub fn enumerate_trajectories<T: Real, P: ActionDistribution<T> + ?Sized>(
    mdp: &TurnMdp<T>,
    policy: &P,
    cap: usize,
) -> Result<Vec<Trajectory<T>>> {
    mdp.check_domain(policy)?;
    let tables: Vec<Vec<T>> = (0..mdp.num_states()).map(|s| policy.probs_at(s)).collect();
    // count positive-probability paths bottom-up before allocating
    let mut count = vec![0u128; mdp.num_states()];
    for h in (1..=mdp.horizon).rev() {
        for s in mdp.states(h) {
            count[s] = (0..mdp.action_count)
                .filter(|&y| tables[s][y] > T::zero())
                .map(|y| {
                    if h == mdp.horizon {
                        1
                    } else {
                        mdp.successors(s, y)
                            .iter()
                            .filter(|(_, p)| *p > T::zero())
                            .map(|&(n, _)| count[n])
                            .sum()
                    }
                })
                .sum();
        }
    }
    let needed: u128 = mdp
        .states(1)
        .zip(&mdp.initial)
        .filter(|(_, p)| **p > T::zero())
        .map(|(s, _)| count[s])
        .sum();
    if needed > cap as u128 {
        return Err(Error::EnumerationCap { needed, cap });
    }

    let mut out = Vec::with_capacity(needed as usize);
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(mdp.horizon);
    fn walk<T: Real>(
        mdp: &TurnMdp<T>,
        tables: &[Vec<T>],
        state: usize,
        prob: T,
        stack: &mut Vec<(usize, usize)>,
        out: &mut Vec<Trajectory<T>>,
    ) {
        for (y, &py) in tables[state].iter().enumerate() {
            if py <= T::zero() {
                continue;
            }
            stack.push((state, y));
            let p = prob * py;
            if stack.len() == mdp.horizon {
                out.push(Trajectory {
                    steps: stack.clone(),
                    prob: p,
                    reward: mdp.reward(state, y),
                });
            } else {
                for &(next, pt) in mdp.successors(state, y) {
                    if pt > T::zero() {
                        walk(mdp, tables, next, p * pt, stack, out);
                    }
                }
            }
            stack.pop();
        }
    }
    for (s, &p) in mdp.states(1).zip(&mdp.initial) {
        if p > T::zero() {
            walk(mdp, &tables, s, p, &mut stack, &mut out);
        }
    }
    Ok(out)
}

/// A concentrability coefficient; support mismatch makes it unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Finite(f64),
    Unbounded,
}

impl Coefficient {
    pub fn value(self) -> f64 {
        match self {
            Coefficient::Finite(x) => x,
            Coefficient::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Coefficient::Unbounded)
    }
}

/// Index attaining a coefficient's maximum. `action` is `None` for the
/// state coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub turn: usize,
    pub state: usize,
    pub action: Option<usize>,
    pub iterate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub c_state: Coefficient,
    pub c_action: Coefficient,
    pub state_witness: Option<Witness>,
    pub action_witness: Option<Witness>,
}

struct RatioMax {
    best: Option<(f64, Witness)>,
    unbounded: Option<Witness>,
}

impl RatioMax {
    fn new() -> Self {
        Self {
            best: None,
            unbounded: None,
        }
    }

    fn offer(&mut self, num: f64, den: f64, at: Witness) {
        if num == 0.0 {
            // 0/0 and 0/x carry no coverage information beyond the others
            if den > 0.0 && self.best.is_none() {
                self.best = Some((0.0, at));
            }
            return;
        }
        if den == 0.0 {
            self.unbounded.get_or_insert(at);
            return;
        }
        let r = num / den;
        if self.best.is_none_or(|(b, _)| r > b) {
            self.best = Some((r, at));
        }
    }

    fn finish(self) -> (Coefficient, Option<Witness>) {
        match (self.unbounded, self.best) {
            (Some(w), _) => (Coefficient::Unbounded, Some(w)),
            (None, Some((r, w))) => (Coefficient::Finite(r), Some(w)),
            (None, None) => (Coefficient::Finite(1.0), None),
        }
    }
}

/// State and action concentrability of `comparator` against every iterate.
pub fn concentrability<T: Real, C, P>(mdp: &TurnMdp<T>, comparator: &C, iterates: &[P]) -> Result<CoverageReport>
where
    C: ActionDistribution<T> + ?Sized,
    P: ActionDistribution<T>,
{
    let d_star = occupancy(mdp, comparator)?;
    let mut states = RatioMax::new();
    let mut actions = RatioMax::new();
    for (t, pi) in iterates.iter().enumerate() {
        let d_t = occupancy(mdp, pi)?;
        for h in 1..=mdp.horizon {
            for s in mdp.states(h) {
                states.offer(
                    d_star[s].to_f(),
                    d_t[s].to_f(),
                    Witness {
                        turn: h,
                        state: s,
                        action: None,
                        iterate: t,
                    },
                );
                let (ps, pt) = (comparator.probs_at(s), pi.probs_at(s));
                for y in 0..mdp.action_count {
                    let at = Witness {
                        turn: h,
                        state: s,
                        action: Some(y),
                        iterate: t,
                    };
                    actions.offer(ps[y].to_f(), pt[y].to_f(), at);
                }
            }
        }
    }
    let (c_state, state_witness) = states.finish();
    let (c_action, action_witness) = actions.finish();
    Ok(CoverageReport {
        c_state,
        c_action,
        state_witness,
        action_witness,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::policy::{ActionTable, Policy, TabularSoftmax};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    pub(crate) fn bandit(rewards: &[f64]) -> MdpFile {
        MdpFile {
            horizon: 1,
            states_per_turn: vec![vec![0]],
            action_count: rewards.len(),
            initial_dist: vec![1.0],
            transition: vec![],
            terminal_reward: vec![rewards.to_vec()],
            reward_range: [0.0, 1.0],
            metadata: None,
        }
    }

    /// Small random layered MDP for oracle checks, independent of the
    /// generator in the harness.
    pub(crate) fn random_mdp(seed: u64, horizon: usize, per_turn: usize, actions: usize) -> TurnMdp<f64> {
        let mut r = rng::seeded(seed);
        let ids = |h: usize| (0..per_turn).map(move |i| (h * 100 + i) as u64);
        let normalize = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let initial = normalize((0..per_turn).map(|_| r.random_range(0.1..1.0)).collect());
        let transition = (0..horizon - 1)
            .map(|h| {
                (0..per_turn)
                    .map(|_| {
                        (0..actions)
                            .map(|_| {
                                let w = normalize((0..per_turn).map(|_| r.random_range(0.0..1.0)).collect());
                                ids(h + 1).zip(w).collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let terminal_reward = (0..per_turn)
            .map(|_| (0..actions).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        validate(&MdpFile {
            horizon,
            states_per_turn: (0..horizon).map(|h| ids(h).collect()).collect(),
            action_count: actions,
            initial_dist: initial,
            transition,
            terminal_reward,
            reward_range: [0.0, 1.0],
            metadata: None,
        })
        .unwrap()
    }

    pub(crate) fn random_policy(seed: u64, states: usize, actions: usize) -> Policy<f64> {
        let mut r = rng::seeded(seed ^ 0xABCD);
        let logits = (0..states * actions).map(|_| r.random_range(-1.5..1.5)).collect();
        Policy::Tabular(TabularSoftmax::new(states, actions, logits).unwrap())
    }

    #[test]
    fn minimal_bandit_validates() {
        let mdp = validate::<f64>(&bandit(&[0.0, 1.0])).unwrap();
        assert_eq!((mdp.horizon(), mdp.num_states(), mdp.action_count()), (1, 1, 2));
    }

    #[test]
    fn validation_errors_name_the_violation() {
        let mut f = random_mdp(1, 2, 2, 2).to_file();
        f.transition[0][1][0][0].1 -= 0.1;
        match validate::<f64>(&f) {
            Err(Error::TransitionNotNormalized {
                turn: 1,
                state: 1,
                action: 0,
                sum,
            }) => assert!((sum - 0.9).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
        let mut f = bandit(&[0.0, 2.0]);
        assert!(matches!(
            validate::<f64>(&f),
            Err(Error::RewardOutOfRange { state: 0, action: 1, .. })
        ));
        f.terminal_reward[0][1] = 1.0;
        f.initial_dist = vec![0.5];
        assert!(matches!(validate::<f64>(&f), Err(Error::InitialNotNormalized(_))));
        let mut f = random_mdp(2, 2, 2, 2).to_file();
        f.states_per_turn[1][0] = f.states_per_turn[0][1];
        assert!(matches!(
            validate::<f64>(&f),
            Err(Error::OverlappingStates { first: 1, second: 2, .. })
        ));
        let mut f = random_mdp(3, 2, 2, 2).to_file();
        f.transition[0][0][0][0].1 = -0.5;
        f.transition[0][0][0][1].1 = 1.5;
        assert!(matches!(validate::<f64>(&f), Err(Error::NegativeProbability { .. })));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let mdp = random_mdp(4, 3, 3, 2);
        let text = crate::io::to_json_string(&mdp.to_file()).unwrap();
        let back: MdpFile = serde_json::from_str(&text).unwrap();
        assert_eq!(validate::<f64>(&back).unwrap(), mdp);
    }

    #[test]
    fn prop2_bandit_values() {
        let mdp = validate::<f64>(&bandit(&[1.0, 1.0])).unwrap();
        for logits in [vec![0.0, 0.0], vec![2.0, -1.0]] {
            let p = Policy::Tabular(TabularSoftmax::new(1, 2, logits).unwrap());
            let vt = compute_values(&mdp, &p).unwrap();
            assert_eq!(vt.q[0], vec![1.0, 1.0]);
            assert!((vt.ret - 1.0).abs() < 1e-12);
            assert!((expected_return(&mdp, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reward_gives_constant_values() {
        let mut f = random_mdp(5, 3, 2, 3).to_file();
        for row in &mut f.terminal_reward {
            row.iter_mut().for_each(|r| *r = 0.375);
        }
        let mdp = validate::<f64>(&f).unwrap();
        let vt = compute_values(&mdp, &random_policy(5, 6, 3)).unwrap();
        for s in 0..6 {
            assert!((vt.v[s] - 0.375).abs() < 1e-15);
            assert!(vt.adv[s].iter().all(|a| a.abs() < 1e-15));
        }
        assert!((vt.ret - 0.375).abs() < 1e-15);
    }

    #[test]
    fn occupancy_and_enumeration_degenerate_cases() {
        // deterministic chain: 2 turns, 2 states each, action y leads to state y
        let f = MdpFile {
            horizon: 2,
            states_per_turn: vec![vec![10, 11], vec![20, 21]],
            action_count: 2,
            initial_dist: vec![0.0, 1.0],
            transition: vec![vec![vec![vec![(20, 1.0)], vec![(21, 1.0)]], vec![vec![(20, 1.0)], vec![(21, 1.0)]]]],
            terminal_reward: vec![vec![0.2, 0.4], vec![0.6, 0.8]],
            reward_range: [0.0, 1.0],
            metadata: None,
        };
        let mdp = validate::<f64>(&f).unwrap();
        let det = ActionTable::new(vec![vec![0.0, 1.0]; 4]).unwrap();
        let d = occupancy(&mdp, &det).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 0.0, 1.0]);
        let trajs = enumerate_trajectories(&mdp, &det, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].prob, 1.0);
        assert_eq!(trajs[0].steps, vec![(1, 1), (3, 1)]);
        assert_eq!(trajs[0].reward, 0.8);

        let bandit = validate::<f64>(&bandit(&[0.0, 1.0])).unwrap();
        let trajs = enumerate_trajectories(&bandit, &Policy::uniform_tabular(1, 2), 10).unwrap();
        assert_eq!(trajs.iter().map(|t| t.prob).collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(occupancy(&bandit, &Policy::<f64>::uniform_tabular(1, 2)).unwrap(), vec![1.0]);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let mdp = random_mdp(6, 3, 3, 3);
        let p = Policy::uniform_tabular(9, 3);
        assert!(matches!(
            enumerate_trajectories(&mdp, &p, 100),
            Err(Error::EnumerationCap { needed: 729, cap: 100 })
        ));
    }

    #[test]
    fn occupancy_matches_enumeration_marginals() {
        let mdp = random_mdp(7, 3, 3, 2);
        let p = random_policy(7, 9, 2);
        let d = occupancy(&mdp, &p).unwrap();
        let mut marg = [0.0; 9];
        for t in enumerate_trajectories(&mdp, &p, DEFAULT_ENUMERATION_CAP).unwrap() {
            for &(s, _) in &t.steps {
                marg[s] += t.prob;
            }
        }
        for s in 0..9 {
            assert!((d[s] - marg[s]).abs() < 1e-12);
        }
        for h in 1..=3 {
            let total: f64 = mdp.states(h).map(|s| d[s]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    /// Q_h(s,y) from the enumeration oracle: probability-weighted reward of
    /// trajectories through (s, y), normalized by the mass reaching (s, y).
    fn q_by_enumeration(trajs: &[Trajectory<f64>], n: usize, y_count: usize) -> Vec<Vec<Option<f64>>> {
        let mut num = vec![vec![0.0; y_count]; n];
        let mut den = vec![vec![0.0; y_count]; n];
        for t in trajs {
            for &(s, y) in &t.steps {
                num[s][y] += t.prob * t.reward;
                den[s][y] += t.prob;
            }
        }
        (0..n)
            .map(|s| (0..y_count).map(|y| (den[s][y] > 0.0).then(|| num[s][y] / den[s][y])).collect())
            .collect()
    }

    #[test]
    fn dp_matches_enumeration_on_random_instances() {
        for seed in 0..20 {
            let horizon = 2 + (seed as usize % 2);
            let mdp = random_mdp(100 + seed, horizon, 3, 2);
            let p = random_policy(seed, mdp.num_states(), 2);
            let vt = compute_values(&mdp, &p).unwrap();
            let trajs = enumerate_trajectories(&mdp, &p, DEFAULT_ENUMERATION_CAP).unwrap();
            let total: f64 = trajs.iter().map(|t| t.prob).sum();
            assert!((total - 1.0).abs() < 1e-10);
            let j: f64 = trajs.iter().map(|t| t.prob * t.reward).sum();
            assert!((j - vt.ret).abs() < 1e-12);
            for (s, row) in q_by_enumeration(&trajs, mdp.num_states(), 2).iter().enumerate() {
                for (y, q) in row.iter().enumerate() {
                    if let Some(q) = q {
                        assert!((q - vt.q[s][y]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn concentrability_cases() {
        let mdp = random_mdp(8, 2, 2, 2);
        let p = random_policy(8, 4, 2);
        let self_cov = concentrability(&mdp, &p, std::slice::from_ref(&p)).unwrap();
        assert!((self_cov.c_state.value() - 1.0).abs() < 1e-12);
        assert!((self_cov.c_action.value() - 1.0).abs() < 1e-12);

        let det = ActionTable::new(vec![vec![1.0, 0.0]; 4]).unwrap();
        let never = ActionTable::new(vec![vec![0.0, 1.0]; 4]).unwrap();
        let cov = concentrability(&mdp, &det, &[never]).unwrap();
        assert!(cov.c_action.is_unbounded());
        assert_eq!(cov.action_witness.unwrap().action, Some(0));
    }

    #[test]
    fn concentrability_matches_brute_force() {
        let mdp = random_mdp(9, 3, 3, 3);
        let star = random_policy(90, 9, 3);
        let iterates: Vec<Policy<f64>> = (0..4).map(|t| random_policy(91 + t, 9, 3)).collect();
        let rep = concentrability(&mdp, &star, &iterates).unwrap();
        let ds = occupancy(&mdp, &star).unwrap();
        let (mut cs, mut ca) = (0.0f64, 0.0f64);
        for it in &iterates {
            let dt = occupancy(&mdp, it).unwrap();
            for s in 0..9 {
                cs = cs.max(ds[s] / dt[s]);
                for y in 0..3 {
                    ca = ca.max(star.action_probs(s).unwrap()[y] / it.action_probs(s).unwrap()[y]);
                }
            }
        }
        assert!((rep.c_state.value() - cs).abs() < 1e-12);
        assert!((rep.c_action.value() - ca).abs() < 1e-12);
        assert!(rep.c_state.value() >= 1.0 && rep.c_action.value() >= 1.0);
    }

    #[test]
    fn f32_dynamic_programming() {
        let f = random_mdp(10, 2, 2, 2).to_file();
        let mdp32 = validate::<f32>(&f).unwrap();
        let mdp64 = validate::<f64>(&f).unwrap();
        let j32 = expected_return(&mdp32, &Policy::<f32>::uniform_tabular(4, 2)).unwrap();
        let j64 = expected_return(&mdp64, &Policy::<f64>::uniform_tabular(4, 2)).unwrap();
        assert!((f64::from(j32) - j64).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn value_table_invariants(seed in 0u64..5000, horizon in 1usize..4, per_turn in 1usize..4, actions in 1usize..4) {
            let mdp = random_mdp(seed, horizon, per_turn, actions);
            let p = random_policy(seed, mdp.num_states(), actions);
            let vt = compute_values(&mdp, &p).unwrap();
            for s in 0..mdp.num_states() {
                let probs = p.action_probs(s).unwrap();
                let centered: f64 = probs.iter().zip(&vt.adv[s]).map(|(a, b)| a * b).sum();
                prop_assert!(centered.abs() < 1e-12);
                let v: f64 = probs.iter().zip(&vt.q[s]).map(|(a, b)| a * b).sum();
                prop_assert!((v - vt.v[s]).abs() < 1e-12);
                for y in 0..actions {
                    prop_assert!((vt.adv[s][y] - (vt.q[s][y] - vt.v[s])).abs() < 1e-12);
                }
            }
            for h in 1..=horizon {
                let total: f64 = mdp.states(h).map(|s| vt.occupancy[s]).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
