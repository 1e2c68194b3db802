//! Finite-horizon MDP induced by a graph and an instruction.
//!
//! Transitions follow action edges deterministically, the reward is binary
//! and paid on reaching a terminal state, and an episode holds at most `H`
//! actions. Values are for the uniform-random policy: Q(s, a) is the
//! probability that picking `a` and then acting uniformly at random reaches a
//! rewarding terminal before the horizon runs out.
//!
//! In a DAG the same state can be reached after different numbers of steps,
//! and its value then depends on how much horizon is left. Tables are
//! therefore indexed by depth as well; [`QTable::get`] answers at the
//! shallowest depth a state occurs, which is the only depth in a tree.

use crate::hashing::{derive_seed, tokenize};
use crate::kg::{KnowledgeGraph, StateNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Enumeration guard for [`brute_force_optimal`].
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("root state `{0}` is not in the graph")]
    UnknownRoot(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("graph has a state cycle through {0:?}")]
    Cyclic(Vec<String>),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("action `{action}` is not available in state `{state}`")]
    UnknownAction { state: String, action: String },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("no Q entry for ({state}, {action}) at depth {depth}")]
    MissingQ {
        state: String,
        action: String,
        depth: usize,
    },
    #[error("enumeration exceeds {0} paths")]
    TooManyPaths(usize),
    #[error("effective gap {0} is not positive: bias consistency violated")]
    BiasViolated(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Task descriptor x.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
}

impl Instruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Instruction {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// R(s_H, x) on terminal states.
pub trait RewardPredicate: Send + Sync {
    fn reward(&self, instruction: &Instruction, state: &StateNode) -> bool;
}

/// Reward 1 iff the terminal state is one of the named goals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSet {
    pub goals: BTreeSet<String>,
}

impl GoalSet {
    pub fn new<I, S>(goals: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        GoalSet {
            goals: goals.into_iter().map(Into::into).collect(),
        }
    }
}

impl RewardPredicate for GoalSet {
    fn reward(&self, _: &Instruction, state: &StateNode) -> bool {
        self.goals.contains(&state.state_id)
    }
}

/// Reward 1 iff every keyword occurs among the page descriptor's tokens.
/// Without explicit keywords the instruction's own tokens are used.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordReward {
    pub keywords: Vec<String>,
}

impl RewardPredicate for KeywordReward {
    fn reward(&self, instruction: &Instruction, state: &StateNode) -> bool {
        let page: BTreeSet<String> = tokenize(&state.page_descriptor).collect();
        let wanted: Vec<String> = if self.keywords.is_empty() {
            tokenize(&instruction.text).collect()
        } else {
            self.keywords
                .iter()
                .flat_map(|k| tokenize(k).collect::<Vec<_>>())
                .collect()
        };
        !wanted.is_empty() && wanted.iter().all(|w| page.contains(w))
    }
}

/// ⟨s0, a0, s1, …⟩ as parallel id lists; `states.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Path {
    pub states: Vec<String>,
    pub actions: Vec<String>,
}

impl Path {
    pub fn single(state: impl Into<String>) -> Self {
        Path {
            states: vec![state.into()],
            actions: Vec::new(),
        }
    }

    pub fn last_state(&self) -> &str {
        self.states.last().map(String::as_str).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}",
            self.states.first().map(String::as_str).unwrap_or("")
        )?;
        for (a, s) in self.actions.iter().zip(self.states.iter().skip(1)) {
            write!(f, " -{a}-> {s}")?;
        }
        Ok(())
    }
}

/// A graph bound to an instruction, reward and horizon, with a compiled
/// index and the exact uniform-policy value table.
#[derive(Clone)]
pub struct KgMdp {
    graph: Arc<KnowledgeGraph>,
    instruction: Instruction,
    horizon: usize,
    root: usize,
    state_ids: Vec<String>,
    state_index: HashMap<String, usize>,
    action_ids: Vec<String>,
    action_index: HashMap<String, usize>,
    out: Vec<Vec<usize>>,
    src: Vec<usize>,
    dst: Vec<usize>,
    terminal: Vec<bool>,
    reward: Vec<f64>,
    /// value[k][s]: success probability from `s` with `k` actions left.
    value: Vec<Vec<f64>>,
}

impl fmt::Debug for KgMdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KgMdp")
            .field("instruction", &self.instruction)
            .field("horizon", &self.horizon)
            .field("root", &self.state_ids[self.root])
            .field("states", &self.state_ids.len())
            .field("actions", &self.action_ids.len())
            .finish()
    }
}

impl KgMdp {
    pub fn new(
        graph: Arc<KnowledgeGraph>,
        instruction: Instruction,
        reward: &dyn RewardPredicate,
        horizon: usize,
        root: &str,
    ) -> Result<Self, MdpError> {
        if horizon == 0 {
            return Err(MdpError::ZeroHorizon);
        }
        if let Some(crate::kg::Violation::StateCycle { states }) =
            graph.find_cycles().into_iter().next()
        {
            return Err(MdpError::Cyclic(states));
        }
        let state_ids: Vec<String> = graph.states().map(|s| s.state_id.clone()).collect();
        let state_index: HashMap<String, usize> = state_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let root = *state_index
            .get(root)
            .ok_or_else(|| MdpError::UnknownRoot(root.to_string()))?;

        let mut action_ids = Vec::new();
        let mut action_index = HashMap::new();
        let mut out = vec![Vec::new(); state_ids.len()];
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (si, s) in state_ids.iter().enumerate() {
            for a in graph.out_actions(s) {
                let Some(d) = graph.successor(a).and_then(|d| state_index.get(d)) else {
                    continue;
                };
                let ai = action_ids.len();
                action_ids.push(a.to_string());
                action_index.insert(a.to_string(), ai);
                out[si].push(ai);
                src.push(si);
                dst.push(*d);
            }
        }
        let terminal: Vec<bool> = out.iter().map(Vec::is_empty).collect();
        let reward: Vec<f64> = graph
            .states()
            .zip(&terminal)
            .map(|(s, &t)| {
                if t && reward.reward(&instruction, s) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();

        let mut value = vec![reward.clone()];
        for k in 1..=horizon {
            let prev = &value[k - 1];
            let layer = (0..state_ids.len())
                .map(|s| {
                    if terminal[s] {
                        reward[s]
                    } else {
                        out[s].iter().map(|&a| prev[dst[a]]).sum::<f64>() / out[s].len() as f64
                    }
                })
                .collect();
            value.push(layer);
        }

        Ok(KgMdp {
            graph,
            instruction,
            horizon,
            root,
            state_ids,
            state_index,
            action_ids,
            action_index,
            out,
            src,
            dst,
            terminal,
            reward,
            value,
        })
    }

    /// Goal-set MDP rooted at the graph's unique root, or at `s0`-style root
    /// given explicitly.
    pub fn with_goals<I, S>(
        graph: Arc<KnowledgeGraph>,
        instruction: Instruction,
        goals: I,
        horizon: usize,
        root: &str,
    ) -> Result<Self, MdpError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        KgMdp::new(graph, instruction, &GoalSet::new(goals), horizon, root)
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<KnowledgeGraph> {
        Arc::clone(&self.graph)
    }

    pub fn instruction(&self) -> &Instruction {
        &self.instruction
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_id(&self) -> &str {
        &self.state_ids[self.root]
    }

    pub fn state_count(&self) -> usize {
        self.state_ids.len()
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.state_index.get(id).copied()
    }

    pub fn action_index(&self, id: &str) -> Option<usize> {
        self.action_index.get(id).copied()
    }

    pub fn state_id(&self, s: usize) -> &str {
        &self.state_ids[s]
    }

    pub fn action_id(&self, a: usize) -> &str {
        &self.action_ids[a]
    }

    /// A(s) as action indices, in action-id order.
    pub fn actions_of(&self, s: usize) -> &[usize] {
        &self.out[s]
    }

    pub fn action_src(&self, a: usize) -> usize {
        self.src[a]
    }

    pub fn action_dst(&self, a: usize) -> usize {
        self.dst[a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Terminal reward; 0 for interior states.
    pub fn reward(&self, s: usize) -> f64 {
        self.reward[s]
    }

    /// Success probability from `s` under the uniform policy with
    /// `remaining` actions left (capped at H).
    pub fn value(&self, s: usize, remaining: usize) -> f64 {
        if self.terminal[s] {
            return self.reward[s];
        }
        if remaining == 0 {
            return 0.0;
        }
        self.value[remaining.min(self.horizon)][s]
    }

    /// Exact Q(s, a) for an action taken after `depth` earlier actions.
    /// Zero once the horizon is exhausted.
    pub fn q_exact(&self, a: usize, depth: usize) -> f64 {
        if depth >= self.horizon {
            return 0.0;
        }
        self.value(self.dst[a], self.horizon - depth - 1)
    }

    /// Whether a path's final state pays reward 1.
    pub fn path_reward(&self, p: &Path) -> f64 {
        self.state_index(p.last_state())
            .filter(|&s| self.terminal[s])
            .map_or(0.0, |s| self.reward[s])
    }

    /// Checks that `p` starts at the root, follows edges, and fits the horizon.
    pub fn check_path(&self, p: &Path) -> Result<(), MdpError> {
        if p.states.len() != p.actions.len() + 1 {
            return Err(MdpError::InvalidPath(
                "state/action counts do not alternate".into(),
            ));
        }
        if p.states[0] != self.state_ids[self.root] {
            return Err(MdpError::InvalidPath(format!(
                "does not start at {}",
                self.root_id()
            )));
        }
        if p.actions.len() > self.horizon {
            return Err(MdpError::InvalidPath("longer than the horizon".into()));
        }
        for (t, a) in p.actions.iter().enumerate() {
            let s = self
                .state_index(&p.states[t])
                .ok_or_else(|| MdpError::UnknownState(p.states[t].clone()))?;
            let ai = self
                .action_index(a)
                .filter(|&ai| self.src[ai] == s)
                .ok_or_else(|| MdpError::UnknownAction {
                    state: p.states[t].clone(),
                    action: a.clone(),
                })?;
            if self.state_ids[self.dst[ai]] != p.states[t + 1] {
                return Err(MdpError::InvalidPath(format!(
                    "{a} leads to {}, not {}",
                    self.state_ids[self.dst[ai]],
                    p.states[t + 1]
                )));
            }
        }
        Ok(())
    }

    /// States occupied after exactly `t` actions, for t < H.
    fn layers(&self) -> Vec<BTreeSet<usize>> {
        let mut layers = vec![BTreeSet::from([self.root])];
        for t in 1..self.horizon {
            let next: BTreeSet<usize> = layers[t - 1]
                .iter()
                .flat_map(|&s| self.out[s].iter().map(|&a| self.dst[a]))
                .filter(|&s| !self.terminal[s])
                .collect();
            if next.is_empty() {
                break;
            }
            layers.push(next);
        }
        layers
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub depth: usize,
    pub state: String,
    pub action: String,
    pub q: f64,
}

/// Q^{π_u} for every (s, a) reachable within the horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    entries: BTreeMap<(usize, String, String), f64>,
    shallowest: BTreeMap<(String, String), usize>,
}

impl QTable {
    pub fn insert(&mut self, depth: usize, state: &str, action: &str, q: f64) {
        self.entries
            .insert((depth, state.to_string(), action.to_string()), q);
        let d = self
            .shallowest
            .entry((state.to_string(), action.to_string()))
            .or_insert(depth);
        *d = (*d).min(depth);
    }

    /// Value at the shallowest depth the pair occurs.
    pub fn get(&self, state: &str, action: &str) -> Option<f64> {
        let d = self
            .shallowest
            .get(&(state.to_string(), action.to_string()))?;
        self.get_at(state, action, *d)
    }

    pub fn get_at(&self, state: &str, action: &str, depth: usize) -> Option<f64> {
        self.entries
            .get(&(depth, state.to_string(), action.to_string()))
            .copied()
    }

    /// Number of distinct (s, a) pairs.
    pub fn len(&self) -> usize {
        self.shallowest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shallowest.is_empty()
    }

    /// (s, a) → value at the shallowest depth.
    pub fn pairs(&self) -> BTreeMap<(String, String), f64> {
        self.shallowest
            .iter()
            .map(|((s, a), d)| {
                (
                    (s.clone(), a.clone()),
                    self.entries[&(*d, s.clone(), a.clone())],
                )
            })
            .collect()
    }

    pub fn entries(&self) -> Vec<QEntry> {
        self.entries
            .iter()
            .map(|((depth, state, action), q)| QEntry {
                depth: *depth,
                state: state.clone(),
                action: action.clone(),
                q: *q,
            })
            .collect()
    }

    /// Actions recorded for `state` at `depth`, in id order.
    fn actions_at(&self, state: &str, depth: usize) -> Vec<(&str, f64)> {
        self.entries
            .iter()
            .filter(|((d, s, _), _)| *d == depth && s == state)
            .map(|((_, _, a), q)| (a.as_str(), *q))
            .collect()
    }
}

/// Exact uniform-policy Q table by backward induction over the horizon.
pub fn uniform_q(m: &KgMdp) -> QTable {
    let mut table = QTable::default();
    for (t, layer) in m.layers().iter().enumerate() {
        for &s in layer {
            for &a in m.actions_of(s) {
                table.insert(t, m.state_id(s), m.action_id(a), m.q_exact(a, t));
            }
        }
    }
    table
}

fn argmax<'a>(cands: impl Iterator<Item = (&'a str, f64)>) -> Option<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (a, q) in cands {
        match best {
            Some((ba, bq)) if q < bq || (q == bq && a >= ba) => {}
            _ => best = Some((a, q)),
        }
    }
    best
}

/// Follows argmax Q from the root (ties to the smallest action id) until a
/// terminal state or the horizon.
pub fn greedy_path(q: &QTable, m: &KgMdp) -> Result<Path, MdpError> {
    let mut s = m.root();
    let mut path = Path::single(m.state_id(s));
    for t in 0..m.horizon() {
        if m.is_terminal(s) {
            break;
        }
        let mut cands = Vec::new();
        for &a in m.actions_of(s) {
            let v =
                q.get_at(m.state_id(s), m.action_id(a), t)
                    .ok_or_else(|| MdpError::MissingQ {
                        state: m.state_id(s).to_string(),
                        action: m.action_id(a).to_string(),
                        depth: t,
                    })?;
            cands.push((m.action_id(a), v));
        }
        let (best, _) = argmax(cands.into_iter()).expect("non-terminal state has actions");
        let ai = m.action_index(best).expect("indexed action");
        s = m.action_dst(ai);
        path.actions.push(best.to_string());
        path.states.push(m.state_id(s).to_string());
    }
    Ok(path)
}

/// Enumerates every maximal root path of at most H actions. Returns the best
/// reward and all reward-1 paths in lexicographic order.
pub fn brute_force_optimal(m: &KgMdp) -> Result<(f64, Vec<Path>), MdpError> {
    brute_force_optimal_with_limit(m, BRUTE_FORCE_LIMIT)
}

pub fn brute_force_optimal_with_limit(
    m: &KgMdp,
    limit: usize,
) -> Result<(f64, Vec<Path>), MdpError> {
    let mut winners = Vec::new();
    let mut visited = 0usize;
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(m.root(), Vec::new())];
    while let Some((s, acts)) = stack.pop() {
        if m.is_terminal(s) || acts.len() == m.horizon() {
            visited += 1;
            if visited > limit {
                return Err(MdpError::TooManyPaths(limit));
            }
            if m.is_terminal(s) && m.reward(s) > 0.0 {
                let mut p = Path::single(m.root_id());
                for &a in &acts {
                    p.actions.push(m.action_id(a).to_string());
                    p.states.push(m.state_id(m.action_dst(a)).to_string());
                }
                winners.push(p);
            }
            continue;
        }
        for &a in m.actions_of(s).iter().rev() {
            let mut next = acts.clone();
            next.push(a);
            stack.push((m.action_dst(a), next));
        }
    }
    winners.sort();
    let best = if winners.is_empty() { 0.0 } else { 1.0 };
    Ok((best, winners))
}

/// 𝒞: every (s_t*, a) with a ∈ A(s_t*) along the path's decision points.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub entries: BTreeSet<(String, String)>,
}

pub fn critical_set(m: &KgMdp, tau_star: &Path) -> Result<CriticalSet, MdpError> {
    m.check_path(tau_star)?;
    let mut entries = BTreeSet::new();
    for s in &tau_star.states[..tau_star.actions.len()] {
        let si = m.state_index(s).expect("checked path");
        for &a in m.actions_of(si) {
            entries.insert((s.clone(), m.action_id(a).to_string()));
        }
    }
    Ok(CriticalSet { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub per_step: Vec<f64>,
    pub delta_min: f64,
}

impl GapReport {
    /// Δ_eff = Δ*_min − 2ε.
    pub fn delta_eff(&self, eps_bias: f64) -> f64 {
        self.delta_min - 2.0 * eps_bias
    }
}

/// Per-step gap Q(s_t*, a_t*) − max_{a ≠ a_t*} Q(s_t*, a); 1 at single-action
/// steps. Δ*_min of an action-free path is 1.
pub fn min_gap(q: &QTable, tau_star: &Path) -> Result<GapReport, MdpError> {
    if tau_star.states.len() != tau_star.actions.len() + 1 {
        return Err(MdpError::InvalidPath(
            "state/action counts do not alternate".into(),
        ));
    }
    let mut per_step = Vec::with_capacity(tau_star.actions.len());
    for (t, a_star) in tau_star.actions.iter().enumerate() {
        let s = &tau_star.states[t];
        let row = q.actions_at(s, t);
        let q_star = row
            .iter()
            .find(|(a, _)| a == a_star)
            .map(|(_, v)| *v)
            .ok_or_else(|| MdpError::MissingQ {
                state: s.clone(),
                action: a_star.clone(),
                depth: t,
            })?;
        let runner_up = row
            .iter()
            .filter(|(a, _)| a != a_star)
            .map(|(_, v)| *v)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        per_step.push(runner_up.map_or(1.0, |r| q_star - r));
    }
    let delta_min = per_step.iter().copied().fold(1.0, f64::min);
    Ok(GapReport {
        per_step,
        delta_min,
    })
}

/// One uniform-random continuation after taking `action` in `state` at the
/// state's shallowest depth. Returns the terminal reward.
pub fn rollout_uniform(m: &KgMdp, state: &str, action: &str, seed: u64) -> Result<f64, MdpError> {
    let depth = shallowest_depth(m, state)?;
    rollout_uniform_at(m, state, action, depth, seed)
}

pub fn rollout_uniform_at(
    m: &KgMdp,
    state: &str,
    action: &str,
    depth: usize,
    seed: u64,
) -> Result<f64, MdpError> {
    let s = m
        .state_index(state)
        .ok_or_else(|| MdpError::UnknownState(state.to_string()))?;
    let a = m
        .action_index(action)
        .filter(|&a| m.action_src(a) == s)
        .ok_or_else(|| MdpError::UnknownAction {
            state: state.to_string(),
            action: action.to_string(),
        })?;
    if depth >= m.horizon() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = m.action_dst(a);
    let mut remaining = m.horizon() - depth - 1;
    loop {
        if m.is_terminal(s) {
            return Ok(m.reward(s));
        }
        if remaining == 0 {
            return Ok(0.0);
        }
        let acts = m.actions_of(s);
        s = m.action_dst(acts[rng.gen_range(0..acts.len())]);
        remaining -= 1;
    }
}

/// Mean of `n` rollouts with per-rollout seeds derived from `root_seed`.
pub fn rollout_mean(
    m: &KgMdp,
    state: &str,
    action: &str,
    n: usize,
    root_seed: u64,
) -> Result<f64, MdpError> {
    let depth = shallowest_depth(m, state)?;
    let mut total = 0.0;
    for i in 0..n {
        total += rollout_uniform_at(m, state, action, depth, derive_seed(root_seed, i as u64))?;
    }
    Ok(total / n.max(1) as f64)
}

/// Smallest number of actions after which `state` can be occupied.
pub fn shallowest_depth(m: &KgMdp, state: &str) -> Result<usize, MdpError> {
    let s = m
        .state_index(state)
        .ok_or_else(|| MdpError::UnknownState(state.to_string()))?;
    m.layers()
        .iter()
        .position(|l| l.contains(&s))
        .ok_or_else(|| {
            MdpError::InvalidPath(format!("{state} is not reachable within the horizon"))
        })
}

/// Per-node simulation count n satisfying
/// n ≥ 32(K−1)c²·ln(Hn/δ)/Δ_eff² + 2(K−1)(2N0 + π²/3),
/// the smallest such n found by fixed-point iteration from n = 1.
pub fn simulation_budget(
    k: usize,
    c: f64,
    delta_eff: f64,
    horizon: usize,
    delta: f64,
    n0: f64,
) -> Result<u64, MdpError> {
    if !(delta_eff > 0.0) {
        return Err(MdpError::BiasViolated(delta_eff));
    }
    if k == 0 || horizon == 0 {
        return Err(MdpError::InvalidParameter(
            "K and H must be at least 1".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MdpError::InvalidParameter(format!(
            "delta {delta} outside (0, 1)"
        )));
    }
    if !(c >= 0.0 && c.is_finite() && n0 >= 0.0 && n0.is_finite()) {
        return Err(MdpError::InvalidParameter(
            "c and N0 must be finite and nonnegative".into(),
        ));
    }
    let km1 = (k - 1) as f64;
    let constant = 2.0 * km1 * (2.0 * n0 + std::f64::consts::PI.powi(2) / 3.0);
    let slope = 32.0 * km1 * c * c / (delta_eff * delta_eff);
    let rhs = |n: f64| slope * (horizon as f64 * n / delta).ln().max(0.0) + constant;
    let mut n = 1.0f64;
    for _ in 0..10_000 {
        let next = rhs(n).ceil().max(1.0);
        if next <= n {
            return Ok(n as u64);
        }
        n = next;
    }
    Err(MdpError::InvalidParameter(
        "budget iteration did not converge".into(),
    ))
}
