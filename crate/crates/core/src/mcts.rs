//! Q-guided Monte Carlo tree search over a [`KgMdp`].
//!
//! Nodes are path positions: a DAG state reached along two different paths
//! becomes two tree nodes. Every iteration descends by UCT to a leaf,
//! expands all of its actions with priors from a [`QFunction`], and
//! back-propagates the leaf's value by incremental averaging. Terminal
//! leaves propagate their true reward.

use crate::hashing::{derive_seed, seeded_str_hash, unit_interval};
use crate::mdp::{KgMdp, Path};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MctsError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("node {0} is not in the tree")]
    DetachedNode(usize),
}

/// Everything a value model may look at when scoring one action.
pub struct QueryContext<'a> {
    pub mdp: &'a KgMdp,
    /// Actions already taken from the root, as indices into `mdp`.
    pub history: &'a [usize],
    pub state: usize,
    pub action: usize,
    /// Number of earlier actions, `history.len()`.
    pub depth: usize,
}

/// Q(x, s, a, path-so-far) → [0, 1]. Implementations must tolerate
/// concurrent callers.
pub trait QFunction: Send + Sync {
    fn q(&self, ctx: &QueryContext<'_>) -> f64;
}

impl<F> QFunction for F
where
    F: Fn(&QueryContext<'_>) -> f64 + Send + Sync,
{
    fn q(&self, ctx: &QueryContext<'_>) -> f64 {
        self(ctx)
    }
}

/// Exact uniform-policy Q from the MDP's value table.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactOracle;

impl QFunction for ExactOracle {
    fn q(&self, ctx: &QueryContext<'_>) -> f64 {
        ctx.mdp.q_exact(ctx.action, ctx.depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// −ε on the greedy-optimal action, +ε on every other one: the worst
    /// case for a bias of size ε, shrinking each gap by 2ε.
    Adversarial,
    /// Independent uniform offsets in [−ε, ε], fixed per (seed, s, a, depth).
    Random { seed: u64 },
}

/// Exact oracle plus bounded bias, clamped to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyOracle {
    pub eps: f64,
    pub mode: NoiseMode,
}

impl QFunction for NoisyOracle {
    fn q(&self, ctx: &QueryContext<'_>) -> f64 {
        let m = ctx.mdp;
        let exact = m.q_exact(ctx.action, ctx.depth);
        let offset = match self.mode {
            NoiseMode::Adversarial => {
                let best = m
                    .actions_of(ctx.state)
                    .iter()
                    .copied()
                    .fold(None, |b: Option<(usize, f64)>, a| {
                        let q = m.q_exact(a, ctx.depth);
                        match b {
                            Some((_, bq)) if bq >= q => b,
                            _ => Some((a, q)),
                        }
                    })
                    .map(|(a, _)| a);
                if best == Some(ctx.action) {
                    -self.eps
                } else {
                    self.eps
                }
            }
            NoiseMode::Random { seed } => {
                let key = format!(
                    "{}\u{1f}{}\u{1f}{}",
                    m.state_id(ctx.state),
                    m.action_id(ctx.action),
                    ctx.depth
                );
                self.eps * (2.0 * unit_interval(seeded_str_hash(seed, &key)) - 1.0)
            }
        };
        (exact + offset).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    /// M
    pub iterations: usize,
    /// c
    pub exploration: f64,
    /// K
    pub top_k: usize,
    /// Recorded with every result. The search itself breaks ties by action
    /// id and draws no random numbers.
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            iterations: 50,
            exploration: 10.0,
            top_k: 5,
            seed: 0,
        }
    }
}

impl MctsConfig {
    pub fn check(&self) -> Result<(), MctsError> {
        if self.iterations == 0 {
            return Err(MctsError::Config("iterations must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(MctsError::Config("top_k must be at least 1".into()));
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err(MctsError::Config(
                "exploration constant must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    /// Action taken into this node; `None` at the root.
    pub action: Option<usize>,
    /// State reached.
    pub state: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub n: u64,
    pub q: f64,
    /// Value-model output at creation.
    pub prior: f64,
    pub expanded: bool,
    /// Iterations whose evaluation stopped at this node.
    pub evaluations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
    pub iterations: usize,
    pub note: Option<String>,
}

/// Q + c·√(ln N(s) / N(s,a)), +∞ for unvisited nodes.
pub fn uct(q: f64, n: u64, parent_n: u64, c: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    if c == 0.0 {
        return q;
    }
    q + c * ((parent_n.max(1) as f64).ln() / n as f64).sqrt()
}

impl SearchTree {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    /// Action indices from the root to `node`.
    pub fn history(&self, node: usize) -> Vec<usize> {
        let mut h = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            if let Some(a) = self.nodes[i].action {
                h.push(a);
            }
            cur = self.nodes[i].parent;
        }
        h.reverse();
        h
    }

    /// Node indices from the root to `node`, both included.
    pub fn lineage(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = self.nodes[node].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out.reverse();
        out
    }

    pub fn path_to(&self, m: &KgMdp, node: usize) -> Path {
        let mut p = Path::single(m.root_id());
        for i in self.lineage(node).into_iter().skip(1) {
            let n = &self.nodes[i];
            p.actions
                .push(m.action_id(n.action.expect("non-root")).to_string());
            p.states.push(m.state_id(n.state).to_string());
        }
        p
    }

    /// Incremental-average update along `leaf` → root.
    pub fn backprop(&mut self, leaf: usize, value: f64) -> Result<(), MctsError> {
        if leaf >= self.nodes.len() {
            return Err(MctsError::DetachedNode(leaf));
        }
        let mut cur = Some(leaf);
        while let Some(i) = cur {
            let n = &mut self.nodes[i];
            n.n += 1;
            n.q += (value - n.q) / n.n as f64;
            cur = n.parent;
        }
        Ok(())
    }

    fn expand(&mut self, m: &KgMdp, qf: &dyn QFunction, node: usize) {
        let history = self.history(node);
        let (state, depth) = (self.nodes[node].state, self.nodes[node].depth);
        for &a in m.actions_of(state) {
            let prior = qf
                .q(&QueryContext {
                    mdp: m,
                    history: &history,
                    state,
                    action: a,
                    depth,
                })
                .clamp(0.0, 1.0);
            let id = self.nodes.len();
            self.nodes.push(SearchNode {
                action: Some(a),
                state: m.action_dst(a),
                parent: Some(node),
                children: Vec::new(),
                depth: depth + 1,
                n: 0,
                q: prior,
                prior,
                expanded: false,
                evaluations: 0,
            });
            self.nodes[node].children.push(id);
        }
        self.nodes[node].expanded = true;
    }

    fn select_child(&self, node: usize, c: f64) -> usize {
        let parent_n = self.nodes[node].n;
        let mut best: Option<(usize, f64)> = None;
        // children are created in action-id order, so a strict > keeps the
        // lexicographically smallest on ties
        for &ch in &self.nodes[node].children {
            let n = &self.nodes[ch];
            let score = uct(n.q, n.n, parent_n, c);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((ch, score));
            }
        }
        best.expect("expanded node has children").0
    }
}

/// Runs exactly `cfg.iterations` selection/expansion/evaluation/backup
/// rounds from the MDP's root.
pub fn run_mcts(m: &KgMdp, qf: &dyn QFunction, cfg: &MctsConfig) -> Result<SearchTree, MctsError> {
    cfg.check()?;
    let mut tree = SearchTree {
        nodes: vec![SearchNode {
            action: None,
            state: m.root(),
            parent: None,
            children: Vec::new(),
            depth: 0,
            n: 0,
            q: 0.0,
            prior: 0.0,
            expanded: false,
            evaluations: 0,
        }],
        iterations: 0,
        note: None,
    };
    if m.is_terminal(m.root()) {
        tree.nodes[0].q = m.reward(m.root());
        tree.note = Some("root state is terminal".into());
        return Ok(tree);
    }
    for _ in 0..cfg.iterations {
        let mut node = SearchTree::ROOT;
        while tree.nodes[node].expanded && !tree.nodes[node].children.is_empty() {
            node = tree.select_child(node, cfg.exploration);
        }
        let (state, depth) = (tree.nodes[node].state, tree.nodes[node].depth);
        let value = if m.is_terminal(state) {
            m.reward(state)
        } else if depth >= m.horizon() {
            0.0
        } else {
            tree.expand(m, qf, node);
            if node == SearchTree::ROOT {
                let ch = &tree.nodes[node].children;
                ch.iter().map(|&c| tree.nodes[c].q).sum::<f64>() / ch.len() as f64
            } else {
                tree.nodes[node].q
            }
        };
        tree.nodes[node].evaluations += 1;
        tree.backprop(node, value)?;
        tree.iterations += 1;
    }
    Ok(tree)
}

/// An extracted plan with per-node estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPath {
    pub path: Path,
    pub node_q: Vec<f64>,
    pub mean_q: f64,
    pub visits: u64,
}

fn rank(mut cands: Vec<RankedPath>, k: usize) -> Vec<RankedPath> {
    cands.sort_by(|a, b| {
        b.mean_q
            .total_cmp(&a.mean_q)
            .then(b.visits.cmp(&a.visits))
            .then_with(|| a.path.actions.cmp(&b.path.actions))
    });
    cands.truncate(k);
    cands
}

/// Root-to-terminal traces ranked by mean node Q, then total visits, then
/// action ids. Created but unvisited terminal children count as traces.
pub fn extract_top_k(tree: &SearchTree, m: &KgMdp, k: usize) -> Vec<RankedPath> {
    if m.is_terminal(m.root()) {
        return vec![RankedPath {
            path: Path::single(m.root_id()),
            node_q: Vec::new(),
            mean_q: tree.root().q,
            visits: tree.root().n,
        }];
    }
    let mut cands = Vec::new();
    for (i, n) in tree.nodes.iter().enumerate().skip(1) {
        if !m.is_terminal(n.state) {
            continue;
        }
        let lineage = tree.lineage(i);
        let node_q: Vec<f64> = lineage[1..].iter().map(|&j| tree.nodes[j].q).collect();
        let visits = lineage[1..].iter().map(|&j| tree.nodes[j].n).sum();
        cands.push(RankedPath {
            path: tree.path_to(m, i),
            mean_q: node_q.iter().sum::<f64>() / node_q.len() as f64,
            node_q,
            visits,
        });
    }
    rank(cands, k)
}

fn qf_row(m: &KgMdp, qf: &dyn QFunction, history: &[usize], s: usize) -> Vec<(usize, f64)> {
    m.actions_of(s)
        .iter()
        .map(|&a| {
            let q = qf
                .q(&QueryContext {
                    mdp: m,
                    history,
                    state: s,
                    action: a,
                    depth: history.len(),
                })
                .clamp(0.0, 1.0);
            (a, q)
        })
        .collect()
}

fn to_ranked(m: &KgMdp, actions: &[usize], qs: Vec<f64>) -> RankedPath {
    let mut path = Path::single(m.root_id());
    for &a in actions {
        path.actions.push(m.action_id(a).to_string());
        path.states.push(m.state_id(m.action_dst(a)).to_string());
    }
    let mean_q = if qs.is_empty() {
        0.0
    } else {
        qs.iter().sum::<f64>() / qs.len() as f64
    };
    RankedPath {
        path,
        node_q: qs,
        mean_q,
        visits: 0,
    }
}

/// argmax qf at every step (ties to the smallest action id) until a
/// terminal state or the horizon.
pub fn greedy_extract(m: &KgMdp, qf: &dyn QFunction) -> RankedPath {
    let mut s = m.root();
    let mut history = Vec::new();
    let mut qs = Vec::new();
    while !m.is_terminal(s) && history.len() < m.horizon() {
        let row = qf_row(m, qf, &history, s);
        let (a, q) = row
            .into_iter()
            .fold(None, |b: Option<(usize, f64)>, (a, q)| match b {
                Some((_, bq)) if bq >= q => b,
                _ => Some((a, q)),
            })
            .expect("non-terminal state has actions");
        history.push(a);
        qs.push(q);
        s = m.action_dst(a);
    }
    to_ranked(m, &history, qs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonConfig {
    pub samples: usize,
    pub top_k: usize,
    /// Softmax temperature over qf values; 0 means argmax.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BonConfig {
    fn default() -> Self {
        BonConfig {
            samples: 10,
            top_k: 5,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Independent qf-softmax rollouts from the root, deduplicated, ranked by
/// cumulative Q. Samples that stop at the horizon without reaching a
/// terminal state are discarded.
pub fn best_of_n(m: &KgMdp, qf: &dyn QFunction, cfg: &BonConfig) -> Vec<RankedPath> {
    let mut seen = BTreeSet::new();
    let mut cands = Vec::new();
    for i in 0..cfg.samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let mut s = m.root();
        let mut history = Vec::new();
        let mut qs = Vec::new();
        while !m.is_terminal(s) && history.len() < m.horizon() {
            let row = qf_row(m, qf, &history, s);
            let pick = if cfg.temperature <= 0.0 {
                row.iter()
                    .copied()
                    .fold(None, |b: Option<(usize, f64)>, (a, q)| match b {
                        Some((_, bq)) if bq >= q => b,
                        _ => Some((a, q)),
                    })
                    .expect("non-terminal state has actions")
            } else {
                let mx = row.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = row
                    .iter()
                    .map(|r| ((r.1 - mx) / cfg.temperature).exp())
                    .collect();
                let mut u = rng.gen::<f64>() * w.iter().sum::<f64>();
                let mut j = 0;
                while j + 1 < w.len() && u >= w[j] {
                    u -= w[j];
                    j += 1;
                }
                row[j]
            };
            history.push(pick.0);
            qs.push(pick.1);
            s = m.action_dst(pick.0);
        }
        if !m.is_terminal(s) || !seen.insert(history.clone()) {
            continue;
        }
        let mut r = to_ranked(m, &history, qs);
        // cumulative Q is the ranking key for this strategy
        r.mean_q = r.node_q.iter().sum();
        cands.push(r);
    }
    cands.sort_by(|a, b| {
        b.mean_q
            .total_cmp(&a.mean_q)
            .then_with(|| a.path.actions.cmp(&b.path.actions))
    });
    cands.truncate(cfg.top_k);
    cands
}

/// One training target harvested from a search tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSample {
    pub history: Vec<String>,
    pub state: String,
    pub action: String,
    pub depth: usize,
    pub target: f64,
}

fn node_targets(tree: &SearchTree, m: &KgMdp) -> Vec<f64> {
    let mut t = vec![0.0; tree.nodes.len()];
    // children always have larger indices than their parent
    for i in (0..tree.nodes.len()).rev() {
        let n = &tree.nodes[i];
        t[i] = if m.is_terminal(n.state) {
            m.reward(n.state)
        } else if n.expanded && !n.children.is_empty() {
            n.children.iter().map(|&c| t[c]).sum::<f64>() / n.children.len() as f64
        } else if n.depth >= m.horizon() {
            0.0
        } else {
            n.prior
        }
        .clamp(0.0, 1.0);
    }
    t
}

/// Q̂(s, a) = r(s, a) + mean over A(s') of Q̂(s', a'), computed bottom-up
/// over the tree. One sample per non-root node.
pub fn bellman_samples(tree: &SearchTree, m: &KgMdp) -> Vec<TargetSample> {
    let t = node_targets(tree, m);
    tree.nodes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, n)| {
            let parent = &tree.nodes[n.parent.expect("non-root")];
            TargetSample {
                history: tree
                    .history(i)
                    .iter()
                    .take(n.depth - 1)
                    .map(|&a| m.action_id(a).to_string())
                    .collect(),
                state: m.state_id(parent.state).to_string(),
                action: m.action_id(n.action.expect("non-root")).to_string(),
                depth: n.depth - 1,
                target: t[i],
            }
        })
        .collect()
}

/// [`bellman_samples`] keyed by (state, action), keeping the shallowest
/// occurrence of each pair.
pub fn bellman_targets(tree: &SearchTree, m: &KgMdp) -> BTreeMap<(String, String), f64> {
    let mut out: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    for s in bellman_samples(tree, m) {
        let e = out
            .entry((s.state, s.action))
            .or_insert((s.depth, s.target));
        if s.depth < e.0 {
            *e = (s.depth, s.target);
        }
    }
    out.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

/// Hook applied to extracted plans before they are handed out.
pub trait PlanPostProcessor {
    fn process(&self, m: &KgMdp, plans: Vec<RankedPath>) -> Vec<RankedPath>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPostProcessor;

impl PlanPostProcessor for IdentityPostProcessor {
    fn process(&self, _: &KgMdp, plans: Vec<RankedPath>) -> Vec<RankedPath> {
        plans
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mcts,
    Greedy,
    Bon,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mcts" => Ok(Strategy::Mcts),
            "greedy" => Ok(Strategy::Greedy),
            "bon" => Ok(Strategy::Bon),
            _ => Err(format!(
                "unknown strategy `{s}` (expected mcts, greedy or bon)"
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Mcts => "mcts",
            Strategy::Greedy => "greedy",
            Strategy::Bon => "bon",
        })
    }
}

/// Runs one extraction strategy and returns ranked plans.
pub fn extract(
    m: &KgMdp,
    qf: &dyn QFunction,
    strategy: Strategy,
    cfg: &MctsConfig,
) -> Result<Vec<RankedPath>, MctsError> {
    cfg.check()?;
    Ok(match strategy {
        Strategy::Mcts => extract_top_k(&run_mcts(m, qf, cfg)?, m, cfg.top_k),
        Strategy::Greedy => {
            let g = greedy_extract(m, qf);
            if m.is_terminal(m.state_index(g.path.last_state()).expect("indexed")) {
                vec![g]
            } else {
                Vec::new()
            }
        }
        Strategy::Bon => best_of_n(
            m,
            qf,
            &BonConfig {
                samples: (2 * cfg.top_k).max(10),
                top_k: cfg.top_k,
                temperature: 1.0,
                seed: cfg.seed,
            },
        ),
    })
}

/// Reward of the top-ranked plan; 0 when nothing was extracted.
pub fn top1_success(m: &KgMdp, plans: &[RankedPath]) -> f64 {
    plans.first().map_or(0.0, |p| m.path_reward(&p.path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain_mdp, g1_graph, g1_mdp};
    use crate::mdp::{uniform_q, Instruction};
    use std::sync::Arc;

    #[test]
    fn uct_cases() {
        assert_eq!(uct(0.3, 5, 10, 0.0), 0.3);
        assert_eq!(uct(0.3, 0, 10, 1.0), f64::INFINITY);
        assert!((uct(0.3, 10, 100, 1.0) - 0.978_614_042_4).abs() < 1e-9);
    }

    fn lone_node_tree(q: f64, n: u64) -> SearchTree {
        SearchTree {
            nodes: vec![SearchNode {
                action: None,
                state: 0,
                parent: None,
                children: vec![],
                depth: 0,
                n,
                q,
                prior: q,
                expanded: false,
                evaluations: 0,
            }],
            iterations: 0,
            note: None,
        }
    }

    #[test]
    fn backprop_arithmetic() {
        let mut t = lone_node_tree(0.5, 1);
        t.backprop(0, 1.0).unwrap();
        assert_eq!((t.nodes[0].q, t.nodes[0].n), (0.75, 2));
        let mut t = lone_node_tree(0.0, 0);
        t.backprop(0, 0.3).unwrap();
        assert_eq!((t.nodes[0].q, t.nodes[0].n), (0.3, 1));
        let mut t = lone_node_tree(0.0, 0);
        for v in [1.0, 0.0, 1.0] {
            t.backprop(0, v).unwrap();
        }
        assert!((t.nodes[0].q - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.backprop(3, 1.0), Err(MctsError::DetachedNode(3)));
    }

    #[test]
    fn single_iteration_expands_root_only() {
        let m = g1_mdp();
        let cfg = MctsConfig {
            iterations: 1,
            ..MctsConfig::default()
        };
        let t = run_mcts(&m, &ExactOracle, &cfg).unwrap();
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.root().n, 1);
        let kids: Vec<(f64, u64)> = t
            .root()
            .children
            .iter()
            .map(|&c| (t.nodes[c].q, t.nodes[c].n))
            .collect();
        assert_eq!(kids, [(0.5, 0), (0.0, 0)]);
    }

    #[test]
    fn g1_search_prefers_optimal_child() {
        let m = g1_mdp();
        let t = run_mcts(&m, &ExactOracle, &MctsConfig::default()).unwrap();
        let best = t
            .root()
            .children
            .iter()
            .max_by(|&&a, &&b| t.nodes[a].q.total_cmp(&t.nodes[b].q))
            .unwrap();
        assert_eq!(m.action_id(t.nodes[*best].action.unwrap()), "a1");
        let plans = extract_top_k(&t, &m, 5);
        assert_eq!(plans[0].path.actions, ["a1", "a3"]);
        assert_eq!(top1_success(&m, &plans), 1.0);
        assert_eq!(t.root().n, 50);
    }

    #[test]
    fn goal_free_converges_to_zero() {
        let m = KgMdp::with_goals(
            Arc::new(g1_graph()),
            Instruction::new("x", ""),
            Vec::<String>::new(),
            2,
            "s0",
        )
        .unwrap();
        let t = run_mcts(&m, &ExactOracle, &MctsConfig::default()).unwrap();
        assert!(t.nodes.iter().all(|n| n.q == 0.0));
    }

    #[test]
    fn visit_conservation() {
        let m = g1_mdp();
        let t = run_mcts(
            &m,
            &NoisyOracle {
                eps: 0.2,
                mode: NoiseMode::Random { seed: 3 },
            },
            &MctsConfig {
                iterations: 17,
                exploration: 1.0,
                ..MctsConfig::default()
            },
        )
        .unwrap();
        assert_eq!(t.root().n, 17);
        for n in &t.nodes {
            let kids: u64 = n.children.iter().map(|&c| t.nodes[c].n).sum();
            assert_eq!(n.n, kids + n.evaluations);
        }
    }

    #[test]
    fn bellman_targets_match_uniform_q_on_full_tree() {
        let m = g1_mdp();
        let t = run_mcts(&m, &ExactOracle, &MctsConfig::default()).unwrap();
        let targets = bellman_targets(&t, &m);
        let q = uniform_q(&m).pairs();
        assert_eq!(targets, q);
    }

    #[test]
    fn shallow_tree_targets_are_priors() {
        let m = g1_mdp();
        let half = |_: &QueryContext<'_>| 0.5;
        let t = run_mcts(
            &m,
            &half,
            &MctsConfig {
                iterations: 1,
                ..MctsConfig::default()
            },
        )
        .unwrap();
        let targets = bellman_targets(&t, &m);
        assert_eq!(targets.values().copied().collect::<Vec<_>>(), [0.5, 0.5]);
        // a terminal child carries its reward
        let m = chain_mdp(1);
        let t = run_mcts(
            &m,
            &half,
            &MctsConfig {
                iterations: 1,
                ..MctsConfig::default()
            },
        )
        .unwrap();
        assert_eq!(
            bellman_targets(&t, &m)
                .values()
                .copied()
                .collect::<Vec<_>>(),
            [1.0]
        );
    }

    #[test]
    fn greedy_and_adversarial() {
        let m = g1_mdp();
        assert_eq!(greedy_extract(&m, &ExactOracle).path.actions, ["a1", "a3"]);
        let swap = |ctx: &QueryContext<'_>| match ctx.mdp.action_id(ctx.action) {
            "a1" => 0.0,
            "a2" => 0.5,
            _ => ctx.mdp.q_exact(ctx.action, ctx.depth),
        };
        let p = greedy_extract(&m, &swap);
        assert_eq!(p.path.actions, ["a2", "a5"]);
        assert_eq!(m.path_reward(&p.path), 0.0);
    }

    #[test]
    fn bon_limits() {
        let m = g1_mdp();
        let argmax = BonConfig {
            samples: 1,
            top_k: 1,
            temperature: 0.0,
            seed: 9,
        };
        assert_eq!(
            best_of_n(&m, &ExactOracle, &argmax)[0].path,
            greedy_extract(&m, &ExactOracle).path
        );
        let goal_free = KgMdp::with_goals(
            Arc::new(g1_graph()),
            Instruction::new("x", ""),
            Vec::<String>::new(),
            2,
            "s0",
        )
        .unwrap();
        let r = best_of_n(&goal_free, &ExactOracle, &BonConfig::default());
        assert!(!r.is_empty() && r.len() <= 5);
        assert!(r.iter().all(|p| goal_free.path_reward(&p.path) == 0.0));
        let a = best_of_n(&m, &ExactOracle, &BonConfig::default());
        assert_eq!(a, best_of_n(&m, &ExactOracle, &BonConfig::default()));
    }

    #[test]
    fn terminal_root_is_degenerate() {
        let m = chain_mdp(0);
        let t = run_mcts(&m, &ExactOracle, &MctsConfig::default()).unwrap();
        assert!(t.note.is_some());
        assert_eq!(extract_top_k(&t, &m, 3)[0].path, Path::single("c0"));
    }

    #[test]
    fn adversarial_noise_shrinks_gap() {
        let m = g1_mdp();
        let noisy = NoisyOracle {
            eps: 0.1,
            mode: NoiseMode::Adversarial,
        };
        let ctx = |a: &str| QueryContext {
            mdp: &m,
            history: &[],
            state: m.root(),
            action: m.action_index(a).unwrap(),
            depth: 0,
        };
        assert!((noisy.q(&ctx("a1")) - 0.4).abs() < 1e-12);
        assert!((noisy.q(&ctx("a2")) - 0.1).abs() < 1e-12);
    }
}
