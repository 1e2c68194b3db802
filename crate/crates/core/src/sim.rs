//! Seeded synthetic environments and a simulated explorer.
//!
//! An environment is a ground-truth graph whose screens carry a topic word,
//! one button per outgoing action, and a page descriptor. Tasks name a goal
//! screen; their instructions mention the goal topic and some of the topics
//! on the way there. [`dfs_explore`] replays the hierarchical depth-first
//! exploration loop against the truth, with an oracle standing in for the
//! sub-goal proposer and the progress judge.

use crate::hashing::derive_seed;
use crate::io::{check_schema, read_text, to_json, write_text, FormatError};
use crate::kg::{
    element_feature, state_feature, ActionNode, ActionRecord, ElementRef, KgError, KnowledgeGraph,
    Rect, StateNode, StateObservation, Trajectory, SCHEMA_VERSION,
};
use crate::mdp::{brute_force_optimal, Instruction, KgMdp, MdpError, Path};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path as FsPath;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("exploration budget must be at least 1")]
    ZeroBudget,
    #[error("action `{0}` cannot be executed here")]
    BadAction(String),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEnvConfig {
    /// K
    pub branching: usize,
    pub depth: usize,
    pub goal_count: usize,
    /// Probability that a new child aliases an existing state one level down.
    pub dag_merge_prob: f64,
    /// Probability that an interior state is a dead end.
    #[serde(default)]
    pub terminal_prob: f64,
    /// Probability that an interior state has a single action, as on a
    /// confirmation screen. Such states produce repeated action chains.
    #[serde(default)]
    pub chain_prob: f64,
    /// Cap on states per level; further children alias existing ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_level_width: Option<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    pub seed: u64,
}

fn default_feature_dim() -> usize {
    32
}

impl Default for SynthEnvConfig {
    fn default() -> Self {
        SynthEnvConfig {
            branching: 3,
            depth: 4,
            goal_count: 1,
            dag_merge_prob: 0.0,
            terminal_prob: 0.0,
            chain_prob: 0.0,
            max_level_width: None,
            feature_dim: default_feature_dim(),
            seed: 0,
        }
    }
}

impl SynthEnvConfig {
    fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.branching < 2 {
            return bad("branching must be at least 2");
        }
        if self.depth < 2 {
            return bad("depth must be at least 2");
        }
        if self.goal_count < 1 {
            return bad("goal_count must be at least 1");
        }
        for (name, p) in [
            ("dag_merge_prob", self.dag_merge_prob),
            ("terminal_prob", self.terminal_prob),
            ("chain_prob", self.chain_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.max_level_width == Some(0) {
            return bad("max_level_width must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub instruction: Instruction,
    pub goals: Vec<String>,
    pub optimal: Path,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEnv {
    pub schema_version: u32,
    pub config: SynthEnvConfig,
    pub truth: KnowledgeGraph,
    pub root: String,
    pub horizon: usize,
    pub topics: BTreeMap<String, String>,
    pub tasks: Vec<Task>,
}

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "ri", "mu", "te", "la", "no", "si", "pe", "du", "fa", "gi", "ho", "ve", "zu", "ca",
    "lo", "mi", "ne", "tu",
];

fn topic_word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect()
}

struct Draft {
    id: String,
    topic: String,
    children: Vec<(String, usize)>,
}

/// Builds a seeded environment. Tasks target `goal_count` distinct
/// terminal screens.
pub fn generate_env(cfg: &SynthEnvConfig) -> Result<SynthEnv, SimError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drafts = vec![Draft {
        id: "s0".into(),
        topic: "home".into(),
        children: Vec::new(),
    }];
    let mut levels: Vec<Vec<usize>> = vec![vec![0]];
    let mut next_action = 0usize;
    for d in 0..cfg.depth {
        let mut next_level: Vec<usize> = Vec::new();
        for &s in &levels[d].clone() {
            let interior = d > 0;
            if interior && rng.gen::<f64>() < cfg.terminal_prob {
                continue;
            }
            let b = if interior && d + 1 < cfg.depth && rng.gen::<f64>() < cfg.chain_prob {
                1
            } else {
                cfg.branching
            };
            for _ in 0..b {
                let taken: BTreeSet<usize> = drafts[s].children.iter().map(|c| c.1).collect();
                let cands: Vec<usize> = next_level
                    .iter()
                    .copied()
                    .filter(|c| !taken.contains(c))
                    .collect();
                let full = cfg.max_level_width.is_some_and(|w| next_level.len() >= w);
                let alias = !cands.is_empty() && (full || rng.gen::<f64>() < cfg.dag_merge_prob);
                let child = if alias {
                    cands[rng.gen_range(0..cands.len())]
                } else {
                    let id = format!("s{}", drafts.len());
                    drafts.push(Draft {
                        id,
                        topic: topic_word(&mut rng),
                        children: Vec::new(),
                    });
                    next_level.push(drafts.len() - 1);
                    drafts.len() - 1
                };
                drafts[s].children.push((format!("a{next_action}"), child));
                next_action += 1;
            }
        }
        if next_level.is_empty() {
            break;
        }
        levels.push(next_level);
    }

    let dim = cfg.feature_dim;
    let mut g = KnowledgeGraph::new(dim)?;
    for d in &drafts {
        let elements: Vec<ElementRef> = d
            .children
            .iter()
            .enumerate()
            .map(|(i, (_, c))| {
                let descriptor = format!("{} button", drafts[*c].topic);
                ElementRef {
                    element_id: format!("e{i}"),
                    bbox: Rect {
                        x_min: 10.0,
                        y_min: 40.0 * i as f64 + 10.0,
                        x_max: 200.0,
                        y_max: 40.0 * i as f64 + 40.0,
                    },
                    feature: element_feature(&descriptor, dim),
                    descriptor,
                }
            })
            .collect();
        let page = format!("{} screen {}", d.topic, d.id);
        g.insert_state(StateNode {
            state_id: d.id.clone(),
            feature: state_feature(&page, &elements, dim),
            page_descriptor: page,
            elements,
            is_terminal: true,
        })?;
    }
    for d in &drafts {
        for (i, (a, c)) in d.children.iter().enumerate() {
            let node = ActionNode::atomic(
                a.clone(),
                "tap",
                Some(format!("e{i}")),
                format!("open {}", drafts[*c].topic),
            );
            g.insert_action(&d.id, node, &drafts[*c].id)?;
        }
    }

    let mut env = SynthEnv {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        truth: g,
        root: "s0".into(),
        horizon: cfg.depth,
        topics: drafts
            .iter()
            .map(|d| (d.id.clone(), d.topic.clone()))
            .collect(),
        tasks: Vec::new(),
    };
    let terminals = env.terminals();
    if cfg.goal_count > terminals.len() {
        return Err(SimError::Config(format!(
            "goal_count {} exceeds the {} terminal states",
            cfg.goal_count,
            terminals.len()
        )));
    }
    env.tasks = make_tasks(&env, cfg.goal_count, derive_seed(cfg.seed, 1))?;
    Ok(env)
}

impl SynthEnv {
    /// Terminal states other than the root, in id order.
    pub fn terminals(&self) -> Vec<String> {
        self.truth
            .states()
            .filter(|s| s.is_terminal && s.state_id != self.root)
            .map(|s| s.state_id.clone())
            .collect()
    }

    pub fn task(&self, id: &str) -> Result<&Task, SimError> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| SimError::UnknownTask(id.to_string()))
    }

    /// The planning problem for `task` on `graph` (the truth or a graph
    /// built from exploration).
    pub fn mdp_on(&self, graph: Arc<KnowledgeGraph>, task: &Task) -> Result<KgMdp, SimError> {
        Ok(KgMdp::with_goals(
            graph,
            task.instruction.clone(),
            task.goals.iter().cloned(),
            self.horizon,
            &self.root,
        )?)
    }

    pub fn mdp(&self, task: &Task) -> Result<KgMdp, SimError> {
        self.mdp_on(Arc::new(self.truth.clone()), task)
    }

    /// Runs element steps from the root; returns the visited states.
    pub fn execute(&self, actions: &[String]) -> Result<Vec<String>, SimError> {
        let mut s = self.root.clone();
        let mut visited = vec![s.clone()];
        for a in actions {
            let avail = self.truth.available_actions(&s)?;
            if !avail.contains(a) {
                return Err(SimError::BadAction(a.clone()));
            }
            s = self
                .truth
                .successor(a)
                .expect("valid truth graph")
                .to_string();
            visited.push(s.clone());
        }
        Ok(visited)
    }

    /// Whether executing `actions` ends on one of the task's goals.
    pub fn succeeds(&self, task: &Task, actions: &[String]) -> bool {
        self.execute(actions)
            .map(|v| task.goals.iter().any(|g| Some(g) == v.last()))
            .unwrap_or(false)
    }

    pub fn save(&self, path: &FsPath) -> Result<(), FormatError> {
        write_text(path, &to_json(self)?)
    }

    pub fn load(path: &FsPath) -> Result<Self, FormatError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        check_schema("environment", probe.schema_version, SCHEMA_VERSION)?;
        Ok(serde_json::from_str(text)?)
    }
}

/// Shortest-then-lexicographic reward-1 path to `goal`, if any.
fn optimal_path(env: &SynthEnv, goal: &str) -> Result<Option<Path>, SimError> {
    let m = KgMdp::with_goals(
        Arc::new(env.truth.clone()),
        Instruction::new("probe", ""),
        [goal],
        env.horizon,
        &env.root,
    )?;
    let (_, winners) = brute_force_optimal(&m)?;
    Ok(winners
        .into_iter()
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b))))
}

/// `n` tasks on distinct terminal goals, each with a known optimal path.
/// Fewer are returned, with a warning, when there are not enough goals.
pub fn make_tasks(env: &SynthEnv, n: usize, seed: u64) -> Result<Vec<Task>, SimError> {
    if n == 0 {
        return Err(SimError::Config("task count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut goals = env.terminals();
    goals.shuffle(&mut rng);
    let mut tasks = Vec::new();
    for goal in goals {
        if tasks.len() == n {
            break;
        }
        let Some(path) = optimal_path(env, &goal)? else {
            continue;
        };
        let mut words = Vec::new();
        for s in &path.states[1..path.states.len() - 1] {
            if rng.gen::<f64>() >= 0.3 {
                words.push(env.topics[s].clone());
            }
        }
        let text = if words.is_empty() {
            format!("open {}", env.topics[&goal])
        } else {
            format!("open {} via {}", env.topics[&goal], words.join(" "))
        };
        tasks.push(Task {
            id: format!("t{}", tasks.len()),
            instruction: Instruction::new(format!("t{}", tasks.len()), text),
            goals: vec![goal],
            optimal: path,
        });
    }
    if tasks.len() < n {
        log::warn!(
            "requested {n} tasks, only {} distinct goals available",
            tasks.len()
        );
    }
    Ok(tasks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExplorationOutcome {
    Continue,
    Backtrack,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    /// Candidate sub-goals considered per state.
    pub k: usize,
    /// Longest action segment explored from the root.
    pub max_depth: usize,
    /// Environment steps allowed.
    pub budget: usize,
    /// Chance of swapping each adjacent pair in the oracle's ranking.
    pub p_flip: f64,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            k: 3,
            max_depth: 5,
            budget: 200,
            p_flip: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub trajectories: Vec<Trajectory>,
    /// (step, action, outcome) in execution order.
    pub outcomes: Vec<(usize, String, ExplorationOutcome)>,
    pub steps: usize,
    pub budget_exhausted: bool,
}

struct Explorer<'a> {
    env: &'a SynthEnv,
    cfg: &'a ExploreConfig,
    goals: BTreeSet<String>,
    dist: BTreeMap<String, usize>,
    rng: ChaCha8Rng,
    report: ExploreReport,
    states: Vec<String>,
    actions: Vec<String>,
}

impl Explorer<'_> {
    fn observe(&mut self, state: &str) -> StateObservation {
        let node = self.env.truth.state(state).expect("truth state");
        let elements = node
            .elements
            .iter()
            .map(|e| {
                let mut e = e.clone();
                let dx = self.rng.gen_range(-0.5..0.5);
                let dy = self.rng.gen_range(-0.5..0.5);
                e.bbox = Rect {
                    x_min: e.bbox.x_min + dx,
                    y_min: e.bbox.y_min + dy,
                    x_max: e.bbox.x_max + dx,
                    y_max: e.bbox.y_max + dy,
                };
                e.feature = Vec::new();
                e
            })
            .collect();
        StateObservation {
            observed_id: state.to_string(),
            page_descriptor: node.page_descriptor.clone(),
            elements,
            feature: None,
        }
    }

    fn emit(&mut self) {
        let states: Vec<StateObservation> = self
            .states
            .clone()
            .iter()
            .map(|s| self.observe(s))
            .collect();
        let actions = self
            .actions
            .iter()
            .map(|a| {
                let node = self.env.truth.action(a).expect("truth action");
                ActionRecord {
                    action_id: Some(a.clone()),
                    source_element: node.source_element.clone(),
                    operation: node.operation.clone(),
                    descriptor: Some(node.functional_descriptor.clone()),
                }
            })
            .collect();
        let n = self.report.trajectories.len();
        let t = Trajectory::from_parts(format!("explore:{}:{n}", self.cfg.seed), states, actions)
            .expect("alternating by construction");
        self.report.trajectories.push(t);
    }

    /// The sub-goal proposer: actions ordered by distance to the goal, then
    /// id, with seeded adjacent swaps; at most k of them.
    fn candidates(&mut self, state: &str) -> Vec<String> {
        let mut acts = self.env.truth.available_actions(state).unwrap_or_default();
        let d = |a: &String| {
            let s = self.env.truth.successor(a).unwrap_or_default();
            self.dist.get(s).copied().unwrap_or(usize::MAX)
        };
        acts.sort_by(|a, b| d(a).cmp(&d(b)).then_with(|| a.cmp(b)));
        for i in 0..acts.len().saturating_sub(1) {
            if self.rng.gen::<f64>() < self.cfg.p_flip {
                acts.swap(i, i + 1);
            }
        }
        acts.truncate(self.cfg.k);
        acts
    }

    /// Returns false once the budget is spent.
    fn dfs(&mut self, state: &str, depth: usize) -> bool {
        for a in self.candidates(state) {
            if self.report.steps >= self.cfg.budget {
                self.report.budget_exhausted = true;
                return false;
            }
            self.report.steps += 1;
            let next = self
                .env
                .truth
                .successor(&a)
                .expect("truth action")
                .to_string();
            self.states.push(next.clone());
            self.actions.push(a.clone());
            let remaining = self.cfg.max_depth - depth - 1;
            let outcome = if self.goals.contains(&next) {
                ExplorationOutcome::Complete
            } else if self.dist.get(&next).is_none_or(|&d| d > remaining) {
                ExplorationOutcome::Backtrack
            } else {
                ExplorationOutcome::Continue
            };
            self.report.outcomes.push((self.report.steps, a, outcome));
            let keep_going = match outcome {
                ExplorationOutcome::Continue => {
                    let ok = self.dfs(&next, depth + 1);
                    if !ok && self.actions.len() == depth + 1 && !self.emitted_current() {
                        self.emit();
                    }
                    ok
                }
                _ => {
                    self.emit();
                    true
                }
            };
            self.states.pop();
            self.actions.pop();
            if !keep_going {
                return false;
            }
        }
        true
    }

    /// Whether the current path is a prefix of the last emitted trajectory.
    fn emitted_current(&self) -> bool {
        self.report.trajectories.last().is_some_and(|t| {
            let acts = t.actions();
            acts.len() >= self.actions.len()
                && acts
                    .iter()
                    .zip(&self.actions)
                    .all(|(r, a)| r.action_id.as_deref() == Some(a.as_str()))
        })
    }
}

/// Simulated depth-first exploration for one task.
///
/// Each candidate is executed; COMPLETE at a goal and BACKTRACK when the goal
/// is out of reach within the remaining depth end that branch, CONTINUE
/// descends. Every ended branch yields one root-anchored trajectory.
pub fn dfs_explore(
    env: &SynthEnv,
    task: &Task,
    cfg: &ExploreConfig,
) -> Result<ExploreReport, SimError> {
    if cfg.budget == 0 {
        return Err(SimError::ZeroBudget);
    }
    if cfg.k == 0 || cfg.max_depth == 0 {
        return Err(SimError::Config(
            "k and max_depth must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_flip) {
        return Err(SimError::Config("p_flip must lie in [0, 1]".into()));
    }
    let goals: BTreeSet<String> = task.goals.iter().cloned().collect();
    let mut ex = Explorer {
        env,
        cfg,
        dist: goal_distances(&env.truth, &goals),
        goals,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        report: ExploreReport::default(),
        states: vec![env.root.clone()],
        actions: Vec::new(),
    };
    if ex.goals.contains(&env.root) {
        ex.emit();
        return Ok(ex.report);
    }
    ex.dfs(&env.root, 0);
    Ok(ex.report)
}

/// Fewest actions from each state to a goal.
fn goal_distances(g: &KnowledgeGraph, goals: &BTreeSet<String>) -> BTreeMap<String, usize> {
    let mut preds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in g.states() {
        for n in g.successor_states(&s.state_id) {
            preds.entry(n).or_default().push(&s.state_id);
        }
    }
    let mut dist: BTreeMap<String, usize> = BTreeMap::new();
    let mut queue: VecDeque<(&str, usize)> = VecDeque::new();
    for goal in goals {
        if g.state(goal).is_some() {
            dist.insert(goal.clone(), 0);
            queue.push_back((goal.as_str(), 0));
        }
    }
    while let Some((s, d)) = queue.pop_front() {
        for &p in preds.get(s).map(Vec::as_slice).unwrap_or(&[]) {
            if !dist.contains_key(p) {
                dist.insert(p.to_string(), d + 1);
                queue.push_back((p, d + 1));
            }
        }
    }
    dist
}

/// Knobs for [`random_mdp`].
#[derive(Clone, Debug, PartialEq)]
pub struct RandomMdpSpec {
    pub max_branching: usize,
    pub max_horizon: usize,
    /// Upper bound on K^H, to keep exhaustive enumeration cheap.
    pub max_paths: usize,
    pub goal_prob: f64,
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        RandomMdpSpec {
            max_branching: 5,
            max_horizon: 8,
            max_paths: 20_000,
            goal_prob: 0.3,
        }
    }
}

/// A random acyclic binary-reward MDP. Goals are sampled among terminal
/// states, so some instances have none.
pub fn random_mdp(seed: u64, spec: &RandomMdpSpec) -> Result<KgMdp, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, h) = loop {
        let k = rng.gen_range(2..=spec.max_branching.max(2));
        let h = rng.gen_range(2..=spec.max_horizon.max(2));
        if (k as f64).powi(h as i32) <= spec.max_paths as f64 {
            break (k, h);
        }
    };
    let cfg = SynthEnvConfig {
        branching: k,
        depth: h,
        goal_count: 1,
        dag_merge_prob: rng.gen_range(0.0..0.5),
        terminal_prob: rng.gen_range(0.0..0.3),
        chain_prob: rng.gen_range(0.0..0.2),
        max_level_width: Some(64),
        feature_dim: 4,
        seed: derive_seed(seed, 7),
    };
    let env = generate_env(&cfg)?;
    let goals: Vec<String> = env
        .terminals()
        .into_iter()
        .filter(|_| rng.gen::<f64>() < spec.goal_prob)
        .collect();
    Ok(KgMdp::with_goals(
        Arc::new(env.truth),
        Instruction::new(format!("rand{seed}"), "random task"),
        goals,
        h,
        "s0",
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{merge_trajectory, DedupConfig, TemplateProvider};

    fn cfg(k: usize, depth: usize) -> SynthEnvConfig {
        SynthEnvConfig {
            branching: k,
            depth,
            ..SynthEnvConfig::default()
        }
    }

    #[test]
    fn perfect_binary_tree() {
        let env = generate_env(&SynthEnvConfig {
            goal_count: 1,
            ..cfg(2, 2)
        })
        .unwrap();
        assert_eq!(env.truth.state_count(), 7);
        assert_eq!(env.terminals().len(), 4);
        assert_eq!(env.tasks.len(), 1);
        assert!(env.truth.validate().is_empty());
    }

    #[test]
    fn same_seed_same_env() {
        let c = SynthEnvConfig {
            dag_merge_prob: 0.3,
            seed: 5,
            ..cfg(3, 3)
        };
        assert_eq!(generate_env(&c).unwrap(), generate_env(&c).unwrap());
    }

    #[test]
    fn full_merge_shrinks_state_count() {
        let env = generate_env(&SynthEnvConfig {
            dag_merge_prob: 1.0,
            ..cfg(2, 3)
        })
        .unwrap();
        assert!(env.truth.state_count() < 15);
        assert!(env.truth.validate().is_empty());
    }

    #[test]
    fn config_errors() {
        assert!(generate_env(&cfg(1, 3)).is_err());
        assert!(generate_env(&cfg(2, 1)).is_err());
        assert!(generate_env(&SynthEnvConfig {
            goal_count: 5,
            ..cfg(2, 2)
        })
        .is_err());
    }

    #[test]
    fn tasks_match_brute_force() {
        let env = generate_env(&SynthEnvConfig {
            seed: 3,
            ..cfg(3, 3)
        })
        .unwrap();
        let tasks = make_tasks(&env, 1, 9).unwrap();
        let m = env.mdp(&tasks[0]).unwrap();
        let (best, winners) = brute_force_optimal(&m).unwrap();
        assert_eq!(best, 1.0);
        assert!(winners.contains(&tasks[0].optimal));
        assert_eq!(make_tasks(&env, 1, 9).unwrap(), tasks);
        let all = make_tasks(&env, env.terminals().len(), 1).unwrap();
        let goals: BTreeSet<&String> = all.iter().map(|t| &t.goals[0]).collect();
        assert_eq!(goals.len(), env.terminals().len());
    }

    #[test]
    fn goal_at_depth_one() {
        let env = generate_env(&cfg(2, 2)).unwrap();
        let goal = env.truth.successor_states("s0")[0].to_string();
        let task = Task {
            id: "near".into(),
            instruction: Instruction::new("near", "near"),
            goals: vec![goal.clone()],
            optimal: Path::single("s0"),
        };
        let r = dfs_explore(
            &env,
            &task,
            &ExploreConfig {
                k: 2,
                ..ExploreConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.outcomes[0].2, ExplorationOutcome::Complete);
        assert_eq!(r.trajectories[0].states().last().unwrap().observed_id, goal);
    }

    #[test]
    fn unreachable_goal_backtracks_everywhere() {
        let env = generate_env(&cfg(3, 3)).unwrap();
        let task = Task {
            id: "none".into(),
            instruction: Instruction::new("none", "none"),
            goals: vec![],
            optimal: Path::single("s0"),
        };
        let c = ExploreConfig {
            budget: 2,
            ..ExploreConfig::default()
        };
        let r = dfs_explore(&env, &task, &c).unwrap();
        assert!(r
            .outcomes
            .iter()
            .all(|o| o.2 == ExplorationOutcome::Backtrack));
        assert!(r.steps <= 2);
        assert!(matches!(
            dfs_explore(&env, &task, &ExploreConfig { budget: 0, ..c }),
            Err(SimError::ZeroBudget)
        ));
    }

    #[test]
    fn exploration_recovers_optimal_path() {
        let env = generate_env(&SynthEnvConfig {
            seed: 11,
            ..cfg(2, 3)
        })
        .unwrap();
        let task = &env.tasks[0];
        let r = dfs_explore(
            &env,
            task,
            &ExploreConfig {
                k: 2,
                budget: 1000,
                ..ExploreConfig::default()
            },
        )
        .unwrap();
        assert!(r
            .outcomes
            .iter()
            .any(|o| o.2 == ExplorationOutcome::Backtrack));
        let mut g = KnowledgeGraph::new(env.truth.feature_dim()).unwrap();
        for t in &r.trajectories {
            merge_trajectory(&mut g, t, &DedupConfig::default(), &TemplateProvider).unwrap();
        }
        assert!(g.validate().is_empty());
        for (a, s) in task.optimal.actions.iter().zip(&task.optimal.states[1..]) {
            assert_eq!(g.successor(a), Some(s.as_str()));
        }
    }

    #[test]
    fn env_file_round_trip() {
        let env = generate_env(&SynthEnvConfig {
            seed: 2,
            dag_merge_prob: 0.4,
            ..cfg(3, 3)
        })
        .unwrap();
        let back = SynthEnv::from_json(&to_json(&env).unwrap()).unwrap();
        assert_eq!(env, back);
    }
}
