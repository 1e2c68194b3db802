//! Browser bindings. Each export takes a JSON request and returns a JSON
//! response; the plain functions underneath are usable from native code.

use kgplan_core::groups::{expand_corpus, mine_groups_with_corpus, PathCorpus};
use kgplan_core::hashing::derive_seed;
use kgplan_core::mcts::{
    extract, top1_success, ExactOracle, MctsConfig, NoiseMode, NoisyOracle, QFunction, Strategy,
};
use kgplan_core::sim::{generate_env, SynthEnv, SynthEnvConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct EnvRequest {
    pub k: usize,
    pub depth: usize,
    pub merge_prob: f64,
    pub chain_prob: f64,
    pub seed: u64,
}

impl Default for EnvRequest {
    fn default() -> Self {
        EnvRequest {
            k: 3,
            depth: 4,
            merge_prob: 0.0,
            chain_prob: 0.0,
            seed: 0,
        }
    }
}

impl EnvRequest {
    fn build(&self, seed: u64) -> Result<SynthEnv, String> {
        if self
            .k
            .checked_pow(self.depth as u32)
            .is_none_or(|n| n > 4096)
        {
            return Err("environment too large for the demo (keep k^depth ≤ 4096)".into());
        }
        generate_env(&SynthEnvConfig {
            branching: self.k,
            depth: self.depth,
            dag_merge_prob: self.merge_prob,
            chain_prob: self.chain_prob,
            seed,
            ..SynthEnvConfig::default()
        })
        .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct SearchRequest {
    pub env: EnvRequest,
    pub strategy: String,
    pub iterations: usize,
    pub c: f64,
    pub top_k: usize,
    /// Bias bound on the oracle; 0 plans with exact Q.
    pub noise: f64,
}

impl Default for SearchRequest {
    fn default() -> Self {
        SearchRequest {
            env: EnvRequest::default(),
            strategy: "mcts".into(),
            iterations: 50,
            c: 10.0,
            top_k: 5,
            noise: 0.0,
        }
    }
}

#[derive(Serialize)]
struct Node {
    id: String,
    label: String,
    depth: usize,
    goal: bool,
}

#[derive(Serialize)]
struct Link {
    action: String,
    from: String,
    to: String,
}

#[derive(Serialize)]
struct PlanView {
    actions: Vec<String>,
    states: Vec<String>,
    node_q: Vec<f64>,
    mean_q: f64,
    visits: u64,
    success: bool,
}

#[derive(Serialize)]
struct SearchResponse {
    instruction: String,
    nodes: Vec<Node>,
    links: Vec<Link>,
    optimal: Vec<String>,
    plans: Vec<PlanView>,
    success: f64,
}

fn oracle(noise: f64, seed: u64) -> Result<Box<dyn QFunction>, String> {
    if !(0.0..=1.0).contains(&noise) {
        return Err("noise must lie in [0, 1]".into());
    }
    Ok(if noise == 0.0 {
        Box::new(ExactOracle)
    } else {
        Box::new(NoisyOracle {
            eps: noise,
            mode: NoiseMode::Random { seed },
        })
    })
}

/// Generates an environment, plans for its first task and returns the
/// graph with the ranked plans.
pub fn search(req: &SearchRequest) -> Result<String, String> {
    let env = req.env.build(req.env.seed)?;
    let task = &env.tasks[0];
    let m = env.mdp(task).map_err(|e| e.to_string())?;
    let strategy: Strategy = req.strategy.parse()?;
    let cfg = MctsConfig {
        iterations: req.iterations,
        exploration: req.c,
        top_k: req.top_k,
        seed: req.env.seed,
    };
    let qf = oracle(req.noise, req.env.seed)?;
    let plans = extract(&m, qf.as_ref(), strategy, &cfg).map_err(|e| e.to_string())?;

    let mut depth = BTreeMap::new();
    let mut frontier = vec![env.root.clone()];
    let mut d = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for s in frontier {
            if depth.contains_key(&s) {
                continue;
            }
            depth.insert(s.clone(), d);
            next.extend(env.truth.successor_states(&s).into_iter().map(String::from));
        }
        frontier = next;
        d += 1;
    }
    let response = SearchResponse {
        instruction: task.instruction.text.clone(),
        nodes: env
            .truth
            .states()
            .map(|s| Node {
                id: s.state_id.clone(),
                label: env.topics.get(&s.state_id).cloned().unwrap_or_default(),
                depth: depth.get(&s.state_id).copied().unwrap_or(0),
                goal: task.goals.contains(&s.state_id),
            })
            .collect(),
        links: env
            .truth
            .actions()
            .map(|a| Link {
                action: a.action_id.clone(),
                from: env
                    .truth
                    .source(&a.action_id)
                    .unwrap_or_default()
                    .to_string(),
                to: env
                    .truth
                    .successor(&a.action_id)
                    .unwrap_or_default()
                    .to_string(),
            })
            .collect(),
        optimal: task.optimal.states.clone(),
        success: top1_success(&m, &plans),
        plans: plans
            .iter()
            .map(|p| PlanView {
                actions: p.path.actions.clone(),
                states: p.path.states.clone(),
                node_q: p.node_q.clone(),
                mean_q: p.mean_q,
                visits: p.visits,
                success: m.path_reward(&p.path) > 0.0,
            })
            .collect(),
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct CurveRequest {
    pub env: EnvRequest,
    pub budgets: Vec<usize>,
    pub instances: usize,
    pub c: f64,
    pub noise: f64,
}

impl Default for CurveRequest {
    fn default() -> Self {
        CurveRequest {
            env: EnvRequest::default(),
            budgets: vec![5, 10, 20, 30, 50, 100],
            instances: 20,
            c: 10.0,
            noise: 0.1,
        }
    }
}

#[derive(Serialize)]
struct CurvePoint {
    iterations: usize,
    success: f64,
}

/// Top-1 MCTS success against the iteration budget, over seeded instances.
pub fn curve(req: &CurveRequest) -> Result<String, String> {
    if req.instances == 0 || req.instances > 200 {
        return Err("instances must be between 1 and 200".into());
    }
    let mut mdps = Vec::with_capacity(req.instances);
    for i in 0..req.instances {
        let seed = derive_seed(req.env.seed, i as u64);
        let env = req.env.build(seed)?;
        mdps.push((env.mdp(&env.tasks[0]).map_err(|e| e.to_string())?, seed));
    }
    let mut points = Vec::new();
    for &iterations in &req.budgets {
        let mut ok = 0.0;
        for (m, seed) in &mdps {
            let qf = oracle(req.noise, *seed)?;
            let cfg = MctsConfig {
                iterations,
                exploration: req.c,
                top_k: 1,
                seed: *seed,
            };
            ok += top1_success(
                m,
                &extract(m, qf.as_ref(), Strategy::Mcts, &cfg).map_err(|e| e.to_string())?,
            );
        }
        points.push(CurvePoint {
            iterations,
            success: ok / mdps.len() as f64,
        });
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RuleView {
    left: String,
    right: String,
    id: String,
    chain: Vec<String>,
    frequency: usize,
}

#[derive(Serialize)]
struct MineResponse {
    rules: Vec<RuleView>,
    merged: Vec<Vec<String>>,
    restored: bool,
}

/// Mines groups from whitespace-separated action sequences, one per line.
pub fn mine(corpus: &str, delta_f: usize) -> Result<String, String> {
    let paths: Vec<Vec<String>> = corpus
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    let c = PathCorpus::new(paths);
    let (rules, merged) = mine_groups_with_corpus(&c, delta_f).map_err(|e| e.to_string())?;
    let restored = expand_corpus(&merged, &rules).paths == c.paths;
    let mut chains: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut views = Vec::with_capacity(rules.len());
    for r in &rules {
        let part = |id: &String| chains.get(id).cloned().unwrap_or_else(|| vec![id.clone()]);
        let chain = [part(&r.left), part(&r.right)].concat();
        chains.insert(r.new_id.clone(), chain.clone());
        views.push(RuleView {
            left: r.left.clone(),
            right: r.right.clone(),
            id: r.new_id.clone(),
            chain,
            frequency: r.frequency,
        });
    }
    serde_json::to_string(&MineResponse {
        rules: views,
        merged: merged.paths,
        restored,
    })
    .map_err(|e| e.to_string())
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, JsError> {
    serde_json::from_str(json).map_err(|e| JsError::new(&format!("bad request: {e}")))
}

#[wasm_bindgen]
pub fn run_search(request: &str) -> Result<String, JsError> {
    search(&parse(request)?).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn budget_curve(request: &str) -> Result<String, JsError> {
    curve(&parse(request)?).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mine_groups(corpus: &str, delta_f: usize) -> Result<String, JsError> {
    mine(corpus, delta_f).map_err(|e| JsError::new(&e))
}
