//! Self-checks on a graph: greedy optimality of exact uniform-policy Q and
//! Monte Carlo agreement of rollouts with it, over seeded random goal sets.

use crate::hashing::derive_seed;
use crate::kg::KnowledgeGraph;
use crate::mdp::{
    brute_force_optimal, greedy_path, min_gap, rollout_mean, uniform_q, Instruction, KgMdp,
    MdpError,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub instances: usize,
    pub rollouts: usize,
    /// Overall failure probability for the rollout bound.
    pub delta: f64,
    pub goal_prob: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            instances: 50,
            rollouts: 10_000,
            delta: 0.01,
            goal_prob: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub instance: usize,
    pub goals: Vec<String>,
    pub horizon: usize,
    pub optimal_reward: f64,
    pub greedy_reward: f64,
    /// Δ*_min along the greedy path; absent when no goal is reachable.
    pub delta_min: Option<f64>,
    pub state: String,
    pub action: String,
    pub q: f64,
    pub rollout_mean: f64,
    pub greedy_ok: bool,
    pub rollout_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<InstanceCheck>,
    /// Hoeffding radius √(ln(2N/δ)/(2n)).
    pub bound: f64,
    pub greedy_failures: usize,
    pub rollout_failures: usize,
    /// N/50, rounded down.
    pub rollout_failures_allowed: usize,
    pub passed: bool,
}

/// Most actions on any path from `root`.
pub fn longest_path(g: &KnowledgeGraph, root: &str) -> usize {
    fn go<'a>(g: &'a KnowledgeGraph, s: &'a str, memo: &mut BTreeMap<&'a str, usize>) -> usize {
        if let Some(&d) = memo.get(s) {
            return d;
        }
        let d = g
            .successor_states(s)
            .into_iter()
            .map(|n| 1 + go(g, n, memo))
            .max()
            .unwrap_or(0);
        memo.insert(s, d);
        d
    }
    go(g, root, &mut BTreeMap::new())
}

/// Runs both suites. The root is the graph's first root in id order and the
/// horizon its longest path.
pub fn verify_graph(g: Arc<KnowledgeGraph>, cfg: &VerifyConfig) -> Result<VerifyReport, MdpError> {
    if cfg.instances == 0 || cfg.rollouts == 0 {
        return Err(MdpError::InvalidParameter(
            "instances and rollouts must be at least 1".into(),
        ));
    }
    let root = g
        .roots()
        .into_iter()
        .next()
        .ok_or_else(|| MdpError::InvalidParameter("graph has no root state".into()))?;
    let horizon = longest_path(&g, &root).max(1);
    let terminals: Vec<String> = g
        .states()
        .filter(|s| s.is_terminal && s.state_id != root)
        .map(|s| s.state_id.clone())
        .collect();
    if terminals.is_empty() {
        return Err(MdpError::InvalidParameter(
            "graph has no terminal state besides the root".into(),
        ));
    }
    let bound =
        ((2.0 * cfg.instances as f64 / cfg.delta).ln() / (2.0 * cfg.rollouts as f64)).sqrt();
    let mut checks = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let mut goals: Vec<String> = terminals
            .iter()
            .filter(|_| rng.gen::<f64>() < cfg.goal_prob)
            .cloned()
            .collect();
        if goals.is_empty() {
            goals.push(terminals.choose(&mut rng).expect("nonempty").clone());
        }
        let m = KgMdp::with_goals(
            g.clone(),
            Instruction::new(format!("verify{i}"), "verification task"),
            goals.iter().cloned(),
            horizon,
            &root,
        )?;
        let q = uniform_q(&m);
        let greedy = greedy_path(&q, &m)?;
        let greedy_reward = m.path_reward(&greedy);
        let (optimal_reward, _) = brute_force_optimal(&m)?;
        let delta_min = if greedy_reward > 0.0 {
            Some(min_gap(&q, &greedy)?.delta_min)
        } else {
            None
        };

        let entries = q.entries();
        let e = &entries[rng.gen_range(0..entries.len())];
        let shallow = q.get(&e.state, &e.action).expect("entry exists");
        let mean = rollout_mean(
            &m,
            &e.state,
            &e.action,
            cfg.rollouts,
            derive_seed(cfg.seed ^ 0x5eed, i as u64),
        )?;
        checks.push(InstanceCheck {
            instance: i,
            goals,
            horizon,
            optimal_reward,
            greedy_reward,
            delta_min,
            state: e.state.clone(),
            action: e.action.clone(),
            q: shallow,
            rollout_mean: mean,
            greedy_ok: greedy_reward == optimal_reward,
            rollout_ok: (mean - shallow).abs() <= bound,
        });
    }
    let greedy_failures = checks.iter().filter(|c| !c.greedy_ok).count();
    let rollout_failures = checks.iter().filter(|c| !c.rollout_ok).count();
    let rollout_failures_allowed = cfg.instances / 50;
    Ok(VerifyReport {
        passed: greedy_failures == 0 && rollout_failures <= rollout_failures_allowed,
        checks,
        bound,
        greedy_failures,
        rollout_failures,
        rollout_failures_allowed,
    })
}

pub const VERIFY_CSV_HEADER: [&str; 11] = [
    "instance",
    "goals",
    "optimal_reward",
    "greedy_reward",
    "delta_min",
    "state",
    "action",
    "q",
    "rollout_mean",
    "greedy_ok",
    "rollout_ok",
];

pub fn write_verify_csv<W: Write>(out: W, report: &VerifyReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VERIFY_CSV_HEADER)?;
    for c in &report.checks {
        w.write_record([
            c.instance.to_string(),
            c.goals.join(" "),
            c.optimal_reward.to_string(),
            c.greedy_reward.to_string(),
            c.delta_min.map(|d| d.to_string()).unwrap_or_default(),
            c.state.clone(),
            c.action.clone(),
            c.q.to_string(),
            c.rollout_mean.to_string(),
            c.greedy_ok.to_string(),
            c.rollout_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
