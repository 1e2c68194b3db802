//! Small hand-built graphs shared by tests, examples and the demo.
//!
//! `G1`:
//!
//! ```text
//! s0 -a1-> s1 -a3-> s3 (goal)
//!             -a4-> s4
//!    -a2-> s2 -a5-> s4
//! ```

use crate::kg::{ActionNode, KnowledgeGraph, StateNode};
use crate::mdp::{Instruction, KgMdp};
use std::sync::Arc;

/// A state with no elements and a one-hot feature on its id's hash.
pub fn plain_state(id: &str, dim: usize) -> StateNode {
    let mut feature = vec![0.0; dim];
    feature[(crate::hashing::fnv1a64(id.as_bytes()) % dim as u64) as usize] = 1.0;
    StateNode {
        state_id: id.to_string(),
        page_descriptor: format!("{id} page"),
        feature,
        elements: Vec::new(),
        is_terminal: true,
    }
}

fn build(states: &[&str], edges: &[(&str, &str, &str)]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(4).expect("positive dim");
    for s in states {
        g.insert_state(plain_state(s, 4)).expect("fresh state");
    }
    for (from, a, to) in edges {
        g.insert_action(
            from,
            ActionNode::atomic(*a, "tap", None, format!("open {to}")),
            to,
        )
        .expect("acyclic fixture");
    }
    g
}

pub fn g1_graph() -> KnowledgeGraph {
    build(
        &["s0", "s1", "s2", "s3", "s4"],
        &[
            ("s0", "a1", "s1"),
            ("s0", "a2", "s2"),
            ("s1", "a3", "s3"),
            ("s1", "a4", "s4"),
            ("s2", "a5", "s4"),
        ],
    )
}

/// G1 with goal s3 and H = 2.
pub fn g1_mdp() -> KgMdp {
    KgMdp::with_goals(
        Arc::new(g1_graph()),
        Instruction::new("g1", "reach s3"),
        ["s3"],
        2,
        "s0",
    )
    .expect("valid fixture")
}

/// c0 → c1 → … → cn with one action per state and the goal at the end.
pub fn chain_mdp(n: usize) -> KgMdp {
    let ids: Vec<String> = (0..=n).map(|i| format!("c{i}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let edges: Vec<(&str, &str, &str)> = (0..n)
        .map(|i| (refs[i], names[i].as_str(), refs[i + 1]))
        .collect();
    KgMdp::with_goals(
        Arc::new(build(&refs, &edges)),
        Instruction::new("chain", "reach the end"),
        [ids[n].clone()],
        n.max(1),
        "c0",
    )
    .expect("valid fixture")
}
