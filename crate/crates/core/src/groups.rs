//! Action-group mining.
//!
//! Paths through the graph are treated as sentences over action ids. The
//! most frequent adjacent pair is merged into a new symbol, repeatedly, for
//! as long as its count stays at or above `delta_f`: byte-pair encoding over
//! actions. Mined rules are then installed as group action nodes that jump
//! from the first constituent's source state to the last one's successor.

use crate::hashing::fnv1a64;
use crate::kg::{ActionKind, ActionNode, ElementStep, KgError, KnowledgeGraph};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// δ_f used when none is given. Not calibrated.
pub const DEFAULT_DELTA_F: usize = 3;
/// Upper bound on paths enumerated from a graph.
pub const DEFAULT_PATH_CAP: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("corpus has no adjacent action pair")]
    NoPairs,
    #[error("action `{0}` is not in the vocabulary")]
    UnknownId(String),
    #[error("delta_f must be at least 1")]
    ZeroThreshold,
    #[error("rule {left} + {right} is not composable: {reason}")]
    NonComposable {
        left: String,
        right: String,
        reason: String,
    },
    #[error(transparent)]
    Graph(#[from] KgError),
}

pub type Pair = (String, String);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCorpus {
    pub paths: Vec<Vec<String>>,
    pub vocabulary: BTreeSet<String>,
}

impl PathCorpus {
    pub fn new(paths: Vec<Vec<String>>) -> Self {
        let vocabulary = paths.iter().flatten().cloned().collect();
        PathCorpus { paths, vocabulary }
    }

    /// Root-to-terminal sequences of atomic actions, enumerated depth-first
    /// in action-id order, at most `cap` of them.
    pub fn from_graph(g: &KnowledgeGraph, cap: usize) -> Self {
        let mut paths = Vec::new();
        for root in g.roots() {
            let mut stack: Vec<(String, Vec<String>)> = vec![(root, Vec::new())];
            while let Some((state, prefix)) = stack.pop() {
                if paths.len() >= cap {
                    break;
                }
                let acts: Vec<String> = g
                    .available_actions(&state)
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|a| g.action(a).is_some_and(|n| n.kind == ActionKind::Atomic))
                    .collect();
                if acts.is_empty() {
                    if !prefix.is_empty() {
                        paths.push(prefix);
                    }
                    continue;
                }
                // reversed so the smallest id is explored first
                for a in acts.into_iter().rev() {
                    if let Some(next) = g.successor(&a) {
                        let mut p = prefix.clone();
                        p.push(a.clone());
                        stack.push((next.to_string(), p));
                    }
                }
            }
        }
        PathCorpus::new(paths)
    }

    pub fn token_count(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub new_id: String,
    pub frequency: usize,
    pub iteration: usize,
}

/// Occurrences of every adjacent ordered pair, one per position.
pub fn count_adjacent_pairs(c: &PathCorpus) -> BTreeMap<Pair, usize> {
    let mut counts = BTreeMap::new();
    for p in &c.paths {
        for w in p.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
        }
    }
    counts
}

/// Arg-max pair; ties go to the lexicographically smallest pair.
pub fn most_frequent_pair(c: &PathCorpus) -> Result<(Pair, usize), GroupError> {
    let mut best: Option<(Pair, usize)> = None;
    for (pair, n) in count_adjacent_pairs(c) {
        if best.as_ref().is_none_or(|(_, b)| n > *b) {
            best = Some((pair, n));
        }
    }
    best.ok_or(GroupError::NoPairs)
}

/// Greedy left-to-right, non-overlapping replacement of the rule's pair.
pub fn apply_merge(c: &PathCorpus, rule: &MergeRule) -> Result<PathCorpus, GroupError> {
    for id in [&rule.left, &rule.right] {
        if !c.vocabulary.contains(id) {
            return Err(GroupError::UnknownId(id.clone()));
        }
    }
    let paths = c
        .paths
        .iter()
        .map(|p| {
            let mut out = Vec::with_capacity(p.len());
            let mut i = 0;
            while i < p.len() {
                if i + 1 < p.len() && p[i] == rule.left && p[i + 1] == rule.right {
                    out.push(rule.new_id.clone());
                    i += 2;
                } else {
                    out.push(p[i].clone());
                    i += 1;
                }
            }
            out
        })
        .collect();
    let mut vocabulary = c.vocabulary.clone();
    vocabulary.insert(rule.new_id.clone());
    Ok(PathCorpus { paths, vocabulary })
}

/// Stable id for a group spelled by an atomic chain.
pub fn group_id(chain: &[String]) -> String {
    format!("grp:{:016x}", fnv1a64(chain.join("\u{1f}").as_bytes()))
}

/// Mines merge rules until the most frequent pair drops below `delta_f`.
pub fn mine_groups(c: &PathCorpus, delta_f: usize) -> Result<Vec<MergeRule>, GroupError> {
    mine_groups_with_corpus(c, delta_f).map(|(rules, _)| rules)
}

/// As [`mine_groups`], also returning the final corpus.
pub fn mine_groups_with_corpus(
    c: &PathCorpus,
    delta_f: usize,
) -> Result<(Vec<MergeRule>, PathCorpus), GroupError> {
    if delta_f == 0 {
        return Err(GroupError::ZeroThreshold);
    }
    let mut corpus = c.clone();
    let mut chains: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut rules = Vec::new();
    loop {
        let ((left, right), freq) = match most_frequent_pair(&corpus) {
            Ok(x) => x,
            Err(GroupError::NoPairs) => break,
            Err(e) => return Err(e),
        };
        if freq < delta_f {
            break;
        }
        let mut chain = chains
            .get(&left)
            .cloned()
            .unwrap_or_else(|| vec![left.clone()]);
        chain.extend(
            chains
                .get(&right)
                .cloned()
                .unwrap_or_else(|| vec![right.clone()]),
        );
        let new_id = group_id(&chain);
        chains.insert(new_id.clone(), chain);
        let rule = MergeRule {
            left,
            right,
            new_id,
            frequency: freq,
            iteration: rules.len(),
        };
        corpus = apply_merge(&corpus, &rule)?;
        rules.push(rule);
    }
    Ok((rules, corpus))
}

/// Rewrites every group id in `c` back into its atomic chain.
pub fn expand_corpus(c: &PathCorpus, rules: &[MergeRule]) -> PathCorpus {
    let by_id: BTreeMap<&str, &MergeRule> = rules.iter().map(|r| (r.new_id.as_str(), r)).collect();
    fn expand(id: &str, by_id: &BTreeMap<&str, &MergeRule>, out: &mut Vec<String>) {
        match by_id.get(id) {
            Some(r) => {
                expand(&r.left, by_id, out);
                expand(&r.right, by_id, out);
            }
            None => out.push(id.to_string()),
        }
    }
    let paths = c
        .paths
        .iter()
        .map(|p| {
            let mut out = Vec::new();
            for id in p {
                expand(id, &by_id, &mut out);
            }
            out
        })
        .collect();
    PathCorpus::new(paths)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallReport {
    pub installed: Vec<String>,
    /// Rules whose group already exists or whose installation would close a
    /// state cycle.
    pub skipped: Vec<String>,
}

/// Adds one group action node per rule. Atomic nodes stay in place.
pub fn install_groups(
    g: &KnowledgeGraph,
    rules: &[MergeRule],
) -> Result<(KnowledgeGraph, InstallReport), GroupError> {
    let mut out = g.clone();
    let mut report = InstallReport::default();
    let mut skipped: BTreeSet<&str> = BTreeSet::new();
    for r in rules {
        if skipped.contains(r.left.as_str()) || skipped.contains(r.right.as_str()) {
            skipped.insert(&r.new_id);
            report.skipped.push(r.new_id.clone());
            continue;
        }
        let left = out
            .action(&r.left)
            .ok_or_else(|| GroupError::UnknownId(r.left.clone()))?
            .clone();
        let right = out
            .action(&r.right)
            .ok_or_else(|| GroupError::UnknownId(r.right.clone()))?
            .clone();
        let non_comp = |reason: &str| GroupError::NonComposable {
            left: r.left.clone(),
            right: r.right.clone(),
            reason: reason.to_string(),
        };
        let src = out
            .source(&r.left)
            .ok_or_else(|| non_comp("left action has no source"))?;
        let mid = out
            .successor(&r.left)
            .ok_or_else(|| non_comp("left action has no successor"))?;
        let mid_r = out
            .source(&r.right)
            .ok_or_else(|| non_comp("right action has no source"))?;
        if mid != mid_r {
            return Err(non_comp(&format!("{mid} != {mid_r}")));
        }
        let dst = out
            .successor(&r.right)
            .ok_or_else(|| non_comp("right action has no successor"))?;
        let (src, dst) = (src.to_string(), dst.to_string());

        if out.action(&r.new_id).is_some() {
            report.skipped.push(r.new_id.clone());
            continue;
        }
        let element_sequence: Vec<ElementStep> = left
            .steps()
            .into_iter()
            .chain(right.steps())
            .enumerate()
            .map(|(order, s)| ElementStep { order, ..s })
            .collect();
        let node = ActionNode {
            action_id: r.new_id.clone(),
            kind: ActionKind::Group,
            functional_descriptor: format!(
                "{} then {}",
                left.functional_descriptor, right.functional_descriptor
            ),
            source_element: left.steps().first().map(|s| s.element_id.clone()),
            operation: String::new(),
            element_sequence,
        };
        match out.insert_action(&src, node, &dst) {
            Ok(()) => report.installed.push(r.new_id.clone()),
            Err(KgError::WouldCycle { .. }) => {
                skipped.insert(&r.new_id);
                report.skipped.push(r.new_id.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(paths: &[&[&str]]) -> PathCorpus {
        PathCorpus::new(
            paths
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
    }

    fn pair(a: &str, b: &str) -> Pair {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn counting() {
        let c = corpus(&[&["a", "b", "c"]]);
        let m = count_adjacent_pairs(&c);
        assert_eq!(m.len(), 2);
        assert_eq!(m[&pair("a", "b")], 1);
        assert_eq!(m[&pair("b", "c")], 1);

        let m = count_adjacent_pairs(&corpus(&[&["a", "a", "a"]]));
        assert_eq!(m[&pair("a", "a")], 2);

        let m = count_adjacent_pairs(&corpus(&[&["a", "b"], &["a", "b"], &["a", "c"]]));
        assert_eq!(m[&pair("a", "b")], 2);
        assert_eq!(m[&pair("a", "c")], 1);
    }

    #[test]
    fn most_frequent_and_ties() {
        let c = corpus(&[&["a", "b"], &["a", "b"], &["a", "c"]]);
        assert_eq!(most_frequent_pair(&c).unwrap(), (pair("a", "b"), 2));
        let c = corpus(&[&["a", "c"], &["a", "b"], &["a", "c"], &["a", "b"]]);
        assert_eq!(most_frequent_pair(&c).unwrap(), (pair("a", "b"), 2));
        assert_eq!(
            most_frequent_pair(&corpus(&[&["a"], &["b"]])),
            Err(GroupError::NoPairs)
        );
    }

    fn rule(l: &str, r: &str, g: &str) -> MergeRule {
        MergeRule {
            left: l.into(),
            right: r.into(),
            new_id: g.into(),
            frequency: 1,
            iteration: 0,
        }
    }

    #[test]
    fn merge_application() {
        let c = apply_merge(&corpus(&[&["a", "b", "c"]]), &rule("a", "b", "g")).unwrap();
        assert_eq!(c.paths, [["g", "c"]]);
        assert!(c.vocabulary.contains("g"));
        let c = apply_merge(&corpus(&[&["a", "a", "a"]]), &rule("a", "a", "g")).unwrap();
        assert_eq!(c.paths, [["g", "a"]]);
        let c = apply_merge(&corpus(&[&["b", "c"], &["a"]]), &rule("a", "b", "g")).unwrap();
        assert_eq!(c.paths[0], ["b", "c"]);
        assert_eq!(
            apply_merge(&corpus(&[&["b", "c"]]), &rule("a", "b", "g")),
            Err(GroupError::UnknownId("a".into()))
        );
    }

    #[test]
    fn single_iteration_trace() {
        let c = corpus(&[&["a1", "a3"], &["a1", "a3"], &["a1", "a4"]]);
        let (rules, fin) = mine_groups_with_corpus(&c, 2).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(
            (rules[0].left.as_str(), rules[0].right.as_str()),
            ("a1", "a3")
        );
        let g1 = rules[0].new_id.clone();
        assert_eq!(g1, group_id(&["a1".into(), "a3".into()]));
        assert_eq!(
            fin.paths,
            vec![vec![g1.clone()], vec![g1], vec!["a1".into(), "a4".into()]]
        );
        assert!(mine_groups(&c, 4).unwrap().is_empty());
        assert_eq!(mine_groups(&c, 0), Err(GroupError::ZeroThreshold));
    }

    #[test]
    fn two_iteration_trace() {
        let c = corpus(&[&["a", "b", "c"], &["a", "b", "c"], &["a", "b", "c"]]);
        let rules = mine_groups(&c, 2).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(
            (rules[0].left.as_str(), rules[0].right.as_str()),
            ("a", "b")
        );
        assert_eq!(rules[1].left, rules[0].new_id);
        assert_eq!(rules[1].right, "c");
        assert_eq!(
            rules[1].new_id,
            group_id(&["a".into(), "b".into(), "c".into()])
        );
        assert_eq!(rules[1].iteration, 1);
    }
}
