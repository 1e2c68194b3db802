//! GUI-logic knowledge graph.
//!
//! A [`KnowledgeGraph`] is a bipartite directed graph: state nodes (unique
//! screens) and action nodes (executable operations) alternate along every
//! edge, each action has exactly one source state and one successor state,
//! and the induced state graph is acyclic. Trajectories are folded in with
//! [`merge_trajectory`], which deduplicates states and on-screen elements.

mod merge;

pub use merge::{
    cosine, dedup_state, element_feature, merge_trajectory, state_feature, ActionRecord,
    AlwaysAccept, AlwaysReject, DedupConfig, DescriptorEquals, DescriptorProvider, DroppedEdge,
    FineComparator, MergeReport, RecordingProvider, ReplayProvider, StateObservation, Step,
    TemplateProvider, Trajectory,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Version stamped into every persisted graph.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum KgError {
    #[error("feature dimension must be at least 1")]
    ZeroFeatureDim,
    #[error("malformed rectangle ({x_min}, {y_min}, {x_max}, {y_max})")]
    MalformedRect {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("feature dimension mismatch: graph uses {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("id `{0}` already present")]
    DuplicateId(String),
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("edge {from} -> {to} would close a state cycle")]
    WouldCycle { from: String, to: String },
}

/// Axis-aligned bounding box in abstract pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, KgError> {
        let r = Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), KgError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(KgError::MalformedRect {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union of two boxes. Zero-area unions give 0.
pub fn iou(a: &Rect, b: &Rect) -> Result<f64, KgError> {
    a.check()?;
    b.check()?;
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// An interactable element on a screen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementRef {
    pub element_id: String,
    pub bbox: Rect,
    #[serde(default)]
    pub feature: Vec<f64>,
    #[serde(default)]
    pub descriptor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub state_id: String,
    pub page_descriptor: String,
    pub feature: Vec<f64>,
    pub elements: Vec<ElementRef>,
    pub is_terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Atomic,
    Group,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementStep {
    pub element_id: String,
    pub atomic_action: String,
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionNode {
    pub action_id: String,
    pub kind: ActionKind,
    pub functional_descriptor: String,
    pub source_element: Option<String>,
    /// Atomic operation name (`tap`, `type`, ...). Empty for groups.
    #[serde(default)]
    pub operation: String,
    #[serde(default)]
    pub element_sequence: Vec<ElementStep>,
}

impl ActionNode {
    pub fn atomic(
        action_id: impl Into<String>,
        operation: impl Into<String>,
        source_element: Option<String>,
        functional_descriptor: impl Into<String>,
    ) -> Self {
        ActionNode {
            action_id: action_id.into(),
            kind: ActionKind::Atomic,
            functional_descriptor: functional_descriptor.into(),
            source_element,
            operation: operation.into(),
            element_sequence: Vec::new(),
        }
    }

    /// Executable element steps: the stored sequence for groups, a single
    /// step for atomic actions.
    pub fn steps(&self) -> Vec<ElementStep> {
        match self.kind {
            ActionKind::Group => self.element_sequence.clone(),
            ActionKind::Atomic => vec![ElementStep {
                element_id: self.source_element.clone().unwrap_or_default(),
                atomic_action: self.operation.clone(),
                order: 0,
            }],
        }
    }
}

/// A directed edge. The two variants make the state/action alternation
/// structural; ids are still checked against the node tables by `validate`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edge {
    StateAction { state: String, action: String },
    ActionState { action: String, state: String },
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edge::StateAction { state, action } => write!(f, "{state} -> {action}"),
            Edge::ActionState { action, state } => write!(f, "{action} -> {state}"),
        }
    }
}

/// An invariant breach reported by [`KnowledgeGraph::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SchemaVersion {
        found: u32,
    },
    DanglingEdge {
        edge: Edge,
    },
    ActionInDegree {
        action: String,
        count: usize,
    },
    ActionOutDegree {
        action: String,
        count: usize,
    },
    TerminalFlag {
        state: String,
        flagged: bool,
        out_degree: usize,
    },
    FeatureDim {
        node: String,
        expected: usize,
        got: usize,
    },
    BadElement {
        state: String,
        element: String,
        reason: String,
    },
    GroupSequence {
        action: String,
        reason: String,
    },
    StateCycle {
        states: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SchemaVersion { found } => {
                write!(f, "schema_version {found} (expected {SCHEMA_VERSION})")
            }
            Violation::DanglingEdge { edge } => write!(f, "edge {edge} references a missing node"),
            Violation::ActionInDegree { action, count } => {
                write!(
                    f,
                    "action {action} has {count} incoming state edges (expected 1)"
                )
            }
            Violation::ActionOutDegree { action, count } => {
                write!(
                    f,
                    "action {action} has {count} successor states (expected 1)"
                )
            }
            Violation::TerminalFlag {
                state,
                flagged,
                out_degree,
            } => write!(
                f,
                "state {state} has is_terminal={flagged} but {out_degree} outgoing actions"
            ),
            Violation::FeatureDim {
                node,
                expected,
                got,
            } => write!(
                f,
                "{node}: feature length {got}, graph dimension {expected}"
            ),
            Violation::BadElement {
                state,
                element,
                reason,
            } => write!(f, "element {element} in state {state}: {reason}"),
            Violation::GroupSequence { action, reason } => write!(f, "action {action}: {reason}"),
            Violation::StateCycle { states } => write!(f, "state cycle {}", states.join(" -> ")),
        }
    }
}

/// The executable state machine.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    pub(crate) schema_version: u32,
    pub(crate) feature_dim: usize,
    pub(crate) states: BTreeMap<String, StateNode>,
    pub(crate) actions: BTreeMap<String, ActionNode>,
    pub(crate) edges: BTreeSet<Edge>,
}

impl KnowledgeGraph {
    pub fn new(feature_dim: usize) -> Result<Self, KgError> {
        if feature_dim == 0 {
            return Err(KgError::ZeroFeatureDim);
        }
        Ok(KnowledgeGraph {
            schema_version: SCHEMA_VERSION,
            feature_dim,
            states: BTreeMap::new(),
            actions: BTreeMap::new(),
            edges: BTreeSet::new(),
        })
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn state(&self, id: &str) -> Option<&StateNode> {
        self.states.get(id)
    }

    pub fn action(&self, id: &str) -> Option<&ActionNode> {
        self.actions.get(id)
    }

    pub fn states(&self) -> impl Iterator<Item = &StateNode> {
        self.states.values()
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionNode> {
        self.actions.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub(crate) fn state_mut(&mut self, id: &str) -> Option<&mut StateNode> {
        self.states.get_mut(id)
    }

    /// Inserts an isolated state. Its terminal flag is recomputed.
    pub fn insert_state(&mut self, mut node: StateNode) -> Result<(), KgError> {
        if node.feature.len() != self.feature_dim {
            return Err(KgError::DimensionMismatch {
                expected: self.feature_dim,
                got: node.feature.len(),
            });
        }
        if self.states.contains_key(&node.state_id) || self.actions.contains_key(&node.state_id) {
            return Err(KgError::DuplicateId(node.state_id));
        }
        node.is_terminal = true;
        self.states.insert(node.state_id.clone(), node);
        Ok(())
    }

    /// Inserts `action` between two existing states, refusing edges that
    /// would close a state cycle.
    pub fn insert_action(
        &mut self,
        from: &str,
        action: ActionNode,
        to: &str,
    ) -> Result<(), KgError> {
        if !self.states.contains_key(from) {
            return Err(KgError::UnknownState(from.to_string()));
        }
        if !self.states.contains_key(to) {
            return Err(KgError::UnknownState(to.to_string()));
        }
        if self.actions.contains_key(&action.action_id)
            || self.states.contains_key(&action.action_id)
        {
            return Err(KgError::DuplicateId(action.action_id));
        }
        if from == to || self.reaches(to, from) {
            return Err(KgError::WouldCycle {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        let id = action.action_id.clone();
        self.actions.insert(id.clone(), action);
        self.edges.insert(Edge::StateAction {
            state: from.to_string(),
            action: id.clone(),
        });
        self.edges.insert(Edge::ActionState {
            action: id,
            state: to.to_string(),
        });
        if let Some(s) = self.states.get_mut(from) {
            s.is_terminal = false;
        }
        Ok(())
    }

    /// Adds an edge without any checking. Loaders and tests use this to
    /// materialize graphs that `validate` should then judge.
    pub fn insert_edge_unchecked(&mut self, edge: Edge) {
        self.edges.insert(edge);
    }

    /// Inserts an action node without edges, unchecked.
    pub fn insert_action_unchecked(&mut self, action: ActionNode) {
        self.actions.insert(action.action_id.clone(), action);
    }

    /// Inserts a state node verbatim, keeping its terminal flag, unchecked.
    pub fn insert_state_unchecked(&mut self, state: StateNode) {
        self.states.insert(state.state_id.clone(), state);
    }

    pub(crate) fn out_actions<'a>(&'a self, state: &str) -> impl Iterator<Item = &'a str> + 'a {
        let state = state.to_string();
        let lo = Edge::StateAction {
            state: state.clone(),
            action: String::new(),
        };
        self.edges.range(lo..).map_while(move |e| match e {
            Edge::StateAction { state: s, action } if *s == state => Some(action.as_str()),
            _ => None,
        })
    }

    fn action_targets<'a>(&'a self, action: &str) -> impl Iterator<Item = &'a str> + 'a {
        let action = action.to_string();
        let lo = Edge::ActionState {
            action: action.clone(),
            state: String::new(),
        };
        self.edges.range(lo..).map_while(move |e| match e {
            Edge::ActionState { action: a, state } if *a == action => Some(state.as_str()),
            _ => None,
        })
    }

    /// A(s), sorted by action id. Empty iff the state is terminal.
    pub fn available_actions(&self, state_id: &str) -> Result<Vec<String>, KgError> {
        if !self.states.contains_key(state_id) {
            return Err(KgError::UnknownState(state_id.to_string()));
        }
        Ok(self.out_actions(state_id).map(str::to_string).collect())
    }

    /// Successor state of an action (the first one if the graph is invalid).
    pub fn successor(&self, action_id: &str) -> Option<&str> {
        self.action_targets(action_id).next()
    }

    /// Source state of an action.
    pub fn source(&self, action_id: &str) -> Option<&str> {
        self.edges.iter().find_map(|e| match e {
            Edge::StateAction { state, action } if action == action_id => Some(state.as_str()),
            _ => None,
        })
    }

    /// Successor states of `state`, one per outgoing action.
    pub fn successor_states(&self, state: &str) -> Vec<&str> {
        self.out_actions(state)
            .flat_map(|a| self.action_targets(a))
            .collect()
    }

    /// Whether `to` is reachable from `from` along state→action→state edges.
    pub fn reaches(&self, from: &str, to: &str) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(s) = stack.pop() {
            if !seen.insert(s) {
                continue;
            }
            for n in self.successor_states(s) {
                if n == to {
                    return true;
                }
                stack.push(n);
            }
        }
        false
    }

    /// States with no incoming action edge, sorted.
    pub fn roots(&self) -> Vec<String> {
        let targets: BTreeSet<&str> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                Edge::ActionState { state, .. } => Some(state.as_str()),
                _ => None,
            })
            .collect();
        self.states
            .keys()
            .filter(|s| !targets.contains(s.as_str()))
            .cloned()
            .collect()
    }

    /// Publish the graph for concurrent read-only use.
    pub fn freeze(self) -> Arc<KnowledgeGraph> {
        Arc::new(self)
    }

    /// Every invariant breach; empty iff the graph is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Violation::SchemaVersion {
                found: self.schema_version,
            });
        }

        let mut in_deg: BTreeMap<&str, usize> = BTreeMap::new();
        let mut out_deg: BTreeMap<&str, usize> = BTreeMap::new();
        let mut state_out: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.edges {
            let (s, a) = match e {
                Edge::StateAction { state, action } | Edge::ActionState { action, state } => {
                    (state.as_str(), action.as_str())
                }
            };
            if !self.states.contains_key(s) || !self.actions.contains_key(a) {
                out.push(Violation::DanglingEdge { edge: e.clone() });
                continue;
            }
            match e {
                Edge::StateAction { .. } => {
                    *in_deg.entry(a).or_default() += 1;
                    *state_out.entry(s).or_default() += 1;
                }
                Edge::ActionState { .. } => *out_deg.entry(a).or_default() += 1,
            }
        }

        for (id, a) in &self.actions {
            let i = in_deg.get(id.as_str()).copied().unwrap_or(0);
            if i != 1 {
                out.push(Violation::ActionInDegree {
                    action: id.clone(),
                    count: i,
                });
            }
            let o = out_deg.get(id.as_str()).copied().unwrap_or(0);
            if o != 1 {
                out.push(Violation::ActionOutDegree {
                    action: id.clone(),
                    count: o,
                });
            }
            match a.kind {
                ActionKind::Group if a.element_sequence.len() < 2 => {
                    out.push(Violation::GroupSequence {
                        action: id.clone(),
                        reason: format!(
                            "group carries {} element steps (need at least 2)",
                            a.element_sequence.len()
                        ),
                    })
                }
                ActionKind::Atomic if !a.element_sequence.is_empty() => {
                    out.push(Violation::GroupSequence {
                        action: id.clone(),
                        reason: "atomic action carries an element sequence".into(),
                    })
                }
                _ => {}
            }
        }

        for (id, s) in &self.states {
            let od = state_out.get(id.as_str()).copied().unwrap_or(0);
            if s.is_terminal != (od == 0) {
                out.push(Violation::TerminalFlag {
                    state: id.clone(),
                    flagged: s.is_terminal,
                    out_degree: od,
                });
            }
            if s.feature.len() != self.feature_dim {
                out.push(Violation::FeatureDim {
                    node: id.clone(),
                    expected: self.feature_dim,
                    got: s.feature.len(),
                });
            }
            let mut seen = BTreeSet::new();
            for el in &s.elements {
                if !seen.insert(el.element_id.as_str()) {
                    out.push(Violation::BadElement {
                        state: id.clone(),
                        element: el.element_id.clone(),
                        reason: "duplicate element id".into(),
                    });
                }
                if let Err(e) = el.bbox.check() {
                    out.push(Violation::BadElement {
                        state: id.clone(),
                        element: el.element_id.clone(),
                        reason: e.to_string(),
                    });
                }
                if el.feature.len() != self.feature_dim {
                    out.push(Violation::FeatureDim {
                        node: format!("{id}/{}", el.element_id),
                        expected: self.feature_dim,
                        got: el.feature.len(),
                    });
                }
            }
        }

        out.extend(self.find_cycles());
        out
    }

    pub(crate) fn find_cycles(&self) -> Vec<Violation> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Open,
            Done,
        }
        let mut mark: BTreeMap<&str, Mark> = self
            .states
            .keys()
            .map(|k| (k.as_str(), Mark::Fresh))
            .collect();
        let mut out = Vec::new();
        for start in self.states.keys() {
            if mark[start.as_str()] != Mark::Fresh {
                continue;
            }
            // iterative DFS keeping the open path for cycle reporting
            let mut path: Vec<&str> = vec![start.as_str()];
            let mut iters: Vec<std::vec::IntoIter<&str>> =
                vec![self.successor_states(start).into_iter()];
            mark.insert(start.as_str(), Mark::Open);
            while let Some(it) = iters.last_mut() {
                match it.next() {
                    Some(n) => match mark.get(n).copied() {
                        Some(Mark::Fresh) => {
                            mark.insert(n, Mark::Open);
                            path.push(n);
                            iters.push(self.successor_states(n).into_iter());
                        }
                        Some(Mark::Open) => {
                            let pos = path.iter().position(|p| *p == n).unwrap_or(0);
                            let mut states: Vec<String> =
                                path[pos..].iter().map(|s| s.to_string()).collect();
                            states.push(n.to_string());
                            out.push(Violation::StateCycle { states });
                        }
                        _ => {}
                    },
                    None => {
                        iters.pop();
                        if let Some(done) = path.pop() {
                            mark.insert(done, Mark::Done);
                        }
                    }
                }
            }
        }
        out
    }
}
