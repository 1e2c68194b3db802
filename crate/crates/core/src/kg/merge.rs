//! Trajectory ingestion: two-layer state deduplication, element unification
//! by bounding-box overlap, and descriptor extraction.

use super::{iou, ActionNode, ElementRef, KgError, KnowledgeGraph, StateNode};
use crate::hashing::{hash_tokens, l2_normalize, tokenize};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

const FEATURE_SEED: u64 = 0x5eed_0f_57a7e;

/// Raw screen observation as recorded by an explorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateObservation {
    /// Identifier assigned by the recording runner; used as the preferred
    /// node id when the state is new.
    pub observed_id: String,
    #[serde(default)]
    pub page_descriptor: String,
    #[serde(default)]
    pub elements: Vec<ElementRef>,
    /// Precomputed embedding; hashed from element descriptors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_element: Option<String>,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    State(StateObservation),
    Action(ActionRecord),
}

/// ⟨s0, a0, s1, …, sn⟩ with a run identifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub provenance: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn from_parts(
        provenance: impl Into<String>,
        states: Vec<StateObservation>,
        actions: Vec<ActionRecord>,
    ) -> Result<Self, KgError> {
        if states.len() != actions.len() + 1 {
            return Err(KgError::MalformedTrajectory(format!(
                "{} states for {} actions",
                states.len(),
                actions.len()
            )));
        }
        let mut steps = Vec::with_capacity(states.len() + actions.len());
        let mut acts = actions.into_iter();
        for s in states {
            steps.push(Step::State(s));
            if let Some(a) = acts.next() {
                steps.push(Step::Action(a));
            }
        }
        Ok(Trajectory {
            provenance: provenance.into(),
            steps,
        })
    }

    /// Checks alternation and odd length.
    pub fn check(&self) -> Result<(), KgError> {
        if self.steps.len() % 2 == 0 {
            return Err(KgError::MalformedTrajectory(format!(
                "length {} is not odd",
                self.steps.len()
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let ok = matches!((i % 2, s), (0, Step::State(_)) | (1, Step::Action(_)));
            if !ok {
                return Err(KgError::MalformedTrajectory(format!(
                    "step {i} breaks state/action alternation"
                )));
            }
        }
        Ok(())
    }

    pub fn states(&self) -> Vec<&StateObservation> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::State(o) => Some(o),
                _ => None,
            })
            .collect()
    }

    pub fn actions(&self) -> Vec<&ActionRecord> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Action(a) => Some(a),
                _ => None,
            })
            .collect()
    }
}

/// Fine-grained duplicate check run on candidates that pass the coarse
/// similarity filter.
pub trait FineComparator: Send + Sync {
    fn same_state(&self, existing: &StateNode, incoming: &StateNode) -> bool;
}

impl<F> FineComparator for F
where
    F: Fn(&StateNode, &StateNode) -> bool + Send + Sync,
{
    fn same_state(&self, existing: &StateNode, incoming: &StateNode) -> bool {
        self(existing, incoming)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysAccept;

impl FineComparator for AlwaysAccept {
    fn same_state(&self, _: &StateNode, _: &StateNode) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysReject;

impl FineComparator for AlwaysReject {
    fn same_state(&self, _: &StateNode, _: &StateNode) -> bool {
        false
    }
}

/// Accepts when the incoming page descriptor equals the existing one or is
/// one of the descriptors already folded into it.
#[derive(Clone, Copy, Debug, Default)]
pub struct DescriptorEquals;

impl FineComparator for DescriptorEquals {
    fn same_state(&self, existing: &StateNode, incoming: &StateNode) -> bool {
        existing.page_descriptor == incoming.page_descriptor
            || existing
                .page_descriptor
                .lines()
                .any(|l| strip_tag(l) == incoming.page_descriptor)
    }
}

fn strip_tag(line: &str) -> &str {
    match line.strip_prefix('[').and_then(|r| r.split_once("] ")) {
        Some((_, rest)) => rest,
        None => line,
    }
}

#[derive(Clone)]
pub struct DedupConfig {
    pub tau_coarse: f64,
    pub tau_iou: f64,
    pub fine: Arc<dyn FineComparator>,
}

impl DedupConfig {
    pub fn new(
        tau_coarse: f64,
        tau_iou: f64,
        fine: Arc<dyn FineComparator>,
    ) -> Result<Self, String> {
        if !(-1.0..=1.0).contains(&tau_coarse) {
            return Err(format!("tau_coarse {tau_coarse} outside [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&tau_iou) {
            return Err(format!("tau_iou {tau_iou} outside [0, 1]"));
        }
        Ok(DedupConfig {
            tau_coarse,
            tau_iou,
            fine,
        })
    }

    pub fn always_accept(tau_coarse: f64) -> Self {
        DedupConfig {
            tau_coarse,
            tau_iou: 0.5,
            fine: Arc::new(AlwaysAccept),
        }
    }

    pub fn always_reject() -> Self {
        DedupConfig {
            tau_coarse: 1.0,
            tau_iou: 0.5,
            fine: Arc::new(AlwaysReject),
        }
    }
}

impl Default for DedupConfig {
    /// Unvalidated defaults: cosine 0.95, IoU 0.5, descriptor equality.
    fn default() -> Self {
        DedupConfig {
            tau_coarse: 0.95,
            tau_iou: 0.5,
            fine: Arc::new(DescriptorEquals),
        }
    }
}

impl fmt::Debug for DedupConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DedupConfig")
            .field("tau_coarse", &self.tau_coarse)
            .field("tau_iou", &self.tau_iou)
            .finish_non_exhaustive()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Hashed embedding of a state from its element-descriptor multiset, falling
/// back to the page descriptor when the screen has no elements.
pub fn state_feature(page_descriptor: &str, elements: &[ElementRef], dim: usize) -> Vec<f64> {
    let mut toks: Vec<(String, f64)> = Vec::new();
    for e in elements {
        toks.push((format!("el:{}", e.descriptor), 1.0));
        toks.extend(tokenize(&e.descriptor).map(|t| (t, 0.5)));
    }
    if toks.is_empty() {
        toks.extend(tokenize(page_descriptor).map(|t| (t, 1.0)));
    }
    let mut v = hash_tokens(
        toks.iter().map(|(t, w)| (t.as_str(), *w)),
        dim,
        FEATURE_SEED,
    );
    l2_normalize(&mut v);
    v
}

/// Hashed embedding of one element descriptor.
pub fn element_feature(descriptor: &str, dim: usize) -> Vec<f64> {
    let toks: Vec<String> = tokenize(descriptor).collect();
    let mut v = hash_tokens(
        toks.iter().map(|t| (t.as_str(), 1.0)),
        dim,
        FEATURE_SEED ^ 1,
    );
    l2_normalize(&mut v);
    v
}

/// Existing state matching `s`, if any: cosine ≥ tau_coarse and accepted by
/// the fine comparator. Highest cosine wins, then smallest id.
pub fn dedup_state(
    g: &KnowledgeGraph,
    s: &StateNode,
    cfg: &DedupConfig,
) -> Result<Option<String>, KgError> {
    if s.feature.len() != g.feature_dim {
        return Err(KgError::DimensionMismatch {
            expected: g.feature_dim,
            got: s.feature.len(),
        });
    }
    let mut best: Option<(f64, &str)> = None;
    for (id, cand) in &g.states {
        let c = cosine(&s.feature, &cand.feature);
        if c < cfg.tau_coarse {
            continue;
        }
        if best.is_some_and(|(b, _)| c <= b) {
            continue;
        }
        if cfg.fine.same_state(cand, s) {
            best = Some((c, id));
        }
    }
    Ok(best.map(|(_, id)| id.to_string()))
}

/// Stand-in for the semantic extractor: produces page descriptors d_s and
/// action functional descriptors f_a for a transition.
pub trait DescriptorProvider {
    fn describe_state(&self, obs: &StateObservation) -> String;
    fn describe_action(
        &self,
        from: &StateObservation,
        action: &ActionRecord,
        to: &StateObservation,
    ) -> String;

    /// (d_{s_t}, d_{s_{t+1}}, f_{a_t}) for one transition.
    fn extract(
        &self,
        from: &StateObservation,
        action: &ActionRecord,
        to: &StateObservation,
    ) -> (String, String, String) {
        (
            self.describe_state(from),
            self.describe_state(to),
            self.describe_action(from, action, to),
        )
    }
}

/// Deterministic text templates over the raw observation.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateProvider;

impl DescriptorProvider for TemplateProvider {
    fn describe_state(&self, obs: &StateObservation) -> String {
        if obs.page_descriptor.is_empty() {
            format!("page with {} elements", obs.elements.len())
        } else {
            obs.page_descriptor.clone()
        }
    }

    fn describe_action(
        &self,
        from: &StateObservation,
        action: &ActionRecord,
        to: &StateObservation,
    ) -> String {
        if let Some(d) = &action.descriptor {
            return d.clone();
        }
        let target = action
            .source_element
            .as_deref()
            .and_then(|id| from.elements.iter().find(|e| e.element_id == id))
            .map(|e| e.descriptor.as_str())
            .unwrap_or("screen");
        format!(
            "{} {} to open {}",
            action.operation,
            target,
            self.describe_state(to)
        )
    }
}

fn transition_key(from: &StateObservation, action: &ActionRecord, to: &StateObservation) -> String {
    format!(
        "{}|{}:{}|{}",
        from.observed_id,
        action.operation,
        action.source_element.as_deref().unwrap_or(""),
        to.observed_id
    )
}

/// Wraps a provider and records every descriptor it hands out.
pub struct RecordingProvider<P> {
    inner: P,
    states: Mutex<BTreeMap<String, String>>,
    actions: Mutex<BTreeMap<String, String>>,
}

impl<P: DescriptorProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            states: Mutex::new(BTreeMap::new()),
            actions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn into_replay(self) -> ReplayProvider {
        ReplayProvider {
            states: self.states.into_inner().unwrap_or_default(),
            actions: self.actions.into_inner().unwrap_or_default(),
            misses: AtomicUsize::new(0),
        }
    }
}

impl<P: DescriptorProvider> DescriptorProvider for RecordingProvider<P> {
    fn describe_state(&self, obs: &StateObservation) -> String {
        let d = self.inner.describe_state(obs);
        if let Ok(mut m) = self.states.lock() {
            m.insert(obs.observed_id.clone(), d.clone());
        }
        d
    }

    fn describe_action(
        &self,
        from: &StateObservation,
        action: &ActionRecord,
        to: &StateObservation,
    ) -> String {
        let d = self.inner.describe_action(from, action, to);
        if let Ok(mut m) = self.actions.lock() {
            m.insert(transition_key(from, action, to), d.clone());
        }
        d
    }
}

/// Plays back recorded descriptors; misses fall back to [`TemplateProvider`].
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ReplayProvider {
    pub states: BTreeMap<String, String>,
    pub actions: BTreeMap<String, String>,
    #[serde(skip)]
    misses: AtomicUsize,
}

impl ReplayProvider {
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl DescriptorProvider for ReplayProvider {
    fn describe_state(&self, obs: &StateObservation) -> String {
        match self.states.get(&obs.observed_id) {
            Some(d) => d.clone(),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                TemplateProvider.describe_state(obs)
            }
        }
    }

    fn describe_action(
        &self,
        from: &StateObservation,
        action: &ActionRecord,
        to: &StateObservation,
    ) -> String {
        match self.actions.get(&transition_key(from, action, to)) {
            Some(d) => d.clone(),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                TemplateProvider.describe_action(from, action, to)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdge {
    pub from: String,
    pub to: String,
    pub step: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub new_states: usize,
    pub merged_states: usize,
    pub new_actions: usize,
    pub merged_actions: usize,
    pub merged_elements: usize,
    /// Transitions skipped because they would have closed a state cycle.
    pub dropped_edges: Vec<DroppedEdge>,
}

fn fresh_id(g: &KnowledgeGraph, base: &str) -> String {
    let taken = |id: &str| g.states.contains_key(id) || g.actions.contains_key(id);
    if !base.is_empty() && !taken(base) {
        return base.to_string();
    }
    let stem = if base.is_empty() { "n" } else { base };
    (1..)
        .map(|k| format!("{stem}#{k}"))
        .find(|id| !taken(id))
        .expect("unbounded id search")
}

fn prepare_elements(elements: &[ElementRef], dim: usize) -> Result<Vec<ElementRef>, KgError> {
    let mut out: Vec<ElementRef> = Vec::with_capacity(elements.len());
    for e in elements {
        e.bbox.check()?;
        let mut e = e.clone();
        if e.feature.is_empty() {
            e.feature = element_feature(&e.descriptor, dim);
        } else if e.feature.len() != dim {
            return Err(KgError::DimensionMismatch {
                expected: dim,
                got: e.feature.len(),
            });
        }
        out.push(e);
    }
    Ok(out)
}

/// Folds the incoming elements into an existing state; returns the id map
/// from incoming to stored element ids.
fn unify_elements(
    existing: &mut StateNode,
    incoming: Vec<ElementRef>,
    tau_iou: f64,
    merged: &mut usize,
) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for e in incoming {
        let mut best: Option<(f64, usize)> = None;
        for (i, old) in existing.elements.iter().enumerate() {
            // boxes were checked on the way in
            let o = iou(&old.bbox, &e.bbox).unwrap_or(0.0);
            if o >= tau_iou && best.is_none_or(|(b, _)| o > b) {
                best = Some((o, i));
            }
        }
        match best {
            Some((_, i)) => {
                let old = &mut existing.elements[i];
                if !e.descriptor.is_empty()
                    && !old.descriptor.split(" | ").any(|d| d == e.descriptor)
                {
                    old.descriptor = if old.descriptor.is_empty() {
                        e.descriptor.clone()
                    } else {
                        format!("{} | {}", old.descriptor, e.descriptor)
                    };
                }
                map.insert(e.element_id.clone(), old.element_id.clone());
                *merged += 1;
            }
            None => {
                let mut id = e.element_id.clone();
                let mut k = 1;
                while existing.elements.iter().any(|x| x.element_id == id) {
                    id = format!("{}#{k}", e.element_id);
                    k += 1;
                }
                map.insert(e.element_id.clone(), id.clone());
                existing.elements.push(ElementRef {
                    element_id: id,
                    ..e
                });
            }
        }
    }
    map
}

/// G ← G ⊕ F_extract(s_t, a_t, s_{t+1}) for every transition of `t`.
///
/// The graph is left untouched when the trajectory is rejected.
pub fn merge_trajectory(
    g: &mut KnowledgeGraph,
    t: &Trajectory,
    cfg: &DedupConfig,
    descriptors: &dyn DescriptorProvider,
) -> Result<MergeReport, KgError> {
    t.check()?;
    let dim = g.feature_dim;
    let observations = t.states();
    let records = t.actions();

    // Build candidate nodes first so a bad record cannot leave a half-merged graph.
    let mut candidates = Vec::with_capacity(observations.len());
    for obs in &observations {
        let elements = prepare_elements(&obs.elements, dim)?;
        let d_s = descriptors.describe_state(obs);
        let feature = match &obs.feature {
            Some(f) if f.len() != dim => {
                return Err(KgError::DimensionMismatch {
                    expected: dim,
                    got: f.len(),
                })
            }
            Some(f) => f.clone(),
            None => state_feature(&d_s, &elements, dim),
        };
        candidates.push(StateNode {
            state_id: obs.observed_id.clone(),
            page_descriptor: d_s,
            feature,
            elements,
            is_terminal: true,
        });
    }

    let mut report = MergeReport::default();
    let mut ids = Vec::with_capacity(candidates.len());
    let mut element_maps: Vec<HashMap<String, String>> = Vec::with_capacity(candidates.len());

    for cand in candidates {
        match dedup_state(g, &cand, cfg)? {
            Some(id) => {
                report.merged_states += 1;
                let existing = g.state_mut(&id).expect("dedup returned a live id");
                if cand.page_descriptor != existing.page_descriptor
                    && !DescriptorEquals.same_state(existing, &cand)
                {
                    existing.page_descriptor = format!(
                        "{}\n[{}] {}",
                        existing.page_descriptor, t.provenance, cand.page_descriptor
                    );
                }
                let map = unify_elements(
                    existing,
                    cand.elements,
                    cfg.tau_iou,
                    &mut report.merged_elements,
                );
                element_maps.push(map);
                ids.push(id);
            }
            None => {
                let id = fresh_id(g, &cand.state_id);
                let mut node = StateNode {
                    state_id: id.clone(),
                    ..cand
                };
                let incoming = std::mem::take(&mut node.elements);
                // Fresh screens keep every element; only ids are made unique.
                let mut map = HashMap::new();
                for e in incoming {
                    let mut eid = e.element_id.clone();
                    let mut k = 1;
                    while node.elements.iter().any(|x| x.element_id == eid) {
                        eid = format!("{}#{k}", e.element_id);
                        k += 1;
                    }
                    map.insert(e.element_id.clone(), eid.clone());
                    node.elements.push(ElementRef {
                        element_id: eid,
                        ..e
                    });
                }
                g.insert_state(node)?;
                report.new_states += 1;
                element_maps.push(map);
                ids.push(id);
            }
        }
    }

    for (i, rec) in records.iter().enumerate() {
        let (src, dst) = (ids[i].as_str(), ids[i + 1].as_str());
        let src_elem = rec
            .source_element
            .as_ref()
            .map(|e| element_maps[i].get(e).cloned().unwrap_or_else(|| e.clone()));

        let duplicate = g
            .out_actions(src)
            .any(|aid| g.actions[aid].source_element == src_elem && g.successor(aid) == Some(dst));
        if duplicate {
            report.merged_actions += 1;
            continue;
        }
        if src == dst || g.reaches(dst, src) {
            log::debug!("dropping cycle-closing transition {src} -> {dst}");
            report.dropped_edges.push(DroppedEdge {
                from: src.to_string(),
                to: dst.to_string(),
                step: 2 * i + 1,
            });
            continue;
        }
        let base = rec
            .action_id
            .clone()
            .unwrap_or_else(|| format!("{src}->{dst}"));
        let id = fresh_id(g, &base);
        let f_a = descriptors.describe_action(observations[i], rec, observations[i + 1]);
        let node = ActionNode::atomic(id, rec.operation.clone(), src_elem, f_a);
        g.insert_action(src, node, dst)?;
        report.new_actions += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Rect;

    fn el(id: &str, x: f64, desc: &str) -> ElementRef {
        ElementRef {
            element_id: id.into(),
            bbox: Rect::new(x, 0.0, x + 10.0, 10.0).unwrap(),
            feature: Vec::new(),
            descriptor: desc.into(),
        }
    }

    fn obs(id: &str) -> StateObservation {
        StateObservation {
            observed_id: id.into(),
            page_descriptor: format!("{id} page"),
            elements: vec![el(&format!("{id}/e0"), 0.0, &format!("{id} button"))],
            feature: None,
        }
    }

    fn act(id: &str, elem: &str) -> ActionRecord {
        ActionRecord {
            action_id: Some(id.into()),
            source_element: Some(elem.into()),
            operation: "tap".into(),
            descriptor: None,
        }
    }

    fn traj(ids: &[&str]) -> Trajectory {
        let states = ids.iter().map(|s| obs(s)).collect();
        let actions = ids
            .windows(2)
            .map(|w| act(&format!("{}>{}", w[0], w[1]), &format!("{}/e0", w[0])))
            .collect();
        Trajectory::from_parts("run", states, actions).unwrap()
    }

    #[test]
    fn first_insertion_counts() {
        let mut g = KnowledgeGraph::new(16).unwrap();
        let r = merge_trajectory(
            &mut g,
            &traj(&["s0", "s1"]),
            &DedupConfig::default(),
            &TemplateProvider,
        )
        .unwrap();
        assert_eq!((r.new_states, r.new_actions), (2, 1));
        assert!(g.validate().is_empty());
        let a = g.action("s0>s1").unwrap();
        assert_eq!(a.functional_descriptor, "tap s0 button to open s1 page");
    }

    #[test]
    fn remerge_is_idempotent() {
        let mut g = KnowledgeGraph::new(16).unwrap();
        let cfg = DedupConfig::always_accept(0.9);
        let t = traj(&["s0", "s1", "s2"]);
        merge_trajectory(&mut g, &t, &cfg, &TemplateProvider).unwrap();
        let before = g.clone();
        let r = merge_trajectory(&mut g, &t, &cfg, &TemplateProvider).unwrap();
        assert_eq!((r.new_states, r.new_actions), (0, 0));
        assert_eq!(r.merged_states, 3);
        assert_eq!(g, before);
    }

    #[test]
    fn diverging_trajectories_share_root() {
        let mut g = KnowledgeGraph::new(16).unwrap();
        let cfg = DedupConfig::default();
        merge_trajectory(&mut g, &traj(&["s0", "s1"]), &cfg, &TemplateProvider).unwrap();
        let mut t2 = traj(&["s0", "s2"]);
        if let Step::Action(a) = &mut t2.steps[1] {
            a.source_element = Some("s0/e1".into());
        }
        if let Step::State(o) = &mut t2.steps[0] {
            o.elements.push(el("s0/e1", 20.0, "s0 other"));
        }
        // the extra element changes the hashed feature; loosen the coarse filter
        let loose = DedupConfig::new(0.5, 0.5, Arc::new(DescriptorEquals)).unwrap();
        merge_trajectory(&mut g, &t2, &loose, &TemplateProvider).unwrap();
        assert_eq!(g.roots(), ["s0"]);
        assert_eq!(g.available_actions("s0").unwrap().len(), 2);
        assert_eq!(g.state("s0").unwrap().elements.len(), 2);
    }

    #[test]
    fn cycle_closing_edge_dropped() {
        let mut g = KnowledgeGraph::new(16).unwrap();
        let r = merge_trajectory(
            &mut g,
            &traj(&["s0", "s1", "s0"]),
            &DedupConfig::default(),
            &TemplateProvider,
        )
        .unwrap();
        assert_eq!(r.new_states, 2);
        assert_eq!(r.merged_states, 1);
        assert_eq!(r.dropped_edges.len(), 1);
        assert_eq!(r.dropped_edges[0].from, "s1");
        assert!(g.validate().is_empty());
    }

    #[test]
    fn malformed_trajectory_rejected() {
        let t = Trajectory {
            provenance: "x".into(),
            steps: vec![Step::State(obs("s0")), Step::Action(act("a", "e"))],
        };
        let mut g = KnowledgeGraph::new(4).unwrap();
        assert!(matches!(
            merge_trajectory(&mut g, &t, &DedupConfig::default(), &TemplateProvider),
            Err(KgError::MalformedTrajectory(_))
        ));
        let t = Trajectory {
            provenance: "x".into(),
            steps: vec![Step::Action(act("a", "e"))],
        };
        assert!(t.check().is_err());
    }

    #[test]
    fn dimension_mismatch_leaves_graph_untouched() {
        let mut g = KnowledgeGraph::new(4).unwrap();
        let mut t = traj(&["s0", "s1"]);
        if let Step::State(o) = &mut t.steps[2] {
            o.feature = Some(vec![1.0; 3]);
        }
        let err =
            merge_trajectory(&mut g, &t, &DedupConfig::default(), &TemplateProvider).unwrap_err();
        assert_eq!(
            err,
            KgError::DimensionMismatch {
                expected: 4,
                got: 3
            }
        );
        assert_eq!(g.state_count(), 0);
    }

    #[test]
    fn dedup_cases() {
        let mut g = KnowledgeGraph::new(2).unwrap();
        let node = |id: &str, f: Vec<f64>| StateNode {
            state_id: id.into(),
            page_descriptor: String::new(),
            feature: f,
            elements: vec![],
            is_terminal: true,
        };
        let q = node("q", vec![1.0, 0.0]);
        assert_eq!(
            dedup_state(&g, &q, &DedupConfig::always_accept(0.9)).unwrap(),
            None
        );
        g.insert_state(node("b", vec![1.0, 0.0])).unwrap();
        g.insert_state(node("a", vec![2.0, 0.0])).unwrap();
        // equal cosine: smallest id wins
        assert_eq!(
            dedup_state(&g, &q, &DedupConfig::always_accept(0.9)).unwrap(),
            Some("a".into())
        );
        let orth = node("o", vec![0.0, 1.0]);
        assert_eq!(
            dedup_state(&g, &orth, &DedupConfig::always_accept(0.5)).unwrap(),
            None
        );
        assert_eq!(
            dedup_state(&g, &q, &DedupConfig::always_reject()).unwrap(),
            None
        );
        let bad = node("x", vec![1.0]);
        assert!(dedup_state(&g, &bad, &DedupConfig::default()).is_err());
    }

    #[test]
    fn overlapping_elements_unify_keeping_first_id() {
        let mut g = KnowledgeGraph::new(16).unwrap();
        let cfg = DedupConfig::always_accept(0.0);
        let t1 = Trajectory::from_parts("r1", vec![obs("s0")], vec![]).unwrap();
        merge_trajectory(&mut g, &t1, &cfg, &TemplateProvider).unwrap();
        let mut o = obs("s0");
        o.elements = vec![el("other-id", 1.0, "s0 button renamed")];
        let t2 = Trajectory::from_parts("r2", vec![o], vec![]).unwrap();
        let r = merge_trajectory(&mut g, &t2, &cfg, &TemplateProvider).unwrap();
        assert_eq!(r.merged_elements, 1);
        let s = g.state("s0").unwrap();
        assert_eq!(s.elements.len(), 1);
        assert_eq!(s.elements[0].element_id, "s0/e0");
        assert_eq!(s.elements[0].descriptor, "s0 button | s0 button renamed");
    }

    #[test]
    fn replay_reproduces_recording() {
        let rec = RecordingProvider::new(TemplateProvider);
        let mut g1 = KnowledgeGraph::new(8).unwrap();
        let t = traj(&["s0", "s1", "s2"]);
        merge_trajectory(&mut g1, &t, &DedupConfig::default(), &rec).unwrap();
        let replay = rec.into_replay();
        let mut g2 = KnowledgeGraph::new(8).unwrap();
        merge_trajectory(&mut g2, &t, &DedupConfig::default(), &replay).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(replay.misses(), 0);
    }
}
