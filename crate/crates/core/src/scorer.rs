//! Learned Q-model.
//!
//! A hashed bag-of-tokens encoding of (instruction, page, executed path,
//! proposed action) feeds a one-hidden-layer tanh network whose logistic
//! output is the predicted success probability. Warm-up uses a pairwise
//! Bradley–Terry loss on logits; refinement uses binary cross-entropy
//! against soft Bellman targets.

use crate::hashing::{derive_seed, hash_tokens, l2_normalize, tokenize};
use crate::io::{check_schema, read_text, to_json, write_text, FormatError};
use crate::kg::KnowledgeGraph;
use crate::mcts::{ExactOracle, QFunction, QueryContext, TargetSample};
use crate::mdp::{Instruction, KgMdp, Path};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path as FsPath;
use thiserror::Error;

pub const PROB_MIN: f64 = 1e-6;
pub const PROB_MAX: f64 = 1.0 - 1e-6;
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("training set is empty")]
    Empty,
    #[error("target {0} outside [0, 1]")]
    BadTarget(f64),
    #[error("expert path invalid: {0}")]
    BadPath(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The textual inputs a model sees about where it is.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextContext {
    pub instruction: String,
    pub page: String,
    /// Functional descriptors of the actions executed so far.
    #[serde(default)]
    pub history: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextAction {
    pub id: String,
    pub descriptor: String,
}

impl TextContext {
    /// Context of state `state` reached by `history` in `g`.
    pub fn from_graph(
        g: &KnowledgeGraph,
        instruction: &str,
        state: &str,
        history: &[String],
    ) -> Self {
        TextContext {
            instruction: instruction.to_string(),
            page: g
                .state(state)
                .map(|s| s.page_descriptor.clone())
                .unwrap_or_default(),
            history: history
                .iter()
                .map(|a| {
                    g.action(a)
                        .map(|n| n.functional_descriptor.clone())
                        .unwrap_or_default()
                })
                .collect(),
        }
    }

    pub fn from_query(ctx: &QueryContext<'_>) -> Self {
        let g = ctx.mdp.graph();
        let history: Vec<String> = ctx
            .history
            .iter()
            .map(|&a| ctx.mdp.action_id(a).to_string())
            .collect();
        TextContext::from_graph(
            g,
            &ctx.mdp.instruction().text,
            ctx.mdp.state_id(ctx.state),
            &history,
        )
    }
}

impl TextAction {
    pub fn from_graph(g: &KnowledgeGraph, action: &str) -> Self {
        TextAction {
            id: action.to_string(),
            descriptor: g
                .action(action)
                .map(|n| n.functional_descriptor.clone())
                .unwrap_or_default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderFields {
    pub instruction: bool,
    pub page: bool,
    pub action: bool,
    pub history: bool,
}

impl Default for EncoderFields {
    fn default() -> Self {
        EncoderFields {
            instruction: true,
            page: true,
            action: true,
            history: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub dim: usize,
    pub seed: u64,
    pub fields: EncoderFields,
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        FeatureEncoder {
            dim: 512,
            seed: 0x0e_c0de,
            fields: EncoderFields::default(),
        }
    }
}

impl FeatureEncoder {
    /// Unit-norm hashed encoding. Tokens shared by the instruction and the
    /// action descriptor get their own cross features.
    pub fn encode(&self, ctx: &TextContext, action: &TextAction) -> Vec<f64> {
        let mut toks: Vec<(String, f64)> = Vec::new();
        let f = self.fields;
        let instr: BTreeSet<String> = tokenize(&ctx.instruction).collect();
        let act: BTreeSet<String> = tokenize(&action.descriptor).collect();
        if f.instruction {
            toks.extend(instr.iter().map(|t| (format!("i:{t}"), 1.0)));
        }
        if f.page {
            toks.extend(tokenize(&ctx.page).map(|t| (format!("p:{t}"), 1.0)));
        }
        if f.action {
            toks.extend(act.iter().map(|t| (format!("a:{t}"), 1.0)));
            if !action.id.is_empty() {
                toks.push((format!("aid:{}", action.id), 1.0));
            }
        }
        if f.history {
            for h in &ctx.history {
                toks.extend(tokenize(h).map(|t| (format!("h:{t}"), 0.5)));
            }
            toks.push((format!("depth:{}", ctx.history.len()), 1.0));
        }
        if f.instruction && f.action {
            let shared: Vec<&String> = instr.intersection(&act).collect();
            toks.extend(shared.iter().map(|t| (format!("x:{t}"), 2.0)));
            toks.push((format!("xn:{}", shared.len().min(4)), 2.0));
        }
        let mut v = hash_tokens(
            toks.iter().map(|(t, w)| (t.as_str(), *w)),
            self.dim,
            self.seed,
        );
        l2_normalize(&mut v);
        v
    }
}

fn sparse(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// One-hidden-layer scorer. Parameters flatten as `w1` (row-major,
/// width × dim), `b1`, `w2`, `b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QScorer {
    pub schema_version: u32,
    pub encoder: FeatureEncoder,
    pub width: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

struct Forward {
    h: Vec<f64>,
    logit: f64,
}

impl QScorer {
    pub fn zeros(encoder: FeatureEncoder, width: usize) -> Self {
        QScorer {
            schema_version: MODEL_SCHEMA_VERSION,
            width,
            w1: vec![0.0; width * encoder.dim],
            b1: vec![0.0; width],
            w2: vec![0.0; width],
            b2: 0.0,
            encoder,
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random(encoder: FeatureEncoder, width: usize, seed: u64) -> Self {
        let mut m = QScorer::zeros(encoder, width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (m.encoder.dim + width) as f64).sqrt();
        let a2 = (6.0 / (width + 1) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2));
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.width);
        let (w2, rest) = rest.split_at(self.width);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    fn forward(&self, x: &[(usize, f64)]) -> Forward {
        let d = self.encoder.dim;
        let h: Vec<f64> = (0..self.width)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                (self.b1[j] + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>()).tanh()
            })
            .collect();
        let logit = self.b2 + h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>();
        Forward { h, logit }
    }

    pub fn logit_features(&self, x: &[f64]) -> f64 {
        self.forward(&sparse(x)).logit
    }

    pub fn score_features(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit_features(x)).clamp(PROB_MIN, PROB_MAX)
    }

    pub fn logit(&self, ctx: &TextContext, action: &TextAction) -> f64 {
        self.logit_features(&self.encoder.encode(ctx, action))
    }

    /// Success probability in [1e-6, 1 − 1e-6].
    pub fn score(&self, ctx: &TextContext, action: &TextAction) -> f64 {
        self.score_features(&self.encoder.encode(ctx, action))
    }

    /// Adds `scale · ∂logit/∂θ` at `x` into `grad` (flattened layout).
    fn accumulate_logit_grad(&self, x: &[(usize, f64)], f: &Forward, scale: f64, grad: &mut [f64]) {
        let d = self.encoder.dim;
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.width);
        let (gw2, gb2) = rest.split_at_mut(self.width);
        gb2[0] += scale;
        for j in 0..self.width {
            gw2[j] += scale * f.h[j];
            let dz = scale * self.w2[j] * (1.0 - f.h[j] * f.h[j]);
            gb1[j] += dz;
            for &(i, v) in x {
                gw1[j * d + i] += dz * v;
            }
        }
    }

    /// Sparse SGD step θ ← θ − lr · Σ scale_k · ∂logit/∂θ(x_k), all terms
    /// taken at the current parameters.
    fn step(&mut self, terms: &[(&[(usize, f64)], &Forward, f64)], lr: f64) {
        let d = self.encoder.dim;
        let dz: Vec<Vec<f64>> = terms
            .iter()
            .map(|(_, f, scale)| {
                (0..self.width)
                    .map(|j| lr * scale * self.w2[j] * (1.0 - f.h[j] * f.h[j]))
                    .collect()
            })
            .collect();
        for ((x, f, scale), dz) in terms.iter().zip(&dz) {
            let s = lr * scale;
            self.b2 -= s;
            for j in 0..self.width {
                self.w2[j] -= s * f.h[j];
                self.b1[j] -= dz[j];
                for &(i, v) in x.iter() {
                    self.w1[j * d + i] -= dz[j] * v;
                }
            }
        }
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
        check_schema("model", probe.schema_version, MODEL_SCHEMA_VERSION)?;
        let m: QScorer = serde_json::from_str(text)?;
        let ok = m.encoder.dim > 0
            && m.w1.len() == m.width * m.encoder.dim
            && m.b1.len() == m.width
            && m.w2.len() == m.width;
        if !ok {
            return Err(FormatError::Invalid {
                kind: "model",
                reason: "weight shapes do not match width and dim".into(),
            });
        }
        Ok(m)
    }
}

impl QFunction for QScorer {
    fn q(&self, ctx: &QueryContext<'_>) -> f64 {
        let g = ctx.mdp.graph();
        self.score(
            &TextContext::from_query(ctx),
            &TextAction::from_graph(g, ctx.mdp.action_id(ctx.action)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: TextContext,
    pub positive: TextAction,
    pub negative: TextAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub context: TextContext,
    pub action: TextAction,
    pub target: f64,
}

impl TrainSample {
    /// Text form of a search-tree target.
    pub fn from_target(g: &KnowledgeGraph, instruction: &Instruction, t: &TargetSample) -> Self {
        TrainSample {
            context: TextContext::from_graph(g, &instruction.text, &t.state, &t.history),
            action: TextAction::from_graph(g, &t.action),
            target: t.target,
        }
    }
}

/// One pair per expert step with at least two available actions; the
/// negative is drawn uniformly from the non-expert actions.
pub fn build_preference_pairs(
    expert: &[(Instruction, Path)],
    g: &KnowledgeGraph,
    seed: u64,
) -> Result<Vec<PreferencePair>, ScorerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (instr, path) in expert {
        if path.states.len() != path.actions.len() + 1 {
            return Err(ScorerError::BadPath(
                "state/action counts do not alternate".into(),
            ));
        }
        for (t, a_plus) in path.actions.iter().enumerate() {
            let s = &path.states[t];
            let avail = g
                .available_actions(s)
                .map_err(|e| ScorerError::BadPath(e.to_string()))?;
            if !avail.contains(a_plus) || g.successor(a_plus) != Some(path.states[t + 1].as_str()) {
                return Err(ScorerError::BadPath(format!(
                    "{a_plus} does not lead from {s} to {}",
                    path.states[t + 1]
                )));
            }
            let negatives: Vec<&String> = avail.iter().filter(|a| *a != a_plus).collect();
            if negatives.is_empty() {
                continue;
            }
            let neg = negatives[rng.gen_range(0..negatives.len())];
            out.push(PreferencePair {
                context: TextContext::from_graph(g, &instr.text, s, &path.actions[..t]),
                positive: TextAction::from_graph(g, a_plus),
                negative: TextAction::from_graph(g, neg),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Mean loss before training and after each epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub initial: f64,
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn last(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

/// Encoded preference pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// Encoded soft-label sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFeatures {
    pub x: Vec<f64>,
    pub target: f64,
}

/// −log σ(logit⁺ − logit⁻).
pub fn bt_loss(model: &QScorer, p: &PairFeatures) -> f64 {
    softplus(-(model.logit_features(&p.pos) - model.logit_features(&p.neg)))
}

pub fn bt_grad(model: &QScorer, p: &PairFeatures) -> Vec<f64> {
    let mut g = vec![0.0; model.param_count()];
    let (xp, xn) = (sparse(&p.pos), sparse(&p.neg));
    let (fp, fn_) = (model.forward(&xp), model.forward(&xn));
    let d = sigmoid(fp.logit - fn_.logit) - 1.0;
    model.accumulate_logit_grad(&xp, &fp, d, &mut g);
    model.accumulate_logit_grad(&xn, &fn_, -d, &mut g);
    g
}

fn bce_from_logit(logit: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if p > PROB_MIN && p < PROB_MAX {
        (softplus(logit) - y * logit, p - y)
    } else {
        let p = p.clamp(PROB_MIN, PROB_MAX);
        (-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()), 0.0)
    }
}

/// −[y log p + (1 − y) log(1 − p)] with the clamped probability.
pub fn bce_loss(model: &QScorer, s: &SampleFeatures) -> f64 {
    bce_from_logit(model.logit_features(&s.x), s.target).0
}

pub fn bce_grad(model: &QScorer, s: &SampleFeatures) -> Vec<f64> {
    let mut g = vec![0.0; model.param_count()];
    let x = sparse(&s.x);
    let f = model.forward(&x);
    let (_, d) = bce_from_logit(f.logit, s.target);
    model.accumulate_logit_grad(&x, &f, d, &mut g);
    g
}

fn sgd<T>(
    model: &mut QScorer,
    data: &[T],
    cfg: &TrainConfig,
    loss: impl Fn(&QScorer, &T) -> f64,
    mut update: impl FnMut(&mut QScorer, &T, f64),
) -> LossTrace {
    let mean = |m: &QScorer| data.iter().map(|d| loss(m, d)).sum::<f64>() / data.len() as f64;
    let mut trace = LossTrace {
        initial: mean(model),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for e in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, e as u64));
        order.shuffle(&mut rng);
        for &i in &order {
            update(model, &data[i], cfg.lr);
        }
        trace.epochs.push(mean(model));
    }
    trace
}

fn check_cfg(cfg: &TrainConfig) -> Result<(), ScorerError> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(ScorerError::Config(format!(
            "learning rate {} must be positive",
            cfg.lr
        )));
    }
    Ok(())
}

/// Bradley–Terry warm-up on encoded pairs.
pub fn init_train_features(
    model: &mut QScorer,
    pairs: &[PairFeatures],
    cfg: &TrainConfig,
) -> Result<LossTrace, ScorerError> {
    if pairs.is_empty() {
        return Err(ScorerError::Empty);
    }
    check_cfg(cfg)?;
    let pairs: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = pairs
        .iter()
        .map(|p| (sparse(&p.pos), sparse(&p.neg)))
        .collect();
    Ok(sgd(
        model,
        &pairs,
        cfg,
        |m, (p, n)| softplus(-(m.forward(p).logit - m.forward(n).logit)),
        |m, (p, n), lr| {
            let (fp, fn_) = (m.forward(p), m.forward(n));
            let d = sigmoid(fp.logit - fn_.logit) - 1.0;
            m.step(&[(p, &fp, d), (n, &fn_, -d)], lr);
        },
    ))
}

/// Soft-label BCE refinement on encoded samples.
pub fn refine_train_features(
    model: &mut QScorer,
    samples: &[SampleFeatures],
    cfg: &TrainConfig,
) -> Result<LossTrace, ScorerError> {
    if samples.is_empty() {
        return Err(ScorerError::Empty);
    }
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.target)) {
        return Err(ScorerError::BadTarget(s.target));
    }
    check_cfg(cfg)?;
    let data: Vec<(Vec<(usize, f64)>, f64)> =
        samples.iter().map(|s| (sparse(&s.x), s.target)).collect();
    Ok(sgd(
        model,
        &data,
        cfg,
        |m, (x, y)| bce_from_logit(m.forward(x).logit, *y).0,
        |m, (x, y), lr| {
            let f = m.forward(x);
            let (_, d) = bce_from_logit(f.logit, *y);
            if d != 0.0 {
                m.step(&[(x, &f, d)], lr);
            }
        },
    ))
}

pub fn encode_pairs(model: &QScorer, pairs: &[PreferencePair]) -> Vec<PairFeatures> {
    pairs
        .iter()
        .map(|p| PairFeatures {
            pos: model.encoder.encode(&p.context, &p.positive),
            neg: model.encoder.encode(&p.context, &p.negative),
        })
        .collect()
}

pub fn encode_samples(model: &QScorer, samples: &[TrainSample]) -> Vec<SampleFeatures> {
    samples
        .iter()
        .map(|s| SampleFeatures {
            x: model.encoder.encode(&s.context, &s.action),
            target: s.target,
        })
        .collect()
}

pub fn init_train(
    model: &mut QScorer,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<LossTrace, ScorerError> {
    let enc = encode_pairs(model, pairs);
    init_train_features(model, &enc, cfg)
}

pub fn refine_train(
    model: &mut QScorer,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<LossTrace, ScorerError> {
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.target)) {
        return Err(ScorerError::BadTarget(s.target));
    }
    let enc = encode_samples(model, samples);
    refine_train_features(model, &enc, cfg)
}

/// Fraction of pairs the model orders correctly.
pub fn pairwise_accuracy(model: &QScorer, pairs: &[PairFeatures]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ok = pairs
        .iter()
        .filter(|p| model.logit_features(&p.pos) > model.logit_features(&p.neg))
        .count();
    ok as f64 / pairs.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinskerReport {
    pub mse: f64,
    pub excess_risk: f64,
    pub holds: bool,
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Compares E[(Q − Q†)²] with half the excess expected log loss
/// R(Q) − R(Q†), where R is the log loss under labels drawn from Q†.
/// Predictions are clamped like model outputs. The comparison allows for
/// rounding at the 1e-12 relative level, since the bound is tight near
/// Q = Q† = 1/2.
pub fn pinsker_from_predictions(pred: &[f64], truth: &[f64]) -> PinskerReport {
    assert_eq!(pred.len(), truth.len(), "prediction/truth length");
    let n = pred.len().max(1) as f64;
    let mut mse = 0.0;
    let mut excess = 0.0;
    for (&q, &t) in pred.iter().zip(truth) {
        let q = q.clamp(PROB_MIN, PROB_MAX);
        mse += (q - t) * (q - t);
        // KL(Bern(t) || Bern(q))
        excess += xlogy(t, t) - xlogy(t, q) + xlogy(1.0 - t, 1.0 - t) - xlogy(1.0 - t, 1.0 - q);
    }
    mse /= n;
    excess /= n;
    PinskerReport {
        mse,
        excess_risk: excess,
        holds: mse <= 0.5 * excess * (1.0 + 1e-12) + 1e-15,
    }
}

/// Evaluation item with a known success probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub context: TextContext,
    pub action: TextAction,
    pub q_true: f64,
}

pub fn pinsker_check(model: &QScorer, eval: &[EvalItem]) -> PinskerReport {
    let pred: Vec<f64> = eval
        .iter()
        .map(|e| model.score(&e.context, &e.action))
        .collect();
    let truth: Vec<f64> = eval.iter().map(|e| e.q_true).collect();
    pinsker_from_predictions(&pred, &truth)
}

/// A value model that can be refined on Bellman targets.
pub trait TrainableQ: QFunction {
    fn refine(
        &mut self,
        samples: &[TrainSample],
        cfg: &TrainConfig,
    ) -> Result<LossTrace, ScorerError>;
}

impl TrainableQ for QScorer {
    fn refine(
        &mut self,
        samples: &[TrainSample],
        cfg: &TrainConfig,
    ) -> Result<LossTrace, ScorerError> {
        refine_train(self, samples, cfg)
    }
}

/// The exact oracle needs no training; refinement reports a flat trace.
impl TrainableQ for ExactOracle {
    fn refine(
        &mut self,
        samples: &[TrainSample],
        cfg: &TrainConfig,
    ) -> Result<LossTrace, ScorerError> {
        if samples.is_empty() {
            return Err(ScorerError::Empty);
        }
        Ok(LossTrace {
            initial: 0.0,
            epochs: vec![0.0; cfg.epochs],
        })
    }
}

/// Scores the model's own actions at a state, for margin reporting.
pub fn score_actions(
    qf: &dyn QFunction,
    m: &KgMdp,
    history: &[usize],
    state: usize,
) -> Vec<(usize, f64)> {
    m.actions_of(state)
        .iter()
        .map(|&a| {
            (
                a,
                qf.q(&QueryContext {
                    mdp: m,
                    history,
                    state,
                    action: a,
                    depth: history.len(),
                }),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::g1_graph;

    fn ctx(i: &str, p: &str) -> TextContext {
        TextContext {
            instruction: i.into(),
            page: p.into(),
            history: vec![],
        }
    }

    fn act(id: &str, d: &str) -> TextAction {
        TextAction {
            id: id.into(),
            descriptor: d.into(),
        }
    }

    #[test]
    fn encoding_is_deterministic_and_unit() {
        let e = FeatureEncoder::default();
        let a = e.encode(&ctx("open wifi", "home"), &act("a1", "open wifi settings"));
        let b = e.encode(&ctx("open wifi", "home"), &act("a1", "open wifi settings"));
        assert_eq!(a, b);
        assert_eq!(a.len(), e.dim);
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_scores_half() {
        let m = QScorer::zeros(FeatureEncoder::default(), 8);
        assert_eq!(m.score(&ctx("x", "y"), &act("a", "b")), 0.5);
    }

    #[test]
    fn equal_scores_give_ln2() {
        let m = QScorer::zeros(
            FeatureEncoder {
                dim: 16,
                ..FeatureEncoder::default()
            },
            4,
        );
        let p = PairFeatures {
            pos: vec![0.0; 16],
            neg: vec![0.0; 16],
        };
        assert!((bt_loss(&m, &p) - std::f64::consts::LN_2).abs() < 1e-15);
        let s = SampleFeatures {
            x: vec![0.0; 16],
            target: 1.0,
        };
        assert!((bce_loss(&m, &s) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_logit_gap_drives_loss_to_zero() {
        let mut m = QScorer::zeros(
            FeatureEncoder {
                dim: 2,
                ..FeatureEncoder::default()
            },
            1,
        );
        m.w1 = vec![10.0, -10.0];
        m.w2 = vec![50.0];
        let p = PairFeatures {
            pos: vec![1.0, 0.0],
            neg: vec![0.0, 1.0],
        };
        assert!(bt_loss(&m, &p) < 1e-30);
    }

    #[test]
    fn g1_pairs() {
        let g = g1_graph();
        let p = Path {
            states: vec!["s0".into(), "s1".into(), "s3".into()],
            actions: vec!["a1".into(), "a3".into()],
        };
        let pairs =
            build_preference_pairs(&[(Instruction::new("t", "reach s3"), p)], &g, 0).unwrap();
        let ids: Vec<(&str, &str)> = pairs
            .iter()
            .map(|p| (p.positive.id.as_str(), p.negative.id.as_str()))
            .collect();
        assert_eq!(ids, [("a1", "a2"), ("a3", "a4")]);
        assert_eq!(pairs[1].context.history, ["open s1"]);
    }

    #[test]
    fn single_sample_bce_converges_to_target() {
        let mut m = QScorer::random(
            FeatureEncoder {
                dim: 32,
                ..FeatureEncoder::default()
            },
            8,
            1,
        );
        let s = vec![TrainSample {
            context: ctx("a", "b"),
            action: act("c", "d"),
            target: 0.3,
        }];
        refine_train(
            &mut m,
            &s,
            &TrainConfig {
                epochs: 2000,
                lr: 0.5,
                seed: 0,
            },
        )
        .unwrap();
        assert!((m.score(&s[0].context, &s[0].action) - 0.3).abs() < 0.01);
    }

    #[test]
    fn bad_targets_and_empty_sets_rejected() {
        let mut m = QScorer::zeros(FeatureEncoder::default(), 2);
        let s = vec![TrainSample {
            context: ctx("a", "b"),
            action: act("c", "d"),
            target: 1.5,
        }];
        assert_eq!(
            refine_train(&mut m, &s, &TrainConfig::default()),
            Err(ScorerError::BadTarget(1.5))
        );
        assert_eq!(
            init_train(&mut m, &[], &TrainConfig::default()),
            Err(ScorerError::Empty)
        );
    }

    #[test]
    fn pinsker_examples() {
        let r = pinsker_from_predictions(&[0.3, 0.9], &[0.3, 0.9]);
        assert!(r.mse < 1e-30 && r.excess_risk.abs() < 1e-12 && r.holds);
        let r = pinsker_from_predictions(&[0.5, 0.5], &[0.0, 1.0]);
        assert!((r.mse - 0.25).abs() < 1e-15);
        assert!((r.excess_risk - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = QScorer::random(
            FeatureEncoder {
                dim: 64,
                ..FeatureEncoder::default()
            },
            8,
            5,
        );
        let back = QScorer::from_json(&to_json(&m).unwrap()).unwrap();
        assert_eq!(m, back);
        let text =
            to_json(&m)
                .unwrap()
                .replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert!(matches!(
            QScorer::from_json(&text),
            Err(FormatError::SchemaMismatch { .. })
        ));
    }
}
