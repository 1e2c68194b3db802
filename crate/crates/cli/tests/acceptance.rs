//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use kgplan_core::bench::{run_bench, summarize, BenchAxis, BenchSpec, QfSpec};
use kgplan_core::groups::{expand_corpus, group_id, mine_groups_with_corpus, PathCorpus};
use kgplan_core::hashing::derive_seed;
use kgplan_core::io::{load_trajectories, save_trajectories};
use kgplan_core::kg::KnowledgeGraph;
use kgplan_core::mcts::{
    extract, top1_success, ExactOracle, MctsConfig, NoiseMode, NoisyOracle, Strategy,
};
use kgplan_core::mdp::{brute_force_optimal, greedy_path, min_gap, rollout_mean, uniform_q, KgMdp};
use kgplan_core::pipeline::{run_pipeline, PipelineConfig, PlanningSpace};
use kgplan_core::scorer::{
    bce_grad, bce_loss, bt_grad, bt_loss, build_preference_pairs, init_train,
    pinsker_from_predictions, FeatureEncoder, PairFeatures, QScorer, SampleFeatures, TrainConfig,
};
use kgplan_core::sim::{generate_env, random_mdp, RandomMdpSpec, SynthEnv, SynthEnvConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Random MDPs whose greedy path reaches a goal with Δ*_min ≥ `min_gap`, in seed order.
fn gapped_instances(n: usize, min_gap_at_least: f64) -> Vec<(KgMdp, f64)> {
    let spec = RandomMdpSpec::default();
    let mut out = Vec::with_capacity(n);
    let mut seed = 0u64;
    while out.len() < n {
        let m = random_mdp(seed, &spec).expect("random mdp");
        seed += 1;
        let q = uniform_q(&m);
        let p = greedy_path(&q, &m).expect("greedy");
        if m.path_reward(&p) < 1.0 {
            continue;
        }
        let gap = min_gap(&q, &p).expect("gap").delta_min;
        if gap >= min_gap_at_least {
            out.push((m, gap));
        }
    }
    out
}

fn greedy_optimality() -> Outcome {
    let spec = RandomMdpSpec::default();
    let mut ok = 0;
    for seed in 0..200 {
        let m = random_mdp(seed, &spec).expect("random mdp");
        let q = uniform_q(&m);
        let greedy = m.path_reward(&greedy_path(&q, &m).expect("greedy"));
        let (best, _) = brute_force_optimal(&m).expect("brute force");
        if greedy == best {
            ok += 1;
        }
    }
    outcome(ok == 200, format!("{ok}/200 instances match brute force"))
}

fn rollout_unbiasedness() -> Outcome {
    let spec = RandomMdpSpec::default();
    let bound = ((2.0f64 * 50.0 / 0.01).ln() / (2.0 * 10_000.0)).sqrt();
    let mut within = 0;
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let m = random_mdp(derive_seed(0xacc2, i), &spec).expect("random mdp");
        let q = uniform_q(&m);
        let entries = q.entries();
        // Pairs with 0 < Q < 1 when there are any; those are the ones rollouts can miss.
        let open: Vec<_> = entries.iter().filter(|e| e.q > 0.0 && e.q < 1.0).collect();
        let pool: Vec<_> = if open.is_empty() {
            entries.iter().collect()
        } else {
            open
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0xacc2 ^ 1, i));
        let e = pool[rng.gen_range(0..pool.len())];
        let exact = q.get(&e.state, &e.action).expect("entry");
        let mean = rollout_mean(&m, &e.state, &e.action, 10_000, derive_seed(0xacc2 ^ 2, i))
            .expect("rollouts");
        let err = (mean - exact).abs();
        worst = worst.max(err);
        if err <= bound {
            within += 1;
        }
    }
    outcome(
        within >= 49,
        format!("{within}/50 pairs within {bound:.4} (worst {worst:.4})"),
    )
}

fn recovery_rate(instances: &[(KgMdp, f64)], iterations: usize, eps_frac: f64) -> f64 {
    let mut ok = 0.0;
    for (i, (m, gap)) in instances.iter().enumerate() {
        let cfg = MctsConfig {
            iterations,
            exploration: 10.0,
            top_k: 5,
            seed: i as u64,
        };
        let plans = if eps_frac == 0.0 {
            extract(m, &ExactOracle, Strategy::Mcts, &cfg)
        } else {
            let qf = NoisyOracle {
                eps: eps_frac * gap,
                mode: NoiseMode::Adversarial,
            };
            extract(m, &qf, Strategy::Mcts, &cfg)
        }
        .expect("extract");
        ok += top1_success(m, &plans);
    }
    ok / instances.len() as f64
}

fn mcts_recovery(instances: &[(KgMdp, f64)]) -> Outcome {
    let ladder = [10, 30, 50, 100];
    let rates: Vec<f64> = ladder
        .iter()
        .map(|&m| recovery_rate(instances, m, 0.0))
        .collect();
    let at50 = rates[2];
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    let shown: Vec<String> = ladder
        .iter()
        .zip(&rates)
        .map(|(m, r)| format!("M={m}:{r:.3}"))
        .collect();
    outcome(
        at50 >= 0.95 && monotone,
        format!("{} (need M=50 ≥ 0.95, nondecreasing)", shown.join(" ")),
    )
}

fn bias_scaling(instances: &[(KgMdp, f64)]) -> Outcome {
    let ladder = [1, 2, 5, 10, 20, 30, 50, 100, 200];
    let mut minimal = Vec::new();
    let mut shown = Vec::new();
    for frac in [0.0, 0.2, 0.4] {
        let m_star = ladder
            .iter()
            .copied()
            .find(|&m| recovery_rate(instances, m, frac) >= 0.95);
        shown.push(format!(
            "ε={frac}Δ:{}",
            m_star.map_or("none".to_string(), |m| m.to_string())
        ));
        minimal.push(m_star.unwrap_or(usize::MAX));
    }
    let at_half = recovery_rate(instances, 50, 0.5);
    let ok = minimal.iter().all(|&m| m != usize::MAX) && minimal.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        ok,
        format!(
            "minimal M {} (ε=0.5Δ at M=50: {at_half:.3}, unconstrained)",
            shown.join(" ")
        ),
    )
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

fn numeric_grad(model: &QScorer, loss: impl Fn(&QScorer) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = model.params();
    let mut probe = model.clone();
    let mut g = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let up = loss(&probe);
        p[i] = base[i] - h;
        probe.set_params(&p);
        let down = loss(&probe);
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn gradient_checks() -> Outcome {
    let dim = 64;
    let encoder = FeatureEncoder {
        dim,
        ..FeatureEncoder::default()
    };
    let mut worst_bt = 0.0f64;
    let mut worst_bce = 0.0f64;
    for draw in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x9ad, draw));
        let mut model = QScorer::random(encoder.clone(), 8, draw);
        let p: Vec<f64> = model
            .params()
            .iter()
            .map(|w| w + rng.gen_range(-0.3..0.3))
            .collect();
        model.set_params(&p);
        let vec = |rng: &mut ChaCha8Rng| {
            (0..dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let pair = PairFeatures {
            pos: vec(&mut rng),
            neg: vec(&mut rng),
        };
        let sample = SampleFeatures {
            x: vec(&mut rng),
            target: rng.gen_range(0.0..1.0),
        };
        worst_bt = worst_bt.max(rel_error(
            &bt_grad(&model, &pair),
            &numeric_grad(&model, |m| bt_loss(m, &pair)),
        ));
        worst_bce = worst_bce.max(rel_error(
            &bce_grad(&model, &sample),
            &numeric_grad(&model, |m| bce_loss(m, &sample)),
        ));
    }
    outcome(
        worst_bt <= 1e-4 && worst_bce <= 1e-4,
        format!("worst relative error: pairwise {worst_bt:.2e}, soft-label {worst_bce:.2e} over 20 draws"),
    )
}

fn pinsker_link() -> Outcome {
    let mut violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x91e5);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let pred: Vec<f64> = truth
            .iter()
            .map(|&t| match rng.gen_range(0..3) {
                0 => rng.gen_range(0.0..=1.0),
                1 => (t + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0),
                _ => t,
            })
            .collect();
        if !pinsker_from_predictions(&pred, &truth).holds {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over 1000 sets"),
    )
}

#[derive(Deserialize)]
struct GoldenRule {
    left: Vec<String>,
    right: Vec<String>,
    frequency: usize,
}

#[derive(Deserialize)]
struct Golden {
    name: String,
    delta_f: usize,
    corpus: Vec<Vec<String>>,
    rules: Vec<GoldenRule>,
}

fn token_id(chain: &[String]) -> String {
    if chain.len() == 1 {
        chain[0].clone()
    } else {
        group_id(chain)
    }
}

fn bpe_miner() -> Outcome {
    let fixtures: Vec<Golden> =
        serde_json::from_str(include_str!("../../core/tests/fixtures/bpe_golden.json"))
            .expect("fixture file");
    let mut problems = Vec::new();
    let mut corpora: Vec<(PathCorpus, usize)> = fixtures
        .iter()
        .map(|f| (PathCorpus::new(f.corpus.clone()), f.delta_f))
        .collect();
    for f in &fixtures {
        let (rules, _) =
            mine_groups_with_corpus(&PathCorpus::new(f.corpus.clone()), f.delta_f).expect("mine");
        let got: Vec<(String, String, String, usize)> = rules
            .iter()
            .map(|r| {
                (
                    r.left.clone(),
                    r.right.clone(),
                    r.new_id.clone(),
                    r.frequency,
                )
            })
            .collect();
        let want: Vec<(String, String, String, usize)> = f
            .rules
            .iter()
            .map(|r| {
                let chain: Vec<String> = r.left.iter().chain(&r.right).cloned().collect();
                (
                    token_id(&r.left),
                    token_id(&r.right),
                    group_id(&chain),
                    r.frequency,
                )
            })
            .collect();
        if got != want {
            problems.push(format!("{}: rules differ", f.name));
        }
    }
    for seed in 0..3 {
        let env = generate_env(&SynthEnvConfig {
            branching: 3,
            depth: 5,
            chain_prob: 0.5,
            max_level_width: Some(40),
            seed,
            ..SynthEnvConfig::default()
        })
        .expect("env");
        corpora.push((PathCorpus::from_graph(&env.truth, 10_000), 3));
    }
    for (i, (corpus, delta_f)) in corpora.iter().enumerate() {
        let first = mine_groups_with_corpus(corpus, *delta_f).expect("mine");
        let restored = expand_corpus(&first.1, &first.0);
        if serde_json::to_vec(&restored.paths).unwrap()
            != serde_json::to_vec(&corpus.paths).unwrap()
        {
            problems.push(format!("corpus {i}: expansion differs"));
        }
        for _ in 0..9 {
            if mine_groups_with_corpus(corpus, *delta_f).expect("mine") != first {
                problems.push(format!("corpus {i}: rerun differs"));
                break;
            }
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} golden fixtures exact, {} corpora round-trip, 10 identical reruns each",
                fixtures.len(),
                corpora.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn self_training_trend() -> Outcome {
    let env = generate_env(&SynthEnvConfig {
        branching: 3,
        depth: 4,
        goal_count: 30,
        seed: 7,
        ..SynthEnvConfig::default()
    })
    .expect("env");
    let (train, eval) = env.tasks.split_at(20);
    let space = PlanningSpace {
        graph: Arc::new(env.truth.clone()),
        root: env.root.clone(),
        horizon: env.horizon,
    };
    let expert: Vec<_> = train
        .iter()
        .map(|t| (t.instruction.clone(), t.optimal.clone()))
        .collect();
    let (mut s1, mut s4, mut m1, mut m4) = (vec![], vec![], vec![], vec![]);
    for seed in 0..10u64 {
        let train_cfg = TrainConfig {
            epochs: 2,
            lr: 0.05,
            seed,
        };
        let mut model = QScorer::random(FeatureEncoder::default(), 32, seed);
        let pairs = build_preference_pairs(&expert, &env.truth, seed).expect("pairs");
        init_train(&mut model, &pairs, &train_cfg).expect("warm-up");
        let cfg = PipelineConfig {
            rounds: 4,
            batch: 8,
            mcts: MctsConfig::default(),
            train: train_cfg,
            seed,
        };
        let reports = run_pipeline(&mut model, &space, train, eval, &cfg).expect("pipeline");
        s1.push(reports[0].success_rate);
        s4.push(reports[3].success_rate);
        m1.push(reports[0].margin);
        m4.push(reports[3].margin);
    }
    let (s1, s4, m1, m4) = (median(s1), median(s4), median(m1), median(m4));
    outcome(
        s4 >= s1 && m4 > m1,
        format!("median success {s1:.2} -> {s4:.2}, median margin {m1:.4} -> {m4:.4}"),
    )
}

fn strategy_ordering() -> Outcome {
    let spec = BenchSpec {
        instances: 100,
        qf: QfSpec::Noisy { eps: 0.2 },
        env: SynthEnvConfig {
            branching: 2,
            depth: 4,
            ..SynthEnvConfig::default()
        },
        ..BenchSpec::new(BenchAxis::Strategy)
    };
    let summary = summarize(&run_bench(&spec).expect("bench"));
    let rate: BTreeMap<String, f64> = summary
        .iter()
        .map(|s| (s.value.clone(), s.mean_success))
        .collect();
    let (g, b, m) = (rate["greedy"], rate["bon"], rate["mcts"]);
    outcome(
        m >= b && b >= g,
        format!("K=2 depth 4 ε=0.2, 100 instances: mcts {m:.2} bon {b:.2} greedy {g:.2}"),
    )
}

fn action_groups() -> Outcome {
    let ladder = [5, 10, 15, 20, 30, 40, 50];
    let mut off = Vec::new();
    let mut on = Vec::new();
    for &iterations in &ladder {
        let spec = BenchSpec {
            instances: 50,
            qf: QfSpec::Noisy { eps: 0.1 },
            mcts: MctsConfig {
                iterations,
                ..MctsConfig::default()
            },
            env: SynthEnvConfig {
                branching: 3,
                depth: 5,
                chain_prob: 0.5,
                max_level_width: Some(40),
                ..SynthEnvConfig::default()
            },
            ..BenchSpec::new(BenchAxis::ActionGroups)
        };
        let s = summarize(&run_bench(&spec).expect("bench"));
        let rate: BTreeMap<String, f64> = s
            .iter()
            .map(|s| (s.value.clone(), s.mean_success))
            .collect();
        off.push(rate["off"]);
        on.push(rate["on"]);
    }
    let reference = *off.last().expect("ladder");
    let first_at = |v: &[f64]| {
        ladder
            .iter()
            .zip(v)
            .find(|(_, &r)| r >= reference)
            .map(|(&m, _)| m)
    };
    let (m_off, m_on) = (first_at(&off), first_at(&on));
    let ok = matches!((m_on, m_off), (Some(a), Some(b)) if a <= b) && on.last() >= off.last();
    outcome(
        ok,
        format!(
            "baseline {reference:.2} at M=50 reached at M={} without groups, M={} with groups (with groups at M=50: {:.2})",
            m_off.map_or("-".into(), |m| m.to_string()),
            m_on.map_or("-".into(), |m| m.to_string()),
            on.last().unwrap()
        ),
    )
}

fn kgplan(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_kgplan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn kgplan");
    assert!(
        out.status.success(),
        "kgplan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_all_subcommands(dir: &Path) {
    kgplan(
        dir,
        &[
            "gen-env",
            "--k",
            "3",
            "--depth",
            "4",
            "--goals",
            "9",
            "--merge-prob",
            "0.2",
            "--seed",
            "3",
            "--out",
            "env.json",
        ],
    );
    kgplan(
        dir,
        &[
            "explore",
            "--env",
            "env.json",
            "--task",
            "all",
            "--p-flip",
            "0.1",
            "--seed",
            "4",
            "--out",
            "traj.jsonl",
        ],
    );
    kgplan(
        dir,
        &[
            "build-kg",
            "--trajectories",
            "traj.jsonl",
            "--out",
            "kg.json",
        ],
    );
    kgplan(
        dir,
        &[
            "mine-groups",
            "--graph",
            "kg.json",
            "--out",
            "rules.json",
            "--graph-out",
            "kg_groups.json",
        ],
    );
    kgplan(
        dir,
        &[
            "init-train",
            "--env",
            "env.json",
            "--graph",
            "kg.json",
            "--epochs",
            "3",
            "--width",
            "8",
            "--dim",
            "128",
            "--out",
            "m0.json",
            "--pairs-out",
            "pairs.jsonl",
        ],
    );
    kgplan(
        dir,
        &[
            "init-train",
            "--pairs",
            "pairs.jsonl",
            "--epochs",
            "2",
            "--width",
            "8",
            "--dim",
            "128",
            "--out",
            "m0b.json",
        ],
    );
    kgplan(
        dir,
        &[
            "self-train",
            "--env",
            "env.json",
            "--graph",
            "kg.json",
            "--model",
            "m0.json",
            "--rounds",
            "2",
            "--iters",
            "20",
            "--seed",
            "5",
            "--out-dir",
            "st",
        ],
    );
    kgplan(
        dir,
        &[
            "refine-train",
            "--model",
            "m0.json",
            "--samples",
            "st/samples_round1.jsonl",
            "--seed",
            "6",
            "--out",
            "m1.json",
        ],
    );
    for (strategy, out) in [
        ("mcts", "plans_mcts.json"),
        ("bon", "plans_bon.json"),
        ("greedy", "plans_greedy.json"),
    ] {
        kgplan(
            dir,
            &[
                "extract",
                "--graph",
                "kg_groups.json",
                "--env",
                "env.json",
                "--task",
                "t0",
                "--strategy",
                strategy,
                "--model",
                "st/model.json",
                "--seed",
                "7",
                "--out",
                out,
            ],
        );
    }
    kgplan(
        dir,
        &[
            "extract",
            "--graph",
            "kg.json",
            "--env",
            "env.json",
            "--task",
            "t1",
            "--noise",
            "0.2",
            "--seed",
            "8",
            "--out",
            "plans_noise.json",
        ],
    );
    kgplan(
        dir,
        &[
            "verify",
            "--graph",
            "kg.json",
            "--instances",
            "5",
            "--rollouts",
            "500",
            "--seed",
            "9",
            "--out",
            "verify.csv",
            "--report",
            "verify.json",
        ],
    );
    kgplan(
        dir,
        &[
            "bench",
            "--axis",
            "bias",
            "--values",
            "0,0.4",
            "--instances",
            "2",
            "--seeds",
            "1,2",
            "--out",
            "bench.csv",
            "--summary",
            "bench_summary.csv",
        ],
    );
}

/// File contents with any `latency_ms` CSV column removed; wall-clock timings are not replayable.
fn replayable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).expect("read output");
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return bytes;
    }
    let text = String::from_utf8(bytes).expect("utf-8 csv");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let drop: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.contains("latency_ms"))
        .map(|(i, _)| i)
        .collect();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism_and_round_trip() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    run_all_subcommands(a.path());
    run_all_subcommands(b.path());
    let files = files_under(a.path());
    let mut problems = Vec::new();
    if files != files_under(b.path()) {
        problems.push("different file sets".to_string());
    }
    for f in &files {
        if replayable(&a.path().join(f)) != replayable(&b.path().join(f)) {
            problems.push(format!("{} differs", f.display()));
        }
    }

    let dir = a.path();
    let scratch = dir.join("rt");
    let g = KnowledgeGraph::load(&dir.join("kg_groups.json")).expect("graph");
    g.save(&scratch).expect("save");
    if KnowledgeGraph::load(&scratch).expect("reload") != g
        || std::fs::read(&scratch).unwrap() != std::fs::read(dir.join("kg_groups.json")).unwrap()
    {
        problems.push("graph round-trip".into());
    }
    let model = QScorer::load(&dir.join("st/model.json")).expect("model");
    model.save(&scratch).expect("save");
    if QScorer::load(&scratch).expect("reload") != model {
        problems.push("model round-trip".into());
    }
    let traj = load_trajectories(&dir.join("traj.jsonl")).expect("trajectories");
    save_trajectories(&scratch, &traj).expect("save");
    if load_trajectories(&scratch).expect("reload") != traj {
        problems.push("trajectory round-trip".into());
    }
    let env = SynthEnv::load(&dir.join("env.json")).expect("env");
    env.save(&scratch).expect("save");
    if SynthEnv::load(&scratch).expect("reload") != env {
        problems.push("environment round-trip".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} output files identical across two runs of all 10 subcommands; graph, model, trajectory and environment round-trip",
                files.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, limit: Option<Duration>, f: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let mut o = f();
        let took = t0.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                o.pass = false;
                o.detail
                    .push_str(&format!("; over the {}s budget", limit.as_secs()));
            }
        }
        println!(
            "{} [{id:>2}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    };
    let secs = |s| Some(Duration::from_secs(s));
    report(1, "greedy optimality", secs(10), &greedy_optimality);
    report(2, "rollout unbiasedness", secs(30), &rollout_unbiasedness);
    let gapped = OnceLock::new();
    let instances = || gapped.get_or_init(|| gapped_instances(200, 0.1));
    report(3, "oracle-guided MCTS recovery", secs(120), &|| {
        mcts_recovery(instances())
    });
    report(4, "bias scaling", secs(300), &|| bias_scaling(instances()));
    report(5, "gradient checks", None, &gradient_checks);
    report(6, "Pinsker link", None, &pinsker_link);
    report(7, "BPE miner", None, &bpe_miner);
    report(8, "self-training trend", secs(600), &self_training_trend);
    report(9, "strategy ordering", None, &strategy_ordering);
    report(10, "action groups", None, &action_groups);
    report(
        11,
        "determinism and round-trip",
        None,
        &determinism_and_round_trip,
    );
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
