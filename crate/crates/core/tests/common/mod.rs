//! Independent reference implementations shared by the integration tests
//! and the acceptance run. None of them call into the code they check
//! beyond constructing inputs.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use mcmh::chains::{enumerate_paths, ChainMask, CyclePolicy, SearchOptions, SelectionMask, VocabOptions};
use mcmh::eval::{evaluate_task, make_benchmark, run_mode, BenchmarkSpec, EncodedTask, Grouping, Mode, RankedResult};
use mcmh::game::{policy_gradient, reward, sample_mask, sparsity_loss, Baseline, GameConfig, GameModel, TrainConfig};
use mcmh::kg::{GraphBuilder, KnowledgeGraph, Label};
use mcmh::neural::{cross_entropy, softmax, Arch, DenseLayer, DenseParams};
use mcmh::rng::{self, Stream};
use rand::Rng;

// ---------------------------------------------------------------- paths

pub type NameTriple = (String, String, String);

pub fn random_triples<R: Rng>(rng: &mut R, max_entities: usize, max_relations: usize) -> Vec<NameTriple> {
    let n_ent = rng.gen_range(2..=max_entities);
    let n_rel = rng.gen_range(1..=max_relations);
    let n_edges = rng.gen_range(1..=2 * n_ent);
    (0..n_edges)
        .map(|_| {
            (
                format!("e{}", rng.gen_range(0..n_ent)),
                format!("p{}", rng.gen_range(0..n_rel)),
                format!("e{}", rng.gen_range(0..n_ent)),
            )
        })
        .collect()
}

pub fn build_graph(triples: &[NameTriple], inverses: bool) -> KnowledgeGraph {
    let mut b = GraphBuilder::new(inverses);
    for (h, r, t) in triples {
        b.add(h, r, t);
    }
    b.build()
}

fn inv(name: &str) -> String {
    match name.strip_suffix("_inv") {
        Some(base) => base.to_string(),
        None => format!("{name}_inv"),
    }
}

/// Every walk of 1..=k edges from `head`, checked against the cycle policy
/// after the fact.
pub fn oracle_chains(
    triples: &[NameTriple],
    inverses: bool,
    head: &str,
    tail: &str,
    k: usize,
    policy: CyclePolicy,
    exclude: Option<&str>,
) -> BTreeSet<Vec<String>> {
    let mut edges: BTreeSet<NameTriple> = triples.iter().cloned().collect();
    if inverses {
        for (h, r, t) in triples {
            edges.insert((t.clone(), inv(r), h.clone()));
        }
    }
    let edges: Vec<NameTriple> = edges.into_iter().collect();
    let mut out = BTreeSet::new();
    let mut walk: Vec<&NameTriple> = Vec::new();
    fn rec<'a>(
        edges: &'a [NameTriple],
        at: &str,
        walk: &mut Vec<&'a NameTriple>,
        k: usize,
        visit: &mut dyn FnMut(&[&'a NameTriple]),
    ) {
        for e in edges.iter().filter(|e| e.0 == at) {
            walk.push(e);
            visit(walk);
            if walk.len() < k {
                rec(edges, &e.2, walk, k, visit);
            }
            walk.pop();
        }
    }
    let mut visit = |w: &[&NameTriple]| {
        if w.last().unwrap().2 != tail {
            return;
        }
        let ok = match policy {
            CyclePolicy::Unrestricted => true,
            CyclePolicy::NoImmediateBacktrack => w
                .windows(2)
                .all(|p| !(p[1].2 == p[0].0 && p[1].1 == inv(&p[0].1) && inverses)),
            CyclePolicy::SimplePaths => {
                let mut verts: Vec<&str> = vec![head];
                verts.extend(w.iter().map(|e| e.2.as_str()));
                let last = verts.len() - 1;
                let inner: BTreeSet<&str> = verts[..last].iter().copied().collect();
                let inner_distinct = inner.len() == last;
                let end_ok = !verts[1..last].contains(&verts[last]) && (verts[last] != head || head == tail);
                inner_distinct && end_ok
            }
        };
        if !ok {
            return;
        }
        if w.len() == 1 {
            if let Some(x) = exclude {
                if w[0].1 == x || (inverses && w[0].1 == inv(x)) {
                    return;
                }
            }
        }
        out.insert(w.iter().map(|e| e.1.clone()).collect());
    };
    rec(&edges, head, &mut walk, k, &mut visit);
    out
}

pub fn chain_names(graph: &KnowledgeGraph, head: &str, tail: &str, opts: &SearchOptions, exclude: Option<&str>) -> BTreeSet<Vec<String>> {
    let h = graph.entity(head).unwrap();
    let t = graph.entity(tail).unwrap();
    let ex = exclude.and_then(|x| graph.relation(x).ok());
    enumerate_paths(graph, h, t, opts, ex)
        .unwrap()
        .into_iter()
        .map(|c| c.relations().iter().map(|r| graph.relation_name(*r).to_string()).collect())
        .collect()
}

/// Runs one random graph through both implementations; returns the number
/// of (head, tail) queries compared or the first mismatch.
pub fn compare_random_graph(seed: u64) -> Result<usize, String> {
    let mut r = rng::stream(seed, Stream::Eval);
    let triples = random_triples(&mut r, 12, 4);
    let inverses = r.gen_bool(0.8);
    let graph = build_graph(&triples, inverses);
    let k = r.gen_range(1..=3);
    let policy = [CyclePolicy::NoImmediateBacktrack, CyclePolicy::SimplePaths, CyclePolicy::Unrestricted][r.gen_range(0..3)];
    let exclude = if r.gen_bool(0.5) { Some(triples[0].1.clone()) } else { None };
    let opts = SearchOptions { max_hops: k, policy };
    let names: Vec<String> = (0..graph.entity_count())
        .map(|i| graph.entity_name(mcmh::kg::EntityId(i as u32)).to_string())
        .collect();
    let mut n = 0;
    for h in &names {
        for t in &names {
            let got = chain_names(&graph, h, t, &opts, exclude.as_deref());
            let want = oracle_chains(&triples, inverses, h, t, k, policy, exclude.as_deref());
            if got != want {
                return Err(format!(
                    "seed {seed}, {h}->{t}, k={k}, {policy:?}, inverses={inverses}, exclude={exclude:?}: got {got:?}, oracle {want:?}"
                ));
            }
            n += 1;
        }
    }
    Ok(n)
}

// ------------------------------------------------------------------ MAP

/// AP by counting, for every positive, the items ranked at or above it.
/// An item `j` precedes `i` when it scores higher, or equally and earlier.
pub fn oracle_ap(items: &[(f64, Label)]) -> Option<f64> {
    let precedes = |j: usize, i: usize| items[j].0 > items[i].0 || (items[j].0 == items[i].0 && j < i);
    let mut total = 0.0;
    let mut positives = 0;
    for i in 0..items.len() {
        if !items[i].1.is_positive() {
            continue;
        }
        positives += 1;
        let rank = 1 + (0..items.len()).filter(|&j| precedes(j, i)).count();
        let hits = 1 + (0..items.len())
            .filter(|&j| items[j].1.is_positive() && precedes(j, i))
            .count();
        total += hits as f64 / rank as f64;
    }
    (positives > 0).then(|| total / positives as f64)
}

pub fn oracle_map(groups: &[RankedResult]) -> Option<f64> {
    let aps: Vec<f64> = groups.iter().filter_map(|g| oracle_ap(&g.items)).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn random_groups<R: Rng>(rng: &mut R) -> Vec<RankedResult> {
    let n = rng.gen_range(1..=8);
    (0..n)
        .map(|key| {
            let len = rng.gen_range(1..=12);
            // coarse scores so ties are common
            let coarse = rng.gen_bool(0.5);
            let items = (0..len)
                .map(|_| {
                    let s = if coarse { rng.gen_range(0..4) as f64 / 4.0 } else { rng.gen::<f64>() };
                    let l = if rng.gen_bool(0.4) { Label::Positive } else { Label::Negative };
                    (s, l)
                })
                .collect();
            RankedResult { key, items }
        })
        .collect()
}

// ------------------------------------------------------------ gradients

/// Largest relative error between backprop and central differences of the
/// cross-entropy loss, with the denominator floored at 1e-6.
pub fn gradient_check(net: &DenseParams, input: &[f64], class: usize, step: f64) -> f64 {
    let loss = |p: &DenseParams| cross_entropy(&p.logits(input).unwrap(), class).0;
    let (logits, cache) = net.forward(input).unwrap();
    let (_, dlogits) = cross_entropy(&logits, class);
    let analytic: Vec<f64> = net.backward(&cache, &dlogits).unwrap().values().copied().collect();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        *plus.values_mut().nth(k).unwrap() += step;
        let mut minus = net.clone();
        *minus.values_mut().nth(k).unwrap() -= step;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// A random network with non-zero biases plus a random real input.
pub fn random_config(seed: u64, arch: Arch) -> (DenseParams, Vec<f64>, usize) {
    let mut r = rng::stream(seed, Stream::Init);
    let dim = r.gen_range(1..=16);
    let mut net = DenseParams::build(arch, dim, 2, &mut r);
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = r.gen_range(-0.5..0.5);
        }
    }
    let input = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    (net, input, r.gen_range(0..2))
}

// ------------------------------------------------------------ REINFORCE

/// Linear predictor whose positive-class logit margin is `x0 + x1 - 1.5`,
/// i.e. it answers "positive" exactly when chains 0 and 1 are both present.
pub fn and_predictor(dim: usize) -> DenseParams {
    let mut weights = vec![0.0; 2 * dim];
    weights[dim] = 1.0;
    weights[dim + 1] = 1.0;
    DenseParams::from_layers(vec![DenseLayer {
        rows: 2,
        cols: dim,
        weights,
        bias: vec![0.0, -1.5],
    }])
    .unwrap()
}

pub struct ReinforceSetup {
    pub model: GameModel,
    pub availability: ChainMask,
    pub label: Label,
}

pub fn reinforce_setup() -> ReinforceSetup {
    let dim = 8;
    let mut model = GameModel::new(
        dim,
        &GameConfig { d: 2, lambda_s: 1.0, arch: Arch::Linear },
        &mut rng::stream(21, Stream::Init),
    )
    .unwrap();
    model.predictor = and_predictor(dim);
    model.complement = and_predictor(dim);
    ReinforceSetup {
        model,
        availability: ChainMask::from_indices(dim, 0..dim),
        label: Label::Positive,
    }
}

fn accuracy(net: &DenseParams, input: &ChainMask, label: Label) -> u8 {
    let p = softmax(&net.logits(&input.to_input()).unwrap());
    let predicted = if p[1] > p[0] { 1 } else { 0 };
    (predicted == label.class()) as u8
}

pub fn mask_reward(s: &ReinforceSetup, mask: &SelectionMask) -> f64 {
    let m = &s.model;
    reward(
        accuracy(&m.predictor, &mask.selected, s.label),
        accuracy(&m.complement, &mask.complement, s.label),
        sparsity_loss(mask, m.d),
        m.lambda_s,
    )
}

/// `sum over all masks of pi(m) * (-R(m) grad log pi(m))`.
pub fn exact_policy_gradient(s: &ReinforceSetup) -> Vec<f64> {
    let probs = s.model.generator_probs(&s.availability).unwrap();
    let dim = s.availability.len();
    let mut total = vec![0.0; s.model.generator.num_params()];
    for bits in 0u32..(1 << dim) {
        let selected = ChainMask::from_indices(dim, (0..dim).filter(|j| bits >> j & 1 == 1));
        let mask = SelectionMask::new(&s.availability, &selected);
        let prob: f64 = (0..dim)
            .map(|j| if selected.get(j) { probs[j] } else { 1.0 - probs[j] })
            .product();
        let g = policy_gradient(&s.model, &s.availability, &mask, mask_reward(s, &mask)).unwrap();
        for (t, v) in total.iter_mut().zip(g.values()) {
            *t += prob * v;
        }
    }
    total
}

pub struct MonteCarlo {
    pub mean: Vec<f64>,
    /// Standard error of each coordinate of the mean.
    pub stderr: Vec<f64>,
}

/// Mean of `samples` single-sample estimates with a moving-average baseline.
pub fn monte_carlo_policy_gradient(s: &ReinforceSetup, samples: usize, seed: u64) -> MonteCarlo {
    let probs = s.model.generator_probs(&s.availability).unwrap();
    let mut r = rng::stream(seed, Stream::Sampling);
    let mut baseline = Baseline::new(0.9);
    let n_params = s.model.generator.num_params();
    let mut sum = vec![0.0; n_params];
    let mut sum_sq = vec![0.0; n_params];
    for _ in 0..samples {
        let mask = sample_mask(&probs, &s.availability, &mut r);
        let rew = mask_reward(s, &mask);
        let g = policy_gradient(&s.model, &s.availability, &mask, rew - baseline.value).unwrap();
        for ((t, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(g.values()) {
            *t += v;
            *q += v * v;
        }
        baseline.update(rew);
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|t| t / n).collect();
    let stderr = mean
        .iter()
        .zip(&sum_sq)
        .map(|(m, q)| ((q / n - m * m).max(0.0) / n).sqrt())
        .collect();
    MonteCarlo { mean, stderr }
}

pub struct ReinforceCheck {
    /// Coordinates resolvable at the tolerance: `tol * |exact| >= 4 stderr`.
    pub significant: usize,
    pub worst_relative: f64,
    /// Largest `|estimate - exact| / stderr` over every coordinate.
    pub worst_z: f64,
}

pub fn compare_reinforce(exact: &[f64], mc: &MonteCarlo, tol: f64) -> ReinforceCheck {
    let mut check = ReinforceCheck { significant: 0, worst_relative: 0.0, worst_z: 0.0 };
    for ((e, m), se) in exact.iter().zip(&mc.mean).zip(&mc.stderr) {
        if *se > 0.0 {
            check.worst_z = check.worst_z.max((m - e).abs() / se);
        } else if m != e {
            check.worst_z = f64::INFINITY;
        }
        if e.abs() > 0.0 && tol * e.abs() >= 4.0 * se {
            check.significant += 1;
            check.worst_relative = check.worst_relative.max((m - e).abs() / e.abs());
        }
    }
    check
}

// ------------------------------------------------------------ benchmarks

pub const BENCH_EPOCHS: usize = 200;

pub fn encoded_benchmark(spec: &BenchmarkSpec) -> EncodedTask {
    let bench = make_benchmark(spec).unwrap();
    let dataset = bench.dataset(0.8, spec.seed);
    EncodedTask::encode(&bench.graph, &dataset, &VocabOptions::default()).unwrap()
}

/// Test MAP of one trained run.
pub fn run_map(task: &EncodedTask, mode: Mode, d: usize, seed: u64) -> f64 {
    let config = TrainConfig {
        epochs: BENCH_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = run_mode(task, mode, d, 1.0, &config).unwrap();
    evaluate_task(&model, &task.test, Grouping::ByHead).unwrap().map
}

pub fn label_counts(instances: &[mcmh::chains::Instance]) -> HashMap<Label, usize> {
    let mut m = HashMap::new();
    for i in instances {
        *m.entry(i.label).or_insert(0) += 1;
    }
    m
}

// ------------------------------------------------------------------ CLI

pub fn mcmh(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_mcmh"))
        .args(args)
        .output()
        .expect("failed to spawn mcmh")
}

pub fn mcmh_ok(args: &[&str]) -> String {
    let out = mcmh(args);
    assert!(
        out.status.success(),
        "mcmh {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Shared flags pointing a subcommand at a benchmark written under `root`.
pub fn data_flags(root: &std::path::Path) -> Vec<String> {
    vec![
        "--graph".into(),
        root.join("graph.tsv").display().to_string(),
        "--tasks".into(),
        root.join("tasks").display().to_string(),
        "--out".into(),
        root.join("out").display().to_string(),
    ]
}

pub fn with<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

/// benchmark -> extract -> train -> eval under `root`; returns every file
/// of the output directory by relative path.
pub fn run_pipeline(root: &std::path::Path, seed: &str, train_flags: &[&str]) -> std::collections::BTreeMap<String, Vec<u8>> {
    let root_s = root.display().to_string();
    mcmh_ok(&["benchmark", "--rule", "conjunction", "--seed", seed, "--out", &root_s]);
    let flags = data_flags(root);
    mcmh_ok(&with(&["extract", "--seed", seed], &flags));
    let mut train = with(&["train", "--seed", seed], &flags);
    train.extend_from_slice(train_flags);
    mcmh_ok(&train);
    let mut eval = with(&["eval", "--seed", seed], &flags);
    eval.extend_from_slice(train_flags);
    mcmh_ok(&eval);
    let mut files = std::collections::BTreeMap::new();
    let out = root.join("out");
    let mut stack = vec![out.clone()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(&out).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}
