//! Synthetic graphs whose labels follow known relation chains.
//!
//! Every head entity gets a fixed set of candidate tails. A chain is planted
//! between a head and a tail by routing it through intermediate entities
//! private to that (head, chain) combination, so the chains realized between
//! a head and a tail are exactly the ones that were planted for the pair.
//! Target-relation facts are not part of the graph.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{self, split_train_dev, GraphBuilder, KnowledgeGraph, Label, LabeledPair, TaskDataset};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Positive iff the first planted chain connects the pair.
    Single,
    /// Positive iff the first two planted chains both connect the pair.
    Conjunction,
    /// Labels drawn first; each planted chain then appears with a
    /// label-dependent rate, so no chain alone is decisive.
    NoisyWeak,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Single => "single",
            Rule::Conjunction => "conjunction",
            Rule::NoisyWeak => "noisy-weak",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Rule::Single, Rule::Conjunction, Rule::NoisyWeak]
            .into_iter()
            .find(|r| r.name() == name)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub rule: Rule,
    /// Name of the predicted relation; never used inside a chain.
    pub target: String,
    pub heads: usize,
    pub tails: usize,
    pub candidates_per_head: usize,
    /// Candidates of each head held out for testing.
    pub test_per_head: usize,
    /// Relations `rel0, rel1, ...` available for planted and distractor chains.
    pub relations: usize,
    /// Planted chains as relation names.
    pub planted: Vec<Vec<String>>,
    pub distractors: usize,
    /// Probability that a distractor chain connects a given pair.
    pub distractor_rate: f64,
    /// Conjunction: weights of the (both, first only, second only, neither)
    /// chain patterns.
    pub pattern_weights: [f64; 4],
    /// Noisy-weak: fraction of positive pairs.
    pub positive_rate: f64,
    /// Noisy-weak: presence rate of each planted chain in positive and
    /// negative pairs.
    pub weak_rates: (f64, f64),
    /// Label flip probability.
    pub noise: f64,
    pub max_hops: usize,
    pub seed: u64,
}

/// Relation of the edge that anchors otherwise isolated entities.
pub const ATTRIBUTE: &str = "attr";

fn chain(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl BenchmarkSpec {
    /// Two planted chains, label is their conjunction.
    pub fn conjunction(seed: u64) -> Self {
        BenchmarkSpec {
            rule: Rule::Conjunction,
            target: "target".into(),
            heads: 5,
            tails: 70,
            candidates_per_head: 70,
            test_per_head: 20,
            relations: 8,
            planted: vec![chain(&["rel0", "rel1"]), chain(&["rel2", "rel3"])],
            distractors: 40,
            distractor_rate: 0.15,
            pattern_weights: [0.35, 0.25, 0.25, 0.15],
            positive_rate: 0.5,
            weak_rates: (0.5, 0.5),
            noise: 0.0,
            max_hops: 3,
            seed,
        }
    }

    pub fn single(seed: u64) -> Self {
        BenchmarkSpec {
            rule: Rule::Single,
            planted: vec![chain(&["rel0", "rel1"])],
            ..Self::conjunction(seed)
        }
    }

    /// Five weak chains, none decisive alone.
    pub fn noisy_weak(seed: u64) -> Self {
        BenchmarkSpec {
            rule: Rule::NoisyWeak,
            heads: 80,
            tails: 60,
            candidates_per_head: 50,
            test_per_head: 20,
            distractors: 24,
            planted: vec![
                chain(&["rel0", "rel1"]),
                chain(&["rel2", "rel3"]),
                chain(&["rel4", "rel5"]),
                chain(&["rel6", "rel7"]),
                chain(&["rel1", "rel4"]),
            ],
            positive_rate: 0.4,
            weak_rates: (0.6, 0.2),
            ..Self::conjunction(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        let needed = match self.rule {
            Rule::Single => 1,
            Rule::Conjunction => 2,
            Rule::NoisyWeak => 1,
        };
        if self.planted.len() < needed {
            return bad(format!("rule {} needs {needed} planted chains", self.rule));
        }
        for c in &self.planted {
            if c.is_empty() {
                return bad("empty planted chain".into());
            }
            if c.len() > self.max_hops {
                return bad(format!(
                    "planted chain {} has {} hops, search depth is {}",
                    c.join("->"),
                    c.len(),
                    self.max_hops
                ));
            }
            if c.iter().any(|r| *r == self.target || kg::inverse_name(r) == self.target) {
                return bad(format!("planted chain {} uses the target relation", c.join("->")));
            }
        }
        if self.candidates_per_head > self.tails {
            return bad(format!(
                "{} candidates per head but only {} tails",
                self.candidates_per_head, self.tails
            ));
        }
        if self.test_per_head >= self.candidates_per_head {
            return bad("no training candidates left per head".into());
        }
        if self.heads == 0 {
            return bad("no heads".into());
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.noise) || !unit(self.distractor_rate) || !unit(self.positive_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if !unit(self.weak_rates.0) || !unit(self.weak_rates.1) {
            return bad("rates must lie in [0, 1]".into());
        }
        if self.pattern_weights.iter().any(|w| *w < 0.0) || self.pattern_weights.iter().sum::<f64>() <= 0.0 {
            return bad("pattern weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    /// Length-two chains over the relation pool that are not planted.
    fn distractor_chains<R: Rng>(&self, rng: &mut R) -> Result<Vec<Vec<String>>> {
        let names: Vec<String> = (0..self.relations).map(|i| format!("rel{i}")).collect();
        let mut pool: Vec<Vec<String>> = Vec::new();
        for a in &names {
            for b in &names {
                let c = vec![a.clone(), b.clone()];
                if !self.planted.contains(&c) {
                    pool.push(c);
                }
            }
        }
        if pool.len() < self.distractors {
            return Err(Error::Infeasible(format!(
                "{} relations give only {} distractor chains, {} requested",
                self.relations,
                pool.len(),
                self.distractors
            )));
        }
        Ok(index::sample(rng, pool.len(), self.distractors)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect())
    }
}

/// A generated benchmark: the graph, the labeled candidate pairs and the
/// chains that drive the labels.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub graph: KnowledgeGraph,
    pub relation: String,
    /// Training pool, before the train/dev split.
    pub pool: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub planted: Vec<Vec<String>>,
    pub distractors: Vec<Vec<String>>,
}

impl Benchmark {
    pub fn dataset(&self, split_ratio: f64, seed: u64) -> TaskDataset {
        let (train, dev) = split_train_dev(&self.pool, split_ratio, seed);
        TaskDataset {
            relation: self.relation.clone(),
            target: self.graph.relation(&self.relation).ok(),
            train,
            dev,
            test: self.test.clone(),
        }
    }

    /// Writes `graph.tsv` and `tasks/<relation>/{train,test}.pairs`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let task_dir = dir.join("tasks").join(&self.relation);
        std::fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
        let write = |path: &Path, body: Vec<u8>| std::fs::write(path, body).map_err(|e| Error::io(path, e));
        let mut buf = Vec::new();
        self.graph.write_triples(&mut buf).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("graph.tsv"), buf)?;
        for (name, pairs) in [(kg::TRAIN_PAIRS, &self.pool), (kg::TEST_PAIRS, &self.test)] {
            let mut buf = Vec::new();
            kg::write_pairs(&mut buf, pairs, &self.graph).map_err(|e| Error::io(&task_dir, e))?;
            write(&task_dir.join(name), buf)?;
        }
        Ok(())
    }
}

/// Which planted chains a pair gets, and its clean label.
fn draw_pair<R: Rng>(spec: &BenchmarkSpec, rng: &mut R) -> (Vec<bool>, Label) {
    let k = spec.planted.len();
    let label_of = |b: bool| if b { Label::Positive } else { Label::Negative };
    match spec.rule {
        Rule::Single => {
            let present: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
            let label = label_of(present[0]);
            (present, label)
        }
        Rule::Conjunction => {
            let total: f64 = spec.pattern_weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pattern = 3;
            for (i, w) in spec.pattern_weights.iter().enumerate() {
                if u < *w {
                    pattern = i;
                    break;
                }
                u -= w;
            }
            let (a, b) = [(true, true), (true, false), (false, true), (false, false)][pattern];
            let mut present = vec![a, b];
            present.extend((2..k).map(|_| rng.gen_bool(0.5)));
            (present, label_of(a && b))
        }
        Rule::NoisyWeak => {
            let positive = rng.gen_bool(spec.positive_rate);
            let rate = if positive { spec.weak_rates.0 } else { spec.weak_rates.1 };
            let present = (0..k).map(|_| rng.gen_bool(rate)).collect();
            (present, label_of(positive))
        }
    }
}

pub fn make_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, Stream::Benchmark);
    let distractors = spec.distractor_chains(&mut r)?;
    let chains: Vec<&Vec<String>> = spec.planted.iter().chain(&distractors).collect();

    let mut builder = GraphBuilder::new(true);
    let tails: Vec<String> = (0..spec.tails).map(|i| format!("t{i}")).collect();
    let mut pool = Vec::new();
    let mut test = Vec::new();
    let mut planted_edges: Vec<(String, usize, String)> = Vec::new();
    for h in 0..spec.heads {
        let head = format!("h{h}");
        let candidates = index::sample(&mut r, spec.tails, spec.candidates_per_head).into_vec();
        let mut pairs = Vec::with_capacity(candidates.len());
        for &t in &candidates {
            let (mut present, label) = draw_pair(spec, &mut r);
            present.extend((0..distractors.len()).map(|_| r.gen_bool(spec.distractor_rate)));
            let label = if spec.noise > 0.0 && r.gen_bool(spec.noise) {
                label.flipped()
            } else {
                label
            };
            for (c, _) in present.iter().enumerate().filter(|(_, p)| **p) {
                planted_edges.push((head.clone(), c, tails[t].clone()));
            }
            pairs.push((t, label));
        }
        pairs.shuffle(&mut r);
        for (i, (t, label)) in pairs.into_iter().enumerate() {
            let pair = (head.clone(), tails[t].clone(), label);
            if i < spec.test_per_head {
                test.push(pair);
            } else {
                pool.push(pair);
            }
        }
    }

    // Route chain c between head h and tail t through intermediates
    // m.h.c.1 .. m.h.c.(len-1), shared by every tail of (h, c).
    let mut prefix_done = HashSet::new();
    for (head, c, tail) in &planted_edges {
        let rels = chains[*c];
        let mid = |step: usize| format!("m.{head}.{c}.{step}");
        if rels.len() == 1 {
            builder.add(head, &rels[0], tail);
            continue;
        }
        if prefix_done.insert((head.clone(), *c)) {
            builder.add(head, &rels[0], &mid(1));
            for step in 1..rels.len() - 1 {
                builder.add(&mid(step), &rels[step], &mid(step + 1));
            }
        }
        builder.add(&mid(rels.len() - 1), &rels[rels.len() - 1], tail);
    }
    // an entity without any planted chain still needs a node; a private
    // attribute edge gives it one without creating chains
    let mut touched: HashSet<&str> = HashSet::new();
    for (head, _, tail) in &planted_edges {
        touched.insert(head);
        touched.insert(tail);
    }
    for (h, t, _) in pool.iter().chain(&test) {
        for name in [h, t] {
            if touched.insert(name) {
                builder.add(name, ATTRIBUTE, &format!("{name}.attr"));
            }
        }
    }
    let graph = builder.build();
    let resolve = |pairs: &[(String, String, Label)]| -> Result<Vec<LabeledPair>> {
        pairs
            .iter()
            .map(|(h, t, label)| {
                Ok(LabeledPair {
                    head: graph.entity(h)?,
                    tail: graph.entity(t)?,
                    label: *label,
                })
            })
            .collect()
    };
    let pool = resolve(&pool)?;
    let test = resolve(&test)?;
    Ok(Benchmark {
        relation: spec.target.clone(),
        pool,
        test,
        planted: spec.planted.clone(),
        distractors,
        graph,
    })
}
