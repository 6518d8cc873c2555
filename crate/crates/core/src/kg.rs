//! Triple store and per-relation task datasets.
//!
//! The graph is built once and never mutated. Entities and relations are
//! interned to dense `u32` ids in first-seen order. With inverse augmentation
//! every triple `(h, r, t)` also yields the edge `(t, r_inv, h)`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Suffix marking the inverse of a relation.
pub const INVERSE_SUFFIX: &str = "_inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Name of the inverse relation: `r` ↔ `r_inv`.
pub fn inverse_name(name: &str) -> String {
    match name.strip_suffix(INVERSE_SUFFIX) {
        Some(base) if !base.is_empty() => base.to_string(),
        _ => format!("{name}{INVERSE_SUFFIX}"),
    }
}

/// Bidirectional name ↔ dense id map.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Accumulates triples and produces an immutable [`KnowledgeGraph`].
#[derive(Debug)]
pub struct GraphBuilder {
    add_inverses: bool,
    entities: SymbolTable,
    relations: SymbolTable,
    triples: Vec<Triple>,
    seen_triples: HashSet<Triple>,
    edges: HashSet<Triple>,
    forward: Vec<Vec<(RelationId, EntityId)>>,
    backward: Vec<Vec<(RelationId, EntityId)>>,
    duplicates: usize,
}

impl GraphBuilder {
    pub fn new(add_inverses: bool) -> Self {
        GraphBuilder {
            add_inverses,
            entities: SymbolTable::default(),
            relations: SymbolTable::default(),
            triples: Vec::new(),
            seen_triples: HashSet::new(),
            edges: HashSet::new(),
            forward: Vec::new(),
            backward: Vec::new(),
            duplicates: 0,
        }
    }

    fn entity(&mut self, name: &str) -> EntityId {
        let id = self.entities.intern(name);
        if id as usize == self.forward.len() {
            self.forward.push(Vec::new());
            self.backward.push(Vec::new());
        }
        EntityId(id)
    }

    fn push_edge(&mut self, edge: Triple) {
        if self.edges.insert(edge) {
            self.forward[edge.head.index()].push((edge.relation, edge.tail));
            self.backward[edge.tail.index()].push((edge.relation, edge.head));
        }
    }

    /// Adds one triple. Returns `false` if it was already present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.entity(head);
        let t = self.entity(tail);
        let r = RelationId(self.relations.intern(relation));
        let inv = self
            .add_inverses
            .then(|| RelationId(self.relations.intern(&inverse_name(relation))));

        let triple = Triple {
            head: h,
            relation: r,
            tail: t,
        };
        if !self.seen_triples.insert(triple) {
            self.duplicates += 1;
            return false;
        }
        self.triples.push(triple);
        self.push_edge(triple);
        if let Some(inv) = inv {
            self.push_edge(Triple {
                head: t,
                relation: inv,
                tail: h,
            });
        }
        true
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn build(self) -> KnowledgeGraph {
        let inverse = (0..self.relations.len() as u32)
            .map(|id| {
                self.relations
                    .get(&inverse_name(self.relations.name(id)))
                    .map(RelationId)
            })
            .collect();
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            inverse,
            forward: self.forward,
            backward: self.backward,
            triples: self.triples,
            edge_count: self.edges.len(),
            inverses: self.add_inverses,
        }
    }
}

/// Immutable indexed triple store with forward and reverse adjacency.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: SymbolTable,
    relations: SymbolTable,
    inverse: Vec<Option<RelationId>>,
    forward: Vec<Vec<(RelationId, EntityId)>>,
    backward: Vec<Vec<(RelationId, EntityId)>>,
    triples: Vec<Triple>,
    edge_count: usize,
    inverses: bool,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Number of distinct input triples (before inverse augmentation).
    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// Number of stored directed edges, inverse edges included.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses
    }

    pub fn entity(&self, name: &str) -> Result<EntityId> {
        self.entities
            .get(name)
            .map(EntityId)
            .ok_or_else(|| Error::UnknownEntity(name.to_string()))
    }

    pub fn relation(&self, name: &str) -> Result<RelationId> {
        self.relations
            .get(name)
            .map(RelationId)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.names()
    }

    /// The inverse relation id, if the graph knows one.
    pub fn inverse(&self, relation: RelationId) -> Option<RelationId> {
        self.inverse.get(relation.index()).copied().flatten()
    }

    pub fn contains_entity(&self, id: EntityId) -> bool {
        id.index() < self.forward.len()
    }

    /// Outgoing edges of `entity` in insertion order.
    pub fn neighbors(&self, entity: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.forward
            .get(entity.index())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEntity(format!("#{}", entity.0)))
    }

    /// Incoming edges of `entity` as `(relation, source)`.
    pub fn incoming(&self, entity: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.backward
            .get(entity.index())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEntity(format!("#{}", entity.0)))
    }

    /// All stored directed edges, inverse edges included.
    pub fn edges(&self) -> impl Iterator<Item = Triple> + '_ {
        self.forward.iter().enumerate().flat_map(|(h, adj)| {
            adj.iter().map(move |&(relation, tail)| Triple {
                head: EntityId(h as u32),
                relation,
                tail,
            })
        })
    }

    /// The deduplicated input triples, in input order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Writes the input triples in the loader's format.
    pub fn write_triples<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.relation),
                self.entity_name(t.tail)
            )?;
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        lines.push((i + 1, line.to_string()));
    }
    Ok(lines)
}

fn split_fields<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<[&'a str; 3]> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected 3 tab-separated fields, found {}", fields.len()),
        ));
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::parse(path, line_no, "empty field"));
    }
    Ok([fields[0], fields[1], fields[2]])
}

/// Loads a `head TAB relation TAB tail` file.
pub fn load_triples(path: impl AsRef<Path>, add_inverses: bool) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let mut builder = GraphBuilder::new(add_inverses);
    for (line_no, line) in read_lines(path)? {
        let [h, r, t] = split_fields(path, line_no, &line)?;
        builder.add(h, r, t);
    }
    if builder.triples.is_empty() {
        return Err(Error::NoTriples(path.to_path_buf()));
    }
    if builder.duplicates() > 0 {
        log::info!(
            "{}: skipped {} duplicate triples",
            path.display(),
            builder.duplicates()
        );
    }
    Ok(builder.build())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_token(token: &str) -> Option<Label> {
        match token {
            "1" => Some(Label::Positive),
            "0" => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Positive => "1",
            Label::Negative => "0",
        }
    }

    /// Output class index: 1 for positive, 0 for negative.
    pub fn class(self) -> usize {
        match self {
            Label::Positive => 1,
            Label::Negative => 0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub head: EntityId,
    pub tail: EntityId,
    pub label: Label,
}

/// One target relation's query pairs.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub relation: String,
    /// Id of the target relation when it occurs in the graph.
    pub target: Option<RelationId>,
    pub train: Vec<LabeledPair>,
    pub dev: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl TaskDataset {
    pub fn train_positives(&self) -> Vec<(EntityId, EntityId)> {
        self.train
            .iter()
            .filter(|p| p.label.is_positive())
            .map(|p| (p.head, p.tail))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskOptions {
    /// Fraction of the training pool kept for training; the rest is dev.
    pub split_ratio: f64,
    pub seed: u64,
    /// Negatives per positive kept in the training pool; `None` keeps all.
    pub negative_ratio: Option<f64>,
}

impl Default for TaskOptions {
    fn default() -> Self {
        TaskOptions {
            split_ratio: 0.8,
            seed: 0,
            negative_ratio: None,
        }
    }
}

pub const TRAIN_PAIRS: &str = "train.pairs";
pub const TEST_PAIRS: &str = "test.pairs";

/// Seed for one relation task: the global seed offset by the relation id.
pub fn task_seed(global: u64, target: Option<RelationId>) -> u64 {
    global.wrapping_add(target.map_or(0, |r| r.0 as u64))
}

/// Reads a `head TAB tail TAB label` file, resolving entities in `graph`.
pub fn read_pairs(path: impl AsRef<Path>, graph: &KnowledgeGraph) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    read_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            let [h, t, label] = split_fields(path, line_no, &line)?;
            let label = Label::from_token(label).ok_or_else(|| {
                Error::parse(path, line_no, format!("label must be 1 or 0, got `{label}`"))
            })?;
            let resolve = |name: &str| {
                graph
                    .entity(name)
                    .map_err(|_| Error::parse(path, line_no, format!("unknown entity `{name}`")))
            };
            Ok(LabeledPair {
                head: resolve(h)?,
                tail: resolve(t)?,
                label,
            })
        })
        .collect()
}

pub fn write_pairs<W: Write>(
    mut out: W,
    pairs: &[LabeledPair],
    graph: &KnowledgeGraph,
) -> std::io::Result<()> {
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}",
            graph.entity_name(p.head),
            graph.entity_name(p.tail),
            p.label
        )?;
    }
    Ok(())
}

/// Seeded shuffle, then prefix split: `round(ratio * n)` pairs go to train.
pub fn split_train_dev(
    pool: &[LabeledPair],
    ratio: f64,
    seed: u64,
) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, Stream::Split));
    let n_train = ((ratio * pool.len() as f64).round() as usize).min(pool.len());
    let dev = shuffled.split_off(n_train);
    (shuffled, dev)
}

/// Keeps all positives and at most `ceil(ratio * #positives)` negatives,
/// sampled without replacement. Output keeps input order.
pub fn downsample_negatives(pairs: &[LabeledPair], ratio: f64, seed: u64) -> Vec<LabeledPair> {
    let positives = pairs.iter().filter(|p| p.label.is_positive()).count();
    let mut negatives: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.label.is_positive())
        .map(|(i, _)| i)
        .collect();
    let target = (ratio * positives as f64).ceil() as usize;
    if negatives.len() > target {
        negatives.shuffle(&mut rng::stream(seed, Stream::Downsample));
        negatives.truncate(target);
    }
    let keep: HashSet<usize> = negatives.into_iter().collect();
    pairs
        .iter()
        .enumerate()
        .filter(|(i, p)| p.label.is_positive() || keep.contains(i))
        .map(|(_, p)| *p)
        .collect()
}

/// Loads `dir/<relation>/{train,test}.pairs` and applies the train/dev split.
pub fn load_task(
    dir: impl AsRef<Path>,
    relation: &str,
    graph: &KnowledgeGraph,
    opts: &TaskOptions,
) -> Result<TaskDataset> {
    let task_dir = dir.as_ref().join(relation);
    if !task_dir.is_dir() {
        return Err(Error::UnknownRelation(format!(
            "{relation} (no directory {})",
            task_dir.display()
        )));
    }
    let mut pool = read_pairs(task_dir.join(TRAIN_PAIRS), graph)?;
    let test = read_pairs(task_dir.join(TEST_PAIRS), graph)?;
    if let Some(ratio) = opts.negative_ratio {
        pool = downsample_negatives(&pool, ratio, opts.seed);
    }
    let (train, dev) = split_train_dev(&pool, opts.split_ratio, opts.seed);
    Ok(TaskDataset {
        relation: relation.to_string(),
        target: graph.relation(relation).ok(),
        train,
        dev,
        test,
    })
}
