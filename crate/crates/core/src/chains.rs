//! Relation chains: bounded-depth enumeration, per-relation vocabularies and
//! binary availability encoding of query pairs.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexSet;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Label, LabeledPair, RelationId};

/// Separator of the textual chain form, e.g. `teamPlaysIn->leagueStadium`.
pub const CHAIN_SEPARATOR: &str = "->";

/// An ordered sequence of relation labels `r1 -> ... -> rm`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationChain(Vec<RelationId>);

impl RelationChain {
    pub fn new(relations: Vec<RelationId>) -> Self {
        assert!(!relations.is_empty(), "relation chain must be non-empty");
        RelationChain(relations)
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `a->b->c` against the graph's relation table.
    pub fn parse(text: &str, graph: &KnowledgeGraph) -> Result<Self> {
        let relations = text
            .split(CHAIN_SEPARATOR)
            .map(|name| graph.relation(name))
            .collect::<Result<Vec<_>>>()?;
        if relations.is_empty() {
            return Err(Error::UnknownRelation(text.to_string()));
        }
        Ok(RelationChain(relations))
    }

    pub fn display<'a>(&'a self, graph: &'a KnowledgeGraph) -> ChainDisplay<'a> {
        ChainDisplay { chain: self, graph }
    }
}

pub struct ChainDisplay<'a> {
    chain: &'a RelationChain,
    graph: &'a KnowledgeGraph,
}

impl fmt::Display for ChainDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.chain.0.iter().enumerate() {
            if i > 0 {
                f.write_str(CHAIN_SEPARATOR)?;
            }
            f.write_str(self.graph.relation_name(*r))?;
        }
        Ok(())
    }
}

/// Which entity-level walks count as realizing a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CyclePolicy {
    /// Entities may repeat, except stepping `r` then `inv(r)` straight back.
    #[default]
    NoImmediateBacktrack,
    /// No entity repeats (the endpoint may coincide with the start when the
    /// query itself is a loop).
    SimplePaths,
    /// Every walk counts.
    Unrestricted,
}

impl CyclePolicy {
    pub fn name(self) -> &'static str {
        match self {
            CyclePolicy::NoImmediateBacktrack => "no-backtrack",
            CyclePolicy::SimplePaths => "simple",
            CyclePolicy::Unrestricted => "unrestricted",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "no-backtrack" => Some(CyclePolicy::NoImmediateBacktrack),
            "simple" => Some(CyclePolicy::SimplePaths),
            "unrestricted" => Some(CyclePolicy::Unrestricted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub max_hops: usize,
    pub policy: CyclePolicy,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_hops: 3,
            policy: CyclePolicy::default(),
        }
    }
}

/// Hop distance to `tail` for every entity within `limit` reverse hops.
fn distances_to(graph: &KnowledgeGraph, tail: EntityId, limit: usize) -> Result<HashMap<EntityId, usize>> {
    let mut dist = HashMap::from([(tail, 0)]);
    let mut queue = VecDeque::from([tail]);
    while let Some(e) = queue.pop_front() {
        let d = dist[&e];
        if d == limit {
            continue;
        }
        for &(_, src) in graph.incoming(e)? {
            dist.entry(src).or_insert_with(|| {
                queue.push_back(src);
                d + 1
            });
        }
    }
    Ok(dist)
}

struct PathSearch<'g> {
    graph: &'g KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    max_hops: usize,
    policy: CyclePolicy,
    excluded: [Option<RelationId>; 2],
    dist: HashMap<EntityId, usize>,
    prefix: Vec<RelationId>,
    visited: Vec<EntityId>,
    found: IndexSet<RelationChain>,
}

impl PathSearch<'_> {
    fn walk(&mut self, entity: EntityId, prev: Option<(EntityId, RelationId)>) {
        let hop = self.prefix.len() + 1;
        let graph = self.graph;
        for &(rel, next) in graph.neighbors(entity).unwrap_or(&[]) {
            if let (CyclePolicy::NoImmediateBacktrack, Some((prev_entity, prev_rel))) = (self.policy, prev) {
                if next == prev_entity && graph.inverse(prev_rel) == Some(rel) {
                    continue;
                }
            }
            let seen = self.policy == CyclePolicy::SimplePaths && self.visited.contains(&next);

            if next == self.tail && (!seen || next == self.head) {
                let excluded = hop == 1 && self.excluded.contains(&Some(rel));
                if !excluded {
                    let mut chain = self.prefix.clone();
                    chain.push(rel);
                    self.found.insert(RelationChain(chain));
                }
            }

            let remaining = self.max_hops - hop;
            if seen || remaining == 0 {
                continue;
            }
            match self.dist.get(&next) {
                Some(&d) if d <= remaining => {}
                _ => continue,
            }
            self.prefix.push(rel);
            self.visited.push(next);
            self.walk(next, Some((entity, rel)));
            self.visited.pop();
            self.prefix.pop();
        }
    }
}

/// Every distinct relation sequence of length `1..=max_hops` realized by an
/// entity walk from `head` to `tail`, in discovery order.
///
/// A direct `exclude` (or `inv(exclude)`) edge between the query pair is not
/// reported as a chain; longer chains may still use the relation.
pub fn enumerate_paths(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    opts: &SearchOptions,
    exclude: Option<RelationId>,
) -> Result<IndexSet<RelationChain>> {
    graph.neighbors(head)?;
    graph.neighbors(tail)?;
    if opts.max_hops == 0 {
        return Err(Error::Config("max_hops must be at least 1".into()));
    }
    let mut search = PathSearch {
        graph,
        head,
        tail,
        max_hops: opts.max_hops,
        policy: opts.policy,
        excluded: [exclude, exclude.and_then(|r| graph.inverse(r))],
        dist: distances_to(graph, tail, opts.max_hops - 1)?,
        prefix: Vec::with_capacity(opts.max_hops),
        visited: vec![head],
        found: IndexSet::new(),
    };
    search.walk(head, None);
    Ok(search.found)
}

#[derive(Debug, Clone)]
pub struct VocabOptions {
    pub search: SearchOptions,
    /// Upper bound on the vocabulary size; excess chains are cut by support.
    pub max_size: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            search: SearchOptions::default(),
            max_size: 10_000,
        }
    }
}

/// The candidate chain set of one target relation, with stable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainVocabulary {
    target: Option<RelationId>,
    chains: Vec<RelationChain>,
    supports: Vec<usize>,
    index: HashMap<RelationChain, usize>,
}

impl ChainVocabulary {
    pub fn from_parts(
        target: Option<RelationId>,
        chains: Vec<RelationChain>,
        supports: Vec<usize>,
    ) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        assert_eq!(chains.len(), supports.len());
        let mut index = HashMap::with_capacity(chains.len());
        for (i, c) in chains.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate chain at index {i}")));
            }
        }
        Ok(ChainVocabulary {
            target,
            chains,
            supports,
            index,
        })
    }

    pub fn target(&self) -> Option<RelationId> {
        self.target
    }

    /// Vocabulary size D.
    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn chains(&self) -> &[RelationChain] {
        &self.chains
    }

    pub fn chain(&self, index: usize) -> &RelationChain {
        &self.chains[index]
    }

    pub fn supports(&self) -> &[usize] {
        &self.supports
    }

    pub fn index_of(&self, chain: &RelationChain) -> Option<usize> {
        self.index.get(chain).copied()
    }

    /// `index TAB support TAB r1->r2->...`, one chain per line.
    pub fn write<W: Write>(&self, mut out: W, graph: &KnowledgeGraph) -> std::io::Result<()> {
        for (i, (chain, support)) in self.chains.iter().zip(&self.supports).enumerate() {
            writeln!(out, "{i}\t{support}\t{}", chain.display(graph))?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, graph: &KnowledgeGraph, target: Option<RelationId>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut chains = Vec::new();
        let mut supports = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::parse(path, i + 1, msg);
            if fields.len() != 3 {
                return Err(bad("expected index, support and chain"));
            }
            let index: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
            if index != chains.len() {
                return Err(bad("indices must be consecutive from 0"));
            }
            supports.push(fields[1].parse().map_err(|_| bad("bad support"))?);
            chains.push(
                RelationChain::parse(fields[2], graph).map_err(|e| bad(&e.to_string()))?,
            );
        }
        Self::from_parts(target, chains, supports)
    }
}

/// Union of the chains realized by the positive pairs, ranked by support.
///
/// Support of a chain is the number of positive pairs realizing it. Chains
/// are indexed by decreasing support, ties by first occurrence (pair order,
/// then discovery order), and cut to `max_size`.
pub fn build_vocabulary(
    graph: &KnowledgeGraph,
    positives: &[(EntityId, EntityId)],
    target: Option<RelationId>,
    opts: &VocabOptions,
) -> Result<ChainVocabulary> {
    let target_name = || target.map_or("<unknown>".to_string(), |r| graph.relation_name(r).to_string());
    if positives.is_empty() {
        return Err(Error::NoCandidateChains(target_name()));
    }
    let per_pair = positives
        .par_iter()
        .map(|&(h, t)| enumerate_paths(graph, h, t, &opts.search, target))
        .collect::<Result<Vec<_>>>()?;

    let leak = [target, target.and_then(|r| graph.inverse(r))];
    let mut union: IndexSet<RelationChain> = IndexSet::new();
    let mut supports: Vec<usize> = Vec::new();
    for chains in per_pair {
        for chain in chains {
            if chain.len() == 1 && leak.contains(&Some(chain.0[0])) {
                continue;
            }
            let (i, fresh) = union.insert_full(chain);
            if fresh {
                supports.push(0);
            }
            supports[i] += 1;
        }
    }
    if union.is_empty() {
        return Err(Error::NoCandidateChains(target_name()));
    }

    let mut order: Vec<usize> = (0..union.len()).collect();
    order.sort_by(|&a, &b| supports[b].cmp(&supports[a]).then(a.cmp(&b)));
    order.truncate(opts.max_size.max(1));
    if order.len() < union.len() {
        log::info!(
            "{}: kept {} of {} chains (min support {})",
            target_name(),
            order.len(),
            union.len(),
            supports[*order.last().unwrap()]
        );
    }
    let chains = order.iter().map(|&i| union[i].clone()).collect();
    let supports = order.iter().map(|&i| supports[i]).collect();
    ChainVocabulary::from_parts(target, chains, supports)
}

/// Fixed-length bit vector over a chain vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ChainMask(Vec<bool>);

impl ChainMask {
    pub fn zeros(len: usize) -> Self {
        ChainMask(vec![false; len])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        ChainMask(bits)
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::zeros(len);
        for i in indices {
            mask.0[i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn and(&self, other: &ChainMask) -> ChainMask {
        ChainMask(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }

    pub fn and_not(&self, other: &ChainMask) -> ChainMask {
        ChainMask(self.0.iter().zip(&other.0).map(|(a, b)| *a && !*b).collect())
    }

    pub fn or(&self, other: &ChainMask) -> ChainMask {
        ChainMask(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }

    pub fn is_subset_of(&self, other: &ChainMask) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| !*a || *b)
    }

    /// Network input: 1.0 for set bits, 0.0 otherwise.
    pub fn to_input(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn parse(text: &str) -> Option<Self> {
        text.chars()
            .map(|c| match c {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(ChainMask)
    }
}

impl fmt::Display for ChainMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A query pair encoded over a chain vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub head: EntityId,
    pub tail: EntityId,
    pub label: Label,
    /// Bit j is set iff vocabulary chain j connects head to tail.
    pub availability: ChainMask,
}

impl Instance {
    pub fn dim(&self) -> usize {
        self.availability.len()
    }
}

/// A selected chain subset and its complement within an instance's
/// available chains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    pub selected: ChainMask,
    pub complement: ChainMask,
}

impl SelectionMask {
    /// Restricts `selected` to `availability`; the rest of the available
    /// chains form the complement.
    pub fn new(availability: &ChainMask, selected: &ChainMask) -> Self {
        let selected = selected.and(availability);
        let complement = availability.and_not(&selected);
        SelectionMask {
            selected,
            complement,
        }
    }

    pub fn is_valid_for(&self, availability: &ChainMask) -> bool {
        self.selected.len() == availability.len()
            && self.complement.len() == availability.len()
            && self.selected.and(&self.complement).count_ones() == 0
            && self.selected.or(&self.complement) == *availability
    }
}

pub fn encode_instance(
    vocab: &ChainVocabulary,
    graph: &KnowledgeGraph,
    pair: &LabeledPair,
    opts: &SearchOptions,
) -> Result<Instance> {
    let found = enumerate_paths(graph, pair.head, pair.tail, opts, vocab.target())?;
    let availability = ChainMask::from_indices(
        vocab.len(),
        found.iter().filter_map(|c| vocab.index_of(c)),
    );
    Ok(Instance {
        head: pair.head,
        tail: pair.tail,
        label: pair.label,
        availability,
    })
}

/// Encodes pairs in parallel; output order follows input order.
pub fn encode_instances(
    vocab: &ChainVocabulary,
    graph: &KnowledgeGraph,
    pairs: &[LabeledPair],
    opts: &SearchOptions,
) -> Result<Vec<Instance>> {
    pairs
        .par_iter()
        .map(|p| encode_instance(vocab, graph, p, opts))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStats {
    pub total_chains: usize,
    pub mean_chains_per_instance: f64,
}

pub fn chain_statistics(vocab: &ChainVocabulary, instances: &[Instance]) -> Result<ChainStats> {
    if instances.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let total: usize = instances.iter().map(|i| i.availability.count_ones()).sum();
    Ok(ChainStats {
        total_chains: vocab.len(),
        mean_chains_per_instance: total as f64 / instances.len() as f64,
    })
}

/// `head TAB tail TAB label TAB availability-bits`.
pub fn write_instances<W: Write>(
    mut out: W,
    instances: &[Instance],
    graph: &KnowledgeGraph,
) -> std::io::Result<()> {
    for inst in instances {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            graph.entity_name(inst.head),
            graph.entity_name(inst.tail),
            inst.label,
            inst.availability
        )?;
    }
    Ok(())
}

pub fn read_instances(path: impl AsRef<Path>, graph: &KnowledgeGraph, dim: usize) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::parse(path, i + 1, msg);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected head, tail, label and availability".into()));
        }
        let label = Label::from_token(fields[2]).ok_or_else(|| bad(format!("bad label `{}`", fields[2])))?;
        let availability = ChainMask::parse(fields[3]).ok_or_else(|| bad("bad availability bits".into()))?;
        if availability.len() != dim {
            return Err(bad(format!(
                "availability has {} bits, vocabulary has {dim}",
                availability.len()
            )));
        }
        out.push(Instance {
            head: graph.entity(fields[0]).map_err(|e| bad(e.to_string()))?,
            tail: graph.entity(fields[1]).map_err(|e| bad(e.to_string()))?,
            label,
            availability,
        });
    }
    Ok(out)
}
