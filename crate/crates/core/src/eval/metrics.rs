//! Average precision and its mean over query groups.

use std::collections::BTreeMap;

use rand::Rng;

use crate::chains::Instance;
use crate::error::{Error, Result};
use crate::kg::Label;
use crate::rng::{self, Stream};

/// How test instances are grouped into ranking queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// One query per head entity.
    ByHead,
    /// One query over the whole test set.
    Global,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Grouping::ByHead => "by-head",
            Grouping::Global => "global",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "by-head" => Some(Grouping::ByHead),
            "global" => Some(Grouping::Global),
            _ => None,
        }
    }
}

/// Scored items of one ranking query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub key: u32,
    pub items: Vec<(f64, Label)>,
}

impl RankedResult {
    pub fn positives(&self) -> usize {
        self.items.iter().filter(|(_, l)| l.is_positive()).count()
    }
}

/// AP of one ranking. Items are sorted by descending score; equal scores
/// keep their input order.
pub fn average_precision(items: &[(f64, Label)]) -> Result<f64> {
    if let Some((s, _)) = items.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut ranked: Vec<&(f64, Label)> = items.iter().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, (_, label)) in ranked.iter().enumerate() {
        if label.is_positive() {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(total / hits as f64)
}

/// Unweighted mean AP over groups that contain a positive.
pub fn map_score(groups: &[RankedResult]) -> Result<f64> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for g in groups {
        match average_precision(&g.items) {
            Ok(ap) => {
                sum += ap;
                counted += 1;
            }
            Err(Error::NoPositives) => {}
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(Error::MapUndefined);
    }
    Ok(sum / counted as f64)
}

/// Groups scored instances by query key, in ascending key order. Items
/// inside a group keep the instance order.
pub fn group_scores(instances: &[Instance], scores: &[f64], grouping: Grouping) -> Vec<RankedResult> {
    assert_eq!(instances.len(), scores.len());
    let mut groups: BTreeMap<u32, Vec<(f64, Label)>> = BTreeMap::new();
    for (inst, &score) in instances.iter().zip(scores) {
        let key = match grouping {
            Grouping::ByHead => inst.head.0,
            Grouping::Global => 0,
        };
        groups.entry(key).or_default().push((score, inst.label));
    }
    groups
        .into_iter()
        .map(|(key, items)| RankedResult { key, items })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub key: u32,
    pub size: usize,
    pub positives: usize,
    /// `None` for groups without positives, which MAP skips.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub groups: Vec<GroupReport>,
}

impl MapReport {
    pub fn skipped(&self) -> usize {
        self.groups.iter().filter(|g| g.ap.is_none()).count()
    }

    pub fn scored(&self) -> usize {
        self.groups.len() - self.skipped()
    }
}

pub fn map_report(groups: &[RankedResult]) -> Result<MapReport> {
    let map = map_score(groups)?;
    let groups = groups
        .iter()
        .map(|g| {
            let ap = match average_precision(&g.items) {
                Ok(ap) => Some(ap),
                Err(_) => None,
            };
            GroupReport {
                key: g.key,
                size: g.items.len(),
                positives: g.positives(),
                ap,
            }
        })
        .collect();
    Ok(MapReport { map, groups })
}

/// Two-sided paired sign-flip permutation test on the mean difference of
/// two per-group score lists. Returns the p-value with the add-one
/// correction, so it is never 0.
pub fn permutation_test(a: &[f64], b: &[f64], rounds: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    if a.is_empty() || rounds == 0 {
        return 1.0;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let mut r = rng::stream(seed, Stream::Eval);
    let mut extreme = 0usize;
    for _ in 0..rounds {
        let s: f64 = diffs
            .iter()
            .map(|d| if r.gen::<bool>() { *d } else { -*d })
            .sum();
        if s.abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (rounds + 1) as f64
}
