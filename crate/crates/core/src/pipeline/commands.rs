//! The `mcmh` subcommands. Each returns the text it prints on stdout; the
//! machine-readable artifacts go to the output directory.
//!
//! Output layout for relation `r`:
//!
//! ```text
//! <out>/stats.tsv                 statistics line per relation
//! <out>/report.tsv                MAP per relation and run
//! <out>/r/vocab.tsv               chain vocabulary
//! <out>/r/{train,dev,test}.instances
//! <out>/r/<run>.ckpt              best checkpoint of one run
//! <out>/r/<run>.log.tsv           per-epoch training log
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::chains::{chain_statistics, read_instances, write_instances, ChainVocabulary, Instance};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, make_benchmark, run_mode, BenchmarkSpec, EncodedTask, Mode};
use crate::game::select_top_d;
use crate::kg::{load_task, load_triples, task_seed, KnowledgeGraph};
use crate::neural::Arch;
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::RunConfig;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STATS_FILE: &str = "stats.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const STATS_HEADER: &str = "# mcmh-stats v1";
pub const REPORT_HEADER: &str = "# mcmh-report v1";
const SPLITS: [&str; 3] = ["train", "dev", "test"];

fn instances_file(split: &str) -> String {
    format!("{split}.instances")
}

/// File stem of a run's checkpoint and log.
pub fn run_tag(mode: Mode, d: usize) -> String {
    if mode.uses_d() {
        format!("{}-d{d}", mode.name())
    } else {
        mode.name().to_string()
    }
}

/// `game_mlp` combined with `--arch linear` is the linear game.
fn effective_modes(config: &RunConfig) -> Vec<Mode> {
    let mut modes: Vec<Mode> = config
        .modes
        .iter()
        .map(|&m| match (m, config.arch) {
            (Mode::GameMlp, Arch::Linear) => Mode::GameLinear,
            _ => m,
        })
        .collect();
    modes.dedup();
    modes
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_graph(config: &RunConfig) -> Result<KnowledgeGraph> {
    let path = config.graph_path()?;
    let graph = load_triples(path, config.add_inverses)?;
    log::info!(
        "graph {}: {} entities, {} relations, {} edges",
        path.display(),
        graph.entity_count(),
        graph.relation_count(),
        graph.edge_count()
    );
    Ok(graph)
}

fn subdirs(dir: &Path, marker: Option<&str>) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && marker.map_or(true, |m| path.join(m).is_file()) {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Relations named in the config, else every task directory (or every
/// extracted relation when no task directory is configured).
fn relations(config: &RunConfig) -> Result<Vec<String>> {
    if !config.relations.is_empty() {
        return Ok(config.relations.clone());
    }
    let found = match &config.tasks {
        Some(tasks) => subdirs(tasks, None)?,
        None => subdirs(&config.out, Some(VOCAB_FILE))?,
    };
    if found.is_empty() {
        return Err(Error::Config("no relations given and none found".into()));
    }
    Ok(found)
}

/// Runs `f` for every relation in parallel; results keep relation order
/// and the first error in that order wins.
fn per_relation<T: Send>(relations: &[String], f: impl Fn(&str) -> Result<T> + Sync) -> Result<Vec<T>> {
    relations
        .par_iter()
        .map(|r| f(r))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn seed_for(config: &RunConfig, graph: &KnowledgeGraph, relation: &str) -> u64 {
    task_seed(config.seed, graph.relation(relation).ok())
}

struct ExtractStats {
    relation: String,
    chains: usize,
    mean: f64,
    sizes: [usize; 3],
}

impl ExtractStats {
    fn line(&self) -> String {
        format!(
            "{}\t{}\t{:.4}\t{}\t{}\t{}",
            self.relation, self.chains, self.mean, self.sizes[0], self.sizes[1], self.sizes[2]
        )
    }
}

fn stats_header() -> String {
    format!("{STATS_HEADER}\nrelation\tchains\tmean_chains_per_instance\ttrain\tdev\ttest\n")
}

pub fn cmd_extract(config: &RunConfig) -> Result<String> {
    let graph = load_graph(config)?;
    let tasks = config.tasks_path()?;
    if !tasks.is_dir() {
        return Err(Error::Config(format!("task directory {} does not exist", tasks.display())));
    }
    let relations = relations(config)?;
    create_dir(&config.out)?;
    let stats = per_relation(&relations, |relation| {
        let seed = seed_for(config, &graph, relation);
        let dataset = load_task(tasks, relation, &graph, &config.task(seed))?;
        let task = EncodedTask::encode(&graph, &dataset, &config.vocab())?;
        let dir = config.out.join(relation);
        create_dir(&dir)?;
        let mut buf = Vec::new();
        task.vocab.write(&mut buf, &graph).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join(VOCAB_FILE), buf)?;
        for (split, instances) in SPLITS.iter().zip([&task.train, &task.dev, &task.test]) {
            let mut buf = Vec::new();
            write_instances(&mut buf, instances, &graph).map_err(|e| Error::io(&dir, e))?;
            write_file(&dir.join(instances_file(split)), buf)?;
        }
        let all: Vec<Instance> = task.train.iter().chain(&task.dev).chain(&task.test).cloned().collect();
        let s = chain_statistics(&task.vocab, &all)?;
        let stats = ExtractStats {
            relation: relation.to_string(),
            chains: s.total_chains,
            mean: s.mean_chains_per_instance,
            sizes: [task.train.len(), task.dev.len(), task.test.len()],
        };
        write_file(&dir.join(STATS_FILE), format!("{}{}\n", stats_header(), stats.line()))?;
        Ok(stats)
    })?;
    let mut table = stats_header();
    for s in &stats {
        let _ = writeln!(table, "{}", s.line());
    }
    write_file(&config.out.join(STATS_FILE), &table)?;
    Ok(table)
}

/// Extraction artifacts of one relation read back from disk.
fn load_encoded(config: &RunConfig, graph: &KnowledgeGraph, relation: &str) -> Result<EncodedTask> {
    let dir = config.out.join(relation);
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "no extraction output for `{relation}` in {}",
            config.out.display()
        )));
    }
    let vocab = ChainVocabulary::read(dir.join(VOCAB_FILE), graph, graph.relation(relation).ok())?;
    let read = |split: &str| read_instances(dir.join(instances_file(split)), graph, vocab.len());
    Ok(EncodedTask {
        relation: relation.to_string(),
        train: read("train")?,
        dev: read("dev")?,
        test: read("test")?,
        vocab,
    })
}

pub fn checkpoint_path(config: &RunConfig, relation: &str, mode: Mode) -> PathBuf {
    config.out.join(relation).join(format!("{}.ckpt", run_tag(mode, config.d)))
}

pub fn cmd_train(config: &RunConfig) -> Result<String> {
    let graph = load_graph(config)?;
    let relations = relations(config)?;
    let modes = effective_modes(config);
    let rows = per_relation(&relations, |relation| {
        let task = load_encoded(config, &graph, relation)?;
        let seed = seed_for(config, &graph, relation);
        let mut rows = Vec::new();
        for &mode in &modes {
            let tag = run_tag(mode, config.d);
            log::info!("{relation}: training {tag} on {} instances, D = {}", task.train.len(), task.dim());
            let (model, log) = run_mode(&task, mode, config.d, config.lambda_s, &config.train(seed))?;
            let dir = config.out.join(relation);
            let checkpoint = Checkpoint {
                relation: relation.to_string(),
                mode,
                seed,
                epoch: log.best_epoch,
                best_dev_map: log.best_dev_map(),
                vocabulary: VOCAB_FILE.to_string(),
                model,
            };
            checkpoint.save(&checkpoint_path(config, relation, mode))?;
            let mut buf = Vec::new();
            log.write_tsv(&mut buf).map_err(|e| Error::io(&dir, e))?;
            write_file(&dir.join(format!("{tag}.log.tsv")), buf)?;
            let best = log.best_dev_map().map_or("-".to_string(), |m| format!("{m:.4}"));
            rows.push(format!("{relation}\t{tag}\t{}\t{best}", log.best_epoch));
        }
        Ok(rows)
    })?;
    let mut out = String::from("relation\trun\tbest_epoch\tdev_map\n");
    for row in rows.into_iter().flatten() {
        let _ = writeln!(out, "{row}");
    }
    Ok(out)
}

/// Loads a checkpoint and checks it against the relation's vocabulary.
fn load_checked(config: &RunConfig, relation: &str, mode: Mode, dim: usize) -> Result<Checkpoint> {
    let path = checkpoint_path(config, relation, mode);
    let checkpoint = Checkpoint::load(&path)?;
    if checkpoint.model.dim() != dim {
        return Err(Error::Checkpoint(format!(
            "{} was trained on {} chains but the vocabulary has {dim}",
            path.display(),
            checkpoint.model.dim()
        )));
    }
    Ok(checkpoint)
}

pub fn cmd_eval(config: &RunConfig) -> Result<String> {
    let graph = load_graph(config)?;
    let relations = relations(config)?;
    let modes = effective_modes(config);
    let tags: Vec<String> = modes.iter().map(|&m| run_tag(m, config.d)).collect();
    let results = per_relation(&relations, |relation| {
        let task = load_encoded(config, &graph, relation)?;
        modes
            .iter()
            .map(|&mode| {
                let checkpoint = load_checked(config, relation, mode, task.dim())?;
                evaluate_task(&checkpoint.model, &task.test, config.grouping)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let averages: Vec<f64> = (0..modes.len())
        .map(|j| results.iter().map(|r| r[j].map).sum::<f64>() / results.len() as f64)
        .collect();
    let mut tsv = format!("{REPORT_HEADER}\nrelation\t{}\n", tags.join("\t"));
    let mut rows: Vec<(String, Vec<f64>)> = relations
        .iter()
        .zip(&results)
        .map(|(r, reports)| (r.clone(), reports.iter().map(|x| x.map).collect()))
        .collect();
    rows.push(("average".to_string(), averages));
    for (name, maps) in &rows {
        let cells: Vec<String> = maps.iter().map(|m| format!("{m:.6}")).collect();
        let _ = writeln!(tsv, "{name}\t{}", cells.join("\t"));
    }
    write_file(&config.out.join(REPORT_FILE), &tsv)?;

    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("relation".len());
    let col = tags.iter().map(String::len).max().unwrap_or(0).max(8);
    let mut table = format!("{:<width$}", "relation");
    for tag in &tags {
        let _ = write!(table, "  {tag:>col$}");
    }
    table.push('\n');
    for (i, (name, maps)) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            let _ = writeln!(table, "{}", "-".repeat(width + (col + 2) * tags.len()));
        }
        let _ = write!(table, "{name:<width$}");
        for m in maps {
            let _ = write!(table, "  {:>col$}", format!("{m:.4}"));
        }
        table.push('\n');
    }
    let skipped: usize = results.iter().flatten().map(|r| r.skipped()).sum();
    if skipped > 0 {
        let _ = writeln!(table, "({skipped} query groups without positives skipped)");
    }
    Ok(table)
}

/// Top chains per test instance by generator probability, with the
/// predictor's confidence on the inference-time selection.
pub fn cmd_export_rules(config: &RunConfig, top_n: Option<usize>, limit: Option<usize>) -> Result<String> {
    let graph = load_graph(config)?;
    let relations = relations(config)?;
    let mode = effective_modes(config)[0];
    let mut out = String::new();
    for relation in &relations {
        let task = load_encoded(config, &graph, relation)?;
        let checkpoint = load_checked(config, relation, mode, task.dim())?;
        let model = &checkpoint.model;
        let n = top_n.unwrap_or(model.d).min(task.dim());
        let _ = writeln!(out, "# {relation} ({}, top {n})", run_tag(mode, config.d));
        for inst in task.test.iter().take(limit.unwrap_or(usize::MAX)) {
            let confidence = model.predict(inst)?;
            let _ = writeln!(
                out,
                "{} -> {}\tlabel {}\tconfidence {confidence:.4}",
                graph.entity_name(inst.head),
                graph.entity_name(inst.tail),
                inst.label
            );
            if inst.availability.count_ones() == 0 {
                let _ = writeln!(out, "  no chains");
                continue;
            }
            let probs = model.generator_probs(&inst.availability)?;
            let mut top: Vec<usize> = select_top_d(&probs, &inst.availability, n).selected.ones().collect();
            top.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            for (rank, j) in top.into_iter().enumerate() {
                let _ = writeln!(
                    out,
                    "  {}. {:.4}  {}",
                    rank + 1,
                    probs[j],
                    task.vocab.chain(j).display(&graph)
                );
            }
        }
    }
    Ok(out)
}

pub fn cmd_benchmark(spec: &BenchmarkSpec, out: &Path) -> Result<String> {
    let bench = make_benchmark(spec)?;
    create_dir(out)?;
    bench.write_to(out)?;
    let positives = |pairs: &[crate::kg::LabeledPair]| pairs.iter().filter(|p| p.label.is_positive()).count();
    let planted: Vec<String> = bench.planted.iter().map(|c| c.join("->")).collect();
    Ok(format!(
        "rule {}: {} entities, {} edges, {} distractor chains\nplanted {}\n{} training pairs ({} positive), {} test pairs ({} positive)\nwritten to {}\n",
        spec.rule,
        bench.graph.entity_count(),
        bench.graph.edge_count(),
        bench.distractors.len(),
        planted.join(", "),
        bench.pool.len(),
        positives(&bench.pool),
        bench.test.len(),
        positives(&bench.test),
        out.display()
    ))
}
