//! Run configuration: built-in defaults, then an optional `key=value`
//! file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use crate::chains::{CyclePolicy, SearchOptions, VocabOptions};
use crate::error::{Error, Result};
use crate::eval::{Grouping, Mode};
use crate::game::TrainConfig;
use crate::kg::TaskOptions;
use crate::neural::Arch;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub relations: Vec<String>,
    pub out: PathBuf,
    pub max_hops: usize,
    pub cycle_policy: CyclePolicy,
    pub max_vocab: usize,
    pub add_inverses: bool,
    pub d: usize,
    pub arch: Arch,
    pub modes: Vec<Mode>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_s: f64,
    pub baseline_momentum: f64,
    pub mc_samples: usize,
    pub split_ratio: f64,
    pub negative_ratio: Option<f64>,
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            tasks: None,
            relations: Vec::new(),
            out: PathBuf::from("out"),
            max_hops: 3,
            cycle_policy: CyclePolicy::NoImmediateBacktrack,
            max_vocab: 10_000,
            add_inverses: true,
            d: 5,
            arch: Arch::Mlp,
            modes: vec![Mode::GameMlp],
            epochs: 50,
            lr: 0.001,
            batch_size: 20,
            lambda_s: 1.0,
            baseline_momentum: 0.9,
            mc_samples: 1,
            split_ratio: 0.8,
            negative_ratio: None,
            grouping: Grouping::ByHead,
            seed: 0,
        }
    }
}

/// Flags shared by every subcommand that reads a run configuration. Each
/// flag overrides the key of the same name in `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// File of `key=value` lines supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Triple file, `head TAB relation TAB tail` per line.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Directory holding `<relation>/train.pairs` and `<relation>/test.pairs`.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Target relations, comma separated. Defaults to every task directory.
    #[arg(long, value_delimiter = ',')]
    pub relations: Option<Vec<String>>,
    /// Output directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// no-backtrack | simple | unrestricted
    #[arg(long)]
    pub cycle_policy: Option<String>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub add_inverses: Option<bool>,
    /// Number of chains selected per instance.
    #[arg(long)]
    pub d: Option<usize>,
    /// mlp | linear; used when no mode fixes it.
    #[arg(long)]
    pub arch: Option<String>,
    /// game_mlp | game_linear | d_all | single_chain_gen, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mode: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub baseline_momentum: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Negatives kept per training positive; unset keeps all.
    #[arg(long)]
    pub negative_ratio: Option<f64>,
    /// by-head | global
    #[arg(long)]
    pub grouping: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_modes(names: &[String]) -> Result<Vec<Mode>> {
    if names.is_empty() {
        return Err(Error::Config("no mode given".into()));
    }
    names
        .iter()
        .map(|n| Mode::from_name(n).ok_or_else(|| Error::Config(format!("unknown mode `{n}`"))))
        .collect()
}

impl RunConfig {
    /// Applies one `key=value` setting. Keys use the flag spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "graph" => self.graph = Some(PathBuf::from(value)),
            "tasks" => self.tasks = Some(PathBuf::from(value)),
            "relations" => self.relations = parse_list(value),
            "out" => self.out = PathBuf::from(value),
            "max-hops" => self.max_hops = parse_value(key, value)?,
            "cycle-policy" => {
                self.cycle_policy = CyclePolicy::from_name(value)
                    .ok_or_else(|| Error::Config(format!("unknown cycle policy `{value}`")))?
            }
            "max-vocab" => self.max_vocab = parse_value(key, value)?,
            "add-inverses" => self.add_inverses = parse_value(key, value)?,
            "d" => self.d = parse_value(key, value)?,
            "arch" => {
                self.arch = Arch::from_name(value).ok_or_else(|| Error::Config(format!("unknown arch `{value}`")))?
            }
            "mode" => self.modes = parse_modes(&parse_list(value))?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch-size" => self.batch_size = parse_value(key, value)?,
            "lambda-s" => self.lambda_s = parse_value(key, value)?,
            "baseline-momentum" => self.baseline_momentum = parse_value(key, value)?,
            "mc-samples" => self.mc_samples = parse_value(key, value)?,
            "split-ratio" => self.split_ratio = parse_value(key, value)?,
            "negative-ratio" => self.negative_ratio = Some(parse_value(key, value)?),
            "grouping" => {
                self.grouping = Grouping::from_name(value)
                    .ok_or_else(|| Error::Config(format!("unknown grouping `{value}`")))?
            }
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::parse(path, i + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_args(args: &ConfigArgs) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = &args.config {
            config.apply_file(path)?;
        }
        let mut flags: BTreeMap<&str, String> = BTreeMap::new();
        let mut put = |key, value: Option<String>| {
            if let Some(v) = value {
                flags.insert(key, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let list = |l: &Option<Vec<String>>| l.as_ref().map(|l| l.join(","));
        put("graph", path(&args.graph));
        put("tasks", path(&args.tasks));
        put("relations", list(&args.relations));
        put("out", path(&args.out));
        put("max-hops", args.max_hops.map(|v| v.to_string()));
        put("cycle-policy", args.cycle_policy.clone());
        put("max-vocab", args.max_vocab.map(|v| v.to_string()));
        put("add-inverses", args.add_inverses.map(|v| v.to_string()));
        put("d", args.d.map(|v| v.to_string()));
        put("arch", args.arch.clone());
        put("mode", list(&args.mode));
        put("epochs", args.epochs.map(|v| v.to_string()));
        put("lr", args.lr.map(|v| v.to_string()));
        put("batch-size", args.batch_size.map(|v| v.to_string()));
        put("lambda-s", args.lambda_s.map(|v| v.to_string()));
        put("baseline-momentum", args.baseline_momentum.map(|v| v.to_string()));
        put("mc-samples", args.mc_samples.map(|v| v.to_string()));
        put("split-ratio", args.split_ratio.map(|v| v.to_string()));
        put("negative-ratio", args.negative_ratio.map(|v| v.to_string()));
        put("grouping", args.grouping.clone());
        put("seed", args.seed.map(|v| v.to_string()));
        for (key, value) in flags {
            config.set(key, &value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.max_hops == 0 {
            return bad("max-hops must be at least 1");
        }
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return bad("split-ratio must lie in (0, 1]");
        }
        if self.negative_ratio.is_some_and(|r| !(r >= 0.0)) {
            return bad("negative-ratio must be non-negative");
        }
        if !(self.lambda_s >= 0.0) {
            return bad("lambda-s must be non-negative");
        }
        if self.max_vocab == 0 {
            return bad("max-vocab must be at least 1");
        }
        Ok(())
    }

    pub fn search(&self) -> SearchOptions {
        SearchOptions {
            max_hops: self.max_hops,
            policy: self.cycle_policy,
        }
    }

    pub fn vocab(&self) -> VocabOptions {
        VocabOptions {
            search: self.search(),
            max_size: self.max_vocab,
        }
    }

    pub fn task(&self, seed: u64) -> TaskOptions {
        TaskOptions {
            split_ratio: self.split_ratio,
            seed,
            negative_ratio: self.negative_ratio,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            baseline_momentum: self.baseline_momentum,
            mc_samples_per_instance: self.mc_samples,
            grouping: self.grouping,
        }
    }

    pub fn graph_path(&self) -> Result<&Path> {
        self.graph
            .as_deref()
            .ok_or_else(|| Error::Config("no graph given (--graph)".into()))
    }

    pub fn tasks_path(&self) -> Result<&Path> {
        self.tasks
            .as_deref()
            .ok_or_else(|| Error::Config("no task directory given (--tasks)".into()))
    }
}
