//! Plain-text checkpoints.
//!
//! ```text
//! # mcmh checkpoint v1
//! [metadata]
//! relation=athletePlaysForTeam
//! dim=12
//! ...
//! [network predictor]
//! layer 6 12
//! <6 lines of 12 weights>
//! <1 line of 6 biases>
//! ```
//!
//! Numbers use the shortest decimal form that parses back to the same
//! `f64`, so a reloaded model predicts bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Mode;
use crate::game::{GameModel, Selection};
use crate::neural::{Arch, DenseLayer, DenseParams};

pub const HEADER: &str = "# mcmh checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub relation: String,
    pub mode: Mode,
    pub seed: u64,
    pub epoch: usize,
    pub best_dev_map: Option<f64>,
    /// Vocabulary file, relative to the checkpoint's directory.
    pub vocabulary: String,
    pub model: GameModel,
}

fn write_network(out: &mut String, name: &str, net: &DenseParams) {
    let _ = writeln!(out, "[network {name}]");
    for layer in net.layers() {
        let _ = writeln!(out, "layer {} {}", layer.rows, layer.cols);
        for row in layer.weights.chunks(layer.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let bias: Vec<String> = layer.bias.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", bias.join(" "));
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "[metadata]");
        let selection = match m.selection {
            Selection::All => "all".to_string(),
            Selection::TopD(d) => format!("top-{d}"),
        };
        let best = self.best_dev_map.map_or("none".to_string(), |v| v.to_string());
        for (key, value) in [
            ("relation", self.relation.clone()),
            ("mode", self.mode.name().to_string()),
            ("dim", m.dim().to_string()),
            ("d", m.d.to_string()),
            ("lambda_s", m.lambda_s.to_string()),
            ("arch", m.arch.name().to_string()),
            ("selection", selection),
            ("seed", self.seed.to_string()),
            ("epoch", self.epoch.to_string()),
            ("best_dev_map", best),
            ("vocabulary", self.vocabulary.clone()),
        ] {
            let _ = writeln!(out, "{key}={value}");
        }
        write_network(&mut out, "generator", &m.generator);
        write_network(&mut out, "predictor", &m.predictor);
        write_network(&mut out, "complement", &m.complement);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(format!("missing `{HEADER}` header"))),
        }
        match lines.next() {
            Some((_, "[metadata]")) => {}
            _ => return Err(bad("missing [metadata] section".into())),
        }
        let mut meta = std::collections::HashMap::new();
        while let Some((_, line)) = lines.peek() {
            if line.starts_with('[') {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
            lines.next();
        }
        let get = |key: &str| meta.get(key).ok_or_else(|| bad(format!("metadata lacks `{key}`")));
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{key}`")))
        }

        let mut nets: Vec<(String, DenseParams)> = Vec::new();
        while let Some((n, line)) = lines.next() {
            let name = line
                .strip_prefix("[network ")
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| bad(format!("line {}: expected network section", n + 1)))?;
            let mut layers = Vec::new();
            while let Some((n, line)) = lines.peek() {
                let Some(shape) = line.strip_prefix("layer ") else { break };
                let (rows, cols) = shape
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("line {}: bad layer header", n + 1)))?;
                let (rows, cols): (usize, usize) = (num("rows", rows)?, num("cols", cols)?);
                lines.next();
                let mut read_row = |len: usize| -> Result<Vec<f64>> {
                    let (n, line) = lines.next().ok_or_else(|| bad("truncated layer".into()))?;
                    let values: Vec<f64> = if line.is_empty() {
                        Vec::new()
                    } else {
                        line.split(' ').map(|v| num("weight", v)).collect::<Result<_>>()?
                    };
                    if values.len() != len {
                        return Err(bad(format!("line {}: expected {len} values, found {}", n + 1, values.len())));
                    }
                    Ok(values)
                };
                let mut weights = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    weights.extend(read_row(cols)?);
                }
                let bias = read_row(rows)?;
                layers.push(DenseLayer { rows, cols, weights, bias });
            }
            nets.push((name.to_string(), DenseParams::from_layers(layers)?));
        }
        let mut take = |name: &str| {
            nets.iter()
                .position(|(n, _)| n == name)
                .map(|i| nets.remove(i).1)
                .ok_or_else(|| bad(format!("missing network `{name}`")))
        };
        let generator = take("generator")?;
        let predictor = take("predictor")?;
        let complement = take("complement")?;

        let dim: usize = num("dim", get("dim")?)?;
        let arch = Arch::from_name(get("arch")?).ok_or_else(|| bad("unknown arch".into()))?;
        let d: usize = num("d", get("d")?)?;
        let selection = match get("selection")?.as_str() {
            "all" => Selection::All,
            s => Selection::TopD(num("selection", s.strip_prefix("top-").unwrap_or(s))?),
        };
        for (name, net, out) in [("generator", &generator, 2 * dim), ("predictor", &predictor, 2), ("complement", &complement, 2)] {
            if net.input_dim() != dim || net.output_dim() != out {
                return Err(bad(format!(
                    "{name} network is {}->{}, metadata says dim {dim}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        let best = get("best_dev_map")?;
        Ok(Checkpoint {
            relation: get("relation")?.clone(),
            mode: Mode::from_name(get("mode")?).ok_or_else(|| bad("unknown mode".into()))?,
            seed: num("seed", get("seed")?)?,
            epoch: num("epoch", get("epoch")?)?,
            best_dev_map: if best == "none" { None } else { Some(num("best_dev_map", best)?) },
            vocabulary: get("vocabulary")?.clone(),
            model: GameModel {
                generator,
                predictor,
                complement,
                arch,
                d,
                lambda_s: num("lambda_s", get("lambda_s")?)?,
                selection,
            },
        })
    }
}
