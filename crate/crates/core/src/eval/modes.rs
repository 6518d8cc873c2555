//! Training variants compared in the ablations, and test-set evaluation.

use std::fmt;

use crate::chains::{build_vocabulary, encode_instances, ChainVocabulary, Instance, VocabOptions};
use crate::error::{Error, Result};
use crate::eval::metrics::{group_scores, map_report, Grouping, MapReport};
use crate::game::{train_predictor_only, train_task, GameConfig, GameModel, Selection, TrainConfig, TrainingLog};
use crate::kg::{KnowledgeGraph, TaskDataset};
use crate::neural::Arch;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Three-player game with MLP predictors.
    GameMlp,
    /// Same game with single-layer predictors; the generator stays an MLP.
    GameLinear,
    /// Predictor alone on every available chain.
    DAll,
    /// Generator of a `d = 1` game, frozen; a fresh predictor is trained on
    /// its top-`d` selections.
    SingleChainGen,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::GameMlp, Mode::GameLinear, Mode::DAll, Mode::SingleChainGen];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GameMlp => "game_mlp",
            Mode::GameLinear => "game_linear",
            Mode::DAll => "d_all",
            Mode::SingleChainGen => "single_chain_gen",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn uses_d(self) -> bool {
        self != Mode::DAll
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A task with its vocabulary and every split encoded as instances.
#[derive(Debug, Clone)]
pub struct EncodedTask {
    pub relation: String,
    pub vocab: ChainVocabulary,
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl EncodedTask {
    /// Builds the vocabulary from the training positives and encodes all
    /// three splits against it.
    pub fn encode(graph: &KnowledgeGraph, dataset: &TaskDataset, opts: &VocabOptions) -> Result<Self> {
        let vocab = build_vocabulary(graph, &dataset.train_positives(), dataset.target, opts)
            .map_err(|e| match e {
                Error::NoCandidateChains(_) => Error::NoCandidateChains(dataset.relation.clone()),
                other => other,
            })?;
        let encode = |pairs| encode_instances(&vocab, graph, pairs, &opts.search);
        Ok(EncodedTask {
            relation: dataset.relation.clone(),
            train: encode(&dataset.train)?,
            dev: encode(&dataset.dev)?,
            test: encode(&dataset.test)?,
            vocab,
        })
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }
}

/// Trains one variant. `d` is ignored by [`Mode::DAll`].
pub fn run_mode(
    task: &EncodedTask,
    mode: Mode,
    d: usize,
    lambda_s: f64,
    config: &TrainConfig,
) -> Result<(GameModel, TrainingLog)> {
    let game = |d, arch| GameConfig { d, lambda_s, arch };
    match mode {
        Mode::GameMlp => train_task(&task.train, &task.dev, task.dim(), &game(d, Arch::Mlp), config),
        Mode::GameLinear => train_task(&task.train, &task.dev, task.dim(), &game(d, Arch::Linear), config),
        Mode::DAll => {
            let mut template = GameModel::new(
                task.dim(),
                &game(d.max(1), Arch::Mlp),
                &mut rng::stream(config.seed, Stream::Init),
            )?;
            template.selection = Selection::All;
            train_predictor_only(&template, &task.train, &task.dev, config)
        }
        Mode::SingleChainGen => {
            let (mut template, _) = train_task(&task.train, &task.dev, task.dim(), &game(1, Arch::Mlp), config)?;
            if d == 0 {
                return Err(Error::Config("d must be at least 1".into()));
            }
            template.d = d;
            template.selection = Selection::TopD(d);
            train_predictor_only(&template, &task.train, &task.dev, config)
        }
    }
}

/// Scores every test instance and reports MAP.
pub fn evaluate_task(model: &GameModel, test: &[Instance], grouping: Grouping) -> Result<MapReport> {
    if test.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let scores = model.predict_all(test)?;
    map_report(&group_scores(test, &scores, grouping))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::ChainMask;
    use crate::kg::{EntityId, Label};

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(Mode::from_name(m.name()), Some(m));
        }
        assert_eq!(Mode::from_name("bogus"), None);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let model = GameModel::new(3, &GameConfig::default(), &mut rng::stream(0, Stream::Init)).unwrap();
        assert!(matches!(evaluate_task(&model, &[], Grouping::ByHead), Err(Error::EmptyInstances)));
        let negatives = [Instance {
            head: EntityId(0),
            tail: EntityId(1),
            label: Label::Negative,
            availability: ChainMask::zeros(3),
        }];
        assert!(matches!(
            evaluate_task(&model, &negatives, Grouping::ByHead),
            Err(Error::MapUndefined)
        ));
    }
}
