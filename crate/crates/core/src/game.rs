//! The three-player selection game.
//!
//! A generator scores every available chain of an instance and a subset is
//! drawn from those scores. The predictor sees the selected subset, the
//! complement predictor sees the remaining available chains; both minimise
//! cross-entropy. The generator is trained with REINFORCE on the bounded
//! reward `acc_p - acc_c - lambda_s * sparsity`, so it cooperates with the
//! predictor, competes with the complement predictor and is pushed towards
//! `d` selected chains. At inference the `d` most probable chains are kept.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::chains::{ChainMask, Instance, SelectionMask};
use crate::error::{Error, Result};
use crate::eval::metrics::{group_scores, map_score, Grouping};
use crate::neural::{argmax, cross_entropy, softmax, Adam, AdamConfig, Arch, DenseParams, ForwardCache};
use crate::rng::{self, Stream};

/// How chains are chosen for the predictor at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    TopD(usize),
    /// Every available chain; the generator is not consulted.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConfig {
    pub d: usize,
    pub lambda_s: f64,
    /// Architecture of the predictor and complement predictor. The
    /// generator is always an MLP.
    pub arch: Arch,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            d: 5,
            lambda_s: 1.0,
            arch: Arch::Mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    pub generator: DenseParams,
    pub predictor: DenseParams,
    pub complement: DenseParams,
    pub arch: Arch,
    pub d: usize,
    pub lambda_s: f64,
    pub selection: Selection,
}

impl GameModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, config: &GameConfig, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if config.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !(config.lambda_s >= 0.0) {
            return Err(Error::Config("lambda_s must be non-negative".into()));
        }
        let generator = DenseParams::build(Arch::Mlp, dim, 2 * dim, rng);
        let predictor = DenseParams::build(config.arch, dim, 2, rng);
        let complement = DenseParams::build(config.arch, dim, 2, rng);
        Ok(GameModel {
            generator,
            predictor,
            complement,
            arch: config.arch,
            d: config.d,
            lambda_s: config.lambda_s,
            selection: Selection::TopD(config.d),
        })
    }

    /// Vocabulary size the model was built for.
    pub fn dim(&self) -> usize {
        self.predictor.input_dim()
    }

    fn check_dim(&self, availability: &ChainMask) -> Result<()> {
        if availability.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: availability.len(),
            });
        }
        Ok(())
    }

    fn generator_forward(&self, availability: &ChainMask) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_dim(availability)?;
        let (logits, cache) = self.generator.forward(&availability.to_input())?;
        Ok((selection_probs(&logits, availability), cache))
    }

    /// Per-chain selection probabilities; unavailable chains get 0.
    pub fn generator_probs(&self, availability: &ChainMask) -> Result<Vec<f64>> {
        self.check_dim(availability)?;
        let logits = self.generator.logits(&availability.to_input())?;
        Ok(selection_probs(&logits, availability))
    }

    /// The inference-time selection for an instance.
    pub fn select(&self, instance: &Instance) -> Result<SelectionMask> {
        match self.selection {
            Selection::All => {
                self.check_dim(&instance.availability)?;
                Ok(SelectionMask::new(&instance.availability, &instance.availability))
            }
            Selection::TopD(d) => {
                let probs = self.generator_probs(&instance.availability)?;
                Ok(select_top_d(&probs, &instance.availability, d))
            }
        }
    }

    /// Positive-class probability of the predictor on a selected subset.
    pub fn confidence(&self, selected: &ChainMask) -> Result<f64> {
        let logits = self.predictor.logits(&selected.to_input())?;
        Ok(softmax(&logits)[1])
    }

    pub fn predict(&self, instance: &Instance) -> Result<f64> {
        self.confidence(&self.select(instance)?.selected)
    }

    pub fn predict_all(&self, instances: &[Instance]) -> Result<Vec<f64>> {
        instances.iter().map(|i| self.predict(i)).collect()
    }
}

/// Two logits per chain, `(select, leave)`; probability of "select".
fn selection_probs(logits: &[f64], availability: &ChainMask) -> Vec<f64> {
    logits
        .chunks_exact(2)
        .zip(availability.bits())
        .map(|(pair, &avail)| {
            if avail {
                1.0 / (1.0 + (pair[1] - pair[0]).exp())
            } else {
                0.0
            }
        })
        .collect()
}

/// Independent Bernoulli draw per available chain.
pub fn sample_mask<R: Rng + ?Sized>(probs: &[f64], availability: &ChainMask, rng: &mut R) -> SelectionMask {
    let mut selected = ChainMask::zeros(availability.len());
    for j in availability.ones() {
        if rng.gen::<f64>() < probs[j] {
            selected.set(j, true);
        }
    }
    SelectionMask::new(availability, &selected)
}

/// The `d` available chains with the highest probability; ties go to the
/// lower index.
pub fn select_top_d(probs: &[f64], availability: &ChainMask, d: usize) -> SelectionMask {
    let mut order: Vec<usize> = availability.ones().collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(d);
    SelectionMask::new(availability, &ChainMask::from_indices(availability.len(), order))
}

/// `max((|S| - d) / |R|, 0)`; zero when nothing is available.
pub fn sparsity_loss(mask: &SelectionMask, d: usize) -> f64 {
    let selected = mask.selected.count_ones();
    let available = selected + mask.complement.count_ones();
    if available == 0 || selected <= d {
        return 0.0;
    }
    (selected - d) as f64 / available as f64
}

pub fn reward(acc_p: u8, acc_c: u8, sparsity: f64, lambda_s: f64) -> f64 {
    acc_p as f64 - acc_c as f64 - lambda_s * sparsity
}

/// `log pi(mask)`: sum over available chains of `log p` if selected, else
/// `log (1 - p)`.
pub fn log_prob(probs: &[f64], mask: &SelectionMask) -> f64 {
    let mut total = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        if mask.selected.get(j) {
            total += p.ln();
        } else if mask.complement.get(j) {
            total += (1.0 - p).ln();
        }
    }
    total
}

/// Gradient of `log pi(mask)` with respect to the generator logits.
fn log_prob_logit_grad(probs: &[f64], mask: &SelectionMask) -> Vec<f64> {
    let mut grad = vec![0.0; 2 * probs.len()];
    for (j, &p) in probs.iter().enumerate() {
        let s = if mask.selected.get(j) {
            1.0
        } else if mask.complement.get(j) {
            0.0
        } else {
            continue;
        };
        grad[2 * j] = s - p;
        grad[2 * j + 1] = p - s;
    }
    grad
}

/// Gradient of `-weight * log pi(mask)` with respect to every generator
/// parameter: one REINFORCE term with `weight` as the advantage.
pub fn policy_gradient(model: &GameModel, availability: &ChainMask, mask: &SelectionMask, weight: f64) -> Result<DenseParams> {
    let (probs, cache) = model.generator_forward(availability)?;
    let dlogits: Vec<f64> = log_prob_logit_grad(&probs, mask)
        .into_iter()
        .map(|g| -weight * g)
        .collect();
    model.generator.backward(&cache, &dlogits)
}

pub struct Optimizers {
    pub generator: Adam,
    pub predictor: Adam,
    pub complement: Adam,
}

impl Optimizers {
    pub fn new(model: &GameModel, config: AdamConfig) -> Self {
        Optimizers {
            generator: Adam::new(&model.generator, config),
            predictor: Adam::new(&model.predictor, config),
            complement: Adam::new(&model.complement, config),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorStepStats {
    pub loss_p: f64,
    pub loss_c: f64,
    pub acc_p: Vec<u8>,
    pub acc_c: Vec<u8>,
}

/// Mean cross-entropy, accuracy bits and one Adam step for one network.
fn supervised_step<'a>(
    net: &mut DenseParams,
    adam: &mut Adam,
    inputs: impl Iterator<Item = (&'a ChainMask, usize)>,
) -> Result<(f64, Vec<u8>)> {
    let mut grads = net.zeros_like();
    let mut total = 0.0;
    let mut acc = Vec::new();
    for (input, class) in inputs {
        let (logits, cache) = net.forward(&input.to_input())?;
        let (loss, dlogits) = cross_entropy(&logits, class);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy {loss}")));
        }
        total += loss;
        acc.push((argmax(&logits) == class) as u8);
        grads.add_scaled(&net.backward(&cache, &dlogits)?, 1.0);
    }
    let n = acc.len().max(1) as f64;
    grads.scale(1.0 / n);
    adam.step(net, &grads)?;
    Ok((total / n, acc))
}

/// Predictor on `v_S`, complement predictor on `v_Sc`, one Adam step each.
/// Losses and accuracies are those of the pre-update networks.
pub fn predictor_step(
    model: &mut GameModel,
    batch: &[(&Instance, SelectionMask)],
    opt: &mut Optimizers,
) -> Result<PredictorStepStats> {
    for (inst, mask) in batch {
        model.check_dim(&inst.availability)?;
        if !mask.is_valid_for(&inst.availability) {
            return Err(Error::Config("selection mask inconsistent with instance".into()));
        }
    }
    let (loss_p, acc_p) = supervised_step(
        &mut model.predictor,
        &mut opt.predictor,
        batch.iter().map(|(i, m)| (&m.selected, i.label.class())),
    )?;
    let (loss_c, acc_c) = supervised_step(
        &mut model.complement,
        &mut opt.complement,
        batch.iter().map(|(i, m)| (&m.complement, i.label.class())),
    )?;
    Ok(PredictorStepStats {
        loss_p,
        loss_c,
        acc_p,
        acc_c,
    })
}

/// Exponential moving average of the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub momentum: f64,
}

impl Baseline {
    pub fn new(momentum: f64) -> Self {
        Baseline {
            value: 0.0,
            momentum,
        }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_reward;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorStepStats {
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
}

/// REINFORCE update of the generator from per-instance accuracies of the
/// (pre-update) predictors on the sampled masks.
pub fn generator_step(
    model: &mut GameModel,
    batch: &[(&Instance, SelectionMask)],
    acc_p: &[u8],
    acc_c: &[u8],
    baseline: &mut Baseline,
    adam: &mut Adam,
) -> Result<GeneratorStepStats> {
    assert_eq!(batch.len(), acc_p.len());
    assert_eq!(batch.len(), acc_c.len());
    let rewards: Vec<f64> = batch
        .iter()
        .zip(acc_p.iter().zip(acc_c))
        .map(|((_, mask), (&p, &c))| reward(p, c, sparsity_loss(mask, model.d), model.lambda_s))
        .collect();
    let n = batch.len().max(1) as f64;
    let mut grads = model.generator.zeros_like();
    for ((inst, mask), r) in batch.iter().zip(&rewards) {
        let advantage = r - baseline.value;
        if advantage != 0.0 {
            grads.add_scaled(&policy_gradient(model, &inst.availability, mask, advantage)?, 1.0 / n);
        }
    }
    adam.step(&mut model.generator, &grads)?;
    let mean_reward = rewards.iter().sum::<f64>() / n;
    baseline.update(mean_reward);
    Ok(GeneratorStepStats {
        rewards,
        mean_reward,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub baseline_momentum: f64,
    pub mc_samples_per_instance: usize,
    pub grouping: Grouping,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 20,
            lr: 0.001,
            seed: 0,
            baseline_momentum: 0.9,
            mc_samples_per_instance: 1,
            grouping: Grouping::ByHead,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(Error::Config("baseline momentum must lie in [0, 1)".into()));
        }
        if self.mc_samples_per_instance == 0 {
            return Err(Error::Config("need at least one sample per instance".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_p: f64,
    pub loss_c: f64,
    pub mean_reward: f64,
    pub mean_selected: f64,
    pub dev_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    /// Dev MAP of the model before any update.
    pub initial_dev_map: Option<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch of the returned model; 0 is the initial model.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best_dev_map(&self) -> Option<f64> {
        if self.best_epoch == 0 {
            self.initial_dev_map
        } else {
            self.epochs[self.best_epoch - 1].dev_map
        }
    }

    pub fn final_dev_map(&self) -> Option<f64> {
        self.epochs.last().map_or(self.initial_dev_map, |e| e.dev_map)
    }

    /// One tab-separated line per epoch.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let map = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "epoch\tloss_p\tloss_c\tmean_reward\tmean_selected\tdev_map")?;
        writeln!(out, "0\t-\t-\t-\t-\t{}", map(self.initial_dev_map))?;
        for e in &self.epochs {
            writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                e.epoch,
                e.loss_p,
                e.loss_c,
                e.mean_reward,
                e.mean_selected,
                map(e.dev_map)
            )?;
        }
        Ok(())
    }
}

/// Dev MAP of `model`, or `None` when the dev set has no group with a
/// positive instance.
pub fn dev_map(model: &GameModel, dev: &[Instance], grouping: Grouping) -> Result<Option<f64>> {
    if dev.is_empty() {
        return Ok(None);
    }
    let scores = model.predict_all(dev)?;
    match map_score(&group_scores(dev, &scores, grouping)) {
        Ok(map) => Ok(Some(map)),
        Err(Error::MapUndefined) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_training_set(dim: usize, train: &[Instance]) -> Result<()> {
    if dim == 0 {
        return Err(Error::EmptyVocabulary);
    }
    for inst in train {
        if inst.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: inst.dim(),
            });
        }
    }
    let positives = train.iter().filter(|i| i.label.is_positive()).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::DegenerateTrainingSet);
    }
    Ok(())
}

/// Tracks the best model seen by dev MAP; ties keep the earlier epoch.
struct BestModel {
    model: GameModel,
    epoch: usize,
    map: Option<f64>,
}

impl BestModel {
    fn offer(&mut self, model: &GameModel, epoch: usize, map: Option<f64>) {
        let better = match (map, self.map) {
            (Some(m), Some(best)) => m > best,
            (Some(_), None) => true,
            // no dev signal: keep the most recent model
            (None, None) => true,
            (None, Some(_)) => false,
        };
        if better || self.epoch == 0 {
            self.model = model.clone();
            self.epoch = epoch;
            self.map = map;
        }
    }
}

/// Full three-player training. Returns the model with the best dev MAP.
pub fn train_task(
    train: &[Instance],
    dev: &[Instance],
    dim: usize,
    game: &GameConfig,
    config: &TrainConfig,
) -> Result<(GameModel, TrainingLog)> {
    config.validate()?;
    check_training_set(dim, train)?;
    let mut model = GameModel::new(dim, game, &mut rng::stream(config.seed, Stream::Init))?;
    let mut opt = Optimizers::new(&model, config.adam());
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut sample_rng = rng::stream(config.seed, Stream::Sampling);
    let mut baseline = Baseline::new(config.baseline_momentum);

    let mut log = TrainingLog {
        initial_dev_map: dev_map(&model, dev, config.grouping)?,
        ..TrainingLog::default()
    };
    let mut best = BestModel {
        model: model.clone(),
        epoch: 0,
        map: log.initial_dev_map,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_p, mut sum_c, mut sum_r, mut sum_sel, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * config.mc_samples_per_instance);
            for &i in chunk {
                let inst = &train[i];
                let probs = model.generator_probs(&inst.availability)?;
                for _ in 0..config.mc_samples_per_instance {
                    batch.push((inst, sample_mask(&probs, &inst.availability, &mut sample_rng)));
                }
            }
            let stats = predictor_step(&mut model, &batch, &mut opt)?;
            let gen = generator_step(&mut model, &batch, &stats.acc_p, &stats.acc_c, &mut baseline, &mut opt.generator)?;
            let n = batch.len();
            sum_p += stats.loss_p * n as f64;
            sum_c += stats.loss_c * n as f64;
            sum_r += gen.mean_reward * n as f64;
            sum_sel += batch.iter().map(|(_, m)| m.selected.count_ones() as f64).sum::<f64>();
            count += n;
        }
        let count = count.max(1) as f64;
        let dev = dev_map(&model, dev, config.grouping)?;
        log.epochs.push(EpochLog {
            epoch,
            loss_p: sum_p / count,
            loss_c: sum_c / count,
            mean_reward: sum_r / count,
            mean_selected: sum_sel / count,
            dev_map: dev,
        });
        best.offer(&model, epoch, dev);
    }
    log.best_epoch = best.epoch;
    Ok((best.model, log))
}

/// Trains a fresh predictor on the chains `template` selects for each
/// instance; the generator and selection rule of `template` stay frozen.
pub fn train_predictor_only(
    template: &GameModel,
    train: &[Instance],
    dev: &[Instance],
    config: &TrainConfig,
) -> Result<(GameModel, TrainingLog)> {
    config.validate()?;
    check_training_set(template.dim(), train)?;
    let mut model = template.clone();
    model.predictor = DenseParams::build(
        model.arch,
        model.dim(),
        2,
        &mut rng::stream(config.seed, Stream::ReInit),
    );
    let mut adam = Adam::new(&model.predictor, config.adam());
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let inputs: Vec<ChainMask> = train
        .iter()
        .map(|i| model.select(i).map(|m| m.selected))
        .collect::<Result<_>>()?;
    let mean_selected = inputs.iter().map(|m| m.count_ones() as f64).sum::<f64>() / inputs.len() as f64;

    let mut log = TrainingLog {
        initial_dev_map: dev_map(&model, dev, config.grouping)?,
        ..TrainingLog::default()
    };
    let mut best = BestModel {
        model: model.clone(),
        epoch: 0,
        map: log.initial_dev_map,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, _) = supervised_step(
                &mut model.predictor,
                &mut adam,
                chunk.iter().map(|&i| (&inputs[i], train[i].label.class())),
            )?;
            sum += loss * chunk.len() as f64;
        }
        let dev = dev_map(&model, dev, config.grouping)?;
        log.epochs.push(EpochLog {
            epoch,
            loss_p: sum / train.len() as f64,
            loss_c: 0.0,
            mean_reward: 0.0,
            mean_selected,
            dev_map: dev,
        });
        best.offer(&model, epoch, dev);
    }
    log.best_epoch = best.epoch;
    Ok((best.model, log))
}
