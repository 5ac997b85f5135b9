//! Mini-batch training with Adam, weighted cross-entropy and early stopping
//! on validation loss.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dihedral, DatasetKind, PatchClass, PatchTriplet};
use crate::error::{Error, Result};
use crate::model::{target_tensor, ModelConfig, ModelGraph, ModelInput, Preprocess};
use crate::nn::{weighted_bce, Adam, AdamConfig, ClassWeights, Mode, Tensor};

pub const MAX_BATCH: usize = 32;

/// Minimum drop in validation loss that counts as an improvement.
pub const MIN_DELTA: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub class_weights: ClassWeights,
    pub dataset_kind: DatasetKind,
    pub seed: u64,
    /// Each epoch every sample is transformed by one element drawn from this
    /// set. Empty disables augmentation.
    pub augmentation: Vec<Dihedral>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 100,
            patience: 5,
            class_weights: ClassWeights::BALANCED,
            dataset_kind: DatasetKind::All,
            seed: 0,
            augmentation: Dihedral::ALL.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > MAX_BATCH {
            return Err(Error::invalid(format!("batch size {} outside 1..={MAX_BATCH}", self.batch_size)));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("patience and max_epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        let w = self.class_weights;
        if !(w.water >= 0.0 && w.ice >= 0.0 && w.water + w.ice > 0.0) {
            return Err(Error::invalid("class weights must be non-negative and not both zero"));
        }
        Ok(())
    }
}

/// A training example already converted to network tensors.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: ModelInput,
    pub target: Tensor<f32>,
    pub class: PatchClass,
    pub provenance: String,
}

impl Sample {
    pub fn from_triplet(config: &ModelConfig, pre: &Preprocess, t: &PatchTriplet) -> Result<Sample> {
        Ok(Sample {
            input: pre.model_input(config, &t.sar, &t.msi)?,
            target: target_tensor(config, &t.label)?,
            class: t.class(),
            provenance: t.provenance.to_string(),
        })
    }
}

pub fn prepare(config: &ModelConfig, pre: &Preprocess, triplets: &[PatchTriplet]) -> Result<Vec<Sample>> {
    triplets.iter().map(|t| Sample::from_triplet(config, pre, t)).collect()
}

/// Apply a dihedral transform to every channel of every sample.
pub fn transform_tensor(t: &Tensor<f32>, g: Dihedral) -> Tensor<f32> {
    if g == Dihedral::Identity {
        return t.clone();
    }
    let [n, c, h, w] = t.shape();
    assert_eq!(h, w, "dihedral transforms need square tensors");
    let mut out = Tensor::zeros(t.shape());
    let src = t.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let off = plane * h * w;
        for r in 0..h {
            for col in 0..w {
                let (sr, sc) = g.source(r, col, h);
                dst[off + r * w + col] = src[off + sr * w + sc];
            }
        }
    }
    out
}

fn transformed(s: &Sample, g: Dihedral) -> Sample {
    Sample {
        input: ModelInput {
            tensors: s.input.tensors.iter().map(|t| transform_tensor(t, g)).collect(),
        },
        target: transform_tensor(&s.target, g),
        class: s.class,
        provenance: s.provenance.clone(),
    }
}

fn stack(samples: &[&Sample]) -> Result<(ModelInput, Tensor<f32>)> {
    let inputs: Vec<&ModelInput> = samples.iter().map(|s| &s.input).collect();
    let targets: Vec<Tensor<f32>> = samples.iter().map(|s| s.target.clone()).collect();
    Ok((ModelInput::stack(&inputs)?, Tensor::stack(&targets)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// Same losses and best epoch, ignoring wall time.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        bits(self.train_losses()) == bits(other.train_losses())
            && bits(self.val_losses()) == bits(other.val_losses())
            && self.best_epoch == other.best_epoch
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Early-stopping bookkeeping. The epoch that sets a new best counts as the
/// first epoch of a plateau; training stops once a plateau is `patience`
/// epochs long.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Record one epoch's validation loss. Returns whether it improved on
    /// the best so far.
    pub fn update(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        let improved = self.best_epoch == 0 || val_loss <= self.best - MIN_DELTA;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.best_epoch > 0 && self.epoch - self.best_epoch + 1 >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Mean loss over `samples` in eval mode, weighted by batch size.
pub fn evaluate_loss(model: &ModelGraph<f32>, samples: &[Sample], weights: ClassWeights, batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, t) = stack(&refs)?;
        let y = model.infer(&x.refs())?;
        let (loss, _) = weighted_bce(&y, &t, weights)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train `model` in place. On return the model holds the weights of the epoch
/// with the lowest validation loss.
pub fn train(model: &mut ModelGraph<f32>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best_state = model.state();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_index = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let owned: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augmentation.is_empty() {
                        train[i].clone()
                    } else {
                        let g = cfg.augmentation[rng.random_range(0..cfg.augmentation.len())];
                        transformed(&train[i], g)
                    }
                })
                .collect();
            let refs: Vec<&Sample> = owned.iter().collect();
            let (x, t) = stack(&refs)?;
            let y = model.forward(&x.refs(), Mode::Train)?;
            let (loss, dy) = weighted_bce(&y, &t, cfg.class_weights)?;
            let provenance = || owned.iter().map(|s| s.provenance.as_str()).collect::<Vec<_>>().join("; ");
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    batch: batch_index,
                    provenance: provenance(),
                });
            }
            model.zero_grad();
            model.backward(&dy)?;
            opt.step(&mut model.params_mut()).map_err(|e| match e {
                Error::NonFiniteGradient { param, .. } => Error::NonFiniteBatchGradient {
                    param,
                    batch: batch_index,
                    provenance: provenance(),
                },
                e => e,
            })?;
            sum += loss * chunk.len() as f64;
            batch_index += 1;
        }
        let val_loss = evaluate_loss(model, val, cfg.class_weights, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: val_loss,
                batch: batch_index,
                provenance: "validation set".into(),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} ({:.1}s)",
            rec.train_loss,
            rec.val_loss,
            rec.seconds
        );
        history.epochs.push(rec);
        if stopper.update(val_loss) {
            best_state = model.state();
        }
        if stopper.should_stop() {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.set_state(&best_state)?;
    let (best_epoch, best_val_loss) = stopper.best();
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val_loss;
    Ok(history)
}

/// Candidate values per hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub class_weights: Vec<ClassWeights>,
    pub dataset_kind: Vec<DatasetKind>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: vec![1e-2, 1e-3, 1e-4],
            batch_size: vec![8, 16, 32],
            class_weights: vec![
                ClassWeights::new(0.1, 1.0),
                ClassWeights::new(1.0, 10.0),
                ClassWeights::BALANCED,
            ],
            dataset_kind: vec![DatasetKind::All, DatasetKind::Edge, DatasetKind::Equal],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Grid,
    Random,
}

impl std::str::FromStr for SearchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(SearchStrategy::Grid),
            "random" => Ok(SearchStrategy::Random),
            _ => Err(Error::invalid(format!("unknown search strategy {s:?}"))),
        }
    }
}

/// The trial configurations a search would run. Grid search enumerates the
/// product of the candidate lists (learning rate varying slowest) and stops
/// after `budget` trials; random search draws every value independently.
pub fn plan_trials(
    space: &SearchSpace,
    base: &TrainConfig,
    budget: usize,
    strategy: SearchStrategy,
    seed: u64,
) -> Result<Vec<TrainConfig>> {
    let sizes = [
        space.learning_rate.len(),
        space.batch_size.len(),
        space.class_weights.len(),
        space.dataset_kind.len(),
    ];
    if sizes.contains(&0) {
        return Err(Error::invalid("search space has an empty dimension"));
    }
    if budget == 0 {
        return Err(Error::invalid("search budget must be at least 1"));
    }
    let make = |i: [usize; 4]| TrainConfig {
        learning_rate: space.learning_rate[i[0]],
        batch_size: space.batch_size[i[1]],
        class_weights: space.class_weights[i[2]],
        dataset_kind: space.dataset_kind[i[3]],
        ..base.clone()
    };
    let trials: Vec<TrainConfig> = match strategy {
        SearchStrategy::Grid => {
            let total: usize = sizes.iter().product();
            (0..total.min(budget))
                .map(|mut k| {
                    let mut idx = [0; 4];
                    for d in (0..4).rev() {
                        idx[d] = k % sizes[d];
                        k /= sizes[d];
                    }
                    make(idx)
                })
                .collect()
        }
        SearchStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..budget)
                .map(|_| make(sizes.map(|n| rng.random_range(0..n))))
                .collect()
        }
    };
    for t in &trials {
        t.validate()?;
    }
    Ok(trials)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub config: TrainConfig,
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub error: Option<String>,
}

/// Order by best validation loss, failed trials last, ties by trial index.
pub fn rank(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        let key = |r: &TrialResult| r.best_val_loss.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.trial.cmp(&b.trial))
    });
}

/// Train one fresh model per planned trial with epochs capped at
/// `epoch_cap`, and return the ranked results. `model_config` fixes the
/// architecture; the trial's dataset kind selects the training subset.
#[allow(clippy::too_many_arguments)]
pub fn hyper_search(
    model_config: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    strategy: SearchStrategy,
    seed: u64,
    epoch_cap: usize,
) -> Result<Vec<TrialResult>> {
    let trials = plan_trials(space, base, budget, strategy, seed)?;
    let mut results = Vec::with_capacity(trials.len());
    for (i, mut cfg) in trials.into_iter().enumerate() {
        cfg.max_epochs = cfg.max_epochs.min(epoch_cap.max(1));
        let outcome = crate::dataset::build_variant(train_set, cfg.dataset_kind, cfg.seed, |s| s.class)
            .and_then(|variant| {
                let mut model = crate::model::build::<f32>(model_config)?;
                train(&mut model, &variant.items, val_set, &cfg)
            });
        log::info!("trial {i}: {:?}", outcome.as_ref().map(|h| h.best_val_loss));
        results.push(match outcome {
            Ok(h) => TrialResult {
                trial: i,
                config: cfg,
                best_val_loss: Some(h.best_val_loss),
                best_epoch: h.best_epoch,
                epochs: h.epochs.len(),
                error: None,
            },
            Err(e) => TrialResult {
                trial: i,
                config: cfg,
                best_val_loss: None,
                best_epoch: 0,
                epochs: 0,
                error: Some(e.to_string()),
            },
        });
    }
    rank(&mut results);
    Ok(results)
}

pub fn write_leaderboard(results: &[TrialResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "trial",
        "learning_rate",
        "batch_size",
        "w_water",
        "w_ice",
        "dataset_kind",
        "best_val_loss",
        "best_epoch",
        "epochs",
        "error",
    ])?;
    for (rank, r) in results.iter().enumerate() {
        let c = &r.config;
        w.write_record([
            (rank + 1).to_string(),
            r.trial.to_string(),
            c.learning_rate.to_string(),
            c.batch_size.to_string(),
            c.class_weights.water.to_string(),
            c.class_weights.ice.to_string(),
            format!("{:?}", c.dataset_kind).to_lowercase(),
            r.best_val_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.best_epoch.to_string(),
            r.epochs.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_example() {
        let mut s = EarlyStopping::new(5);
        let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1];
        let mut seen = 0;
        for &l in &losses {
            s.update(l);
            seen += 1;
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(seen, 6);
        assert_eq!(s.best(), (2, 0.9));
    }

    #[test]
    fn tiny_drop_is_not_improvement() {
        let mut s = EarlyStopping::new(2);
        assert!(s.update(1.0));
        assert!(!s.update(1.0 - 0.5 * MIN_DELTA));
        assert!(s.should_stop());
        assert!(s.update(0.5));
    }

    #[test]
    fn grid_and_random_plans() {
        let space = SearchSpace {
            learning_rate: vec![1e-3, 1e-4],
            batch_size: vec![8, 16],
            class_weights: vec![ClassWeights::BALANCED],
            dataset_kind: vec![DatasetKind::All],
        };
        let base = TrainConfig::default();
        let g = plan_trials(&space, &base, 100, SearchStrategy::Grid, 0).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!((g[1].learning_rate, g[1].batch_size), (1e-3, 16));
        let a = plan_trials(&SearchSpace::default(), &base, 6, SearchStrategy::Random, 9).unwrap();
        assert_eq!(a, plan_trials(&SearchSpace::default(), &base, 6, SearchStrategy::Random, 9).unwrap());
        let empty = SearchSpace {
            batch_size: vec![],
            ..SearchSpace::default()
        };
        assert!(plan_trials(&empty, &base, 1, SearchStrategy::Grid, 0).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_trial() {
        let r = |trial, loss: Option<f64>| TrialResult {
            trial,
            config: TrainConfig::default(),
            best_val_loss: loss,
            best_epoch: 1,
            epochs: 1,
            error: None,
        };
        let mut v = vec![r(0, None), r(1, Some(0.5)), r(2, Some(0.2)), r(3, Some(0.2))];
        rank(&mut v);
        assert_eq!(v.iter().map(|x| x.trial).collect::<Vec<_>>(), vec![2, 3, 1, 0]);
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 33,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn transform_matches_raster_transform() {
        use crate::raster::{GeoTransform, Raster};
        let t = GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap();
        let data: Vec<f32> = (0..32).map(|v| v as f32).collect();
        let r = Raster::from_data(4, 4, 2, data.clone(), t).unwrap();
        let x = Tensor::from_vec([1, 2, 4, 4], data).unwrap();
        for g in Dihedral::ALL {
            assert_eq!(transform_tensor(&x, g).data(), g.apply(&r).unwrap().data());
        }
    }
}
