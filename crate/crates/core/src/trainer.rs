//! Siamese training loop.
//!
//! Both members of every pair go through the one [`PoseModel`]; their
//! gradients (from both loss terms) are summed into a single update per batch.

use std::fmt::Write as _;

use crate::data::{Dataset, PairBatch, PairSampler};
use crate::error::{Error, Result};
use crate::evaluation::{self, MaeReport};
use crate::head::{HeadKind, NormMode, PoseAngles};
use crate::losses::{self, LossBreakdown, LossConfig, PairPrediction};
use crate::model::{ModelGrad, PoseModel};
use crate::network::BackboneConfig;
use crate::optimizer::{AdamConfig, AdamState};
use crate::parallel::{self, Execution};
use crate::seed;

pub const HISTORY_MAGIC: &str = "# rankpose-history v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per batch.
    pub batch_pairs: usize,
    pub loss: LossConfig,
    pub head: HeadKind,
    /// `seed` inside is ignored; initialization uses a stream of [`TrainConfig::seed`].
    pub backbone: BackboneConfig,
    /// `total_steps` inside is ignored; the schedule spans the whole run.
    pub adam: AdamConfig,
    pub seed: u64,
    /// Validate every this many epochs (0 = never); the last epoch is always
    /// validated when a validation set is given.
    pub eval_every: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_pairs: 32,
            loss: LossConfig::default(),
            head: HeadKind::Arccos,
            backbone: BackboneConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_pairs == 0 {
            return Err(Error::InvalidConfig("batch_pairs must be >= 1".into()));
        }
        self.backbone.validate()
    }

    /// `⌈samples / (2 · batch_pairs)⌉`, at least 1.
    pub fn batches_per_epoch(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(2 * self.batch_pairs).max(1)
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            seed: seed::derive_seed(self.seed, "init"),
            ..self.backbone.clone()
        }
    }

    pub fn adam_config(&self, num_samples: usize) -> AdamConfig {
        AdamConfig {
            total_steps: (self.epochs * self.batches_per_epoch(num_samples)) as u64,
            ..self.adam.clone()
        }
    }
}

/// Parameters plus everything needed to continue training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: PoseModel,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, num_samples: usize) -> Result<Self> {
        cfg.validate()?;
        let model = PoseModel::init(&cfg.backbone_config(), cfg.head)?;
        let adam_config = cfg.adam_config(num_samples);
        adam_config.validate()?;
        Ok(Self {
            adam: AdamState::new(&model.param_shapes()),
            model,
            adam_config,
            epochs_completed: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    /// Mean of the per-batch losses over the epoch.
    pub loss: LossBreakdown,
    /// Validation MAE in radians.
    pub val_mae: Option<MaeReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Text form: one CSV row per epoch; validation MAE in degrees.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HISTORY_MAGIC}\nepoch,lr,mse,ranking,combined,val_yaw_mae_deg,val_pitch_mae_deg,val_roll_mae_deg\n"
        );
        for r in &self.records {
            write!(s, "{},{},{},{},{}", r.epoch, r.lr, r.loss.mse, r.loss.ranking, r.loss.combined).unwrap();
            match r.val_mae {
                Some(m) => {
                    let d = m.to_degrees();
                    writeln!(s, ",{},{},{}", d.yaw, d.pitch, d.roll).unwrap();
                }
                None => s.push_str(",,,\n"),
            }
        }
        s
    }
}

/// Loss and summed shared-parameter gradient for one batch of pairs.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub loss: LossBreakdown,
    pub grad: ModelGrad,
}

pub fn pair_predictions(
    model: &PoseModel,
    dataset: &Dataset,
    batch: &PairBatch,
    mode: NormMode,
    exec: Execution,
) -> Result<Vec<PairPrediction>> {
    let samples = dataset.samples();
    parallel::map_ordered(&batch.pairs, exec, |&(a, b)| {
        let (sa, sb) = (&samples[a], &samples[b]);
        let (y1, _) = model.forward(&sa.features, mode)?;
        let (y2, _) = model.forward(&sb.features, mode)?;
        Ok(PairPrediction::new(y1, y2, sa.pose, sb.pose))
    })
    .into_iter()
    .collect()
}

/// Forward both members of every pair, take the combined loss, and
/// backpropagate. Per-pair gradients are reduced in pair order.
pub fn batch_gradient(
    model: &PoseModel,
    dataset: &Dataset,
    batch: &PairBatch,
    loss_cfg: &LossConfig,
    mode: NormMode,
    exec: Execution,
) -> Result<BatchOutcome> {
    let samples = dataset.samples();
    let forwards = parallel::map_ordered(&batch.pairs, exec, |&(a, b)| {
        let (sa, sb) = (&samples[a], &samples[b]);
        let (y1, t1) = model.forward(&sa.features, mode)?;
        let (y2, t2) = model.forward(&sb.features, mode)?;
        Ok((PairPrediction::new(y1, y2, sa.pose, sb.pose), t1, t2))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let preds: Vec<PairPrediction> = forwards.iter().map(|f| f.0).collect();
    let loss = losses::combined_loss(&preds, loss_cfg)?;
    let upstream = losses::loss_backward(&preds, loss_cfg)?;

    let work: Vec<_> = forwards.iter().zip(&upstream).collect();
    let per_pair = parallel::map_ordered(&work, exec, |((_, t1, t2), g)| {
        let mut grad = model.backward(t1, g.y1, mode)?;
        grad.add_assign(&model.backward(t2, g.y2, mode)?);
        Ok(grad)
    });
    let mut grad = ModelGrad::zeros_like(model);
    for g in per_pair {
        grad.add_assign(&g?);
    }
    Ok(BatchOutcome { loss, grad })
}

fn epoch_rng(seed_value: u64, epoch: usize) -> seed::Rng {
    seed::stream(seed::derive_seed(seed_value, "pairs"), &format!("epoch-{epoch}"))
}

/// Trains a fresh model.
pub fn train(train_set: &Dataset, val_set: Option<&Dataset>, cfg: &TrainConfig) -> Result<(TrainState, TrainHistory)> {
    let state = TrainState::init(cfg, train_set.len())?;
    resume(state, train_set, val_set, cfg)
}

/// Continues training `state` up to `cfg.epochs`. Pair sampling is seeded per
/// epoch, so resuming from a checkpoint reproduces an uninterrupted run.
pub fn resume(
    mut state: TrainState,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(TrainState, TrainHistory)> {
    cfg.validate()?;
    if train_set.dim() != state.model.input_dim() {
        return Err(Error::dims("training set feature width", state.model.input_dim(), train_set.dim()));
    }
    let sampler = PairSampler::new(train_set)?;
    let batches = cfg.batches_per_epoch(train_set.len());
    let mut history = TrainHistory::default();

    for epoch in state.epochs_completed..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut sums = LossBreakdown::default();
        let mut first_lr = None;
        for b in 0..batches {
            let batch = sampler.sample(cfg.batch_pairs, &mut rng);
            let outcome = batch_gradient(
                &state.model,
                train_set,
                &batch,
                &cfg.loss,
                NormMode::Training,
                cfg.execution,
            )?;
            let step = state.adam.t;
            if !outcome.loss.combined.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: outcome.loss.combined,
                    step,
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            let lr = {
                let grads = outcome.grad.slices();
                let mut params = state.model.param_slices_mut();
                state.adam.step(&mut params, &grads, &state.adam_config)?
            };
            if !state.model.all_finite() {
                return Err(Error::NonFiniteLoss {
                    value: f64::NAN,
                    step,
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            first_lr.get_or_insert(lr);
            sums.mse += outcome.loss.mse;
            sums.ranking += outcome.loss.ranking;
            sums.combined += outcome.loss.combined;
        }
        state.epochs_completed = epoch + 1;

        let n = batches as f64;
        let val_mae = match val_set {
            Some(v) if is_eval_epoch(cfg, epoch + 1) => Some(evaluation::evaluate(&state, v, cfg.execution)?),
            _ => None,
        };
        log::debug!(
            "epoch {} combined {:.6} mse {:.6} ranking {:.6}",
            epoch + 1,
            sums.combined / n,
            sums.mse / n,
            sums.ranking / n
        );
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            lr: first_lr.unwrap_or(0.0),
            loss: LossBreakdown {
                mse: sums.mse / n,
                ranking: sums.ranking / n,
                combined: sums.combined / n,
            },
            val_mae,
        });
    }
    Ok((state, history))
}

fn is_eval_epoch(cfg: &TrainConfig, epoch: usize) -> bool {
    epoch == cfg.epochs || (cfg.eval_every > 0 && epoch.is_multiple_of(cfg.eval_every))
}

/// Backbone then head, strict normalization.
pub fn predict(state: &TrainState, features: &[f64]) -> Result<PoseAngles> {
    state.model.predict(features)
}
