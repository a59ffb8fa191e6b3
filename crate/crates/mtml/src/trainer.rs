//! Two-phase optimization.
//!
//! Phase one trains on the per-camera labels alone with step-decayed SGD.
//! Phase two alternates: train some epochs on the combined objective using
//! the current label assignments, then rediscover the assignments with the
//! improved model. The assignment set is rebuilt from scratch each round so
//! a better model can retract earlier mistakes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::association::{
    apply_multilabels, association_precision, discover_all, dump_rows, AssociationRow,
    MultiLabelSet,
};
use crate::data::{sample_batch, IcsDataset};
use crate::error::{Error, Result};
use crate::model::{backward, GradientSet, ModelParams};
use crate::objective::{LossReport, LossSpec};

/// Schedule and sampling settings for a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the assigned-label loss in the combined objective.
    pub lambda_ml: f64,
    pub initial_lr: f64,
    pub pretrain_epochs: usize,
    /// Pretraining decays the rate by `decay_factor` every this many epochs.
    pub pretrain_decay_every: usize,
    pub decay_factor: f64,
    pub ml_iterations: usize,
    pub epochs_per_iteration: usize,
    /// Within an iteration, the rate decays once at this epoch index.
    pub ml_decay_after_epoch: usize,
    /// Base learning rate of every iteration's epochs.
    pub ml_base_lr: f64,
    pub persons_per_camera: usize,
    pub images_per_person: usize,
    /// Run one association pass right after pretraining so the first
    /// iteration already trains with assignments.
    pub associate_after_pretrain: bool,
    /// Ablation arm: never associate, never add assigned-label terms.
    pub mt_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ml: 0.5,
            initial_lr: 0.05,
            pretrain_epochs: 100,
            pretrain_decay_every: 40,
            decay_factor: 0.1,
            ml_iterations: 8,
            epochs_per_iteration: 15,
            ml_decay_after_epoch: 8,
            ml_base_lr: 0.005,
            persons_per_camera: 2,
            images_per_person: 4,
            associate_after_pretrain: true,
            mt_only: false,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ml < 0.0 || !self.lambda_ml.is_finite() {
            return Err(Error::InvalidConfig("lambda_ml must be >= 0".into()));
        }
        if self.initial_lr <= 0.0 || self.ml_base_lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.pretrain_decay_every == 0 {
            return Err(Error::InvalidConfig(
                "pretrain_decay_every must be >= 1".into(),
            ));
        }
        if self.persons_per_camera == 0 || self.images_per_person == 0 {
            return Err(Error::InvalidConfig(
                "batch composition must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn loss_spec(&self) -> LossSpec {
        if self.mt_only {
            LossSpec::MtOnly
        } else {
            LossSpec::MtMl {
                lambda: self.lambda_ml,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    MlIteration,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::MlIteration => "ml",
        }
    }
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 0 during pretraining, 1-based round index afterwards.
    pub iteration: usize,
    /// Epoch index within its phase (pretrain) or iteration.
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
    /// Pairs in the assignment set the epoch trained with.
    pub pairs_active: usize,
    /// Precision of that set against hidden ground truth, when known.
    pub association_precision: Option<f64>,
}

/// One association round's outcome, the source of the dynamics report.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationRound {
    pub round: usize,
    pub pair_count: usize,
    pub precision: Option<f64>,
    pub rows: Vec<AssociationRow>,
}

/// Everything a run accumulates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub current_lr: f64,
    /// Completed epochs across both phases.
    pub epoch: usize,
    /// Completed multi-label iterations.
    pub iteration: usize,
    pub multilabels: MultiLabelSet,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    pub association_log: Vec<AssociationRound>,
}

/// Plain SGD: `w <- w - lr * g` for every parameter.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientSet, lr: f64) -> Result<()> {
    if let Some(layer) = grads.find_non_finite() {
        return Err(Error::NumericFailure(layer));
    }
    if grads.encoder.len() != params.encoder.len() || grads.heads.len() != params.heads.len() {
        return Err(Error::Shape("gradient layout differs from params".into()));
    }
    let apply = |p: &mut crate::model::Affine, g: &crate::model::Affine| -> Result<()> {
        if p.weight.data.len() != g.weight.data.len() || p.bias.len() != g.bias.len() {
            return Err(Error::Shape("gradient tensor shape differs".into()));
        }
        for (w, &d) in p.weight.data.iter_mut().zip(&g.weight.data) {
            *w -= lr * d;
        }
        for (b, &d) in p.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
        Ok(())
    };
    for (p, g) in params.encoder.iter_mut().zip(&grads.encoder) {
        apply(p, g)?;
    }
    for (p, g) in params.heads.iter_mut().zip(&grads.heads) {
        apply(p, g)?;
    }
    Ok(())
}

/// Closed-form learning rate at an epoch of a phase.
///
/// Pretraining: `initial_lr * decay_factor^(epoch / pretrain_decay_every)`.
/// Iterations: `ml_base_lr`, times `decay_factor` once `ml_decay_after_epoch`
/// epochs of the iteration are complete. Each iteration starts back at base.
pub fn lr_schedule(config: &TrainConfig, phase: Phase, epoch_within_phase: usize) -> f64 {
    match phase {
        Phase::Pretrain => {
            let steps = (epoch_within_phase / config.pretrain_decay_every) as i32;
            config.initial_lr * config.decay_factor.powi(steps)
        }
        Phase::MlIteration => {
            if epoch_within_phase >= config.ml_decay_after_epoch {
                config.ml_base_lr * config.decay_factor
            } else {
                config.ml_base_lr
            }
        }
    }
}

fn batches_per_epoch(dataset: &IcsDataset, config: &TrainConfig) -> usize {
    let b = dataset.num_cameras * config.persons_per_camera * config.images_per_person;
    dataset.total_samples().div_ceil(b)
}

/// One epoch of SGD under the given spec; returns the epoch-mean report.
fn train_epoch(
    dataset: &IcsDataset,
    state: &mut TrainState,
    config: &TrainConfig,
    spec: LossSpec,
    lr: f64,
) -> Result<LossReport> {
    let mut reports = Vec::new();
    for _ in 0..batches_per_epoch(dataset, config) {
        let batch = sample_batch(
            dataset,
            &mut state.rng,
            config.persons_per_camera,
            config.images_per_person,
        )?;
        let extras = state.multilabels.batch_extra_labels(&batch.samples);
        let out = backward(&state.params, &batch.samples, &extras, spec)?;
        sgd_step(&mut state.params, &out.grads, lr)?;
        reports.push(out.loss);
    }
    state.epoch += 1;
    Ok(LossReport::mean_of(&reports).expect("at least one batch per epoch"))
}

/// Phase one: train on native labels only.
pub fn pretrain_mt(
    dataset: &IcsDataset,
    params: ModelParams,
    config: &TrainConfig,
) -> Result<TrainState> {
    config.validate()?;
    dataset.validate()?;
    let mut state = TrainState {
        params,
        current_lr: lr_schedule(config, Phase::Pretrain, 0),
        epoch: 0,
        iteration: 0,
        multilabels: MultiLabelSet::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        history: Vec::new(),
        association_log: Vec::new(),
    };
    for epoch in 0..config.pretrain_epochs {
        let lr = lr_schedule(config, Phase::Pretrain, epoch);
        state.current_lr = lr;
        let loss = train_epoch(dataset, &mut state, config, LossSpec::MtOnly, lr)?;
        state.history.push(EpochRecord {
            phase: Phase::Pretrain,
            iteration: 0,
            epoch,
            lr,
            loss,
            pairs_active: 0,
            association_precision: None,
        });
    }
    Ok(state)
}

/// Optional association pass between the phases, so the first iteration
/// already trains with assignments. Not counted as a round.
pub fn initial_association(
    dataset: &IcsDataset,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<()> {
    if config.mt_only || !config.associate_after_pretrain {
        return Ok(());
    }
    let set = discover_all(&state.params, dataset)?;
    state.multilabels = apply_multilabels(dataset, &set)?;
    Ok(())
}

/// One round of phase two: train `epochs_per_iteration` epochs on the
/// combined objective, then rebuild the assignment set with the new model.
pub fn train_mtml_iteration(
    dataset: &IcsDataset,
    state: &mut TrainState,
    config: &TrainConfig,
    round: usize,
) -> Result<()> {
    let spec = config.loss_spec();
    let pairs_active = state.multilabels.pair_count();
    let precision_active = association_precision(dataset, &state.multilabels);
    for epoch in 0..config.epochs_per_iteration {
        let lr = lr_schedule(config, Phase::MlIteration, epoch);
        state.current_lr = lr;
        let loss = train_epoch(dataset, state, config, spec, lr)?;
        state.history.push(EpochRecord {
            phase: Phase::MlIteration,
            iteration: round,
            epoch,
            lr,
            loss,
            pairs_active,
            association_precision: precision_active,
        });
    }
    if !config.mt_only {
        let set = discover_all(&state.params, dataset)?;
        let set = apply_multilabels(dataset, &set)?;
        let rows = dump_rows(round, dataset, &set);
        state.association_log.push(AssociationRound {
            round,
            pair_count: set.pair_count(),
            precision: association_precision(dataset, &set),
            rows,
        });
        state.multilabels = set;
    }
    state.iteration = round;
    Ok(())
}

/// Phase two in full: optional initial association, then every round.
pub fn train_mtml(
    dataset: &IcsDataset,
    mut state: TrainState,
    config: &TrainConfig,
) -> Result<TrainState> {
    config.validate()?;
    initial_association(dataset, &mut state, config)?;
    for round in 1..=config.ml_iterations {
        train_mtml_iteration(dataset, &mut state, config, round)?;
    }
    Ok(state)
}

pub const METRICS_CSV_HEADER: &str =
    "phase,iteration,epoch,lr,mt_loss,ml_loss,total,pairs_discovered,association_precision";

/// Write the per-epoch log: one row per epoch, `-` for unknown precision.
pub fn write_metrics_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# mtml-metrics v1")?;
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in history {
        let precision = match r.association_precision {
            Some(p) => p.to_string(),
            None => "-".to_string(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.phase.as_str(),
            r.iteration,
            r.epoch,
            r.lr,
            r.loss.mt_loss,
            r.loss.ml_loss,
            r.loss.total,
            r.pairs_active,
            precision
        )?;
    }
    w.flush()?;
    Ok(())
}
