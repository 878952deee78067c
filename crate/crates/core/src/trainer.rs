//! Multi-era optimization: mini-batch SGD on the scheduled composite loss,
//! per-era filter precision, era snapshots, and harvest of filters that
//! clear the precision bar.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::curator::{match_positives, HarvestedFilter};
use crate::error::{Error, Result};
use crate::evalmetrics::{kappa, Confusion, MATCH_THRESHOLD};
use crate::netcore::{FilterExport, FilterTensor, Gradients, ModelState, ThresholdingParams, FILTERS_FORMAT, FORMAT_VERSION};
use crate::objective::{bce, bce_grad, regularizers, ConstraintSpec, LossWeights, MinPenaltyParams, RegularizerValues, SubmissionSquash};
use crate::schedule::{era_reset, ConstraintSchedule, ScheduleCursor};

/// How positive clips are weighted in the cross entropy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum PositiveWeight {
    /// negatives / positives of the training split
    #[default]
    Balanced,
    Off,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Set from the run's schedule section, not read from the train section.
    #[serde(skip)]
    pub schedule: ConstraintSchedule,
    pub min_params: MinPenaltyParams,
    pub harvest_precision_threshold: f64,
    pub positive_weight: PositiveWeight,
    pub submission_squash: SubmissionSquash,
    pub dropout_rate: f64,
    pub thresholding: ThresholdingParams,
    /// Compute train/validation kappa every this many epochs (and at each
    /// era's last epoch); 0 disables it.
    pub kappa_every: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 64,
            schedule: ConstraintSchedule::default(),
            min_params: MinPenaltyParams::default(),
            harvest_precision_threshold: 0.3,
            positive_weight: PositiveWeight::Balanced,
            submission_squash: SubmissionSquash::Sum,
            dropout_rate: 0.2,
            thresholding: ThresholdingParams::default(),
            kappa_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.min_params.is_valid() {
            return Err(Error::Config(format!("invalid step-mass penalty {:?}", self.min_params)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if let PositiveWeight::Fixed(w) = self.positive_weight {
            if !(w > 0.0) {
                return Err(Error::Config("fixed positive weight must be > 0".into()));
            }
        }
        self.thresholding.validate()?;
        self.schedule.validate()
    }

    fn positive_weight_for(&self, train: &Dataset) -> f64 {
        match self.positive_weight {
            PositiveWeight::Off => 1.0,
            PositiveWeight::Fixed(w) => w,
            PositiveWeight::Balanced => {
                let pos = train.positives();
                if pos == 0 {
                    1.0
                } else {
                    (train.len() - pos) as f64 / pos as f64
                }
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub era: usize,
    pub epoch: usize,
    /// Mean (class-weighted) cross entropy over the epoch's clips.
    pub bce: f64,
    /// Regularizer values averaged over the epoch's steps.
    pub terms: RegularizerValues,
    pub gammas: LossWeights,
    pub alpha: f64,
    pub trad_frozen: bool,
    /// Mean per-step gradient norms of the filters and the traditional head.
    pub grad_norm_conv: f64,
    pub grad_norm_fc: f64,
    pub train_kappa: Option<f64>,
    pub val_kappa: Option<f64>,
}

/// Filters at the end of an era, with what happened at its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraSnapshot {
    #[serde(flatten)]
    pub filters: FilterExport,
    pub era: usize,
    /// Filters as the era began.
    pub start_weights: Vec<f64>,
    pub per_filter_precision: Vec<Option<f64>>,
    /// Filters redrawn after this era.
    pub reinitialized: Vec<usize>,
    pub epoch_losses: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EraSnapshot {
    pub fn tensor(&self) -> Result<FilterTensor> {
        self.filters.tensor()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: EraSnapshot = serde_json::from_str(text)?;
        if snap.filters.format != FILTERS_FORMAT {
            return Err(Error::Shape(format!("unsupported snapshot format {}", snap.filters.format)));
        }
        let end = snap.tensor()?;
        let precision_ok = |p: &Option<f64>| p.is_none_or(|v| (0.0..=1.0).contains(&v));
        if snap.start_weights.len() != end.as_slice().len()
            || snap.per_filter_precision.len() != end.m()
            || !snap.per_filter_precision.iter().all(precision_ok)
        {
            return Err(Error::Shape(format!("inconsistent snapshot for era {}", snap.era)));
        }
        Ok(snap)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EraSnapshot::from_json(&text)
    }

    /// End-of-era filters whose precision exceeds `threshold`.
    pub fn harvest(&self, threshold: f64) -> Vec<HarvestedFilter> {
        let len = self.filters.shape.k * self.filters.shape.d;
        self.per_filter_precision
            .iter()
            .enumerate()
            .filter_map(|(p, prec)| {
                let prec = prec.filter(|&v| v > threshold)?;
                Some(HarvestedFilter {
                    era: self.era,
                    filter_index: p,
                    precision: prec,
                    weights: self.filters.weights[p * len..(p + 1) * len].to_vec(),
                })
            })
            .collect()
    }
}

/// Precision of every filter after rounding its weights at 0.5, using the
/// discrete matching rule. `None` for filters that match no clip.
pub fn eval_filter_precision(conv: &FilterTensor, dataset: &Dataset, padding: usize) -> Vec<Option<f64>> {
    (0..conv.m())
        .map(|p| {
            let positives: Vec<(usize, usize)> = conv
                .filter(p)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w >= 0.5)
                .map(|(i, _)| (i / conv.d(), i % conv.d()))
                .collect();
            let (mut hits, mut pos) = (0usize, 0usize);
            for clip in dataset.clips() {
                if match_positives(&positives, conv.k(), clip, padding).is_some() {
                    hits += 1;
                    pos += usize::from(clip.label);
                }
            }
            (hits > 0).then(|| pos as f64 / hits as f64)
        })
        .collect()
}

fn model_kappa(state: &ModelState, dataset: &Dataset) -> Option<f64> {
    let predicted: Vec<bool> = dataset
        .clips()
        .iter()
        .map(|c| state.predict(c) >= MATCH_THRESHOLD)
        .collect();
    kappa(&Confusion::from_predictions(&predicted, &dataset.labels()))
}

/// Per-epoch inputs decided by the schedule.
#[derive(Debug, Clone, Copy)]
pub struct EpochSettings {
    pub weights: LossWeights,
    pub alpha: f64,
    pub freeze: bool,
    pub era: usize,
    pub epoch: usize,
}

/// One shuffled pass of mini-batch gradient descent. Weights are clamped to
/// [0, 1] after every step; the traditional head is not updated when frozen.
pub fn train_epoch(
    state: &mut ModelState,
    train_set: &Dataset,
    settings: &EpochSettings,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochRecord> {
    let vocab = train_set.vocabulary();
    if vocab.d() != state.d() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model {}",
            vocab.d(),
            state.d()
        )));
    }
    state.set_alpha(settings.alpha);
    if settings.freeze {
        state.freeze_trad();
    }
    let spec = ConstraintSpec {
        vocab,
        min_params: &config.min_params,
        squash: config.submission_squash,
    };
    let pos_weight = config.positive_weight_for(train_set);
    let non_finite = |term: &str| Error::NonFinite {
        term: term.into(),
        era: settings.era,
        epoch: settings.epoch,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(rng);

    let mut bce_sum = 0.0;
    let mut terms_sum = RegularizerValues::default();
    let (mut norm_conv, mut norm_fc) = (0.0, 0.0);
    let mut steps = 0usize;
    for batch in order.chunks(config.batch_size) {
        let mut grads = Gradients::zeros_like(state);
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let clip = &train_set.clips()[i];
            let cache = state.forward_train(clip, rng)?;
            let w = if clip.label { pos_weight } else { 1.0 };
            let loss = w * bce(cache.y, clip.label);
            if !loss.is_finite() {
                return Err(non_finite("bce"));
            }
            bce_sum += loss;
            let g = state.backward(&cache, w * bce_grad(cache.y, clip.label) * scale)?;
            grads.accumulate(&g, 1.0);
        }
        let terms = regularizers(state.conv(), &settings.weights, &spec, Some(&mut grads.conv));
        for (name, v) in [("bin", terms.bin), ("min", terms.min), ("sub", terms.sub), ("poss", terms.poss)] {
            if !v.is_finite() {
                return Err(non_finite(name));
            }
        }
        if grads.conv.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(non_finite("gradient"));
        }
        terms_sum.bin += terms.bin;
        terms_sum.min += terms.min;
        terms_sum.sub += terms.sub;
        terms_sum.poss += terms.poss;
        norm_conv += grads.conv_norm();
        norm_fc += grads.fc_norm();
        steps += 1;

        let lr = config.learning_rate;
        let conv = state.conv_mut();
        conv.add_scaled(&grads.conv, -lr);
        conv.clamp_unit();
        if !state.trad_frozen() {
            for (w, g) in state.fc_trad_mut().iter_mut().zip(&grads.fc_trad) {
                *w -= lr * g;
            }
        }
    }
    let per_step = 1.0 / steps.max(1) as f64;
    Ok(EpochRecord {
        era: settings.era,
        epoch: settings.epoch,
        bce: if train_set.is_empty() { 0.0 } else { bce_sum / train_set.len() as f64 },
        terms: RegularizerValues {
            bin: terms_sum.bin * per_step,
            min: terms_sum.min * per_step,
            sub: terms_sum.sub * per_step,
            poss: terms_sum.poss * per_step,
        },
        gammas: settings.weights,
        alpha: state.alpha(),
        trad_frozen: state.trad_frozen(),
        grad_norm_conv: norm_conv * per_step,
        grad_norm_fc: norm_fc * per_step,
        train_kappa: None,
        val_kappa: None,
    })
}

/// Model dimensions chosen by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub filters: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            filters: 64,
            kernel: 3,
            padding: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub snapshots: Vec<EraSnapshot>,
    pub harvested: Vec<HarvestedFilter>,
    pub log: Vec<EpochRecord>,
}

/// Runs every era. At each era's end the filters are scored on `train_set`,
/// snapshotted, harvested when precision exceeds the harvest bar, and (except
/// after the last era) weak filters are redrawn. `on_epoch` sees every log
/// record as it is produced.
pub fn train_full(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    shape: ModelShape,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let d = train_set.vocabulary().d();
    let clip_len = train_set.clips().iter().map(|c| c.len()).min().unwrap_or(0);
    if shape.filters == 0 || shape.kernel == 0 {
        return Err(Error::Config("model needs at least one filter and kernel length >= 1".into()));
    }
    if shape.kernel > clip_len + 2 * shape.padding {
        return Err(Error::Config(format!(
            "kernel of {} steps exceeds clip length {} plus padding {}",
            shape.kernel, clip_len, shape.padding
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ModelState::init(shape.filters, shape.kernel, d, shape.padding, &mut rng);
    state.dropout_rate = config.dropout_rate;
    state.thresh = config.thresholding;

    let schedule = config.schedule;
    let mut cursor = ScheduleCursor::new(schedule);
    let mut snapshots = Vec::with_capacity(schedule.eras);
    let mut harvested = Vec::new();
    let mut log = Vec::new();
    for era in 0..schedule.eras {
        let start_weights = state.conv().as_slice().to_vec();
        let mut era_log = Vec::with_capacity(schedule.epochs_per_era);
        for epoch in 0..schedule.epochs_per_era {
            let sw = cursor.at(epoch, era);
            let settings = EpochSettings {
                weights: sw.weights,
                alpha: sw.alpha,
                freeze: sw.freeze_trad,
                era,
                epoch,
            };
            let mut record = train_epoch(&mut state, train_set, &settings, config, &mut rng)?;
            let last = epoch + 1 == schedule.epochs_per_era;
            if config.kappa_every > 0 && (last || epoch % config.kappa_every == 0) {
                record.train_kappa = model_kappa(&state, train_set);
                record.val_kappa = model_kappa(&state, val_set);
            }
            on_epoch(&record);
            era_log.push(record);
        }
        let precision = eval_filter_precision(state.conv(), train_set, shape.padding);
        let end_weights = state.conv().as_slice().to_vec();
        let shape_doc = state.shape();
        let reinitialized = if era + 1 < schedule.eras {
            era_reset(&mut state, &precision, schedule.reinit_precision_threshold, &mut rng)?
        } else {
            Vec::new()
        };
        let snapshot = EraSnapshot {
            filters: FilterExport {
                format: FILTERS_FORMAT.into(),
                version: FORMAT_VERSION,
                shape: shape_doc,
                weights: end_weights,
            },
            era,
            start_weights,
            per_filter_precision: precision,
            reinitialized,
            epoch_losses: era_log.clone(),
            config_hash: None,
        };
        harvested.extend(snapshot.harvest(config.harvest_precision_threshold));
        snapshots.push(snapshot);
        log.extend(era_log);
    }
    Ok(TrainOutcome {
        state,
        snapshots,
        harvested,
        log,
    })
}
