//! Losses, gradients, optimization and the training loop.

mod adam;
mod gradcheck;
mod init;
mod loss;

use std::fmt;
use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Batcher, CorpusError, EmbeddingTable, LabeledExample, PreparedExample};
use crate::eval::{self, EvalError};
use crate::hierarchy::{HierarchyError, TypeHierarchy, TypeId};
use crate::model::{DropoutMasks, EncoderMode, Model, ModelConfig, ModelError, Params, ScoreKind};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    finite_difference_check, relative_error, GradCheckConfig, GradCheckError, GradCheckReport,
    Probe, TensorCheck,
};
pub use init::{glorot_bound, glorot_init, glorot_uniform, init_params};
pub use loss::{
    combined_loss, structure_loss, typing_loss, LossBreakdown, Objective, StructureInput,
    TypingInput,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("example has an empty gold type set")]
    EmptyGold,
    #[error("type {0} has no ancestors and cannot be in a structure batch")]
    EmptyAncestors(TypeId),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("no {0} examples")]
    NoData(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Training hyperparameters plus the model shape they apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub filter_width: usize,
    pub encoder_mode: EncoderMode,
    pub batch_size_typing: usize,
    pub batch_size_structure: usize,
    pub structure_weight: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_p: f64,
    pub margin: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mention_score_kind: ScoreKind,
    pub structure_score_kind: Option<ScoreKind>,
    pub share_bilinear: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            filter_width: 5,
            encoder_mode: EncoderMode::CnnPlusMention,
            batch_size_typing: 32,
            batch_size_structure: 128,
            structure_weight: 0.5,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_p: 0.5,
            margin: 1.0,
            max_epochs: 50,
            patience: 5,
            seed: 13,
            mention_score_kind: ScoreKind::Bilinear,
            structure_score_kind: None,
            share_bilinear: false,
        }
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Sets one field by name. Names match the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let kind = |v: &str| {
            ScoreKind::parse(v, 1.0)
                .ok_or_else(|| TrainError::Config(format!("unknown score kind `{v}`")))
        };
        match key {
            "dim" => self.dim = parse_value(key, value)?,
            "filter_width" => self.filter_width = parse_value(key, value)?,
            "encoder_mode" => self.encoder_mode = value.parse().map_err(TrainError::Config)?,
            "batch_size_typing" => self.batch_size_typing = parse_value(key, value)?,
            "batch_size_structure" => self.batch_size_structure = parse_value(key, value)?,
            "structure_weight" => self.structure_weight = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "dropout_p" => self.dropout_p = parse_value(key, value)?,
            "margin" => self.margin = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mention_score_kind" => self.mention_score_kind = kind(value)?,
            "structure_score_kind" => {
                self.structure_score_kind = match value {
                    "" | "none" => None,
                    v => Some(kind(v)?),
                }
            }
            "share_bilinear" => self.share_bilinear = parse_value(key, value)?,
            other => return Err(TrainError::Config(format!("unknown key `{other}`"))),
        }
        self.sync_margin();
        Ok(())
    }

    fn sync_margin(&mut self) {
        let margin = self.margin;
        for kind in
            std::iter::once(&mut self.mention_score_kind).chain(self.structure_score_kind.as_mut())
        {
            if let ScoreKind::Order { margin: m } = kind {
                *m = margin;
            }
        }
    }

    /// Parses a `key=value` config file on top of the defaults.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in parse_key_values(text)? {
            config.set(&k, &v)?;
        }
        Ok(config)
    }

    // negated comparisons so that NaN fails
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size_typing == 0 || self.batch_size_structure == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.structure_weight >= 0.0) {
            return bad("structure_weight must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be at least 1");
        }
        Ok(())
    }

    pub fn model_config(&self, num_types: usize) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            width: self.filter_width,
            num_types,
            mode: self.encoder_mode,
            mention_kind: self.mention_score_kind,
            structure_kind: self.structure_score_kind,
            share_bilinear: self.share_bilinear,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

impl fmt::Display for TrainConfig {
    /// The `key=value` form accepted by [`TrainConfig::from_key_values`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dim={}", self.dim)?;
        writeln!(f, "filter_width={}", self.filter_width)?;
        writeln!(f, "encoder_mode={}", self.encoder_mode)?;
        writeln!(f, "batch_size_typing={}", self.batch_size_typing)?;
        writeln!(f, "batch_size_structure={}", self.batch_size_structure)?;
        writeln!(f, "structure_weight={}", self.structure_weight)?;
        writeln!(f, "learning_rate={}", self.learning_rate)?;
        writeln!(f, "adam_beta1={}", self.adam_beta1)?;
        writeln!(f, "adam_beta2={}", self.adam_beta2)?;
        writeln!(f, "adam_eps={}", self.adam_eps)?;
        writeln!(f, "dropout_p={}", self.dropout_p)?;
        writeln!(f, "margin={}", self.margin)?;
        writeln!(f, "max_epochs={}", self.max_epochs)?;
        writeln!(f, "patience={}", self.patience)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "mention_score_kind={}", self.mention_score_kind)?;
        writeln!(
            f,
            "structure_score_kind={}",
            self.structure_score_kind.map_or("none", |k| k.name())
        )?;
        writeln!(f, "share_bilinear={}", self.share_bilinear)
    }
}

/// Outcome of one epoch of early stopping bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly better
/// dev metric.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_map: f64,
}

/// Writes `epoch<TAB>train_loss<TAB>dev_map` lines.
pub fn write_history<W: Write>(mut out: W, history: &[EpochMetrics]) -> std::io::Result<()> {
    for m in history {
        writeln!(out, "{}\t{:?}\t{:?}", m.epoch, m.train_loss, m.dev_map)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev MAP.
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub typing_batches: usize,
    pub structure_batches: usize,
}

/// Structure pairs for every type that has ancestors.
pub fn structure_pairs(hierarchy: &TypeHierarchy) -> Vec<(TypeId, Vec<TypeId>)> {
    hierarchy
        .types_with_ancestors()
        .into_iter()
        .map(|t| (t, hierarchy.ancestors(t).expect("own type").to_vec()))
        .collect()
}

/// Trains from labeled examples.
pub fn train(
    hierarchy: &TypeHierarchy,
    train_set: &[LabeledExample],
    dev_set: &[LabeledExample],
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if embeddings.dim() != config.dim {
        return Err(TrainError::Config(format!(
            "embedding dimension {} differs from model dimension {}",
            embeddings.dim(),
            config.dim
        )));
    }
    let train_prepared: Vec<_> = train_set.iter().map(|e| e.prepare(embeddings)).collect();
    let dev_prepared: Vec<_> = dev_set.iter().map(|e| e.prepare(embeddings)).collect();
    train_prepared_examples(hierarchy, &train_prepared, &dev_prepared, config)
}

/// Training loop over examples whose word vectors are already looked up.
///
/// Each typing batch is followed by one structure batch of types sampled
/// uniformly (with replacement) from those with ancestors, when the
/// structure weight is positive and a structure score is configured. Both
/// contribute to a single Adam step on `typing + λ · structure`.
pub fn train_prepared_examples(
    hierarchy: &TypeHierarchy,
    train_set: &[PreparedExample],
    dev_set: &[PreparedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::NoData("training"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::NoData("dev"));
    }
    let model_config = config.model_config(hierarchy.len());
    model_config.validate()?;

    let mut params = init_params(&model_config, config.seed);
    let mut adam_state = AdamState::new(&params);
    let adam = config.adam();
    let batcher = Batcher::new(train_set.len(), config.batch_size_typing, config.seed)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd5a0_7e11);
    let mut structure_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5712_0c70);

    let pairs = structure_pairs(hierarchy);
    let use_structure =
        config.structure_weight > 0.0 && config.structure_score_kind.is_some() && !pairs.is_empty();

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let (mut typing_batches, mut structure_batches) = (0, 0);

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in batcher.epoch(epoch as u64 - 1) {
            let masks: Vec<Option<DropoutMasks>> = batch
                .iter()
                .map(|_| {
                    (config.dropout_p > 0.0).then(|| {
                        DropoutMasks::sample(config.dropout_p, config.dim, &mut dropout_rng)
                    })
                })
                .collect();
            let typing: Vec<TypingInput<'_>> = batch
                .iter()
                .zip(&masks)
                .map(|(&i, mask)| TypingInput {
                    words: train_set[i].words.view(),
                    span: train_set[i].span,
                    gold: &train_set[i].gold,
                    dropout: mask.as_ref(),
                })
                .collect();
            let structure: Vec<StructureInput<'_>> = if use_structure {
                (0..config.batch_size_structure)
                    .map(|_| {
                        let (child, ancestors) = &pairs[structure_rng.gen_range(0..pairs.len())];
                        StructureInput {
                            child: *child,
                            ancestors,
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let objective = Objective {
                config: &model_config,
                typing: &typing,
                structure: &structure,
                structure_weight: config.structure_weight,
            };
            let (loss, grads) = objective.loss_and_grad(&params)?;
            if !loss.total.is_finite() {
                return Err(TrainError::NonFiniteLoss(epoch));
            }
            adam_step(&mut params, &grads, &mut adam_state, &adam)?;
            loss_sum += loss.total;
            batches += 1;
            typing_batches += 1;
            if use_structure {
                structure_batches += 1;
            }
        }

        let dev_map = eval::evaluate(&model_config, &params, dev_set)?.map;
        let train_loss = loss_sum / batches as f64;
        log::info!("epoch {epoch}: train_loss={train_loss:.6} dev_map={dev_map:.4}");
        history.push(EpochMetrics {
            epoch,
            train_loss,
            dev_map,
        });
        match stopper.observe(dev_map) {
            StopDecision::Improved => {
                best = params.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                log::info!("early stop after epoch {epoch}, best epoch {best_epoch}");
                break;
            }
        }
    }

    let model = Model::new(model_config, best, hierarchy.names().to_vec())?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        typing_batches,
        structure_batches,
    })
}

#[derive(Debug, Clone)]
pub struct StructureFitConfig {
    pub kind: ScoreKind,
    pub dim: usize,
    pub steps: usize,
    /// Types per step; `None` uses every type with ancestors each step.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StructureFit {
    pub types: Array2<f64>,
    pub bilinear: Option<Array2<f64>>,
    pub losses: Vec<f64>,
}

/// Fits type embeddings to the hierarchy with the structure loss alone.
pub fn fit_structure(
    hierarchy: &TypeHierarchy,
    config: &StructureFitConfig,
) -> Result<StructureFit> {
    let model_config = ModelConfig {
        dim: config.dim,
        width: 1,
        num_types: hierarchy.len(),
        mode: EncoderMode::MentionOnly,
        mention_kind: ScoreKind::Dot,
        structure_kind: Some(config.kind),
        share_bilinear: false,
    };
    model_config.validate()?;
    let pairs = structure_pairs(hierarchy);
    if pairs.is_empty() {
        return Err(TrainError::NoData("structure"));
    }
    let mut params: Params = init_params(&model_config, config.seed);
    let mut state = AdamState::new(&params);
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<StructureInput<'_>> = match config.batch_size {
            None => pairs
                .iter()
                .map(|(c, a)| StructureInput {
                    child: *c,
                    ancestors: a,
                })
                .collect(),
            Some(n) => (0..n)
                .map(|_| {
                    let (c, a) = &pairs[rng.gen_range(0..pairs.len())];
                    StructureInput {
                        child: *c,
                        ancestors: a,
                    }
                })
                .collect(),
        };
        let objective = Objective {
            config: &model_config,
            typing: &[],
            structure: &batch,
            structure_weight: 1.0,
        };
        let (loss, grads) = objective.loss_and_grad(&params)?;
        adam_step(&mut params, &grads, &mut state, &adam)?;
        losses.push(loss.structure);
    }
    Ok(StructureFit {
        types: params.types,
        bilinear: params.structure_bilinear,
        losses,
    })
}
