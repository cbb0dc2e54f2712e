//! Forward computation: the CNN mention encoder and type-membership scores.

mod checkpoint;
mod encoder;
mod score;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use thiserror::Error;

use crate::hierarchy::TypeId;

pub use checkpoint::CHECKPOINT_MAGIC;
pub use encoder::{cnn_forward, encode_mention, surface_average, DropoutMasks, EncoderTrace};
pub use score::{
    log_sigmoid, order_energy, penalty_non_membership, rank_types, score_membership, sigmoid,
    softplus,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected vectors of dimension {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("span ({0}, {1}) is outside a sequence of {2} tokens")]
    Span(usize, usize, usize),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("bilinear scoring needs a bilinear matrix")]
    MissingBilinear,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// How membership of `x` in `y` is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreKind {
    /// Order-embedding violation energy with a hinge margin for negatives.
    Order {
        margin: f64,
    },
    Bilinear,
    Dot,
}

impl ScoreKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Order { .. } => "order",
            ScoreKind::Bilinear => "bilinear",
            ScoreKind::Dot => "dot",
        }
    }

    /// Parses `order`, `bilinear` or `dot`; `margin` is used for `order`.
    pub fn parse(name: &str, margin: f64) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "order" => Some(ScoreKind::Order { margin }),
            "bilinear" => Some(ScoreKind::Bilinear),
            "dot" => Some(ScoreKind::Dot),
            _ => None,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which inputs feed the encoder's hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Surface-form average only; the CNN half of the input is zero.
    MentionOnly,
    CnnPlusMention,
}

impl EncoderMode {
    pub fn name(self) -> &'static str {
        match self {
            EncoderMode::MentionOnly => "mention",
            EncoderMode::CnnPlusMention => "cnn",
        }
    }
}

impl FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mention" | "mention_only" => Ok(EncoderMode::MentionOnly),
            "cnn" | "cnn_plus_mention" => Ok(EncoderMode::CnnPlusMention),
            other => Err(format!("unknown encoder mode `{other}`")),
        }
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shapes and scoring choices of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Convolution window, odd.
    pub width: usize,
    pub num_types: usize,
    pub mode: EncoderMode,
    pub mention_kind: ScoreKind,
    pub structure_kind: Option<ScoreKind>,
    /// Reuse the mention bilinear matrix for the structure scorer when both
    /// are bilinear.
    pub share_bilinear: bool,
}

impl ModelConfig {
    // negated comparisons so that NaN fails
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.width == 0 || self.width.is_multiple_of(2) {
            return bad(format!("filter width must be odd, got {}", self.width));
        }
        if self.num_types == 0 {
            return bad("model needs at least one type".into());
        }
        for kind in std::iter::once(self.mention_kind).chain(self.structure_kind) {
            if let ScoreKind::Order { margin } = kind {
                if !(margin > 0.0) {
                    return bad(format!("order margin must be positive, got {margin}"));
                }
            }
        }
        Ok(())
    }

    pub fn shares_bilinear(&self) -> bool {
        self.share_bilinear
            && self.mention_kind == ScoreKind::Bilinear
            && self.structure_kind == Some(ScoreKind::Bilinear)
    }

    fn has_mention_bilinear(&self) -> bool {
        self.mention_kind == ScoreKind::Bilinear
    }

    fn has_structure_bilinear(&self) -> bool {
        self.structure_kind == Some(ScoreKind::Bilinear) && !self.shares_bilinear()
    }
}

/// CNN filter, its bias, and the two affine layers on top.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `width x dim x dim`, indexed `[offset, out, in]`.
    pub conv_filter: Array3<f64>,
    pub conv_bias: Array1<f64>,
    /// `dim x 2*dim`; input is `[surface average; cnn]`.
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weight: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(dim: usize, width: usize) -> Self {
        Self {
            conv_filter: Array3::zeros((width, dim, dim)),
            conv_bias: Array1::zeros(dim),
            hidden_weight: Array2::zeros((dim, 2 * dim)),
            hidden_bias: Array1::zeros(dim),
            output_weight: Array2::zeros((dim, dim)),
            output_bias: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.conv_bias.len()
    }

    pub fn width(&self) -> usize {
        self.conv_filter.shape()[0]
    }
}

/// Every learned tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub encoder: EncoderParams,
    /// One row per type.
    pub types: Array2<f64>,
    pub mention_bilinear: Option<Array2<f64>>,
    pub structure_bilinear: Option<Array2<f64>>,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.dim;
        Self {
            encoder: EncoderParams::zeros(d, config.width),
            types: Array2::zeros((config.num_types, d)),
            mention_bilinear: config.has_mention_bilinear().then(|| Array2::zeros((d, d))),
            structure_bilinear: config
                .has_structure_bilinear()
                .then(|| Array2::zeros((d, d))),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Matrix used by the structure scorer, which may be the mention one.
    pub fn structure_matrix(&self) -> Option<&Array2<f64>> {
        self.structure_bilinear
            .as_ref()
            .or(self.mention_bilinear.as_ref())
    }
}

/// Named flat views over a set of tensors, in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;
}

fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are in standard layout")
}

fn flat_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are in standard layout")
}

impl ParamSet for Params {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let e = &self.encoder;
        let mut out = vec![
            ("conv_filter", flat(&e.conv_filter)),
            ("conv_bias", flat(&e.conv_bias)),
            ("hidden_weight", flat(&e.hidden_weight)),
            ("hidden_bias", flat(&e.hidden_bias)),
            ("output_weight", flat(&e.output_weight)),
            ("output_bias", flat(&e.output_bias)),
            ("type_embeddings", flat(&self.types)),
        ];
        if let Some(a) = &self.mention_bilinear {
            out.push(("mention_bilinear", flat(a)));
        }
        if let Some(a) = &self.structure_bilinear {
            out.push(("structure_bilinear", flat(a)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let e = &mut self.encoder;
        let mut out = vec![
            ("conv_filter", flat_mut(&mut e.conv_filter)),
            ("conv_bias", flat_mut(&mut e.conv_bias)),
            ("hidden_weight", flat_mut(&mut e.hidden_weight)),
            ("hidden_bias", flat_mut(&mut e.hidden_bias)),
            ("output_weight", flat_mut(&mut e.output_weight)),
            ("output_bias", flat_mut(&mut e.output_bias)),
            ("type_embeddings", flat_mut(&mut self.types)),
        ];
        if let Some(a) = &mut self.mention_bilinear {
            out.push(("mention_bilinear", flat_mut(a)));
        }
        if let Some(a) = &mut self.structure_bilinear {
            out.push(("structure_bilinear", flat_mut(a)));
        }
        out
    }
}

/// A trained model: configuration, parameters and the type names its rows
/// stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub type_names: Vec<String>,
    /// Embedding file the model was trained with, if known.
    pub embeddings: Option<String>,
}

impl Model {
    pub fn new(config: ModelConfig, params: Params, type_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        if type_names.len() != config.num_types || params.types.nrows() != config.num_types {
            return Err(ModelError::Config(format!(
                "{} type names and {} type rows for {} types",
                type_names.len(),
                params.types.nrows(),
                config.num_types
            )));
        }
        Ok(Self {
            config,
            params,
            type_names,
            embeddings: None,
        })
    }

    pub fn encode(&self, words: ArrayView2<f64>, span: (usize, usize)) -> Result<Array1<f64>> {
        Ok(
            EncoderTrace::forward(&self.params.encoder, words, span, self.config.mode, None)?
                .output,
        )
    }

    /// All types ranked by mention score, best first.
    pub fn rank(&self, words: ArrayView2<f64>, span: (usize, usize)) -> Result<Vec<(TypeId, f64)>> {
        let m = self.encode(words, span)?;
        rank_types(
            self.config.mention_kind,
            m.view(),
            self.params.types.view(),
            self.params.mention_bilinear.as_ref().map(|a| a.view()),
        )
    }
}
