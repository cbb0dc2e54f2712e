//! Average precision per mention and mean average precision (MAP).
//!
//! AP is the information-retrieval variant normalized by the number of gold
//! types: `AP = (1/|gold|) * Σ_{k : ranking[k] ∈ gold} precision@k` with
//! 1-based ranks. Every type is ranked for every mention.

use std::io::Write;

use ndarray::ArrayView2;
use thiserror::Error;

use crate::corpus::PreparedExample;
use crate::hierarchy::{TypeId, TypeSet};
use crate::model::{rank_types, EncoderTrace, ModelConfig, ModelError, Params};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("nothing to evaluate")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

pub fn average_precision(ranking: &[TypeId], gold: &TypeSet) -> Result<f64> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, t) in ranking.iter().enumerate() {
        if gold.contains(t) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
            if hits == gold.len() {
                break;
            }
        }
    }
    Ok(sum / gold.len() as f64)
}

/// Per-mention AP values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_mention_ap: Vec<f64>,
    pub map: f64,
    pub mention_count: usize,
}

impl EvalReport {
    pub fn from_average_precisions(per_mention_ap: Vec<f64>) -> Result<Self> {
        if per_mention_ap.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let map = per_mention_ap.iter().sum::<f64>() / per_mention_ap.len() as f64;
        Ok(Self {
            mention_count: per_mention_ap.len(),
            map,
            per_mention_ap,
        })
    }

    /// `map=<value>` line.
    pub fn summary(&self) -> String {
        format!("map={:?}", self.map)
    }

    /// `mention_index<TAB>ap` per line.
    pub fn write_per_mention<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, ap) in self.per_mention_ap.iter().enumerate() {
            writeln!(out, "{i}\t{ap:?}")?;
        }
        Ok(())
    }
}

/// MAP over `(ranking, gold)` pairs.
pub fn mean_average_precision<'a, I>(pairs: I) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a [TypeId], &'a TypeSet)>,
{
    let aps = pairs
        .into_iter()
        .map(|(ranking, gold)| average_precision(ranking, gold))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_average_precisions(aps)
}

/// Ranks every type for one mention, best first.
pub fn rank_mention(
    config: &ModelConfig,
    params: &Params,
    words: ArrayView2<f64>,
    span: (usize, usize),
) -> Result<Vec<TypeId>> {
    let trace = EncoderTrace::forward(&params.encoder, words, span, config.mode, None)?;
    let ranked = rank_types(
        config.mention_kind,
        trace.output.view(),
        params.types.view(),
        params.mention_bilinear.as_ref().map(|a| a.view()),
    )?;
    Ok(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Scores a model on prepared examples without dropout.
pub fn evaluate(
    config: &ModelConfig,
    params: &Params,
    examples: &[PreparedExample],
) -> Result<EvalReport> {
    let aps = examples
        .iter()
        .map(|ex| {
            let ranking = rank_mention(config, params, ex.words.view(), ex.span)?;
            average_precision(&ranking, &ex.gold)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_average_precisions(aps)
}
