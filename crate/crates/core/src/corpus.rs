//! Word embeddings, mention corpora and distant-supervision labeling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchyError, TypeHierarchy, TypeSet};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding file contains no vectors")]
    EmptyEmbeddings,
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("vector for `{token}` has length {found}, table dimension is {expected}")]
    VectorLength {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid mention: {0}")]
    InvalidMention(String),
    #[error("entity `{0}` has no type in the hierarchy")]
    NoTypesInHierarchy(String),
    #[error("no examples to batch")]
    NoExamples,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Case-sensitive token to vector table. Unknown tokens map to zeros.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Array1<f64>>,
    oov: Array1<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CorpusError::ZeroDimension);
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            oov: Array1::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Array1<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(CorpusError::VectorLength {
                token,
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> &Array1<f64> {
        self.vectors.get(token).unwrap_or(&self.oov)
    }

    /// Stacks the vectors of `tokens` into an `n x d` matrix.
    pub fn sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, tok) in out.rows_mut().into_iter().zip(tokens) {
            row.assign(self.lookup(tok.as_ref()));
        }
        out
    }

    /// Reads `token v1 ... vd` lines. Later duplicates overwrite earlier ones.
    pub fn parse<R: BufRead>(reader: R, dim: usize) -> Result<Self> {
        let mut table = Self::new(dim)?;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|v| {
                    v.parse::<f64>().map_err(|_| CorpusError::Parse {
                        line: lineno,
                        message: format!("`{v}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(CorpusError::Dimension {
                    line: lineno,
                    expected: dim,
                    found: values.len(),
                });
            }
            table
                .vectors
                .insert(token.to_string(), Array1::from(values));
        }
        if table.is_empty() {
            return Err(CorpusError::EmptyEmbeddings);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::parse(open(path.as_ref())?, dim)
    }

    /// Writes the table in the text format accepted by [`parse`](Self::parse),
    /// sorted by token.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for tok in tokens {
            write!(out, "{tok}")?;
            for v in self.vectors[tok].iter() {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// A token sequence with an inclusive entity span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    tokens: Vec<String>,
    span: (usize, usize),
    entity_id: String,
}

impl Mention {
    pub fn new(
        tokens: Vec<String>,
        span: (usize, usize),
        entity_id: impl Into<String>,
    ) -> Result<Self> {
        let (start, end) = span;
        if tokens.is_empty() {
            return Err(CorpusError::InvalidMention("no tokens".into()));
        }
        if start > end || end >= tokens.len() {
            return Err(CorpusError::InvalidMention(format!(
                "span ({start}, {end}) outside {} tokens",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            span,
            entity_id: entity_id.into(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn span(&self) -> (usize, usize) {
        self.span
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn surface(&self) -> &[String] {
        &self.tokens[self.span.0..=self.span.1]
    }
}

/// A mention with its ancestor-closed gold type set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub mention: Mention,
    pub gold: TypeSet,
}

impl LabeledExample {
    /// Looks up word vectors once so training does not repeat it per epoch.
    pub fn prepare(&self, embeddings: &EmbeddingTable) -> PreparedExample {
        PreparedExample {
            words: embeddings.sequence(self.mention.tokens()),
            span: self.mention.span(),
            gold: self.gold.clone(),
        }
    }
}

/// Word vectors, span and gold set: everything the model needs.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub words: Array2<f64>,
    pub span: (usize, usize),
    pub gold: TypeSet,
}

/// Labels a mention with every hierarchy type of its entity plus all of
/// their ancestors. Names absent from the hierarchy are dropped; if nothing
/// is left the mention is rejected.
pub fn distant_label<'a, I>(
    hierarchy: &TypeHierarchy,
    entity_types: I,
    mention: Mention,
) -> Result<LabeledExample>
where
    I: IntoIterator<Item = &'a str>,
{
    let known: Vec<_> = entity_types
        .into_iter()
        .filter_map(|name| hierarchy.id(name))
        .collect();
    if known.is_empty() {
        return Err(CorpusError::NoTypesInHierarchy(mention.entity_id.clone()));
    }
    let gold = hierarchy.closure_of_set(known)?;
    Ok(LabeledExample { mention, gold })
}

#[derive(Debug, Serialize, Deserialize)]
struct MentionRecord {
    tokens: Vec<String>,
    span: [usize; 2],
    entity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    types: Option<Vec<String>>,
}

/// One corpus line: a mention and, when present, its raw type names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub mention: Mention,
    pub types: Option<Vec<String>>,
}

/// Parses one corpus line, either a JSON object or the tab-separated form
/// `entity_id<TAB>t1<TAB>t2<TAB>tokens<TAB>types`.
pub fn parse_record(line: &str, lineno: usize) -> Result<CorpusRecord> {
    let parse_err = |message: String| CorpusError::Parse {
        line: lineno,
        message,
    };
    let trimmed = line.trim();
    if trimmed.starts_with('{') {
        let rec: MentionRecord =
            serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
        let mention = Mention::new(rec.tokens, (rec.span[0], rec.span[1]), rec.entity_id)
            .map_err(|e| parse_err(e.to_string()))?;
        return Ok(CorpusRecord {
            mention,
            types: rec.types,
        });
    }
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(parse_err(format!(
            "expected 4 or 5 tab-separated fields, got {}",
            fields.len()
        )));
    }
    let index = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| parse_err(format!("`{s}` is not a token index")))
    };
    let span = (index(fields[1])?, index(fields[2])?);
    let tokens = fields[3].split_whitespace().map(str::to_string).collect();
    let mention =
        Mention::new(tokens, span, fields[0].trim()).map_err(|e| parse_err(e.to_string()))?;
    let types = fields.get(4).map(|t| {
        t.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    });
    Ok(CorpusRecord { mention, types })
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_record(&line, lineno)?);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    parse_corpus(open(path.as_ref())?)
}

/// Writes one JSON line per example, with the gold set as type names in
/// ascending index order.
pub fn write_labeled<W: Write>(
    mut out: W,
    hierarchy: &TypeHierarchy,
    examples: &[LabeledExample],
) -> Result<()> {
    for ex in examples {
        let types = ex
            .gold
            .iter()
            .map(|&t| hierarchy.name(t).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let rec = MentionRecord {
            tokens: ex.mention.tokens.clone(),
            span: [ex.mention.span.0, ex.mention.span.1],
            entity_id: ex.mention.entity_id.clone(),
            types: Some(types),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: PathBuf::from("<output>"),
            source,
        })?;
    }
    Ok(())
}

/// Loads a labeled corpus, re-closing each type list under `hierarchy`.
/// Records without any in-hierarchy type are skipped; the count of skipped
/// records is returned alongside the examples.
pub fn load_labeled(
    path: impl AsRef<Path>,
    hierarchy: &TypeHierarchy,
) -> Result<(Vec<LabeledExample>, usize)> {
    let records = load_corpus(path)?;
    label_records(records, hierarchy, None)
}

/// Applies [`distant_label`] to corpus records. Types come from the record
/// itself or, when it has none, from `entities`.
pub fn label_records(
    records: Vec<CorpusRecord>,
    hierarchy: &TypeHierarchy,
    entities: Option<&crate::hierarchy::EntityTypeTable>,
) -> Result<(Vec<LabeledExample>, usize)> {
    let mut examples = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for rec in records {
        let types: Vec<String> = match (rec.types, entities) {
            (Some(types), _) => types,
            (None, Some(table)) => table
                .get(rec.mention.entity_id())
                .map(|s| s.iter().cloned().collect())
                .unwrap_or_default(),
            (None, None) => Vec::new(),
        };
        match distant_label(hierarchy, types.iter().map(String::as_str), rec.mention) {
            Ok(ex) => examples.push(ex),
            Err(CorpusError::NoTypesInHierarchy(entity)) => {
                log::debug!("skipping mention of `{entity}`: no hierarchy types");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((examples, skipped))
}

/// Seeded minibatch schedule over `len` items. Epoch `e` shuffles with
/// seed `seed + e`; the last batch may be short.
#[derive(Debug, Clone)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(CorpusError::NoExamples);
        }
        if batch_size == 0 {
            return Err(CorpusError::ZeroBatchSize);
        }
        Ok(Self {
            len,
            batch_size,
            seed,
        })
    }

    /// Index batches for one epoch.
    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch));
        order.shuffle(&mut rng);
        let size = self.batch_size;
        (0..self.len.div_ceil(size)).map(move |b| {
            let end = ((b + 1) * size).min(order.len());
            order[b * size..end].to_vec()
        })
    }
}

/// Shuffled minibatches of `examples` for one epoch.
pub fn batch_iter<T>(
    examples: &[T],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<&T>>> {
    let batcher = Batcher::new(examples.len(), batch_size, seed)?;
    Ok(batcher
        .epoch(epoch)
        .map(move |idx| idx.into_iter().map(|i| &examples[i]).collect()))
}
