//! Small generated typing task used by tests and demos.
//!
//! The hierarchy has two roots, each with two children, each of those with
//! two children; six of the eight depth-3 types get one child each, and one
//! depth-4 type has a second parent. That gives 20 types, maximum depth 4
//! and 8 leaves (the six depth-4 types plus the two childless depth-3
//! types).
//!
//! Every leaf owns two surface words, a context cue and one surface word
//! it shares with a leaf under the other root. A mention names its leaf
//! either with its own words or, some of the time, only with the shared
//! word. The context cue is always somewhere in the sentence, so the task is
//! fully determined by the tokens but only partly by the mention span.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::distributions::Uniform;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    distant_label, write_labeled, CorpusError, EmbeddingTable, LabeledExample, Mention,
};
use crate::hierarchy::{LinkKind, NamedLink, TypeHierarchy};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub mentions: usize,
    pub train: usize,
    pub dim: usize,
    /// Probability that a mention span is only the shared surface word.
    pub ambiguous_rate: f64,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mentions: 500,
            train: 400,
            dim: 16,
            ambiguous_rate: 0.3,
            filler_words: 40,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub hierarchy: TypeHierarchy,
    pub links: Vec<NamedLink>,
    pub embeddings: EmbeddingTable,
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    /// Leaf type names, sorted.
    pub leaves: Vec<String>,
}

/// Paths written by [`SyntheticData::write_files`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub links: PathBuf,
    pub embeddings: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
}

/// The 20-type link list.
pub fn synthetic_links() -> Vec<NamedLink> {
    let mut links = Vec::new();
    let child = |links: &mut Vec<NamedLink>, c: String, p: &str| {
        links.push(NamedLink::new(c, p, LinkKind::ChildOf));
    };
    for r in 0..2 {
        let root = format!("/r{r}");
        for c in 0..2 {
            let mid = format!("{root}/c{c}");
            child(&mut links, mid.clone(), &root);
            for g in 0..2 {
                let low = format!("{mid}/g{g}");
                child(&mut links, low.clone(), &mid);
            }
        }
    }
    // six of the eight depth-3 types get one child
    let with_child = [
        "/r0/c0/g0",
        "/r0/c0/g1",
        "/r0/c1/g0",
        "/r1/c0/g0",
        "/r1/c0/g1",
        "/r1/c1/g0",
    ];
    for g in with_child {
        child(&mut links, format!("{g}/leaf"), g);
    }
    // a second parent inside the same subtree
    child(&mut links, "/r0/c0/g0/leaf".to_string(), "/r0/c0/g1");
    links
}

fn leaf_names(h: &TypeHierarchy) -> Vec<String> {
    // leaves are types that are nobody's parent
    let mut is_parent = vec![false; h.len()];
    for link in h.links() {
        is_parent[link.parent.index()] = true;
    }
    let mut leaves: Vec<String> = h
        .types()
        .filter(|t| !is_parent[t.index()])
        .map(|t| h.name(t).expect("own type").to_string())
        .collect();
    leaves.sort();
    leaves
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData, CorpusError> {
    let links = synthetic_links();
    let hierarchy = TypeHierarchy::from_links(&links)?;
    let leaves = leaf_names(&hierarchy);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let own = |i: usize, k: usize| format!("w{i}_{k}");
    let cue = |i: usize| format!("cue{i}");
    // leaves are sorted, so the /r0 half comes first and pairing i with
    // i + half crosses roots
    let half = leaves.len() / 2;
    let shared = |i: usize| format!("s{}", i % half);
    let fillers: Vec<String> = (0..config.filler_words).map(|k| format!("f{k}")).collect();

    let mut vocab: Vec<String> = fillers.clone();
    for i in 0..leaves.len() {
        vocab.extend([own(i, 0), own(i, 1), cue(i)]);
    }
    vocab.extend((0..half).map(|i| format!("s{i}")));
    let mut embeddings = EmbeddingTable::new(config.dim)?;
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    for word in &vocab {
        let v: Array1<f64> = (0..config.dim).map(|_| rng.sample(dist)).collect();
        embeddings.insert(word.clone(), v)?;
    }

    let mut examples = Vec::with_capacity(config.mentions);
    for m in 0..config.mentions {
        let leaf = m % leaves.len();
        let surface: Vec<String> = if rng.gen_bool(config.ambiguous_rate) {
            vec![shared(leaf)]
        } else {
            let mut words = vec![own(leaf, rng.gen_range(0..2))];
            if rng.gen_bool(0.5) {
                words.push(own(leaf, rng.gen_range(0..2)));
            }
            if rng.gen_bool(0.3) {
                words.push(shared(leaf));
            }
            words.shuffle(&mut rng);
            words
        };
        let before = rng.gen_range(1..4);
        let after = rng.gen_range(1..4);
        let mut tokens: Vec<String> = (0..before)
            .map(|_| fillers.choose(&mut rng).expect("fillers").clone())
            .collect();
        let start = tokens.len();
        tokens.extend(surface.iter().cloned());
        let end = tokens.len() - 1;
        tokens.extend((0..after).map(|_| fillers.choose(&mut rng).expect("fillers").clone()));
        // cue goes on either side of the mention, never inside it
        if rng.gen_bool(0.5) {
            tokens.insert(rng.gen_range(0..=start.saturating_sub(1)), cue(leaf));
            let mention = Mention::new(tokens, (start + 1, end + 1), format!("e{leaf}"))?;
            examples.push(distant_label(&hierarchy, [leaves[leaf].as_str()], mention)?);
        } else {
            let at = rng.gen_range(end + 1..=tokens.len());
            tokens.insert(at, cue(leaf));
            let mention = Mention::new(tokens, (start, end), format!("e{leaf}"))?;
            examples.push(distant_label(&hierarchy, [leaves[leaf].as_str()], mention)?);
        }
    }
    examples.shuffle(&mut rng);
    let dev = examples.split_off(config.train.min(examples.len()));
    Ok(SyntheticData {
        hierarchy,
        links,
        embeddings,
        train: examples,
        dev,
        leaves,
    })
}

impl SyntheticData {
    /// Writes the link list, embeddings and the two labeled splits into
    /// `dir` as `links.tsv`, `embeddings.txt`, `train.jsonl`, `dev.jsonl`.
    pub fn write_files(&self, dir: &Path) -> Result<SyntheticFiles, CorpusError> {
        let files = SyntheticFiles {
            links: dir.join("links.tsv"),
            embeddings: dir.join("embeddings.txt"),
            train: dir.join("train.jsonl"),
            dev: dir.join("dev.jsonl"),
        };
        let create = |path: &Path| {
            File::create(path)
                .map(BufWriter::new)
                .map_err(|source| CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                })
        };
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };

        let mut out = create(&files.links)?;
        for link in &self.links {
            writeln!(out, "{link}").map_err(io(&files.links))?;
        }
        out.flush().map_err(io(&files.links))?;

        let mut out = create(&files.embeddings)?;
        self.embeddings
            .write(&mut out)
            .map_err(io(&files.embeddings))?;
        out.flush().map_err(io(&files.embeddings))?;

        for (path, split) in [(&files.train, &self.train), (&files.dev, &self.dev)] {
            let mut out = create(path)?;
            write_labeled(&mut out, &self.hierarchy, split)?;
            out.flush().map_err(io(path))?;
        }
        Ok(files)
    }
}
