//! `hiertype` command-line pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Set
//! `HIERTYPE_LOG` to `error`, `info` or `debug` for diagnostics on stderr.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hiertype::corpus::{label_records, load_corpus, load_labeled, write_labeled, EmbeddingTable};
use hiertype::eval::evaluate;
use hiertype::hierarchy::{derive_cooccurrence_links, EntityTypeTable, TypeHierarchy};
use hiertype::model::Model;
use hiertype::training::{parse_key_values, train, write_history, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hiertype",
    version,
    about = "Fine-grained entity typing over a type hierarchy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a link file, validate it and write it back with ancestor sets.
    BuildHierarchy {
        #[arg(long)]
        links: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print type count, depth and link counts.
    Stats {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Derive child -> parent links from entity type co-occurrence.
    DeriveLinks {
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach ancestor-closed type sets to corpus mentions.
    Label {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Entity type table used for records without their own types.
        #[arg(long)]
        entities: Option<PathBuf>,
    },
    /// Train a model and write the best-dev checkpoint.
    Train {
        /// `key=value` lines; `embeddings=<path>` names the word vectors.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override one config key, e.g. `--set learning_rate=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write the per-epoch history here instead of stdout.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compute MAP of a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Write `mention_index<TAB>ap` lines here.
        #[arg(long)]
        per_mention: Option<PathBuf>,
    },
    /// Rank types for one mention.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Whitespace-tokenized sentence.
        #[arg(long)]
        text: String,
        /// Inclusive token indices of the mention.
        #[arg(long, num_args = 2, value_names = ["START", "END"])]
        span: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
}

fn load_embeddings(model: &Model, flag: Option<&Path>) -> Result<EmbeddingTable> {
    let path = match (flag, &model.embeddings) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!("checkpoint names no embeddings file; pass --embeddings"),
    };
    Ok(EmbeddingTable::load(&path, model.config.dim)?)
}

fn check_types(model: &Model, hierarchy: &TypeHierarchy) -> Result<()> {
    if model.type_names != hierarchy.names() {
        bail!(
            "checkpoint has {} types that do not match the {} hierarchy types",
            model.type_names.len(),
            hierarchy.len()
        );
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::BuildHierarchy { links, out } => {
            let h = TypeHierarchy::load(&links)?;
            let mut w = create(&out)?;
            h.write(&mut w)?;
            w.flush()?;
            log::info!("{} types written to {}", h.len(), out.display());
        }
        Command::Stats { hierarchy, json } => {
            let stats = TypeHierarchy::load(&hierarchy)?.stats();
            if json {
                writeln!(stdout, "{}", stats.to_json())?;
            } else {
                writeln!(stdout, "{stats}")?;
            }
        }
        Command::DeriveLinks {
            entities,
            threshold,
            out,
        } => {
            let table = EntityTypeTable::load(&entities)?;
            let links = derive_cooccurrence_links(&table, threshold, None)?;
            let mut w = create(&out)?;
            for link in &links {
                writeln!(w, "{link}")?;
            }
            w.flush()?;
            writeln!(stdout, "links={}", links.len())?;
        }
        Command::Label {
            hierarchy,
            corpus,
            out,
            entities,
        } => {
            let h = TypeHierarchy::load(&hierarchy)?;
            let table = entities.as_deref().map(EntityTypeTable::load).transpose()?;
            let (examples, skipped) = label_records(load_corpus(&corpus)?, &h, table.as_ref())?;
            let mut w = create(&out)?;
            write_labeled(&mut w, &h, &examples)?;
            w.flush()?;
            writeln!(stdout, "labeled={} skipped={skipped}", examples.len())?;
        }
        Command::Train {
            config,
            hierarchy,
            train: train_path,
            dev,
            out,
            embeddings,
            seed,
            overrides,
            history,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("cannot read {}", config.display()))?;
            let mut cfg = TrainConfig::default();
            let mut emb_path = None;
            let pairs = parse_key_values(&text)?.into_iter().chain(
                overrides
                    .iter()
                    .map(|kv| match kv.split_once('=') {
                        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
                        None => bail!("--set expects KEY=VALUE, got `{kv}`"),
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
            for (k, v) in pairs {
                if k == "embeddings" {
                    // relative paths in the config file are relative to it
                    let p = PathBuf::from(&v);
                    emb_path = Some(match config.parent() {
                        Some(dir) if p.is_relative() => dir.join(p),
                        _ => p,
                    });
                } else {
                    cfg.set(&k, &v)?;
                }
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let emb_path = embeddings
                .or(emb_path)
                .context("no embeddings: pass --embeddings or set embeddings= in the config")?;
            let h = TypeHierarchy::load(&hierarchy)?;
            let emb = EmbeddingTable::load(&emb_path, cfg.dim)?;
            let (train_set, skipped_train) = load_labeled(&train_path, &h)?;
            let (dev_set, skipped_dev) = load_labeled(&dev, &h)?;
            if skipped_train + skipped_dev > 0 {
                log::warn!("skipped {skipped_train} train and {skipped_dev} dev records without hierarchy types");
            }
            let outcome = train(&h, &train_set, &dev_set, &emb, &cfg)?;
            let mut model = outcome.model;
            model.embeddings = Some(emb_path.to_string_lossy().into_owned());
            model.save(&out)?;
            match history {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_history(&mut w, &outcome.history)?;
                    w.flush()?;
                }
                None => write_history(&mut stdout, &outcome.history)?,
            }
            let best = outcome.history[outcome.best_epoch - 1];
            writeln!(
                stdout,
                "best_epoch={} dev_map={:?}",
                best.epoch, best.dev_map
            )?;
        }
        Command::Eval {
            checkpoint,
            corpus,
            hierarchy,
            embeddings,
            per_mention,
        } => {
            let model = Model::load(&checkpoint)?;
            let h = TypeHierarchy::load(&hierarchy)?;
            check_types(&model, &h)?;
            let emb = load_embeddings(&model, embeddings.as_deref())?;
            let (examples, skipped) = load_labeled(&corpus, &h)?;
            if skipped > 0 {
                log::warn!("skipped {skipped} records without hierarchy types");
            }
            let prepared: Vec<_> = examples.iter().map(|e| e.prepare(&emb)).collect();
            let report = evaluate(&model.config, &model.params, &prepared)?;
            if let Some(path) = per_mention {
                let mut w = create(&path)?;
                report.write_per_mention(&mut w)?;
                w.flush()?;
            }
            writeln!(stdout, "{}", report.summary())?;
        }
        Command::Score {
            checkpoint,
            text,
            span,
            top,
            embeddings,
        } => {
            let model = Model::load(&checkpoint)?;
            let emb = load_embeddings(&model, embeddings.as_deref())?;
            let tokens: Vec<&str> = text.split_whitespace().collect();
            let (start, end) = (span[0], span[1]);
            if start > end || end >= tokens.len() {
                bail!(
                    "span {start} {end} outside the {} tokens of --text",
                    tokens.len()
                );
            }
            let words = emb.sequence(&tokens);
            for (rank, (t, score)) in model
                .rank(words.view(), (start, end))?
                .into_iter()
                .take(top)
                .enumerate()
            {
                writeln!(
                    stdout,
                    "{}\t{}\t{score:.6}",
                    rank + 1,
                    model.type_names[t.index()]
                )?;
            }
        }
    }
    stdout.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIERTYPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
