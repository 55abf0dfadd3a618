//! `auxspec`: specialize word embeddings with lexical constraints,
//! generalize the specialization to unseen words, and transfer it to
//! another language without supervision.
//!
//! Exit status is 0 on success, 1 when a stage fails at run time and 2 for
//! configuration or usage errors.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use commands::Stage;
use config::{ConfigError, PipelineConfig};

#[derive(Parser)]
#[command(name = "auxspec", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags take precedence over its values.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override any config value, e.g. `--set postspec.margin=1.0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all outputs, including the effective config.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Read at most this many vectors from each embedding file.
    #[arg(long, global = true)]
    vocab_limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fine-tune constrained words with ATTRACT-REPEL.
    Specialize {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Synonym pairs, one whitespace-separated pair per line.
        #[arg(long)]
        attract: Option<PathBuf>,
        /// Antonym pairs, one whitespace-separated pair per line.
        #[arg(long)]
        repel: Option<PathBuf>,
        /// Strip language prefixes such as `en_` from constraint words.
        #[arg(long)]
        strip_language_prefix: bool,
    },
    /// Train the max-margin post-specialization map.
    PostspecTrain {
        /// Original distributional space.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Output of `specialize` for the same vocabulary.
        #[arg(long)]
        specialized: Option<PathBuf>,
    },
    /// Apply a trained generator to every word of a space.
    PostspecApply {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train the post-specialization map adversarially.
    AuxganTrain {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        specialized: Option<PathBuf>,
    },
    /// Learn an orthogonal map from a target space onto a source space.
    Align {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Specialize a target-language space through an alignment map.
    Transfer {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Spearman correlation on a word similarity dataset.
    EvalSim {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Tab-separated `word1 word2 score` lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Lexical simplification accuracy.
    EvalLs {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Tab-separated `sentence index substitutes` lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Number of substitution candidates to rank.
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Run the whole zero-shot pipeline on generated data.
    DemoSynthetic,
}

fn set(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn resolve(command: Command, common: Common) -> Result<(Stage, PipelineConfig), ConfigError> {
    let mut cfg = PipelineConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    set(&mut cfg.io.out_dir, common.out);
    if common.vocab_limit.is_some() {
        cfg.io.vocab_limit = common.vocab_limit;
    }
    let io = &mut cfg.io;
    let stage = match command {
        Command::Specialize {
            embeddings,
            attract,
            repel,
            strip_language_prefix,
        } => {
            set(&mut io.embeddings, embeddings);
            set(&mut io.attract, attract);
            set(&mut io.repel, repel);
            io.strip_language_prefix |= strip_language_prefix;
            Stage::Specialize
        }
        Command::PostspecTrain {
            embeddings,
            specialized,
        } => {
            set(&mut io.embeddings, embeddings);
            set(&mut io.specialized, specialized);
            Stage::PostspecTrain
        }
        Command::PostspecApply {
            generator,
            embeddings,
        } => {
            set(&mut io.generator, generator);
            set(&mut io.embeddings, embeddings);
            Stage::PostspecApply
        }
        Command::AuxganTrain {
            embeddings,
            specialized,
        } => {
            set(&mut io.embeddings, embeddings);
            set(&mut io.specialized, specialized);
            Stage::AuxganTrain
        }
        Command::Align { source, target } => {
            set(&mut io.source, source);
            set(&mut io.target, target);
            Stage::Align
        }
        Command::Transfer {
            map,
            target,
            generator,
        } => {
            set(&mut io.map, map);
            set(&mut io.target, target);
            set(&mut io.generator, generator);
            Stage::Transfer
        }
        Command::EvalSim {
            embeddings,
            dataset,
        } => {
            set(&mut io.embeddings, embeddings);
            set(&mut io.dataset, dataset);
            Stage::EvalSim
        }
        Command::EvalLs {
            embeddings,
            dataset,
            candidates,
        } => {
            set(&mut io.embeddings, embeddings);
            set(&mut io.dataset, dataset);
            if let Some(n) = candidates {
                cfg.eval.n_candidates = n;
            }
            Stage::EvalLs
        }
        Command::DemoSynthetic => Stage::DemoSynthetic,
    };
    Ok((stage, cfg))
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || matches!(
                e.downcast_ref::<auxspec::Error>(),
                Some(auxspec::Error::InvalidConfig { .. })
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let Cli { common, command } = Cli::parse();
    let outcome = resolve(command, common)
        .map_err(anyhow::Error::from)
        .and_then(|(stage, cfg)| commands::run(stage, &cfg));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = if is_config_error(&err) { 2 } else { 1 };
            error!("{err:#}");
            ExitCode::from(code)
        }
    }
}
