use std::path::Path;

use anyhow::{Context, Result};
use auxspec::attract_repel::{mean_pair_cosine, specialize};
use auxspec::auxgan::train_auxgan;
use auxspec::constraints::{index_pairs, load_constraints, LoadOptions};
use auxspec::demo::run_demo;
use auxspec::embed_io::{load_embeddings, save_embeddings, EmbeddingSpace};
use auxspec::eval::{eval_similarity, load_similarity, load_simplification, ls_accuracy};
use auxspec::nn::{load_network, save_network};
use auxspec::postspec::{apply_map, train_postspec, TrainingPairs};
use auxspec::xling::{adv_align, load_map, refine, save_map, zero_shot_specialize};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, PipelineConfig};
use crate::outputs::Outputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Specialize,
    PostspecTrain,
    PostspecApply,
    AuxganTrain,
    Align,
    Transfer,
    EvalSim,
    EvalLs,
    DemoSynthetic,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Specialize => "specialize",
            Stage::PostspecTrain => "postspec-train",
            Stage::PostspecApply => "postspec-apply",
            Stage::AuxganTrain => "auxgan-train",
            Stage::Align => "align",
            Stage::Transfer => "transfer",
            Stage::EvalSim => "eval-sim",
            Stage::EvalLs => "eval-ls",
            Stage::DemoSynthetic => "demo-synthetic",
        }
    }
}

fn require<'a>(value: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
    value.as_deref().ok_or_else(|| {
        ConfigError(format!(
            "missing `io.{key}`: pass --{} or set it in the config",
            key.replace('_', "-")
        ))
    })
}

/// Paths a stage needs, checked before any work starts.
fn required_inputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Specialize => &["embeddings", "attract", "repel"],
        Stage::PostspecTrain | Stage::AuxganTrain => &["embeddings", "specialized"],
        Stage::PostspecApply => &["embeddings", "generator"],
        Stage::Align => &["source", "target"],
        Stage::Transfer => &["map", "target", "generator"],
        Stage::EvalSim | Stage::EvalLs => &["embeddings", "dataset"],
        Stage::DemoSynthetic => &[],
    }
}

fn io_field<'a>(cfg: &'a PipelineConfig, key: &str) -> &'a Option<std::path::PathBuf> {
    let io = &cfg.io;
    match key {
        "embeddings" => &io.embeddings,
        "specialized" => &io.specialized,
        "attract" => &io.attract,
        "repel" => &io.repel,
        "generator" => &io.generator,
        "map" => &io.map,
        "source" => &io.source,
        "target" => &io.target,
        "dataset" => &io.dataset,
        other => unreachable!("unknown io field {other}"),
    }
}

pub fn check(stage: Stage, cfg: &PipelineConfig) -> Result<(), ConfigError> {
    cfg.validate()?;
    require(&cfg.io.out_dir, "out_dir")?;
    for key in required_inputs(stage) {
        require(io_field(cfg, key), key)?;
    }
    Ok(())
}

fn path<'a>(cfg: &'a PipelineConfig, key: &str) -> &'a Path {
    io_field(cfg, key).as_deref().expect("checked before the run")
}

fn load_space(cfg: &PipelineConfig, key: &str) -> Result<EmbeddingSpace> {
    let p = path(cfg, key);
    let space = load_embeddings(p, cfg.io.vocab_limit)
        .with_context(|| format!("loading embeddings from {}", p.display()))?;
    info!("loaded {} vectors of dimension {} from {}", space.len(), space.dim(), p.display());
    Ok(space)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    result: T,
}

/// Run one stage. The effective config goes next to the outputs, and
/// nothing is left behind if the stage fails.
pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    check(stage, cfg)?;
    let hash = cfg.hash();
    info!("{}: seed {} config {}", stage.name(), cfg.seed, hash);
    let mut out = Outputs::new(cfg.io.out_dir.as_deref().expect("checked"))?;
    out.write_text("config.toml", &cfg.to_toml())?;
    let result = execute(stage, cfg, &mut out)?;
    out.write_json(
        "result.json",
        &Envelope {
            command: stage.name(),
            seed: cfg.seed,
            config_hash: &hash,
            result,
        },
    )?;
    out.commit();
    Ok(())
}

fn execute(stage: Stage, cfg: &PipelineConfig, out: &mut Outputs) -> Result<serde_json::Value> {
    let seed = cfg.seed;
    Ok(match stage {
        Stage::Specialize => {
            let space = load_space(cfg, "embeddings")?;
            let opts = LoadOptions {
                strip_language_prefix: cfg.io.strip_language_prefix,
            };
            let (cs, report) =
                load_constraints(path(cfg, "attract"), path(cfg, "repel"), &space, opts)?;
            info!(
                "constraints: {} attract and {} repel kept ({} out of vocabulary)",
                report.attract_kept, report.repel_kept, report.out_of_vocabulary
            );
            let attract = index_pairs(&cs.attract, &space);
            let repel = index_pairs(&cs.repel, &space);
            let outcome = specialize(&space, &cs, &cfg.attract_repel, seed)?;
            save_embeddings(&outcome.space, out.file("specialized.vec"))?;
            out.write_jsonl("train_log.jsonl", &outcome.log)?;
            json!({
                "constraints": report,
                "attract_cosine_before": mean_pair_cosine(&space, &attract),
                "attract_cosine_after": mean_pair_cosine(&outcome.space, &attract),
                "repel_cosine_before": mean_pair_cosine(&space, &repel),
                "repel_cosine_after": mean_pair_cosine(&outcome.space, &repel),
            })
        }
        Stage::PostspecTrain | Stage::AuxganTrain => {
            let original = load_space(cfg, "embeddings")?;
            let specialized = load_space(cfg, "specialized")?;
            let pairs = TrainingPairs::from_spaces(&original, &specialized)?;
            info!("{} training pairs (words changed by specialization)", pairs.len());
            let (generator, best_validation) = if stage == Stage::AuxganTrain {
                let o = train_auxgan(&pairs, &cfg.auxgan(), seed)?;
                out.write_jsonl("train_log.jsonl", &o.log)?;
                (o.generator, o.best_validation)
            } else {
                let o = train_postspec(&pairs, &cfg.postspec, seed)?;
                out.write_jsonl("train_log.jsonl", &o.log)?;
                (o.generator, o.best_validation)
            };
            save_network(&generator, out.file("generator.ckpt"))?;
            json!({ "pairs": pairs.len(), "best_validation": best_validation })
        }
        Stage::PostspecApply => {
            let generator = load_network(path(cfg, "generator"))?;
            let space = load_space(cfg, "embeddings")?;
            let mapped = apply_map(&generator, &space)?;
            save_embeddings(&mapped, out.file("specialized.vec"))?;
            json!({ "words": mapped.len() })
        }
        Stage::Align => {
            let source = load_space(cfg, "source")?;
            let target = load_space(cfg, "target")?;
            let aligned = adv_align(&source, &target, &cfg.align, seed)?;
            out.write_jsonl("align_log.jsonl", &aligned.log)?;
            let (map, refinements) = refine(&source, &target, &aligned.map, &cfg.align)?;
            save_map(&map, out.file("map.txt"))?;
            json!({
                "adversarial_best_metric": aligned.best_metric,
                "refinements": refinements,
                "orthogonality_error": map.orthogonality_error(),
            })
        }
        Stage::Transfer => {
            let map = load_map(path(cfg, "map"))?;
            let generator = load_network(path(cfg, "generator"))?;
            let target = load_space(cfg, "target")?;
            let specialized = zero_shot_specialize(&map, &target, &generator)?;
            save_embeddings(&specialized, out.file("specialized.vec"))?;
            json!({ "words": specialized.len() })
        }
        Stage::EvalSim => {
            let space = load_space(cfg, "embeddings")?;
            let dataset = load_similarity(path(cfg, "dataset"))?;
            let report = eval_similarity(&space, &dataset)?;
            info!("spearman {:.4} at coverage {:.3}", report.rho, report.coverage);
            serde_json::to_value(report)?
        }
        Stage::EvalLs => {
            let space = load_space(cfg, "embeddings")?;
            let dataset = load_simplification(path(cfg, "dataset"))?;
            let report = ls_accuracy(&space, &dataset, cfg.eval.n_candidates)?;
            info!(
                "accuracy {:.4} ({} of {}, {} out of vocabulary)",
                report.accuracy, report.correct, report.total, report.skipped
            );
            serde_json::to_value(report)?
        }
        Stage::DemoSynthetic => {
            let demo = run_demo(&cfg.demo, seed)?;
            save_embeddings(&demo.source, out.file("source.vec"))?;
            save_embeddings(&demo.target, out.file("target.vec"))?;
            save_embeddings(&demo.specialized_target, out.file("specialized_target.vec"))?;
            save_network(&demo.generator, out.file("generator.ckpt"))?;
            save_map(&demo.map, out.file("map.txt"))?;
            out.write_jsonl("auxgan_log.jsonl", &demo.auxgan_log)?;
            out.write_jsonl("align_log.jsonl", &demo.align_log)?;
            serde_json::to_value(demo.report)?
        }
    })
}
