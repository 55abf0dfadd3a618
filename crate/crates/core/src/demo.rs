//! End-to-end zero-shot pipeline on generated data.
//!
//! A source task with a planted specialization map trains an AuxGAN
//! generator. A target language is built from the same concepts under an
//! unknown rotation; it is aligned to the source without supervision,
//! refined with Procrustes, and specialized by the source generator. Every
//! target word has an oracle vector, so the result can be scored directly.

use log::info;
use serde::{Deserialize, Serialize};

use crate::auxgan::{train_auxgan, AuxGanConfig, AuxGanLogRecord};
use crate::embed_io::{cosine, EmbeddingSpace};
use crate::error::Result;
use crate::nn::MlpNetwork;
use crate::postspec::mean_cosine;
use crate::synthetic::{map_task, transfer_task, SyntheticConfig};
use crate::xling::{
    adv_align, refine, zero_shot_specialize, AlignConfig, AlignLogRecord, AlignmentMap,
    RefinementRecord,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub data: SyntheticConfig,
    pub auxgan: AuxGanConfig,
    pub align: AlignConfig,
}

impl Default for DemoConfig {
    /// Network sizes and iteration counts scaled for a 16-dimensional toy
    /// problem that trains in minutes on one core.
    fn default() -> Self {
        let mut auxgan = AuxGanConfig::default();
        auxgan.base.generator.hidden_size = 128;
        auxgan.base.iterations_per_epoch = Some(1_000);
        auxgan.adversarial.discriminator.hidden_size = 128;

        let mut align = AlignConfig::default();
        align.epochs = 1;
        align.iterations_per_epoch = 5_000;
        align.map_learning_rate = 0.5;
        align.discriminator.hidden_size = 128;
        align.discriminator.input_dropout = 0.1;
        align.patience = align.checks_per_epoch * align.epochs;

        DemoConfig {
            data: SyntheticConfig::default(),
            auxgan,
            align,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.auxgan.validate()?;
        self.align.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    /// Mean cosine of the generator's output to the planted map on unseen
    /// source words.
    pub source_heldout_cosine: f64,
    /// Distance `||W - W*||_F` to the true alignment before refinement.
    pub adversarial_map_error: f64,
    pub refined_map_error: f64,
    pub refinements: Vec<RefinementRecord>,
    /// Mean cosine to the oracle on target words whose concept was unseen.
    pub transfer_heldout_cosine: f64,
    pub transfer_heldout_words: usize,
}

#[derive(Clone, Debug)]
pub struct DemoOutcome {
    pub report: DemoReport,
    pub generator: MlpNetwork,
    pub map: AlignmentMap,
    pub source: EmbeddingSpace,
    pub target: EmbeddingSpace,
    pub specialized_target: EmbeddingSpace,
    pub auxgan_log: Vec<AuxGanLogRecord>,
    pub align_log: Vec<AlignLogRecord>,
}

fn frobenius_distance(a: &AlignmentMap, truth: &ndarray::Array2<f64>) -> f64 {
    (&a.w - truth).iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn run_demo(cfg: &DemoConfig, seed: u64) -> Result<DemoOutcome> {
    cfg.validate()?;
    let task = map_task(&cfg.data, seed)?;
    let transfer = transfer_task(&task, &cfg.data, seed.wrapping_add(1))?;
    let source = task.source_space()?;
    // Target rows are latent rows times Rᵀ, so the true map is W = Rᵀ.
    let true_map = transfer.language_rotation.t().to_owned();

    info!("demo: training generator on {} pairs", task.seen.len());
    let gan = train_auxgan(&task.seen, &cfg.auxgan, seed.wrapping_add(2))?;
    let source_heldout_cosine = if task.unseen.is_empty() {
        f64::NAN
    } else {
        mean_cosine(&gan.generator, &task.unseen)?
    };
    info!("demo: source held-out cosine {source_heldout_cosine:.4}");

    let aligned = adv_align(&source, &transfer.target, &cfg.align, seed.wrapping_add(3))?;
    let (map, refinements) = refine(&source, &transfer.target, &aligned.map, &cfg.align)?;
    let adversarial_map_error = frobenius_distance(&aligned.map, &true_map);
    let refined_map_error = frobenius_distance(&map, &true_map);
    info!("demo: map error {adversarial_map_error:.4} adversarial, {refined_map_error:.4} refined");

    let specialized_target = zero_shot_specialize(&map, &transfer.target, &gan.generator)?;
    let mut total = 0.0;
    for &row in &transfer.held_out {
        total += cosine(specialized_target.row(row), transfer.oracle.row(row))?;
    }
    let n = transfer.held_out.len();
    let transfer_heldout_cosine = if n == 0 { f64::NAN } else { total / n as f64 };
    info!("demo: zero-shot held-out cosine {transfer_heldout_cosine:.4} over {n} words");

    Ok(DemoOutcome {
        report: DemoReport {
            seed,
            source_heldout_cosine,
            adversarial_map_error,
            refined_map_error,
            refinements,
            transfer_heldout_cosine,
            transfer_heldout_words: n,
        },
        generator: gan.generator,
        map,
        source,
        target: transfer.target,
        specialized_target,
        auxgan_log: gan.log,
        align_log: aligned.log,
    })
}
