//! Adversarial post-specialization. The mapping `G` doubles as the generator
//! of a GAN whose discriminator `D` tells generated vectors from genuinely
//! specialized ones; `G` is trained on the adversarial loss and the
//! max-margin loss in alternation.

use log::{debug, info};
use ndarray::{ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    softmax_cross_entropy, softmax_rows, smoothed_target, Gradients, MlpNetwork, MlpSpec, Mode,
    OptimizerState, OutputKind, DEFAULT_LEAKY_SLOPE, PROBABILITY_FLOOR,
};
use crate::postspec::{
    distinct_batch, mean_cosine, mm_step, predict_chunked, prepare_pairs, LrSchedule,
    PostSpecConfig, TrainingPairs,
};

/// Class index for "generated by G".
pub const GENERATED: usize = 0;
/// Class index for "genuinely specialized".
pub const SPECIALIZED: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub slope: f64,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden_layers: 2,
            hidden_size: 2048,
            slope: DEFAULT_LEAKY_SLOPE,
            input_dropout: 0.1,
            hidden_dropout: 0.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn spec(&self, dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim: dim,
            output_dim: 2,
            hidden_layers: self.hidden_layers,
            hidden_size: self.hidden_size,
            slope: self.slope,
            input_dropout: self.input_dropout,
            hidden_dropout: self.hidden_dropout,
            output_kind: OutputKind::Softmax2,
        }
    }
}

/// Settings that only the adversarial trainer uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    /// Discriminator steps per cycle.
    pub d_steps: usize,
    pub label_smoothing: f64,
    /// Also smooth the targets of the generator's adversarial loss.
    pub smooth_generator_targets: bool,
    pub discriminator: DiscriminatorConfig,
    pub checks_per_epoch: usize,
    pub divergence_threshold: f64,
    pub divergence_patience: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            d_steps: 5,
            label_smoothing: 0.1,
            smooth_generator_targets: true,
            discriminator: DiscriminatorConfig::default(),
            checks_per_epoch: 10,
            divergence_threshold: 0.01,
            divergence_patience: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxGanConfig {
    pub base: PostSpecConfig,
    pub adversarial: AdversarialConfig,
}

impl AuxGanConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let adv = &self.adversarial;
        if adv.d_steps == 0 {
            return Err(Error::config("d_steps", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&adv.label_smoothing) {
            return Err(Error::config("label_smoothing", "must be in [0, 0.5)"));
        }
        if adv.checks_per_epoch == 0 {
            return Err(Error::config("checks_per_epoch", "must be >= 1"));
        }
        if adv.divergence_patience == 0 {
            return Err(Error::config("divergence_patience", "must be >= 1"));
        }
        adv.discriminator.spec(1).validate()
    }

    fn generator_smoothing(&self) -> f64 {
        if self.adversarial.smooth_generator_targets {
            self.adversarial.label_smoothing
        } else {
            0.0
        }
    }
}

/// Summed smoothed cross-entropy of rows of class probabilities against a
/// single label, with probabilities floored before the log.
pub fn class_cross_entropy(probs: ArrayView2<f64>, label: usize, smoothing: f64) -> f64 {
    let target = smoothed_target(label, smoothing);
    probs
        .outer_iter()
        .map(|p| {
            -(0..2)
                .map(|c| target[c] * p[c].max(PROBABILITY_FLOOR).ln())
                .sum::<f64>()
        })
        .sum()
}

/// Discriminator loss from D's class probabilities on a generated and a
/// real batch.
pub fn d_loss_from_probs(
    generated: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
) -> f64 {
    class_cross_entropy(generated, GENERATED, smoothing)
        + class_cross_entropy(real, SPECIALIZED, smoothing)
}

/// Generator loss: the discriminator loss with the labels swapped.
pub fn g_adv_loss_from_probs(
    generated: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
) -> f64 {
    class_cross_entropy(generated, SPECIALIZED, smoothing)
        + class_cross_entropy(real, GENERATED, smoothing)
}

fn check_d(d: &MlpNetwork) -> Result<()> {
    if d.output_dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "discriminator output",
            expected: 2,
            found: d.output_dim(),
        });
    }
    Ok(())
}

/// `-sum log P(0 | G(x_i)) - sum log P(1 | y_i)` under eval-mode D.
pub fn d_loss(
    d: &MlpNetwork,
    generated: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
) -> Result<f64> {
    check_d(d)?;
    Ok(d_loss_from_probs(
        softmax_rows(d.predict(generated)?.view()).view(),
        softmax_rows(d.predict(real)?.view()).view(),
        smoothing,
    ))
}

/// `-sum log P(1 | G(x_i)) - sum log P(0 | y_i)` under eval-mode D.
pub fn g_adv_loss(
    d: &MlpNetwork,
    generated: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
) -> Result<f64> {
    check_d(d)?;
    Ok(g_adv_loss_from_probs(
        softmax_rows(d.predict(generated)?.view()).view(),
        softmax_rows(d.predict(real)?.view()).view(),
        smoothing,
    ))
}

/// Discriminator loss and its gradient with respect to D's parameters,
/// with D in training mode. The generated batch is treated as constant.
pub fn d_loss_grad<R: Rng + ?Sized>(
    d: &MlpNetwork,
    generated: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    check_d(d)?;
    let (logits, cache) = d.forward(generated, Mode::Train, rng)?;
    let (loss_gen, grad_gen) = softmax_cross_entropy(logits.view(), GENERATED, smoothing);
    let (mut grads, _) = d.backward(&cache, grad_gen.view())?;
    let (logits, cache) = d.forward(real, Mode::Train, rng)?;
    let (loss_real, grad_real) = softmax_cross_entropy(logits.view(), SPECIALIZED, smoothing);
    grads.add_assign(&d.backward(&cache, grad_real.view())?.0);
    Ok((loss_gen + loss_real, grads))
}

/// Generator adversarial loss and its gradient with respect to G's
/// parameters, back-propagated through D (both in training mode, D not
/// updated). The real-batch term is reported but has no gradient in G.
pub fn g_adv_loss_grad<R: Rng + ?Sized>(
    g: &MlpNetwork,
    d: &MlpNetwork,
    originals: ArrayView2<f64>,
    real: ArrayView2<f64>,
    smoothing: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    check_d(d)?;
    let (generated, g_cache) = g.forward(originals, Mode::Train, rng)?;
    let (logits, d_cache) = d.forward(generated.view(), Mode::Train, rng)?;
    let (loss_gen, grad_logits) = softmax_cross_entropy(logits.view(), SPECIALIZED, smoothing);
    let (_, grad_generated) = d.backward(&d_cache, grad_logits.view())?;
    let (grads, _) = g.backward(&g_cache, grad_generated.view())?;
    let (logits_real, _) = d.forward(real, Mode::Train, rng)?;
    let (loss_real, _) = softmax_cross_entropy(logits_real.view(), GENERATED, smoothing);
    Ok((loss_gen + loss_real, grads))
}

/// Share of held-out vectors D classifies correctly: generated ones as
/// class 0, specialized ones as class 1.
pub fn discriminator_accuracy(
    g: &MlpNetwork,
    d: &MlpNetwork,
    pairs: &TrainingPairs,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let generated = predict_chunked(g, pairs.originals.view())?;
    let p_gen = softmax_rows(predict_chunked(d, generated.view())?.view());
    let p_real = softmax_rows(predict_chunked(d, pairs.targets.view())?.view());
    let correct = p_gen.outer_iter().filter(|p| p[GENERATED] > 0.5).count()
        + p_real.outer_iter().filter(|p| p[SPECIALIZED] > 0.5).count();
    Ok(correct as f64 / (2 * pairs.len()) as f64)
}

/// One line of the training log, written at every validation check. Losses
/// are per-sample means over the cycles since the previous check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuxGanLogRecord {
    pub epoch: usize,
    pub cycle: usize,
    pub learning_rate: f64,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub mm_loss: f64,
    pub validation: f64,
    pub d_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct AuxGanOutcome {
    /// Generator with the best validation score.
    pub generator: MlpNetwork,
    pub best_validation: f64,
    pub log: Vec<AuxGanLogRecord>,
}

#[derive(Default)]
struct Window {
    d_loss: f64,
    d_samples: usize,
    g_loss: f64,
    g_samples: usize,
    mm_loss: f64,
    mm_samples: usize,
}

/// Owns both networks and their optimizers for the duration of training.
pub struct AuxGanTrainer {
    pub generator: MlpNetwork,
    pub discriminator: MlpNetwork,
    g_opt: OptimizerState,
    d_opt: OptimizerState,
    cfg: AuxGanConfig,
    train: TrainingPairs,
    rng: ChaCha8Rng,
}

impl AuxGanTrainer {
    pub fn new(train: TrainingPairs, cfg: &AuxGanConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if train.len() < cfg.base.batch_size {
            return Err(Error::config(
                "batch_size",
                format!("{} pairs cannot fill a batch", train.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = train.dim();
        let generator = MlpNetwork::new(cfg.base.generator.spec(dim), &mut rng)?;
        let discriminator = MlpNetwork::new(cfg.adversarial.discriminator.spec(dim), &mut rng)?;
        Ok(AuxGanTrainer {
            generator,
            discriminator,
            g_opt: OptimizerState::sgd(cfg.base.learning_rate),
            d_opt: OptimizerState::sgd(cfg.base.learning_rate),
            cfg: cfg.clone(),
            train,
            rng,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.g_opt.learning_rate
    }

    pub fn scale_learning_rate(&mut self, factor: f64) {
        self.g_opt.learning_rate *= factor;
        self.d_opt.learning_rate *= factor;
    }

    fn batch(&mut self) -> Vec<usize> {
        distinct_batch(self.train.len(), self.cfg.base.batch_size, &mut self.rng)
    }

    /// One update of D on a generated batch and an independently drawn
    /// specialized batch. Returns the summed loss and the sample count.
    pub fn d_step(&mut self) -> Result<(f64, usize)> {
        let gen_rows = self.batch();
        let real_rows = self.batch();
        let x = self.train.originals.select(Axis(0), &gen_rows);
        let y = self.train.targets.select(Axis(0), &real_rows);
        let (generated, _) = self.generator.forward(x.view(), Mode::Train, &mut self.rng)?;
        let (loss, mut grads) = d_loss_grad(
            &self.discriminator,
            generated.view(),
            y.view(),
            self.cfg.adversarial.label_smoothing,
            &mut self.rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        let n = gen_rows.len() + real_rows.len();
        grads.scale(1.0 / n as f64);
        self.discriminator.apply_gradients(&grads, &mut self.d_opt)?;
        Ok((loss, n))
    }

    /// One adversarial update of G through a frozen D.
    pub fn g_adv_step(&mut self) -> Result<(f64, usize)> {
        let gen_rows = self.batch();
        let real_rows = self.batch();
        let x = self.train.originals.select(Axis(0), &gen_rows);
        let y = self.train.targets.select(Axis(0), &real_rows);
        let (loss, mut grads) = g_adv_loss_grad(
            &self.generator,
            &self.discriminator,
            x.view(),
            y.view(),
            self.cfg.generator_smoothing(),
            &mut self.rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("generator adversarial loss".into()));
        }
        grads.scale(1.0 / gen_rows.len() as f64);
        self.generator.apply_gradients(&grads, &mut self.g_opt)?;
        Ok((loss, gen_rows.len() + real_rows.len()))
    }

    /// One max-margin update of G.
    pub fn mm_step(&mut self) -> Result<(f64, usize)> {
        let loss = mm_step(
            &mut self.generator,
            &mut self.g_opt,
            &self.train,
            &self.cfg.base,
            &mut self.rng,
        )?;
        Ok((loss, self.cfg.base.batch_size.min(self.train.len())))
    }

    fn cycle(&mut self, window: &mut Window) -> Result<()> {
        for _ in 0..self.cfg.adversarial.d_steps {
            let (l, n) = self.d_step()?;
            window.d_loss += l;
            window.d_samples += n;
        }
        let (l, n) = self.g_adv_step()?;
        window.g_loss += l;
        window.g_samples += n;
        let (l, n) = self.mm_step()?;
        window.mm_loss += l;
        window.mm_samples += n;
        Ok(())
    }
}

fn mean(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Train `G` adversarially; a cycle is `d_steps` discriminator updates,
/// one adversarial generator update and one max-margin update.
pub fn train_auxgan(pairs: &TrainingPairs, cfg: &AuxGanConfig, seed: u64) -> Result<AuxGanOutcome> {
    cfg.validate()?;
    let (train, val) = prepare_pairs(pairs, &cfg.base, seed)?;
    let monitor = if val.is_empty() { train.clone() } else { val };
    let cycles = cfg.base.iterations_for(train.len());
    let check_every = (cycles / cfg.adversarial.checks_per_epoch).max(1);
    let mut trainer = AuxGanTrainer::new(train, cfg, seed.wrapping_add(1))?;
    let mut schedule = LrSchedule::new(cfg.base.decay, cfg.base.plateau_decay);

    let mut best = (mean_cosine(&trainer.generator, &monitor)?, trainer.generator.clone());
    let mut stalled_checks = 0;
    let mut log = Vec::new();
    let mut global_cycle = 0;
    for epoch in 1..=cfg.base.epochs {
        let mut window = Window::default();
        for c in 1..=cycles {
            trainer.cycle(&mut window)?;
            global_cycle += 1;
            if c % check_every != 0 && c != cycles {
                continue;
            }
            let validation = mean_cosine(&trainer.generator, &monitor)?;
            if !validation.is_finite() {
                return Err(Error::NonFinite(format!("validation at cycle {global_cycle}")));
            }
            let record = AuxGanLogRecord {
                epoch,
                cycle: global_cycle,
                learning_rate: trainer.learning_rate(),
                d_loss: mean(window.d_loss, window.d_samples),
                g_adv_loss: mean(window.g_loss, window.g_samples),
                mm_loss: mean(window.mm_loss, window.mm_samples),
                validation,
                d_accuracy: discriminator_accuracy(
                    &trainer.generator,
                    &trainer.discriminator,
                    &monitor,
                )?,
            };
            debug!("{record:?}");
            let improved = validation > best.0;
            if improved {
                best = (validation, trainer.generator.clone());
            }
            if record.d_loss < cfg.adversarial.divergence_threshold && !improved {
                stalled_checks += 1;
                if stalled_checks >= cfg.adversarial.divergence_patience {
                    return Err(Error::Diverged(format!(
                        "discriminator loss {:.2e} with no generator improvement for {} checks \
                         (cycle {global_cycle})",
                        record.d_loss, stalled_checks
                    )));
                }
            } else {
                stalled_checks = 0;
            }
            log.push(record);
            window = Window::default();
        }
        let score = log.last().map_or(best.0, |r| r.validation);
        info!(
            "adversarial epoch {epoch}: validation {score:.4} lr {:.4}",
            trainer.learning_rate()
        );
        trainer.scale_learning_rate(schedule.factor(score));
    }
    Ok(AuxGanOutcome {
        generator: best.1,
        best_validation: best.0,
        log,
    })
}
