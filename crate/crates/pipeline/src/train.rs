//! Optimizer loop for the three regimes.

use cagen_core::Setting;
use cagen_seqmodel::{Adam, AdamConfig, Gradients, Graph, ModelConfig, Seq2Seq, Tokenizer, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PlanSource, Regime, RunConfig, TrainingConfig};
use crate::error::PipelineError;
use crate::loss::{loss_answer, loss_answer_unplanned, loss_joint, loss_planning};
use crate::triplet::{build_tokenizer, encode_triplets, EncodedTriplet, TrainingTriplet};

pub const PLANNER_SLOT: u8 = 0;
pub const GENERATOR_SLOT: u8 = 1;

const PLANNER_STREAM: u64 = 0x706c_616e;
const GENERATOR_STREAM: u64 = 0x6765_6e65;
const JOINT_STREAM: u64 = 0x6a6f_696e;

/// What one trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Planner alone on the planning loss.
    Planning,
    /// Generator alone on the answer loss; `None` means no plan input.
    Answer(Option<PlanSource>),
    /// Planner and generator on planning + answer loss.
    Joint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Accuracy {
    pub correct: usize,
    pub counted: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.counted == 0 {
            0.0
        } else {
            self.correct as f64 / self.counted as f64
        }
    }

    fn add(&mut self, correct: usize, counted: usize) {
        self.correct += correct;
        self.counted += counted;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleLoss {
    pub planning: Option<f64>,
    pub answer: Option<f64>,
    /// The optimized value; equals the single part or their sum.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    /// One-based step number.
    pub step: usize,
    /// Triplet indices of the batch, in reduction order.
    pub batch: Vec<usize>,
    /// Losses before the update, one per batch entry.
    pub losses: Vec<ExampleLoss>,
    pub mean_loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub planning: Option<Accuracy>,
    pub answer: Option<Accuracy>,
    /// Mean over triplets of the summed token loss.
    pub mean_loss: f64,
    /// Mean loss per target token.
    pub token_loss: f64,
}

impl Evaluation {
    /// Lowest accuracy over the trained parts.
    pub fn min_rate(&self) -> f64 {
        [self.planning, self.answer]
            .iter()
            .flatten()
            .map(Accuracy::rate)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Loss, planning accuracy and answer accuracy of one triplet.
type EvalPart = (f64, Option<Accuracy>, Option<Accuracy>);

struct Forward {
    total: Var,
    loss: ExampleLoss,
    planning: Option<Accuracy>,
    answer: Option<Accuracy>,
}

pub struct Trainer<'a> {
    objective: Objective,
    setting: Setting,
    planner: Option<Seq2Seq>,
    generator: Option<Seq2Seq>,
    optim: Adam,
    triplets: &'a [EncodedTriplet],
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    dropout: f64,
    data_seed: u64,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        objective: Objective,
        setting: Setting,
        planner: Option<Seq2Seq>,
        generator: Option<Seq2Seq>,
        triplets: &'a [EncodedTriplet],
        optimizer: AdamConfig,
        batch_size: usize,
        data_seed: u64,
    ) -> Result<Self, PipelineError> {
        if triplets.is_empty() {
            return Err(PipelineError::NoTriplets);
        }
        let needs_planner = matches!(objective, Objective::Planning | Objective::Joint)
            || matches!(objective, Objective::Answer(Some(PlanSource::PlannerOutput | PlanSource::PlannerEmbeddings)));
        let needs_generator = !matches!(objective, Objective::Planning);
        if needs_planner && planner.is_none() {
            return Err(PipelineError::MissingPlanner("this objective"));
        }
        if needs_generator && generator.is_none() {
            return Err(PipelineError::Config("objective needs a generator".into()));
        }
        if let (Objective::Joint, Some(p), Some(g)) = (objective, &planner, &generator) {
            if p.config().d_model != g.config().d_model {
                return Err(PipelineError::Config("joint training needs equal planner and generator widths".into()));
            }
        }
        let dropout = [&planner, &generator]
            .iter()
            .filter_map(|m| m.as_ref())
            .map(|m| m.config().dropout)
            .fold(0.0, f64::max);
        Ok(Self {
            objective,
            setting,
            planner,
            generator,
            optim: Adam::new(optimizer),
            triplets,
            batch_size: batch_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(data_seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            dropout,
            data_seed,
        })
    }

    pub fn planner(&self) -> Option<&Seq2Seq> {
        self.planner.as_ref()
    }

    pub fn generator(&self) -> Option<&Seq2Seq> {
        self.generator.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn into_models(self) -> (Option<Seq2Seq>, Option<Seq2Seq>) {
        (self.planner, self.generator)
    }

    fn forward(&self, g: &mut Graph, t: &EncodedTriplet) -> Result<Forward, PipelineError> {
        let acc = |tf: &cagen_seqmodel::TeacherForced| Accuracy {
            correct: tf.correct,
            counted: tf.counted,
        };
        match self.objective {
            Objective::Planning => {
                let planner = self.planner.as_ref().expect("checked in new");
                let tf = loss_planning(g, planner, t, self.setting)?;
                let v = g.scalar(tf.loss);
                Ok(Forward {
                    total: tf.loss,
                    loss: ExampleLoss {
                        planning: Some(v),
                        answer: None,
                        total: v,
                    },
                    planning: Some(acc(&tf)),
                    answer: None,
                })
            }
            Objective::Answer(source) => {
                let generator = self.generator.as_ref().expect("checked in new");
                let tf = match source {
                    None => loss_answer_unplanned(g, generator, t)?,
                    Some(s) => loss_answer(g, generator, self.planner.as_ref(), t, s)?,
                };
                let v = g.scalar(tf.loss);
                Ok(Forward {
                    total: tf.loss,
                    loss: ExampleLoss {
                        planning: None,
                        answer: Some(v),
                        total: v,
                    },
                    planning: None,
                    answer: Some(acc(&tf)),
                })
            }
            Objective::Joint => {
                let planner = self.planner.as_ref().expect("checked in new");
                let generator = self.generator.as_ref().expect("checked in new");
                let j = loss_joint(g, planner, generator, t, self.setting)?;
                Ok(Forward {
                    total: j.total,
                    loss: ExampleLoss {
                        planning: Some(g.scalar(j.planning.loss)),
                        answer: Some(g.scalar(j.answer.loss)),
                        total: g.scalar(j.total),
                    },
                    planning: Some(acc(&j.planning)),
                    answer: Some(acc(&j.answer)),
                })
            }
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.triplets.len();
        if self.batch_size >= n {
            return (0..n).collect();
        }
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    fn graph(&self, example: usize) -> Graph {
        if self.dropout > 0.0 {
            let seed = self
                .data_seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((self.step as u64) << 20)
                .wrapping_add(example as u64);
            Graph::new().with_dropout(self.dropout, ChaCha8Rng::seed_from_u64(seed))
        } else {
            Graph::new()
        }
    }

    /// One optimizer step on the next batch. Losses are computed in
    /// parallel; gradients are reduced in batch order.
    pub fn step(&mut self) -> Result<StepReport, PipelineError> {
        let batch = self.next_batch();
        let results: Vec<Result<(ExampleLoss, Gradients), PipelineError>> = batch
            .par_iter()
            .map(|&i| {
                let mut g = self.graph(i);
                let f = self.forward(&mut g, &self.triplets[i])?;
                Ok((f.loss, g.backward(f.total)))
            })
            .collect();
        self.step += 1;
        let mut grads = Gradients::default();
        let mut losses = Vec::with_capacity(batch.len());
        for r in results {
            let (loss, g) = r?;
            if !loss.total.is_finite() {
                return Err(PipelineError::Diverged {
                    what: format!("{:?}", self.objective),
                    step: self.step,
                    loss: loss.total,
                });
            }
            losses.push(loss);
            grads.accumulate(g);
        }
        grads.scale(1.0 / batch.len() as f64);
        let mut models: Vec<&mut Seq2Seq> = self.planner.iter_mut().chain(self.generator.iter_mut()).collect();
        let grad_norm = self.optim.step(&mut models, &grads);
        let mean_loss = losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64;
        Ok(StepReport {
            step: self.step,
            batch,
            losses,
            mean_loss,
            grad_norm,
        })
    }

    /// Teacher-forced accuracy and mean loss over all triplets, without
    /// dropout.
    pub fn evaluate(&self) -> Result<Evaluation, PipelineError> {
        let parts: Vec<Result<EvalPart, PipelineError>> = self
            .triplets
            .par_iter()
            .map(|t| {
                let mut g = Graph::new();
                let f = self.forward(&mut g, t)?;
                Ok((f.loss.total, f.planning, f.answer))
            })
            .collect();
        let mut eval = Evaluation::default();
        let mut total = 0.0;
        for p in parts {
            let (loss, plan, answer) = p?;
            total += loss;
            if let Some(a) = plan {
                eval.planning.get_or_insert_with(Accuracy::default).add(a.correct, a.counted);
            }
            if let Some(a) = answer {
                eval.answer.get_or_insert_with(Accuracy::default).add(a.correct, a.counted);
            }
        }
        eval.mean_loss = total / self.triplets.len() as f64;
        let tokens: usize = [eval.planning, eval.answer].iter().flatten().map(|a| a.counted).sum();
        eval.token_loss = total / tokens.max(1) as f64;
        Ok(eval)
    }

    /// Steps until the accuracy target is met or the step budget is spent.
    pub fn run(&mut self, label: &str, cfg: &TrainingConfig) -> Result<RunHistory, PipelineError> {
        let initial = self.evaluate()?;
        let steps_per_epoch = self.triplets.len().div_ceil(self.batch_size);
        let mut history = RunHistory {
            label: label.to_owned(),
            step_losses: Vec::new(),
            epoch_losses: Vec::new(),
            initial,
            final_eval: initial,
            accuracy_step: None,
            reached_target: false,
        };
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        while self.step < cfg.max_steps {
            let report = self.step()?;
            history.step_losses.push(report.mean_loss);
            epoch_sum += report.mean_loss;
            epoch_steps += 1;
            if epoch_steps == steps_per_epoch {
                let mean = epoch_sum / epoch_steps as f64;
                log::debug!("{label}: epoch {} mean loss {mean:.4}", history.epoch_losses.len() + 1);
                history.epoch_losses.push(mean);
                epoch_sum = 0.0;
                epoch_steps = 0;
            }
            if report.step % cfg.eval_every == 0 || report.step == cfg.max_steps {
                let eval = self.evaluate()?;
                history.final_eval = eval;
                let accurate = cfg.target_accuracy.is_none_or(|t| eval.min_rate() >= t);
                if accurate && cfg.target_accuracy.is_some() && history.accuracy_step.is_none() {
                    history.accuracy_step = Some(report.step);
                }
                let low_loss = cfg.target_token_loss.is_none_or(|t| eval.token_loss <= t);
                if (cfg.target_accuracy.is_some() || cfg.target_token_loss.is_some()) && accurate && low_loss {
                    history.reached_target = true;
                    break;
                }
            }
        }
        if epoch_steps > 0 {
            history.epoch_losses.push(epoch_sum / epoch_steps as f64);
        }
        log::info!(
            "{label}: {} steps, loss {:.4} -> {:.4}, accuracy {:.4}",
            self.step,
            history.initial.mean_loss,
            history.final_eval.mean_loss,
            history.final_eval.min_rate()
        );
        Ok(history)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunHistory {
    pub label: String,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    /// First evaluated step meeting the accuracy target.
    pub accuracy_step: Option<usize>,
    /// Every configured target was met before the step budget ran out.
    pub reached_target: bool,
}

pub struct TrainedModels {
    pub regime: Regime,
    pub planner: Option<Seq2Seq>,
    pub generator: Seq2Seq,
    pub tokenizer: Tokenizer,
    pub history: Vec<RunHistory>,
}

pub fn model_config(config: &RunConfig, tokenizer: &Tokenizer, seed: u64) -> ModelConfig {
    let mut m = config.model.clone();
    m.vocab_size = tokenizer.vocab_size();
    m.seed = seed;
    m
}

/// Builds the vocabulary from `triplets` and trains `regime`.
pub fn train(regime: Regime, triplets: &[TrainingTriplet], config: &RunConfig) -> Result<TrainedModels, PipelineError> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(PipelineError::NoTriplets);
    }
    let tokenizer = build_tokenizer(triplets, config.training.min_vocab_count);
    let encoded = encode_triplets(&tokenizer, triplets);
    train_encoded(regime, &encoded, tokenizer, config)
}

pub fn train_encoded(
    regime: Regime,
    triplets: &[EncodedTriplet],
    tokenizer: Tokenizer,
    config: &RunConfig,
) -> Result<TrainedModels, PipelineError> {
    config.validate()?;
    let planner = || Seq2Seq::new(model_config(config, &tokenizer, config.seeds.planner), PLANNER_SLOT);
    let generator = || Seq2Seq::new(model_config(config, &tokenizer, config.seeds.generator), GENERATOR_SLOT);
    let seeds = config.seeds;
    let trainer = |objective, p, g, stream: u64| {
        Trainer::new(
            objective,
            config.setting,
            p,
            g,
            triplets,
            config.optimizer,
            config.training.batch_size,
            seeds.data ^ stream,
        )
    };
    let mut history = Vec::new();
    let (planner, generator) = match regime {
        Regime::T5Baseline => {
            let mut t = trainer(Objective::Answer(None), None, Some(generator()?), GENERATOR_STREAM)?;
            history.push(t.run("generator", &config.training)?);
            (None, t.into_models().1)
        }
        Regime::PlanningSeq => {
            let mut tp = trainer(Objective::Planning, Some(planner()?), None, PLANNER_STREAM)?;
            history.push(tp.run("planner", &config.training)?);
            let mut tg = trainer(Objective::Answer(Some(PlanSource::Gold)), None, Some(generator()?), GENERATOR_STREAM)?;
            history.push(tg.run("generator", &config.training)?);
            (tp.into_models().0, tg.into_models().1)
        }
        Regime::PlanningE2e => {
            let mut t = trainer(Objective::Joint, Some(planner()?), Some(generator()?), JOINT_STREAM)?;
            history.push(t.run("joint", &config.training)?);
            t.into_models()
        }
    };
    Ok(TrainedModels {
        regime,
        planner,
        generator: generator.expect("every regime trains a generator"),
        tokenizer,
        history,
    })
}
