//! Adam training loops with per-epoch checkpoints.
//!
//! Each run stores the starting point as checkpoint 0 and one checkpoint per
//! completed epoch. Data order and masking are drawn from a generator
//! re-derived from `(seed, epoch)`, and minibatch gradients are summed in a
//! fixed chunk order, so a run is bitwise reproducible for any thread count.

mod store;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassificationTask, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::model::{Example, Head, Metrics, Model, ModelConfig, Target, MASK_TOKEN};
use crate::param::ParamVector;

pub use store::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, read_curve_csv, write_curve_csv,
    StoredCheckpoint,
};

/// Examples per gradient work unit. Fixed so that the reduction order does
/// not depend on how many workers share a minibatch.
const GRAD_CHUNK: usize = 4;

/// Stream reserved for the fixed evaluation masks of masked-token runs.
const EVAL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub objective: Head,
    /// Fraction of content positions hidden per sequence when pretraining.
    pub mask_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            objective: Head::Classification,
            mask_rate: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("adam betas must lie strictly between 0 and 1");
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return bad("mask_rate must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn expect_objective(&self, head: Head) -> Result<()> {
        if self.objective == head {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "objective {:?} does not match this training mode",
                self.objective
            )))
        }
    }

    fn epoch_rng(&self, epoch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch_index: usize,
    pub params: ParamVector,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_error: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunProvenance {
    Pretrain,
    Finetune { from_run: String },
    Scratch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub label: String,
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub provenance: RunProvenance,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainRun {
    pub fn initial(&self) -> &Checkpoint {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints
            .last()
            .expect("runs hold at least one checkpoint")
    }

    pub fn checkpoint(&self, epoch: usize) -> Option<&Checkpoint> {
        self.checkpoints.get(epoch)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Hides roughly `rate` of the content positions (never position 0), and at
/// least one.
pub fn mask_sequence(tokens: &[u32], rate: f64, rng: &mut impl Rng) -> Example {
    let mut masked = tokens.to_vec();
    let mut targets = Vec::new();
    for (pos, &tok) in tokens.iter().enumerate().skip(1) {
        if rng.random::<f64>() < rate {
            targets.push((pos, tok));
        }
    }
    if targets.is_empty() && tokens.len() > 1 {
        let pos = rng.random_range(1..tokens.len());
        targets.push((pos, tokens[pos]));
    }
    for &(pos, _) in &targets {
        masked[pos] = MASK_TOKEN;
    }
    Example {
        tokens: masked,
        target: Target::Masked(targets),
    }
}

/// Produces the training examples for one epoch, already in visiting order.
type EpochSource<'a> = dyn Fn(&mut ChaCha8Rng) -> Vec<Example> + 'a;

struct Fit<'a> {
    model: &'a Model,
    cfg: &'a TrainConfig,
    label: &'a str,
    train_eval: &'a [Example],
    dev_eval: &'a [Example],
}

impl Fit<'_> {
    fn checkpoint(&self, epoch: usize, params: ParamVector) -> Result<Checkpoint> {
        let head = self.cfg.objective;
        let train = self.model.evaluate(&params, self.train_eval, head)?;
        let dev: Metrics = self.model.evaluate(&params, self.dev_eval, head)?;
        Ok(Checkpoint {
            epoch_index: epoch,
            params: params.with_id(format!("{}@{epoch}", self.label)),
            train_loss: train.loss,
            dev_loss: dev.loss,
            dev_error: dev.error_rate,
        })
    }

    fn run(&self, start: ParamVector, source: &EpochSource<'_>) -> Result<Vec<Checkpoint>> {
        let head = self.cfg.objective;
        let mut adam = Adam::new(start.values().len());
        let mut checkpoints = vec![self.checkpoint(0, start.clone())?];
        let mut params = start;
        for epoch in 1..=self.cfg.epochs {
            let mut rng = self.cfg.epoch_rng(epoch as u64);
            let examples = source(&mut rng);
            for batch in examples.chunks(self.cfg.batch_size) {
                let (_, grad) = self.model.grad_chunked(&params, batch, head, GRAD_CHUNK)?;
                let layout = params.layout().clone();
                let mut values = params.into_values();
                adam.step(self.cfg, &mut values, grad.values());
                params = ParamVector::new(layout, values)?;
            }
            checkpoints.push(self.checkpoint(epoch, params.clone())?);
        }
        Ok(checkpoints)
    }
}

fn shuffled(set: &[Example], rng: &mut ChaCha8Rng) -> Vec<Example> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    order.into_iter().map(|i| set[i].clone()).collect()
}

/// Masked-token pretraining from `init_params(config.seed)`.
///
/// The last tenth of the corpus is held out for the dev metrics; corpora
/// with fewer than ten sequences are evaluated on the training sequences.
pub fn pretrain(model: &Model, corpus: &SyntheticCorpus, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    config.expect_objective(Head::MaskedLm)?;
    if corpus.sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = corpus.sequences.len();
    let held = n / 10;
    let (train, dev) = if held == 0 {
        (&corpus.sequences[..], &corpus.sequences[..])
    } else {
        corpus.sequences.split_at(n - held)
    };
    let mut eval_rng = config.epoch_rng(EVAL_STREAM);
    let train_eval: Vec<Example> = train
        .iter()
        .map(|s| mask_sequence(s, config.mask_rate, &mut eval_rng))
        .collect();
    let dev_eval: Vec<Example> = dev
        .iter()
        .map(|s| mask_sequence(s, config.mask_rate, &mut eval_rng))
        .collect();
    let label = format!("pretrain-s{}", config.seed);
    let fit = Fit {
        model,
        cfg: config,
        label: &label,
        train_eval: &train_eval,
        dev_eval: &dev_eval,
    };
    let source = |rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .map(|i| mask_sequence(&train[i], config.mask_rate, rng))
            .collect()
    };
    let checkpoints = fit.run(model.init_params(config.seed), &source)?;
    Ok(TrainRun {
        label,
        model: model.config().clone(),
        config: config.clone(),
        provenance: RunProvenance::Pretrain,
        checkpoints,
    })
}

fn classify(
    model: &Model,
    start: &ParamVector,
    task: &ClassificationTask,
    config: &TrainConfig,
    label: String,
    provenance: RunProvenance,
) -> Result<TrainRun> {
    config.validate()?;
    config.expect_objective(Head::Classification)?;
    if task.num_classes != model.config().num_classes {
        return Err(Error::InvalidConfig(format!(
            "task has {} classes but the model head has {}",
            task.num_classes,
            model.config().num_classes
        )));
    }
    let start = model.with_fresh_classifier(start, config.seed.wrapping_add(task.kind.id()))?;
    let fit = Fit {
        model,
        cfg: config,
        label: &label,
        train_eval: &task.train,
        dev_eval: &task.dev,
    };
    let checkpoints = fit.run(start, &|rng: &mut ChaCha8Rng| shuffled(&task.train, rng))?;
    Ok(TrainRun {
        label,
        model: model.config().clone(),
        config: config.clone(),
        provenance,
        checkpoints,
    })
}

/// Fine-tunes all parameters from `init` with a fresh classification head
/// drawn from `config.seed + task id`.
pub fn finetune(
    model: &Model,
    init: &ParamVector,
    from_run: &str,
    task: &ClassificationTask,
    config: &TrainConfig,
) -> Result<TrainRun> {
    let label = format!("finetune-{}-s{}", task.name, config.seed);
    let provenance = RunProvenance::Finetune {
        from_run: from_run.to_string(),
    };
    classify(model, init, task, config, label, provenance)
}

/// Like [`finetune`], starting from `init_params(config.seed)`.
pub fn train_from_scratch(
    model: &Model,
    task: &ClassificationTask,
    config: &TrainConfig,
) -> Result<TrainRun> {
    let label = format!("scratch-{}-s{}", task.name, config.seed);
    classify(
        model,
        &model.init_params(config.seed),
        task,
        config,
        label,
        RunProvenance::Scratch,
    )
}

/// One row of a learning-curve table.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub run: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_error: f64,
}

pub fn export_learning_curves(runs: &[&TrainRun]) -> Result<Vec<CurveRow>> {
    if runs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(runs
        .iter()
        .flat_map(|run| {
            run.checkpoints.iter().map(|c| CurveRow {
                run: run.label.clone(),
                epoch: c.epoch_index,
                train_loss: c.train_loss,
                dev_error: c.dev_error,
            })
        })
        .collect())
}
