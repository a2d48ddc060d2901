//! A small pre-layer-norm transformer encoder parameterized by a flat
//! [`ParamVector`], with a masked-token head and a sequence-classification
//! head.
//!
//! The classification head reads the final hidden state of position 0, which
//! always holds [`CLS_TOKEN`]. The final layer norm is stored with the last
//! encoder layer so that every encoder parameter belongs to some layer.

mod encoder;
pub mod gradcheck;
mod linalg;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Direction, ParamLayout, ParamVector, Provenance, SegmentRole};

pub use encoder::Forward;

/// Sequence-start token read by the classification head.
pub const CLS_TOKEN: u32 = 0;
/// Placeholder written over masked positions.
pub const MASK_TOKEN: u32 = 1;
/// First id available for ordinary content tokens.
pub const FIRST_CONTENT_TOKEN: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            model_dim: 32,
            num_heads: 2,
            ffn_dim: 64,
            vocab_size: 64,
            max_seq_len: 16,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.vocab_size <= FIRST_CONTENT_TOKEN as usize {
            return Err(Error::InvalidConfig(
                "vocab_size must leave room for content tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Which output head produces the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    MaskedLm,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    /// `(position, original token)` pairs; each position holds [`MASK_TOKEN`].
    Masked(Vec<(usize, u32)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub target: Target,
}

impl Example {
    pub fn class(tokens: Vec<u32>, label: usize) -> Self {
        Self {
            tokens,
            target: Target::Class(label),
        }
    }
}

/// Summed over a batch: `loss` is the mean cross-entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub correct_count: usize,
    /// Number of predictions scored: examples for classification, masked
    /// positions for masked-token prediction.
    pub example_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIndex {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIndex {
    pub tok: usize,
    pub pos: usize,
    pub layers: Vec<LayerIndex>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub mlm_w: usize,
    pub mlm_b: usize,
    pub cls_w: usize,
    pub cls_b: usize,
}

fn segment_plan(c: &ModelConfig) -> Vec<(String, SegmentRole, Option<usize>, usize)> {
    let (d, f, v) = (c.model_dim, c.ffn_dim, c.vocab_size);
    let mut plan = vec![
        (
            "embed.token".to_string(),
            SegmentRole::Embedding,
            None,
            v * d,
        ),
        (
            "embed.position".to_string(),
            SegmentRole::Embedding,
            None,
            c.max_seq_len * d,
        ),
    ];
    for l in 0..c.num_layers {
        let mut push = |name: &str, len: usize| {
            plan.push((
                format!("layer.{l}.{name}"),
                SegmentRole::Layer,
                Some(l),
                len,
            ));
        };
        push("ln1.gain", d);
        push("ln1.bias", d);
        for proj in ["query", "key", "value", "out"] {
            push(&format!("attn.{proj}.weight"), d * d);
            push(&format!("attn.{proj}.bias"), d);
        }
        push("ln2.gain", d);
        push("ln2.bias", d);
        push("ffn.in.weight", d * f);
        push("ffn.in.bias", f);
        push("ffn.out.weight", f * d);
        push("ffn.out.bias", d);
        if l + 1 == c.num_layers {
            push("final_norm.gain", d);
            push("final_norm.bias", d);
        }
    }
    plan.push(("mlm_head.weight".into(), SegmentRole::Head, None, d * v));
    plan.push(("mlm_head.bias".into(), SegmentRole::Head, None, v));
    plan.push((
        "cls_head.weight".into(),
        SegmentRole::Head,
        None,
        d * c.num_classes,
    ));
    plan.push((
        "cls_head.bias".into(),
        SegmentRole::Head,
        None,
        c.num_classes,
    ));
    plan
}

/// The encoder architecture bound to one [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    index: ParamIndex,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::from_parts(segment_plan(&config))?);
        let off = |name: &str| {
            layout
                .segment(name)
                .map(|s| s.offset)
                .expect("planned segment")
        };
        let last = config.num_layers - 1;
        let index = ParamIndex {
            tok: off("embed.token"),
            pos: off("embed.position"),
            layers: (0..config.num_layers)
                .map(|l| {
                    let o = |n: &str| off(&format!("layer.{l}.{n}"));
                    LayerIndex {
                        ln1_g: o("ln1.gain"),
                        ln1_b: o("ln1.bias"),
                        wq: o("attn.query.weight"),
                        bq: o("attn.query.bias"),
                        wk: o("attn.key.weight"),
                        bk: o("attn.key.bias"),
                        wv: o("attn.value.weight"),
                        bv: o("attn.value.bias"),
                        wo: o("attn.out.weight"),
                        bo: o("attn.out.bias"),
                        ln2_g: o("ln2.gain"),
                        ln2_b: o("ln2.bias"),
                        w1: o("ffn.in.weight"),
                        b1: o("ffn.in.bias"),
                        w2: o("ffn.out.weight"),
                        b2: o("ffn.out.bias"),
                    }
                })
                .collect(),
            lnf_g: off(&format!("layer.{last}.final_norm.gain")),
            lnf_b: off(&format!("layer.{last}.final_norm.bias")),
            mlm_w: off("mlm_head.weight"),
            mlm_b: off("mlm_head.bias"),
            cls_w: off("cls_head.weight"),
            cls_b: off("cls_head.bias"),
        };
        Ok(Self {
            config,
            layout,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    /// Deterministic random initialization.
    ///
    /// Projections entering a block use `N(0, 1/fan_in)`; projections writing
    /// back into the residual stream are further shrunk by `1/sqrt(2L)`.
    /// Heads start near zero so initial predictions are close to uniform.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        let residual = 1.0 / (2.0 * c.num_layers as f64).sqrt();
        let mut values = Vec::with_capacity(self.layout.total_len());
        for seg in self.layout.segments() {
            let name = seg.name.as_str();
            let std = if name == "embed.token" {
                1.0
            } else if name == "embed.position" {
                0.5
            } else if name.ends_with(".gain") || name.ends_with(".bias") {
                values.extend(std::iter::repeat_n(
                    if name.ends_with(".gain") { 1.0 } else { 0.0 },
                    seg.len,
                ));
                continue;
            } else if seg.role == SegmentRole::Head {
                0.02
            } else if name.ends_with("attn.out.weight") {
                residual / (c.model_dim as f64).sqrt()
            } else if name.ends_with("ffn.out.weight") {
                residual / (c.ffn_dim as f64).sqrt()
            } else {
                1.0 / (c.model_dim as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            values.extend((0..seg.len).map(|_| normal.sample(&mut rng)));
        }
        ParamVector::new(self.layout.clone(), values)
            .expect("initialization is finite")
            .with_id(format!("init:{seed}"))
    }

    /// Replaces the classification head with a fresh draw from `seed`.
    pub fn with_fresh_classifier(&self, params: &ParamVector, seed: u64) -> Result<ParamVector> {
        self.check_layout(params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5_5e5e_ed01);
        let normal = Normal::new(0.0, 0.02).expect("positive std");
        let c = &self.config;
        let w: Vec<f64> = (0..c.model_dim * c.num_classes)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let mut out = params.clone();
        out.set_segment("cls_head.weight", &w)?;
        out.set_segment("cls_head.bias", &vec![0.0; c.num_classes])?;
        Ok(out)
    }

    fn check_layout(&self, params: &ParamVector) -> Result<()> {
        if params.layout().as_ref() == self.layout.as_ref() {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    fn validate_example(&self, ex: &Example, head: Head) -> Result<usize> {
        let c = &self.config;
        if ex.tokens.is_empty() || ex.tokens.len() > c.max_seq_len {
            return Err(Error::InvalidBatch(format!(
                "sequence length {} outside 1..={}",
                ex.tokens.len(),
                c.max_seq_len
            )));
        }
        if let Some(&token) = ex.tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: c.vocab_size,
            });
        }
        match (&ex.target, head) {
            (Target::Class(y), Head::Classification) => {
                if *y >= c.num_classes {
                    return Err(Error::InvalidBatch(format!(
                        "label {y} outside 0..{}",
                        c.num_classes
                    )));
                }
                Ok(1)
            }
            (Target::Masked(targets), Head::MaskedLm) => {
                for &(pos, tok) in targets {
                    if pos >= ex.tokens.len() || ex.tokens[pos] != MASK_TOKEN {
                        return Err(Error::InvalidBatch(format!(
                            "position {pos} is not a masked position"
                        )));
                    }
                    if tok as usize >= c.vocab_size {
                        return Err(Error::TokenOutOfRange {
                            token: tok,
                            vocab_size: c.vocab_size,
                        });
                    }
                }
                Ok(targets.len())
            }
            _ => Err(Error::InvalidBatch(
                "example target does not match the requested head".into(),
            )),
        }
    }

    fn validate_batch(&self, params: &ParamVector, batch: &[Example], head: Head) -> Result<usize> {
        self.check_layout(params)?;
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0;
        for ex in batch {
            total += self.validate_example(ex, head)?;
        }
        if total == 0 {
            return Err(Error::InvalidBatch(
                "batch has no scored predictions".into(),
            ));
        }
        Ok(total)
    }

    /// Mean cross-entropy over the batch.
    pub fn forward_loss(
        &self,
        params: &ParamVector,
        batch: &[Example],
        head: Head,
    ) -> Result<LossValue> {
        let total = self.validate_batch(params, batch, head)?;
        let p = params.values();
        let mut sum = 0.0;
        let mut correct = 0;
        for ex in batch {
            let fwd = Forward::run(self, p, &ex.tokens);
            let (l, c) = fwd.head_loss(self, p, &ex.target);
            sum += l;
            correct += c;
        }
        Ok(LossValue {
            loss: sum / total as f64,
            correct_count: correct,
            example_count: total,
        })
    }

    /// Gradient of the mean loss with respect to every parameter.
    pub fn grad(
        &self,
        params: &ParamVector,
        batch: &[Example],
        head: Head,
    ) -> Result<(LossValue, Direction)> {
        let total = self.validate_batch(params, batch, head)?;
        let (sum, correct, g) = self.grad_sum(params.values(), batch, 1.0 / total as f64);
        let dir = Direction::new(self.layout.clone(), g, Provenance::Gradient)?;
        Ok((
            LossValue {
                loss: sum / total as f64,
                correct_count: correct,
                example_count: total,
            },
            dir,
        ))
    }

    /// Like [`Model::grad`], but fans fixed-size chunks of the batch out over
    /// the rayon pool. Chunk boundaries do not depend on the number of
    /// threads and chunk results are summed in order, so the output is
    /// identical for any worker count.
    pub fn grad_chunked(
        &self,
        params: &ParamVector,
        batch: &[Example],
        head: Head,
        chunk: usize,
    ) -> Result<(LossValue, Direction)> {
        use rayon::prelude::*;
        let total = self.validate_batch(params, batch, head)?;
        let scale = 1.0 / total as f64;
        let p = params.values();
        let parts: Vec<(f64, usize, Vec<f64>)> = batch
            .par_chunks(chunk.max(1))
            .map(|c| self.grad_sum(p, c, scale))
            .collect();
        let mut iter = parts.into_iter();
        let (mut sum, mut correct, mut g) = iter.next().expect("non-empty batch");
        for (s, c, gi) in iter {
            sum += s;
            correct += c;
            for (a, b) in g.iter_mut().zip(&gi) {
                *a += b;
            }
        }
        let dir = Direction::new(self.layout.clone(), g, Provenance::Gradient)?;
        Ok((
            LossValue {
                loss: sum / total as f64,
                correct_count: correct,
                example_count: total,
            },
            dir,
        ))
    }

    fn grad_sum(&self, p: &[f64], batch: &[Example], scale: f64) -> (f64, usize, Vec<f64>) {
        let mut g = vec![0.0; self.layout.total_len()];
        let mut sum = 0.0;
        let mut correct = 0;
        for ex in batch {
            let fwd = Forward::run(self, p, &ex.tokens);
            let (l, c) = fwd.backward(self, p, &ex.target, scale, &mut g);
            sum += l;
            correct += c;
        }
        (sum, correct, g)
    }

    /// Mean loss and error rate over a whole dataset.
    pub fn evaluate(
        &self,
        params: &ParamVector,
        dataset: &[Example],
        head: Head,
    ) -> Result<Metrics> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lv = self.forward_loss(params, dataset, head)?;
        Ok(Metrics {
            loss: lv.loss,
            error_rate: 1.0 - lv.correct_count as f64 / lv.example_count as f64,
        })
    }

    /// Predicted class for one sequence; ties resolve to the lowest class id.
    pub fn predict(&self, params: &ParamVector, tokens: &[u32]) -> Result<usize> {
        let ex = Example::class(tokens.to_vec(), 0);
        self.validate_batch(params, std::slice::from_ref(&ex), Head::Classification)?;
        let fwd = Forward::run(self, params.values(), tokens);
        Ok(encoder::argmax(&fwd.class_logits(self, params.values())))
    }
}
