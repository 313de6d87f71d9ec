//! Dense-masked vs block-structured attention: numerical equivalence,
//! multiply-add accounting, and a forward+backward samples/sec
//! microbenchmark over full training steps.
//!
//! Speedup is reported, not asserted; the testable claims are numerical
//! equivalence and an op count no larger than dense.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::{AttentionKind, BlockMaskSpec, ModelConfig, MotParams};
use crate::tensor::{AdamWConfig, OptimizerState};
use crate::train::{train_step, StepSample};

/// Multiply-adds spent on the score and mixing matmuls of one attention
/// pass (one head of the given dimension), dense-masked variant: every
/// query row against every key.
pub fn attention_madds_dense(spec: &BlockMaskSpec, head_dim: usize) -> u64 {
    let l = spec.total() as u64;
    2 * l * l * head_dim as u64
}

/// Same accounting for the block-structured variant: each query block
/// only touches its allowed key prefix.
pub fn attention_madds_block(spec: &BlockMaskSpec, head_dim: usize) -> u64 {
    let mut total = 0u64;
    for (start, len) in spec.blocks() {
        let prefix = (start + len) as u64;
        total += 2 * len as u64 * prefix * head_dim as u64;
    }
    total
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VariantReport {
    pub name: String,
    pub samples_per_second: f64,
    pub elapsed_seconds: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub config_summary: String,
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub variants: Vec<VariantReport>,
    /// Max abs difference between the two variants' velocity outputs on a
    /// fixed probe forward.
    pub max_abs_deviation: f64,
    pub final_loss_abs_diff: f64,
    /// Dense elapsed time over block-structured elapsed time.
    pub speedup_ratio: f64,
    pub dense_madds_per_layer_head: u64,
    pub block_madds_per_layer_head: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<ReplicaReport>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReplicaReport {
    pub per_replica_samples_per_second: Vec<f64>,
    pub aggregate_samples_per_second: f64,
}

impl BenchReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config: {}\n", self.config_summary));
        out.push_str(&format!(
            "batch {} | warmup {} | measured {}\n",
            self.batch_size, self.warmup_iters, self.measured_iters
        ));
        out.push_str(&format!("{:<18} {:>14} {:>12} {:>14}\n", "variant", "samples/s", "elapsed_s", "final_loss"));
        for v in &self.variants {
            out.push_str(&format!(
                "{:<18} {:>14.3} {:>12.3} {:>14.6e}\n",
                v.name, v.samples_per_second, v.elapsed_seconds, v.final_loss
            ));
        }
        out.push_str(&format!("max abs deviation (probe forward): {:.3e}\n", self.max_abs_deviation));
        out.push_str(&format!("final loss abs diff: {:.3e}\n", self.final_loss_abs_diff));
        out.push_str(&format!("speedup (dense/block): {:.3}\n", self.speedup_ratio));
        out.push_str(&format!(
            "attention madds per layer-head: dense {} vs block {}\n",
            self.dense_madds_per_layer_head, self.block_madds_per_layer_head
        ));
        if let Some(r) = &self.replicas {
            out.push_str(&format!(
                "replicas: {:?} -> aggregate {:.3} samples/s\n",
                r.per_replica_samples_per_second, r.aggregate_samples_per_second
            ));
        }
        out
    }
}

/// Which attention variants to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BenchVariant {
    #[default]
    Both,
    DenseOnly,
    BlockOnly,
}

impl BenchVariant {
    pub fn parse(s: &str) -> crate::error::Result<Self> {
        match s {
            "both" => Ok(BenchVariant::Both),
            "dense" => Ok(BenchVariant::DenseOnly),
            "block" => Ok(BenchVariant::BlockOnly),
            other => Err(Error::Config(format!(
                "unknown bench variant {other:?} (both, dense, block)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchVariant::Both => "both",
            BenchVariant::DenseOnly => "dense",
            BenchVariant::BlockOnly => "block",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub lambda_distill: f64,
    pub seed: u64,
    pub replicas: usize,
    pub variant: BenchVariant,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelConfig::desk_scale(),
            batch_size: 8,
            warmup_iters: 2,
            measured_iters: 8,
            lambda_distill: 0.1,
            seed: 0,
            replicas: 0,
            variant: BenchVariant::Both,
        }
    }
}

struct SyntheticBatch {
    images: Vec<[Image; 3]>,
    instruction: Vec<u32>,
    states: Vec<Vec<f64>>,
    chunks: Vec<Vec<f64>>,
}

fn synthetic_batch(cfg: &ModelConfig, batch: usize, seed: u64) -> SyntheticBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(batch);
    let mut states = Vec::with_capacity(batch);
    let mut chunks = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut views = Vec::with_capacity(3);
        for _ in 0..3 {
            let pixels: Vec<u8> =
                (0..cfg.image_size * cfg.image_size).map(|_| rng.random::<u8>()).collect();
            views.push(Image { size: cfg.image_size, pixels });
        }
        let views: [Image; 3] = views.try_into().unwrap();
        images.push(views);
        states.push((0..cfg.state_dim).map(|_| rng.random::<f64>()).collect());
        chunks.push(
            (0..cfg.chunk_length * cfg.action_dim)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        );
    }
    SyntheticBatch { images, instruction: vec![1, 2, 3], states, chunks }
}

fn run_variant(
    cfg: &BenchConfig,
    kind: AttentionKind,
    data: &SyntheticBatch,
) -> Result<VariantReport> {
    let mut params = MotParams::init(&cfg.model, cfg.seed)?;
    let mut opt = OptimizerState::new(AdamWConfig::default(), params.set.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1);
    let samples: Vec<StepSample> = (0..cfg.batch_size)
        .map(|i| StepSample {
            images: &data.images[i],
            instruction: &data.instruction,
            state: data.states[i].clone(),
            action_chunk: data.chunks[i].clone(),
        })
        .collect();

    let mut final_loss = f64::NAN;
    for _ in 0..cfg.warmup_iters {
        train_step(&mut params, &mut opt, &samples, cfg.lambda_distill, kind, 1e-3, &mut rng)?;
    }
    let start = Instant::now();
    for _ in 0..cfg.measured_iters {
        let losses =
            train_step(&mut params, &mut opt, &samples, cfg.lambda_distill, kind, 1e-3, &mut rng)?;
        final_loss = losses.total;
    }
    let elapsed = start.elapsed().as_secs_f64();
    if !final_loss.is_finite() {
        return Err(Error::Numerical("non-finite loss during benchmark".into()));
    }
    Ok(VariantReport {
        name: match kind {
            AttentionKind::DenseMasked => "dense_masked".into(),
            AttentionKind::BlockStructured => "block_structured".into(),
        },
        samples_per_second: cfg.batch_size as f64 * cfg.measured_iters as f64 / elapsed,
        elapsed_seconds: elapsed,
        final_loss,
    })
}

/// One probe forward per variant on identical inputs; max abs deviation
/// of the velocity outputs.
fn probe_deviation(cfg: &BenchConfig, data: &SyntheticBatch) -> Result<f64> {
    let params = MotParams::init(&cfg.model, cfg.seed)?;
    let mut outs = Vec::new();
    for kind in [AttentionKind::DenseMasked, AttentionKind::BlockStructured] {
        let mut g = crate::tensor::Graph::new();
        let state_norm = &data.states[0];
        let ctx = params.encode_observation(&mut g, &data.images[0], &data.instruction, state_norm)?;
        let fwd = params.forward_mot(&mut g, &ctx, &data.chunks[0], 0.5, kind)?;
        outs.push(g.value(fwd.velocity).to_vec());
    }
    Ok(outs[0]
        .iter()
        .zip(&outs[1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Full benchmark: both attention variants over identical seeds and data,
/// plus optional independent replicas in parallel threads.
pub fn bench_forward_backward(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.measured_iters < 1 {
        return Err(Error::Contract("measured_iters must be >= 1".into()));
    }
    cfg.model.validate()?;
    let data = synthetic_batch(&cfg.model, cfg.batch_size, cfg.seed + 7);

    let (variants, max_abs_deviation, final_loss_abs_diff, speedup_ratio) = match cfg.variant {
        BenchVariant::Both => {
            let dense = run_variant(cfg, AttentionKind::DenseMasked, &data)?;
            let block = run_variant(cfg, AttentionKind::BlockStructured, &data)?;
            let deviation = probe_deviation(cfg, &data)?;
            let loss_diff = (dense.final_loss - block.final_loss).abs();
            let speedup = dense.elapsed_seconds / block.elapsed_seconds;
            (vec![dense, block], deviation, loss_diff, speedup)
        }
        BenchVariant::DenseOnly => {
            (vec![run_variant(cfg, AttentionKind::DenseMasked, &data)?], 0.0, 0.0, 1.0)
        }
        BenchVariant::BlockOnly => {
            (vec![run_variant(cfg, AttentionKind::BlockStructured, &data)?], 0.0, 0.0, 1.0)
        }
    };

    let text_len = data.instruction.len();
    let spec = BlockMaskSpec::new(cfg.model.obs_len(text_len), 1, cfg.model.chunk_length);
    let dense_madds = attention_madds_dense(&spec, cfg.model.head_dim());
    let block_madds = attention_madds_block(&spec, cfg.model.head_dim());

    let replicas = if cfg.replicas > 0 {
        let rate_results: Vec<Result<f64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.replicas)
                .map(|r| {
                    let mut rep_cfg = cfg.clone();
                    rep_cfg.seed = cfg.seed + 100 + r as u64;
                    rep_cfg.replicas = 0;
                    scope.spawn(move || {
                        let data = synthetic_batch(&rep_cfg.model, rep_cfg.batch_size, rep_cfg.seed + 7);
                        run_variant(&rep_cfg, AttentionKind::DenseMasked, &data)
                            .map(|v| v.samples_per_second)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("replica thread panicked")).collect()
        });
        let rates: Vec<f64> = rate_results.into_iter().collect::<Result<_>>()?;
        let aggregate = rates.iter().sum();
        Some(ReplicaReport { per_replica_samples_per_second: rates, aggregate_samples_per_second: aggregate })
    } else {
        None
    };

    Ok(BenchReport {
        config_summary: format!(
            "model_dim {} layers {} heads {} chunk {} image {} (seq len {})",
            cfg.model.model_dim,
            cfg.model.num_layers,
            cfg.model.num_heads,
            cfg.model.chunk_length,
            cfg.model.image_size,
            spec.total()
        ),
        batch_size: cfg.batch_size,
        warmup_iters: cfg.warmup_iters,
        measured_iters: cfg.measured_iters,
        variants,
        max_abs_deviation,
        final_loss_abs_diff,
        speedup_ratio,
        dense_madds_per_layer_head: dense_madds,
        block_madds_per_layer_head: block_madds,
        replicas,
    })
}
