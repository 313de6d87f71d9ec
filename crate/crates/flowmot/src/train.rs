//! Seeded training loop: flow-matching plus depth-distillation objective,
//! batched gradient accumulation, learning-rate scheduling, loss logging
//! and checkpointing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LrSchedule, RunConfig};
use crate::data::{
    compute_norm_stats, make_training_sample, shuffled_batches, trim_static_frames, Episode,
    Image, NormStats,
};
use crate::depth::{distill_loss, synthetic_depth_teacher, total_loss};
use crate::error::{Error, Result};
use crate::flow::{fm_loss, make_flow_sample};
use crate::model::{save_checkpoint, AttentionKind, MotParams};
use crate::tensor::{AdamWConfig, OptimizerState, Tensor};

/// One batched optimizer step's input: normalized state and action chunk
/// plus the raw observation.
pub struct StepSample<'a> {
    pub images: &'a [Image; 3],
    pub instruction: &'a [u32],
    pub state: Vec<f64>,
    pub action_chunk: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub fm: f64,
    pub distill: f64,
    pub total: f64,
}

/// Run one full training step (forward, losses, backward, optimizer
/// update) over a batch. Gradients are averaged over the batch in sample
/// order, so the step is deterministic.
pub fn train_step(
    params: &mut MotParams,
    opt: &mut OptimizerState,
    samples: &[StepSample],
    lambda_distill: f64,
    attention: AttentionKind,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    if samples.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    params.set.zero_grads();
    let inv = 1.0 / samples.len() as f64;
    let mut fm_sum = 0.0;
    let mut distill_sum = 0.0;
    let mut total_sum = 0.0;

    for sample in samples {
        let mut g = crate::tensor::Graph::new();
        let ctx = params.encode_observation(&mut g, sample.images, sample.instruction, &sample.state)?;
        let flow = make_flow_sample(&sample.action_chunk, rng)?;
        let fwd = params.forward_mot(&mut g, &ctx, &flow.interpolant, flow.s, attention)?;
        let fm = fm_loss(&mut g, fwd.velocity, &flow)?;

        let teacher = synthetic_depth_teacher(sample.images, &params.config)?;
        let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden)?;
        let projected = params.project_queries(&mut g, hidden)?;
        let dloss = distill_loss(&mut g, projected, &teacher)?;
        let total = total_loss(&mut g, fm, Some(dloss), lambda_distill)?;

        fm_sum += g.scalar_value(fm)?;
        distill_sum += g.scalar_value(dloss)?;
        total_sum += g.scalar_value(total)?;

        g.backward(total)?;
        let set = &mut params.set;
        g.accumulate_param_grads(&mut |slot, grad| {
            let t = set.get_mut(slot);
            let buf = t.grad_buffer_mut();
            for (b, g) in buf.iter_mut().zip(grad) {
                *b += g * inv;
            }
        })?;
    }

    let losses =
        StepLosses { fm: fm_sum * inv, distill: distill_sum * inv, total: total_sum * inv };
    if !losses.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at optimizer step {} (fm {}, distill {})",
            opt.step_count() + 1,
            losses.fm,
            losses.distill
        )));
    }
    opt.step_with_lr(params.set.tensors_mut(), lr)?;
    Ok(losses)
}

/// Learning rate at a 1-based step: linear warmup, then the configured
/// schedule (cosine decays to 10% of the base rate by the final step).
pub fn lr_at(step: u64, total_steps: u64, base: f64, warmup: u64, schedule: LrSchedule) -> f64 {
    if warmup > 0 && step <= warmup {
        return base * step as f64 / warmup as f64;
    }
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine => {
            let span = total_steps.saturating_sub(warmup).max(1) as f64;
            let progress = (step.saturating_sub(warmup)) as f64 / span;
            let floor = 0.1 * base;
            floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Deterministically keep a `fraction` of the episodes (at least one).
pub fn subsample_episodes(episodes: Vec<Episode>, fraction: f64, seed: u64) -> Result<Vec<Episode>> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Config(format!("data_fraction {fraction} outside (0, 1]")));
    }
    if fraction >= 1.0 {
        return Ok(episodes);
    }
    let keep = ((episodes.len() as f64 * fraction).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    order.shuffle(&mut rng);
    order.truncate(keep);
    order.sort_unstable();
    let chosen: std::collections::HashSet<usize> = order.into_iter().collect();
    Ok(episodes
        .into_iter()
        .enumerate()
        .filter(|(i, _)| chosen.contains(i))
        .map(|(_, ep)| ep)
        .collect())
}

pub struct TrainOutcome {
    pub steps_run: u64,
    pub final_losses: StepLosses,
    pub checkpoint_path: PathBuf,
    pub best_path: PathBuf,
    pub log_path: PathBuf,
    pub num_params: usize,
}

fn norm_stats_tensors(norm: &NormStats) -> Vec<(String, Tensor)> {
    vec![
        ("norm.action.mean".into(), Tensor::new(vec![norm.action.mean.len()], norm.action.mean.clone()).unwrap()),
        ("norm.action.std".into(), Tensor::new(vec![norm.action.std.len()], norm.action.std.clone()).unwrap()),
        ("norm.state.mean".into(), Tensor::new(vec![norm.state.mean.len()], norm.state.mean.clone()).unwrap()),
        ("norm.state.std".into(), Tensor::new(vec![norm.state.std.len()], norm.state.std.clone()).unwrap()),
    ]
}

/// Rebuild [`NormStats`] from checkpoint extra tensors.
pub fn norm_stats_from_tensors(tensors: &[(String, Tensor)]) -> Result<NormStats> {
    let find = |name: &str| -> Result<Vec<f64>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint missing {name}")))
    };
    Ok(NormStats {
        action: crate::data::DimStats { mean: find("norm.action.mean")?, std: find("norm.action.std")? },
        state: crate::data::DimStats { mean: find("norm.state.mean")?, std: find("norm.state.std")? },
    })
}

/// Full training run: load episodes, trim, normalize, optimize, log and
/// checkpoint. `resume` continues the step counter from a previous
/// checkpoint.
pub fn train(config: &RunConfig, episodes: Vec<Episode>, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.model.validate()?;
    let episodes = subsample_episodes(episodes, config.data_fraction, config.seed)?;
    let mut trimmed = Vec::with_capacity(episodes.len());
    for ep in &episodes {
        ep.validate(config.model.vocab_size)?;
        trimmed.push(trim_static_frames(ep, config.motion_eps)?);
    }
    let norm = compute_norm_stats(&trimmed)?;

    let (mut params, start_step) = match resume {
        Some(path) => {
            let ckpt = crate::model::load_checkpoint(path)?;
            if ckpt.config != config.model {
                return Err(Error::Checkpoint(format!(
                    "checkpoint config does not match run config ({:?} vs {:?})",
                    ckpt.config, config.model
                )));
            }
            let start = ckpt
                .extras
                .get("trained_steps")
                .and_then(|s| s.parse::<u64>().ok())
                .unwrap_or(0);
            let (params, _) = ckpt.into_params()?;
            (params, start)
        }
        None => (MotParams::init(&config.model, config.seed)?, 0),
    };

    let opt_config = AdamWConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..Default::default()
    };
    let mut opt = OptimizerState::new(opt_config, params.set.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = String::from("step,fm_loss,distill_loss,total_loss,lr\n");

    let checkpoint_path = out_dir.join("checkpoint.bin");
    let best_path = out_dir.join("best.bin");
    let mut best_total = f64::INFINITY;
    let mut last = StepLosses { fm: f64::NAN, distill: f64::NAN, total: f64::NAN };

    let total_steps = config.train_steps;
    let mut step_no = 0u64;
    let mut epoch = 0u64;
    'outer: loop {
        let batches = shuffled_batches(&trimmed, config.batch_size, config.seed.wrapping_add(1000 * epoch))?;
        for batch in &batches {
            if step_no >= total_steps {
                break 'outer;
            }
            step_no += 1;
            let samples: Vec<StepSample> = batch
                .iter()
                .map(|&(e, t)| {
                    let s = make_training_sample(&trimmed[e], t, config.model.chunk_length, &norm)?;
                    Ok(StepSample {
                        images: s.images,
                        instruction: s.instruction,
                        state: s.state,
                        action_chunk: s.action_chunk,
                    })
                })
                .collect::<Result<_>>()?;
            let lr = lr_at(step_no, total_steps, config.learning_rate, config.warmup_steps, config.lr_schedule);
            let losses = match train_step(
                &mut params,
                &mut opt,
                &samples,
                config.lambda_distill,
                AttentionKind::DenseMasked,
                lr,
                &mut rng,
            ) {
                Ok(l) => l,
                Err(Error::Numerical(msg)) => {
                    // save a diagnostic dump before aborting
                    let dump = out_dir.join("abort_dump.txt");
                    let _ = fs::write(
                        &dump,
                        format!("step={}\nerror={msg}\nlast_fm={}\nlast_distill={}\n", step_no, last.fm, last.distill),
                    );
                    let _ = fs::write(&log_path, &log);
                    return Err(Error::Numerical(msg));
                }
                Err(e) => return Err(e),
            };
            last = losses;
            if step_no % config.log_every as u64 == 0 || step_no == total_steps {
                log.push_str(&format!(
                    "{},{},{},{},{}\n",
                    start_step + step_no,
                    losses.fm,
                    losses.distill,
                    losses.total,
                    lr
                ));
            }
            if losses.total < best_total {
                best_total = losses.total;
                let mut extras = BTreeMap::new();
                extras.insert("trained_steps".to_string(), (start_step + step_no).to_string());
                save_checkpoint(&best_path, &params, &extras, &norm_stats_tensors(&norm))?;
            }
        }
        epoch += 1;
    }

    fs::write(&log_path, &log)?;
    let mut extras = BTreeMap::new();
    extras.insert("trained_steps".to_string(), (start_step + step_no).to_string());
    save_checkpoint(&checkpoint_path, &params, &extras, &norm_stats_tensors(&norm))?;

    Ok(TrainOutcome {
        steps_run: start_step + step_no,
        final_losses: last,
        checkpoint_path,
        best_path,
        log_path,
        num_params: params.num_scalars(),
    })
}
