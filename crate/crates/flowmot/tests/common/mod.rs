//! Shared test oracles: random tiny configs, the full training loss as a
//! function of parameters, a finite-difference gradient harness, and a
//! single-pathway reference transformer.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use flowmot::data::Image;
use flowmot::depth::{distill_loss, synthetic_depth_teacher, total_loss, DepthTokens};
use flowmot::flow::{fm_loss, make_flow_sample_at, FlowSample};
use flowmot::model::{
    build_block_mask, flow_time_embedding, AttentionKind, BlockMaskSpec, ModelConfig, MotParams,
    NORM_EPS,
};
use flowmot::tensor::{Graph, Var};

/// Random config small enough for elementwise finite differences.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let num_heads = [1, 2][rng.random_range(0..2usize)];
    ModelConfig {
        model_dim: 4 * num_heads,
        num_layers: rng.random_range(1..=2),
        num_heads,
        mlp_hidden_dim: rng.random_range(4..=8),
        image_size: 8,
        patch_size: 4,
        vocab_size: 8,
        max_text_len: 3,
        state_dim: rng.random_range(1..=3),
        action_dim: rng.random_range(1..=3),
        chunk_length: rng.random_range(1..=3),
        num_depth_queries_per_view: rng.random_range(1..=2),
        depth_token_dim: rng.random_range(2..=4),
        euler_steps: rng.random_range(1..=3),
        state_uses_action_pathway: rng.random::<f64>() < 0.25,
    }
}

pub struct FixedInputs {
    pub images: [Image; 3],
    pub instruction: Vec<u32>,
    pub state: Vec<f64>,
    pub flow: FlowSample,
    pub teacher: DepthTokens,
}

/// Random observation, chunk and a frozen flow draw for one config.
pub fn random_inputs(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> FixedInputs {
    let image = |rng: &mut ChaCha8Rng| {
        Image::new(
            cfg.image_size,
            (0..cfg.image_size * cfg.image_size).map(|_| rng.random::<u8>()).collect(),
        )
        .unwrap()
    };
    let images = [image(rng), image(rng), image(rng)];
    let text_len = rng.random_range(0..=cfg.max_text_len.min(3));
    let instruction: Vec<u32> =
        (0..text_len).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    let state: Vec<f64> = (0..cfg.state_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let clean: Vec<f64> = (0..cfg.chunk_length * cfg.action_dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let noise: Vec<f64> = (0..clean.len())
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let s = 0.05 + 0.9 * rng.random::<f64>();
    let flow = make_flow_sample_at(&clean, noise, s);
    let teacher = synthetic_depth_teacher(&images, cfg).unwrap();
    FixedInputs { images, instruction, state, flow, teacher }
}

/// The full objective (flow matching + weighted distillation) as a scalar
/// function of the current parameters. Returns the loss and, when asked,
/// leaves gradients inside the graph's parameter slots.
pub fn full_loss(
    params: &MotParams,
    inputs: &FixedInputs,
    lambda: f64,
    backward: bool,
) -> (f64, Option<Vec<Vec<f64>>>) {
    full_loss_with(params, inputs, lambda, backward, AttentionKind::DenseMasked)
}

pub fn full_loss_with(
    params: &MotParams,
    inputs: &FixedInputs,
    lambda: f64,
    backward: bool,
    kind: AttentionKind,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let mut g = Graph::new();
    let ctx = params
        .encode_observation(&mut g, &inputs.images, &inputs.instruction, &inputs.state)
        .unwrap();
    let fwd = params
        .forward_mot(&mut g, &ctx, &inputs.flow.interpolant, inputs.flow.s, kind)
        .unwrap();
    let fm = fm_loss(&mut g, fwd.velocity, &inputs.flow).unwrap();
    let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden).unwrap();
    let projected = params.project_queries(&mut g, hidden).unwrap();
    let dl = distill_loss(&mut g, projected, &inputs.teacher).unwrap();
    let loss = total_loss(&mut g, fm, Some(dl), lambda).unwrap();
    let value = g.scalar_value(loss).unwrap();
    if !backward {
        return (value, None);
    }
    g.backward(loss).unwrap();
    let mut grads: Vec<Vec<f64>> =
        (0..params.set.len()).map(|i| vec![0.0; params.set.get(i).numel()]).collect();
    g.accumulate_param_grads(&mut |slot, grad| {
        for (a, b) in grads[slot].iter_mut().zip(grad) {
            *a += b;
        }
    })
    .unwrap();
    (value, Some(grads))
}

/// Min |projected - teacher| over elements; the L1 loss is kinked at
/// zero, so finite differences need residuals bounded away from it.
pub fn min_distill_residual(params: &MotParams, inputs: &FixedInputs) -> f64 {
    let mut g = Graph::new();
    let ctx = params
        .encode_observation(&mut g, &inputs.images, &inputs.instruction, &inputs.state)
        .unwrap();
    let fwd = params
        .forward_mot(&mut g, &ctx, &inputs.flow.interpolant, inputs.flow.s, AttentionKind::DenseMasked)
        .unwrap();
    let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden).unwrap();
    let projected = params.project_queries(&mut g, hidden).unwrap();
    g.value(projected)
        .iter()
        .zip(&inputs.teacher.values)
        .map(|(p, t)| (p - t).abs())
        .fold(f64::INFINITY, f64::min)
}

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub params_checked: usize,
    pub scalars_checked: usize,
}

/// Central finite differences over every parameter scalar.
pub fn gradcheck_full_model(
    params: &mut MotParams,
    inputs: &FixedInputs,
    lambda: f64,
    step: f64,
) -> GradCheckReport {
    let (_, grads) = full_loss(params, inputs, lambda, true);
    let grads = grads.unwrap();
    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut scalars = 0usize;
    let n_params = params.set.len();
    for slot in 0..n_params {
        for i in 0..params.set.get(slot).numel() {
            let orig = params.set.get(slot).data()[i];
            params.set.get_mut(slot).data_mut()[i] = orig + step;
            let (plus, _) = full_loss(params, inputs, lambda, false);
            params.set.get_mut(slot).data_mut()[i] = orig - step;
            let (minus, _) = full_loss(params, inputs, lambda, false);
            params.set.get_mut(slot).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[slot][i];
            // The denominator floor matches the roundoff limit of central
            // differences at this step size (|loss| ~ 1, so the numeric
            // estimate carries ~1e-10 absolute noise); below it the
            // comparison is absolute, not relative.
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{}[{}]", params.set.name(slot), i);
            }
            scalars += 1;
        }
    }
    GradCheckReport { max_rel_err, worst_param, params_checked: n_params, scalars_checked: scalars }
}

/// Reference single-pathway transformer over the same joint sequence,
/// built from the same tensor ops with one (observation-pathway)
/// parameter set. With tied pathways the mixture must match it.
pub fn unified_forward(
    params: &MotParams,
    g: &mut Graph,
    ctx_tokens: Var,
    obs_len: usize,
    noisy_actions: &[f64],
    s: f64,
) -> Vec<f64> {
    let cfg = &params.config;
    let _d = cfg.model_dim;
    let t_len = cfg.chunk_length;
    let leaf = |g: &mut Graph, name: &str| {
        let t = params.tensor(name).unwrap_or_else(|| panic!("missing {name}"));
        g.leaf(t)
    };

    // action embedding identical to the model's
    let a_in = g.constant(vec![t_len, cfg.action_dim], noisy_actions.to_vec()).unwrap();
    let w_in = leaf(g, "action_embed.w");
    let b_in = leaf(g, "action_embed.b");
    let mut act = g.matmul(a_in, w_in).unwrap();
    act = g.add_row(act, b_in).unwrap();
    let pos_action = leaf(g, "pos.action");
    act = g.add(act, pos_action).unwrap();
    let time_row = flow_time_embedding(g, params, s).unwrap();
    act = g.add_row(act, time_row).unwrap();

    let mut x = g.concat_rows(&[ctx_tokens, act]).unwrap();
    let total = obs_len + 1 + t_len;
    let mask = build_block_mask(&BlockMaskSpec::new(obs_len, 1, t_len)).unwrap();
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();

    for l in 0..cfg.num_layers {
        let gain = leaf(g, &format!("obs.l{l}.attn.gain"));
        let normed = g.rms_norm(x, gain, NORM_EPS).unwrap();
        let mut attn: Option<Var> = None;
        for h in 0..cfg.num_heads {
            let wq = leaf(g, &format!("obs.l{l}.attn.h{h}.wq"));
            let wk = leaf(g, &format!("obs.l{l}.attn.h{h}.wk"));
            let wv = leaf(g, &format!("obs.l{l}.attn.h{h}.wv"));
            let wo = leaf(g, &format!("obs.l{l}.attn.h{h}.wo"));
            let q = g.matmul(normed, wq).unwrap();
            let k = g.matmul(normed, wk).unwrap();
            let v = g.matmul(normed, wv).unwrap();
            let kt = g.transpose(k).unwrap();
            let scores = g.matmul(q, kt).unwrap();
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax(scores, &mask).unwrap();
            let mixed = g.matmul(probs, v).unwrap();
            let proj = g.matmul(mixed, wo).unwrap();
            attn = Some(match attn {
                Some(acc) => g.add(acc, proj).unwrap(),
                None => proj,
            });
        }
        x = g.add(x, attn.unwrap()).unwrap();

        let mlp_gain = leaf(g, &format!("obs.l{l}.mlp.gain"));
        let w1 = leaf(g, &format!("obs.l{l}.mlp.w1"));
        let b1 = leaf(g, &format!("obs.l{l}.mlp.b1"));
        let w2 = leaf(g, &format!("obs.l{l}.mlp.w2"));
        let b2 = leaf(g, &format!("obs.l{l}.mlp.b2"));
        let m = g.rms_norm(x, mlp_gain, NORM_EPS).unwrap();
        let m = g.matmul(m, w1).unwrap();
        let m = g.add_row(m, b1).unwrap();
        let m = g.silu(m);
        let m = g.matmul(m, w2).unwrap();
        let m = g.add_row(m, b2).unwrap();
        x = g.add(x, m).unwrap();
    }

    let chunk = g.slice_rows(x, total - t_len, t_len).unwrap();
    let head_gain = leaf(g, "velocity_head.gain");
    let head_w = leaf(g, "velocity_head.w");
    let head_b = leaf(g, "velocity_head.b");
    let normed = g.rms_norm(chunk, head_gain, NORM_EPS).unwrap();
    let v = g.matmul(normed, head_w).unwrap();
    let velocity = g.add_row(v, head_b).unwrap();
    g.value(velocity).to_vec()
}

/// Seeded RNG shorthand.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
