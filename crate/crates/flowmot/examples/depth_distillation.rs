//! Depth-query distillation in isolation: synthetic teacher tokens from
//! rendered views, cross-attention projection of the query hidden states,
//! and a few optimizer steps driving the L1 alignment loss down.

use flowmot::depth::{distill_loss, synthetic_depth_teacher, total_loss};
use flowmot::env::{render_views, reset, tasks};
use flowmot::model::{AttentionKind, ModelConfig, MotParams};
use flowmot::tensor::{AdamWConfig, Graph, OptimizerState};

fn main() {
    let cfg = ModelConfig { num_layers: 1, ..ModelConfig::desk_scale() };
    let mut params = MotParams::init(&cfg, 3).unwrap();

    let state = reset(&tasks::pick_place(), 12).unwrap();
    let images = render_views(&state, cfg.image_size);
    let teacher = synthetic_depth_teacher(&images, &cfg).unwrap();
    println!(
        "teacher tokens: 3 views x {} queries x {} dims",
        teacher.num_queries_per_view, teacher.token_dim
    );

    let mut opt = OptimizerState::new(
        AdamWConfig { learning_rate: 3e-3, ..Default::default() },
        params.set.tensors(),
    );
    let state_vec = vec![0.0; cfg.state_dim];
    let noisy = vec![0.0; cfg.chunk_length * cfg.action_dim];
    for step in 0..60 {
        let mut g = Graph::new();
        let ctx = params.encode_observation(&mut g, &images, &[5, 6, 7], &state_vec).unwrap();
        let fwd = params
            .forward_mot(&mut g, &ctx, &noisy, 0.5, AttentionKind::DenseMasked)
            .unwrap();
        let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden).unwrap();
        let projected = params.project_queries(&mut g, hidden).unwrap();
        let dl = distill_loss(&mut g, projected, &teacher).unwrap();
        // distillation-only objective: zero flow-matching term
        let zero = g.constant(vec![1], vec![0.0]).unwrap();
        let loss = total_loss(&mut g, zero, Some(dl), 1.0).unwrap();
        let value = g.scalar_value(loss).unwrap();
        if step % 10 == 0 {
            println!("step {step:3}: distill loss {value:.5}");
        }
        g.backward(loss).unwrap();
        params.set.zero_grads();
        let set = &mut params.set;
        g.accumulate_param_grads(&mut |slot, grad| {
            set.get_mut(slot).accumulate_grad(grad).unwrap();
        })
        .unwrap();
        drop(g);
        opt.step(params.set.tensors_mut()).unwrap();
    }
    println!("the projection learns to match the frozen teacher");
}
