//! Finite-difference check of the full training objective on a tiny
//! model: every gradient reported here is the analytic reverse-mode
//! result compared against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use flowmot::data::Image;
use flowmot::depth::{distill_loss, synthetic_depth_teacher, total_loss};
use flowmot::flow::{fm_loss, make_flow_sample_at};
use flowmot::model::{AttentionKind, ModelConfig, MotParams};
use flowmot::tensor::Graph;

fn loss_of(params: &MotParams, images: &[Image; 3], flow: &flowmot::flow::FlowSample) -> f64 {
    let mut g = Graph::new();
    let ctx = params.encode_observation(&mut g, images, &[1, 2], &[0.3, -0.1]).unwrap();
    let fwd = params
        .forward_mot(&mut g, &ctx, &flow.interpolant, flow.s, AttentionKind::DenseMasked)
        .unwrap();
    let fm = fm_loss(&mut g, fwd.velocity, flow).unwrap();
    let teacher = synthetic_depth_teacher(images, &params.config).unwrap();
    let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden).unwrap();
    let projected = params.project_queries(&mut g, hidden).unwrap();
    let dl = distill_loss(&mut g, projected, &teacher).unwrap();
    let loss = total_loss(&mut g, fm, Some(dl), 0.1).unwrap();
    g.scalar_value(loss).unwrap()
}

fn main() {
    let cfg = ModelConfig {
        model_dim: 8,
        num_layers: 1,
        num_heads: 2,
        mlp_hidden_dim: 8,
        image_size: 8,
        patch_size: 4,
        vocab_size: 8,
        max_text_len: 3,
        state_dim: 2,
        action_dim: 2,
        chunk_length: 2,
        num_depth_queries_per_view: 1,
        depth_token_dim: 3,
        euler_steps: 2,
        state_uses_action_pathway: false,
    };
    let mut params = MotParams::init(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let image = |rng: &mut ChaCha8Rng| {
        Image::new(8, (0..64).map(|_| rng.random::<u8>()).collect()).unwrap()
    };
    let images = [image(&mut rng), image(&mut rng), image(&mut rng)];
    let clean: Vec<f64> = (0..4)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let noise: Vec<f64> = (0..4)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let flow = make_flow_sample_at(&clean, noise, 0.37);

    // analytic gradients for every parameter
    let mut g = Graph::new();
    let ctx = params.encode_observation(&mut g, &images, &[1, 2], &[0.3, -0.1]).unwrap();
    let fwd = params
        .forward_mot(&mut g, &ctx, &flow.interpolant, flow.s, AttentionKind::DenseMasked)
        .unwrap();
    let fm = fm_loss(&mut g, fwd.velocity, &flow).unwrap();
    let teacher = synthetic_depth_teacher(&images, &cfg).unwrap();
    let hidden = params.depth_query_hidden(&mut g, &ctx, fwd.obs_hidden).unwrap();
    let projected = params.project_queries(&mut g, hidden).unwrap();
    let dl = distill_loss(&mut g, projected, &teacher).unwrap();
    let loss = total_loss(&mut g, fm, Some(dl), 0.1).unwrap();
    println!("total loss: {:.6}", g.scalar_value(loss).unwrap());
    g.backward(loss).unwrap();
    let mut grads: Vec<Vec<f64>> =
        (0..params.set.len()).map(|i| vec![0.0; params.set.get(i).numel()]).collect();
    g.accumulate_param_grads(&mut |slot, grad| {
        for (a, b) in grads[slot].iter_mut().zip(grad) {
            *a += b;
        }
    })
    .unwrap();
    drop(g);

    let step = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for slot in 0..params.set.len() {
        for i in 0..params.set.get(slot).numel() {
            let orig = params.set.get(slot).data()[i];
            params.set.get_mut(slot).data_mut()[i] = orig + step;
            let plus = loss_of(&params, &images, &flow);
            params.set.get_mut(slot).data_mut()[i] = orig - step;
            let minus = loss_of(&params, &images, &flow);
            params.set.get_mut(slot).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[slot][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            if rel > worst.0 {
                worst = (rel, format!("{}[{}]", params.set.name(slot), i));
            }
            checked += 1;
        }
    }
    println!("checked {checked} parameter scalars against central differences");
    println!("worst relative error: {:.3e} at {}", worst.0, worst.1);
    assert!(worst.0 < 1e-4);
    println!("gradients verified");
}
