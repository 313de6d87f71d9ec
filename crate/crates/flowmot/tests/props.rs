//! Property tests over the data pipeline, mask construction, flow path
//! and config round trips.

use proptest::prelude::*;

use flowmot::config::RunConfig;
use flowmot::data::{compute_norm_stats, trim_static_frames, Episode, Image};
use flowmot::flow::make_flow_sample_at;
use flowmot::model::{build_block_mask, BlockMaskSpec};

fn episode_from_states(states: Vec<Vec<f64>>) -> Episode {
    let n = states.len();
    Episode {
        task_id: "prop".into(),
        checkpoint_count: 1,
        seed: 0,
        instruction: vec![1],
        images: (0..n)
            .map(|i| {
                let img = Image::filled(4, (i % 256) as u8);
                [img.clone(), img.clone(), img]
            })
            .collect(),
        states,
        actions: (0..n).map(|i| vec![i as f64 * 0.5]).collect(),
    }
}

proptest! {
    #[test]
    fn mask_matches_elementwise_rule(obs in 0usize..24, state in 0usize..3, act in 0usize..24) {
        prop_assume!(obs + state + act > 0);
        let spec = BlockMaskSpec::new(obs, state, act);
        let mask = build_block_mask(&spec).unwrap();
        for q in 0..spec.total() {
            for k in 0..spec.total() {
                let expect = spec.block_of(k).unwrap() <= spec.block_of(q).unwrap();
                prop_assert_eq!(mask.get(q, k), expect);
            }
        }
    }

    #[test]
    fn trim_is_idempotent(
        lead in 0usize..4,
        trail in 0usize..4,
        core in prop::collection::vec(-5.0f64..5.0, 2..8),
    ) {
        // build an episode with duplicated first/last states around a
        // strictly moving core
        let mut moving: Vec<Vec<f64>> = Vec::new();
        for (i, v) in core.iter().enumerate() {
            moving.push(vec![*v + i as f64 * 10.0]); // guarantees motion
        }
        let mut states = Vec::new();
        for _ in 0..lead {
            states.push(moving[0].clone());
        }
        states.extend(moving.iter().cloned());
        for _ in 0..trail {
            states.push(moving.last().unwrap().clone());
        }
        let ep = episode_from_states(states);
        let once = trim_static_frames(&ep, 1e-9).unwrap();
        let twice = trim_static_frames(&once, 1e-9).unwrap();
        prop_assert_eq!(once.len(), twice.len());
        prop_assert_eq!(once.len(), core.len());
        prop_assert_eq!(&once.states, &twice.states);
    }

    #[test]
    fn normalization_round_trips(
        values in prop::collection::vec(
            prop::collection::vec(-1e4f64..1e4, 3), 2..12),
    ) {
        let ep = episode_from_states(values.clone());
        let stats = compute_norm_stats(std::slice::from_ref(&ep)).unwrap();
        for v in &values {
            let back = stats.state.denormalize(&stats.state.normalize(v));
            for (b, x) in back.iter().zip(v) {
                // tolerance scales with magnitude; spec pins 1e-10 for
                // workspace-scale values
                prop_assert!((b - x).abs() < 1e-10 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn flow_interpolation_identity(
        clean in prop::collection::vec(-3.0f64..3.0, 1..12),
        noise_seed in prop::collection::vec(-3.0f64..3.0, 12),
        s in 0.0f64..=1.0,
    ) {
        let noise = noise_seed[..clean.len()].to_vec();
        let sample = make_flow_sample_at(&clean, noise, s);
        for i in 0..clean.len() {
            let back = sample.interpolant[i] + (1.0 - s) * sample.target[i];
            prop_assert!((back - clean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_round_trip(
        seed in 0u64..1_000_000,
        steps in 1u64..100_000,
        lr in 1e-6f64..1.0,
        frac in 0.01f64..=1.0,
        batch in 1usize..512,
    ) {
        let mut c = RunConfig::default();
        c.seed = seed;
        c.train_steps = steps;
        c.learning_rate = lr;
        c.data_fraction = frac;
        c.batch_size = batch;
        let parsed = RunConfig::parse(&c.dump()).unwrap();
        prop_assert_eq!(parsed, c);
    }
}
