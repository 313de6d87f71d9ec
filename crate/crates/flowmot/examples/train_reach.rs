//! Miniature end-to-end run: collect reach demonstrations, train a small
//! model for a few hundred steps, then evaluate it. A full-quality run
//! uses the CLI with the default config (see the README); this example
//! trades success rate for a short runtime.

use std::collections::BTreeMap;

use flowmot::config::RunConfig;
use flowmot::env::{expert::collect_demonstrations, tasks, EnvParams};
use flowmot::eval::{aggregate, run_trial, MotPolicy, TrialOptions};
use flowmot::model::load_checkpoint;
use flowmot::train::{norm_stats_from_tensors, train};

fn main() {
    let out = std::env::temp_dir().join("flowmot_train_reach");
    let task = tasks::reach();
    let env_params = EnvParams::default();

    let mut cfg = RunConfig::default();
    cfg.train_steps = 300;
    cfg.log_every = 50;

    println!("collecting 40 demonstrations...");
    let episodes =
        collect_demonstrations(&task, &env_params, 40, cfg.seed, cfg.model.image_size, cfg.demo_action_noise)
            .unwrap();

    println!("training {} steps...", cfg.train_steps);
    let outcome = train(&cfg, episodes, &out, None).unwrap();
    println!(
        "final losses: fm {:.4} distill {:.4} ({} parameters)",
        outcome.final_losses.fm, outcome.final_losses.distill, outcome.num_params
    );

    let ckpt = load_checkpoint(&outcome.checkpoint_path).unwrap();
    let (params, extra) = ckpt.into_params().unwrap();
    let norm = norm_stats_from_tensors(&extra).unwrap();

    println!("evaluating 10 trials...");
    let opts = TrialOptions {
        failure_window: cfg.failure_window,
        max_consecutive_failures: 3,
        image_size: cfg.model.image_size,
    };
    let mut results = BTreeMap::new();
    let mut trials = Vec::new();
    for i in 0..10u64 {
        let mut policy = MotPolicy::new(&params, norm.clone(), cfg.execution_horizon);
        let r = run_trial(&mut policy, &task, &env_params, 9000 + i, &opts, None).unwrap();
        println!(
            "  trial {i}: {}/{} checkpoints, {:?} after {} steps",
            r.checkpoints_completed, r.total_checkpoints, r.termination, r.steps_used
        );
        trials.push(r);
    }
    results.insert(task.name.clone(), trials);
    let report = aggregate(&results).unwrap();
    println!("SR {:.2} PS {:.2}", report.overall_sr, report.overall_ps);
}
