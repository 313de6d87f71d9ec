//! Evaluate policies with the SR/PS protocol. Runs the scripted expert
//! baseline on every reference task; pass a checkpoint path to evaluate
//! a trained model on the reach task instead.

use std::collections::BTreeMap;

use flowmot::env::{tasks, EnvParams};
use flowmot::eval::{aggregate, run_trial, ExpertPolicy, MotPolicy, TrialOptions};
use flowmot::model::load_checkpoint;
use flowmot::train::norm_stats_from_tensors;

fn main() {
    let checkpoint = std::env::args().nth(1);
    let env_params = EnvParams::default();
    let opts = TrialOptions::default();
    let trials_per_task = 15;
    let mut results = BTreeMap::new();

    match checkpoint {
        None => {
            println!("no checkpoint given; evaluating the scripted expert baseline");
            for name in tasks::ALL_TASKS {
                let task = tasks::by_name(name).unwrap();
                let mut trials = Vec::new();
                for i in 0..trials_per_task {
                    let mut policy = ExpertPolicy;
                    trials.push(
                        run_trial(&mut policy, &task, &env_params, 500 + i, &opts, None).unwrap(),
                    );
                }
                results.insert(task.name.clone(), trials);
            }
        }
        Some(path) => {
            println!("evaluating checkpoint {path}");
            let ckpt = load_checkpoint(std::path::Path::new(&path)).unwrap();
            let (params, extra) = ckpt.into_params().unwrap();
            let norm = norm_stats_from_tensors(&extra).unwrap();
            let task = tasks::reach();
            let mut trials = Vec::new();
            for i in 0..trials_per_task {
                let mut policy = MotPolicy::new(&params, norm.clone(), 10);
                trials
                    .push(run_trial(&mut policy, &task, &env_params, 500 + i, &opts, None).unwrap());
            }
            results.insert(task.name.clone(), trials);
        }
    }

    let report = aggregate(&results).unwrap();
    for t in &report.per_task {
        println!("{}: SR {:.3} PS {:.3} ({} trials)", t.task_id, t.sr, t.ps, t.n_trials);
    }
    println!("overall: SR {:.3} PS {:.3}", report.overall_sr, report.overall_ps);
    assert!(report.overall_ps >= report.overall_sr);
}
