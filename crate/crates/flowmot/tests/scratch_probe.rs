use flowmot::env::{render_views, reset, state_vector, tasks, EnvParams, dist};
use flowmot::eval::{Policy, MotPolicy, PolicyObservation};
use flowmot::model::load_checkpoint;
use flowmot::train::norm_stats_from_tensors;
use flowmot::data::tokenize;

const SEEDS: &[u64] = &[10000,10001,10002,10003,10004,10005,10006,10007,10008,10009,10010,10011,10012,10013,10014,10015,10016,10017,10018,10019];

#[test]
fn probe_direction_accuracy() {
    let ckpt = load_checkpoint(std::path::Path::new("/tmp/e2e_v2/checkpoint.bin")).unwrap();
    let (params, extra) = ckpt.into_params().unwrap();
    let norm = norm_stats_from_tensors(&extra).unwrap();
    let task = tasks::reach();
    let env_params = EnvParams::default();
    let instruction = tokenize(&task.instruction).unwrap();

    let mut angle_errs = Vec::new();
    for seed in SEEDS.iter().copied() {
        let state = reset(&task, seed).unwrap();
        let images = render_views(&state, 32);
        let sv = state_vector(&state);
        let mut policy = MotPolicy::new(&params, norm.clone(), 10);
        policy.begin_trial(seed);
        let obs = PolicyObservation {
            images: &images, state: &sv, instruction: &instruction,
            env_state: &state, task: &task, env_params: &env_params,
        };
        let a = policy.act(&obs).unwrap();
        let goal = state.goals[0].center;
        let arm = state.arms[0].pos;
        let want = ((goal.0 - arm.0), (goal.1 - arm.1));
        let got = (a[0], a[1]);
        let dot = want.0 * got.0 + want.1 * got.1;
        let nw = (want.0 * want.0 + want.1 * want.1).sqrt();
        let ng = (got.0 * got.0 + got.1 * got.1).sqrt();
        let angle = (dot / (nw * ng)).clamp(-1.0, 1.0).acos().to_degrees();
        angle_errs.push(angle);
        println!("seed {} goal ({:.2},{:.2}) dist {:.2} angle_err {:.1} deg mag {:.4}", seed, goal.0, goal.1, dist(goal, arm), angle, ng);
    }
    let mean = angle_errs.iter().sum::<f64>() / angle_errs.len() as f64;
    println!("mean initial angle error: {mean:.1} deg");
}
