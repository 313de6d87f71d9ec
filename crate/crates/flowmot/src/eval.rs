//! Trial execution with the termination criteria, Success Rate /
//! Progress Score computation, and report serialization.
//!
//! A trial ends when all checkpoints complete, the step budget runs out,
//! or three consecutive subtask failures occur; a subtask failure is a
//! window of `failure_window` steps with no new checkpoint, and the
//! failure counter resets on progress.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, NormStats};
use crate::env::{
    render_views, reset, state_vector, step, Action, EnvParams, EnvState, TaskSpec, ACTION_DIM,
};
use crate::error::{Error, Result};
use crate::flow::sample_actions;
use crate::model::{AttentionKind, MotParams};
use crate::tensor::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Completed,
    StepBudget,
    ConsecutiveFailures,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrialResult {
    pub checkpoints_completed: usize,
    pub total_checkpoints: usize,
    pub success: bool,
    pub termination: TerminationReason,
    pub steps_used: usize,
    /// Set when the trial was cut short by a policy fault (non-finite
    /// actions); the trial is marked failed rather than crashing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl TrialResult {
    pub fn progress(&self) -> f64 {
        self.checkpoints_completed as f64 / self.total_checkpoints as f64
    }
}

/// Fraction of sequential checkpoints completed.
pub fn progress_score(completed: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Contract("progress score needs total checkpoints >= 1".into()));
    }
    if completed > total {
        return Err(Error::Contract(format!("completed {completed} exceeds total {total}")));
    }
    Ok(completed as f64 / total as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct TrialOptions {
    pub failure_window: usize,
    pub max_consecutive_failures: usize,
    pub image_size: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions { failure_window: 50, max_consecutive_failures: 3, image_size: 32 }
    }
}

/// What a policy sees each step. `env_state` is privileged information
/// used only by the scripted expert baseline.
pub struct PolicyObservation<'a> {
    pub images: &'a [Image; 3],
    pub state: &'a [f64],
    pub instruction: &'a [u32],
    pub env_state: &'a EnvState,
    pub task: &'a TaskSpec,
    pub env_params: &'a EnvParams,
}

pub trait Policy {
    /// Called once per trial before the first action; resets internal
    /// buffers and reseeds any internal randomness from the trial seed.
    fn begin_trial(&mut self, trial_seed: u64);
    fn act(&mut self, obs: &PolicyObservation) -> Result<Action>;
}

/// The scripted expert as a policy (reads the privileged state).
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn begin_trial(&mut self, _trial_seed: u64) {}

    fn act(&mut self, obs: &PolicyObservation) -> Result<Action> {
        Ok(crate::env::expert::scripted_expert(obs.env_state, obs.task, obs.env_params))
    }
}

/// Learned policy: flow-matching action generation executed
/// receding-horizon (sample a chunk, run the first `horizon` steps,
/// re-plan).
pub struct MotPolicy<'a> {
    params: &'a MotParams,
    norm: NormStats,
    horizon: usize,
    attention: AttentionKind,
    buffer: VecDeque<Action>,
    rng: ChaCha8Rng,
}

impl<'a> MotPolicy<'a> {
    pub fn new(params: &'a MotParams, norm: NormStats, horizon: usize) -> Self {
        MotPolicy {
            params,
            norm,
            horizon: horizon.max(1),
            attention: AttentionKind::DenseMasked,
            buffer: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    fn plan(&mut self, obs: &PolicyObservation) -> Result<()> {
        let cfg = &self.params.config;
        let mut g = Graph::new();
        let state_norm = self.norm.state.normalize(obs.state);
        let ctx = self.params.encode_observation(&mut g, obs.images, obs.instruction, &state_norm)?;
        let params = self.params;
        let attention = self.attention;
        let chunk = sample_actions(
            |current, s| {
                let out = params.forward_mot(&mut g, &ctx, current, s, attention)?;
                Ok(g.value(out.velocity).to_vec())
            },
            cfg.chunk_length,
            cfg.action_dim,
            cfg.euler_steps,
            &mut self.rng,
        )?;
        for k in 0..self.horizon.min(cfg.chunk_length) {
            let row = &chunk[k * cfg.action_dim..(k + 1) * cfg.action_dim];
            let denorm = self.norm.action.denormalize(row);
            let mut action = [0.0; ACTION_DIM];
            for (a, v) in action.iter_mut().zip(&denorm) {
                *a = *v;
            }
            self.buffer.push_back(action);
        }
        Ok(())
    }
}

impl Policy for MotPolicy<'_> {
    fn begin_trial(&mut self, trial_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(trial_seed.wrapping_mul(0x9e37_79b9));
        self.buffer.clear();
    }

    fn act(&mut self, obs: &PolicyObservation) -> Result<Action> {
        if self.buffer.is_empty() {
            self.plan(obs)?;
        }
        Ok(self.buffer.pop_front().expect("plan fills the buffer"))
    }
}

/// One per-step record for replay.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrialLogRecord {
    pub step: usize,
    pub action: Vec<f64>,
    pub checkpoints: usize,
}

/// Run one trial to termination. Reproducible: the same policy
/// parameters, task and seed give an identical result.
pub fn run_trial(
    policy: &mut dyn Policy,
    task: &TaskSpec,
    env_params: &EnvParams,
    seed: u64,
    opts: &TrialOptions,
    mut log: Option<&mut Vec<TrialLogRecord>>,
) -> Result<TrialResult> {
    let total = task.total_checkpoints();
    let mut state = reset(task, seed)?;
    let instruction = crate::data::tokenize(&task.instruction)?;
    policy.begin_trial(seed);

    let mut failures = 0usize;
    let mut since_progress = 0usize;
    let mut termination = TerminationReason::StepBudget;
    let mut diagnostic = None;

    while state.step_count < task.max_steps {
        let images = render_views(&state, opts.image_size);
        let sv = state_vector(&state);
        let obs = PolicyObservation {
            images: &images,
            state: &sv,
            instruction: &instruction,
            env_state: &state,
            task,
            env_params,
        };
        let action = match policy.act(&obs) {
            Ok(a) if a.iter().all(|v| v.is_finite()) => a,
            Ok(_) => {
                diagnostic = Some("policy emitted non-finite action".to_string());
                termination = TerminationReason::ConsecutiveFailures;
                break;
            }
            Err(e) => {
                diagnostic = Some(format!("policy fault: {e}"));
                termination = TerminationReason::ConsecutiveFailures;
                break;
            }
        };
        let before = state.checkpoints_done;
        state = step(task, env_params, &state, &action);
        if let Some(records) = log.as_mut() {
            records.push(TrialLogRecord {
                step: state.step_count,
                action: action.to_vec(),
                checkpoints: state.checkpoints_done,
            });
        }
        if state.checkpoints_done == total {
            termination = TerminationReason::Completed;
            break;
        }
        if state.checkpoints_done > before {
            failures = 0;
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress >= opts.failure_window {
                failures += 1;
                since_progress = 0;
                if failures >= opts.max_consecutive_failures {
                    termination = TerminationReason::ConsecutiveFailures;
                    break;
                }
            }
        }
    }

    let completed = state.checkpoints_done;
    Ok(TrialResult {
        checkpoints_completed: completed,
        total_checkpoints: total,
        success: completed == total,
        termination,
        steps_used: state.step_count,
        diagnostic,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TaskEval {
    pub task_id: String,
    pub n_trials: usize,
    pub sr: f64,
    pub ps: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub overall_sr: f64,
    pub overall_ps: f64,
}

/// Unweighted mean over per-task rows; the same averaging used for the
/// overall rows of the published benchmark tables.
pub fn overall_from_per_task(per_task: &[TaskEval]) -> (f64, f64) {
    let n = per_task.len() as f64;
    let sr = per_task.iter().map(|t| t.sr).sum::<f64>() / n;
    let ps = per_task.iter().map(|t| t.ps).sum::<f64>() / n;
    (sr, ps)
}

/// Aggregate trial results into per-task SR/PS and the unweighted
/// overall means.
pub fn aggregate(results: &BTreeMap<String, Vec<TrialResult>>) -> Result<EvalReport> {
    if results.is_empty() || results.values().any(|v| v.is_empty()) {
        return Err(Error::Contract("aggregate needs at least one trial per task".into()));
    }
    let per_task: Vec<TaskEval> = results
        .iter()
        .map(|(task_id, trials)| {
            let n = trials.len() as f64;
            let sr = trials.iter().filter(|t| t.success).count() as f64 / n;
            let ps = trials.iter().map(|t| t.progress()).sum::<f64>() / n;
            TaskEval { task_id: task_id.clone(), n_trials: trials.len(), sr, ps }
        })
        .collect();
    let (overall_sr, overall_ps) = overall_from_per_task(&per_task);
    Ok(EvalReport { per_task, overall_sr, overall_ps })
}

pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("task_id,n_trials,sr,ps\n");
    for t in &report.per_task {
        out.push_str(&format!("{},{},{},{}\n", t.task_id, t.n_trials, t.sr, t.ps));
    }
    out.push_str(&format!("overall,,{},{}\n", report.overall_sr, report.overall_ps));
    fs::write(path, out)?;
    Ok(())
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
    let mut f = fs::File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_trial_log(path: &Path, records: &[TrialLogRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Data(format!("log record: {e}")))?,
        );
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tasks;

    struct ZeroPolicy;
    impl Policy for ZeroPolicy {
        fn begin_trial(&mut self, _: u64) {}
        fn act(&mut self, _: &PolicyObservation) -> Result<Action> {
            Ok([0.0; ACTION_DIM])
        }
    }

    /// Completes the first `n` checkpoints via the expert, then stalls.
    struct StallAfter {
        n: usize,
    }
    impl Policy for StallAfter {
        fn begin_trial(&mut self, _: u64) {}
        fn act(&mut self, obs: &PolicyObservation) -> Result<Action> {
            if obs.env_state.checkpoints_done < self.n {
                Ok(crate::env::expert::scripted_expert(obs.env_state, obs.task, obs.env_params))
            } else {
                Ok([0.0; ACTION_DIM])
            }
        }
    }

    struct NanPolicy;
    impl Policy for NanPolicy {
        fn begin_trial(&mut self, _: u64) {}
        fn act(&mut self, _: &PolicyObservation) -> Result<Action> {
            Ok([f64::NAN; ACTION_DIM])
        }
    }

    fn opts() -> TrialOptions {
        TrialOptions { failure_window: 20, max_consecutive_failures: 3, image_size: 16 }
    }

    #[test]
    fn expert_trial_completes_pick_place() {
        let task = tasks::pick_place();
        let r = run_trial(&mut ExpertPolicy, &task, &EnvParams::default(), 3, &opts(), None)
            .unwrap();
        assert!(r.success);
        assert_eq!(r.termination, TerminationReason::Completed);
        assert_eq!(r.checkpoints_completed, 4);
    }

    #[test]
    fn zero_policy_fails_by_consecutive_failures_after_3w_steps() {
        let task = tasks::reach();
        let o = opts();
        let r = run_trial(&mut ZeroPolicy, &task, &EnvParams::default(), 3, &o, None).unwrap();
        assert!(!r.success);
        assert_eq!(r.checkpoints_completed, 0);
        assert_eq!(r.termination, TerminationReason::ConsecutiveFailures);
        assert_eq!(r.steps_used, 3 * o.failure_window);
        assert_eq!(r.progress(), 0.0);
    }

    #[test]
    fn stalling_policy_keeps_partial_progress() {
        let task = tasks::handover();
        let mut p = StallAfter { n: 4 };
        let r = run_trial(&mut p, &task, &EnvParams::default(), 5, &opts(), None).unwrap();
        assert!(!r.success);
        assert_eq!(r.checkpoints_completed, 4);
        assert_eq!(r.total_checkpoints, 6);
        assert!((r.progress() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn nan_policy_marks_trial_failed_with_diagnostic() {
        let task = tasks::reach();
        let r = run_trial(&mut NanPolicy, &task, &EnvParams::default(), 1, &opts(), None).unwrap();
        assert!(!r.success);
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn trials_are_reproducible() {
        let task = tasks::pick_place();
        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        let a = run_trial(&mut ExpertPolicy, &task, &EnvParams::default(), 9, &opts(), Some(&mut log_a)).unwrap();
        let b = run_trial(&mut ExpertPolicy, &task, &EnvParams::default(), 9, &opts(), Some(&mut log_b)).unwrap();
        assert_eq!(a.steps_used, b.steps_used);
        assert_eq!(a.checkpoints_completed, b.checkpoints_completed);
        assert_eq!(log_a.len(), log_b.len());
        for (x, y) in log_a.iter().zip(&log_b) {
            assert_eq!(x.action, y.action);
        }
    }

    #[test]
    fn termination_is_total_within_budget() {
        let task = tasks::reach();
        let r = run_trial(&mut ZeroPolicy, &task, &EnvParams::default(), 1,
            &TrialOptions { failure_window: 1000, max_consecutive_failures: 3, image_size: 16 }, None)
            .unwrap();
        assert_eq!(r.termination, TerminationReason::StepBudget);
        assert!(r.steps_used <= task.max_steps + 1);
    }

    #[test]
    fn progress_score_examples() {
        assert!((progress_score(4, 6).unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(progress_score(0, 5).unwrap(), 0.0);
        assert_eq!(progress_score(7, 7).unwrap(), 1.0);
        assert!(progress_score(1, 0).is_err());
        assert!(progress_score(3, 2).is_err());
    }

    fn trial(success: bool, completed: usize, total: usize) -> TrialResult {
        TrialResult {
            checkpoints_completed: completed,
            total_checkpoints: total,
            success,
            termination: if success {
                TerminationReason::Completed
            } else {
                TerminationReason::StepBudget
            },
            steps_used: 10,
            diagnostic: None,
        }
    }

    #[test]
    fn aggregate_examples() {
        // one task, trials {success, fail} with PS {1.0, 0.5} -> SR 0.5, PS 0.75
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![trial(true, 2, 2), trial(false, 1, 2)]);
        let r = aggregate(&m).unwrap();
        assert_eq!(r.per_task[0].sr, 0.5);
        assert_eq!(r.per_task[0].ps, 0.75);

        // two tasks with SR {1.0, 0.0} -> overall 0.5 regardless of trial counts
        let mut m2 = BTreeMap::new();
        m2.insert("a".to_string(), vec![trial(true, 2, 2)]);
        m2.insert("b".to_string(), vec![trial(false, 0, 2); 5]);
        let r2 = aggregate(&m2).unwrap();
        assert_eq!(r2.overall_sr, 0.5);

        // PS dominates SR in every aggregate
        for r in [&r, &r2] {
            assert!(r.overall_ps >= r.overall_sr);
            for t in &r.per_task {
                assert!(t.ps >= t.sr);
            }
        }
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(aggregate(&BTreeMap::new()).is_err());
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Vec::<TrialResult>::new());
        assert!(aggregate(&m).is_err());
    }
}
