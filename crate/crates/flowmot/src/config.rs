//! Run configuration: a flat UTF-8 key=value file with `#` comments.
//! Every key has a default, unknown keys are rejected, and
//! `parse(dump(c)) == c`. Any key can be overridden through the
//! environment with the `FLOWMOT_` prefix (for example
//! `FLOWMOT_TRAIN_STEPS=200`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const ENV_PREFIX: &str = "FLOWMOT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl LrSchedule {
    fn as_str(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Config(format!("unknown lr_schedule {other:?}"))),
        }
    }
}

/// Everything a run needs: model dimensions, training hyperparameters,
/// data paths, evaluation protocol and output directory.
///
/// Desk-scale defaults. The pre-training-scale horizon (chunk length 50)
/// and the published batch-256/20-epoch recipe stay available by setting
/// `chunk_length=50`, `batch_size=256` and a matching `train_steps` in a
/// config file; they are far outside a desk budget and exist as
/// documented presets only.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    // training
    pub batch_size: usize,
    pub train_steps: u64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub lambda_distill: f64,
    pub seed: u64,
    pub data_fraction: f64,
    pub motion_eps: f64,
    pub log_every: usize,
    // data
    pub data_dir: String,
    pub task: String,
    pub demos: usize,
    /// Std of the seeded exploration noise injected (and recorded) during
    /// demonstration collection; widens state coverage around the
    /// expert's nominal path.
    pub demo_action_noise: f64,
    // eval
    pub eval_tasks: String,
    pub trials_per_task: usize,
    pub eval_seed_base: u64,
    pub execution_horizon: usize,
    pub failure_window: usize,
    // bench
    pub bench_batch_size: usize,
    pub bench_warmup_iters: usize,
    pub bench_measured_iters: usize,
    pub bench_replicas: usize,
    pub bench_variant: crate::bench::BenchVariant,
    // output
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk_scale(),
            batch_size: 32,
            train_steps: 1500,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            warmup_steps: 50,
            weight_decay: 0.0,
            lambda_distill: 0.1,
            seed: 0,
            data_fraction: 1.0,
            motion_eps: 1e-6,
            log_every: 50,
            data_dir: String::new(),
            task: "reach".into(),
            demos: 100,
            demo_action_noise: 0.012,
            eval_tasks: "reach".into(),
            trials_per_task: 15,
            eval_seed_base: 10_000,
            execution_horizon: 10,
            failure_window: 50,
            bench_batch_size: 8,
            bench_warmup_iters: 2,
            bench_measured_iters: 8,
            bench_replicas: 0,
            bench_variant: crate::bench::BenchVariant::Both,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
        }
        match key {
            // model
            "model_dim" => self.model.model_dim = p(key, value)?,
            "num_layers" => self.model.num_layers = p(key, value)?,
            "num_heads" => self.model.num_heads = p(key, value)?,
            "mlp_hidden_dim" => self.model.mlp_hidden_dim = p(key, value)?,
            "image_size" => self.model.image_size = p(key, value)?,
            "patch_size" => self.model.patch_size = p(key, value)?,
            "vocab_size" => self.model.vocab_size = p(key, value)?,
            "max_text_len" => self.model.max_text_len = p(key, value)?,
            "state_dim" => self.model.state_dim = p(key, value)?,
            "action_dim" => self.model.action_dim = p(key, value)?,
            "chunk_length" => self.model.chunk_length = p(key, value)?,
            "num_depth_queries_per_view" => {
                self.model.num_depth_queries_per_view = p(key, value)?
            }
            "depth_token_dim" => self.model.depth_token_dim = p(key, value)?,
            "euler_steps" => self.model.euler_steps = p(key, value)?,
            "state_uses_action_pathway" => {
                self.model.state_uses_action_pathway = p(key, value)?
            }
            // training
            "batch_size" => self.batch_size = p(key, value)?,
            "train_steps" => self.train_steps = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "lr_schedule" => self.lr_schedule = LrSchedule::parse(value)?,
            "warmup_steps" => self.warmup_steps = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "lambda_distill" => self.lambda_distill = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "data_fraction" => self.data_fraction = p(key, value)?,
            "motion_eps" => self.motion_eps = p(key, value)?,
            "log_every" => self.log_every = p(key, value)?,
            // data
            "data_dir" => self.data_dir = value.to_string(),
            "task" => self.task = value.to_string(),
            "demos" => self.demos = p(key, value)?,
            "demo_action_noise" => self.demo_action_noise = p(key, value)?,
            // eval
            "eval_tasks" => self.eval_tasks = value.to_string(),
            "trials_per_task" => self.trials_per_task = p(key, value)?,
            "eval_seed_base" => self.eval_seed_base = p(key, value)?,
            "execution_horizon" => self.execution_horizon = p(key, value)?,
            "failure_window" => self.failure_window = p(key, value)?,
            // bench
            "bench_batch_size" => self.bench_batch_size = p(key, value)?,
            "bench_warmup_iters" => self.bench_warmup_iters = p(key, value)?,
            "bench_measured_iters" => self.bench_measured_iters = p(key, value)?,
            "bench_replicas" => self.bench_replicas = p(key, value)?,
            "bench_variant" => self.bench_variant = crate::bench::BenchVariant::parse(value)?,
            // output
            "out_dir" => self.out_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_kv();
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("train_steps".into(), self.train_steps.to_string());
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("lr_schedule".into(), self.lr_schedule.as_str().to_string());
        m.insert("warmup_steps".into(), self.warmup_steps.to_string());
        m.insert("weight_decay".into(), self.weight_decay.to_string());
        m.insert("lambda_distill".into(), self.lambda_distill.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("data_fraction".into(), self.data_fraction.to_string());
        m.insert("motion_eps".into(), self.motion_eps.to_string());
        m.insert("log_every".into(), self.log_every.to_string());
        m.insert("data_dir".into(), self.data_dir.clone());
        m.insert("task".into(), self.task.clone());
        m.insert("demos".into(), self.demos.to_string());
        m.insert("demo_action_noise".into(), self.demo_action_noise.to_string());
        m.insert("eval_tasks".into(), self.eval_tasks.clone());
        m.insert("trials_per_task".into(), self.trials_per_task.to_string());
        m.insert("eval_seed_base".into(), self.eval_seed_base.to_string());
        m.insert("execution_horizon".into(), self.execution_horizon.to_string());
        m.insert("failure_window".into(), self.failure_window.to_string());
        m.insert("bench_batch_size".into(), self.bench_batch_size.to_string());
        m.insert("bench_warmup_iters".into(), self.bench_warmup_iters.to_string());
        m.insert("bench_measured_iters".into(), self.bench_measured_iters.to_string());
        m.insert("bench_replicas".into(), self.bench_replicas.to_string());
        m.insert("bench_variant".into(), self.bench_variant.as_str().to_string());
        m.insert("out_dir".into(), self.out_dir.clone());
        m
    }

    /// Dump as a parseable key=value document (sorted keys).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_kv() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Parse a key=value document over the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            self.set_key(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply `FLOWMOT_<KEY>` environment overrides for every known key.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        let keys: Vec<String> = self.to_kv().keys().cloned().collect();
        for key in keys {
            let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&env_key) {
                self.set_key(&key, &value)?;
            }
        }
        Ok(())
    }

    /// Load from an optional file, then apply environment overrides.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env_overrides()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data_fraction {} outside (0, 1]",
                self.data_fraction
            )));
        }
        if self.lambda_distill < 0.0 {
            return Err(Error::Config("lambda_distill must be >= 0".into()));
        }
        if self.log_every == 0 || self.execution_horizon == 0 || self.failure_window == 0 {
            return Err(Error::Config(
                "log_every, execution_horizon and failure_window must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn eval_task_list(&self) -> Vec<String> {
        self.eval_tasks
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// Episode directory: explicit `data_dir`, or `<out_dir>/episodes`.
    pub fn episodes_dir(&self) -> std::path::PathBuf {
        if self.data_dir.is_empty() {
            Path::new(&self.out_dir).join("episodes")
        } else {
            Path::new(&self.data_dir).to_path_buf()
        }
    }
}
