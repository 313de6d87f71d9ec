//! Model hyperparameters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture configuration shared by the model, the data pipeline and
/// the samplers.
///
/// `Default` mirrors the pre-training-scale horizon (chunk length 50); the
/// CLI's desk-scale preset overrides it to 16.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden_dim: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Action chunk length T: the temporal horizon of the predicted
    /// trajectory.
    pub chunk_length: usize,
    pub num_depth_queries_per_view: usize,
    pub depth_token_dim: usize,
    /// Euler integration steps K used when sampling action chunks.
    pub euler_steps: usize,
    /// Which pathway processes the state token. It sits in the
    /// conditioning prefix, so the observation pathway is the default.
    pub state_uses_action_pathway: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 64,
            num_layers: 2,
            num_heads: 2,
            mlp_hidden_dim: 256,
            image_size: 32,
            patch_size: 8,
            vocab_size: 32,
            max_text_len: 8,
            state_dim: 6,
            action_dim: 6,
            chunk_length: 50,
            num_depth_queries_per_view: 4,
            depth_token_dim: 8,
            euler_steps: 10,
            state_uses_action_pathway: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale defaults used by the CLI and the end-to-end tests.
    pub fn desk_scale() -> Self {
        ModelConfig { chunk_length: 16, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 {
            return Err(Error::Config("model_dim and num_heads must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.chunk_length < 1 {
            return Err(Error::Config("chunk_length must be >= 1".into()));
        }
        if self.euler_steps < 1 {
            return Err(Error::Config("euler_steps must be >= 1".into()));
        }
        if self.mlp_hidden_dim == 0
            || self.vocab_size == 0
            || self.state_dim == 0
            || self.action_dim == 0
            || self.depth_token_dim == 0
        {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn patches_per_view(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Image tokens across the three views.
    pub fn image_tokens(&self) -> usize {
        3 * self.patches_per_view()
    }

    pub fn depth_query_tokens(&self) -> usize {
        3 * self.num_depth_queries_per_view
    }

    /// Observation-block length for a given instruction length (image
    /// tokens, then text tokens, then depth-query tokens).
    pub fn obs_len(&self, text_len: usize) -> usize {
        self.image_tokens() + text_len + self.depth_query_tokens()
    }

    /// Full sequence length: observation block + state token + action chunk.
    pub fn seq_len(&self, text_len: usize) -> usize {
        self.obs_len(text_len) + 1 + self.chunk_length
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model_dim".into(), self.model_dim.to_string());
        m.insert("num_layers".into(), self.num_layers.to_string());
        m.insert("num_heads".into(), self.num_heads.to_string());
        m.insert("mlp_hidden_dim".into(), self.mlp_hidden_dim.to_string());
        m.insert("image_size".into(), self.image_size.to_string());
        m.insert("patch_size".into(), self.patch_size.to_string());
        m.insert("vocab_size".into(), self.vocab_size.to_string());
        m.insert("max_text_len".into(), self.max_text_len.to_string());
        m.insert("state_dim".into(), self.state_dim.to_string());
        m.insert("action_dim".into(), self.action_dim.to_string());
        m.insert("chunk_length".into(), self.chunk_length.to_string());
        m.insert(
            "num_depth_queries_per_view".into(),
            self.num_depth_queries_per_view.to_string(),
        );
        m.insert("depth_token_dim".into(), self.depth_token_dim.to_string());
        m.insert("euler_steps".into(), self.euler_steps.to_string());
        m.insert(
            "state_uses_action_pathway".into(),
            self.state_uses_action_pathway.to_string(),
        );
        m
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get_usize(kv: &BTreeMap<String, String>, key: &str) -> Result<usize> {
            kv.get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for config key {key}")))
        }
        let state_uses_action_pathway = kv
            .get("state_uses_action_pathway")
            .ok_or_else(|| Error::Checkpoint("missing config key state_uses_action_pathway".into()))?
            .parse()
            .map_err(|_| Error::Checkpoint("bad value for state_uses_action_pathway".into()))?;
        let cfg = ModelConfig {
            model_dim: get_usize(kv, "model_dim")?,
            num_layers: get_usize(kv, "num_layers")?,
            num_heads: get_usize(kv, "num_heads")?,
            mlp_hidden_dim: get_usize(kv, "mlp_hidden_dim")?,
            image_size: get_usize(kv, "image_size")?,
            patch_size: get_usize(kv, "patch_size")?,
            vocab_size: get_usize(kv, "vocab_size")?,
            max_text_len: get_usize(kv, "max_text_len")?,
            state_dim: get_usize(kv, "state_dim")?,
            action_dim: get_usize(kv, "action_dim")?,
            chunk_length: get_usize(kv, "chunk_length")?,
            num_depth_queries_per_view: get_usize(kv, "num_depth_queries_per_view")?,
            depth_token_dim: get_usize(kv, "depth_token_dim")?,
            euler_steps: get_usize(kv, "euler_steps")?,
            state_uses_action_pathway,
        };
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(cfg)
    }
}
