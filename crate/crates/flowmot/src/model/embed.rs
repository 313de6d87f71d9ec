//! Observation encoding: patch-embedded images from three views, the
//! instruction tokens, learnable depth queries and one projected state
//! token, assembled into the conditioning prefix of the joint sequence.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::params::{MotParams, TIME_FEATURES};
use crate::tensor::{Graph, Var};

/// The model-ready conditioning prefix: the observation block (image,
/// text and depth-query tokens) plus exactly one state token as the final
/// row.
#[derive(Debug, Clone, Copy)]
pub struct ObservationContext {
    /// `[obs_len + 1, model_dim]` token matrix; the state token is the
    /// last row.
    pub tokens: Var,
    pub obs_len: usize,
    pub text_len: usize,
    /// Row where the depth-query tokens start (they span
    /// `3 * num_depth_queries_per_view` rows).
    pub depth_query_start: usize,
}

/// Flatten the non-overlapping patches of one view, pixels scaled to
/// [0, 1], one patch per row.
fn patch_rows(img: &Image, patch: usize) -> Vec<f64> {
    let side = img.size / patch;
    let mut out = Vec::with_capacity(side * side * patch * patch);
    for pr in 0..side {
        for pc in 0..side {
            for r in 0..patch {
                for c in 0..patch {
                    out.push(img.get(pr * patch + r, pc * patch + c) as f64 / 255.0);
                }
            }
        }
    }
    out
}

impl MotParams {
    /// Embed the three views, instruction and state into the observation
    /// context. Deterministic: identical inputs produce bit-identical
    /// token matrices.
    pub fn encode_observation(
        &self,
        g: &mut Graph,
        images: &[Image; 3],
        instruction: &[u32],
        state: &[f64],
    ) -> Result<ObservationContext> {
        let cfg = &self.config;
        for img in images {
            if img.size != cfg.image_size {
                return Err(Error::Data(format!(
                    "image size {} does not match configured {}",
                    img.size, cfg.image_size
                )));
            }
        }
        if state.len() != cfg.state_dim {
            return Err(Error::Data(format!(
                "state vector has {} dims, config wants {}",
                state.len(),
                cfg.state_dim
            )));
        }
        if instruction.len() > cfg.max_text_len {
            return Err(Error::Data(format!(
                "instruction of {} tokens exceeds max_text_len {}",
                instruction.len(),
                cfg.max_text_len
            )));
        }

        let ppv = cfg.patches_per_view();
        let img_tokens = cfg.image_tokens();
        let text_len = instruction.len();
        let nq = cfg.depth_query_tokens();

        let pos_obs = g.param(self.set.get(self.idx.pos_obs), self.idx.pos_obs);

        // image tokens: patches -> linear embed -> + bias + view segment + position
        let mut pixels = Vec::with_capacity(img_tokens * cfg.patch_pixels());
        for img in images {
            pixels.extend(patch_rows(img, cfg.patch_size));
        }
        let patches = g.constant(vec![img_tokens, cfg.patch_pixels()], pixels)?;
        let patch_w = g.param(self.set.get(self.idx.patch_w), self.idx.patch_w);
        let patch_b = g.param(self.set.get(self.idx.patch_b), self.idx.patch_b);
        let mut img_emb = g.matmul(patches, patch_w)?;
        img_emb = g.add_row(img_emb, patch_b)?;
        let view_seg = g.param(self.set.get(self.idx.view_seg), self.idx.view_seg);
        let view_ids: Vec<usize> = (0..3).flat_map(|v| std::iter::repeat(v).take(ppv)).collect();
        let seg = g.embedding(view_seg, &view_ids)?;
        img_emb = g.add(img_emb, seg)?;
        let img_pos = g.slice_rows(pos_obs, 0, img_tokens)?;
        img_emb = g.add(img_emb, img_pos)?;

        // text tokens (may be empty)
        let text_table = g.param(self.set.get(self.idx.text_table), self.idx.text_table);
        let ids: Vec<usize> = instruction.iter().map(|&i| i as usize).collect();
        let mut text_emb = g.embedding(text_table, &ids)?;
        if text_len > 0 {
            let text_pos = g.slice_rows(pos_obs, img_tokens, text_len)?;
            text_emb = g.add(text_emb, text_pos)?;
        }

        // depth-query tokens: learnable initial vectors + their (stable) positions
        let queries = g.param(self.set.get(self.idx.depth_queries), self.idx.depth_queries);
        let q_pos = g.slice_rows(pos_obs, img_tokens + cfg.max_text_len, nq)?;
        let q_emb = g.add(queries, q_pos)?;

        // one state token
        let state_in = g.constant(vec![1, cfg.state_dim], state.to_vec())?;
        let state_w = g.param(self.set.get(self.idx.state_w), self.idx.state_w);
        let state_b = g.param(self.set.get(self.idx.state_b), self.idx.state_b);
        let mut state_tok = g.matmul(state_in, state_w)?;
        state_tok = g.add_row(state_tok, state_b)?;

        let tokens = if text_len > 0 {
            g.concat_rows(&[img_emb, text_emb, q_emb, state_tok])?
        } else {
            g.concat_rows(&[img_emb, q_emb, state_tok])?
        };

        Ok(ObservationContext {
            tokens,
            obs_len: img_tokens + text_len + nq,
            text_len,
            depth_query_start: img_tokens + text_len,
        })
    }
}

/// Sinusoidal features of the flow time `s`: interleaved
/// `[sin(w_i s), cos(w_i s)]` pairs over geometrically spaced frequencies
/// `w_i = 2^i` starting at 1.
pub fn flow_time_features(s: f64, num_features: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Contract(format!("flow time {s} outside [0,1]")));
    }
    let mut out = Vec::with_capacity(num_features);
    let mut freq = 1.0;
    for _ in 0..num_features / 2 {
        out.push((freq * s).sin());
        out.push((freq * s).cos());
        freq *= 2.0;
    }
    if num_features % 2 == 1 {
        out.push((freq * s).sin());
    }
    Ok(out)
}

/// Project the sinusoidal features of `s` to one model-dim row, added to
/// every action-token embedding by the forward pass.
pub fn flow_time_embedding(g: &mut Graph, params: &MotParams, s: f64) -> Result<Var> {
    let feats = flow_time_features(s, TIME_FEATURES)?;
    let f = g.constant(vec![1, TIME_FEATURES], feats)?;
    let w = g.param(params.set.get(params.idx.time_w), params.idx.time_w);
    let b = g.param(params.set.get(params.idx.time_b), params.idx.time_b);
    let e = g.matmul(f, w)?;
    g.add_row(e, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            num_layers: 1,
            num_heads: 2,
            mlp_hidden_dim: 16,
            image_size: 16,
            patch_size: 8,
            vocab_size: 8,
            max_text_len: 4,
            state_dim: 3,
            action_dim: 2,
            chunk_length: 2,
            num_depth_queries_per_view: 1,
            depth_token_dim: 4,
            euler_steps: 2,
            state_uses_action_pathway: false,
        }
    }

    fn views(size: usize) -> [Image; 3] {
        [Image::filled(size, 50), Image::filled(size, 100), Image::filled(size, 150)]
    }

    #[test]
    fn token_counts_match_config_arithmetic() {
        let cfg = tiny_config();
        let params = MotParams::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        let ctx = params
            .encode_observation(&mut g, &views(16), &[1, 2], &[0.0, 0.5, 1.0])
            .unwrap();
        // 16x16 with patch 8 -> 4 patches/view -> 12 image tokens
        assert_eq!(cfg.image_tokens(), 12);
        assert_eq!(ctx.obs_len, 12 + 2 + 3);
        assert_eq!(g.shape(ctx.tokens), &[ctx.obs_len + 1, cfg.model_dim]);
    }

    #[test]
    fn empty_instruction_still_valid() {
        let cfg = tiny_config();
        let params = MotParams::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        let ctx = params.encode_observation(&mut g, &views(16), &[], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(ctx.text_len, 0);
        assert_eq!(ctx.obs_len, 12 + 3);
    }

    #[test]
    fn encoding_is_deterministic() {
        let cfg = tiny_config();
        let params = MotParams::init(&cfg, 7).unwrap();
        let run = || {
            let mut g = Graph::new();
            let ctx = params
                .encode_observation(&mut g, &views(16), &[1, 2, 3], &[0.1, 0.2, 0.3])
                .unwrap();
            g.value(ctx.tokens).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_image_size_and_unknown_token_are_input_errors() {
        let cfg = tiny_config();
        let params = MotParams::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        assert!(params
            .encode_observation(&mut g, &views(8), &[1], &[0.0, 0.0, 0.0])
            .is_err());
        let mut g2 = Graph::new();
        let err = params
            .encode_observation(&mut g2, &views(16), &[99], &[0.0, 0.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn time_features_at_zero_alternate_zero_one() {
        let f = flow_time_features(0.0, 8).unwrap();
        assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time_features_first_pair_is_base_frequency() {
        let f = flow_time_features(0.5, 8).unwrap();
        assert!((f[0] - 0.5f64.sin()).abs() < 1e-15);
        assert!((f[1] - 0.5f64.cos()).abs() < 1e-15);
        assert!((f[0] - 0.47943).abs() < 1e-5);
        assert!((f[1] - 0.87758).abs() < 1e-5);
    }

    #[test]
    fn time_embedding_endpoints_differ() {
        let cfg = tiny_config();
        let params = MotParams::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        let e0 = flow_time_embedding(&mut g, &params, 0.0).unwrap();
        let e1 = flow_time_embedding(&mut g, &params, 1.0).unwrap();
        let d: f64 = g
            .value(e0)
            .iter()
            .zip(g.value(e1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(d > 0.0);
    }

    #[test]
    fn time_outside_unit_interval_is_contract_error() {
        assert!(flow_time_features(-0.1, 8).is_err());
        assert!(flow_time_features(1.1, 8).is_err());
    }
}
