//! Two-pathway forward pass.
//!
//! Observation-block tokens (and by default the state token) run through
//! the observation pathway's per-layer parameters; noisy action tokens run
//! through the action expert's. The pathways are coupled only by the
//! shared self-attention over the concatenated sequence, under the
//! blockwise-causal mask. The final action-token states pass through the
//! velocity head.

use crate::error::{Error, Result};
use crate::model::embed::{flow_time_embedding, ObservationContext};
use crate::model::mask::{build_block_mask, BlockMaskSpec};
use crate::model::params::{LayerIdx, MotParams};
use crate::tensor::{BoolMat, Graph, Var};

pub const NORM_EPS: f64 = 1e-6;

/// How the shared attention is computed. Both variants are mathematically
/// identical; the block-structured one only touches the key prefix each
/// query block is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionKind {
    #[default]
    DenseMasked,
    BlockStructured,
}

enum AttnPlan {
    Dense(BoolMat),
    /// (query block start, len, allowed key prefix, reusable all-true mask)
    Block(Vec<(usize, usize, usize, BoolMat)>),
}

/// Final-layer states of both pathways plus the velocity prediction.
#[derive(Debug, Clone, Copy)]
pub struct MotForward {
    /// `[chunk_length, action_dim]` predicted velocity field.
    pub velocity: Var,
    /// Final hidden states of the observation-pathway rows.
    pub obs_hidden: Var,
    /// Final hidden states of the action-pathway rows.
    pub act_hidden: Var,
}

fn shared_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    scale: f64,
    plan: &AttnPlan,
) -> Result<Var> {
    match plan {
        AttnPlan::Dense(mask) => {
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax(scores, mask)?;
            g.matmul(probs, v)
        }
        AttnPlan::Block(blocks) => {
            let mut outs = Vec::with_capacity(blocks.len());
            for (start, len, prefix, ones) in blocks {
                let qb = g.slice_rows(q, *start, *len)?;
                let kb = g.slice_rows(k, 0, *prefix)?;
                let vb = g.slice_rows(v, 0, *prefix)?;
                let kt = g.transpose(kb)?;
                let scores = g.matmul(qb, kt)?;
                let scores = g.scale(scores, scale);
                let probs = g.masked_softmax(scores, ones)?;
                outs.push(g.matmul(probs, vb)?);
            }
            g.concat_rows(&outs)
        }
    }
}

struct PathwayState {
    x: Var,
    rows: usize,
}

fn layer_qkv(
    g: &mut Graph,
    params: &MotParams,
    layer: &LayerIdx,
    x: Var,
    head: usize,
) -> Result<(Var, Var, Var)> {
    let wq = g.param(params.set.get(layer.attn.wq[head]), layer.attn.wq[head]);
    let wk = g.param(params.set.get(layer.attn.wk[head]), layer.attn.wk[head]);
    let wv = g.param(params.set.get(layer.attn.wv[head]), layer.attn.wv[head]);
    Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
}

fn mlp(g: &mut Graph, params: &MotParams, layer: &LayerIdx, x: Var) -> Result<Var> {
    let gain = g.param(params.set.get(layer.mlp_gain), layer.mlp_gain);
    let w1 = g.param(params.set.get(layer.w1), layer.w1);
    let b1 = g.param(params.set.get(layer.b1), layer.b1);
    let w2 = g.param(params.set.get(layer.w2), layer.w2);
    let b2 = g.param(params.set.get(layer.b2), layer.b2);
    let h = g.rms_norm(x, gain, NORM_EPS)?;
    let h = g.matmul(h, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.silu(h);
    let h = g.matmul(h, w2)?;
    let h = g.add_row(h, b2)?;
    g.add(x, h)
}

impl MotParams {
    /// Run the joint sequence `[observation context, noisy action chunk]`
    /// through the mixture-of-transformers and read the velocity off the
    /// action tokens.
    pub fn forward_mot(
        &self,
        g: &mut Graph,
        ctx: &ObservationContext,
        noisy_actions: &[f64],
        s: f64,
        kind: AttentionKind,
    ) -> Result<MotForward> {
        let cfg = &self.config;
        if noisy_actions.len() != cfg.chunk_length * cfg.action_dim {
            return Err(Error::Shape(format!(
                "noisy actions have {} values, config wants {}x{}",
                noisy_actions.len(),
                cfg.chunk_length,
                cfg.action_dim
            )));
        }
        if noisy_actions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite noisy action input".into()));
        }
        let a_in = g.constant(vec![cfg.chunk_length, cfg.action_dim], noisy_actions.to_vec())?;
        self.forward_mot_var(g, ctx, a_in, s, kind)
    }

    /// Same as [`forward_mot`](Self::forward_mot) with the noisy actions
    /// already registered in the graph (e.g. as a differentiable leaf).
    pub fn forward_mot_var(
        &self,
        g: &mut Graph,
        ctx: &ObservationContext,
        noisy_actions: Var,
        s: f64,
        kind: AttentionKind,
    ) -> Result<MotForward> {
        let cfg = &self.config;
        let t_len = cfg.chunk_length;
        if g.shape(noisy_actions) != [t_len, cfg.action_dim] {
            return Err(Error::Shape(format!(
                "noisy actions have shape {:?}, config wants [{}, {}]",
                g.shape(noisy_actions),
                t_len,
                cfg.action_dim
            )));
        }

        // Action-token embeddings: linear input embed + per-position
        // embedding + additive flow-time conditioning.
        let a_in = noisy_actions;
        let w_in = g.param(self.set.get(self.idx.action_in_w), self.idx.action_in_w);
        let b_in = g.param(self.set.get(self.idx.action_in_b), self.idx.action_in_b);
        let mut act = g.matmul(a_in, w_in)?;
        act = g.add_row(act, b_in)?;
        let pos_action = g.param(self.set.get(self.idx.pos_action), self.idx.pos_action);
        act = g.add(act, pos_action)?;
        let time_row = flow_time_embedding(g, self, s)?;
        act = g.add_row(act, time_row)?;

        let spec = BlockMaskSpec::new(ctx.obs_len, 1, t_len);
        let plan = match kind {
            AttentionKind::DenseMasked => AttnPlan::Dense(build_block_mask(&spec)?),
            AttentionKind::BlockStructured => AttnPlan::Block(
                spec.blocks()
                    .into_iter()
                    .map(|(start, len)| {
                        let prefix = start + len;
                        (start, len, prefix, BoolMat::ones(len, prefix))
                    })
                    .collect(),
            ),
        };

        // Split the sequence between the pathways. The state token (last
        // row of the context) follows the configured routing.
        let (mut obs, mut act) = if cfg.state_uses_action_pathway {
            let obs_only = g.slice_rows(ctx.tokens, 0, ctx.obs_len)?;
            let state_row = g.slice_rows(ctx.tokens, ctx.obs_len, 1)?;
            let with_state = g.concat_rows(&[state_row, act])?;
            (
                PathwayState { x: obs_only, rows: ctx.obs_len },
                PathwayState { x: with_state, rows: 1 + t_len },
            )
        } else {
            (
                PathwayState { x: ctx.tokens, rows: ctx.obs_len + 1 },
                PathwayState { x: act, rows: t_len },
            )
        };

        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        for l in 0..cfg.num_layers {
            let lo = &self.idx.obs.layers[l];
            let la = &self.idx.act.layers[l];

            let gain_o = g.param(self.set.get(lo.attn.gain), lo.attn.gain);
            let gain_a = g.param(self.set.get(la.attn.gain), la.attn.gain);
            let normed_o = g.rms_norm(obs.x, gain_o, NORM_EPS)?;
            let normed_a = g.rms_norm(act.x, gain_a, NORM_EPS)?;

            let mut attn_o: Option<Var> = None;
            let mut attn_a: Option<Var> = None;
            for h in 0..cfg.num_heads {
                let (qo, ko, vo) = layer_qkv(g, self, lo, normed_o, h)?;
                let (qa, ka, va) = layer_qkv(g, self, la, normed_a, h)?;
                let q = g.concat_rows(&[qo, qa])?;
                let k = g.concat_rows(&[ko, ka])?;
                let v = g.concat_rows(&[vo, va])?;
                let mixed = shared_attention(g, q, k, v, scale, &plan)?;
                let mix_o = g.slice_rows(mixed, 0, obs.rows)?;
                let mix_a = g.slice_rows(mixed, obs.rows, act.rows)?;
                let wo_o = g.param(self.set.get(lo.attn.wo[h]), lo.attn.wo[h]);
                let wo_a = g.param(self.set.get(la.attn.wo[h]), la.attn.wo[h]);
                let po = g.matmul(mix_o, wo_o)?;
                let pa = g.matmul(mix_a, wo_a)?;
                attn_o = Some(match attn_o {
                    Some(acc) => g.add(acc, po)?,
                    None => po,
                });
                attn_a = Some(match attn_a {
                    Some(acc) => g.add(acc, pa)?,
                    None => pa,
                });
            }
            obs.x = g.add(obs.x, attn_o.expect("num_heads >= 1"))?;
            act.x = g.add(act.x, attn_a.expect("num_heads >= 1"))?;

            obs.x = mlp(g, self, lo, obs.x)?;
            act.x = mlp(g, self, la, act.x)?;
        }

        // Velocity head over the action-chunk rows only.
        let chunk_rows = if cfg.state_uses_action_pathway {
            g.slice_rows(act.x, 1, t_len)?
        } else {
            act.x
        };
        let head_gain = g.param(self.set.get(self.idx.head_gain), self.idx.head_gain);
        let head_w = g.param(self.set.get(self.idx.head_w), self.idx.head_w);
        let head_b = g.param(self.set.get(self.idx.head_b), self.idx.head_b);
        let normed = g.rms_norm(chunk_rows, head_gain, NORM_EPS)?;
        let v = g.matmul(normed, head_w)?;
        let velocity = g.add_row(v, head_b)?;

        Ok(MotForward { velocity, obs_hidden: obs.x, act_hidden: act.x })
    }
}
