//! Depth-query distillation: a synthetic depth teacher, the
//! cross-attention projection of the query hidden states, and the L1
//! alignment loss. Teacher tokens are constants; gradients flow only into
//! the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::embed::ObservationContext;
use crate::model::params::MotParams;
use crate::tensor::{BoolMat, Graph, Var};

/// Seed of the fixed linear map inside the synthetic teacher. The teacher
/// stands in for a frozen external depth model, so the map never changes.
const TEACHER_SEED: u64 = 0x5eed_de97;

/// Teacher tokens for the three views, flattened row-major as
/// `[3 * num_queries, depth_token_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTokens {
    pub values: Vec<f64>,
    pub num_queries_per_view: usize,
    pub token_dim: usize,
}

impl DepthTokens {
    pub fn rows(&self) -> usize {
        3 * self.num_queries_per_view
    }
}

/// Deterministic stand-in for an external depth model: each view is
/// average-pooled into `num_queries` horizontal bands of mean intensity,
/// then pushed through a fixed seeded linear map (no bias) to
/// `depth_token_dim` per query.
pub fn synthetic_depth_teacher(images: &[Image; 3], config: &ModelConfig) -> Result<DepthTokens> {
    let nq = config.num_depth_queries_per_view;
    let dd = config.depth_token_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(TEACHER_SEED);
    // fixed map from the pooled grid to all nq tokens of one view
    let map: Vec<f64> = (0..nq * nq * dd)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();

    let mut values = Vec::with_capacity(3 * nq * dd);
    for img in images {
        if img.size != config.image_size {
            return Err(Error::Data(format!(
                "teacher: image size {} does not match configured {}",
                img.size, config.image_size
            )));
        }
        if nq > img.size {
            return Err(Error::Config(format!(
                "num_depth_queries_per_view {} exceeds image rows {}",
                nq, img.size
            )));
        }
        // pooled grid: nq horizontal bands of mean intensity in [0,1]
        let mut grid = vec![0.0f64; nq];
        for (band, cell) in grid.iter_mut().enumerate() {
            let r0 = band * img.size / nq;
            let r1 = (band + 1) * img.size / nq;
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in 0..img.size {
                    sum += img.get(r, c) as f64 / 255.0;
                }
            }
            *cell = sum / ((r1 - r0) * img.size) as f64;
        }
        // tokens = grid (1 x nq) * map (nq x nq*dd)
        for out_col in 0..nq * dd {
            let mut acc = 0.0;
            for (r, g) in grid.iter().enumerate() {
                acc += g * map[r * nq * dd + out_col];
            }
            values.push(acc);
        }
    }
    Ok(DepthTokens { values, num_queries_per_view: nq, token_dim: dd })
}

impl MotParams {
    /// Final-layer hidden states at the depth-query positions,
    /// `[3 * num_queries, model_dim]`.
    pub fn depth_query_hidden(
        &self,
        g: &mut Graph,
        ctx: &ObservationContext,
        obs_hidden: Var,
    ) -> Result<Var> {
        g.slice_rows(obs_hidden, ctx.depth_query_start, self.config.depth_query_tokens())
    }

    /// Cross-attention projection: learnable seeds attend over each
    /// view's query hidden states, followed by a linear map to the depth
    /// token dimension. Output layout matches [`DepthTokens`].
    pub fn project_queries(&self, g: &mut Graph, query_hidden: Var) -> Result<Var> {
        let cfg = &self.config;
        let nq = cfg.num_depth_queries_per_view;
        let d = cfg.model_dim;
        if g.shape(query_hidden) != [3 * nq, d] {
            return Err(Error::Shape(format!(
                "project_queries: hidden states {:?}, expected [{}, {}]",
                g.shape(query_hidden),
                3 * nq,
                d
            )));
        }
        let p = &self.idx.depth_proj;
        let seeds = g.param(self.set.get(p.seeds), p.seeds);
        let wq = g.param(self.set.get(p.wq), p.wq);
        let wk = g.param(self.set.get(p.wk), p.wk);
        let wv = g.param(self.set.get(p.wv), p.wv);
        let out_w = g.param(self.set.get(p.out_w), p.out_w);
        let out_b = g.param(self.set.get(p.out_b), p.out_b);

        let q = g.matmul(seeds, wq)?;
        let scale = 1.0 / (d as f64).sqrt();
        let ones = BoolMat::ones(nq, nq);
        let mut per_view = Vec::with_capacity(3);
        for v in 0..3 {
            let h = g.slice_rows(query_hidden, v * nq, nq)?;
            let k = g.matmul(h, wk)?;
            let val = g.matmul(h, wv)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax(scores, &ones)?;
            let mixed = g.matmul(probs, val)?;
            let proj = g.matmul(mixed, out_w)?;
            per_view.push(g.add_row(proj, out_b)?);
        }
        g.concat_rows(&per_view)
    }
}

/// Mean absolute difference between the projected queries and the teacher
/// tokens (registered as a constant, so the teacher receives no gradient).
pub fn distill_loss(g: &mut Graph, projected: Var, teacher: &DepthTokens) -> Result<Var> {
    let rows = teacher.rows();
    let t = g.constant(vec![rows, teacher.token_dim], teacher.values.clone())?;
    g.l1_loss(projected, t)
}

/// Combined objective: `fm + lambda_distill * distill`. With
/// `lambda_distill == 0` the flow-matching node itself is returned, so
/// the distillation branch contributes nothing to the backward pass.
pub fn total_loss(g: &mut Graph, fm: Var, distill: Option<Var>, lambda_distill: f64) -> Result<Var> {
    if lambda_distill < 0.0 {
        return Err(Error::Contract("lambda_distill must be >= 0".into()));
    }
    match distill {
        Some(d) if lambda_distill > 0.0 => {
            let scaled = g.scale(d, lambda_distill);
            g.add(fm, scaled)
        }
        _ => Ok(fm),
    }
}
