//! Model parameters: one full projection/MLP stack per pathway plus the
//! shared embeddings, heads and depth-projection weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::tensor::Tensor;

/// Flat, ordered, named parameter store. Order is fixed at construction
/// and is the checkpoint serialization order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttnIdx {
    pub gain: usize,
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub wo: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIdx {
    pub attn: AttnIdx,
    pub mlp_gain: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct PathwayIdx {
    pub layers: Vec<LayerIdx>,
}

#[derive(Debug, Clone)]
pub(crate) struct DepthProjIdx {
    pub seeds: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub out_w: usize,
    pub out_b: usize,
}

/// Slots of every named tensor inside the [`ParamSet`].
#[derive(Debug, Clone)]
pub(crate) struct ParamIndex {
    pub patch_w: usize,
    pub patch_b: usize,
    pub text_table: usize,
    pub state_w: usize,
    pub state_b: usize,
    pub time_w: usize,
    pub time_b: usize,
    pub action_in_w: usize,
    pub action_in_b: usize,
    pub head_gain: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub pos_obs: usize,
    pub pos_action: usize,
    pub view_seg: usize,
    pub depth_queries: usize,
    pub depth_proj: DepthProjIdx,
    pub obs: PathwayIdx,
    pub act: PathwayIdx,
}

/// Number of sinusoidal features fed to the flow-time projection.
pub const TIME_FEATURES: usize = 16;

/// The full two-pathway parameter set.
#[derive(Debug, Clone)]
pub struct MotParams {
    pub config: ModelConfig,
    pub set: ParamSet,
    pub(crate) idx: ParamIndex,
}

fn randn(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * std).collect()
}

impl MotParams {
    /// Initialize from a seed. Weights are small-normal (std 0.02), norm
    /// gains start at one, biases at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let std = 0.02;
        let mut set = ParamSet::default();

        let mat = |set: &mut ParamSet, rng: &mut ChaCha8Rng, name: String, r: usize, c: usize| {
            set.add(name, Tensor::new(vec![r, c], randn(rng, r * c, std)).unwrap())
        };
        let zeros = |set: &mut ParamSet, name: String, n: usize| {
            set.add(name, Tensor::zeros(vec![n]))
        };
        let onesv = |set: &mut ParamSet, name: String, n: usize| {
            set.add(name, Tensor::new(vec![n], vec![1.0; n]).unwrap())
        };

        let patch_w = mat(&mut set, &mut rng, "patch_embed.w".into(), config.patch_pixels(), d);
        let patch_b = zeros(&mut set, "patch_embed.b".into(), d);
        let text_table = mat(&mut set, &mut rng, "text_embed.table".into(), config.vocab_size, d);
        let state_w = mat(&mut set, &mut rng, "state_proj.w".into(), config.state_dim, d);
        let state_b = zeros(&mut set, "state_proj.b".into(), d);
        let time_w = mat(&mut set, &mut rng, "time_embed.w".into(), TIME_FEATURES, d);
        let time_b = zeros(&mut set, "time_embed.b".into(), d);
        let action_in_w = mat(&mut set, &mut rng, "action_embed.w".into(), config.action_dim, d);
        let action_in_b = zeros(&mut set, "action_embed.b".into(), d);
        let head_gain = onesv(&mut set, "velocity_head.gain".into(), d);
        let head_w = mat(&mut set, &mut rng, "velocity_head.w".into(), d, config.action_dim);
        let head_b = zeros(&mut set, "velocity_head.b".into(), config.action_dim);

        let obs_positions =
            config.image_tokens() + config.max_text_len + config.depth_query_tokens();
        let pos_obs = mat(&mut set, &mut rng, "pos.obs".into(), obs_positions, d);
        let pos_action = mat(&mut set, &mut rng, "pos.action".into(), config.chunk_length, d);
        let view_seg = mat(&mut set, &mut rng, "pos.view_seg".into(), 3, d);

        let depth_queries =
            mat(&mut set, &mut rng, "depth.queries".into(), config.depth_query_tokens(), d);
        let nq = config.num_depth_queries_per_view;
        let depth_proj = DepthProjIdx {
            seeds: mat(&mut set, &mut rng, "depth.proj.seeds".into(), nq, d),
            wq: mat(&mut set, &mut rng, "depth.proj.wq".into(), d, d),
            wk: mat(&mut set, &mut rng, "depth.proj.wk".into(), d, d),
            wv: mat(&mut set, &mut rng, "depth.proj.wv".into(), d, d),
            out_w: mat(&mut set, &mut rng, "depth.proj.out_w".into(), d, config.depth_token_dim),
            out_b: zeros(&mut set, "depth.proj.out_b".into(), config.depth_token_dim),
        };

        let pathway = |set: &mut ParamSet, rng: &mut ChaCha8Rng, tag: &str| -> PathwayIdx {
            let dh = config.head_dim();
            let layers = (0..config.num_layers)
                .map(|l| {
                    let mut wq = Vec::new();
                    let mut wk = Vec::new();
                    let mut wv = Vec::new();
                    let mut wo = Vec::new();
                    let gain = set.add(
                        format!("{tag}.l{l}.attn.gain"),
                        Tensor::new(vec![d], vec![1.0; d]).unwrap(),
                    );
                    for h in 0..config.num_heads {
                        wq.push(mat(set, rng, format!("{tag}.l{l}.attn.h{h}.wq"), d, dh));
                        wk.push(mat(set, rng, format!("{tag}.l{l}.attn.h{h}.wk"), d, dh));
                        wv.push(mat(set, rng, format!("{tag}.l{l}.attn.h{h}.wv"), d, dh));
                        wo.push(mat(set, rng, format!("{tag}.l{l}.attn.h{h}.wo"), dh, d));
                    }
                    let mlp_gain = set.add(
                        format!("{tag}.l{l}.mlp.gain"),
                        Tensor::new(vec![d], vec![1.0; d]).unwrap(),
                    );
                    let w1 = mat(set, rng, format!("{tag}.l{l}.mlp.w1"), d, config.mlp_hidden_dim);
                    let b1 = set.add(format!("{tag}.l{l}.mlp.b1"), Tensor::zeros(vec![config.mlp_hidden_dim]));
                    let w2 = mat(set, rng, format!("{tag}.l{l}.mlp.w2"), config.mlp_hidden_dim, d);
                    let b2 = set.add(format!("{tag}.l{l}.mlp.b2"), Tensor::zeros(vec![d]));
                    LayerIdx { attn: AttnIdx { gain, wq, wk, wv, wo }, mlp_gain, w1, b1, w2, b2 }
                })
                .collect();
            PathwayIdx { layers }
        };

        let obs = pathway(&mut set, &mut rng, "obs");
        let act = pathway(&mut set, &mut rng, "act");

        let idx = ParamIndex {
            patch_w,
            patch_b,
            text_table,
            state_w,
            state_b,
            time_w,
            time_b,
            action_in_w,
            action_in_b,
            head_gain,
            head_w,
            head_b,
            pos_obs,
            pos_action,
            view_seg,
            depth_queries,
            depth_proj,
            obs,
            act,
        };
        Ok(MotParams { config: config.clone(), set, idx })
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.set.num_scalars()
    }

    /// Look up a tensor by its checkpoint name (e.g. `obs.l0.attn.gain`).
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.set.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    /// Copy every observation-pathway tensor over its action-expert
    /// counterpart, so both pathways compute with identical parameters.
    pub fn tie_pathways(&mut self) {
        let pairs: Vec<(usize, usize)> = self
            .idx
            .obs
            .layers
            .iter()
            .zip(&self.idx.act.layers)
            .flat_map(|(o, a)| {
                let mut v = vec![
                    (o.attn.gain, a.attn.gain),
                    (o.mlp_gain, a.mlp_gain),
                    (o.w1, a.w1),
                    (o.b1, a.b1),
                    (o.w2, a.w2),
                    (o.b2, a.b2),
                ];
                for h in 0..o.attn.wq.len() {
                    v.push((o.attn.wq[h], a.attn.wq[h]));
                    v.push((o.attn.wk[h], a.attn.wk[h]));
                    v.push((o.attn.wv[h], a.attn.wv[h]));
                    v.push((o.attn.wo[h], a.attn.wo[h]));
                }
                v
            })
            .collect();
        for (src, dst) in pairs {
            let data = self.set.get(src).data().to_vec();
            let shape = self.set.get(src).shape().to_vec();
            *self.set.get_mut(dst) = Tensor::new(shape, data).unwrap().with_grad();
        }
    }

    /// Rebuild from named tensors (checkpoint load). Every expected name
    /// must be present with the exact shape.
    pub fn from_named(config: &ModelConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut fresh = MotParams::init(config, 0)?;
        let lookup: std::collections::HashMap<&str, &Tensor> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..fresh.set.len() {
            let name = fresh.set.name(i).to_string();
            let t = lookup.get(name.as_str()).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint missing tensor {name}"))
            })?;
            if t.shape() != fresh.set.get(i).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config wants {:?}",
                    t.shape(),
                    fresh.set.get(i).shape()
                )));
            }
            *fresh.set.get_mut(i) =
                Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap().with_grad();
        }
        Ok(fresh)
    }
}
