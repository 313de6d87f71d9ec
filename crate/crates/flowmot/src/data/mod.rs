//! Episode storage, static-frame trimming, normalization and
//! training-sample extraction with action chunking.

pub mod io;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Grayscale image, row-major `size * size` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Data(format!(
                "image {}x{} wants {} pixels, got {}",
                size,
                size,
                size * size,
                pixels.len()
            )));
        }
        Ok(Image { size, pixels })
    }

    pub fn filled(size: usize, value: u8) -> Self {
        Image { size, pixels: vec![value; size * size] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.size + col]
    }
}

/// One demonstration: a per-timestep stream of three-view images, the
/// (timestep-invariant) instruction token ids, proprioceptive state and
/// the action taken.
#[derive(Debug, Clone)]
pub struct Episode {
    pub task_id: String,
    pub checkpoint_count: usize,
    pub seed: u64,
    pub instruction: Vec<u32>,
    pub images: Vec<[Image; 3]>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data(format!("episode {}/{} is empty", self.task_id, self.seed)));
        }
        if self.images.len() != self.len() || self.actions.len() != self.len() {
            return Err(Error::Data(format!(
                "episode {}/{}: per-timestep arrays disagree ({} images, {} states, {} actions)",
                self.task_id,
                self.seed,
                self.images.len(),
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(&id) = self.instruction.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Data(format!(
                "episode {}/{}: token id {} exceeds vocab {}",
                self.task_id, self.seed, id, vocab_size
            )));
        }
        Ok(())
    }
}

/// Remove maximal leading and trailing runs of frames whose consecutive
/// state vectors differ by less than `motion_eps` in max-norm. Interior
/// frames are never touched.
pub fn trim_static_frames(ep: &Episode, motion_eps: f64) -> Result<Episode> {
    if motion_eps < 0.0 {
        return Err(Error::Contract("motion_eps must be >= 0".into()));
    }
    let n = ep.len();
    let moving = |a: &[f64], b: &[f64]| -> bool {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) >= motion_eps
    };
    let mut start = 0;
    while start + 1 < n && !moving(&ep.states[start], &ep.states[start + 1]) {
        start += 1;
    }
    if start + 1 == n {
        return Err(Error::Data(format!(
            "episode {}/{} is entirely static under motion_eps {}",
            ep.task_id, ep.seed, motion_eps
        )));
    }
    let mut end = n;
    while end >= start + 2 && !moving(&ep.states[end - 2], &ep.states[end - 1]) {
        end -= 1;
    }
    Ok(Episode {
        task_id: ep.task_id.clone(),
        checkpoint_count: ep.checkpoint_count,
        seed: ep.seed,
        instruction: ep.instruction.clone(),
        images: ep.images[start..end].to_vec(),
        states: ep.states[start..end].to_vec(),
        actions: ep.actions[start..end].to_vec(),
    })
}

/// Per-dimension z-score statistics with a floored standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DimStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl DimStats {
    fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // population variance
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        DimStats { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

/// Normalization statistics for the action and state streams.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub action: DimStats,
    pub state: DimStats,
}

pub fn compute_norm_stats(dataset: &[Episode]) -> Result<NormStats> {
    if dataset.is_empty() || dataset.iter().all(|e| e.is_empty()) {
        return Err(Error::Data("cannot compute normalization stats on an empty dataset".into()));
    }
    let action_dim = dataset[0].actions[0].len();
    let state_dim = dataset[0].states[0].len();
    let actions = dataset.iter().flat_map(|e| e.actions.iter().map(|a| a.as_slice()));
    let states = dataset.iter().flat_map(|e| e.states.iter().map(|s| s.as_slice()));
    Ok(NormStats {
        action: DimStats::from_rows(actions, action_dim),
        state: DimStats::from_rows(states, state_dim),
    })
}

/// Model-ready inputs for one training position: the observation at
/// timestep `t` plus the normalized action chunk starting there.
#[derive(Debug, Clone)]
pub struct TrainingSample<'a> {
    pub images: &'a [Image; 3],
    pub instruction: &'a [u32],
    pub state: Vec<f64>,
    /// Row-major `chunk_length x action_dim`, normalized.
    pub action_chunk: Vec<f64>,
    pub chunk_length: usize,
    pub action_dim: usize,
}

/// Extract the observation at `t` and the normalized chunk
/// `a_t .. a_{t+T-1}`; past the episode end the final action repeats
/// (the robot holds pose).
pub fn make_training_sample<'a>(
    ep: &'a Episode,
    t: usize,
    chunk_length: usize,
    stats: &NormStats,
) -> Result<TrainingSample<'a>> {
    if t >= ep.len() {
        return Err(Error::Contract(format!(
            "timestep {} out of range for episode of {}",
            t,
            ep.len()
        )));
    }
    let action_dim = ep.actions[0].len();
    let mut chunk = Vec::with_capacity(chunk_length * action_dim);
    for k in 0..chunk_length {
        let idx = (t + k).min(ep.len() - 1);
        chunk.extend(stats.action.normalize(&ep.actions[idx]));
    }
    Ok(TrainingSample {
        images: &ep.images[t],
        instruction: &ep.instruction,
        state: stats.state.normalize(&ep.states[t]),
        action_chunk: chunk,
        chunk_length,
        action_dim,
    })
}

/// Seeded pseudo-random permutation of all (episode, timestep) pairs,
/// chunked into batches; the final partial batch is kept.
pub fn shuffled_batches(
    dataset: &[Episode],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<(usize, usize)>>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be >= 1".into()));
    }
    let mut pairs: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    Ok(pairs.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Tiny fixed instruction vocabulary for the toy tasks.
pub const VOCAB: &[&str] = &[
    "<pad>", "reach", "the", "goal", "zone", "pick", "up", "object", "and", "place", "it", "in",
    "hand", "over", "to", "other", "arm", "then",
];

/// Token ids for a phrase; words must exist in [`VOCAB`].
pub fn tokenize(phrase: &str) -> Result<Vec<u32>> {
    phrase
        .split_whitespace()
        .map(|w| {
            VOCAB
                .iter()
                .position(|v| *v == w)
                .map(|i| i as u32)
                .ok_or_else(|| Error::Data(format!("word {w:?} not in vocabulary")))
        })
        .collect()
}
