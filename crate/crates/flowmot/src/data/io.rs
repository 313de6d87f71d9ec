//! Episode files: a binary stream per episode plus a UTF-8 key=value
//! sidecar with task id, checkpoint count and seed.
//!
//! Layout: magic `MOTE`, version u32, counts (frames, image size, state
//! dim, action dim, instruction length; all u32 little-endian), the
//! instruction ids as u32, then per-timestep records: three raw images,
//! the state vector and the action vector as little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{Episode, Image};
use crate::error::{Error, Result};

pub const EPISODE_MAGIC: &[u8; 4] = b"MOTE";
pub const EPISODE_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Data("episode file truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn encode_episode(ep: &Episode) -> Result<Vec<u8>> {
    if ep.is_empty() {
        return Err(Error::Data("refusing to encode an empty episode".into()));
    }
    let image_size = ep.images[0][0].size;
    let state_dim = ep.states[0].len();
    let action_dim = ep.actions[0].len();
    let mut buf = Vec::new();
    buf.extend_from_slice(EPISODE_MAGIC);
    push_u32(&mut buf, EPISODE_VERSION);
    push_u32(&mut buf, ep.len() as u32);
    push_u32(&mut buf, image_size as u32);
    push_u32(&mut buf, state_dim as u32);
    push_u32(&mut buf, action_dim as u32);
    push_u32(&mut buf, ep.instruction.len() as u32);
    for &id in &ep.instruction {
        push_u32(&mut buf, id);
    }
    for t in 0..ep.len() {
        for v in 0..3 {
            let img = &ep.images[t][v];
            if img.size != image_size {
                return Err(Error::Data("inconsistent image sizes within episode".into()));
            }
            buf.extend_from_slice(&img.pixels);
        }
        push_f64s(&mut buf, &ep.states[t]);
        push_f64s(&mut buf, &ep.actions[t]);
    }
    Ok(buf)
}

pub fn decode_episode(data: &[u8], task_id: &str, checkpoint_count: usize, seed: u64) -> Result<Episode> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != EPISODE_MAGIC {
        return Err(Error::Data("bad episode magic".into()));
    }
    let version = r.u32()?;
    if version != EPISODE_VERSION {
        return Err(Error::Data(format!("unsupported episode version {version}")));
    }
    let frames = r.u32()? as usize;
    let image_size = r.u32()? as usize;
    let state_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let instr_len = r.u32()? as usize;
    let mut instruction = Vec::with_capacity(instr_len);
    for _ in 0..instr_len {
        instruction.push(r.u32()?);
    }
    let mut images = Vec::with_capacity(frames);
    let mut states = Vec::with_capacity(frames);
    let mut actions = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut views = Vec::with_capacity(3);
        for _ in 0..3 {
            views.push(Image::new(image_size, r.take(image_size * image_size)?.to_vec())?);
        }
        let views: [Image; 3] = views.try_into().unwrap();
        images.push(views);
        states.push(r.f64s(state_dim)?);
        actions.push(r.f64s(action_dim)?);
    }
    if r.pos != data.len() {
        return Err(Error::Data("trailing bytes in episode file".into()));
    }
    Ok(Episode { task_id: task_id.to_string(), checkpoint_count, seed, instruction, images, states, actions })
}

fn meta_lines(ep: &Episode) -> String {
    format!(
        "task_id={}\ncheckpoint_count={}\nseed={}\n",
        ep.task_id, ep.checkpoint_count, ep.seed
    )
}

fn parse_meta(text: &str, path: &Path) -> Result<(String, usize, u64)> {
    let mut task_id = None;
    let mut checkpoints = None;
    let mut seed = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad metadata line {line:?} in {}", path.display())))?;
        match k {
            "task_id" => task_id = Some(v.to_string()),
            "checkpoint_count" => {
                checkpoints = Some(v.parse().map_err(|_| {
                    Error::Data(format!("bad checkpoint_count in {}", path.display()))
                })?)
            }
            "seed" => {
                seed = Some(
                    v.parse()
                        .map_err(|_| Error::Data(format!("bad seed in {}", path.display())))?,
                )
            }
            other => return Err(Error::Data(format!("unknown metadata key {other:?}"))),
        }
    }
    match (task_id, checkpoints, seed) {
        (Some(t), Some(c), Some(s)) => Ok((t, c, s)),
        _ => Err(Error::Data(format!("incomplete metadata in {}", path.display()))),
    }
}

/// Write `episodes` under `dir/<task_id>/ep_NNNNN.{bin,meta}`.
pub fn save_episodes(dir: &Path, episodes: &[Episode]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let task_dir = dir.join(&ep.task_id);
        fs::create_dir_all(&task_dir)?;
        let bin = task_dir.join(format!("ep_{i:05}.bin"));
        fs::write(&bin, encode_episode(ep)?)?;
        fs::write(task_dir.join(format!("ep_{i:05}.meta")), meta_lines(ep))?;
        paths.push(bin);
    }
    Ok(paths)
}

pub fn load_episode(bin_path: &Path) -> Result<Episode> {
    let meta_path = bin_path.with_extension("meta");
    let meta = fs::read_to_string(&meta_path)?;
    let (task_id, checkpoint_count, seed) = parse_meta(&meta, &meta_path)?;
    let mut data = Vec::new();
    fs::File::open(bin_path)?.read_to_end(&mut data)?;
    decode_episode(&data, &task_id, checkpoint_count, seed)
}

/// Load every episode under `dir/<task_id>/`, ordered by file name.
pub fn load_task_episodes(dir: &Path, task_id: &str) -> Result<Vec<Episode>> {
    let task_dir = dir.join(task_id);
    if !task_dir.is_dir() {
        return Err(Error::Data(format!(
            "no episode directory for task {task_id:?} under {}",
            dir.display()
        )));
    }
    let mut bins: Vec<PathBuf> = fs::read_dir(&task_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "bin").unwrap_or(false))
        .collect();
    bins.sort();
    if bins.is_empty() {
        return Err(Error::Data(format!("no episodes for task {task_id:?}")));
    }
    bins.iter().map(|p| load_episode(p)).collect()
}

/// Collection manifest, written next to the episode directories.
#[derive(Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct Manifest {
    pub task_id: String,
    pub n_episodes: usize,
    pub total_frames: usize,
    pub seeds: Vec<u64>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("manifest_{}.json", manifest.task_id));
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    let mut f = fs::File::create(&path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(path)
}
