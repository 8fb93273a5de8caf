//! Demonstration datasets: generation, binary serialization, integrity.
//!
//! File layout (little-endian):
//!
//! ```text
//! "DMFDDS01\n"
//! config <one-line JSON of the EnvConfig>\n
//! n_episodes <count>\n
//! images <0|1>\n
//! end\n
//! -- per episode --
//! payload:  records, each `u32 count` + `count` f64 values
//!   record 0: meta [variant_id, seed_hi, seed_lo, n_steps, p0, p_end, p_hat]
//!   record 1: flattened states  ((n_steps + 1) * state_len)
//!   record 2: actions           (n_steps * action_dim)
//!   record 3: rewards           (n_steps)
//!   record 4: images, only if the header says so ((n_steps + 1) * image_len)
//! crc: u32 over the payload bytes
//! ```
//!
//! States store only the dynamic quantities (positions, velocities, pickers,
//! step index); springs and pins are reconstructed from the config and the
//! episode's variant id. Image pixels are stored as integer-valued f64 so a
//! round trip is byte-exact.

use std::path::Path;
use std::sync::Arc;

use crate::env::{
    normalized_performance, object_skeleton, variant_params, Env, EnvConfig, EnvError, EnvState,
    Picker, IMAGE_LEN,
};
use crate::rng::{derive_seed, rng_from_seed};

use super::{Controller, ScriptedExpert};

const MAGIC: &[u8] = b"DMFDDS01\n";

/// Dataset failures.
#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error("checksum mismatch in episode {episode}")]
    Corrupt { episode: usize },
    #[error("dataset was recorded under a different config: {0}")]
    ConfigMismatch(String),
    #[error("expert kept only {kept} episodes after {attempts} attempts")]
    Generation { kept: usize, attempts: usize },
}

/// One expert episode: every intermediate state plus the action/reward tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// Seed of the episode's rng stream, for reproduction.
    pub seed: u64,
    pub variant_id: u32,
    /// `n_steps + 1` states: reset state plus one per action.
    pub states: Vec<EnvState>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub p0: f64,
    pub p_end: f64,
    pub p_hat: f64,
    /// Rendered observations, populated on demand or loaded from disk.
    pub images: Option<Vec<Arc<Vec<u8>>>>,
}

impl Demonstration {
    pub fn n_steps(&self) -> usize {
        self.actions.len()
    }
}

/// A set of demonstrations tied to the config they were recorded under.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub config: EnvConfig,
    pub episodes: Vec<Demonstration>,
}

impl DemoDataset {
    /// Run the expert until `n_episodes` episodes clear `filter_threshold`
    /// normalized performance. Episode `i` uses the rng stream
    /// `derive_seed(base_seed, attempt)`, so datasets are reproducible.
    pub fn generate(
        config: &EnvConfig,
        expert: &ScriptedExpert,
        n_episodes: usize,
        base_seed: u64,
        filter_threshold: f64,
    ) -> Result<DemoDataset, DatasetError> {
        let mut env = Env::new(config.clone())?;
        let max_attempts = n_episodes.saturating_mul(4).max(8);
        let mut episodes = Vec::with_capacity(n_episodes);
        let mut attempts = 0usize;
        while episodes.len() < n_episodes && attempts < max_attempts {
            let seed = derive_seed(base_seed, attempts as u64);
            attempts += 1;
            let mut rng = rng_from_seed(seed);
            env.reset(&mut rng)?;
            let p0 = env.performance();
            let mut controller = expert.clone();
            controller.begin_episode();
            let mut states = vec![env.state()];
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            while !env.done() {
                let a = controller.act(&env, &mut rng);
                let out = env.step(&a)?;
                actions.push(a);
                rewards.push(out.reward);
                states.push(env.state());
            }
            let p_end = *rewards.last().expect("horizon >= 1");
            let p_hat = normalized_performance(p_end, p0, config.p_opt)?;
            if p_hat >= filter_threshold {
                episodes.push(Demonstration {
                    seed,
                    variant_id: env.variant_id(),
                    states,
                    actions,
                    rewards,
                    p0,
                    p_end,
                    p_hat,
                    images: None,
                });
            }
        }
        if episodes.len() < n_episodes {
            return Err(DatasetError::Generation {
                kept: episodes.len(),
                attempts,
            });
        }
        Ok(DemoDataset {
            config: config.clone(),
            episodes,
        })
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.n_steps()).sum()
    }

    pub fn mean_p_hat(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.p_hat).sum::<f64>() / self.episodes.len() as f64
    }

    /// Clone every episode `factor` times in place (rendered images are
    /// shared, not copied).
    pub fn duplicate_episodes(&mut self, factor: usize) {
        if factor <= 1 {
            return;
        }
        let base = self.episodes.clone();
        for _ in 1..factor {
            self.episodes.extend(base.iter().cloned());
        }
    }

    /// Render observations for every stored state that lacks them. The
    /// renderer is deterministic, so this reproduces exactly what a live
    /// environment would have shown.
    pub fn ensure_images(&mut self) -> Result<(), DatasetError> {
        let mut env = Env::new(self.config.clone())?;
        for ep in &mut self.episodes {
            if ep.images.is_some() {
                continue;
            }
            let mut images = Vec::with_capacity(ep.states.len());
            for state in &ep.states {
                env.reset_to(state)?;
                images.push(Arc::new(env.render()));
            }
            ep.images = Some(images);
        }
        Ok(())
    }

    /// Re-simulates every episode from its stored seed and actions and
    /// checks that the resulting state tapes match the stored ones
    /// bit-exactly. The physics is deterministic given the reset, so any
    /// divergence means the dataset no longer matches its config.
    pub fn verify_replay(&self) -> Result<(), DatasetError> {
        let mut env = Env::new(self.config.clone())?;
        for (i, ep) in self.episodes.iter().enumerate() {
            let mismatch = || {
                DatasetError::Malformed(format!("episode {i} does not replay bit-exactly"))
            };
            let mut rng = rng_from_seed(ep.seed);
            env.reset(&mut rng)?;
            if env.variant_id() != ep.variant_id || env.state() != ep.states[0] {
                return Err(mismatch());
            }
            for (t, action) in ep.actions.iter().enumerate() {
                env.step(action)?;
                if env.state() != ep.states[t + 1] {
                    return Err(mismatch());
                }
            }
        }
        Ok(())
    }

    /// Write the dataset without image payloads.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        self.write(path, false)
    }

    /// Render any missing images, then write them alongside the states.
    pub fn save_with_images(&mut self, path: &Path) -> Result<(), DatasetError> {
        self.ensure_images()?;
        self.write(path, true)
    }

    fn write(&self, path: &Path, with_images: bool) -> Result<(), DatasetError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| DatasetError::Malformed(format!("config serialization: {e}")))?;
        out.extend_from_slice(format!("config {config_json}\n").as_bytes());
        out.extend_from_slice(format!("n_episodes {}\n", self.episodes.len()).as_bytes());
        out.extend_from_slice(format!("images {}\n", u8::from(with_images)).as_bytes());
        out.extend_from_slice(b"end\n");
        for ep in &self.episodes {
            let payload = encode_episode(ep, with_images)?;
            out.extend_from_slice(&payload);
            out.extend_from_slice(&crc32(&payload).to_le_bytes());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load and verify a dataset. `config` must match the recording config
    /// exactly; stored images are decoded when present.
    pub fn load(path: &Path, config: &EnvConfig) -> Result<DemoDataset, DatasetError> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor::new(&bytes);
        if cur.take_bytes(MAGIC.len())? != MAGIC {
            return Err(DatasetError::Malformed("bad magic".into()));
        }
        let config_line = cur.take_line()?;
        let stored_json = config_line
            .strip_prefix("config ")
            .ok_or_else(|| DatasetError::Malformed("missing config line".into()))?;
        let expected_json = serde_json::to_string(config)
            .map_err(|e| DatasetError::Malformed(format!("config serialization: {e}")))?;
        if stored_json != expected_json {
            return Err(DatasetError::ConfigMismatch(format!(
                "stored {stored_json} vs expected {expected_json}"
            )));
        }
        let n_episodes: usize = cur
            .take_line()?
            .strip_prefix("n_episodes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DatasetError::Malformed("missing n_episodes line".into()))?;
        let images_flag: u8 = cur
            .take_line()?
            .strip_prefix("images ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DatasetError::Malformed("missing images line".into()))?;
        if cur.take_line()? != "end" {
            return Err(DatasetError::Malformed("missing header terminator".into()));
        }
        let mut episodes = Vec::with_capacity(n_episodes);
        for episode in 0..n_episodes {
            let payload_start = cur.offset;
            let ep = decode_episode(&mut cur, config, images_flag == 1)
                .map_err(|e| match e {
                    DatasetError::Malformed(m) => {
                        DatasetError::Malformed(format!("episode {episode}: {m}"))
                    }
                    other => other,
                })?;
            let payload_end = cur.offset;
            let stored_crc = cur.take_u32()?;
            if crc32(&bytes[payload_start..payload_end]) != stored_crc {
                return Err(DatasetError::Corrupt { episode });
            }
            episodes.push(ep);
        }
        if cur.offset != bytes.len() {
            return Err(DatasetError::Malformed("trailing bytes after last episode".into()));
        }
        Ok(DemoDataset {
            config: config.clone(),
            episodes,
        })
    }
}

/// Flattened dynamic-state length for a config.
pub fn flat_state_len(config: &EnvConfig) -> usize {
    let n = if config.task.is_cloth() {
        config.cloth_rows * config.cloth_cols
    } else {
        config.rope_particles
    };
    4 * n + 3 * config.task.n_pickers() + 1
}

fn flatten_state(state: &EnvState) -> Vec<f64> {
    let n = state.particles.n();
    let mut out = Vec::with_capacity(4 * n + 3 * state.pickers.len() + 1);
    for p in &state.particles.positions {
        out.extend_from_slice(p);
    }
    for v in &state.particles.velocities {
        out.extend_from_slice(v);
    }
    for picker in &state.pickers {
        out.push(picker.pos[0]);
        out.push(picker.pos[1]);
        out.push(picker.grasped.map_or(0.0, |i| (i + 1) as f64));
    }
    out.push(state.step_index as f64);
    out
}

fn unflatten_state(
    config: &EnvConfig,
    variant_id: u32,
    flat: &[f64],
) -> Result<EnvState, DatasetError> {
    if flat.len() != flat_state_len(config) {
        return Err(DatasetError::Malformed(format!(
            "state length {} != expected {}",
            flat.len(),
            flat_state_len(config)
        )));
    }
    let mut particles = object_skeleton(config, config.task, &variant_params(variant_id));
    let n = particles.n();
    for i in 0..n {
        particles.positions[i] = [flat[2 * i], flat[2 * i + 1]];
        particles.velocities[i] = [flat[2 * n + 2 * i], flat[2 * n + 2 * i + 1]];
    }
    let mut pickers = Vec::with_capacity(config.task.n_pickers());
    let base = 4 * n;
    for k in 0..config.task.n_pickers() {
        let flag = flat[base + 3 * k + 2];
        let grasped = if flag == 0.0 {
            None
        } else {
            let idx = flag - 1.0;
            if idx < 0.0 || idx.fract() != 0.0 || idx as usize >= n {
                return Err(DatasetError::Malformed(format!("bad grasp flag {flag}")));
            }
            Some(idx as usize)
        };
        pickers.push(Picker {
            pos: [flat[base + 3 * k], flat[base + 3 * k + 1]],
            grasped,
        });
    }
    let step_f = flat[flat.len() - 1];
    if step_f < 0.0 || step_f.fract() != 0.0 {
        return Err(DatasetError::Malformed(format!("bad step index {step_f}")));
    }
    Ok(EnvState {
        particles,
        pickers,
        step_index: step_f as u32,
        variant_id,
    })
}

fn push_record(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&u32::try_from(values.len()).expect("record too long").to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_episode(ep: &Demonstration, with_images: bool) -> Result<Vec<u8>, DatasetError> {
    let n_steps = ep.n_steps();
    let mut payload = Vec::new();
    let meta = [
        ep.variant_id as f64,
        (ep.seed >> 32) as f64,
        (ep.seed & 0xFFFF_FFFF) as f64,
        n_steps as f64,
        ep.p0,
        ep.p_end,
        ep.p_hat,
    ];
    push_record(&mut payload, &meta);
    let mut states = Vec::new();
    for s in &ep.states {
        states.extend_from_slice(&flatten_state(s));
    }
    push_record(&mut payload, &states);
    let mut actions = Vec::new();
    for a in &ep.actions {
        actions.extend_from_slice(a);
    }
    push_record(&mut payload, &actions);
    push_record(&mut payload, &ep.rewards);
    if with_images {
        let images = ep
            .images
            .as_ref()
            .ok_or_else(|| DatasetError::Malformed("images requested but not rendered".into()))?;
        let mut pixels = Vec::with_capacity(images.len() * IMAGE_LEN);
        for img in images {
            pixels.extend(img.iter().map(|&b| b as f64));
        }
        push_record(&mut payload, &pixels);
    }
    Ok(payload)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, offset: 0 }
    }

    fn take_bytes(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.offset + n > self.bytes.len() {
            return Err(DatasetError::Malformed("unexpected end of file".into()));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn take_line(&mut self) -> Result<&'a str, DatasetError> {
        let rest = &self.bytes[self.offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| DatasetError::Malformed("unterminated header line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| DatasetError::Malformed("non-utf8 header".into()))?;
        self.offset += nl + 1;
        Ok(line)
    }

    fn take_u32(&mut self) -> Result<u32, DatasetError> {
        let b = self.take_bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take_f64s(&mut self, count: usize) -> Result<Vec<f64>, DatasetError> {
        let b = self.take_bytes(count * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn take_record(&mut self) -> Result<Vec<f64>, DatasetError> {
        let count = self.take_u32()? as usize;
        self.take_f64s(count)
    }
}

fn decode_episode(
    cur: &mut Cursor,
    config: &EnvConfig,
    with_images: bool,
) -> Result<Demonstration, DatasetError> {
    let meta = cur.take_record()?;
    if meta.len() != 7 {
        return Err(DatasetError::Malformed(format!("meta record length {}", meta.len())));
    }
    let variant_id = meta[0] as u32;
    if meta[0].fract() != 0.0 || variant_id >= config.n_variants {
        return Err(DatasetError::Malformed(format!("bad variant id {}", meta[0])));
    }
    let seed = ((meta[1] as u64) << 32) | (meta[2] as u64);
    let n_steps = meta[3] as usize;
    if meta[3].fract() != 0.0 || n_steps == 0 || n_steps > config.horizon as usize {
        return Err(DatasetError::Malformed(format!("bad step count {}", meta[3])));
    }
    let (p0, p_end, p_hat) = (meta[4], meta[5], meta[6]);

    let state_len = flat_state_len(config);
    let flat_states = cur.take_record()?;
    if flat_states.len() != (n_steps + 1) * state_len {
        return Err(DatasetError::Malformed("state record length".into()));
    }
    let states = flat_states
        .chunks_exact(state_len)
        .map(|c| unflatten_state(config, variant_id, c))
        .collect::<Result<Vec<_>, _>>()?;

    let action_dim = config.action_dim();
    let flat_actions = cur.take_record()?;
    if flat_actions.len() != n_steps * action_dim {
        return Err(DatasetError::Malformed("action record length".into()));
    }
    let actions = flat_actions
        .chunks_exact(action_dim)
        .map(|c| c.to_vec())
        .collect();

    let rewards = cur.take_record()?;
    if rewards.len() != n_steps {
        return Err(DatasetError::Malformed("reward record length".into()));
    }

    let images = if with_images {
        let pixels = cur.take_record()?;
        if pixels.len() != (n_steps + 1) * IMAGE_LEN {
            return Err(DatasetError::Malformed("image record length".into()));
        }
        let mut images = Vec::with_capacity(n_steps + 1);
        for chunk in pixels.chunks_exact(IMAGE_LEN) {
            let mut img = Vec::with_capacity(IMAGE_LEN);
            for &v in chunk {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(DatasetError::Malformed(format!("bad pixel value {v}")));
                }
                img.push(v as u8);
            }
            images.push(Arc::new(img));
        }
        Some(images)
    } else {
        None
    };

    Ok(Demonstration {
        seed,
        variant_id,
        states,
        actions,
        rewards,
        p0,
        p_end,
        p_hat,
        images,
    })
}

/// IEEE CRC-32 (reflected, polynomial 0xEDB88320), the variant used by zip
/// and png. Check value: `crc32(b"123456789") == 0xCBF43926`.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    });
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}
