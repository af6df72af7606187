//! Demonstration episodes and their on-disk container.
//!
//! A dataset is a directory holding `manifest.json` plus one binary file per
//! episode. Episode files are `FCEP1\n`, a little-endian u32 header length,
//! a JSON header describing the named arrays, then the raw array bytes in
//! header order (images as bytes, everything else as little-endian f64).
//! Given a generation seed the whole container is byte-for-byte reproducible.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actionexpert::NormStats;
use crate::contactsim::expert::expert_action;
use crate::contactsim::render::render;
use crate::contactsim::{
    episode_done, evaluate_success, step, Geometry, NoiseState, SimParams, Task, WorldState,
};
use crate::embedding::Image;
use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const EPISODE_MAGIC: &[u8; 6] = b"FCEP1\n";

/// One recorded control step: the observation seen before acting, both the
/// sensed and clean wrenches (plus the drift bias for audits), and the
/// executed action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub image: Image,
    pub state: Vec<f64>,
    pub sensed: [f64; 3],
    pub clean: [f64; 3],
    pub bias: [f64; 3],
    pub action: [f64; 3],
}

/// One episode with its seed and fixture placement, replayable bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task: Task,
    pub seed: u64,
    pub geometry: Vec<f64>,
    /// Visual decoys as (x0, y0, x1, y1, value) rows.
    pub clutter: Vec<[f64; 5]>,
    pub steps: Vec<StepRecord>,
    pub success: bool,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs one scripted-expert episode from a seed.
pub fn run_expert_episode(task: Task, seed: u64, params: &SimParams) -> Demonstration {
    let rng = RngStream::new(seed);
    let mut world = WorldState::init(task, &mut rng.derive_str("world"));
    let mut noise = NoiseState::default();
    let mut noise_rng = rng.derive_str("sensor");
    let geometry = world.geometry.to_params();
    let clutter: Vec<[f64; 5]> = world
        .clutter
        .iter()
        .map(|c| [c.x0, c.y0, c.x1, c.y1, c.value])
        .collect();
    let mut steps = Vec::new();
    while !episode_done(&world, params) {
        let image = render(&world);
        let state = world.state_vector();
        let action = expert_action(&world, params);
        let force = step(&mut world, action, params);
        let (sensed, bias) = noise.sense(force.clean, params, &mut noise_rng);
        steps.push(StepRecord {
            image,
            state,
            sensed,
            clean: force.clean,
            bias,
            action,
        });
    }
    Demonstration {
        task,
        seed,
        geometry,
        clutter,
        steps,
        success: evaluate_success(&world),
    }
}

/// Collects `count` successful expert episodes, resampling failures. Errors
/// if 10x the requested count does not yield enough successes.
pub fn generate_demos(
    task: Task,
    count: usize,
    seed: u64,
    params: &SimParams,
) -> Result<Vec<Demonstration>> {
    if count == 0 {
        return Err(Error::Input("demo count must be at least 1".into()));
    }
    let root = RngStream::new(seed).derive_str("episodes");
    let mut demos = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while demos.len() < count {
        if attempt >= 10 * count as u64 {
            return Err(Error::Input(format!(
                "expert produced only {} successes in {attempt} attempts",
                demos.len()
            )));
        }
        let ep_seed = root.derive(attempt).seed();
        let demo = run_expert_episode(task, ep_seed, params);
        attempt += 1;
        if demo.success {
            demos.push(demo);
        }
    }
    Ok(demos)
}

/// A loaded (or freshly generated) demonstration dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub instruction: String,
    pub sim: SimParams,
    pub norm: NormStats,
    pub gen_seed: u64,
    pub episodes: Vec<Demonstration>,
}

impl Dataset {
    pub fn generate(task: Task, count: usize, seed: u64, params: &SimParams) -> Result<Dataset> {
        let episodes = generate_demos(task, count, seed, params)?;
        let rows: Vec<Vec<f64>> = episodes
            .iter()
            .flat_map(|d| d.steps.iter().map(|s| s.action.to_vec()))
            .collect();
        let norm = NormStats::fit(&rows, 3);
        Ok(Dataset {
            task,
            instruction: task.instruction().to_string(),
            sim: params.clone(),
            norm,
            gen_seed: seed,
            episodes,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    /// Invariant audit: shapes, workspace bounds, finiteness, success flags.
    pub fn validate(&self) -> Result<()> {
        if self.episodes.is_empty() {
            return Err(Error::Format("dataset has no episodes".into()));
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            if ep.task != self.task {
                return Err(Error::Format(format!("episode {i} task mismatch")));
            }
            if !ep.success {
                return Err(Error::Format(format!("episode {i} is not a success")));
            }
            if ep.is_empty() {
                return Err(Error::Format(format!("episode {i} is empty")));
            }
            Geometry::from_params(self.task, &ep.geometry)?;
            for (t, s) in ep.steps.iter().enumerate() {
                if s.state.len() != 5 {
                    return Err(Error::Format(format!("episode {i} step {t}: bad state len")));
                }
                let finite = s.state.iter().all(|v| v.is_finite())
                    && s.sensed.iter().all(|v| v.is_finite())
                    && s.clean.iter().all(|v| v.is_finite())
                    && s.action.iter().all(|v| v.is_finite());
                if !finite {
                    return Err(Error::Format(format!(
                        "episode {i} step {t}: non-finite values"
                    )));
                }
                if !(0.0..=1.0).contains(&s.state[0]) || !(0.0..=1.0).contains(&s.state[1]) {
                    return Err(Error::Format(format!(
                        "episode {i} step {t}: position outside workspace"
                    )));
                }
                if s.image.data.len() != 3 * 32 * 32 {
                    return Err(Error::Format(format!("episode {i} step {t}: bad image")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = Manifest {
            format_version: DATASET_FORMAT_VERSION,
            task: self.task,
            instruction: self.instruction.clone(),
            count: self.episodes.len(),
            seed: self.gen_seed,
            sim: self.sim.clone(),
            action_norm: self.norm.clone(),
            episodes: Vec::new(),
        };
        for (i, ep) in self.episodes.iter().enumerate() {
            let file = format!("ep_{i:04}.bin");
            write_episode(&dir.join(&file), ep)?;
            manifest.episodes.push(EpisodeEntry {
                file,
                seed: ep.seed,
                len: ep.len(),
                success: ep.success,
            });
        }
        let mut f = fs::File::create(dir.join("manifest.json"))?;
        f.write_all(serde_json::to_string_pretty(&manifest).map_err(fmt_err)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_bytes = fs::read(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes).map_err(fmt_err)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format {} unsupported (want {})",
                manifest.format_version, DATASET_FORMAT_VERSION
            )));
        }
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for entry in &manifest.episodes {
            let ep = read_episode(&dir.join(&entry.file), manifest.task)?;
            if ep.len() != entry.len {
                return Err(Error::Format(format!(
                    "{}: length {} != manifest {}",
                    entry.file,
                    ep.len(),
                    entry.len
                )));
            }
            episodes.push(Demonstration {
                seed: entry.seed,
                success: entry.success,
                ..ep
            });
        }
        Ok(Dataset {
            task: manifest.task,
            instruction: manifest.instruction,
            sim: manifest.sim,
            norm: manifest.action_norm,
            gen_seed: manifest.seed,
            episodes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    task: Task,
    instruction: String,
    count: usize,
    seed: u64,
    sim: SimParams,
    action_norm: NormStats,
    episodes: Vec<EpisodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeEntry {
    file: String,
    seed: u64,
    len: usize,
    success: bool,
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    task: Task,
    geometry: Vec<f64>,
    #[serde(default)]
    clutter: Vec<[f64; 5]>,
    len: usize,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    bytes: usize,
}

fn fmt_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn f64s_to_bytes(values: impl Iterator<Item = f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_episode(path: &Path, ep: &Demonstration) -> Result<()> {
    let t = ep.len();
    let mut payload = Vec::new();
    let mut arrays = Vec::new();

    let mut push = |name: &str, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>| {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            dtype: dtype.to_string(),
            shape,
            bytes: bytes.len(),
        });
        payload.extend_from_slice(&bytes);
    };

    let mut images = Vec::with_capacity(t * 3 * 32 * 32);
    for s in &ep.steps {
        images.extend_from_slice(&s.image.data);
    }
    push("images", "u8", vec![t, 3, 32, 32], images);

    let mut buf = Vec::new();
    f64s_to_bytes(ep.steps.iter().flat_map(|s| s.state.iter().copied()), &mut buf);
    push("states", "f64", vec![t, 5], std::mem::take(&mut buf));
    f64s_to_bytes(ep.steps.iter().flat_map(|s| s.sensed), &mut buf);
    push("sensed_wrench", "f64", vec![t, 3], std::mem::take(&mut buf));
    f64s_to_bytes(ep.steps.iter().flat_map(|s| s.clean), &mut buf);
    push("clean_wrench", "f64", vec![t, 3], std::mem::take(&mut buf));
    f64s_to_bytes(ep.steps.iter().flat_map(|s| s.bias), &mut buf);
    push("noise_bias", "f64", vec![t, 3], std::mem::take(&mut buf));
    f64s_to_bytes(ep.steps.iter().flat_map(|s| s.action), &mut buf);
    push("actions", "f64", vec![t, 3], std::mem::take(&mut buf));

    let header = EpisodeHeader {
        task: ep.task,
        geometry: ep.geometry.clone(),
        clutter: ep.clutter.clone(),
        len: t,
        arrays,
    };
    let header_json = serde_json::to_vec(&header).map_err(fmt_err)?;
    let mut f = fs::File::create(path)?;
    f.write_all(EPISODE_MAGIC)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;
    f.write_all(&payload)?;
    Ok(())
}

fn read_exact_vec(f: &mut fs::File, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    f.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_episode(path: &Path, task: Task) -> Result<Demonstration> {
    let mut f = fs::File::open(path)?;
    let magic = read_exact_vec(&mut f, EPISODE_MAGIC.len())?;
    if magic != EPISODE_MAGIC {
        return Err(Error::Format(format!("{}: bad episode magic", path.display())));
    }
    let len_bytes = read_exact_vec(&mut f, 4)?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let header: EpisodeHeader =
        serde_json::from_slice(&read_exact_vec(&mut f, header_len)?).map_err(fmt_err)?;
    if header.task != task {
        return Err(Error::Format(format!("{}: task mismatch", path.display())));
    }
    let mut by_name = std::collections::HashMap::new();
    for a in &header.arrays {
        by_name.insert(a.name.clone(), (a.shape.clone(), read_exact_vec(&mut f, a.bytes)?));
    }
    let take_f64 = |name: &str| -> Result<Vec<f64>> {
        let (_, bytes) = by_name
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let (img_shape, img_bytes) = by_name
        .get("images")
        .ok_or_else(|| Error::Format("missing array images".into()))?;
    let t = header.len;
    if img_shape != &vec![t, 3, 32, 32] {
        return Err(Error::Format("unexpected image shape".into()));
    }
    let states = take_f64("states")?;
    let sensed = take_f64("sensed_wrench")?;
    let clean = take_f64("clean_wrench")?;
    let bias = take_f64("noise_bias")?;
    let actions = take_f64("actions")?;

    let mut steps = Vec::with_capacity(t);
    let img_sz = 3 * 32 * 32;
    for i in 0..t {
        let image = Image {
            channels: 3,
            height: 32,
            width: 32,
            data: img_bytes[i * img_sz..(i + 1) * img_sz].to_vec(),
        };
        let arr3 = |v: &[f64]| -> [f64; 3] { [v[i * 3], v[i * 3 + 1], v[i * 3 + 2]] };
        steps.push(StepRecord {
            image,
            state: states[i * 5..(i + 1) * 5].to_vec(),
            sensed: arr3(&sensed),
            clean: arr3(&clean),
            bias: arr3(&bias),
            action: arr3(&actions),
        });
    }
    Ok(Demonstration {
        task,
        seed: 0,
        geometry: header.geometry,
        clutter: header.clutter,
        steps,
        success: true,
    })
}
