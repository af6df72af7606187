//! Encoders that turn raw modality inputs into width-D token blocks.
//!
//! These stand in for a pretrained multimodal backbone: a patch-projection
//! vision encoder with fixed sinusoidal position encodings, a hash-vocabulary
//! word embedder, and a one-layer state projection. All three are pure
//! functions of their input and the parameter store.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;

/// Channel-first raster image with values stored as bytes; consumers see
/// values in [0, 1]. Byte storage keeps datasets compact and renders
/// byte-for-byte reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x] as f64 / 255.0
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
}

/// One observation: instruction, rendered view, proprioceptive state, and an
/// optional sensed wrench. `force` is `None` in sensor-free operation; any
/// code path that needs it must surface a mode error rather than invent one.
#[derive(Debug, Clone)]
pub struct ModalityBundle {
    pub language: String,
    pub vision: Image,
    pub state: Vec<f64>,
    pub force: Option<Vec<f64>>,
}

impl ModalityBundle {
    pub fn validate(&self) -> Result<()> {
        if !self.state.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("non-finite state vector".into()));
        }
        if let Some(f) = &self.force {
            if !f.iter().all(|v| v.is_finite()) {
                return Err(Error::Input("non-finite force wrench".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Vision,
    Language,
    State,
    Force,
}

/// A contiguous run of same-width embedding vectors for one modality,
/// carried as a node on the active tape.
#[derive(Debug, Clone, Copy)]
pub struct TokenBlock {
    pub node: NodeId,
    pub len: usize,
    pub modality: Modality,
}

/// Fixed sinusoidal position encodings, one row per position.
pub fn sinusoid_rows(positions: usize, width: usize, scale: f64) -> Tensor {
    let mut t = Tensor::zeros(vec![positions, width]);
    for pos in 0..positions {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / width as f64);
            let angle = pos as f64 * scale * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(pos, i, v);
        }
    }
    t
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic word -> vocabulary bucket assignment.
pub fn hash_bucket(word: &str, vocab: usize) -> usize {
    (fnv1a(word.as_bytes()) % vocab as u64) as usize
}

/// Non-overlapping patch projection to width D plus fixed sinusoidal
/// position encodings.
pub struct VisionEncoder {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pos: Tensor,
    patch: usize,
    channels: usize,
    image_size: usize,
}

impl VisionEncoder {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let patch_dim = cfg.image_channels * cfg.patch * cfg.patch;
        let std = 1.0 / (patch_dim as f64).sqrt();
        let proj_w = store.add(
            "embed.vision.w",
            Tensor::randn(vec![patch_dim, cfg.hidden], std, &mut rng.derive_str("vision.w")),
            true,
        )?;
        let proj_b = store.add("embed.vision.b", Tensor::zeros(vec![1, cfg.hidden]), true)?;
        Ok(VisionEncoder {
            proj_w,
            proj_b,
            pos: sinusoid_rows(cfg.vision_tokens(), cfg.hidden, 1.0),
            patch: cfg.patch,
            channels: cfg.image_channels,
            image_size: cfg.image_size,
        })
    }

    /// Flattens each patch in (channel, row, col) order; one output row per patch.
    pub fn patches(&self, image: &Image) -> Result<Tensor> {
        if image.height != image.width || image.height != self.image_size {
            return Err(Error::Config(format!(
                "expected {0}x{0} image, got {1}x{2}",
                self.image_size, image.height, image.width
            )));
        }
        if image.height % self.patch != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                image.height, self.patch
            )));
        }
        if image.channels != self.channels {
            return Err(Error::Config(format!(
                "expected {} channels, got {}",
                self.channels, image.channels
            )));
        }
        let per_side = image.height / self.patch;
        let patch_dim = self.channels * self.patch * self.patch;
        let mut out = Tensor::zeros(vec![per_side * per_side, patch_dim]);
        for py in 0..per_side {
            for px in 0..per_side {
                let row = py * per_side + px;
                let mut k = 0;
                for c in 0..self.channels {
                    for dy in 0..self.patch {
                        for dx in 0..self.patch {
                            let v = image.at(c, py * self.patch + dy, px * self.patch + dx);
                            out.set(row, k, v);
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn encode(&self, tape: &mut Tape, image: &Image) -> Result<TokenBlock> {
        let patches = self.patches(image)?;
        let n = patches.rows();
        let x = tape.leaf(patches);
        let w = tape.param(self.proj_w);
        let b = tape.param(self.proj_b);
        let projected = tape.affine(x, w, b)?;
        let pos = tape.leaf(self.pos.clone());
        let node = tape.add(projected, pos)?;
        Ok(TokenBlock {
            node,
            len: n,
            modality: Modality::Vision,
        })
    }
}

/// Whitespace tokenizer, fixed hash-to-bucket table, trainable embedding rows.
pub struct LanguageEncoder {
    pub table: ParamId,
    vocab: usize,
}

impl LanguageEncoder {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let table = store.add(
            "embed.language.table",
            Tensor::randn(vec![cfg.vocab, cfg.hidden], 0.02, &mut rng.derive_str("lang.table")),
            true,
        )?;
        Ok(LanguageEncoder { table, vocab: cfg.vocab })
    }

    pub fn buckets(&self, instruction: &str) -> Result<Vec<usize>> {
        let words: Vec<&str> = instruction.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Input("empty instruction".into()));
        }
        Ok(words.iter().map(|w| hash_bucket(w, self.vocab)).collect())
    }

    pub fn encode(&self, tape: &mut Tape, instruction: &str) -> Result<TokenBlock> {
        let rows = self.buckets(instruction)?;
        let node = tape.param_rows(self.table, &rows)?;
        Ok(TokenBlock {
            node,
            len: rows.len(),
            modality: Modality::Language,
        })
    }
}

/// Single-layer projection of the proprioceptive state to one token.
pub struct StateEncoder {
    pub w: ParamId,
    pub b: ParamId,
    state_dim: usize,
}

impl StateEncoder {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let std = 1.0 / (cfg.state_dim as f64).sqrt();
        let w = store.add(
            "embed.state.w",
            Tensor::randn(vec![cfg.state_dim, cfg.hidden], std, &mut rng.derive_str("state.w")),
            true,
        )?;
        let b = store.add("embed.state.b", Tensor::zeros(vec![1, cfg.hidden]), true)?;
        Ok(StateEncoder { w, b, state_dim: cfg.state_dim })
    }

    pub fn encode(&self, tape: &mut Tape, state: &[f64]) -> Result<TokenBlock> {
        if state.len() != self.state_dim {
            return Err(Error::dim(
                "encode_state",
                format!("state length {} != {}", state.len(), self.state_dim),
            ));
        }
        let x = tape.leaf(Tensor::row(state));
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let node = tape.affine(x, w, b)?;
        Ok(TokenBlock {
            node,
            len: 1,
            modality: Modality::State,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, ModelConfig, RngStream) {
        (ParamStore::new(), ModelConfig::default(), RngStream::new(1))
    }

    #[test]
    fn vision_token_count() {
        let (mut store, cfg, mut rng) = setup();
        let enc = VisionEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let img = Image::new(3, 32, 32);
        let mut tape = Tape::new(&store);
        let block = enc.encode(&mut tape, &img).unwrap();
        assert_eq!(block.len, 16);
        assert_eq!(tape.value(block.node).shape(), &[16, 64]);
    }

    #[test]
    fn zero_image_zero_bias_gives_position_encodings() {
        let (mut store, cfg, mut rng) = setup();
        let enc = VisionEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let img = Image::new(3, 32, 32);
        let mut tape = Tape::new(&store);
        let block = enc.encode(&mut tape, &img).unwrap();
        let expected = sinusoid_rows(16, 64, 1.0);
        assert_eq!(tape.value(block.node), &expected);
    }

    #[test]
    fn single_patch_locality() {
        let (mut store, cfg, mut rng) = setup();
        let enc = VisionEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let a = Image::new(3, 32, 32);
        let mut b = a.clone();
        b.set(0, 2, 3, 1.0); // inside patch (0, 0)
        let pa = enc.patches(&a).unwrap();
        let pb = enc.patches(&b).unwrap();
        let mut differing = Vec::new();
        for r in 0..16 {
            if pa.row_slice(r) != pb.row_slice(r) {
                differing.push(r);
            }
        }
        assert_eq!(differing, vec![0]);
    }

    #[test]
    fn indivisible_image_is_config_error() {
        let (mut store, cfg, mut rng) = setup();
        let enc = VisionEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let img = Image::new(3, 30, 30);
        assert!(matches!(enc.patches(&img), Err(Error::Config(_))));
    }

    #[test]
    fn language_token_count_and_determinism() {
        let (mut store, cfg, mut rng) = setup();
        let enc = LanguageEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let a = enc.encode(&mut tape, "press the button").unwrap();
        assert_eq!(a.len, 3);
        let b = enc.encode(&mut tape, "press the button").unwrap();
        assert_eq!(tape.value(a.node), tape.value(b.node));
    }

    #[test]
    fn empty_instruction_is_input_error() {
        let (mut store, cfg, mut rng) = setup();
        let enc = LanguageEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        assert!(matches!(enc.buckets("   "), Err(Error::Input(_))));
    }

    #[test]
    fn task_instruction_words_have_distinct_buckets() {
        // the three task instructions must not collide anywhere
        let cfg = ModelConfig::default();
        let words = [
            "wipe", "the", "whiteboard", "press", "emergency", "button", "insert", "plug",
        ];
        let mut seen = std::collections::HashMap::new();
        for w in words {
            let b = hash_bucket(w, cfg.vocab);
            if let Some(prev) = seen.insert(b, w) {
                panic!("bucket collision between {prev} and {w}");
            }
        }
    }

    #[test]
    fn state_token_shape_and_linearity() {
        let (mut store, cfg, mut rng) = setup();
        let enc = StateEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let x = [0.1, -0.2, 0.3, 0.0, 1.0];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let t1 = enc.encode(&mut tape, &x).unwrap();
        let t2 = enc.encode(&mut tape, &x2).unwrap();
        assert_eq!(tape.value(t1.node).shape(), &[1, 64]);
        // affine identity: enc(2x) - 2 enc(x) = -bias; bias is zero at init
        for (a, b) in tape
            .value(t2.node)
            .data()
            .iter()
            .zip(tape.value(t1.node).data())
        {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_zero_bias_gives_zero_token() {
        let (mut store, cfg, mut rng) = setup();
        let enc = StateEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let t = enc.encode(&mut tape, &[0.0; 5]).unwrap();
        assert!(tape.value(t.node).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_state_length_is_dimension_error() {
        let (mut store, cfg, mut rng) = setup();
        let enc = StateEncoder::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        assert!(matches!(
            enc.encode(&mut tape, &[1.0, 2.0]),
            Err(Error::Dim { .. })
        ));
    }
}
