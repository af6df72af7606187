//! Fused token sequence [vision, language, state, force], the directional
//! attention mask that keeps information flowing one way (perceptual tokens
//! never see control tokens), and the frozen transformer stand-in that
//! applies it.

use std::sync::Arc;

use crate::config::ModelConfig;
use crate::embedding::{Modality, TokenBlock};
use crate::error::{Error, Result};
use crate::fdm::ForceToken;
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{AttnMask, MaskBits, NodeId, Tape};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Vision and language tokens.
    Perceptual,
    /// State and force tokens.
    Control,
}

/// Token counts per modality in the fixed fused order
/// [vision, language, state, force].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamLayout {
    pub n_vision: usize,
    pub n_language: usize,
    pub n_state: usize,
    pub n_force: usize,
}

impl StreamLayout {
    pub fn new(n_vision: usize, n_language: usize, n_state: usize, n_force: usize) -> Result<Self> {
        if n_state > 1 || n_force > 1 {
            return Err(Error::Config(format!(
                "at most one state and one force token (got {n_state}, {n_force})"
            )));
        }
        let layout = StreamLayout {
            n_vision,
            n_language,
            n_state,
            n_force,
        };
        if layout.n_total() == 0 {
            return Err(Error::Config("empty stream layout".into()));
        }
        Ok(layout)
    }

    pub fn n_total(&self) -> usize {
        self.n_vision + self.n_language + self.n_state + self.n_force
    }

    pub fn n_perceptual(&self) -> usize {
        self.n_vision + self.n_language
    }

    pub fn stream_of(&self, index: usize) -> Stream {
        if index < self.n_perceptual() {
            Stream::Perceptual
        } else {
            Stream::Control
        }
    }

    /// Row index of the state token, when present.
    pub fn state_index(&self) -> Option<usize> {
        (self.n_state == 1).then(|| self.n_perceptual())
    }

    /// Row index of the force token, when present.
    pub fn force_index(&self) -> Option<usize> {
        (self.n_force == 1).then(|| self.n_perceptual() + self.n_state)
    }
}

/// Binary attention-permission matrix over the fused sequence:
/// perceptual rows may attend only within the perceptual block, control rows
/// may attend to all perceptual tokens and causally within the control block.
#[derive(Debug, Clone)]
pub struct DirectionalMask {
    pub layout: StreamLayout,
    pub mask: AttnMask,
}

pub fn build_directional_mask(layout: &StreamLayout) -> DirectionalMask {
    let n = layout.n_total();
    let mut bits = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let allowed = match (layout.stream_of(i), layout.stream_of(j)) {
                (Stream::Perceptual, Stream::Perceptual) => true,
                (Stream::Control, Stream::Perceptual) => true,
                (Stream::Control, Stream::Control) => i >= j,
                (Stream::Perceptual, Stream::Control) => false,
            };
            bits[i * n + j] = allowed;
        }
    }
    DirectionalMask {
        layout: *layout,
        mask: Arc::new(MaskBits {
            rows: n,
            cols: n,
            bits,
        }),
    }
}

/// Fused sequence plus its layout.
pub struct FusedTokens {
    pub node: NodeId,
    pub layout: StreamLayout,
}

/// Concatenates the modality blocks in the fixed order
/// [vision, language, state, force]; misordered blocks are rejected.
pub fn concat_fused(
    tape: &mut Tape,
    vision: &TokenBlock,
    language: &TokenBlock,
    state: &TokenBlock,
    force: Option<&ForceToken>,
) -> Result<FusedTokens> {
    if vision.modality != Modality::Vision
        || language.modality != Modality::Language
        || state.modality != Modality::State
    {
        return Err(Error::Contract(
            "fused order must be [vision, language, state, force]".into(),
        ));
    }
    let widths = [
        tape.value(vision.node).cols(),
        tape.value(language.node).cols(),
        tape.value(state.node).cols(),
    ];
    if widths.iter().any(|&w| w != widths[0]) {
        return Err(Error::dim(
            "concat_fused",
            format!("token widths differ: {widths:?}"),
        ));
    }
    let mut parts = vec![vision.node, language.node, state.node];
    if let Some(f) = force {
        if tape.value(f.node).cols() != widths[0] {
            return Err(Error::dim("concat_fused", "force token width differs"));
        }
        parts.push(f.node);
    }
    let node = tape.concat_rows(&parts)?;
    let layout = StreamLayout::new(
        vision.len,
        language.len,
        state.len,
        usize::from(force.is_some()),
    )?;
    Ok(FusedTokens { node, layout })
}

/// One pre-LN transformer block: masked multi-head self-attention with a
/// residual, then a GELU feed-forward with a residual.
pub struct TransformerLayer {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl TransformerLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        trainable: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let d = cfg.hidden;
        let hidden_ffn = cfg.ffn_mult * d;
        let std = 1.0 / (d as f64).sqrt();
        let name = |s: &str| format!("{prefix}.{s}");
        Ok(TransformerLayer {
            ln1_gain: store.add(&name("ln1_gain"), Tensor::new(vec![1, d], vec![1.0; d])?, trainable)?,
            ln1_bias: store.add(&name("ln1_bias"), Tensor::zeros(vec![1, d]), trainable)?,
            w_q: store.add(
                &name("w_q"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_q"))),
                trainable,
            )?,
            w_k: store.add(
                &name("w_k"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_k"))),
                trainable,
            )?,
            w_v: store.add(
                &name("w_v"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_v"))),
                trainable,
            )?,
            w_o: store.add(
                &name("w_o"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_o"))),
                trainable,
            )?,
            ln2_gain: store.add(&name("ln2_gain"), Tensor::new(vec![1, d], vec![1.0; d])?, trainable)?,
            ln2_bias: store.add(&name("ln2_bias"), Tensor::zeros(vec![1, d]), trainable)?,
            ffn_w1: store.add(
                &name("ffn_w1"),
                Tensor::randn(vec![d, hidden_ffn], std, &mut rng.derive_str(&name("ffn_w1"))),
                trainable,
            )?,
            ffn_b1: store.add(&name("ffn_b1"), Tensor::zeros(vec![1, hidden_ffn]), trainable)?,
            ffn_w2: store.add(
                &name("ffn_w2"),
                Tensor::randn(
                    vec![hidden_ffn, d],
                    1.0 / (hidden_ffn as f64).sqrt(),
                    &mut rng.derive_str(&name("ffn_w2")),
                ),
                trainable,
            )?,
            ffn_b2: store.add(&name("ffn_b2"), Tensor::zeros(vec![1, d]), trainable)?,
        })
    }

    /// Masked self-attention sublayer (pre-LN, residual). Disallowed logits
    /// are pushed below the softmax underflow threshold, so masked weights
    /// are exactly zero and masked columns contribute nothing, bit for bit.
    pub fn masked_self_attention(
        &self,
        tape: &mut Tape,
        x: NodeId,
        mask: Option<&AttnMask>,
        heads: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let d = tape.value(x).cols();
        let n = tape.value(x).rows();
        if let Some(m) = mask {
            if m.rows != n || m.cols != n {
                return Err(Error::dim(
                    "masked_self_attention",
                    format!("mask {}x{} vs sequence {n}", m.rows, m.cols),
                ));
            }
        }
        let head_dim = d / heads;
        let gain = tape.param(self.ln1_gain);
        let bias = tape.param(self.ln1_bias);
        let ln = tape.layernorm(x, gain, bias, eps)?;
        let w_q = tape.param(self.w_q);
        let w_k = tape.param(self.w_k);
        let w_v = tape.param(self.w_v);
        let q = tape.matmul(ln, w_q)?;
        let k = tape.matmul(ln, w_k)?;
        let v = tape.matmul(ln, w_v)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut parts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let kht = tape.transpose(kh);
            let logits = tape.matmul(qh, kht)?;
            let scaled = tape.scale(logits, scale);
            let alpha = tape.row_softmax(scaled, mask.cloned())?;
            parts.push(tape.matmul(alpha, vh)?);
        }
        let z = tape.concat_cols(&parts)?;
        let w_o = tape.param(self.w_o);
        let proj = tape.matmul(z, w_o)?;
        tape.add(x, proj)
    }

    /// Feed-forward sublayer (pre-LN, residual).
    pub fn ffn_block(&self, tape: &mut Tape, x: NodeId, eps: f64) -> Result<NodeId> {
        let gain = tape.param(self.ln2_gain);
        let bias = tape.param(self.ln2_bias);
        let ln = tape.layernorm(x, gain, bias, eps)?;
        let w1 = tape.param(self.ffn_w1);
        let b1 = tape.param(self.ffn_b1);
        let w2 = tape.param(self.ffn_w2);
        let b2 = tape.param(self.ffn_b2);
        let a = tape.affine(ln, w1, b1)?;
        let g = tape.gelu(a);
        let out = tape.affine(g, w2, b2)?;
        tape.add(x, out)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        mask: Option<&AttnMask>,
        heads: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let attn = self.masked_self_attention(tape, x, mask, heads, eps)?;
        self.ffn_block(tape, attn, eps)
    }
}

/// Frozen random-weight transformer standing in for a pretrained backbone.
/// Only the first `k_used` of `k_total` layers execute (layer skipping);
/// no parameter in the stack is ever trainable.
pub struct FrozenStack {
    pub layers: Vec<TransformerLayer>,
    pub k_used: usize,
    heads: usize,
    eps: f64,
}

impl FrozenStack {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.frozen_layers_total);
        for l in 0..cfg.frozen_layers_total {
            layers.push(TransformerLayer::init(
                store,
                &format!("frozen.layer{l}"),
                cfg,
                false,
                rng,
            )?);
        }
        Ok(FrozenStack {
            layers,
            k_used: cfg.frozen_layers_used,
            heads: cfg.heads,
            eps: cfg.layernorm_eps,
        })
    }

    /// Applies the first `k_used` layers, each under the directional mask.
    /// `k_used == 0` is the identity.
    pub fn forward(&self, tape: &mut Tape, fused: &FusedTokens) -> Result<NodeId> {
        let mask = build_directional_mask(&fused.layout);
        let mut x = fused.node;
        for layer in self.layers.iter().take(self.k_used) {
            x = layer.forward(tape, x, Some(&mask.mask), self.heads, self.eps)?;
        }
        Ok(x)
    }

    /// Unmasked forward over an arbitrary sequence (used by tests to compare
    /// against the perceptual-only path).
    pub fn forward_unmasked(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for layer in self.layers.iter().take(self.k_used) {
            cur = layer.forward(tape, cur, None, self.heads, self.eps)?;
        }
        Ok(cur)
    }
}
