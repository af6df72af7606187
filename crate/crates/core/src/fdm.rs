//! Force distillation: a single learnable query attends over vision and state
//! tokens to produce a predicted force token, which is supervised against a
//! projection of the sensed wrench during training. At inference only the
//! prediction branch runs, so no force sensor is required.

use crate::config::ModelConfig;
use crate::embedding::{Modality, TokenBlock};
use crate::error::{Error, Result};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Predicted,
    Actual,
}

/// A single width-D force embedding, tagged with which branch produced it.
#[derive(Debug, Clone, Copy)]
pub struct ForceToken {
    pub node: NodeId,
    pub kind: TokenKind,
}

/// Context matrix [query, vision tokens, state token] for the retrieval
/// attention; row 0 is always the query.
#[derive(Debug, Clone, Copy)]
pub struct FdmContext {
    pub node: NodeId,
    pub len: usize,
}

pub struct ForceDistiller {
    /// Learnable query token p.
    pub query: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    /// Actual-branch wrench projection d_f -> D.
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    /// Reconstruction head D -> d_f keeping the actual token informative.
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    heads: usize,
    head_dim: usize,
    hidden: usize,
    force_dim: usize,
    eps: f64,
}

/// Attention weights per head over the context rows, exposed for inspection.
pub struct FdmAttention {
    pub per_head: Vec<NodeId>,
}

impl ForceDistiller {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.hidden;
        let proj_std = 1.0 / (d as f64).sqrt();
        let hidden_ffn = cfg.ffn_mult * d;
        let p = |name: &str| format!("fdm.{name}");
        let query = store.add(
            &p("query"),
            Tensor::randn(vec![1, d], 0.02, &mut rng.derive_str("fdm.query")),
            true,
        )?;
        let w_q = store.add(
            &p("w_q"),
            Tensor::randn(vec![d, d], proj_std, &mut rng.derive_str("fdm.w_q")),
            true,
        )?;
        let w_k = store.add(
            &p("w_k"),
            Tensor::randn(vec![d, d], proj_std, &mut rng.derive_str("fdm.w_k")),
            true,
        )?;
        let w_v = store.add(
            &p("w_v"),
            Tensor::randn(vec![d, d], proj_std, &mut rng.derive_str("fdm.w_v")),
            true,
        )?;
        let w_o = store.add(
            &p("w_o"),
            Tensor::randn(vec![d, d], proj_std, &mut rng.derive_str("fdm.w_o")),
            true,
        )?;
        let ln_gain = store.add(&p("ln_gain"), Tensor::new(vec![1, d], vec![1.0; d])?, true)?;
        let ln_bias = store.add(&p("ln_bias"), Tensor::zeros(vec![1, d]), true)?;
        let ffn_w1 = store.add(
            &p("ffn_w1"),
            Tensor::randn(vec![d, hidden_ffn], proj_std, &mut rng.derive_str("fdm.ffn_w1")),
            true,
        )?;
        let ffn_b1 = store.add(&p("ffn_b1"), Tensor::zeros(vec![1, hidden_ffn]), true)?;
        let ffn_w2 = store.add(
            &p("ffn_w2"),
            Tensor::randn(
                vec![hidden_ffn, d],
                1.0 / (hidden_ffn as f64).sqrt(),
                &mut rng.derive_str("fdm.ffn_w2"),
            ),
            true,
        )?;
        let ffn_b2 = store.add(&p("ffn_b2"), Tensor::zeros(vec![1, d]), true)?;
        let enc_w = store.add(
            &p("enc_w"),
            Tensor::randn(
                vec![cfg.force_dim, d],
                1.0 / (cfg.force_dim as f64).sqrt(),
                &mut rng.derive_str("fdm.enc_w"),
            ),
            true,
        )?;
        let enc_b = store.add(&p("enc_b"), Tensor::zeros(vec![1, d]), true)?;
        let dec_w = store.add(
            &p("dec_w"),
            Tensor::randn(vec![d, cfg.force_dim], proj_std, &mut rng.derive_str("fdm.dec_w")),
            true,
        )?;
        let dec_b = store.add(&p("dec_b"), Tensor::zeros(vec![1, cfg.force_dim]), true)?;
        Ok(ForceDistiller {
            query,
            w_q,
            w_k,
            w_v,
            w_o,
            ln_gain,
            ln_bias,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
            hidden: cfg.hidden,
            force_dim: cfg.force_dim,
            eps: cfg.layernorm_eps,
        })
    }

    /// Concatenates [query, vision tokens, state token] in that order.
    pub fn build_context(
        &self,
        tape: &mut Tape,
        query: NodeId,
        vision: &TokenBlock,
        state: &TokenBlock,
    ) -> Result<FdmContext> {
        if vision.modality != Modality::Vision || state.modality != Modality::State {
            return Err(Error::Contract(
                "context expects (vision, state) token blocks in order".into(),
            ));
        }
        if vision.len == 0 {
            return Err(Error::dim("build_context", "empty vision block".to_string()));
        }
        let widths = [
            tape.value(query).cols(),
            tape.value(vision.node).cols(),
            tape.value(state.node).cols(),
        ];
        if widths.iter().any(|&w| w != self.hidden) {
            return Err(Error::dim(
                "build_context",
                format!("token widths {widths:?} != hidden {}", self.hidden),
            ));
        }
        let node = tape.concat_rows(&[query, vision.node, state.node])?;
        Ok(FdmContext {
            node,
            len: 1 + vision.len + state.len,
        })
    }

    /// Single-query multi-head attention over the context. The query row is
    /// part of the context, so it also serves as key and value
    /// (self-conditioning through the residual path).
    pub fn single_query_attention(
        &self,
        tape: &mut Tape,
        query: NodeId,
        ctx: &FdmContext,
    ) -> Result<(NodeId, FdmAttention)> {
        let w_q = tape.param(self.w_q);
        let w_k = tape.param(self.w_k);
        let w_v = tape.param(self.w_v);
        let q = tape.matmul(query, w_q)?; // [1, H*d_k]
        let k = tape.matmul(ctx.node, w_k)?; // [N_c, H*d_k]
        let v = tape.matmul(ctx.node, w_v)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut z_parts = Vec::with_capacity(self.heads);
        let mut alphas = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * self.head_dim, self.head_dim)?;
            let kh = tape.slice_cols(k, h * self.head_dim, self.head_dim)?;
            let vh = tape.slice_cols(v, h * self.head_dim, self.head_dim)?;
            let kht = tape.transpose(kh);
            let logits = tape.matmul(qh, kht)?; // [1, N_c]
            let scaled = tape.scale(logits, scale);
            let alpha = tape.row_softmax(scaled, None)?;
            let zh = tape.matmul(alpha, vh)?; // [1, d_k]
            z_parts.push(zh);
            alphas.push(alpha);
        }
        let z = tape.concat_cols(&z_parts)?; // [1, H*d_k]
        Ok((z, FdmAttention { per_head: alphas }))
    }

    /// Output head: h = LN(Z·W_O + query); token = h + FFN(h).
    pub fn output_head(&self, tape: &mut Tape, z: NodeId, query: NodeId) -> Result<ForceToken> {
        let w_o = tape.param(self.w_o);
        let gain = tape.param(self.ln_gain);
        let bias = tape.param(self.ln_bias);
        let zo = tape.matmul(z, w_o)?;
        let pre = tape.add(zo, query)?;
        let h = tape.layernorm(pre, gain, bias, self.eps)?;
        let w1 = tape.param(self.ffn_w1);
        let b1 = tape.param(self.ffn_b1);
        let w2 = tape.param(self.ffn_w2);
        let b2 = tape.param(self.ffn_b2);
        let a1 = tape.affine(h, w1, b1)?;
        let act = tape.gelu(a1);
        let ffn = tape.affine(act, w2, b2)?;
        let node = tape.add(h, ffn)?;
        Ok(ForceToken {
            node,
            kind: TokenKind::Predicted,
        })
    }

    /// Full prediction branch with the learnable query.
    pub fn predict(
        &self,
        tape: &mut Tape,
        vision: &TokenBlock,
        state: &TokenBlock,
    ) -> Result<(ForceToken, FdmAttention)> {
        let query = tape.param(self.query);
        self.predict_with_query(tape, query, vision, state)
    }

    /// Prediction branch with a caller-supplied query row (used by the
    /// force-token ablation, where the encoded sensed wrench is the query).
    pub fn predict_with_query(
        &self,
        tape: &mut Tape,
        query: NodeId,
        vision: &TokenBlock,
        state: &TokenBlock,
    ) -> Result<(ForceToken, FdmAttention)> {
        let ctx = self.build_context(tape, query, vision, state)?;
        let (z, attn) = self.single_query_attention(tape, query, &ctx)?;
        let token = self.output_head(tape, z, query)?;
        Ok((token, attn))
    }

    /// Actual branch: linear projection of the sensed wrench. Training-time
    /// only; in sensor-free inference there is no wrench to encode.
    pub fn encode_actual(&self, tape: &mut Tape, wrench: Option<&[f64]>) -> Result<ForceToken> {
        let wrench = wrench.ok_or_else(|| {
            Error::Mode("force encoder invoked during sensor-free inference".into())
        })?;
        if wrench.len() != self.force_dim {
            return Err(Error::dim(
                "encode_actual_force",
                format!("wrench length {} != {}", wrench.len(), self.force_dim),
            ));
        }
        if !wrench.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("non-finite wrench".into()));
        }
        let x = tape.leaf(Tensor::row(wrench));
        let w = tape.param(self.enc_w);
        let b = tape.param(self.enc_b);
        let node = tape.affine(x, w, b)?;
        Ok(ForceToken {
            node,
            kind: TokenKind::Actual,
        })
    }

    /// Linear reconstruction of the wrench from an actual-branch token.
    pub fn decode_force(&self, tape: &mut Tape, token: &ForceToken) -> Result<NodeId> {
        if token.kind != TokenKind::Actual {
            return Err(Error::Contract(
                "decode_force expects an actual-branch token".into(),
            ));
        }
        let w = tape.param(self.dec_w);
        let b = tape.param(self.dec_b);
        tape.affine(token.node, w, b)
    }

    /// ‖f_pF − f_aF‖² summed over the hidden width.
    pub fn distill_loss(
        &self,
        tape: &mut Tape,
        predicted: &ForceToken,
        actual: &ForceToken,
    ) -> Result<NodeId> {
        if predicted.kind != TokenKind::Predicted || actual.kind != TokenKind::Actual {
            return Err(Error::Contract(
                "distill_loss expects (predicted, actual) token kinds".into(),
            ));
        }
        tape.squared_l2(predicted.node, actual.node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TokenBlock;
    use crate::numerics::param::GradAccum;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 2,
            heads: 1,
            ..ModelConfig::default()
        }
    }

    fn block(tape: &mut Tape, modality: Modality, t: Tensor) -> TokenBlock {
        let len = t.rows();
        TokenBlock {
            node: tape.leaf(t),
            len,
            modality,
        }
    }

    fn set_identity(store: &mut ParamStore, id: ParamId) {
        let d = store.value(id).cols();
        let mut t = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            t.set(i, i, 1.0);
        }
        *store.value_mut(id) = t;
    }

    #[test]
    fn context_counts_and_order() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, Tensor::zeros(vec![16, 64]));
        let state = block(&mut tape, Modality::State, Tensor::zeros(vec![1, 64]));
        let q = tape.param(fdm.query);
        let ctx = fdm.build_context(&mut tape, q, &vision, &state).unwrap();
        assert_eq!(ctx.len, 18);

        // ordering: row 0 is the query
        let qv = tape.value(q).data().to_vec();
        assert_eq!(tape.value(ctx.node).row_slice(0), &qv[..]);
    }

    #[test]
    fn context_rejects_misordered_blocks() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, Tensor::zeros(vec![16, 64]));
        let state = block(&mut tape, Modality::State, Tensor::zeros(vec![1, 64]));
        let q = tape.param(fdm.query);
        let swapped = fdm.build_context(&mut tape, q, &TokenBlock { modality: Modality::State, ..vision }, &state);
        assert!(matches!(swapped, Err(Error::Contract(_))));
    }

    #[test]
    fn single_token_attention_is_identity() {
        // context = [p] only with identity projections: alpha = [1], Z = p
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = tiny_cfg();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        for id in [fdm.w_q, fdm.w_k, fdm.w_v] {
            set_identity(&mut store, id);
        }
        *store.value_mut(fdm.query) = Tensor::row(&[0.3, -0.7]);
        let mut tape = Tape::new(&store);
        let q = tape.param(fdm.query);
        let ctx = FdmContext { node: q, len: 1 };
        let (z, attn) = fdm.single_query_attention(&mut tape, q, &ctx).unwrap();
        assert_eq!(tape.value(attn.per_head[0]).data(), &[1.0]);
        assert_eq!(tape.value(z).data(), store.value(fdm.query).data());
    }

    #[test]
    fn identical_rows_split_attention_evenly() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = tiny_cfg();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        for id in [fdm.w_q, fdm.w_k, fdm.w_v] {
            set_identity(&mut store, id);
        }
        let mut tape = Tape::new(&store);
        let row = Tensor::row(&[0.5, 0.25]);
        let a = tape.leaf(row.clone());
        let b = tape.leaf(row);
        let ctx_node = tape.concat_rows(&[a, b]).unwrap();
        let q = tape.leaf(Tensor::row(&[1.0, 0.0]));
        let ctx = FdmContext { node: ctx_node, len: 2 };
        let (_, attn) = fdm.single_query_attention(&mut tape, q, &ctx).unwrap();
        assert_eq!(tape.value(attn.per_head[0]).data(), &[0.5, 0.5]);
    }

    #[test]
    fn two_token_attention_matches_hand_computation() {
        // D=2, H=1, identity projections, p=[1,0], context rows [p, [0,1]]:
        // logits = [1/sqrt(2), 0], alpha ≈ [0.6698, 0.3302], Z = alpha
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = tiny_cfg();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        for id in [fdm.w_q, fdm.w_k, fdm.w_v] {
            set_identity(&mut store, id);
        }
        let mut tape = Tape::new(&store);
        let q = tape.leaf(Tensor::row(&[1.0, 0.0]));
        let other = tape.leaf(Tensor::row(&[0.0, 1.0]));
        let ctx_node = tape.concat_rows(&[q, other]).unwrap();
        let ctx = FdmContext { node: ctx_node, len: 2 };
        let (z, attn) = fdm.single_query_attention(&mut tape, q, &ctx).unwrap();

        // independent recomputation of the softmax and weighted sum
        let l0 = 1.0 / 2.0f64.sqrt();
        let e0 = (l0 - l0).exp();
        let e1 = (0.0 - l0).exp();
        let a0 = e0 / (e0 + e1);
        let a1 = e1 / (e0 + e1);
        let alpha = tape.value(attn.per_head[0]);
        assert!((alpha.data()[0] - a0).abs() < 1e-12);
        assert!((alpha.data()[1] - a1).abs() < 1e-12);
        assert!((alpha.data()[0] - 0.6698).abs() < 5e-5);
        assert!((alpha.data()[1] - 0.3302).abs() < 5e-5);
        let zv = tape.value(z);
        assert!((zv.data()[0] - a0).abs() < 1e-12);
        assert!((zv.data()[1] - a1).abs() < 1e-12);
    }

    #[test]
    fn zeroed_head_reduces_to_layernorm_of_query() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        *store.value_mut(fdm.w_o) = Tensor::zeros(vec![64, 64]);
        *store.value_mut(fdm.ffn_w2) = Tensor::zeros(vec![256, 64]);
        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, Tensor::randn(vec![16, 64], 1.0, &mut rng));
        let state = block(&mut tape, Modality::State, Tensor::randn(vec![1, 64], 1.0, &mut rng));
        let (token, _) = fdm.predict(&mut tape, &vision, &state).unwrap();

        let expected = crate::numerics::tensor::layernorm(
            store.value(fdm.query),
            store.value(fdm.ln_gain),
            store.value(fdm.ln_bias),
            cfg.layernorm_eps,
        )
        .unwrap();
        for (a, b) in tape.value(token.node).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        // plain-loop oracle of Eqs. (3)-(4) at random init, to 1e-10
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(123);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let vision_t = Tensor::randn(vec![16, 64], 0.8, &mut rng);
        let state_t = Tensor::randn(vec![1, 64], 0.8, &mut rng);

        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, vision_t.clone());
        let state = block(&mut tape, Modality::State, state_t.clone());
        let (token, _) = fdm.predict(&mut tape, &vision, &state).unwrap();
        let got = tape.value(token.node).data().to_vec();

        let want = oracle_forward(&store, &fdm, &cfg, &vision_t, &state_t);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    /// Straight-loop reimplementation used only as a test oracle.
    fn oracle_forward(
        store: &ParamStore,
        fdm: &ForceDistiller,
        cfg: &ModelConfig,
        vision: &Tensor,
        state: &Tensor,
    ) -> Vec<f64> {
        let d = cfg.hidden;
        let dk = cfg.head_dim();
        let p = store.value(fdm.query).data();
        let n_c = 1 + vision.rows() + state.rows();
        let mut ctx = vec![0.0; n_c * d];
        ctx[..d].copy_from_slice(p);
        ctx[d..d + vision.numel()].copy_from_slice(vision.data());
        ctx[d + vision.numel()..].copy_from_slice(state.data());

        let matvec = |m: &Tensor, x: &[f64], out_dim: usize| -> Vec<f64> {
            // x treated as a row vector: out = x @ m
            let mut out = vec![0.0; out_dim];
            for (i, &xv) in x.iter().enumerate() {
                for j in 0..out_dim {
                    out[j] += xv * m.at(i, j);
                }
            }
            out
        };
        let q = matvec(store.value(fdm.w_q), p, d);
        let mut keys = vec![vec![0.0; d]; n_c];
        let mut vals = vec![vec![0.0; d]; n_c];
        for r in 0..n_c {
            keys[r] = matvec(store.value(fdm.w_k), &ctx[r * d..(r + 1) * d], d);
            vals[r] = matvec(store.value(fdm.w_v), &ctx[r * d..(r + 1) * d], d);
        }
        let mut z = vec![0.0; d];
        for h in 0..cfg.heads {
            let cols = h * dk..(h + 1) * dk;
            let mut logits = vec![0.0; n_c];
            for r in 0..n_c {
                logits[r] = cols
                    .clone()
                    .map(|c| q[c] * keys[r][c])
                    .sum::<f64>()
                    / (dk as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for r in 0..n_c {
                let a = exps[r] / sum;
                for c in cols.clone() {
                    z[c] += a * vals[r][c];
                }
            }
        }
        let zo = matvec(store.value(fdm.w_o), &z, d);
        let pre: Vec<f64> = zo.iter().zip(p).map(|(a, b)| a + b).collect();
        let mean = pre.iter().sum::<f64>() / d as f64;
        let var = pre.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + cfg.layernorm_eps).sqrt();
        let gain = store.value(fdm.ln_gain).data();
        let bias = store.value(fdm.ln_bias).data();
        let h: Vec<f64> = pre
            .iter()
            .enumerate()
            .map(|(i, v)| gain[i] * (v - mean) * inv + bias[i])
            .collect();
        let hidden_ffn = cfg.ffn_mult * d;
        let mut a1 = matvec(store.value(fdm.ffn_w1), &h, hidden_ffn);
        for (i, v) in a1.iter_mut().enumerate() {
            *v += store.value(fdm.ffn_b1).data()[i];
            let s = (2.0 / std::f64::consts::PI).sqrt();
            *v = 0.5 * *v * (1.0 + (s * (*v + 0.044715 * *v * *v * *v)).tanh());
        }
        let mut ffn = matvec(store.value(fdm.ffn_w2), &a1, d);
        for (i, v) in ffn.iter_mut().enumerate() {
            *v += store.value(fdm.ffn_b2).data()[i];
        }
        h.iter().zip(&ffn).map(|(a, b)| a + b).collect()
    }

    #[test]
    fn actual_branch_is_affine_and_kind_checked() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(9);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);

        // zero wrench, zero bias -> zero token
        let z = fdm.encode_actual(&mut tape, Some(&[0.0, 0.0, 0.0])).unwrap();
        assert!(tape.value(z.node).data().iter().all(|v| *v == 0.0));

        // affine identity: enc(w1+w2) - enc(w1) - enc(w2) = -bias (zero here)
        let w1 = [1.0, -0.5, 2.0];
        let w2 = [0.25, 0.75, -1.0];
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let e1 = fdm.encode_actual(&mut tape, Some(&w1)).unwrap();
        let e2 = fdm.encode_actual(&mut tape, Some(&w2)).unwrap();
        let es = fdm.encode_actual(&mut tape, Some(&sum)).unwrap();
        for i in 0..cfg.hidden {
            let lhs = tape.value(es.node).data()[i]
                - tape.value(e1.node).data()[i]
                - tape.value(e2.node).data()[i];
            assert!(lhs.abs() < 1e-12);
        }

        // sensor-free call is a mode error
        assert!(matches!(
            fdm.encode_actual(&mut tape, None),
            Err(Error::Mode(_))
        ));

        // decoding a predicted token is a contract error
        let vision = block(&mut tape, Modality::Vision, Tensor::zeros(vec![16, 64]));
        let state = block(&mut tape, Modality::State, Tensor::zeros(vec![1, 64]));
        let (pred, _) = fdm.predict(&mut tape, &vision, &state).unwrap();
        assert!(matches!(
            fdm.decode_force(&mut tape, &pred),
            Err(Error::Contract(_))
        ));
        let dec = fdm.decode_force(&mut tape, &z).unwrap();
        assert_eq!(tape.value(dec).shape(), &[1, 3]);
    }

    #[test]
    fn distill_loss_matches_squared_l2_oracle() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(77);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, Tensor::randn(vec![16, 64], 1.0, &mut rng));
        let state = block(&mut tape, Modality::State, Tensor::randn(vec![1, 64], 1.0, &mut rng));
        let (pred, _) = fdm.predict(&mut tape, &vision, &state).unwrap();
        let actual = fdm.encode_actual(&mut tape, Some(&[0.5, -1.5, 2.0])).unwrap();
        let loss = fdm.distill_loss(&mut tape, &pred, &actual).unwrap();
        let oracle =
            crate::numerics::tensor::squared_l2(tape.value(pred.node), tape.value(actual.node))
                .unwrap();
        assert!((tape.scalar_value(loss) - oracle).abs() < 1e-12);

        // identical tokens -> 0, unit offsets -> 2
        let a = tape.leaf(Tensor::row(&[1.0, 0.0]));
        let b = tape.leaf(Tensor::row(&[0.0, 1.0]));
        let l = tape.squared_l2(a, b).unwrap();
        assert_eq!(tape.scalar_value(l), 2.0);
        let same = tape.squared_l2(a, a).unwrap();
        assert_eq!(tape.scalar_value(same), 0.0);

        // kind check
        assert!(matches!(
            fdm.distill_loss(&mut tape, &pred, &pred),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn query_participates_in_keys_and_values() {
        // removing the query row from K/V changes the output at fixed weights
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(5);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let vision_t = Tensor::randn(vec![4, 64], 0.8, &mut rng);
        let state_t = Tensor::randn(vec![1, 64], 0.8, &mut rng);

        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, vision_t.clone());
        let state = block(&mut tape, Modality::State, state_t.clone());
        let q = tape.param(fdm.query);
        let with_ctx = fdm.build_context(&mut tape, q, &vision, &state).unwrap();
        let (z_with, _) = fdm.single_query_attention(&mut tape, q, &with_ctx).unwrap();

        // context without the query row
        let no_q = tape.concat_rows(&[vision.node, state.node]).unwrap();
        let ctx_without = FdmContext { node: no_q, len: 5 };
        let (z_without, _) = fdm
            .single_query_attention(&mut tape, q, &ctx_without)
            .unwrap();
        let diff: f64 = tape
            .value(z_with)
            .data()
            .iter()
            .zip(tape.value(z_without).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "query row should matter, diff {diff}");
    }

    #[test]
    fn distill_gradients_reach_both_branches() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(21);
        let cfg = ModelConfig::default();
        let fdm = ForceDistiller::init(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let vision = block(&mut tape, Modality::Vision, Tensor::randn(vec![16, 64], 0.5, &mut rng));
        let state = block(&mut tape, Modality::State, Tensor::randn(vec![1, 64], 0.5, &mut rng));
        let (pred, _) = fdm.predict(&mut tape, &vision, &state).unwrap();
        let actual = fdm.encode_actual(&mut tape, Some(&[0.5, -1.5, 2.0])).unwrap();
        let loss = fdm.distill_loss(&mut tape, &pred, &actual).unwrap();
        let mut accum = GradAccum::new(&store);
        tape.backward(loss, &mut accum, 1.0).unwrap();

        let nonzero = |id: ParamId| {
            accum
                .get(id)
                .map(|g| g.data().iter().any(|v| *v != 0.0))
                .unwrap_or(false)
        };
        for id in [fdm.query, fdm.w_q, fdm.w_k, fdm.w_v, fdm.w_o, fdm.ffn_w1, fdm.ffn_w2, fdm.enc_w] {
            assert!(nonzero(id), "distill gradient missing on a branch");
        }
        // reconstruction head is not part of the distillation loss
        assert!(!nonzero(fdm.dec_w));

        // reconstruction gradients stay on the actual branch
        let mut accum2 = GradAccum::new(&store);
        let dec = fdm.decode_force(&mut tape, &actual).unwrap();
        let target = tape.leaf(Tensor::row(&[0.5, -1.5, 2.0]));
        let recon = tape.squared_l2(dec, target).unwrap();
        tape.backward(recon, &mut accum2, 1.0).unwrap();
        let nz2 = |id: ParamId| {
            accum2
                .get(id)
                .map(|g| g.data().iter().any(|v| *v != 0.0))
                .unwrap_or(false)
        };
        assert!(nz2(fdm.enc_w) && nz2(fdm.dec_w));
        assert!(!nz2(fdm.query) && !nz2(fdm.w_q) && !nz2(fdm.ffn_w1));
    }
}
