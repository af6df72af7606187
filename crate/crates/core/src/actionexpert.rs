//! Action expert: a transformer policy head trained with conditional flow
//! matching over action chunks, plus the forward-Euler sampler used at
//! inference.
//!
//! Training regresses the velocity field u = ε − A along the interpolation
//! A_τ = τ·A + (1−τ)·ε. The interpolation velocity is dA_τ/dτ = A − ε = −u,
//! so the sampler steps A ← A − δ·v.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::embedding::sinusoid_rows;
use crate::error::{Error, Result};
use crate::fusion::TransformerLayer;
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;

/// H_a consecutive low-level actions, one row per control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk(pub Tensor);

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.0.rows()
    }
}

/// Per-dimension normalization statistics, computed once on the training set
/// and frozen thereafter.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit over rows of per-step action vectors; std floors at 1e-6 so
    /// constant dimensions stay finite.
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for d in 0..dim {
                let e = r[d] - mean[d];
                var[d] += e * e / n;
            }
        }
        NormStats {
            mean,
            std: var.iter().map(|v| v.sqrt().max(1e-6)).collect(),
        }
    }

    pub fn normalize(&self, chunk: &Tensor) -> Tensor {
        let mut out = chunk.clone();
        let d = chunk.cols();
        for r in 0..chunk.rows() {
            for c in 0..d {
                out.set(r, c, (chunk.at(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        out
    }

    pub fn denormalize(&self, chunk: &Tensor) -> Tensor {
        let mut out = chunk.clone();
        let d = chunk.cols();
        for r in 0..chunk.rows() {
            for c in 0..d {
                out.set(r, c, chunk.at(r, c) * self.std[c] + self.mean[c]);
            }
        }
        out
    }
}

/// τ ~ Beta(a, b), clipped away from the endpoints.
pub fn sample_tau(rng: &mut RngStream, a: f64, b: f64) -> f64 {
    rng.beta(a, b).clamp(1e-3, 0.999)
}

/// A_τ = τ·A + (1−τ)·ε, elementwise.
pub fn corrupt_actions(actions: &Tensor, epsilon: &Tensor, tau: f64) -> Result<Tensor> {
    if actions.shape() != epsilon.shape() {
        return Err(Error::dim(
            "corrupt_actions",
            format!("{:?} vs {:?}", actions.shape(), epsilon.shape()),
        ));
    }
    let data = actions
        .data()
        .iter()
        .zip(epsilon.data())
        .map(|(a, e)| tau * a + (1.0 - tau) * e)
        .collect();
    Tensor::new(actions.shape().to_vec(), data)
}

/// Regression target u = ε − A, independent of τ.
pub fn target_field(actions: &Tensor, epsilon: &Tensor) -> Result<Tensor> {
    if actions.shape() != epsilon.shape() {
        return Err(Error::dim(
            "target_field",
            format!("{:?} vs {:?}", actions.shape(), epsilon.shape()),
        ));
    }
    let data = epsilon
        .data()
        .iter()
        .zip(actions.data())
        .map(|(e, a)| e - a)
        .collect();
    Tensor::new(actions.shape().to_vec(), data)
}

struct CrossAttention {
    ln_gain: ParamId,
    ln_bias: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
}

impl CrossAttention {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.hidden;
        let std = 1.0 / (d as f64).sqrt();
        let name = |s: &str| format!("{prefix}.{s}");
        Ok(CrossAttention {
            ln_gain: store.add(&name("ln_gain"), Tensor::new(vec![1, d], vec![1.0; d])?, true)?,
            ln_bias: store.add(&name("ln_bias"), Tensor::zeros(vec![1, d]), true)?,
            w_q: store.add(
                &name("w_q"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_q"))),
                true,
            )?,
            w_k: store.add(
                &name("w_k"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_k"))),
                true,
            )?,
            w_v: store.add(
                &name("w_v"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_v"))),
                true,
            )?,
            w_o: store.add(
                &name("w_o"),
                Tensor::randn(vec![d, d], std, &mut rng.derive_str(&name("w_o"))),
                true,
            )?,
        })
    }

    /// Queries from the action tokens, keys and values from the fused
    /// features; pre-LN on the query side, residual output.
    fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        features: NodeId,
        heads: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let d = tape.value(x).cols();
        let head_dim = d / heads;
        let gain = tape.param(self.ln_gain);
        let bias = tape.param(self.ln_bias);
        let ln = tape.layernorm(x, gain, bias, eps)?;
        let w_q = tape.param(self.w_q);
        let w_k = tape.param(self.w_k);
        let w_v = tape.param(self.w_v);
        let q = tape.matmul(ln, w_q)?;
        let k = tape.matmul(features, w_k)?;
        let v = tape.matmul(features, w_v)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut parts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let kht = tape.transpose(kh);
            let logits = tape.matmul(qh, kht)?;
            let scaled = tape.scale(logits, scale);
            let alpha = tape.row_softmax(scaled, None)?;
            parts.push(tape.matmul(alpha, vh)?);
        }
        let z = tape.concat_cols(&parts)?;
        let w_o = tape.param(self.w_o);
        let proj = tape.matmul(z, w_o)?;
        tape.add(x, proj)
    }
}

struct PolicyLayer {
    self_attn: TransformerLayer,
    cross: CrossAttention,
}

/// Transformer head predicting the velocity field over an action chunk,
/// conditioned on fused features via cross-attention.
pub struct PolicyHead {
    embed_w: ParamId,
    embed_b: ParamId,
    tau_w: ParamId,
    tau_b: ParamId,
    layers: Vec<PolicyLayer>,
    out_w: ParamId,
    out_b: ParamId,
    heads: usize,
    eps: f64,
    hidden: usize,
    horizon: usize,
    action_dim: usize,
}

impl PolicyHead {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.hidden;
        let embed_w = store.add(
            "policy.embed_w",
            Tensor::randn(
                vec![cfg.action_dim, d],
                1.0 / (cfg.action_dim as f64).sqrt(),
                &mut rng.derive_str("policy.embed_w"),
            ),
            true,
        )?;
        let embed_b = store.add("policy.embed_b", Tensor::zeros(vec![1, d]), true)?;
        let tau_w = store.add(
            "policy.tau_w",
            Tensor::randn(vec![d, d], 1.0 / (d as f64).sqrt(), &mut rng.derive_str("policy.tau_w")),
            true,
        )?;
        let tau_b = store.add("policy.tau_b", Tensor::zeros(vec![1, d]), true)?;
        let mut layers = Vec::with_capacity(cfg.policy_layers);
        for l in 0..cfg.policy_layers {
            layers.push(PolicyLayer {
                self_attn: TransformerLayer::init(
                    store,
                    &format!("policy.layer{l}.self"),
                    cfg,
                    true,
                    rng,
                )?,
                cross: CrossAttention::init(store, &format!("policy.layer{l}.cross"), cfg, rng)?,
            });
        }
        // zero-initialized output projection: the untrained field is zero
        let out_w = store.add("policy.out_w", Tensor::zeros(vec![d, cfg.action_dim]), true)?;
        let out_b = store.add("policy.out_b", Tensor::zeros(vec![1, cfg.action_dim]), true)?;
        Ok(PolicyHead {
            embed_w,
            embed_b,
            tau_w,
            tau_b,
            layers,
            out_w,
            out_b,
            heads: cfg.heads,
            eps: cfg.layernorm_eps,
            hidden: cfg.hidden,
            horizon: cfg.horizon,
            action_dim: cfg.action_dim,
        })
    }

    fn tau_features(&self, tau: f64) -> Tensor {
        // sinusoidal embedding of the scalar τ, scaled so frequencies spread
        sinusoid_rows(1, self.hidden, 100.0 * tau)
    }

    /// v_θ(A_τ, τ, features): embeds each action row plus a τ embedding, runs
    /// self-attention over the chunk and cross-attention to all fused
    /// feature rows, and projects back to action space.
    pub fn predict_velocity(
        &self,
        tape: &mut Tape,
        a_tau: &Tensor,
        tau: f64,
        features: NodeId,
    ) -> Result<NodeId> {
        if a_tau.rows() != self.horizon || a_tau.cols() != self.action_dim {
            return Err(Error::dim(
                "predict_velocity",
                format!(
                    "chunk {:?} vs [{}, {}]",
                    a_tau.shape(),
                    self.horizon,
                    self.action_dim
                ),
            ));
        }
        let x_in = tape.leaf(a_tau.clone());
        let ew = tape.param(self.embed_w);
        let eb = tape.param(self.embed_b);
        let mut x = tape.affine(x_in, ew, eb)?;
        let tf = tape.leaf(self.tau_features(tau));
        let tw = tape.param(self.tau_w);
        let tb = tape.param(self.tau_b);
        let temb = tape.affine(tf, tw, tb)?; // [1, D]
        x = tape.add_bias(x, temb)?;
        for layer in &self.layers {
            x = layer
                .self_attn
                .masked_self_attention(tape, x, None, self.heads, self.eps)?;
            x = layer.cross.forward(tape, x, features, self.heads, self.eps)?;
            x = layer.self_attn.ffn_block(tape, x, self.eps)?;
        }
        let ow = tape.param(self.out_w);
        let ob = tape.param(self.out_b);
        tape.affine(x, ow, ob)
    }

    /// ‖v − u‖² summed over the chunk.
    pub fn fm_loss(&self, tape: &mut Tape, v_pred: NodeId, u: &Tensor) -> Result<NodeId> {
        let target = tape.leaf(u.clone());
        tape.squared_l2(v_pred, target)
    }

    /// Forward-Euler integration from pure noise: A ← A − δ·v_θ(A, τ_k),
    /// τ_k = k/steps. Returns the de-normalized chunk.
    pub fn sample_actions(
        &self,
        tape: &mut Tape,
        features: NodeId,
        steps: usize,
        rng: &mut RngStream,
        norm: &NormStats,
    ) -> Result<ActionChunk> {
        if steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        let mut a = Tensor::randn(vec![self.horizon, self.action_dim], 1.0, rng);
        let delta = 1.0 / steps as f64;
        for k in 0..steps {
            let tau = k as f64 * delta;
            let v = self.predict_velocity(tape, &a, tau, features)?;
            let v_val = tape.value(v);
            for (av, vv) in a.data_mut().iter_mut().zip(v_val.data()) {
                *av -= delta * vv;
            }
            if !a.is_finite() {
                return Err(Error::Numeric {
                    step: k,
                    detail: "sampler diverged to non-finite actions".into(),
                });
            }
        }
        Ok(ActionChunk(norm.denormalize(&a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_draws_are_clipped() {
        let mut rng = RngStream::new(3);
        for _ in 0..10_000 {
            let t = sample_tau(&mut rng, 1.5, 1.0);
            assert!((1e-3..=0.999).contains(&t));
        }
    }

    #[test]
    fn corruption_limits_and_midpoint() {
        let a = Tensor::row(&[2.0]);
        let e = Tensor::row(&[0.0]);
        let lo = corrupt_actions(&a, &e, 1e-9).unwrap();
        assert!((lo.data()[0] - 0.0).abs() < 1e-8);
        let hi = corrupt_actions(&a, &e, 1.0 - 1e-9).unwrap();
        assert!((hi.data()[0] - 2.0).abs() < 1e-8);
        let mid = corrupt_actions(&a, &e, 0.5).unwrap();
        assert_eq!(mid.data(), &[1.0]);
    }

    #[test]
    fn target_field_cases() {
        let a = Tensor::row(&[1.0, 2.0]);
        let e = Tensor::row(&[0.0, 0.0]);
        assert_eq!(target_field(&a, &e).unwrap().data(), &[-1.0, -2.0]);
        assert_eq!(target_field(&a, &a).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn interpolation_velocity_is_negative_target() {
        // finite difference of A_τ in τ equals A − ε = −u
        let mut rng = RngStream::new(10);
        let a = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        let e = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        let u = target_field(&a, &e).unwrap();
        let h = 1e-6;
        let plus = corrupt_actions(&a, &e, 0.5 + h).unwrap();
        let minus = corrupt_actions(&a, &e, 0.5 - h).unwrap();
        for i in 0..a.numel() {
            let fd = (plus.data()[i] - minus.data()[i]) / (2.0 * h);
            assert!((fd + u.data()[i]).abs() < 1e-6);
        }
    }

    fn head_fixture() -> (ParamStore, PolicyHead, ModelConfig) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(17);
        let cfg = ModelConfig {
            hidden: 16,
            heads: 2,
            horizon: 4,
            policy_layers: 1,
            ..ModelConfig::default()
        };
        let head = PolicyHead::init(&mut store, &cfg, &mut rng).unwrap();
        (store, head, cfg)
    }

    #[test]
    fn velocity_shape_and_zero_init() {
        let (store, head, cfg) = head_fixture();
        let mut rng = RngStream::new(4);
        let mut tape = Tape::new(&store);
        let features = tape.leaf(Tensor::randn(vec![6, 16], 1.0, &mut rng));
        let a = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 1.0, &mut rng);
        let v = head.predict_velocity(&mut tape, &a, 0.3, features).unwrap();
        assert_eq!(tape.value(v).shape(), &[4, 3]);
        // zero-initialized output projection -> zero field
        assert!(tape.value(v).data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_field_sampler_returns_noise() {
        let (store, head, _) = head_fixture();
        let rng = RngStream::new(91);
        let mut tape = Tape::new(&store);
        let features = tape.leaf(Tensor::zeros(vec![6, 16]));
        let norm = NormStats::identity(3);
        let chunk = head
            .sample_actions(&mut tape, features, 10, &mut rng.derive(0), &norm)
            .unwrap();
        let expected = Tensor::randn(vec![4, 3], 1.0, &mut rng.derive(0));
        assert_eq!(chunk.0, expected);
    }

    #[test]
    fn fm_loss_zero_at_optimum() {
        let (store, head, _) = head_fixture();
        let mut tape = Tape::new(&store);
        let features = tape.leaf(Tensor::zeros(vec![2, 16]));
        let a = Tensor::zeros(vec![4, 3]);
        let v = head.predict_velocity(&mut tape, &a, 0.2, features).unwrap();
        // v is exactly zero at init; a zero target gives exactly zero loss
        let u = Tensor::zeros(vec![4, 3]);
        let loss = head.fm_loss(&mut tape, v, &u).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);

        // off-by-one-unit in a single entry costs exactly 1
        let mut u1 = Tensor::zeros(vec![4, 3]);
        u1.set(1, 2, 1.0);
        let loss1 = head.fm_loss(&mut tape, v, &u1).unwrap();
        assert_eq!(tape.scalar_value(loss1), 1.0);
    }

    #[test]
    fn closed_form_field_lands_on_target_for_any_step_count() {
        // u*(A_τ, τ) = (A_τ − A*)/(1−τ) reproduces A* exactly from any start
        let mut rng = RngStream::new(55);
        let target = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        for steps in [1usize, 2, 3, 7, 10, 50] {
            let mut a = Tensor::randn(vec![4, 3], 1.0, &mut rng);
            let delta = 1.0 / steps as f64;
            for k in 0..steps {
                let tau = k as f64 * delta;
                for i in 0..a.numel() {
                    let u = (a.data()[i] - target.data()[i]) / (1.0 - tau);
                    a.data_mut()[i] -= delta * u;
                }
            }
            for i in 0..a.numel() {
                assert!(
                    (a.data()[i] - target.data()[i]).abs() <= 1e-6,
                    "steps {steps}"
                );
            }
        }
    }

    #[test]
    fn constant_field_telescopes() {
        // v ≡ c integrates to ε − c over τ ∈ [0, 1]
        let eps = Tensor::row(&[0.5, -0.25]);
        let c = [2.0, 1.0];
        let steps = 10;
        let delta = 1.0 / steps as f64;
        let mut a = eps.clone();
        for _ in 0..steps {
            for (i, v) in a.data_mut().iter_mut().enumerate() {
                *v -= delta * c[i];
            }
        }
        assert!((a.data()[0] - (0.5 - 2.0)).abs() < 1e-12);
        assert!((a.data()[1] - (-0.25 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn norm_stats_round_trip() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0], vec![2.0, 2.0, 2.0]];
        let norm = NormStats::fit(&rows, 3);
        let chunk = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 2.0, 2.0, 2.0]).unwrap();
        let back = norm.denormalize(&norm.normalize(&chunk));
        for (a, b) in back.data().iter().zip(chunk.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
