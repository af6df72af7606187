//! Invariant suites behind the `verify` command: per-operation and
//! whole-objective gradient checks, exhaustive mask enumeration, exact
//! one-way-flow trials, the closed-form flow-matching oracle, a softmax
//! battery, the sensor-noise statistics, and bitwise determinism.

use std::time::Instant;

use crate::actionexpert::{corrupt_actions, target_field};
use crate::config::{ModelConfig, Variant};
use crate::contactsim::{NoiseState, SimParams};
use crate::embedding::{Image, ModalityBundle};
use crate::error::Result;
use crate::fusion::{build_directional_mask, concat_fused, DirectionalMask, StreamLayout, TransformerLayer};
use crate::numerics::gradcheck::grad_check;
use crate::numerics::param::{GradAccum, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::{softmax_slice, Tensor};
use crate::policy::PolicyModel;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub max_err: f64,
    pub tol: f64,
    pub detail: String,
    pub secs: f64,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "{:<22} {}  max_err={:.3e} tol={:.1e} ({:.2}s) {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_err,
            self.tol,
            self.secs,
            self.detail
        )
    }
}

fn timed<F: FnOnce() -> Result<(bool, f64, f64, String)>>(
    name: &'static str,
    f: F,
) -> Result<SuiteResult> {
    let start = Instant::now();
    let (passed, max_err, tol, detail) = f()?;
    Ok(SuiteResult {
        name,
        passed,
        max_err,
        tol,
        detail,
        secs: start.elapsed().as_secs_f64(),
    })
}

/// Reduced sizes for whole-model finite differencing: every operation and
/// wiring is identical to the default configuration, only widths shrink.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        hidden: 16,
        heads: 2,
        image_size: 16,
        vocab: 64,
        horizon: 4,
        frozen_layers_total: 2,
        frozen_layers_used: 1,
        policy_layers: 1,
        ffn_mult: 2,
        ..ModelConfig::default()
    }
}

fn synthetic_bundle(cfg: &ModelConfig, rng: &mut RngStream) -> ModalityBundle {
    let mut image = Image::new(cfg.image_channels, cfg.image_size, cfg.image_size);
    for b in image.data.iter_mut() {
        *b = (rng.next_u64() % 256) as u8;
    }
    ModalityBundle {
        language: "wipe the whiteboard".to_string(),
        vision: image,
        state: (0..cfg.state_dim).map(|_| rng.normal() * 0.3).collect(),
        force: Some((0..cfg.force_dim).map(|_| rng.normal()).collect()),
    }
}

/// Isolated gradient checks for the three primitive operations the model
/// leans on; central differences at 64-bit precision are near-exact here.
pub fn suite_numerics_ops() -> Result<SuiteResult> {
    timed("numerics-ops", || {
        let tol = 1e-6;
        let mut worst = 0.0f64;
        let mut rng = RngStream::new(101);

        // matmul through a linear readout
        let mut store = ParamStore::new();
        store.add("a", Tensor::randn(vec![3, 4], 0.8, &mut rng), true)?;
        store.add("b", Tensor::randn(vec![4, 2], 0.8, &mut rng), true)?;
        let readout = Tensor::randn(vec![3, 2], 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let a = tape.param(s.id("a").unwrap());
                let b = tape.param(s.id("b").unwrap());
                let c = tape.matmul(a, b)?;
                let t = tape.leaf(readout.clone());
                let prod = tape.mul(c, t)?;
                let loss = tape.sum_all(prod);
                let mut accum = GradAccum::new(s);
                tape.backward(loss, &mut accum, 1.0)?;
                Ok((tape.scalar_value(loss), accum))
            },
            1e-6,
            tol,
        )?;
        worst = worst.max(r.max_rel_err);

        // softmax
        let mut store = ParamStore::new();
        store.add("x", Tensor::randn(vec![2, 5], 1.5, &mut rng), true)?;
        let readout = Tensor::randn(vec![2, 5], 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let x = tape.param(s.id("x").unwrap());
                let sm = tape.row_softmax(x, None)?;
                let t = tape.leaf(readout.clone());
                let prod = tape.mul(sm, t)?;
                let loss = tape.sum_all(prod);
                let mut accum = GradAccum::new(s);
                tape.backward(loss, &mut accum, 1.0)?;
                Ok((tape.scalar_value(loss), accum))
            },
            1e-6,
            tol,
        )?;
        worst = worst.max(r.max_rel_err);

        // layernorm
        let mut store = ParamStore::new();
        store.add("x", Tensor::randn(vec![2, 6], 1.0, &mut rng), true)?;
        store.add("g", Tensor::randn(vec![1, 6], 0.5, &mut rng), true)?;
        store.add("b", Tensor::randn(vec![1, 6], 0.5, &mut rng), true)?;
        let readout = Tensor::randn(vec![2, 6], 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let x = tape.param(s.id("x").unwrap());
                let g = tape.param(s.id("g").unwrap());
                let b = tape.param(s.id("b").unwrap());
                let ln = tape.layernorm(x, g, b, 1e-5)?;
                let t = tape.leaf(readout.clone());
                let prod = tape.mul(ln, t)?;
                let loss = tape.sum_all(prod);
                let mut accum = GradAccum::new(s);
                tape.backward(loss, &mut accum, 1.0)?;
                Ok((tape.scalar_value(loss), accum))
            },
            1e-6,
            tol,
        )?;
        worst = worst.max(r.max_rel_err);

        Ok((worst <= tol, worst, tol, "matmul, softmax, layernorm".into()))
    })
}

/// One standalone trainable transformer layer under the directional mask.
pub fn suite_fusion_layer_grad() -> Result<SuiteResult> {
    timed("fusion-layer-grad", || {
        let tol = 1e-4;
        let cfg = ModelConfig {
            hidden: 8,
            heads: 2,
            ffn_mult: 2,
            ..ModelConfig::default()
        };
        let mut rng = RngStream::new(7);
        let mut store = ParamStore::new();
        let layer = TransformerLayer::init(&mut store, "probe", &cfg, true, &mut rng)?;
        let layout = StreamLayout::new(2, 1, 1, 1)?;
        let mask = build_directional_mask(&layout);
        let x = Tensor::randn(vec![5, 8], 0.7, &mut rng);
        let readout = Tensor::randn(vec![5, 8], 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let xn = tape.leaf(x.clone());
                let y = layer.forward(&mut tape, xn, Some(&mask.mask), cfg.heads, cfg.layernorm_eps)?;
                let t = tape.leaf(readout.clone());
                let prod = tape.mul(y, t)?;
                let loss = tape.sum_all(prod);
                let mut accum = GradAccum::new(s);
                tape.backward(loss, &mut accum, 1.0)?;
                Ok((tape.scalar_value(loss), accum))
            },
            1e-5,
            tol,
        )?;
        Ok((
            r.passed(),
            r.max_rel_err,
            tol,
            format!("{} scalars", r.scalars_checked),
        ))
    })
}

/// Full objective (flow + λ·distill + μ·recon) through every trainable
/// scalar of the reduced model: embeddings, FDM, policy head, and the
/// frozen-stack backward path all participate.
pub fn suite_full_loss_grad() -> Result<SuiteResult> {
    timed("full-loss-grad", || {
        let tol = 1e-4;
        let cfg = reduced_config();
        let mut rng = RngStream::new(909);
        let model = PolicyModel::init(
            &cfg,
            Variant::FdmLearnable,
            crate::actionexpert::NormStats::identity(cfg.action_dim),
            17,
        )?;
        let bundle = synthetic_bundle(&cfg, &mut rng);
        let chunk = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 0.8, &mut rng);
        let eps = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 1.0, &mut rng);
        let tau = 0.37;
        let a_tau = corrupt_actions(&chunk, &eps, tau)?;
        let u = target_field(&chunk, &eps)?;
        let sensed = bundle.force.clone().unwrap();
        let (lambda, mu) = (1.0, 1.0);

        let mut store = model.store.clone();
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let pass = model.forward_features(&mut tape, &bundle)?;
                let v = model.head.predict_velocity(&mut tape, &a_tau, tau, pass.features)?;
                let flow = model.head.fm_loss(&mut tape, v, &u)?;
                let actual = model.fdm.encode_actual(&mut tape, Some(&sensed))?;
                let predicted = pass.predicted.expect("learnable variant");
                let distill = model.fdm.distill_loss(&mut tape, &predicted, &actual)?;
                let decoded = model.fdm.decode_force(&mut tape, &actual)?;
                let target = tape.leaf(Tensor::row(&sensed));
                let recon = tape.squared_l2(decoded, target)?;
                let sd = tape.scale(distill, lambda);
                let sr = tape.scale(recon, mu);
                let t1 = tape.add(flow, sd)?;
                let total = tape.add(t1, sr)?;
                let mut accum = GradAccum::new(s);
                tape.backward(total, &mut accum, 1.0)?;
                Ok((tape.scalar_value(total), accum))
            },
            1e-5,
            tol,
        )?;
        Ok((
            r.passed(),
            r.max_rel_err,
            tol,
            format!("{} scalars, worst {}", r.scalars_checked, r.worst),
        ))
    })
}

/// FDM forward plus the distillation loss alone (the paper-path gradients).
pub fn suite_fdm_grad() -> Result<SuiteResult> {
    timed("fdm-grad", || {
        let tol = 1e-4;
        let cfg = reduced_config();
        let mut rng = RngStream::new(311);
        let model = PolicyModel::init(
            &cfg,
            Variant::FdmLearnable,
            crate::actionexpert::NormStats::identity(cfg.action_dim),
            23,
        )?;
        let bundle = synthetic_bundle(&cfg, &mut rng);
        let sensed = bundle.force.clone().unwrap();
        let mut store = model.store.clone();
        let r = grad_check(
            &mut store,
            |s| {
                let mut tape = Tape::new(s);
                let f_v = model.vision.encode(&mut tape, &bundle.vision)?;
                let f_s = model.state_enc.encode(&mut tape, &bundle.state)?;
                let (predicted, _) = model.fdm.predict(&mut tape, &f_v, &f_s)?;
                let actual = model.fdm.encode_actual(&mut tape, Some(&sensed))?;
                let loss = model.fdm.distill_loss(&mut tape, &predicted, &actual)?;
                let mut accum = GradAccum::new(s);
                tape.backward(loss, &mut accum, 1.0)?;
                Ok((tape.scalar_value(loss), accum))
            },
            1e-5,
            tol,
        )?;
        Ok((
            r.passed(),
            r.max_rel_err,
            tol,
            format!("{} scalars", r.scalars_checked),
        ))
    })
}

/// Exhaustive equality of the mask builder against a direct case evaluator
/// for every layout with at most `max_total` tokens.
pub fn suite_mask_enumeration(max_total: usize) -> Result<SuiteResult> {
    timed("mask-enumeration", || {
        let mut checked = 0usize;
        let mut mismatches = 0usize;
        for n_v in 0..=max_total {
            for n_l in 0..=max_total {
                for n_s in 0..=1usize {
                    for n_f in 0..=1usize {
                        let total = n_v + n_l + n_s + n_f;
                        if total == 0 || total > max_total {
                            continue;
                        }
                        let layout = StreamLayout::new(n_v, n_l, n_s, n_f)?;
                        let mask = build_directional_mask(&layout);
                        let n_p = n_v + n_l;
                        checked += 1;
                        for i in 0..total {
                            for j in 0..total {
                                let want = if i < n_p && j < n_p {
                                    true
                                } else if i >= n_p && j < n_p {
                                    true
                                } else {
                                    i >= n_p && j >= n_p && i >= j
                                };
                                if mask.mask.allowed(i, j) != want {
                                    mismatches += 1;
                                }
                            }
                        }
                        // no empty rows
                        for i in 0..total {
                            if !(0..total).any(|j| mask.mask.allowed(i, j)) {
                                mismatches += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok((
            mismatches == 0,
            mismatches as f64,
            0.0,
            format!("{checked} layouts, {mismatches} mismatches"),
        ))
    })
}

/// Random-parameterization one-way-flow trials. Returns the worst absolute
/// deviation; the pass criterion is exact equality. `sabotage` flips one
/// mask bit to prove the suite notices.
pub fn one_way_flow_trials(trials: usize, sabotage: bool) -> Result<(usize, f64)> {
    use crate::embedding::{Modality, TokenBlock};
    use crate::fusion::FrozenStack;

    let mut failures = 0usize;
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = RngStream::new(5000 + t as u64);
        let n_v = 1 + rng.index(4);
        let n_l = 1 + rng.index(3);
        let cfg = ModelConfig {
            hidden: 16,
            heads: 2,
            frozen_layers_total: 2,
            frozen_layers_used: 2,
            ffn_mult: 2,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let stack = FrozenStack::init(&mut store, &cfg, &mut rng)?;
        let v_t = Tensor::randn(vec![n_v, 16], 0.8, &mut rng);
        let l_t = Tensor::randn(vec![n_l, 16], 0.8, &mut rng);
        let s_t = Tensor::randn(vec![1, 16], 0.8, &mut rng);
        let f_a = Tensor::randn(vec![1, 16], 0.8, &mut rng);
        let f_b = Tensor::randn(vec![1, 16], 0.8, &mut rng);

        let layout = StreamLayout::new(n_v, n_l, 1, 1)?;
        let mask = if sabotage {
            let mut m = build_directional_mask(&layout);
            let bits = &mut std::sync::Arc::make_mut(&mut m.mask).bits;
            // let the first perceptual row peek at the force column
            let n = layout.n_total();
            bits[n - 1] = true;
            m
        } else {
            build_directional_mask(&layout)
        };

        let run = |force: &Tensor, mask: &DirectionalMask| -> Result<(Vec<u64>, Vec<u64>)> {
            let mut tape = Tape::new(&store);
            let v = TokenBlock { node: tape.leaf(v_t.clone()), len: n_v, modality: Modality::Vision };
            let l = TokenBlock { node: tape.leaf(l_t.clone()), len: n_l, modality: Modality::Language };
            let s = TokenBlock { node: tape.leaf(s_t.clone()), len: 1, modality: Modality::State };
            let f = crate::fdm::ForceToken {
                node: tape.leaf(force.clone()),
                kind: crate::fdm::TokenKind::Predicted,
            };
            let fused = concat_fused(&mut tape, &v, &l, &s, Some(&f))?;
            let mut x = fused.node;
            for layer in stack.layers.iter().take(stack.k_used) {
                x = layer.forward(&mut tape, x, Some(&mask.mask), 2, cfg.layernorm_eps)?;
            }
            let out = tape.value(x);
            let percept: Vec<u64> = out.data()[..(n_v + n_l) * 16]
                .iter()
                .map(|v| v.to_bits())
                .collect();
            let state_row: Vec<u64> = out.row_slice(n_v + n_l).iter().map(|v| v.to_bits()).collect();
            Ok((percept, state_row))
        };

        // perceptual-only reference: the same layers over [vision, language]
        let reference = {
            let mut tape = Tape::new(&store);
            let v = TokenBlock { node: tape.leaf(v_t.clone()), len: n_v, modality: Modality::Vision };
            let l = TokenBlock { node: tape.leaf(l_t.clone()), len: n_l, modality: Modality::Language };
            let s = TokenBlock { node: tape.leaf(Tensor::zeros(vec![1, 16])), len: 1, modality: Modality::State };
            let _ = s;
            let vl = tape.concat_rows(&[v.node, l.node])?;
            let pl_layout = StreamLayout::new(n_v, n_l, 0, 0)?;
            let pl_mask = build_directional_mask(&pl_layout);
            let mut x = vl;
            for layer in stack.layers.iter().take(stack.k_used) {
                x = layer.forward(&mut tape, x, Some(&pl_mask.mask), 2, cfg.layernorm_eps)?;
            }
            tape.value(x).data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };

        let (pa, sa) = run(&f_a, &mask)?;
        let (pb, sb) = run(&f_b, &mask)?;
        let exact = pa == pb && sa == sb && pa == reference;
        if !exact {
            failures += 1;
            for (x, y) in pa.iter().zip(&pb) {
                worst = worst.max((f64::from_bits(*x) - f64::from_bits(*y)).abs());
            }
            for (x, y) in pa.iter().zip(&reference) {
                worst = worst.max((f64::from_bits(*x) - f64::from_bits(*y)).abs());
            }
            for (x, y) in sa.iter().zip(&sb) {
                worst = worst.max((f64::from_bits(*x) - f64::from_bits(*y)).abs());
            }
        }
    }
    Ok((failures, worst))
}

pub fn suite_one_way_flow(trials: usize) -> Result<SuiteResult> {
    timed("one-way-flow", move || {
        let (failures, worst) = one_way_flow_trials(trials, false)?;
        Ok((
            failures == 0,
            worst,
            0.0,
            format!("{trials} random parameterizations, {failures} failures"),
        ))
    })
}

/// Closed-form conditional field: one Euler pass must land exactly on the
/// training chunk for any step count.
pub fn suite_flow_oracle() -> Result<SuiteResult> {
    timed("flow-oracle", || {
        let tol = 1e-6;
        let mut worst = 0.0f64;
        let mut rng = RngStream::new(777);
        for steps in 1..=20usize {
            let target = Tensor::randn(vec![8, 3], 1.0, &mut rng);
            let mut a = Tensor::randn(vec![8, 3], 1.0, &mut rng);
            let delta = 1.0 / steps as f64;
            for k in 0..steps {
                let tau = k as f64 * delta;
                for i in 0..a.numel() {
                    let u = (a.data()[i] - target.data()[i]) / (1.0 - tau);
                    a.data_mut()[i] -= delta * u;
                }
            }
            for i in 0..a.numel() {
                worst = worst.max((a.data()[i] - target.data()[i]).abs());
            }
        }
        Ok((worst <= tol, worst, tol, "steps 1..=20".into()))
    })
}

/// Softmax sums to one within 1e-12 across input magnitudes up to 1e4.
pub fn suite_softmax_battery() -> Result<SuiteResult> {
    timed("softmax-battery", || {
        let tol = 1e-12;
        let mut worst = 0.0f64;
        let mut rng = RngStream::new(404);
        for scale in [1e-4, 1.0, 1e2, 1e4] {
            for _ in 0..200 {
                let n = 1 + rng.index(12);
                let x: Vec<f64> = (0..n).map(|_| rng.normal() * scale).collect();
                let s = softmax_slice(&x)?;
                let sum: f64 = s.iter().sum();
                worst = worst.max((sum - 1.0).abs());
                if s.iter().any(|v| *v < 0.0) {
                    worst = worst.max(1.0);
                }
            }
        }
        Ok((worst <= tol, worst, tol, "|x| up to 1e4".into()))
    })
}

/// Sensor-noise statistics: white std within ±5% of the configured value and
/// random-walk bias variance linear in t (R² of the linear fit).
pub fn suite_noise_model() -> Result<SuiteResult> {
    timed("noise-model", || {
        let params = SimParams::default();

        // white component
        let mut rng = RngStream::new(606);
        let mut noise = NoiseState::default();
        let n = 10_000usize;
        let mut sq = 0.0;
        for _ in 0..n {
            let (sensed, bias) = noise.sense([0.0; 3], &params, &mut rng);
            for i in 0..3 {
                let w = sensed[i] - bias[i];
                sq += w * w;
            }
        }
        let white_std = (sq / (3 * n) as f64).sqrt();
        let white_err = (white_std - params.noise_hf).abs() / params.noise_hf;

        // drift variance growth over 100 seeds
        let seeds = 100usize;
        let horizon = 200usize;
        let mut biases = vec![vec![0.0f64; seeds]; horizon];
        for s in 0..seeds {
            let mut rng = RngStream::new(9000 + s as u64);
            let mut noise = NoiseState::default();
            for t in 0..horizon {
                let (_, bias) = noise.sense([0.0; 3], &params, &mut rng);
                biases[t][s] = bias[0];
            }
        }
        let var: Vec<f64> = biases
            .iter()
            .map(|row| row.iter().map(|b| b * b).sum::<f64>() / seeds as f64)
            .collect();
        // least squares var ~ a*t + b and its R^2
        let ts: Vec<f64> = (1..=horizon).map(|t| t as f64).collect();
        let mean_t = ts.iter().sum::<f64>() / horizon as f64;
        let mean_v = var.iter().sum::<f64>() / horizon as f64;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for i in 0..horizon {
            sxy += (ts[i] - mean_t) * (var[i] - mean_v);
            sxx += (ts[i] - mean_t) * (ts[i] - mean_t);
        }
        let slope = sxy / sxx;
        let intercept = mean_v - slope * mean_t;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for i in 0..horizon {
            let pred = slope * ts[i] + intercept;
            ss_res += (var[i] - pred) * (var[i] - pred);
            ss_tot += (var[i] - mean_v) * (var[i] - mean_v);
        }
        let r2 = 1.0 - ss_res / ss_tot;

        let passed = white_err <= 0.05 && r2 >= 0.95;
        Ok((
            passed,
            white_err.max(1.0 - r2),
            0.05,
            format!(
                "white std {white_std:.4} (cfg {}), drift-variance fit R²={r2:.4}, slope {slope:.2e} (g_lf² = {:.2e})",
                params.noise_hf,
                params.noise_lf * params.noise_lf
            ),
        ))
    })
}

/// Two identical forward/backward passes must agree bit for bit.
pub fn suite_determinism() -> Result<SuiteResult> {
    timed("determinism", || {
        let cfg = reduced_config();
        let mut rng = RngStream::new(3141);
        let model = PolicyModel::init(
            &cfg,
            Variant::FdmLearnable,
            crate::actionexpert::NormStats::identity(cfg.action_dim),
            59,
        )?;
        let bundle = synthetic_bundle(&cfg, &mut rng);
        let chunk = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 0.8, &mut rng);
        let eps = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 1.0, &mut rng);
        let a_tau = corrupt_actions(&chunk, &eps, 0.4)?;
        let u = target_field(&chunk, &eps)?;
        let run = || -> Result<(u64, GradAccum)> {
            let mut tape = Tape::new(&model.store);
            let pass = model.forward_features(&mut tape, &bundle)?;
            let v = model.head.predict_velocity(&mut tape, &a_tau, 0.4, pass.features)?;
            let loss = model.head.fm_loss(&mut tape, v, &u)?;
            let mut accum = GradAccum::new(&model.store);
            tape.backward(loss, &mut accum, 1.0)?;
            Ok((tape.scalar_value(loss).to_bits(), accum))
        };
        let (l1, g1) = run()?;
        let (l2, g2) = run()?;
        let mut same = l1 == l2;
        for (id, _) in model.store.iter() {
            match (g1.get(id), g2.get(id)) {
                (Some(a), Some(b)) => same &= a == b,
                (None, None) => {}
                _ => same = false,
            }
        }
        Ok((
            same,
            if same { 0.0 } else { 1.0 },
            0.0,
            "bitwise loss and gradient equality".into(),
        ))
    })
}

/// The whole battery, in the order the verify command reports it.
pub fn run_all() -> Result<Vec<SuiteResult>> {
    Ok(vec![
        suite_numerics_ops()?,
        suite_fdm_grad()?,
        suite_fusion_layer_grad()?,
        suite_full_loss_grad()?,
        suite_mask_enumeration(8)?,
        suite_one_way_flow(100)?,
        suite_flow_oracle()?,
        suite_softmax_battery()?,
        suite_noise_model()?,
        suite_determinism()?,
    ])
}
