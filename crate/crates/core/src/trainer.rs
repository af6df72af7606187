//! Joint optimization of the full stack (flow matching + λ·distillation +
//! μ·reconstruction), parameter-freezing enforcement, closed-loop evaluation,
//! and the ablation harness.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actionexpert::{corrupt_actions, sample_tau, target_field};
use crate::config::{ModelConfig, TrainConfig, Variant};
use crate::contactsim::dataset::Dataset;
use crate::contactsim::render::render;
use crate::contactsim::{episode_done, evaluate_success, step, NoiseState, SimParams, Task, WorldState};
use crate::embedding::ModalityBundle;
use crate::error::{Error, Result};
use crate::numerics::optim::Adam;
use crate::numerics::param::GradAccum;
use crate::numerics::rng::RngStream;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;
use crate::policy::PolicyModel;

/// Loss components at one logged step. The decomposition
/// `total = flow + λ·distill + μ·recon` holds exactly at every entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub total: f64,
    pub flow: f64,
    pub distill: f64,
    pub recon: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<StepLoss>,
    pub frozen_digest_before: String,
    pub frozen_digest_after: String,
    pub wall_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> &StepLoss {
        self.losses.last().expect("at least one logged step")
    }
}

/// Uniform (episode, start index) pair; chunks past the episode end repeat
/// the last action.
fn sample_pair(dataset: &Dataset, rng: &mut RngStream) -> (usize, usize) {
    let ep = rng.index(dataset.episodes.len());
    let t = rng.index(dataset.episodes[ep].len());
    (ep, t)
}

fn chunk_rows(dataset: &Dataset, ep: usize, start: usize, horizon: usize) -> Tensor {
    let steps = &dataset.episodes[ep].steps;
    let mut out = Tensor::zeros(vec![horizon, 3]);
    for h in 0..horizon {
        let idx = (start + h).min(steps.len() - 1);
        for c in 0..3 {
            out.set(h, c, steps[idx].action[c]);
        }
    }
    out
}

fn observation(dataset: &Dataset, ep: usize, t: usize, variant: Variant) -> ModalityBundle {
    let rec = &dataset.episodes[ep].steps[t];
    ModalityBundle {
        language: dataset.instruction.clone(),
        vision: rec.image.clone(),
        state: rec.state.clone(),
        // training always has the sensed wrench available; sensor-free
        // variants simply never look at it at inference
        force: match variant {
            Variant::NoForce => None,
            _ => Some(rec.sensed.to_vec()),
        },
    }
}

/// Trains a fresh model on the dataset. Metrics, when given, receive one
/// JSON line per logged step.
pub fn train(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<(PolicyModel, TrainReport)> {
    cfg.validate()?;
    model_cfg.validate()?;
    dataset.validate()?;
    let start = Instant::now();
    let mut model = PolicyModel::init(model_cfg, cfg.variant, dataset.norm.clone(), cfg.seed)?;
    let digest_before = model.store.frozen_digest();
    let mut opt = Adam::new(&model.store, cfg.lr, Some(cfg.grad_clip));
    let root_rng = RngStream::new(cfg.seed).derive_str("train");
    let mut losses = Vec::new();

    for step_idx in 0..cfg.steps {
        let step_rng = root_rng.derive(step_idx as u64);
        let mut accum = GradAccum::new(&model.store);
        let scale = 1.0 / cfg.batch as f64;
        let (mut flow_sum, mut distill_sum, mut recon_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);

        for b in 0..cfg.batch {
            let mut s_rng = step_rng.derive(b as u64);
            let (ep, t) = sample_pair(dataset, &mut s_rng);
            let bundle = observation(dataset, ep, t, cfg.variant);
            let chunk = dataset.norm.normalize(&chunk_rows(dataset, ep, t, model_cfg.horizon));
            let tau = sample_tau(&mut s_rng, cfg.tau_alpha, cfg.tau_beta);
            let eps = Tensor::randn(chunk.shape().to_vec(), 1.0, &mut s_rng);
            let a_tau = corrupt_actions(&chunk, &eps, tau)?;
            let u = target_field(&chunk, &eps)?;

            let mut tape = Tape::new(&model.store);
            let pass = model.forward_features(&mut tape, &bundle)?;
            let v = model
                .head
                .predict_velocity(&mut tape, &a_tau, tau, pass.features)?;
            let flow = model.head.fm_loss(&mut tape, v, &u)?;

            let mut total = flow;
            let mut distill_val = 0.0;
            let mut recon_val = 0.0;
            if cfg.variant == Variant::FdmLearnable {
                let sensed = dataset.episodes[ep].steps[t].sensed;
                let actual = model.fdm.encode_actual(&mut tape, Some(&sensed))?;
                let predicted = pass.predicted.expect("learnable variant predicts");
                let distill = model.fdm.distill_loss(&mut tape, &predicted, &actual)?;
                let decoded = model.fdm.decode_force(&mut tape, &actual)?;
                let target = tape.leaf(Tensor::row(&sensed));
                let recon = tape.squared_l2(decoded, target)?;
                distill_val = tape.scalar_value(distill);
                recon_val = tape.scalar_value(recon);
                let scaled_distill = tape.scale(distill, cfg.lambda);
                let scaled_recon = tape.scale(recon, cfg.mu);
                total = tape.add(total, scaled_distill)?;
                total = tape.add(total, scaled_recon)?;
            }
            let total_val = tape.scalar_value(total);
            if !total_val.is_finite() {
                return Err(Error::Numeric {
                    step: step_idx,
                    detail: format!("non-finite loss {total_val} in batch item {b}"),
                });
            }
            flow_sum += tape.scalar_value(flow);
            distill_sum += distill_val;
            recon_sum += recon_val;
            total_sum += total_val;
            tape.backward(total, &mut accum, scale)?;
        }

        model.store.load_grads(&accum);
        let grad_norm = opt.step(&mut model.store);

        if step_idx % cfg.log_every == 0 || step_idx + 1 == cfg.steps {
            let entry = StepLoss {
                step: step_idx,
                total: total_sum * scale,
                flow: flow_sum * scale,
                distill: distill_sum * scale,
                recon: recon_sum * scale,
                grad_norm,
                lr: cfg.lr,
            };
            if let Some(w) = metrics.as_deref_mut() {
                let line =
                    serde_json::to_string(&entry).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w, "{line}")?;
            }
            losses.push(entry);
        }
    }

    let digest_after = model.store.frozen_digest();
    if digest_after != digest_before {
        return Err(Error::Contract(
            "frozen-parameter drift detected during training".into(),
        ));
    }
    Ok((
        model,
        TrainReport {
            losses,
            frozen_digest_before: digest_before,
            frozen_digest_after: digest_after,
            wall_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// How evaluation supplies the force channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceChannel {
    /// Sensor variants get the sensed wrench; sensor-free variants get none.
    Auto,
    /// Structurally withhold force from every observation.
    Withheld,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    /// Half-width of the 95% normal-approximation binomial interval.
    pub ci_half_width: f64,
    pub mean_steps: f64,
    pub per_episode: Vec<bool>,
}

/// Closed-loop evaluation: predict a chunk, execute it, re-predict, score
/// with the task criterion. Deterministic in (checkpoint, task, seed).
pub fn evaluate(
    model: &PolicyModel,
    task: Task,
    episodes: usize,
    seed: u64,
    sim: &SimParams,
    sampler_steps: usize,
    channel: ForceChannel,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Input("need at least one evaluation episode".into()));
    }
    let supply_force = match (channel, model.variant.needs_sensor()) {
        (ForceChannel::Auto, needs) => needs,
        (ForceChannel::Withheld, _) => false,
    };
    if supply_force && !model.variant.needs_sensor() {
        return Err(Error::Mode(
            "force supplied to a sensor-free variant".into(),
        ));
    }
    let root = RngStream::new(seed).derive_str("eval");
    let mut per_episode = Vec::with_capacity(episodes);
    let mut total_steps = 0usize;
    for i in 0..episodes {
        let ep_rng = root.derive(i as u64);
        let mut world = WorldState::init(task, &mut ep_rng.derive_str("world"));
        let mut noise = NoiseState::default();
        let mut noise_rng = ep_rng.derive_str("sensor");
        let mut sampler_rng = ep_rng.derive_str("sampler");
        let mut latest_sensed = {
            let clean = crate::contactsim::contact_wrench(&world, sim).clean;
            let (s, _) = noise.sense(clean, sim, &mut noise_rng);
            s
        };
        while !episode_done(&world, sim) {
            let bundle = ModalityBundle {
                language: task.instruction().to_string(),
                vision: render(&world),
                state: world.state_vector(),
                force: supply_force.then(|| latest_sensed.to_vec()),
            };
            let chunk = model.act(&bundle, sampler_steps, &mut sampler_rng)?;
            for h in 0..chunk.horizon() {
                let action = [chunk.0.at(h, 0), chunk.0.at(h, 1), chunk.0.at(h, 2)];
                let force = step(&mut world, action, sim);
                let (sensed, _) = noise.sense(force.clean, sim, &mut noise_rng);
                latest_sensed = sensed;
                if episode_done(&world, sim) {
                    break;
                }
            }
        }
        total_steps += world.steps;
        per_episode.push(evaluate_success(&world));
    }
    let successes = per_episode.iter().filter(|&&s| s).count();
    let rate = successes as f64 / episodes as f64;
    let ci = 1.96 * (rate * (1.0 - rate) / episodes as f64).sqrt();
    Ok(EvalReport {
        task,
        episodes,
        successes,
        rate,
        ci_half_width: ci,
        mean_steps: total_steps as f64 / episodes as f64,
        per_episode,
    })
}

/// One trained-and-evaluated ablation cell.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub task: Task,
    pub seed: u64,
    pub rate: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
}

impl AblationTable {
    pub fn mean_rate(&self, variant: Variant) -> f64 {
        let rates: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.variant == variant)
            .map(|c| c.rate)
            .collect();
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }

    pub fn mean_rate_for(&self, variant: Variant, task: Task) -> f64 {
        let rates: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.variant == variant && c.task == task)
            .map(|c| c.rate)
            .collect();
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }

    /// Plain-text table mirroring the four-variant comparison, one row per
    /// variant, one column per task, plus the mean.
    pub fn render_text(&self) -> String {
        let variants = [
            Variant::NoForce,
            Variant::NoFdm,
            Variant::FdmForceToken,
            Variant::FdmLearnable,
        ];
        let tasks: Vec<Task> = {
            let mut seen = Vec::new();
            for c in &self.cells {
                if !seen.contains(&c.task) {
                    seen.push(c.task);
                }
            }
            seen
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {}  mean\n",
            "variant",
            tasks
                .iter()
                .map(|t| format!("{:>7}", t.name()))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        for v in variants {
            if !self.cells.iter().any(|c| c.variant == v) {
                continue;
            }
            let cols: Vec<String> = tasks
                .iter()
                .map(|t| format!("{:>6.1}%", 100.0 * self.mean_rate_for(v, *t)))
                .collect();
            out.push_str(&format!(
                "{:<16} {}  {:>5.1}%\n",
                v.name(),
                cols.join(" "),
                100.0 * self.mean_rate(v)
            ));
        }
        out
    }
}

/// Trains every requested variant on every dataset under identical budgets
/// and seeds, then evaluates each cell.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    datasets: &[Dataset],
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    eval_episodes: usize,
    eval_seed: u64,
    mut progress: Option<&mut dyn Write>,
) -> Result<AblationTable> {
    let mut cells = Vec::new();
    for dataset in datasets {
        for &variant in variants {
            for &seed in seeds {
                let cfg = TrainConfig {
                    variant,
                    seed,
                    ..base.clone()
                };
                let (model, report) = train(dataset, model_cfg, &cfg, None)?;
                let eval = evaluate(
                    &model,
                    dataset.task,
                    eval_episodes,
                    eval_seed,
                    &dataset.sim,
                    cfg.sampler_steps,
                    ForceChannel::Auto,
                )?;
                if let Some(w) = progress.as_deref_mut() {
                    writeln!(
                        w,
                        "{} {} seed={} rate={:.3} final_loss={:.4} train_s={:.0}",
                        dataset.task.name(),
                        variant.name(),
                        seed,
                        eval.rate,
                        report.final_loss().total,
                        report.wall_secs,
                    )?;
                }
                cells.push(AblationCell {
                    variant,
                    task: dataset.task,
                    seed,
                    rate: eval.rate,
                    final_loss: report.final_loss().total,
                });
            }
        }
    }
    Ok(AblationTable {
        cells,
        eval_episodes,
        seeds: seeds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg(variant: Variant, steps: usize) -> TrainConfig {
        TrainConfig {
            variant,
            steps,
            batch: 2,
            log_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decomposition_holds_at_every_logged_step() {
        let sim = SimParams::default();
        let dataset = Dataset::generate(Task::Press, 2, 3, &sim).unwrap();
        let cfg = quick_cfg(Variant::FdmLearnable, 4);
        let (_, report) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        assert_eq!(report.losses.len(), 4);
        for l in &report.losses {
            let recomposed = l.flow + cfg.lambda * l.distill + cfg.mu * l.recon;
            assert!(
                (l.total - recomposed).abs() < 1e-10,
                "step {}: {} vs {}",
                l.step,
                l.total,
                recomposed
            );
            assert!(l.distill > 0.0 && l.recon > 0.0);
        }
    }

    #[test]
    fn lambda_zero_still_trains_the_query_through_flow() {
        let sim = SimParams::default();
        let dataset = Dataset::generate(Task::Press, 2, 3, &sim).unwrap();
        let cfg = TrainConfig {
            lambda: 0.0,
            mu: 0.0,
            ..quick_cfg(Variant::FdmLearnable, 2)
        };
        let (model, report) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        // distill still reported (unweighted), but total excludes it
        let l = report.final_loss();
        assert!((l.total - l.flow).abs() < 1e-10);
        // the query keeps getting gradients through the action loss: after a
        // couple of steps it must have moved from initialization
        let fresh =
            PolicyModel::init(&ModelConfig::default(), cfg.variant, dataset.norm.clone(), cfg.seed)
                .unwrap();
        let moved: f64 = model
            .store
            .value(model.fdm.query)
            .data()
            .iter()
            .zip(fresh.store.value(fresh.fdm.query).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(moved > 0.0);
    }

    #[test]
    fn training_is_bit_deterministic_and_freezes_the_stack() {
        let sim = SimParams::default();
        let dataset = Dataset::generate(Task::Insert, 2, 5, &sim).unwrap();
        let cfg = quick_cfg(Variant::FdmLearnable, 3);
        let (m1, r1) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        let (m2, r2) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        for (a, b) in r1.losses.iter().zip(&r2.losses) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
        assert_eq!(m1.store.full_digest(), m2.store.full_digest());
        assert_eq!(r1.frozen_digest_before, r1.frozen_digest_after);
    }

    #[test]
    fn variants_without_fdm_report_zero_distill() {
        let sim = SimParams::default();
        let dataset = Dataset::generate(Task::Press, 2, 3, &sim).unwrap();
        for variant in [Variant::NoForce, Variant::NoFdm, Variant::FdmForceToken] {
            let cfg = quick_cfg(variant, 2);
            let (_, report) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
            let l = report.final_loss();
            assert_eq!(l.distill, 0.0);
            assert_eq!(l.recon, 0.0);
            assert!((l.total - l.flow).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_mode_checked() {
        let sim = SimParams::default();
        let dataset = Dataset::generate(Task::Press, 2, 3, &sim).unwrap();
        let cfg = quick_cfg(Variant::FdmLearnable, 2);
        let (model, _) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        let a = evaluate(&model, Task::Press, 3, 9, &sim, 5, ForceChannel::Auto).unwrap();
        let b = evaluate(&model, Task::Press, 3, 9, &sim, 5, ForceChannel::Auto).unwrap();
        assert_eq!(a.per_episode, b.per_episode);

        // withholding force from a sensor variant surfaces the mode error
        let cfg = quick_cfg(Variant::NoFdm, 2);
        let (model, _) = train(&dataset, &ModelConfig::default(), &cfg, None).unwrap();
        assert!(matches!(
            evaluate(&model, Task::Press, 2, 9, &sim, 5, ForceChannel::Withheld),
            Err(Error::Mode(_))
        ));
    }
}
