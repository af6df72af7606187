use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which force pathway feeds the fused sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No force token at all; the fused sequence is [vision, language, state].
    NoForce,
    /// Sensor wrench through a linear encoder, injected directly.
    NoFdm,
    /// Encoded sensor wrench used as the retrieval query over vision + state.
    FdmForceToken,
    /// Learnable query distilled against the encoded sensor wrench;
    /// sensor-free at inference.
    FdmLearnable,
}

impl Variant {
    /// Variants that read the force sensor at inference time.
    pub fn needs_sensor(self) -> bool {
        matches!(self, Variant::NoFdm | Variant::FdmForceToken)
    }

    pub fn has_force_token(self) -> bool {
        !matches!(self, Variant::NoForce)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoForce => "no_force",
            Variant::NoFdm => "no_fdm",
            Variant::FdmForceToken => "fdm_force_token",
            Variant::FdmLearnable => "fdm_learnable",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_force" => Ok(Variant::NoForce),
            "no_fdm" => Ok(Variant::NoFdm),
            "fdm_force_token" => Ok(Variant::FdmForceToken),
            "fdm_learnable" => Ok(Variant::FdmLearnable),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture sizes shared by every module.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width D common to all token blocks.
    pub hidden: usize,
    pub heads: usize,
    pub image_size: usize,
    pub image_channels: usize,
    pub patch: usize,
    pub vocab: usize,
    /// Proprioceptive state width d_s.
    pub state_dim: usize,
    /// Wrench width d_f.
    pub force_dim: usize,
    /// Low-level action width d_a.
    pub action_dim: usize,
    /// Action chunk horizon H_a.
    pub horizon: usize,
    pub frozen_layers_total: usize,
    pub frozen_layers_used: usize,
    pub policy_layers: usize,
    pub ffn_mult: usize,
    pub layernorm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            heads: 4,
            image_size: 32,
            image_channels: 3,
            patch: 8,
            vocab: 1024,
            state_dim: 5,
            force_dim: 3,
            action_dim: 3,
            horizon: 8,
            frozen_layers_total: 4,
            frozen_layers_used: 2,
            policy_layers: 2,
            ffn_mult: 4,
            layernorm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn vision_tokens(&self) -> usize {
        let per_side = self.image_size / self.patch;
        per_side * per_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.frozen_layers_used > self.frozen_layers_total {
            return Err(Error::Config(format!(
                "frozen_layers_used {} exceeds total {}",
                self.frozen_layers_used, self.frozen_layers_total
            )));
        }
        if self.horizon == 0 || self.action_dim == 0 {
            return Err(Error::Config("horizon and action_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Optimization and objective weights for one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Weight λ on the distillation term.
    pub lambda: f64,
    /// Weight μ on the force-reconstruction term.
    pub mu: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub sampler_steps: usize,
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::FdmLearnable,
            lambda: 1.0,
            mu: 1.0,
            lr: 3e-4,
            batch: 8,
            steps: 1000,
            seed: 7,
            tau_alpha: 1.5,
            tau_beta: 1.0,
            sampler_steps: 10,
            grad_clip: 1.0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.mu < 0.0 {
            return Err(Error::Config("lambda and mu must be non-negative".into()));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::Config("batch and steps must be positive".into()));
        }
        if self.sampler_steps == 0 {
            return Err(Error::Config("sampler_steps must be at least 1".into()));
        }
        if !(self.tau_alpha > 0.0 && self.tau_beta > 0.0) {
            return Err(Error::Config("tau Beta parameters must be positive".into()));
        }
        Ok(())
    }
}
