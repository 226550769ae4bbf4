//! Campaign configuration: one TOML file fully determines a campaign.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierDescriptor, BarrierFunction, ClassKFunction};
use crate::controller::PDGains;
use crate::dynamics::SegwayParams;
use crate::episodic::{linear_trust_schedule, EpisodeConfig, X0Distribution};
use crate::learning::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Relative bound on the multiplicative parameter error.
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    PitchEllipse,
    PitchRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub kind: BarrierKind,
    /// Pitch bound (rad); used by the ellipse barrier.
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    /// Equilibrium pitch (rad); used by the ellipse barrier.
    #[serde(default)]
    pub theta_e: f64,
    /// Rate weight (s^2).
    pub c: f64,
    /// Linear class-K gain.
    pub gamma: f64,
}

fn default_theta_max() -> f64 {
    0.3
}

impl BarrierConfig {
    pub fn descriptor(&self) -> BarrierDescriptor {
        match self.kind {
            BarrierKind::PitchEllipse => BarrierDescriptor::PitchEllipse {
                theta_max: self.theta_max,
                theta_e: self.theta_e,
                c: self.c,
            },
            BarrierKind::PitchRate => BarrierDescriptor::PitchRate { c: self.c },
        }
    }

    pub fn build(&self) -> Result<(BarrierFunction, ClassKFunction)> {
        Ok((BarrierFunction::new(self.descriptor())?, ClassKFunction::linear(self.gamma)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodesConfig {
    pub count: usize,
    /// Explicit trust weights; omitted means a linear ramp to one.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Episode horizon (s).
    pub horizon: f64,
    pub x0_center: [f64; 4],
    pub x0_half_widths: [f64; 4],
    pub x0_margin: f64,
    pub seed: u64,
}

impl EpisodesConfig {
    pub fn trust_weights(&self) -> Result<Vec<f64>> {
        match &self.weights {
            Some(w) => Ok(w.clone()),
            None if self.count == 0 => Ok(Vec::new()),
            None => linear_trust_schedule(self.count),
        }
    }

    pub fn x0_distribution(&self) -> X0Distribution {
        X0Distribution {
            center: self.x0_center,
            half_widths: self.x0_half_widths,
            margin: self.x0_margin,
        }
    }

    pub fn episode_config(&self, sim: &SimulationConfig) -> Result<EpisodeConfig> {
        let cfg = EpisodeConfig {
            num_episodes: self.count,
            trust_weights: self.trust_weights()?,
            horizon: self.horizon,
            dt_ctrl: sim.dt_ctrl,
            substeps: sim.substeps,
            x0: self.x0_distribution(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Controller sample-hold interval (s).
    pub dt_ctrl: f64,
    /// RK4 substeps per control interval.
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Hidden-layer widths of both regressors.
    pub hidden_layers: Vec<usize>,
}

impl TrainingConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            minibatch: self.minibatch,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Size of the shared initial-condition set used by the baseline and
    /// final evaluation phases.
    pub eval_x0_count: usize,
    pub eval_seed: u64,
    pub out_dir: PathBuf,
}

/// Full campaign description; parses from a single TOML file with unknown
/// keys rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub plant: SegwayParams,
    pub perturbation: PerturbationConfig,
    pub barrier: BarrierConfig,
    pub pd: PDGains,
    pub episodes: EpisodesConfig,
    pub simulation: SimulationConfig,
    pub training: TrainingConfig,
    pub campaign: EvaluationConfig,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if !(0.0..=1.0).contains(&self.perturbation.fraction) {
            return Err(Error::Config {
                field: "perturbation.fraction".into(),
                reason: format!("must lie in [0, 1], got {}", self.perturbation.fraction),
            });
        }
        self.barrier.build()?;
        self.pd.validate()?;
        if !(self.simulation.dt_ctrl > 0.0 && self.simulation.dt_ctrl.is_finite()) {
            return Err(Error::Config {
                field: "simulation.dt_ctrl".into(),
                reason: format!("must be positive, got {}", self.simulation.dt_ctrl),
            });
        }
        if self.simulation.substeps == 0 {
            return Err(Error::Config {
                field: "simulation.substeps".into(),
                reason: "must be at least 1".into(),
            });
        }
        self.episodes.episode_config(&self.simulation)?;
        self.training.train_config().validate()?;
        if self.training.hidden_layers.is_empty()
            || self.training.hidden_layers.iter().any(|&w| w == 0)
        {
            return Err(Error::Config {
                field: "training.hidden_layers".into(),
                reason: "need at least one nonzero hidden width".into(),
            });
        }
        if self.campaign.eval_x0_count == 0 {
            return Err(Error::Config {
                field: "campaign.eval_x0_count".into(),
                reason: "need at least one evaluation rollout".into(),
            });
        }
        Ok(())
    }

    /// Re-seed every stochastic component deterministically from one value.
    pub fn override_seeds(&mut self, seed: u64) {
        self.perturbation.seed = seed;
        self.episodes.seed = seed.wrapping_add(1);
        self.training.seed = seed.wrapping_add(2);
        self.campaign.eval_seed = seed.wrapping_add(3);
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }
}

/// Parse and validate a campaign config file.
pub fn load_config(path: &Path) -> Result<CampaignConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: CampaignConfig = toml::from_str(&text).map_err(|e| {
        Error::ConfigParse(format!("{}: {e}", path.display()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}
