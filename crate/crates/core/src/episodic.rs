//! Episodic dataset aggregation.
//!
//! Each episode rolls the current controller out on the true plant, folds
//! the rollout into the aggregate dataset, refits the derivative-correction
//! estimator on everything collected so far, and re-blends the learned
//! filter with the model-based one under a growing trust weight. The
//! model-based CBF-QP filter is the baseline being improved, so it serves
//! as the zero-trust anchor of every blend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierFunction, ClassKFunction};
use crate::controller::{cbf_qp_controller, lcbf_qp_controller, PDGains};
use crate::dynamics::{saturate, simulate, Input, SegwayParams, State, Trajectory};
use crate::learning::{build_dataset, erm_train, Dataset, ResidualEstimator, TrainConfig};
use crate::{Error, Result};

/// Uniform box of initial conditions around a center state, with a rejection
/// margin keeping samples inside the safe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct X0Distribution {
    pub center: [f64; 4],
    pub half_widths: [f64; 4],
    /// Samples are redrawn until `h(x0) >= margin`.
    pub margin: f64,
}

impl X0Distribution {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.half_widths.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidParam {
                    field: "half_widths",
                    reason: format!("entry {i} must be nonnegative, got {w}"),
                });
            }
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam { field: "center", reason: "must be finite".into() });
        }
        if !self.margin.is_finite() {
            return Err(Error::InvalidParam { field: "margin", reason: "must be finite".into() });
        }
        Ok(())
    }
}

const X0_ATTEMPT_CAP: usize = 1000;

/// Draw an initial condition from the box, rejecting until inside the safe
/// set with margin. Errors when the box and the safe set are incompatible.
pub fn sample_x0(
    dist: &X0Distribution,
    bf: &BarrierFunction,
    rng: &mut ChaCha8Rng,
) -> Result<State> {
    dist.validate()?;
    for _ in 0..X0_ATTEMPT_CAP {
        let draw: [f64; 4] = std::array::from_fn(|i| {
            let w = dist.half_widths[i];
            if w == 0.0 {
                dist.center[i]
            } else {
                dist.center[i] + rng.gen_range(-w..=w)
            }
        });
        let x = State::new(draw[0], draw[1], draw[2], draw[3]);
        if bf.value(&x) >= dist.margin {
            return Ok(x);
        }
    }
    Err(Error::X0SamplingExhausted { attempts: X0_ATTEMPT_CAP })
}

/// Trust weights growing linearly to one: `w_j = j / T`.
pub fn linear_trust_schedule(t: usize) -> Result<Vec<f64>> {
    if t < 1 {
        return Err(Error::InvalidParam {
            field: "num_episodes",
            reason: "linear schedule needs at least one episode".into(),
        });
    }
    Ok((1..=t).map(|j| j as f64 / t as f64).collect())
}

/// Configuration of the episodic loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub num_episodes: usize,
    /// One nondecreasing trust weight in [0, 1] per episode.
    pub trust_weights: Vec<f64>,
    /// Episode horizon (s).
    pub horizon: f64,
    pub dt_ctrl: f64,
    pub substeps: usize,
    pub x0: X0Distribution,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.x0.validate()?;
        if self.trust_weights.len() != self.num_episodes {
            return Err(Error::InvalidParam {
                field: "trust_weights",
                reason: format!(
                    "need {} weights, got {}",
                    self.num_episodes,
                    self.trust_weights.len()
                ),
            });
        }
        let mut prev = 0.0;
        for (j, w) in self.trust_weights.iter().enumerate() {
            if !(0.0..=1.0).contains(w) || *w < prev {
                return Err(Error::InvalidParam {
                    field: "trust_weights",
                    reason: format!("weights must be nondecreasing in [0, 1]; offender at index {j}"),
                });
            }
            prev = *w;
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParam { field: "horizon", reason: format!("must be positive, got {}", self.horizon) });
        }
        if !(self.dt_ctrl > 0.0 && self.dt_ctrl.is_finite()) {
            return Err(Error::InvalidParam { field: "dt_ctrl", reason: format!("must be positive, got {}", self.dt_ctrl) });
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParam { field: "substeps", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

/// Everything the loop needs besides the episode schedule.
pub struct DacbarfSetup<'a> {
    /// Parameters the simulated world obeys.
    pub true_params: &'a SegwayParams,
    /// Parameters the controllers believe in.
    pub nominal_params: &'a SegwayParams,
    pub barrier: &'a BarrierFunction,
    pub alpha: &'a ClassKFunction,
    pub gains: &'a PDGains,
    /// Hidden-layer sizes of both regressors.
    pub hidden: &'a [usize],
    pub train: &'a TrainConfig,
}

/// Per-step filter diagnostics, logged alongside the trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepFlags {
    pub active: bool,
    pub infeasible: bool,
}

/// The model-based filter blended with the learned filter under a trust
/// weight. Zero trust with a zero estimator reproduces the plain CBF-QP
/// exactly, so this one shape covers every controller the loop produces.
pub struct BlendedSafetyFilter<'a> {
    pub barrier: &'a BarrierFunction,
    pub alpha: &'a ClassKFunction,
    pub nominal: &'a SegwayParams,
    pub gains: &'a PDGains,
    pub estimator: &'a ResidualEstimator,
    pub trust: f64,
}

impl BlendedSafetyFilter<'_> {
    pub fn step(&self, x: &State) -> Result<(Input, StepFlags)> {
        let base = cbf_qp_controller(self.barrier, self.alpha, self.nominal, self.gains, x)?;
        let learned =
            lcbf_qp_controller(self.barrier, self.alpha, self.nominal, self.gains, self.estimator, x)?;
        let u = saturate((1.0 - self.trust) * base.u + self.trust * learned.u);
        let flags = StepFlags {
            active: base.active || learned.active,
            infeasible: base.infeasible_fallback || learned.infeasible_fallback,
        };
        Ok((u, flags))
    }

    /// Plain input-valued controller view of the filter.
    pub fn as_controller(&self) -> impl FnMut(&State) -> Input + '_ {
        // Internal controller errors surface as a non-finite input, which the
        // simulator turns into a diagnostic abort.
        |x| self.step(x).map(|(u, _)| u).unwrap_or(f64::NAN)
    }
}

/// What one episode looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: u32,
    pub min_h: f64,
    /// Fraction of sampled states with `h < 0`.
    pub frac_unsafe: f64,
    pub records_added: usize,
    pub cumulative_records: usize,
    /// Size of the dataset the estimator for this episode was fitted on.
    pub trained_on_records: usize,
    pub epoch_loss: Vec<f64>,
    pub validation_loss: Option<f64>,
    pub infeasible_steps: usize,
    pub blew_up: bool,
    /// Trust weight applied to the controller after this episode.
    pub trust: f64,
}

/// Per-episode diagnostics of a full loop run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episodes: Vec<EpisodeStats>,
}

/// Artifacts of a completed loop.
pub struct DacbarfOutcome {
    /// Aggregate dataset across all episodes, provenance-tagged.
    pub dataset: Dataset,
    /// Estimator fitted on the full aggregate.
    pub estimator: ResidualEstimator,
    /// Trust weight of the final controller.
    pub final_trust: f64,
    pub report: EpisodeReport,
    /// Rollouts gathered per episode, for logging.
    pub trajectories: Vec<Trajectory>,
    /// Estimator snapshot fitted after each episode.
    pub estimator_history: Vec<ResidualEstimator>,
}

impl DacbarfOutcome {
    /// The final blended controller as a filter over a given setup.
    pub fn final_filter<'a>(&'a self, setup: &'a DacbarfSetup<'a>) -> BlendedSafetyFilter<'a> {
        BlendedSafetyFilter {
            barrier: setup.barrier,
            alpha: setup.alpha,
            nominal: setup.nominal_params,
            gains: setup.gains,
            estimator: &self.estimator,
            trust: self.final_trust,
        }
    }
}

/// Run the episodic loop: sample an initial condition, roll out the current
/// controller on the true plant, aggregate the data, refit the estimator on
/// the aggregate (fresh initialization each episode), and re-blend. With
/// zero episodes the outcome is the model-based controller, an empty
/// dataset, and a zero estimator.
pub fn run_dacbarf(cfg: &EpisodeConfig, setup: &DacbarfSetup) -> Result<DacbarfOutcome> {
    cfg.validate()?;
    setup.true_params.validate()?;
    setup.nominal_params.validate()?;
    setup.train.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dataset = Dataset::new();
    let mut estimator = ResidualEstimator::zero(setup.hidden);
    let mut trust = 0.0;
    let mut report = EpisodeReport::default();
    let mut trajectories = Vec::with_capacity(cfg.num_episodes);
    let mut estimator_history = Vec::with_capacity(cfg.num_episodes);

    for j in 1..=cfg.num_episodes {
        let x0 = sample_x0(&cfg.x0, setup.barrier, &mut rng)?;

        let filter = BlendedSafetyFilter {
            barrier: setup.barrier,
            alpha: setup.alpha,
            nominal: setup.nominal_params,
            gains: setup.gains,
            estimator: &estimator,
            trust,
        };
        let mut infeasible_steps = 0usize;
        let traj = simulate(
            setup.true_params,
            |x| match filter.step(x) {
                Ok((u, flags)) => {
                    if flags.infeasible {
                        infeasible_steps += 1;
                    }
                    u
                }
                Err(_) => f64::NAN,
            },
            &x0,
            cfg.horizon,
            cfg.dt_ctrl,
            cfg.substeps,
        )?;

        let min_h = traj.states.iter().map(|s| setup.barrier.value(s)).fold(f64::INFINITY, f64::min);
        let unsafe_states =
            traj.states.iter().filter(|s| setup.barrier.value(s) < 0.0).count();
        let frac_unsafe = unsafe_states as f64 / traj.states.len() as f64;
        let blew_up = traj.blew_up;

        // Aggregate first, then fit on everything collected so far. A
        // blown-up episode still contributes its partial history; the unsafe
        // excursion is exactly the informative part.
        let episode_data = build_dataset(&traj, setup.barrier)?;
        let records_added = episode_data.len();
        dataset.extend_tagged(episode_data, j as u32);

        let mut train_cfg = *setup.train;
        train_cfg.seed = setup.train.seed.wrapping_add(j as u64);
        let trained = erm_train(&dataset, setup.barrier, setup.nominal_params, &train_cfg, setup.hidden)?;

        estimator = trained.estimator;
        estimator_history.push(estimator.clone());
        trust = cfg.trust_weights[j - 1];

        report.episodes.push(EpisodeStats {
            episode: j as u32,
            min_h,
            frac_unsafe,
            records_added,
            cumulative_records: dataset.len(),
            trained_on_records: dataset.len(),
            epoch_loss: trained.epoch_loss,
            validation_loss: trained.validation_loss,
            infeasible_steps,
            blew_up,
            trust,
        });
        trajectories.push(traj);
    }

    Ok(DacbarfOutcome {
        dataset,
        estimator,
        final_trust: trust,
        report,
        trajectories,
        estimator_history,
    })
}
