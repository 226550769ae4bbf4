//! Safe learning for a planar Segway.
//!
//! The crate simulates a two-wheeled inverted pendulum whose true physical
//! parameters differ from the model available to the controller, filters a
//! hand-tuned PD controller through min-norm barrier-constraint QPs, learns
//! the mismatch in the barrier derivative from rollout data, and closes the
//! loop episodically: roll out, aggregate data, retrain, re-blend.
//!
//! Modules follow the pipeline:
//!
//! * [`dynamics`] — the plant, parameter perturbation, RK4, sample-hold rollouts
//! * [`barrier`] — barrier functions, class-K gains, the affine derivative split
//! * [`controller`] — PD, the CBF-QP / LCBF-QP half-space filters, trust blending
//! * [`learning`] — label generation, MLP regressors with hand-written backprop, ERM
//! * [`episodic`] — the dataset-aggregation loop over episodes
//! * [`harness`] — config files, campaign orchestration, CSV logging, SVG plots

pub mod barrier;
pub mod controller;
pub mod dynamics;
pub mod episodic;
pub mod harness;
pub mod learning;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("integration step rejected: {0}")]
    StepRejected(String),

    #[error("controller returned non-finite input at t = {t}")]
    ControllerNonFinite { t: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("initial-condition sampling exhausted {attempts} attempts; box incompatible with the safe set")]
    X0SamplingExhausted { attempts: usize },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("failed to parse config: {0}")]
    ConfigParse(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
