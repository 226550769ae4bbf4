//! Configuration, campaign orchestration, CSV logging, and SVG plots.

pub mod campaign;
pub mod config;
pub mod csv;
pub mod plot;

pub use campaign::{run_campaign, run_single_rollout, CampaignOutcome, PhaseEval, RECOVERY_MIN_H};
pub use config::{load_config, BarrierConfig, BarrierKind, CampaignConfig};
pub use plot::{emit_plot, PlotKind, PlotSeries, PlotSpec};
