//! Campaign orchestration: the three-phase protocol and its artifacts.
//!
//! Phase 1 evaluates the model-based CBF-QP filter on the perturbed plant
//! from a shared set of initial conditions. Phase 2 runs the episodic
//! learning loop. Phase 3 re-runs the same initial conditions under the
//! final blended controller. Every rollout, dataset, estimator snapshot,
//! report, and plot lands under the run directory with deterministic names.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::cbf_qp_controller;
use crate::dynamics::{perturb_params, simulate, SegwayParams, State, Trajectory};
use crate::episodic::{
    run_dacbarf, sample_x0, BlendedSafetyFilter, DacbarfSetup, StepFlags,
};
use crate::harness::config::CampaignConfig;
use crate::harness::csv::{
    write_dataset_csv, write_loss_csv, write_report_csv, write_summary_csv,
    write_trajectory_csv, write_x0_csv,
};
use crate::harness::plot::{emit_plot, PlotKind, PlotSeries, PlotSpec};
use crate::{Error, Result};

/// Final-phase rollouts must keep the barrier above this floor for the
/// campaign's safety check to pass.
pub const RECOVERY_MIN_H: f64 = -1e-2;

/// One evaluated rollout.
#[derive(Debug, Clone)]
pub struct EvalRollout {
    pub x0_index: usize,
    pub min_h: f64,
    pub blew_up: bool,
    pub csv: PathBuf,
}

/// Evaluation phase over the shared initial-condition set.
#[derive(Debug, Clone)]
pub struct PhaseEval {
    pub rollouts: Vec<EvalRollout>,
    pub overall_min_h: f64,
}

impl PhaseEval {
    fn from_rollouts(rollouts: Vec<EvalRollout>) -> Self {
        let overall_min_h = rollouts.iter().map(|r| r.min_h).fold(f64::INFINITY, f64::min);
        Self { rollouts, overall_min_h }
    }

    pub fn unsafe_indices(&self) -> Vec<usize> {
        self.rollouts.iter().filter(|r| r.min_h < 0.0).map(|r| r.x0_index).collect()
    }
}

/// Everything a caller needs to judge a finished campaign.
pub struct CampaignOutcome {
    pub x0_set: Vec<State>,
    pub baseline: PhaseEval,
    pub final_eval: PhaseEval,
    pub report: crate::episodic::EpisodeReport,
    /// Phase 1 found at least one initial condition the model-based filter
    /// could not keep safe.
    pub unsafe_baseline_found: bool,
    /// Phase 3 stayed above [`RECOVERY_MIN_H`] everywhere.
    pub safety_pass: bool,
    pub out_dir: PathBuf,
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Roll out a flag-reporting controller on the true plant and log it.
fn eval_rollout(
    true_params: &SegwayParams,
    controller: &BlendedSafetyFilter,
    x0: &State,
    cfg: &CampaignConfig,
) -> Result<(Trajectory, Vec<StepFlags>)> {
    let mut flags = Vec::new();
    let traj = simulate(
        true_params,
        |x| match controller.step(x) {
            Ok((u, f)) => {
                flags.push(f);
                u
            }
            Err(_) => f64::NAN,
        },
        x0,
        cfg.episodes.horizon,
        cfg.simulation.dt_ctrl,
        cfg.simulation.substeps,
    )?;
    Ok((traj, flags))
}

fn run_phase(
    name: &str,
    dir: &Path,
    true_params: &SegwayParams,
    controller: &BlendedSafetyFilter,
    x0_set: &[State],
    cfg: &CampaignConfig,
) -> Result<PhaseEval> {
    ensure_dir(dir)?;
    let bf = controller.barrier;
    let mut rollouts = Vec::with_capacity(x0_set.len());
    for (i, x0) in x0_set.iter().enumerate() {
        let (traj, flags) = eval_rollout(true_params, controller, x0, cfg)?;
        let min_h = traj.states.iter().map(|s| bf.value(s)).fold(f64::INFINITY, f64::min);
        let csv = dir.join(format!("traj_{i:03}.csv"));
        write_trajectory_csv(&csv, &traj, bf, &flags)?;
        log::info!("{name} rollout {i}: min h = {min_h:.5}, blew_up = {}", traj.blew_up);
        rollouts.push(EvalRollout { x0_index: i, min_h, blew_up: traj.blew_up, csv });
    }
    Ok(PhaseEval::from_rollouts(rollouts))
}

fn phase_series(phase: &PhaseEval, label: &str, color: &str) -> Vec<PlotSeries> {
    phase
        .rollouts
        .iter()
        .map(|r| PlotSeries { csv: r.csv.clone(), label: label.to_string(), color: color.into() })
        .collect()
}

fn summary_text(outcome: &CampaignOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>6} {:>14} {:>8}", "phase", "x0", "min_h", "blew_up");
    for (phase, evals) in [("baseline", &outcome.baseline), ("final", &outcome.final_eval)] {
        for r in &evals.rollouts {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>14.6} {:>8}",
                phase, r.x0_index, r.min_h, r.blew_up
            );
        }
    }
    let _ = writeln!(out, "{:<10} {:>6} {:>14.6}", "baseline", "all", outcome.baseline.overall_min_h);
    let _ = writeln!(out, "{:<10} {:>6} {:>14.6}", "final", "all", outcome.final_eval.overall_min_h);
    let _ = writeln!(
        out,
        "unsafe baseline x0 found: {} {:?}",
        outcome.unsafe_baseline_found,
        outcome.baseline.unsafe_indices()
    );
    let _ = writeln!(
        out,
        "safety recovery (min h >= {RECOVERY_MIN_H}): {}",
        if outcome.safety_pass { "PASS" } else { "FAIL" }
    );
    out
}

/// Execute the full campaign described by `cfg`, writing artifacts under
/// `out_override` (or the config's own output directory).
pub fn run_campaign(cfg: &CampaignConfig, out_override: Option<&Path>) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let out_dir = out_override.unwrap_or(&cfg.campaign.out_dir).to_path_buf();
    ensure_dir(&out_dir)?;

    // Provenance echo before anything can fail.
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string()?)
        .map_err(|e| Error::io(out_dir.join("config.toml"), e))?;

    let nominal = cfg.plant;
    let true_params = perturb_params(&nominal, cfg.perturbation.fraction, cfg.perturbation.seed)?;
    let (bf, alpha) = cfg.barrier.build()?;
    let gains = cfg.pd;
    let train = cfg.training.train_config();
    let episode_cfg = cfg.episodes.episode_config(&cfg.simulation)?;
    let setup = DacbarfSetup {
        true_params: &true_params,
        nominal_params: &nominal,
        barrier: &bf,
        alpha: &alpha,
        gains: &gains,
        hidden: &cfg.training.hidden_layers,
        train: &train,
    };

    // Shared evaluation set for phases 1 and 3.
    let dist = cfg.episodes.x0_distribution();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.campaign.eval_seed);
    let x0_set: Vec<State> = (0..cfg.campaign.eval_x0_count)
        .map(|_| sample_x0(&dist, &bf, &mut eval_rng))
        .collect::<Result<_>>()?;
    write_x0_csv(&out_dir.join("x0_set.csv"), &x0_set)?;

    // Phase 1: model-based filter on the true plant.
    let zero_est = crate::learning::ResidualEstimator::zero(&cfg.training.hidden_layers);
    let baseline_filter = BlendedSafetyFilter {
        barrier: &bf,
        alpha: &alpha,
        nominal: &nominal,
        gains: &gains,
        estimator: &zero_est,
        trust: 0.0,
    };
    let baseline =
        run_phase("baseline", &out_dir.join("baseline"), &true_params, &baseline_filter, &x0_set, cfg)?;

    // Phase 2: episodic learning.
    let learn_dir = out_dir.join("learning");
    ensure_dir(&learn_dir)?;
    let outcome = run_dacbarf(&episode_cfg, &setup)?;
    for (j, traj) in outcome.trajectories.iter().enumerate() {
        let flags = vec![StepFlags::default(); traj.inputs.len()];
        write_trajectory_csv(
            &learn_dir.join(format!("episode_{:03}.csv", j + 1)),
            traj,
            &bf,
            &flags,
        )?;
    }
    write_dataset_csv(&learn_dir.join("dataset.csv"), &outcome.dataset)?;
    for (j, est) in outcome.estimator_history.iter().enumerate() {
        est.save(&learn_dir.join(format!("estimator_{:03}.txt", j + 1)))?;
    }
    for stats in &outcome.report.episodes {
        write_loss_csv(
            &learn_dir.join(format!("loss_{:03}.csv", stats.episode)),
            &stats.epoch_loss,
        )?;
    }
    write_report_csv(&learn_dir.join("report.csv"), &outcome.report)?;

    // Phase 3: final blended controller from the same initial conditions.
    let final_filter = outcome.final_filter(&setup);
    let final_eval =
        run_phase("final", &out_dir.join("final"), &true_params, &final_filter, &x0_set, cfg)?;

    // Plots in the style of the study figures: baseline green, final blue,
    // episode traces red.
    let plots = out_dir.join("plots");
    ensure_dir(&plots)?;
    let mut series = phase_series(&baseline, "baseline", "green");
    for (j, _) in outcome.trajectories.iter().enumerate() {
        series.push(PlotSeries {
            csv: learn_dir.join(format!("episode_{:03}.csv", j + 1)),
            label: "episode".into(),
            color: "red".into(),
        });
    }
    series.extend(phase_series(&final_eval, "final", "blue"));
    emit_plot(&PlotSpec {
        kind: PlotKind::PhasePortrait,
        barrier: bf.descriptor(),
        series: series.clone(),
        output: plots.join("phase_portrait.svg"),
    })?;
    emit_plot(&PlotSpec {
        kind: PlotKind::BarrierOverTime,
        barrier: bf.descriptor(),
        series,
        output: plots.join("h_vs_t.svg"),
    })?;

    let unsafe_baseline_found = baseline.rollouts.iter().any(|r| r.min_h < 0.0);
    let safety_pass = final_eval.overall_min_h >= RECOVERY_MIN_H;
    let result = CampaignOutcome {
        x0_set,
        baseline,
        final_eval,
        report: outcome.report,
        unsafe_baseline_found,
        safety_pass,
        out_dir: out_dir.clone(),
    };

    // Summary table: per-rollout rows plus per-phase minima, as CSV and text.
    let mut rows = Vec::new();
    for (phase, evals) in [("baseline", &result.baseline), ("final", &result.final_eval)] {
        for r in &evals.rollouts {
            rows.push((phase.to_string(), r.x0_index, r.min_h, r.blew_up));
        }
    }
    let aggregates = vec![
        ("baseline".to_string(), result.baseline.overall_min_h),
        ("final".to_string(), result.final_eval.overall_min_h),
    ];
    write_summary_csv(&out_dir.join("summary.csv"), &rows, &aggregates)?;
    let text = summary_text(&result);
    std::fs::write(out_dir.join("summary.txt"), &text)
        .map_err(|e| Error::io(out_dir.join("summary.txt"), e))?;
    print!("{text}");

    Ok(result)
}

/// Run a single model-based rollout from a sampled initial condition and log
/// the trajectory; the `simulate` CLI subcommand.
pub fn run_single_rollout(cfg: &CampaignConfig, out_override: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = out_override.unwrap_or(&cfg.campaign.out_dir).to_path_buf();
    ensure_dir(&out_dir)?;

    let nominal = cfg.plant;
    let true_params = perturb_params(&nominal, cfg.perturbation.fraction, cfg.perturbation.seed)?;
    let (bf, alpha) = cfg.barrier.build()?;
    let gains = cfg.pd;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.episodes.seed);
    let x0 = sample_x0(&cfg.episodes.x0_distribution(), &bf, &mut rng)?;

    let mut flags = Vec::new();
    let traj = simulate(
        &true_params,
        |x| match cbf_qp_controller(&bf, &alpha, &nominal, &gains, x) {
            Ok(r) => {
                flags.push(StepFlags { active: r.active, infeasible: r.infeasible_fallback });
                r.u
            }
            Err(_) => f64::NAN,
        },
        &x0,
        cfg.episodes.horizon,
        cfg.simulation.dt_ctrl,
        cfg.simulation.substeps,
    )?;
    let min_h = traj.states.iter().map(|s| bf.value(s)).fold(f64::INFINITY, f64::min);
    let path = out_dir.join("trajectory.csv");
    write_trajectory_csv(&path, &traj, &bf, &flags)?;
    println!("rollout from {x0:?}: min h = {min_h:.6}, blew_up = {}", traj.blew_up);
    Ok(path)
}
