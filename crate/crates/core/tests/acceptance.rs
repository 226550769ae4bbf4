//! Acceptance suite: one test per campaign-level criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; the assertions fail the build either way.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segway_cbf::barrier::{grad_h, hdot_nominal_affine, BarrierFunction, ClassKFunction};
use segway_cbf::controller::{
    cbf_qp_controller, lcbf_qp_controller, pd_control, solve_halfspace_qp, FnResidual,
    HalfspaceQP,
};
use segway_cbf::dynamics::{
    perturb_params, residual_oracle, simulate, SegwayParams, State,
};
use segway_cbf::episodic::sample_x0;
use segway_cbf::harness::campaign::{run_campaign, CampaignOutcome, RECOVERY_MIN_H};
use segway_cbf::harness::config::{load_config, CampaignConfig};
use segway_cbf::learning::{build_dataset, differentiate_history, Mlp, ResidualEstimator};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn default_config() -> CampaignConfig {
    load_config(&config_path("simulation.toml")).expect("shipped config must load")
}

struct SharedCampaign {
    outcome: CampaignOutcome,
    elapsed_s: f64,
    _dir: tempfile::TempDir,
}

/// The full default campaign, run once and shared by the criteria that look
/// at its phases.
fn campaign() -> &'static SharedCampaign {
    static CAMPAIGN: OnceLock<SharedCampaign> = OnceLock::new();
    CAMPAIGN.get_or_init(|| {
        let cfg = default_config();
        let dir = tempfile::tempdir().expect("tempdir");
        let start = Instant::now();
        let outcome = run_campaign(&cfg, Some(dir.path())).expect("campaign must complete");
        SharedCampaign { outcome, elapsed_s: start.elapsed().as_secs_f64(), _dir: dir }
    })
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {criterion}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion} failed: {detail}");
}

/// Criterion 1: with zero perturbation the model-based filter keeps the
/// barrier nonnegative (within integration tolerance) from 50 random starts.
#[test]
fn criterion_1_nominal_model_safety() {
    let start = Instant::now();
    let cfg = default_config();
    let (bf, alpha) = cfg.barrier.build().unwrap();
    let p = cfg.plant;
    let gains = cfg.pd;
    let theta_max = cfg.barrier.theta_max;
    let floor = 0.05 * theta_max * theta_max;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dist = cfg.episodes.x0_distribution();
    let mut min_h = f64::INFINITY;
    let mut runs = 0;
    while runs < 50 {
        let x0 = sample_x0(&dist, &bf, &mut rng).unwrap();
        if bf.value(&x0) < floor {
            continue;
        }
        runs += 1;
        let traj = simulate(
            &p,
            |x| cbf_qp_controller(&bf, &alpha, &p, &gains, x).unwrap().u,
            &x0,
            10.0,
            cfg.simulation.dt_ctrl,
            cfg.simulation.substeps,
        )
        .unwrap();
        min_h = min_h.min(traj.states.iter().map(|s| bf.value(s)).fold(f64::INFINITY, f64::min));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "1 nominal-model safety",
        min_h >= -1e-3 && elapsed < 30.0,
        &format!("min h {min_h:.6} over 50 rollouts in {elapsed:.1} s"),
    );
}

/// Criterion 2: the seeded perturbation breaks the model-based filter from
/// at least one initial condition in the campaign's evaluation set.
#[test]
fn criterion_2_unsafe_baseline() {
    let c = campaign();
    let unsafe_x0 = c.outcome.baseline.unsafe_indices();
    report(
        "2 unsafe baseline",
        c.outcome.unsafe_baseline_found && c.outcome.baseline.overall_min_h < 0.0,
        &format!(
            "baseline min h {:.6}, unsafe x0 indices {unsafe_x0:?}",
            c.outcome.baseline.overall_min_h
        ),
    );
}

/// Criterion 3: after the ten-episode learning run with linear trust
/// weights, the final blended controller keeps the same evaluation set
/// above the recovery floor, within the runtime budget.
#[test]
fn criterion_3_safety_recovery() {
    let c = campaign();
    let cfg = default_config();
    assert_eq!(cfg.episodes.count, 10);
    assert_eq!(
        cfg.episodes.trust_weights().unwrap(),
        (1..=10).map(|j| j as f64 / 10.0).collect::<Vec<_>>()
    );
    report(
        "3 safety recovery",
        c.outcome.final_eval.overall_min_h >= RECOVERY_MIN_H && c.elapsed_s < 600.0,
        &format!(
            "final min h {:.6} (floor {RECOVERY_MIN_H}), campaign took {:.0} s",
            c.outcome.final_eval.overall_min_h, c.elapsed_s
        ),
    );
}

/// Criterion 4: closed-form half-space projection against a grid oracle and
/// the KKT conditions.
#[test]
fn criterion_4_qp_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..1000 {
        let mag = rng.gen_range(0.5..5.0);
        let a = if rng.gen_bool(0.5) { mag } else { -mag };
        let qp = HalfspaceQP {
            u_des: rng.gen_range(-100.0..100.0),
            a,
            c: rng.gen_range(-100.0..100.0),
        };
        let r = solve_halfspace_qp(&qp);
        assert!(!r.infeasible_fallback);

        // Grid oracle over [-200, 200] at step 1e-3.
        let mut best = f64::NAN;
        let mut best_dist = f64::INFINITY;
        let n = 400_000usize;
        for i in 0..=n {
            let u = -200.0 + i as f64 * 1e-3;
            if qp.a * u >= qp.c {
                let d = (u - qp.u_des).abs();
                if d < best_dist {
                    best_dist = d;
                    best = u;
                }
            }
        }
        worst_gap = worst_gap.max((r.u - best).abs());

        // KKT: stationarity with nonnegative multiplier, primal feasibility,
        // complementary slackness.
        if r.active {
            let mu = (r.u - qp.u_des) / qp.a;
            assert!(mu >= -1e-12);
            assert!((qp.a * r.u - qp.c).abs() < 1e-9);
        } else {
            assert_eq!(r.u, qp.u_des);
            assert!(qp.a * r.u - qp.c >= -1e-9);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "4 QP oracle equivalence",
        worst_gap <= 2e-3 && elapsed < 10.0,
        &format!("worst closed-form vs grid gap {worst_gap:.2e} in {elapsed:.1} s"),
    );
}

/// Criterion 5: backprop matches central finite differences for both shipped
/// architectures.
#[test]
fn criterion_5_gradient_correctness() {
    let mut worst: f64 = 0.0;
    for sizes in [&[4usize, 200, 1][..], &[4, 50, 50, 1][..]] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let net = Mlp::new(sizes, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let upstream = rng.gen_range(-2.0..2.0f64);
            let grads = net.gradient(&x, &[upstream]);

            // Spot-check a sample of parameters per draw.
            for l in 0..net.layers.len() {
                for _ in 0..4 {
                    let wi = rng.gen_range(0..net.layers[l].w.len());
                    let eps = 1e-6;
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    plus.layers[l].w[wi] += eps;
                    minus.layers[l].w[wi] -= eps;
                    let fd = upstream * (plus.forward(&x)[0] - minus.forward(&x)[0]) / (2.0 * eps);
                    let ana = grads.layers[l].w[wi];
                    let rel = (ana - fd).abs() / ana.abs().max(fd.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
    }
    report("5 gradient correctness", worst < 1e-5, &format!("worst relative error {worst:.2e}"));
}

/// Criterion 6: numerically differentiated labels reproduce the nominal
/// barrier derivative on a nominal-plant rollout, and the differentiator
/// converges at second order on an analytic fixture.
#[test]
fn criterion_6_label_fidelity() {
    let cfg = default_config();
    let (bf, _) = cfg.barrier.build().unwrap();
    let p = cfg.plant;

    // Constant input keeps h(t) smooth across hold boundaries.
    let traj = simulate(&p, |_| 1.5, &State::new(0.0, 0.0, 0.05, 0.1), 0.5, 0.01, 10).unwrap();
    let ds = build_dataset(&traj, &bf).unwrap();
    let mut max_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in &ds.records {
        let hd = hdot_nominal_affine(&bf, &p, &r.state).unwrap();
        max_err = max_err.max((r.hdot - hd.eval(r.input)).abs());
        scale = scale.max(r.hdot.abs());
    }
    let labels_ok = max_err < 5e-3 * scale;

    // O(dt^2): halving dt cuts the sine-derivative error by about four.
    let err_at = |dt: f64| {
        let n = (2.0 / dt) as usize;
        let h: Vec<f64> = (0..n).map(|i| (i as f64 * dt).sin()).collect();
        differentiate_history(&h, dt)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - (i as f64 * dt).cos()).abs())
            .fold(0.0, f64::max)
    };
    let ratio = err_at(1e-2) / err_at(5e-3);
    let order_ok = (3.0..5.0).contains(&ratio);

    report(
        "6 label fidelity",
        labels_ok && order_ok,
        &format!("max label err {max_err:.2e} at scale {scale:.3}; dt-halving ratio {ratio:.2}"),
    );
}

/// Criterion 7: the exact residual projections plugged into the learned-model
/// filter keep the unsafe scenario of criterion 2 safe.
#[test]
fn criterion_7_oracle_estimator_safety() {
    let c = campaign();
    let cfg = default_config();
    let (bf, alpha) = cfg.barrier.build().unwrap();
    let nominal = cfg.plant;
    let tru = perturb_params(&nominal, cfg.perturbation.fraction, cfg.perturbation.seed).unwrap();
    let gains = cfg.pd;

    let oracle = FnResidual {
        act: |x: &State| {
            let r = residual_oracle(&tru, &nominal, x).unwrap();
            grad_h(&bf, x).dot(&r.actuation_gap)
        },
        drift: |x: &State| {
            let r = residual_oracle(&tru, &nominal, x).unwrap();
            grad_h(&bf, x).dot(&r.drift_gap)
        },
    };

    let mut min_h = f64::INFINITY;
    for x0 in &c.outcome.x0_set {
        let traj = simulate(
            &tru,
            |x| lcbf_qp_controller(&bf, &alpha, &nominal, &gains, &oracle, x).unwrap().u,
            x0,
            10.0,
            cfg.simulation.dt_ctrl,
            cfg.simulation.substeps,
        )
        .unwrap();
        min_h = min_h.min(traj.states.iter().map(|s| bf.value(s)).fold(f64::INFINITY, f64::min));
    }
    report(
        "7 oracle-estimator safety",
        min_h >= -1e-3,
        &format!("min h {min_h:.6} with exact residual projections"),
    );
}

/// Criterion 8: the learned-model filter with zero networks reproduces the
/// model-based filter exactly.
#[test]
fn criterion_8_zero_estimator_reduction() {
    let cfg = default_config();
    let (bf, alpha) = cfg.barrier.build().unwrap();
    let p = cfg.plant;
    let gains = cfg.pd;
    let zero = ResidualEstimator::zero(&cfg.training.hidden_layers);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut identical = true;
    for _ in 0..1000 {
        let x = State::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-1.5..1.5),
        );
        let a = cbf_qp_controller(&bf, &alpha, &p, &gains, &x).unwrap();
        let b = lcbf_qp_controller(&bf, &alpha, &p, &gains, &zero, &x).unwrap();
        identical &= a == b;
    }
    report("8 zero-estimator reduction", identical, "1000 random states, exact equality");
}

/// Criterion 9: identical configs and seeds reproduce campaign CSVs byte for
/// byte (checked on a reduced campaign; the protocol is the same).
#[test]
fn criterion_9_determinism() {
    let mut cfg = default_config();
    cfg.episodes.count = 2;
    cfg.episodes.weights = Some(vec![0.5, 1.0]);
    cfg.episodes.horizon = 1.0;
    cfg.training.epochs = 10;
    cfg.campaign.eval_x0_count = 3;

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_campaign(&cfg, Some(dir_a.path())).unwrap();
    run_campaign(&cfg, Some(dir_b.path())).unwrap();

    let mut all_equal = true;
    let mut compared = 0;
    for rel in [
        "x0_set.csv",
        "summary.csv",
        "baseline/traj_000.csv",
        "baseline/traj_001.csv",
        "baseline/traj_002.csv",
        "final/traj_000.csv",
        "final/traj_001.csv",
        "final/traj_002.csv",
        "learning/dataset.csv",
        "learning/episode_001.csv",
        "learning/report.csv",
        "learning/estimator_002.txt",
    ] {
        let a = std::fs::read(dir_a.path().join(rel)).unwrap();
        let b = std::fs::read(dir_b.path().join(rel)).unwrap();
        all_equal &= a == b;
        compared += 1;
    }
    report("9 determinism", all_equal, &format!("{compared} artifacts byte-identical"));
}

/// The pitch-rate campaign completes and reports both evaluation phases.
#[test]
fn pitch_rate_campaign_completes() {
    let cfg = load_config(&config_path("pitch_rate.toml")).unwrap();
    let mut cfg = cfg;
    // Keep the suite fast: the completion contract does not depend on the
    // horizon or the training budget.
    cfg.episodes.horizon = 2.0;
    cfg.training.epochs = 30;
    cfg.campaign.eval_x0_count = 4;
    assert_eq!(cfg.training.hidden_layers, vec![50, 50]);
    assert_eq!(cfg.episodes.trust_weights().unwrap().last().copied(), Some(1.0));

    let dir = tempfile::tempdir().unwrap();
    let outcome = run_campaign(&cfg, Some(dir.path())).unwrap();
    report(
        "pitch-rate campaign",
        outcome.baseline.rollouts.len() == 4 && outcome.final_eval.rollouts.len() == 4,
        &format!(
            "baseline min h {:.5}, final min h {:.5}",
            outcome.baseline.overall_min_h, outcome.final_eval.overall_min_h
        ),
    );
}
