//! Temporary tuning probe: offline estimator-quality experiments on fixed
//! baseline-controller rollout data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segway_cbf::barrier::{grad_h, BarrierDescriptor, BarrierFunction, ClassKFunction};
use segway_cbf::controller::{cbf_qp_controller, lcbf_qp_controller, FnResidual, PDGains};
use segway_cbf::dynamics::{perturb_params, residual_oracle, simulate, SegwayParams, State};
use segway_cbf::episodic::{sample_x0, X0Distribution};
use segway_cbf::learning::{build_dataset, erm_train, Dataset, TrainConfig};

fn main() {
    let nominal = SegwayParams::default_nominal();
    let tru = perturb_params(&nominal, 0.15, 0).unwrap();
    let bf = BarrierFunction::new(BarrierDescriptor::PitchEllipse {
        theta_max: 0.3,
        theta_e: 0.0,
        c: 0.1,
    })
    .unwrap();
    let alpha = ClassKFunction::linear(3.0).unwrap();
    let gains =
        PDGains { kp_theta: -150.0, kd_theta: -25.0, kp_vel: 0.2, v_target: 1.0, theta_target: 0.0 };
    let dist = X0Distribution { center: [0.0; 4], half_widths: [0.0, 0.5, 0.2, 0.5], margin: 0.005 };

    // Fixed training data: ten baseline-controller episodes.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = Dataset::new();
    for j in 1..=10u32 {
        let x0 = sample_x0(&dist, &bf, &mut rng).unwrap();
        let traj = simulate(
            &tru,
            |x| cbf_qp_controller(&bf, &alpha, &nominal, &gains, x).unwrap().u,
            &x0,
            10.0,
            0.01,
            10,
        )
        .unwrap();
        let ds = build_dataset(&traj, &bf).unwrap();
        data.extend_tagged(ds, j);
    }
    println!("dataset: {} records", data.len());

    // Error metrics over a state grid weighted toward the barrier zone.
    let grid: Vec<State> = {
        let mut g = Vec::new();
        for theta in [-0.25f64, -0.15, -0.05, 0.05, 0.15, 0.25] {
            for thdot in [-0.8f64, -0.5, -0.2, 0.2, 0.5, 0.8] {
                for vel in [0.3f64, 0.8] {
                    g.push(State::new(0.0, vel, theta, thdot));
                }
            }
        }
        g
    };

    for (lr, epochs, batch) in [
        (1e-2, 200, 32),
        (1e-2, 400, 32),
        (3e-3, 400, 32),
        (3e-3, 400, 128),
        (1e-3, 600, 32),
    ] {
        let cfg = TrainConfig {
            learning_rate: lr,
            epochs,
            minibatch: batch,
            seed: 11,
            validation_fraction: 0.1,
        };
        let trained = erm_train(&data, &bf, &nominal, &cfg, &[200]).unwrap();
        let est = &trained.estimator;

        let mut a_err: f64 = 0.0;
        let mut b_err: f64 = 0.0;
        let mut sign_flips = 0usize;
        let mut sign_count = 0usize;
        for x in &grid {
            let r = residual_oracle(&tru, &nominal, x).unwrap();
            let g = grad_h(&bf, x);
            let a_true = g.dot(&r.actuation_gap);
            let b_true = g.dot(&r.drift_gap);
            let hd = segway_cbf::barrier::hdot_nominal_affine(&bf, &nominal, x).unwrap();
            a_err = a_err.max((est.eval_act(x) - a_true).abs());
            b_err = b_err.max((est.eval_drift(x) - b_true).abs());
            if hd.act.abs() > 5e-3 {
                sign_count += 1;
                if (hd.act + est.eval_act(x)).signum() != (hd.act + a_true).signum() {
                    sign_flips += 1;
                }
            }
        }

        // Closed-loop check with this estimator at full trust.
        let mut eval_rng = ChaCha8Rng::seed_from_u64(99);
        let x0s: Vec<State> =
            (0..12).map(|_| sample_x0(&dist, &bf, &mut eval_rng).unwrap()).collect();
        let mut lcbf_min = f64::INFINITY;
        for x0 in &x0s {
            let traj = simulate(
                &tru,
                |x| lcbf_qp_controller(&bf, &alpha, &nominal, &gains, est, x).unwrap().u,
                x0,
                10.0,
                0.01,
                10,
            )
            .unwrap();
            lcbf_min =
                lcbf_min.min(traj.states.iter().map(|s| bf.value(s)).fold(f64::INFINITY, f64::min));
        }

        println!(
            "lr {lr:<6} epochs {epochs:<4} batch {batch:<4}: final MAE {:.4} val {:.4} | max a err {a_err:.4} max b err {b_err:.4} sign flips {sign_flips}/{sign_count} | lcbf min h {lcbf_min:.5}",
            trained.epoch_loss.last().unwrap(),
            trained.validation_loss.unwrap_or(f64::NAN),
        );
    }
    let _ = FnResidual { act: |_: &State| 0.0, drift: |_: &State| 0.0 };
}
