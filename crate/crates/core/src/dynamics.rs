//! Planar Segway plant.
//!
//! A two-wheeled inverted pendulum rolling without slip: a cart of effective
//! mass `cart_mass` (wheels plus base, wheel spin inertia folded in) carrying
//! a rigid body of mass `pend_mass` with center of mass `com_offset` above
//! the axle. The motor applies a torque between wheel and body,
//! `tau = motor_kt * u - motor_kb * (x_vel / wheel_radius - theta_dot)`,
//! where `u` is a command in percent of battery voltage. Euler-Lagrange in
//! the coordinates `(x, theta)` gives
//!
//! ```text
//! [ M+m      m*l*cos(th) ] [x_ddot ]   [ m*l*sin(th)*th_dot^2 - b_f*x_vel + tau/R ]
//! [ m*l*cos(th)  J+m*l^2 ] [th_ddot] = [ m*g*l*sin(th) - tau                      ]
//! ```
//!
//! which is affine in `u` because `tau` is. The same structure evaluated with
//! two parameter sets (nominal vs. perturbed "true") is what the rest of the
//! crate learns to tell apart.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Motor command, in percent of battery voltage.
pub type Input = f64;

/// Saturation bound on the motor command.
pub const U_MAX: f64 = 100.0;

/// Clamp a motor command to `[-U_MAX, U_MAX]`.
pub fn saturate(u: f64) -> Input {
    u.clamp(-U_MAX, U_MAX)
}

/// State of the planar Segway: position, velocity, pitch, pitch rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Horizontal position of the axle (m).
    pub x_pos: f64,
    /// Horizontal velocity (m/s).
    pub x_vel: f64,
    /// Pitch angle from upright (rad), positive leaning forward.
    pub theta: f64,
    /// Pitch rate (rad/s).
    pub theta_dot: f64,
}

impl State {
    pub fn new(x_pos: f64, x_vel: f64, theta: f64, theta_dot: f64) -> Self {
        Self { x_pos, x_vel, theta, theta_dot }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x_pos, self.x_vel, self.theta, self.theta_dot)
    }

    pub fn from_vector(v: Vector4<f64>) -> Self {
        Self { x_pos: v[0], x_vel: v[1], theta: v[2], theta_dot: v[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.x_pos.is_finite()
            && self.x_vel.is_finite()
            && self.theta.is_finite()
            && self.theta_dot.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Physical and electrical parameters of the plant.
///
/// Two instances appear in every experiment: the nominal set the controller
/// believes in, and the perturbed set the simulated world actually obeys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegwayParams {
    /// Effective translational mass of wheels + base (kg).
    pub cart_mass: f64,
    /// Mass of the pendulum body (kg).
    pub pend_mass: f64,
    /// Distance from axle to the body center of mass (m).
    pub com_offset: f64,
    /// Body inertia about its own center of mass (kg m^2).
    pub pend_inertia: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Motor torque per command unit (N m per percent).
    pub motor_kt: f64,
    /// Back-EMF / motor damping on the wheel-body relative rate (N m s/rad).
    pub motor_kb: f64,
    /// Viscous ground friction (N s/m).
    pub ground_friction: f64,
    /// Gravity (m/s^2).
    pub gravity: f64,
}

impl SegwayParams {
    /// Shipped nominal parameter set (total mass 45 kg, wheel radius 0.195 m,
    /// CoM offset 0.27 m). Self-consistent rather than measured; experiments
    /// only ever compare nominal vs. perturbed variants of the same set.
    pub fn default_nominal() -> Self {
        Self {
            cart_mass: 22.0,
            pend_mass: 23.0,
            com_offset: 0.27,
            pend_inertia: 1.8,
            wheel_radius: 0.195,
            motor_kt: 0.6,
            motor_kb: 0.5,
            ground_friction: 5.0,
            gravity: 9.81,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 6] = [
            ("cart_mass", self.cart_mass),
            ("pend_mass", self.pend_mass),
            ("com_offset", self.com_offset),
            ("pend_inertia", self.pend_inertia),
            ("wheel_radius", self.wheel_radius),
            ("gravity", self.gravity),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam {
                    field,
                    reason: format!("must be strictly positive, got {v}"),
                });
            }
        }
        let nonnegative: [(&'static str, f64); 3] = [
            ("motor_kt", self.motor_kt),
            ("motor_kb", self.motor_kb),
            ("ground_friction", self.ground_friction),
        ];
        for (field, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParam {
                    field,
                    reason: format!("must be nonnegative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Plant derivative without validity checks; callers validate once up front.
fn eval_unchecked(p: &SegwayParams, x: &State, u: Input) -> Vector4<f64> {
    let (s, c) = x.theta.sin_cos();
    let ml = p.pend_mass * p.com_offset;
    let mt = p.cart_mass + p.pend_mass;
    let jt = p.pend_inertia + ml * p.com_offset;

    // Motor torque between wheel and body; back-EMF on the relative rate.
    let tau = p.motor_kt * u - p.motor_kb * (x.x_vel / p.wheel_radius - x.theta_dot);

    let rhs_x = ml * s * x.theta_dot * x.theta_dot - p.ground_friction * x.x_vel
        + tau / p.wheel_radius;
    let rhs_th = ml * p.gravity * s - tau;

    // 2x2 mass-matrix solve; det > 0 for any valid parameter set.
    let off = ml * c;
    let det = mt * jt - off * off;
    let x_acc = (jt * rhs_x - off * rhs_th) / det;
    let th_acc = (mt * rhs_th - off * rhs_x) / det;

    Vector4::new(x.x_vel, x_acc, x.theta_dot, th_acc)
}

/// State derivative `f(x) + g(x) u` of the plant under `params`.
pub fn eval_dynamics(params: &SegwayParams, x: &State, u: Input) -> Result<Vector4<f64>> {
    params.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFinite { context: format!("state passed to eval_dynamics: {x:?}") });
    }
    if !u.is_finite() {
        return Err(Error::NonFinite { context: format!("input passed to eval_dynamics: {u}") });
    }
    Ok(eval_unchecked(params, x, u))
}

/// Gap between two parameterizations of the plant, split into the drift part
/// and the column multiplying `u`.
///
/// Validation-only: controllers never see this, it exists so tests can compare
/// learned corrections against the exact model mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTerms {
    /// `f_true(x) - f_nominal(x)`.
    pub drift_gap: Vector4<f64>,
    /// `g_true(x) - g_nominal(x)` (single input column).
    pub actuation_gap: Vector4<f64>,
}

/// Exact model mismatch at `x` between a true and a nominal parameter set.
pub fn residual_oracle(
    true_p: &SegwayParams,
    nom_p: &SegwayParams,
    x: &State,
) -> Result<ResidualTerms> {
    let f_true = eval_dynamics(true_p, x, 0.0)?;
    let f_nom = eval_dynamics(nom_p, x, 0.0)?;
    let g_true = eval_dynamics(true_p, x, 1.0)? - f_true;
    let g_nom = eval_dynamics(nom_p, x, 1.0)? - f_nom;
    Ok(ResidualTerms { drift_gap: f_true - f_nom, actuation_gap: g_true - g_nom })
}

/// Multiplicatively perturb the mass/inertia and electrical parameters by
/// independent factors drawn uniformly from `[1 - fraction, 1 + fraction]`.
/// Geometry, friction, and gravity are untouched. Deterministic per seed.
pub fn perturb_params(
    nominal: &SegwayParams,
    fraction: f64,
    seed: u64,
) -> Result<SegwayParams> {
    nominal.validate()?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam {
            field: "fraction",
            reason: format!("must lie in [0, 1], got {fraction}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || rng.gen_range(1.0 - fraction..=1.0 + fraction);

    // Draw order is part of the determinism contract.
    let mut p = *nominal;
    p.cart_mass *= factor();
    p.pend_mass *= factor();
    p.pend_inertia *= factor();
    p.motor_kt *= factor();
    p.motor_kb *= factor();
    p.validate()?;
    Ok(p)
}

/// One classical RK4 step of `x' = deriv(x)` with step `dt`.
///
/// Generic over the derivative so tests can substitute stub dynamics; the
/// plant input is held constant by baking it into the closure.
pub fn rk4_step<F: Fn(&State) -> Vector4<f64>>(deriv: F, x: &State, dt: f64) -> State {
    let x0 = x.to_vector();
    let k1 = deriv(x);
    let k2 = deriv(&State::from_vector(x0 + (dt / 2.0) * k1));
    let k3 = deriv(&State::from_vector(x0 + (dt / 2.0) * k2));
    let k4 = deriv(&State::from_vector(x0 + dt * k3));
    State::from_vector(x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// RK4 step of the plant with `u` held constant over the step.
pub fn integrate_step(params: &SegwayParams, x: &State, u: Input, dt: f64) -> Result<State> {
    params.validate()?;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidParam { field: "dt", reason: format!("must be positive, got {dt}") });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { context: format!("state passed to integrate_step: {x:?}") });
    }
    let next = rk4_step(|s| eval_unchecked(params, s, u), x, dt);
    if !next.is_finite() {
        return Err(Error::StepRejected(format!(
            "non-finite state after RK4 from {x:?} with u = {u}, dt = {dt}"
        )));
    }
    Ok(next)
}

/// Rollout abort thresholds: a tipped-over or runaway state ends the episode.
pub const BLOWUP_PITCH: f64 = std::f64::consts::FRAC_PI_2;
pub const BLOWUP_NORM: f64 = 1e3;

/// Sampled closed-loop trajectory at the controller rate.
///
/// `states[i]` is the state at `times[i]`; `inputs[i]` is the command held
/// over `[times[i], times[i+1])`, so there is one fewer input than states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    /// True when the rollout tripped the blow-up guard and ended early.
    pub blew_up: bool,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        if self.times.len() >= 2 { self.times[1] - self.times[0] } else { 0.0 }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulate the closed loop with a sample-hold controller.
///
/// The controller is evaluated once per `dt_ctrl` interval, its output is
/// saturated to `[-U_MAX, U_MAX]` and held while the plant is integrated with
/// `substeps` RK4 substeps. A state that tips past [`BLOWUP_PITCH`] or runs
/// past [`BLOWUP_NORM`] in norm ends the rollout early with `blew_up` set;
/// the partial trajectory is returned.
pub fn simulate(
    params: &SegwayParams,
    mut controller: impl FnMut(&State) -> Input,
    x0: &State,
    horizon: f64,
    dt_ctrl: f64,
    substeps: usize,
) -> Result<Trajectory> {
    params.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParam { field: "horizon", reason: format!("must be positive, got {horizon}") });
    }
    if !(dt_ctrl > 0.0 && dt_ctrl.is_finite()) {
        return Err(Error::InvalidParam { field: "dt_ctrl", reason: format!("must be positive, got {dt_ctrl}") });
    }
    if substeps == 0 {
        return Err(Error::InvalidParam { field: "substeps", reason: "must be at least 1".into() });
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite { context: format!("initial state: {x0:?}") });
    }

    let n_intervals = (horizon / dt_ctrl).round().max(1.0) as usize;
    let dt_sub = dt_ctrl / substeps as f64;

    let mut traj = Trajectory {
        times: Vec::with_capacity(n_intervals + 1),
        states: Vec::with_capacity(n_intervals + 1),
        inputs: Vec::with_capacity(n_intervals),
        blew_up: false,
    };
    traj.times.push(0.0);
    traj.states.push(*x0);

    let mut x = *x0;
    for k in 0..n_intervals {
        let t = k as f64 * dt_ctrl;
        let u_raw = controller(&x);
        if !u_raw.is_finite() {
            return Err(Error::ControllerNonFinite { t });
        }
        let u = saturate(u_raw);

        let mut next = x;
        let mut rejected = false;
        for _ in 0..substeps {
            match integrate_step(params, &next, u, dt_sub) {
                Ok(s) => next = s,
                Err(_) => {
                    rejected = true;
                    break;
                }
            }
        }
        if rejected {
            traj.blew_up = true;
            break;
        }

        traj.inputs.push(u);
        traj.times.push((k + 1) as f64 * dt_ctrl);
        traj.states.push(next);
        x = next;

        if x.theta.abs() > BLOWUP_PITCH || x.norm() > BLOWUP_NORM {
            traj.blew_up = true;
            break;
        }
    }

    Ok(traj)
}
