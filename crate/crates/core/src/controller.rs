//! Nominal PD control and min-norm safety filters.
//!
//! The safety filters solve, for a single input,
//!
//! ```text
//! min  (u - u_des)^2 / 2    s.t.  a * u >= c
//! ```
//!
//! whose minimizer is the projection of `u_des` onto the half-space. With the
//! nominal model in the constraint this is the CBF-QP; with a learned
//! correction to the barrier derivative it is the LCBF-QP. Blending trades
//! off between the two as trust in the learned model grows.

use serde::{Deserialize, Serialize};

use crate::barrier::{hdot_nominal_affine, BarrierFunction, ClassKFunction};
use crate::dynamics::{saturate, Input, SegwayParams, State};
use crate::{Error, Result};

/// Constraint normals below this magnitude are treated as vanishing.
pub const EPS_A: f64 = 1e-10;

/// Gains and setpoint of the hand-tuned PD stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PDGains {
    pub kp_theta: f64,
    pub kd_theta: f64,
    /// Velocity-error gain folded into the pitch target (rad per m/s).
    pub kp_vel: f64,
    /// Velocity target (m/s).
    pub v_target: f64,
    /// Pitch target at zero velocity error (rad).
    pub theta_target: f64,
}

impl PDGains {
    /// Gains tuned against the shipped nominal plant. Signs follow the
    /// torque convention: positive command drives the wheels forward, which
    /// pushes the body backward, so recovering a forward lean needs
    /// `kp_theta < 0`.
    pub fn default_tuned() -> Self {
        Self { kp_theta: -400.0, kd_theta: -80.0, kp_vel: 0.2, v_target: 0.0, theta_target: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("kp_theta", self.kp_theta),
            ("kd_theta", self.kd_theta),
            ("kp_vel", self.kp_vel),
            ("v_target", self.v_target),
            ("theta_target", self.theta_target),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParam { field, reason: format!("must be finite, got {v}") });
            }
        }
        Ok(())
    }
}

/// PD law: pitch toward a lean target that folds in the velocity error,
/// saturated to the actuator range.
pub fn pd_control(g: &PDGains, x: &State) -> Input {
    let theta_target = g.theta_target + g.kp_vel * (g.v_target - x.x_vel);
    saturate(g.kp_theta * (theta_target - x.theta) - g.kd_theta * x.theta_dot)
}

/// Single-constraint min-norm QP: `min (u - u_des)^2 / 2  s.t.  a u >= c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfspaceQP {
    pub u_des: f64,
    pub a: f64,
    pub c: f64,
}

/// Output of a safety filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterResult {
    pub u: Input,
    /// The constraint was binding.
    pub active: bool,
    /// The constraint normal vanished while the constraint was violated;
    /// the desired input was passed through unchanged.
    pub infeasible_fallback: bool,
}

/// Closed-form solution of the half-space QP by projection.
pub fn solve_halfspace_qp(qp: &HalfspaceQP) -> FilterResult {
    debug_assert!(qp.u_des.is_finite() && qp.a.is_finite() && qp.c.is_finite());
    let slack = qp.a * qp.u_des - qp.c;
    if slack >= 0.0 {
        FilterResult { u: qp.u_des, active: false, infeasible_fallback: false }
    } else if qp.a.abs() > EPS_A {
        let u = qp.u_des + qp.a * (qp.c - qp.a * qp.u_des) / (qp.a * qp.a);
        FilterResult { u, active: true, infeasible_fallback: false }
    } else {
        log::warn!(
            "pointwise infeasible filter: |a| = {} with violated constraint (slack {})",
            qp.a.abs(),
            slack
        );
        FilterResult { u: qp.u_des, active: false, infeasible_fallback: true }
    }
}

/// Model-based safety filter: projects the PD command onto the inputs whose
/// nominal barrier derivative satisfies `hdot(x, u) >= -alpha(h(x))`.
pub fn cbf_qp_controller(
    bf: &BarrierFunction,
    alpha: &ClassKFunction,
    nom_p: &SegwayParams,
    gains: &PDGains,
    x: &State,
) -> Result<FilterResult> {
    let hd = hdot_nominal_affine(bf, nom_p, x)?;
    let qp = HalfspaceQP {
        u_des: pd_control(gains, x),
        a: hd.act,
        c: -alpha.eval(bf.value(x)) - hd.drift,
    };
    let mut r = solve_halfspace_qp(&qp);
    r.u = saturate(r.u);
    Ok(r)
}

/// A correction model for the barrier derivative: scalar projections of the
/// unmodeled drift and actuation onto the barrier gradient.
pub trait ResidualModel {
    /// Coefficient of `u` in the derivative correction.
    fn act_correction(&self, x: &State) -> f64;
    /// Input-independent derivative correction.
    fn drift_correction(&self, x: &State) -> f64;
}

/// Adapter turning a pair of closures into a [`ResidualModel`]; handy for
/// zero models and ground-truth oracles in tests.
pub struct FnResidual<A, B>
where
    A: Fn(&State) -> f64,
    B: Fn(&State) -> f64,
{
    pub act: A,
    pub drift: B,
}

impl<A, B> ResidualModel for FnResidual<A, B>
where
    A: Fn(&State) -> f64,
    B: Fn(&State) -> f64,
{
    fn act_correction(&self, x: &State) -> f64 {
        (self.act)(x)
    }

    fn drift_correction(&self, x: &State) -> f64 {
        (self.drift)(x)
    }
}

/// Learning-augmented safety filter: same projection, but the constraint uses
/// the corrected derivative estimate
/// `hdot_nominal(x, u) + act_correction(x) * u + drift_correction(x)`.
pub fn lcbf_qp_controller(
    bf: &BarrierFunction,
    alpha: &ClassKFunction,
    nom_p: &SegwayParams,
    gains: &PDGains,
    est: &impl ResidualModel,
    x: &State,
) -> Result<FilterResult> {
    let hd = hdot_nominal_affine(bf, nom_p, x)?;
    let qp = HalfspaceQP {
        u_des: pd_control(gains, x),
        a: hd.act + est.act_correction(x),
        c: -alpha.eval(bf.value(x)) - hd.drift - est.drift_correction(x),
    };
    let mut r = solve_halfspace_qp(&qp);
    r.u = saturate(r.u);
    Ok(r)
}

/// Convex blend of two controllers with trust weight `w`, saturated.
pub fn blend<'a>(
    k0: impl Fn(&State) -> Input + 'a,
    k_aug: impl Fn(&State) -> Input + 'a,
    w: f64,
) -> Result<impl Fn(&State) -> Input + 'a> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidParam {
            field: "w",
            reason: format!("trust weight must lie in [0, 1], got {w}"),
        });
    }
    Ok(move |x: &State| saturate((1.0 - w) * k0(x) + w * k_aug(x)))
}
