//! Barrier functions and the affine-in-input split of their derivative.
//!
//! A barrier function `h` certifies safety through its 0-superlevel set: the
//! plant is safe while `h(x) >= 0`. Two concrete barriers are provided, an
//! ellipse in the pitch/pitch-rate plane and a bound on the pitch rate alone.
//! Because the plant is affine in `u`, so is `h`'s time derivative along the
//! nominal model; [`hdot_nominal_affine`] extracts the two coefficients the
//! QP filters consume.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_dynamics, SegwayParams, State};
use crate::{Error, Result};

/// Which concrete barrier is in play, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BarrierDescriptor {
    /// `h = (theta_max^2 - (theta - theta_e)^2 - c * theta_dot^2) / 2`:
    /// an ellipse bounding how far and how fast the Segway may tip.
    PitchEllipse { theta_max: f64, theta_e: f64, c: f64 },
    /// `h = (1 - c * theta_dot^2) / 2`: a band bounding the pitch rate.
    PitchRate { c: f64 },
}

/// A barrier function: scalar value, analytic gradient, and its descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierFunction {
    descriptor: BarrierDescriptor,
}

/// Ellipse barrier on pitch and pitch rate.
pub fn h_pitch_ellipse(x: &State, theta_max: f64, theta_e: f64, c: f64) -> f64 {
    let dth = x.theta - theta_e;
    0.5 * (theta_max * theta_max - dth * dth - c * x.theta_dot * x.theta_dot)
}

/// Band barrier on the pitch rate.
pub fn h_pitch_rate(x: &State, c: f64) -> f64 {
    0.5 * (1.0 - c * x.theta_dot * x.theta_dot)
}

impl BarrierFunction {
    pub fn new(descriptor: BarrierDescriptor) -> Result<Self> {
        match descriptor {
            BarrierDescriptor::PitchEllipse { theta_max, c, theta_e } => {
                if !(theta_max.is_finite() && theta_max > 0.0) {
                    return Err(Error::InvalidParam {
                        field: "theta_max",
                        reason: format!("must be strictly positive, got {theta_max}"),
                    });
                }
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidParam {
                        field: "c",
                        reason: format!("must be strictly positive, got {c}"),
                    });
                }
                if !theta_e.is_finite() {
                    return Err(Error::InvalidParam {
                        field: "theta_e",
                        reason: "must be finite".into(),
                    });
                }
            }
            BarrierDescriptor::PitchRate { c } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidParam {
                        field: "c",
                        reason: format!("must be strictly positive, got {c}"),
                    });
                }
            }
        }
        Ok(Self { descriptor })
    }

    pub fn descriptor(&self) -> BarrierDescriptor {
        self.descriptor
    }

    /// `h(x)`.
    pub fn value(&self, x: &State) -> f64 {
        match self.descriptor {
            BarrierDescriptor::PitchEllipse { theta_max, theta_e, c } => {
                h_pitch_ellipse(x, theta_max, theta_e, c)
            }
            BarrierDescriptor::PitchRate { c } => h_pitch_rate(x, c),
        }
    }

    /// Analytic gradient of `h` as a row over (x_pos, x_vel, theta, theta_dot).
    pub fn gradient(&self, x: &State) -> Vector4<f64> {
        match self.descriptor {
            BarrierDescriptor::PitchEllipse { theta_e, c, .. } => {
                Vector4::new(0.0, 0.0, -(x.theta - theta_e), -c * x.theta_dot)
            }
            BarrierDescriptor::PitchRate { c } => Vector4::new(0.0, 0.0, 0.0, -c * x.theta_dot),
        }
    }
}

/// Gradient of a barrier function at `x`.
pub fn grad_h(bf: &BarrierFunction, x: &State) -> Vector4<f64> {
    bf.gradient(x)
}

/// Linear extended class-K function `alpha(r) = gamma * r`, `gamma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKFunction {
    gamma: f64,
}

impl ClassKFunction {
    pub fn linear(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParam {
                field: "gamma",
                reason: format!("must be strictly positive, got {gamma}"),
            });
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.gamma * r
    }
}

/// Evaluate a class-K function at `r`.
pub fn alpha_eval(k: &ClassKFunction, r: f64) -> f64 {
    k.eval(r)
}

/// The derivative of `h` along a control-affine model, split as
/// `hdot(x, u) = drift + act * u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdotAffine {
    /// `grad h . f(x)`.
    pub drift: f64,
    /// `grad h . g(x)` (single input).
    pub act: f64,
}

impl HdotAffine {
    pub fn eval(&self, u: f64) -> f64 {
        self.drift + self.act * u
    }
}

/// Affine split of `hdot` along arbitrary control-affine dynamics
/// `deriv(x, u)`, probed at `u = 0` and `u = 1`.
pub fn hdot_affine_with(
    bf: &BarrierFunction,
    deriv: impl Fn(&State, f64) -> Vector4<f64>,
    x: &State,
) -> HdotAffine {
    let grad = bf.gradient(x);
    let f = deriv(x, 0.0);
    let g = deriv(x, 1.0) - f;
    HdotAffine { drift: grad.dot(&f), act: grad.dot(&g) }
}

/// Affine split of `hdot` along the nominal plant model.
pub fn hdot_nominal_affine(
    bf: &BarrierFunction,
    nom_p: &SegwayParams,
    x: &State,
) -> Result<HdotAffine> {
    nom_p.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFinite { context: format!("state passed to hdot_nominal_affine: {x:?}") });
    }
    Ok(hdot_affine_with(bf, |s, u| eval_dynamics(nom_p, s, u).expect("validated inputs"), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ellipse() -> BarrierFunction {
        BarrierFunction::new(BarrierDescriptor::PitchEllipse {
            theta_max: 0.3,
            theta_e: 0.0,
            c: 0.1,
        })
        .unwrap()
    }

    fn rate_band() -> BarrierFunction {
        BarrierFunction::new(BarrierDescriptor::PitchRate { c: 0.25 }).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> State {
        State::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-2.0..2.0),
        )
    }

    /// Central-difference gradient of `h`, the test-side oracle.
    fn fd_gradient(bf: &BarrierFunction, x: &State) -> Vector4<f64> {
        let eps = 1e-6;
        let mut g = Vector4::zeros();
        let mut v = x.to_vector();
        for i in 0..4 {
            let orig = v[i];
            v[i] = orig + eps;
            let hp = bf.value(&State::from_vector(v));
            v[i] = orig - eps;
            let hm = bf.value(&State::from_vector(v));
            v[i] = orig;
            g[i] = (hp - hm) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn pitch_ellipse_values() {
        let x_center = State::new(0.0, 0.0, 0.0, 0.0);
        assert!((h_pitch_ellipse(&x_center, 0.3, 0.0, 0.1) - 0.045).abs() < 1e-15);

        let x_edge = State::new(0.0, 0.0, 0.3, 0.0);
        assert!(h_pitch_ellipse(&x_edge, 0.3, 0.0, 0.1).abs() < 1e-15);

        // theta_dot^2 = theta_max^2 / c puts the state on the rate axis crossing.
        let rate = (0.3f64 * 0.3 / 0.1).sqrt();
        let x_rate = State::new(0.0, 0.0, 0.0, rate);
        assert!(h_pitch_ellipse(&x_rate, 0.3, 0.0, 0.1).abs() < 1e-15);
    }

    #[test]
    fn pitch_rate_values() {
        let c = 0.25;
        assert!((h_pitch_rate(&State::new(0.0, 0.0, 0.0, 0.0), c) - 0.5).abs() < 1e-15);
        let edge = 1.0 / c.sqrt();
        assert!(h_pitch_rate(&State::new(0.0, 0.0, 0.0, edge), c).abs() < 1e-12);
        assert!((h_pitch_rate(&State::new(0.0, 0.0, 0.0, 2.0 / c.sqrt()), c) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_ellipse_center_is_zero() {
        let bf = ellipse();
        let g = bf.gradient(&State::new(1.0, -2.0, 0.0, 0.0));
        assert_eq!(g, Vector4::zeros());
    }

    #[test]
    fn gradient_of_rate_band() {
        let bf = BarrierFunction::new(BarrierDescriptor::PitchRate { c: 2.0 }).unwrap();
        let g = bf.gradient(&State::new(0.0, 0.0, 0.0, 1.0));
        assert_eq!(g, Vector4::new(0.0, 0.0, 0.0, -2.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for bf in [ellipse(), rate_band()] {
            for _ in 0..1000 {
                let x = random_state(&mut rng);
                let ana = bf.gradient(&x);
                let num = fd_gradient(&bf, &x);
                let scale = ana.norm().max(num.norm()).max(1e-8);
                assert!(
                    (ana - num).norm() / scale < 1e-5,
                    "gradient mismatch at {x:?}: {ana:?} vs {num:?}"
                );
            }
        }
    }

    #[test]
    fn zero_level_set_is_regular() {
        // Boundary states of the ellipse parameterized by angle, skipping the
        // two critical points (theta = theta_e, theta_dot = 0 never lies on
        // the boundary since theta_max > 0).
        let bf = ellipse();
        let (theta_max, c): (f64, f64) = (0.3, 0.1);
        for k in 0..100 {
            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 100.0;
            let x = State::new(0.0, 0.0, theta_max * phi.cos(), theta_max / c.sqrt() * phi.sin());
            assert!(bf.value(&x).abs() < 1e-12);
            assert!(bf.gradient(&x).norm() > 1e-3, "vanishing gradient at boundary {x:?}");
        }
    }

    #[test]
    fn class_k_rejects_nonpositive_gamma() {
        assert!(ClassKFunction::linear(0.0).is_err());
        assert!(ClassKFunction::linear(-1.0).is_err());
    }

    #[test]
    fn class_k_linear_form() {
        let k = ClassKFunction::linear(1.0).unwrap();
        assert_eq!(k.eval(0.0), 0.0);
        assert_eq!(k.eval(2.0), 2.0);

        let k = ClassKFunction::linear(3.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let r1 = rng.gen_range(-5.0..5.0);
            let r2 = r1 + rng.gen_range(1e-6..3.0);
            assert!(alpha_eval(&k, r1) < alpha_eval(&k, r2));
            assert_eq!(k.eval(-r1), -k.eval(r1));
        }
    }

    #[test]
    fn hdot_affine_degenerate_dynamics() {
        let bf = ellipse();
        let x = State::new(0.0, 0.0, 0.1, 0.4);
        let hd = hdot_affine_with(&bf, |_, _| Vector4::zeros(), &x);
        assert_eq!(hd.drift, 0.0);
        assert_eq!(hd.act, 0.0);
    }

    #[test]
    fn hdot_affine_matches_chain_rule() {
        let nom = SegwayParams::default_nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for bf in [ellipse(), rate_band()] {
            for _ in 0..1000 {
                let x = random_state(&mut rng);
                let u = rng.gen_range(-80.0..80.0);
                let hd = hdot_nominal_affine(&bf, &nom, &x).unwrap();
                let direct = bf.gradient(&x).dot(&eval_dynamics(&nom, &x, u).unwrap());
                let scale = direct.abs().max(1.0);
                assert!((hd.eval(u) - direct).abs() / scale < 1e-10);
            }
        }
    }

    #[test]
    fn hdot_matches_finite_difference_slope_along_trajectory() {
        // Along a nominal-plant rollout the model is exact, so the affine
        // split must reproduce the numerical slope of h(t) to O(dt^2).
        let nom = SegwayParams::default_nominal();
        let bf = ellipse();
        let x0 = State::new(0.0, 0.0, 0.05, 0.1);
        let dt = 0.01;
        let traj = simulate(&nom, |_| 2.0, &x0, 1.0, dt, 10).unwrap();

        let h: Vec<f64> = traj.states.iter().map(|s| bf.value(s)).collect();
        let mut max_err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 1..h.len() - 1 {
            let slope = (h[i + 1] - h[i - 1]) / (2.0 * dt);
            let hd = hdot_nominal_affine(&bf, &nom, &traj.states[i]).unwrap();
            // The slope straddles two hold intervals; compare to the average.
            let model = 0.5 * (hd.eval(traj.inputs[i - 1]) + hd.eval(traj.inputs[i]));
            max_err = max_err.max((slope - model).abs());
            scale = scale.max(slope.abs());
        }
        assert!(max_err < 5e-3 * scale.max(1.0), "max err {max_err}, scale {scale}");
    }
}
