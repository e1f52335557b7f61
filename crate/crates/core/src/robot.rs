//! Kinematic model of the mobile robot, its closed-form constant-control
//! flow, and a Runge–Kutta integrator used as an independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmetry::{GroupElement, State, SMALL_OMEGA};

/// Control input: forward speed `u1` (m/s) and turn rate `u2` (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlValue {
    pub u1: f64,
    pub u2: f64,
}

impl ControlValue {
    pub const fn new(u1: f64, u2: f64) -> Self {
        ControlValue { u1, u2 }
    }

    pub const fn zero() -> Self {
        ControlValue::new(0.0, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.u1 == 0.0 && self.u2 == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.u1.is_finite() && self.u2.is_finite()
    }

    pub fn scale(&self, alpha: f64) -> ControlValue {
        ControlValue::new(alpha * self.u1, alpha * self.u2)
    }
}

/// Piecewise-constant control given as consecutive `(value, duration)` pieces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseControl {
    pub segments: Vec<(ControlValue, f64)>,
}

impl PiecewiseControl {
    pub fn new(segments: Vec<(ControlValue, f64)>) -> Result<Self> {
        let pc = PiecewiseControl { segments };
        pc.validate()?;
        Ok(pc)
    }

    pub fn constant(u: ControlValue, duration: f64) -> Result<Self> {
        Self::new(vec![(u, duration)])
    }

    pub fn validate(&self) -> Result<()> {
        for (u, d) in &self.segments {
            if !u.is_finite() || !d.is_finite() {
                return Err(Error::NonFinite("piecewise control"));
            }
            if *d < 0.0 {
                return Err(Error::InvalidInput(format!("negative duration {d}")));
            }
        }
        if !self.segments.is_empty() && self.duration() <= 0.0 {
            return Err(Error::InvalidInput(
                "piecewise control has zero total duration".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Control active at time `t`; right-continuous, and the last value is
    /// held at and beyond the end.
    pub fn value_at(&self, t: f64) -> ControlValue {
        let mut start = 0.0;
        for (u, d) in &self.segments {
            if t < start + d {
                return *u;
            }
            start += d;
        }
        self.segments.last().map(|(u, _)| *u).unwrap_or_default()
    }

    /// The first `t` seconds of the control.
    pub fn truncate(&self, t: f64) -> PiecewiseControl {
        let mut out = Vec::new();
        let mut left = t;
        for (u, d) in &self.segments {
            if left <= 0.0 {
                break;
            }
            let take = d.min(left);
            out.push((*u, take));
            left -= take;
        }
        PiecewiseControl { segments: out }
    }
}

/// `f(x, u) = (u₁ cos x₃, u₁ sin x₃, u₂)`.
pub fn vector_field(x: &State, u: &ControlValue) -> [f64; 3] {
    let (s, c) = x.x3.sin_cos();
    [u.u1 * c, u.u1 * s, u.u2]
}

/// Closed-form flow under a constant control.
///
/// The displacement is written as a chord: the robot moves `u₁ t sinc(h)` in
/// the direction of the mid-arc heading `x₃ + h` with `h = u₂ t / 2`. This
/// equals `(u₁/u₂)(sin(x₃+u₂t) − sin x₃, cos x₃ − cos(x₃+u₂t))` but has no
/// cancellation as `u₂ → 0`.
pub fn flow_const(x0: &State, u: &ControlValue, t: f64) -> State {
    let h = 0.5 * u.u2 * t;
    let chord = if u.u2.abs() < SMALL_OMEGA {
        u.u1 * t * (1.0 - h * h / 6.0)
    } else {
        u.u1 * h.sin() / (0.5 * u.u2)
    };
    let (s, c) = (x0.x3 + h).sin_cos();
    State::new(x0.x1 + chord * c, x0.x2 + chord * s, x0.x3 + u.u2 * t)
}

/// Endpoint of a piecewise-constant control from `x0`, segment by segment.
pub fn flow_piecewise(x0: &State, u: &PiecewiseControl) -> State {
    u.segments
        .iter()
        .fold(*x0, |x, (v, d)| flow_const(&x, v, *d))
}

/// State at time `t` along a piecewise-constant control; beyond the end the
/// last value keeps acting.
pub fn flow_piecewise_at(x0: &State, u: &PiecewiseControl, t: f64) -> State {
    let mut x = *x0;
    let mut left = t;
    let n = u.segments.len();
    for (i, (v, d)) in u.segments.iter().enumerate() {
        let take = if i + 1 == n { left } else { d.min(left) };
        x = flow_const(&x, v, take);
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    x
}

/// Time-stamped state produced by [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
}

fn rk4_step(x: &State, u: &ControlValue, h: f64) -> State {
    let add = |x: &State, k: [f64; 3], s: f64| {
        State::new(x.x1 + s * k[0], x.x2 + s * k[1], x.x3 + s * k[2])
    };
    let k1 = vector_field(x, u);
    let k2 = vector_field(&add(x, k1, 0.5 * h), u);
    let k3 = vector_field(&add(x, k2, 0.5 * h), u);
    let k4 = vector_field(&add(x, k3, h), u);
    State::new(
        x.x1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x.x2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x.x3 + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )
}

/// Classical RK4 over each constant piece with sub-steps no longer than
/// `step`. The returned samples start at `t = 0`, include every switching
/// instant, and end at the final time.
pub fn integrate(x0: &State, u: &PiecewiseControl, step: f64) -> Result<Vec<Sample>> {
    x0.ensure_finite("initial state")?;
    u.validate()?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!("integration step {step}")));
    }
    let mut out = vec![Sample { t: 0.0, state: *x0 }];
    let mut x = *x0;
    let mut t = 0.0;
    for (v, d) in &u.segments {
        if *d == 0.0 {
            continue;
        }
        let n = (d / step).ceil().max(1.0) as usize;
        let h = d / n as f64;
        for k in 1..=n {
            x = rk4_step(&x, v, h);
            out.push(Sample {
                t: t + k as f64 * h,
                state: x,
            });
        }
        t += d;
        if let Some(last) = out.last_mut() {
            last.t = t;
        }
    }
    Ok(out)
}

/// Endpoint of [`integrate`].
pub fn integrate_endpoint(x0: &State, u: &PiecewiseControl, step: f64) -> Result<State> {
    Ok(integrate(x0, u, step)?.last().map(|s| s.state).unwrap_or(*x0))
}

/// `‖φ_u(t; Ψ_g(x0)) − Ψ_g(φ_u(t; x0))‖`, zero when the flow commutes with
/// the action of `g` at this sample.
pub fn equivariance_residual(g: &GroupElement, x0: &State, u: &PiecewiseControl, t: f64) -> f64 {
    let lhs = flow_piecewise_at(&g.act(x0), u, t);
    let rhs = g.act(&flow_piecewise_at(x0, u, t));
    lhs.raw_distance(&rhs)
}

/// Same comparison as [`equivariance_residual`] but with the shift applied by
/// adding `delta` componentwise to the state, which is not a symmetry once
/// the heading changes or the robot turns.
pub fn naive_shift_residual(delta: [f64; 3], x0: &State, u: &PiecewiseControl, t: f64) -> f64 {
    let add = |x: &State| State::new(x.x1 + delta[0], x.x2 + delta[1], x.x3 + delta[2]);
    let lhs = flow_piecewise_at(&add(x0), u, t);
    let rhs = add(&flow_piecewise_at(x0, u, t));
    lhs.raw_distance(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::xi_from;
    use std::f64::consts::PI;

    #[test]
    fn vector_field_examples() {
        assert_eq!(
            vector_field(&State::origin(), &ControlValue::new(1.0, 0.0)),
            [1.0, 0.0, 0.0]
        );
        let f = vector_field(&State::new(0.0, 0.0, PI / 2.0), &ControlValue::new(1.0, 0.0));
        assert!(f[0].abs() < 1e-16 && (f[1] - 1.0).abs() < 1e-16 && f[2] == 0.0);
        assert_eq!(
            vector_field(&State::new(5.0, -3.0, 0.0), &ControlValue::new(0.0, 2.0)),
            [0.0, 0.0, 2.0]
        );
    }

    #[test]
    fn straight_line_flow() {
        let x = flow_const(&State::new(-2.0, 0.0, 0.0), &ControlValue::new(2.0, 0.0), 1.0);
        assert_eq!(x, State::origin());
    }

    #[test]
    fn half_circle_flow() {
        let x = flow_const(&State::new(0.0, 1.0, 0.0), &ControlValue::new(-0.25, 1.0), PI);
        assert!(x.raw_distance(&State::new(0.0, 0.5, PI)) < 1e-14);
    }

    #[test]
    fn rest_flow_is_identity() {
        let x0 = State::new(0.3, -7.0, 11.0);
        assert_eq!(flow_const(&x0, &ControlValue::zero(), 42.0), x0);
    }

    #[test]
    fn flow_matches_direct_integration_formula() {
        let x0 = State::new(0.4, -1.2, 0.7);
        let u = ControlValue::new(1.3, -0.6);
        let t = 2.5;
        let r = u.u1 / u.u2;
        let expected = State::new(
            x0.x1 + r * ((x0.x3 + u.u2 * t).sin() - x0.x3.sin()),
            x0.x2 + r * (x0.x3.cos() - (x0.x3 + u.u2 * t).cos()),
            x0.x3 + u.u2 * t,
        );
        assert!(flow_const(&x0, &u, t).raw_distance(&expected) < 1e-13);
    }

    #[test]
    fn flow_matches_exponential() {
        let x0 = State::new(0.0, 1.0, 0.0);
        let u = ControlValue::new(-0.25, 1.0);
        for t in [0.0, 0.5, PI, 7.0] {
            let a = xi_from(&u, &x0).exp(t).act(&x0);
            assert!(a.raw_distance(&flow_const(&x0, &u, t)) < 1e-12);
        }
    }

    #[test]
    fn rk4_linear_case_is_exact() {
        let u = PiecewiseControl::constant(ControlValue::new(2.0, 0.0), 1.0).unwrap();
        let x = integrate_endpoint(&State::new(-2.0, 0.0, 0.0), &u, 1e-3).unwrap();
        assert!(x.raw_distance(&State::origin()) < 1e-10);
    }

    #[test]
    fn rk4_full_circle() {
        let x0 = State::new(1.0, 2.0, 0.3);
        let u = PiecewiseControl::constant(ControlValue::new(-0.25, -1.0), 2.0 * PI).unwrap();
        let x = integrate_endpoint(&x0, &u, 1e-3).unwrap();
        let expected = State::new(x0.x1, x0.x2, x0.x3 - 2.0 * PI);
        assert!(x.raw_distance(&expected) < 1e-8);
    }

    #[test]
    fn integrate_samples_switches_and_endpoint() {
        let u = PiecewiseControl::new(vec![
            (ControlValue::new(1.0, 0.0), 0.25),
            (ControlValue::new(0.0, 1.0), 0.0),
            (ControlValue::new(0.0, 1.0), 0.3),
        ])
        .unwrap();
        let samples = integrate(&State::origin(), &u, 0.1).unwrap();
        assert!(samples.iter().any(|s| s.t == 0.25));
        assert_eq!(samples.last().unwrap().t, 0.55);
        assert!(samples.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn integrate_rejects_non_finite() {
        let u = PiecewiseControl::constant(ControlValue::new(1.0, 0.0), 1.0).unwrap();
        assert!(integrate(&State::new(f64::NAN, 0.0, 0.0), &u, 1e-3).is_err());
        assert!(integrate(&State::origin(), &u, 0.0).is_err());
        let bad = PiecewiseControl {
            segments: vec![(ControlValue::new(f64::INFINITY, 0.0), 1.0)],
        };
        assert!(integrate(&State::origin(), &bad, 1e-3).is_err());
    }

    #[test]
    fn piecewise_validation() {
        assert!(PiecewiseControl::new(vec![(ControlValue::zero(), -1.0)]).is_err());
        assert!(PiecewiseControl::new(vec![(ControlValue::zero(), 0.0)]).is_err());
        assert!(PiecewiseControl::new(vec![]).is_ok());
    }

    #[test]
    fn identity_equivariance_residual_is_zero() {
        let u = PiecewiseControl::constant(ControlValue::new(0.7, 0.4), 3.0).unwrap();
        let r = equivariance_residual(&GroupElement::identity(), &State::new(1.0, 2.0, 3.0), &u, 2.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn naive_addition_is_not_a_symmetry() {
        let u = PiecewiseControl::constant(ControlValue::new(1.0, 0.5), 2.0).unwrap();
        let x0 = State::origin();
        assert!(naive_shift_residual([3.0, 2.5, 1.2], &x0, &u, 2.0) > 0.1);
        let g = GroupElement::new(1.2, 3.0, 2.5);
        assert!(equivariance_residual(&g, &x0, &u, 2.0) < 1e-12);
    }
}
