//! The symmetry group SE(2)×S¹ of the mobile robot.
//!
//! A group element rotates the plane by an angle, translates it, and shifts
//! the heading by the same angle. In homogeneous coordinates it is the 4×4
//! matrix
//!
//! ```text
//! ⎡ cos θ  −sin θ  0  dx1 ⎤
//! ⎢ sin θ   cos θ  0  dx2 ⎥
//! ⎢   0       0    1   θ  ⎥
//! ⎣   0       0    0   1  ⎦
//! ```
//!
//! but it is stored as `(θ, dx1, dx2)` so that composition is exact angle
//! addition. Headings are stored unwrapped; wrapping only happens when two
//! states are compared.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::ControlValue;

/// Below this rotation rate the exponential map switches to its Taylor series.
pub const SMALL_OMEGA: f64 = 1e-8;

/// Wraps an angle to the representative in `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Robot configuration `(x1, x2, x3)` on ℝ²×S¹.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct State {
    pub x1: f64,
    pub x2: f64,
    /// Heading in radians, unwrapped.
    pub x3: f64,
}

impl From<[f64; 3]> for State {
    fn from(v: [f64; 3]) -> Self {
        State::new(v[0], v[1], v[2])
    }
}

impl From<State> for [f64; 3] {
    fn from(s: State) -> Self {
        [s.x1, s.x2, s.x3]
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x1, self.x2, self.x3)
    }
}

impl State {
    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        State { x1, x2, x3 }
    }

    pub const fn origin() -> Self {
        State::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Error vector `self − other` with the heading difference wrapped.
    pub fn error_to(&self, other: &State) -> [f64; 3] {
        [
            self.x1 - other.x1,
            self.x2 - other.x2,
            wrap_angle(self.x3 - other.x3),
        ]
    }

    /// Euclidean distance on ℝ²×S¹ using the wrapped heading difference.
    pub fn distance_to(&self, other: &State) -> f64 {
        let [a, b, c] = self.error_to(other);
        (a * a + b * b + c * c).sqrt()
    }

    /// Planar distance, ignoring heading.
    pub fn position_distance(&self, other: &State) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }

    pub fn approx_eq(&self, other: &State, tol: f64) -> bool {
        let [a, b, c] = self.error_to(other);
        a.abs() <= tol && b.abs() <= tol && c.abs() <= tol
    }

    /// Euclidean distance in `ℝ³` without wrapping the heading.
    pub fn raw_distance(&self, other: &State) -> f64 {
        let (a, b, c) = (self.x1 - other.x1, self.x2 - other.x2, self.x3 - other.x3);
        (a * a + b * b + c * c).sqrt()
    }
}

/// Element of the robot's symmetry group.
///
/// The planar rotation and the heading shift are the same angle; this is
/// enforced by storing it once.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    dtheta: f64,
    dx1: f64,
    dx2: f64,
}

impl Default for GroupElement {
    fn default() -> Self {
        Self::identity()
    }
}

impl GroupElement {
    pub const fn identity() -> Self {
        GroupElement {
            dtheta: 0.0,
            dx1: 0.0,
            dx2: 0.0,
        }
    }

    /// Rotation by `dtheta` followed by translation `(dx1, dx2)`; the heading
    /// shift equals `dtheta`.
    pub const fn new(dtheta: f64, dx1: f64, dx2: f64) -> Self {
        GroupElement { dtheta, dx1, dx2 }
    }

    /// Builds an element from all four homogeneous parameters, rejecting
    /// combinations where the rotation angle and heading shift disagree.
    pub fn from_parts(dtheta: f64, dx1: f64, dx2: f64, dx3: f64) -> Result<Self> {
        if ![dtheta, dx1, dx2, dx3].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("group element"));
        }
        if (dtheta - dx3).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "rotation angle {dtheta} differs from heading shift {dx3}"
            )));
        }
        Ok(Self::new(dtheta, dx1, dx2))
    }

    pub const fn translation(dx1: f64, dx2: f64) -> Self {
        Self::new(0.0, dx1, dx2)
    }

    pub const fn rotation(dtheta: f64) -> Self {
        Self::new(dtheta, 0.0, 0.0)
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn dx1(&self) -> f64 {
        self.dx1
    }

    pub fn dx2(&self) -> f64 {
        self.dx2
    }

    pub fn dx3(&self) -> f64 {
        self.dtheta
    }

    /// Left action on a state.
    pub fn act(&self, x: &State) -> State {
        let (s, c) = self.dtheta.sin_cos();
        State::new(
            c * x.x1 - s * x.x2 + self.dx1,
            s * x.x1 + c * x.x2 + self.dx2,
            x.x3 + self.dtheta,
        )
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let (s, c) = self.dtheta.sin_cos();
        GroupElement::new(
            self.dtheta + other.dtheta,
            c * other.dx1 - s * other.dx2 + self.dx1,
            s * other.dx1 + c * other.dx2 + self.dx2,
        )
    }

    pub fn inverse(&self) -> GroupElement {
        let (s, c) = self.dtheta.sin_cos();
        GroupElement::new(
            -self.dtheta,
            -(c * self.dx1 + s * self.dx2),
            -(-s * self.dx1 + c * self.dx2),
        )
    }

    /// Homogeneous 4×4 matrix representation.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let (s, c) = self.dtheta.sin_cos();
        [
            [c, -s, 0.0, self.dx1],
            [s, c, 0.0, self.dx2],
            [0.0, 0.0, 1.0, self.dtheta],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Largest absolute entry of `self⁻¹ ∘ other` away from the identity,
    /// with the rotation angle compared modulo 2π.
    pub fn distance(&self, other: &GroupElement) -> f64 {
        let d = self.inverse().compose(other);
        d.dx1
            .abs()
            .max(d.dx2.abs())
            .max(wrap_angle(d.dtheta).abs())
    }
}

/// Lie algebra element `ξ = (v1, v2, ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraElement {
    pub v1: f64,
    pub v2: f64,
    pub omega: f64,
}

impl AlgebraElement {
    pub const fn new(v1: f64, v2: f64, omega: f64) -> Self {
        AlgebraElement { v1, v2, omega }
    }

    /// Generator carrying the trim of constant control `u` through `x0`.
    pub fn from_control(u: &ControlValue, x0: &State) -> Self {
        let (s, c) = x0.x3.sin_cos();
        AlgebraElement::new(u.u1 * c + u.u2 * x0.x2, u.u1 * s - u.u2 * x0.x1, u.u2)
    }

    /// `exp(ξ t)`.
    pub fn exp(&self, t: f64) -> GroupElement {
        let AlgebraElement { v1, v2, omega } = *self;
        let angle = omega * t;
        if omega.abs() < SMALL_OMEGA {
            let half = 0.5 * omega * t * t;
            return GroupElement::new(angle, v1 * t - v2 * half, v2 * t + v1 * half);
        }
        self.exp_trig(t)
    }

    fn exp_trig(&self, t: f64) -> GroupElement {
        let AlgebraElement { v1, v2, omega } = *self;
        let angle = omega * t;
        // 1 − cos(a) = 2 sin²(a/2) keeps the small-angle regime accurate.
        let sin_a = angle.sin();
        let one_minus_cos = 2.0 * (0.5 * angle).sin().powi(2);
        GroupElement::new(
            angle,
            (v1 * sin_a - v2 * one_minus_cos) / omega,
            (v1 * one_minus_cos + v2 * sin_a) / omega,
        )
    }
}

/// Free-function form of [`GroupElement::act`].
pub fn act(g: &GroupElement, x: &State) -> State {
    g.act(x)
}

/// Free-function form of [`GroupElement::compose`].
pub fn compose(g: &GroupElement, h: &GroupElement) -> GroupElement {
    g.compose(h)
}

/// Free-function form of [`GroupElement::inverse`].
pub fn inverse(g: &GroupElement) -> GroupElement {
    g.inverse()
}

/// Free-function form of [`AlgebraElement::exp`].
pub fn exp(xi: &AlgebraElement, t: f64) -> GroupElement {
    xi.exp(t)
}

/// Free-function form of [`AlgebraElement::from_control`].
pub fn xi_from(u: &ControlValue, x0: &State) -> AlgebraElement {
    AlgebraElement::from_control(u, x0)
}
