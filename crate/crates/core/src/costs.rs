//! Stage costs, the problem description, and transport of a problem by a
//! symmetry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::GridControlSet;
use crate::robot::ControlValue;
use crate::symmetry::{wrap_angle, GroupElement, State};
use crate::trim::TrimLibrary;

/// Norm used for the linear effort term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    pub fn eval(self, u: &ControlValue) -> f64 {
        match self {
            NormKind::L1 => u.u1.abs() + u.u2.abs(),
            NormKind::L2 => u.u1.hypot(u.u2),
            NormKind::Linf => u.u1.abs().max(u.u2.abs()),
        }
    }
}

/// A running cost `ℓ(x, u)`.
pub trait RunningCost {
    fn rate_at(&self, x: &State, u: &ControlValue) -> f64;
}

fn identity2() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

/// `ℓ(u) = c1 uᵀRu + c2 ⦀u⦀ + c3`. It does not depend on the state, so it is
/// invariant under every symmetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCost {
    #[serde(default)]
    pub c1: f64,
    #[serde(default = "identity2")]
    pub r: [[f64; 2]; 2],
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub c3: f64,
}

impl Default for StageCost {
    fn default() -> Self {
        StageCost::quadratic()
    }
}

impl StageCost {
    /// `‖u‖²` with `R = I`.
    pub fn quadratic() -> Self {
        StageCost {
            c1: 1.0,
            r: identity2(),
            c2: 0.0,
            norm: NormKind::L2,
            c3: 0.0,
        }
    }

    /// Pure time penalty `ℓ = c3`.
    pub fn time_only(c3: f64) -> Self {
        StageCost {
            c1: 0.0,
            c3,
            ..Self::quadratic()
        }
    }

    pub fn with_norm(mut self, c2: f64, norm: NormKind) -> Self {
        self.c2 = c2;
        self.norm = norm;
        self
    }

    pub fn with_r(mut self, r: [[f64; 2]; 2]) -> Self {
        self.r = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.r;
        let vals = [self.c1, self.c2, self.c3, r[0][0], r[0][1], r[1][0], r[1][1]];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("stage cost"));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 || self.c3 < 0.0 {
            return Err(Error::InvalidInput("cost weights must be nonnegative".into()));
        }
        if self.c1 + self.c2 + self.c3 <= 0.0 {
            return Err(Error::InvalidInput("cost weights are all zero".into()));
        }
        if (r[0][1] - r[1][0]).abs() > 1e-12 {
            return Err(Error::InvalidInput("R is not symmetric".into()));
        }
        if min_eigenvalue(r) <= 0.0 {
            return Err(Error::InvalidInput("R is not positive definite".into()));
        }
        Ok(())
    }

    /// `uᵀRu`.
    pub fn r_norm_sq(&self, u: &ControlValue) -> f64 {
        r_norm_sq(&self.r, u)
    }

    pub fn rate(&self, u: &ControlValue) -> f64 {
        self.c1 * self.r_norm_sq(u) + self.c2 * self.norm.eval(u) + self.c3
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.r)
    }
}

impl RunningCost for StageCost {
    fn rate_at(&self, _x: &State, u: &ControlValue) -> f64 {
        self.rate(u)
    }
}

/// Free-function form of [`StageCost::rate`].
pub fn rate(cost: &StageCost, u: &ControlValue) -> f64 {
    cost.rate(u)
}

pub fn r_norm_sq(r: &[[f64; 2]; 2], u: &ControlValue) -> f64 {
    r[0][0] * u.u1 * u.u1 + (r[0][1] + r[1][0]) * u.u1 * u.u2 + r[1][1] * u.u2 * u.u2
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn min_eigenvalue(r: &[[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (r[0][0] + r[1][1]);
    let half_diff = 0.5 * (r[0][0] - r[1][1]);
    let off = 0.5 * (r[0][1] + r[1][0]);
    mean - half_diff.hypot(off)
}

/// Quadratic tracking cost `(x−x_ref)ᵀQ(x−x_ref) + (u−u_ref)ᵀRq(u−u_ref)`.
///
/// Position errors are taken componentwise and the heading error is wrapped.
/// Unlike [`StageCost`] it is not invariant under rotations or translations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingCost {
    pub q: [[f64; 3]; 3],
    pub rq: [[f64; 2]; 2],
    pub x_ref: State,
    pub u_ref: ControlValue,
}

impl TrackingCost {
    pub fn new(q: [[f64; 3]; 3], rq: [[f64; 2]; 2], x_ref: State, u_ref: ControlValue) -> Result<Self> {
        let c = TrackingCost { q, rq, x_ref, u_ref };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                if !self.q[i][j].is_finite() {
                    return Err(Error::NonFinite("tracking cost Q"));
                }
                if (self.q[i][j] - self.q[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput("Q is not symmetric".into()));
                }
            }
        }
        // Sylvester's criterion for semidefiniteness needs every principal minor.
        let q = &self.q;
        let minors2 = [
            q[0][0] * q[1][1] - q[0][1] * q[1][0],
            q[0][0] * q[2][2] - q[0][2] * q[2][0],
            q[1][1] * q[2][2] - q[1][2] * q[2][1],
        ];
        let det = q[0][0] * minors2[2] - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0])
            + q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0]);
        let tol = -1e-12;
        if q[0][0] < tol || q[1][1] < tol || q[2][2] < tol || minors2.iter().any(|m| *m < tol) || det < tol {
            return Err(Error::InvalidInput("Q is not positive semidefinite".into()));
        }
        if (self.rq[0][1] - self.rq[1][0]).abs() > 1e-12 || min_eigenvalue(&self.rq) <= 0.0 {
            return Err(Error::InvalidInput("Rq is not symmetric positive definite".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &State, u: &ControlValue) -> f64 {
        let e = x.error_to(&self.x_ref);
        let mut xq = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                xq += e[i] * self.q[i][j] * e[j];
            }
        }
        let du = ControlValue::new(u.u1 - self.u_ref.u1, u.u2 - self.u_ref.u2);
        xq + r_norm_sq(&self.rq, &du)
    }
}

impl RunningCost for TrackingCost {
    fn rate_at(&self, x: &State, u: &ControlValue) -> f64 {
        self.eval(x, u)
    }
}

/// Largest deviation `|f(Ψ_g(x), u) − f(x, u)|` over the samples.
pub fn check_invariance<F>(f: F, samples: &[(GroupElement, State, ControlValue)]) -> f64
where
    F: Fn(&State, &ControlValue) -> f64,
{
    samples
        .iter()
        .map(|(g, x, u)| (f(&g.act(x), u) - f(x, u)).abs())
        .fold(0.0, f64::max)
}

/// Axis-aligned state box. Infinite bounds are allowed; the heading bound
/// applies to the raw (unwrapped) heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl StateBox {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::InvalidInput(format!("state box axis {i} is empty")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &State) -> bool {
        let v = [x.x1, x.x2, x.x3];
        (0..3).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }

    fn unbounded(&self, i: usize) -> bool {
        self.lower[i] == f64::NEG_INFINITY && self.upper[i] == f64::INFINITY
    }

    /// Whether `Ψ_g` maps the box onto itself.
    pub fn is_invariant_under(&self, g: &GroupElement) -> bool {
        let rotates = wrap_angle(g.dtheta()) != 0.0;
        if rotates && !(self.unbounded(0) && self.unbounded(1)) {
            return false;
        }
        if g.dtheta() != 0.0 && !self.unbounded(2) {
            return false;
        }
        (g.dx1() == 0.0 || self.unbounded(0)) && (g.dx2() == 0.0 || self.unbounded(1))
    }
}

/// Finite set of admissible control values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSet {
    Library(TrimLibrary),
    Grid(GridControlSet),
}

impl ControlSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Library(lib) => lib.validate(),
            ControlSet::Grid(g) => g.validate(),
        }
    }

    /// The set as a trim library; grid points get ids with rest first.
    pub fn to_library(&self) -> Result<TrimLibrary> {
        match self {
            ControlSet::Library(lib) => Ok(lib.clone()),
            ControlSet::Grid(g) => g.to_library(),
        }
    }
}

/// Fixed horizon `T` or free final time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Fixed(f64),
    Free,
}

impl Horizon {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            Horizon::Fixed(t) => Some(*t),
            Horizon::Free => None,
        }
    }
}

fn default_segments() -> usize {
    4
}

/// One instance of the finite-horizon optimal control problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub x_hat: State,
    pub x_star: State,
    pub horizon: Horizon,
    #[serde(default = "default_segments")]
    pub max_segments: usize,
    pub control_set: ControlSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_box: Option<StateBox>,
    pub cost: StageCost,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.x_hat.ensure_finite("x_hat")?;
        self.x_star.ensure_finite("x_star")?;
        if self.max_segments == 0 {
            return Err(Error::InvalidInput("max_segments must be at least 1".into()));
        }
        match self.horizon {
            Horizon::Fixed(t) if !(t.is_finite() && t > 0.0) => {
                return Err(Error::InvalidInput(format!("horizon {t} must be positive")));
            }
            Horizon::Free if self.cost.c3 <= 0.0 => {
                return Err(Error::InvalidInput("free horizon requires c3 > 0".into()));
            }
            _ => {}
        }
        self.cost.validate()?;
        self.control_set.validate()?;
        if let Some(b) = &self.state_box {
            b.validate()?;
            if !b.contains(&self.x_star) {
                return Err(Error::InvalidInput("x_star lies outside the state box".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ProblemSpec = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Same problem started from another state.
    pub fn with_start(&self, x_hat: State) -> Self {
        ProblemSpec {
            x_hat,
            ..self.clone()
        }
    }
}

/// Result of [`shift_problem`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedProblem {
    pub problem: ProblemSpec,
    /// Set when a state box had to be dropped.
    pub warning: Option<String>,
}

/// Moves both boundary states by `Ψ_g`. Costs are kept; a state box that is
/// not invariant under `g` is dropped, since a rotated box is no longer a box.
pub fn shift_problem(g: &GroupElement, p: &ProblemSpec) -> ShiftedProblem {
    let mut q = p.clone();
    q.x_hat = g.act(&p.x_hat);
    q.x_star = g.act(&p.x_star);
    let mut warning = None;
    if let Some(b) = &p.state_box {
        if !b.is_invariant_under(g) {
            q.state_box = None;
            warning = Some("state box is not invariant under the shift and was dropped".into());
        }
    }
    ShiftedProblem {
        problem: q,
        warning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let c = StageCost::quadratic();
        assert_eq!(c.rate(&ControlValue::new(2.0, 0.0)), 4.0);
        assert_eq!(c.rate(&ControlValue::zero()), 0.0);
        let c = StageCost::quadratic()
            .with_r([[4.0, -1.5], [-1.5, 1.0]])
            .with_norm(0.1, NormKind::L2);
        let v = c.rate(&ControlValue::new(1.0, 1.0));
        assert!((v - (2.0 + 0.1 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn norm_kinds() {
        let u = ControlValue::new(-3.0, 4.0);
        assert_eq!(NormKind::L1.eval(&u), 7.0);
        assert_eq!(NormKind::L2.eval(&u), 5.0);
        assert_eq!(NormKind::Linf.eval(&u), 4.0);
    }

    #[test]
    fn validation_rejects_bad_weights() {
        let mut c = StageCost::quadratic();
        c.r = [[1.0, 0.5], [0.4, 1.0]];
        assert!(c.validate().is_err());
        c.r = [[1.0, 2.0], [2.0, 1.0]];
        assert!(c.validate().is_err());
        let z = StageCost {
            c1: 0.0,
            ..StageCost::quadratic()
        };
        assert!(z.validate().is_err());
        assert!(StageCost { c2: -1.0, ..StageCost::quadratic() }.validate().is_err());
    }

    #[test]
    fn min_eigenvalue_of_diagonal() {
        assert_eq!(min_eigenvalue(&[[4.0, 0.0], [0.0, 1.0]]), 1.0);
        let l = min_eigenvalue(&[[4.0, -1.5], [-1.5, 1.0]]);
        assert!((l - (2.5 - (2.25f64 + 2.25).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn tracking_cost_is_not_invariant() {
        let q = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let tc = TrackingCost::new(q, identity2(), State::origin(), ControlValue::zero()).unwrap();
        let samples = vec![(
            GroupElement::new(0.3, 1.0, -2.0),
            State::new(0.5, 0.5, 0.1),
            ControlValue::new(1.0, 0.0),
        )];
        assert!(check_invariance(|x, u| tc.eval(x, u), &samples) > 0.0);
        let tz = TrackingCost::new([[0.0; 3]; 3], identity2(), State::origin(), ControlValue::zero()).unwrap();
        assert_eq!(check_invariance(|x, u| tz.eval(x, u), &samples), 0.0);
        let sc = StageCost::quadratic().with_norm(0.5, NormKind::L1);
        assert_eq!(check_invariance(|x, u| sc.rate_at(x, u), &samples), 0.0);
    }

    #[test]
    fn tracking_cost_rejects_indefinite_q() {
        let q = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(TrackingCost::new(q, identity2(), State::origin(), ControlValue::zero()).is_err());
    }

    #[test]
    fn box_invariance() {
        let b = StateBox {
            lower: [-1.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            upper: [1.0, f64::INFINITY, f64::INFINITY],
        };
        assert!(b.is_invariant_under(&GroupElement::translation(0.0, 3.0)));
        assert!(!b.is_invariant_under(&GroupElement::translation(1.0, 0.0)));
        assert!(!b.is_invariant_under(&GroupElement::rotation(0.5)));
        assert!(b.is_invariant_under(&GroupElement::identity()));
    }
}
