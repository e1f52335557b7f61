//! Trim primitives, libraries of them, and plans built from trim sequences.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::costs::RunningCost;
use crate::error::{Error, Result};
use crate::robot::{ControlValue, PiecewiseControl};
use crate::symmetry::{xi_from, GroupElement, State};

/// Id reserved for the rest trim `u = (0, 0)`.
pub const REST_ID: u32 = 1;

/// A constant control value with an id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimPrimitive {
    pub id: u32,
    pub u1: f64,
    pub u2: f64,
    #[serde(default)]
    pub name: String,
}

impl TrimPrimitive {
    pub fn new(id: u32, u1: f64, u2: f64, name: impl Into<String>) -> Self {
        TrimPrimitive {
            id,
            u1,
            u2,
            name: name.into(),
        }
    }

    pub fn control(&self) -> ControlValue {
        ControlValue::new(self.u1, self.u2)
    }

    pub fn is_rest(&self) -> bool {
        self.control().is_zero()
    }
}

/// Ordered, validated collection of trims. Serialized as a JSON array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrimLibrary {
    trims: Vec<TrimPrimitive>,
}

impl TrimLibrary {
    pub fn new(trims: Vec<TrimPrimitive>) -> Result<Self> {
        let lib = TrimLibrary { trims };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trims.is_empty() {
            return Err(Error::InvalidInput("trim library is empty".into()));
        }
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for (k, t) in self.trims.iter().enumerate() {
            if !(t.u1.is_finite() && t.u2.is_finite()) {
                return Err(Error::NonFinite("trim control"));
            }
            if seen.insert(t.id, k).is_some() {
                return Err(Error::InvalidInput(format!("duplicate trim id {}", t.id)));
            }
            if let Some(other) = self.trims[..k].iter().find(|o| o.control() == t.control()) {
                return Err(Error::InvalidInput(format!(
                    "trims {} and {} share the control ({}, {})",
                    other.id, t.id, t.u1, t.u2
                )));
            }
            if (t.id == REST_ID) != t.is_rest() {
                return Err(Error::InvalidInput(format!(
                    "id {REST_ID} is reserved for the rest trim (offending id {})",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn trims(&self) -> &[TrimPrimitive] {
        &self.trims
    }

    pub fn len(&self) -> usize {
        self.trims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trims.is_empty()
    }

    pub fn get(&self, id: u32) -> Result<&TrimPrimitive> {
        self.trims.iter().find(|t| t.id == id).ok_or(Error::UnknownTrim(id))
    }

    pub fn control(&self, id: u32) -> Result<ControlValue> {
        self.get(id).map(TrimPrimitive::control)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.trims.iter().map(|t| t.id).collect()
    }

    /// Ids in increasing order, which is the enumeration order of sequences.
    pub fn sorted_ids(&self) -> Vec<u32> {
        let mut ids = self.ids();
        ids.sort_unstable();
        ids
    }

    pub fn find_control(&self, u: &ControlValue) -> Option<&TrimPrimitive> {
        self.trims.iter().find(|t| t.control() == *u)
    }

    pub fn rest(&self) -> Option<&TrimPrimitive> {
        self.trims.iter().find(|t| t.is_rest())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let lib: TrimLibrary = serde_json::from_str(s)?;
        lib.validate()?;
        Ok(lib)
    }
}

/// The five-trim library used in the parking experiments.
pub fn default_library() -> TrimLibrary {
    TrimLibrary {
        trims: vec![
            TrimPrimitive::new(1, 0.0, 0.0, "rest"),
            TrimPrimitive::new(2, 1.5, 0.0, "move straight"),
            TrimPrimitive::new(3, -0.25, -1.0, "backward right turn"),
            TrimPrimitive::new(4, -0.25, 1.0, "backward left turn"),
            TrimPrimitive::new(5, 0.0, 1.0, "turn on the spot"),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub trim: u32,
    pub duration: f64,
}

/// Sequence of trims with durations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrimPlan {
    pub segments: Vec<PlanSegment>,
}

impl TrimPlan {
    pub fn new(segments: impl IntoIterator<Item = (u32, f64)>) -> Self {
        TrimPlan {
            segments: segments
                .into_iter()
                .map(|(trim, duration)| PlanSegment { trim, duration })
                .collect(),
        }
    }

    pub fn empty() -> Self {
        TrimPlan::default()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.segments.iter().map(|s| s.trim).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    pub fn validate(&self, lib: &TrimLibrary) -> Result<()> {
        for s in &self.segments {
            if !s.duration.is_finite() {
                return Err(Error::NonFinite("plan duration"));
            }
            if s.duration < 0.0 {
                return Err(Error::InvalidInput(format!("negative duration {}", s.duration)));
            }
            lib.get(s.trim)?;
        }
        Ok(())
    }

    /// Drops zero-length segments and merges neighbours that use the same trim.
    pub fn canonical(&self) -> TrimPlan {
        let mut out: Vec<PlanSegment> = Vec::with_capacity(self.segments.len());
        for s in self.segments.iter().filter(|s| s.duration > 0.0) {
            match out.last_mut() {
                Some(last) if last.trim == s.trim => last.duration += s.duration,
                _ => out.push(*s),
            }
        }
        TrimPlan { segments: out }
    }

    /// Removes trailing segments that use the rest trim.
    pub fn without_trailing_rest(&self) -> TrimPlan {
        let mut segments = self.segments.clone();
        while segments.last().is_some_and(|s| s.trim == REST_ID) {
            segments.pop();
        }
        TrimPlan { segments }
    }

    /// The plan that remains after executing the first `dt` seconds.
    pub fn advance(&self, dt: f64) -> TrimPlan {
        let mut left = dt;
        let mut out = Vec::new();
        for s in &self.segments {
            if left >= s.duration {
                left -= s.duration;
                continue;
            }
            out.push(PlanSegment {
                trim: s.trim,
                duration: s.duration - left.max(0.0),
            });
            left = 0.0;
        }
        TrimPlan { segments: out }
    }

    /// The first `dt` seconds of the plan.
    pub fn prefix(&self, dt: f64) -> TrimPlan {
        let mut left = dt;
        let mut out = Vec::new();
        for s in &self.segments {
            if left <= 0.0 {
                break;
            }
            let take = s.duration.min(left);
            out.push(PlanSegment {
                trim: s.trim,
                duration: take,
            });
            left -= take;
        }
        TrimPlan { segments: out }
    }

    /// Appends rest so that the plan lasts `total` seconds.
    pub fn pad_with_rest(&self, total: f64) -> TrimPlan {
        let mut p = self.clone();
        let missing = total - p.duration();
        if missing > 0.0 {
            match p.segments.last_mut() {
                Some(last) if last.trim == REST_ID => last.duration += missing,
                _ => p.segments.push(PlanSegment {
                    trim: REST_ID,
                    duration: missing,
                }),
            }
        }
        p
    }

    pub fn to_control(&self, lib: &TrimLibrary) -> Result<PiecewiseControl> {
        let segs = self
            .segments
            .iter()
            .map(|s| Ok((lib.control(s.trim)?, s.duration)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PiecewiseControl { segments: segs })
    }
}

/// One constant piece of a [`PlanTrajectory`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPiece {
    pub t_start: f64,
    pub duration: f64,
    pub trim: u32,
    pub control: ControlValue,
    pub start: State,
}

impl TrajectoryPiece {
    pub fn state_at(&self, t: f64) -> State {
        xi_from(&self.control, &self.start)
            .exp(t - self.t_start)
            .act(&self.start)
    }

    /// Group element carrying the start of the piece to its end.
    pub fn transport(&self) -> GroupElement {
        xi_from(&self.control, &self.start).exp(self.duration)
    }
}

/// Closed-form trajectory of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTrajectory {
    pub x0: State,
    pub pieces: Vec<TrajectoryPiece>,
    pub endpoint: State,
}

impl PlanTrajectory {
    pub fn duration(&self) -> f64 {
        self.pieces.last().map(|p| p.t_start + p.duration).unwrap_or(0.0)
    }

    /// State at time `t`, clamped to `[0, duration]`.
    pub fn state_at(&self, t: f64) -> State {
        if t <= 0.0 || self.pieces.is_empty() {
            return self.x0;
        }
        match self.pieces.iter().find(|p| t < p.t_start + p.duration) {
            Some(p) => p.state_at(t),
            None => self.endpoint,
        }
    }

    pub fn control_at(&self, t: f64) -> ControlValue {
        self.pieces
            .iter()
            .find(|p| t < p.t_start + p.duration)
            .or(self.pieces.last())
            .map(|p| p.control)
            .unwrap_or_default()
    }

    /// Samples `(t, state, control)` at spacing at most `dt`, always
    /// including the start, every switching instant, and the end. The
    /// control is the one active from that instant on; at the end it is the
    /// last applied one.
    pub fn sample(&self, dt: f64) -> Vec<(f64, State, ControlValue)> {
        let mut out = Vec::new();
        let last_u = self.pieces.last().map(|p| p.control).unwrap_or_default();
        for p in &self.pieces {
            if p.duration <= 0.0 {
                continue;
            }
            let n = (p.duration / dt).ceil().max(1.0) as usize;
            for k in 0..n {
                let t = p.t_start + p.duration * k as f64 / n as f64;
                out.push((t, p.state_at(t), p.control));
            }
        }
        out.push((self.duration(), self.endpoint, last_u));
        out
    }
}

/// Closed-form trajectory of `plan` from `x0`. Each piece recomputes its
/// generator from the state where it starts.
pub fn plan_flow(lib: &TrimLibrary, plan: &TrimPlan, x0: &State) -> Result<PlanTrajectory> {
    plan.validate(lib)?;
    let mut pieces = Vec::with_capacity(plan.segments.len());
    let mut x = *x0;
    let mut t = 0.0;
    for s in &plan.segments {
        let piece = TrajectoryPiece {
            t_start: t,
            duration: s.duration,
            trim: s.trim,
            control: lib.control(s.trim)?,
            start: x,
        };
        x = piece.transport().act(&x);
        t += s.duration;
        pieces.push(piece);
    }
    Ok(PlanTrajectory {
        x0: *x0,
        pieces,
        endpoint: x,
    })
}

/// Cost rate of a trim started at `x0`; the cost of holding it for `τ`
/// seconds is `τ · unit_cost` when the cost is invariant.
pub fn unit_cost<C: RunningCost + ?Sized>(trim: &TrimPrimitive, x0: &State, cost: &C) -> f64 {
    cost.rate_at(x0, &trim.control())
}

/// Total cost of a plan under an invariant cost.
pub fn plan_cost<C: RunningCost + ?Sized>(lib: &TrimLibrary, plan: &TrimPlan, x0: &State, cost: &C) -> Result<f64> {
    let traj = plan_flow(lib, plan, x0)?;
    Ok(traj
        .pieces
        .iter()
        .map(|p| p.duration * cost.rate_at(&p.start, &p.control))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{NormKind, StageCost};
    use std::f64::consts::PI;

    #[test]
    fn default_library_entries() {
        let lib = default_library();
        lib.validate().unwrap();
        assert_eq!(lib.control(2).unwrap(), ControlValue::new(1.5, 0.0));
        assert_eq!(lib.get(2).unwrap().name, "move straight");
        assert_eq!(lib.control(5).unwrap(), ControlValue::new(0.0, 1.0));
        assert!(lib.get(1).unwrap().is_rest());
    }

    #[test]
    fn validation_names_both_ids() {
        let lib = TrimLibrary {
            trims: vec![
                TrimPrimitive::new(2, 1.0, 0.0, ""),
                TrimPrimitive::new(7, 1.0, 0.0, ""),
            ],
        };
        let msg = lib.validate().unwrap_err().to_string();
        assert!(msg.contains('2') && msg.contains('7'));
        let dup = TrimLibrary {
            trims: vec![TrimPrimitive::new(2, 1.0, 0.0, ""), TrimPrimitive::new(2, 0.0, 1.0, "")],
        };
        assert!(dup.validate().is_err());
        let bad_rest = TrimLibrary {
            trims: vec![TrimPrimitive::new(1, 1.0, 0.0, "")],
        };
        assert!(bad_rest.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let lib = default_library();
        let s = serde_json::to_string(&lib).unwrap();
        assert!(s.starts_with('['));
        assert_eq!(TrimLibrary::from_json(&s).unwrap(), lib);
    }

    #[test]
    fn rest_plan_stays_put() {
        let x0 = State::new(1.0, -2.0, 0.4);
        let t = plan_flow(&default_library(), &TrimPlan::new([(1, 3.0)]), &x0).unwrap();
        assert_eq!(t.endpoint, x0);
    }

    #[test]
    fn straight_plan() {
        let t = plan_flow(
            &default_library(),
            &TrimPlan::new([(2, 4.0 / 3.0)]),
            &State::new(-2.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(t.endpoint.raw_distance(&State::origin()) < 1e-15);
    }

    #[test]
    fn trajectory_is_continuous_at_switches() {
        let plan = TrimPlan::new([(5, 1.0), (2, 0.5), (4, 2.0)]);
        let traj = plan_flow(&default_library(), &plan, &State::new(0.0, 1.0, 0.0)).unwrap();
        for w in traj.pieces.windows(2) {
            let ts = w[1].t_start;
            let left = w[0].state_at(ts);
            assert!(left.raw_distance(&w[1].start) < 1e-14);
        }
        assert!(traj.state_at(10.0) == traj.endpoint);
    }

    #[test]
    fn sample_includes_switches() {
        let plan = TrimPlan::new([(5, PI), (2, 0.3)]);
        let traj = plan_flow(&default_library(), &plan, &State::origin()).unwrap();
        let s = traj.sample(0.5);
        assert!(s.iter().any(|(t, _, _)| *t == PI));
        assert_eq!(s.last().unwrap().1, traj.endpoint);
    }

    #[test]
    fn unit_costs() {
        let lib = default_library();
        let quad = StageCost::quadratic();
        assert_eq!(unit_cost(lib.get(1).unwrap(), &State::origin(), &quad), 0.0);
        assert_eq!(unit_cost(lib.get(2).unwrap(), &State::origin(), &quad), 2.25);
        let mixed = StageCost::quadratic().with_norm(0.5, NormKind::L2);
        let v = unit_cost(lib.get(4).unwrap(), &State::origin(), &mixed);
        assert!((v - (1.0625 + 0.5 * 1.0625f64.sqrt())).abs() < 1e-15);
        assert!((v - 1.5779).abs() < 1e-4);
    }

    #[test]
    fn canonical_merges_and_drops() {
        let p = TrimPlan::new([(2, 0.5), (2, 0.25), (5, 0.0), (3, 1.0), (1, 0.0), (1, 2.0)]);
        assert_eq!(p.canonical(), TrimPlan::new([(2, 0.75), (3, 1.0), (1, 2.0)]));
        assert_eq!(p.canonical().without_trailing_rest(), TrimPlan::new([(2, 0.75), (3, 1.0)]));
    }

    #[test]
    fn advance_and_prefix_split_the_plan() {
        let p = TrimPlan::new([(2, 0.5), (3, 1.0), (1, 2.0)]);
        assert_eq!(p.advance(0.75), TrimPlan::new([(3, 0.75), (1, 2.0)]));
        assert_eq!(p.prefix(0.75), TrimPlan::new([(2, 0.5), (3, 0.25)]));
        assert!(p.advance(10.0).is_empty());
        assert_eq!(TrimPlan::new([(2, 1.0)]).pad_with_rest(3.0), TrimPlan::new([(2, 1.0), (1, 2.0)]));
    }
}
