//! The receding-horizon loop: solve, apply the first `min(δ, T⋆)` seconds of
//! the optimal plan, repeat.

use serde::{Deserialize, Serialize};

use crate::costs::ProblemSpec;
use crate::error::{Error, Result};
use crate::ocp::{solve, OcpSolution, SolveOptions};
use crate::robot::ControlValue;
use crate::symmetry::State;
use crate::trim::{plan_flow, TrimLibrary, TrimPlan};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Sampling interval δ.
    pub delta: f64,
    /// The loop stops once `‖x − x⋆‖` (wrapped heading) is at most this.
    pub stop_tol: f64,
    pub max_steps: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            delta: 0.1,
            stop_tol: 1e-6,
            max_steps: 1000,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidInput(format!("sampling interval {} must be positive", self.delta)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput("stop tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Converged,
    Stalled,
}

/// One iteration of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: State,
    /// Open-loop optimal value at `state`.
    pub value: f64,
    pub solution: OcpSolution,
    /// Part of the plan executed on `[t, t + applied.duration())`.
    pub applied: TrimPlan,
    pub first_control: ControlValue,
    pub step_cost: f64,
    /// Closed-loop cost accumulated before this step.
    pub cost_before: f64,
    pub replanned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcTrace {
    pub steps: Vec<StepRecord>,
    pub final_time: f64,
    pub final_state: State,
    /// Optimal value at the final state when the loop converged.
    pub final_value: Option<f64>,
    pub closed_loop_cost: f64,
    pub termination: Termination,
}

impl MpcTrace {
    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn replanning_times(&self) -> Vec<f64> {
        self.steps.iter().filter(|s| s.replanned).map(|s| s.t).collect()
    }
}

/// True when `curr` is not the continuation of `prev` after `prev_applied`
/// seconds. Trailing rest is ignored on both sides.
pub fn detect_replanning(prev: &OcpSolution, prev_applied: f64, curr: &OcpSolution) -> bool {
    let a = prev.plan.advance(prev_applied).canonical().without_trailing_rest();
    let b = curr.plan.canonical().without_trailing_rest();
    if a.ids() != b.ids() {
        return true;
    }
    let scale = prev.t_star.max(curr.t_star).max(1.0);
    a.segments
        .iter()
        .zip(&b.segments)
        .any(|(x, y)| (x.duration - y.duration).abs() > 1e-6 * scale)
}

fn applied_cost(lib: &TrimLibrary, p: &ProblemSpec, plan: &TrimPlan) -> Result<f64> {
    plan.segments
        .iter()
        .map(|s| Ok(s.duration * p.cost.rate(&lib.control(s.trim)?)))
        .sum()
}

/// Runs the closed loop from `p.x_hat`.
pub fn run(p: &ProblemSpec, cfg: &MpcConfig, opts: &SolveOptions) -> Result<MpcTrace> {
    p.validate()?;
    cfg.validate()?;
    let lib = p.control_set.to_library()?;
    let mut x = p.x_hat;
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut prev: Option<(OcpSolution, f64)> = None;
    let termination = loop {
        if x.distance_to(&p.x_star) <= cfg.stop_tol {
            break Termination::Converged;
        }
        if steps.len() >= cfg.max_steps {
            break Termination::Stalled;
        }
        let mut o = opts.clone();
        o.tie_delta = Some(cfg.delta);
        if let Some((ps, applied)) = &prev {
            o.warm_starts.push(ps.plan.advance(*applied));
        }
        let sol = match solve(&p.with_start(x), &o) {
            Ok(s) => s,
            Err(Error::InitiallyInfeasible(msg)) if !steps.is_empty() => {
                return Err(Error::NotConverged(format!("OCP became infeasible at t = {t}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        let h = cfg.delta.min(sol.t_star);
        let applied = sol.plan.prefix(h);
        let traj = plan_flow(&lib, &sol.plan, &x)?;
        let x_next = if h >= sol.t_star { traj.endpoint } else { traj.state_at(h) };
        let step_cost = applied_cost(&lib, p, &applied)?;
        let replanned = prev
            .as_ref()
            .is_some_and(|(ps, a)| detect_replanning(ps, *a, &sol));
        let first_control = sol
            .plan
            .segments
            .first()
            .map(|s| lib.control(s.trim))
            .transpose()?
            .unwrap_or_default();
        steps.push(StepRecord {
            t,
            state: x,
            value: sol.value,
            solution: sol.clone(),
            applied,
            first_control,
            step_cost,
            cost_before: cost,
            replanned,
        });
        cost += step_cost;
        t += h;
        x = x_next;
        prev = Some((sol, h));
        if h <= 0.0 {
            // An empty plan cannot make progress.
            break Termination::Stalled;
        }
    };
    let final_value = match termination {
        Termination::Converged => Some(solve(&p.with_start(x), opts)?.value),
        Termination::Stalled => None,
    };
    Ok(MpcTrace {
        steps,
        final_time: t,
        final_state: x,
        final_value,
        closed_loop_cost: cost,
        termination,
    })
}

/// Outcome of [`finite_time_bound`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeCheck {
    /// Every step satisfies `V(xᵢ) ≤ V(x₀) − i δ c₃ + 10⁻⁶`.
    pub decrease_holds: bool,
    /// Smallest `V(x₀) − i δ c₃ − V(xᵢ)` over the trace.
    pub worst_slack: f64,
    /// `⌈V(x₀)/(δ c₃)⌉`.
    pub bound: usize,
    pub realized: usize,
}

impl FiniteTimeCheck {
    pub fn holds(&self) -> bool {
        self.decrease_holds && self.realized <= self.bound
    }
}

/// Checks the per-step decrease implied by a positive time weight and the
/// resulting step-count bound.
pub fn finite_time_bound(trace: &MpcTrace, c3: f64, delta: f64) -> Result<FiniteTimeCheck> {
    if !(c3 > 0.0 && delta > 0.0) {
        return Err(Error::InvalidInput("finite-time bound needs c3 > 0 and delta > 0".into()));
    }
    let Some(v0) = trace.steps.first().map(|s| s.value) else {
        return Ok(FiniteTimeCheck {
            decrease_holds: true,
            worst_slack: 0.0,
            bound: 0,
            realized: 0,
        });
    };
    let values = trace.values();
    let worst_slack = values
        .iter()
        .enumerate()
        .map(|(i, v)| v0 - i as f64 * delta * c3 - v)
        .fold(f64::INFINITY, f64::min);
    Ok(FiniteTimeCheck {
        decrease_holds: worst_slack >= -1e-6,
        worst_slack,
        bound: (v0 / (delta * c3) - 1e-9).ceil().max(0.0) as usize,
        realized: trace.steps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{ControlSet, Horizon, StageCost};
    use crate::ocp::GridControlSet;

    fn line(du: f64) -> ProblemSpec {
        ProblemSpec {
            x_hat: State::new(-2.0, 0.0, 0.0),
            x_star: State::origin(),
            horizon: Horizon::Fixed(1.0),
            max_segments: 4,
            control_set: ControlSet::Grid(GridControlSet::new(du, [2.0, 2.0]).unwrap()),
            state_box: None,
            cost: StageCost::quadratic(),
        }
    }

    #[test]
    fn start_at_target_gives_empty_trace() {
        let p = line(0.1).with_start(State::origin());
        let tr = run(&p, &MpcConfig::default(), &SolveOptions::default()).unwrap();
        assert!(tr.steps.is_empty());
        assert_eq!(tr.closed_loop_cost, 0.0);
        assert_eq!(tr.termination, Termination::Converged);
    }

    #[test]
    fn zero_step_cap_stalls() {
        let cfg = MpcConfig {
            max_steps: 0,
            ..MpcConfig::default()
        };
        let tr = run(&line(0.1), &cfg, &SolveOptions::default()).unwrap();
        assert_eq!(tr.termination, Termination::Stalled);
        assert!(tr.steps.is_empty());
    }

    #[test]
    fn first_steps_of_line_problem() {
        let cfg = MpcConfig {
            max_steps: 3,
            ..MpcConfig::default()
        };
        let tr = run(&line(0.1), &cfg, &SolveOptions::default()).unwrap();
        let xs: Vec<f64> = tr.steps.iter().map(|s| s.state.x1).collect();
        assert!((xs[1] + 1.8).abs() < 1e-12 && (xs[2] + 1.62).abs() < 1e-12);
        assert!((tr.steps[2].first_control.u1 - 1.7).abs() < 1e-12);
        assert!(tr.steps[1].replanned);
        assert!(!tr.steps[0].replanned);
    }

    #[test]
    fn replanning_detection() {
        let mk = |plan: TrimPlan| OcpSolution {
            t_star: plan.duration(),
            plan,
            value: 0.0,
            sequence_rank: 0,
            sequence: vec![],
            endpoint_error: 0.0,
        };
        let prev = mk(TrimPlan::new([(5, 1.5), (2, 1.0), (1, 5.5)]));
        let shifted = mk(TrimPlan::new([(5, 0.5), (2, 1.0), (1, 6.5)]));
        assert!(!detect_replanning(&prev, 1.0, &shifted));
        let other = mk(TrimPlan::new([(3, 1.0), (2, 1.0), (1, 6.0)]));
        assert!(detect_replanning(&prev, 1.0, &other));
        let rest = mk(TrimPlan::new([(1, 8.0)]));
        assert!(!detect_replanning(&prev, 8.0, &rest));
    }

    #[test]
    fn finite_time_violation_is_detected() {
        let rec = |value: f64| StepRecord {
            t: 0.0,
            state: State::origin(),
            value,
            solution: OcpSolution {
                plan: TrimPlan::empty(),
                value,
                t_star: 0.0,
                sequence_rank: 0,
                sequence: vec![],
                endpoint_error: 0.0,
            },
            applied: TrimPlan::empty(),
            first_control: ControlValue::zero(),
            step_cost: 0.0,
            cost_before: 0.0,
            replanned: false,
        };
        let trace = MpcTrace {
            steps: vec![rec(5.0), rec(4.5)],
            final_time: 2.0,
            final_state: State::origin(),
            final_value: None,
            closed_loop_cost: 0.0,
            termination: Termination::Stalled,
        };
        let chk = finite_time_bound(&trace, 1.0, 1.0).unwrap();
        assert!(!chk.decrease_holds);
        let empty = MpcTrace {
            steps: vec![],
            ..trace
        };
        assert!(finite_time_bound(&empty, 1.0, 1.0).unwrap().holds());
    }
}
