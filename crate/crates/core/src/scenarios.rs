//! Ready-made problems used by the command-line tool, the verification
//! suites and the benchmarks.

use crate::costs::{ControlSet, Horizon, NormKind, ProblemSpec, StageCost};
use crate::mpc::MpcConfig;
use crate::ocp::GridControlSet;
use crate::symmetry::State;
use crate::trim::default_library;

/// Straight-line approach from `(−2, 0, 0)` with `T = 1`, `ℓ = ‖u‖²` and
/// controls on a grid of spacing `du` inside `[−2, 2]²`.
pub fn line_problem(du: f64) -> ProblemSpec {
    ProblemSpec {
        x_hat: State::new(-2.0, 0.0, 0.0),
        x_star: State::origin(),
        horizon: Horizon::Fixed(1.0),
        max_segments: 4,
        control_set: ControlSet::Grid(GridControlSet::new(du, [2.0, 2.0]).expect("valid grid")),
        state_box: None,
        cost: StageCost::quadratic(),
    }
}

/// Sampling used with [`line_problem`].
pub fn line_config() -> MpcConfig {
    MpcConfig {
        delta: 0.1,
        stop_tol: 1e-6,
        max_steps: 200,
    }
}

/// Sideways displacement `(0, 1, 0) → 0` with the default library, `T = 8`
/// and at most four segments, under the given cost.
pub fn parking_problem(cost: StageCost) -> ProblemSpec {
    ProblemSpec {
        x_hat: State::new(0.0, 1.0, 0.0),
        x_star: State::origin(),
        horizon: Horizon::Fixed(8.0),
        max_segments: 4,
        control_set: ControlSet::Library(default_library()),
        state_box: None,
        cost,
    }
}

/// `ℓ = ‖u‖² + 0.5‖u‖₂`.
pub fn parking_cost() -> StageCost {
    StageCost::quadratic().with_norm(0.5, NormKind::L2)
}

/// `δ = 1` with a 12-step cap.
pub fn parking_config() -> MpcConfig {
    MpcConfig {
        delta: 1.0,
        stop_tol: 1e-6,
        max_steps: 12,
    }
}

/// Parking with the pure time penalty `ℓ = 1` and a free horizon.
pub fn telescope_problem() -> ProblemSpec {
    ProblemSpec {
        horizon: Horizon::Free,
        ..parking_problem(StageCost::time_only(1.0))
    }
}
