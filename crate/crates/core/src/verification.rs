//! Numerical checks of the optimality and stability statements: the
//! uniform-effort improvement, the per-step Lyapunov decrease, the control
//! box threshold `r⋆`, and the value function of the simplified dynamics
//! together with a brute-force oracle for it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{min_eigenvalue, r_norm_sq};
use crate::error::{Error, Result};
use crate::mpc::MpcTrace;
use crate::robot::{flow_piecewise, ControlValue, PiecewiseControl};
use crate::symmetry::{wrap_angle, State};

/// Output of [`improve_nonuniform`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementResult {
    pub improved: PiecewiseControl,
    pub old_cost: f64,
    pub new_cost: f64,
    /// Factor applied to the segment with the larger `‖u‖_R`.
    pub alpha: f64,
    /// Factor applied to the other segment.
    pub beta: f64,
    pub endpoint_residual: f64,
}

fn r_norm(r: &[[f64; 2]; 2], u: &ControlValue) -> f64 {
    r_norm_sq(r, u).max(0.0).sqrt()
}

fn two_segment_cost(r: &[[f64; 2]; 2], c1: f64, c2: f64, segs: &[(ControlValue, f64)]) -> f64 {
    segs.iter()
        .map(|(u, d)| d * (c1 * r_norm_sq(r, u) + c2 * u.u1.hypot(u.u2)))
        .sum()
}

fn check_pair(seg1: &(ControlValue, f64), seg2: &(ControlValue, f64), r: &[[f64; 2]; 2], c1: f64, c2: f64) -> Result<()> {
    if !(seg1.1 > 0.0 && seg2.1 > 0.0 && seg1.1.is_finite() && seg2.1.is_finite()) {
        return Err(Error::InvalidInput("both segment durations must be positive".into()));
    }
    if !(seg1.0.is_finite() && seg2.0.is_finite()) {
        return Err(Error::NonFinite("segment control"));
    }
    if !(c1 >= 0.0 && c2 >= 0.0) {
        return Err(Error::InvalidInput("cost weights must be nonnegative".into()));
    }
    if min_eigenvalue(r) <= 0.0 {
        return Err(Error::InvalidInput("R is not positive definite".into()));
    }
    Ok(())
}

/// Rescales the two segments with a fixed `alpha` on the larger-effort one.
///
/// Scaling a constant control by `s` and its duration by `1/s` traverses the
/// same path, so the endpoint is unchanged. `beta` is fixed by keeping the
/// total duration. Fails when `alpha` leaves `(α_min, 1]`, where the other
/// segment would need a nonpositive duration.
pub fn improve_with_alpha(
    seg1: (ControlValue, f64),
    seg2: (ControlValue, f64),
    r: &[[f64; 2]; 2],
    c1: f64,
    c2: f64,
    alpha: f64,
) -> Result<ImprovementResult> {
    check_pair(&seg1, &seg2, r, c1, c2)?;
    let first_larger = r_norm(r, &seg1.0) > r_norm(r, &seg2.0);
    let (ds, d_o) = if first_larger { (seg1.1, seg2.1) } else { (seg2.1, seg1.1) };
    let alpha_min = ds / (ds + d_o);
    let denom = alpha * (ds + d_o) - ds;
    if !(alpha.is_finite() && alpha <= 1.0 && alpha > alpha_min && denom > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha {alpha} outside ({alpha_min}, 1]"
        )));
    }
    let beta = alpha * d_o / denom;
    let (a1, a2) = if first_larger { (alpha, beta) } else { (beta, alpha) };
    let old = [seg1, seg2];
    let new = vec![(seg1.0.scale(a1), seg1.1 / a1), (seg2.0.scale(a2), seg2.1 / a2)];
    let old_cost = two_segment_cost(r, c1, c2, &old);
    let new_cost = two_segment_cost(r, c1, c2, &new);
    let improved = PiecewiseControl::new(new)?;
    let x0 = State::origin();
    let end_old = flow_piecewise(&x0, &PiecewiseControl::new(old.to_vec())?);
    let end_new = flow_piecewise(&x0, &improved);
    Ok(ImprovementResult {
        improved,
        old_cost,
        new_cost,
        alpha,
        beta,
        endpoint_residual: end_old.raw_distance(&end_new),
    })
}

/// Searches `α ∈ {1 − 2⁻ᵏ}` for the first strict cost decrease. Returns
/// `None` when both segments already have the same `‖u‖_R` (within 1e-9) or
/// no grid point improves.
pub fn improve_nonuniform(
    seg1: (ControlValue, f64),
    seg2: (ControlValue, f64),
    r: &[[f64; 2]; 2],
    c1: f64,
    c2: f64,
) -> Result<Option<ImprovementResult>> {
    check_pair(&seg1, &seg2, r, c1, c2)?;
    if (r_norm(r, &seg1.0) - r_norm(r, &seg2.0)).abs() <= 1e-9 {
        return Ok(None);
    }
    for k in 1..=52 {
        let alpha = 1.0 - 0.5f64.powi(k);
        match improve_with_alpha(seg1, seg2, r, c1, c2, alpha) {
            Ok(res) if res.new_cost < res.old_cost => return Ok(Some(res)),
            _ => continue,
        }
    }
    Ok(None)
}

/// Spread `max − min` of `‖u‖_R` over the segments of positive duration.
pub fn check_uniform_effort(u: &PiecewiseControl, r: &[[f64; 2]; 2]) -> f64 {
    let norms: Vec<f64> = u
        .segments
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|(v, _)| r_norm(r, v))
        .collect();
    spread(&norms)
}

pub(crate) fn spread(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn sq_norm_wrapped(x: &State) -> f64 {
    let h = wrap_angle(x.x3);
    x.x1 * x.x1 + x.x2 * x.x2 + h * h
}

/// Value `‖x̂‖²/T` of the problem where the heading in the position dynamics
/// is replaced by a free, unpenalized control.
pub fn simplified_value(x_hat: &State, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidInput(format!("horizon {t} must be positive")));
    }
    x_hat.ensure_finite("initial state")?;
    Ok(sq_norm_wrapped(x_hat) / t)
}

/// Cost and endpoint of the simplified dynamics
/// `ẋ = (u₁ cos u₃, u₁ sin u₃, u₂)` under `controls.len()` equal-length
/// constant pieces `(u₁, u₂, u₃)`. The heading starts at the wrapped value.
pub fn simplified_rollout(x_hat: &State, t: f64, controls: &[[f64; 3]]) -> (f64, [f64; 3]) {
    let h = t / controls.len().max(1) as f64;
    let mut x = [x_hat.x1, x_hat.x2, wrap_angle(x_hat.x3)];
    let mut cost = 0.0;
    for u in controls {
        x[0] += h * u[0] * u[2].cos();
        x[1] += h * u[0] * u[2].sin();
        x[2] += h * u[1];
        cost += h * (u[0] * u[0] + u[1] * u[1]);
    }
    (cost, x)
}

/// Best cost found by a nested grid search over piecewise-constant controls
/// of the simplified dynamics that steer `x_hat` to the origin.
///
/// The heading part and the planar part decouple. For each part, the first
/// `segments − 1` pieces are searched on a `grid`-point lattice that is
/// recentred and halved around the incumbent 40 times; the last piece is
/// determined by the endpoint condition. The planar velocity `(u₁ cos u₃,
/// u₁ sin u₃)` is searched directly. The result is an upper bound on the
/// value.
pub fn simplified_bruteforce(x_hat: &State, t: f64, segments: usize, grid: usize) -> Result<f64> {
    simplified_value(x_hat, t)?;
    if !(1..=4).contains(&segments) {
        return Err(Error::InvalidInput(format!("segments {segments} not in 1..=4")));
    }
    if grid < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points".into()));
    }
    let heading = nested_grid(&[wrap_angle(x_hat.x3)], t, segments, grid);
    let planar = nested_grid(&[x_hat.x1, x_hat.x2], t, segments, grid);
    Ok(heading + planar)
}

/// Minimizes `h Σ‖v_k‖²` subject to `x + h Σ v_k = 0` over vectors
/// `v_k ∈ ℝ^dim`, the last one eliminated.
fn nested_grid(x: &[f64], t: f64, segments: usize, grid: usize) -> f64 {
    let dim = x.len();
    let h = t / segments as f64;
    let free = (segments - 1) * dim;
    let cost = |v: &[f64]| -> f64 {
        let mut c = 0.0;
        for d in 0..dim {
            let mut sum = 0.0;
            for k in 0..segments - 1 {
                let vk = v[k * dim + d];
                sum += vk;
                c += vk * vk;
            }
            let last = -x[d] / h - sum;
            c += last * last;
        }
        h * c
    };
    if free == 0 {
        return cost(&[]);
    }
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut centre = vec![0.0; free];
    let mut half = 2.0 * scale / t + 1.0;
    let mut best = cost(&centre);
    let points = (grid as u64).pow(free as u32);
    for _ in 0..40 {
        let step = 2.0 * half / (grid - 1) as f64;
        let (c, idx) = (0..points)
            .into_par_iter()
            .map(|i| {
                let v = lattice_point(i, &centre, half, step, grid, free);
                (cost(&v), i)
            })
            .reduce(|| (f64::INFINITY, u64::MAX), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
        if c < best {
            best = c;
            centre = lattice_point(idx, &centre, half, step, grid, free);
        }
        half *= 0.5;
    }
    best
}

fn lattice_point(mut i: u64, centre: &[f64], half: f64, step: f64, grid: usize, free: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(free);
    for c in centre.iter().take(free) {
        let k = (i % grid as u64) as f64;
        i /= grid as u64;
        v.push(c - half + k * step);
    }
    v
}

/// Per-step margin `V(x̂ᵢ) − V(xᵢ₊₁) − (λ_R c₁ δ / T²)‖x̂ᵢ‖²` with the
/// heading wrapped. The value after the last step is the trace's final value
/// when present; otherwise the last step is not checked.
pub fn lyapunov_margin(trace: &MpcTrace, r: &[[f64; 2]; 2], c1: f64, t: f64, delta: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && delta > 0.0 && c1 >= 0.0) {
        return Err(Error::InvalidInput("need T > 0, delta > 0 and c1 >= 0".into()));
    }
    let k = min_eigenvalue(r) * c1 * delta / (t * t);
    let mut next: Vec<Option<f64>> = trace.steps.iter().skip(1).map(|s| Some(s.value)).collect();
    next.push(trace.final_value);
    Ok(trace
        .steps
        .iter()
        .zip(next)
        .filter_map(|(s, vn)| vn.map(|vn| s.value - vn - k * sq_norm_wrapped(&s.state)))
        .collect())
}

fn check_box(r: &[[f64; 2]; 2], ubar: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    if !(ubar.iter().all(|b| b.is_finite() && *b > 0.0)) {
        return Err(Error::InvalidInput("control box bounds must be positive".into()));
    }
    let b = 0.5 * (r[0][1] + r[1][0]);
    let rs = [[r[0][0], b], [b, r[1][1]]];
    if !rs.iter().flatten().all(|v| v.is_finite()) || min_eigenvalue(&rs) <= 0.0 {
        return Err(Error::InvalidInput("R is not positive definite".into()));
    }
    Ok(rs)
}

/// Largest level `r` with `{uᵀRu ≤ r}` inside the box `[−ū₁, ū₁] × [−ū₂, ū₂]`:
/// the minimum of `uᵀRu` over the box boundary, taken facet by facet.
pub fn compute_rstar(r: &[[f64; 2]; 2], ubar: [f64; 2]) -> Result<f64> {
    let r = check_box(r, ubar)?;
    let mut best = f64::INFINITY;
    for fixed in 0..2 {
        let other = 1 - fixed;
        let (a, b, c) = (r[fixed][fixed], r[0][1], r[other][other]);
        // q(s) = a f² + 2 b f s + c s², minimized over |s| ≤ ū_other.
        for f in [-ubar[fixed], ubar[fixed]] {
            let s = (-b * f / c).clamp(-ubar[other], ubar[other]);
            best = best.min(a * f * f + 2.0 * b * f * s + c * s * s);
        }
    }
    Ok(best)
}

/// Samples `n` points on `{uᵀRu = level}` by angle and returns the largest
/// ratio `|uᵢ|/ūᵢ`. A value of at most one means the ellipse is in the box.
pub fn ellipse_box_ratio(r: &[[f64; 2]; 2], ubar: [f64; 2], level: f64, n: usize) -> Result<f64> {
    let r = check_box(r, ubar)?;
    let mut worst = 0.0f64;
    for k in 0..n {
        let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let d = ControlValue::new(th.cos(), th.sin());
        let s = (level / r_norm_sq(&r, &d)).sqrt();
        worst = worst.max((s * d.u1).abs() / ubar[0]).max((s * d.u2).abs() / ubar[1]);
    }
    Ok(worst)
}

/// Random symmetric positive definite 2×2 matrix with eigenvalues in
/// `[0.2, 5]`.
pub fn random_spd(rng: &mut impl Rng) -> [[f64; 2]; 2] {
    let l1 = rng.gen_range(0.2..5.0);
    let l2 = rng.gen_range(0.2..5.0);
    let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s) = (th.cos(), th.sin());
    let off = (l1 - l2) * c * s;
    [[l1 * c * c + l2 * s * s, off], [off, l1 * s * s + l2 * c * c]]
}

/// One entry of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub pass: bool,
    /// Signed distance to the tolerance; negative when the check fails.
    pub worst_margin: f64,
    /// Input that produced the worst margin.
    pub witness: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn new(suite: &str, seed: u64, checks: Vec<CheckResult>) -> Self {
        VerificationReport {
            suite: suite.to_string(),
            seed,
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Seeded generator used by the verification suites.
pub fn suite_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn hand_case() {
        let res = improve_with_alpha(
            (ControlValue::new(1.0, 0.0), 1.0),
            (ControlValue::new(2.0, 0.0), 1.0),
            &I,
            1.0,
            0.0,
            0.9,
        )
        .unwrap();
        assert!((res.beta - 1.125).abs() < 1e-15);
        assert!((res.old_cost - 5.0).abs() < 1e-15);
        assert!((res.new_cost - 4.725).abs() < 1e-12);
        let s = &res.improved.segments;
        assert!((s[0].0.u1 - 1.125).abs() < 1e-15 && (s[1].0.u1 - 1.8).abs() < 1e-15);
        assert!((s[0].1 - 8.0 / 9.0).abs() < 1e-15 && (s[1].1 - 10.0 / 9.0).abs() < 1e-15);
        assert!(res.endpoint_residual < 1e-12);
    }

    #[test]
    fn alpha_outside_region_is_rejected() {
        let seg1 = (ControlValue::new(1.0, 0.0), 1.0);
        let seg2 = (ControlValue::new(2.0, 0.0), 1.0);
        assert!(improve_with_alpha(seg1, seg2, &I, 1.0, 0.0, 0.5).is_err());
        assert!(improve_with_alpha(seg1, seg2, &I, 1.0, 0.0, 1.1).is_err());
    }

    #[test]
    fn uniform_pair_has_no_improvement() {
        let u = ControlValue::new(1.0, 1.0);
        assert!(improve_nonuniform((u, 1.0), (u, 2.0), &I, 1.0, 0.0).unwrap().is_none());
    }

    #[test]
    fn larger_first_segment() {
        let res = improve_nonuniform(
            (ControlValue::new(0.0, 3.0), 0.5),
            (ControlValue::new(1.0, 0.2), 2.0),
            &I,
            1.0,
            0.5,
        )
        .unwrap()
        .unwrap();
        assert!(res.new_cost < res.old_cost);
        assert!((res.improved.duration() - 2.5).abs() < 1e-12);
        assert!(res.endpoint_residual < 1e-9);
    }

    #[test]
    fn uniform_effort_spread() {
        let pc = PiecewiseControl::new(vec![
            (ControlValue::new(1.7, 0.0), 0.2),
            (ControlValue::new(1.6, 0.0), 0.8),
        ])
        .unwrap();
        assert!((check_uniform_effort(&pc, &I) - 0.1).abs() < 1e-12);
        let c = PiecewiseControl::constant(ControlValue::new(1.0, -2.0), 3.0).unwrap();
        assert_eq!(check_uniform_effort(&c, &I), 0.0);
    }

    #[test]
    fn simplified_value_examples() {
        assert_eq!(simplified_value(&State::origin(), 1.0).unwrap(), 0.0);
        assert_eq!(simplified_value(&State::new(3.0, 4.0, 0.0), 1.0).unwrap(), 25.0);
        assert!(simplified_value(&State::origin(), 0.0).is_err());
    }

    #[test]
    fn bruteforce_brackets_value() {
        let th = 1.3;
        let b = simplified_bruteforce(&State::new(0.0, 0.0, th), 2.0, 3, 5).unwrap();
        assert!((b - th * th / 2.0).abs() < 1e-9);
        let b = simplified_bruteforce(&State::new(3.0, 4.0, 0.0), 1.0, 4, 5).unwrap();
        assert!(b >= 25.0 - 1e-9 && b - 25.0 < 1e-3, "{b}");
    }

    #[test]
    fn rstar_examples() {
        assert_eq!(compute_rstar(&I, [2.0, 2.0]).unwrap(), 4.0);
        assert_eq!(compute_rstar(&[[4.0, 0.0], [0.0, 1.0]], [2.0, 2.0]).unwrap(), 4.0);
        let r = [[4.0, -1.5], [-1.5, 1.0]];
        let rs = compute_rstar(&r, [2.0, 2.0]).unwrap();
        // Dense boundary sampling.
        let mut dense = f64::INFINITY;
        let n = 200_000;
        for k in 0..=n {
            let s = -2.0 + 4.0 * k as f64 / n as f64;
            for u in [[2.0, s], [-2.0, s], [s, 2.0], [s, -2.0]] {
                dense = dense.min(r_norm_sq(&r, &ControlValue::new(u[0], u[1])));
            }
        }
        assert!(rs <= dense && dense - rs < 1e-8);
        assert!(ellipse_box_ratio(&r, [2.0, 2.0], rs * (1.0 - 1e-9), 10_000).unwrap() <= 1.0);
        assert!(compute_rstar(&[[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0]).is_err());
    }
}
