//! The finite-horizon optimal control problem over trim sequences.
//!
//! For a fixed sequence of trims the cost `Σ τᵢ ℓ(uⁱ)` is linear in the
//! durations and the endpoint is a smooth function of them, so each sequence
//! is a small equality-constrained problem on a box. [`solve`] enumerates all
//! sequences up to the segment limit and keeps the cheapest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{ControlSet, ProblemSpec};
use crate::error::{Error, Result};
use crate::optim::{minimize_box, solve_linear, BoxOptions};
use crate::robot::{flow_const, ControlValue, PiecewiseControl};
use crate::symmetry::{wrap_angle, xi_from, State};
use crate::trim::{plan_flow, TrimLibrary, TrimPlan, TrimPrimitive, REST_ID};

/// Upper bound on a single duration when the final time is free.
pub const FREE_TIME_CAP: f64 = 100.0;

/// Largest number of raw sequences [`solve`] is willing to enumerate.
pub const MAX_ENUMERATION: u128 = 2_000_000;

/// Uniform grid `{k·du} ∩ [−ū, ū]` in each control component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridControlSet {
    pub du: f64,
    pub bound: [f64; 2],
}

impl GridControlSet {
    pub fn new(du: f64, bound: [f64; 2]) -> Result<Self> {
        let g = GridControlSet { du, bound };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.du.is_finite() && self.du > 0.0) {
            return Err(Error::InvalidInput(format!("grid spacing {} must be positive", self.du)));
        }
        for b in self.bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidInput(format!("grid bound {b} must be nonnegative")));
            }
            let k = b / self.du;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "grid bound {b} is not a multiple of the spacing {}",
                    self.du
                )));
            }
        }
        Ok(())
    }

    fn steps(&self, i: usize) -> i64 {
        (self.bound[i] / self.du).round() as i64
    }

    /// Grid values of one component in increasing order.
    pub fn levels(&self, i: usize) -> Vec<f64> {
        let n = self.steps(i);
        (-n..=n).map(|k| k as f64 * self.du).collect()
    }

    pub fn len(&self) -> usize {
        ((2 * self.steps(0) + 1) * (2 * self.steps(1) + 1)) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rest gets id 1; the other points follow in lexicographic `(u1, u2)`
    /// order with ids from 2.
    pub fn to_library(&self) -> Result<TrimLibrary> {
        self.validate()?;
        let mut trims = vec![TrimPrimitive::new(REST_ID, 0.0, 0.0, "rest")];
        let mut id = REST_ID + 1;
        for u1 in self.levels(0) {
            for u2 in self.levels(1) {
                if u1 == 0.0 && u2 == 0.0 {
                    continue;
                }
                trims.push(TrimPrimitive::new(id, u1, u2, ""));
                id += 1;
            }
        }
        TrimLibrary::new(trims)
    }
}

/// Tuning of the sequence search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Random starting points per sequence.
    pub multistarts: usize,
    pub max_outer: usize,
    /// Accepted endpoint error (position and wrapped heading, max norm).
    pub endpoint_tol: f64,
    /// Relative value difference under which two plans count as tied.
    pub tie_tol: f64,
    /// Window `[0, δ)` whose cost breaks ties; defaults to the shortest
    /// first segment among the tied plans.
    pub tie_delta: Option<f64>,
    pub seed: u64,
    pub parallel: bool,
    /// Plans tried as candidates and as starting points for their sequence.
    #[serde(skip)]
    pub warm_starts: Vec<TrimPlan>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            multistarts: 8,
            max_outer: 200,
            endpoint_tol: 1e-6,
            tie_tol: 1e-9,
            tie_delta: None,
            seed: 0x7215_2023,
            parallel: true,
            warm_starts: Vec::new(),
        }
    }
}

/// Optimal plan for one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    /// Canonical plan; for a fixed horizon its durations sum to `T`.
    pub plan: TrimPlan,
    pub value: f64,
    pub t_star: f64,
    /// Position of `sequence` in the lexicographic enumeration.
    pub sequence_rank: usize,
    /// Trim sequence the plan was optimized over.
    pub sequence: Vec<u32>,
    pub endpoint_error: f64,
}

impl OcpSolution {
    /// Trim ids of the canonical plan.
    pub fn plan_ids(&self) -> Vec<u32> {
        self.plan.ids()
    }

    pub fn controls(&self, lib: &TrimLibrary) -> Result<PiecewiseControl> {
        self.plan.to_control(lib)
    }
}

/// Lexicographic odometer over all id sequences of a fixed length.
#[derive(Clone, Debug)]
pub struct SequenceIter {
    ids: Vec<u32>,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for SequenceIter {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.done {
            return None;
        }
        let out = self.digits.iter().map(|&d| self.ids[d]).collect();
        let mut k = self.digits.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.digits[k] += 1;
            if self.digits[k] < self.ids.len() {
                break;
            }
            self.digits[k] = 0;
        }
        Some(out)
    }
}

/// All `M^S` sequences of length `s` in lexicographic id order.
pub fn enumerate_sequences(lib: &TrimLibrary, s: usize) -> SequenceIter {
    SequenceIter {
        ids: lib.sorted_ids(),
        digits: vec![0; s],
        done: s == 0 || lib.is_empty(),
    }
}

/// Merges adjacent repeats.
pub fn canonical_sequence(seq: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(seq.len());
    for &id in seq {
        if out.last() != Some(&id) {
            out.push(id);
        }
    }
    out
}

fn sequence_rank(sorted_ids: &[u32], seq: &[u32], s: usize) -> usize {
    let m = sorted_ids.len() as u128;
    let mut padded = seq.to_vec();
    while padded.len() < s {
        padded.push(*seq.last().unwrap_or(&sorted_ids[0]));
    }
    let mut r: u128 = 0;
    for id in padded.iter().take(s) {
        let d = sorted_ids.iter().position(|x| x == id).unwrap_or(0) as u128;
        r = r * m + d;
    }
    usize::try_from(r).unwrap_or(usize::MAX)
}

/// Turn–move–turn controls from `x_hat` to `x_star` with forward speed `ū1`
/// and turn rates `±ū2`. Turns take the shorter direction; zero-length turns
/// are kept so the plan always has three pieces.
pub fn feasible_plan(x_hat: &State, x_star: &State, ubar1: f64, ubar2: f64) -> PiecewiseControl {
    if x_hat == x_star {
        return PiecewiseControl::default();
    }
    let (dx, dy) = (x_star.x1 - x_hat.x1, x_star.x2 - x_hat.x2);
    let dist = dx.hypot(dy);
    let bearing = if dist > 0.0 { dy.atan2(dx) } else { x_hat.x3 };
    let a1 = wrap_angle(bearing - x_hat.x3);
    let a2 = wrap_angle(x_star.x3 - bearing);
    let turn = |a: f64| (ControlValue::new(0.0, ubar2.copysign(a)), a.abs() / ubar2);
    PiecewiseControl {
        segments: vec![turn(a1), (ControlValue::new(ubar1, 0.0), dist / ubar1), turn(a2)],
    }
}

/// Turn–move–turn plan using trims of `lib`: the straight trim with the
/// largest speed and the fastest turn-on-the-spot trims. With turns in only
/// one direction, angles are taken modulo 2π in that direction.
pub fn feasible_plan_in(lib: &TrimLibrary, x_hat: &State, x_star: &State) -> Result<TrimPlan> {
    if x_hat == x_star {
        return Ok(TrimPlan::empty());
    }
    let mv = lib
        .trims()
        .iter()
        .filter(|t| t.u2 == 0.0 && t.u1 != 0.0)
        .max_by(|a, b| a.u1.abs().total_cmp(&b.u1.abs()))
        .ok_or_else(|| Error::InvalidInput("library has no straight trim".into()))?;
    let fastest = |sign: f64| {
        lib.trims()
            .iter()
            .filter(|t| t.u1 == 0.0 && t.u2 * sign > 0.0)
            .max_by(|a, b| a.u2.abs().total_cmp(&b.u2.abs()))
    };
    let (left, right) = (fastest(1.0), fastest(-1.0));
    if left.is_none() && right.is_none() {
        return Err(Error::InvalidInput("library has no turn-on-the-spot trim".into()));
    }
    let turn = |a: f64| -> (u32, f64) {
        let ccw = a.rem_euclid(2.0 * std::f64::consts::PI);
        let cw = 2.0 * std::f64::consts::PI - ccw;
        let opt_l = left.map(|t| (t.id, ccw / t.u2.abs()));
        let opt_r = right.map(|t| (t.id, if ccw == 0.0 { 0.0 } else { cw / t.u2.abs() }));
        match (opt_l, opt_r) {
            (Some(l), Some(r)) => {
                if r.1 < l.1 {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!(),
        }
    };
    let (dx, dy) = (x_star.x1 - x_hat.x1, x_star.x2 - x_hat.x2);
    let dist = dx.hypot(dy);
    let mut facing = if dist > 0.0 { dy.atan2(dx) } else { x_hat.x3 };
    if mv.u1 < 0.0 && dist > 0.0 {
        facing += std::f64::consts::PI;
    }
    let t1 = turn(facing - x_hat.x3);
    let t3 = turn(x_star.x3 - facing);
    Ok(TrimPlan::new([t1, (mv.id, dist / mv.u1.abs()), t3]))
}

/// Per-problem data shared by all sequence solves.
struct Context<'a> {
    p: &'a ProblemSpec,
    lib: TrimLibrary,
    opts: &'a SolveOptions,
    tmt: Option<TrimPlan>,
}

#[derive(Clone, Debug)]
struct Candidate {
    rank: usize,
    sequence: Vec<u32>,
    durations: Vec<f64>,
    value: f64,
    endpoint_error: f64,
    incumbent: bool,
}

fn endpoint(x0: &State, us: &[ControlValue], tau: &[f64]) -> State {
    us.iter().zip(tau).fold(*x0, |x, (u, t)| flow_const(&x, u, *t))
}

/// Endpoint error as `[Δx1, Δx2, 2 sin(Δx3/2)]`, which vanishes exactly when
/// headings agree modulo 2π.
fn residual(end: &State, target: &State) -> [f64; 3] {
    [
        end.x1 - target.x1,
        end.x2 - target.x2,
        2.0 * (0.5 * (end.x3 - target.x3)).sin(),
    ]
}

fn endpoint_error(end: &State, target: &State) -> f64 {
    let e = end.error_to(target);
    e[0].abs().max(e[1].abs()).max(e[2].abs())
}

/// Endpoint and its derivatives with respect to each duration.
///
/// Lengthening segment `i` by `ε` composes the whole remaining motion with
/// `exp(ξᵢ ε)` on the left, because later trims commute with the group
/// action. So `∂x_end/∂τᵢ` is the infinitesimal action of `ξᵢ` at `x_end`.
fn endpoint_jacobian(x0: &State, us: &[ControlValue], tau: &[f64]) -> (State, Vec<[f64; 3]>) {
    let mut x = *x0;
    let mut xis = Vec::with_capacity(us.len());
    for (u, t) in us.iter().zip(tau) {
        xis.push(xi_from(u, &x));
        x = flow_const(&x, u, *t);
    }
    let jac = xis
        .iter()
        .map(|xi| [xi.v1 - xi.omega * x.x2, xi.v2 + xi.omega * x.x1, xi.omega])
        .collect();
    (x, jac)
}

struct SequenceProblem<'a> {
    x0: State,
    target: State,
    us: Vec<ControlValue>,
    rates: Vec<f64>,
    horizon: Option<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    opts: &'a SolveOptions,
}

impl SequenceProblem<'_> {
    fn n(&self) -> usize {
        self.us.len()
    }

    fn constraints(&self, tau: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (end, jac) = endpoint_jacobian(&self.x0, &self.us, tau);
        let r = residual(&end, &self.target);
        let half = 0.5 * (end.x3 - self.target.x3);
        let mut c = r.to_vec();
        let mut dc: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                jac.iter()
                    .map(|col| if j == 2 { half.cos() * col[2] } else { col[j] })
                    .collect()
            })
            .collect();
        if let Some(t) = self.horizon {
            c.push(tau.iter().sum::<f64>() - t);
            dc.push(vec![1.0; self.n()]);
        }
        (c, dc)
    }

    fn value(&self, tau: &[f64]) -> f64 {
        self.rates.iter().zip(tau).map(|(r, t)| r * t).sum()
    }

    /// Augmented Lagrangian outer loop followed by a Newton projection onto
    /// the constraint set.
    fn solve_from(&self, start: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut tau: Vec<f64> = start.to_vec();
        let m = if self.horizon.is_some() { 4 } else { 3 };
        // Reaching the constraint set first keeps the linear objective from
        // collapsing all durations onto a stationary point of the penalty.
        if !self.restore(&mut tau) {
            return tau;
        }
        let mut lambda = self.multiplier_estimate(&tau);
        let mut mu = 100.0;
        let mut prev = f64::INFINITY;
        let mut gtol = 1e-4;
        let scale = 1.0 + self.rates.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        for outer in 0..self.opts.max_outer {
            let fg = |x: &[f64], g: &mut [f64]| {
                let (c, dc) = self.constraints(x);
                let mut f = self.value(x);
                g.copy_from_slice(&self.rates);
                for j in 0..m {
                    let w = lambda[j] + mu * c[j];
                    f += lambda[j] * c[j] + 0.5 * mu * c[j] * c[j];
                    for i in 0..n {
                        g[i] += w * dc[j][i];
                    }
                }
                f
            };
            let inner = BoxOptions {
                max_iter: 40,
                gtol: gtol * scale,
            };
            tau = minimize_box(fg, &tau, &self.lo, &self.hi, inner).x;
            let (c, _) = self.constraints(&tau);
            let viol = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if viol <= 1e-9 && gtol <= 1e-10 {
                break;
            }
            // A start that is still far from feasible after many updates
            // sits in the basin of a spurious local minimizer of ‖c‖.
            if (outer >= 25 && viol > 1e-3) || (mu >= 1e8 && viol > 0.9 * prev) || (outer >= 8 && viol > 1e-7) {
                break;
            }
            for j in 0..m {
                lambda[j] += mu * c[j];
            }
            if viol > 0.25 * prev {
                mu = (mu * 10.0).min(1e8);
            }
            gtol = (0.1 * gtol).max(1e-10);
            prev = viol;
        }
        self.project(&mut tau);
        self.snap_small(tau)
    }

    fn violation(&self, tau: &[f64]) -> f64 {
        self.constraints(tau).0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Minimizers where some durations vanish are approached slowly by the
    /// penalty iterations. Zeroes the short durations one at a time, shortest
    /// first, and keeps each projected result that is feasible and cheaper.
    fn snap_small(&self, tau: Vec<f64>) -> Vec<f64> {
        let feasible = |t: &[f64]| self.violation(t) <= 1e-10;
        let mut best_val = if feasible(&tau) { self.value(&tau) } else { f64::INFINITY };
        let total = tau.iter().sum::<f64>().max(1.0);
        let mut order: Vec<usize> = (0..self.n()).filter(|&i| tau[i] > 0.0 && tau[i] < 0.05 * total).collect();
        order.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]));
        let mut best = tau;
        for i in order {
            let mut t = best.clone();
            t[i] = 0.0;
            self.project(&mut t);
            if feasible(&t) && self.value(&t) < best_val - 1e-12 {
                best_val = self.value(&t);
                best = t;
            }
        }
        best
    }

    /// Levenberg–Marquardt on `‖c(τ)‖²` over the box. Returns whether the
    /// constraints were met to `1e-9`.
    fn restore(&self, tau: &mut [f64]) -> bool {
        let n = self.n();
        let mut nu = 1e-6;
        let (mut c, mut dc) = self.constraints(tau);
        let mut norm2: f64 = c.iter().map(|v| v * v).sum();
        for _ in 0..200 {
            if c.iter().all(|v| v.abs() <= 1e-9) {
                return true;
            }
            let m = c.len();
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for i in 0..n {
                for k in 0..n {
                    a[i][k] = (0..m).map(|j| dc[j][i] * dc[j][k]).sum();
                }
                a[i][i] += nu * (1.0 + a[i][i]);
                b[i] = -(0..m).map(|j| dc[j][i] * c[j]).sum::<f64>();
            }
            let Some(step) = solve_linear(a, b) else {
                nu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = (0..n)
                .map(|i| (tau[i] + step[i]).clamp(self.lo[i], self.hi[i]))
                .collect();
            let (ct, dct) = self.constraints(&trial);
            let nt: f64 = ct.iter().map(|v| v * v).sum();
            if nt < norm2 {
                tau.copy_from_slice(&trial);
                c = ct;
                dc = dct;
                let rel = (norm2 - nt) / norm2;
                norm2 = nt;
                nu = (nu * 0.1).max(1e-12);
                if rel < 1e-6 && norm2 > 1e-12 {
                    return false;
                }
            } else {
                nu *= 10.0;
                if nu > 1e8 {
                    return false;
                }
            }
        }
        c.iter().all(|v| v.abs() <= 1e-9)
    }

    /// Least-squares multipliers `λ = −(J Jᵀ)⁻¹ J r` over the free durations.
    fn multiplier_estimate(&self, tau: &[f64]) -> Vec<f64> {
        let (c, dc) = self.constraints(tau);
        let m = c.len();
        let free: Vec<usize> = (0..self.n())
            .filter(|&i| tau[i] > self.lo[i] && tau[i] < self.hi[i])
            .collect();
        let a: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                (0..m)
                    .map(|k| free.iter().map(|&i| dc[j][i] * dc[k][i]).sum::<f64>() + if j == k { 1e-10 } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..m)
            .map(|j| -free.iter().map(|&i| dc[j][i] * self.rates[i]).sum::<f64>())
            .collect();
        solve_linear(a, b).unwrap_or_else(|| vec![0.0; m])
    }

    /// Gauss–Newton minimum-norm steps on the variables off their bounds.
    fn project(&self, tau: &mut [f64]) {
        for _ in 0..20 {
            let (c, dc) = self.constraints(tau);
            let viol = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if viol <= 1e-14 {
                return;
            }
            let free: Vec<usize> = (0..self.n())
                .filter(|&i| tau[i] > self.lo[i] && tau[i] < self.hi[i])
                .collect();
            if free.is_empty() {
                return;
            }
            let m = c.len();
            let a: Vec<Vec<f64>> = (0..m)
                .map(|j| {
                    (0..m)
                        .map(|k| {
                            free.iter().map(|&i| dc[j][i] * dc[k][i]).sum::<f64>()
                                + if j == k { 1e-14 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let Some(y) = solve_linear(a, c.clone()) else {
                return;
            };
            let mut trial = tau.to_vec();
            for &i in &free {
                let step: f64 = (0..m).map(|j| dc[j][i] * y[j]).sum();
                trial[i] = (trial[i] - step).clamp(self.lo[i], self.hi[i]);
            }
            let (ct, _) = self.constraints(&trial);
            let vt = ct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if vt >= viol {
                return;
            }
            tau.copy_from_slice(&trial);
        }
    }
}

impl Context<'_> {
    fn new<'a>(p: &'a ProblemSpec, opts: &'a SolveOptions) -> Result<Context<'a>> {
        let lib = p.control_set.to_library()?;
        let tmt = feasible_plan_in(&lib, &p.x_hat, &p.x_star).ok();
        Ok(Context { p, lib, opts, tmt })
    }

    fn fixed_horizon(&self) -> Option<f64> {
        self.p.horizon.fixed()
    }

    fn solve_sequence(&self, seq: &[u32], rank: usize, extra: &[Vec<f64>]) -> Result<Candidate> {
        let p = self.p;
        let us = seq
            .iter()
            .map(|&id| self.lib.control(id))
            .collect::<Result<Vec<_>>>()?;
        let horizon = self.fixed_horizon();
        if horizon.is_none() && us.iter().any(ControlValue::is_zero) {
            return Err(Error::InvalidInput(
                "rest trims are not used when the final time is free".into(),
            ));
        }
        let rates: Vec<f64> = us.iter().map(|u| p.cost.rate(u)).collect();
        let n = seq.len();
        let at_target = endpoint_error(&p.x_hat, &p.x_star) <= self.opts.endpoint_tol;
        if us.iter().all(ControlValue::is_zero) {
            if !at_target {
                return Err(Error::Degenerate {
                    sequence: seq.to_vec(),
                });
            }
            let mut durations = vec![0.0; n];
            durations[0] = horizon.unwrap_or(0.0);
            return Ok(Candidate {
                rank,
                sequence: seq.to_vec(),
                value: rates[0] * durations[0],
                durations,
                endpoint_error: endpoint_error(&p.x_hat, &p.x_star),
                incumbent: false,
            });
        }
        let cap = horizon.unwrap_or(FREE_TIME_CAP);
        let sp = SequenceProblem {
            x0: p.x_hat,
            target: p.x_star,
            us,
            rates,
            horizon,
            lo: vec![0.0; n],
            hi: vec![cap; n],
            opts: self.opts,
        };
        let mut starts: Vec<Vec<f64>> = extra.iter().filter(|s| s.len() == n).cloned().collect();
        if let Some(s) = self.tmt_start(seq) {
            starts.push(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ (rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let scale = self.free_time_scale();
        for _ in 0..self.opts.multistarts {
            let s: Vec<f64> = match horizon {
                Some(t) => {
                    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let total: f64 = e.iter().sum();
                    e.iter().map(|v| t * v / total).collect()
                }
                None => (0..n).map(|_| rng.gen::<f64>() * 2.0 * scale / n as f64).collect(),
            };
            starts.push(s);
        }
        let mut best: Option<Candidate> = None;
        for s in &starts {
            let mut tau = sp.solve_from(s);
            for t in tau.iter_mut() {
                if *t < 1e-12 {
                    *t = 0.0;
                }
            }
            let end = endpoint(&p.x_hat, &sp.us, &tau);
            let err = endpoint_error(&end, &p.x_star);
            if err > self.opts.endpoint_tol {
                continue;
            }
            if let Some(t) = horizon {
                if (tau.iter().sum::<f64>() - t).abs() > 1e-9 {
                    continue;
                }
            }
            if !self.box_ok(seq, &tau) {
                continue;
            }
            let value = sp.value(&tau);
            if best.as_ref().is_none_or(|b| value < b.value) {
                best = Some(Candidate {
                    rank,
                    sequence: seq.to_vec(),
                    durations: tau,
                    value,
                    endpoint_error: err,
                    incumbent: false,
                });
            }
        }
        best.ok_or_else(|| Error::Infeasible {
            sequence: seq.to_vec(),
        })
    }

    fn free_time_scale(&self) -> f64 {
        let p = self.p;
        let umax1 = self.lib.trims().iter().fold(0.0f64, |m, t| m.max(t.u1.abs()));
        let umax2 = self.lib.trims().iter().fold(0.0f64, |m, t| m.max(t.u2.abs()));
        let dist = (p.x_star.x1 - p.x_hat.x1).hypot(p.x_star.x2 - p.x_hat.x2);
        let mut s = 1.0;
        if umax1 > 0.0 {
            s += dist / umax1;
        }
        if umax2 > 0.0 {
            s += 2.0 * std::f64::consts::PI / umax2;
        }
        s
    }

    /// Turn–move–turn durations when `seq` is exactly that pattern, possibly
    /// followed by rest.
    fn tmt_start(&self, seq: &[u32]) -> Option<Vec<f64>> {
        let tmt = self.tmt.as_ref()?;
        let ids = tmt.ids();
        let mut d = tmt.durations();
        match self.fixed_horizon() {
            Some(t) => {
                let used: f64 = d.iter().sum();
                if used > t {
                    return None;
                }
                if seq.len() == 4 && seq[..3] == ids[..] && seq[3] == REST_ID {
                    d.push(t - used);
                    Some(d)
                } else if seq == ids.as_slice() {
                    let scale = t / used;
                    Some(d.iter().map(|v| v * scale).collect())
                } else {
                    None
                }
            }
            None => (seq == ids.as_slice()).then_some(d),
        }
    }

    fn box_ok(&self, seq: &[u32], tau: &[f64]) -> bool {
        let Some(b) = &self.p.state_box else {
            return true;
        };
        let plan = TrimPlan::new(seq.iter().copied().zip(tau.iter().copied()));
        match plan_flow(&self.lib, &plan, &self.p.x_hat) {
            Ok(traj) => traj.sample(1e-2).iter().all(|(_, x, _)| b.contains(x)),
            Err(_) => false,
        }
    }

    fn candidate_sequences(&self) -> Result<Vec<(usize, Vec<u32>)>> {
        let s = self.p.max_segments;
        let total = (self.lib.len() as u128).checked_pow(s as u32).unwrap_or(u128::MAX);
        if total > MAX_ENUMERATION {
            return Err(Error::InvalidInput(format!(
                "{} trims over {s} segments give {total} sequences, too many for exhaustive search",
                self.lib.len()
            )));
        }
        let free = self.fixed_horizon().is_none();
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (rank, raw) in enumerate_sequences(&self.lib, s).enumerate() {
            let c = canonical_sequence(&raw);
            let rest_inside = c[..c.len() - 1].contains(&REST_ID);
            // Rest before the last segment can always be moved to the end
            // without changing the endpoint or the cost.
            if rest_inside || (free && c.contains(&REST_ID)) {
                continue;
            }
            if seen.insert(c.clone()) {
                out.push((rank, c));
            }
        }
        Ok(out)
    }

    fn early_cost(&self, c: &Candidate, delta: f64) -> f64 {
        let mut left = delta;
        let mut acc = 0.0;
        for (id, t) in c.sequence.iter().zip(&c.durations) {
            if left <= 0.0 {
                break;
            }
            let take = t.min(left);
            if let Ok(u) = self.lib.control(*id) {
                acc += take * self.p.cost.rate(&u);
            }
            left -= take;
        }
        acc
    }

    fn into_solution(&self, c: Candidate) -> OcpSolution {
        let plan = TrimPlan::new(c.sequence.iter().copied().zip(c.durations.iter().copied())).canonical();
        let t_star = plan.duration();
        OcpSolution {
            plan,
            value: c.value,
            t_star,
            sequence_rank: c.rank,
            sequence: c.sequence,
            endpoint_error: c.endpoint_error,
        }
    }

    /// Candidate from an existing plan, kept only if it meets the endpoint.
    fn plan_candidate(&self, plan: &TrimPlan) -> Option<Candidate> {
        let mut plan = plan.canonical();
        if let Some(t) = self.fixed_horizon() {
            plan = plan.pad_with_rest(t);
            if (plan.duration() - t).abs() > 1e-9 {
                return None;
            }
        }
        if plan.is_empty() || plan.segments.len() > self.p.max_segments {
            return None;
        }
        let traj = plan_flow(&self.lib, &plan, &self.p.x_hat).ok()?;
        let err = endpoint_error(&traj.endpoint, &self.p.x_star);
        if err > self.opts.endpoint_tol || !self.box_ok(&plan.ids(), &plan.durations()) {
            return None;
        }
        let value = plan
            .segments
            .iter()
            .map(|s| s.duration * self.p.cost.rate(&self.lib.control(s.trim).unwrap_or_default()))
            .sum();
        let ids = plan.ids();
        Some(Candidate {
            rank: sequence_rank(&self.lib.sorted_ids(), &ids, self.p.max_segments),
            sequence: ids,
            durations: plan.durations(),
            value,
            endpoint_error: err,
            incumbent: true,
        })
    }

    fn select(&self, mut cands: Vec<Candidate>) -> Option<Candidate> {
        let best = cands.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return None;
        }
        let tol = self.opts.tie_tol * best.abs().max(1.0);
        cands.retain(|c| c.value <= best + tol);
        let delta = self.opts.tie_delta.unwrap_or_else(|| {
            cands
                .iter()
                .filter_map(|c| c.durations.iter().copied().find(|t| *t > 0.0))
                .fold(f64::INFINITY, f64::min)
        });
        let delta = if delta.is_finite() { delta } else { 0.0 };
        let early: Vec<f64> = cands.iter().map(|c| self.early_cost(c, delta)).collect();
        let top = early.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let etol = self.opts.tie_tol * top.abs().max(1.0);
        let mut kept: Vec<Candidate> = cands
            .into_iter()
            .zip(early)
            .filter(|(_, e)| *e >= top - etol)
            .map(|(c, _)| c)
            .collect();
        kept.sort_by(|a, b| b.incumbent.cmp(&a.incumbent).then(a.rank.cmp(&b.rank)));
        kept.into_iter().next()
    }

    /// Exact solution when start and target lie on one straight line along
    /// the common heading and the control set is a grid: the two grid speeds
    /// adjacent to `d/T`, faster one first.
    fn straight_line(&self) -> Option<OcpSolution> {
        let p = self.p;
        let t = self.fixed_horizon()?;
        let ControlSet::Grid(_) = p.control_set else {
            return None;
        };
        if p.cost.r[0][1] != 0.0 || p.cost.r[1][0] != 0.0 {
            return None;
        }
        if wrap_angle(p.x_star.x3 - p.x_hat.x3).abs() > 1e-12 {
            return None;
        }
        if let Some(b) = &p.state_box {
            if !b.contains(&p.x_hat) {
                return None;
            }
        }
        let (s, c) = p.x_hat.x3.sin_cos();
        let (dx, dy) = (p.x_star.x1 - p.x_hat.x1, p.x_star.x2 - p.x_hat.x2);
        if (-s * dx + c * dy).abs() > 1e-12 {
            return None;
        }
        let d = c * dx + s * dy;
        let v = d / t;
        let mut levels: Vec<&TrimPrimitive> = self.lib.trims().iter().filter(|tr| tr.u2 == 0.0).collect();
        levels.sort_by(|a, b| a.u1.total_cmp(&b.u1));
        let mk = |segs: Vec<(u32, f64)>| -> OcpSolution {
            let value = segs
                .iter()
                .map(|(id, dur)| dur * p.cost.rate(&self.lib.control(*id).unwrap_or_default()))
                .sum();
            let ids: Vec<u32> = segs.iter().map(|s| s.0).collect();
            let plan = TrimPlan::new(segs.clone()).canonical();
            let traj = plan_flow(&self.lib, &plan, &p.x_hat).ok();
            OcpSolution {
                t_star: plan.duration(),
                plan,
                value,
                sequence_rank: sequence_rank(&self.lib.sorted_ids(), &ids, p.max_segments),
                sequence: ids,
                endpoint_error: traj.map_or(0.0, |tr| endpoint_error(&tr.endpoint, &p.x_star)),
            }
        };
        if let Some(l) = levels.iter().find(|l| (l.u1 - v).abs() <= 1e-9) {
            return Some(mk(vec![(l.id, t)]));
        }
        if p.max_segments < 2 {
            return None;
        }
        let k = levels.iter().position(|l| l.u1 > v)?;
        if k == 0 {
            return None;
        }
        let (lo, hi) = (levels[k - 1], levels[k]);
        let tau_hi = (d - lo.u1 * t) / (hi.u1 - lo.u1);
        let mut segs = vec![(hi.id, tau_hi), (lo.id, t - tau_hi)];
        let effort = |id: u32| p.cost.r_norm_sq(&self.lib.control(id).unwrap_or_default());
        if effort(lo.id) > effort(hi.id) {
            segs.swap(0, 1);
        }
        Some(mk(segs))
    }
}

/// Optimal durations for one trim sequence.
pub fn solve_fixed_sequence(p: &ProblemSpec, seq: &[u32], opts: &SolveOptions) -> Result<OcpSolution> {
    p.validate()?;
    if seq.is_empty() {
        return Err(Error::InvalidInput("empty trim sequence".into()));
    }
    let ctx = Context::new(p, opts)?;
    let rank = sequence_rank(&ctx.lib.sorted_ids(), seq, seq.len());
    let warm: Vec<Vec<f64>> = opts
        .warm_starts
        .iter()
        .filter(|w| w.ids() == seq)
        .map(|w| w.durations())
        .collect();
    let c = ctx.solve_sequence(seq, rank, &warm)?;
    Ok(ctx.into_solution(c))
}

/// Global minimum over all trim sequences with at most `max_segments` pieces.
pub fn solve(p: &ProblemSpec, opts: &SolveOptions) -> Result<OcpSolution> {
    p.validate()?;
    let ctx = Context::new(p, opts)?;
    if let Some(sol) = ctx.straight_line() {
        return Ok(sol);
    }
    if ctx.fixed_horizon().is_none() && endpoint_error(&p.x_hat, &p.x_star) <= opts.endpoint_tol {
        return Ok(OcpSolution {
            plan: TrimPlan::empty(),
            value: 0.0,
            t_star: 0.0,
            sequence_rank: 0,
            sequence: Vec::new(),
            endpoint_error: endpoint_error(&p.x_hat, &p.x_star),
        });
    }
    let seqs = ctx.candidate_sequences()?;
    let warm: Vec<TrimPlan> = opts.warm_starts.iter().map(TrimPlan::canonical).collect();
    let starts_for = |seq: &[u32]| -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for w in &warm {
            let mut w = w.clone();
            if let Some(t) = ctx.fixed_horizon() {
                w = w.pad_with_rest(t);
            }
            if w.ids() == seq {
                out.push(w.durations());
            }
        }
        out
    };
    let eval = |(rank, seq): &(usize, Vec<u32>)| ctx.solve_sequence(seq, *rank, &starts_for(seq)).ok();
    let mut cands: Vec<Candidate> = if opts.parallel {
        seqs.par_iter().filter_map(eval).collect()
    } else {
        seqs.iter().filter_map(eval).collect()
    };
    cands.extend(warm.iter().filter_map(|w| ctx.plan_candidate(w)));
    let best = ctx.select(cands).ok_or_else(|| {
        Error::InitiallyInfeasible(format!(
            "no trim sequence with at most {} segments reaches the target",
            p.max_segments
        ))
    })?;
    Ok(ctx.into_solution(best))
}

/// `V(x̂)`, the optimal value.
pub fn value(p: &ProblemSpec, opts: &SolveOptions) -> Result<f64> {
    solve(p, opts).map(|s| s.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{Horizon, NormKind, StageCost};
    use crate::trim::default_library;
    use std::f64::consts::PI;

    pub(crate) fn line_problem(x1: f64, du: f64) -> ProblemSpec {
        ProblemSpec {
            x_hat: State::new(x1, 0.0, 0.0),
            x_star: State::origin(),
            horizon: Horizon::Fixed(1.0),
            max_segments: 4,
            control_set: ControlSet::Grid(GridControlSet::new(du, [2.0, 2.0]).unwrap()),
            state_box: None,
            cost: StageCost::quadratic(),
        }
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_sequences(&default_library(), 4).count(), 625);
        let one = TrimLibrary::new(vec![TrimPrimitive::new(2, 1.0, 0.0, "")]).unwrap();
        assert_eq!(enumerate_sequences(&one, 3).count(), 1);
        let first: Vec<Vec<u32>> = enumerate_sequences(&default_library(), 2).take(3).collect();
        assert_eq!(first, vec![vec![1, 1], vec![1, 2], vec![1, 3]]);
    }

    #[test]
    fn rank_matches_enumeration() {
        let lib = default_library();
        for (r, s) in enumerate_sequences(&lib, 3).enumerate() {
            assert_eq!(sequence_rank(&lib.sorted_ids(), &s, 3), r);
        }
    }

    #[test]
    fn grid_library_layout() {
        let g = GridControlSet::new(0.5, [1.0, 0.5]).unwrap();
        let lib = g.to_library().unwrap();
        assert_eq!(lib.len(), 15);
        assert_eq!(g.len(), 15);
        assert!(lib.get(REST_ID).unwrap().is_rest());
        assert!(GridControlSet::new(0.3, [1.0, 1.0]).is_err());
    }

    #[test]
    fn feasible_plan_aligned() {
        let pc = feasible_plan(&State::new(-2.0, 0.0, 0.0), &State::origin(), 2.0, 2.0);
        assert_eq!(pc.segments.len(), 3);
        assert_eq!(pc.segments[0].1, 0.0);
        assert_eq!(pc.segments[1], (ControlValue::new(2.0, 0.0), 1.0));
        assert_eq!(pc.segments[2].1, 0.0);
        assert!(feasible_plan(&State::origin(), &State::origin(), 1.0, 1.0).is_empty());
    }

    #[test]
    fn feasible_plan_turn_move_turn() {
        let x0 = State::new(0.0, 1.0, 0.0);
        let pc = feasible_plan(&x0, &State::origin(), 1.5, 1.0);
        assert_eq!(pc.segments[0].0, ControlValue::new(0.0, -1.0));
        assert!((pc.segments[0].1 - PI / 2.0).abs() < 1e-15);
        assert!((pc.segments[1].1 - 1.0 / 1.5).abs() < 1e-15);
        assert_eq!(pc.segments[2].0, ControlValue::new(0.0, 1.0));
        let end = crate::robot::flow_piecewise(&x0, &pc);
        assert!(end.distance_to(&State::origin()) < 1e-9);
    }

    #[test]
    fn feasible_plan_in_default_library() {
        let lib = default_library();
        let x0 = State::new(0.0, 1.0, 0.0);
        let plan = feasible_plan_in(&lib, &x0, &State::origin()).unwrap();
        assert_eq!(plan.ids(), vec![5, 2, 5]);
        let end = plan_flow(&lib, &plan, &x0).unwrap().endpoint;
        assert!(end.distance_to(&State::origin()) < 1e-9);
    }

    #[test]
    fn straight_line_rows() {
        let opts = SolveOptions::default();
        let s = solve(&line_problem(-2.0, 0.1), &opts).unwrap();
        assert_eq!(s.plan.segments.len(), 1);
        assert!((s.value - 4.0).abs() < 1e-12);
        let s = solve(&line_problem(-1.8, 0.1), &opts).unwrap();
        assert!((s.value - 3.24).abs() < 1e-12);
        let s = solve(&line_problem(-0.75, 0.1), &opts).unwrap();
        assert!((s.value - 0.565).abs() < 1e-12);
        let s = solve(&line_problem(-0.21, 0.1), &opts).unwrap();
        assert!((s.value - 0.045).abs() < 1e-12);
    }

    #[test]
    fn fixed_sequence_matches_two_level_solution() {
        let p = line_problem(-1.62, 0.1);
        let lib = p.control_set.to_library().unwrap();
        let id = |u1: f64| lib.trims().iter().find(|t| (t.u1 - u1).abs() < 1e-12 && t.u2 == 0.0).unwrap().id;
        let s = solve_fixed_sequence(&p, &[id(1.7), id(1.6)], &SolveOptions::default()).unwrap();
        let d = s.plan.durations();
        assert!((d[0] - 0.2).abs() < 1e-8 && (d[1] - 0.8).abs() < 1e-8, "{d:?}");
        assert!((s.value - 2.626).abs() < 1e-8);
    }

    #[test]
    fn rest_at_target() {
        let mut p = line_problem(0.0, 0.5);
        p.cost.c3 = 0.5;
        let s = solve_fixed_sequence(&p, &[REST_ID], &SolveOptions::default()).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(s.plan, TrimPlan::new([(REST_ID, 1.0)]));
        let q = line_problem(-1.0, 0.5);
        assert!(matches!(
            solve_fixed_sequence(&q, &[REST_ID], &SolveOptions::default()),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let lib = default_library();
        let us: Vec<ControlValue> = [5, 2, 4, 3].iter().map(|&i| lib.control(i).unwrap()).collect();
        let tau = [0.7, 1.1, 0.4, 2.0];
        let x0 = State::new(0.3, 1.0, -0.2);
        let (_, jac) = endpoint_jacobian(&x0, &us, &tau);
        let h = 1e-6;
        for i in 0..4 {
            let mut a = tau;
            let mut b = tau;
            a[i] += h;
            b[i] -= h;
            let (ea, eb) = (endpoint(&x0, &us, &a), endpoint(&x0, &us, &b));
            let fd = [(ea.x1 - eb.x1) / (2.0 * h), (ea.x2 - eb.x2) / (2.0 * h), (ea.x3 - eb.x3) / (2.0 * h)];
            for j in 0..3 {
                assert!((fd[j] - jac[i][j]).abs() < 1e-8, "{i} {j}");
            }
        }
    }

    #[test]
    fn parking_sequence_is_feasible() {
        let p = ProblemSpec {
            x_hat: State::new(0.0, 1.0, 0.0),
            x_star: State::origin(),
            horizon: Horizon::Fixed(8.0),
            max_segments: 4,
            control_set: ControlSet::Library(default_library()),
            state_box: None,
            cost: StageCost::quadratic().with_norm(0.5, NormKind::L2),
        };
        let s = solve_fixed_sequence(&p, &[5, 2, 4, 1], &SolveOptions::default()).unwrap();
        assert!(s.endpoint_error <= 1e-6);
        assert!((s.plan.duration() - 8.0).abs() < 1e-9);
    }
}
