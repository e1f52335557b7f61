//! Trapezoidal direct collocation of the continuous-control problem with the
//! running cost carried in two extra states: `x4` integrates the full stage
//! cost and `x5` its quadratic part `uᵀRu`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{min_eigenvalue, NormKind};
use crate::error::{Error, Result};
use crate::ocp::feasible_plan;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::robot::ControlValue;
use crate::symmetry::State;

/// States per node.
pub const NX: usize = 5;
/// Controls per node.
pub const NU: usize = 2;
const NZ: usize = NX + NU;

/// Default smoothing of the norm term at `u = 0`.
pub const SMOOTH_EPS: f64 = 1e-8;

/// `√(|u|² + ε²) − ε`, which lies in `[|u| − ε, |u|]`.
pub fn smooth_norm(u: &ControlValue, eps: f64) -> f64 {
    (u.u1 * u.u1 + u.u2 * u.u2 + eps * eps).sqrt() - eps
}

fn smooth_abs(v: f64, eps: f64) -> f64 {
    (v * v + eps * eps).sqrt() - eps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationProblem {
    /// Number of grid points.
    pub n: usize,
    pub t: f64,
    pub x_hat: State,
    pub x_star: State,
    pub c1: f64,
    pub r: [[f64; 2]; 2],
    pub c2: f64,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub c3: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    SMOOTH_EPS
}

impl CollocationProblem {
    /// Parking-type example: from `(0.1, 1.0, 0.8)` to the origin in 50 s on
    /// 50 points with `ℓ = 4u₁² + u₂² − 3u₁u₂ + 0.1‖u‖₂`.
    pub fn example() -> Self {
        CollocationProblem {
            n: 50,
            t: 50.0,
            x_hat: State::new(0.1, 1.0, 0.8),
            x_star: State::origin(),
            c1: 1.0,
            r: [[4.0, -1.5], [-1.5, 1.0]],
            c2: 0.1,
            norm: NormKind::L2,
            c3: 0.0,
            eps: SMOOTH_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput("collocation needs at least 2 grid points".into()));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {} must be positive", self.t)));
        }
        self.x_hat.ensure_finite("x_hat")?;
        self.x_star.ensure_finite("x_star")?;
        let r = &self.r;
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.c3 >= 0.0) {
            return Err(Error::InvalidInput("cost weights must be nonnegative".into()));
        }
        if (r[0][1] - r[1][0]).abs() > 1e-12 || !(min_eigenvalue(r) > 0.0) {
            return Err(Error::InvalidInput("R must be symmetric positive definite".into()));
        }
        if self.norm == NormKind::Linf && self.c2 > 0.0 {
            return Err(Error::InvalidInput("the max norm has no smooth form here; use l1 or l2".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidInput("smoothing epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.t / (self.n - 1) as f64
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: CollocationProblem = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// The transcribed program: decision vector `z` holds, node by node,
/// `(x1, …, x5, u1, u2)`. Constraints are the trapezoidal defects of every
/// interval followed by `x1..x3` at both ends and `x4(0) = x5(0) = 0`.
#[derive(Clone, Debug)]
pub struct Nlp {
    pub problem: CollocationProblem,
}

/// Stage cost value and gradient w.r.t. `(u1, u2)`, plus the quadratic part.
struct Integrand {
    full: f64,
    dfull: [f64; 2],
    quad: f64,
    dquad: [f64; 2],
}

pub fn transcribe(p: &CollocationProblem) -> Result<Nlp> {
    p.validate()?;
    Ok(Nlp { problem: p.clone() })
}

impl Nlp {
    pub fn n_vars(&self) -> usize {
        self.problem.n * NZ
    }

    pub fn n_defects(&self) -> usize {
        (self.problem.n - 1) * NX
    }

    pub fn n_constraints(&self) -> usize {
        self.n_defects() + 8
    }

    /// `x4` at the final node.
    pub fn objective(&self, z: &[f64]) -> f64 {
        z[(self.problem.n - 1) * NZ + 3]
    }

    fn integrand(&self, u1: f64, u2: f64) -> Integrand {
        let p = &self.problem;
        let r = &p.r;
        let quad = r[0][0] * u1 * u1 + 2.0 * r[0][1] * u1 * u2 + r[1][1] * u2 * u2;
        let dquad = [2.0 * (r[0][0] * u1 + r[0][1] * u2), 2.0 * (r[0][1] * u1 + r[1][1] * u2)];
        let (nv, dn) = match p.norm {
            NormKind::L2 => {
                let s = (u1 * u1 + u2 * u2 + p.eps * p.eps).sqrt();
                (s - p.eps, [u1 / s, u2 / s])
            }
            NormKind::L1 => {
                let s1 = (u1 * u1 + p.eps * p.eps).sqrt();
                let s2 = (u2 * u2 + p.eps * p.eps).sqrt();
                (smooth_abs(u1, p.eps) + smooth_abs(u2, p.eps), [u1 / s1, u2 / s2])
            }
            NormKind::Linf => (0.0, [0.0, 0.0]),
        };
        Integrand {
            full: p.c1 * quad + p.c2 * nv + p.c3,
            dfull: [p.c1 * dquad[0] + p.c2 * dn[0], p.c1 * dquad[1] + p.c2 * dn[1]],
            quad,
            dquad,
        }
    }

    /// Right-hand side at one node and its Jacobian w.r.t. `(x, u)`.
    fn rhs(&self, node: &[f64]) -> ([f64; NX], [[f64; NZ]; NX]) {
        let (x3, u1, u2) = (node[2], node[5], node[6]);
        let (s, c) = x3.sin_cos();
        let ig = self.integrand(u1, u2);
        let f = [u1 * c, u1 * s, u2, ig.full, ig.quad];
        let mut j = [[0.0; NZ]; NX];
        j[0][2] = -u1 * s;
        j[0][5] = c;
        j[1][2] = u1 * c;
        j[1][5] = s;
        j[2][6] = 1.0;
        j[3][5] = ig.dfull[0];
        j[3][6] = ig.dfull[1];
        j[4][5] = ig.dquad[0];
        j[4][6] = ig.dquad[1];
        (f, j)
    }

    pub fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let p = &self.problem;
        let h = p.step();
        let mut c = Vec::with_capacity(self.n_constraints());
        let mut f_prev = self.rhs(&z[0..NZ]).0;
        for k in 0..p.n - 1 {
            let a = &z[k * NZ..(k + 1) * NZ];
            let b = &z[(k + 1) * NZ..(k + 2) * NZ];
            let f_next = self.rhs(b).0;
            for i in 0..NX {
                c.push(b[i] - a[i] - 0.5 * h * (f_prev[i] + f_next[i]));
            }
            f_prev = f_next;
        }
        c.extend(self.boundary(z));
        c
    }

    fn boundary(&self, z: &[f64]) -> [f64; 8] {
        let p = &self.problem;
        let last = (p.n - 1) * NZ;
        [
            z[0] - p.x_hat.x1,
            z[1] - p.x_hat.x2,
            z[2] - p.x_hat.x3,
            z[last] - p.x_star.x1,
            z[last + 1] - p.x_star.x2,
            z[last + 2] - p.x_star.x3,
            z[3],
            z[4],
        ]
    }

    /// `Jᵀ v` for the constraint Jacobian `J` at `z`.
    pub fn constraints_jt(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let p = &self.problem;
        let h = p.step();
        let mut g = vec![0.0; z.len()];
        let jacs: Vec<[[f64; NZ]; NX]> = (0..p.n).map(|k| self.rhs(&z[k * NZ..(k + 1) * NZ]).1).collect();
        for k in 0..p.n - 1 {
            let w = &v[k * NX..(k + 1) * NX];
            for i in 0..NX {
                g[(k + 1) * NZ + i] += w[i];
                g[k * NZ + i] -= w[i];
                for j in 0..NZ {
                    g[k * NZ + j] -= 0.5 * h * w[i] * jacs[k][i][j];
                    g[(k + 1) * NZ + j] -= 0.5 * h * w[i] * jacs[k + 1][i][j];
                }
            }
        }
        let b = &v[self.n_defects()..];
        let last = (p.n - 1) * NZ;
        for i in 0..3 {
            g[i] += b[i];
            g[last + i] += b[3 + i];
        }
        g[3] += b[6];
        g[4] += b[7];
        g
    }

    /// `objective + λᵀc + (μ/2)‖c‖²` and its gradient.
    pub fn merit(&self, z: &[f64], lambda: &[f64], mu: f64, grad: &mut [f64]) -> f64 {
        let c = self.constraints(z);
        let w: Vec<f64> = c.iter().zip(lambda).map(|(ci, li)| li + mu * ci).collect();
        let jt = self.constraints_jt(z, &w);
        grad.copy_from_slice(&jt);
        grad[(self.problem.n - 1) * NZ + 3] += 1.0;
        let pen: f64 = c.iter().zip(lambda).map(|(ci, li)| li * ci + 0.5 * mu * ci * ci).sum();
        self.objective(z) + pen
    }

    /// Linear state interpolation with constant controls equal to the time
    /// average of the turn–move–turn plan, and `x4`, `x5` integrated along.
    pub fn initial_guess(&self) -> Vec<f64> {
        let p = &self.problem;
        let tmt = feasible_plan(&p.x_hat, &p.x_star, 1.0, 1.0);
        let mut avg = [0.0; 2];
        for (u, d) in &tmt.segments {
            avg[0] += u.u1 * d / p.t;
            avg[1] += u.u2 * d / p.t;
        }
        // The heading changes by exactly the requested amount.
        avg[1] = (p.x_star.x3 - p.x_hat.x3) / p.t;
        let ig = self.integrand(avg[0], avg[1]);
        let mut z = vec![0.0; self.n_vars()];
        for k in 0..p.n {
            let s = k as f64 / (p.n - 1) as f64;
            let tk = s * p.t;
            let node = &mut z[k * NZ..(k + 1) * NZ];
            node[0] = p.x_hat.x1 + s * (p.x_star.x1 - p.x_hat.x1);
            node[1] = p.x_hat.x2 + s * (p.x_star.x2 - p.x_hat.x2);
            node[2] = p.x_hat.x3 + s * (p.x_star.x3 - p.x_hat.x3);
            node[3] = ig.full * tk;
            node[4] = ig.quad * tk;
            node[5] = avg[0];
            node[6] = avg[1];
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationSolution {
    pub t: Vec<f64>,
    pub states: Vec<[f64; NX]>,
    pub controls: Vec<ControlValue>,
    /// `x4(T)`.
    pub objective: f64,
    /// Largest absolute constraint violation.
    pub residual: f64,
    /// Largest absolute entry of the Lagrangian gradient.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlpOptions {
    pub mu0: f64,
    /// Number of penalty stages, each multiplying the weight by 10.
    pub stages: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Perturbed restarts tried when the first run does not converge.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            mu0: 10.0,
            stages: 6,
            max_iter: 5_000,
            tol: 1e-6,
            restarts: 5,
            seed: 4,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn unpack(nlp: &Nlp, z: &[f64], gradient_norm: f64, iterations: usize, tol: f64) -> CollocationSolution {
    let p = &nlp.problem;
    let h = p.step();
    let residual = max_abs(&nlp.constraints(z));
    CollocationSolution {
        t: (0..p.n).map(|k| k as f64 * h).collect(),
        states: (0..p.n)
            .map(|k| {
                let mut s = [0.0; NX];
                s.copy_from_slice(&z[k * NZ..k * NZ + NX]);
                s
            })
            .collect(),
        controls: (0..p.n).map(|k| ControlValue::new(z[k * NZ + 5], z[k * NZ + 6])).collect(),
        objective: nlp.objective(z),
        residual,
        gradient_norm,
        iterations,
        converged: residual <= tol && gradient_norm <= tol,
    }
}

/// Penalty continuation from `start`. Each stage minimizes the augmented
/// merit with L-BFGS, then updates the multiplier estimate `λ += μ c` and
/// multiplies `μ` by 10. A short Newton phase on the optimality conditions
/// finishes the last stage.
fn run_from(nlp: &Nlp, start: &[f64], opts: &NlpOptions) -> CollocationSolution {
    let m = nlp.n_constraints();
    let mut lambda = vec![0.0; m];
    let mut mu = opts.mu0;
    let mut z = start.to_vec();
    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    for stage in 0..opts.stages {
        let last = stage + 1 == opts.stages;
        let budget = if last {
            opts.max_iter.saturating_sub(iterations).max(1)
        } else {
            opts.max_iter / (2 * opts.stages)
        };
        let gtol = if last {
            0.1 * opts.tol
        } else {
            (1e-2 * 0.1f64.powi(stage as i32)).max(opts.tol)
        };
        let lo = LbfgsOptions {
            memory: 20,
            max_iter: budget,
            gtol,
        };
        let res = lbfgs(|x, g| nlp.merit(x, &lambda, mu, g), &z, lo);
        iterations += res.iterations;
        z = res.x;
        let c = nlp.constraints(&z);
        let mut g = vec![0.0; z.len()];
        nlp.merit(&z, &lambda, mu, &mut g);
        gnorm = max_abs(&g);
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l += mu * ci;
        }
        if last {
            break;
        }
        mu *= 10.0;
    }
    if let Some((zp, g)) = kkt_polish(nlp, &z, &lambda) {
        z = zp;
        gnorm = g;
    }
    unpack(nlp, &z, gnorm, iterations, opts.tol)
}

/// Largest entries of the constraint vector and of the Lagrangian gradient.
fn kkt_error(nlp: &Nlp, z: &[f64], lambda: &[f64]) -> (f64, f64) {
    let mut g = vec![0.0; z.len()];
    nlp.merit(z, lambda, 0.0, &mut g);
    (max_abs(&nlp.constraints(z)), max_abs(&g))
}

/// Newton iterations on the KKT system `∇f + Jᵀλ = 0, c = 0`, with the
/// Lagrangian Hessian from central differences of the analytic gradient.
/// Returns the polished point and its Lagrangian gradient norm when the
/// combined error decreased.
fn kkt_polish(nlp: &Nlp, z0: &[f64], lambda0: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = nlp.n_vars();
    let m = nlp.n_constraints();
    let mut z = z0.to_vec();
    let mut lambda = lambda0.to_vec();
    let (c0, g0) = kkt_error(nlp, &z, &lambda);
    let start_err = c0.max(g0);
    let mut err = start_err;
    for _ in 0..8 {
        if err <= 1e-12 {
            break;
        }
        let grad = |x: &[f64]| {
            let mut g = vec![0.0; n];
            nlp.merit(x, &lambda, 0.0, &mut g);
            g
        };
        let gz = grad(&z);
        let mut a = vec![vec![0.0; n + m]; n + m];
        for j in 0..n {
            let hstep = 1e-6 * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += hstep;
            let mut zm = z.clone();
            zm[j] -= hstep;
            let (gp, gm) = (grad(&zp), grad(&zm));
            for i in 0..n {
                a[i][j] = (gp[i] - gm[i]) / (2.0 * hstep);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (a[i][j] + a[j][i]);
                a[i][j] = s;
                a[j][i] = s;
            }
        }
        let mut e = vec![0.0; m];
        for r in 0..m {
            e[r] = 1.0;
            let row = nlp.constraints_jt(&z, &e);
            e[r] = 0.0;
            for j in 0..n {
                a[n + r][j] = row[j];
                a[j][n + r] = row[j];
            }
        }
        let c = nlp.constraints(&z);
        let rhs: Vec<f64> = gz.iter().chain(&c).map(|v| -v).collect();
        let step = crate::optim::solve_linear(a, rhs)?;
        let zn: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
        let ln: Vec<f64> = lambda.iter().zip(&step[n..]).map(|(a, b)| a + b).collect();
        let (cn, gn) = kkt_error(nlp, &zn, &ln);
        if !(cn.max(gn) < err) {
            break;
        }
        z = zn;
        lambda = ln;
        err = cn.max(gn);
    }
    if err < start_err {
        let g = kkt_error(nlp, &z, &lambda).1;
        Some((z, g))
    } else {
        None
    }
}

/// Solves the transcribed program from `start`. When that run does not
/// converge, `opts.restarts` perturbed copies of `start` are solved in
/// parallel and the converged run with the smallest objective (lowest seed on
/// ties) is returned. If none converges the best iterate is returned with
/// `converged = false`.
pub fn solve_nlp(nlp: &Nlp, start: &[f64], opts: &NlpOptions) -> Result<CollocationSolution> {
    if start.len() != nlp.n_vars() {
        return Err(Error::InvalidInput(format!(
            "start has {} entries, expected {}",
            start.len(),
            nlp.n_vars()
        )));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial guess"));
    }
    let first = run_from(nlp, start, opts);
    if first.converged {
        return Ok(first);
    }
    let runs: Vec<CollocationSolution> = (0..opts.restarts as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k));
            let z: Vec<f64> = start.iter().map(|v| v + 0.05 * rng.gen_range(-1.0..1.0)).collect();
            run_from(nlp, &z, opts)
        })
        .collect();
    let best = std::iter::once(first)
        .chain(runs)
        .min_by(|a, b| {
            b.converged
                .cmp(&a.converged)
                .then(a.objective.total_cmp(&b.objective))
                .then(a.residual.total_cmp(&b.residual))
        })
        .expect("at least one run");
    Ok(best)
}

/// Transcribes and solves from the default initial guess.
pub fn solve(p: &CollocationProblem, opts: &NlpOptions) -> Result<CollocationSolution> {
    let nlp = transcribe(p)?;
    let z0 = nlp.initial_guess();
    solve_nlp(&nlp, &z0, opts)
}

/// Coefficient of determination of a least-squares line through `(t, y)`.
pub fn line_fit_r2(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - mt) * (v - mt)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sty / stt;
    let sse: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (my + slope * (a - mt));
            e * e
        })
        .sum();
    1.0 - sse / syy
}

impl CollocationSolution {
    /// R² of the `x5` profile against a line.
    pub fn x5_linearity(&self) -> f64 {
        let y: Vec<f64> = self.states.iter().map(|s| s[4]).collect();
        line_fit_r2(&self.t, &y)
    }

    /// `uᵀRu` at every node.
    pub fn node_efforts(&self, r: &[[f64; 2]; 2]) -> Vec<f64> {
        self.controls.iter().map(|u| crate::costs::r_norm_sq(r, u)).collect()
    }

    /// `(max − min)/max` of `uᵀRu` over the interior nodes. The end nodes
    /// carry only half an interval each in the trapezoidal sums and are left
    /// out.
    pub fn interior_effort_spread(&self, r: &[[f64; 2]; 2]) -> f64 {
        let e = self.node_efforts(r);
        if e.len() < 3 {
            return 0.0;
        }
        let inner = &e[1..e.len() - 1];
        let hi = inner.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= 0.0 {
            return 0.0;
        }
        crate::verification::spread(inner) / hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CollocationProblem {
        CollocationProblem {
            n: 12,
            t: 3.0,
            x_hat: State::new(0.4, -0.3, 0.5),
            ..CollocationProblem::example()
        }
    }

    #[test]
    fn dimensions() {
        let nlp = transcribe(&CollocationProblem::example()).unwrap();
        assert_eq!(nlp.n_vars(), 350);
        assert_eq!(nlp.n_constraints(), 49 * 5 + 8);
        assert_eq!(nlp.constraints(&nlp.initial_guess()).len(), 253);
    }

    #[test]
    fn smooth_norm_bounds() {
        assert_eq!(smooth_norm(&ControlValue::zero(), 1e-8), 0.0);
        let u = ControlValue::new(0.6, 0.8);
        let v = smooth_norm(&u, 1e-8);
        assert!(v <= 1.0 && 1.0 - v <= 1e-8 + 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let nlp = transcribe(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..nlp.n_vars()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda: Vec<f64> = (0..nlp.n_constraints()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; z.len()];
        nlp.merit(&z, &lambda, 3.0, &mut g);
        let mut scratch = vec![0.0; z.len()];
        for i in 0..z.len() {
            let hstep = 1e-6;
            let mut zp = z.clone();
            zp[i] += hstep;
            let mut zm = z.clone();
            zm[i] -= hstep;
            let fd = (nlp.merit(&zp, &lambda, 3.0, &mut scratch) - nlp.merit(&zm, &lambda, 3.0, &mut scratch)) / (2.0 * hstep);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_problem_stays_at_rest() {
        let p = CollocationProblem {
            x_hat: State::origin(),
            ..small()
        };
        let sol = solve(&p, &NlpOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.objective.abs() < 1e-6);
        assert!(sol.controls.iter().all(|u| u.u1.abs() < 1e-4 && u.u2.abs() < 1e-4));
    }

    #[test]
    fn two_points_integrator() {
        let p = CollocationProblem {
            n: 2,
            t: 2.0,
            x_hat: State::new(0.0, 0.0, 0.0),
            x_star: State::new(0.0, 0.0, 1.0),
            c2: 0.0,
            r: [[1.0, 0.0], [0.0, 1.0]],
            ..CollocationProblem::example()
        };
        let nlp = transcribe(&p).unwrap();
        let z = nlp.initial_guess();
        let c = nlp.constraints(&z);
        assert!(max_abs(&c) < 1e-15, "{c:?}");
    }

    #[test]
    fn r2_of_line_and_parabola() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((line_fit_r2(&t, &y) - 1.0).abs() < 1e-15);
        let q: Vec<f64> = t.iter().map(|v| v * v).collect();
        assert!(line_fit_r2(&t, &q) < 0.99);
    }
}
