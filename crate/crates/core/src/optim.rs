//! Small smooth minimizers: a projected BFGS method for box constraints and
//! limited-memory BFGS for unconstrained problems.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient is this small (max norm).
    pub gtol: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions {
            max_iter: 500,
            gtol: 1e-10,
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected BFGS on `lo ≤ x ≤ hi`. `fg` writes the gradient into its second
/// argument and returns the value. Dense, meant for a handful of variables.
pub(crate) fn minimize_box<F>(mut fg: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: BoxOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut h = identity(n);
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let pg = (0..n)
            .map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
            .fold(0.0, f64::max);
        if pg <= opts.gtol {
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xt: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            project(&mut xt, lo, hi);
            let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
            let ft = fg(&xt, &mut g_new);
            if ft <= f + 1e-4 * dot(&g, &s) && ft.is_finite() {
                accepted = Some((xt, s, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xt, s, ft)) = accepted else {
            if is_identity(&h) {
                break;
            }
            h = identity(n);
            continue;
        };
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        let small_step = s.iter().all(|v| v.abs() <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)));
        x = xt;
        let df = f - ft;
        f = ft;
        g.copy_from_slice(&g_new);
        if small_step && df.abs() <= 1e-16 * (1.0 + f.abs()) {
            break;
        }
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
        }
    }
    Minimum { x, iterations }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn is_identity(h: &[Vec<f64>]) -> bool {
    h.iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 }))
}

/// Inverse-Hessian BFGS update `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub gtol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 20,
            max_iter: 5000,
            gtol: 1e-9,
        }
    }
}

/// Unconstrained L-BFGS with a strong Wolfe line search.
pub(crate) fn lbfgs<F>(mut fg: F, x0: &[f64], opts: LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= opts.gtol {
            break;
        }
        iterations += 1;
        let mut d = two_loop(&g, &hist);
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let init = if hist.is_empty() { 1.0 / gmax.max(1.0) } else { 1.0 };
        let Some((alpha, f_new, g_new)) = wolfe_search(&mut fg, &x, f, &d, slope, init) else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        let df = f - f_new;
        f = f_new;
        g = g_new;
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&y, &y) {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        if df.abs() <= 1e-16 * f.abs().max(1e-300) {
            break;
        }
    }
    Minimum { x, iterations }
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for i in 0..q.len() {
            q[i] -= a * y[i];
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for i in 0..q.len() {
            q[i] += (a - b) * s[i];
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Strong Wolfe line search with bisection-safeguarded cubic zoom.
fn wolfe_search<F>(fg: &mut F, x: &[f64], f0: f64, d: &[f64], slope0: f64, init: f64) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut eval = |a: f64, g: &mut [f64]| {
        let xt: Vec<f64> = (0..n).map(|i| x[i] + a * d[i]).collect();
        let f = fg(&xt, g);
        (f, dot(g, d))
    };
    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, f0, slope0);
    let mut a = init;
    for k in 0..40 {
        let (fa, sa) = eval(a, &mut g);
        if !fa.is_finite() {
            a = 0.5 * (a_prev + a);
            continue;
        }
        if fa > f0 + C1 * a * slope0 || (k > 0 && fa >= f_prev) {
            return zoom(&mut eval, f0, slope0, (a_prev, f_prev, s_prev), (a, fa, sa), n);
        }
        if sa.abs() <= -C2 * slope0 {
            return Some((a, fa, g));
        }
        if sa >= 0.0 {
            return zoom(&mut eval, f0, slope0, (a, fa, sa), (a_prev, f_prev, s_prev), n);
        }
        a_prev = a;
        f_prev = fa;
        s_prev = sa;
        a *= 2.0;
    }
    None
}

type Probe = (f64, f64, f64);

fn zoom<E>(eval: &mut E, f0: f64, slope0: f64, mut lo: Probe, mut hi: Probe, n: usize) -> Option<(f64, f64, Vec<f64>)>
where
    E: FnMut(f64, &mut [f64]) -> (f64, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut g = vec![0.0; n];
    for _ in 0..60 {
        let a = cubic_min(lo, hi);
        let (fa, sa) = eval(a, &mut g);
        if fa > f0 + C1 * a * slope0 || fa >= lo.1 {
            hi = (a, fa, sa);
        } else {
            if sa.abs() <= -C2 * slope0 {
                return Some((a, fa, g));
            }
            if sa * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, sa);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // Accept a sufficient decrease even without the curvature condition.
    if lo.0 > 0.0 && lo.1 < f0 {
        let (fa, _) = eval(lo.0, &mut g);
        return Some((lo.0, fa, g));
    }
    None
}

fn cubic_min(a: Probe, b: Probe) -> f64 {
    let (a0, f0, d0) = a;
    let (a1, f1, d1) = b;
    let (lo, hi) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let d = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d * d - d0 * d1;
    let mid = 0.5 * (a0 + a1);
    if disc < 0.0 {
        return mid;
    }
    let sq = disc.sqrt() * (a1 - a0).signum();
    let t = a1 - (a1 - a0) * (d1 + sq - d) / (d1 - d0 + 2.0 * sq);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub(crate) fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            if m != 0.0 {
                for j in k..n {
                    a[i][j] -= m * a[k][j];
                }
                b[i] -= m * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}
