//! Named, seeded verification suites. Each returns a report whose checks
//! carry the worst margin against their tolerance and the input behind it.

use rand::Rng;
use serde_json::json;

use crate::collocation::{self, CollocationProblem, NlpOptions};
use crate::costs::min_eigenvalue;
use crate::error::{Error, Result};
use crate::mpc;
use crate::ocp::SolveOptions;
use crate::robot::{flow_const, flow_piecewise_at, integrate_endpoint, ControlValue, PiecewiseControl};
use crate::scenarios;
use crate::symmetry::{xi_from, GroupElement, State};
use crate::verification::{
    compute_rstar, ellipse_box_ratio, improve_nonuniform, improve_with_alpha, lyapunov_margin, random_spd,
    simplified_bruteforce, simplified_rollout, simplified_value, suite_rng, CheckResult, VerificationReport,
};

pub const SUITES: [&str; 7] = [
    "equivariance",
    "group",
    "uniform-effort",
    "lyapunov",
    "simplified-value",
    "rstar",
    "transcription",
];

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Overrides the suite's default sample count.
    pub samples: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 20_230_713,
            samples: None,
        }
    }
}

/// Tracks the worst value of a quantity that must stay at or below `tol`.
struct Worst {
    name: String,
    tol: f64,
    value: f64,
    witness: serde_json::Value,
}

impl Worst {
    fn new(name: &str, tol: f64) -> Self {
        Worst {
            name: name.to_string(),
            tol,
            value: f64::NEG_INFINITY,
            witness: serde_json::Value::Null,
        }
    }

    fn record(&mut self, value: f64, witness: impl FnOnce() -> serde_json::Value) {
        if value > self.value || value.is_nan() {
            self.value = value;
            self.witness = witness();
        }
    }

    fn finish(self) -> CheckResult {
        let margin = self.tol - self.value;
        CheckResult {
            check: self.name,
            pass: margin >= 0.0,
            worst_margin: margin,
            witness: self.witness,
        }
    }
}

fn exact(name: &str, got: f64, want: f64, tol: f64) -> CheckResult {
    let mut w = Worst::new(name, tol);
    w.record((got - want).abs(), || json!({ "got": got, "expected": want }));
    w.finish()
}

pub fn run_suite(name: &str, opts: &SuiteOptions) -> Result<VerificationReport> {
    let checks = match name {
        "equivariance" => equivariance(opts),
        "group" => group(opts),
        "uniform-effort" => uniform_effort(opts)?,
        "lyapunov" => lyapunov()?,
        "simplified-value" => simplified(opts)?,
        "rstar" => rstar(opts)?,
        "transcription" => transcription()?,
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown suite '{name}', expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(VerificationReport::new(name, opts.seed, checks))
}

fn random_state(rng: &mut impl Rng) -> State {
    State::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-4.0..4.0))
}

fn random_group(rng: &mut impl Rng) -> GroupElement {
    GroupElement::new(rng.gen_range(-4.0..4.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))
}

/// One to three pieces with total duration at most 10 s. Every fourth piece
/// turns at a rate below the series threshold.
fn random_control(rng: &mut impl Rng) -> PiecewiseControl {
    let k = rng.gen_range(1..=3);
    let total = rng.gen_range(0.0..10.0);
    let segments = (0..k)
        .map(|_| {
            let u2 = if rng.gen_range(0..4) == 0 {
                rng.gen_range(-1e-9..1e-9)
            } else {
                rng.gen_range(-2.0..2.0)
            };
            (ControlValue::new(rng.gen_range(-2.0..2.0), u2), total / k as f64)
        })
        .collect();
    PiecewiseControl { segments }
}

fn equivariance(opts: &SuiteOptions) -> Vec<CheckResult> {
    let mut rng = suite_rng(opts.seed);
    let n = opts.samples.unwrap_or(1000);
    let mut eq = Worst::new("equivariance residual", 1e-10);
    let mut ex = Worst::new("exp flow vs closed form", 1e-8);
    let mut rk = Worst::new("closed form vs RK4", 1e-8);
    for _ in 0..n {
        let g = random_group(&mut rng);
        let x0 = random_state(&mut rng);
        let u = random_control(&mut rng);
        let t = rng.gen_range(0.0..=u.duration());
        let r = crate::robot::equivariance_residual(&g, &x0, &u, t);
        eq.record(r, || json!({ "g": g, "x0": x0, "u": u, "t": t }));
        let (v, d) = u.segments[0];
        let lhs = xi_from(&v, &x0).exp(d).act(&x0);
        let rhs = flow_const(&x0, &v, d);
        ex.record(lhs.raw_distance(&rhs), || json!({ "x0": x0, "u": v, "t": d }));
        let ut = u.truncate(t);
        let closed = flow_piecewise_at(&x0, &u, t);
        let num = integrate_endpoint(&x0, &ut, 1e-3).unwrap_or(State::new(f64::NAN, f64::NAN, f64::NAN));
        rk.record(closed.raw_distance(&num), || json!({ "x0": x0, "u": ut }));
    }
    vec![eq.finish(), ex.finish(), rk.finish()]
}

fn group(opts: &SuiteOptions) -> Vec<CheckResult> {
    let mut rng = suite_rng(opts.seed);
    let n = opts.samples.unwrap_or(1000);
    let mut assoc = Worst::new("associativity", 1e-10);
    let mut ident = Worst::new("identity", 0.0);
    let mut inv = Worst::new("inverse", 1e-12);
    let mut act = Worst::new("action compatibility", 1e-10);
    for _ in 0..n {
        let (a, b, c) = (random_group(&mut rng), random_group(&mut rng), random_group(&mut rng));
        let x = random_state(&mut rng);
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assoc.record(l.distance(&r), || json!({ "g": a, "h": b, "k": c }));
        let e = GroupElement::identity();
        ident.record(e.act(&x).raw_distance(&x), || json!({ "x": x }));
        inv.record(a.compose(&a.inverse()).distance(&e), || json!({ "g": a }));
        let lhs = a.act(&b.act(&x));
        let rhs = a.compose(&b).act(&x);
        act.record(lhs.raw_distance(&rhs), || json!({ "g": a, "h": b, "x": x }));
    }
    vec![assoc.finish(), ident.finish(), inv.finish(), act.finish()]
}

fn uniform_effort(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut rng = suite_rng(opts.seed);
    let n = opts.samples.unwrap_or(500);
    let i2 = [[1.0, 0.0], [0.0, 1.0]];
    let hand = improve_with_alpha(
        (ControlValue::new(1.0, 0.0), 1.0),
        (ControlValue::new(2.0, 0.0), 1.0),
        &i2,
        1.0,
        0.0,
        0.9,
    )?;
    let mut decrease = Worst::new("strict cost decrease", 0.0);
    let mut endpoint = Worst::new("endpoint residual", 1e-9);
    let mut found = Worst::new("improvement found", 0.0);
    for _ in 0..n {
        let r = random_spd(&mut rng);
        let mut seg = || {
            (
                ControlValue::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                rng.gen_range(0.1..3.0),
            )
        };
        let (s1, s2) = (seg(), seg());
        let c2 = rng.gen_range(0.0..1.0);
        let wit = || json!({ "seg1": s1, "seg2": s2, "r": r, "c2": c2 });
        match improve_nonuniform(s1, s2, &r, 1.0, c2)? {
            Some(res) => {
                found.record(0.0, wit);
                decrease.record(res.new_cost - res.old_cost, wit);
                let old = PiecewiseControl::new(vec![s1, s2])?;
                let x0 = State::origin();
                let e_old = integrate_endpoint(&x0, &old, 1e-3)?;
                let e_new = integrate_endpoint(&x0, &res.improved, 1e-3)?;
                endpoint.record(res.endpoint_residual.max(e_old.raw_distance(&e_new)), wit);
            }
            None => found.record(1.0, wit),
        }
    }
    Ok(vec![
        exact("hand case cost", hand.new_cost, 4.725, 1e-12),
        exact("hand case beta", hand.beta, 1.125, 1e-12),
        found.finish(),
        decrease.finish(),
        endpoint.finish(),
    ])
}

fn lyapunov() -> Result<Vec<CheckResult>> {
    let p = scenarios::line_problem(0.1);
    let cfg = scenarios::line_config();
    let trace = mpc::run(&p, &cfg, &SolveOptions::default())?;
    let t = p.horizon.fixed().unwrap_or(1.0);
    let margins = lyapunov_margin(&trace, &p.cost.r, p.cost.c1, t, cfg.delta)?;
    let mut all = Worst::new("decrease inequality", 1e-6);
    for (i, m) in margins.iter().enumerate() {
        all.record(-m, || json!({ "step": i, "margin": m }));
    }
    Ok(vec![
        all.finish(),
        exact("step 0 margin", margins.first().copied().unwrap_or(f64::NAN), 0.36, 5e-4),
    ])
}

fn simplified(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut rng = suite_rng(opts.seed);
    let n = opts.samples.unwrap_or(50);
    let mut oracle = Worst::new("brute force does not beat the value", 1e-3);
    let mut attain = Worst::new("constant control attains the value", 1e-12);
    let mut cases: Vec<(State, f64)> = vec![(State::new(3.0, 4.0, 0.0), 1.0)];
    for _ in 0..n {
        cases.push((
            State::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
            rng.gen_range(0.5..5.0),
        ));
    }
    let mut bracket = f64::NAN;
    for (x, t) in cases {
        let v = simplified_value(&x, t)?;
        let b = simplified_bruteforce(&x, t, 3, 5)?;
        if bracket.is_nan() {
            bracket = b;
        }
        oracle.record(v - b, || json!({ "x_hat": x, "T": t, "value": v, "bruteforce": b }));
        let speed = x.x1.hypot(x.x2) / t;
        let u = [speed, -crate::symmetry::wrap_angle(x.x3) / t, (-x.x2).atan2(-x.x1)];
        let (cost, end) = simplified_rollout(&x, t, &[u]);
        let miss = end.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        attain.record((cost - v).abs().max(miss), || json!({ "x_hat": x, "T": t, "cost": cost }));
    }
    Ok(vec![
        oracle.finish(),
        attain.finish(),
        exact("bracket at (3,4,0), T = 1", bracket, 25.0, 1e-3),
    ])
}

fn rstar(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut rng = suite_rng(opts.seed);
    let n = opts.samples.unwrap_or(3);
    let i2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut inside = Worst::new("ellipse inside box", 1.0);
    let mut tight = Worst::new("ellipse touches box", 1e-6);
    for _ in 0..n {
        let r = random_spd(&mut rng);
        let ubar = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
        let rs = compute_rstar(&r, ubar)?;
        let ratio = ellipse_box_ratio(&r, ubar, rs * (1.0 - 1e-9), 10_000)?;
        inside.record(ratio, || json!({ "r": r, "ubar": ubar, "rstar": rs }));
        let ratio_up = ellipse_box_ratio(&r, ubar, rs * (1.0 + 1e-6), 10_000)?;
        tight.record(1.0 - ratio_up, || json!({ "r": r, "ubar": ubar, "rstar": rs, "min_eig": min_eigenvalue(&r) }));
    }
    Ok(vec![
        exact("identity on [-2,2]^2", compute_rstar(&i2, [2.0, 2.0])?, 4.0, 0.0),
        inside.finish(),
        tight.finish(),
    ])
}

fn transcription() -> Result<Vec<CheckResult>> {
    let p = CollocationProblem::example();
    let sol = collocation::solve(&p, &NlpOptions::default())?;
    let mut conv = Worst::new("converged", 0.0);
    conv.record(if sol.converged { 0.0 } else { 1.0 }, || {
        json!({ "residual": sol.residual, "gradient": sol.gradient_norm })
    });
    let mut lin = Worst::new("x5 line fit R^2 at least 0.999", 0.0);
    let r2 = sol.x5_linearity();
    lin.record(0.999 - r2, || json!({ "r2": r2 }));
    let mut eff = Worst::new("interior effort spread", 0.01);
    let spread = sol.interior_effort_spread(&p.r);
    eff.record(spread, || json!({ "spread": spread }));
    Ok(vec![
        conv.finish(),
        exact("objective within 2%", sol.objective / 0.5141, 1.0, 0.02),
        eff.finish(),
        lin.finish(),
    ])
}
