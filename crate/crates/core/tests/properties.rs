use std::f64::consts::PI;

use proptest::prelude::*;

use trim_mpc::robot::{equivariance_residual, flow_const, flow_piecewise};
use trim_mpc::verification::{compute_rstar, improve_nonuniform, simplified_value};
use trim_mpc::{AlgebraElement, ControlValue, GroupElement, PiecewiseControl, State};

fn group() -> impl Strategy<Value = GroupElement> {
    (-PI..PI, -5.0..5.0f64, -5.0..5.0f64)
        .prop_map(|(th, a, b)| GroupElement::from_parts(th, a, b, th).unwrap())
}

fn state() -> impl Strategy<Value = State> {
    (-5.0..5.0f64, -5.0..5.0f64, -PI..PI).prop_map(|(a, b, c)| State::new(a, b, c))
}

fn control() -> impl Strategy<Value = ControlValue> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| ControlValue::new(a, b))
}

fn xi() -> impl Strategy<Value = AlgebraElement> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| AlgebraElement::new(a, b, c))
}

fn close(g: &GroupElement, h: &GroupElement, tol: f64) -> bool {
    g.distance(h) <= tol
}

proptest! {
    #[test]
    fn compose_is_associative(a in group(), b in group(), c in group()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-12));
    }

    #[test]
    fn inverse_is_two_sided(g in group()) {
        let e = GroupElement::identity();
        prop_assert!(close(&g.compose(&g.inverse()), &e, 1e-12));
        prop_assert!(close(&g.inverse().compose(&g), &e, 1e-12));
        prop_assert!(close(&g.compose(&e), &g, 0.0));
    }

    #[test]
    fn action_is_compatible(g in group(), h in group(), x in state()) {
        let lhs = g.compose(&h).act(&x);
        let rhs = g.act(&h.act(&x));
        prop_assert!(lhs.raw_distance(&rhs) <= 1e-12);
    }

    #[test]
    fn rotation_block_is_orthogonal(g in group()) {
        let m = g.to_matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        prop_assert!((det - 1.0).abs() <= 1e-12);
        prop_assert!((m[0][0] * m[0][1] + m[1][0] * m[1][1]).abs() <= 1e-12);
    }

    #[test]
    fn exp_is_a_one_parameter_group(x in xi(), s in -10.0..10.0f64, t in -10.0..10.0f64) {
        let lhs = x.exp(s + t);
        let rhs = x.exp(s).compose(&x.exp(t));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn exp_branches_agree(v1 in -2.0..2.0f64, v2 in -2.0..2.0f64, t in -10.0..10.0f64, k in 0usize..3) {
        let w = [1e-7, 1e-9, 1e-13][k];
        let small = AlgebraElement::new(v1, v2, w).exp(t);
        // The series carried to third order.
        let a = w * t;
        let want = [v1 * t - v2 * a * t / 2.0 - v1 * a * a * t / 6.0, v2 * t + v1 * a * t / 2.0 - v2 * a * a * t / 6.0];
        prop_assert!((small.dx1() - want[0]).abs() <= 1e-10);
        prop_assert!((small.dx2() - want[1]).abs() <= 1e-10);
    }

    #[test]
    fn flows_commute_with_the_action(g in group(), x in state(), u in control(), v in control(), d in 0.0..5.0f64, t in 0.0..10.0f64) {
        let pc = PiecewiseControl::new(vec![(u, d), (v, 5.0)]).unwrap();
        prop_assert!(equivariance_residual(&g, &x, &pc, t) <= 1e-10);
    }

    #[test]
    fn trim_flow_is_the_exponential(x in state(), u in control(), t in 0.0..10.0f64) {
        let via_exp = AlgebraElement::from_control(&u, &x).exp(t).act(&x);
        prop_assert!(via_exp.raw_distance(&flow_const(&x, &u, t)) <= 1e-10);
    }

    #[test]
    fn flow_is_a_semigroup(x in state(), u in control(), s in 0.0..5.0f64, t in 0.0..5.0f64) {
        let two = flow_const(&flow_const(&x, &u, s), &u, t);
        prop_assert!(two.raw_distance(&flow_const(&x, &u, s + t)) <= 1e-11);
    }

    #[test]
    fn scaled_trim_traverses_the_same_path(x in state(), u in control(), t in 0.1..5.0f64, a in 0.1..4.0f64) {
        let slow = flow_const(&x, &u.scale(a), t / a);
        prop_assert!(slow.raw_distance(&flow_const(&x, &u, t)) <= 1e-11);
    }

    #[test]
    fn improvement_is_sound(u in control(), v in control(), d1 in 0.1..3.0f64, d2 in 0.1..3.0f64, c2 in 0.0..1.0f64) {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        prop_assume!((u.u1.hypot(u.u2) - v.u1.hypot(v.u2)).abs() > 1e-6);
        let res = improve_nonuniform((u, d1), (v, d2), &eye, 1.0, c2).unwrap();
        let res = res.expect("unequal efforts admit an improvement");
        prop_assert!(res.new_cost < res.old_cost);
        prop_assert!((res.improved.duration() - (d1 + d2)).abs() <= 1e-12 * (d1 + d2));
        let x0 = State::origin();
        let old = flow_piecewise(&x0, &PiecewiseControl::new(vec![(u, d1), (v, d2)]).unwrap());
        prop_assert!(old.raw_distance(&flow_piecewise(&x0, &res.improved)) <= 1e-9);
    }

    #[test]
    fn simplified_value_scales_inversely_with_time(x in state(), t in 0.5..5.0f64, k in 1.0..4.0f64) {
        let v = simplified_value(&x, t).unwrap();
        let w = simplified_value(&x, k * t).unwrap();
        prop_assert!((v - k * w).abs() <= 1e-12 * v.max(1.0));
    }

    #[test]
    fn rstar_ellipse_fits_the_box(l1 in 0.2..5.0f64, l2 in 0.2..5.0f64, th in 0.0..PI, b1 in 0.5..3.0f64, b2 in 0.5..3.0f64) {
        let (c, s) = (th.cos(), th.sin());
        let off = (l1 - l2) * c * s;
        let r = [[l1 * c * c + l2 * s * s, off], [off, l1 * s * s + l2 * c * c]];
        let level = compute_rstar(&r, [b1, b2]).unwrap();
        let det = r[0][0] * r[1][1] - off * off;
        // Extent of the ellipse along each axis.
        let e1 = (level * r[1][1] / det).sqrt();
        let e2 = (level * r[0][0] / det).sqrt();
        prop_assert!(e1 <= b1 * (1.0 + 1e-12) && e2 <= b2 * (1.0 + 1e-12));
        prop_assert!((e1 - b1).abs() <= 1e-9 * b1 || (e2 - b2).abs() <= 1e-9 * b2);
    }
}
