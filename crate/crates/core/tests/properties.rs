//! Property tests for the numerical invariants of each module.

use std::sync::OnceLock;

use coifgal::basis::{project, BasisSpec};
use coifgal::coeftransform::{binomial, transform_1d, CoefficientSet1D};
use coifgal::conncoef::{ConnKey, ConnStore};
use coifgal::exprlang::{parse, BinOp, Constant, Expr, Func, Var};
use coifgal::filterbank::{scaling_moments, verify_filter_split, FilterBank};
use coifgal::galerkin::{
    assemble_1d, assemble_2d, assemble_2d_kron, column_dot, kron, nodes, rvec, Bc2D, Coefficient,
    Problem1D, Problem2D, Term1D, Term2D,
};
use coifgal::nalgebra::{DMatrix, DVector};
use coifgal::nonlinear::{newton_solve, NonlinearSystem};
use coifgal::problems::{get_example, CaseProblem, NEWTON_MAX_ITER};
use coifgal::scalfun::eval_deriv;
use coifgal::special::gamma;
use proptest::prelude::*;

fn fb() -> FilterBank {
    FilterBank::reference()
}

fn store() -> &'static ConnStore {
    static STORE: OnceLock<ConnStore> = OnceLock::new();
    STORE.get_or_init(|| ConnStore::in_memory(fb()))
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn poly_expr(c: &[f64], var: Var) -> Expr {
    Expr::sum(c.iter().enumerate().map(|(i, &v)| {
        Expr::mul(Expr::num(v), Expr::pow(Expr::Var(var), Expr::num(i as f64)))
    }))
}

fn coeffs(deg: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, deg + 1)
}

// ---------------------------------------------------------------- filterbank

#[test]
fn scaling_moments_are_powers_of_m1() {
    let f = fb();
    let m = scaling_moments(&f, 5);
    for (n, v) in m.iter().enumerate() {
        let want = 7f64.powi(n as i32);
        assert!((v - want).abs() <= 1e-8 * want, "M_{n} = {v}");
    }
}

#[test]
fn filter_verification_is_deterministic() {
    let a = verify_filter_split(&fb(), 1e-12, 1e-10);
    let b = verify_filter_split(&fb(), 1e-12, 1e-10);
    assert!(a.pass);
    assert_eq!(a.residuals, b.residuals);
}

// ---------------------------------------------------------------- scalfun

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn partition_of_unity(num in (6i64 << 14)..=(11i64 << 14)) {
        let x = num as f64 / (1u64 << 14) as f64;
        let s: f64 = (-20..=20).map(|k| eval_deriv(&fb(), 0, x - k as f64).unwrap()).sum();
        prop_assert!((s - 1.0).abs() <= 1e-10, "x={} sum={}", x, s);
    }

    #[test]
    fn polynomial_reproduction(num in (6i64 << 14)..=(11i64 << 14), deg in 0usize..=5, c in coeffs(5)) {
        let x = num as f64 / (1u64 << 14) as f64;
        let c = &c[..=deg];
        let m1 = fb().params.m1 as f64;
        let lo = (x + m1 - 17.0).floor() as i64;
        let hi = (x + m1).ceil() as i64;
        let s: f64 = (lo..=hi)
            .map(|m| poly(c, m as f64) * eval_deriv(&fb(), 0, x - m as f64 + m1).unwrap())
            .sum();
        let want = poly(c, x);
        prop_assert!((s - want).abs() <= 1e-8 * (1.0 + want.abs()), "x={} got {} want {}", x, s, want);
    }
}

// ---------------------------------------------------------------- basis

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn global_cubic_reproduction(j in 3u32..=6, num in 0i64..=1024, c in coeffs(3)) {
        let spec = BasisSpec::new(j, fb()).unwrap();
        let samples: Vec<f64> = nodes(j).iter().map(|&x| poly(&c, x)).collect();
        let x = num as f64 / 1024.0;
        let v = project(&samples, &spec, x).unwrap();
        prop_assert!((v - poly(&c, x)).abs() <= 1e-8);
    }

    #[test]
    fn interior_quintic_reproduction(j in 4u32..=6, num in 0i64..=1024, c in coeffs(5)) {
        let spec = BasisSpec::new(j, fb()).unwrap();
        let samples: Vec<f64> = nodes(j).iter().map(|&x| poly(&c, x)).collect();
        let x = 0.3 + 0.4 * num as f64 / 1024.0;
        let x = (x * 4096.0).round() / 4096.0;
        let v = project(&samples, &spec, x).unwrap();
        prop_assert!((v - poly(&c, x)).abs() <= 1e-8);
    }
}

fn projection_error(j: u32, lo: f64, hi: f64) -> f64 {
    let f = |x: f64| x.exp() * (3.0 * x).sin();
    let spec = BasisSpec::new(j, fb()).unwrap();
    let samples: Vec<f64> = nodes(j).iter().map(|&x| f(x)).collect();
    (0..=2048)
        .map(|i| i as f64 / 2048.0)
        .filter(|&x| x >= lo && x <= hi)
        .map(|x| (project(&samples, &spec, x).unwrap() - f(x)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn projection_converges_at_interior_order() {
    for j in 5..=6 {
        let ratio = projection_error(j, 0.3, 0.7) / projection_error(j + 1, 0.3, 0.7);
        assert!(ratio >= 32.0, "j={j}: ratio {ratio}");
    }
}

#[test]
fn projection_converges_with_cubic_edges() {
    for j in 3..=5 {
        let ratio = projection_error(j, 0.0, 1.0) / projection_error(j + 1, 0.0, 1.0);
        assert!(ratio >= 2f64.powf(3.5), "j={j}: ratio {ratio}");
    }
}

// ---------------------------------------------------------------- conncoef

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cross_order_consistency_for_cubics(j in 3u32..=6, n in 1usize..=2, c in coeffs(3)) {
        let g0 = store().get_or_build(ConnKey::plain(j, 0)).unwrap();
        let gn = store().get_or_build(ConnKey::plain(j, n)).unwrap();
        let q = poly_expr(&c, Var::X);
        let qn = q.nth_derivative(Var::X, n).unwrap();
        let xs = nodes(j);
        let a: Vec<f64> = xs.iter().map(|&x| q.eval_x(x).unwrap()).collect();
        let b: Vec<f64> = xs.iter().map(|&x| qn.eval_x(x).unwrap()).collect();
        let lhs = gn.data.transpose() * DVector::from_vec(a);
        let rhs = g0.data.transpose() * DVector::from_vec(b);
        prop_assert!((lhs - rhs).amax() <= 1e-8);
    }
}

// ---------------------------------------------------------------- exprlang

fn fd(e: &Expr, x: f64) -> f64 {
    let h = 1e-6;
    (e.eval_x(x + h).unwrap() - e.eval_x(x - h).unwrap()) / (2.0 * h)
}

fn check_derivative(e: &Expr, lo: f64, hi: f64, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = e.differentiate(Var::X).unwrap();
    for _ in 0..200 {
        let x: f64 = rng.random_range(lo..hi);
        let got = d.eval_x(x).unwrap();
        let want = fd(e, x);
        assert!((got - want).abs() <= 1e-5 * (1.0 + want.abs()), "{e} at {x}: {got} vs {want}");
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let x = Expr::x;
    let cases: Vec<(Expr, f64, f64)> = vec![
        (Expr::call1(Func::Sin, x()), -3.0, 3.0),
        (Expr::call1(Func::Cos, x()), -3.0, 3.0),
        (Expr::call1(Func::Exp, x()), -3.0, 3.0),
        (Expr::call1(Func::Ln, x()), 0.1, 5.0),
        (Expr::call1(Func::Sqrt, x()), 0.1, 5.0),
        (Expr::call1(Func::Gamma, x()), 0.2, 5.0),
        (Expr::call1(Func::Digamma, x()), 0.2, 5.0),
        (Expr::call(Func::Pow, vec![x(), Expr::num(2.5)]), 0.1, 3.0),
        (Expr::call(Func::Pow, vec![Expr::num(2.0), x()]), -2.0, 2.0),
        (Expr::call(Func::Pow, vec![x(), x()]), 0.2, 2.0),
        (parse("sin(x)^3 / (1 + x^2) - exp(-x) * ln(x + 2)").unwrap(), -1.0, 2.0),
        (parse("sqrt(x^2 + 1) * digamma(x + 1)").unwrap(), 0.0, 1.0),
    ];
    for (i, (e, lo, hi)) in cases.iter().enumerate() {
        check_derivative(e, *lo, *hi, 7 + i as u64);
    }
    for f in [Func::Trigamma, Func::Abs] {
        let e = Expr::call1(f, x());
        assert!(matches!(e.differentiate(Var::X), Err(coifgal::Error::NotDifferentiable(_))));
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-100.0..100.0f64).prop_map(Expr::Num),
        (0u32..1000).prop_map(|v| Expr::Num(v as f64 / 8.0)),
        Just(Expr::Var(Var::X)),
        Just(Expr::Var(Var::Y)),
        Just(Expr::Const(Constant::Pi)),
        Just(Expr::Const(Constant::E)),
        Just(Expr::Const(Constant::EulerGamma)),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow),
        ];
        let func = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Ln),
            Just(Func::Sqrt),
            Just(Func::Abs),
            Just(Func::Gamma),
            Just(Func::Digamma),
            Just(Func::Trigamma),
        ];
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
            (func, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn print_parse_round_trip(e in arb_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let text = e.to_string();
        let back = parse(&text).unwrap();
        match (e.eval_xy(x, y), back.eval_xy(x, y)) {
            (Ok(a), Ok(b)) => prop_assert!(a == b || (a - b).abs() <= 1e-15 * a.abs().max(b.abs()),
                "{} -> {}: {} vs {}", e, text, a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{}: {:?} vs {:?}", text, a, b),
        }
    }

    #[test]
    fn gamma_recurrence(x in 0.5..5.0f64) {
        let lhs = gamma(x + 1.0).unwrap();
        let rhs = x * gamma(x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }
}

// ---------------------------------------------------------------- coeftransform

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn product_rule_identity(n in 0usize..=3, f in coeffs(6), u in coeffs(6)) {
        let fe = poly_expr(&f, Var::X);
        let ue = poly_expr(&u, Var::X);
        let lhs = Expr::mul(fe.clone(), ue.nth_derivative(Var::X, n).unwrap());
        let rhs = Expr::sum((0..=n).map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let inner = Expr::mul(fe.nth_derivative(Var::X, k).unwrap(), ue.clone());
            Expr::mul(Expr::num(sign * binomial(n, k) as f64), inner.nth_derivative(Var::X, n - k).unwrap())
        }));
        for i in 0..100 {
            let x = -1.0 + 2.0 * i as f64 / 99.0;
            let a = lhs.eval_x(x).unwrap();
            let b = rhs.eval_x(x).unwrap();
            let scale = (0..=n).map(|k| {
                let t = Expr::mul(fe.nth_derivative(Var::X, k).unwrap(), ue.clone());
                t.nth_derivative(Var::X, n - k).unwrap().eval_x(x).unwrap().abs()
            }).fold(a.abs(), f64::max);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + scale), "x={} {} vs {}", x, a, b);
        }
    }

    #[test]
    fn mixed_partial_identity(m in 0usize..=2, n in 0usize..=2, f in coeffs(3), g in coeffs(3), u in coeffs(3), w in coeffs(3)) {
        // f(x) g(y) d^{m+n} [u(x) w(y)] against the two-variable expansion
        let fe = Expr::mul(poly_expr(&f, Var::X), poly_expr(&g, Var::Y));
        let ue = Expr::mul(poly_expr(&u, Var::X), Expr::call1(Func::Cos, poly_expr(&w, Var::Y)));
        let dxy = |e: &Expr, a: usize, b: usize| e.nth_derivative(Var::X, a).unwrap().nth_derivative(Var::Y, b).unwrap();
        let lhs = Expr::mul(fe.clone(), dxy(&ue, m, n));
        let mut terms = Vec::new();
        for k in 0..=m {
            for l in 0..=n {
                let sign = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                let c = sign * (binomial(m, k) * binomial(n, l)) as f64;
                terms.push(Expr::mul(Expr::num(c), dxy(&Expr::mul(dxy(&fe, k, l), ue.clone()), m - k, n - l)));
            }
        }
        let rhs = Expr::sum(terms);
        for i in 0..100 {
            let x = -1.0 + 2.0 * (i % 10) as f64 / 9.0;
            let y = -1.0 + 2.0 * (i / 10) as f64 / 9.0;
            let a = lhs.eval_xy(x, y).unwrap();
            let b = rhs.eval_xy(x, y).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "({}, {}) {} vs {}", x, y, a, b);
        }
    }

    #[test]
    fn transformed_operator_matches_original(a in prop::collection::vec(coeffs(4), 3), u in coeffs(6)) {
        let set = transform_1d(&CoefficientSet1D::from_a(a.iter().map(|c| poly_expr(c, Var::X)).collect())).unwrap();
        let ue = poly_expr(&u, Var::X);
        let lhs = Expr::sum(set.a.iter().enumerate().map(|(n, an)| Expr::mul(an.clone(), ue.nth_derivative(Var::X, n).unwrap())));
        let rhs = Expr::sum(set.b.iter().enumerate().map(|(n, bn)| Expr::mul(bn.clone(), ue.clone()).nth_derivative(Var::X, n).unwrap()));
        for i in 0..100 {
            let x = i as f64 / 99.0;
            let l = lhs.eval_x(x).unwrap();
            let r = rhs.eval_x(x).unwrap();
            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()));
        }
        let top = set.a.len() - 1;
        for i in 0..100 {
            let x = i as f64 / 99.0;
            prop_assert!((set.a[top].eval_x(x).unwrap() - set.b[top].eval_x(x).unwrap()).abs() <= 1e-14);
        }
    }
}

// ---------------------------------------------------------------- galerkin

fn samples(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

fn problem_1d(j: u32, b: &[Vec<f64>], kinds: [(u8, u8); 3]) -> Problem1D {
    use coifgal::basis::BasisKind;
    let kind = |v: u8| BasisKind::ALL[v as usize % 3];
    Problem1D {
        j,
        terms: b
            .iter()
            .enumerate()
            .map(|(n, s)| {
                Term1D::new(n, Coefficient::Samples(s.clone())).with_kinds(kind(kinds[n].0), kind(kinds[n].1))
            })
            .collect(),
        rhs: Expr::num(1.0).into(),
        bc_left: Some(0.5),
        bc_right: Some(-1.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn assembly_is_linear_in_coefficients(
        b1 in prop::collection::vec(samples(17), 3),
        b2 in prop::collection::vec(samples(17), 3),
        alpha in -2.0..2.0f64,
        beta in -2.0..2.0f64,
        kinds in prop::array::uniform3((0u8..3, 0u8..3)),
    ) {
        let j = 4;
        let mix: Vec<Vec<f64>> = b1.iter().zip(&b2)
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| alpha * a + beta * b).collect())
            .collect();
        let m1 = assemble_1d(&problem_1d(j, &b1, kinds), store()).unwrap().matrix;
        let m2 = assemble_1d(&problem_1d(j, &b2, kinds), store()).unwrap().matrix;
        let mm = assemble_1d(&problem_1d(j, &mix, kinds), store()).unwrap().matrix;
        let want = m1 * alpha + m2 * beta;
        prop_assert!((&mm - &want).amax() <= 1e-12 * (1.0 + want.amax()));
    }

    #[test]
    fn column_dot_is_right_diagonal_scaling(a in samples(20), v in samples(5)) {
        let a = DMatrix::from_row_slice(4, 5, &a);
        let got = column_dot(&a, &v).unwrap();
        let want = &a * DMatrix::from_diagonal(&DVector::from_vec(v.clone()));
        prop_assert!((got - want).amax() == 0.0);
    }

    #[test]
    fn kronecker_assembly_matches_double_sum(a in samples(16), b in samples(16), c in samples(16)) {
        let a = DMatrix::from_row_slice(4, 4, &a);
        let b = DMatrix::from_row_slice(4, 4, &b);
        let c = DMatrix::from_row_slice(4, 4, &c);
        let fast = column_dot(&kron(&a, &b).transpose(), &rvec(&c)).unwrap();
        let mut direct = DMatrix::zeros(16, 16);
        for p in 0..4 {
            for q in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        direct[(4 * p + q, 4 * k + l)] = a[(k, p)] * b[(l, q)] * c[(k, l)];
                    }
                }
            }
        }
        prop_assert!((fast - direct).amax() <= 1e-12);
    }

    #[test]
    fn reduced_2d_assembly_matches_kronecker_form(bs in prop::collection::vec(samples(81), 5)) {
        let orders = [(0, 0), (0, 1), (1, 0), (0, 2), (2, 0)];
        let terms: Vec<Term2D> = orders.iter().zip(&bs)
            .map(|(&(m, n), s)| Term2D::new(m, n, Coefficient::Samples(s.clone())))
            .collect();
        let p = Problem2D {
            j: 3,
            terms,
            rhs: parse("x + y").unwrap().into(),
            bc: Bc2D { x0: parse("y").unwrap(), x1: parse("1 + y").unwrap(), y0: parse("x").unwrap(), y1: parse("x + 1").unwrap() },
        };
        let fast = assemble_2d(&p, store()).unwrap();
        let slow = assemble_2d_kron(&p, store()).unwrap();
        let scale = 1.0 + slow.matrix.amax();
        prop_assert!((&fast.matrix - &slow.matrix).amax() <= 1e-12 * scale);
        prop_assert!((&fast.rhs - &slow.rhs).amax() <= 1e-12 * (1.0 + slow.rhs.amax()));
    }
}

// ---------------------------------------------------------------- nonlinear

fn nonlinear_system(j: u32) -> (NonlinearSystem, Vec<f64>) {
    let case = get_example("ode-nonlinear").unwrap().at_level(j);
    let CaseProblem::Nonlinear(p) = &case.problem else { unreachable!() };
    (NonlinearSystem::assemble(p, store()).unwrap(), p.bc_interpolant())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn jacobian_matches_finite_differences(perturb in samples(9)) {
        let (sys, _) = nonlinear_system(3);
        let u: Vec<f64> = nodes(3).iter().zip(&perturb)
            .map(|(x, p)| (-x).exp() * (1.0 + 0.1 * p))
            .collect();
        let jac = sys.jacobian(&u).unwrap();
        let h = 1e-6;
        for (col, &node) in sys.unknowns.iter().enumerate() {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[node] += h;
            dn[node] -= h;
            let d = (sys.residual(&up).unwrap() - sys.residual(&dn).unwrap()) / (2.0 * h);
            let scale = 1.0 + jac.column(col).amax();
            prop_assert!((d - jac.column(col)).amax() <= 1e-6 * scale, "column {}", col);
        }
    }
}

#[test]
fn newton_converges_quadratically() {
    let (sys, seed) = nonlinear_system(5);
    let res = newton_solve(&sys, &seed, 1e-10, NEWTON_MAX_ITER).unwrap();
    let r: Vec<f64> = res.history.iter().map(|s| s.residual).chain([res.residual]).collect();
    for (k, step) in res.history.iter().enumerate() {
        if r[k] <= 1e-3 && step.damping == 1.0 {
            let c = r[k + 1] / (r[k] * r[k]);
            assert!(c <= 1e3, "step {k}: C = {c}, history {r:?}");
        }
    }

    // one undamped step from u* + eps v for a fixed direction v
    let star = res.solution.values;
    let x = nodes(5);
    let mut pts = Vec::new();
    for eps in [1e-2, 3e-3, 1e-3, 3e-4, 1e-4] {
        let u0: Vec<f64> = star
            .iter()
            .zip(&x)
            .enumerate()
            .map(|(i, (u, x))| if sys.unknowns.contains(&i) { u + eps * (3.0 * x).sin() } else { *u })
            .collect();
        let f0 = sys.residual(&u0).unwrap();
        let jac = sys.jacobian(&u0).unwrap();
        let d = jac.lu().solve(&(-&f0)).unwrap();
        let next: Vec<f64> = sys.restrict(&u0).iter().zip(d.iter()).map(|(a, b)| a + b).collect();
        let f1 = sys.residual(&sys.embed(&next)).unwrap();
        pts.push((f0.amax().ln(), f1.amax().ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!(slope >= 1.8, "slope {slope}, points {pts:?}");
}
