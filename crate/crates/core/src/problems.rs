//! Built-in benchmark problems with exact solutions and published error levels.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::basis::BasisKind;
use crate::coeftransform::CoefficientSet1D;
use crate::conncoef::ConnStore;
use crate::error::{Error, Result};
use crate::exprlang::{parse, Expr, Var};
use crate::galerkin::{
    assemble_1d, assemble_2d, err_sq, solve_linear, Bc2D, Coefficient, Problem1D, Problem2D,
    SolutionGrid, Term1D, Term2D,
};
use crate::nonlinear::{
    multi_start, newton_solve, MultiStartReport, NewtonResult, NonlinearProblem, NonlinearSystem,
    NonlinearTerm, Nonlinearity,
};

pub const IDS: [&str; 4] = ["ode-mixed", "ode-gamma", "pde-sqrt", "ode-nonlinear"];
pub const LEVELS: [u32; 4] = [3, 4, 5, 6];

/// Newton settings for the nonlinear case.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 20;

/// Published ErrSQ and CPU time at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub j: u32,
    pub err_sq: f64,
    pub cpu_seconds: f64,
}

#[derive(Debug, Clone)]
pub enum CaseProblem {
    Linear1D(Problem1D),
    Linear2D(Problem2D),
    Nonlinear(NonlinearProblem),
}

impl CaseProblem {
    pub fn j(&self) -> u32 {
        match self {
            CaseProblem::Linear1D(p) => p.j,
            CaseProblem::Linear2D(p) => p.j,
            CaseProblem::Nonlinear(p) => p.linear.j,
        }
    }

    pub fn set_j(&mut self, j: u32) {
        match self {
            CaseProblem::Linear1D(p) => p.j = j,
            CaseProblem::Linear2D(p) => p.j = j,
            CaseProblem::Nonlinear(p) => p.linear.j = j,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CaseProblem::Linear2D(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExampleCase {
    pub id: &'static str,
    pub title: &'static str,
    pub problem: CaseProblem,
    pub exact: Expr,
    /// Original a-form coefficients where the b-form was derived from them.
    pub a_form: Option<CoefficientSet1D>,
    pub reference: [ReferenceRow; 4],
}

fn e(s: &str) -> Expr {
    parse(s).unwrap_or_else(|err| panic!("built-in expression {s:?}: {err}"))
}

fn rows(err: [f64; 4], cpu: [f64; 4]) -> [ReferenceRow; 4] {
    std::array::from_fn(|i| ReferenceRow {
        j: LEVELS[i],
        err_sq: err[i],
        cpu_seconds: cpu[i],
    })
}

fn ode_mixed() -> ExampleCase {
    let terms = vec![
        Term1D::new(0, e("exp(x) - pi*cos(pi*x) + 2")),
        Term1D::new(1, e("sin(pi*x) - 4*x")).with_kinds(BasisKind::Tilde, BasisKind::Plain),
        Term1D::new(2, e("x^2")).with_kinds(BasisKind::DoubleTilde, BasisKind::Plain),
    ];
    ExampleCase {
        id: "ode-mixed",
        title: "variable-coefficient ODE with mixed elementary coefficients",
        problem: CaseProblem::Linear1D(Problem1D {
            j: 3,
            terms,
            rhs: e("(exp(x) + pi*cos(pi*x) - pi^2*x^2)*sin(pi*x)").into(),
            bc_left: Some(0.0),
            bc_right: Some(0.0),
        }),
        exact: e("sin(pi*x)"),
        a_form: Some(CoefficientSet1D::from_a(vec![
            e("exp(x)"),
            e("sin(pi*x)"),
            e("x^2"),
        ])),
        reference: rows([1.1e-6, 4.7e-9, 2.6e-11, 8.0e-14], [0.39, 0.41, 0.55, 1.01]),
    }
}

fn ode_gamma() -> ExampleCase {
    let g = "gamma(x + 1)";
    let dg = "gamma(x + 1)*digamma(x + 1)";
    let ddg = "gamma(x + 1)*(digamma(x + 1)^2 + trigamma(x + 1))";
    ExampleCase {
        id: "ode-gamma",
        title: "ODE with Gamma-function coefficients",
        problem: CaseProblem::Linear1D(Problem1D {
            j: 3,
            terms: vec![
                Term1D::new(0, e(&format!("-{dg}"))),
                Term1D::new(1, e(&format!("{g} - {dg}"))),
                Term1D::new(2, e(g)),
            ],
            rhs: e(&format!("-{dg} - {ddg}")).into(),
            bc_left: Some(0.0),
            bc_right: Some(0.0),
        }),
        exact: e("-ln(gamma(x + 1))"),
        a_form: Some(CoefficientSet1D::from_a(vec![
            e("0"),
            e(&format!("{g} + {dg}")),
            e(g),
        ])),
        reference: rows([2.3e-9, 7.6e-12, 1.9e-14, 4.3e-17], [0.31, 0.37, 0.54, 0.95]),
    }
}

/// a-form of the 2D example: sqrt(s) Laplacian + (x u_x + y u_y - 2u)/sqrt(s).
pub fn pde_sqrt_a_form() -> BTreeMap<(usize, usize), Expr> {
    let s = "sqrt(x^2 + y^2 + 1)";
    BTreeMap::from([
        ((2, 0), e(s)),
        ((0, 2), e(s)),
        ((1, 0), e(&format!("x/{s}"))),
        ((0, 1), e(&format!("y/{s}"))),
        ((0, 0), e(&format!("-2/{s}"))),
    ])
}

fn pde_sqrt() -> ExampleCase {
    let s = "sqrt(x^2 + y^2 + 1)";
    let terms = vec![
        Term2D::new(0, 0, e(&format!("-2/{s}"))),
        Term2D::new(0, 1, e(&format!("-y/{s}"))),
        Term2D::new(0, 2, e(s)),
        Term2D::new(1, 0, e(&format!("-x/{s}"))),
        Term2D::new(2, 0, e(s)),
    ];
    ExampleCase {
        id: "pde-sqrt",
        title: "2D elliptic PDE with square-root coefficients",
        problem: CaseProblem::Linear2D(Problem2D {
            j: 3,
            terms,
            rhs: e("0").into(),
            bc: Bc2D {
                x0: e("sqrt(1 + y^2)"),
                x1: e("sqrt(2 + y^2)"),
                y0: e("sqrt(1 + x^2)"),
                y1: e("sqrt(2 + x^2)"),
            },
        }),
        exact: e(s),
        a_form: None,
        reference: rows([8.7e-19, 7.5e-19, 6.9e-19, 6.6e-19], [0.36, 0.44, 0.74, 3.53]),
    }
}

fn ode_nonlinear() -> ExampleCase {
    let linear = Problem1D {
        j: 3,
        terms: vec![
            Term1D::new(0, e("sin(pi*x) - pi*cos(pi*x) - 2*exp(x) - 1")),
            Term1D::new(1, e("sin(pi*x) + 2*exp(x)")),
            Term1D::new(2, e("1")),
        ],
        rhs: e("0").into(),
        bc_left: Some(1.0),
        bc_right: Some((-1.0f64).exp()),
    };
    ExampleCase {
        id: "ode-nonlinear",
        title: "nonlinear ODE with a quadratic and a logarithmic term",
        problem: CaseProblem::Nonlinear(NonlinearProblem {
            linear,
            terms: vec![
                NonlinearTerm::new(0, e("(2*x + 3)*exp(2*x)"), Nonlinearity::Square),
                NonlinearTerm::new(1, e("-(x + 1)*exp(2*x)"), Nonlinearity::Square),
                NonlinearTerm::new(0, e("2"), Nonlinearity::Log),
            ],
        }),
        exact: e("exp(-x)"),
        a_form: None,
        reference: rows([8.0e-8, 1.1e-10, 1.2e-13, 1.9e-16], [0.72, 0.80, 0.95, 1.52]),
    }
}

/// Case `id` at level 3.
pub fn get_example(id: &str) -> Result<ExampleCase> {
    let case = match id {
        "ode-mixed" => ode_mixed(),
        "ode-gamma" => ode_gamma(),
        "pde-sqrt" => pde_sqrt(),
        "ode-nonlinear" => ode_nonlinear(),
        _ => return Err(Error::UnknownExample(id.to_string())),
    };
    case.check_bc()?;
    Ok(case)
}

pub fn all_examples() -> Vec<ExampleCase> {
    IDS.iter().map(|id| get_example(id).expect("registry")).collect()
}

fn coef_expr(c: &Coefficient) -> Result<&Expr> {
    match c {
        Coefficient::Expr(e) => Ok(e),
        Coefficient::Samples(_) => Err(Error::NotDifferentiable(
            "sampled coefficients have no symbolic form".into(),
        )),
    }
}

impl ExampleCase {
    pub fn at_level(mut self, j: u32) -> Self {
        self.problem.set_j(j);
        self
    }

    pub fn reference_row(&self, j: u32) -> Option<ReferenceRow> {
        self.reference.iter().copied().find(|r| r.j == j)
    }

    pub fn exact_at(&self, x: f64, y: f64) -> f64 {
        self.exact.eval_xy(x, y).unwrap_or(f64::NAN)
    }

    /// The exact solution must reproduce the Dirichlet data.
    fn check_bc(&self) -> Result<()> {
        let bad = |what: &str, got: f64, want: f64| {
            Error::InvalidParams(format!("{}: exact solution misses {what}: {got} vs {want}", self.id))
        };
        let check1 = |p: &Problem1D| -> Result<()> {
            for (x, bc) in [(0.0, p.bc_left), (1.0, p.bc_right)] {
                if let Some(v) = bc {
                    let u = self.exact.eval_x(x)?;
                    if (u - v).abs() > 1e-12 {
                        return Err(bad("an endpoint value", u, v));
                    }
                }
            }
            Ok(())
        };
        match &self.problem {
            CaseProblem::Linear1D(p) => check1(p),
            CaseProblem::Nonlinear(p) => check1(&p.linear),
            CaseProblem::Linear2D(p) => {
                for i in 0..=16 {
                    let t = i as f64 / 16.0;
                    for (edge, x, y) in [
                        (&p.bc.x0, 0.0, t),
                        (&p.bc.x1, 1.0, t),
                        (&p.bc.y0, t, 0.0),
                        (&p.bc.y1, t, 1.0),
                    ] {
                        let (u, v) = (self.exact.eval_xy(x, y)?, edge.eval_xy(x, y)?);
                        if (u - v).abs() > 1e-12 {
                            return Err(bad("an edge value", u, v));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Strong-form residual of the exact solution at (x, y), built from symbolic derivatives.
    pub fn strong_residual(&self, x: f64, y: f64) -> Result<f64> {
        let u = &self.exact;
        let mut acc = 0.0;
        let rhs = match &self.problem {
            CaseProblem::Linear1D(p) => {
                for t in &p.terms {
                    let bu = Expr::mul(coef_expr(&t.coef)?.clone(), u.clone());
                    acc += bu.nth_derivative(Var::X, t.order)?.eval_x(x)?;
                }
                &p.rhs
            }
            CaseProblem::Nonlinear(p) => {
                for t in &p.linear.terms {
                    let bu = Expr::mul(coef_expr(&t.coef)?.clone(), u.clone());
                    acc += bu.nth_derivative(Var::X, t.order)?.eval_x(x)?;
                }
                for t in &p.terms {
                    let c = coef_expr(&t.coef)?;
                    let g = match &t.kind {
                        Nonlinearity::Square => Expr::pow(u.clone(), Expr::num(2.0)),
                        Nonlinearity::Log => parse(&format!("ln({u})"))?,
                        Nonlinearity::Power(q) => Expr::pow(u.clone(), Expr::num(*q)),
                        Nonlinearity::Custom { name, .. } => {
                            return Err(Error::NotDifferentiable(name.clone()))
                        }
                    };
                    let cg = Expr::mul(c.clone(), g);
                    acc += cg.nth_derivative(Var::X, t.order)?.eval_x(x)?;
                }
                &p.linear.rhs
            }
            CaseProblem::Linear2D(p) => {
                for t in &p.terms {
                    let bu = Expr::mul(coef_expr(&t.coef)?.clone(), u.clone());
                    let d = bu.nth_derivative(Var::X, t.m)?.nth_derivative(Var::Y, t.n)?;
                    acc += d.eval_xy(x, y)?;
                }
                &p.rhs
            }
        };
        Ok(acc - coef_expr(rhs)?.eval_xy(x, y)?)
    }
}

/// Outcome of solving a case at one level.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub id: &'static str,
    pub j: u32,
    pub solution: SolutionGrid,
    pub err_sq: f64,
    pub seconds: f64,
    pub newton: Option<NewtonResult>,
}

/// Assemble and solve; the nonlinear case runs Newton from the bc-interpolant.
pub fn run_case(case: &ExampleCase, store: &ConnStore) -> Result<CaseRun> {
    let start = Instant::now();
    let (solution, newton) = match &case.problem {
        CaseProblem::Linear1D(p) => (solve_linear(&assemble_1d(p, store)?)?, None),
        CaseProblem::Linear2D(p) => (solve_linear(&assemble_2d(p, store)?)?, None),
        CaseProblem::Nonlinear(p) => {
            let sys = NonlinearSystem::assemble(p, store)?;
            let res = newton_solve(&sys, &p.bc_interpolant(), NEWTON_TOL, NEWTON_MAX_ITER)?;
            (res.solution.clone(), Some(res))
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let err_sq = err_sq(&solution, &|x, y| case.exact_at(x, y));
    Ok(CaseRun {
        id: case.id,
        j: case.problem.j(),
        solution,
        err_sq,
        seconds,
        newton,
    })
}

/// Branch search for the nonlinear case over the default seed set.
pub fn nonlinear_branches(case: &ExampleCase, store: &ConnStore) -> Result<MultiStartReport> {
    let CaseProblem::Nonlinear(p) = &case.problem else {
        return Err(Error::InvalidParams(format!("{} is not a nonlinear case", case.id)));
    };
    let sys = NonlinearSystem::assemble(p, store)?;
    Ok(multi_start(&sys, &p.default_seeds(), NEWTON_TOL, NEWTON_MAX_ITER))
}

/// Problem whose exact solution is `u`: r = sum_n d^n(b_n u)/dx^n, Dirichlet data from u.
pub fn manufacture(u: &Expr, b: &CoefficientSet1D, j: u32) -> Result<Problem1D> {
    let mut terms = Vec::with_capacity(b.b.len());
    let mut parts = Vec::with_capacity(b.b.len());
    for (n, bn) in b.b.iter().enumerate() {
        parts.push(Expr::mul(bn.clone(), u.clone()).nth_derivative(Var::X, n)?);
        terms.push(Term1D::new(n, bn.clone()));
    }
    Ok(Problem1D {
        j,
        terms,
        rhs: Expr::sum(parts).into(),
        bc_left: Some(u.eval_x(0.0)?),
        bc_right: Some(u.eval_x(1.0)?),
    })
}
