//! Nonlinear 1D Galerkin systems and a damped Newton solver.
//!
//! The discrete residual is
//! F(u) = [sum_n A_n^T (.) b_n] u + sum_t [A_{n_t}^T (.) c_t] g_t(u) - A_0^T r,
//! restricted to the test rows, with the Dirichlet nodes held fixed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisKind;
use crate::conncoef::{ConnKey, ConnStore};
use crate::error::{Error, Result};
use crate::galerkin::{column_dot, full_1d, Coefficient, Problem1D, SolutionGrid};
use crate::linalg::lu_solve;

pub const DAMPING_FLOOR: f64 = 1.0 / (1u32 << 20) as f64;
pub const DEDUP_GAP: f64 = 1e-6;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Elementwise nonlinearity g(u) with derivative g'(u).
#[derive(Clone)]
pub enum Nonlinearity {
    Square,
    Log,
    Power(f64),
    /// User-registered pair; `positive` demands u > 0 at every node.
    Custom {
        name: String,
        value: ScalarFn,
        deriv: ScalarFn,
        positive: bool,
    },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Square => write!(f, "Square"),
            Nonlinearity::Log => write!(f, "Log"),
            Nonlinearity::Power(p) => write!(f, "Power({p})"),
            Nonlinearity::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Nonlinearity {
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        positive: bool,
    ) -> Self {
        Nonlinearity::Custom {
            name: name.into(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            positive,
        }
    }

    /// Name used in problem files: `square`, `log`, `pow(p)`.
    pub fn name(&self) -> String {
        match self {
            Nonlinearity::Square => "square".into(),
            Nonlinearity::Log => "log".into(),
            Nonlinearity::Power(p) => format!("pow({p:?})"),
            Nonlinearity::Custom { name, .. } => name.clone(),
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "square" | "u^2" => Some(Nonlinearity::Square),
            "log" | "ln" | "ln(u)" => Some(Nonlinearity::Log),
            _ => {
                let inner = s.strip_prefix("pow(")?.strip_suffix(')')?;
                inner.trim().parse().ok().map(Nonlinearity::Power)
            }
        }
    }

    fn needs_positive(&self) -> bool {
        match self {
            Nonlinearity::Square => false,
            Nonlinearity::Log => true,
            Nonlinearity::Power(p) => p.fract() != 0.0 || *p < 0.0,
            Nonlinearity::Custom { positive, .. } => *positive,
        }
    }

    pub fn check(&self, u: &[f64]) -> Result<()> {
        if self.needs_positive() {
            if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::DomainViolation(format!(
                    "{} needs u > 0, node {i} has {v}",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Square => u * u,
            Nonlinearity::Log => u.ln(),
            Nonlinearity::Power(p) => u.powf(*p),
            Nonlinearity::Custom { value, .. } => value(u),
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Square => 2.0 * u,
            Nonlinearity::Log => 1.0 / u,
            Nonlinearity::Power(p) => p * u.powf(p - 1.0),
            Nonlinearity::Custom { deriv, .. } => deriv(u),
        }
    }
}

/// d^n(c(x) g(u))/dx^n with n = `order`.
#[derive(Debug, Clone)]
pub struct NonlinearTerm {
    pub order: usize,
    pub coef: Coefficient,
    pub kind: Nonlinearity,
    pub left: BasisKind,
    pub right: BasisKind,
}

impl NonlinearTerm {
    pub fn new(order: usize, coef: impl Into<Coefficient>, kind: Nonlinearity) -> Self {
        Self {
            order,
            coef: coef.into(),
            kind,
            left: BasisKind::Plain,
            right: BasisKind::Plain,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub linear: Problem1D,
    pub terms: Vec<NonlinearTerm>,
}

impl NonlinearProblem {
    /// Linear interpolation between the Dirichlet values (0 where absent).
    pub fn bc_interpolant(&self) -> Vec<f64> {
        let a = self.linear.bc_left.unwrap_or(0.0);
        let b = self.linear.bc_right.unwrap_or(0.0);
        crate::galerkin::nodes(self.linear.j)
            .iter()
            .map(|x| a + (b - a) * x)
            .collect()
    }

    /// Interior of the bc-interpolant scaled by 1, 2, 3, then shifted by +-0.5.
    pub fn default_seeds(&self) -> Vec<Vec<f64>> {
        let base = self.bc_interpolant();
        let last = base.len() - 1;
        let mut seeds = Vec::new();
        let adjust = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            base.iter()
                .enumerate()
                .map(|(i, &v)| if i == 0 || i == last { v } else { f(v) })
                .collect()
        };
        for s in [1.0, 2.0, 3.0] {
            seeds.push(adjust(&|v| s * v));
        }
        for o in [0.5, -0.5] {
            seeds.push(adjust(&|v| v + o));
        }
        seeds
    }
}

/// Assembled full-size blocks; evaluation restricts to test rows and unknown columns.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    pub j: u32,
    pub linear: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub terms: Vec<(DMatrix<f64>, Nonlinearity)>,
    pub test_rows: Vec<usize>,
    pub unknowns: Vec<usize>,
    pub known: BTreeMap<usize, f64>,
}

impl NonlinearSystem {
    pub fn assemble(p: &NonlinearProblem, store: &ConnStore) -> Result<Self> {
        let (linear, rhs) = full_1d(&p.linear, store)?;
        let j = p.linear.j;
        let mut terms = Vec::with_capacity(p.terms.len());
        for t in &p.terms {
            let a = store.get_or_build(ConnKey::new(j, t.order, t.left, t.right))?;
            let c = t.coef.sample_1d(j)?;
            terms.push((column_dot(&a.data.transpose(), &c)?, t.kind.clone()));
        }
        let test_rows = p.linear.test_rows();
        let known = p.linear.known_nodes();
        let unknowns: Vec<usize> = (0..linear.ncols()).filter(|c| !known.contains_key(c)).collect();
        if test_rows.len() != unknowns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} test rows for {} unknowns",
                test_rows.len(),
                unknowns.len()
            )));
        }
        Ok(Self {
            j,
            linear,
            rhs,
            terms,
            test_rows,
            unknowns,
            known,
        })
    }

    pub fn node_count(&self) -> usize {
        self.linear.ncols()
    }

    /// Full node vector from the unknowns, with Dirichlet values inserted.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.node_count()];
        for (&i, v) in &self.known {
            u[i] = *v;
        }
        for (&i, v) in self.unknowns.iter().zip(x) {
            u[i] = *v;
        }
        u
    }

    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.unknowns.iter().map(|&i| u[i]).collect()
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "node vector of length {}, expected {}",
                u.len(),
                self.node_count()
            )));
        }
        Ok(())
    }

    /// F(u) on the test rows; `u` is a full node vector whose Dirichlet entries are overridden.
    pub fn residual(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.check_len(u)?;
        let u = self.embed(&self.restrict(u));
        for (_, g) in &self.terms {
            g.check(&u)?;
        }
        let uv = DVector::from_column_slice(&u);
        let mut full = &self.linear * &uv - &self.rhs;
        for (q, g) in &self.terms {
            let gu = DVector::from_iterator(u.len(), u.iter().map(|&v| g.value(v)));
            full += q * gu;
        }
        Ok(DVector::from_iterator(
            self.test_rows.len(),
            self.test_rows.iter().map(|&r| full[r]),
        ))
    }

    /// dF/du on the test rows and unknown columns.
    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(u)?;
        let u = self.embed(&self.restrict(u));
        let mut full = self.linear.clone();
        for (q, g) in &self.terms {
            g.check(&u)?;
            let d: Vec<f64> = u.iter().map(|&v| g.deriv(v)).collect();
            full += column_dot(q, &d)?;
        }
        Ok(DMatrix::from_fn(self.test_rows.len(), self.unknowns.len(), |r, c| {
            full[(self.test_rows[r], self.unknowns[c])]
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    /// ||F||_inf before the step.
    pub residual: f64,
    /// Accepted damping factor.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub solution: SolutionGrid,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<NewtonStep>,
}

/// Damped Newton from the full node vector `u0`.
pub fn newton_solve(sys: &NonlinearSystem, u0: &[f64], tol: f64, max_iter: usize) -> Result<NewtonResult> {
    let mut x = sys.restrict(u0);
    let mut f = sys.residual(&sys.embed(&x))?;
    let mut history = Vec::new();
    loop {
        let norm = f.amax();
        if norm <= tol {
            return Ok(NewtonResult {
                solution: SolutionGrid {
                    dim: 1,
                    j: sys.j,
                    values: sys.embed(&x),
                },
                iterations: history.len(),
                residual: norm,
                history,
            });
        }
        if history.len() >= max_iter {
            return Err(Error::NewtonNoConvergence {
                max_iter,
                residual: norm,
            });
        }
        let jac = sys.jacobian(&sys.embed(&x))?;
        let delta = lu_solve(&jac, &(-&f), 1e-8)?;
        let merit = f.norm();
        let mut lambda = 1.0;
        let accepted = loop {
            if lambda < DAMPING_FLOOR {
                break None;
            }
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            match sys.residual(&sys.embed(&trial)) {
                Ok(ft) if ft.norm() < merit => break Some((trial, ft)),
                Ok(_) | Err(Error::DomainViolation(_)) => lambda *= 0.5,
                Err(e) => return Err(e),
            }
        };
        let Some((next, fnext)) = accepted else {
            return Err(Error::DampingFloor { residual: norm });
        };
        history.push(NewtonStep {
            residual: norm,
            damping: lambda,
        });
        x = next;
        f = fnext;
    }
}

#[derive(Debug, Clone, Default)]
pub struct MultiStartReport {
    /// Distinct solutions in seed order.
    pub branches: Vec<NewtonResult>,
    /// Index of the first seed that reached each branch.
    pub seed_of_branch: Vec<usize>,
    pub failures: Vec<(usize, Error)>,
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Newton from every seed; results closer than [`DEDUP_GAP`] are merged.
pub fn multi_start(
    sys: &NonlinearSystem,
    seeds: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> MultiStartReport {
    let results: Vec<Result<NewtonResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|seed| s.spawn(move || newton_solve(sys, seed, tol, max_iter)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("newton worker panicked"))
            .collect()
    });
    let mut report = MultiStartReport::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => {
                let dup = report
                    .branches
                    .iter()
                    .any(|b| max_gap(&b.solution.values, &res.solution.values) <= DEDUP_GAP);
                if !dup {
                    report.branches.push(res);
                    report.seed_of_branch.push(i);
                }
            }
            Err(e) => report.failures.push((i, e)),
        }
    }
    report
}
