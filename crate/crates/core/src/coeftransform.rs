//! Rewrite sum_n a_n(x) u^(n) as sum_n d^n(b_n(x) u)/dx^n, and the 2D analogue.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exprlang::{Expr, Var};

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn sign(p: usize) -> f64 {
    if p % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Coefficients of a 1D operator of order `a.len() - 1`; `b` is filled by [`transform_1d`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet1D {
    pub a: Vec<Expr>,
    pub b: Vec<Expr>,
}

impl CoefficientSet1D {
    pub fn from_a(a: Vec<Expr>) -> Self {
        Self { a, b: Vec::new() }
    }

    pub fn order(&self) -> usize {
        self.a.len().max(self.b.len()).saturating_sub(1)
    }
}

/// b_n = sum_{r >= n} (-1)^(r-n) C(r, n) a_r^(r-n).
pub fn transform_1d(set: &CoefficientSet1D) -> Result<CoefficientSet1D> {
    let a = &set.a;
    let mut b = Vec::with_capacity(a.len());
    for n in 0..a.len() {
        let mut terms = Vec::new();
        for (r, ar) in a.iter().enumerate().skip(n) {
            let d = ar.nth_derivative(Var::X, r - n)?;
            let c = sign(r - n) * binomial(r, n) as f64;
            terms.push(Expr::mul(Expr::num(c), d));
        }
        b.push(Expr::sum(terms));
    }
    Ok(CoefficientSet1D { a: a.clone(), b })
}

/// Sampled variant: `derivs[r][k][node]` holds a_r^(k) at the nodes for k <= r.
///
/// Returns b_n at the nodes. Derivatives are never estimated from samples.
pub fn transform_1d_sampled(derivs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let len = derivs
        .first()
        .and_then(|d| d.first())
        .map_or(0, Vec::len);
    for (r, d) in derivs.iter().enumerate() {
        if d.len() < r + 1 {
            return Err(Error::NotDifferentiable(format!(
                "a_{r} needs derivatives up to order {r}, {} supplied",
                d.len().saturating_sub(1)
            )));
        }
        if d.iter().any(|v| v.len() != len) {
            return Err(Error::ShapeMismatch(format!("a_{r} samples have inconsistent length")));
        }
    }
    let mut b = vec![vec![0.0; len]; derivs.len()];
    for (n, bn) in b.iter_mut().enumerate() {
        for (r, d) in derivs.iter().enumerate().skip(n) {
            let c = sign(r - n) * binomial(r, n) as f64;
            for (out, v) in bn.iter_mut().zip(&d[r - n]) {
                *out += c * v;
            }
        }
    }
    Ok(b)
}

/// Coefficients a_{m,n} of d^{m+n}u/dx^m dy^n; `b` is filled by [`transform_2d`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientSet2D {
    pub a: BTreeMap<(usize, usize), Expr>,
    pub b: BTreeMap<(usize, usize), Expr>,
}

impl CoefficientSet2D {
    pub fn from_a(a: BTreeMap<(usize, usize), Expr>) -> Self {
        Self {
            a,
            b: BTreeMap::new(),
        }
    }

    /// Highest orders (M, N) in x and y.
    pub fn orders(&self) -> (usize, usize) {
        self.a
            .keys()
            .chain(self.b.keys())
            .fold((0, 0), |(m, n), &(i, j)| (m.max(i), n.max(j)))
    }
}

/// b_{m,n} = sum_{r>=m, s>=n} (-1)^{(r-m)+(s-n)} C(r,m) C(s,n) d^{(r-m)+(s-n)} a_{r,s} / dx^{r-m} dy^{s-n}.
pub fn transform_2d(set: &CoefficientSet2D) -> Result<CoefficientSet2D> {
    let (mo, no) = set.orders();
    let mut b = BTreeMap::new();
    for m in 0..=mo {
        for n in 0..=no {
            let mut terms = Vec::new();
            for (&(r, s), ars) in set.a.range((m, 0)..) {
                if s < n {
                    continue;
                }
                let d = ars
                    .nth_derivative(Var::X, r - m)?
                    .nth_derivative(Var::Y, s - n)?;
                let c = sign(r - m + s - n) * (binomial(r, m) * binomial(s, n)) as f64;
                terms.push(Expr::mul(Expr::num(c), d));
            }
            let e = Expr::sum(terms);
            if !e.is_zero() || set.a.contains_key(&(m, n)) {
                b.insert((m, n), e);
            }
        }
    }
    Ok(CoefficientSet2D {
        a: set.a.clone(),
        b,
    })
}
