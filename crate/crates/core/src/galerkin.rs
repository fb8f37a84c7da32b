//! Assembly and solution of the linear wavelet-Galerkin systems in 1D and 2D.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisKind;
use crate::conncoef::{ConnKey, ConnStore};
use crate::error::{Error, Result};
use crate::exprlang::Expr;
use crate::linalg::lu_solve;

// ------------------------------------------------------------ matrix algebra

/// Elementwise product.
pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "hadamard of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// Column-dot product: column l of `a` scaled by v_l.
pub fn column_dot(a: &DMatrix<f64>, v: &[f64]) -> Result<DMatrix<f64>> {
    if a.ncols() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "column_dot of {} columns with a vector of length {}",
            a.ncols(),
            v.len()
        )));
    }
    let mut out = a.clone();
    for (mut col, s) in out.column_iter_mut().zip(v) {
        col *= *s;
    }
    Ok(out)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Row-major flattening.
pub fn rvec(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

// -------------------------------------------------------------- problem data

/// A coefficient given symbolically or as node samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Expr(Expr),
    /// Values at the nodes, length 2^j + 1 (1D) or (2^j + 1)^2 row-major (2D).
    Samples(Vec<f64>),
}

impl From<Expr> for Coefficient {
    fn from(e: Expr) -> Self {
        Coefficient::Expr(e)
    }
}

impl Coefficient {
    pub fn sample_1d(&self, j: u32) -> Result<Vec<f64>> {
        let n = (1usize << j) + 1;
        match self {
            Coefficient::Expr(e) => nodes(j).iter().map(|&x| e.eval_x(x)).collect(),
            Coefficient::Samples(v) if v.len() == n => Ok(v.clone()),
            Coefficient::Samples(v) => Err(Error::ShapeMismatch(format!(
                "expected {n} samples, got {}",
                v.len()
            ))),
        }
    }

    /// Row-major samples, entry k*(2^j+1)+l at (x_k, y_l).
    pub fn sample_2d(&self, j: u32) -> Result<Vec<f64>> {
        let xs = nodes(j);
        let n = xs.len();
        match self {
            Coefficient::Expr(e) => {
                let mut out = Vec::with_capacity(n * n);
                for &x in &xs {
                    for &y in &xs {
                        out.push(e.eval_xy(x, y)?);
                    }
                }
                Ok(out)
            }
            Coefficient::Samples(v) if v.len() == n * n => Ok(v.clone()),
            Coefficient::Samples(v) => Err(Error::ShapeMismatch(format!(
                "expected {} samples, got {}",
                n * n,
                v.len()
            ))),
        }
    }
}

/// Node coordinates k / 2^j.
pub fn nodes(j: u32) -> Vec<f64> {
    let size = 1usize << j;
    (0..=size).map(|k| k as f64 / size as f64).collect()
}

/// One term d^n(b_n u)/dx^n with the trial-basis kinds at each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Term1D {
    pub order: usize,
    pub coef: Coefficient,
    pub left: BasisKind,
    pub right: BasisKind,
}

impl Term1D {
    pub fn new(order: usize, coef: impl Into<Coefficient>) -> Self {
        Self {
            order,
            coef: coef.into(),
            left: BasisKind::Plain,
            right: BasisKind::Plain,
        }
    }

    pub fn with_kinds(mut self, left: BasisKind, right: BasisKind) -> Self {
        self.left = left;
        self.right = right;
        self
    }

    fn key(&self, j: u32) -> ConnKey {
        ConnKey::new(j, self.order, self.left, self.right)
    }
}

/// sum_n d^n(b_n u)/dx^n = r on [0, 1] with optional Dirichlet data.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem1D {
    pub j: u32,
    pub terms: Vec<Term1D>,
    pub rhs: Coefficient,
    pub bc_left: Option<f64>,
    pub bc_right: Option<f64>,
}

impl Problem1D {
    pub fn order(&self) -> usize {
        self.terms.iter().map(|t| t.order).max().unwrap_or(0)
    }

    /// Test rows l: the boundary row is dropped on each side with Dirichlet data.
    pub fn test_rows(&self) -> Vec<usize> {
        let size = 1usize << self.j;
        let lo = usize::from(self.bc_left.is_some());
        let hi = if self.bc_right.is_some() { size - 1 } else { size };
        (lo..=hi).collect()
    }

    pub fn known_nodes(&self) -> BTreeMap<usize, f64> {
        let mut known = BTreeMap::new();
        if let Some(v) = self.bc_left {
            known.insert(0, v);
        }
        if let Some(v) = self.bc_right {
            known.insert(1usize << self.j, v);
        }
        known
    }
}

/// One term d^{m+n}(b_{mn} u)/dx^m dy^n with trial kinds per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Term2D {
    pub m: usize,
    pub n: usize,
    pub coef: Coefficient,
    pub kinds_x: (BasisKind, BasisKind),
    pub kinds_y: (BasisKind, BasisKind),
}

impl Term2D {
    pub fn new(m: usize, n: usize, coef: impl Into<Coefficient>) -> Self {
        Self {
            m,
            n,
            coef: coef.into(),
            kinds_x: (BasisKind::Plain, BasisKind::Plain),
            kinds_y: (BasisKind::Plain, BasisKind::Plain),
        }
    }
}

/// Dirichlet data on the four edges of the unit square, each an expression in x and y.
#[derive(Debug, Clone, PartialEq)]
pub struct Bc2D {
    /// u(0, y)
    pub x0: Expr,
    /// u(1, y)
    pub x1: Expr,
    /// u(x, 0)
    pub y0: Expr,
    /// u(x, 1)
    pub y1: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem2D {
    pub j: u32,
    pub terms: Vec<Term2D>,
    pub rhs: Coefficient,
    pub bc: Bc2D,
}

impl Problem2D {
    /// Boundary node values (row-major index -> value), checking corner agreement.
    pub fn known_nodes(&self) -> Result<BTreeMap<usize, f64>> {
        let xs = nodes(self.j);
        let n = xs.len();
        let corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
        for (x, y) in corners {
            let along_x = if x == 0.0 { &self.bc.x0 } else { &self.bc.x1 };
            let along_y = if y == 0.0 { &self.bc.y0 } else { &self.bc.y1 };
            let a = along_x.eval_xy(x, y)?;
            let b = along_y.eval_xy(x, y)?;
            if (a - b).abs() > 1e-12 {
                return Err(Error::CornerMismatch(format!("({x}, {y}): {a} vs {b}")));
            }
        }
        let mut known = BTreeMap::new();
        for (k, &x) in xs.iter().enumerate() {
            for (l, &y) in xs.iter().enumerate() {
                let v = if k == 0 {
                    self.bc.x0.eval_xy(x, y)?
                } else if k == n - 1 {
                    self.bc.x1.eval_xy(x, y)?
                } else if l == 0 {
                    self.bc.y0.eval_xy(x, y)?
                } else if l == n - 1 {
                    self.bc.y1.eval_xy(x, y)?
                } else {
                    continue;
                };
                known.insert(k * n + l, v);
            }
        }
        Ok(known)
    }
}

// ----------------------------------------------------------------- systems

/// Reduced square system: rows are test indices, columns the unknown nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinSystem {
    pub dim: usize,
    pub j: u32,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Node index of each column.
    pub unknowns: Vec<usize>,
    /// Node index of each row's test function.
    pub test_rows: Vec<usize>,
    pub known: BTreeMap<usize, f64>,
}

impl GalerkinSystem {
    pub fn node_count(&self) -> usize {
        let n = (1usize << self.j) + 1;
        if self.dim == 1 {
            n
        } else {
            n * n
        }
    }

    /// Full nodal vector from values of the unknowns.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.node_count()];
        for (&node, v) in self.known.iter() {
            u[node] = *v;
        }
        for (&node, v) in self.unknowns.iter().zip(x) {
            u[node] = *v;
        }
        u
    }
}

/// Nodal values u(k/2^j) (1D) or u(k/2^j, l/2^j) at row-major index k*(2^j+1)+l (2D).
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGrid {
    pub dim: usize,
    pub j: u32,
    pub values: Vec<f64>,
}

impl SolutionGrid {
    /// Coordinates of node `i`.
    pub fn coords(&self, i: usize) -> (f64, Option<f64>) {
        let size = 1usize << self.j;
        let h = 1.0 / size as f64;
        if self.dim == 1 {
            (i as f64 * h, None)
        } else {
            let n = size + 1;
            ((i / n) as f64 * h, Some((i % n) as f64 * h))
        }
    }
}

/// Full (2^j+1)-square matrix sum_n A_n^T (.) b_n, plus A_0^T r.
pub(crate) fn full_1d(p: &Problem1D, store: &ConnStore) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = (1usize << p.j) + 1;
    let mut m = DMatrix::zeros(n, n);
    for t in &p.terms {
        let a = store.get_or_build(t.key(p.j))?;
        let b = t.coef.sample_1d(p.j)?;
        m += column_dot(&a.data.transpose(), &b)?;
    }
    let a0 = store.get_or_build(ConnKey::plain(p.j, 0))?;
    let r = DVector::from_vec(p.rhs.sample_1d(p.j)?);
    let rhs = a0.data.transpose() * r;
    Ok((m, rhs))
}

/// Restrict a full system to test rows and unknown columns, moving known columns to the rhs.
fn reduce(
    full: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rows: &[usize],
    known: &BTreeMap<usize, f64>,
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let unknowns: Vec<usize> = (0..full.ncols()).filter(|c| !known.contains_key(c)).collect();
    let mut m = DMatrix::zeros(rows.len(), unknowns.len());
    let mut b = DVector::zeros(rows.len());
    for (ri, &r) in rows.iter().enumerate() {
        for (ci, &c) in unknowns.iter().enumerate() {
            m[(ri, ci)] = full[(r, c)];
        }
        let mut acc = rhs[r];
        for (&c, v) in known {
            acc -= full[(r, c)] * v;
        }
        b[ri] = acc;
    }
    (m, b, unknowns)
}

pub fn assemble_1d(p: &Problem1D, store: &ConnStore) -> Result<GalerkinSystem> {
    let (full, rhs) = full_1d(p, store)?;
    let rows = p.test_rows();
    let known = p.known_nodes();
    let (matrix, rhs, unknowns) = reduce(&full, &rhs, &rows, &known);
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} test rows for {} unknowns",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    Ok(GalerkinSystem {
        dim: 1,
        j: p.j,
        matrix,
        rhs,
        unknowns,
        test_rows: rows,
        known,
    })
}

fn key_2d(j: u32, order: usize, kinds: (BasisKind, BasisKind)) -> ConnKey {
    ConnKey::new(j, order, kinds.0, kinds.1)
}

/// Nonzero entries of column `p` of a connection matrix as (k, Gamma_{k,p}).
fn column_entries(a: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..a.ncols())
        .map(|p| {
            (0..a.nrows())
                .filter(|&k| a[(k, p)] != 0.0)
                .map(|k| (k, a[(k, p)]))
                .collect()
        })
        .collect()
}

/// 2D assembly directly into the reduced interior system.
pub fn assemble_2d(p: &Problem2D, store: &ConnStore) -> Result<GalerkinSystem> {
    let known = p.known_nodes()?;
    let size = 1usize << p.j;
    let n = size + 1;
    let interior: Vec<usize> = (1..size).flat_map(|k| (1..size).map(move |l| k * n + l)).collect();
    let mut col_of = vec![usize::MAX; n * n];
    for (c, &node) in interior.iter().enumerate() {
        col_of[node] = c;
    }
    let dim = interior.len();
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    for t in &p.terms {
        let am = store.get_or_build(key_2d(p.j, t.m, t.kinds_x))?;
        let an = store.get_or_build(key_2d(p.j, t.n, t.kinds_y))?;
        let b = t.coef.sample_2d(p.j)?;
        let cm = column_entries(&am.data);
        let cn = column_entries(&an.data);
        for (row, &node) in interior.iter().enumerate() {
            let (pp, qq) = (node / n, node % n);
            for &(k, gm) in &cm[pp] {
                for &(l, gn) in &cn[qq] {
                    let idx = k * n + l;
                    let v = gm * gn * b[idx];
                    match known.get(&idx) {
                        Some(u) => rhs[row] -= v * u,
                        None => matrix[(row, col_of[idx])] += v,
                    }
                }
            }
        }
    }

    let a0 = store.get_or_build(ConnKey::plain(p.j, 0))?;
    let r = p.rhs.sample_2d(p.j)?;
    let c0 = column_entries(&a0.data);
    for (row, &node) in interior.iter().enumerate() {
        let (pp, qq) = (node / n, node % n);
        let mut acc = 0.0;
        for &(k, gm) in &c0[pp] {
            for &(l, gn) in &c0[qq] {
                acc += gm * gn * r[k * n + l];
            }
        }
        rhs[row] += acc;
    }

    Ok(GalerkinSystem {
        dim: 2,
        j: p.j,
        matrix,
        rhs,
        unknowns: interior.clone(),
        test_rows: interior,
        known,
    })
}

/// Reference 2D assembly through explicit Kronecker products and rvec; O(n^4) memory.
pub fn assemble_2d_kron(p: &Problem2D, store: &ConnStore) -> Result<GalerkinSystem> {
    let known = p.known_nodes()?;
    let size = 1usize << p.j;
    let n = size + 1;
    let mut full = DMatrix::zeros(n * n, n * n);
    for t in &p.terms {
        let am = store.get_or_build(key_2d(p.j, t.m, t.kinds_x))?;
        let an = store.get_or_build(key_2d(p.j, t.n, t.kinds_y))?;
        let b = DMatrix::from_row_slice(n, n, &t.coef.sample_2d(p.j)?);
        full += column_dot(&kron(&am.data, &an.data).transpose(), &rvec(&b))?;
    }
    let a0 = store.get_or_build(ConnKey::plain(p.j, 0))?;
    let r = DMatrix::from_row_slice(n, n, &p.rhs.sample_2d(p.j)?);
    let rhs = kron(&a0.data, &a0.data).transpose() * DVector::from_vec(rvec(&r));
    let rows: Vec<usize> = (1..size).flat_map(|k| (1..size).map(move |l| k * n + l)).collect();
    let (matrix, rhs, unknowns) = reduce(&full, &rhs, &rows, &known);
    Ok(GalerkinSystem {
        dim: 2,
        j: p.j,
        matrix,
        rhs,
        unknowns,
        test_rows: rows,
        known,
    })
}

/// LU solve with a residual check, then reinsert the known nodes.
pub fn solve_linear(sys: &GalerkinSystem) -> Result<SolutionGrid> {
    let x = lu_solve(&sys.matrix, &sys.rhs, 1e-10)?;
    Ok(SolutionGrid {
        dim: sys.dim,
        j: sys.j,
        values: sys.embed(x.as_slice()),
    })
}

/// Mean of squared nodal errors.
pub fn err_sq(sol: &SolutionGrid, exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let total: f64 = (0..sol.values.len())
        .map(|i| {
            let (x, y) = sol.coords(i);
            let d = sol.values[i] - exact(x, y.unwrap_or(0.0));
            d * d
        })
        .sum();
    total / sol.values.len() as f64
}

/// Squared error |u_w - u_e|^2 at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeError {
    pub x: f64,
    pub y: Option<f64>,
    pub err: f64,
}

pub fn error_distribution(sol: &SolutionGrid, exact: &dyn Fn(f64, f64) -> f64) -> Vec<NodeError> {
    (0..sol.values.len())
        .map(|i| {
            let (x, y) = sol.coords(i);
            let d = sol.values[i] - exact(x, y.unwrap_or(0.0));
            NodeError { x, y, err: d * d }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::filterbank::FilterBank;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn hadamard_examples() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(hadamard(&a, &b).unwrap(), m(2, 2, &[5.0, 12.0, 21.0, 32.0]));
        assert_eq!(hadamard(&a, &DMatrix::from_element(2, 2, 1.0)).unwrap(), a);
        assert_eq!(hadamard(&a, &DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
        assert!(hadamard(&a, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn column_dot_examples() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(column_dot(&a, &[10.0, 100.0]).unwrap(), m(2, 2, &[10.0, 200.0, 30.0, 400.0]));
        assert_eq!(column_dot(&a, &[1.0, 1.0]).unwrap(), a);
        assert!(column_dot(&a, &[1.0]).is_err());
    }

    #[test]
    fn kron_and_rvec_examples() {
        let b = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&DMatrix::identity(2, 2), &b);
        let mut want = DMatrix::zeros(4, 4);
        want.view_mut((0, 0), (2, 2)).copy_from(&b);
        want.view_mut((2, 2), (2, 2)).copy_from(&b);
        assert_eq!(k, want);
        assert_eq!(rvec(&b), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn identity_system_returns_rhs() {
        let sys = GalerkinSystem {
            dim: 1,
            j: 3,
            matrix: DMatrix::identity(7, 7),
            rhs: DVector::from_fn(7, |i, _| i as f64),
            unknowns: (1..8).collect(),
            test_rows: (1..8).collect(),
            known: [(0, -1.0), (8, 9.0)].into_iter().collect(),
        };
        let sol = solve_linear(&sys).unwrap();
        assert_eq!(sol.values, vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0]);
    }

    #[test]
    fn error_metrics() {
        let sol = SolutionGrid {
            dim: 1,
            j: 3,
            values: nodes(3).iter().map(|x| x * x + 0.01).collect(),
        };
        let e = err_sq(&sol, &|x, _| x * x);
        assert!((e - 1e-4).abs() < 1e-18);
        let exact = SolutionGrid { values: nodes(3).iter().map(|x| x * x).collect(), ..sol.clone() };
        assert_eq!(err_sq(&exact, &|x, _| x * x), 0.0);
        let d = error_distribution(&sol, &|x, _| x * x);
        assert_eq!(d.len(), 9);
        assert_eq!(d[8].x, 1.0);
    }

    #[test]
    fn manufactured_quadratic_is_recovered() {
        // u = x(1-x), u'' + u = 2 - ... written as b = (1, 0, 1)
        let store = ConnStore::in_memory(FilterBank::reference());
        let p = Problem1D {
            j: 4,
            terms: vec![
                Term1D::new(0, parse("1").unwrap()),
                Term1D::new(2, parse("1").unwrap()),
            ],
            rhs: parse("x*(1-x) - 2").unwrap().into(),
            bc_left: Some(0.0),
            bc_right: Some(0.0),
        };
        let sys = assemble_1d(&p, &store).unwrap();
        assert_eq!(sys.matrix.shape(), (15, 15));
        let sol = solve_linear(&sys).unwrap();
        for (x, u) in nodes(4).iter().zip(&sol.values) {
            assert!((u - x * (1.0 - x)).abs() < 1e-9, "x={x}: {u}");
        }
    }

    #[test]
    fn corner_mismatch_is_reported() {
        let p = Problem2D {
            j: 3,
            terms: vec![Term2D::new(0, 0, parse("1").unwrap())],
            rhs: parse("0").unwrap().into(),
            bc: Bc2D {
                x0: parse("0").unwrap(),
                x1: parse("0").unwrap(),
                y0: parse("0").unwrap(),
                y1: parse("x").unwrap(),
            },
        };
        assert!(matches!(p.known_nodes(), Err(Error::CornerMismatch(_))));
    }

    #[test]
    fn missing_entries_surface_from_read_only_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = ConnStore::open(
            dir.path(),
            FilterBank::reference(),
            crate::conncoef::StoreMode::ReadOnly,
        )
        .unwrap();
        let p = Problem1D {
            j: 3,
            terms: vec![Term1D::new(0, parse("1").unwrap())],
            rhs: parse("1").unwrap().into(),
            bc_left: None,
            bc_right: None,
        };
        assert!(matches!(assemble_1d(&p, &store), Err(Error::MissingConn(_))));
    }
}
