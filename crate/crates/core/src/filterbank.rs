//! Generalized Coiflet-type low-pass filters: solving, verification, moments, persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const REFERENCE_N6_M1_7: &str = include_str!("../data/gcw_n6_m1_7.txt");

/// Default tolerance for the sum and orthogonality families.
pub const LINEAR_TOL: f64 = 1e-12;
/// Default tolerance for the (scaled) moment families.
pub const MOMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WaveletParams {
    /// Number of vanishing moments.
    pub n: usize,
    /// First moment of the scaling function.
    pub m1: i64,
}

impl WaveletParams {
    pub fn new(n: usize, m1: i64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("N must be at least 1".into()));
        }
        if m1 <= 0 {
            return Err(Error::InvalidParams(format!("M1 must be positive, got {m1}")));
        }
        Ok(Self { n, m1 })
    }

    /// Number of filter taps, 3N. The support of phi is [0, 3N - 1].
    pub fn support_len(&self) -> usize {
        3 * self.n
    }

    /// Right end of the support of phi.
    pub fn support_end(&self) -> i64 {
        self.support_len() as i64 - 1
    }
}

impl Default for WaveletParams {
    fn default() -> Self {
        Self { n: 6, m1: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub params: WaveletParams,
    pub p: Vec<f64>,
}

impl FilterBank {
    pub fn new(params: WaveletParams, p: Vec<f64>) -> Result<Self> {
        if p.len() != params.support_len() {
            return Err(Error::InvalidParams(format!(
                "expected {} coefficients, got {}",
                params.support_len(),
                p.len()
            )));
        }
        Ok(Self { params, p })
    }

    /// The shipped N=6, M1=7 filter.
    pub fn reference() -> Self {
        parse_filter(REFERENCE_N6_M1_7).expect("embedded reference filter is well-formed")
    }

    /// Stored coefficient set for `params`, if one ships with the library.
    pub fn stored(params: WaveletParams) -> Option<Self> {
        (params == WaveletParams::default()).then(Self::reference)
    }

    /// Tie-break energy sum k^2 p_k^2 used to choose among roots.
    pub fn concentration(&self) -> f64 {
        self.p
            .iter()
            .enumerate()
            .map(|(k, &v)| (k * k) as f64 * v * v)
            .sum()
    }

    /// Hex SHA-256 over the little-endian bytes of the coefficients.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("N={} M1={}", self.params.n, self.params.m1).as_bytes());
        for v in &self.p {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// Largest residual per family: `sum`, `orthogonality`, `moments`, `alternating`.
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
}

impl ConstraintReport {
    pub fn residual(&self, family: &str) -> f64 {
        self.residuals.get(family).copied().unwrap_or(f64::NAN)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.values().fold(0.0, |a, &b| a.max(b))
    }
}

fn powi(k: usize, n: usize) -> f64 {
    (k as f64).powi(n as i32)
}

/// Scale used to make a k^n moment residual relative.
fn moment_scale(p: &[f64], n: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, v)| powi(k, n) * v.abs())
        .sum::<f64>()
        .max(1.0)
}

/// Residual families of the constraint system.
///
/// Moment residuals are relative to sum k^n |p_k| so the same tolerance applies
/// across orders.
fn family_residuals(params: WaveletParams, p: &[f64]) -> BTreeMap<String, f64> {
    let l = p.len();
    let mut out = BTreeMap::new();
    out.insert("sum".to_string(), (p.iter().sum::<f64>() - 2.0).abs());

    let mut orth: f64 = 0.0;
    for m in 0..=(l.saturating_sub(1) / 2) {
        let s: f64 = (0..l.saturating_sub(2 * m)).map(|k| p[k] * p[k + 2 * m]).sum();
        let target = if m == 0 { 2.0 } else { 0.0 };
        orth = orth.max((s - target).abs());
    }
    out.insert("orthogonality".to_string(), orth);

    let mut mom: f64 = 0.0;
    let mut alt: f64 = 0.0;
    for n in 0..params.n {
        let scale = moment_scale(p, n);
        let s: f64 = p.iter().enumerate().map(|(k, v)| powi(k, n) * v).sum();
        let target = 2.0 * (params.m1 as f64).powi(n as i32);
        if n > 0 {
            mom = mom.max((s - target).abs() / scale);
        }
        let a: f64 = p
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { powi(k, n) * v } else { -powi(k, n) * v })
            .sum();
        alt = alt.max(a.abs() / scale);
    }
    out.insert("moments".to_string(), mom);
    out.insert("alternating".to_string(), alt);
    out
}

/// Check all constraint families against a single tolerance.
pub fn verify_filter(fb: &FilterBank, tol: f64) -> ConstraintReport {
    verify_filter_split(fb, tol, tol)
}

/// Check sum/orthogonality against `linear_tol` and both moment families against `moment_tol`.
pub fn verify_filter_split(fb: &FilterBank, linear_tol: f64, moment_tol: f64) -> ConstraintReport {
    let residuals = family_residuals(fb.params, &fb.p);
    let tolerances: BTreeMap<String, f64> = residuals
        .keys()
        .map(|k| {
            let t = match k.as_str() {
                "sum" | "orthogonality" => linear_tol,
                _ => moment_tol,
            };
            (k.clone(), t)
        })
        .collect();
    let pass = residuals
        .iter()
        .all(|(k, r)| r.is_finite() && *r <= tolerances[k]);
    ConstraintReport {
        residuals,
        tolerances,
        pass,
    }
}

/// Stacked constraint vector and its Jacobian, rows scaled to comparable size.
fn constraint_system(params: WaveletParams, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let l = p.len();
    let n_orth = l.saturating_sub(1) / 2 + 1;
    let rows = 1 + n_orth + (params.n - 1) + params.n;
    let mut f = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, l);
    let mut r = 0;

    f[r] = p.iter().sum::<f64>() - 2.0;
    jac.row_mut(r).fill(1.0);
    r += 1;

    for m in 0..n_orth {
        let s = 2 * m;
        let mut acc = 0.0;
        for k in 0..l.saturating_sub(s) {
            acc += p[k] * p[k + s];
        }
        f[r] = acc - if m == 0 { 2.0 } else { 0.0 };
        for i in 0..l {
            let mut d = 0.0;
            if i + s < l {
                d += p[i + s];
            }
            if i >= s {
                d += p[i - s];
            }
            jac[(r, i)] = d;
        }
        r += 1;
    }

    let m1 = params.m1 as f64;
    for n in 1..params.n {
        let scale = m1.powi(n as i32);
        let target = 2.0 * scale;
        f[r] = (p.iter().enumerate().map(|(k, v)| powi(k, n) * v).sum::<f64>() - target) / scale;
        for k in 0..l {
            jac[(r, k)] = powi(k, n) / scale;
        }
        r += 1;
    }
    for n in 0..params.n {
        let scale = m1.powi(n as i32);
        let mut acc = 0.0;
        for k in 0..l {
            let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
            jac[(r, k)] = sgn * powi(k, n) / scale;
            acc += jac[(r, k)] * p[k];
        }
        f[r] = acc;
        r += 1;
    }
    (f, jac)
}

/// Polish `seed` (or the stored coefficient set) into a filter satisfying every constraint.
///
/// Gauss-Newton on the full stacked system with step halving. Converged filters
/// have every residual family at or below 1e-12.
pub fn solve_filter(params: WaveletParams, seed: Option<&[f64]>) -> Result<FilterBank> {
    let params = WaveletParams::new(params.n, params.m1)?;
    let start: Vec<f64> = match seed {
        Some(s) => {
            if s.len() != params.support_len() {
                return Err(Error::InvalidParams(format!(
                    "seed has {} coefficients, expected {}",
                    s.len(),
                    params.support_len()
                )));
            }
            s.to_vec()
        }
        None => FilterBank::stored(params)
            .ok_or_else(|| {
                Error::InvalidParams(format!(
                    "no stored coefficient set for N={} M1={}; supply a seed",
                    params.n, params.m1
                ))
            })?
            .p,
    };
    gauss_newton(params, start, 200)
}

fn gauss_newton(params: WaveletParams, mut p: Vec<f64>, max_iter: usize) -> Result<FilterBank> {
    let (mut f, mut jac) = constraint_system(params, &p);
    let mut fnorm = f.norm();
    let mut stalls = 0;
    for _ in 0..max_iter {
        if family_residuals(params, &p).values().all(|r| *r <= 1e-14) {
            break;
        }
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if ratio < 1e-12 {
            return Err(Error::RankDeficient { ratio });
        }
        let step = svd
            .solve(&(-&f), 0.0)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;

        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 2f64.powi(-30) {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            let (ft, jt) = constraint_system(params, &trial);
            let tn = ft.norm();
            if tn < fnorm {
                p = trial;
                f = ft;
                jac = jt;
                fnorm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no descent left at machine precision
            stalls += 1;
            if stalls > 2 {
                break;
            }
        }
    }
    let fb = FilterBank { params, p };
    let report = verify_filter_split(&fb, LINEAR_TOL, LINEAR_TOL);
    if !report.pass {
        return Err(Error::NoConvergence {
            residual: report.max_residual(),
            iterations: max_iter,
        });
    }
    Ok(fb)
}

/// Solve from every seed, keep the distinct roots, and order them by the tie-break.
///
/// The first entry is the preferred root (smallest sum k^2 p_k^2). Seeds that fail
/// to converge are skipped.
pub fn search_roots(params: WaveletParams, seeds: &[Vec<f64>]) -> Vec<FilterBank> {
    let mut roots: Vec<FilterBank> = Vec::new();
    for s in seeds {
        let Ok(fb) = solve_filter(params, Some(s)) else {
            continue;
        };
        let dup = roots.iter().any(|r| {
            r.p.iter()
                .zip(&fb.p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                < 1e-8
        });
        if !dup {
            roots.push(fb);
        }
    }
    roots.sort_by(|a, b| a.concentration().total_cmp(&b.concentration()));
    roots
}

/// Moments M_0..=M_max_order of phi from the refinement recursion.
pub fn scaling_moments(fb: &FilterBank, max_order: usize) -> Vec<f64> {
    let mu: Vec<f64> = (0..=max_order)
        .map(|i| 0.5 * fb.p.iter().enumerate().map(|(k, v)| powi(k, i) * v).sum::<f64>())
        .collect();
    let mut m = vec![1.0; max_order + 1];
    for n in 1..=max_order {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for j in 0..n {
            acc += binom * mu[n - j] * m[j];
            binom = binom * (n - j) as f64 / (j + 1) as f64;
        }
        m[n] = acc / (2f64.powi(n as i32) - 1.0);
    }
    m
}

/// Parse the `GCW v1` text format. Lines starting with `#` are comments.
pub fn parse_filter(text: &str) -> Result<FilterBank> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParams("empty filter file".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("GCW") || fields.next() != Some("v1") {
        return Err(Error::InvalidParams(format!("bad filter header '{header}'")));
    }
    let mut n = None;
    let mut m1 = None;
    for f in fields {
        if let Some(v) = f.strip_prefix("N=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = f.strip_prefix("M1=") {
            m1 = v.parse::<i64>().ok();
        }
    }
    let (Some(n), Some(m1)) = (n, m1) else {
        return Err(Error::InvalidParams(format!("bad filter header '{header}'")));
    };
    let params = WaveletParams::new(n, m1)?;
    let p = lines
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::InvalidParams(format!("bad coefficient '{l}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    FilterBank::new(params, p)
}

/// Render in the `GCW v1` text format with 20 significant digits.
pub fn format_filter(fb: &FilterBank, comment: Option<&str>) -> String {
    let mut s = format!("GCW v1 N={} M1={}\n", fb.params.n, fb.params.m1);
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    for v in &fb.p {
        let _ = writeln!(s, "{v:.19e}");
    }
    s
}

pub fn read_filter(path: &Path) -> Result<FilterBank> {
    parse_filter(&std::fs::read_to_string(path)?)
}

pub fn write_filter(fb: &FilterBank, path: &Path, comment: Option<&str>) -> Result<()> {
    std::fs::write(path, format_filter(fb, comment))?;
    Ok(())
}
