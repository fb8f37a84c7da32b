//! Boundary-adapted scaling basis on [0, 1] and the quasi-interpolation projector.

use num_rational::Rational64;

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::scalfun::{self, Dyadic, DEFAULT_MAX_LEVEL};

/// Cubic Taylor-extrapolation matrices for the two edges.
///
/// Row m, column k is the weight of the sample at k*h (left) or 1 - k*h (right)
/// in h^m times the m-th derivative at the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrices {
    pub p0: [[Rational64; 4]; 4],
    pub p1: [[Rational64; 4]; 4],
}

fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

impl EdgeMatrices {
    pub fn new() -> Self {
        let one = r(1, 1);
        let zero = r(0, 1);
        Self {
            p0: [
                [one, zero, zero, zero],
                [r(-11, 6), r(3, 1), r(-3, 2), r(1, 3)],
                [r(2, 1), r(-5, 1), r(4, 1), r(-1, 1)],
                [r(-1, 1), r(3, 1), r(-3, 1), r(1, 1)],
            ],
            p1: [
                [one, zero, zero, zero],
                [r(11, 6), r(-3, 1), r(3, 2), r(-1, 3)],
                [r(2, 1), r(-5, 1), r(4, 1), r(-1, 1)],
                [r(1, 1), r(-3, 1), r(3, 1), r(-1, 1)],
            ],
        }
    }

    /// p_{0,i,k} = 2^{i j} (P0)_{i,k}.
    pub fn p0_scaled(&self, i: usize, k: usize, j: u32) -> f64 {
        2f64.powi((i as u32 * j) as i32) * to_f64(self.p0[i][k])
    }

    /// p_{1,i,k} = 2^{i j} (P1)_{i,k}.
    pub fn p1_scaled(&self, i: usize, k: usize, j: u32) -> f64 {
        2f64.powi((i as u32 * j) as i32) * to_f64(self.p1[i][k])
    }
}

impl Default for EdgeMatrices {
    fn default() -> Self {
        Self::new()
    }
}

fn to_f64(q: Rational64) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Which Taylor orders survive in an edge expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum BasisKind {
    #[default]
    Plain,
    /// First-order term removed.
    Tilde,
    /// First- and second-order terms removed.
    DoubleTilde,
}

impl BasisKind {
    pub const ALL: [BasisKind; 3] = [BasisKind::Plain, BasisKind::Tilde, BasisKind::DoubleTilde];

    fn keeps_order(self, m: usize) -> bool {
        match self {
            BasisKind::Plain => true,
            BasisKind::Tilde => m != 1,
            BasisKind::DoubleTilde => m != 1 && m != 2,
        }
    }

    /// One-letter code used in file names and problem files.
    pub fn code(self) -> char {
        match self {
            BasisKind::Plain => 'P',
            BasisKind::Tilde => 'T',
            BasisKind::DoubleTilde => 'D',
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" | "plain" => Some(BasisKind::Plain),
            "t" | "tilde" => Some(BasisKind::Tilde),
            "d" | "dt" | "doubletilde" | "double-tilde" => Some(BasisKind::DoubleTilde),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub j: u32,
    pub fb: FilterBank,
    pub left: BasisKind,
    pub right: BasisKind,
}

impl BasisSpec {
    pub fn new(j: u32, fb: FilterBank) -> Result<Self> {
        Self::with_kinds(j, fb, BasisKind::Plain, BasisKind::Plain)
    }

    pub fn with_kinds(j: u32, fb: FilterBank, left: BasisKind, right: BasisKind) -> Result<Self> {
        if j < 3 {
            return Err(Error::InvalidParams(format!("resolution level j={j} below 3")));
        }
        if j > 20 {
            return Err(Error::InvalidParams(format!("resolution level j={j} too large")));
        }
        Ok(Self { j, fb, left, right })
    }

    /// Number of nodes minus one, 2^j.
    pub fn size(&self) -> i64 {
        1i64 << self.j
    }
}

/// Expansion phi_{j,k}(x) = sum_i w_i phi(2^j x - i + M1) as (i, w_i) pairs.
pub fn boundary_weights(spec: &BasisSpec, k: i64) -> Result<Vec<(i64, f64)>> {
    let size = spec.size();
    if !(0..=size).contains(&k) {
        return Err(Error::IndexOutOfRange { index: k, max: size });
    }
    let edges = EdgeMatrices::new();
    let n3 = spec.fb.params.support_len() as i64;
    let m1 = spec.fb.params.m1;
    let mut out = Vec::new();
    if k <= 3 {
        let col = k as usize;
        for i in (2 - n3 + m1)..=-1 {
            let mut w = Rational64::from_integer(0);
            let mut pow = Rational64::from_integer(1);
            let mut fact = 1i64;
            for m in 0..4 {
                if m > 0 {
                    pow *= Rational64::from_integer(i);
                    fact *= m as i64;
                }
                if spec.left.keeps_order(m) {
                    w += edges.p0[m][col] * pow / Rational64::from_integer(fact);
                }
            }
            out.push((i, to_f64(w)));
        }
    }
    out.push((k, 1.0));
    if k >= size - 3 {
        let col = (size - k) as usize;
        for i in (size + 1)..=(size - 1 + m1) {
            let t = i - size;
            let mut w = Rational64::from_integer(0);
            let mut pow = Rational64::from_integer(1);
            let mut fact = 1i64;
            for m in 0..4 {
                if m > 0 {
                    pow *= Rational64::from_integer(t);
                    fact *= m as i64;
                }
                if spec.right.keeps_order(m) {
                    w += edges.p1[m][col] * pow / Rational64::from_integer(fact);
                }
            }
            out.push((i, to_f64(w)));
        }
    }
    Ok(out)
}

/// Weights for every k = 0..=2^j.
pub fn all_weights(spec: &BasisSpec) -> Vec<Vec<(i64, f64)>> {
    (0..=spec.size())
        .map(|k| boundary_weights(spec, k).expect("k in range"))
        .collect()
}

/// 2^j x as a dyadic.
fn scale_up(x: Dyadic, j: u32) -> Dyadic {
    if x.level >= j {
        Dyadic::new(x.num, x.level - j)
    } else {
        Dyadic::new(x.num << (j - x.level), 0)
    }
}

fn shift(x: Dyadic, c: i64) -> Dyadic {
    Dyadic::new(x.num + (c << x.level), x.level)
}

fn eval_weights(spec: &BasisSpec, weights: &[(i64, f64)], n: usize, x: f64) -> Result<f64> {
    let d = Dyadic::from_f64(x, DEFAULT_MAX_LEVEL + spec.j)?;
    let y = scale_up(d, spec.j);
    if y.level > DEFAULT_MAX_LEVEL {
        return Err(Error::NotDyadic(x));
    }
    let table = scalfun::table(&spec.fb, n, DEFAULT_MAX_LEVEL)?;
    let m1 = spec.fb.params.m1;
    let scale = 2f64.powi((spec.j as usize * n) as i32);
    Ok(weights
        .iter()
        .map(|&(i, w)| w * table.at(shift(y, m1 - i)))
        .sum::<f64>()
        * scale)
}

/// n-th derivative of phi_{j,k} at the dyadic point x.
pub fn eval_basis(spec: &BasisSpec, k: i64, n: usize, x: f64) -> Result<f64> {
    let w = boundary_weights(spec, k)?;
    eval_weights(spec, &w, n, x)
}

/// Quasi-interpolant sum_k samples[k] phi_{j,k}(x).
pub fn project(samples: &[f64], spec: &BasisSpec, x: f64) -> Result<f64> {
    project_deriv(samples, spec, 0, x)
}

/// n-th derivative of the quasi-interpolant.
pub fn project_deriv(samples: &[f64], spec: &BasisSpec, n: usize, x: f64) -> Result<f64> {
    if samples.len() as i64 != spec.size() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} samples, got {}",
            spec.size() + 1,
            samples.len()
        )));
    }
    let mut acc: Vec<(i64, f64)> = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        if *s == 0.0 {
            continue;
        }
        for (i, w) in boundary_weights(spec, k as i64)? {
            acc.push((i, w * s));
        }
    }
    eval_weights(spec, &acc, n, x)
}
