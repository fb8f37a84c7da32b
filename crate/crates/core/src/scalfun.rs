//! Scaling function phi and its derivatives at dyadic rationals.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::linalg::eigenvector_at;

/// Finest level used by [`eval_deriv`].
pub const DEFAULT_MAX_LEVEL: u32 = 14;

/// Values phi^(n)(i / 2^level) for i = 0..=(3N-1)*2^level.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicTable {
    pub deriv_order: usize,
    pub level: u32,
    pub values: Vec<f64>,
}

impl DyadicTable {
    pub fn step(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// Value at the dyadic point `num / 2^level_of_num`; zero outside the support.
    pub fn at(&self, x: Dyadic) -> f64 {
        let Some(idx) = x.index_at(self.level) else {
            return f64::NAN;
        };
        if idx < 0 || idx as usize >= self.values.len() {
            0.0
        } else {
            self.values[idx as usize]
        }
    }

    /// Integer-grid entries phi^(n)(0), ..., phi^(n)(3N-1).
    pub fn integer_entries(&self) -> Vec<f64> {
        let stride = 1usize << self.level;
        self.values.iter().step_by(stride).copied().collect()
    }
}

/// A dyadic rational `num / 2^level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    pub num: i64,
    pub level: u32,
}

impl Dyadic {
    pub fn new(num: i64, level: u32) -> Self {
        Self { num, level }
    }

    /// Exact conversion from a double; fails unless `x * 2^max_level` is an integer.
    pub fn from_f64(x: f64, max_level: u32) -> Result<Self> {
        let scaled = x * 2f64.powi(max_level as i32);
        if !scaled.is_finite() || scaled.fract() != 0.0 || scaled.abs() > 2f64.powi(62) {
            return Err(Error::NotDyadic(x));
        }
        Ok(Self::new(scaled as i64, max_level).reduced())
    }

    pub fn reduced(mut self) -> Self {
        while self.level > 0 && self.num % 2 == 0 {
            self.num /= 2;
            self.level -= 1;
        }
        self
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / 2f64.powi(self.level as i32)
    }

    /// Index of this point on the level-`level` grid, if it lies on it.
    pub fn index_at(self, level: u32) -> Option<i64> {
        if self.level <= level {
            Some(self.num << (level - self.level))
        } else {
            let shift = self.level - level;
            (self.num % (1 << shift) == 0).then(|| self.num >> shift)
        }
    }
}

/// phi^(n) at the integers, normalized by sum_m (M1 - m)^n phi^(n)(m) = n!.
pub fn integer_values(fb: &FilterBank, n: usize) -> Result<DyadicTable> {
    let l = fb.p.len();
    let mut a = DMatrix::zeros(l, l);
    for i in 0..l {
        for m in 0..l {
            let k = 2 * i as i64 - m as i64;
            if (0..l as i64).contains(&k) {
                a[(i, m)] = fb.p[k as usize];
            }
        }
    }
    let v = eigenvector_at(&a, 0.5f64.powi(n as i32))?;
    let m1 = fb.params.m1 as f64;
    let s: f64 = v
        .iter()
        .enumerate()
        .map(|(m, x)| (m1 - m as f64).powi(n as i32) * x)
        .sum();
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    if s.abs() < 1e-300 {
        return Err(Error::DegenerateEigenspace {
            target: 0.5f64.powi(n as i32),
            multiplicity: 0,
        });
    }
    let mut values: Vec<f64> = v.iter().map(|x| x * fact / s).collect();
    // phi^(n) vanishes at the support ends; clear inverse-iteration round-off
    values[0] = 0.0;
    values[l - 1] = 0.0;
    Ok(DyadicTable {
        deriv_order: n,
        level: 0,
        values,
    })
}

/// Refine `table` to level `level` with the two-scale relation; existing points are copied.
pub fn refine_to_level(fb: &FilterBank, table: &DyadicTable, level: u32) -> DyadicTable {
    let mut cur = table.clone();
    let scale = 2f64.powi(cur.deriv_order as i32);
    let support = fb.params.support_end() as usize;
    while cur.level < level {
        let lev = cur.level + 1;
        let half = 1usize << (lev - 1);
        let len = support * (1usize << lev) + 1;
        let mut next = vec![0.0; len];
        for (i, v) in cur.values.iter().enumerate() {
            next[2 * i] = *v;
        }
        for i in (1..len).step_by(2) {
            // phi(i/2^lev) = 2^n sum_k p_k phi(i/2^(lev-1) - k)
            let mut acc = 0.0;
            for (k, pk) in fb.p.iter().enumerate() {
                let off = k * half;
                if off > i {
                    break;
                }
                if let Some(v) = cur.values.get(i - off) {
                    acc += pk * v;
                }
            }
            next[i] = scale * acc;
        }
        cur = DyadicTable {
            deriv_order: cur.deriv_order,
            level: lev,
            values: next,
        };
    }
    cur
}

type TableKey = (String, usize, u32);
type TableSlot = Arc<OnceLock<Result<Arc<DyadicTable>>>>;

fn table_cache() -> &'static Mutex<HashMap<TableKey, TableSlot>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, TableSlot>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared level-`level` table of phi^(n); built once per (filter, n, level).
pub fn table(fb: &FilterBank, n: usize, level: u32) -> Result<Arc<DyadicTable>> {
    let key = (fb.sha256(), n, level);
    let slot = {
        let mut map = table_cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key).or_default().clone()
    };
    slot.get_or_init(|| {
        let base = integer_values(fb, n)?;
        Ok(Arc::new(refine_to_level(fb, &base, level)))
    })
    .clone()
}

/// phi^(n)(x) for dyadic `x`, zero outside [0, 3N-1].
pub fn eval_deriv(fb: &FilterBank, n: usize, x: f64) -> Result<f64> {
    let d = Dyadic::from_f64(x, DEFAULT_MAX_LEVEL)?;
    eval_deriv_dyadic(fb, n, d)
}

pub fn eval_deriv_dyadic(fb: &FilterBank, n: usize, x: Dyadic) -> Result<f64> {
    let x = x.reduced();
    if x.num < 0 || x.num >= fb.params.support_end() << x.level {
        return Ok(0.0);
    }
    if x.level > DEFAULT_MAX_LEVEL {
        return Err(Error::NotDyadic(x.to_f64()));
    }
    Ok(table(fb, n, DEFAULT_MAX_LEVEL)?.at(x))
}

/// Binary dump: `SCALTAB v1 n=<n> J=<J> count=<c>\n` then little-endian f64 values.
pub fn write_table<W: Write>(table: &DyadicTable, mut w: W) -> Result<()> {
    writeln!(
        w,
        "SCALTAB v1 n={} J={} count={}",
        table.deriv_order,
        table.level,
        table.values.len()
    )?;
    for v in &table.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_table<R: Read>(mut r: R) -> Result<DyadicTable> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CacheCorrupt("missing SCALTAB header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::CacheCorrupt("non-UTF-8 SCALTAB header".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("SCALTAB") {
        return Err(Error::CacheCorrupt(format!("bad header '{header}'")));
    }
    if parts.next() != Some("v1") {
        return Err(Error::VersionMismatch(header.to_string()));
    }
    let mut field = |name: &str| -> Result<u64> {
        parts
            .next()
            .and_then(|f| f.strip_prefix(name))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::CacheCorrupt(format!("bad header '{header}'")))
    };
    let n = field("n=")? as usize;
    let level = field("J=")? as u32;
    let count = field("count=")? as usize;
    let body = &bytes[nl + 1..];
    if body.len() != count * 8 {
        return Err(Error::CacheCorrupt(format!(
            "expected {} data bytes, found {}",
            count * 8,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DyadicTable {
        deriv_order: n,
        level,
        values,
    })
}
