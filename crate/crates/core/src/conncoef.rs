//! Connection coefficients Gamma^{j,n}_{k,l} = int_0^1 phi^(n)_{j,k} phi_{j,l} dx and their store.
//!
//! Everything reduces to two families of correlation integrals of phi:
//! `Lambda^n_d` over the whole line and `Upsilon^n(t, d)` over [0, t]. Both
//! satisfy finite linear refinement systems, so no quadrature is involved.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::basis::{all_weights, BasisKind, BasisSpec};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::linalg::{eigenvector_at, lstsq};
use crate::scalfun::integer_values;

/// Lambda^n_d = int phi^(n)(y) phi(y + d) dy for |d| <= 3N - 2.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    pub n: usize,
    /// Largest |d| stored.
    pub reach: i64,
    pub values: Vec<f64>,
}

impl LambdaTable {
    pub fn get(&self, d: i64) -> f64 {
        if d.abs() > self.reach {
            0.0
        } else {
            self.values[(d + self.reach) as usize]
        }
    }
}

/// Upsilon^n(t, d) = int_0^t phi^(n)(y) phi(y + d) dy for integer t in [0, 3N-1].
#[derive(Debug, Clone, PartialEq)]
pub struct UpsilonTable {
    pub n: usize,
    pub reach: i64,
    /// Right end of the support of phi.
    pub support: i64,
    /// Row t (0..=support), column d + reach.
    pub values: Vec<Vec<f64>>,
}

impl UpsilonTable {
    /// Value at any integer t, using 0 below the support and Lambda above it.
    pub fn get(&self, t: i64, d: i64) -> f64 {
        if d.abs() > self.reach || t <= 0 {
            return 0.0;
        }
        let t = t.min(self.support);
        self.values[t as usize][(d + self.reach) as usize]
    }
}

/// Full-line correlations from the eigenvector at 1 of the downsampled autocorrelation operator.
pub fn lambda_full(fb: &FilterBank, n: usize) -> Result<LambdaTable> {
    let reach = fb.params.support_end() - 1;
    let size = (2 * reach + 1) as usize;
    let scale = 2f64.powi(n as i32 - 1);
    let mut b = DMatrix::zeros(size, size);
    for d in -reach..=reach {
        for (a, pa) in fb.p.iter().enumerate() {
            for (bi, pb) in fb.p.iter().enumerate() {
                let dd = 2 * d + a as i64 - bi as i64;
                if dd.abs() <= reach {
                    b[((d + reach) as usize, (dd + reach) as usize)] += scale * pa * pb;
                }
            }
        }
    }
    // eigenvalue-1 eigenvector, pinned by the moment normalization
    let v0 = eigenvector_at(&b, 1.0)?;
    let m1 = fb.params.m1;
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    let target = if n % 2 == 0 { fact } else { -fact };
    let mut a = DMatrix::zeros(size + 1, size);
    let mut rhs = DVector::zeros(size + 1);
    a.view_mut((0, 0), (size, size)).copy_from(&(b - DMatrix::identity(size, size)));
    for d in -reach..=reach {
        a[(size, (d + reach) as usize)] = ((m1 - d) as f64).powi(n as i32);
    }
    rhs[size] = target;
    let v = match lstsq(&a, &rhs, 1e-10) {
        Ok(v) => v,
        Err(_) => {
            let s: f64 = (-reach..=reach)
                .map(|d| ((m1 - d) as f64).powi(n as i32) * v0[(d + reach) as usize])
                .sum();
            v0 * (target / s)
        }
    };
    Ok(LambdaTable {
        n,
        reach,
        values: v.iter().copied().collect(),
    })
}

/// Partial correlations from the refinement system closed by `lam`.
///
/// For n >= 1 the refinement system alone is singular (the products of lower
/// derivatives of phi are homogeneous solutions), so it is stacked with the
/// moment identities sum_d (M1 - d)^m Upsilon^n(t, d) = boundary terms for
/// m < n and solved in the least-squares sense. The stacked system is
/// consistent; a residual check guards that.
pub fn upsilon_partial(fb: &FilterBank, n: usize, lam: &LambdaTable) -> Result<UpsilonTable> {
    if lam.n != n {
        return Err(Error::InvalidParams(format!(
            "Lambda table is for order {}, requested {n}",
            lam.n
        )));
    }
    let support = fb.params.support_end();
    let reach = lam.reach;
    let width = (2 * reach + 1) as usize;
    let nt = (support - 1) as usize;
    let unknowns = nt * width;
    let idx = |t: i64, d: i64| (t - 1) as usize * width + (d + reach) as usize;
    let scale = 2f64.powi(n as i32 - 1);
    let m1 = fb.params.m1;

    let rows = unknowns + nt * n;
    let mut a = DMatrix::zeros(rows, unknowns);
    let mut c = DVector::zeros(rows);
    for t in 1..support {
        for d in -reach..=reach {
            let row = idx(t, d);
            a[(row, row)] += 1.0;
            for (ai, pa) in fb.p.iter().enumerate() {
                let s = 2 * t - ai as i64;
                if s <= 0 {
                    continue;
                }
                for (bi, pb) in fb.p.iter().enumerate() {
                    let dd = ai as i64 + 2 * d - bi as i64;
                    if dd.abs() > reach {
                        continue;
                    }
                    let coef = scale * pa * pb;
                    if s >= support {
                        c[row] += coef * lam.get(dd);
                    } else {
                        a[(row, idx(s, dd))] -= coef;
                    }
                }
            }
        }
    }

    if n > 0 {
        let lower: Vec<Vec<f64>> = (0..n)
            .map(|k| integer_values(fb, k).map(|t| t.values))
            .collect::<Result<_>>()?;
        let mut row = unknowns;
        for t in 1..support {
            for m in 0..n {
                for d in -reach..=reach {
                    a[(row, idx(t, d))] = ((m1 - d) as f64).powi(m as i32);
                }
                // integrate P(y) phi^(n)(y) by parts n times with P(y) = y^m
                let mut rhs = 0.0;
                let mut falling = 1.0;
                for i in 0..=m.min(n - 1) {
                    if i > 0 {
                        falling *= (m - i + 1) as f64;
                    }
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    rhs += sign
                        * lower[n - 1 - i][t as usize]
                        * falling
                        * (t as f64).powi((m - i) as i32);
                }
                c[row] = rhs;
                row += 1;
            }
        }
    }

    let x = lstsq(&a, &c, 1e-10)?;
    let mut values = vec![vec![0.0; width]; support as usize + 1];
    for t in 1..support {
        for d in -reach..=reach {
            values[t as usize][(d + reach) as usize] = x[idx(t, d)];
        }
    }
    values[support as usize] = lam.values.clone();
    Ok(UpsilonTable {
        n,
        reach,
        support,
        values,
    })
}

type TablePair = (Arc<LambdaTable>, Arc<UpsilonTable>);
type TableSlot = Arc<OnceLock<Result<TablePair>>>;

/// Cached Lambda/Upsilon tables for (filter, n).
pub fn tables(fb: &FilterBank, n: usize) -> Result<TablePair> {
    static CACHE: OnceLock<Mutex<HashMap<(String, usize), TableSlot>>> = OnceLock::new();
    let slot = {
        let mut map = CACHE
            .get_or_init(Default::default)
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        map.entry((fb.sha256(), n)).or_default().clone()
    };
    slot.get_or_init(|| {
        let lam = lambda_full(fb, n)?;
        let ups = upsilon_partial(fb, n, &lam)?;
        Ok((Arc::new(lam), Arc::new(ups)))
    })
    .clone()
}

/// Identifies one connection matrix: level, derivative order and the trial-side edge kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnKey {
    pub j: u32,
    pub n: usize,
    pub left: BasisKind,
    pub right: BasisKind,
}

impl ConnKey {
    pub fn new(j: u32, n: usize, left: BasisKind, right: BasisKind) -> Self {
        Self { j, n, left, right }
    }

    pub fn plain(j: u32, n: usize) -> Self {
        Self::new(j, n, BasisKind::Plain, BasisKind::Plain)
    }

    fn kinds(&self) -> String {
        format!("{}{}", self.left.code(), self.right.code())
    }

    fn file_name(&self) -> String {
        format!("conn_j{}_n{}_{}.bin", self.j, self.n, self.kinds())
    }
}

impl std::fmt::Display for ConnKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "j={} n={} kinds={}", self.j, self.n, self.kinds())
    }
}

/// Entry (k, l) is Gamma^{j,n}_{k,l}: k indexes the differentiated (trial) basis, l the test basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnMatrix {
    pub key: ConnKey,
    pub data: DMatrix<f64>,
}

/// Build the connection matrix for `key` from the correlation tables.
pub fn conn_matrix(fb: &FilterBank, key: ConnKey) -> Result<ConnMatrix> {
    let trial = BasisSpec::with_kinds(key.j, fb.clone(), key.left, key.right)?;
    let test = BasisSpec::new(key.j, fb.clone())?;
    let (_, ups) = tables(fb, key.n)?;
    let tw = all_weights(&trial);
    let vw = all_weights(&test);
    let size = trial.size();
    let m1 = fb.params.m1;
    let scale = 2f64.powi(key.j as i32 * (key.n as i32 - 1));
    let dim = (size + 1) as usize;
    let mut data = DMatrix::zeros(dim, dim);
    for (k, wk) in tw.iter().enumerate() {
        for (l, wl) in vw.iter().enumerate() {
            let mut acc = 0.0;
            for &(i, w) in wk {
                let a = i - m1;
                for &(ip, wp) in wl {
                    let d = a - (ip - m1);
                    if d.abs() > ups.reach {
                        continue;
                    }
                    acc += w * wp * (ups.get(size - a, d) - ups.get(-a, d));
                }
            }
            data[(k, l)] = scale * acc;
        }
    }
    Ok(ConnMatrix { key, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    /// Missing entries are built and persisted.
    ReadWrite,
    /// Missing entries are an error.
    ReadOnly,
}

type MatrixSlot = Arc<OnceLock<Result<Arc<ConnMatrix>>>>;

/// Connection-matrix store: in-process memo plus an optional directory of `CONN v1` files.
#[derive(Debug)]
pub struct ConnStore {
    fb: FilterBank,
    filter_sha: String,
    dir: Option<PathBuf>,
    mode: StoreMode,
    slots: Mutex<HashMap<ConnKey, MatrixSlot>>,
    builds: AtomicUsize,
    hits: AtomicUsize,
}

impl ConnStore {
    pub fn in_memory(fb: FilterBank) -> Self {
        Self::with_dir(fb, None, StoreMode::ReadWrite)
    }

    pub fn open(dir: impl Into<PathBuf>, fb: FilterBank, mode: StoreMode) -> Result<Self> {
        let dir = dir.into();
        match mode {
            StoreMode::ReadWrite => fs::create_dir_all(&dir)?,
            StoreMode::ReadOnly if !dir.is_dir() => {
                return Err(Error::Io(format!("store {} does not exist", dir.display())))
            }
            StoreMode::ReadOnly => {}
        }
        Ok(Self::with_dir(fb, Some(dir), mode))
    }

    fn with_dir(fb: FilterBank, dir: Option<PathBuf>, mode: StoreMode) -> Self {
        Self {
            filter_sha: fb.sha256(),
            fb,
            dir,
            mode,
            slots: Mutex::new(HashMap::new()),
            builds: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn filter(&self) -> &FilterBank {
        &self.fb
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Matrices computed from scratch by this handle.
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    /// Requests served from memory or disk.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn path_for(&self, key: &ConnKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(key.file_name()))
    }

    /// Return the matrix for `key`, loading or building it as needed.
    pub fn get_or_build(&self, key: ConnKey) -> Result<Arc<ConnMatrix>> {
        let slot = {
            let mut map = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            map.entry(key).or_default().clone()
        };
        let mut fresh = false;
        let out = slot
            .get_or_init(|| {
                fresh = true;
                self.load_or_build(key).map(Arc::new)
            })
            .clone();
        if !fresh && out.is_ok() {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        out
    }

    fn load_or_build(&self, key: ConnKey) -> Result<ConnMatrix> {
        if let Some(path) = self.path_for(&key) {
            if path.exists() {
                let bytes = fs::read(&path)?;
                match decode(&bytes, &self.filter_sha) {
                    Ok(m) if m.key == key => {
                        self.hits.fetch_add(1, Ordering::SeqCst);
                        return Ok(m);
                    }
                    Ok(_) => return Err(Error::CacheCorrupt(format!("{} holds another key", path.display()))),
                    // built from another filter: stale, fall through to a rebuild
                    Err(StaleFilter) if self.mode == StoreMode::ReadWrite => {}
                    Err(StaleFilter) => {
                        return Err(Error::MissingConn(format!("{key} (stored entry uses another filter)")))
                    }
                    Err(Fatal(e)) => return Err(e),
                }
            }
        }
        if self.mode == StoreMode::ReadOnly {
            return Err(Error::MissingConn(key.to_string()));
        }
        let m = conn_matrix(&self.fb, key)?;
        self.builds.fetch_add(1, Ordering::SeqCst);
        if let Some(path) = self.path_for(&key) {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, encode(&m, &self.filter_sha))?;
            fs::rename(&tmp, &path)?;
        }
        Ok(m)
    }
}

enum DecodeError {
    StaleFilter,
    Fatal(Error),
}
use DecodeError::{Fatal, StaleFilter};

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Serialize in the `CONN v1` format.
pub fn encode(m: &ConnMatrix, filter_sha: &str) -> Vec<u8> {
    let rows = m.data.nrows();
    let mut out = Vec::with_capacity(128 + rows * rows * 8);
    let _ = writeln!(
        out,
        "CONN v1 j={} n={} kinds={} filter={} rows={}",
        m.key.j,
        m.key.n,
        m.key.kinds(),
        filter_sha,
        rows
    );
    for r in 0..rows {
        for c in 0..rows {
            out.extend_from_slice(&m.data[(r, c)].to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn decode(bytes: &[u8], filter_sha: &str) -> std::result::Result<ConnMatrix, DecodeError> {
    let corrupt = |msg: &str| Fatal(Error::CacheCorrupt(msg.to_string()));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("CONN") {
        return Err(corrupt("not a CONN file"));
    }
    match parts.next() {
        Some("v1") => {}
        other => {
            return Err(Fatal(Error::VersionMismatch(format!(
                "expected CONN v1, found {}",
                other.unwrap_or("nothing")
            ))))
        }
    }
    let mut fields = HashMap::new();
    for p in parts {
        if let Some((k, v)) = p.split_once('=') {
            fields.insert(k, v);
        }
    }
    let field = |k: &str| fields.get(k).copied().ok_or_else(|| corrupt("incomplete header"));
    let j: u32 = field("j")?.parse().map_err(|_| corrupt("bad j"))?;
    let n: usize = field("n")?.parse().map_err(|_| corrupt("bad n"))?;
    let kinds: Vec<char> = field("kinds")?.chars().collect();
    let rows: usize = field("rows")?.parse().map_err(|_| corrupt("bad rows"))?;
    let sha = field("filter")?;
    let kind = |c: char| BasisKind::from_code(&c.to_string()).ok_or_else(|| corrupt("bad kinds"));
    if kinds.len() != 2 {
        return Err(corrupt("bad kinds"));
    }
    let key = ConnKey::new(j, n, kind(kinds[0])?, kind(kinds[1])?);

    let body_len = rows * rows * 8;
    if bytes.len() != nl + 1 + body_len + 8 {
        return Err(corrupt("truncated or oversized entry"));
    }
    let (payload, tail) = bytes.split_at(nl + 1 + body_len);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if checksum(payload) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    if sha != filter_sha {
        return Err(StaleFilter);
    }
    let data = DMatrix::from_row_iterator(
        rows,
        rows,
        payload[nl + 1..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
    );
    Ok(ConnMatrix { key, data })
}

/// Read one `CONN v1` file, checking it against `fb`.
pub fn read_entry(path: &Path, fb: &FilterBank) -> Result<ConnMatrix> {
    match decode(&fs::read(path)?, &fb.sha256()) {
        Ok(m) => Ok(m),
        Err(StaleFilter) => Err(Error::CacheCorrupt(format!(
            "{} was built from a different filter",
            path.display()
        ))),
        Err(Fatal(e)) => Err(e),
    }
}

/// Exclusive lock on a store directory, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(format!(
                "store {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
