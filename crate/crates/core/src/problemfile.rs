//! Line-oriented problem files.
//!
//! ```text
//! # comment
//! [meta]
//! id = ode-mixed
//! dim = 1
//! j = 4
//! order = 2
//! [coefficients]
//! a.0 = exp(x)          # or b.n; 2D uses a.m.n / b.m.n
//! [rhs]
//! r = 0
//! [bc]
//! left = 0              # 2D: x0, x1, y0, y1 as expressions in x, y
//! right = 0
//! [kinds]
//! 1 = T, P              # trial kinds (left, right) of the order-1 term; 2D: 1.0 = P,P; P,P
//! [exact]
//! u = sin(pi*x)
//! [nonlinear]
//! c.1.square = -(x + 1)*exp(2*x)   # d^1(c(x) u^2)/dx^1; kinds: square, log, pow(p)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::basis::BasisKind;
use crate::coeftransform::{transform_1d, transform_2d, CoefficientSet1D, CoefficientSet2D};
use crate::error::{Error, Result};
use crate::exprlang::{parse, Expr};
use crate::galerkin::{Bc2D, Coefficient, Problem1D, Problem2D, Term1D, Term2D};
use crate::nonlinear::{NonlinearProblem, NonlinearTerm, Nonlinearity};
use crate::problems::{CaseProblem, ExampleCase};

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub id: Option<String>,
    pub problem: CaseProblem,
    pub exact: Option<Expr>,
}

impl From<&ExampleCase> for ProblemFile {
    fn from(c: &ExampleCase) -> Self {
        Self {
            id: Some(c.id.to_string()),
            problem: c.problem.clone(),
            exact: Some(c.exact.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Meta,
    Coefficients,
    Rhs,
    Bc,
    Kinds,
    Exact,
    Nonlinear,
}

impl Section {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "meta" => Section::Meta,
            "coefficients" => Section::Coefficients,
            "rhs" => Section::Rhs,
            "bc" => Section::Bc,
            "kinds" => Section::Kinds,
            "exact" => Section::Exact,
            "nonlinear" => Section::Nonlinear,
            _ => return None,
        })
    }
}

/// A `key = value` entry with its position in the file.
struct Entry {
    line: usize,
    key: String,
    value: String,
    value_offset: usize,
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::ProblemFile(format!("line {line}: {msg}"))
}

fn expr_at(e: &Entry) -> Result<Expr> {
    parse(&e.value).map_err(|err| match err {
        Error::SyntaxError { position, expected } => Error::SyntaxError {
            position: position + e.value_offset,
            expected,
        },
        other => other,
    })
}

fn split_entries(text: &str) -> Result<BTreeMap<Section, Vec<Entry>>> {
    let mut out: BTreeMap<Section, Vec<Entry>> = BTreeMap::new();
    let mut current = None;
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        let start = offset;
        offset += raw.len();
        let content = raw.split('#').next().unwrap_or("").trim_end();
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let s = Section::from_name(name.trim())
                .ok_or_else(|| err(line_no, format!("unknown section [{name}]")))?;
            current = Some(s);
            continue;
        }
        let section = current.ok_or_else(|| err(line_no, "entry before any section"))?;
        let eq = content
            .find('=')
            .ok_or_else(|| err(line_no, "expected 'key = value'"))?;
        let key = content[..eq].trim().to_ascii_lowercase();
        let rest = &content[eq + 1..];
        let lead = rest.len() - rest.trim_start().len();
        out.entry(section).or_default().push(Entry {
            line: line_no,
            key,
            value: rest.trim().to_string(),
            value_offset: start + eq + 1 + lead,
        });
    }
    Ok(out)
}

fn parse_indices(e: &Entry, key: &str) -> Result<Vec<usize>> {
    key.split('.')
        .map(|p| p.trim().parse::<usize>().map_err(|_| err(e.line, format!("bad index in '{}'", e.key))))
        .collect()
}

fn parse_kind_pair(e: &Entry, s: &str) -> Result<(BasisKind, BasisKind)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(err(e.line, "kinds are given as 'left, right'"));
    }
    let k = |p: &str| BasisKind::from_code(p).ok_or_else(|| err(e.line, format!("unknown basis kind '{}'", p.trim())));
    Ok((k(parts[0])?, k(parts[1])?))
}

fn constant(e: &Entry) -> Result<f64> {
    expr_at(e)?.eval(&[])
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let sections = split_entries(text)?;
    let empty = Vec::new();
    let get = |s: Section| sections.get(&s).unwrap_or(&empty);

    let mut id = None;
    let mut dim = None;
    let mut j = None;
    let mut order = None;
    for e in get(Section::Meta) {
        let bad = || err(e.line, format!("bad value for '{}'", e.key));
        match e.key.as_str() {
            "id" => id = Some(e.value.clone()),
            "dim" => dim = Some(e.value.parse::<usize>().map_err(|_| bad())?),
            "j" => j = Some(e.value.parse::<u32>().map_err(|_| bad())?),
            "order" => order = Some(e.value.parse::<usize>().map_err(|_| bad())?),
            _ => return Err(err(e.line, format!("unknown meta key '{}'", e.key))),
        }
    }
    let dim = dim.ok_or_else(|| Error::ProblemFile("[meta] needs dim".into()))?;
    let j = j.ok_or_else(|| Error::ProblemFile("[meta] needs j".into()))?;
    if !(3..=20).contains(&j) {
        return Err(Error::ProblemFile(format!("j = {j} outside 3..=20")));
    }

    // coefficients: all-a or all-b
    let mut a_terms = BTreeMap::new();
    let mut b_terms = BTreeMap::new();
    for e in get(Section::Coefficients) {
        let (form, idx) = e
            .key
            .split_once('.')
            .ok_or_else(|| err(e.line, format!("expected a.n or b.n, got '{}'", e.key)))?;
        let idx = parse_indices(e, idx)?;
        if idx.len() != dim {
            return Err(err(e.line, format!("'{}' needs {dim} indices", e.key)));
        }
        let key = (idx[0], idx.get(1).copied().unwrap_or(0));
        let target = match form {
            "a" => &mut a_terms,
            "b" => &mut b_terms,
            _ => return Err(err(e.line, format!("unknown coefficient '{}'", e.key))),
        };
        if target.insert(key, expr_at(e)?).is_some() {
            return Err(err(e.line, format!("duplicate coefficient '{}'", e.key)));
        }
    }
    if !a_terms.is_empty() && !b_terms.is_empty() {
        return Err(Error::ProblemFile("coefficients must be all a-form or all b-form".into()));
    }
    if a_terms.is_empty() && b_terms.is_empty() {
        return Err(Error::ProblemFile("[coefficients] is empty".into()));
    }
    let b_terms = if a_terms.is_empty() {
        b_terms
    } else if dim == 1 {
        let max = a_terms.keys().map(|k| k.0).max().unwrap_or(0);
        let a = (0..=max)
            .map(|n| a_terms.get(&(n, 0)).cloned().unwrap_or_else(|| Expr::num(0.0)))
            .collect();
        let b = transform_1d(&CoefficientSet1D::from_a(a))?.b;
        b.into_iter()
            .enumerate()
            .filter(|(n, e)| !e.is_zero() || a_terms.contains_key(&(*n, 0)))
            .map(|(n, e)| ((n, 0), e))
            .collect()
    } else {
        transform_2d(&CoefficientSet2D::from_a(a_terms))?.b
    };
    let max_order = b_terms.keys().map(|&(m, n)| m.max(n)).max().unwrap_or(0);
    if let Some(o) = order {
        if o < max_order {
            return Err(Error::ProblemFile(format!("order = {o} but a term of order {max_order} is present")));
        }
    }

    let mut rhs = Expr::num(0.0);
    for e in get(Section::Rhs) {
        match e.key.as_str() {
            "r" => rhs = expr_at(e)?,
            _ => return Err(err(e.line, format!("unknown rhs key '{}'", e.key))),
        }
    }
    let mut exact = None;
    for e in get(Section::Exact) {
        match e.key.as_str() {
            "u" => exact = Some(expr_at(e)?),
            _ => return Err(err(e.line, format!("unknown exact key '{}'", e.key))),
        }
    }

    let mut kinds_1d: BTreeMap<usize, (BasisKind, BasisKind)> = BTreeMap::new();
    let mut kinds_2d: BTreeMap<(usize, usize), [(BasisKind, BasisKind); 2]> = BTreeMap::new();
    for e in get(Section::Kinds) {
        let idx = parse_indices(e, &e.key)?;
        if idx.len() != dim {
            return Err(err(e.line, format!("'{}' needs {dim} indices", e.key)));
        }
        if dim == 1 {
            kinds_1d.insert(idx[0], parse_kind_pair(e, &e.value)?);
        } else {
            let (xs, ys) = e
                .value
                .split_once(';')
                .ok_or_else(|| err(e.line, "2D kinds are 'xl, xr; yl, yr'"))?;
            kinds_2d.insert((idx[0], idx[1]), [parse_kind_pair(e, xs)?, parse_kind_pair(e, ys)?]);
        }
    }

    let bc_entries = get(Section::Bc);
    let problem = if dim == 1 {
        let mut bc_left = None;
        let mut bc_right = None;
        for e in bc_entries {
            match e.key.as_str() {
                "left" => bc_left = Some(constant(e)?),
                "right" => bc_right = Some(constant(e)?),
                _ => return Err(err(e.line, format!("unknown 1D bc key '{}'", e.key))),
            }
        }
        let terms = b_terms
            .into_iter()
            .map(|((n, _), b)| {
                let (l, r) = kinds_1d.get(&n).copied().unwrap_or_default();
                Term1D::new(n, b).with_kinds(l, r)
            })
            .collect();
        let linear = Problem1D {
            j,
            terms,
            rhs: rhs.into(),
            bc_left,
            bc_right,
        };
        let mut nl = Vec::new();
        for e in get(Section::Nonlinear) {
            let rest = e
                .key
                .strip_prefix("c.")
                .ok_or_else(|| err(e.line, format!("expected c.<order>.<kind>, got '{}'", e.key)))?;
            let (ord, kind) = rest
                .split_once('.')
                .ok_or_else(|| err(e.line, format!("expected c.<order>.<kind>, got '{}'", e.key)))?;
            let ord: usize = ord.parse().map_err(|_| err(e.line, format!("bad order in '{}'", e.key)))?;
            let kind = Nonlinearity::from_name(kind)
                .ok_or_else(|| err(e.line, format!("unknown nonlinearity '{kind}'")))?;
            nl.push(NonlinearTerm::new(ord, expr_at(e)?, kind));
        }
        if nl.is_empty() {
            CaseProblem::Linear1D(linear)
        } else {
            CaseProblem::Nonlinear(NonlinearProblem { linear, terms: nl })
        }
    } else if dim == 2 {
        if !get(Section::Nonlinear).is_empty() {
            return Err(Error::ProblemFile("nonlinear terms are only supported in 1D".into()));
        }
        let mut edges: [Option<Expr>; 4] = Default::default();
        for e in bc_entries {
            let slot = match e.key.as_str() {
                "x0" => 0,
                "x1" => 1,
                "y0" => 2,
                "y1" => 3,
                _ => return Err(err(e.line, format!("unknown 2D bc key '{}'", e.key))),
            };
            edges[slot] = Some(expr_at(e)?);
        }
        let [Some(x0), Some(x1), Some(y0), Some(y1)] = edges else {
            return Err(Error::ProblemFile("2D problems need bc x0, x1, y0 and y1".into()));
        };
        let terms = b_terms
            .into_iter()
            .map(|((m, n), b)| {
                let mut t = Term2D::new(m, n, b);
                if let Some([kx, ky]) = kinds_2d.get(&(m, n)) {
                    t.kinds_x = *kx;
                    t.kinds_y = *ky;
                }
                t
            })
            .collect();
        let p = Problem2D {
            j,
            terms,
            rhs: rhs.into(),
            bc: Bc2D { x0, x1, y0, y1 },
        };
        p.known_nodes()?;
        CaseProblem::Linear2D(p)
    } else {
        return Err(Error::ProblemFile(format!("dim = {dim}, expected 1 or 2")));
    };

    Ok(ProblemFile { id, problem, exact })
}

pub fn read_problem(path: &Path) -> Result<ProblemFile> {
    parse_problem(&std::fs::read_to_string(path)?)
}

fn expr_of(c: &Coefficient) -> Result<&Expr> {
    match c {
        Coefficient::Expr(e) => Ok(e),
        Coefficient::Samples(_) => Err(Error::ProblemFile("sampled coefficients cannot be written".into())),
    }
}

/// b-form text for a problem.
pub fn format_problem(pf: &ProblemFile) -> Result<String> {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "[meta]");
    if let Some(id) = &pf.id {
        let _ = writeln!(w, "id = {id}");
    }
    let _ = writeln!(w, "dim = {}", pf.problem.dim());
    let _ = writeln!(w, "j = {}", pf.problem.j());
    match &pf.problem {
        CaseProblem::Linear1D(p) => write_1d(w, p, &[])?,
        CaseProblem::Nonlinear(p) => write_1d(w, &p.linear, &p.terms)?,
        CaseProblem::Linear2D(p) => {
            let order = p.terms.iter().map(|t| t.m.max(t.n)).max().unwrap_or(0);
            let _ = writeln!(w, "order = {order}\n\n[coefficients]");
            for t in &p.terms {
                let _ = writeln!(w, "b.{}.{} = {}", t.m, t.n, expr_of(&t.coef)?);
            }
            let _ = writeln!(w, "\n[rhs]\nr = {}", expr_of(&p.rhs)?);
            let _ = writeln!(w, "\n[bc]\nx0 = {}\nx1 = {}\ny0 = {}\ny1 = {}", p.bc.x0, p.bc.x1, p.bc.y0, p.bc.y1);
            let modified: Vec<_> = p
                .terms
                .iter()
                .filter(|t| t.kinds_x != Default::default() || t.kinds_y != Default::default())
                .collect();
            if !modified.is_empty() {
                let _ = writeln!(w, "\n[kinds]");
                for t in modified {
                    let _ = writeln!(
                        w,
                        "{}.{} = {}, {}; {}, {}",
                        t.m,
                        t.n,
                        t.kinds_x.0.code(),
                        t.kinds_x.1.code(),
                        t.kinds_y.0.code(),
                        t.kinds_y.1.code()
                    );
                }
            }
        }
    }
    if let Some(u) = &pf.exact {
        let _ = writeln!(w, "\n[exact]\nu = {u}");
    }
    Ok(s)
}

fn write_1d(w: &mut String, p: &Problem1D, nl: &[NonlinearTerm]) -> Result<()> {
    let _ = writeln!(w, "order = {}\n\n[coefficients]", p.order());
    for t in &p.terms {
        let _ = writeln!(w, "b.{} = {}", t.order, expr_of(&t.coef)?);
    }
    let _ = writeln!(w, "\n[rhs]\nr = {}", expr_of(&p.rhs)?);
    if p.bc_left.is_some() || p.bc_right.is_some() {
        let _ = writeln!(w, "\n[bc]");
        if let Some(v) = p.bc_left {
            let _ = writeln!(w, "left = {v:?}");
        }
        if let Some(v) = p.bc_right {
            let _ = writeln!(w, "right = {v:?}");
        }
    }
    let modified: Vec<_> = p
        .terms
        .iter()
        .filter(|t| (t.left, t.right) != (BasisKind::Plain, BasisKind::Plain))
        .collect();
    if !modified.is_empty() {
        let _ = writeln!(w, "\n[kinds]");
        for t in modified {
            let _ = writeln!(w, "{} = {}, {}", t.order, t.left.code(), t.right.code());
        }
    }
    if !nl.is_empty() {
        let _ = writeln!(w, "\n[nonlinear]");
        for t in nl {
            if let Nonlinearity::Custom { name, .. } = &t.kind {
                return Err(Error::ProblemFile(format!("custom nonlinearity '{name}' cannot be written")));
            }
            let _ = writeln!(w, "c.{}.{} = {}", t.order, t.kind.name(), expr_of(&t.coef)?);
        }
    }
    Ok(())
}
