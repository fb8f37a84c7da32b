//! Command-line front end: filters, connection-coefficient stores, problem runs and table reproduction.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use coifgal::basis::{eval_basis, BasisKind, BasisSpec};
use coifgal::conncoef::{ConnKey, ConnStore, StoreLock, StoreMode};
use coifgal::filterbank::{
    read_filter, solve_filter, verify_filter_split, write_filter, format_filter, FilterBank, WaveletParams,
    LINEAR_TOL, MOMENT_TOL,
};
use coifgal::galerkin::{
    assemble_1d, assemble_2d, err_sq, error_distribution, solve_linear, SolutionGrid,
};
use coifgal::nonlinear::{multi_start, newton_solve, NewtonResult, NonlinearSystem};
use coifgal::problemfile::{format_problem, read_problem, ProblemFile};
use coifgal::problems::{
    all_examples, get_example, run_case, CaseProblem, ExampleCase, NEWTON_MAX_ITER, NEWTON_TOL,
};
use coifgal::nalgebra::DMatrix;
use coifgal::Error;

#[derive(Debug, Parser)]
#[command(name = "coifgal", version, about = "Wavelet-Galerkin solver on Coiflet-type bases")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Connection-coefficient store directory.
    #[arg(long, env = "COIFGAL_STORE")]
    pub store: Option<PathBuf>,
    /// Filter file (default: the built-in N=6, M1=7 filter).
    #[arg(long)]
    pub filter: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the filter constraint system and write the coefficients.
    GenFilter {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        m1: i64,
        /// Seed coefficients in the filter file format.
        #[arg(long)]
        seed: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check a filter against its constraint families.
    VerifyFilter { path: Option<PathBuf> },
    /// Precompute connection matrices.
    BuildCache {
        #[command(flatten)]
        store: StoreArgs,
        /// Levels, e.g. "3..6" or "3,5".
        #[arg(long, default_value = "3..6")]
        levels: String,
        /// Derivative orders, e.g. "0..2".
        #[arg(long, default_value = "0..2")]
        orders: String,
        /// Only the plain basis (default: every left/right kind pair).
        #[arg(long)]
        plain_only: bool,
    },
    /// Solve a problem file or a built-in example.
    Solve {
        /// Problem file path.
        problem: Option<PathBuf>,
        /// Built-in example id instead of a file.
        #[arg(long, conflicts_with = "problem")]
        example: Option<String>,
        #[command(flatten)]
        store: StoreArgs,
        /// Override the resolution level.
        #[arg(long)]
        level: Option<u32>,
        /// Compare against the exact solution and write error.csv.
        #[arg(long)]
        exact: bool,
        /// Fail instead of building missing connection matrices.
        #[arg(long)]
        no_build: bool,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        dump_system: bool,
        #[arg(long)]
        dump_solution: bool,
        /// Nonlinear problems: search for further branches from the default seeds.
        #[arg(long)]
        branches: bool,
    },
    /// Rerun the four examples and write table and figure CSVs.
    ReproduceTables {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, short, default_value = "tables")]
        out: PathBuf,
        #[arg(long, default_value = "3..6")]
        levels: String,
        /// Restrict to these example ids (comma separated).
        #[arg(long)]
        only: Option<String>,
    },
    /// Sample a basis function or its derivative on a dyadic grid.
    DumpBasis {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        k: i64,
        #[arg(long, default_value_t = 0)]
        deriv: usize,
        /// Edge kinds "left,right", e.g. "T,P".
        #[arg(long, default_value = "P,P")]
        kinds: String,
        /// Grid level of the sample points (step 2^-points).
        #[arg(long, default_value_t = 8)]
        points: u32,
        #[arg(long)]
        filter: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write the built-in examples as problem files.
    ExportProblems { dir: PathBuf },
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const SYNTAX: u8 = 3;
    pub const MISSING_CONN: u8 = 4;
    pub const NUMERICAL: u8 = 5;
    pub const IO: u8 = 6;
}

/// Exit code for an error chain, keyed on the first library error found.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::SyntaxError { .. } | Error::ProblemFile(_) | Error::UnknownExample(_) => exit::SYNTAX,
                Error::MissingConn(_) => exit::MISSING_CONN,
                Error::Io(_) | Error::CacheCorrupt(_) | Error::VersionMismatch(_) => exit::IO,
                _ => exit::NUMERICAL,
            };
        }
    }
    exit::FAILURE
}

pub fn default_store() -> PathBuf {
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("coifgal"),
        None => PathBuf::from(".coifgal-store"),
    }
}

/// "3..6", "3..=6" or "3,4,6".
pub fn parse_range(s: &str) -> anyhow::Result<Vec<u32>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.trim_start_matches('=');
        let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|_| anyhow!("bad list entry '{p}' in '{s}'")))
        .collect()
}

fn parse_kinds(s: &str) -> anyhow::Result<(BasisKind, BasisKind)> {
    let (l, r) = s.split_once(',').ok_or_else(|| anyhow!("kinds are 'left,right'"))?;
    let k = |v: &str| BasisKind::from_code(v).ok_or_else(|| anyhow!("unknown basis kind '{v}'"));
    Ok((k(l)?, k(r)?))
}

/// Scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn load_filter(path: Option<&Path>) -> anyhow::Result<FilterBank> {
    match path {
        Some(p) => read_filter(p).with_context(|| format!("reading filter {}", p.display())),
        None => Ok(FilterBank::reference()),
    }
}

struct OpenStore {
    store: ConnStore,
    _lock: StoreLock,
}

fn open_store(args: &StoreArgs, read_only: bool) -> anyhow::Result<OpenStore> {
    let dir = args.store.clone().unwrap_or_else(default_store);
    let fb = load_filter(args.filter.as_deref())?;
    let lock = StoreLock::acquire(&dir).context("locking store")?;
    let mode = if read_only { StoreMode::ReadOnly } else { StoreMode::ReadWrite };
    let store = ConnStore::open(&dir, fb, mode).context("opening store")?;
    Ok(OpenStore { store, _lock: lock })
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::GenFilter { n, m1, seed, out } => gen_filter(n, m1, seed.as_deref(), out.as_deref()),
        Command::VerifyFilter { path } => verify(path.as_deref()),
        Command::BuildCache {
            store,
            levels,
            orders,
            plain_only,
        } => build_cache(&store, &levels, &orders, plain_only),
        Command::Solve {
            problem,
            example,
            store,
            level,
            exact,
            no_build,
            out,
            dump_system,
            dump_solution,
            branches,
        } => {
            let pf = match (problem, example) {
                (Some(path), _) => read_problem(&path).with_context(|| format!("parsing {}", path.display()))?,
                (None, Some(id)) => ProblemFile::from(&get_example(&id).context("looking up example")?),
                (None, None) => bail!("give a problem file or --example"),
            };
            let opts = SolveOpts {
                level,
                exact,
                no_build,
                out,
                dump_system,
                dump_solution,
                branches,
            };
            solve(pf, &store, &opts)
        }
        Command::ReproduceTables {
            store,
            out,
            levels,
            only,
        } => reproduce_tables(&store, &out, &levels, only.as_deref()),
        Command::DumpBasis {
            level,
            k,
            deriv,
            kinds,
            points,
            filter,
            out,
        } => dump_basis(level, k, deriv, &kinds, points, filter.as_deref(), out.as_deref()),
        Command::ExportProblems { dir } => {
            for case in all_examples() {
                let text = format_problem(&ProblemFile::from(&case))?;
                write_file(&dir.join(format!("{}.prob", case.id)), &text)?;
            }
            Ok(exit::OK)
        }
    }
}

fn gen_filter(n: usize, m1: i64, seed: Option<&Path>, out: Option<&Path>) -> anyhow::Result<u8> {
    let params = WaveletParams::new(n, m1)?;
    let seed = seed.map(read_filter).transpose().context("reading seed")?;
    let fb = solve_filter(params, seed.as_ref().map(|s| s.p.as_slice())).context("solving filter")?;
    let comment = format!("concentration sum k^2 p_k^2 = {:.6}", fb.concentration());
    match out {
        Some(p) => write_filter(&fb, p, Some(&comment))?,
        None => print!("{}", format_filter(&fb, Some(&comment))),
    }
    let report = verify_filter_split(&fb, LINEAR_TOL, MOMENT_TOL);
    eprintln!("max residual {:.3e}, sha256 {}", report.max_residual(), fb.sha256());
    Ok(if report.pass { exit::OK } else { exit::FAILURE })
}

fn verify(path: Option<&Path>) -> anyhow::Result<u8> {
    let fb = load_filter(path)?;
    let report = verify_filter_split(&fb, LINEAR_TOL, MOMENT_TOL);
    println!("family,residual,tolerance");
    for (name, r) in &report.residuals {
        println!("{name},{},{}", num(*r), num(report.tolerances[name]));
    }
    println!("# {}", if report.pass { "pass" } else { "FAIL" });
    Ok(if report.pass { exit::OK } else { exit::FAILURE })
}

fn build_cache(args: &StoreArgs, levels: &str, orders: &str, plain_only: bool) -> anyhow::Result<u8> {
    let open = open_store(args, false)?;
    let kinds: Vec<(BasisKind, BasisKind)> = if plain_only {
        vec![(BasisKind::Plain, BasisKind::Plain)]
    } else {
        BasisKind::ALL
            .iter()
            .flat_map(|&l| BasisKind::ALL.iter().map(move |&r| (l, r)))
            .collect()
    };
    let start = Instant::now();
    let mut count = 0;
    for j in parse_range(levels)? {
        for n in parse_range(orders)? {
            for &(l, r) in &kinds {
                let key = ConnKey::new(j, n as usize, l, r);
                open.store.get_or_build(key).with_context(|| format!("building {key}"))?;
                count += 1;
            }
        }
    }
    println!(
        "entries={count} builds={} hits={} seconds={:.3}",
        open.store.builds(),
        open.store.hits(),
        start.elapsed().as_secs_f64()
    );
    Ok(exit::OK)
}

pub struct SolveOpts {
    pub level: Option<u32>,
    pub exact: bool,
    pub no_build: bool,
    pub out: PathBuf,
    pub dump_system: bool,
    pub dump_solution: bool,
    pub branches: bool,
}

fn solution_csv(sol: &SolutionGrid) -> String {
    let mut s = String::new();
    if sol.dim == 1 {
        s.push_str("node,x,u\n");
    } else {
        s.push_str("node,x,y,u\n");
    }
    for (i, v) in sol.values.iter().enumerate() {
        let (x, y) = sol.coords(i);
        match y {
            None => writeln!(s, "{i},{},{}", num(x), num(*v)),
            Some(y) => writeln!(s, "{i},{},{},{}", num(x), num(y), num(*v)),
        }
        .expect("write to string");
    }
    s
}

fn error_csv(sol: &SolutionGrid, exact: &dyn Fn(f64, f64) -> f64) -> String {
    let mut s = String::new();
    s.push_str(if sol.dim == 1 { "node,x,u,u_exact,E\n" } else { "node,x,y,u,u_exact,E\n" });
    for (i, e) in error_distribution(sol, exact).iter().enumerate() {
        let ue = exact(e.x, e.y.unwrap_or(0.0));
        let u = sol.values[i];
        match e.y {
            None => writeln!(s, "{i},{},{},{},{}", num(e.x), num(u), num(ue), num(e.err)),
            Some(y) => writeln!(s, "{i},{},{},{},{},{}", num(e.x), num(y), num(u), num(ue), num(e.err)),
        }
        .expect("write to string");
    }
    s
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn vector_csv(v: &[f64], header: &str) -> String {
    let mut s = format!("index,{header}\n");
    for (i, x) in v.iter().enumerate() {
        writeln!(s, "{i},{}", num(*x)).expect("write to string");
    }
    s
}

fn solve(mut pf: ProblemFile, store_args: &StoreArgs, opts: &SolveOpts) -> anyhow::Result<u8> {
    if let Some(j) = opts.level {
        pf.problem.set_j(j);
    }
    let open = open_store(store_args, opts.no_build)?;
    let store = &open.store;
    let start = Instant::now();
    let mut summary = String::new();
    let name = pf.id.clone().unwrap_or_else(|| "problem".into());
    writeln!(summary, "problem={name}")?;
    writeln!(summary, "j={}", pf.problem.j())?;

    let mut branch_results: Vec<NewtonResult> = Vec::new();
    let (solution, dump) = match &pf.problem {
        CaseProblem::Linear1D(p) => {
            let sys = assemble_1d(p, store).context("assembly")?;
            let sol = solve_linear(&sys).context("linear solve")?;
            (sol, Some((sys.matrix.clone(), sys.rhs.as_slice().to_vec())))
        }
        CaseProblem::Linear2D(p) => {
            let sys = assemble_2d(p, store).context("assembly")?;
            let sol = solve_linear(&sys).context("linear solve")?;
            (sol, Some((sys.matrix.clone(), sys.rhs.as_slice().to_vec())))
        }
        CaseProblem::Nonlinear(p) => {
            let sys = NonlinearSystem::assemble(p, store).context("assembly")?;
            let res = newton_solve(&sys, &p.bc_interpolant(), NEWTON_TOL, NEWTON_MAX_ITER).context("Newton solve")?;
            writeln!(summary, "newton_iterations={}", res.iterations)?;
            writeln!(summary, "residual_inf={}", num(res.residual))?;
            let jac = sys.jacobian(&res.solution.values).context("Jacobian")?;
            let f = sys.residual(&res.solution.values).context("residual")?;
            if opts.branches {
                let report = multi_start(&sys, &p.default_seeds(), NEWTON_TOL, NEWTON_MAX_ITER);
                writeln!(summary, "branches={}", report.branches.len())?;
                for (seed, e) in &report.failures {
                    writeln!(summary, "# seed {seed} failed: {e}")?;
                }
                branch_results = report.branches;
            }
            (res.solution, Some((jac, f.as_slice().to_vec())))
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    writeln!(summary, "nodes={}", solution.values.len())?;
    writeln!(summary, "wall_seconds={seconds:.6}")?;
    writeln!(summary, "cache_builds={}", store.builds())?;
    writeln!(summary, "cache_hits={}", store.hits())?;

    fs::create_dir_all(&opts.out)?;
    write_file(&opts.out.join("solution.csv"), &solution_csv(&solution))?;
    if opts.exact {
        let exact = pf.exact.clone().ok_or_else(|| anyhow!("--exact needs an [exact] section"))?;
        let f = |x: f64, y: f64| exact.eval_xy(x, y).unwrap_or(f64::NAN);
        let e = err_sq(&solution, &f);
        writeln!(summary, "err_sq={}", num(e))?;
        write_file(&opts.out.join("error.csv"), &error_csv(&solution, &f))?;
    }
    if opts.dump_solution {
        write_file(&opts.out.join("nodal_values.csv"), &vector_csv(&solution.values, "u"))?;
    }
    if let (true, Some((m, rhs))) = (opts.dump_system, dump) {
        write_file(&opts.out.join("system_matrix.csv"), &matrix_csv(&m))?;
        write_file(&opts.out.join("system_rhs.csv"), &vector_csv(&rhs, "rhs"))?;
    }
    for (i, b) in branch_results.iter().enumerate() {
        write_file(&opts.out.join(format!("branch_{}.csv", i + 1)), &solution_csv(&b.solution))?;
    }
    write_file(&opts.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(exit::OK)
}

fn table_row(j: u32, e: f64, secs: f64, reference: f64) -> String {
    format!("{j},{},{},{},{}\n", num(e), num(secs), num(reference), num(e / reference))
}

fn reproduce_tables(args: &StoreArgs, out: &Path, levels: &str, only: Option<&str>) -> anyhow::Result<u8> {
    let open = open_store(args, false)?;
    let store = &open.store;
    let levels = parse_range(levels)?;
    let wanted: Option<Vec<&str>> = only.map(|s| s.split(',').map(str::trim).collect());
    let mut failed = false;
    for (t, case) in all_examples().into_iter().enumerate() {
        if wanted.as_ref().is_some_and(|w| !w.contains(&case.id)) {
            continue;
        }
        let mut table = String::from("j,ErrSQ,cpu_seconds,paper_ErrSQ,ratio\n");
        for &j in &levels {
            let c = case.clone().at_level(j);
            match run_level(&c, store, out) {
                Ok((e, secs)) => {
                    let reference = c.reference_row(j).map_or(f64::NAN, |r| r.err_sq);
                    table.push_str(&table_row(j, e, secs, reference));
                    println!("{} j={j} ErrSQ={e:.3e} reference={reference:.1e} seconds={secs:.3}", c.id);
                }
                Err(e) => {
                    failed = true;
                    eprintln!("{} j={j}: {e:#}", c.id);
                }
            }
        }
        write_file(&out.join(format!("table{}_{}.csv", t + 1, case.id)), &table)?;
    }
    Ok(if failed { exit::FAILURE } else { exit::OK })
}

/// One table row plus the figure data for that level.
fn run_level(c: &ExampleCase, store: &ConnStore, out: &Path) -> anyhow::Result<(f64, f64)> {
    let run = run_case(c, store)?;
    let exact = |x: f64, y: f64| c.exact_at(x, y);
    write_file(
        &out.join(format!("fig_error_{}_j{}.csv", c.id, run.j)),
        &error_csv(&run.solution, &exact),
    )?;
    if let CaseProblem::Nonlinear(p) = &c.problem {
        let sys = NonlinearSystem::assemble(p, store)?;
        let report = multi_start(&sys, &p.default_seeds(), NEWTON_TOL, NEWTON_MAX_ITER);
        let mut s = String::from("x");
        for i in 0..report.branches.len() {
            write!(s, ",branch_{}", i + 1)?;
        }
        s.push_str(",exact\n");
        for (i, x) in coifgal::galerkin::nodes(run.j).iter().enumerate() {
            s.push_str(&num(*x));
            for b in &report.branches {
                write!(s, ",{}", num(b.solution.values[i]))?;
            }
            writeln!(s, ",{}", num(exact(*x, 0.0)))?;
        }
        write_file(&out.join(format!("fig_branches_{}_j{}.csv", c.id, run.j)), &s)?;
    }
    Ok((run.err_sq, run.seconds))
}

fn dump_basis(
    level: u32,
    k: i64,
    deriv: usize,
    kinds: &str,
    points: u32,
    filter: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let fb = load_filter(filter)?;
    let (l, r) = parse_kinds(kinds)?;
    let spec = BasisSpec::with_kinds(level, fb, l, r)?;
    let steps = 1i64 << points;
    let mut s = String::from("x,value\n");
    for i in 0..=steps {
        let x = i as f64 / steps as f64;
        writeln!(s, "{},{}", num(x), num(eval_basis(&spec, k, deriv, x)?))?;
    }
    match out {
        Some(p) => write_file(p, &s)?,
        None => print!("{s}"),
    }
    Ok(exit::OK)
}
