//! `pot`: generate partial transport instances, solve them and time the
//! solvers. Output is JSON lines for external plotting.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use partial_ot::harness::experiment::{EXIT_OK, EXIT_SOLVE, EXIT_USAGE};
use partial_ot::harness::io::{write_cost, write_marginal};
use partial_ot::harness::{generate, run_experiment, scaling_study, Algo, GeneratorKind, GeneratorSpec, RunConfig, SolverSettings};

#[derive(Parser, Debug)]
#[command(name = "pot", version, about = "Partial optimal transport solvers and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic instance as marginal, cost and metadata files.
    Gen(GenArgs),
    /// Solve an instance from files and emit a JSON-lines trace.
    Solve(SolveArgs),
    /// Time APDAGD over several sizes and fit the log-log slope.
    BenchScaling(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value = "gaussian_mixture", value_parser = parse_kind)]
    kind: GeneratorKind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    mass_r: f64,
    #[arg(long, default_value_t = 3.0)]
    mass_c: f64,
    #[arg(long, default_value_t = 0.9)]
    s_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Files are written as `<prefix>.r.txt`, `<prefix>.c.txt`,
    /// `<prefix>.cost.csv` and `<prefix>.meta.json`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Algo,
    #[arg(long)]
    r: PathBuf,
    #[arg(long)]
    c: PathBuf,
    #[arg(long)]
    cost: PathBuf,
    #[arg(long)]
    s: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    max_iter: Option<u64>,
    /// Dummy cost for `sinkhorn_infeasible` (default 2‖C‖max).
    #[arg(long = "A-val")]
    a_val: Option<f64>,
    /// Known optimal value, used for the primal gap column.
    #[arg(long)]
    fstar: Option<f64>,
    /// Emit an iteration record every k iterations (0 disables).
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
    /// Trace file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,30,100,300")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<GeneratorKind, String> {
    s.parse().map_err(|e: partial_ot::PotError| e.to_string())
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse().map_err(|e: partial_ot::PotError| e.to_string())
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(prefix: &PathBuf, suffix: &str) -> PathBuf {
    let mut s = prefix.clone().into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_gen(args: GenArgs) -> i32 {
    let spec = GeneratorSpec {
        kind: args.kind,
        n: args.n,
        mass_r: args.mass_r,
        mass_c: args.mass_c,
        s_fraction: args.s_frac,
        seed: args.seed,
    };
    let problem = match generate(&spec) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut meta = serde_json::json!({
        "kind": spec.kind.as_str(),
        "n": spec.n,
        "mass_r": spec.mass_r,
        "mass_c": spec.mass_c,
        "s_fraction": spec.s_fraction,
        "seed": spec.seed,
        "s": problem.s(),
        "rng": "chacha8",
    });
    if spec.kind == GeneratorKind::RandomHistogram {
        meta["note"] = "uniform random histograms on a pixel grid replace image-derived marginals".into();
    }
    let files = [
        (".r.txt", write_marginal(&problem.r().to_owned())),
        (".c.txt", write_marginal(&problem.c().to_owned())),
        (".cost.csv", write_cost(&problem.cost().to_owned())),
        (".meta.json", format!("{meta}\n")),
    ];
    for (suffix, text) in files {
        let path = with_suffix(&args.out_prefix, suffix);
        if let Err(e) = std::fs::write(&path, text) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_USAGE;
        }
    }
    println!("{meta}");
    EXIT_OK
}

fn run_solve(args: SolveArgs) -> i32 {
    let settings = SolverSettings {
        algo: args.algo,
        eps: args.eps,
        max_iter: args.max_iter,
        a_val: args.a_val,
        fstar: args.fstar,
        trace_every: args.trace_every,
    };
    run_experiment(&RunConfig { settings, r: args.r, c: args.c, cost: args.cost, s: args.s, out: args.out })
}

fn run_bench(args: BenchArgs) -> i32 {
    let study = match scaling_study(&args.n_list, args.eps, args.seed) {
        Ok(s) => s,
        Err(e) => {
            let line = serde_json::json!({ "record": "error", "kind": e.kind(), "message": e.to_string() });
            let _ = emit(args.out.as_ref(), &format!("{line}\n"));
            return EXIT_SOLVE;
        }
    };
    let mut text = String::new();
    for row in &study.rows {
        let mut v = serde_json::to_value(row).expect("rows serialize");
        v["record"] = "point".into();
        text.push_str(&format!("{v}\n"));
    }
    let summary = serde_json::json!({
        "record": "summary",
        "eps": study.eps,
        "seed": study.seed,
        "slope": study.slope,
    });
    text.push_str(&format!("{summary}\n"));
    match emit(args.out.as_ref(), &text) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Solve(a) => run_solve(a),
        Command::BenchScaling(a) => run_bench(a),
    };
    ExitCode::from(code as u8)
}
