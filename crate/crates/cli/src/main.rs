//! `boltzfact` command-line driver.
//!
//! Exit codes: 0 success, 1 a validation threshold failed, 2 usage or I/O error.

mod output;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use boltzfact::basis::SpectralConfig;
use boltzfact::bench::{
    bench_operator, dense_memory_budget, l_sweep, loglog_slope, sweep_slope, BenchOptions, BenchReport,
    BENCH_SEED,
};
use boltzfact::cache;
use boltzfact::contraction::{FactorizedOperator, Strategy};
use boltzfact::harness::{QUADCONV_PADS, QUADCONV_REFERENCE_PAD};
use boltzfact::kinematic::assemble_r_tensor;
use boltzfact::angular::build_gaunt_coo;
use boltzfact::quadrature::{grid_sizes, DEFAULT_PAD};
use clap::{Args, Parser, Subcommand};

use output::{gib, print_checks, Csv};
use validate::{Suite, SuiteOptions};

const THREADS_ENV: &str = "BOLTZFACT_THREADS";

#[derive(Parser)]
#[command(name = "boltzfact", version, about = "Factorized spectral Boltzmann collision operator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble an operator and write it to a cache file.
    Build(BuildArgs),
    /// Run a validation suite against a cached operator.
    Validate(ValidateArgs),
    /// Time the contraction strategies.
    Bench(BenchArgs),
    /// Print the header and storage breakdown of a cache.
    Info(InfoArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    kmax: usize,
    #[arg(long)]
    lmax: usize,
    /// VHS exponent in [0, 1]: 0 Maxwell molecules, 1 hard spheres.
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_PAD)]
    pad_rad: usize,
    #[arg(long, default_value_t = DEFAULT_PAD)]
    pad_ang: usize,
    #[arg(long)]
    out: PathBuf,
    /// Skip the conservation correction (detailed balance is still applied).
    #[arg(long)]
    no_conservation: bool,
    /// Worker threads; falls back to BOLTZFACT_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Time step for bkw and stress (defaults chosen per suite).
    #[arg(long)]
    dt: Option<f64>,
    /// Paddings for quadconv, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = QUADCONV_PADS.to_vec())]
    pads: Vec<usize>,
    #[arg(long, default_value_t = QUADCONV_REFERENCE_PAD)]
    reference_pad: usize,
    /// Initial shear amplitude for stress.
    #[arg(long, default_value_t = 1e-3)]
    amplitude: f64,
    /// End time for stress.
    #[arg(long, default_value_t = 20.0)]
    t_end: f64,
    /// Worker threads (default 1).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Cached operator to time; not needed with --sweep.
    #[arg(long, required_unless_present = "sweep")]
    cache: Option<PathBuf>,
    /// Angular degrees of a sweep over seeded random operators.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Radial degree of the sweep operators.
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, value_delimiter = ',', default_value = "dense,naive,radial-first,angular-first")]
    strategies: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = BENCH_SEED)]
    seed: u64,
    /// Run on one thread (the default unless --threads is given).
    #[arg(long, conflicts_with = "threads")]
    single_thread: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    cache: PathBuf,
    /// Print a JSON summary instead of text.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Threshold,
    Usage(String),
}

impl From<boltzfact::Error> for Failure {
    fn from(e: boltzfact::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn init_threads(requested: Option<usize>, default_single: bool) -> CmdResult {
    let from_env = std::env::var(THREADS_ENV).ok().map(|v| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))
    });
    let n = match (requested, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v?),
        (None, None) if default_single => Some(1),
        (None, None) => None,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load(path: &Path) -> std::result::Result<FactorizedOperator, Failure> {
    cache::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_build(a: BuildArgs) -> CmdResult {
    init_threads(a.threads, false)?;
    let cfg = SpectralConfig::new(a.kmax, a.lmax, a.gamma)?;
    let grid = grid_sizes(a.kmax, a.lmax, a.pad_rad, a.pad_ang);
    let t0 = Instant::now();
    let r = assemble_r_tensor(&cfg, &grid)?;
    let r = if a.no_conservation { r.apply_detailed_balance() } else { r.apply_conservation().apply_detailed_balance() };
    let op = FactorizedOperator::new(cfg, r, build_gaunt_coo(a.lmax))?;
    let elapsed = t0.elapsed();
    cache::save(&op, &a.out).map_err(|e| Failure::Usage(format!("{}: {e}", a.out.display())))?;
    let g = op.g();
    println!("k_max = {}, l_max = {}, gamma = {}", a.kmax, a.lmax, a.gamma);
    println!("grid: {grid:?}");
    println!("N_T = {}", g.channels.len());
    println!("N_G = {}", g.n_rows());
    println!("N_S = {}", g.n_slices());
    println!("DOFs = {}", cfg.n_dof());
    println!("R elements = {}", op.r().values.len());
    println!("factorized elements = {}", op.logical_elements());
    println!("factorized size = {:.3e} GiB", gib(op.stored_bytes() as f64));
    println!("dense size = {:.3e} GiB", gib(op.dense_bytes() as f64));
    println!("max zeroed entry = {:.3e}", op.r().max_zeroed);
    println!("assembly wall time = {:.3} s", elapsed.as_secs_f64());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CmdResult {
    init_threads(a.threads, true)?;
    let op = load(&a.cache)?;
    let opts = SuiteOptions {
        dt: a.dt,
        pads: a.pads,
        reference_pad: a.reference_pad,
        amplitude: a.amplitude,
        t_end: a.t_end,
    };
    let name = format!("{:?}", a.suite).to_lowercase();
    let out = validate::run(a.suite, &op, &opts)?;
    print_checks(&name, &out.checks);
    if let Some(p) = &a.csv {
        out.csv.write(p)?;
    }
    if out.checks.iter().all(|c| c.pass) {
        println!("{name}: PASS");
        Ok(())
    } else {
        println!("{name}: FAIL");
        Err(Failure::Threshold)
    }
}

fn bench_rows(csv: &mut Csv, r: &BenchReport) {
    for t in &r.timings {
        csv.row([
            r.l_max.to_string(),
            r.n_dof.to_string(),
            t.strategy.name().to_string(),
            t.median_s.to_string(),
            t.counters.flops.to_string(),
            t.counters.bytes.to_string(),
            t.speedup_vs_dense.map_or(String::new(), |s| s.to_string()),
        ]);
    }
}

fn print_bench(r: &BenchReport) {
    println!("k_max = {}, l_max = {}, DOFs = {}", r.k_max, r.l_max, r.n_dof);
    if let Some(why) = &r.dense_skipped {
        eprintln!("warning: dense baseline skipped: {why}");
    }
    println!("  strategies agree to {:.2e}", r.max_rel_diff);
    for t in &r.timings {
        let speed = t.speedup_vs_dense.map_or("-".to_string(), |s| format!("{s:.1}x"));
        println!(
            "  {:<14} {:>12.4e} s  {:>12} flops  speedup {speed}",
            t.strategy.name(),
            t.median_s,
            t.counters.flops
        );
    }
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let threads = if a.single_thread { Some(1) } else { a.threads };
    init_threads(threads, true)?;
    let strategies: Vec<Strategy> = a.strategies.iter().map(|s| Strategy::parse(s)).collect::<Result<_, _>>()?;
    let opts = BenchOptions {
        repeats: a.repeats,
        min_sample: Duration::from_millis(50),
        seed: a.seed,
        dense_budget: dense_memory_budget(),
        gate_tol: 1e-12,
    };
    let mut meta = vec![("seed", a.seed.to_string()), ("repeats", a.repeats.to_string())];
    meta.push(("threads", rayon::current_num_threads().to_string()));
    let reports = match (&a.sweep, &a.cache) {
        (Some(ls), _) => {
            meta.push(("operator", "random".to_string()));
            l_sweep(a.kmax, ls, &strategies, &opts)?
        }
        (None, Some(p)) => {
            meta.push(("operator", p.display().to_string()));
            vec![bench_operator(&load(p)?, &strategies, &opts)?]
        }
        (None, None) => return Err(Failure::Usage("either --cache or --sweep is required".into())),
    };
    let mut csv = Csv::new(&meta, &["l_max", "n_dof", "strategy", "median_s", "flops", "bytes", "speedup_vs_dense"]);
    for r in &reports {
        print_bench(r);
        bench_rows(&mut csv, r);
    }
    if reports.len() > 1 {
        println!("log-log slopes of median time:");
        for &s in &strategies {
            let vs_l1 = sweep_slope(&reports, s);
            let (x, y): (Vec<f64>, Vec<f64>) =
                reports.iter().filter_map(|r| r.time_of(s).map(|t| (r.l_max as f64, t))).unzip();
            match (vs_l1, loglog_slope(&x, &y)) {
                (Ok(a1), Ok(a0)) => println!("  {:<14} {a1:.2} vs (L+1), {a0:.2} vs L", s.name()),
                _ => println!("  {:<14} too few points", s.name()),
            }
        }
    }
    if let Some(p) = &a.csv {
        csv.write(p)?;
    }
    Ok(())
}

fn cmd_info(a: InfoArgs) -> CmdResult {
    let bytes = std::fs::read(&a.cache)?;
    let h = cache::decode_header(&bytes)?;
    let op = cache::decode(&bytes)?;
    let r_elements = op.r().values.len();
    let dense = op.dense_bytes() as f64;
    let fact = op.stored_bytes() as f64;
    if a.json {
        let v = serde_json::json!({
            "version": h.version,
            "k_max": h.k_max,
            "l_max": h.l_max,
            "gamma": h.gamma,
            "grid": h.grid,
            "n_channels": h.n_channels,
            "n_rows": h.n_rows,
            "n_slices": h.n_slices,
            "n_dof": op.cfg().n_dof(),
            "conservation_applied": h.conservation_applied,
            "detailed_balance_applied": h.detailed_balance_applied,
            "max_zeroed": h.max_zeroed,
            "crc32": format!("{:08x}", h.crc32),
            "r_elements": r_elements,
            "factorized_elements": op.logical_elements(),
            "factorized_bytes": op.stored_bytes(),
            "dense_bytes": op.dense_bytes(),
            "ratio": fact / dense,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
        return Ok(());
    }
    println!("format version       {}", h.version);
    println!("k_max, l_max, gamma  {}, {}, {}", h.k_max, h.l_max, h.gamma);
    println!("grid                 {:?}", h.grid);
    println!("conservation         {}", h.conservation_applied);
    println!("detailed balance     {}", h.detailed_balance_applied);
    println!("max zeroed entry     {:.3e}", h.max_zeroed);
    println!("crc32                {:08x}", h.crc32);
    println!("DOFs                 {}", op.cfg().n_dof());
    println!("channels N_T         {}", h.n_channels);
    println!("Gaunt nonzeros N_G   {}", h.n_rows);
    println!("slices N_S           {}", h.n_slices);
    println!("R elements           {}", r_elements);
    println!("factorized elements  {}", op.logical_elements());
    println!("factorized size      {:.3e} GiB", gib(fact));
    println!("dense size           {:.3e} GiB", gib(dense));
    println!("ratio                {:.3e}", fact / dense);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Build(a) => cmd_build(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Info(a) => cmd_info(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
