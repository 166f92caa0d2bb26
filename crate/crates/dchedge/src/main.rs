//! Thin command-line front end over the library: `solve`, `bench`, `synth`,
//! and `verify`.

use clap::{Args, Parser, Subcommand};
use dchedge::harness::{self, parse_variants, RunConfig, SdcOverrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dchedge", version, about = "Two-stage stochastic conic program solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Model variants, comma separated (subset of A,B,C,D).
    #[arg(long, value_name = "LIST", alias = "variant")]
    variants: Option<String>,
    /// Asset count.
    #[arg(long)]
    n: Option<usize>,
    /// Scenario count.
    #[arg(long = "K", visible_alias = "k")]
    k: Option<usize>,
    /// Base seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Config file (`key = value` with [run]/[sdc] sections); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Returns CSV for first-period estimation (second period synthesized).
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rho_decay: Option<f64>,
    #[arg(long)]
    rho_floor: Option<f64>,
    /// Proximal regularization weight (applied to both stages).
    #[arg(long)]
    tau: Option<f64>,
    /// Stopping thresholds eta1 = eta2 = eta3 (default K/5).
    #[arg(long)]
    eta: Option<f64>,
    /// Hedging step size.
    #[arg(long)]
    sigma: Option<f64>,
    /// Anchor outer iterations at the previous accepted iterate.
    #[arg(long)]
    warm_start: Option<bool>,
    #[arg(long)]
    obj_tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    phm_budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the selected variants and write reports plus traces.
    Solve(RunArgs),
    /// Run the replication grid and write the summary tables.
    Bench(RunArgs),
    /// Synthesize market data and write it as JSON.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long = "K", visible_alias = "k", default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "market.json")]
        out: PathBuf,
    },
    /// Run the self-check suites.
    Verify,
}

fn build_config(args: &RunArgs) -> dchedge::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.variants {
        config.variants = parse_variants(v)?;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(csv) = &args.data_csv {
        config.data_csv = Some(csv.clone());
    }
    let o = &mut config.overrides;
    let flag_overrides = SdcOverrides {
        eta: args.eta,
        tau: args.tau,
        rho0: args.rho0,
        rho_decay: args.rho_decay,
        rho_floor: args.rho_floor,
        obj_tol: args.obj_tol,
        sigma: args.sigma,
        warm_start: args.warm_start,
        max_outer: args.max_outer,
        max_inner: args.max_inner,
        phm_budget: args.phm_budget,
    };
    macro_rules! merge {
        ($($field:ident),*) => {
            $(if flag_overrides.$field.is_some() { o.$field = flag_overrides.$field; })*
        };
    }
    merge!(eta, tau, rho0, rho_decay, rho_floor, obj_tol, sigma, warm_start, max_outer, max_inner, phm_budget);
    config.validate()?;
    Ok(config)
}

fn run() -> dchedge::Result<bool> {
    match Cli::parse().command {
        Command::Solve(args) => {
            let config = build_config(&args)?;
            harness::cmd_solve(&config)?;
            Ok(true)
        }
        Command::Bench(args) => {
            let config = build_config(&args)?;
            let summary = harness::cmd_bench(&config)?;
            print!("{}", summary.metrics_csv);
            Ok(true)
        }
        Command::Synth { n, k, seed, out } => {
            harness::cmd_synth(n, k, seed, &out)?;
            Ok(true)
        }
        Command::Verify => {
            let report = harness::verify::cmd_verify()?;
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
