//! Experiment orchestration: run configuration (file plus flag overrides),
//! the solve/bench/synth commands, and summary emission.

pub mod verify;

use crate::error::{Error, Result};
use crate::markowitz::{
    self, build_problem, estimate_first_stage, load_returns_csv, synthesize_market, MarketData,
    ModelVariant,
};
use crate::model::Layout;
use crate::report::{write_plot_csv, write_trace_csv, SolveReport};
use crate::sdc::{run_sdc, SdcConfig};
use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Natural-residual target for the direct (convex) hedging runs.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-6;

/// Optional overrides of the solver defaults; unset fields fall back to
/// `SdcConfig::for_scenarios(K)`.
#[derive(Debug, Clone, Default)]
pub struct SdcOverrides {
    pub eta: Option<f64>,
    pub tau: Option<f64>,
    pub rho0: Option<f64>,
    pub rho_decay: Option<f64>,
    pub rho_floor: Option<f64>,
    pub obj_tol: Option<f64>,
    pub sigma: Option<f64>,
    pub warm_start: Option<bool>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub phm_budget: Option<usize>,
}

impl SdcOverrides {
    pub fn build(&self, k: usize) -> SdcConfig {
        let mut c = SdcConfig::for_scenarios(k);
        if let Some(eta) = self.eta {
            c.eta1 = eta;
            c.eta2 = eta;
            c.eta3 = eta;
        }
        if let Some(tau) = self.tau {
            c.tau1 = tau;
            c.tau2 = tau;
        }
        if let Some(v) = self.rho0 {
            c.rho0 = v;
        }
        if let Some(v) = self.rho_decay {
            c.rho_decay = v;
        }
        if let Some(v) = self.rho_floor {
            c.rho_floor = v;
        }
        if let Some(v) = self.obj_tol {
            c.obj_tol = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.warm_start {
            c.warm_start = v;
        }
        if let Some(v) = self.max_outer {
            c.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            c.max_inner = v;
        }
        if let Some(v) = self.phm_budget {
            c.phm_budget = v;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variants: Vec<ModelVariant>,
    pub n: usize,
    pub k: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub data_csv: Option<PathBuf>,
    pub overrides: SdcOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variants: vec![ModelVariant::A],
            n: 10,
            k: 16,
            replications: 1,
            base_seed: 1,
            out_dir: PathBuf::from("out"),
            data_csv: None,
            overrides: SdcOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no model variants selected".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 assets, got n={}", self.n)));
        }
        if self.k < 1 {
            return Err(Error::Config(format!("need at least 1 scenario, got K={}", self.k)));
        }
        if self.replications < 1 {
            return Err(Error::Config("need at least 1 replication".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` config document with `[run]` and `[sdc]`
    /// sections. Unknown keys are rejected; flags override afterwards.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config = RunConfig::default();
        let mut section = String::from("run");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_lowercase();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_lowercase();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what}: {value}", lineno + 1));
            match (section.as_str(), key.as_str()) {
                ("run", "variants" | "variant") => {
                    config.variants = parse_variants(value)?;
                }
                ("run", "n") => config.n = value.parse().map_err(|_| bad("n"))?,
                ("run", "k") => config.k = value.parse().map_err(|_| bad("K"))?,
                ("run", "replications") => {
                    config.replications = value.parse().map_err(|_| bad("replications"))?
                }
                ("run", "seed") => config.base_seed = value.parse().map_err(|_| bad("seed"))?,
                ("run", "out") => config.out_dir = PathBuf::from(value),
                ("run", "data_csv") => config.data_csv = Some(PathBuf::from(value)),
                ("sdc", "eta") => config.overrides.eta = Some(value.parse().map_err(|_| bad("eta"))?),
                ("sdc", "tau") => config.overrides.tau = Some(value.parse().map_err(|_| bad("tau"))?),
                ("sdc", "rho0") => {
                    config.overrides.rho0 = Some(value.parse().map_err(|_| bad("rho0"))?)
                }
                ("sdc", "rho_decay") => {
                    config.overrides.rho_decay = Some(value.parse().map_err(|_| bad("rho_decay"))?)
                }
                ("sdc", "rho_floor") => {
                    config.overrides.rho_floor = Some(value.parse().map_err(|_| bad("rho_floor"))?)
                }
                ("sdc", "obj_tol") => {
                    config.overrides.obj_tol = Some(value.parse().map_err(|_| bad("obj_tol"))?)
                }
                ("sdc", "sigma") => {
                    config.overrides.sigma = Some(value.parse().map_err(|_| bad("sigma"))?)
                }
                ("sdc", "warm_start") => {
                    config.overrides.warm_start =
                        Some(value.parse().map_err(|_| bad("warm_start"))?)
                }
                ("sdc", "max_outer") => {
                    config.overrides.max_outer = Some(value.parse().map_err(|_| bad("max_outer"))?)
                }
                ("sdc", "max_inner") => {
                    config.overrides.max_inner = Some(value.parse().map_err(|_| bad("max_inner"))?)
                }
                ("sdc", "phm_budget") => {
                    config.overrides.phm_budget =
                        Some(value.parse().map_err(|_| bad("phm_budget"))?)
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{key}` in section `[{section}]`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(config)
    }
}

pub fn parse_variants(s: &str) -> Result<Vec<ModelVariant>> {
    let mut variants = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if part.len() != 1 {
            return Err(Error::Config(format!("unknown variant `{part}`")));
        }
        let v = ModelVariant::from_letter(part.chars().next().unwrap())
            .ok_or_else(|| Error::Config(format!("unknown variant `{part}`")))?;
        variants.push(v);
    }
    if variants.is_empty() {
        return Err(Error::Config("no variants parsed".into()));
    }
    Ok(variants)
}

/// Market data for one replication: synthetic by default; with a CSV source
/// the first-period moments are estimated from the file and the second
/// period is synthesized.
pub fn replication_data(config: &RunConfig, seed: u64) -> Result<MarketData> {
    let mut data = synthesize_market(config.n, config.k, seed)?;
    if let Some(csv) = &config.data_csv {
        let returns = load_returns_csv(csv)?;
        if returns.ncols() != config.n {
            return Err(Error::Config(format!(
                "returns CSV has {} assets, run asked for {}",
                returns.ncols(),
                config.n
            )));
        }
        let (rbar1, q1) = estimate_first_stage(&returns)?;
        let (r1_min, _) = markowitz::compute_rmin(&rbar1, &[], markowitz::DEFAULT_FLOOR_COEF);
        data.rbar1 = rbar1;
        data.q1 = q1;
        data.r1_min = r1_min;
    }
    Ok(data)
}

fn solve_one(
    config: &RunConfig,
    data: &MarketData,
    variant: ModelVariant,
    seed: u64,
) -> Result<(SolveReport, crate::sdc::SdcOutcome)> {
    let prob = build_problem(data, variant)?;
    let layout = Layout::of(&prob);
    let sdc_config = config.overrides.build(config.k);
    // The cardinality-penalized variants go through the smoothing loop; the
    // convex ones are hedged directly until the objective stabilizes and the
    // natural residual reaches solver-grade accuracy.
    let outcome = if variant.include_l0 {
        run_sdc(&prob, &sdc_config, &DVector::zeros(layout.total_dim()))?
    } else {
        crate::sdc::run_direct_phm(
            &prob,
            &sdc_config,
            &DVector::zeros(layout.total_dim()),
            DIRECT_RESIDUAL_TOL,
        )?
    };
    let report = SolveReport::from_outcome(variant.letter(), config.n, config.k, seed, &outcome);
    Ok((report, outcome))
}

/// Runs every (variant, replication) pair, writing one JSON report plus the
/// trace and plot CSVs per solve. Fails on the first failed solve.
pub fn cmd_solve(config: &RunConfig) -> Result<Vec<SolveReport>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut reports = Vec::new();
    for rep in 0..config.replications {
        let seed = config.base_seed + rep as u64;
        let data = replication_data(config, seed)?;
        for &variant in &config.variants {
            let (report, outcome) = solve_one(config, &data, variant, seed)?;
            let stem = format!("{}_{}", variant.letter(), seed);
            report.write_json(&config.out_dir.join(format!("{stem}.json")))?;
            write_trace_csv(&config.out_dir.join(format!("{stem}_trace.csv")), &outcome.trace)?;
            write_plot_csv(&config.out_dir.join(format!("{stem}_plot.csv")), &outcome.trace)?;
            println!(
                "variant {} seed {seed}: {} obj {:.6e} nnz {} kkt_rel {:.3e} feas {:.3e} phm {}",
                variant.letter(),
                report.termination,
                report.objective,
                report.nnz,
                report.kkt_rel,
                report.feas_error,
                report.phm_iterations
            );
            reports.push(report);
        }
    }
    Ok(reports)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub reports: Vec<SolveReport>,
    /// One row per variant: metrics CSV without timing columns.
    pub metrics_csv: String,
    /// Timing CSV kept apart so the metric table stays deterministic.
    pub timing_csv: String,
}

/// Runs the replication grid (one market per replication, shared across
/// variants) and emits the summary tables.
pub fn cmd_bench(config: &RunConfig) -> Result<BenchSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut reports: Vec<SolveReport> = Vec::new();
    for rep in 0..config.replications {
        let seed = config.base_seed + rep as u64;
        let data = replication_data(config, seed)?;
        for &variant in &config.variants {
            let (report, outcome) = solve_one(config, &data, variant, seed)?;
            let stem = format!("{}_{}", variant.letter(), seed);
            report.write_json(&config.out_dir.join(format!("{stem}.json")))?;
            write_plot_csv(&config.out_dir.join(format!("{stem}_plot.csv")), &outcome.trace)?;
            println!(
                "bench variant {} seed {seed}: {} nnz {} soc {:.4} phm {}",
                variant.letter(),
                report.termination,
                report.nnz,
                report.soc,
                report.phm_iterations
            );
            reports.push(report);
        }
    }

    let mut metrics_csv = String::from(
        "variant,K,n,replications,nnz_mean,nnz_std,kkt_inf_mean,kkt_inf_std,\
         kkt_rel_mean,kkt_rel_std,soc_mean,soc_std,feas_mean,feas_std,\
         phm_iter_mean,phm_iter_std,objective_mean,objective_std\n",
    );
    let mut timing_csv = String::from("variant,K,n,replications,cpu_mean_s,cpu_std_s\n");
    for &variant in &config.variants {
        let rows: Vec<&SolveReport> = reports
            .iter()
            .filter(|r| r.variant == variant.letter().to_string())
            .collect();
        let pick = |f: &dyn Fn(&SolveReport) -> f64| -> (f64, f64) {
            mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<f64>>())
        };
        let (nnz_m, nnz_s) = pick(&|r| r.nnz as f64);
        let (ki_m, ki_s) = pick(&|r| r.kkt_inf);
        let (kr_m, kr_s) = pick(&|r| r.kkt_rel);
        let (soc_m, soc_s) = pick(&|r| r.soc);
        let (fe_m, fe_s) = pick(&|r| r.feas_error);
        let (ph_m, ph_s) = pick(&|r| r.phm_iterations as f64);
        let (ob_m, ob_s) = pick(&|r| r.objective);
        let (cpu_m, cpu_s) = pick(&|r| r.cpu_seconds);
        writeln!(
            metrics_csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            variant.letter(),
            config.k,
            config.n,
            rows.len(),
            nnz_m,
            nnz_s,
            ki_m,
            ki_s,
            kr_m,
            kr_s,
            soc_m,
            soc_s,
            fe_m,
            fe_s,
            ph_m,
            ph_s,
            ob_m,
            ob_s
        )
        .expect("string write");
        writeln!(
            timing_csv,
            "{},{},{},{},{},{}",
            variant.letter(),
            config.k,
            config.n,
            rows.len(),
            cpu_m,
            cpu_s
        )
        .expect("string write");
    }
    std::fs::write(config.out_dir.join("summary_metrics.csv"), &metrics_csv)?;
    std::fs::write(config.out_dir.join("summary_timing.csv"), &timing_csv)?;
    Ok(BenchSummary { reports, metrics_csv, timing_csv })
}

/// Writes a synthesized market to a JSON document.
pub fn cmd_synth(n: usize, k: usize, seed: u64, out: &Path) -> Result<()> {
    let data = synthesize_market(n, k, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut s = serde_json::to_string_pretty(&data)?;
    s.push('\n');
    std::fs::write(out, s)?;
    println!("wrote market data (n={n}, K={k}, seed={seed}) to {}", out.display());
    Ok(())
}
