//! Solve reports and their serialized forms: a JSON document per solve plus
//! CSV traces for plotting.

use crate::error::Result;
use crate::sdc::{SdcOutcome, SdcTraceRow};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    pub objective: f64,
    pub nnz: usize,
    pub feas_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub variant: String,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub termination: String,
    pub objective: f64,
    pub nnz: usize,
    pub kkt_inf: f64,
    pub kkt_rel: f64,
    pub soc: f64,
    pub feas_error: f64,
    pub cpu_seconds: f64,
    pub phm_iterations: usize,
    pub outer_iterations: usize,
    pub rho_final: f64,
    pub conservation_error: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl SolveReport {
    pub fn from_outcome(
        variant: char,
        n: usize,
        k: usize,
        seed: u64,
        outcome: &SdcOutcome,
    ) -> Self {
        SolveReport {
            variant: variant.to_string(),
            n,
            k,
            seed,
            termination: outcome.status.as_str().to_string(),
            objective: outcome.objective,
            nnz: outcome.metrics.nnz,
            kkt_inf: outcome.metrics.kkt_inf,
            kkt_rel: outcome.metrics.kkt_rel,
            soc: outcome.metrics.soc,
            feas_error: outcome.metrics.feas_error,
            cpu_seconds: outcome.wall_seconds,
            phm_iterations: outcome.total_phm_steps,
            outer_iterations: outcome.outer_iterations,
            rho_final: outcome.rho_final,
            conservation_error: outcome.conservation_error,
            trajectory: outcome
                .trace
                .iter()
                .map(|r| TrajectoryPoint {
                    time_s: r.wall_time_s,
                    objective: r.objective,
                    nnz: r.nnz,
                    feas_error: r.feas_error,
                })
                .collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Full per-iteration trace, one row per accepted inner iterate.
pub fn write_trace_csv(path: &Path, trace: &[SdcTraceRow]) -> Result<()> {
    let mut out = String::from(
        "t,l,rho,phm_steps,residual,f_surrogate,objective,nnz,feas_error,\
         f_rho_anchor,f_rho_accepted,sq_drift,objective_slack,drift,time_s\n",
    );
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.outer,
            r.inner,
            r.rho,
            r.phm_steps,
            r.residual,
            r.f_surrogate,
            r.objective,
            r.nnz,
            r.feas_error,
            r.f_rho_anchor,
            r.f_rho_accepted,
            r.sq_drift,
            r.objective_slack,
            r.drift,
            r.wall_time_s
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Tidy plot data: `time_s, objective, nnz, feas_error`.
pub fn write_plot_csv(path: &Path, trace: &[SdcTraceRow]) -> Result<()> {
    let mut out = String::from("time_s,objective,nnz,feas_error\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.wall_time_s, r.objective, r.nnz, r.feas_error
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
