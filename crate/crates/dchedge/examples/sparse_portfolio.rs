//! The full outer loop on the cardinality-penalized coupled portfolio model:
//! smoothing schedule, hedged surrogate solves, hard-threshold pruning, and
//! the final KKT metric report.
//!
//! Run with: `cargo run --release --example sparse_portfolio`

use dchedge::markowitz::{build_problem, synthesize_market, ModelVariant};
use dchedge::model::Layout;
use dchedge::sdc::{run_sdc, SdcConfig, NNZ_TOL};
use nalgebra::DVector;

fn main() {
    let n = 10;
    let k = 16;
    let data = synthesize_market(n, k, 1).unwrap();
    let prob = build_problem(&data, ModelVariant::A).unwrap();
    let layout = Layout::of(&prob);

    let mut config = SdcConfig::for_scenarios(k);
    // Tighter hedging residuals than the default thresholds; the drift and
    // objective tests stay at their defaults.
    config.eta1 *= 0.01;

    let out = run_sdc(&prob, &config, &DVector::zeros(layout.total_dim())).unwrap();
    println!(
        "status {:?}: {} outer iterations, {} hedging steps, rho_final {:.3e}",
        out.status, out.outer_iterations, out.total_phm_steps, out.rho_final
    );

    println!("\nsmoothing trace (every fourth outer iteration):");
    for row in out.trace.iter().filter(|r| r.outer % 4 == 0 && r.inner == 0) {
        println!(
            "  t {:2}  rho {:.3e}  residual {:.2e}  objective {:.5e}  nnz {:2}  feas {:.1e}",
            row.outer, row.rho, row.residual, row.objective, row.nnz, row.feas_error
        );
    }

    let threshold = (2.0 * data.gamma * out.rho_final).sqrt();
    println!("\nfinal hard threshold sqrt(2 gamma rho) = {threshold:.3e}");
    let mut weights: Vec<f64> = out.point.x.iter().cloned().collect();
    weights.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("sorted weights: {:?}", weights.iter().map(|w| format!("{w:.2e}")).collect::<Vec<_>>());
    println!(
        "surviving positions: {} of {n} (cutoff {NNZ_TOL:.0e}), all at least {:.1}x the threshold",
        out.metrics.nnz,
        weights
            .iter()
            .filter(|w| **w > NNZ_TOL)
            .map(|w| w / threshold)
            .fold(f64::INFINITY, f64::min)
    );
    println!(
        "\nmetrics: KKT_inf {:.2e}  KKT_rel {:.2e}  soc {:.3}  FeasError {:.1e}  objective {:.5e}",
        out.metrics.kkt_inf, out.metrics.kkt_rel, out.metrics.soc, out.metrics.feas_error,
        out.objective
    );
}
