//! Progressive hedging on a small decoupled instance, checked against the
//! active-set enumeration oracle.
//!
//! Run with: `cargo run --example hedging_small`

use dchedge::brute;
use dchedge::markowitz::{build_problem, ModelVariant};
use dchedge::model::{Layout, SurrogateAnchor};
use dchedge::phm::{run_phm, PhmState, PhmStop};
use dchedge::synthetic;
use nalgebra::DVector;

fn main() {
    let n = 3;
    let k = 2;
    let data = synthetic::conditioned_market(n, k, 11);
    let prob = build_problem(&data, ModelVariant::D).unwrap();
    let layout = Layout::of(&prob);

    let x0 = DVector::from_element(n, 1.0 / n as f64);
    let anchor =
        SurrogateAnchor::refresh(&prob, 1.0, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); k]).unwrap();
    let mut state = PhmState::new(&prob, &DVector::zeros(layout.total_dim()), 1.0).unwrap();
    let stop = PhmStop { eta1: 1e-7, rho_t: 1.0, eta2: 1e9, inner_index: 0 };
    let run = run_phm(&prob, &anchor, stop, 50_000, &mut state).unwrap();

    println!("status {:?} after {} hedging steps", run.status, run.steps);
    println!("natural residual {:.2e}", run.residual);
    println!("nonanticipativity conservation {:.2e}", run.conservation_error);
    for row in run.trace.iter().step_by(run.trace.len().max(8) / 8) {
        println!("  nu {:4}  residual {:.3e}  objective part {:.6}", row.nu, row.residual, row.f_surrogate);
    }

    let first = brute::solve_block_qp_enumerate(&data.q1, &data.rbar1, data.r1_min).unwrap();
    println!("\nconsensus x   = {:?}", run.point.x.as_slice());
    println!("oracle x      = {:?}", first.z.as_slice());
    println!("primal gap    = {:.2e}", (&run.point.x - &first.z).amax());
    for i in 0..k {
        let block =
            brute::solve_block_qp_enumerate(&data.q2[i], &data.rbar2[i], data.r2_min[i]).unwrap();
        println!(
            "scenario {i}: y gap {:.2e}",
            (&run.point.ys[i] - &block.z).amax()
        );
    }
}
