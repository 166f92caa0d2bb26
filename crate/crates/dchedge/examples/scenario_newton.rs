//! One scenario subproblem solved by semismooth Newton on the natural
//! residual, with the extragradient step shown separately.
//!
//! Run with: `cargo run --example scenario_newton`

use dchedge::cones::ConeSpec;
use dchedge::model::{ScenarioMap, SurrogateAnchor};
use dchedge::scenario::{extragradient_step, solve_scenario, ScenarioVI};
use dchedge::synthetic;
use nalgebra::DVector;

fn main() {
    // A scenario block of a coupled sparse portfolio instance: primal x and
    // y, budget and floor multipliers, and the coupling-ball multiplier.
    let prob = synthetic::markowitz_like(4, 2, true, true, 7);
    let x0 = DVector::from_element(4, 0.25);
    let anchor =
        SurrogateAnchor::refresh(&prob, 0.5, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2]).unwrap();
    let map = ScenarioMap::new(&prob, &anchor, 0);
    let dim = map.dim();
    let cone = map.cone();
    println!("scenario block dimension {dim}, cone atoms {:?}", cone.atoms());

    let vi = ScenarioVI {
        map,
        cone,
        shift: DVector::zeros(dim),
        center: DVector::zeros(dim),
        sigma: 1.0,
    };
    let (z, status, iterations) = solve_scenario(&vi, &DVector::zeros(dim), 1e-10, 100).unwrap();
    println!(
        "semismooth Newton: {status:?} after {iterations} iterations, residual {:.2e}",
        vi.residual(&z).unwrap().norm()
    );
    println!("first-stage block of the solution: {:?}", &z.as_slice()[..4]);

    // The extragradient step that backs Newton up when a system is singular:
    // two projected evaluations per step, contraction on monotone maps.
    let cone = ConeSpec::nonneg(2);
    let f = |z: &DVector<f64>| -> dchedge::Result<DVector<f64>> {
        Ok(DVector::from_column_slice(&[
            2.0 * z[0] + z[1] - 1.0,
            z[0] + 2.0 * z[1] - 1.0,
        ]))
    };
    let mut z = DVector::from_column_slice(&[2.0, 0.0]);
    for step in 0..200 {
        z = extragradient_step(&f, &cone, &z, 0.3).unwrap();
        if step % 50 == 0 {
            let res = (&z - cone.project(&(&z - f(&z).unwrap())).unwrap()).norm();
            println!("extragradient step {step:3}: z = {:?}, residual {res:.2e}", z.as_slice());
        }
    }
    println!("fixed point of the complementarity problem: {:?} (exact: 1/3, 1/3)", z.as_slice());
}
