//! Cone products, projections, polars, and complementarity residuals.
//!
//! Run with: `cargo run --example cone_projections`

use dchedge::cones::{ConeAtom, ConeSpec};
use nalgebra::DVector;

fn main() {
    // A mixed product: equalities, a free block, an orthant, and a
    // second-order cone with the scalar entry last.
    let cone = ConeSpec::new(vec![
        ConeAtom::zero(1),
        ConeAtom::free(1),
        ConeAtom::nonneg(2),
        ConeAtom::soc(3),
    ]);
    let v = DVector::from_column_slice(&[0.7, -0.4, 1.0, -2.0, 3.0, 4.0, 0.0]);
    let p = cone.project(&v).unwrap();
    println!("v         = {:?}", v.as_slice());
    println!("proj(v)   = {:?}", p.as_slice());
    println!("   (zero block cleared, orthant clipped, SOC lifted onto its boundary)");

    // Moreau decomposition against the polar cone.
    let polar = cone.polar();
    let q = polar.project(&v).unwrap();
    println!("\npolar atoms: {:?}", polar.atoms());
    println!(
        "Moreau decomposition: ||proj_C(v) + proj_polar(v) - v|| = {:.2e}, <p, q> = {:.2e}",
        (&p + &q - &v).norm(),
        p.dot(&q)
    );

    // Complementarity residual: zero exactly on normal-cone pairs.
    let orthant = ConeSpec::nonneg(1);
    for (g, m) in [(2.0, 0.0), (0.0, -5.0), (1.0, -1.0)] {
        let r = orthant
            .complementarity_residual(
                &DVector::from_column_slice(&[g]),
                &DVector::from_column_slice(&[m]),
            )
            .unwrap();
        println!("complementarity residual at g = {g:4}, m = {m:4}: {r}");
    }
}
