//! Proximal mappings, Moreau envelopes, and the DC split.
//!
//! Evaluates hard- and soft-thresholding proxes, shows the envelope identity
//! `P_rho(w) = ||w||^2/(2 rho) - D_rho(w)`, and picks the subgradients the
//! outer loop linearizes with.
//!
//! Run with: `cargo run --example prox_and_envelopes`

use dchedge::penalty::{
    dc_subgradient, limiting_subgradient, moreau_value, prox_point, PenaltyKind, PenaltySpec,
};
use nalgebra::DVector;

fn main() {
    let w = DVector::from_column_slice(&[0.8, 0.01, -0.002, 0.0003]);

    println!("query point w = {:?}\n", w.as_slice());
    for rho in [1.0, 0.1, 0.01] {
        let kind = PenaltyKind::L0 { gamma: 1e-5 };
        let r = prox_point(&kind, rho, &w).unwrap();
        let threshold = (2.0 * 1e-5 * rho).sqrt();
        println!(
            "L0 prox, rho = {rho:<4}: threshold {threshold:.4e}, point {:?}",
            r.point.as_slice()
        );
        println!(
            "    envelope {:.6e}  =  ||w||^2/(2 rho) - D = {:.6e}",
            r.envelope_value,
            w.norm_squared() / (2.0 * rho) - r.dc_concave_value
        );
    }

    println!();
    let l1 = PenaltyKind::L1 { gamma: 1.0 };
    let r = prox_point(&l1, 1.0, &DVector::from_column_slice(&[3.0])).unwrap();
    println!(
        "L1 prox of 3.0 at gamma = rho = 1: point {:.1}, envelope {:.1} (soft threshold)",
        r.point[0], r.envelope_value
    );
    println!(
        "Moreau value by the dedicated entry point: {:.1}",
        moreau_value(&l1, 1.0, &DVector::from_column_slice(&[3.0])).unwrap()
    );

    // Subgradient selections: the concave-part subgradient feeding the
    // surrogate, and the limiting subgradient feeding the KKT report.
    println!();
    let spec = PenaltySpec::identity(PenaltyKind::L0 { gamma: 1e-5 });
    let s = DVector::from_column_slice(&[0.05, 0.001]);
    let zeta = spec.composite_prox(1.0, &s).unwrap().point;
    let varpi = dc_subgradient(&spec, 1.0, &s, &zeta).unwrap();
    let lambda = limiting_subgradient(1.0, &s, &zeta).unwrap();
    println!("anchor s      = {:?}", s.as_slice());
    println!("prox point    = {:?} (second component crushed)", zeta.as_slice());
    println!("varpi         = {:?} (zero where crushed)", varpi.as_slice());
    println!("lambda        = {:?} (nonzero only where crushed)", lambda.as_slice());
}
