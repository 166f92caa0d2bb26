//! Random small instances for property checks, verification suites, and
//! examples. Deterministic given the caller's RNG.

use crate::cones::ConeSpec;
use crate::markowitz::{self, ModelVariant};
use crate::model::{
    ConstraintBlock, Layout, QuadraticObjective, SocBallRow, TwoStageProblem,
};
use crate::penalty::{PenaltyKind, PenaltySpec};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub fn psd_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a * (scale / n.max(1) as f64) + DMatrix::identity(n, n) * 1e-6
}

fn random_kind(rng: &mut ChaCha8Rng, allow_zero: bool) -> PenaltyKind {
    match rng.random_range(0..if allow_zero { 3 } else { 2 }) {
        0 => PenaltyKind::L0 { gamma: rng.random_range(1e-5..1e-2) },
        1 => PenaltyKind::L1 { gamma: rng.random_range(1e-3..0.5) },
        _ => PenaltyKind::Zero,
    }
}

fn random_penalty(rng: &mut ChaCha8Rng, dim: usize, weight: f64, allow_zero: bool) -> PenaltySpec {
    let kind = random_kind(rng, allow_zero);
    let spec = if rng.random_bool(0.5) {
        PenaltySpec::identity(kind)
    } else {
        let u = DMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.2..0.2)
            }
        });
        let off = DVector::from_fn(dim, |_, _| rng.random_range(-0.3..0.3));
        PenaltySpec::with_affine(kind, u, off)
    };
    spec.with_weight(weight)
}

/// Small random two-stage instance with affine constraints, optionally a
/// nonlinear coupling row, and a mix of penalties. `flavor` varies the
/// penalty pattern so every combination gets exercised.
pub fn random_instance(rng: &mut ChaCha8Rng, flavor: usize) -> TwoStageProblem {
    let m1 = rng.random_range(1..4);
    let m2 = rng.random_range(1..3);
    let k = rng.random_range(1..3);
    let n1 = rng.random_range(0..2);
    let s1 = rng.random_range(0..2);
    let n2 = rng.random_range(0..2);
    let probs: Vec<f64> = {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|p| p / sum).collect()
    };

    let affine = |rng: &mut ChaCha8Rng, rows: usize, cx: usize, cy: usize| ConstraintBlock::Affine {
        jac_x: DMatrix::from_fn(rows, cx, |_, _| rng.random_range(-1.0..1.0)),
        jac_y: DMatrix::from_fn(rows, cy, |_, _| rng.random_range(-1.0..1.0)),
        rhs: DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)),
    };

    let use_soc_row = m1 == m2 && rng.random_bool(0.4);
    let s2 = rng.random_range(0..2) + usize::from(use_soc_row);

    let mut cone_second = Vec::new();
    let mut cone_c2 = Vec::new();
    let mut eq_second = Vec::new();
    let mut obj_second = Vec::new();
    let mut penalty_second = Vec::new();
    for &p_i in &probs {
        let affine_rows = s2 - usize::from(use_soc_row);
        let mut pieces = vec![affine(rng, affine_rows, m1, m2)];
        if use_soc_row {
            pieces.push(ConstraintBlock::Smooth(Arc::new(SocBallRow {
                radius: rng.random_range(0.3..1.0),
                dim: m1,
            })));
        }
        cone_second.push(ConstraintBlock::Stack(pieces));
        cone_c2.push(ConeSpec::nonneg(s2));
        eq_second.push(affine(rng, n2, m1, m2));
        obj_second.push(Arc::new(QuadraticObjective {
            quad: psd_matrix(rng, m2, 1.0),
            lin: DVector::from_fn(m2, |_, _| rng.random_range(-0.5..0.5)),
            constant: 0.0,
        }) as Arc<dyn crate::model::SmoothObjective>);
        let pen = match flavor {
            0 => random_penalty(rng, m2, p_i, false),
            1 => PenaltySpec::absent(),
            _ => random_penalty(rng, m2, p_i, true),
        };
        penalty_second.push(if pen.is_absent() { PenaltySpec::absent() } else { pen });
    }

    let penalty_first = match flavor {
        0 => random_penalty(rng, m1, 1.0, false),
        1 => random_penalty(rng, m1, 1.0, false),
        _ => random_penalty(rng, m1, 1.0, true),
    };

    TwoStageProblem {
        dim_x: m1,
        dim_y: m2,
        probs,
        obj_first: Arc::new(QuadraticObjective {
            quad: psd_matrix(rng, m1, 1.0),
            lin: DVector::from_fn(m1, |_, _| rng.random_range(-0.5..0.5)),
            constant: 0.0,
        }),
        obj_second,
        eq_first: affine(rng, n1, m1, 0),
        cone_first: affine(rng, s1, m1, 0),
        cone_c1: ConeSpec::nonneg(s1),
        eq_second,
        cone_second,
        cone_c2,
        primal_cone_x: if rng.random_bool(0.5) {
            ConeSpec::free(m1)
        } else {
            ConeSpec::nonneg(m1)
        },
        primal_cone_y: if rng.random_bool(0.5) {
            ConeSpec::free(m2)
        } else {
            ConeSpec::nonneg(m2)
        },
        penalty_first,
        penalty_second,
    }
}

/// Market data with order-one covariance curvature and matching gross-scale
/// first-period returns. Solver-accuracy tests use it to compare against
/// oracles at tight primal tolerances: realistic daily-return scales make
/// the maps near-flat (and the floor duals huge), which slows the hedging
/// contraction without changing the minimizers of the decoupled variants.
pub fn conditioned_market(n: usize, k: usize, seed: u64) -> markowitz::MarketData {
    let mut data = markowitz::synthesize_market(n, k, seed).expect("synthesis");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ridge = DMatrix::identity(n, n) * 0.3;
    data.q1 = psd_matrix(&mut rng, n, 1.0) + &ridge;
    for q in data.q2.iter_mut() {
        *q = psd_matrix(&mut rng, n, 1.0) + &ridge;
    }
    data.rbar1 = DVector::from_fn(n, |_, _| rng.random_range(0.9..1.1));
    let (r1_min, r2_min) = markowitz::compute_rmin(&data.rbar1, &data.rbar2, 0.05);
    data.r1_min = r1_min;
    data.r2_min = r2_min;
    data
}

/// A small Markowitz-style instance built from synthesized market data.
pub fn markowitz_like(
    n: usize,
    k: usize,
    include_l0: bool,
    include_soc: bool,
    seed: u64,
) -> TwoStageProblem {
    let data = markowitz::synthesize_market(n, k, seed).expect("synthesis");
    markowitz::build_problem(&data, ModelVariant { include_l0, include_soc })
        .expect("markowitz build")
}

pub fn random_primal(
    rng: &mut ChaCha8Rng,
    prob: &TwoStageProblem,
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let x = DVector::from_fn(prob.dim_x, |_, _| rng.random_range(-1.5..1.5));
    let ys = (0..prob.scenario_count())
        .map(|_| DVector::from_fn(prob.dim_y, |_, _| rng.random_range(-1.5..1.5)))
        .collect();
    (x, ys)
}

pub fn random_point(rng: &mut ChaCha8Rng, prob: &TwoStageProblem) -> DVector<f64> {
    let layout = Layout::of(prob);
    DVector::from_fn(layout.total_dim(), |_, _| rng.random_range(-1.5..1.5))
}
