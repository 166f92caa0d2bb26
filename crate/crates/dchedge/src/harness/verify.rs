//! Self-check suites behind the `verify` command: prox closed forms against
//! the brute-force search, DC identities, surrogate majorization, residual
//! perturbation bounds, monotonicity sampling (including an injected
//! indefinite fixture that must be caught), nonanticipativity conservation,
//! and hedging against the enumeration oracle.

use crate::brute;
use crate::error::Result;
use crate::markowitz::{self, ModelVariant};
use crate::model::{
    eval_f_surrogate, eval_h_surrogate, natural_residual_surrogate, verify_monotone, Layout,
    QuadraticObjective, SurrogateAnchor,
};
use crate::penalty::{prox_point, PenaltyKind};
use crate::phm::{run_phm, PhmRunStatus, PhmState, PhmStop};
use crate::synthetic;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: usize,
    pub failures: usize,
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub struct VerificationReport {
    pub suites: Vec<SuiteResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed())
    }
}

fn suite_prox_oracle() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checks = 0;
    let mut failures = 0;
    for trial in 0..300 {
        let kind = match trial % 3 {
            0 => PenaltyKind::Zero,
            1 => PenaltyKind::L0 { gamma: rng.random_range(1e-6..1e-1) },
            _ => PenaltyKind::L1 { gamma: rng.random_range(1e-3..2.0) },
        };
        let rho = rng.random_range(1e-4..10.0);
        let n = rng.random_range(1..=8);
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-5.0..5.0)));
        let fast = prox_point(&kind, rho, &w).expect("prox");
        let slow = brute::prox_brute_force(&kind, rho, &w);
        checks += 1;
        if (fast.point - &slow.point).amax() > 1e-8
            || (fast.envelope_value - slow.envelope_value).abs() > 1e-8
        {
            failures += 1;
        }
    }
    SuiteResult { name: "prox-oracle", checks, failures, detail: String::new() }
}

fn suite_dc_identity() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut checks = 0;
    let mut failures = 0;
    for trial in 0..300 {
        let kind = match trial % 3 {
            0 => PenaltyKind::Zero,
            1 => PenaltyKind::L0 { gamma: rng.random_range(1e-6..1e-2) },
            _ => PenaltyKind::L1 { gamma: rng.random_range(1e-4..2.0) },
        };
        let rho = rng.random_range(1e-4..10.0);
        let n = rng.random_range(1..8);
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-5.0..5.0)));
        let r = prox_point(&kind, rho, &w).expect("prox");
        let identity_gap = (r.envelope_value
            - (w.norm_squared() / (2.0 * rho) - r.dc_concave_value))
            .abs();
        let sandwich_ok = r.envelope_value >= kind.lower_bound() - 1e-12
            && r.envelope_value <= kind.value(&w).expect("value") + 1e-12;
        checks += 1;
        if identity_gap > 1e-10 * (1.0 + r.envelope_value.abs()) || !sandwich_ok {
            failures += 1;
        }
    }
    SuiteResult { name: "dc-identity", checks, failures, detail: String::new() }
}

fn suite_majorization() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut checks = 0;
    let mut failures = 0;
    for trial in 0..150 {
        let prob = synthetic::random_instance(&mut rng, trial % 3);
        let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
        let rho = rng.random_range(0.05..2.0);
        let (tau1, tau2) = (rng.random_range(1e-5..1e-1), rng.random_range(1e-5..1e-1));
        let anchor = SurrogateAnchor::refresh(&prob, rho, tau1, tau2, xa, ya)?;
        // Anchor equality.
        let at_anchor = eval_f_surrogate(&prob, &anchor, &anchor.x, &anchor.ys)?;
        let f_rho_anchor = prob.f_rho(rho, &anchor.x, &anchor.ys)?;
        checks += 1;
        if (at_anchor - f_rho_anchor).abs() > 1e-10 * (1.0 + f_rho_anchor.abs()) {
            failures += 1;
        }
        // Majorization at a random point (slack only over penalty-bearing
        // blocks; absent penalties contribute no surrogate term).
        let (x, ys) = synthetic::random_primal(&mut rng, &prob);
        let f_rho = prob.f_rho(rho, &x, &ys)?;
        let f_sur = eval_f_surrogate(&prob, &anchor, &x, &ys)?;
        let mut slack = if prob.penalty_first.is_absent() {
            0.0
        } else {
            tau1 / 2.0 * (&x - &anchor.x).norm_squared()
        };
        for (i, y) in ys.iter().enumerate() {
            if !prob.penalty_second[i].is_absent() {
                slack += tau2 / 2.0 * prob.probs[i] * (y - &anchor.ys[i]).norm_squared();
            }
        }
        checks += 1;
        if f_rho > f_sur - slack + 1e-10 * (1.0 + f_sur.abs()) {
            failures += 1;
        }
    }
    Ok(SuiteResult { name: "majorization", checks, failures, detail: String::new() })
}

fn suite_perturbation() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut checks = 0;
    let mut failures = 0;
    for trial in 0..150 {
        let prob = synthetic::random_instance(&mut rng, trial % 3);
        let layout = Layout::of(&prob);
        let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
        let anchor = SurrogateAnchor::refresh(
            &prob,
            rng.random_range(0.05..2.0),
            rng.random_range(1e-4..1e-1),
            rng.random_range(1e-4..1e-1),
            xa,
            ya,
        )?;
        let anchor0 = anchor.with_zero_tau();
        let z = synthetic::random_point(&mut rng, &prob);
        let point = crate::model::PrimalDualPoint::from_vector(&layout, &z)?;
        let mut bound = if prob.penalty_first.is_absent() {
            0.0
        } else {
            anchor.tau1 * (&point.x - &anchor.x).norm()
        };
        for i in 0..layout.k {
            if !prob.penalty_second[i].is_absent() {
                bound += anchor.tau2 * prob.probs[i] * (&point.ys[i] - &anchor.ys[i]).norm();
            }
        }
        let h_tau = eval_h_surrogate(&prob, &anchor, &z)?;
        let h_0 = eval_h_surrogate(&prob, &anchor0, &z)?;
        checks += 1;
        if ((&h_tau - &h_0).norm() - bound) > 1e-10 * (1.0 + bound) {
            failures += 1;
        }
        // Natural residual difference obeys the same bound.
        let (r_tau, _) = natural_residual_surrogate(&prob, &anchor, &z)?;
        let (r_0, _) = natural_residual_surrogate(&prob, &anchor0, &z)?;
        checks += 1;
        if (r_tau - r_0).norm() > bound + 1e-10 * (1.0 + bound) {
            failures += 1;
        }
    }
    Ok(SuiteResult { name: "perturbation-bounds", checks, failures, detail: String::new() })
}

fn suite_monotonicity() -> Result<SuiteResult> {
    let mut checks = 0;
    let mut failures = 0;
    let mut detail = String::new();
    for (seed, variant) in [(201u64, ModelVariant::A), (202, ModelVariant::B), (203, ModelVariant::C)] {
        let data = markowitz::synthesize_market(5, 3, seed)?;
        let prob = markowitz::build_problem(&data, variant)?;
        let x0 = DVector::from_element(5, 0.2);
        let anchor = SurrogateAnchor::refresh(&prob, 0.5, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 3])?;
        let report = verify_monotone(&prob, &anchor, 2000, seed)?;
        checks += 1;
        if !report.passed(1e-10) {
            failures += 1;
            detail = format!("variant {} min form {:.3e}", variant.letter(), report.min_quadratic_form);
        }
    }
    Ok(SuiteResult { name: "monotonicity", checks, failures, detail })
}

/// The detector itself under test: an indefinite covariance planted in one
/// scenario must produce a negative sampled form.
fn suite_monotonicity_detector() -> Result<SuiteResult> {
    let data = markowitz::synthesize_market(4, 2, 205)?;
    let mut prob = markowitz::build_problem(&data, ModelVariant::A)?;
    prob.obj_second[1] = Arc::new(QuadraticObjective::pure(-DMatrix::identity(4, 4)));
    let x0 = DVector::from_element(4, 0.25);
    let anchor = SurrogateAnchor::refresh(&prob, 0.5, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2])?;
    let report = verify_monotone(&prob, &anchor, 2000, 205)?;
    let caught = !report.passed(1e-10);
    Ok(SuiteResult {
        name: "monotonicity-detector",
        checks: 1,
        failures: usize::from(!caught),
        detail: format!("min form {:.3e}", report.min_quadratic_form),
    })
}

fn suite_nonanticipativity() -> Result<SuiteResult> {
    let data = markowitz::synthesize_market(4, 3, 207)?;
    let prob = markowitz::build_problem(&data, ModelVariant::A)?;
    let layout = Layout::of(&prob);
    let x0 = DVector::from_element(4, 0.25);
    let anchor = SurrogateAnchor::refresh(&prob, 1.0, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 3])?;
    let mut state = PhmState::new(&prob, &DVector::zeros(layout.total_dim()), 1.0)?;
    let stop = PhmStop { eta1: 0.6, rho_t: 1.0, eta2: 0.6, inner_index: 0 };
    let run = run_phm(&prob, &anchor, stop, 3000, &mut state)?;
    let ok = run.status == PhmRunStatus::Satisfied && run.conservation_error <= 1e-10;
    Ok(SuiteResult {
        name: "nonanticipativity",
        checks: 1,
        failures: usize::from(!ok),
        detail: format!(
            "status {:?}, conservation {:.3e}",
            run.status, run.conservation_error
        ),
    })
}

fn suite_phm_vs_oracle() -> Result<SuiteResult> {
    let mut checks = 0;
    let mut failures = 0;
    let mut detail = String::new();
    for seed in [211u64, 212] {
        let data = synthetic::conditioned_market(3, 2, seed);
        let prob = markowitz::build_problem(&data, ModelVariant::D)?;
        let layout = Layout::of(&prob);
        let x0 = DVector::from_element(3, 1.0 / 3.0);
        let anchor = SurrogateAnchor::refresh(&prob, 1.0, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2])?;
        let mut state = PhmState::new(&prob, &DVector::zeros(layout.total_dim()), 1.0)?;
        let stop = PhmStop { eta1: 1e-7, rho_t: 1.0, eta2: 1e9, inner_index: 0 };
        let run = run_phm(&prob, &anchor, stop, 20_000, &mut state)?;
        let first = brute::solve_block_qp_enumerate(&data.q1, &data.rbar1, data.r1_min)?;
        checks += 1;
        let mut gap = (&run.point.x - &first.z).amax();
        for i in 0..2 {
            let block = brute::solve_block_qp_enumerate(&data.q2[i], &data.rbar2[i], data.r2_min[i])?;
            gap = gap.max((&run.point.ys[i] - &block.z).amax());
        }
        if gap > 1e-4 || run.status != PhmRunStatus::Satisfied {
            failures += 1;
            detail = format!("seed {seed} primal gap {gap:.3e}");
        }
    }
    Ok(SuiteResult { name: "phm-vs-oracle", checks, failures, detail })
}

/// Runs all suites, printing one line per suite.
pub fn cmd_verify() -> Result<VerificationReport> {
    let suites = vec![
        suite_prox_oracle(),
        suite_dc_identity(),
        suite_majorization()?,
        suite_perturbation()?,
        suite_monotonicity()?,
        suite_monotonicity_detector()?,
        suite_nonanticipativity()?,
        suite_phm_vs_oracle()?,
    ];
    for s in &suites {
        println!(
            "{:<24} {:>4} checks  {}{}",
            s.name,
            s.checks,
            if s.passed() { "pass" } else { "FAIL" },
            if s.detail.is_empty() { String::new() } else { format!("  ({})", s.detail) }
        );
    }
    Ok(VerificationReport { suites })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_fresh_build() {
        let report = cmd_verify().unwrap();
        for s in &report.suites {
            assert!(s.passed(), "suite {} failed: {}", s.name, s.detail);
        }
    }
}
