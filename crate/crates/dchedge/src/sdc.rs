//! Successive DC outer loop: prox and subgradient refresh, inner hedging
//! calls against the surrogate, the weighted-drift acceptance test, the
//! geometric smoothing schedule, and the final KKT metric report.

use crate::error::{Error, Result};
use crate::model::{
    feasibility_error, full_cone, natural_residual_original, LambdaBlocks, Layout,
    PrimalDualPoint, SurrogateAnchor, TwoStageProblem,
};
use crate::penalty::limiting_subgradient;
use crate::phm::{run_phm, PhmRunStatus, PhmState, PhmStop};
use nalgebra::DVector;
use std::time::Instant;

/// Components with magnitude at or below this count as zero in cardinality
/// metrics and reports (a sub-basis-point position). Crushed components of a
/// hard-thresholded run land at `rho * |row force|`, under this cutoff,
/// while surviving ones respect the `sqrt(2 gamma rho)` law above it.
pub const NNZ_TOL: f64 = 2e-5;

pub fn count_nonzero(v: &DVector<f64>, tol: f64) -> usize {
    v.iter().filter(|x| x.abs() > tol).count()
}

#[derive(Debug, Clone)]
pub struct SdcConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub rho0: f64,
    pub rho_decay: f64,
    pub rho_floor: f64,
    pub obj_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub phm_budget: usize,
    pub sigma: f64,
    /// Warm start: anchor each outer iteration at the previous accepted
    /// iterate. With `false` the inner loop restarts from the initial point
    /// every outer iteration (the literal reading of the method).
    pub warm_start: bool,
}

impl SdcConfig {
    /// Defaults with the residual/objective/drift thresholds scaled as `K/5`.
    pub fn for_scenarios(k: usize) -> Self {
        let eta = (k as f64 / 5.0).max(1e-8);
        SdcConfig {
            eta1: eta,
            eta2: eta,
            eta3: eta,
            tau1: 1e-4,
            tau2: 1e-4,
            rho0: 1.0,
            rho_decay: 0.8,
            rho_floor: 1e-4,
            obj_tol: 1e-3,
            max_outer: 100,
            max_inner: 50,
            phm_budget: 10_000,
            sigma: 1.0,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_decay > 0.0 && self.rho_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_decay must lie in (0,1), got {}",
                self.rho_decay
            )));
        }
        if !(self.rho_floor > 0.0 && self.rho_floor < self.rho0) {
            return Err(Error::InvalidArgument(
                "rho_floor must be positive and below rho0".into(),
            ));
        }
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta3", self.eta3),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("sigma", self.sigma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.phm_budget == 0 {
            return Err(Error::InvalidArgument("iteration budgets must be positive".into()));
        }
        Ok(())
    }
}

/// The weighted-drift acceptance test:
/// `tau1 ||x~ - x|| + tau2 sum_i p_i ||y~_i - y_i|| <= eta3 rho_t^2`.
pub fn check_tc(
    anchor: &SurrogateAnchor,
    probs: &[f64],
    x: &DVector<f64>,
    ys: &[DVector<f64>],
    eta3: f64,
    rho_t: f64,
) -> bool {
    anchor.weighted_drift(probs, x, ys) <= eta3 * rho_t * rho_t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdcStatus {
    Converged,
    MaxOuterIterations,
    InnerBudgetExhausted,
    PhmBudgetExhausted,
}

impl SdcStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdcStatus::Converged => "converged",
            SdcStatus::MaxOuterIterations => "max-outer-iterations",
            SdcStatus::InnerBudgetExhausted => "inner-budget-exhausted",
            SdcStatus::PhmBudgetExhausted => "phm-budget-exhausted",
        }
    }
}

/// One row per accepted inner iterate `(t, l)`.
#[derive(Debug, Clone)]
pub struct SdcTraceRow {
    pub outer: usize,
    pub inner: usize,
    pub rho: f64,
    pub phm_steps: usize,
    pub residual: f64,
    pub f_surrogate: f64,
    pub objective: f64,
    pub nnz: usize,
    pub feas_error: f64,
    /// Smoothed objective at the anchor and at the accepted iterate, plus the
    /// squared-drift slack, for the descent-ledger check.
    pub f_rho_anchor: f64,
    pub f_rho_accepted: f64,
    pub sq_drift: f64,
    pub objective_slack: f64,
    pub drift: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct KktMetrics {
    pub kkt_inf: f64,
    pub kkt_rel: f64,
    pub soc: f64,
    pub feas_error: f64,
    pub nnz: usize,
}

#[derive(Debug)]
pub struct SdcOutcome {
    pub point: PrimalDualPoint,
    pub status: SdcStatus,
    pub rho_final: f64,
    pub outer_iterations: usize,
    pub total_phm_steps: usize,
    pub objective: f64,
    pub metrics: KktMetrics,
    pub lambda: LambdaBlocks,
    pub trace: Vec<SdcTraceRow>,
    /// Worst nonanticipativity conservation error over the whole run.
    pub conservation_error: f64,
    pub wall_seconds: f64,
}

/// Reconstructs the penalty multiplier estimate at the final point from the
/// prox points at the terminal smoothing parameter, then evaluates the KKT
/// residual metrics of the original problem.
pub fn final_kkt_report(
    prob: &TwoStageProblem,
    point: &PrimalDualPoint,
    rho_final: f64,
) -> Result<(KktMetrics, LambdaBlocks)> {
    let mut lambda = LambdaBlocks::zero(prob);
    if !prob.penalty_first.is_absent() {
        let w = prob.penalty_first.apply_affine(&point.x)?;
        let zeta = prob.penalty_first.composite_prox(rho_final, &point.x)?.point;
        lambda.first = Some(limiting_subgradient(rho_final, &w, &zeta)?);
    }
    for (i, y) in point.ys.iter().enumerate() {
        if prob.penalty_second[i].is_absent() {
            continue;
        }
        let w = prob.penalty_second[i].apply_affine(y)?;
        let zeta = prob.penalty_second[i].composite_prox(rho_final, y)?.point;
        lambda.second[i] = Some(limiting_subgradient(rho_final, &w, &zeta)? * prob.probs[i]);
    }
    let layout = Layout::of(prob);
    let z = point.to_vector(&layout);
    let (res, res_norm) = natural_residual_original(prob, &z, &lambda)?;
    let soc = if prob.scenario_count() > 0 {
        point.ys.iter().map(|y| (&point.x - y).norm()).sum::<f64>()
            / prob.scenario_count() as f64
    } else {
        0.0
    };
    let metrics = KktMetrics {
        kkt_inf: res.amax(),
        kkt_rel: res_norm / (1.0 + z.norm()),
        soc,
        feas_error: feasibility_error(prob, &point.x, &point.ys)?,
        nnz: count_nonzero(&point.x, NNZ_TOL),
    };
    Ok((metrics, lambda))
}

/// Solves a penalty-free (convex) problem by progressive hedging alone,
/// stopping once the objective stabilizes between consecutive consensus
/// iterates: `|obj_nu - obj_{nu-1}| <= obj_tol`. No smoothing schedule is
/// involved; the surrogate coincides with the problem itself.
pub fn run_direct_phm(
    prob: &TwoStageProblem,
    config: &SdcConfig,
    z0: &DVector<f64>,
    residual_tol: f64,
) -> Result<SdcOutcome> {
    config.validate()?;
    prob.validate()?;
    if !prob.penalty_first.is_absent()
        || prob.penalty_second.iter().any(|p| !p.is_absent())
    {
        return Err(Error::InvalidArgument(
            "direct hedging applies to penalty-free problems; use run_sdc".into(),
        ));
    }
    let start = Instant::now();
    let layout = Layout::of(prob);
    let cone = full_cone(prob);
    let z_init = cone.project(z0)?;
    let init_point = PrimalDualPoint::from_vector(&layout, &z_init)?;
    // Penalty-free anchor: the surrogate machinery contributes nothing.
    let anchor = SurrogateAnchor::refresh(
        prob,
        config.rho0,
        config.tau1,
        config.tau2,
        init_point.x.clone(),
        init_point.ys.clone(),
    )?;
    let mut state = PhmState::new(prob, &z_init, config.sigma)?;
    let subsolver_tol = 1e-10;
    let mut prev_obj = prob.true_objective(&init_point.x, &init_point.ys)?;
    let mut trace = Vec::new();
    let mut conservation_error: f64 = 0.0;
    let mut status = SdcStatus::PhmBudgetExhausted;
    let mut steps = 0;
    for nu in 0..config.phm_budget {
        crate::phm::phm_step(prob, &anchor, &mut state, subsolver_tol, 200)?;
        steps += 1;
        conservation_error = conservation_error.max(state.multiplier_conservation(&prob.probs));
        let point = state.consensus_point(prob);
        let obj = prob.true_objective(&point.x, &point.ys)?;
        let z = point.to_vector(&layout);
        let (_, residual) = crate::model::natural_residual_surrogate(prob, &anchor, &z)?;
        trace.push(SdcTraceRow {
            outer: 0,
            inner: nu,
            rho: 0.0,
            phm_steps: 1,
            residual,
            f_surrogate: obj,
            objective: obj,
            nnz: count_nonzero(&point.x, NNZ_TOL),
            feas_error: feasibility_error(prob, &point.x, &point.ys)?,
            f_rho_anchor: prev_obj,
            f_rho_accepted: obj,
            sq_drift: 0.0,
            objective_slack: 0.0,
            drift: (obj - prev_obj).abs(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        let done = nu > 0 && (obj - prev_obj).abs() <= config.obj_tol && residual <= residual_tol;
        prev_obj = obj;
        if done {
            status = SdcStatus::Converged;
            break;
        }
    }
    let point = state.consensus_point(prob);
    let (metrics, lambda) = final_kkt_report(prob, &point, config.rho0)?;
    Ok(SdcOutcome {
        objective: prob.true_objective(&point.x, &point.ys)?,
        point,
        status,
        rho_final: config.rho0,
        outer_iterations: 1,
        total_phm_steps: steps,
        metrics,
        lambda,
        trace,
        conservation_error,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the successive-DC method from `z0` (projected onto `D` if needed).
///
/// Each outer iteration refreshes the prox anchor, solves the surrogate VI by
/// progressive hedging until the residual and objective tests hold, and
/// accepts the iterate once the weighted drift falls below `eta3 rho_t^2`.
/// The run terminates when `rho_t <= rho_floor` and the true objective has
/// stabilized to `obj_tol`, or when a budget runs out.
pub fn run_sdc(
    prob: &TwoStageProblem,
    config: &SdcConfig,
    z0: &DVector<f64>,
) -> Result<SdcOutcome> {
    config.validate()?;
    prob.validate()?;
    let start = Instant::now();
    let layout = Layout::of(prob);
    let cone = full_cone(prob);
    let z_init = cone.project(z0)?;
    let init_point = PrimalDualPoint::from_vector(&layout, &z_init)?;

    let mut phm_state = PhmState::new(prob, &z_init, config.sigma)?;
    let mut current = init_point.clone();
    let mut prev_obj = prob.true_objective(&current.x, &current.ys)?;
    let mut trace: Vec<SdcTraceRow> = Vec::new();
    let mut total_phm_steps = 0;
    let mut conservation_error: f64 = 0.0;
    let mut status = SdcStatus::MaxOuterIterations;
    let mut rho = config.rho0;
    let mut outer = 0;

    'outer: for t in 0..config.max_outer {
        outer = t;
        rho = config.rho0 * config.rho_decay.powi(t as i32);
        let mut inner_point = if config.warm_start || t == 0 {
            current.clone()
        } else {
            init_point.clone()
        };
        let mut accepted = false;
        for l in 0..config.max_inner {
            let anchor = SurrogateAnchor::refresh(
                prob,
                rho,
                config.tau1,
                config.tau2,
                inner_point.x.clone(),
                inner_point.ys.clone(),
            )?;
            let f_rho_anchor = prob.smooth_objective(&anchor.x, &anchor.ys)
                + anchor.moreau_first
                + anchor
                    .moreau_second
                    .iter()
                    .zip(&prob.probs)
                    .map(|(m, p)| m * p)
                    .sum::<f64>();
            let stop = PhmStop { eta1: config.eta1, rho_t: rho, eta2: config.eta2, inner_index: l };
            let run = run_phm(prob, &anchor, stop, config.phm_budget, &mut phm_state)?;
            total_phm_steps += run.steps;
            conservation_error = conservation_error.max(run.conservation_error);

            let accepted_point = run.point;
            let drift =
                anchor.weighted_drift(&prob.probs, &accepted_point.x, &accepted_point.ys);
            let mut sq_drift =
                config.tau1 / 2.0 * (&accepted_point.x - &anchor.x).norm_squared();
            for (i, y) in accepted_point.ys.iter().enumerate() {
                sq_drift +=
                    config.tau2 / 2.0 * prob.probs[i] * (y - &anchor.ys[i]).norm_squared();
            }
            trace.push(SdcTraceRow {
                outer: t,
                inner: l,
                rho,
                phm_steps: run.steps,
                residual: run.residual,
                f_surrogate: run.f_surrogate,
                objective: prob.true_objective(&accepted_point.x, &accepted_point.ys)?,
                nnz: count_nonzero(&accepted_point.x, NNZ_TOL),
                feas_error: feasibility_error(prob, &accepted_point.x, &accepted_point.ys)?,
                f_rho_anchor,
                f_rho_accepted: prob.f_rho(rho, &accepted_point.x, &accepted_point.ys)?,
                sq_drift,
                objective_slack: stop.objective_slack(),
                drift,
                wall_time_s: start.elapsed().as_secs_f64(),
            });

            if run.status == PhmRunStatus::BudgetExhausted {
                current = accepted_point;
                status = SdcStatus::PhmBudgetExhausted;
                break 'outer;
            }
            let tc =
                check_tc(&anchor, &prob.probs, &accepted_point.x, &accepted_point.ys, config.eta3, rho);
            inner_point = accepted_point;
            if tc {
                accepted = true;
                break;
            }
        }
        current = inner_point;
        if !accepted {
            status = SdcStatus::InnerBudgetExhausted;
            break;
        }
        let obj = prob.true_objective(&current.x, &current.ys)?;
        let converged = rho <= config.rho_floor && (obj - prev_obj).abs() <= config.obj_tol;
        prev_obj = obj;
        if converged {
            status = SdcStatus::Converged;
            break;
        }
    }

    let (metrics, lambda) = final_kkt_report(prob, &current, rho)?;
    Ok(SdcOutcome {
        objective: prob.true_objective(&current.x, &current.ys)?,
        point: current,
        status,
        rho_final: rho,
        outer_iterations: outer + 1,
        total_phm_steps,
        metrics,
        lambda,
        trace,
        conservation_error,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
