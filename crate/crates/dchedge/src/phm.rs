//! Progressive hedging over scenarios: per-scenario VI solves, probability
//! weighted aggregation of the consensus blocks, nonanticipativity multiplier
//! updates, and the residual/objective stopping tests.
//!
//! Internally the state keeps scenario-convention multipliers (each scenario
//! block solved with its own duals). The consensus point handed to the
//! stopping tests and to the outer loop carries the full-system convention,
//! where the per-scenario dual blocks are scaled by their probabilities; with
//! that convention the aggregated iterate solves the full variational
//! inequality exactly in the limit.

use crate::error::{Error, Result};
use crate::model::{
    eval_f_surrogate, natural_residual_surrogate, Layout, PrimalDualPoint, ScenarioMap,
    SurrogateAnchor, TwoStageProblem,
};
use crate::scenario::{solve_scenario, ScenarioStatus, ScenarioVI};
use nalgebra::DVector;
use rayon::prelude::*;

/// Hedging state: consensus iterate, per-scenario iterates, and the
/// nonanticipativity multipliers for the first-stage blocks.
#[derive(Debug, Clone)]
pub struct PhmState {
    pub breve_x: DVector<f64>,
    pub breve_ys: Vec<DVector<f64>>,
    pub breve_alpha1: DVector<f64>,
    pub breve_alpha2: DVector<f64>,
    /// Scenario-convention dual blocks.
    pub breve_pi1: Vec<DVector<f64>>,
    pub breve_pi2: Vec<DVector<f64>>,
    /// Warm starts: previous per-scenario solutions, scenario stacking.
    pub hat: Vec<DVector<f64>>,
    pub mult_u: Vec<DVector<f64>>,
    pub mult_c1: Vec<DVector<f64>>,
    pub mult_c2: Vec<DVector<f64>>,
    pub sigma: f64,
    pub nu: usize,
}

impl PhmState {
    /// Fresh state at the projection of `z0` onto `D`, all multipliers zero.
    pub fn new(prob: &TwoStageProblem, z0: &DVector<f64>, sigma: f64) -> Result<Self> {
        let layout = Layout::of(prob);
        let cone = crate::model::full_cone(prob);
        let z = cone.project(z0)?;
        let point = PrimalDualPoint::from_vector(&layout, &z)?;
        let k = layout.k;
        let scen_dim = layout.m1 + layout.m2 + layout.n1 + layout.s1 + layout.n2 + layout.s2;
        let mut state = PhmState {
            breve_x: point.x,
            breve_ys: point.ys,
            breve_alpha1: point.mult_alpha1,
            breve_alpha2: point.mult_alpha2,
            // Incoming points use the full convention; scale back.
            breve_pi1: point
                .mult_pi1
                .into_iter()
                .enumerate()
                .map(|(i, v)| v / prob.probs[i])
                .collect(),
            breve_pi2: point
                .mult_pi2
                .into_iter()
                .enumerate()
                .map(|(i, v)| v / prob.probs[i])
                .collect(),
            hat: vec![DVector::zeros(scen_dim); k],
            mult_u: vec![DVector::zeros(layout.m1); k],
            mult_c1: vec![DVector::zeros(layout.n1); k],
            mult_c2: vec![DVector::zeros(layout.s1); k],
            sigma,
            nu: 0,
        };
        for i in 0..k {
            state.hat[i] = state.scenario_center(&layout, i);
        }
        Ok(state)
    }

    /// Scenario-stacked center `(x; y_i; alpha1; alpha2; pi1_i; pi2_i)`.
    fn scenario_center(&self, layout: &Layout, i: usize) -> DVector<f64> {
        let dim = layout.m1 + layout.m2 + layout.n1 + layout.s1 + layout.n2 + layout.s2;
        let mut z = DVector::zeros(dim);
        let mut off = 0;
        for block in [
            &self.breve_x,
            &self.breve_ys[i],
            &self.breve_alpha1,
            &self.breve_alpha2,
            &self.breve_pi1[i],
            &self.breve_pi2[i],
        ] {
            z.rows_mut(off, block.len()).copy_from(block);
            off += block.len();
        }
        z
    }

    /// Consensus iterate in the full stacking, with dual blocks scaled to the
    /// full-system convention.
    pub fn consensus_point(&self, prob: &TwoStageProblem) -> PrimalDualPoint {
        PrimalDualPoint {
            x: self.breve_x.clone(),
            ys: self.breve_ys.clone(),
            mult_alpha1: self.breve_alpha1.clone(),
            mult_alpha2: self.breve_alpha2.clone(),
            mult_pi1: self
                .breve_pi1
                .iter()
                .enumerate()
                .map(|(i, v)| v * prob.probs[i])
                .collect(),
            mult_pi2: self
                .breve_pi2
                .iter()
                .enumerate()
                .map(|(i, v)| v * prob.probs[i])
                .collect(),
        }
    }

    /// `max_i |sum_i p_i u_i|_inf` over the three multiplier families.
    pub fn multiplier_conservation(&self, probs: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (mults, dim) in [
            (&self.mult_u, self.breve_x.len()),
            (&self.mult_c1, self.breve_alpha1.len()),
            (&self.mult_c2, self.breve_alpha2.len()),
        ] {
            let mut sum = DVector::zeros(dim);
            for (i, m) in mults.iter().enumerate() {
                sum += m * probs[i];
            }
            worst = worst.max(sum.amax());
        }
        worst
    }
}

/// Single hedging step: solve every scenario VI against the current centers,
/// then aggregate and update the nonanticipativity multipliers.
pub fn phm_step(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    state: &mut PhmState,
    subsolver_tol: f64,
    subsolver_max_iter: usize,
) -> Result<Vec<ScenarioStatus>> {
    let layout = Layout::of(prob);
    let k = layout.k;
    let sigma = state.sigma;

    let solves: Vec<Result<(DVector<f64>, ScenarioStatus, usize)>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let map = ScenarioMap::new(prob, anchor, i);
            let cone = map.cone();
            let dim = map.dim();
            let mut shift = DVector::zeros(dim);
            let mut off = 0;
            shift.rows_mut(off, layout.m1).copy_from(&state.mult_u[i]);
            off += layout.m1 + layout.m2;
            shift.rows_mut(off, layout.n1).copy_from(&state.mult_c1[i]);
            off += layout.n1;
            shift.rows_mut(off, layout.s1).copy_from(&state.mult_c2[i]);
            let center = state.scenario_center(&layout, i);
            let vi = ScenarioVI { map, cone, shift, center, sigma };
            solve_scenario(&vi, &state.hat[i], subsolver_tol, subsolver_max_iter)
                .map_err(|e| Error::Scenario { index: i, source: Box::new(e) })
        })
        .collect();

    let mut statuses = Vec::with_capacity(k);
    let mut hats = Vec::with_capacity(k);
    for solve in solves {
        let (z, status, _) = solve?;
        statuses.push(status);
        hats.push(z);
    }

    // Aggregation: probability-weighted consensus for (x, alpha1, alpha2).
    let mut x_new = DVector::zeros(layout.m1);
    let mut a1_new = DVector::zeros(layout.n1);
    let mut a2_new = DVector::zeros(layout.s1);
    for (i, hat) in hats.iter().enumerate() {
        let p = prob.probs[i];
        x_new += DVector::from(hat.rows(0, layout.m1)) * p;
        a1_new += DVector::from(hat.rows(layout.m1 + layout.m2, layout.n1)) * p;
        a2_new += DVector::from(hat.rows(layout.m1 + layout.m2 + layout.n1, layout.s1)) * p;
    }
    for (i, hat) in hats.iter().enumerate() {
        let hat_x = DVector::from(hat.rows(0, layout.m1));
        let hat_a1 = DVector::from(hat.rows(layout.m1 + layout.m2, layout.n1));
        let hat_a2 = DVector::from(hat.rows(layout.m1 + layout.m2 + layout.n1, layout.s1));
        state.mult_u[i] += sigma * (&hat_x - &x_new);
        state.mult_c1[i] += sigma * (&hat_a1 - &a1_new);
        state.mult_c2[i] += sigma * (&hat_a2 - &a2_new);
        state.breve_ys[i] = DVector::from(hat.rows(layout.m1, layout.m2));
        let off_pi1 = layout.m1 + layout.m2 + layout.n1 + layout.s1;
        state.breve_pi1[i] = DVector::from(hat.rows(off_pi1, layout.n2));
        state.breve_pi2[i] = DVector::from(hat.rows(off_pi1 + layout.n2, layout.s2));
    }
    state.breve_x = x_new;
    state.breve_alpha1 = a1_new;
    state.breve_alpha2 = a2_new;
    state.hat = hats;
    state.nu += 1;
    Ok(statuses)
}

/// Stopping data for one inner call: residual threshold `eta1 * rho_t` and
/// objective slack `eta2 / (l+1)^2`.
#[derive(Debug, Clone, Copy)]
pub struct PhmStop {
    pub eta1: f64,
    pub rho_t: f64,
    pub eta2: f64,
    pub inner_index: usize,
}

impl PhmStop {
    pub fn residual_threshold(&self) -> f64 {
        self.eta1 * self.rho_t
    }
    pub fn objective_slack(&self) -> f64 {
        self.eta2 / ((self.inner_index + 1) as f64).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhmRunStatus {
    Satisfied,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct PhmTraceRow {
    pub nu: usize,
    pub residual: f64,
    pub f_surrogate: f64,
}

#[derive(Debug, Clone)]
pub struct PhmRun {
    pub point: PrimalDualPoint,
    pub residual: f64,
    pub f_surrogate: f64,
    pub steps: usize,
    pub status: PhmRunStatus,
    pub trace: Vec<PhmTraceRow>,
    /// Worst nonanticipativity conservation error seen during the run.
    pub conservation_error: f64,
}

/// Runs hedging steps until the natural residual of the surrogate map drops
/// below `eta1 rho_t` and the surrogate objective does not exceed its anchor
/// value by more than `eta2/(l+1)^2`, or the step budget runs out.
pub fn run_phm(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    stop: PhmStop,
    budget: usize,
    state: &mut PhmState,
) -> Result<PhmRun> {
    if budget == 0 {
        return Err(Error::InvalidArgument("hedging budget must be positive".into()));
    }
    let layout = Layout::of(prob);
    let f_anchor = eval_f_surrogate(prob, anchor, &anchor.x, &anchor.ys)?;
    let subsolver_tol = (0.1 * stop.residual_threshold()).clamp(1e-14, 1e-8);
    let mut trace = Vec::new();
    let mut conservation_error: f64 = 0.0;
    let mut steps = 0;

    loop {
        let point = state.consensus_point(prob);
        let z = point.to_vector(&layout);
        let (_, residual) = natural_residual_surrogate(prob, anchor, &z)?;
        let f_sur = eval_f_surrogate(prob, anchor, &point.x, &point.ys)?;
        trace.push(PhmTraceRow { nu: state.nu, residual, f_surrogate: f_sur });
        let satisfied =
            residual <= stop.residual_threshold() && f_sur <= f_anchor + stop.objective_slack();
        if satisfied || steps >= budget {
            return Ok(PhmRun {
                point,
                residual,
                f_surrogate: f_sur,
                steps,
                status: if satisfied { PhmRunStatus::Satisfied } else { PhmRunStatus::BudgetExhausted },
                trace,
                conservation_error,
            });
        }
        phm_step(prob, anchor, state, subsolver_tol, 200)?;
        steps += 1;
        conservation_error = conservation_error.max(state.multiplier_conservation(&prob.probs));
    }
}
