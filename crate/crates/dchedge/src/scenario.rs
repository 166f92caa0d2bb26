//! Per-scenario regularized variational inequality solver: semismooth Newton
//! on the natural-residual equation with an extragradient fallback.
//!
//! The effective map is `F(z) = H_i(z) + shift + sigma (z - center)`, where
//! `shift` carries the nonanticipativity multipliers and the proximal term
//! comes from the hedging step. For monotone `H_i` and `sigma > 0` the map is
//! strongly monotone and the Newton systems are nonsingular on the active
//! blocks.

use crate::cones::ConeSpec;
use crate::error::{Error, Result};
use crate::model::ScenarioMap;
use nalgebra::{DMatrix, DVector};

/// Armijo constant for the merit `0.5 ||Phi||^2`.
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const FALLBACK_EXTRAGRADIENT_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioStatus {
    Converged,
    /// Newton stalled at least once and extragradient steps were used.
    FallbackUsed,
    MaxIterations,
}

/// One scenario subproblem: base map plus hedging shift and proximal term.
pub struct ScenarioVI<'a> {
    pub map: ScenarioMap<'a>,
    pub cone: ConeSpec,
    /// `C_2^i(Lambda)`: multiplier shift, zero outside the consensus blocks.
    pub shift: DVector<f64>,
    /// Proximal center `z breve`.
    pub center: DVector<f64>,
    pub sigma: f64,
}

impl ScenarioVI<'_> {
    pub fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.map.eval(z)? + &self.shift + self.sigma * (z - &self.center))
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut jac = self.map.jacobian(z)?;
        for j in 0..jac.nrows() {
            jac[(j, j)] += self.sigma;
        }
        Ok(jac)
    }

    /// Natural residual `z - Proj(z - F(z))`.
    pub fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.eval(z)?;
        Ok(z - self.cone.project(&(z - f))?)
    }
}

/// One Korpelevich extragradient step:
/// `z' = Proj(z - step F(Proj(z - step F(z))))`.
pub fn extragradient_step<F>(f: &F, cone: &ConeSpec, z: &DVector<f64>, step: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mid = cone.project(&(z - step * f(z)?))?;
    cone.project(&(z - step * f(&mid)?))
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves the scenario VI to `||residual|| <= tol` from the warm start `z0`.
///
/// Stuck or singular Newton steps trigger a block of extragradient steps with
/// step length `0.9 / L` (Lipschitz estimate from the Jacobian), after which
/// Newton resumes. Deterministic: identical inputs give identical iterates.
pub fn solve_scenario(
    vi: &ScenarioVI<'_>,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, ScenarioStatus, usize)> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("scenario tolerance must be positive: {tol}")));
    }
    let mut z = z0.clone();
    let mut fell_back = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let residual = vi.residual(&z)?;
        let res_norm = residual.norm();
        if !res_norm.is_finite() {
            return Err(Error::NonFinite("scenario residual"));
        }
        if res_norm <= tol {
            let status = if fell_back { ScenarioStatus::FallbackUsed } else { ScenarioStatus::Converged };
            return Ok((z, status, iterations));
        }

        // Semismooth Newton: Phi'(z) = I - P'(v) (I - F'(z)) with
        // v = z - F(z) and one B-subdifferential element of the projection.
        let f = vi.eval(&z)?;
        let jac_f = vi.jacobian(&z)?;
        let v = &z - &f;
        let proj_jac = vi.cone.projection_jacobian(&v)?;
        let dim = z.len();
        let eye = DMatrix::identity(dim, dim);
        let phi_jac = &eye - &proj_jac * (&eye - &jac_f);

        let mut advanced = false;
        if let Some(step) = phi_jac.lu().solve(&(-&residual)) {
            if step.iter().all(|v| v.is_finite()) {
                // Armijo backtracking on 0.5 ||Phi||^2.
                let merit0 = 0.5 * res_norm * res_norm;
                let mut t = 1.0;
                for _ in 0..MAX_BACKTRACKS {
                    let cand = &z + t * &step;
                    let cand_res = vi.residual(&cand)?;
                    let merit = 0.5 * cand_res.norm_squared();
                    if merit <= merit0 * (1.0 - 2.0 * ARMIJO_C * t) {
                        z = cand;
                        advanced = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
        }

        if !advanced {
            // Extragradient block, then retry Newton.
            fell_back = true;
            let lipschitz = frobenius(&jac_f).max(vi.sigma).max(1e-12);
            let step = 0.9 / lipschitz;
            for _ in 0..FALLBACK_EXTRAGRADIENT_STEPS {
                z = extragradient_step(&|p| vi.eval(p), &vi.cone, &z, step)?;
            }
        }
    }

    Ok((z, ScenarioStatus::MaxIterations, iterations))
}
