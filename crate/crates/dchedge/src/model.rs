//! Two-stage problem data and the shared mathematical substrate: the KKT map
//! of the original problem, the linearized surrogate map and objective built
//! around a prox anchor, natural residuals, and monotonicity verification of
//! the per-scenario blocks.
//!
//! Stacking order of the primal-dual vector is fixed as
//! `(x; y_1..y_K; alpha1; alpha2; pi_{1,1..K}; pi_{2,1..K})`, matching the
//! cone `D = C_x x C_y^K x K°` with
//! `K = {0}^{n1} x -C1 x ({0}^{n2})^K x prod_i -C2_i`.

use crate::cones::{ConeAtom, ConeSpec};
use crate::error::{Error, Result};
use crate::penalty::{dc_subgradient, PenaltySpec};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Twice continuously differentiable convex objective term.
pub trait SmoothObjective: Send + Sync {
    fn value(&self, v: &DVector<f64>) -> f64;
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, v: &DVector<f64>) -> DMatrix<f64>;
}

/// `v^T Q v + lin^T v + constant`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn pure(quad: DMatrix<f64>) -> Self {
        let n = quad.nrows();
        QuadraticObjective { quad, lin: DVector::zeros(n), constant: 0.0 }
    }
}

impl SmoothObjective for QuadraticObjective {
    fn value(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.quad * v)[(0, 0)] + self.lin.dot(v) + self.constant
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        (&self.quad + self.quad.transpose()) * v + &self.lin
    }
    fn hessian(&self, _v: &DVector<f64>) -> DMatrix<f64> {
        &self.quad + self.quad.transpose()
    }
}

/// Smooth constraint rows `g(x, y)` with first and (weighted) second
/// derivatives. First-stage rows receive an empty `y`.
pub trait SmoothConstraint: Send + Sync {
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
    /// `sum_r w_r d^2 g_r / dx dx`.
    fn hess_xx(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64>;
    /// `sum_r w_r d^2 g_r / dx dy` (rows indexed by x, columns by y).
    fn hess_xy(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64>;
    fn hess_yy(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64>;
}

/// The coupling row `||x - y||^2 - radius^2`, kept nonpositive through the
/// nonnegative-cone encoding of the ball constraint.
#[derive(Debug, Clone)]
pub struct SocBallRow {
    pub radius: f64,
    pub dim: usize,
}

impl SmoothConstraint for SocBallRow {
    fn dim_out(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, (x - y).norm_squared() - self.radius * self.radius)
    }
    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(1, self.dim, |_, j| 2.0 * (x[j] - y[j]))
    }
    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(1, self.dim, |_, j| -2.0 * (x[j] - y[j]))
    }
    fn hess_xx(&self, _x: &DVector<f64>, _y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * (2.0 * w[0])
    }
    fn hess_xy(&self, _x: &DVector<f64>, _y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * (-2.0 * w[0])
    }
    fn hess_yy(&self, _x: &DVector<f64>, _y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * (2.0 * w[0])
    }
}

/// One constraint group: affine rows, a general smooth map, or a stack of
/// sub-blocks (dimensions add).
pub enum ConstraintBlock {
    /// `g = jac_x x + jac_y y - rhs`.
    Affine { jac_x: DMatrix<f64>, jac_y: DMatrix<f64>, rhs: DVector<f64> },
    Smooth(Arc<dyn SmoothConstraint>),
    Stack(Vec<ConstraintBlock>),
}

impl ConstraintBlock {
    pub fn affine_first_stage(jac_x: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        let rows = jac_x.nrows();
        ConstraintBlock::Affine { jac_x, jac_y: DMatrix::zeros(rows, 0), rhs }
    }

    pub fn empty(dim_x: usize, dim_y: usize) -> Self {
        ConstraintBlock::Affine {
            jac_x: DMatrix::zeros(0, dim_x),
            jac_y: DMatrix::zeros(0, dim_y),
            rhs: DVector::zeros(0),
        }
    }

    pub fn dim_out(&self) -> usize {
        match self {
            ConstraintBlock::Affine { rhs, .. } => rhs.len(),
            ConstraintBlock::Smooth(s) => s.dim_out(),
            ConstraintBlock::Stack(blocks) => blocks.iter().map(|b| b.dim_out()).sum(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintBlock::Affine { jac_x, jac_y, rhs } => {
                let mut v = jac_x * x - rhs;
                if jac_y.ncols() > 0 {
                    v += jac_y * y;
                }
                v
            }
            ConstraintBlock::Smooth(s) => s.eval(x, y),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DVector::zeros(self.dim_out());
                let mut off = 0;
                for b in blocks {
                    let v = b.eval(x, y);
                    out.rows_mut(off, v.len()).copy_from(&v);
                    off += v.len();
                }
                out
            }
        }
    }

    pub fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintBlock::Affine { jac_x, .. } => jac_x.clone(),
            ConstraintBlock::Smooth(s) => s.jac_x(x, y),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DMatrix::zeros(self.dim_out(), x.len());
                let mut off = 0;
                for b in blocks {
                    let j = b.jac_x(x, y);
                    out.view_mut((off, 0), (j.nrows(), x.len())).copy_from(&j);
                    off += j.nrows();
                }
                out
            }
        }
    }

    pub fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintBlock::Affine { jac_y, .. } => jac_y.clone(),
            ConstraintBlock::Smooth(s) => s.jac_y(x, y),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DMatrix::zeros(self.dim_out(), y.len());
                let mut off = 0;
                for b in blocks {
                    let j = b.jac_y(x, y);
                    out.view_mut((off, 0), (j.nrows(), y.len())).copy_from(&j);
                    off += j.nrows();
                }
                out
            }
        }
    }

    pub fn hess_xx(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintBlock::Affine { .. } => DMatrix::zeros(x.len(), x.len()),
            ConstraintBlock::Smooth(s) => s.hess_xx(x, y, w),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DMatrix::zeros(x.len(), x.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim_out();
                    out += b.hess_xx(x, y, &DVector::from(w.rows(off, d)));
                    off += d;
                }
                out
            }
        }
    }

    pub fn hess_xy(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintBlock::Affine { .. } => DMatrix::zeros(x.len(), y.len()),
            ConstraintBlock::Smooth(s) => s.hess_xy(x, y, w),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DMatrix::zeros(x.len(), y.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim_out();
                    out += b.hess_xy(x, y, &DVector::from(w.rows(off, d)));
                    off += d;
                }
                out
            }
        }
    }

    pub fn hess_yy(&self, x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintBlock::Affine { .. } => DMatrix::zeros(y.len(), y.len()),
            ConstraintBlock::Smooth(s) => s.hess_yy(x, y, w),
            ConstraintBlock::Stack(blocks) => {
                let mut out = DMatrix::zeros(y.len(), y.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim_out();
                    out += b.hess_yy(x, y, &DVector::from(w.rows(off, d)));
                    off += d;
                }
                out
            }
        }
    }
}

/// Full problem data for the two-stage stochastic conic program.
///
/// Constraint semantics: `eq_first = 0`, `cone_first in -C1`,
/// `eq_second[i] = 0`, `cone_second[i] in -C2_i`. Primal variables live in
/// `primal_cone_x` and `primal_cone_y` (free in the general form; the
/// orthant when bound constraints are folded into the cone).
pub struct TwoStageProblem {
    pub dim_x: usize,
    pub dim_y: usize,
    pub probs: Vec<f64>,
    pub obj_first: Arc<dyn SmoothObjective>,
    pub obj_second: Vec<Arc<dyn SmoothObjective>>,
    pub eq_first: ConstraintBlock,
    pub cone_first: ConstraintBlock,
    pub cone_c1: ConeSpec,
    pub eq_second: Vec<ConstraintBlock>,
    pub cone_second: Vec<ConstraintBlock>,
    pub cone_c2: Vec<ConeSpec>,
    pub primal_cone_x: ConeSpec,
    pub primal_cone_y: ConeSpec,
    pub penalty_first: PenaltySpec,
    pub penalty_second: Vec<PenaltySpec>,
}

impl TwoStageProblem {
    pub fn scenario_count(&self) -> usize {
        self.probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.scenario_count();
        let sum: f64 = self.probs.iter().sum();
        if k > 0 && (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "scenario probabilities sum to {sum}, expected 1"
            )));
        }
        if self.probs.iter().any(|p| *p <= 0.0) {
            return Err(Error::InvalidArgument("probabilities must be positive".into()));
        }
        for (name, len) in [
            ("obj_second", self.obj_second.len()),
            ("eq_second", self.eq_second.len()),
            ("cone_second", self.cone_second.len()),
            ("cone_c2", self.cone_c2.len()),
            ("penalty_second", self.penalty_second.len()),
        ] {
            if len != k {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries for {k} scenarios"
                )));
            }
        }
        if self.primal_cone_x.dim() != self.dim_x || self.primal_cone_y.dim() != self.dim_y {
            return Err(Error::InvalidArgument("primal cone dimensions mismatch".into()));
        }
        if self.cone_first.dim_out() != self.cone_c1.dim() {
            return Err(Error::InvalidArgument("first-stage cone block dimension mismatch".into()));
        }
        let layout = Layout::of(self);
        for i in 0..k {
            if self.eq_second[i].dim_out() != layout.n2 {
                return Err(Error::InvalidArgument(
                    "second-stage equality blocks must share one dimension".into(),
                ));
            }
            if self.cone_second[i].dim_out() != layout.s2
                || self.cone_c2[i].dim() != layout.s2
            {
                return Err(Error::InvalidArgument(
                    "second-stage cone blocks must share one dimension".into(),
                ));
            }
            let pw = self.penalty_second[i].prob_weight;
            if !self.penalty_second[i].is_absent() && (pw - self.probs[i]).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "penalty_second[{i}] carries weight {pw}, scenario probability is {}",
                    self.probs[i]
                )));
            }
        }
        Ok(())
    }

    /// Smooth part `c(x) + sum_i p_i q_i(y_i)`.
    pub fn smooth_objective(&self, x: &DVector<f64>, ys: &[DVector<f64>]) -> f64 {
        self.obj_first.value(x)
            + self
                .probs
                .iter()
                .zip(ys)
                .zip(&self.obj_second)
                .map(|((p, y), q)| p * q.value(y))
                .sum::<f64>()
    }

    /// Full nonsmooth objective `f + P1(U1 x + u1) + sum_i p_i P_i(U_i y_i + u_i)`.
    pub fn true_objective(&self, x: &DVector<f64>, ys: &[DVector<f64>]) -> Result<f64> {
        let mut v = self.smooth_objective(x, ys);
        v += self.penalty_first.composite_value(x)?;
        for (i, y) in ys.iter().enumerate() {
            v += self.probs[i] * self.penalty_second[i].composite_value(y)?;
        }
        Ok(v)
    }

    /// Smoothed objective `f + r_{1,rho}(x) + sum_i p_i r_{i,rho}(y_i)`.
    pub fn f_rho(&self, rho: f64, x: &DVector<f64>, ys: &[DVector<f64>]) -> Result<f64> {
        let mut v = self.smooth_objective(x, ys);
        v += self.penalty_first.composite_moreau(rho, x)?;
        for (i, y) in ys.iter().enumerate() {
            v += self.probs[i] * self.penalty_second[i].composite_moreau(rho, y)?;
        }
        Ok(v)
    }
}

/// Block offsets of the stacked primal-dual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub n1: usize,
    pub s1: usize,
    pub n2: usize,
    pub s2: usize,
}

impl Layout {
    pub fn of(prob: &TwoStageProblem) -> Layout {
        Layout {
            m1: prob.dim_x,
            m2: prob.dim_y,
            k: prob.scenario_count(),
            n1: prob.eq_first.dim_out(),
            s1: prob.cone_first.dim_out(),
            n2: prob.eq_second.first().map_or(0, |b| b.dim_out()),
            s2: prob.cone_second.first().map_or(0, |b| b.dim_out()),
        }
    }

    pub fn total_dim(&self) -> usize {
        self.m1 + self.k * self.m2 + self.n1 + self.s1 + self.k * (self.n2 + self.s2)
    }

    pub fn x_off(&self) -> usize {
        0
    }
    pub fn y_off(&self, i: usize) -> usize {
        self.m1 + i * self.m2
    }
    pub fn alpha1_off(&self) -> usize {
        self.m1 + self.k * self.m2
    }
    pub fn alpha2_off(&self) -> usize {
        self.alpha1_off() + self.n1
    }
    pub fn pi1_off(&self, i: usize) -> usize {
        self.alpha2_off() + self.s1 + i * self.n2
    }
    pub fn pi2_off(&self, i: usize) -> usize {
        self.alpha2_off() + self.s1 + self.k * self.n2 + i * self.s2
    }

    /// Dual-block dimension `n1 + s1 + K (n2 + s2)`.
    pub fn dual_dim(&self) -> usize {
        self.n1 + self.s1 + self.k * (self.n2 + self.s2)
    }
}

/// The cone `D` the stacked primal-dual vector lives in.
pub fn full_cone(prob: &TwoStageProblem) -> ConeSpec {
    let layout = Layout::of(prob);
    let mut atoms: Vec<ConeAtom> = Vec::new();
    atoms.extend(prob.primal_cone_x.atoms().iter().copied());
    for _ in 0..layout.k {
        atoms.extend(prob.primal_cone_y.atoms().iter().copied());
    }
    atoms.push(ConeAtom::free(layout.n1));
    atoms.extend(prob.cone_c1.negate().polar().atoms().iter().copied());
    atoms.push(ConeAtom::free(layout.k * layout.n2));
    for c2 in &prob.cone_c2 {
        atoms.extend(c2.negate().polar().atoms().iter().copied());
    }
    ConeSpec::new(atoms)
}

/// Structured view of the stacked vector `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: DVector<f64>,
    pub ys: Vec<DVector<f64>>,
    pub mult_alpha1: DVector<f64>,
    pub mult_alpha2: DVector<f64>,
    pub mult_pi1: Vec<DVector<f64>>,
    pub mult_pi2: Vec<DVector<f64>>,
}

impl PrimalDualPoint {
    pub fn zeros(layout: &Layout) -> Self {
        PrimalDualPoint {
            x: DVector::zeros(layout.m1),
            ys: vec![DVector::zeros(layout.m2); layout.k],
            mult_alpha1: DVector::zeros(layout.n1),
            mult_alpha2: DVector::zeros(layout.s1),
            mult_pi1: vec![DVector::zeros(layout.n2); layout.k],
            mult_pi2: vec![DVector::zeros(layout.s2); layout.k],
        }
    }

    pub fn to_vector(&self, layout: &Layout) -> DVector<f64> {
        let mut z = DVector::zeros(layout.total_dim());
        z.rows_mut(layout.x_off(), layout.m1).copy_from(&self.x);
        for (i, y) in self.ys.iter().enumerate() {
            z.rows_mut(layout.y_off(i), layout.m2).copy_from(y);
        }
        z.rows_mut(layout.alpha1_off(), layout.n1).copy_from(&self.mult_alpha1);
        z.rows_mut(layout.alpha2_off(), layout.s1).copy_from(&self.mult_alpha2);
        for i in 0..layout.k {
            z.rows_mut(layout.pi1_off(i), layout.n2).copy_from(&self.mult_pi1[i]);
            z.rows_mut(layout.pi2_off(i), layout.s2).copy_from(&self.mult_pi2[i]);
        }
        z
    }

    pub fn from_vector(layout: &Layout, z: &DVector<f64>) -> Result<Self> {
        if z.len() != layout.total_dim() {
            return Err(Error::Dimension {
                context: "PrimalDualPoint::from_vector",
                expected: layout.total_dim(),
                got: z.len(),
            });
        }
        Ok(PrimalDualPoint {
            x: DVector::from(z.rows(layout.x_off(), layout.m1)),
            ys: (0..layout.k)
                .map(|i| DVector::from(z.rows(layout.y_off(i), layout.m2)))
                .collect(),
            mult_alpha1: DVector::from(z.rows(layout.alpha1_off(), layout.n1)),
            mult_alpha2: DVector::from(z.rows(layout.alpha2_off(), layout.s1)),
            mult_pi1: (0..layout.k)
                .map(|i| DVector::from(z.rows(layout.pi1_off(i), layout.n2)))
                .collect(),
            mult_pi2: (0..layout.k)
                .map(|i| DVector::from(z.rows(layout.pi2_off(i), layout.s2)))
                .collect(),
        })
    }
}

/// Prox anchor of the linearized surrogate: the point the DC concave parts
/// were linearized at, with the prox points, subgradients, and regularization
/// weights picked there.
#[derive(Debug, Clone)]
pub struct SurrogateAnchor {
    pub rho: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub x: DVector<f64>,
    pub ys: Vec<DVector<f64>>,
    pub zeta_first: Option<DVector<f64>>,
    pub varpi_first: Option<DVector<f64>>,
    /// Concave DC value `R_1(x anchor)` and envelope at the anchor.
    pub dc_first: f64,
    pub moreau_first: f64,
    pub zeta_second: Vec<Option<DVector<f64>>>,
    pub varpi_second: Vec<Option<DVector<f64>>>,
    pub dc_second: Vec<f64>,
    pub moreau_second: Vec<f64>,
}

impl SurrogateAnchor {
    /// Prox refresh at `(x, ys)` for smoothing `rho` (Step 1-1).
    pub fn refresh(
        prob: &TwoStageProblem,
        rho: f64,
        tau1: f64,
        tau2: f64,
        x: DVector<f64>,
        ys: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let k = prob.scenario_count();
        let mut anchor = SurrogateAnchor {
            rho,
            tau1,
            tau2,
            x,
            ys,
            zeta_first: None,
            varpi_first: None,
            dc_first: 0.0,
            moreau_first: 0.0,
            zeta_second: vec![None; k],
            varpi_second: vec![None; k],
            dc_second: vec![0.0; k],
            moreau_second: vec![0.0; k],
        };
        if !prob.penalty_first.is_absent() {
            let pr = prob.penalty_first.composite_prox(rho, &anchor.x)?;
            anchor.varpi_first =
                Some(dc_subgradient(&prob.penalty_first, rho, &anchor.x, &pr.point)?);
            anchor.dc_first = pr.dc_concave_value;
            anchor.moreau_first = pr.envelope_value;
            anchor.zeta_first = Some(pr.point);
        }
        for i in 0..k {
            if prob.penalty_second[i].is_absent() {
                continue;
            }
            let pr = prob.penalty_second[i].composite_prox(rho, &anchor.ys[i])?;
            anchor.varpi_second[i] =
                Some(dc_subgradient(&prob.penalty_second[i], rho, &anchor.ys[i], &pr.point)?);
            anchor.dc_second[i] = pr.dc_concave_value;
            anchor.moreau_second[i] = pr.envelope_value;
            anchor.zeta_second[i] = Some(pr.point);
        }
        Ok(anchor)
    }

    /// Same anchor with the proximal regularization switched off; used by the
    /// perturbation-bound checks.
    pub fn with_zero_tau(&self) -> Self {
        SurrogateAnchor { tau1: 0.0, tau2: 0.0, ..self.clone() }
    }

    /// `tau1 ||x - x_a|| + tau2 sum_i p_i ||y_i - y_a_i||`.
    pub fn weighted_drift(&self, probs: &[f64], x: &DVector<f64>, ys: &[DVector<f64>]) -> f64 {
        let mut d = self.tau1 * (x - &self.x).norm();
        for (i, y) in ys.iter().enumerate() {
            d += self.tau2 * probs[i] * (y - &self.ys[i]).norm();
        }
        d
    }
}

/// Value of the convex surrogate `F^L` at `(x, ys)`.
pub fn eval_f_surrogate(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    x: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<f64> {
    let mut v = prob.smooth_objective(x, ys);
    let rho = anchor.rho;
    if !prob.penalty_first.is_absent() {
        let w = prob.penalty_first.apply_affine(x)?;
        let varpi = anchor.varpi_first.as_ref().expect("anchor refreshed with penalty");
        let dx = x - &anchor.x;
        v += w.norm_squared() / (2.0 * rho) - anchor.dc_first - varpi.dot(&dx)
            + anchor.tau1 / 2.0 * dx.norm_squared();
    }
    for (i, y) in ys.iter().enumerate() {
        if prob.penalty_second[i].is_absent() {
            continue;
        }
        let w = prob.penalty_second[i].apply_affine(y)?;
        let varpi = anchor.varpi_second[i].as_ref().expect("anchor refreshed with penalty");
        let dy = y - &anchor.ys[i];
        v += prob.probs[i]
            * (w.norm_squared() / (2.0 * rho) - anchor.dc_second[i] - varpi.dot(&dy)
                + anchor.tau2 / 2.0 * dy.norm_squared());
    }
    Ok(v)
}

/// Penalty-multiplier estimate, one block per penalty-bearing term. Second
/// stage blocks carry the scenario probability weight.
#[derive(Debug, Clone)]
pub struct LambdaBlocks {
    pub first: Option<DVector<f64>>,
    pub second: Vec<Option<DVector<f64>>>,
}

impl LambdaBlocks {
    pub fn zero(prob: &TwoStageProblem) -> Self {
        LambdaBlocks { first: None, second: vec![None; prob.scenario_count()] }
    }
}

/// Surrogate penalty multiplier `lambda^L` at `(x, ys)`: the first block is
/// `(U1 x + u1 - zeta)/rho + tau1 (x - x_a)` and scenario blocks are
/// `p_i [(U_i y_i + u_i - zeta_i)/rho + tau2 (y_i - y_a_i)]`. For non-identity
/// affine maps the proximal term enters the surrogate map directly on the
/// primal rows instead (the composition with `U^T` applies only to the
/// envelope part).
pub fn lambda_surrogate(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    x: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<LambdaBlocks> {
    let rho = anchor.rho;
    let mut out = LambdaBlocks::zero(prob);
    if let Some(zeta) = &anchor.zeta_first {
        let w = prob.penalty_first.apply_affine(x)?;
        let mut lam = (w - zeta) / rho;
        if x.len() == lam.len() {
            lam += anchor.tau1 * (x - &anchor.x);
        }
        out.first = Some(lam);
    }
    for (i, y) in ys.iter().enumerate() {
        if let Some(zeta) = &anchor.zeta_second[i] {
            let w = prob.penalty_second[i].apply_affine(y)?;
            let mut lam = (w - zeta) / rho;
            if y.len() == lam.len() {
                lam += anchor.tau2 * (y - &anchor.ys[i]);
            }
            out.second[i] = Some(lam * prob.probs[i]);
        }
    }
    Ok(out)
}

struct MapTerms<'a> {
    prob: &'a TwoStageProblem,
    layout: Layout,
}

impl<'a> MapTerms<'a> {
    fn new(prob: &'a TwoStageProblem) -> Self {
        MapTerms { prob, layout: Layout::of(prob) }
    }

    /// Shared assembly of `(grad f-hat + grad G M [+ penalty terms]; -G)`.
    fn assemble(
        &self,
        point: &PrimalDualPoint,
        anchor: Option<&SurrogateAnchor>,
        lambda: Option<&LambdaBlocks>,
    ) -> Result<DVector<f64>> {
        let prob = self.prob;
        let layout = &self.layout;
        let empty = DVector::zeros(0);
        let mut out = DVector::zeros(layout.total_dim());
        let x = &point.x;

        // First-stage gradient block.
        let mut gx = prob.obj_first.gradient(x);
        gx += prob.eq_first.jac_x(x, &empty).transpose() * &point.mult_alpha1;
        gx += prob.cone_first.jac_x(x, &empty).transpose() * &point.mult_alpha2;
        for i in 0..layout.k {
            let y = &point.ys[i];
            gx += prob.eq_second[i].jac_x(x, y).transpose() * &point.mult_pi1[i];
            gx += prob.cone_second[i].jac_x(x, y).transpose() * &point.mult_pi2[i];
        }
        if let Some(anchor) = anchor {
            if let Some(zeta) = &anchor.zeta_first {
                let w = prob.penalty_first.apply_affine(x)?;
                gx += prob.penalty_first.affine_transpose_apply(&((w - zeta) / anchor.rho))?;
                gx += anchor.tau1 * (x - &anchor.x);
            }
        }
        if let Some(lambda) = lambda {
            if let Some(lam) = &lambda.first {
                gx += prob.penalty_first.affine_transpose_apply(lam)?;
            }
        }
        out.rows_mut(layout.x_off(), layout.m1).copy_from(&gx);

        // Second-stage gradient blocks.
        for i in 0..layout.k {
            let y = &point.ys[i];
            let mut gy = prob.obj_second[i].gradient(y) * prob.probs[i];
            gy += prob.eq_second[i].jac_y(x, y).transpose() * &point.mult_pi1[i];
            gy += prob.cone_second[i].jac_y(x, y).transpose() * &point.mult_pi2[i];
            if let Some(anchor) = anchor {
                if let Some(zeta) = &anchor.zeta_second[i] {
                    let w = prob.penalty_second[i].apply_affine(y)?;
                    gy += prob.probs[i]
                        * prob.penalty_second[i]
                            .affine_transpose_apply(&((w - zeta) / anchor.rho))?;
                    gy += prob.probs[i] * anchor.tau2 * (y - &anchor.ys[i]);
                }
            }
            if let Some(lambda) = lambda {
                if let Some(lam) = &lambda.second[i] {
                    gy += prob.penalty_second[i].affine_transpose_apply(lam)?;
                }
            }
            out.rows_mut(layout.y_off(i), layout.m2).copy_from(&gy);
        }

        // Dual blocks: -G.
        out.rows_mut(layout.alpha1_off(), layout.n1)
            .copy_from(&(-prob.eq_first.eval(x, &empty)));
        out.rows_mut(layout.alpha2_off(), layout.s1)
            .copy_from(&(-prob.cone_first.eval(x, &empty)));
        for i in 0..layout.k {
            let y = &point.ys[i];
            out.rows_mut(layout.pi1_off(i), layout.n2)
                .copy_from(&(-prob.eq_second[i].eval(x, y)));
            out.rows_mut(layout.pi2_off(i), layout.s2)
                .copy_from(&(-prob.cone_second[i].eval(x, y)));
        }
        for v in out.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("two-stage map"));
            }
        }
        Ok(out)
    }
}

/// Surrogate map `H^L` at the stacked point `z`.
pub fn eval_h_surrogate(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let layout = Layout::of(prob);
    let point = PrimalDualPoint::from_vector(&layout, z)?;
    MapTerms::new(prob).assemble(&point, Some(anchor), None)
}

/// Original KKT map `H(z; lambda)` with a fixed penalty multiplier estimate.
pub fn eval_h_original(
    prob: &TwoStageProblem,
    z: &DVector<f64>,
    lambda: &LambdaBlocks,
) -> Result<DVector<f64>> {
    let layout = Layout::of(prob);
    let point = PrimalDualPoint::from_vector(&layout, z)?;
    MapTerms::new(prob).assemble(&point, None, Some(lambda))
}

/// Natural residual `z - Proj_D(z - H(z))` and its Euclidean norm.
pub fn natural_residual(
    cone: &ConeSpec,
    z: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let res = z - cone.project(&(z - h))?;
    let norm = res.norm();
    Ok((res, norm))
}

/// Natural residual of the surrogate map at `z`.
pub fn natural_residual_surrogate(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let h = eval_h_surrogate(prob, anchor, z)?;
    natural_residual(&full_cone(prob), z, &h)
}

/// Natural residual of the original KKT map at `z` with multipliers `lambda`.
pub fn natural_residual_original(
    prob: &TwoStageProblem,
    z: &DVector<f64>,
    lambda: &LambdaBlocks,
) -> Result<(DVector<f64>, f64)> {
    let h = eval_h_original(prob, z, lambda)?;
    natural_residual(&full_cone(prob), z, &h)
}

/// Per-scenario counterpart of the surrogate map, the block PHM decomposes
/// over. Stacking is `(x; y_i; alpha1; alpha2; pi_{1,i}; pi_{2,i})`.
///
/// Objective and penalty terms enter unweighted; at consensus the full-system
/// multipliers are the probability-scaled scenario multipliers, which the
/// hedging loop accounts for when it reports the aggregated iterate.
pub struct ScenarioMap<'a> {
    pub prob: &'a TwoStageProblem,
    pub anchor: &'a SurrogateAnchor,
    pub scenario: usize,
}

impl<'a> ScenarioMap<'a> {
    pub fn new(prob: &'a TwoStageProblem, anchor: &'a SurrogateAnchor, scenario: usize) -> Self {
        ScenarioMap { prob, anchor, scenario }
    }

    pub fn layout(&self) -> Layout {
        Layout::of(self.prob)
    }

    pub fn dim(&self) -> usize {
        let l = self.layout();
        l.m1 + l.m2 + l.n1 + l.s1 + l.n2 + l.s2
    }

    /// `D_i = C_x x C_y x R^{n1} x (-C1)° x R^{n2} x (-C2_i)°`.
    pub fn cone(&self) -> ConeSpec {
        let l = self.layout();
        let mut atoms: Vec<ConeAtom> = Vec::new();
        atoms.extend(self.prob.primal_cone_x.atoms().iter().copied());
        atoms.extend(self.prob.primal_cone_y.atoms().iter().copied());
        atoms.push(ConeAtom::free(l.n1));
        atoms.extend(self.prob.cone_c1.negate().polar().atoms().iter().copied());
        atoms.push(ConeAtom::free(l.n2));
        atoms.extend(self.prob.cone_c2[self.scenario].negate().polar().atoms().iter().copied());
        ConeSpec::new(atoms)
    }

    #[allow(clippy::type_complexity)]
    fn split(
        &self,
        z: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let l = self.layout();
        let mut off = 0;
        let mut take = |d: usize| {
            let v = DVector::from(z.rows(off, d));
            off += d;
            v
        };
        (take(l.m1), take(l.m2), take(l.n1), take(l.s1), take(l.n2), take(l.s2))
    }

    pub fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let prob = self.prob;
        let i = self.scenario;
        let anchor = self.anchor;
        let l = self.layout();
        if z.len() != self.dim() {
            return Err(Error::Dimension {
                context: "ScenarioMap::eval",
                expected: self.dim(),
                got: z.len(),
            });
        }
        let (x, y, a1, a2, p1, p2) = self.split(z);
        let empty = DVector::zeros(0);

        let mut gx = prob.obj_first.gradient(&x);
        gx += prob.eq_first.jac_x(&x, &empty).transpose() * &a1;
        gx += prob.cone_first.jac_x(&x, &empty).transpose() * &a2;
        gx += prob.eq_second[i].jac_x(&x, &y).transpose() * &p1;
        gx += prob.cone_second[i].jac_x(&x, &y).transpose() * &p2;
        if let Some(zeta) = &anchor.zeta_first {
            let w = prob.penalty_first.apply_affine(&x)?;
            gx += prob.penalty_first.affine_transpose_apply(&((w - zeta) / anchor.rho))?;
            gx += anchor.tau1 * (&x - &anchor.x);
        }

        let mut gy = prob.obj_second[i].gradient(&y);
        gy += prob.eq_second[i].jac_y(&x, &y).transpose() * &p1;
        gy += prob.cone_second[i].jac_y(&x, &y).transpose() * &p2;
        if let Some(zeta) = &anchor.zeta_second[i] {
            let w = prob.penalty_second[i].apply_affine(&y)?;
            gy += prob.penalty_second[i].affine_transpose_apply(&((w - zeta) / anchor.rho))?;
            gy += anchor.tau2 * (&y - &anchor.ys[i]);
        }

        let mut out = DVector::zeros(self.dim());
        let mut off = 0;
        for block in [
            gx,
            gy,
            -prob.eq_first.eval(&x, &empty),
            -prob.cone_first.eval(&x, &empty),
            -prob.eq_second[i].eval(&x, &y),
            -prob.cone_second[i].eval(&x, &y),
        ] {
            out.rows_mut(off, block.len()).copy_from(&block);
            off += block.len();
        }
        debug_assert_eq!(off, l.m1 + l.m2 + l.n1 + l.s1 + l.n2 + l.s2);
        for v in out.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("scenario map"));
            }
        }
        Ok(out)
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let prob = self.prob;
        let i = self.scenario;
        let anchor = self.anchor;
        let l = self.layout();
        let (x, y, _a1, a2, p1, p2) = self.split(z);
        let empty = DVector::zeros(0);
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);

        let (ox, oy) = (0, l.m1);
        let oa1 = l.m1 + l.m2;
        let oa2 = oa1 + l.n1;
        let op1 = oa2 + l.s1;
        let op2 = op1 + l.n2;

        let j_eq1_x = prob.eq_first.jac_x(&x, &empty);
        let j_c1_x = prob.cone_first.jac_x(&x, &empty);
        let j_eq2_x = prob.eq_second[i].jac_x(&x, &y);
        let j_eq2_y = prob.eq_second[i].jac_y(&x, &y);
        let j_c2_x = prob.cone_second[i].jac_x(&x, &y);
        let j_c2_y = prob.cone_second[i].jac_y(&x, &y);

        // x-row second derivatives.
        let mut hxx = prob.obj_first.hessian(&x);
        hxx += prob.cone_first.hess_xx(&x, &empty, &a2);
        hxx += prob.eq_second[i].hess_xx(&x, &y, &p1);
        hxx += prob.cone_second[i].hess_xx(&x, &y, &p2);
        if anchor.zeta_first.is_some() {
            match &prob.penalty_first.affine {
                None => {
                    for j in 0..l.m1 {
                        hxx[(j, j)] += 1.0 / anchor.rho;
                    }
                }
                Some((u, _)) => hxx += u.transpose() * u / anchor.rho,
            }
            for j in 0..l.m1 {
                hxx[(j, j)] += anchor.tau1;
            }
        }
        let mut hxy = prob.eq_second[i].hess_xy(&x, &y, &p1);
        hxy += prob.cone_second[i].hess_xy(&x, &y, &p2);
        let mut hyy = prob.obj_second[i].hessian(&y);
        hyy += prob.eq_second[i].hess_yy(&x, &y, &p1);
        hyy += prob.cone_second[i].hess_yy(&x, &y, &p2);
        if anchor.zeta_second[i].is_some() {
            match &prob.penalty_second[i].affine {
                None => {
                    for j in 0..l.m2 {
                        hyy[(j, j)] += 1.0 / anchor.rho;
                    }
                }
                Some((u, _)) => hyy += u.transpose() * u / anchor.rho,
            }
            for j in 0..l.m2 {
                hyy[(j, j)] += anchor.tau2;
            }
        }

        jac.view_mut((ox, ox), (l.m1, l.m1)).copy_from(&hxx);
        jac.view_mut((ox, oy), (l.m1, l.m2)).copy_from(&hxy);
        jac.view_mut((oy, ox), (l.m2, l.m1)).copy_from(&hxy.transpose());
        jac.view_mut((oy, oy), (l.m2, l.m2)).copy_from(&hyy);

        jac.view_mut((ox, oa1), (l.m1, l.n1)).copy_from(&j_eq1_x.transpose());
        jac.view_mut((ox, oa2), (l.m1, l.s1)).copy_from(&j_c1_x.transpose());
        jac.view_mut((ox, op1), (l.m1, l.n2)).copy_from(&j_eq2_x.transpose());
        jac.view_mut((ox, op2), (l.m1, l.s2)).copy_from(&j_c2_x.transpose());
        jac.view_mut((oy, op1), (l.m2, l.n2)).copy_from(&j_eq2_y.transpose());
        jac.view_mut((oy, op2), (l.m2, l.s2)).copy_from(&j_c2_y.transpose());

        jac.view_mut((oa1, ox), (l.n1, l.m1)).copy_from(&(-&j_eq1_x));
        jac.view_mut((oa2, ox), (l.s1, l.m1)).copy_from(&(-&j_c1_x));
        jac.view_mut((op1, ox), (l.n2, l.m1)).copy_from(&(-&j_eq2_x));
        jac.view_mut((op1, oy), (l.n2, l.m2)).copy_from(&(-&j_eq2_y));
        jac.view_mut((op2, ox), (l.s2, l.m1)).copy_from(&(-&j_c2_x));
        jac.view_mut((op2, oy), (l.s2, l.m2)).copy_from(&(-&j_c2_y));
        Ok(jac)
    }
}

/// Primal feasibility error: squared norm of the equality rows plus squared
/// distance of the cone rows to their cones.
pub fn feasibility_error(
    prob: &TwoStageProblem,
    x: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<f64> {
    let empty = DVector::zeros(0);
    let mut err = prob.eq_first.eval(x, &empty).norm_squared();
    let c1_neg = prob.cone_c1.negate();
    err += c1_neg.dist(&prob.cone_first.eval(x, &empty))?.powi(2);
    for (i, y) in ys.iter().enumerate() {
        err += prob.eq_second[i].eval(x, y).norm_squared();
        let c2_neg = prob.cone_c2[i].negate();
        err += c2_neg.dist(&prob.cone_second[i].eval(x, y))?.powi(2);
    }
    Ok(err)
}

/// Monotonicity sampling report for the per-scenario surrogate maps.
#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub samples: usize,
    pub min_quadratic_form: f64,
}

impl MonotoneReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.min_quadratic_form >= -tol
    }
}

/// Samples points of `D_i` and random directions, evaluating the quadratic
/// form of the scenario Jacobian. Report-only; a negative minimum flags a
/// nonmonotone block (for example an indefinite covariance).
pub fn verify_monotone(
    prob: &TwoStageProblem,
    anchor: &SurrogateAnchor,
    n_samples: usize,
    seed: u64,
) -> Result<MonotoneReport> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = prob.scenario_count();
    let layout = Layout::of(prob);
    let mut min_form = f64::INFINITY;
    for s in 0..n_samples {
        let i = s % k;
        let map = ScenarioMap::new(prob, anchor, i);
        let dim = map.dim();
        let cone = map.cone();
        let mut raw =
            DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-2.0..2.0)));
        // Alternate between fully random multipliers and inactive ones, so a
        // positive coupling multiplier cannot mask an indefinite block.
        if s % 2 == 1 {
            for j in layout.m1 + layout.m2..dim {
                raw[j] = 0.0;
            }
        }
        let z = cone.project(&raw)?;
        let jac = map.jacobian(&z)?;
        let mut u: DVector<f64> =
            DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        // Probe single coordinate blocks half the time; block-diagonal
        // curvature defects are hard to hit with dense random directions.
        if s % 2 == 1 {
            let (off, len) = if s % 4 == 1 {
                (layout.m1, layout.m2)
            } else {
                (0, layout.m1)
            };
            for j in 0..dim {
                if j < off || j >= off + len {
                    u[j] = 0.0;
                }
            }
        }
        let nu = u.norm();
        if nu == 0.0 {
            continue;
        }
        let u = u / nu;
        let form = (u.transpose() * &jac * &u)[(0, 0)];
        min_form = min_form.min(form);
    }
    Ok(MonotoneReport { samples: n_samples, min_quadratic_form: min_form })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brute::{fd_gradient, fd_jacobian};
    use crate::penalty::PenaltyKind;
    use crate::synthetic;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// Single-variable instance: c(x) = x^2, L0 penalty with identity map,
    /// no constraints, no second stage dimensions.
    fn one_dim_problem() -> TwoStageProblem {
        TwoStageProblem {
            dim_x: 1,
            dim_y: 0,
            probs: vec![1.0],
            obj_first: Arc::new(QuadraticObjective::pure(DMatrix::from_element(1, 1, 1.0))),
            obj_second: vec![Arc::new(QuadraticObjective::pure(DMatrix::zeros(0, 0)))],
            eq_first: ConstraintBlock::empty(1, 0),
            cone_first: ConstraintBlock::empty(1, 0),
            cone_c1: ConeSpec::nonneg(0),
            eq_second: vec![ConstraintBlock::empty(1, 0)],
            cone_second: vec![ConstraintBlock::empty(1, 0)],
            cone_c2: vec![ConeSpec::nonneg(0)],
            primal_cone_x: ConeSpec::free(1),
            primal_cone_y: ConeSpec::free(0),
            penalty_first: PenaltySpec::identity(PenaltyKind::L0 { gamma: 1e-2 }),
            penalty_second: vec![PenaltySpec::absent()],
        }
    }

    #[test]
    fn one_dim_surrogate_map_matches_hand_computation() {
        // rho = 1, tau1 = 1, anchor x = 0 (so zeta = 0): H^L(x) = 2x + x + x.
        let prob = one_dim_problem();
        prob.validate().unwrap();
        let anchor =
            SurrogateAnchor::refresh(&prob, 1.0, 1.0, 0.0, dv(&[0.0]), vec![DVector::zeros(0)])
                .unwrap();
        for xv in [0.5, -1.2, 3.0] {
            let z = dv(&[xv]);
            let h = eval_h_surrogate(&prob, &anchor, &z).unwrap();
            assert!((h[0] - 4.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_reduces_to_smooth_gradient_at_exact_prox_fixed_point() {
        // With the anchor in the prox identity region and all multipliers
        // zero, the correction terms cancel and H^L = (grad f; -G).
        let prob = synthetic::markowitz_like(3, 2, true, true, 11);
        let layout = Layout::of(&prob);
        let x = dv(&[0.5, 0.3, 0.2]);
        let ys = vec![x.clone(); 2];
        let anchor = SurrogateAnchor::refresh(&prob, 1e-4, 0.0, 0.0, x.clone(), ys.clone()).unwrap();
        // Above the hard-threshold: prox keeps the anchor exactly.
        assert_eq!(anchor.zeta_first.as_ref().unwrap(), &x);
        let mut point = PrimalDualPoint::zeros(&layout);
        point.x = x.clone();
        point.ys = ys.clone();
        let z = point.to_vector(&layout);
        let h = eval_h_surrogate(&prob, &anchor, &z).unwrap();
        let gx = prob.obj_first.gradient(&x);
        for j in 0..layout.m1 {
            assert!((h[j] - gx[j]).abs() < 1e-10);
        }
        let empty = DVector::zeros(0);
        let g1 = prob.eq_first.eval(&x, &empty);
        for j in 0..layout.n1 {
            assert!((h[layout.alpha1_off() + j] + g1[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_equals_smoothed_objective_at_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..50 {
            let prob = synthetic::random_instance(&mut rng, trial % 3);
            let (x, ys) = synthetic::random_primal(&mut rng, &prob);
            let rho = rng.random_range(0.05..2.0);
            let anchor =
                SurrogateAnchor::refresh(&prob, rho, 1e-4, 1e-4, x.clone(), ys.clone()).unwrap();
            let lhs = eval_f_surrogate(&prob, &anchor, &x, &ys).unwrap();
            let rhs = prob.f_rho(rho, &x, &ys).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()),
                "anchor equality violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn surrogate_majorizes_smoothed_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for trial in 0..50 {
            let prob = synthetic::random_instance(&mut rng, trial % 3);
            let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
            let rho = rng.random_range(0.05..2.0);
            let (tau1, tau2) = (rng.random_range(1e-5..1e-1), rng.random_range(1e-5..1e-1));
            let anchor = SurrogateAnchor::refresh(&prob, rho, tau1, tau2, xa, ya).unwrap();
            let (x, ys) = synthetic::random_primal(&mut rng, &prob);
            let f_rho = prob.f_rho(rho, &x, &ys).unwrap();
            let f_sur = eval_f_surrogate(&prob, &anchor, &x, &ys).unwrap();
            // The proximal slack exists only for penalty-bearing blocks (an
            // absent penalty contributes no surrogate term at all).
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
            assert!(
                f_rho <= f_sur - slack + 1e-10 * (1.0 + f_sur.abs()),
                "majorization violated: {f_rho} vs {f_sur} - {slack}"
            );
        }
    }

    #[test]
    fn tau_perturbation_is_exact_on_primal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..30 {
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
            )
            .unwrap();
            let anchor0 = anchor.with_zero_tau();
            let z = synthetic::random_point(&mut rng, &prob);
            let h_tau = eval_h_surrogate(&prob, &anchor, &z).unwrap();
            let h_0 = eval_h_surrogate(&prob, &anchor0, &z).unwrap();
            let diff = &h_tau - &h_0;
            // Dual rows unchanged.
            for j in layout.alpha1_off()..layout.total_dim() {
                assert!(diff[j].abs() < 1e-12);
            }
            // Primal blocks carry exactly the tau terms; the envelope parts
            // cancel between the two anchors, for any affine composition.
            let point = PrimalDualPoint::from_vector(&layout, &z).unwrap();
            let mut block_l1 = 0.0;
            let dx = DVector::from(diff.rows(layout.x_off(), layout.m1));
            block_l1 += dx.norm();
            let mut expected = if prob.penalty_first.is_absent() {
                0.0
            } else {
                anchor.tau1 * (&point.x - &anchor.x).norm()
            };
            for i in 0..layout.k {
                let dy = DVector::from(diff.rows(layout.y_off(i), layout.m2));
                block_l1 += dy.norm();
                if !prob.penalty_second[i].is_absent() {
                    expected +=
                        anchor.tau2 * prob.probs[i] * (&point.ys[i] - &anchor.ys[i]).norm();
                }
            }
            assert!(
                (block_l1 - expected).abs() <= 1e-10 * (1.0 + expected),
                "tau perturbation mismatch: {block_l1} vs {expected}"
            );
        }
    }

    #[test]
    fn natural_residual_examples() {
        // 1-D VI with H(z) = z - 1 on the nonnegative half-line.
        let cone = ConeSpec::nonneg(1);
        let z = dv(&[0.0]);
        let h = dv(&[-1.0]);
        let (res, norm) = natural_residual(&cone, &z, &h).unwrap();
        assert!((res[0] + 1.0).abs() < 1e-15);
        assert!((norm - 1.0).abs() < 1e-15);
        // Exact solution: z = 1 gives residual 0.
        let (_, norm) = natural_residual(&cone, &dv(&[1.0]), &dv(&[0.0])).unwrap();
        assert!(norm < 1e-15);
    }

    #[test]
    fn surrogate_primal_rows_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..20 {
            let prob = synthetic::random_instance(&mut rng, trial % 3);
            let layout = Layout::of(&prob);
            let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
            let anchor = SurrogateAnchor::refresh(&prob, 0.7, 1e-3, 2e-3, xa, ya).unwrap();
            let z = synthetic::random_point(&mut rng, &prob);
            let point = PrimalDualPoint::from_vector(&layout, &z).unwrap();
            let h = eval_h_surrogate(&prob, &anchor, &z).unwrap();
            // Primal rows are the gradient of F^L + <M, G> in the primal
            // variables with multipliers fixed.
            let primal_dim = layout.m1 + layout.k * layout.m2;
            let primal = DVector::from(z.rows(0, primal_dim));
            let phi = |p: &DVector<f64>| {
                let x = DVector::from(p.rows(0, layout.m1));
                let ys: Vec<DVector<f64>> = (0..layout.k)
                    .map(|i| DVector::from(p.rows(layout.m1 + i * layout.m2, layout.m2)))
                    .collect();
                let mut v = eval_f_surrogate(&prob, &anchor, &x, &ys).unwrap();
                let empty = DVector::zeros(0);
                v += point.mult_alpha1.dot(&prob.eq_first.eval(&x, &empty));
                v += point.mult_alpha2.dot(&prob.cone_first.eval(&x, &empty));
                for (i, y) in ys.iter().enumerate() {
                    v += point.mult_pi1[i].dot(&prob.eq_second[i].eval(&x, y));
                    v += point.mult_pi2[i].dot(&prob.cone_second[i].eval(&x, y));
                }
                v
            };
            let fd = fd_gradient(phi, &primal, 1e-6);
            for j in 0..primal_dim {
                let scale = 1.0 + fd[j].abs();
                assert!(
                    (h[j] - fd[j]).abs() / scale < 1e-6,
                    "row {j}: analytic {} vs fd {}",
                    h[j],
                    fd[j]
                );
            }
        }
    }

    #[test]
    fn scenario_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..15 {
            let prob = synthetic::random_instance(&mut rng, trial % 3);
            let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
            let anchor = SurrogateAnchor::refresh(&prob, 0.9, 1e-3, 1e-3, xa, ya).unwrap();
            for i in 0..prob.scenario_count() {
                let map = ScenarioMap::new(&prob, &anchor, i);
                let z = DVector::from_iterator(
                    map.dim(),
                    (0..map.dim()).map(|_| rng.random_range(-1.0..1.0)),
                );
                let jac = map.jacobian(&z).unwrap();
                let fd = fd_jacobian(|p| map.eval(p).unwrap(), &z, 1e-6);
                assert!(
                    (&jac - &fd).amax() < 1e-5,
                    "scenario jacobian mismatch: {:.3e}",
                    (&jac - &fd).amax()
                );
            }
        }
    }

    #[test]
    fn scenario_separability() {
        // Changing y_j leaves the blocks of scenario i != j unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let prob = synthetic::markowitz_like(4, 3, true, true, 5);
        let layout = Layout::of(&prob);
        let z = synthetic::random_point(&mut rng, &prob);
        let h = eval_h_surrogate(
            &prob,
            &SurrogateAnchor::refresh(
                &prob,
                0.5,
                1e-4,
                1e-4,
                DVector::from(z.rows(0, layout.m1)),
                (0..layout.k)
                    .map(|i| DVector::from(z.rows(layout.y_off(i), layout.m2)))
                    .collect(),
            )
            .unwrap(),
            &z,
        )
        .unwrap();
        let mut z2 = z.clone();
        let j = 1; // perturb scenario 1
        for r in 0..layout.m2 {
            z2[layout.y_off(j) + r] += 0.3;
        }
        let anchor = SurrogateAnchor::refresh(
            &prob,
            0.5,
            1e-4,
            1e-4,
            DVector::from(z.rows(0, layout.m1)),
            (0..layout.k)
                .map(|i| DVector::from(z.rows(layout.y_off(i), layout.m2)))
                .collect(),
        )
        .unwrap();
        let h2 = eval_h_surrogate(&prob, &anchor, &z2).unwrap();
        for i in 0..layout.k {
            if i == j {
                continue;
            }
            for r in 0..layout.m2 {
                assert_eq!(h[layout.y_off(i) + r], h2[layout.y_off(i) + r]);
            }
            for r in 0..layout.n2 {
                assert_eq!(h[layout.pi1_off(i) + r], h2[layout.pi1_off(i) + r]);
            }
            for r in 0..layout.s2 {
                assert_eq!(h[layout.pi2_off(i) + r], h2[layout.pi2_off(i) + r]);
            }
        }
    }

    #[test]
    fn monotone_certificate_positive_for_psd_data() {
        let prob = synthetic::markowitz_like(3, 2, true, true, 7);
        let x0 = DVector::from_element(3, 1.0 / 3.0);
        let anchor =
            SurrogateAnchor::refresh(&prob, 0.8, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2])
                .unwrap();
        let report = verify_monotone(&prob, &anchor, 500, 99).unwrap();
        assert!(report.passed(1e-10), "min form {}", report.min_quadratic_form);
    }

    #[test]
    fn monotone_certificate_detects_indefinite_covariance() {
        let mut prob = synthetic::markowitz_like(3, 2, true, true, 7);
        // Corrupt one scenario covariance to -I.
        prob.obj_second[0] = Arc::new(QuadraticObjective::pure(-DMatrix::identity(3, 3)));
        let x0 = DVector::from_element(3, 1.0 / 3.0);
        let anchor =
            SurrogateAnchor::refresh(&prob, 0.8, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2])
                .unwrap();
        let report = verify_monotone(&prob, &anchor, 500, 99).unwrap();
        assert!(!report.passed(1e-10));
    }

    #[test]
    fn zero_direction_gives_zero_form() {
        let prob = synthetic::markowitz_like(3, 2, true, true, 7);
        let x0 = DVector::from_element(3, 1.0 / 3.0);
        let anchor =
            SurrogateAnchor::refresh(&prob, 0.8, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2])
                .unwrap();
        let map = ScenarioMap::new(&prob, &anchor, 0);
        let z = map.cone().project(&DVector::from_element(map.dim(), 0.1)).unwrap();
        let jac = map.jacobian(&z).unwrap();
        let u: DVector<f64> = DVector::zeros(map.dim());
        assert_eq!((u.transpose() * jac * u)[(0, 0)], 0.0);
    }

    #[test]
    fn original_kkt_residual_vanishes_at_enumerated_solution() {
        // Decoupled two-asset instance solved exactly by active-set
        // enumeration; the assembled primal-dual point must zero the
        // original KKT map's natural residual.
        let data = synthetic::conditioned_market(2, 1, 61);
        let prob = crate::markowitz::build_problem(
            &data,
            crate::markowitz::ModelVariant { include_l0: false, include_soc: false },
        )
        .unwrap();
        let layout = Layout::of(&prob);
        let first = crate::brute::solve_block_qp_enumerate(&data.q1, &data.rbar1, data.r1_min)
            .unwrap();
        let second = crate::brute::solve_block_qp_enumerate(
            &data.q2[0],
            &data.rbar2[0],
            data.r2_min[0],
        )
        .unwrap();
        let point = PrimalDualPoint {
            x: first.z.clone(),
            ys: vec![second.z.clone()],
            mult_alpha1: DVector::from_element(1, first.alpha_eq),
            mult_alpha2: DVector::from_element(1, first.alpha_floor),
            // Single scenario with unit probability: block multipliers map
            // one-to-one onto the stacked system.
            mult_pi1: vec![DVector::from_element(1, second.alpha_eq)],
            mult_pi2: vec![DVector::from_element(1, second.alpha_floor)],
        };
        let z = point.to_vector(&layout);
        let (_, norm) =
            natural_residual_original(&prob, &z, &LambdaBlocks::zero(&prob)).unwrap();
        assert!(norm <= 1e-8, "residual at enumerated KKT point: {norm:.3e}");
    }

    #[test]
    fn primal_dual_round_trip() {
        let prob = synthetic::markowitz_like(3, 2, true, true, 19);
        let layout = Layout::of(&prob);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let z = synthetic::random_point(&mut rng, &prob);
        let point = PrimalDualPoint::from_vector(&layout, &z).unwrap();
        assert_eq!(point.to_vector(&layout), z);
    }
}
