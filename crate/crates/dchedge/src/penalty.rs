//! Separable nonsmooth penalties with closed-form proximal mappings, Moreau
//! envelopes, DC decompositions, and the subgradient selections used by the
//! successive-DC outer loop.
//!
//! A penalty is a lower-bounded lsc function `P` applied after an optional
//! affine map: `r(s) = P(U s + u)`. The Moreau envelope
//!
//! ```text
//! P_rho(w) = inf_w' { 1/(2 rho) ||w' - w||^2 + P(w') }
//! ```
//!
//! splits as a difference of convex functions,
//! `P_rho(w) = ||w||^2/(2 rho) - D_rho(w)`, and the concave part's subgradient
//! at `s` is `(1/rho) U^T zeta` for any prox point `zeta`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

/// Contract for user-supplied penalties. The library never minimizes a custom
/// prox numerically; the oracle must return one deterministic prox element.
pub trait CustomPenalty: Send + Sync {
    fn value(&self, w: &DVector<f64>) -> Result<f64>;
    fn prox(&self, rho: f64, w: &DVector<f64>) -> Result<DVector<f64>>;
    /// Declared lower bound `inf P`, required finite.
    fn lower_bound(&self) -> f64;
}

#[derive(Clone)]
pub enum PenaltyKind {
    /// No penalty. Prox is the identity and the envelope is zero; the
    /// surrogate machinery omits this block entirely.
    Zero,
    /// `gamma * ||w||_0` (counting nonzero components).
    L0 { gamma: f64 },
    /// `gamma * ||w||_1`.
    L1 { gamma: f64 },
    Custom(Arc<dyn CustomPenalty>),
}

impl fmt::Debug for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyKind::Zero => write!(f, "Zero"),
            PenaltyKind::L0 { gamma } => write!(f, "L0(gamma={gamma})"),
            PenaltyKind::L1 { gamma } => write!(f, "L1(gamma={gamma})"),
            PenaltyKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Prox output together with the envelope value and the concave DC part
/// `D_rho(w)` evaluated at the same point.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub point: DVector<f64>,
    pub envelope_value: f64,
    pub dc_concave_value: f64,
    /// Set when some component sat exactly on the L0 threshold and the
    /// documented tie-break (keep the nonzero element) was applied.
    pub tie_broken: bool,
}

impl PenaltyKind {
    pub fn value(&self, w: &DVector<f64>) -> Result<f64> {
        match self {
            PenaltyKind::Zero => Ok(0.0),
            PenaltyKind::L0 { gamma } => {
                Ok(gamma * w.iter().filter(|x| **x != 0.0).count() as f64)
            }
            PenaltyKind::L1 { gamma } => Ok(gamma * w.iter().map(|x| x.abs()).sum::<f64>()),
            PenaltyKind::Custom(c) => c.value(w),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            PenaltyKind::Zero | PenaltyKind::L0 { .. } | PenaltyKind::L1 { .. } => 0.0,
            PenaltyKind::Custom(c) => c.lower_bound(),
        }
    }

    /// True when the kind carries no penalty at all.
    pub fn is_absent(&self) -> bool {
        matches!(self, PenaltyKind::Zero)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prox smoothing parameter must be positive, got {rho}"
        )));
    }
    Ok(())
}

/// Prox point of `rho * P` at `w`, with envelope and DC values.
///
/// L0 tie-break at `|w_j| = sqrt(2 gamma rho)`: keep `w_j` (the nonzero prox
/// element).
pub fn prox_point(kind: &PenaltyKind, rho: f64, w: &DVector<f64>) -> Result<ProxResult> {
    check_rho(rho)?;
    let mut tie_broken = false;
    let (point, envelope_value) = match kind {
        PenaltyKind::Zero => (w.clone(), 0.0),
        PenaltyKind::L0 { gamma } => {
            let threshold_sq = 2.0 * gamma * rho;
            let threshold = threshold_sq.sqrt();
            let mut point = w.clone();
            let mut env = 0.0;
            for x in point.iter_mut() {
                if x.abs() >= threshold {
                    if x.abs() == threshold {
                        tie_broken = true;
                    }
                    if *x != 0.0 {
                        env += gamma;
                    }
                } else {
                    env += *x * *x / (2.0 * rho);
                    *x = 0.0;
                }
            }
            (point, env)
        }
        PenaltyKind::L1 { gamma } => {
            let lam = gamma * rho;
            let mut point = w.clone();
            let mut env = 0.0;
            for x in point.iter_mut() {
                let a = x.abs();
                if a <= lam {
                    env += a * a / (2.0 * rho);
                    *x = 0.0;
                } else {
                    env += gamma * a - gamma * gamma * rho / 2.0;
                    *x -= x.signum() * lam;
                }
            }
            (point, env)
        }
        PenaltyKind::Custom(c) => {
            let point = c.prox(rho, w)?;
            if point.len() != w.len() {
                return Err(Error::Oracle(format!(
                    "custom prox returned dimension {} for query of dimension {}",
                    point.len(),
                    w.len()
                )));
            }
            let val = c.value(&point)?;
            let env = (&point - w).norm_squared() / (2.0 * rho) + val;
            // The prox objective at the returned point may not exceed its
            // value at the query point (A1 contract).
            let at_query = c.value(w)?;
            if env > at_query + 1e-9 * (1.0 + at_query.abs()) {
                return Err(Error::Oracle(format!(
                    "custom prox point does not attain the envelope: {env} > {at_query}"
                )));
            }
            (point, env)
        }
    };
    let dc_concave_value = w.dot(&point) / rho
        - point.norm_squared() / (2.0 * rho)
        - kind.value(&point)?;
    Ok(ProxResult { point, envelope_value, dc_concave_value, tie_broken })
}

/// Moreau envelope value `P_rho(w)`.
pub fn moreau_value(kind: &PenaltyKind, rho: f64, w: &DVector<f64>) -> Result<f64> {
    Ok(prox_point(kind, rho, w)?.envelope_value)
}

/// `lambda = (w - zeta)/rho`, an element of the limiting subdifferential
/// `dP(zeta)` whenever `zeta` is a prox point of `rho P` at `w`.
pub fn limiting_subgradient(
    rho: f64,
    w: &DVector<f64>,
    zeta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_rho(rho)?;
    if w.len() != zeta.len() {
        return Err(Error::Dimension {
            context: "limiting_subgradient",
            expected: w.len(),
            got: zeta.len(),
        });
    }
    Ok((w - zeta) / rho)
}

/// A separable penalty composed with an affine map, `r(s) = P(U s + u)`,
/// carrying the probability weight it enters the objective with.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// `None` marks the identity map (then `u = 0` as well).
    pub affine: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Weight in `(0, 1]` multiplying this term in the objective.
    pub prob_weight: f64,
}

impl PenaltySpec {
    pub fn identity(kind: PenaltyKind) -> Self {
        PenaltySpec { kind, affine: None, prob_weight: 1.0 }
    }

    pub fn absent() -> Self {
        PenaltySpec::identity(PenaltyKind::Zero)
    }

    pub fn with_affine(kind: PenaltyKind, mat: DMatrix<f64>, offset: DVector<f64>) -> Self {
        assert_eq!(mat.nrows(), offset.len(), "affine offset must match U rows");
        PenaltySpec { kind, affine: Some((mat, offset)), prob_weight: 1.0 }
    }

    pub fn with_weight(mut self, p: f64) -> Self {
        assert!(p > 0.0 && p <= 1.0, "prob_weight must lie in (0, 1]");
        self.prob_weight = p;
        self
    }

    pub fn is_absent(&self) -> bool {
        self.kind.is_absent()
    }

    /// `w = U s + u`.
    pub fn apply_affine(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.affine {
            None => Ok(s.clone()),
            Some((mat, off)) => {
                if mat.ncols() != s.len() {
                    return Err(Error::Dimension {
                        context: "PenaltySpec::apply_affine",
                        expected: mat.ncols(),
                        got: s.len(),
                    });
                }
                Ok(mat * s + off)
            }
        }
    }

    /// `U^T v`.
    pub fn affine_transpose_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.affine {
            None => Ok(v.clone()),
            Some((mat, _)) => {
                if mat.nrows() != v.len() {
                    return Err(Error::Dimension {
                        context: "PenaltySpec::affine_transpose_apply",
                        expected: mat.nrows(),
                        got: v.len(),
                    });
                }
                Ok(mat.transpose() * v)
            }
        }
    }

    /// Penalty value of the composite, `P(U s + u)`.
    pub fn composite_value(&self, s: &DVector<f64>) -> Result<f64> {
        self.kind.value(&self.apply_affine(s)?)
    }

    /// Moreau envelope of the composite at `s`.
    pub fn composite_moreau(&self, rho: f64, s: &DVector<f64>) -> Result<f64> {
        moreau_value(&self.kind, rho, &self.apply_affine(s)?)
    }

    /// Prox refresh at `s`: prox point of `rho P` at `U s + u`.
    pub fn composite_prox(&self, rho: f64, s: &DVector<f64>) -> Result<ProxResult> {
        prox_point(&self.kind, rho, &self.apply_affine(s)?)
    }
}

/// Subgradient `varpi = (1/rho) U^T zeta` of the composite concave part
/// `R_rho(s) = D_rho(U s + u)`, valid for any prox point `zeta` at `U s + u`.
pub fn dc_subgradient(
    spec: &PenaltySpec,
    rho: f64,
    s: &DVector<f64>,
    zeta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_rho(rho)?;
    if let Some((mat, _)) = &spec.affine {
        if mat.ncols() != s.len() {
            return Err(Error::Dimension {
                context: "dc_subgradient s",
                expected: mat.ncols(),
                got: s.len(),
            });
        }
    }
    Ok(spec.affine_transpose_apply(zeta)? / rho)
}
