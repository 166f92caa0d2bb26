//! Cone atoms, Cartesian products, Euclidean projections, and complementarity
//! residuals.
//!
//! A [`ConeSpec`] is an ordered product of atoms (zero, free, nonnegative
//! orthant, second-order cone). Negative cones such as the nonpositive orthant
//! or `-SOC` reuse the positive atom's projection kernel composed with a sign
//! flip, so there is exactly one projection kernel per atom kind.
//!
//! Second-order cone atoms use the layout `(u, t)` with the scalar `t` last:
//! `Soc(d) = {(u, t) in R^{d-1} x R : ||u|| <= t}`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomKind {
    Zero,
    Free,
    NonNeg,
    Soc,
}

/// One factor of a cone product. `negated` means the atom is `-C` where `C`
/// is the positive kernel of `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeAtom {
    pub kind: AtomKind,
    pub dim: usize,
    pub negated: bool,
}

impl ConeAtom {
    pub fn zero(dim: usize) -> Self {
        ConeAtom { kind: AtomKind::Zero, dim, negated: false }
    }

    pub fn free(dim: usize) -> Self {
        ConeAtom { kind: AtomKind::Free, dim, negated: false }
    }

    pub fn nonneg(dim: usize) -> Self {
        ConeAtom { kind: AtomKind::NonNeg, dim, negated: false }
    }

    pub fn nonpos(dim: usize) -> Self {
        ConeAtom { kind: AtomKind::NonNeg, dim, negated: true }
    }

    /// Second-order cone `{(u, t) : ||u|| <= t}`. Requires `dim >= 2`.
    pub fn soc(dim: usize) -> Self {
        assert!(dim >= 2, "SOC atom requires dim >= 2, got {dim}");
        ConeAtom { kind: AtomKind::Soc, dim, negated: false }
    }

    /// `-C` for this atom. Zero and free are symmetric, so negation is
    /// normalized away for them.
    pub fn negate(&self) -> Self {
        match self.kind {
            AtomKind::Zero | AtomKind::Free => *self,
            _ => ConeAtom { negated: !self.negated, ..*self },
        }
    }

    /// Atom-wise polar: `Zero <-> Free`, `NonNeg -> NonPos`, `Soc -> -Soc`,
    /// and `(-C)° = -(C°)`.
    pub fn polar(&self) -> Self {
        let base = match self.kind {
            AtomKind::Zero => ConeAtom::free(self.dim),
            AtomKind::Free => ConeAtom::zero(self.dim),
            AtomKind::NonNeg => ConeAtom::nonpos(self.dim),
            AtomKind::Soc => ConeAtom::soc(self.dim).negate(),
        };
        if self.negated {
            base.negate()
        } else {
            base
        }
    }

    fn project_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        let sign = if self.negated { -1.0 } else { 1.0 };
        match self.kind {
            AtomKind::Zero => out.fill(0.0),
            AtomKind::Free => out.copy_from_slice(v),
            AtomKind::NonNeg => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = sign * (sign * x).max(0.0);
                }
            }
            AtomKind::Soc => {
                let d = self.dim;
                let t = sign * v[d - 1];
                let norm_u: f64 = v[..d - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm_u <= t {
                    out.copy_from_slice(v);
                } else if norm_u <= -t {
                    out.fill(0.0);
                } else {
                    let s = 0.5 * (t + norm_u);
                    let scale = s / norm_u;
                    for j in 0..d - 1 {
                        out[j] = scale * v[j];
                    }
                    out[d - 1] = sign * s;
                }
            }
        }
    }

    /// One element of the B-subdifferential of the projection at `v`.
    ///
    /// Orthant components with `v_j = 0` are treated as projected (derivative
    /// zero); on the SOC boundary the generic branch selected by the same
    /// comparisons as `project_into` is used.
    fn projection_jacobian(&self, v: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let sign = if self.negated { -1.0 } else { 1.0 };
        match self.kind {
            AtomKind::Zero => DMatrix::zeros(d, d),
            AtomKind::Free => DMatrix::identity(d, d),
            AtomKind::NonNeg => {
                // d/dv [sign * max(sign*v, 0)] = 1 on the strictly active side.
                DMatrix::from_diagonal(&DVector::from_iterator(
                    d,
                    v.iter().map(|&x| if sign * x > 0.0 { 1.0 } else { 0.0 }),
                ))
            }
            AtomKind::Soc => {
                let t = sign * v[d - 1];
                let norm_u: f64 = v[..d - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm_u <= t {
                    DMatrix::identity(d, d)
                } else if norm_u <= -t {
                    DMatrix::zeros(d, d)
                } else {
                    // P(-v) has Jacobian J_P(-v); the two sign flips cancel,
                    // so evaluate the kernel Jacobian at sign-corrected t.
                    let w: Vec<f64> = v[..d - 1].iter().map(|x| x / norm_u).collect();
                    let a = 0.5 * (t + norm_u) / norm_u;
                    let mut jac = DMatrix::zeros(d, d);
                    for i in 0..d - 1 {
                        for j in 0..d - 1 {
                            let ww = w[i] * w[j];
                            jac[(i, j)] = a * (if i == j { 1.0 } else { 0.0 } - ww) + 0.5 * ww;
                        }
                        jac[(i, d - 1)] = 0.5 * sign * w[i];
                        jac[(d - 1, i)] = 0.5 * sign * w[i];
                    }
                    jac[(d - 1, d - 1)] = 0.5;
                    jac
                }
            }
        }
    }
}

/// Cartesian product of cone atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeSpec {
    atoms: Vec<ConeAtom>,
    total_dim: usize,
}

impl ConeSpec {
    pub fn new(atoms: Vec<ConeAtom>) -> Self {
        assert!(!atoms.is_empty(), "ConeSpec needs at least one atom");
        let total_dim = atoms.iter().map(|a| a.dim).sum();
        ConeSpec { atoms, total_dim }
    }

    pub fn nonneg(dim: usize) -> Self {
        ConeSpec::new(vec![ConeAtom::nonneg(dim)])
    }

    pub fn free(dim: usize) -> Self {
        ConeSpec::new(vec![ConeAtom::free(dim)])
    }

    pub fn zero(dim: usize) -> Self {
        ConeSpec::new(vec![ConeAtom::zero(dim)])
    }

    pub fn atoms(&self) -> &[ConeAtom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.total_dim
    }

    /// Product of two cone products, concatenating atom lists.
    pub fn concat(specs: &[&ConeSpec]) -> Self {
        let atoms: Vec<ConeAtom> = specs.iter().flat_map(|s| s.atoms.iter().copied()).collect();
        ConeSpec::new(atoms)
    }

    pub fn negate(&self) -> Self {
        ConeSpec::new(self.atoms.iter().map(|a| a.negate()).collect())
    }

    pub fn polar(&self) -> Self {
        ConeSpec::new(self.atoms.iter().map(|a| a.polar()).collect())
    }

    fn check_dim(&self, v: &DVector<f64>, context: &'static str) -> Result<()> {
        if v.len() != self.total_dim {
            return Err(Error::Dimension { context, expected: self.total_dim, got: v.len() });
        }
        Ok(())
    }

    /// Blockwise Euclidean projection onto the cone.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v, "ConeSpec::project")?;
        let mut out = DVector::zeros(self.total_dim);
        let mut off = 0;
        for atom in &self.atoms {
            atom.project_into(
                &v.as_slice()[off..off + atom.dim],
                &mut out.as_mut_slice()[off..off + atom.dim],
            );
            off += atom.dim;
        }
        Ok(out)
    }

    /// One element of the B-subdifferential of the projection, block diagonal.
    pub fn projection_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(v, "ConeSpec::projection_jacobian")?;
        let mut jac = DMatrix::zeros(self.total_dim, self.total_dim);
        let mut off = 0;
        for atom in &self.atoms {
            let block = atom.projection_jacobian(&v.as_slice()[off..off + atom.dim]);
            jac.view_mut((off, off), (atom.dim, atom.dim)).copy_from(&block);
            off += atom.dim;
        }
        Ok(jac)
    }

    /// `dist(v, C) = ||v - Proj_C(v)||`.
    pub fn dist(&self, v: &DVector<f64>) -> Result<f64> {
        Ok((v - self.project(v)?).norm())
    }

    /// `dist(g, C) + dist(m, C°) + |m^T g|`; zero iff `m` is in the normal
    /// cone of `C` at `g`.
    pub fn complementarity_residual(&self, g: &DVector<f64>, m: &DVector<f64>) -> Result<f64> {
        self.check_dim(g, "complementarity_residual g")?;
        self.check_dim(m, "complementarity_residual m")?;
        Ok(self.dist(g)? + self.polar().dist(m)? + g.dot(m).abs())
    }
}
