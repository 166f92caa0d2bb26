//! Sparse two-stage mean-variance portfolio application: market data
//! synthesis and estimation, the four model variants (with/without the L0
//! term and the coupling ball), and assembly into the concise
//! complementarity system solved by the library.
//!
//! The concise encoding folds the bound constraints `x >= 0`, `y_i >= 0` into
//! the primal cone, keeps one equality and one return-floor row per stage,
//! and writes the coupling `||x - y_i|| <= tau_i` as the nonlinear row
//! `||x - y_i||^2 - tau_i^2 <= 0`.

use crate::cones::ConeSpec;
use crate::error::{Error, Result};
use crate::model::{ConstraintBlock, QuadraticObjective, SocBallRow, TwoStageProblem};
use crate::penalty::{PenaltyKind, PenaltySpec};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Default coupling radius between first- and second-stage positions.
pub const DEFAULT_TAU_SOC: f64 = 0.2;
/// Default L0 weight.
pub const DEFAULT_GAMMA: f64 = 1e-5;
/// Return-floor margin coefficient relative to the equally weighted portfolio.
pub const DEFAULT_FLOOR_COEF: f64 = 0.05;
/// Covariance ridge for numerical stability.
pub const COV_EPSILON: f64 = 1e-9;
/// Synthetic first-period volatility tiers: a core tier around the base and
/// a small high-volatility tier whose minimum-variance weights fall in the
/// hard-threshold prune band.
const VOL1_BASE: f64 = 0.5;
const VOL1_SPREAD: f64 = 0.3;
const VOL1_JUNK_MULT: f64 = 22.0;
const VOL1_JUNK_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketData {
    pub n: usize,
    pub k: usize,
    /// Expected first-period returns (per-day fractions).
    pub rbar1: DVector<f64>,
    pub q1: DMatrix<f64>,
    /// Expected second-period returns per scenario (gross-return-like
    /// scalars in the 0.5..1.5 range).
    pub rbar2: Vec<DVector<f64>>,
    pub q2: Vec<DMatrix<f64>>,
    pub r1_min: f64,
    pub r2_min: Vec<f64>,
    pub tau_soc: Vec<f64>,
    pub gamma: f64,
}

/// Which optional pieces a model carries: A = both, B = no coupling ball,
/// C = no L0 term, D = neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub include_l0: bool,
    pub include_soc: bool,
}

impl ModelVariant {
    pub const A: ModelVariant = ModelVariant { include_l0: true, include_soc: true };
    pub const B: ModelVariant = ModelVariant { include_l0: true, include_soc: false };
    pub const C: ModelVariant = ModelVariant { include_l0: false, include_soc: true };
    pub const D: ModelVariant = ModelVariant { include_l0: false, include_soc: false };

    pub fn from_letter(c: char) -> Option<ModelVariant> {
        match c.to_ascii_uppercase() {
            'A' => Some(Self::A),
            'B' => Some(Self::B),
            'C' => Some(Self::C),
            'D' => Some(Self::D),
            _ => None,
        }
    }

    pub fn letter(&self) -> char {
        match (self.include_l0, self.include_soc) {
            (true, true) => 'A',
            (true, false) => 'B',
            (false, true) => 'C',
            (false, false) => 'D',
        }
    }
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let sym = (m + m.transpose()) * 0.5;
    let asym = (m - m.transpose()).amax();
    if asym > 1e-8 {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric ({asym:.3e})")));
    }
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(Error::NotPsd { min_eig });
    }
    Ok(())
}

/// Builds the chosen variant as a two-stage problem in the concise
/// complementarity encoding.
pub fn build_problem(data: &MarketData, variant: ModelVariant) -> Result<TwoStageProblem> {
    let n = data.n;
    let k = data.k;
    if n < 2 || k < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 assets and 1 scenario, got n={n}, K={k}"
        )));
    }
    check_psd("Q1", &data.q1)?;
    for (i, q) in data.q2.iter().enumerate() {
        check_psd(&format!("Q2[{i}]"), q)?;
    }

    let ones_row = DMatrix::from_element(1, n, 1.0);
    let probs = vec![1.0 / k as f64; k];

    let mut obj_second: Vec<Arc<dyn crate::model::SmoothObjective>> = Vec::with_capacity(k);
    let mut eq_second = Vec::with_capacity(k);
    let mut cone_second = Vec::with_capacity(k);
    let mut cone_c2 = Vec::with_capacity(k);
    for i in 0..k {
        obj_second.push(Arc::new(QuadraticObjective::pure(data.q2[i].clone())));
        eq_second.push(ConstraintBlock::Affine {
            jac_x: DMatrix::zeros(1, n),
            jac_y: ones_row.clone(),
            rhs: DVector::from_element(1, 1.0),
        });
        // Return floor written as r2_min - rbar2^T y <= 0.
        let floor = ConstraintBlock::Affine {
            jac_x: DMatrix::zeros(1, n),
            jac_y: DMatrix::from_fn(1, n, |_, j| -data.rbar2[i][j]),
            rhs: DVector::from_element(1, -data.r2_min[i]),
        };
        let block = if variant.include_soc {
            ConstraintBlock::Stack(vec![
                floor,
                ConstraintBlock::Smooth(Arc::new(SocBallRow { radius: data.tau_soc[i], dim: n })),
            ])
        } else {
            ConstraintBlock::Stack(vec![floor])
        };
        cone_c2.push(ConeSpec::nonneg(block.dim_out()));
        cone_second.push(block);
    }

    Ok(TwoStageProblem {
        dim_x: n,
        dim_y: n,
        probs,
        obj_first: Arc::new(QuadraticObjective::pure(data.q1.clone())),
        obj_second,
        eq_first: ConstraintBlock::affine_first_stage(ones_row.clone(), DVector::from_element(1, 1.0)),
        cone_first: ConstraintBlock::affine_first_stage(
            DMatrix::from_fn(1, n, |_, j| -data.rbar1[j]),
            DVector::from_element(1, -data.r1_min),
        ),
        cone_c1: ConeSpec::nonneg(1),
        eq_second,
        cone_second,
        cone_c2,
        primal_cone_x: ConeSpec::nonneg(n),
        primal_cone_y: ConeSpec::nonneg(n),
        penalty_first: if variant.include_l0 {
            PenaltySpec::identity(PenaltyKind::L0 { gamma: data.gamma })
        } else {
            PenaltySpec::absent()
        },
        penalty_second: vec![PenaltySpec::absent(); k],
    })
}

/// Return floors guaranteeing the equally weighted portfolio a strict margin:
/// `r_min = rbar^T xbar - coef |rbar^T xbar|` with `xbar = e/n`.
pub fn compute_rmin(
    rbar1: &DVector<f64>,
    rbar2: &[DVector<f64>],
    coef: f64,
) -> (f64, Vec<f64>) {
    let n = rbar1.len() as f64;
    let mean1 = rbar1.sum() / n;
    let r1_min = mean1 - coef * mean1.abs();
    let r2_min = rbar2
        .iter()
        .map(|r| {
            let m = r.sum() / n;
            m - coef * m.abs()
        })
        .collect();
    (r1_min, r2_min)
}

/// Sample mean and `1/(T-1)`-normalized covariance with an `epsilon I` ridge.
pub fn estimate_first_stage(returns: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let t = returns.nrows();
    let n = returns.ncols();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 return observations, got {t}"
        )));
    }
    let mut mean = DVector::zeros(n);
    for r in 0..t {
        mean += returns.row(r).transpose();
    }
    mean /= t as f64;
    let mut cov = DMatrix::zeros(n, n);
    for r in 0..t {
        let d = returns.row(r).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= (t - 1) as f64;
    for j in 0..n {
        cov[(j, j)] += COV_EPSILON;
    }
    Ok((mean, cov))
}

/// Loads a returns matrix from CSV: one row per day, one column per asset,
/// optional header line (auto-detected and skipped).
pub fn load_returns_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(Error::Parse(format!(
                            "ragged CSV row at line {}: {} cells, expected {w}",
                            lineno + 1,
                            vals.len()
                        )));
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(e) => {
                if rows.is_empty() && width.is_none() {
                    // Header line.
                    continue;
                }
                return Err(Error::Parse(format!(
                    "non-numeric cell at line {}: {e}",
                    lineno + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("CSV contains no data rows".into()));
    }
    let t = rows.len();
    let n = rows[0].len();
    Ok(DMatrix::from_fn(t, n, |r, c| rows[r][c]))
}

/// Correlation matrix with off-diagonal entries in `[-0.5, 0.5]`: one half of
/// a Gram matrix of random unit vectors plus one half of the identity. Fewer
/// factors give stronger correlation structure.
fn random_correlation(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut factors = DMatrix::zeros(d, n);
    for j in 0..n {
        let mut col = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = col.norm();
        if norm == 0.0 {
            col[0] = 1.0;
        } else {
            col /= norm;
        }
        factors.set_column(j, &col);
    }
    let gram = factors.transpose() * &factors;
    gram * 0.5 + DMatrix::identity(n, n) * 0.5
}

fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(floor);
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// GARCH(1,1) variance recursion with fixed coefficients; returns the final
/// conditional volatility relative to the stationary one.
fn garch_relative_vol(rng: &mut ChaCha8Rng, steps: usize) -> f64 {
    let (omega, a, b): (f64, f64, f64) = (1e-5, 0.05, 0.90);
    let stationary = omega / (1.0 - a - b);
    let mut var = stationary;
    for _ in 0..steps {
        let shock: f64 = rng.sample(StandardNormal);
        let eps = var.sqrt() * shock;
        var = omega + a * eps * eps + b * var;
    }
    (var / stationary).sqrt()
}

/// Deterministic synthetic market: first-period expected returns on a daily
/// scale, second-period returns as per-period gross-like scalars in
/// `[0.5, 1.5]`, per-period volatilities spread around 10% (a lognormal
/// cross-sectional base per asset, reshuffled per scenario by a GARCH(1,1)
/// recursion), and correlations within `[-0.5, 0.5]`.
pub fn synthesize_market(n: usize, k: usize, seed: u64) -> Result<MarketData> {
    if n < 2 || k < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 assets and 1 scenario, got n={n}, K={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Expected first-period returns stay on the daily-fraction scale with a
    // tight cross-sectional spread, so the 5% floor margin keeps the return
    // floor strictly inactive on the simplex (every portfolio earns within
    // 2% of the mean). Q1 is kept on the percent-unit scale covariance
    // estimation produces on percent returns; the deliberate unit mismatch
    // with rbar1 mirrors the real-data convention and gives the first stage
    // an order-one risk term.
    let rbar1 = DVector::from_fn(n, |_, _| {
        8e-4 * (1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal))
    });
    // Cross-sectional volatility spread: lognormal around the median, wide
    // enough that dominated assets carry tiny min-variance weights for the
    // cardinality penalty to prune.
    let vol1 = DVector::from_fn(n, |_, _| {
        let base = VOL1_BASE * (VOL1_SPREAD * rng.sample::<f64, _>(StandardNormal)).exp();
        if rng.random_bool(VOL1_JUNK_FRACTION) {
            VOL1_BASE * VOL1_JUNK_MULT * (0.15 * rng.sample::<f64, _>(StandardNormal)).exp()
        } else {
            base
        }
    });
    // Near-independent first-period assets: the convex baseline then holds
    // small positive weights on the high-volatility tier instead of exact
    // zeros.
    let corr1 = random_correlation(&mut rng, n, 2 * n) * 0.5
        + DMatrix::identity(n, n) * 0.5;
    let d1 = DMatrix::from_diagonal(&vol1);
    let mut q1 = &d1 * corr1 * d1;
    for j in 0..n {
        q1[(j, j)] += COV_EPSILON;
    }

    let mut rbar2 = Vec::with_capacity(k);
    let mut q2 = Vec::with_capacity(k);
    for _ in 0..k {
        let r = DVector::from_fn(n, |_, _| {
            (1.0 + 0.25 * rng.sample::<f64, _>(StandardNormal)).clamp(0.5, 1.5)
        });
        // Scenario volatilities around 10% of the gross-return unit: a
        // lognormal asset draw times a cubed GARCH path (vol clustering), so
        // the low-volatility ordering reshuffles from scenario to scenario.
        let vols = DVector::from_fn(n, |_, _| {
            (0.10
                * (0.60 * rng.sample::<f64, _>(StandardNormal)).exp()
                * garch_relative_vol(&mut rng, 60).powi(3))
            .clamp(0.02, 0.60)
        });
        let corr = random_correlation(&mut rng, n, (n / 2).max(2));
        let d = DMatrix::from_diagonal(&vols);
        let q = floor_eigenvalues(&(&d * corr * d), COV_EPSILON);
        rbar2.push(r);
        q2.push(q);
    }

    let (r1_min, r2_min) = compute_rmin(&rbar1, &rbar2, DEFAULT_FLOOR_COEF);
    Ok(MarketData {
        n,
        k,
        rbar1,
        q1,
        rbar2,
        q2,
        r1_min,
        r2_min,
        tau_soc: vec![DEFAULT_TAU_SOC; k],
        gamma: DEFAULT_GAMMA,
    })
}
