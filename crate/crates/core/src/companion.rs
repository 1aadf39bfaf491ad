//! Companion-matrix algebra for AR(d) models.
//!
//! `B(theta)` carries `theta` on its first row and the shifted identity on
//! the subdiagonal, so that `U_n = B U_{n-1} + Z_n e_1` for the state
//! `U_n = (Y_n, ..., Y_{n-d+1})`. Its inverse exists iff `theta_d != 0` and is
//! always assembled from the closed form, never by numerical inversion.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_theta, ModelSpec};

/// Moduli within this distance of 1 are treated as lying on the unit circle.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Maximum relative polynomial residual accepted for a reported eigenvalue.
const ROOT_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    PurelyExplosive,
    Stable,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Complex64>,
    pub rho: f64,
    pub rho_lower: f64,
    pub region: Region,
    /// Some eigenvalue modulus is within [`BOUNDARY_TOL`] of 1.
    pub on_boundary: bool,
}

impl SpectralReport {
    fn from_eigenvalues(eigenvalues: Vec<Complex64>) -> Self {
        let moduli = eigenvalues.iter().map(|l| l.norm());
        let (rho_lower, rho) = moduli.fold((f64::INFINITY, 0.0f64), |(lo, hi), m| {
            (lo.min(m), hi.max(m))
        });
        let on_boundary = eigenvalues
            .iter()
            .any(|l| (l.norm() - 1.0).abs() <= BOUNDARY_TOL);
        let region = if on_boundary {
            Region::Other
        } else if rho_lower > 1.0 {
            Region::PurelyExplosive
        } else if rho < 1.0 {
            Region::Stable
        } else {
            Region::Other
        };
        SpectralReport {
            eigenvalues,
            rho,
            rho_lower,
            region,
            on_boundary,
        }
    }
}

/// `B(theta)` together with its closed-form inverse and spectral data.
#[derive(Debug, Clone)]
pub struct CompanionPair {
    theta: Vec<f64>,
    pub b: DMatrix<f64>,
    pub b_inv: DMatrix<f64>,
    pub spectral: SpectralReport,
}

impl CompanionPair {
    pub fn new(theta: &[f64]) -> Result<Self> {
        validate_theta(theta)?;
        let b = companion_matrix(theta);
        let b_inv = closed_form_inverse(theta)?;
        let d = theta.len();
        let residual = (&b * &b_inv - DMatrix::<f64>::identity(d, d)).norm();
        let scale = (b.norm() * b_inv.norm()).max(1.0);
        if residual > 1e-12 * scale {
            return Err(Error::NumericalFailure(format!(
                "closed-form inverse residual {residual:e} exceeds 1e-12 * {scale:e}"
            )));
        }
        let spectral = spectral_of_theta(theta)?;
        Ok(CompanionPair {
            theta: theta.to_vec(),
            b,
            b_inv,
            spectral,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn order(&self) -> usize {
        self.theta.len()
    }

    pub fn region(&self) -> Region {
        self.spectral.region
    }

    pub fn require_purely_explosive(&self) -> Result<()> {
        if self.spectral.region == Region::PurelyExplosive {
            Ok(())
        } else {
            Err(Error::NotPurelyExplosive {
                rho_lower: self.spectral.rho_lower,
            })
        }
    }
}

pub fn build_companion(spec: &ModelSpec) -> Result<CompanionPair> {
    CompanionPair::new(&spec.theta)
}

/// `B(theta)`; defined for every finite `theta`.
pub fn companion_matrix(theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut b = DMatrix::zeros(d, d);
    for (j, &t) in theta.iter().enumerate() {
        b[(0, j)] = t;
    }
    for i in 1..d {
        b[(i, i - 1)] = 1.0;
    }
    b
}

/// `B(theta)^{-1}`: shifted identity in the top-right block, last row
/// `(1, -theta_1, ..., -theta_{d-1}) / theta_d`.
pub fn closed_form_inverse(theta: &[f64]) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let td = theta[d - 1];
    if td == 0.0 {
        return Err(Error::DegenerateTheta);
    }
    let mut inv = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        inv[(i, i + 1)] = 1.0;
    }
    inv[(d - 1, 0)] = 1.0 / td;
    for j in 1..d {
        inv[(d - 1, j)] = -theta[j - 1] / td;
    }
    Ok(inv)
}

/// Characteristic polynomial `lambda^d - theta_1 lambda^{d-1} - ... - theta_d`
/// at `lambda`, its derivative, and the coefficient scale
/// `(1 + sum |theta_j|) max(1, |lambda|)^d` used for relative residuals.
fn char_poly(theta: &[f64], lambda: Complex64) -> (Complex64, Complex64, f64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &t in theta {
        dp = dp * lambda + p;
        p = p * lambda - t;
    }
    let coeff = 1.0 + theta.iter().map(|t| t.abs()).sum::<f64>();
    let scale = coeff * lambda.norm().max(1.0).powi(theta.len() as i32);
    (p, dp, scale)
}

/// Eigenvalues of `B(theta)` via a real Schur decomposition, Newton-polished
/// on the characteristic polynomial and checked against it.
pub fn spectral_of_theta(theta: &[f64]) -> Result<SpectralReport> {
    validate_theta(theta)?;
    let d = theta.len();
    let raw: Vec<Complex64> = if d == 1 {
        vec![Complex64::new(theta[0], 0.0)]
    } else {
        let schur = Schur::try_new(companion_matrix(theta), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?;
        schur.complex_eigenvalues().iter().copied().collect()
    };

    let mut eigenvalues = Vec::with_capacity(d);
    for lambda in raw {
        let mut best = lambda;
        let (p0, _, s0) = char_poly(theta, best);
        let mut best_res = p0.norm() / s0;
        let mut cur = lambda;
        for _ in 0..3 {
            let (p, dp, _) = char_poly(theta, cur);
            if dp.norm() == 0.0 {
                break;
            }
            cur -= p / dp;
            let (pn, _, sn) = char_poly(theta, cur);
            let res = pn.norm() / sn;
            if res.is_finite() && res < best_res {
                best = cur;
                best_res = res;
            } else {
                break;
            }
        }
        if lambda.im == 0.0 {
            best.im = 0.0;
        }
        if !(best_res <= ROOT_RESIDUAL_TOL) {
            return Err(Error::NumericalFailure(format!(
                "eigenvalue {best} leaves characteristic residual {best_res:e}"
            )));
        }
        eigenvalues.push(best);
    }
    Ok(SpectralReport::from_eigenvalues(eigenvalues))
}

pub fn spectral_info(pair: &CompanionPair) -> Result<SpectralReport> {
    spectral_of_theta(&pair.theta)
}

/// Closed-form region membership for `d = 2` (stability triangle and its
/// purely explosive complement).
pub fn classify_region_d2(theta: &[f64]) -> Result<Region> {
    if theta.len() != 2 {
        return Err(Error::WrongOrder {
            expected: 2,
            got: theta.len(),
        });
    }
    let (t1, t2) = (theta[0], theta[1]);
    let a = t1.abs();
    Ok(if a < 2.0 && -1.0 < t2 && t2 < 1.0 - a {
        Region::Stable
    } else if t2 > 1.0 + a || (t2 < -1.0 && t2 < 1.0 - a) {
        Region::PurelyExplosive
    } else {
        Region::Other
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiImage {
    pub value: Vec<f64>,
    /// `theta_d == 0`: the zero extension was applied.
    pub extended: bool,
}

/// The involution `phi(theta) = (-theta_{d-1}/theta_d, ..., -theta_1/theta_d, 1/theta_d)`,
/// extended by the zero vector where `theta_d = 0`.
pub fn phi_map(theta: &[f64]) -> PhiImage {
    let d = theta.len();
    let td = theta[d - 1];
    if td == 0.0 {
        return PhiImage {
            value: vec![0.0; d],
            extended: true,
        };
    }
    let mut value = Vec::with_capacity(d);
    for i in 1..d {
        value.push(-theta[d - 1 - i] / td);
    }
    value.push(1.0 / td);
    PhiImage {
        value,
        extended: false,
    }
}

/// Jacobian of `phi` at `x` (requires `x_d != 0`).
pub fn phi_jacobian(x: &[f64]) -> Result<DMatrix<f64>> {
    let d = x.len();
    let xd = x[d - 1];
    if xd == 0.0 {
        return Err(Error::DegenerateTheta);
    }
    let mut j = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        // phi_i = -x_{d-1-i} / x_d (0-based)
        j[(i, d - 2 - i)] = -1.0 / xd;
        j[(i, d - 1)] = x[d - 2 - i] / (xd * xd);
    }
    j[(d - 1, d - 1)] = -1.0 / (xd * xd);
    Ok(j)
}

/// First column of `B^{-j}`, checked against its triangular pattern: the
/// leading `d - j` entries vanish and entry `d - j + 1` (1-based) is `1/theta_d`.
pub fn inverse_power_first_column(pair: &CompanionPair, j: usize) -> Result<DVector<f64>> {
    let d = pair.order();
    if j == 0 || j > d {
        return Err(Error::InvalidSpec(format!("power j = {j} outside 1..={d}")));
    }
    let mut col = DVector::zeros(d);
    col[0] = 1.0;
    for _ in 0..j {
        col = &pair.b_inv * col;
    }
    let inv_td = 1.0 / pair.theta[d - 1];
    for k in 0..d - j {
        if col[k].abs() > 1e-12 {
            return Err(Error::PatternViolation(format!(
                "(B^-{j})[{},1] = {:e}, expected 0",
                k + 1,
                col[k]
            )));
        }
    }
    let pivot = col[d - j];
    if (pivot - inv_td).abs() > 1e-12 * inv_td.abs() {
        return Err(Error::PatternViolation(format!(
            "(B^-{j})[{},1] = {pivot}, expected {inv_td}",
            d - j + 1
        )));
    }
    Ok(col)
}

/// Coefficients of the AR polynomial whose characteristic roots are `roots`.
/// The root set must be closed under conjugation.
pub fn theta_from_roots(roots: &[Complex64]) -> Result<Vec<f64>> {
    if roots.is_empty() {
        return Err(Error::InvalidSpec("need at least one root".into()));
    }
    // monic coefficients, highest degree first
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    coeffs[1..]
        .iter()
        .map(|c| {
            if c.im.abs() > 1e-10 * scale {
                Err(Error::InvalidSpec("roots are not closed under conjugation".into()))
            } else {
                Ok(-c.re)
            }
        })
        .collect()
}
