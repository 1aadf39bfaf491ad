//! Exact second-order structure of the stationary solution.
//!
//! `Sigma = sum_{j>=1} B^{-j} e_1 e_1^T (B^{-j})^T` and `Gamma = sigma^2 Sigma`
//! are computed twice: by summing the series with a certified geometric tail
//! and by solving the fixed-point identity
//! `Sigma = B^{-1} (e_1 e_1^T + Sigma) (B^{-1})^T` as a `d^2 x d^2` linear
//! system. The two routes serve as mutual oracles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::companion::{phi_jacobian, phi_map, CompanionPair};
use crate::error::{Error, Result};
use crate::linalg::{
    is_positive_definite, min_sym_eigenvalue, relative_frobenius, spd_inverse, symmetrize, to_rows,
};
use crate::model::ModelSpec;

pub const SERIES_TERM_CAP: usize = 1_000_000;

/// Partial sums of the defining series until the certified tail
/// `||c_j||^2 * sum_{i>=1} ||B^{-i}||_F^2` drops below `tol * ||partial||_F`,
/// where `c_j` is the first column of `B^{-j}`.
pub fn sigma_series(pair: &CompanionPair, tol: f64) -> Result<DMatrix<f64>> {
    pair.require_purely_explosive()?;
    let d = pair.order();
    let tail = squared_power_tail(&pair.b_inv, SERIES_TERM_CAP)?;
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    let mut col = DVector::<f64>::zeros(d);
    col[0] = 1.0;
    for _ in 0..SERIES_TERM_CAP {
        col = &pair.b_inv * col;
        sigma += &col * col.transpose();
        let next_bound = col.norm_squared() * tail;
        if next_bound <= tol * sigma.norm() {
            return Ok(symmetrize(&sigma));
        }
    }
    Err(Error::NoConvergence(SERIES_TERM_CAP))
}

/// Upper bound on `sum_{i>=1} ||A^i||_F^2` from the first power `m` with
/// `||A^m||_F < 1`.
fn squared_power_tail(a: &DMatrix<f64>, cap: usize) -> Result<f64> {
    let mut power = a.clone();
    let mut partial = 0.0;
    for _ in 0..cap {
        let sq = power.norm_squared();
        partial += sq;
        if sq < 1.0 {
            return Ok(partial / (1.0 - sq));
        }
        power = &power * a;
    }
    Err(Error::NoConvergence(cap))
}

/// Solves `(I - B^{-1} (x) B^{-1}) vec(Sigma) = vec(B^{-1} e_1 e_1^T B^{-T})`.
pub fn sigma_fixed_point(pair: &CompanionPair) -> Result<DMatrix<f64>> {
    pair.require_purely_explosive()?;
    let d = pair.order();
    let a = &pair.b_inv;
    let kron = a.kronecker(a);
    let system = DMatrix::<f64>::identity(d * d, d * d) - kron;
    let first = a.column(0).into_owned();
    let rhs_mat = &first * first.transpose();
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let sol = system.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let sigma = DMatrix::from_column_slice(d, d, sol.as_slice());
    Ok(symmetrize(&sigma))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceStructure {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    #[serde(with = "matrix_rows")]
    pub sigma_mat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub gamma_mat: DMatrix<f64>,
    /// `gamma(0), ..., gamma(d)`.
    pub gamma: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub min_eig_sigma: f64,
    /// Relative Frobenius gap between the series and fixed-point routes.
    pub sigma_route_gap: f64,
    /// `max_{j,k} |Gamma_jk - gamma(|j-k|)| / ||Gamma||_F`.
    pub toeplitz_defect: f64,
}

impl CovarianceStructure {
    pub fn order(&self) -> usize {
        self.theta.len()
    }

    /// `(gamma(1), ..., gamma(d))`.
    pub fn gamma_lags(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gamma[1..])
    }
}

/// `Sigma`, `Gamma`, `gamma(0..=d)` and `theta*` for `theta` in the purely
/// explosive region.
pub fn covariance_structure(spec: &ModelSpec) -> Result<CovarianceStructure> {
    spec.validate()?;
    let pair = CompanionPair::new(&spec.theta)?;
    pair.require_purely_explosive()?;
    let d = pair.order();
    let theta = &spec.theta;
    let sigma2 = spec.sigma2();

    let sigma_mat = sigma_fixed_point(&pair)?;
    let series = sigma_series(&pair, 1e-13)?;
    let sigma_route_gap = relative_frobenius(&series, &sigma_mat);
    let min_eig_sigma = min_sym_eigenvalue(&sigma_mat);
    if !(min_eig_sigma > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "Sigma is not positive definite (min eigenvalue {min_eig_sigma:e})"
        )));
    }
    let gamma_mat = &sigma_mat * sigma2;

    let mut gamma: Vec<f64> = (0..d).map(|k| gamma_mat[(0, k)]).collect();
    let td = theta[d - 1];
    let gamma_d = (0..d)
        .map(|j| gamma[d - 1 - j] * theta[j])
        .sum::<f64>()
        - sigma2 / td;
    gamma.push(gamma_d);

    // gamma(0) = theta_1 gamma(1) + ... + theta_d gamma(d)
    let recon: f64 = (0..d).map(|j| theta[j] * gamma[j + 1]).sum();
    let scale = (0..d).fold(gamma[0].abs(), |m, j| m.max((theta[j] * gamma[j + 1]).abs()));
    if (recon - gamma[0]).abs() > 1e-9 * scale {
        return Err(Error::NumericalFailure(format!(
            "lag-zero identity violated: {recon} vs {}",
            gamma[0]
        )));
    }

    let gnorm = gamma_mat.norm();
    let mut toeplitz_defect = 0.0f64;
    for j in 0..d {
        for k in 0..d {
            let lag = j.abs_diff(k);
            toeplitz_defect = toeplitz_defect.max((gamma_mat[(j, k)] - gamma[lag]).abs() / gnorm);
        }
    }

    Ok(CovarianceStructure {
        theta: theta.clone(),
        sigma2,
        sigma_mat,
        gamma_mat,
        gamma,
        theta_star: phi_map(theta).value,
        min_eig_sigma,
        sigma_route_gap,
        toeplitz_defect,
    })
}

/// Scale-relative residuals of the Yule-Walker identities for `theta*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `||Gamma theta* - gamma(1..d)||`.
    pub yule_walker: f64,
    /// `||(theta* - theta) + (sigma^2 / theta_d) Gamma^{-1} e_d||`.
    pub gamma_form: f64,
    /// `||(theta* - theta) + (1 / theta_d) Sigma^{-1} e_d||`.
    pub sigma_form: f64,
    /// `max_k |gamma(k) - sum_j gamma(|j-k|) theta_j| / gamma(0)` over `1 <= k <= d-1`.
    pub restricted_yule_walker: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.yule_walker
            .max(self.gamma_form)
            .max(self.sigma_form)
            .max(self.restricted_yule_walker)
    }
}

pub fn theta_star_residuals(cs: &CovarianceStructure, spec: &ModelSpec) -> Result<ResidualReport> {
    let d = cs.order();
    if spec.order() != d {
        return Err(Error::DimensionMismatch(format!(
            "structure has order {d}, model has {}",
            spec.order()
        )));
    }
    let theta = DVector::from_column_slice(&spec.theta);
    let theta_star = DVector::from_column_slice(&cs.theta_star);
    let lags = cs.gamma_lags();
    let yw = &cs.gamma_mat * &theta_star - &lags;
    let yw_scale = (cs.gamma_mat.norm() * theta_star.norm()).max(lags.norm());

    let td = spec.theta[d - 1];
    let mut e_d = DVector::<f64>::zeros(d);
    e_d[d - 1] = 1.0;
    let diff = &theta_star - &theta;
    let gamma_inv = spd_inverse(&cs.gamma_mat)?;
    let sigma_inv = spd_inverse(&cs.sigma_mat)?;
    let via_gamma = &diff + &gamma_inv * &e_d * (cs.sigma2 / td);
    let via_sigma = &diff + &sigma_inv * &e_d * (1.0 / td);
    let diff_scale = diff.norm().max(f64::MIN_POSITIVE);

    let mut restricted = 0.0f64;
    for k in 1..d {
        let fitted: f64 = (1..=d).map(|j| cs.gamma[j.abs_diff(k)] * spec.theta[j - 1]).sum();
        restricted = restricted.max((cs.gamma[k] - fitted).abs() / cs.gamma[0]);
    }

    Ok(ResidualReport {
        yule_walker: yw.norm() / yw_scale,
        gamma_form: via_gamma.norm() / diff_scale,
        sigma_form: via_sigma.norm() / diff_scale,
        restricted_yule_walker: restricted,
    })
}

/// Limit covariances of `n^{-1/2} sum U_k` and `n^{-1/2} sum Y_k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanCltTarget {
    #[serde(with = "matrix_rows")]
    pub state_cov: DMatrix<f64>,
    pub y_var: f64,
    /// `||(I - B^{-1})^{-1} e_d - theta_d / (sum theta - 1) 1||`.
    pub column_residual: f64,
}

pub fn clt_mean_covariance(spec: &ModelSpec) -> Result<MeanCltTarget> {
    spec.validate()?;
    let pair = CompanionPair::new(&spec.theta)?;
    pair.require_purely_explosive()?;
    let d = pair.order();
    let s: f64 = spec.theta.iter().sum::<f64>() - 1.0;
    let y_var = spec.sigma2() / (s * s);
    let state_cov = DMatrix::from_element(d, d, y_var);

    let m = DMatrix::<f64>::identity(d, d) - &pair.b_inv;
    let mut e_d = DVector::<f64>::zeros(d);
    e_d[d - 1] = 1.0;
    let col = m.lu().solve(&e_d).ok_or(Error::SingularSystem)?;
    let expected = DVector::from_element(d, spec.theta[d - 1] / s);
    let column_residual = (&col - &expected).norm();
    if column_residual > 1e-10 * expected.norm().max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "(I - B^-1)^-1 e_d deviates from its closed form by {column_residual:e}"
        )));
    }
    Ok(MeanCltTarget {
        state_cov,
        y_var,
        column_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdCertificate {
    /// Smallest eigenvalue of `sum_{j=1}^d B^{-j} e_1 e_1^T B^{-jT}`.
    pub min_eig: f64,
    /// Determinant of the stacked first columns of `B^{-d}, ..., B^{-1}`.
    pub det_stack: f64,
}

pub fn positive_definiteness_certificate(pair: &CompanionPair) -> Result<PdCertificate> {
    let d = pair.order();
    let td = pair.theta()[d - 1];
    if td == 0.0 {
        return Err(Error::DegenerateTheta);
    }
    let mut partial = DMatrix::<f64>::zeros(d, d);
    let mut stack = DMatrix::<f64>::zeros(d, d);
    let mut col = DVector::<f64>::zeros(d);
    col[0] = 1.0;
    for j in 1..=d {
        col = &pair.b_inv * col;
        partial += &col * col.transpose();
        // row d - j holds (B^{-j})_{.1}
        stack.row_mut(d - j).copy_from(&col.transpose());
    }
    let min_eig = min_sym_eigenvalue(&partial);
    let det_stack = stack.determinant();
    let expected = td.abs().powi(-(d as i32));
    if (det_stack.abs() - expected).abs() > 1e-8 * expected {
        return Err(Error::PatternViolation(format!(
            "|det D| = {:e}, expected {expected:e}",
            det_stack.abs()
        )));
    }
    if !(min_eig > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "partial sum is not positive definite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(PdCertificate { min_eig, det_stack })
}

/// `(sigma^2 / theta_d^2) Gamma^{-1}`, the limit covariance of `sqrt(n)(theta_hat - theta*)`.
pub fn asymptotic_cov_lse(spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let cs = covariance_structure(spec)?;
    lse_cov_from(&cs)
}

fn lse_cov_from(cs: &CovarianceStructure) -> Result<DMatrix<f64>> {
    let td = cs.theta[cs.order() - 1];
    let cov = spd_inverse(&cs.gamma_mat)? * (cs.sigma2 / (td * td));
    check_spd(cov)
}

/// `D(theta)`: ones on the anti-diagonal positions `(i, d - i)` for
/// `i = 1..d-1` and `theta` in the last column.
pub fn delta_matrix(theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        m[(i, d - 2 - i)] = 1.0;
    }
    for (i, &t) in theta.iter().enumerate() {
        m[(i, d - 1)] = t;
    }
    m
}

/// `sigma^2 D Gamma^{-1} D^T`, the limit covariance of `sqrt(n)(phi(theta_hat) - theta)`.
pub fn asymptotic_cov_corrected(spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let cs = covariance_structure(spec)?;
    let d_mat = delta_matrix(&spec.theta);
    let gamma_inv = spd_inverse(&cs.gamma_mat)?;
    let cov = symmetrize(&(&d_mat * &gamma_inv * d_mat.transpose() * cs.sigma2));

    // delta method through the Jacobian of phi at theta*
    let jac = phi_jacobian(&cs.theta_star)?;
    let via_jacobian = symmetrize(&(&jac * lse_cov_from(&cs)? * jac.transpose()));
    let gap = relative_frobenius(&via_jacobian, &cov);
    if gap > 1e-10 {
        return Err(Error::NumericalFailure(format!(
            "delta-method routes disagree by {gap:e}"
        )));
    }
    check_spd(cov)
}

fn check_spd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if is_positive_definite(&m) {
        Ok(m)
    } else {
        Err(Error::NumericalFailure("covariance is not positive definite".into()))
    }
}

/// JSON export bundle for a covariance structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentsReport {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub sigma: Vec<Vec<f64>>,
    pub gamma_matrix: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub min_eig_sigma: f64,
    pub sigma_route_gap: f64,
    pub mean_clt_y_var: f64,
    pub mean_clt_state_cov: Vec<Vec<f64>>,
    pub asymptotic_cov_lse: Vec<Vec<f64>>,
    pub asymptotic_cov_corrected: Vec<Vec<f64>>,
    pub residuals: ResidualReport,
}

pub fn moments_report(spec: &ModelSpec) -> Result<MomentsReport> {
    let cs = covariance_structure(spec)?;
    let residuals = theta_star_residuals(&cs, spec)?;
    let mean = clt_mean_covariance(spec)?;
    Ok(MomentsReport {
        theta: cs.theta.clone(),
        sigma2: cs.sigma2,
        sigma: to_rows(&cs.sigma_mat),
        gamma_matrix: to_rows(&cs.gamma_mat),
        gamma: cs.gamma.clone(),
        theta_star: cs.theta_star.clone(),
        min_eig_sigma: cs.min_eig_sigma,
        sigma_route_gap: cs.sigma_route_gap,
        mean_clt_y_var: mean.y_var,
        mean_clt_state_cov: to_rows(&mean.state_cov),
        asymptotic_cov_lse: to_rows(&lse_cov_from(&cs)?),
        asymptotic_cov_corrected: to_rows(&asymptotic_cov_corrected(spec)?),
        residuals,
    })
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::{from_rows, to_rows};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
