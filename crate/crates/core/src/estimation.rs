//! Least-squares estimation on an observed path and the weighted noise sums
//! `n^{-1/2} sum h(U_k) Z_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::companion::phi_map;
use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, symmetrize};
use crate::model::ModelSpec;
use crate::moments::covariance_structure;
use crate::simulate::{simulate_stationary, SeriesView, DEFAULT_TOL};

/// Relative eigenvalue cutoff below which the Gram matrix counts as singular.
pub const GRAM_SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    /// `phi(theta_hat)`.
    pub theta_corrected: Vec<f64>,
    /// The last coordinate of `theta_hat` was zero and `phi` fell back to zero.
    pub corrected_extended: bool,
    pub n: usize,
    pub gram_singular: bool,
    pub gram_min_eig: f64,
    /// `sqrt(n) (theta_hat - theta*)`, when targets were supplied.
    pub normalized_dev_star: Option<Vec<f64>>,
    /// `sqrt(n) (phi(theta_hat) - theta)`, when targets were supplied.
    pub normalized_dev_theta: Option<Vec<f64>>,
    pub target_theta: Option<Vec<f64>>,
    pub target_theta_star: Option<Vec<f64>>,
}

/// `(1/n) sum U_{k-1} U_{k-1}^T` and `(1/n) sum U_{k-1} Y_k` over `k = 1..n`.
#[derive(Debug, Clone)]
pub struct GramMoments {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub n: usize,
}

pub fn gram_moments(view: SeriesView<'_>) -> Result<GramMoments> {
    let d = view.d;
    let n = view.n();
    if n < d + 1 {
        return Err(Error::PathTooShort { need: d + 1, have: n });
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut cross = DVector::<f64>::zeros(d);
    let mut u = vec![0.0; d];
    for k in 1..=n {
        view.state_into(k - 1, &mut u);
        let yk = view.y(k as isize);
        for i in 0..d {
            cross[i] += u[i] * yk;
            for j in 0..=i {
                gram[(i, j)] += u[i] * u[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    let scale = 1.0 / n as f64;
    Ok(GramMoments {
        gram: gram * scale,
        cross: cross * scale,
        n,
    })
}

pub fn lse(view: SeriesView<'_>) -> Result<EstimationResult> {
    let d = view.d;
    let m = gram_moments(view)?;
    let gram_min_eig = min_sym_eigenvalue(&m.gram);
    let threshold = GRAM_SINGULAR_REL * m.gram.trace() / d as f64;
    let solved = if gram_min_eig > threshold {
        m.gram.clone().cholesky().map(|c| c.solve(&m.cross))
    } else {
        None
    };
    let gram_singular = solved.is_none();
    let theta_hat = solved.map_or_else(|| vec![0.0; d], |v| v.as_slice().to_vec());
    let corrected = phi_map(&theta_hat);
    Ok(EstimationResult {
        theta_hat,
        theta_corrected: corrected.value,
        corrected_extended: corrected.extended,
        n: m.n,
        gram_singular,
        gram_min_eig,
        normalized_dev_star: None,
        normalized_dev_theta: None,
        target_theta: None,
        target_theta_star: None,
    })
}

/// [`lse`] with normalized deviations against the supplied `theta` and `theta*`.
pub fn lse_with_targets(
    view: SeriesView<'_>,
    theta: &[f64],
    theta_star: &[f64],
) -> Result<EstimationResult> {
    let d = view.d;
    for (name, v) in [("theta", theta), ("theta_star", theta_star)] {
        if v.len() != d {
            return Err(Error::WrongOrder {
                expected: d,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("{name} has non-finite entries")));
        }
    }
    let mut r = lse(view)?;
    let root_n = (r.n as f64).sqrt();
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| root_n * (x - y)).collect();
    r.normalized_dev_star = Some(dev(&r.theta_hat, theta_star));
    r.normalized_dev_theta = Some(dev(&r.theta_corrected, theta));
    r.target_theta = Some(theta.to_vec());
    r.target_theta_star = Some(theta_star.to_vec());
    Ok(r)
}

/// Weight functions `h: R^d -> R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HSpec {
    Identity,
    /// `x -> x_j`, 1-based.
    Coordinate { j: usize },
    /// `x -> M x`, `M` given by rows.
    Linear { rows: Vec<Vec<f64>> },
    /// `x -> -(1/theta_d) (x_d, ..., x_1)`.
    ProofMap,
    /// Coordinatewise `tanh`.
    Tanh,
    /// `x -> 1`.
    Constant,
}

impl HSpec {
    pub fn output_dim(&self, d: usize) -> Result<usize> {
        match self {
            HSpec::Identity | HSpec::ProofMap | HSpec::Tanh => Ok(d),
            HSpec::Constant => Ok(1),
            HSpec::Coordinate { j } => {
                if (1..=d).contains(j) {
                    Ok(1)
                } else {
                    Err(Error::BadH(format!("coordinate {j} outside 1..={d}")))
                }
            }
            HSpec::Linear { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
                    Err(Error::BadH(format!("linear map must have {d} columns")))
                } else if rows.iter().flatten().any(|x| !x.is_finite()) {
                    Err(Error::BadH("linear map has non-finite entries".into()))
                } else {
                    Ok(rows.len())
                }
            }
        }
    }

    /// The matrix `M` when `h` is linear.
    pub fn linear_matrix(&self, theta: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let d = theta.len();
        self.output_dim(d)?;
        Ok(match self {
            HSpec::Identity => Some(DMatrix::identity(d, d)),
            HSpec::Coordinate { j } => {
                let mut m = DMatrix::zeros(1, d);
                m[(0, j - 1)] = 1.0;
                Some(m)
            }
            HSpec::Linear { rows } => Some(DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k])),
            HSpec::ProofMap => {
                let td = theta[d - 1];
                if td == 0.0 {
                    return Err(Error::DegenerateTheta);
                }
                Some(DMatrix::from_fn(d, d, |i, k| if i + k == d - 1 { -1.0 / td } else { 0.0 }))
            }
            HSpec::Tanh | HSpec::Constant => None,
        })
    }

    pub fn name(&self) -> String {
        match self {
            HSpec::Identity => "identity".into(),
            HSpec::Coordinate { j } => format!("coordinate_{j}"),
            HSpec::Linear { rows } => format!("linear_{}x{}", rows.len(), rows[0].len()),
            HSpec::ProofMap => "proof_map".into(),
            HSpec::Tanh => "tanh".into(),
            HSpec::Constant => "constant".into(),
        }
    }
}

/// Evaluates `h` through a prepared closure writing into an output buffer.
pub(crate) struct HEval {
    kind: HKind,
    m: usize,
}

enum HKind {
    Matrix(DMatrix<f64>),
    Tanh,
    Constant,
}

impl HEval {
    pub(crate) fn new(h: &HSpec, theta: &[f64]) -> Result<Self> {
        let m = h.output_dim(theta.len())?;
        let kind = match h.linear_matrix(theta)? {
            Some(mat) => HKind::Matrix(mat),
            None if *h == HSpec::Tanh => HKind::Tanh,
            None => HKind::Constant,
        };
        Ok(HEval { kind, m })
    }

    pub(crate) fn dim(&self) -> usize {
        self.m
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            HKind::Matrix(mat) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|k| mat[(i, k)] * x[k]).sum();
                }
            }
            HKind::Tanh => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.tanh();
                }
            }
            HKind::Constant => out[0] = 1.0,
        }
    }
}

/// `n^{-1/2} sum_{k=1}^n h(U_k) Z_k` with the view's noise.
pub fn h_weighted_statistic(view: SeriesView<'_>, theta: &[f64], h: &HSpec) -> Result<Vec<f64>> {
    if theta.len() != view.d {
        return Err(Error::WrongOrder {
            expected: view.d,
            got: theta.len(),
        });
    }
    let z = view
        .z
        .ok_or_else(|| Error::DimensionMismatch("path carries no noise".into()))?;
    let eval = HEval::new(h, theta)?;
    let n = view.n();
    let mut acc = vec![0.0; eval.dim()];
    let mut u = vec![0.0; view.d];
    let mut hu = vec![0.0; eval.dim()];
    for k in 1..=n {
        view.state_into(k, &mut u);
        eval.apply(&u, &mut hu);
        let zk = z[k - 1];
        for (a, v) in acc.iter_mut().zip(&hu) {
            *a += v * zk;
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(acc.into_iter().map(|a| a * scale).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetCov {
    #[serde(with = "crate::moments::matrix_rows")]
    pub cov: DMatrix<f64>,
    /// Entrywise standard errors when the target was integrated numerically.
    #[serde(with = "option_rows")]
    pub std_err: Option<DMatrix<f64>>,
    pub analytic: bool,
}

/// `sigma^2 E[h(U_1) h(U_1)^T]`: exact for linear and constant `h`;
/// otherwise averaged over `draws` consecutive stationary states with a
/// batch-means standard error.
pub fn target_cov_h(spec: &ModelSpec, h: &HSpec, draws: usize, seed: u64) -> Result<TargetCov> {
    let sigma2 = spec.sigma2();
    let d = spec.order();
    h.output_dim(d)?;
    if *h == HSpec::Constant {
        return Ok(TargetCov {
            cov: DMatrix::from_element(1, 1, sigma2),
            std_err: None,
            analytic: true,
        });
    }
    if let Some(m) = h.linear_matrix(&spec.theta)? {
        let cs = covariance_structure(spec)?;
        let cov = symmetrize(&(&m * &cs.gamma_mat * m.transpose() * sigma2));
        return Ok(TargetCov {
            cov,
            std_err: None,
            analytic: true,
        });
    }

    let batches = 100;
    if draws < batches * 10 {
        return Err(Error::BadSpec(format!("at least {} draws required", batches * 10)));
    }
    let eval = HEval::new(h, &spec.theta)?;
    let path = simulate_stationary(spec, draws, seed, DEFAULT_TOL)?;
    let view = path.view();
    let m = eval.dim();
    let mut u = vec![0.0; d];
    let mut hu = vec![0.0; m];
    let per_batch = draws / batches;
    let mut batch_means = vec![DMatrix::<f64>::zeros(m, m); batches];
    for (b, bm) in batch_means.iter_mut().enumerate() {
        for k in b * per_batch + 1..=(b + 1) * per_batch {
            view.state_into(k, &mut u);
            eval.apply(&u, &mut hu);
            for i in 0..m {
                for j in 0..m {
                    bm[(i, j)] += hu[i] * hu[j];
                }
            }
        }
        *bm *= sigma2 / per_batch as f64;
    }
    let mean = batch_means.iter().fold(DMatrix::zeros(m, m), |a, b| a + b) / batches as f64;
    let var = batch_means
        .iter()
        .fold(DMatrix::zeros(m, m), |a: DMatrix<f64>, b| {
            a + (b - &mean).map(|x| x * x)
        })
        / (batches as f64 - 1.0);
    let std_err = var.map(|v| (v / batches as f64).sqrt());
    Ok(TargetCov {
        cov: symmetrize(&mean),
        std_err: Some(std_err),
        analytic: false,
    })
}

/// `(1/n) sum_{j=1}^{n-k} Y_j Y_{j+k}` without mean correction.
pub fn sample_autocovariance(view: SeriesView<'_>, k: usize) -> Result<f64> {
    let products = lag_products(view, k)?;
    Ok(products.iter().sum::<f64>() / view.n() as f64)
}

/// [`sample_autocovariance`] with a batch-means standard error.
pub fn sample_autocovariance_with_se(view: SeriesView<'_>, k: usize, batches: usize) -> Result<(f64, f64)> {
    let products = lag_products(view, k)?;
    let value = products.iter().sum::<f64>() / view.n() as f64;
    Ok((value, batch_means_se(&products, batches)?))
}

fn lag_products(view: SeriesView<'_>, k: usize) -> Result<Vec<f64>> {
    let n = view.n();
    if k > view.d || n < k + 2 {
        return Err(Error::LagTooLarge {
            lag: k,
            max: view.d.min(n.saturating_sub(2)),
        });
    }
    Ok((1..=n - k)
        .map(|j| view.y(j as isize) * view.y((j + k) as isize))
        .collect())
}

/// Standard error of the mean of a weakly dependent series from
/// `batches` contiguous batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || series.len() < batches {
        return Err(Error::BadSpec(format!(
            "{} values cannot form {batches} batches",
            series.len()
        )));
    }
    let per = series.len() / batches;
    let means: Vec<f64> = series
        .chunks_exact(per)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / per as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    Ok((var / batches as f64).sqrt())
}

mod option_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::{from_rows, to_rows};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use crate::simulate::SimulationPath;

    fn path(theta: &[f64], n: usize, seed: u64) -> SimulationPath {
        let spec = ModelSpec::gaussian(theta.to_vec(), 1.0).unwrap();
        simulate_stationary(&spec, n, seed, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn scalar_estimate_tends_to_theta_star() {
        let p = path(&[2.0], 10_000, 5);
        let r = lse_with_targets(p.view(), &[2.0], &[0.5]).unwrap();
        assert!((r.theta_hat[0] - 0.5).abs() <= 0.05, "{:?}", r.theta_hat);
        assert!(!r.gram_singular);
        assert!((r.theta_corrected[0] - 1.0 / r.theta_hat[0]).abs() < 1e-15);
        let dev = r.normalized_dev_star.unwrap()[0];
        assert!((dev - 100.0 * (r.theta_hat[0] - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn second_order_estimate() {
        let p = path(&[0.0, 4.0], 10_000, 9);
        let r = lse(p.view()).unwrap();
        let err = ((r.theta_hat[0]).powi(2) + (r.theta_hat[1] - 0.25).powi(2)).sqrt();
        assert!(err <= 0.05, "{:?}", r.theta_hat);
    }

    #[test]
    fn zero_path_is_singular() {
        let y = vec![0.0; 52];
        let view = SeriesView::new(2, &y, None).unwrap();
        let r = lse(view).unwrap();
        assert!(r.gram_singular);
        assert_eq!(r.theta_hat, vec![0.0, 0.0]);
        assert!(r.corrected_extended);
        assert_eq!(r.theta_corrected, vec![0.0, 0.0]);
    }

    #[test]
    fn short_path_rejected() {
        let y = vec![1.0, 2.0, 3.0];
        let view = SeriesView::new(2, &y, None).unwrap();
        assert!(matches!(lse(view), Err(Error::PathTooShort { .. })));
    }

    #[test]
    fn exact_recovery_on_noiseless_stable_recursion() {
        // Y_k = 0.5 Y_{k-1} + 0.2 Y_{k-2} + tiny perturbation keeps the Gram matrix regular
        let mut y = vec![1.0, -0.3];
        for k in 2..400 {
            let next = 0.5 * y[k - 1] + 0.2 * y[k - 2] + if k % 7 == 0 { 1.0 } else { 0.0 };
            y.push(next);
        }
        // ordinary least squares of the same design via the normal equations, written out
        let view = SeriesView::new(2, &y, None).unwrap();
        let r = lse(view).unwrap();
        let (mut s11, mut s12, mut s22, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 2..y.len() {
            let (a, b, t) = (y[k - 1], y[k - 2], y[k]);
            s11 += a * a;
            s12 += a * b;
            s22 += b * b;
            c1 += a * t;
            c2 += b * t;
        }
        let det = s11 * s22 - s12 * s12;
        let t1 = (s22 * c1 - s12 * c2) / det;
        let t2 = (s11 * c2 - s12 * c1) / det;
        assert!((r.theta_hat[0] - t1).abs() < 1e-10 && (r.theta_hat[1] - t2).abs() < 1e-10);
    }

    #[test]
    fn gram_and_cross_laws() {
        let spec = ModelSpec::gaussian(vec![0.0, 4.0], 1.0).unwrap();
        let cs = covariance_structure(&spec).unwrap();
        let p = simulate_stationary(&spec, 100_000, 21, DEFAULT_TOL).unwrap();
        let m = gram_moments(p.view()).unwrap();
        assert!(relative_frobenius(&m.gram, &cs.gamma_mat) <= 0.05);
        let target = &cs.gamma_mat * DVector::from_column_slice(&cs.theta_star);
        assert!((&m.cross - &target).norm() / target.norm() <= 0.05);
    }

    #[test]
    fn orthogonality_law() {
        let n = 100_000;
        let p = path(&[2.0], n, 33);
        for h in [HSpec::Identity, HSpec::Tanh, HSpec::Constant] {
            let s = h_weighted_statistic(p.view(), &[2.0], &h).unwrap();
            let spec = ModelSpec::gaussian(vec![2.0], 1.0).unwrap();
            let sd = target_cov_h(&spec, &h, 100_000, 1).unwrap().cov[(0, 0)].sqrt();
            // mean of h(U_k) Z_k is the statistic over sqrt(n)
            assert!((s[0] / (n as f64).sqrt()).abs() <= 5.0 * sd / (n as f64).sqrt(), "{h:?}");
        }
    }

    #[test]
    fn linear_targets() {
        let spec = ModelSpec::gaussian(vec![0.0, 4.0], 2.0).unwrap();
        let cs = covariance_structure(&spec).unwrap();
        let id = target_cov_h(&spec, &HSpec::Identity, 0, 0).unwrap();
        assert!(id.analytic);
        assert!(relative_frobenius(&id.cov, &(&cs.gamma_mat * 2.0)) < 1e-14);
        let c1 = target_cov_h(&spec, &HSpec::Coordinate { j: 1 }, 0, 0).unwrap();
        assert!((c1.cov[(0, 0)] - 2.0 * cs.gamma[0]).abs() < 1e-14);
        let one = target_cov_h(&spec, &HSpec::Constant, 0, 0).unwrap();
        assert_eq!(one.cov[(0, 0)], 2.0);
        let proof = target_cov_h(&spec, &HSpec::ProofMap, 0, 0).unwrap();
        assert!((proof.cov[(1, 1)] - 2.0 * cs.gamma[0] / 16.0).abs() < 1e-14);
    }

    #[test]
    fn tanh_target_matches_quadrature() {
        // for Gaussian noise Y_1 ~ N(0, 1/3) when theta = 2
        let spec = ModelSpec::gaussian(vec![2.0], 1.0).unwrap();
        let t = target_cov_h(&spec, &HSpec::Tanh, 1_000_000, 4).unwrap();
        let s = (1.0f64 / 3.0).sqrt();
        let steps = 20_000;
        let (lo, hi) = (-10.0 * s, 10.0 * s);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let dens = (-0.5 * (x / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            integral += w * x.tanh().powi(2) * dens * h;
        }
        let se = t.std_err.unwrap()[(0, 0)];
        assert!(se > 0.0 && se < 1e-3);
        assert!((t.cov[(0, 0)] - integral).abs() <= 5.0 * se, "{} vs {integral}", t.cov[(0, 0)]);
    }

    #[test]
    fn bad_h_detected() {
        assert!(matches!(HSpec::Coordinate { j: 3 }.output_dim(2), Err(Error::BadH(_))));
        let h = HSpec::Linear {
            rows: vec![vec![1.0, 2.0, 3.0]],
        };
        assert!(matches!(h.output_dim(2), Err(Error::BadH(_))));
        let p = path(&[0.0, 4.0], 50, 1);
        assert!(h_weighted_statistic(p.view(), &[0.0, 4.0], &h).is_err());
    }

    #[test]
    fn constant_h_is_scaled_noise_sum() {
        let p = path(&[2.0], 500, 8);
        let s = h_weighted_statistic(p.view(), &[2.0], &HSpec::Constant).unwrap();
        let direct = p.noise.values[..500].iter().sum::<f64>() / 500f64.sqrt();
        assert!((s[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn autocovariances() {
        let p = path(&[2.0], 100_000, 17);
        let (g0, se0) = sample_autocovariance_with_se(p.view(), 0, 100).unwrap();
        let (g1, se1) = sample_autocovariance_with_se(p.view(), 1, 100).unwrap();
        assert!((g0 - 1.0 / 3.0).abs() <= 5.0 * se0, "{g0} {se0}");
        assert!((g1 - 1.0 / 6.0).abs() <= 5.0 * se1, "{g1} {se1}");
        assert!(matches!(sample_autocovariance(p.view(), 2), Err(Error::LagTooLarge { .. })));
        let y = vec![0.0; 11];
        let zero = SeriesView::new(1, &y, None).unwrap();
        assert_eq!(sample_autocovariance(zero, 1).unwrap(), 0.0);
    }

    #[test]
    fn estimation_result_round_trips() {
        let p = path(&[2.0], 200, 2);
        let r = lse_with_targets(p.view(), &[2.0], &[0.5]).unwrap();
        let back: EstimationResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let h: HSpec = serde_json::from_str(r#"{"kind":"coordinate","j":2}"#).unwrap();
        assert_eq!(h, HSpec::Coordinate { j: 2 });
    }
}
