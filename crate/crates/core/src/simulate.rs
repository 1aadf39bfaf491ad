//! Simulation of the stationary (noncausal) solution of a purely explosive
//! AR(d), of the forward-looking AR under stability, and of the divergence of
//! non-stationary initial values.
//!
//! The stationary state is `U_n = -sum_{k>=1} B^{-k} e_1 Z_{n+k}`. Instead of
//! summing the series at every index we start from `U_{n+K} = 0` and run the
//! exact backward recursion `U_{k-1} = B^{-1}(U_k - e_1 Z_k)`, which on the
//! scalar level reads
//! `Y_{k-d} = (Y_k - Z_k - theta_1 Y_{k-1} - ... - theta_{d-1} Y_{k-d+1}) / theta_d`.
//! The only truncation error is `B^{-K} U_{n+K}` injected at index `n`; it is
//! contracted on the way back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::companion::{companion_matrix, phi_map, spectral_of_theta, CompanionPair, Region};
use crate::error::{Error, Result};
use crate::model::{validate_theta, ModelSpec, NoiseSpec};
use crate::noise::{generate_noise, NoiseDraw};

pub const DEFAULT_HORIZON_CAP: usize = 1_000_000;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Norm growth beyond which forward iteration of an explosive state stops.
pub const OVERFLOW_NORM: f64 = 1e300;

/// Computable majorants for the Frobenius norms of the powers of a matrix
/// `A` with spectral radius below one.
#[derive(Debug, Clone)]
pub struct PowerProfile {
    a: DMatrix<f64>,
    /// Smallest `m` with `||A^m||_F < 1`.
    pub probe_power: usize,
    /// `q = ||A^m||_F^{1/m}`.
    pub ratio: f64,
    /// Upper bound on `sum_{j>=1} ||A^j||_F`.
    pub sum_bound: f64,
    /// Upper bound on `max(1, sup_{j>=1} ||A^j||_F)`.
    pub sup_bound: f64,
}

impl PowerProfile {
    pub fn new(a: &DMatrix<f64>, cap: usize) -> Result<Self> {
        let mut power = a.clone();
        let mut partial = 0.0;
        let mut sup = 1.0f64;
        for m in 1..=cap {
            let norm = power.norm();
            partial += norm;
            sup = sup.max(norm);
            if norm < 1.0 {
                // j = i m + r: ||A^j|| <= ||A^m||^i ||A^r||
                return Ok(PowerProfile {
                    a: a.clone(),
                    probe_power: m,
                    ratio: norm.powf(1.0 / m as f64),
                    sum_bound: partial / (1.0 - norm),
                    sup_bound: sup,
                });
            }
            power = &power * a;
        }
        Err(Error::HorizonOverflow {
            cap,
            bound: f64::INFINITY,
        })
    }

    /// `||A^k||_F`.
    pub fn power_norm(&self, k: usize) -> f64 {
        let d = self.a.nrows();
        let mut p = DMatrix::<f64>::identity(d, d);
        for _ in 0..k {
            p = &p * &self.a;
        }
        p.norm()
    }
}

/// Truncation horizon `K` and its certified bound on the expected maximal
/// state error `sigma * ||A^K||_F * S * G`, with `S` the tail-sum factor of
/// the process and `G` the transient-growth factor of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub k: usize,
    pub bound: f64,
}

fn horizon_for(
    profile: &PowerProfile,
    tail_factor: f64,
    sigma: f64,
    tol: f64,
    cap: usize,
) -> Result<Horizon> {
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tolerance must be positive, got {tol}")));
    }
    let scale = sigma * tail_factor * profile.sup_bound;
    let mut power = profile.a.clone();
    let mut bound = f64::INFINITY;
    for k in 1..=cap {
        bound = scale * power.norm();
        if bound <= tol {
            return Ok(Horizon { k, bound });
        }
        power = &power * &profile.a;
    }
    Err(Error::HorizonOverflow { cap, bound })
}

fn bound_at(profile: &PowerProfile, tail_factor: f64, sigma: f64, k: usize) -> f64 {
    sigma * tail_factor * profile.sup_bound * profile.power_norm(k)
}

/// Horizon for the backward construction of the stationary explosive path.
pub fn truncation_horizon(pair: &CompanionPair, tol: f64, sigma: f64) -> Result<Horizon> {
    truncation_horizon_capped(pair, tol, sigma, DEFAULT_HORIZON_CAP)
}

pub fn truncation_horizon_capped(
    pair: &CompanionPair,
    tol: f64,
    sigma: f64,
    cap: usize,
) -> Result<Horizon> {
    pair.require_purely_explosive()?;
    let profile = PowerProfile::new(&pair.b_inv, cap)?;
    horizon_for(&profile, profile.sum_bound, sigma, tol, cap)
}

/// Borrowed view of an observed series: `y` holds `Y_{-d+1}, ..., Y_n` and
/// `z`, when present, holds `Z_1, ..., Z_n`.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub d: usize,
    pub y: &'a [f64],
    pub z: Option<&'a [f64]>,
}

impl<'a> SeriesView<'a> {
    pub fn new(d: usize, y: &'a [f64], z: Option<&'a [f64]>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSpec("order must be at least 1".into()));
        }
        if y.len() < d {
            return Err(Error::PathTooShort {
                need: d,
                have: y.len(),
            });
        }
        if let Some(z) = z {
            if z.len() < y.len() - d {
                return Err(Error::DimensionMismatch(format!(
                    "{} noise values for {} observations",
                    z.len(),
                    y.len() - d
                )));
            }
        }
        Ok(SeriesView { d, y, z })
    }

    /// Number of observations `n` (indices `1..=n`).
    pub fn n(&self) -> usize {
        self.y.len() - self.d
    }

    /// `Y_k` for `-d+1 <= k <= n`.
    pub fn y(&self, k: isize) -> f64 {
        self.y[(k + self.d as isize - 1) as usize]
    }

    /// `Z_k` for `1 <= k <= n`.
    pub fn z(&self, k: usize) -> Option<f64> {
        self.z.map(|z| z[k - 1])
    }

    /// `U_k = (Y_k, Y_{k-1}, ..., Y_{k-d+1})` written into `out`, `0 <= k <= n`.
    pub fn state_into(&self, k: usize, out: &mut [f64]) {
        let top = k + self.d - 1;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.y[top - i];
        }
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.state_into(k, &mut out);
        out
    }
}

/// A simulated stationary path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationPath {
    pub theta: Vec<f64>,
    pub n: usize,
    /// `Y_{-d+1}, ..., Y_n`.
    pub y: Vec<f64>,
    /// `Z_1, ..., Z_{n+K}`; only the first `n` are exposed to estimators.
    pub noise: NoiseDraw,
    pub truncation_k: usize,
    pub truncation_bound: f64,
}

impl SimulationPath {
    pub fn order(&self) -> usize {
        self.theta.len()
    }

    pub fn view(&self) -> SeriesView<'_> {
        SeriesView {
            d: self.order(),
            y: &self.y,
            z: Some(&self.noise.values[..self.n]),
        }
    }

    pub fn y_at(&self, k: isize) -> f64 {
        self.view().y(k)
    }

    /// State `U_k`, `0 <= k <= n`.
    pub fn state(&self, k: usize) -> Vec<f64> {
        self.view().state(k)
    }

    /// `max_k |Y_k - sum_j theta_j Y_{k-j} - Z_k|` over `1 <= k <= n`.
    pub fn recursion_residual(&self) -> f64 {
        recursion_residual(&self.theta, self.view())
    }
}

pub fn recursion_residual(theta: &[f64], view: SeriesView<'_>) -> f64 {
    let Some(z) = view.z else {
        return f64::NAN;
    };
    let mut worst = 0.0f64;
    for k in 1..=view.n() as isize {
        let mut fitted = z[k as usize - 1];
        for (j, &t) in theta.iter().enumerate() {
            fitted += t * view.y(k - 1 - j as isize);
        }
        worst = worst.max((view.y(k) - fitted).abs());
    }
    worst
}

/// Backward recursion from `U_{L} = 0`, `L = values.len()`; returns
/// `Y_{-d+1}, ..., Y_n`.
pub(crate) fn stationary_from_noise(theta: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    let d = theta.len();
    let total = values.len();
    debug_assert!(total >= n);
    let td = theta[d - 1];
    // ext[i + d - 1] = Y_i for -d+1 <= i <= total
    let mut ext = vec![0.0; total + d];
    for k in (1..=total).rev() {
        let top = k + d - 1;
        let mut acc = ext[top] - values[k - 1];
        for j in 1..d {
            acc -= theta[j - 1] * ext[top - j];
        }
        ext[top - d] = acc / td;
    }
    ext.truncate(n + d);
    ext
}

/// Stationary path of length `n` for `theta` in the purely explosive region.
pub fn simulate_stationary(spec: &ModelSpec, n: usize, seed: u64, tol: f64) -> Result<SimulationPath> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::PathTooShort { need: 1, have: 0 });
    }
    let pair = CompanionPair::new(&spec.theta)?;
    let horizon = truncation_horizon(&pair, tol, spec.noise.sigma())?;
    let noise = generate_noise(&spec.noise, n + horizon.k, seed)?;
    let y = stationary_from_noise(&spec.theta, &noise.values, n);
    Ok(SimulationPath {
        theta: spec.theta.clone(),
        n,
        y,
        noise,
        truncation_k: horizon.k,
        truncation_bound: horizon.bound,
    })
}

/// Path of the forward-looking AR `Y_n = theta_1 Y_{n+1} + ... + theta_d Y_{n+d} + Z_n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardPath {
    pub theta: Vec<f64>,
    pub n: usize,
    /// `Y_1, ..., Y_n`.
    pub y: Vec<f64>,
    pub noise: NoiseDraw,
    pub truncation_k: usize,
    pub truncation_bound: f64,
}

struct StableProfile {
    profile: PowerProfile,
    tail_factor: f64,
}

fn stable_profile(theta: &[f64]) -> Result<StableProfile> {
    validate_theta(theta)?;
    let spectral = spectral_of_theta(theta)?;
    if spectral.region != Region::Stable {
        return Err(Error::NotStable { rho: spectral.rho });
    }
    let profile = PowerProfile::new(&companion_matrix(theta), DEFAULT_HORIZON_CAP)?;
    // V_n = sum_{k>=0} B^k W_{n+k} includes the k = 0 term
    let tail_factor = 1.0 + profile.sum_bound;
    Ok(StableProfile {
        profile,
        tail_factor,
    })
}

/// Runs `Y_m = sum_j theta_j Y_{m+j} + Z_m` for `m = L, ..., 1` from zeros
/// beyond `L = values.len()`; returns `Y_1, ..., Y_n`.
fn forward_from_noise(theta: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    let d = theta.len();
    let total = values.len();
    // ext[m - 1] = Y_m for 1 <= m <= total + d
    let mut ext = vec![0.0; total + d];
    for m in (1..=total).rev() {
        let mut acc = values[m - 1];
        for j in 1..=d {
            acc += theta[j - 1] * ext[m - 1 + j];
        }
        ext[m - 1] = acc;
    }
    ext.truncate(n);
    ext
}

pub fn simulate_forward_ar(spec: &ModelSpec, n: usize, seed: u64, tol: f64) -> Result<ForwardPath> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::PathTooShort { need: 1, have: 0 });
    }
    let sp = stable_profile(&spec.theta)?;
    let horizon = horizon_for(
        &sp.profile,
        sp.tail_factor,
        spec.noise.sigma(),
        tol,
        DEFAULT_HORIZON_CAP,
    )?;
    let noise = generate_noise(&spec.noise, n + horizon.k, seed)?;
    let y = forward_from_noise(&spec.theta, &noise.values, n);
    Ok(ForwardPath {
        theta: spec.theta.clone(),
        n,
        y,
        noise,
        truncation_k: horizon.k,
        truncation_bound: horizon.bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub n: usize,
    pub noise_length: usize,
    pub max_discrepancy: f64,
    pub forward_bound: f64,
    pub backward_bound: f64,
    pub combined_bound: f64,
    pub within_bound: bool,
}

/// Compares the forward-looking solution `pi_1(V_m)` with `pi_d(U*_{m-1})` of
/// the explosive model `theta* = phi(theta)` driven by `Z*_k = -Z_k / theta_d`,
/// both built from one shared noise draw, for `m = 1..=n`.
pub fn forward_backward_equivalence(
    spec: &ModelSpec,
    n: usize,
    seed: u64,
    tol: f64,
) -> Result<EquivalenceReport> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::PathTooShort { need: 1, have: 0 });
    }
    let theta = &spec.theta;
    let d = theta.len();
    let td = theta[d - 1];
    if td == 0.0 {
        return Err(Error::DegenerateTheta);
    }
    let sigma = spec.noise.sigma();
    let fwd = stable_profile(theta)?;
    let fwd_h = horizon_for(&fwd.profile, fwd.tail_factor, sigma, tol, DEFAULT_HORIZON_CAP)?;

    let theta_star = phi_map(theta).value;
    let star_pair = CompanionPair::new(&theta_star)?;
    let sigma_star = sigma / td.abs();
    let bwd_profile = PowerProfile::new(&star_pair.b_inv, DEFAULT_HORIZON_CAP)?;
    let bwd_h = truncation_horizon(&star_pair, tol, sigma_star)?;

    let k = fwd_h.k.max(bwd_h.k);
    let noise = generate_noise(&spec.noise, n + k, seed)?;
    let forward = forward_from_noise(theta, &noise.values, n);
    let star_noise: Vec<f64> = noise.values.iter().map(|z| -z / td).collect();
    let star_y = stationary_from_noise(&theta_star, &star_noise, n);
    let star = SeriesView::new(d, &star_y, None)?;

    let mut max_discrepancy = 0.0f64;
    for m in 1..=n {
        // pi_d(U*_{m-1}) = Y*_{m-d}
        let other = star.y(m as isize - d as isize);
        max_discrepancy = max_discrepancy.max((forward[m - 1] - other).abs());
    }
    let forward_bound = bound_at(&fwd.profile, fwd.tail_factor, sigma, k);
    let backward_bound = bound_at(&bwd_profile, bwd_profile.sum_bound, sigma_star, k);
    let combined_bound = forward_bound + backward_bound;
    Ok(EquivalenceReport {
        theta: theta.clone(),
        theta_star,
        n,
        noise_length: noise.len(),
        max_discrepancy,
        forward_bound,
        backward_bound,
        combined_bound,
        within_bound: max_discrepancy <= combined_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum InitialState {
    Stationary,
    Custom(Vec<f64>),
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplosiveTrajectory {
    /// `B^{-k} U_k` for `k = 0..` up to `n` or the overflow index.
    pub scaled: Vec<Vec<f64>>,
    /// `||U_k||` along the same indices.
    pub state_norms: Vec<f64>,
    /// First index whose state norm exceeded [`OVERFLOW_NORM`].
    pub saturated_at: Option<usize>,
    /// Truncation bound of the stationary initial value, when used.
    pub truncation_bound: Option<f64>,
}

impl ExplosiveTrajectory {
    pub fn last(&self) -> &[f64] {
        self.scaled.last().expect("trajectory holds U_0")
    }

    pub fn scaled_norms(&self) -> Vec<f64> {
        self.scaled
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

/// Iterates `U_k = B U_{k-1} + Z_k e_1` forward from the chosen `U_0` and
/// records `B^{-k} U_k`.
pub fn explosive_demo(
    spec: &ModelSpec,
    initial: &InitialState,
    n: usize,
    seed: u64,
) -> Result<ExplosiveTrajectory> {
    spec.validate()?;
    let pair = CompanionPair::new(&spec.theta)?;
    pair.require_purely_explosive()?;
    let d = pair.order();
    let (u0, z, truncation_bound) = match initial {
        InitialState::Stationary => {
            let path = simulate_stationary(spec, n.max(1), seed, DEFAULT_TOL)?;
            let u0 = path.state(0);
            let z = path.noise.values[..n].to_vec();
            (u0, z, Some(path.truncation_bound))
        }
        InitialState::Custom(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has {} entries, order is {d}",
                    v.len()
                )));
            }
            (v.clone(), noise_values(&spec.noise, n, seed)?, None)
        }
        InitialState::Zero => (vec![0.0; d], noise_values(&spec.noise, n, seed)?, None),
    };

    let mut u = DVector::from_vec(u0);
    let mut inv_power = DMatrix::<f64>::identity(d, d);
    let mut scaled = vec![u.as_slice().to_vec()];
    let mut state_norms = vec![u.norm()];
    let mut saturated_at = None;
    for (k, &zk) in z.iter().enumerate() {
        u = &pair.b * &u;
        u[0] += zk;
        inv_power = &pair.b_inv * &inv_power;
        let norm = u.norm();
        if !(norm <= OVERFLOW_NORM) {
            saturated_at = Some(k + 1);
            break;
        }
        scaled.push((&inv_power * &u).as_slice().to_vec());
        state_norms.push(norm);
    }
    Ok(ExplosiveTrajectory {
        scaled,
        state_norms,
        saturated_at,
        truncation_bound,
    })
}

fn noise_values(spec: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(generate_noise(spec, n, seed)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(theta: &[f64]) -> ModelSpec {
        ModelSpec::gaussian(theta.to_vec(), 1.0).unwrap()
    }

    fn variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn scalar_horizons() {
        let p = CompanionPair::new(&[2.0]).unwrap();
        let h = truncation_horizon(&p, 1e-12, 1.0).unwrap();
        assert_eq!(h.k, 40);
        // scalar geometric tail 2^-K / (1 - 1/2) * 1/2
        assert!((h.bound - 2f64.powi(-40)).abs() < 1e-25);
        let p = CompanionPair::new(&[10.0]).unwrap();
        let h = truncation_horizon(&p, 1e-12, 1.0).unwrap();
        assert!(h.k <= 13, "K = {}", h.k);
    }

    #[test]
    fn horizon_requires_explosive() {
        let p = CompanionPair::new(&[0.5]).unwrap();
        assert!(matches!(
            truncation_horizon(&p, 1e-12, 1.0),
            Err(Error::NotPurelyExplosive { .. })
        ));
    }

    #[test]
    fn horizon_cap_overflow() {
        let p = CompanionPair::new(&[1.01]).unwrap();
        assert!(matches!(
            truncation_horizon_capped(&p, 1e-12, 1.0, 100),
            Err(Error::HorizonOverflow { cap: 100, .. })
        ));
    }

    #[test]
    fn backward_recursion_matches_series() {
        // U_0 = -sum_k B^{-k} e_1 Z_k over the drawn noise
        let theta = [1.0, 2.0, 3.0];
        let spec = gauss(&theta);
        let path = simulate_stationary(&spec, 5, 99, 1e-13).unwrap();
        let pair = CompanionPair::new(&theta).unwrap();
        let mut series = DVector::<f64>::zeros(3);
        let mut power = DMatrix::<f64>::identity(3, 3);
        for k in 1..=path.noise.len() {
            power = &pair.b_inv * &power;
            series -= power.column(0) * path.noise.z(k);
        }
        let u0 = path.state(0);
        for i in 0..3 {
            assert!((u0[i] - series[i]).abs() < 1e-12, "{u0:?} vs {series}");
        }
    }

    #[test]
    fn stationary_path_alignment_and_residual() {
        let spec = gauss(&[0.0, 4.0]);
        let path = simulate_stationary(&spec, 1000, 5, 1e-12).unwrap();
        assert_eq!(path.y.len(), 1002);
        assert_eq!(path.state(3), vec![path.y_at(3), path.y_at(2)]);
        assert_eq!(path.state(0), vec![path.y_at(0), path.y_at(-1)]);
        let res = path.recursion_residual();
        assert!(res <= path.truncation_bound, "{res} > {}", path.truncation_bound);
        assert!(path.truncation_bound <= 1e-12);
    }

    #[test]
    fn scalar_variance_matches_geometric_series() {
        let path = simulate_stationary(&gauss(&[2.0]), 100_000, 1, 1e-12).unwrap();
        let v = variance(&path.y[1..]);
        assert!((v - 1.0 / 3.0).abs() < 0.05 / 3.0, "variance {v}");
    }

    #[test]
    fn seed_determinism() {
        let spec = gauss(&[0.0, 4.0]);
        let a = simulate_stationary(&spec, 200, 42, 1e-12).unwrap();
        let b = simulate_stationary(&spec, 200, 42, 1e-12).unwrap();
        assert_eq!(a.y, b.y);
        let fa = simulate_forward_ar(&gauss(&[0.5]), 50, 3, 1e-12).unwrap();
        let fb = simulate_forward_ar(&gauss(&[0.5]), 50, 3, 1e-12).unwrap();
        assert_eq!(fa.y, fb.y);
    }

    #[test]
    fn halves_of_a_path_agree() {
        let n = 100_000;
        let path = simulate_stationary(&gauss(&[0.0, 4.0]), n, 17, 1e-12).unwrap();
        let obs = &path.y[2..];
        let (a, b) = obs.split_at(n / 2);
        // long-run variance of the mean is sigma^2 / (sum theta - 1)^2 = 1/9
        let se_mean = (1.0 / 9.0 / (n / 2) as f64).sqrt();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        assert!((ma - mb).abs() < 5.0 * se_mean * 2f64.sqrt());
        let (va, vb) = (variance(a), variance(b));
        assert!((va - vb).abs() < 0.05 * (va + vb));
    }

    #[test]
    fn state_independent_of_current_noise() {
        let n = 100_000;
        let path = simulate_stationary(&gauss(&[0.0, 4.0]), n, 23, 1e-12).unwrap();
        let view = path.view();
        let mut s = 0.0;
        let mut s2 = 0.0;
        for k in 1..=n {
            let p = view.y(k as isize - 1) * view.z(k).unwrap();
            s += p;
            s2 += p * p;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 5.0 * se, "corr mean {mean} se {se}");
    }

    #[test]
    fn forward_scalar_variance() {
        let path = simulate_forward_ar(&gauss(&[0.5]), 100_000, 4, 1e-12).unwrap();
        let v = variance(&path.y);
        assert!((v - 4.0 / 3.0).abs() < 0.05 * 4.0 / 3.0, "variance {v}");
        assert!(matches!(
            simulate_forward_ar(&gauss(&[0.0, 4.0]), 10, 1, 1e-12),
            Err(Error::NotStable { .. })
        ));
    }

    #[test]
    fn forward_d2_variance_matches_series() {
        // Var(Y) = sum_k (B^k)_{11}^2 for B = B(0, 0.25)
        let theta = [0.0, 0.25];
        let b = companion_matrix(&theta);
        let mut p = DMatrix::<f64>::identity(2, 2);
        let mut target = 0.0;
        for _ in 0..200 {
            target += p[(0, 0)] * p[(0, 0)];
            p = &p * &b;
        }
        let path = simulate_forward_ar(&gauss(&theta), 100_000, 8, 1e-12).unwrap();
        let v = variance(&path.y);
        assert!((v - target).abs() < 0.05 * target, "{v} vs {target}");
    }

    #[test]
    fn equivalence_examples() {
        let r = forward_backward_equivalence(&gauss(&[0.5]), 500, 1, 1e-12).unwrap();
        assert!(r.max_discrepancy <= 1e-10, "{r:?}");
        let r = forward_backward_equivalence(&gauss(&[0.0, 0.25]), 500, 2, 1e-12).unwrap();
        assert!(r.within_bound, "{r:?}");
        let r = forward_backward_equivalence(&gauss(&[0.4, -0.2, 0.1]), 500, 3, 1e-12).unwrap();
        assert!(r.within_bound, "{r:?}");
        assert!(matches!(
            forward_backward_equivalence(&gauss(&[0.5, 0.0]), 10, 1, 1e-12),
            Err(Error::DegenerateTheta)
        ));
        assert!(matches!(
            forward_backward_equivalence(&gauss(&[0.0, 4.0]), 10, 1, 1e-12),
            Err(Error::NotStable { .. })
        ));
    }

    #[test]
    fn stationary_start_vanishes_after_rescaling() {
        let spec = gauss(&[2.0]);
        let t = explosive_demo(&spec, &InitialState::Stationary, 50, 9).unwrap();
        let bound = t.truncation_bound.unwrap();
        let last = t.scaled_norms()[50];
        assert!(last <= 10.0 * bound, "{last} > 10 * {bound}");
    }

    #[test]
    fn generic_start_converges_to_nonzero_limit() {
        let spec = gauss(&[2.0]);
        let t = explosive_demo(&spec, &InitialState::Custom(vec![1.0]), 60, 9).unwrap();
        let x: Vec<f64> = t.scaled.iter().map(|v| v[0]).collect();
        // Cauchy increments decay
        assert!((x[60] - x[50]).abs() < 1e-12);
        let z = generate_noise(&spec.noise, 60, 9).unwrap();
        let limit: f64 = 1.0 + (1..=60).map(|j| 2f64.powi(-(j as i32)) * z.z(j)).sum::<f64>();
        assert!((x[60] - limit).abs() < 1e-12);
        assert!(t.state_norms[60] > 1e10);
        assert!(t.saturated_at.is_none());
    }

    #[test]
    fn explosive_start_saturates() {
        let spec = gauss(&[10.0]);
        let t = explosive_demo(&spec, &InitialState::Zero, 400, 1).unwrap();
        assert!(t.saturated_at.is_some());
        assert!(t.state_norms.iter().all(|v| v.is_finite()));
        assert!(matches!(
            explosive_demo(&gauss(&[0.5]), &InitialState::Zero, 5, 1),
            Err(Error::NotPurelyExplosive { .. })
        ));
    }
}
