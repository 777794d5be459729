//! Analytic Kalman filter over the augmented Jansen-Rit state.
//!
//! The prediction step propagates the mean with closed-form Gaussian
//! expectations of the erf sigmoid, including the gain-times-rate products
//! `E[g phi(V)] = E[g] E[phi(V)] + Cov(g, V) E[phi'(V)]`. The covariance is
//! propagated through the expected Jacobian (see [`propagate_covariance`]).

use nalgebra::{DMatrix, RowSVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layout::{self, N_AUG, N_TARGET};
use crate::model::{AugmentedState, Channel, ModelParams, SigmoidConsts, TimeConstantFrame};
use crate::track::{Divergence, EstimateTrack};

pub type Vec15 = SVector<f64, N_AUG>;
pub type Mat15 = SMatrix<f64, N_AUG, N_AUG>;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
/// Posterior means beyond this magnitude are treated as divergence.
const BLOW_UP: f64 = 1e9;

/// Mean and covariance of the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vec15,
    pub cov: Mat15,
}

impl GaussianBelief {
    pub fn new(mean: Vec15, cov: Mat15) -> Self {
        Self { mean, cov }
    }

    pub fn marginal_std(&self) -> [f64; N_AUG] {
        std::array::from_fn(|i| self.cov[(i, i)].max(0.0).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite()) && self.cov.iter().all(|x| x.is_finite())
    }
}

/// Initial standard deviations used to build a diagonal starting covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpread {
    /// mV
    pub v_std: f64,
    /// mV/s
    pub z_std: f64,
    /// Relative to each parameter's magnitude.
    pub theta_rel_std: f64,
}

impl InitSpread {
    pub const PERFECT: InitSpread = InitSpread {
        v_std: 0.01,
        z_std: 1.0,
        theta_rel_std: 1e-3,
    };
    pub const DEFAULT_POINT: InitSpread = InitSpread {
        v_std: 10.0,
        z_std: 1000.0,
        theta_rel_std: 0.2,
    };

    pub fn covariance(&self, mean: &Vec15) -> Mat15 {
        let mut p = Mat15::zeros();
        for ch in Channel::ALL {
            p[(ch.v_index(), ch.v_index())] = self.v_std * self.v_std;
            p[(ch.z_index(), ch.z_index())] = self.z_std * self.z_std;
        }
        for i in layout::PARAMS {
            let s = self.theta_rel_std * mean[i].abs().max(1.0);
            p[(i, i)] = s * s;
        }
        p
    }
}

/// Filter configuration. Time constants are fixed for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct AkfConfig {
    pub init_belief: GaussianBelief,
    pub q: Mat15,
    pub r: f64,
    pub tau_e: f64,
    pub tau_i: f64,
    pub dt: f64,
    pub sigmoid: SigmoidConsts,
}

/// Default process noise: variance `q_z` on `z` rows and `q_theta` on the
/// parameter random walk (per step).
pub fn diagonal_q(q_z: f64, q_theta: f64) -> Mat15 {
    let mut q = Mat15::zeros();
    for ch in Channel::ALL {
        q[(ch.z_index(), ch.z_index())] = q_z;
    }
    for i in layout::PARAMS {
        q[(i, i)] = q_theta;
    }
    q
}

pub const DEFAULT_Q_Z: f64 = 1e-3;
pub const DEFAULT_Q_THETA: f64 = 1e-5;

/// Observation-noise variance estimated as half the variance of first differences.
pub fn estimate_r(observations: &[f64]) -> f64 {
    if observations.len() < 3 {
        return 1.0;
    }
    let d: Vec<f64> = observations.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (d.len() - 1) as f64;
    (var / 2.0).max(1e-12)
}

impl AkfConfig {
    /// Filter started at the true initial augmented state with the true time
    /// constants; noise levels taken from the simulation parameters.
    pub fn perfect(xi0: &AugmentedState, truth: &ModelParams) -> Self {
        let mean = Vec15::from_column_slice(&xi0.0);
        Self {
            init_belief: GaussianBelief::new(mean, InitSpread::PERFECT.covariance(&mean)),
            q: diagonal_q(truth.q_process.powi(2).max(DEFAULT_Q_Z), DEFAULT_Q_THETA),
            r: truth.r_obs.powi(2).max(1e-12),
            tau_e: truth.tau_e,
            tau_i: truth.tau_i,
            dt: truth.dt,
            sigmoid: truth.sigmoid(),
        }
    }

    /// Filter pinned to the default parameter point (`tau_e` = 0.01 s,
    /// `tau_i` = 0.02 s), starting from rest with broad uncertainty.
    /// `noise` supplies `dt`, sigmoid constants and noise levels.
    pub fn default_point(noise: &ModelParams) -> Self {
        let base = ModelParams {
            dt: noise.dt,
            v0: noise.v0,
            sigma_s: noise.sigma_s,
            ..ModelParams::default()
        };
        let mean = Vec15::from_column_slice(&AugmentedState::resting(&base).0);
        Self {
            init_belief: GaussianBelief::new(mean, InitSpread::DEFAULT_POINT.covariance(&mean)),
            q: diagonal_q(noise.q_process.powi(2).max(DEFAULT_Q_Z), DEFAULT_Q_THETA),
            r: noise.r_obs.powi(2).max(1e-12),
            tau_e: base.tau_e,
            tau_i: base.tau_i,
            dt: base.dt,
            sigmoid: base.sigmoid(),
        }
    }

    /// Default-point filter for data without known noise levels: spec-default
    /// `Q` and `R` estimated from the recording.
    pub fn for_recording(observations: &[f64], dt: f64) -> Self {
        let mut p = ModelParams::default();
        p.dt = dt;
        let mut cfg = Self::default_point(&p);
        cfg.q = diagonal_q(DEFAULT_Q_Z, DEFAULT_Q_THETA);
        cfg.r = estimate_r(observations);
        cfg
    }

    pub fn frame(&self) -> TimeConstantFrame {
        TimeConstantFrame {
            tau_e: self.tau_e,
            tau_i: self.tau_i,
            dt: self.dt,
            sigmoid: self.sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidParameter("observation variance R must be positive".into()));
        }
        let sym = (self.q - self.q.transpose()).abs().max();
        if sym > 1e-12 * self.q.abs().max().max(1.0) {
            return Err(Error::InvalidParameter("Q is not symmetric".into()));
        }
        let min_eig = self.q.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * self.q.abs().max().max(1.0) {
            return Err(Error::InvalidParameter("Q is not positive semidefinite".into()));
        }
        if !self.init_belief.is_finite() {
            return Err(Error::InvalidParameter("non-finite initial belief".into()));
        }
        Ok(())
    }
}

/// Gaussian expectations of the sigmoid for `V ~ N(mu_v, var_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidMoments {
    /// `E[phi(V)]`
    pub mean: f64,
    /// `E[phi'(V)]`
    pub slope: f64,
    /// `Cov(x_k, phi(V))` for each supplied `Cov(x_k, V)`.
    pub cov_x: Vec<f64>,
}

pub fn gaussian_sigmoid_moments(mu_v: f64, var_v: f64, cov_xv: &[f64], s: SigmoidConsts) -> Result<SigmoidMoments> {
    if !(var_v >= 0.0) {
        return Err(Error::InvalidParameter(format!("variance {var_v} is negative")));
    }
    let (mean, slope) = sigmoid_mean_slope(mu_v, var_v, s);
    Ok(SigmoidMoments {
        mean,
        slope,
        cov_x: cov_xv.iter().map(|c| c * slope).collect(),
    })
}

#[inline]
fn sigmoid_mean_slope(mu_v: f64, var_v: f64, s: SigmoidConsts) -> (f64, f64) {
    let width2 = s.sigma_s * s.sigma_s + 2.0 * var_v.max(0.0);
    let width = width2.sqrt();
    let d = mu_v - s.v0;
    let mean = 0.5 * (1.0 + libm::erf(d / width));
    let slope = (-d * d / width2).exp() * FRAC_1_SQRT_PI / width;
    (mean, slope)
}

/// Prior mean and the expected Jacobian of the one-step map.
fn propagate_mean(belief: &GaussianBelief, frame: &TimeConstantFrame) -> (Vec15, Mat15) {
    let m = &belief.mean;
    let p = &belief.cov;
    let dt = frame.dt;
    let mut out = *m;
    let mut f = Mat15::identity();
    for ch in Channel::ALL {
        let tau = frame.tau(ch);
        let (vi, zi) = (ch.v_index(), ch.z_index());
        out[vi] = m[vi] + dt * m[zi];
        f[(vi, zi)] = dt;
        f[(zi, zi)] = 1.0 - 2.0 * dt / tau;
        f[(zi, vi)] = -dt / (tau * tau);
        let expected_drive = match ch.gain_index() {
            None => {
                f[(zi, layout::U)] += dt / tau;
                m[layout::U]
            }
            Some(gi) => {
                let src = ch.presynaptic();
                let mu_v: f64 = src.iter().map(|&j| m[j]).sum();
                let var_v: f64 = src.iter().flat_map(|&a| src.iter().map(move |&b| (a, b))).map(|(a, b)| p[(a, b)]).sum();
                let cov_gv: f64 = src.iter().map(|&j| p[(gi, j)]).sum();
                let (e_phi, e_dphi) = sigmoid_mean_slope(mu_v, var_v, frame.sigmoid);
                f[(zi, gi)] += dt * e_phi / tau;
                for &j in src {
                    f[(zi, j)] += dt * m[gi] * e_dphi / tau;
                }
                m[gi] * e_phi + cov_gv * e_dphi
            }
        };
        out[zi] = m[zi] + dt * (expected_drive / tau - 2.0 * m[zi] / tau - m[vi] / (tau * tau));
    }
    (out, f)
}

/// First-order covariance propagation `F P F^T + Q`, symmetrised. Kept
/// separate so a second-moment-exact variant can replace it.
pub fn propagate_covariance(cov: &Mat15, jacobian: &Mat15, q: &Mat15) -> Mat15 {
    let p = jacobian * cov * jacobian.transpose() + q;
    symmetrize(&p)
}

fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// True when `m` is not positive semi-definite up to a jitter of
/// `1e-12 * trace / dim` on the diagonal.
fn needs_repair(m: &Mat15) -> bool {
    let jitter = (1e-12 * m.trace().abs() / N_AUG as f64).max(f64::MIN_POSITIVE);
    (m + Mat15::identity() * jitter).cholesky().is_none()
}

/// Prediction step. The prior covariance is repaired to positive definite
/// when it is not positive semi-definite.
pub fn predict(belief: &GaussianBelief, cfg: &AkfConfig) -> Result<GaussianBelief> {
    let (mean, jac) = propagate_mean(belief, &cfg.frame());
    let mut cov = propagate_covariance(&belief.cov, &jac, &cfg.q);
    if cov.iter().any(|x| !x.is_finite()) || mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::FilterDivergence {
            step: 0,
            reason: "non-finite prior".into(),
        });
    }
    if needs_repair(&cov) {
        cov = nearest_pd_fixed(&cov).map_err(|e| Error::FilterDivergence {
            step: 0,
            reason: format!("covariance repair failed: {e}"),
        })?;
    }
    Ok(GaussianBelief { mean, cov })
}

pub fn observation_row() -> RowSVector<f64, N_AUG> {
    let mut h = RowSVector::<f64, N_AUG>::zeros();
    for i in layout::OBSERVED {
        h[i] = 1.0;
    }
    h
}

/// Kalman update outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateInfo {
    pub innovation: f64,
    pub gain: Vec15,
}

pub fn update(prior: &GaussianBelief, y: f64, cfg: &AkfConfig) -> Result<(GaussianBelief, UpdateInfo)> {
    let h = observation_row();
    let ph = prior.cov * h.transpose();
    let s = (h * ph)[0] + cfg.r;
    if !(s > 0.0) {
        return Err(Error::FilterDivergence {
            step: 0,
            reason: format!("innovation variance {s} not positive"),
        });
    }
    let innovation = y - (h * prior.mean)[0];
    if !innovation.is_finite() {
        return Err(Error::FilterDivergence {
            step: 0,
            reason: "non-finite innovation".into(),
        });
    }
    let gain = ph / s;
    let mean = prior.mean + gain * innovation;
    let cov = symmetrize(&((Mat15::identity() - gain * h) * prior.cov));
    Ok((GaussianBelief { mean, cov }, UpdateInfo { innovation, gain }))
}

/// Eigenvalue clipping at `1e-9 * trace / dim`. Matrices whose eigenvalues
/// already clear the floor are returned untouched.
pub fn nearest_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter("matrix is not square".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix entry".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let eps = clip_floor(m.trace(), eig.eigenvalues.iter().map(|x| x.abs()).sum(), n);
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return Ok(m.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.max(eps));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let mut out = (&out + out.transpose()) * 0.5;
    // Reconstruction roundoff can leave the smallest eigenvalue a hair under the floor.
    for _ in 0..3 {
        let min = out.clone().symmetric_eigenvalues().min();
        if min >= eps {
            break;
        }
        for i in 0..n {
            out[(i, i)] += eps - min;
        }
    }
    Ok(out)
}

fn clip_floor(trace: f64, abs_sum: f64, n: usize) -> f64 {
    let eps = 1e-9 * trace / n as f64;
    if eps > 0.0 {
        eps
    } else {
        (1e-9 * abs_sum / n as f64).max(f64::MIN_POSITIVE)
    }
}

fn nearest_pd_fixed(m: &Mat15) -> Result<Mat15> {
    let d = DMatrix::from_column_slice(N_AUG, N_AUG, m.as_slice());
    let r = nearest_pd(&d)?;
    let mut out = Mat15::from_column_slice(r.as_slice());
    // Clipping at the floor can still leave Cholesky on the edge in floating point.
    if out.cholesky().is_none() {
        let bump = clip_floor(out.trace(), out.trace().abs(), N_AUG);
        for i in 0..N_AUG {
            out[(i, i)] += bump;
        }
    }
    Ok(out)
}

/// Runs predict/update over the whole recording. Divergence truncates the
/// track and records where it happened instead of failing.
pub fn run_akf(observations: &[f64], cfg: &AkfConfig, method: &str) -> Result<EstimateTrack> {
    if observations.is_empty() {
        return Err(Error::Empty("no observations for the filter".into()));
    }
    cfg.validate()?;
    let n = observations.len();
    let h = observation_row();
    let mut track = EstimateTrack {
        method: method.to_string(),
        dt: cfg.dt,
        times: Vec::with_capacity(n),
        observations: Vec::with_capacity(n),
        estimates: Vec::with_capacity(n),
        y_hat: Vec::with_capacity(n),
        marginal_std: Some(Vec::with_capacity(n)),
        innovation: Some(Vec::with_capacity(n)),
        divergence: None,
    };
    let mut belief = cfg.init_belief.clone();
    for (t, &y) in observations.iter().enumerate() {
        let step = || -> Result<(GaussianBelief, UpdateInfo)> {
            let prior = if t == 0 { belief.clone() } else { predict(&belief, cfg)? };
            let (post, info) = update(&prior, y, cfg)?;
            if !post.is_finite() || post.mean.iter().any(|x| x.abs() > BLOW_UP) {
                return Err(Error::FilterDivergence {
                    step: t,
                    reason: "posterior blew up".into(),
                });
            }
            Ok((post, info))
        };
        match step() {
            Ok((post, info)) => {
                belief = post;
                let mut est = [0.0; N_TARGET];
                est[..N_AUG].copy_from_slice(belief.mean.as_slice());
                est[layout::TAU_E] = cfg.tau_e;
                est[layout::TAU_I] = cfg.tau_i;
                track.times.push(t as f64 * cfg.dt);
                track.observations.push(y);
                track.estimates.push(est);
                track.y_hat.push((h * belief.mean)[0]);
                track.marginal_std.as_mut().unwrap().push(belief.marginal_std());
                track.innovation.as_mut().unwrap().push(info.innovation);
            }
            Err(e) => {
                let reason = match e {
                    Error::FilterDivergence { reason, .. } => reason,
                    other => other.to_string(),
                };
                log::warn!("{method}: filter diverged at step {t}: {reason}");
                track.divergence = Some(Divergence { step: t, reason });
                break;
            }
        }
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief_for(p: &ModelParams) -> GaussianBelief {
        let mut xi = AugmentedState::resting(p);
        let state = [1.5, 20.0, -3.0, -10.0, 9.0, 150.0, 2.5, 40.0, 8.0, -5.0];
        xi.0[..10].copy_from_slice(&state);
        let mean = Vec15::from_column_slice(&xi.0);
        let mut cov = InitSpread {
            v_std: 1.0,
            z_std: 30.0,
            theta_rel_std: 0.05,
        }
        .covariance(&mean);
        cov[(layout::ALPHA_EP, layout::V_PE)] = 5.0;
        cov[(layout::V_PE, layout::ALPHA_EP)] = 5.0;
        GaussianBelief::new(mean, cov)
    }

    #[test]
    fn moments_degenerate_and_symmetric_cases() {
        let s = SigmoidConsts::default();
        let m = gaussian_sigmoid_moments(7.3, 0.0, &[], s).unwrap();
        assert!((m.mean - crate::model::phi(7.3, s)).abs() < 1e-15);
        for var in [0.0, 0.5, 4.0, 100.0] {
            let m = gaussian_sigmoid_moments(6.0, var, &[2.0], s).unwrap();
            assert_eq!(m.mean, 0.5);
            assert!((m.cov_x[0] - 2.0 * m.slope).abs() < 1e-15);
        }
        assert!(gaussian_sigmoid_moments(0.0, -1.0, &[], s).is_err());
    }

    #[test]
    fn zero_gain_prediction_is_linear() {
        let mut p = ModelParams::default();
        p.alpha_pe = 0.0;
        p.alpha_pi = 0.0;
        p.alpha_ip = 0.0;
        p.alpha_ep = 0.0;
        p.u = 0.0;
        let mut cfg = AkfConfig::perfect(&AugmentedState::resting(&p), &p);
        cfg.q = Mat15::zeros();
        let mut b = belief_for(&p);
        b.cov[(layout::ALPHA_EP, layout::V_PE)] = 0.0;
        b.cov[(layout::V_PE, layout::ALPHA_EP)] = 0.0;
        let prior = predict(&b, &cfg).unwrap();
        let expected = crate::model::transition(&b.mean.as_slice().try_into().unwrap(), &cfg.frame());
        for i in 0..N_AUG {
            assert!((prior.mean[i] - expected[i]).abs() < 1e-12 * expected[i].abs().max(1.0));
        }
    }

    #[test]
    fn prior_minus_q_is_psd() {
        let p = ModelParams::default();
        let cfg = AkfConfig::perfect(&AugmentedState::resting(&p), &p);
        let prior = predict(&belief_for(&p), &cfg).unwrap();
        let diff = prior.cov - cfg.q;
        let min = diff.symmetric_eigenvalues().min();
        assert!(min >= -1e-9 * diff.abs().max(), "min eigenvalue {min}");
    }

    #[test]
    fn huge_r_leaves_prior_unchanged() {
        let p = ModelParams::default();
        let mut cfg = AkfConfig::perfect(&AugmentedState::resting(&p), &p);
        let prior = belief_for(&p);
        let h = observation_row();
        cfg.r = 1e12 * (h * prior.cov * h.transpose())[0];
        let (post, _) = update(&prior, 100.0, &cfg).unwrap();
        for i in 0..N_AUG {
            let rel = (post.mean[i] - prior.mean[i]).abs() / prior.mean[i].abs().max(1.0);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn uncorrelated_unobserved_entries_are_untouched() {
        let p = ModelParams::default();
        let cfg = AkfConfig::perfect(&AugmentedState::resting(&p), &p);
        let mut prior = belief_for(&p);
        for i in 0..N_AUG {
            prior.cov[(layout::ALPHA_PI, i)] = 0.0;
            prior.cov[(i, layout::ALPHA_PI)] = 0.0;
        }
        let (post, info) = update(&prior, 50.0, &cfg).unwrap();
        assert_eq!(info.gain[layout::ALPHA_PI], 0.0);
        assert_eq!(post.mean[layout::ALPHA_PI], prior.mean[layout::ALPHA_PI]);
    }

    #[test]
    fn scalar_kalman_closed_form() {
        // One-dimensional observation through H on a belief where only v_pe is uncertain.
        let p = ModelParams::default();
        let mut cfg = AkfConfig::perfect(&AugmentedState::zeros(), &p);
        cfg.r = 1.0;
        let mut prior = GaussianBelief::new(Vec15::zeros(), Mat15::zeros());
        prior.cov[(layout::V_PE, layout::V_PE)] = 1.0;
        let (post, _) = update(&prior, 2.0, &cfg).unwrap();
        assert!((post.mean[layout::V_PE] - 1.0).abs() < 1e-15);
        assert!((post.cov[(layout::V_PE, layout::V_PE)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nearest_pd_cases() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(nearest_pd(&pd).unwrap(), pd);
        let ind = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let out = nearest_pd(&ind).unwrap();
        let eps = 1e-9 * 0.5 / 2.0;
        assert!((out[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((out[(1, 1)] - eps).abs() < 1e-15);
        assert!(out[(0, 1)].abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(nearest_pd(&bad).is_err());
    }

    #[test]
    fn run_akf_rejects_empty() {
        let p = ModelParams::default();
        let cfg = AkfConfig::perfect(&AugmentedState::resting(&p), &p);
        assert!(matches!(run_akf(&[], &cfg, "akf"), Err(Error::Empty(_))));
    }
}
