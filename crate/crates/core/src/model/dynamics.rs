use nalgebra::{RowSVector, SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;
use libm::erf;

use super::layout::{self, N_AUG, N_CHANNELS, N_STATE};
use super::params::{AugmentedState, Channel, ModelParams, SigmoidConsts, TimeConstant};
use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Error-function sigmoid mapping membrane potential (mV) to a firing rate in (0, 1).
#[inline]
pub fn phi(v: f64, s: SigmoidConsts) -> f64 {
    0.5 * (erf((v - s.v0) / s.sigma_s) + 1.0)
}

/// Derivative of [`phi`] with respect to `v`.
#[inline]
pub fn phi_prime(v: f64, s: SigmoidConsts) -> f64 {
    let x = (v - s.v0) / s.sigma_s;
    (-x * x).exp() * FRAC_1_SQRT_PI / s.sigma_s
}

/// Checked form of [`phi`].
pub fn sigmoid(v: f64, v0: f64, sigma_s: f64) -> Result<f64> {
    if !(sigma_s > 0.0) {
        return Err(Error::InvalidParameter("sigmoid slope must be positive".into()));
    }
    if v.is_nan() {
        return Err(Error::InvalidParameter("sigmoid input is NaN".into()));
    }
    if v.is_infinite() {
        return Err(Error::InvalidParameter("sigmoid input is infinite".into()));
    }
    Ok(phi(v, SigmoidConsts { v0, sigma_s }))
}

/// Continuous-time matrices of `x' = A x + B r(C x)`, `y = H x`.
///
/// `r` applies the sigmoid to each row of `C x` except the input channel, whose
/// rate is the external input `u` itself (its row of `C` is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: SMatrix<f64, N_STATE, N_STATE>,
    pub b: SMatrix<f64, N_STATE, N_CHANNELS>,
    pub c: SMatrix<f64, N_CHANNELS, N_STATE>,
    pub h: RowSVector<f64, N_STATE>,
    pub sigmoid: SigmoidConsts,
}

pub fn build_matrices(p: &ModelParams) -> SystemMatrices {
    let frame = TimeConstantFrame::from_params(p);
    let mut a = SMatrix::<f64, N_STATE, N_STATE>::zeros();
    let mut b = SMatrix::<f64, N_STATE, N_CHANNELS>::zeros();
    let mut c = SMatrix::<f64, N_CHANNELS, N_STATE>::zeros();
    let mut h = RowSVector::<f64, N_STATE>::zeros();
    for ch in Channel::ALL {
        let tau = frame.tau(ch);
        let (v, z) = (ch.v_index(), ch.z_index());
        a[(v, z)] = 1.0;
        a[(z, v)] = -1.0 / (tau * tau);
        a[(z, z)] = -2.0 / tau;
        let gain = match ch {
            Channel::Pe => p.alpha_pe,
            Channel::Pi => p.alpha_pi,
            Channel::Ep => p.alpha_ep,
            Channel::Ip => p.alpha_ip,
            Channel::Pu => 1.0,
        };
        b[(z, ch.index())] = gain / tau;
        for &src in ch.presynaptic() {
            c[(ch.index(), src)] = 1.0;
        }
    }
    for i in layout::OBSERVED {
        h[i] = 1.0;
    }
    SystemMatrices {
        a,
        b,
        c,
        h,
        sigmoid: p.sigmoid(),
    }
}

impl SystemMatrices {
    pub fn rates(&self, x: &SVector<f64, N_STATE>, u: f64) -> SVector<f64, N_CHANNELS> {
        let pre = self.c * x;
        let mut r = pre.map(|v| phi(v, self.sigmoid));
        r[Channel::Pu.index()] = u;
        r
    }

    /// `A x + B r(C x)`.
    pub fn derivative(&self, x: &SVector<f64, N_STATE>, u: f64) -> SVector<f64, N_STATE> {
        self.a * x + self.b * self.rates(x, u)
    }
}

/// Observation `H x`: the pyramidal membrane potential.
#[inline]
pub fn observe(xi: &[f64]) -> f64 {
    xi[layout::V_PE] + xi[layout::V_PI] + xi[layout::V_PU]
}

/// Quantities that stay outside the augmented state during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConstantFrame {
    pub tau_e: f64,
    pub tau_i: f64,
    pub dt: f64,
    pub sigmoid: SigmoidConsts,
}

impl TimeConstantFrame {
    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            tau_e: p.tau_e,
            tau_i: p.tau_i,
            dt: p.dt,
            sigmoid: p.sigmoid(),
        }
    }

    #[inline]
    pub fn tau(&self, ch: Channel) -> f64 {
        match ch.time_constant() {
            TimeConstant::Excitatory => self.tau_e,
            TimeConstant::Inhibitory => self.tau_i,
        }
    }
}

/// One draw of the per-step process noise, already scaled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProcessNoise {
    pub z: [f64; N_CHANNELS],
    pub theta: [f64; 5],
}

impl ProcessNoise {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, q_process: f64, q_param: f64) -> Self {
        let mut n = Self::zero();
        if q_process > 0.0 {
            for z in &mut n.z {
                *z = q_process * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if q_param > 0.0 {
            for t in &mut n.theta {
                *t = q_param * rng.sample::<f64, _>(StandardNormal);
            }
        }
        n
    }
}

#[inline]
fn channel_gain(xi: &[f64; N_AUG], ch: Channel) -> f64 {
    ch.gain_index().map_or(1.0, |i| xi[i])
}

#[inline]
fn presynaptic_potential(xi: &[f64; N_AUG], ch: Channel) -> f64 {
    ch.presynaptic().iter().map(|&i| xi[i]).sum()
}

fn euler<F: Fn(f64) -> f64>(xi: &[f64; N_AUG], frame: &TimeConstantFrame, rate_fn: F) -> [f64; N_AUG] {
    let dt = frame.dt;
    let mut out = *xi;
    for ch in Channel::ALL {
        let tau = frame.tau(ch);
        let (vi, zi) = (ch.v_index(), ch.z_index());
        let (v, z) = (xi[vi], xi[zi]);
        let rate = match ch {
            Channel::Pu => xi[layout::U],
            _ => rate_fn(presynaptic_potential(xi, ch)),
        };
        let drive = channel_gain(xi, ch) * rate / tau;
        out[vi] = v + dt * z;
        out[zi] = z + dt * (drive - 2.0 * z / tau - v / (tau * tau));
    }
    out
}

/// Noise-free one-step map `xi -> A_theta xi + B_theta phi(C xi)`; the
/// parameter block is carried unchanged.
pub fn transition(xi: &[f64; N_AUG], frame: &TimeConstantFrame) -> [f64; N_AUG] {
    let s = frame.sigmoid;
    euler(xi, frame, |v| phi(v, s))
}

/// One stochastic Euler step of the augmented model.
pub fn step(xi: &AugmentedState, frame: &TimeConstantFrame, noise: &ProcessNoise) -> Result<AugmentedState> {
    let s = frame.sigmoid;
    step_with_sigmoid(xi, frame, noise, |v| phi(v, s))
}

/// [`step`] with the sigmoid replaced by `rate_fn`. Used to probe the linear
/// part of the map.
pub fn step_with_sigmoid<F: Fn(f64) -> f64>(
    xi: &AugmentedState,
    frame: &TimeConstantFrame,
    noise: &ProcessNoise,
    rate_fn: F,
) -> Result<AugmentedState> {
    let mut out = euler(&xi.0, frame, rate_fn);
    for ch in Channel::ALL {
        out[ch.z_index()] += noise.z[ch.index()];
    }
    for (k, &i) in layout::PARAMS.iter().enumerate() {
        out[i] += noise.theta[k];
    }
    for ch in Channel::ALL {
        if !out[ch.v_index()].is_finite() || !out[ch.z_index()].is_finite() {
            return Err(Error::IntegrationDivergence {
                step: 0,
                channel: ch.name(),
            });
        }
    }
    if out[layout::U..].iter().any(|x| !x.is_finite()) {
        return Err(Error::IntegrationDivergence {
            step: 0,
            channel: "theta",
        });
    }
    Ok(AugmentedState(out))
}

/// Vector-Jacobian product of [`transition`] with time constants treated as
/// inputs. Accumulates `upstream^T d(transition)/d(xi)` into `grad_xi` and
/// returns the gradient with respect to `(tau_e, tau_i)`.
pub fn transition_vjp(
    xi: &[f64; N_AUG],
    frame: &TimeConstantFrame,
    upstream: &[f64; N_AUG],
    grad_xi: &mut [f64; N_AUG],
) -> (f64, f64) {
    let dt = frame.dt;
    let s = frame.sigmoid;
    let (mut g_tau_e, mut g_tau_i) = (0.0, 0.0);
    // Parameter block is an identity map.
    for i in layout::PARAMS {
        grad_xi[i] += upstream[i];
    }
    for ch in Channel::ALL {
        let tau = frame.tau(ch);
        let (vi, zi) = (ch.v_index(), ch.z_index());
        let (v, z) = (xi[vi], xi[zi]);
        let (gv, gz) = (upstream[vi], upstream[zi]);
        // v' = v + dt z
        grad_xi[vi] += gv;
        grad_xi[zi] += gv * dt;
        // z' = z + dt (g r / tau - 2 z / tau - v / tau^2)
        grad_xi[zi] += gz * (1.0 - 2.0 * dt / tau);
        grad_xi[vi] += gz * (-dt / (tau * tau));
        let gain = channel_gain(xi, ch);
        let (rate, drate) = match ch {
            Channel::Pu => (xi[layout::U], None),
            _ => {
                let pre = presynaptic_potential(xi, ch);
                (phi(pre, s), Some(phi_prime(pre, s)))
            }
        };
        match ch.gain_index() {
            Some(gi) => grad_xi[gi] += gz * dt * rate / tau,
            None => {}
        }
        match drate {
            Some(d) => {
                let g = gz * dt * gain / tau * d;
                for &src in ch.presynaptic() {
                    grad_xi[src] += g;
                }
            }
            None => grad_xi[layout::U] += gz * dt * gain / tau,
        }
        let dtau = dt * (-gain * rate / (tau * tau) + 2.0 * z / (tau * tau) + 2.0 * v / (tau * tau * tau));
        match ch.time_constant() {
            TimeConstant::Excitatory => g_tau_e += gz * dtau,
            TimeConstant::Inhibitory => g_tau_i += gz * dtau,
        }
    }
    (g_tau_e, g_tau_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layout::*;

    fn frame() -> TimeConstantFrame {
        TimeConstantFrame::from_params(&ModelParams::default())
    }

    // Independent erf(1) via its Maclaurin series.
    fn erf_series(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = x;
        for n in 0..60 {
            sum += term / (2 * n + 1) as f64;
            term *= -x * x / (n + 1) as f64;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(6.0, 6.0, 3.0).unwrap(), 0.5);
        assert!((sigmoid(1e6, 6.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(sigmoid(-1e6, 6.0, 3.0).unwrap().abs() < 1e-15);
        let expected = 0.5 * (erf_series(1.0) + 1.0);
        assert!((expected - 0.921_350_396_474_857_7).abs() < 1e-12);
        let got = sigmoid(9.0, 6.0, 3.0).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn sigmoid_errors() {
        assert!(sigmoid(f64::NAN, 6.0, 3.0).is_err());
        assert!(sigmoid(f64::INFINITY, 6.0, 3.0).is_err());
        assert!(sigmoid(1.0, 6.0, 0.0).is_err());
    }

    #[test]
    fn psi_block_for_tau_e() {
        let m = build_matrices(&ModelParams::default());
        assert_eq!(m.a[(V_PE, Z_PE)], 1.0);
        assert!((m.a[(Z_PE, V_PE)] + 10_000.0).abs() < 1e-9);
        assert!((m.a[(Z_PE, Z_PE)] + 200.0).abs() < 1e-12);
        assert!((m.a[(Z_PI, V_PI)] + 2_500.0).abs() < 1e-9);
        assert_eq!(m.a[(V_PE, V_PE)], 0.0);
    }

    #[test]
    fn adjacency_is_binary_and_observation_sums_pyramidal() {
        let m = build_matrices(&ModelParams::default());
        assert!(m.c.iter().all(|&c| c == 0.0 || c == 1.0));
        assert!(m.c.row(Channel::Pu.index()).iter().all(|&c| c == 0.0));
        let mut x = SVector::<f64, N_STATE>::repeat(7.5);
        x[V_PE] = 3.0;
        x[V_PI] = -2.0;
        x[V_PU] = 1.0;
        assert_eq!((m.h * x)[0], 2.0);
    }

    #[test]
    fn zero_gains_reduce_to_linear_dynamics() {
        let mut p = ModelParams::default();
        p.alpha_pe = 0.0;
        p.alpha_pi = 0.0;
        p.alpha_ip = 0.0;
        p.alpha_ep = 0.0;
        p.u = 0.0;
        let m = build_matrices(&p);
        let x = SVector::<f64, N_STATE>::from_fn(|i, _| (i as f64 - 4.0) * 0.3);
        // Only the pu column survives in B and it is multiplied by u = 0.
        let diff = m.derivative(&x, 0.0) - m.a * x;
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn zero_state_zero_gain_is_fixed_point() {
        let mut xi = AugmentedState::zeros();
        xi[U] = 0.0;
        let out = step(&xi, &frame(), &ProcessNoise::zero()).unwrap();
        assert_eq!(out, AugmentedState::zeros());
    }

    #[test]
    fn euler_step_matches_scalar_evaluation() {
        let p = ModelParams::default();
        let mut xi = AugmentedState::resting(&p);
        let init = [1.2, -30.0, -4.0, 15.0, 8.0, 100.0, 2.0, -50.0, 7.0, 20.0];
        xi.0[..10].copy_from_slice(&init);
        let out = step(&xi, &frame(), &ProcessNoise::zero()).unwrap();

        let dt = 1.0 / 400.0;
        let s = SigmoidConsts::default();
        let f = |v: f64| 0.5 * (erf((v - s.v0) / s.sigma_s) + 1.0);
        let vp = 1.2 - 4.0 + 7.0;
        // (v, z, tau, gain, rate)
        let rows = [
            (1.2, -30.0, 0.01, p.alpha_pe, f(8.0)),
            (-4.0, 15.0, 0.02, p.alpha_pi, f(2.0)),
            (8.0, 100.0, 0.01, p.alpha_ep, f(vp)),
            (2.0, -50.0, 0.01, p.alpha_ip, f(vp)),
            (7.0, 20.0, 0.01, 1.0, p.u),
        ];
        for (k, (v, z, tau, g, r)) in rows.into_iter().enumerate() {
            let v_next = v + dt * z;
            let z_next = z + dt * (g / tau * r - 2.0 / tau * z - v / (tau * tau));
            assert!((out[2 * k] - v_next).abs() < 1e-12);
            assert!((out[2 * k + 1] - z_next).abs() < 1e-9 * z_next.abs().max(1.0));
        }
        assert_eq!(&out.0[U..], &xi.0[U..]);
    }

    #[test]
    fn non_finite_step_names_channel() {
        let mut xi = AugmentedState::resting(&ModelParams::default());
        xi[Z_PI] = f64::INFINITY;
        match step(&xi, &frame(), &ProcessNoise::zero()) {
            Err(Error::IntegrationDivergence { channel, .. }) => assert_eq!(channel, "pi"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let p = ModelParams::at_time_constants(0.02, 0.03);
        let mut xi = AugmentedState::resting(&p).0;
        for (i, x) in xi.iter_mut().take(10).enumerate() {
            *x = if i % 2 == 0 { 2.0 + i as f64 } else { 40.0 - 9.0 * i as f64 };
        }
        let upstream: [f64; N_AUG] = std::array::from_fn(|i| 0.3 + 0.1 * i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 });
        let fr = TimeConstantFrame::from_params(&p);
        let mut grad = [0.0; N_AUG];
        let (gte, gti) = transition_vjp(&xi, &fr, &upstream, &mut grad);
        let objective = |x: &[f64; N_AUG], f: &TimeConstantFrame| -> f64 {
            transition(x, f).iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        for i in 0..N_AUG {
            let h = 1e-6 * xi[i].abs().max(1.0);
            let (mut a, mut b) = (xi, xi);
            a[i] += h;
            b[i] -= h;
            let fd = (objective(&a, &fr) - objective(&b, &fr)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0), "entry {i}: {fd} vs {}", grad[i]);
        }
        let h = 1e-8;
        let fd_e = (objective(&xi, &TimeConstantFrame { tau_e: fr.tau_e + h, ..fr })
            - objective(&xi, &TimeConstantFrame { tau_e: fr.tau_e - h, ..fr }))
            / (2.0 * h);
        let fd_i = (objective(&xi, &TimeConstantFrame { tau_i: fr.tau_i + h, ..fr })
            - objective(&xi, &TimeConstantFrame { tau_i: fr.tau_i - h, ..fr }))
            / (2.0 * h);
        assert!((fd_e - gte).abs() <= 1e-5 * fd_e.abs().max(1.0));
        assert!((fd_i - gti).abs() <= 1e-5 * fd_i.abs().max(1.0));
    }
}
