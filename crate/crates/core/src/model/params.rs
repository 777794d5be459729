use serde::{Deserialize, Serialize};

use super::layout::{self, N_AUG, N_TARGET};
use crate::error::{Error, Result};

/// Reference time constants at which the default gains are quoted.
const TAU_E_REF: f64 = 0.01;
const TAU_I_REF: f64 = 0.02;

// Jansen-Rit gains (A = 3.25 mV, B = 22 mV, C = 135, 2 e0 = 5 s^-1) folded into
// the `alpha / tau * phi` drive convention.
const ALPHA_PE_REF: f64 = 3.25 * 108.0 * 5.0;
const ALPHA_PI_REF: f64 = -22.0 * 33.75 * 5.0;
const ALPHA_IP_REF: f64 = 3.25 * 33.75 * 5.0;
const ALPHA_EP_REF: f64 = 3.25 * 135.0 * 5.0;

/// Physical parameters of the Jansen-Rit model.
///
/// Units: time constants and `dt` in seconds, gains in mV, `v0` and `sigma_s`
/// in mV, `u` is a firing-rate drive (mV/s once multiplied by the unit gain of
/// the `pu` channel), `q_process` in mV/s per step, `r_obs` in mV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub tau_e: f64,
    pub tau_i: f64,
    pub alpha_pe: f64,
    pub alpha_pi: f64,
    pub alpha_ip: f64,
    pub alpha_ep: f64,
    pub u: f64,
    pub v0: f64,
    pub sigma_s: f64,
    pub dt: f64,
    /// Std of the Gaussian increment added to every `z` row per step.
    pub q_process: f64,
    /// Std of the random-walk increment added to the parameter block per step.
    #[serde(default)]
    pub q_param: f64,
    /// Observation noise std.
    pub r_obs: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            tau_e: TAU_E_REF,
            tau_i: TAU_I_REF,
            alpha_pe: ALPHA_PE_REF,
            alpha_pi: ALPHA_PI_REF,
            alpha_ip: ALPHA_IP_REF,
            alpha_ep: ALPHA_EP_REF,
            u: 1000.0,
            v0: 6.0,
            sigma_s: 3.0,
            dt: 1.0 / 400.0,
            q_process: 5.0,
            q_param: 0.0,
            r_obs: 0.1,
        }
    }
}

impl ModelParams {
    /// Default parameters with the given time constants.
    ///
    /// Gains are rescaled so that each channel's static gain `alpha * tau`
    /// stays at its reference value; only the kernel shape changes.
    pub fn at_time_constants(tau_e: f64, tau_i: f64) -> Self {
        Self::default().with_time_constants(tau_e, tau_i)
    }

    pub fn with_time_constants(mut self, tau_e: f64, tau_i: f64) -> Self {
        let se = TAU_E_REF / tau_e;
        let si = TAU_I_REF / tau_i;
        self.tau_e = tau_e;
        self.tau_i = tau_i;
        self.alpha_pe = ALPHA_PE_REF * se;
        self.alpha_pi = ALPHA_PI_REF * si;
        self.alpha_ip = ALPHA_IP_REF * se;
        self.alpha_ep = ALPHA_EP_REF * se;
        self
    }

    pub fn with_input(mut self, u: f64) -> Self {
        self.u = u;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tau_e,
            self.tau_i,
            self.alpha_pe,
            self.alpha_pi,
            self.alpha_ip,
            self.alpha_ep,
            self.u,
            self.v0,
            self.sigma_s,
            self.dt,
            self.q_process,
            self.q_param,
            self.r_obs,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite model parameter".into()));
        }
        for (name, tau) in [("tau_e", self.tau_e), ("tau_i", self.tau_i)] {
            if !(0.005..=0.1).contains(&tau) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {tau} outside [0.005, 0.1] s"
                )));
            }
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if self.sigma_s <= 0.0 {
            return Err(Error::InvalidParameter("sigma_s must be positive".into()));
        }
        if self.r_obs < 0.0 || self.q_process < 0.0 || self.q_param < 0.0 {
            return Err(Error::InvalidParameter("noise stds must be non-negative".into()));
        }
        Ok(())
    }

    /// Parameter block `[u, alpha_pe, alpha_pi, alpha_ip, alpha_ep]`.
    pub fn theta(&self) -> [f64; 5] {
        [self.u, self.alpha_pe, self.alpha_pi, self.alpha_ip, self.alpha_ep]
    }

    pub fn sigmoid(&self) -> SigmoidConsts {
        SigmoidConsts {
            v0: self.v0,
            sigma_s: self.sigma_s,
        }
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Linear interpolation of every field, `w` in `[0, 1]`.
    pub fn lerp(&self, other: &Self, w: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * w;
        Self {
            tau_e: l(self.tau_e, other.tau_e),
            tau_i: l(self.tau_i, other.tau_i),
            alpha_pe: l(self.alpha_pe, other.alpha_pe),
            alpha_pi: l(self.alpha_pi, other.alpha_pi),
            alpha_ip: l(self.alpha_ip, other.alpha_ip),
            alpha_ep: l(self.alpha_ep, other.alpha_ep),
            u: l(self.u, other.u),
            v0: l(self.v0, other.v0),
            sigma_s: l(self.sigma_s, other.sigma_s),
            dt: self.dt,
            q_process: l(self.q_process, other.q_process),
            q_param: l(self.q_param, other.q_param),
            r_obs: l(self.r_obs, other.r_obs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidConsts {
    pub v0: f64,
    pub sigma_s: f64,
}

impl Default for SigmoidConsts {
    fn default() -> Self {
        Self {
            v0: 6.0,
            sigma_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeConstant {
    Excitatory,
    Inhibitory,
}

/// Synaptic channels in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Pe,
    Pi,
    Ep,
    Ip,
    Pu,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::Pe, Channel::Pi, Channel::Ep, Channel::Ip, Channel::Pu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Pe => "pe",
            Channel::Pi => "pi",
            Channel::Ep => "ep",
            Channel::Ip => "ip",
            Channel::Pu => "pu",
        }
    }

    pub fn v_index(self) -> usize {
        2 * self.index()
    }

    pub fn z_index(self) -> usize {
        2 * self.index() + 1
    }

    pub fn time_constant(self) -> TimeConstant {
        match self {
            Channel::Pi => TimeConstant::Inhibitory,
            _ => TimeConstant::Excitatory,
        }
    }

    /// Augmented-state index of the gain, `None` for the unit-gain input channel.
    pub fn gain_index(self) -> Option<usize> {
        match self {
            Channel::Pe => Some(layout::ALPHA_PE),
            Channel::Pi => Some(layout::ALPHA_PI),
            Channel::Ep => Some(layout::ALPHA_EP),
            Channel::Ip => Some(layout::ALPHA_IP),
            Channel::Pu => None,
        }
    }

    /// State entries summed to form the presynaptic potential feeding this
    /// channel's sigmoid. Empty for `pu`, which is driven by `u` directly.
    pub fn presynaptic(self) -> &'static [usize] {
        match self {
            Channel::Pe => &[layout::V_EP],
            Channel::Pi => &[layout::V_IP],
            Channel::Ep | Channel::Ip => &layout::OBSERVED,
            Channel::Pu => &[],
        }
    }
}

/// State vector concatenated with the parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState(pub [f64; N_AUG]);

impl AugmentedState {
    pub fn zeros() -> Self {
        Self([0.0; N_AUG])
    }

    /// Zero membrane state with the parameter block taken from `p`.
    pub fn resting(p: &ModelParams) -> Self {
        let mut xi = Self::zeros();
        xi.0[layout::U..].copy_from_slice(&p.theta());
        xi
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// The 17-entry target vector: augmented state then `tau_e`, `tau_i`.
    pub fn with_time_constants(&self, tau_e: f64, tau_i: f64) -> [f64; N_TARGET] {
        let mut out = [0.0; N_TARGET];
        out[..N_AUG].copy_from_slice(&self.0);
        out[layout::TAU_E] = tau_e;
        out[layout::TAU_I] = tau_i;
        out
    }
}

impl std::ops::Index<usize> for AugmentedState {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for AugmentedState {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
