//! Jansen-Rit neural mass model: parameters, the augmented-state layout, the
//! discretised dynamics and the simulator.
//!
//! The model has five synaptic channels. Each channel `mn` carries the
//! post-synaptic potential `v_mn` of population `m` driven by population `n`
//! together with its derivative `z_mn`:
//!
//! | channel | target       | source                      | time constant |
//! |---------|--------------|-----------------------------|---------------|
//! | `pe`    | pyramidal    | excitatory interneurons     | `tau_e`       |
//! | `pi`    | pyramidal    | inhibitory interneurons     | `tau_i`       |
//! | `ep`    | excitatory   | pyramidal                   | `tau_e`       |
//! | `ip`    | inhibitory   | pyramidal                   | `tau_e`       |
//! | `pu`    | pyramidal    | external input `u` (direct) | `tau_e`       |
//!
//! The augmented state is `[v_pe, z_pe, v_pi, z_pi, v_ep, z_ep, v_ip, z_ip,
//! v_pu, z_pu, u, alpha_pe, alpha_pi, alpha_ip, alpha_ep]`. Estimation targets
//! append `tau_e` and `tau_i` to that vector.

mod dynamics;
mod params;
mod simulate;

pub use dynamics::{
    build_matrices, observe, phi, phi_prime, sigmoid, step, step_with_sigmoid, transition,
    transition_vjp, ProcessNoise, SystemMatrices, TimeConstantFrame,
};
pub use params::{AugmentedState, Channel, ModelParams, SigmoidConsts, TimeConstant};
pub use simulate::{
    derive_seed, simulate, simulate_with_discard, ParamKnot, ParamSchedule, Trajectory,
    TrajectoryMeta, TRANSIENT_DISCARD_S,
};

/// Index constants for the augmented state and the 17-entry target vector.
pub mod layout {
    pub const N_CHANNELS: usize = 5;
    pub const N_STATE: usize = 10;
    pub const N_PARAM: usize = 5;
    pub const N_AUG: usize = N_STATE + N_PARAM;
    pub const N_TARGET: usize = N_AUG + 2;

    pub const V_PE: usize = 0;
    pub const Z_PE: usize = 1;
    pub const V_PI: usize = 2;
    pub const Z_PI: usize = 3;
    pub const V_EP: usize = 4;
    pub const Z_EP: usize = 5;
    pub const V_IP: usize = 6;
    pub const Z_IP: usize = 7;
    pub const V_PU: usize = 8;
    pub const Z_PU: usize = 9;

    pub const U: usize = 10;
    pub const ALPHA_PE: usize = 11;
    pub const ALPHA_PI: usize = 12;
    pub const ALPHA_IP: usize = 13;
    pub const ALPHA_EP: usize = 14;

    pub const TAU_E: usize = 15;
    pub const TAU_I: usize = 16;

    /// Augmented-state entries read by the observation row `H`.
    pub const OBSERVED: [usize; 3] = [V_PE, V_PI, V_PU];
    /// The five entries of the parameter block.
    pub const PARAMS: [usize; 5] = [U, ALPHA_PE, ALPHA_PI, ALPHA_IP, ALPHA_EP];
    /// The four connectivity gains.
    pub const GAINS: [usize; 4] = [ALPHA_PE, ALPHA_PI, ALPHA_IP, ALPHA_EP];

    /// Column names of the 17 targets, in layout order.
    pub const TARGET_NAMES: [&str; N_TARGET] = [
        "v_pe", "z_pe", "v_pi", "z_pi", "v_ep", "z_ep", "v_ip", "z_ip", "v_pu", "z_pu", "u",
        "alpha_pe", "alpha_pi", "alpha_ip", "alpha_ep", "tau_e", "tau_i",
    ];
}
