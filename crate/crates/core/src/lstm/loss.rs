//! Physics-informed training loss on one standardized window.
//!
//! * data term: mean squared error over the 17 targets and the reconstructed
//!   observation, averaged over `T * 18` slots;
//! * model term: the prediction at `t` against the one-step model map applied
//!   to the prediction at `t - 1` (in physical units, time constants taken
//!   from the prediction), re-standardized, averaged over `(T - 1) * 15`;
//! * spread term: for each gain, the window standard deviation of the
//!   predicted gain times its model-error sum, averaged over `(T - 1) * 4`
//!   and scaled by `k`.

use serde::{Deserialize, Serialize};

use crate::dataset::Stats;
use crate::error::{Error, Result};
use crate::model::layout::{self, N_AUG, N_TARGET};
use crate::model::{transition, transition_vjp, SigmoidConsts, TimeConstantFrame};

/// Predicted time constants are clamped to this range before entering the
/// model map.
pub const TAU_CLAMP: (f64, f64) = (0.005, 0.1);
const SPREAD_EPS: f64 = 1e-12;
const SLOTS: usize = N_TARGET + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub k: f64,
    pub dt: f64,
    pub sigmoid: SigmoidConsts,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k: 0.1,
            dt: 1.0 / 400.0,
            sigmoid: SigmoidConsts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub data: f64,
    pub model: f64,
    pub spread: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.data + self.model + self.spread
    }

    pub fn add_scaled(&mut self, other: &LossTerms, w: f64) {
        self.data += w * other.data;
        self.model += w * other.model;
        self.spread += w * other.spread;
    }
}

fn clamp_tau(t: f64) -> (f64, bool) {
    if t < TAU_CLAMP.0 {
        (TAU_CLAMP.0, false)
    } else if t > TAU_CLAMP.1 {
        (TAU_CLAMP.1, false)
    } else {
        (t, true)
    }
}

struct Window<'a> {
    pred: &'a [f64],
    truth: &'a [f64],
    obs: &'a [f64],
}

fn check(pred: &[f64], truth: &[f64], obs: &[f64]) -> Result<usize> {
    let steps = obs.len();
    if steps == 0 {
        return Err(Error::Empty("empty loss window".into()));
    }
    if pred.len() != steps * N_TARGET || truth.len() != steps * N_TARGET {
        return Err(Error::InvalidParameter("loss inputs have mismatched lengths".into()));
    }
    Ok(steps)
}

/// Reconstructed standardized observation from a standardized prediction row.
fn y_hat(row: &[f64], stats: &Stats) -> f64 {
    let phys: f64 = layout::OBSERVED
        .iter()
        .map(|&j| stats.target_mean[j] + stats.target_std[j] * row[j])
        .sum();
    stats.standardize_obs(phys)
}

/// Model residual at step `t >= 1` (15 entries, standardized) and the frame
/// used for the map.
fn residual(w: &Window<'_>, t: usize, stats: &Stats, cfg: &LossConfig) -> ([f64; N_AUG], [f64; N_AUG], TimeConstantFrame, [bool; 2]) {
    let prev = &w.pred[(t - 1) * N_TARGET..t * N_TARGET];
    let phys = stats.destandardize_target(prev);
    let xi: [f64; N_AUG] = std::array::from_fn(|j| phys[j]);
    let (tau_e, in_e) = clamp_tau(phys[layout::TAU_E]);
    let (tau_i, in_i) = clamp_tau(phys[layout::TAU_I]);
    let frame = TimeConstantFrame {
        tau_e,
        tau_i,
        dt: cfg.dt,
        sigmoid: cfg.sigmoid,
    };
    let next = transition(&xi, &frame);
    let cur = &w.pred[t * N_TARGET..(t + 1) * N_TARGET];
    let d = std::array::from_fn(|j| cur[j] - (next[j] - stats.target_mean[j]) / stats.target_std[j]);
    (d, xi, frame, [in_e, in_i])
}

fn spread(pred: &[f64], steps: usize) -> [(f64, f64); 4] {
    std::array::from_fn(|g| {
        let j = layout::GAINS[g];
        let mean = (0..steps).map(|t| pred[t * N_TARGET + j]).sum::<f64>() / steps as f64;
        let var = (0..steps).map(|t| (pred[t * N_TARGET + j] - mean).powi(2)).sum::<f64>() / steps as f64;
        (mean, (var + SPREAD_EPS).sqrt())
    })
}

fn attribute(terms: &LossTerms) -> Result<()> {
    for (name, v) in [("data", terms.data), ("model", terms.model), ("spread", terms.spread)] {
        if !v.is_finite() {
            return Err(Error::numeric("physics loss", format!("non-finite {name} term")));
        }
    }
    Ok(())
}

/// Loss terms for one window; `pred` and `truth` are `T x 17` row-major,
/// `obs` has length `T`, all standardized with `stats`.
pub fn physics_loss(pred: &[f64], truth: &[f64], obs: &[f64], stats: &Stats, cfg: &LossConfig) -> Result<LossTerms> {
    physics_loss_impl(pred, truth, obs, stats, cfg, None)
}

/// Loss terms and their gradient with respect to `pred`, written into `grad`
/// (overwritten).
pub fn physics_loss_grad(pred: &[f64], truth: &[f64], obs: &[f64], stats: &Stats, cfg: &LossConfig, grad: &mut [f64]) -> Result<LossTerms> {
    if grad.len() != pred.len() {
        return Err(Error::InvalidParameter("gradient buffer has the wrong length".into()));
    }
    grad.fill(0.0);
    physics_loss_impl(pred, truth, obs, stats, cfg, Some(grad))
}

fn physics_loss_impl(pred: &[f64], truth: &[f64], obs: &[f64], stats: &Stats, cfg: &LossConfig, mut grad: Option<&mut [f64]>) -> Result<LossTerms> {
    let steps = check(pred, truth, obs)?;
    let w = Window { pred, truth, obs };
    let mut terms = LossTerms::default();

    let n1 = (steps * SLOTS) as f64;
    for t in 0..steps {
        let row = &w.pred[t * N_TARGET..(t + 1) * N_TARGET];
        let trow = &w.truth[t * N_TARGET..(t + 1) * N_TARGET];
        let e_obs = y_hat(row, stats) - w.obs[t];
        let mut sq = e_obs * e_obs;
        for j in 0..N_TARGET {
            let e = row[j] - trow[j];
            sq += e * e;
        }
        terms.data += sq / n1;
        if let Some(g) = grad.as_deref_mut() {
            let gr = &mut g[t * N_TARGET..(t + 1) * N_TARGET];
            for j in 0..N_TARGET {
                gr[j] += 2.0 * (row[j] - trow[j]) / n1;
            }
            for &j in &layout::OBSERVED {
                gr[j] += 2.0 * e_obs * stats.target_std[j] / stats.obs_std / n1;
            }
        }
    }

    if steps < 2 {
        attribute(&terms)?;
        return Ok(terms);
    }
    let n2 = ((steps - 1) * N_AUG) as f64;
    let n3 = ((steps - 1) * layout::GAINS.len()) as f64;
    let spreads = spread(w.pred, steps);
    let mut gain_sq = [0.0; 4];
    for t in 1..steps {
        let (d, xi, frame, in_range) = residual(&w, t, stats, cfg);
        let mut upstream = [0.0; N_AUG];
        for j in 0..N_AUG {
            terms.model += d[j] * d[j] / n2;
            upstream[j] = 2.0 * d[j] / n2;
        }
        for (g, &j) in layout::GAINS.iter().enumerate() {
            gain_sq[g] += d[j] * d[j];
            upstream[j] += cfg.k * spreads[g].1 * 2.0 * d[j] / n3;
        }
        if let Some(gr) = grad.as_deref_mut() {
            // d(cur - standardize(map(prev))): +upstream on cur, -upstream / sigma through the map on prev.
            for j in 0..N_AUG {
                gr[t * N_TARGET + j] += upstream[j];
            }
            let back: [f64; N_AUG] = std::array::from_fn(|j| -upstream[j] / stats.target_std[j]);
            let mut g_xi = [0.0; N_AUG];
            let (g_te, g_ti) = transition_vjp(&xi, &frame, &back, &mut g_xi);
            let prev = &mut gr[(t - 1) * N_TARGET..t * N_TARGET];
            for j in 0..N_AUG {
                prev[j] += g_xi[j] * stats.target_std[j];
            }
            if in_range[0] {
                prev[layout::TAU_E] += g_te * stats.target_std[layout::TAU_E];
            }
            if in_range[1] {
                prev[layout::TAU_I] += g_ti * stats.target_std[layout::TAU_I];
            }
        }
    }
    for (g, &j) in layout::GAINS.iter().enumerate() {
        let (mean, s) = spreads[g];
        terms.spread += cfg.k * s * gain_sq[g] / n3;
        if let Some(gr) = grad.as_deref_mut() {
            let coef = cfg.k * gain_sq[g] / n3 / (steps as f64 * s);
            for t in 0..steps {
                gr[t * N_TARGET + j] += coef * (w.pred[t * N_TARGET + j] - mean);
            }
        }
    }
    attribute(&terms)?;
    Ok(terms)
}
