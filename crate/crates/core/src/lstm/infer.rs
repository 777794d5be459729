//! Window-by-window inference over recordings of any length.

use serde::{Deserialize, Serialize};

use super::network::{forward_batch, LstmWeights};
use crate::dataset::{mean_std, Stats, STD_FLOOR, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::model::layout::{N_TARGET, OBSERVED};
use crate::track::EstimateTrack;

/// How raw observations are mapped into the network's input space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputScaling {
    /// z-score with the recording's own mean and standard deviation; the
    /// result does not depend on the recording's amplitude scale.
    #[default]
    PerRecording,
    /// z-score with the training observation stats (simulated data in model units).
    TrainingStats,
}

const INFER_BATCH: usize = 32;

fn scale_input(obs: &[f64], stats: &Stats, scaling: InputScaling) -> Vec<f64> {
    let (m, s) = match scaling {
        InputScaling::PerRecording => {
            let (m, s) = mean_std(obs.iter().copied());
            (m, if s > STD_FLOOR { s } else { 1.0 })
        }
        InputScaling::TrainingStats => (stats.obs_mean, stats.obs_std),
    };
    obs.iter().map(|&y| (y - m) / s).collect()
}

/// Standardized `T x 17` estimates. Non-overlapping windows of
/// `window_len`; a shorter final window is processed as it is.
pub fn infer_windows(obs: &[f64], w: &LstmWeights, stats: &Stats, scaling: InputScaling, window_len: usize) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(Error::Empty("empty recording".into()));
    }
    if window_len == 0 {
        return Err(Error::InvalidParameter("window length must be positive".into()));
    }
    if obs.iter().any(|y| !y.is_finite()) {
        return Err(Error::numeric("lstm input", "non-finite observation"));
    }
    let x = scale_input(obs, stats, scaling);
    let n_full = x.len() / window_len;
    let mut out = vec![0.0; x.len() * N_TARGET];
    let mut starts: Vec<usize> = (0..n_full).map(|i| i * window_len).collect();
    for group in starts.chunks(INFER_BATCH) {
        let b = group.len();
        let mut input = vec![0.0; window_len * b];
        for (k, &s) in group.iter().enumerate() {
            for t in 0..window_len {
                input[t * b + k] = x[s + t];
            }
        }
        let y = forward_batch(w, &input, window_len, b)?.output;
        for (k, &s) in group.iter().enumerate() {
            for t in 0..window_len {
                let src = (t * b + k) * N_TARGET;
                out[(s + t) * N_TARGET..(s + t + 1) * N_TARGET].copy_from_slice(&y[src..src + N_TARGET]);
            }
        }
    }
    starts.clear();
    let tail = n_full * window_len;
    if tail < x.len() {
        let y = forward_batch(w, &x[tail..], x.len() - tail, 1)?.output;
        out[tail * N_TARGET..].copy_from_slice(&y);
    }
    Ok(out)
}

/// Estimates in physical units for a whole recording sampled at `dt`.
pub fn infer(obs: &[f64], dt: f64, w: &LstmWeights, stats: &Stats, scaling: InputScaling) -> Result<EstimateTrack> {
    let std_out = infer_windows(obs, w, stats, scaling, WINDOW_LEN)?;
    let estimates: Vec<[f64; N_TARGET]> = std_out.chunks_exact(N_TARGET).map(|r| stats.destandardize_target(r)).collect();
    let y_hat = estimates.iter().map(|e| OBSERVED.iter().map(|&j| e[j]).sum()).collect();
    let track = EstimateTrack {
        method: "lstm".into(),
        dt,
        times: (0..obs.len()).map(|k| k as f64 * dt).collect(),
        observations: obs.to_vec(),
        estimates,
        y_hat,
        marginal_std: None,
        innovation: None,
        divergence: None,
    };
    if !track.is_finite() {
        return Err(Error::numeric("lstm inference", "non-finite estimate"));
    }
    Ok(track)
}
