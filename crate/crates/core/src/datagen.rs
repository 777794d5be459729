//! Oscillation-screened sweeps over time constants and external input, and
//! assembly of standardized train/validation/test window datasets.

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split, SplitKind, Stats, WindowInfo, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::model::layout::N_TARGET;
use crate::model::{derive_seed, simulate, ModelParams, ParamSchedule, Trajectory};
use crate::stats::{detect_oscillation, GateConfig};

/// Axis values of the default training grid: 0.01 to 0.06 s in 5 ms steps.
pub fn default_axis() -> Vec<f64> {
    (0..=10).map(|i| (10 + 5 * i) as f64 / 1000.0).collect()
}

/// All `(tau_e, tau_i)` combinations of two axes.
pub fn grid(tau_e: &[f64], tau_i: &[f64]) -> Vec<(f64, f64)> {
    tau_e.iter().flat_map(|&e| tau_i.iter().map(move |&i| (e, i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub tau_grid: Vec<(f64, f64)>,
    pub u_start: f64,
    /// Multiplicative growth of the input between attempts.
    pub u_growth: f64,
    /// Additive floor on every increase.
    pub u_delta: f64,
    /// Sweeps stop once the input would exceed this value.
    pub u_ceiling: f64,
    pub max_failures: usize,
    /// Length of a gate segment in seconds.
    pub segment_len: f64,
    /// Length of a production recording in seconds.
    pub record_len: f64,
    /// Noise levels, sigmoid constants and `dt` for every simulation. Time
    /// constants, gains and input are overwritten per pair.
    pub base: ModelParams,
    pub gate: GateConfig,
    /// Input redraws allowed when a sampled input fails the gate.
    pub max_redraws: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let axis = default_axis();
        Self {
            tau_grid: grid(&axis, &axis),
            u_start: 20.0,
            u_growth: 1.25,
            u_delta: 5.0,
            u_ceiling: 1e6,
            max_failures: 15,
            segment_len: 2.0,
            record_len: 10.0,
            base: ModelParams::default(),
            gate: GateConfig::default(),
            max_redraws: 20,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        for &(e, i) in &self.tau_grid {
            if !(0.01..=0.06).contains(&e) || !(0.01..=0.06).contains(&i) {
                return Err(Error::Config(format!("time constants ({e}, {i}) outside [0.01, 0.06]")));
            }
        }
        if self.max_failures == 0 {
            return Err(Error::Config("max_failures must be at least 1".into()));
        }
        if !(self.u_growth >= 1.0) || !(self.u_delta >= 0.0) || (self.u_growth == 1.0 && self.u_delta == 0.0) {
            return Err(Error::Config("input schedule must increase".into()));
        }
        if !(self.u_start > 0.0) || !(self.u_ceiling >= self.u_start) {
            return Err(Error::Config("need 0 < u_start <= u_ceiling".into()));
        }
        if !(self.segment_len > 0.0) || !(self.record_len > 0.0) {
            return Err(Error::Config("segment_len and record_len must be positive".into()));
        }
        self.base.validate()
    }

    pub fn next_input(&self, u: f64) -> f64 {
        u * self.u_growth + self.u_delta
    }

    /// Parameters for a pair and input, noise levels from `base`.
    pub fn params(&self, tau_e: f64, tau_i: f64, u: f64) -> ModelParams {
        self.base.with_time_constants(tau_e, tau_i).with_input(u)
    }

    fn pair_seed(&self, tau_e: f64, tau_i: f64) -> u64 {
        derive_seed(derive_seed(self.seed, tau_e.to_bits()), tau_i.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub tau_e: f64,
    pub tau_i: f64,
    pub u_lo: f64,
    pub u_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAttempt {
    pub u: f64,
    pub oscillatory: bool,
    /// Set when the simulation failed; the attempt then counts as a failure.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub tau_e: f64,
    pub tau_i: f64,
    pub range: Option<InputRange>,
    pub attempts: Vec<SweepAttempt>,
}

/// Simulates a noise-free (state noise off) gate segment and runs the
/// oscillation detector on its observation.
pub fn gate_segment(p: &ModelParams, cfg: &SweepConfig, seed: u64) -> Result<bool> {
    let mut quiet = *p;
    quiet.q_process = 0.0;
    quiet.q_param = 0.0;
    let traj = simulate(&ParamSchedule::Constant(quiet), cfg.segment_len, seed)?;
    Ok(detect_oscillation(&traj.observations, &cfg.gate))
}

/// Sweeps the input upward from `u_start`. A pair is abandoned after
/// `max_failures` consecutive failed increases; once the pair has
/// oscillated, the same run of failures marks the upper bound.
pub fn find_input_range(tau_e: f64, tau_i: f64, cfg: &SweepConfig) -> Result<SweepResult> {
    find_input_range_with(tau_e, tau_i, cfg, |p, seed| gate_segment(p, cfg, seed))
}

/// [`find_input_range`] with a caller-supplied gate.
pub fn find_input_range_with<G>(tau_e: f64, tau_i: f64, cfg: &SweepConfig, mut gate: G) -> Result<SweepResult>
where
    G: FnMut(&ModelParams, u64) -> Result<bool>,
{
    cfg.validate()?;
    let seed = cfg.pair_seed(tau_e, tau_i);
    let mut attempts = Vec::new();
    let mut lo: Option<f64> = None;
    let mut hi = 0.0;
    let mut failures = 0usize;
    let mut u = cfg.u_start;
    loop {
        let p = cfg.params(tau_e, tau_i, u);
        let (ok, error) = match gate(&p, derive_seed(seed, attempts.len() as u64)) {
            Ok(ok) => (ok, None),
            Err(e) => {
                warn!("sweep ({tau_e}, {tau_i}) at u = {u}: {e}; counted as non-oscillatory");
                (false, Some(e.to_string()))
            }
        };
        let first = attempts.is_empty();
        attempts.push(SweepAttempt { u, oscillatory: ok, error });
        if ok {
            lo.get_or_insert(u);
            hi = u;
            failures = 0;
        } else if !first {
            failures += 1;
        }
        if failures >= cfg.max_failures {
            break;
        }
        let next = cfg.next_input(u);
        if next > cfg.u_ceiling {
            break;
        }
        u = next;
    }
    let range = lo.map(|u_lo| InputRange {
        tau_e,
        tau_i,
        u_lo,
        u_hi: hi,
    });
    match &range {
        Some(r) => debug!("pair ({tau_e}, {tau_i}): oscillatory for u in [{}, {}]", r.u_lo, r.u_hi),
        None => info!("pair ({tau_e}, {tau_i}) abandoned after {} attempts", attempts.len()),
    }
    Ok(SweepResult {
        tau_e,
        tau_i,
        range,
        attempts,
    })
}

/// One gated production recording.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedRecording {
    pub tau_e: f64,
    pub tau_i: f64,
    pub u: f64,
    pub trajectory: Trajectory,
}

/// Draws an input uniformly in the range, redrawing while the gate rejects
/// it, then simulates a production recording of `duration` seconds.
pub fn gated_recording(range: &InputRange, cfg: &SweepConfig, duration: f64, seed: u64) -> Result<Option<GatedRecording>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..=cfg.max_redraws {
        let u = if range.u_hi > range.u_lo {
            rng.random_range(range.u_lo..=range.u_hi)
        } else {
            range.u_lo
        };
        let p = cfg.params(range.tau_e, range.tau_i, u);
        if !gate_segment(&p, cfg, derive_seed(seed, 1000 + attempt as u64)).unwrap_or(false) {
            debug!("({}, {}) u = {u} failed the gate, redrawing", range.tau_e, range.tau_i);
            continue;
        }
        match simulate(&ParamSchedule::Constant(p), duration, derive_seed(seed, 2000 + attempt as u64)) {
            Ok(trajectory) => {
                return Ok(Some(GatedRecording {
                    tau_e: range.tau_e,
                    tau_i: range.tau_i,
                    u,
                    trajectory,
                }))
            }
            Err(e) => warn!("({}, {}) u = {u}: {e}; redrawing", range.tau_e, range.tau_i),
        }
    }
    warn!("({}, {}): no gated recording after {} draws", range.tau_e, range.tau_i, cfg.max_redraws + 1);
    Ok(None)
}

/// Raw windows before splitting.
#[derive(Debug, Clone, Default)]
struct RawWindows {
    obs: Vec<f64>,
    targets: Vec<f64>,
    info: Vec<WindowInfo>,
}

impl RawWindows {
    fn len(&self) -> usize {
        self.info.len()
    }

    fn add_recording(&mut self, rec: &GatedRecording, recording: u32, max_windows: usize) {
        let n = (rec.trajectory.len() / WINDOW_LEN).min(max_windows);
        for w in 0..n {
            let range = w * WINDOW_LEN..(w + 1) * WINDOW_LEN;
            self.obs.extend_from_slice(&rec.trajectory.observations[range.clone()]);
            for k in range {
                self.targets.extend_from_slice(&rec.trajectory.targets(k));
            }
            self.info.push(WindowInfo {
                recording,
                window: w as u32,
                tau_e: rec.tau_e,
                tau_i: rec.tau_i,
                u: rec.u,
            });
        }
    }

    fn standardized(&self, order: &[usize], kind: SplitKind, stats: &Stats) -> Split {
        let mut split = Split::empty(kind, WINDOW_LEN);
        let tw = WINDOW_LEN * N_TARGET;
        for &i in order {
            let obs: Vec<f64> = self.obs[i * WINDOW_LEN..(i + 1) * WINDOW_LEN].iter().map(|&y| stats.standardize_obs(y)).collect();
            let targets: Vec<f64> = self.targets[i * tw..(i + 1) * tw]
                .chunks_exact(N_TARGET)
                .flat_map(|r| stats.standardize_target(r))
                .collect();
            split.push(&obs, &targets, self.info[i]);
        }
        split
    }

    fn stats_of(&self, order: &[usize]) -> Result<Stats> {
        let tw = WINDOW_LEN * N_TARGET;
        let mut obs = Vec::with_capacity(order.len() * WINDOW_LEN);
        let mut targets = Vec::with_capacity(order.len() * tw);
        for &i in order {
            obs.extend_from_slice(&self.obs[i * WINDOW_LEN..(i + 1) * WINDOW_LEN]);
            targets.extend_from_slice(&self.targets[i * tw..(i + 1) * tw]);
        }
        Stats::from_raw(&obs, &targets)
    }
}

/// Split sizes for `n` windows in the ratio 80:10:10 (train gets the rounding remainder).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Generated dataset plus the sweep results it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub sweeps: Vec<SweepResult>,
}

impl Generated {
    pub fn ranges(&self) -> Vec<InputRange> {
        self.sweeps.iter().filter_map(|s| s.range).collect()
    }
}

fn collect_windows(ranges: &[InputRange], cfg: &SweepConfig, inputs_per_pair: usize, windows_per_recording: usize, stream: u64) -> Result<RawWindows> {
    let mut raw = RawWindows::default();
    let mut recording = 0u32;
    for (p, range) in ranges.iter().enumerate() {
        for q in 0..inputs_per_pair {
            let seed = derive_seed(derive_seed(cfg.seed, stream), (p * 10_000 + q) as u64);
            if let Some(rec) = gated_recording(range, cfg, cfg.record_len, seed)? {
                raw.add_recording(&rec, recording, windows_per_recording);
                recording += 1;
            }
        }
    }
    Ok(raw)
}

fn provenance(cfg: &SweepConfig, inputs_per_pair: usize, windows_per_recording: usize, sweeps: &[SweepResult]) -> serde_json::Value {
    serde_json::json!({
        "sweep": cfg,
        "inputs_per_pair": inputs_per_pair,
        "windows_per_recording": windows_per_recording,
        "sweeps": sweeps,
    })
}

/// Full pipeline: sweep every pair, record gated recordings for surviving
/// pairs, window, shuffle, split 80:10:10 and standardize with training stats.
pub fn generate_dataset(cfg: &SweepConfig, inputs_per_pair: usize, windows_per_recording: usize) -> Result<Generated> {
    cfg.validate()?;
    let sweeps = cfg
        .tau_grid
        .iter()
        .map(|&(e, i)| find_input_range(e, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let ranges: Vec<InputRange> = sweeps.iter().filter_map(|s| s.range).collect();
    if ranges.is_empty() {
        return Err(Error::Config("no (tau_e, tau_i) pair produced oscillations".into()));
    }
    info!("{} of {} pairs oscillate", ranges.len(), sweeps.len());
    let raw = collect_windows(&ranges, cfg, inputs_per_pair, windows_per_recording, 1)?;
    if raw.len() == 0 {
        return Err(Error::Config("no gated recordings were produced".into()));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2)));
    let (n_train, n_val, _) = split_sizes(order.len());
    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);
    let stats = raw.stats_of(train_idx)?;
    let dataset = Dataset {
        window_len: WINDOW_LEN,
        dt: cfg.base.dt,
        train: raw.standardized(train_idx, SplitKind::Train, &stats),
        val: raw.standardized(val_idx, SplitKind::Val, &stats),
        test: raw.standardized(test_idx, SplitKind::Test, &stats),
        stats,
        provenance: provenance(cfg, inputs_per_pair, windows_per_recording, &sweeps),
    };
    Ok(Generated { dataset, sweeps })
}

/// Sweep configuration and per-pair sweep results recorded in a dataset's
/// provenance by [`generate_dataset`].
pub fn sweep_provenance(ds: &Dataset) -> Result<(SweepConfig, Vec<SweepResult>)> {
    let get = |key: &str| {
        ds.provenance
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Format(format!("dataset provenance lacks '{key}'")))
    };
    let cfg: SweepConfig = serde_json::from_value(get("sweep")?)?;
    let sweeps: Vec<SweepResult> = serde_json::from_value(get("sweeps")?)?;
    Ok((cfg, sweeps))
}

/// Midpoints between consecutive distinct values of an axis.
pub fn interleave(axis: &[f64]) -> Vec<f64> {
    let mut v = axis.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Pairs on the grid interleaved between the training grid's axes.
pub fn offgrid_pairs(train_grid: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let e: Vec<f64> = train_grid.iter().map(|p| p.0).collect();
    let i: Vec<f64> = train_grid.iter().map(|p| p.1).collect();
    grid(&interleave(&e), &interleave(&i))
}

/// Off-grid test set: the same pipeline on the interleaved grid, every
/// window in the test split, standardized with `train_stats`.
pub fn generate_offgrid_testset(cfg: &SweepConfig, train_stats: &Stats, inputs_per_pair: usize, windows_per_recording: usize) -> Result<Generated> {
    let off = SweepConfig {
        tau_grid: offgrid_pairs(&cfg.tau_grid),
        seed: derive_seed(cfg.seed, 0x0ff),
        ..cfg.clone()
    };
    if off.tau_grid.is_empty() {
        return Err(Error::Config("training grid has no interior to interleave".into()));
    }
    let sweeps = off
        .tau_grid
        .iter()
        .map(|&(e, i)| find_input_range(e, i, &off))
        .collect::<Result<Vec<_>>>()?;
    let ranges: Vec<InputRange> = sweeps.iter().filter_map(|s| s.range).collect();
    if ranges.is_empty() {
        return Err(Error::Config("no off-grid pair produced oscillations".into()));
    }
    let raw = collect_windows(&ranges, &off, inputs_per_pair, windows_per_recording, 3)?;
    let order: Vec<usize> = (0..raw.len()).collect();
    let dataset = Dataset {
        window_len: WINDOW_LEN,
        dt: off.base.dt,
        train: Split::empty(SplitKind::Train, WINDOW_LEN),
        val: Split::empty(SplitKind::Val, WINDOW_LEN),
        test: raw.standardized(&order, SplitKind::Test, train_stats),
        stats: train_stats.clone(),
        provenance: provenance(&off, inputs_per_pair, windows_per_recording, &sweeps),
    };
    Ok(Generated { dataset, sweeps })
}
