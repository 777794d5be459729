//! Standardized RMSE scoring, heat grids over the time-constant plane,
//! observation-noise robustness and the time-varying tracking scenario.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{gated_recording, GatedRecording, InputRange, SweepConfig};
use crate::dataset::{mean_std, Split, Stats};
use crate::error::{Error, Result};
use crate::estimator::{EstimationContext, Estimator};
use crate::model::layout::{self, N_AUG, N_TARGET, TARGET_NAMES};
use crate::model::{derive_seed, simulate, ModelParams, ParamKnot, ParamSchedule, Trajectory};
use crate::track::EstimateTrack;

/// `sqrt(mean(((x - x_hat) / sigma)^2))`.
pub fn rmse_standardized(truth: &[f64], pred: &[f64], sigma: f64) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidParameter("truth and prediction lengths differ".into()));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSample(format!("standard deviation {sigma} is not positive")));
    }
    let ss: f64 = truth.iter().zip(pred).map(|(x, p)| ((x - p) / sigma).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Squared Pearson correlation.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("need two equal-length series of at least 2 samples".into()));
    }
    let (mx, sx) = mean_std(x.iter().copied());
    let (my, sy) = mean_std(y.iter().copied());
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::DegenerateSample("constant series".into()));
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    Ok((cov / (sx * sy)).powi(2))
}

/// Per-variable standard deviations of the raw (physical) targets of a split.
pub fn split_sigma(split: &Split, stats: &Stats) -> Result<[f64; N_TARGET]> {
    if split.is_empty() {
        return Err(Error::Empty("split has no windows".into()));
    }
    let mut out = [0.0; N_TARGET];
    for (j, o) in out.iter_mut().enumerate() {
        let col = split.targets.iter().skip(j).step_by(N_TARGET).map(|&x| stats.target_mean[j] + stats.target_std[j] * x);
        let (_, s) = mean_std(col);
        *o = if s > 0.0 { s } else { 1.0 };
    }
    Ok(out)
}

/// Per-variable RMSE of `track` against `truth` rows over the track length.
/// Variables the method does not estimate are still scored.
pub fn track_rmse(truth: &[[f64; N_TARGET]], track: &EstimateTrack, sigma: &[f64; N_TARGET]) -> Result<[f64; N_TARGET]> {
    let n = track.len();
    if n == 0 || n > truth.len() {
        return Err(Error::InvalidParameter(format!("track of length {n} cannot be scored against {} rows", truth.len())));
    }
    let mut out = [0.0; N_TARGET];
    for (j, o) in out.iter_mut().enumerate() {
        let t: Vec<f64> = truth[..n].iter().map(|r| r[j]).collect();
        *o = rmse_standardized(&t, &track.column(j), sigma[j])?;
    }
    Ok(out)
}

/// Mean over the five parameter-block variables.
pub fn parameter_rmse(per_var: &[f64; N_TARGET]) -> f64 {
    layout::PARAMS.iter().map(|&j| per_var[j]).sum::<f64>() / layout::PARAMS.len() as f64
}

/// Mean over the four gains.
pub fn gain_rmse(per_var: &[f64; N_TARGET]) -> f64 {
    layout::GAINS.iter().map(|&j| per_var[j]).sum::<f64>() / layout::GAINS.len() as f64
}

/// Mean over the 15 augmented-state entries.
pub fn overall_rmse(per_var: &[f64; N_TARGET]) -> f64 {
    per_var[..N_AUG].iter().sum::<f64>() / N_AUG as f64
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Adds zero-mean Gaussian noise with standard deviation
/// `fraction * std(recording)`.
pub fn add_observation_noise(recording: &[f64], fraction: f64, seed: u64) -> Result<Vec<f64>> {
    if !(fraction >= 0.0) {
        return Err(Error::InvalidParameter("noise fraction must be non-negative".into()));
    }
    if fraction == 0.0 {
        return Ok(recording.to_vec());
    }
    let (_, s) = mean_std(recording.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(recording.iter().map(|&y| y + fraction * s * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Identifies one scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub method: String,
    pub tau_e: f64,
    pub tau_i: f64,
    pub u: f64,
    pub noise: f64,
}

/// RMSE of every variable for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub key: RunKey,
    pub rmse: [f64; N_TARGET],
    pub n: usize,
    pub diverged: bool,
}

impl RunScore {
    pub fn parameter(&self) -> f64 {
        parameter_rmse(&self.rmse)
    }

    pub fn overall(&self) -> f64 {
        overall_rmse(&self.rmse)
    }
}

/// Long-format collection of run scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RmseReport {
    pub runs: Vec<RunScore>,
}

/// Aggregate used for a heat-grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Variable(usize),
    Parameters,
    Gains,
    Overall,
}

impl Aggregate {
    pub fn label(&self) -> String {
        match self {
            Aggregate::Variable(j) => TARGET_NAMES[*j].to_string(),
            Aggregate::Parameters => "parameters".into(),
            Aggregate::Gains => "gains".into(),
            Aggregate::Overall => "overall".into(),
        }
    }

    pub fn of(&self, rmse: &[f64; N_TARGET]) -> f64 {
        match self {
            Aggregate::Variable(j) => rmse[*j],
            Aggregate::Parameters => parameter_rmse(rmse),
            Aggregate::Gains => gain_rmse(rmse),
            Aggregate::Overall => overall_rmse(rmse),
        }
    }
}

impl RmseReport {
    pub fn methods(&self) -> Vec<String> {
        let mut m: Vec<String> = self.runs.iter().map(|r| r.key.method.clone()).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Median of `agg` over non-diverged runs matching `method` and `noise`.
    pub fn median(&self, method: &str, noise: f64, agg: Aggregate) -> Option<f64> {
        let mut v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.key.method == method && r.key.noise == noise && !r.diverged)
            .map(|r| agg.of(&r.rmse))
            .collect();
        median(&mut v)
    }

    pub fn diverged_count(&self, method: &str) -> usize {
        self.runs.iter().filter(|r| r.key.method == method && r.diverged).count()
    }

    /// Median over inputs per `(tau_e, tau_i)` cell, excluding diverged runs.
    pub fn grid(&self, method: &str, noise: f64, agg: Aggregate) -> HeatGrid {
        let mut cells: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
        let mut e_axis = Vec::new();
        let mut i_axis = Vec::new();
        for r in self.runs.iter().filter(|r| r.key.noise == noise) {
            e_axis.push(r.key.tau_e);
            i_axis.push(r.key.tau_i);
            if r.key.method == method {
                let entry = cells.entry((r.key.tau_e.to_bits(), r.key.tau_i.to_bits())).or_default();
                if !r.diverged {
                    entry.push(agg.of(&r.rmse));
                }
            }
        }
        for a in [&mut e_axis, &mut i_axis] {
            a.sort_by(f64::total_cmp);
            a.dedup();
        }
        let values = e_axis
            .iter()
            .flat_map(|&e| i_axis.iter().map(move |&i| (e, i)))
            .map(|(e, i)| cells.get_mut(&(e.to_bits(), i.to_bits())).and_then(|v| median(v)))
            .collect();
        HeatGrid {
            label: format!("{method} {}", agg.label()),
            tau_e: e_axis,
            tau_i: i_axis,
            cells: values,
            scale: (0.0, 1.0),
        }
    }

    /// CSV columns: method, tau_e, tau_i, u, noise, variable, rmse, n, diverged.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "method,tau_e,tau_i,u,noise,variable,rmse,n,diverged")?;
        for r in &self.runs {
            for (j, name) in TARGET_NAMES.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.key.method, r.key.tau_e, r.key.tau_i, r.key.u, r.key.noise, name, r.rmse[j], r.n, r.diverged
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregated values over the `(tau_e, tau_i)` plane; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub label: String,
    pub tau_e: Vec<f64>,
    pub tau_i: Vec<f64>,
    /// Row-major, rows indexed by `tau_e`.
    pub cells: Vec<Option<f64>>,
    /// Suggested colour-scale bounds.
    pub scale: (f64, f64),
}

impl HeatGrid {
    pub fn get(&self, tau_e: f64, tau_i: f64) -> Option<f64> {
        let r = self.tau_e.iter().position(|&x| x == tau_e)?;
        let c = self.tau_i.iter().position(|&x| x == tau_i)?;
        self.cells[r * self.tau_i.len() + c]
    }

    /// `self - other` cellwise. A positive cell means `self` has the higher error.
    pub fn difference(&self, other: &HeatGrid) -> Result<HeatGrid> {
        if self.tau_e != other.tau_e || self.tau_i != other.tau_i {
            return Err(Error::InvalidParameter("grids have different axes".into()));
        }
        Ok(HeatGrid {
            label: format!("{} minus {}", self.label, other.label),
            tau_e: self.tau_e.clone(),
            tau_i: self.tau_i.clone(),
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| Some((*a)? - (*b)?))
                .collect(),
            scale: (-1.0, 1.0),
        })
    }

    /// Matrix CSV: header row of `tau_i` values, one row per `tau_e`; `NA`
    /// marks missing cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {} scale=[{}, {}]", self.label, self.scale.0, self.scale.1)?;
        write!(w, "tau_e\\tau_i")?;
        for i in &self.tau_i {
            write!(w, ",{i}")?;
        }
        writeln!(w)?;
        for (r, e) in self.tau_e.iter().enumerate() {
            write!(w, "{e}")?;
            for c in 0..self.tau_i.len() {
                match self.cells[r * self.tau_i.len() + c] {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",NA")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fresh gated recordings for evaluation: `inputs_per_pair` per range.
pub fn eval_recordings(ranges: &[InputRange], cfg: &SweepConfig, inputs_per_pair: usize, duration: f64, seed: u64) -> Result<Vec<GatedRecording>> {
    let mut out = Vec::new();
    for (p, r) in ranges.iter().enumerate() {
        for q in 0..inputs_per_pair {
            if let Some(rec) = gated_recording(r, cfg, duration, derive_seed(seed, (p * 10_000 + q) as u64))? {
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// Scores one estimator run against a simulated recording.
pub fn score(rec: &GatedRecording, track: &EstimateTrack, noise: f64, sigma: &[f64; N_TARGET]) -> Result<RunScore> {
    let truth = rec.trajectory.target_rows();
    let key = RunKey {
        method: track.method.clone(),
        tau_e: rec.tau_e,
        tau_i: rec.tau_i,
        u: rec.u,
        noise,
    };
    if track.is_empty() || !track.is_finite() {
        return Ok(RunScore {
            key,
            rmse: [f64::INFINITY; N_TARGET],
            n: track.len(),
            diverged: true,
        });
    }
    Ok(RunScore {
        key,
        rmse: track_rmse(&truth, track, sigma)?,
        n: track.len(),
        diverged: track.diverged(),
    })
}

/// Runs every estimator on every recording at every noise level.
/// Returns the scores and the tracks, keyed in the same order.
pub fn run_grid_eval(
    recordings: &[GatedRecording],
    estimators: &[&dyn Estimator],
    noise_levels: &[f64],
    sigma: &[f64; N_TARGET],
    seed: u64,
) -> Result<(RmseReport, Vec<(RunKey, EstimateTrack)>)> {
    let mut report = RmseReport::default();
    let mut tracks = Vec::new();
    for (n, rec) in recordings.iter().enumerate() {
        let traj = &rec.trajectory;
        let truth = traj.params_truth[0];
        let ctx = EstimationContext::simulated(traj.dt, &traj.states[0], &truth);
        for (l, &noise) in noise_levels.iter().enumerate() {
            let obs = add_observation_noise(&traj.observations, noise, derive_seed(seed, (n * 100 + l) as u64))?;
            for est in estimators {
                let track = est.estimate(&obs, &ctx)?;
                let s = score(rec, &track, noise, sigma)?;
                tracks.push((s.key.clone(), track));
                report.runs.push(s);
            }
        }
    }
    Ok((report, tracks))
}

/// Segment-hold schedule and its simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVarying {
    pub schedule: ParamSchedule,
    pub trajectory: Trajectory,
    /// `[start, end)` seconds of each constant segment.
    pub segments: Vec<(f64, f64)>,
}

pub const SEGMENT_HOLD_S: f64 = 5.0;
pub const SEGMENT_RAMP_S: f64 = 5.0;

/// Input that keeps the pyramidal drive `tau_e * u` at 8 mV.
pub fn scenario_input(tau_e: f64) -> f64 {
    8.0 / tau_e
}

/// `n_segments` constant segments of 5 s joined by 5 s linear ramps. Time
/// constants are drawn uniformly in [0.01, 0.06]; gains follow the time
/// constants and the input follows [`scenario_input`].
pub fn timevarying_scenario(seed: u64, n_segments: usize, base: &ModelParams) -> Result<TimeVarying> {
    if n_segments < 2 {
        return Err(Error::InvalidParameter("need at least two segments".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut knots = Vec::new();
    let mut segments = Vec::new();
    for k in 0..n_segments {
        let tau_e = rng.random_range(0.01..=0.06);
        let tau_i = rng.random_range(0.01..=0.06);
        let p = base.with_time_constants(tau_e, tau_i).with_input(scenario_input(tau_e));
        let start = k as f64 * (SEGMENT_HOLD_S + SEGMENT_RAMP_S);
        let end = start + SEGMENT_HOLD_S;
        knots.push(ParamKnot { time: start, params: p });
        knots.push(ParamKnot { time: end, params: p });
        segments.push((start, end));
    }
    let duration = (2 * n_segments - 1) as f64 * SEGMENT_HOLD_S;
    let schedule = ParamSchedule::PiecewiseLinear(knots);
    let trajectory = simulate(&schedule, duration, derive_seed(seed, 1))?;
    Ok(TimeVarying {
        schedule,
        trajectory,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTracking {
    pub method: String,
    pub whole: [f64; N_TARGET],
    pub segments: Vec<[f64; N_TARGET]>,
    pub diverged: bool,
}

impl MethodTracking {
    pub fn whole_parameter(&self) -> f64 {
        parameter_rmse(&self.whole)
    }

    pub fn segment_parameter(&self, k: usize) -> f64 {
        parameter_rmse(&self.segments[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingComparison {
    pub methods: Vec<MethodTracking>,
    /// For each variable, the method with the lower whole-run RMSE.
    pub winners: Vec<(String, String)>,
}

fn segment_rows(times: &[f64], seg: (f64, f64)) -> std::ops::Range<usize> {
    let start = times.iter().position(|&t| t >= seg.0 - 1e-9).unwrap_or(times.len());
    let end = times.iter().position(|&t| t >= seg.1 - 1e-9).unwrap_or(times.len());
    start..end
}

/// Whole-run and per-segment RMSE for each track. A diverged track is
/// scored over the part it produced; segments it never reached are infinite.
pub fn compare_timevarying(tv: &TimeVarying, tracks: &[&EstimateTrack], sigma: &[f64; N_TARGET]) -> Result<TrackingComparison> {
    let truth = tv.trajectory.target_rows();
    let mut methods = Vec::new();
    for track in tracks {
        let whole = track_rmse(&truth, track, sigma)?;
        let mut segments = Vec::new();
        for &seg in &tv.segments {
            let rows = segment_rows(&tv.trajectory.times, seg);
            let end = rows.end.min(track.len());
            if rows.start >= end {
                segments.push([f64::INFINITY; N_TARGET]);
                continue;
            }
            let mut per = [0.0; N_TARGET];
            for (j, p) in per.iter_mut().enumerate() {
                let t: Vec<f64> = truth[rows.start..end].iter().map(|r| r[j]).collect();
                let e: Vec<f64> = track.estimates[rows.start..end].iter().map(|r| r[j]).collect();
                *p = rmse_standardized(&t, &e, sigma[j])?;
            }
            segments.push(per);
        }
        methods.push(MethodTracking {
            method: track.method.clone(),
            whole,
            segments,
            diverged: track.diverged(),
        });
    }
    let winners = (0..N_TARGET)
        .filter_map(|j| {
            methods
                .iter()
                .min_by(|a, b| a.whole[j].total_cmp(&b.whole[j]))
                .map(|m| (TARGET_NAMES[j].to_string(), m.method.clone()))
        })
        .collect();
    Ok(TrackingComparison { methods, winners })
}
