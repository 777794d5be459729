use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dynamics::{observe, step, ProcessNoise, TimeConstantFrame};
use super::layout::{self, N_AUG, N_TARGET, TARGET_NAMES};
use super::params::{AugmentedState, ModelParams};
use crate::error::{Error, Result};

/// Seconds simulated and dropped before anything is recorded.
pub const TRANSIENT_DISCARD_S: f64 = 1.0;

const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Mixes a master seed with a stream tag (splitmix64 finaliser).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamKnot {
    /// Recorded time in seconds (after the transient discard).
    pub time: f64,
    pub params: ModelParams,
}

/// Model parameters as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSchedule {
    Constant(ModelParams),
    /// Linear interpolation between knots, held constant outside them.
    PiecewiseLinear(Vec<ParamKnot>),
}

impl From<ModelParams> for ParamSchedule {
    fn from(p: ModelParams) -> Self {
        ParamSchedule::Constant(p)
    }
}

impl ParamSchedule {
    pub fn at(&self, t: f64) -> ModelParams {
        match self {
            ParamSchedule::Constant(p) => *p,
            ParamSchedule::PiecewiseLinear(knots) => {
                let first = &knots[0];
                if t <= first.time {
                    return first.params;
                }
                for pair in knots.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    if t <= b.time {
                        let span = b.time - a.time;
                        let w = if span > 0.0 { (t - a.time) / span } else { 1.0 };
                        return a.params.lerp(&b.params, w);
                    }
                }
                knots[knots.len() - 1].params
            }
        }
    }

    pub fn dt(&self) -> f64 {
        self.at(0.0).dt
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSchedule::Constant(p) => p.validate(),
            ParamSchedule::PiecewiseLinear(knots) => {
                if knots.is_empty() {
                    return Err(Error::InvalidParameter("empty parameter schedule".into()));
                }
                let dt = knots[0].params.dt;
                for k in knots {
                    k.params.validate()?;
                    if k.params.dt != dt {
                        return Err(Error::InvalidParameter("schedule knots disagree on dt".into()));
                    }
                }
                if knots.windows(2).any(|w| w[1].time < w[0].time) {
                    return Err(Error::InvalidParameter("schedule knots not sorted by time".into()));
                }
                Ok(())
            }
        }
    }
}

/// Recorded simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<AugmentedState>,
    pub observations: Vec<f64>,
    pub params_truth: Vec<ModelParams>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// 17-entry target vector at sample `k`.
    pub fn targets(&self, k: usize) -> [f64; N_TARGET] {
        let p = &self.params_truth[k];
        self.states[k].with_time_constants(p.tau_e, p.tau_i)
    }

    pub fn target_rows(&self) -> Vec<[f64; N_TARGET]> {
        (0..self.len()).map(|k| self.targets(k)).collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            dt: self.dt,
            times: self.times[range.clone()].to_vec(),
            states: self.states[range.clone()].to_vec(),
            observations: self.observations[range.clone()].to_vec(),
            params_truth: self.params_truth[range].to_vec(),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.times.len();
        if self.states.len() != n || self.observations.len() != n || self.params_truth.len() != n {
            return Err(Error::Format("trajectory field lengths differ".into()));
        }
        for w in self.times.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) || (gap - self.dt).abs() > 1e-9 * self.dt.max(1.0) {
                return Err(Error::Format("trajectory times not spaced by dt".into()));
            }
        }
        Ok(())
    }

    /// Writes the columnar CSV and its JSON sidecar (`<path>.meta.json`).
    pub fn export(&self, csv_path: &Path, meta: &TrajectoryMeta) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header = vec!["time".to_string(), "y".to_string()];
        header.extend(TARGET_NAMES.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(2 + N_TARGET);
            row.push(self.times[k].to_string());
            row.push(self.observations[k].to_string());
            row.extend(self.targets(k).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        let mut f = std::fs::File::create(sidecar_path(csv_path))?;
        f.write_all(serde_json::to_string_pretty(meta)?.as_bytes())?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::export`].
    pub fn import(csv_path: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
        let mut text = String::new();
        std::fs::File::open(sidecar_path(csv_path))?.read_to_string(&mut text)?;
        let meta: TrajectoryMeta = serde_json::from_str(&text)?;
        if meta.version != TRAJECTORY_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "trajectory format version {} unsupported (expected {})",
                meta.version, TRAJECTORY_FORMAT_VERSION
            )));
        }
        let mut r = csv::Reader::from_path(csv_path)?;
        let expected = 2 + N_TARGET;
        let mut traj = Trajectory {
            dt: meta.dt,
            times: Vec::new(),
            states: Vec::new(),
            observations: Vec::new(),
            params_truth: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != expected {
                return Err(Error::Format(format!("expected {expected} columns, got {}", rec.len())));
            }
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let t = vals[0];
            let mut xi = AugmentedState::zeros();
            xi.0.copy_from_slice(&vals[2..2 + N_AUG]);
            let mut p = meta.schedule.at(t);
            p.tau_e = vals[2 + layout::TAU_E];
            p.tau_i = vals[2 + layout::TAU_I];
            p.u = xi[layout::U];
            p.alpha_pe = xi[layout::ALPHA_PE];
            p.alpha_pi = xi[layout::ALPHA_PI];
            p.alpha_ip = xi[layout::ALPHA_IP];
            p.alpha_ep = xi[layout::ALPHA_EP];
            traj.times.push(t);
            traj.observations.push(vals[1]);
            traj.states.push(xi);
            traj.params_truth.push(p);
        }
        Ok((traj, meta))
    }
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Sidecar metadata for an exported trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub version: u32,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub transient_discard: f64,
    pub schedule: ParamSchedule,
}

impl TrajectoryMeta {
    pub fn new(schedule: &ParamSchedule, seed: u64, duration: f64) -> Self {
        Self {
            version: TRAJECTORY_FORMAT_VERSION,
            seed,
            dt: schedule.dt(),
            duration,
            transient_discard: TRANSIENT_DISCARD_S,
            schedule: schedule.clone(),
        }
    }
}

/// Simulates `duration` seconds after discarding the initial transient.
pub fn simulate(schedule: &ParamSchedule, duration: f64, seed: u64) -> Result<Trajectory> {
    simulate_with_discard(schedule, duration, TRANSIENT_DISCARD_S, seed)
}

pub fn simulate_with_discard(
    schedule: &ParamSchedule,
    duration: f64,
    discard: f64,
    seed: u64,
) -> Result<Trajectory> {
    schedule.validate()?;
    let dt = schedule.dt();
    if !(duration >= dt) {
        return Err(Error::InvalidParameter(format!("duration {duration} shorter than dt {dt}")));
    }
    let n_keep = (duration / dt).round() as usize;
    let n_discard = (discard.max(0.0) / dt).round() as usize;
    let total = n_discard + n_keep;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi = AugmentedState::resting(&schedule.at(0.0));
    let mut walk = [0.0; 5];
    let mut traj = Trajectory {
        dt,
        times: Vec::with_capacity(n_keep),
        states: Vec::with_capacity(n_keep),
        observations: Vec::with_capacity(n_keep),
        params_truth: Vec::with_capacity(n_keep),
    };

    for k in 0..total {
        let t = (k as f64 - n_discard as f64) * dt;
        let p = schedule.at(t.max(0.0));
        if k >= n_discard {
            let y = observe(&xi.0) + p.r_obs * rng.sample::<f64, _>(StandardNormal);
            let mut truth = p;
            truth.u = xi[layout::U];
            truth.alpha_pe = xi[layout::ALPHA_PE];
            truth.alpha_pi = xi[layout::ALPHA_PI];
            truth.alpha_ip = xi[layout::ALPHA_IP];
            truth.alpha_ep = xi[layout::ALPHA_EP];
            traj.times.push((k - n_discard) as f64 * dt);
            traj.states.push(xi);
            traj.observations.push(y);
            traj.params_truth.push(truth);
        }
        if k + 1 < total {
            let noise = ProcessNoise::draw(&mut rng, p.q_process, p.q_param);
            let frame = TimeConstantFrame::from_params(&p);
            let state_noise = ProcessNoise {
                z: noise.z,
                theta: [0.0; 5],
            };
            xi = step(&xi, &frame, &state_noise).map_err(|e| match e {
                Error::IntegrationDivergence { channel, .. } => Error::IntegrationDivergence { step: k + 1, channel },
                other => other,
            })?;
            for (w, d) in walk.iter_mut().zip(noise.theta) {
                *w += d;
            }
            let next = schedule.at((t + dt).max(0.0)).theta();
            for (j, &i) in layout::PARAMS.iter().enumerate() {
                xi[i] = next[j] + walk[j];
            }
        }
    }
    Ok(traj)
}
