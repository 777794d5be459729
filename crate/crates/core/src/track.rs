//! Per-timestep estimator output shared by every estimator.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layout::{N_AUG, N_TARGET, TARGET_NAMES};

/// Where and why an estimator stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// Estimates in physical units, one row per input sample.
///
/// Estimators that do not track the time constants echo the values they
/// were configured with in the last two columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrack {
    pub method: String,
    pub dt: f64,
    pub times: Vec<f64>,
    pub observations: Vec<f64>,
    pub estimates: Vec<[f64; N_TARGET]>,
    pub y_hat: Vec<f64>,
    pub marginal_std: Option<Vec<[f64; N_AUG]>>,
    pub innovation: Option<Vec<f64>>,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackMeta {
    version: u32,
    method: String,
    dt: f64,
    rows: usize,
    divergence: Option<Divergence>,
}

const TRACK_FORMAT_VERSION: u32 = 1;

impl EstimateTrack {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Column `j` of the estimates.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.estimates.iter().map(|r| r[j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.estimates.iter().all(|r| r.iter().all(|x| x.is_finite()))
            && self.y_hat.iter().all(|x| x.is_finite())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "y".to_string(), "y_hat".to_string()];
        h.extend(TARGET_NAMES.iter().map(|s| s.to_string()));
        if self.marginal_std.is_some() {
            h.extend(TARGET_NAMES[..N_AUG].iter().map(|s| format!("std_{s}")));
        }
        if self.innovation.is_some() {
            h.push("innovation".to_string());
        }
        h
    }

    /// CSV with columns `t, y, y_hat`, the 17 estimates, optional marginal
    /// stds and innovation; metadata goes to `<path>.meta.json`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for k in 0..self.len() {
            let mut row: Vec<String> = vec![
                self.times[k].to_string(),
                self.observations[k].to_string(),
                self.y_hat[k].to_string(),
            ];
            row.extend(self.estimates[k].iter().map(|x| x.to_string()));
            if let Some(s) = &self.marginal_std {
                row.extend(s[k].iter().map(|x| x.to_string()));
            }
            if let Some(i) = &self.innovation {
                row.push(i[k].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        let meta = TrackMeta {
            version: TRACK_FORMAT_VERSION,
            method: self.method.clone(),
            dt: self.dt,
            rows: self.len(),
            divergence: self.divergence.clone(),
        };
        let mut f = std::fs::File::create(meta_path(path))?;
        f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(meta_path(path))?.read_to_string(&mut text)?;
        let meta: TrackMeta = serde_json::from_str(&text)?;
        if meta.version != TRACK_FORMAT_VERSION {
            return Err(Error::Format(format!("track format version {} unsupported", meta.version)));
        }
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let has_std = headers.iter().any(|h| h.starts_with("std_"));
        let has_innov = headers.iter().any(|h| h == "innovation");
        let mut track = EstimateTrack {
            method: meta.method,
            dt: meta.dt,
            times: Vec::new(),
            observations: Vec::new(),
            estimates: Vec::new(),
            y_hat: Vec::new(),
            marginal_std: has_std.then(Vec::new),
            innovation: has_innov.then(Vec::new),
            divergence: meta.divergence,
        };
        let expected = 3 + N_TARGET + if has_std { N_AUG } else { 0 } + usize::from(has_innov);
        if headers.len() != expected {
            return Err(Error::Format(format!("expected {expected} track columns, got {}", headers.len())));
        }
        for rec in r.records() {
            let rec = rec?;
            let v = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            track.times.push(v[0]);
            track.observations.push(v[1]);
            track.y_hat.push(v[2]);
            let mut est = [0.0; N_TARGET];
            est.copy_from_slice(&v[3..3 + N_TARGET]);
            track.estimates.push(est);
            let mut at = 3 + N_TARGET;
            if let Some(s) = track.marginal_std.as_mut() {
                let mut row = [0.0; N_AUG];
                row.copy_from_slice(&v[at..at + N_AUG]);
                s.push(row);
                at += N_AUG;
            }
            if let Some(i) = track.innovation.as_mut() {
                i.push(v[at]);
            }
        }
        if track.len() != meta.rows {
            return Err(Error::Format("track row count disagrees with metadata".into()));
        }
        Ok(track)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}
