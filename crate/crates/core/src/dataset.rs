//! Standardized window datasets and their on-disk format.
//!
//! A dataset directory holds `meta.json` plus, per split, two little-endian
//! `f64` tensors: `<split>.obs.f64` (windows x time) and
//! `<split>.targets.f64` (windows x time x 17).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layout::N_TARGET;

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Samples per window.
pub const WINDOW_LEN: usize = 400;
/// Standard deviations below this are replaced by 1 when standardizing.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-variable mean and standard deviation of the observation and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stats {
    pub obs_mean: f64,
    pub obs_std: f64,
    pub target_mean: [f64; N_TARGET],
    pub target_std: [f64; N_TARGET],
}

fn floored(std: f64) -> f64 {
    if std > STD_FLOOR {
        std
    } else {
        1.0
    }
}

impl Stats {
    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            obs_mean: 0.0,
            obs_std: 1.0,
            target_mean: [0.0; N_TARGET],
            target_std: [1.0; N_TARGET],
        }
    }

    /// Population mean and standard deviation over raw observations and
    /// target rows (17 values per row).
    pub fn from_raw(obs: &[f64], targets: &[f64]) -> Result<Self> {
        if obs.is_empty() || targets.len() != obs.len() * N_TARGET {
            return Err(Error::Empty("no samples to compute standardization stats".into()));
        }
        let (obs_mean, obs_std) = mean_std(obs.iter().copied());
        let mut target_mean = [0.0; N_TARGET];
        let mut target_std = [0.0; N_TARGET];
        for j in 0..N_TARGET {
            let (m, s) = mean_std(targets.iter().skip(j).step_by(N_TARGET).copied());
            target_mean[j] = m;
            target_std[j] = floored(s);
        }
        Ok(Self {
            obs_mean,
            obs_std: floored(obs_std),
            target_mean,
            target_std,
        })
    }

    pub fn standardize_obs(&self, y: f64) -> f64 {
        (y - self.obs_mean) / self.obs_std
    }

    pub fn destandardize_obs(&self, y: f64) -> f64 {
        self.obs_mean + self.obs_std * y
    }

    pub fn standardize_target(&self, x: &[f64]) -> [f64; N_TARGET] {
        std::array::from_fn(|j| (x[j] - self.target_mean[j]) / self.target_std[j])
    }

    pub fn destandardize_target(&self, x: &[f64]) -> [f64; N_TARGET] {
        std::array::from_fn(|j| self.target_mean[j] + self.target_std[j] * x[j])
    }

    pub fn is_finite(&self) -> bool {
        self.obs_mean.is_finite()
            && self.obs_std.is_finite()
            && self.target_mean.iter().chain(&self.target_std).all(|x| x.is_finite())
    }
}

/// Two-pass population mean and standard deviation.
pub fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for x in xs.clone() {
        sum += x;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// Where a window came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowInfo {
    pub recording: u32,
    pub window: u32,
    pub tau_e: f64,
    pub tau_i: f64,
    pub u: f64,
}

/// Standardized windows of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub window_len: usize,
    /// `len() x window_len`
    pub obs: Vec<f64>,
    /// `len() x window_len x 17`
    pub targets: Vec<f64>,
    pub info: Vec<WindowInfo>,
}

impl Split {
    pub fn empty(kind: SplitKind, window_len: usize) -> Self {
        Self {
            kind,
            window_len,
            obs: Vec::new(),
            targets: Vec::new(),
            info: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn obs_window(&self, i: usize) -> &[f64] {
        &self.obs[i * self.window_len..(i + 1) * self.window_len]
    }

    pub fn target_window(&self, i: usize) -> &[f64] {
        let w = self.window_len * N_TARGET;
        &self.targets[i * w..(i + 1) * w]
    }

    pub fn push(&mut self, obs: &[f64], targets: &[f64], info: WindowInfo) {
        debug_assert_eq!(obs.len(), self.window_len);
        debug_assert_eq!(targets.len(), self.window_len * N_TARGET);
        self.obs.extend_from_slice(obs);
        self.targets.extend_from_slice(targets);
        self.info.push(info);
    }

    fn check(&self) -> Result<()> {
        let n = self.info.len();
        if self.obs.len() != n * self.window_len || self.targets.len() != n * self.window_len * N_TARGET {
            return Err(Error::Format(format!("split {} has inconsistent tensor sizes", self.kind.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitMeta {
    kind: SplitKind,
    windows: usize,
    info: Vec<WindowInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format_version: u32,
    crate_version: String,
    window_len: usize,
    dt: f64,
    stats: Stats,
    splits: Vec<SplitMeta>,
    provenance: serde_json::Value,
}

/// Train/validation/test windows standardized with the training stats.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub window_len: usize,
    pub dt: f64,
    pub stats: Stats,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// Free-form description of how the data were generated.
    pub provenance: serde_json::Value,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut splits = Vec::new();
        for kind in SplitKind::ALL {
            let s = self.split(kind);
            s.check()?;
            write_f64s(&dir.join(format!("{}.obs.f64", kind.name())), &s.obs)?;
            write_f64s(&dir.join(format!("{}.targets.f64", kind.name())), &s.targets)?;
            splits.push(SplitMeta {
                kind,
                windows: s.len(),
                info: s.info.clone(),
            });
        }
        let meta = DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            window_len: self.window_len,
            dt: self.dt,
            stats: self.stats.clone(),
            splits,
            provenance: self.provenance.clone(),
        };
        let f = BufWriter::new(fs::File::create(dir.join("meta.json"))?);
        serde_json::to_writer_pretty(f, &meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta_raw: serde_json::Value = serde_json::from_reader(BufReader::new(fs::File::open(&meta_path)?))?;
        let version = meta_raw.get("format_version").and_then(|v| v.as_u64());
        if version != Some(DATASET_FORMAT_VERSION as u64) {
            return Err(Error::Format(format!(
                "{}: dataset format version {:?}, expected {}",
                meta_path.display(),
                version,
                DATASET_FORMAT_VERSION
            )));
        }
        let meta: DatasetMeta = serde_json::from_value(meta_raw)?;
        let mut out = Dataset {
            window_len: meta.window_len,
            dt: meta.dt,
            stats: meta.stats,
            train: Split::empty(SplitKind::Train, meta.window_len),
            val: Split::empty(SplitKind::Val, meta.window_len),
            test: Split::empty(SplitKind::Test, meta.window_len),
            provenance: meta.provenance,
        };
        for sm in meta.splits {
            let split = Split {
                kind: sm.kind,
                window_len: meta.window_len,
                obs: read_f64s(&dir.join(format!("{}.obs.f64", sm.kind.name())))?,
                targets: read_f64s(&dir.join(format!("{}.targets.f64", sm.kind.name())))?,
                info: sm.info,
            };
            split.check()?;
            if split.len() != sm.windows {
                return Err(Error::Format(format!("split {} window count mismatch", sm.kind.name())));
            }
            match sm.kind {
                SplitKind::Train => out.train = split,
                SplitKind::Val => out.val = split,
                SplitKind::Test => out.test = split,
            }
        }
        Ok(out)
    }
}

pub fn write_f64s(path: &Path, xs: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: length is not a multiple of 8", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
