//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use brainstate::datagen::SweepConfig;
use brainstate::io::IngestOptions;
use brainstate::lstm::{InputScaling, TrainConfig};
use brainstate::model::{derive_seed, ModelParams};
use brainstate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every module seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub simulate: SimulateSection,
    pub datagen: DatagenSection,
    pub train: TrainSection,
    pub akf: EstimateSection,
    pub infer: EstimateSection,
    pub eval: EvalSection,
    pub scenario: ScenarioSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            simulate: SimulateSection::default(),
            datagen: DatagenSection::default(),
            train: TrainSection::default(),
            akf: EstimateSection {
                method: "akf-fixed".into(),
                ..EstimateSection::default()
            },
            infer: EstimateSection::default(),
            eval: EvalSection::default(),
            scenario: ScenarioSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub params: ModelParams,
    /// Recorded seconds after the transient discard.
    pub duration: f64,
    pub seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            duration: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenSection {
    pub sweep: SweepConfig,
    pub inputs_per_pair: usize,
    pub windows_per_recording: usize,
    /// Also write a test set on the grid interleaved with the training grid.
    pub offgrid: bool,
}

impl Default for DatagenSection {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            inputs_per_pair: 8,
            windows_per_recording: 10,
            offgrid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("out/dataset"),
            optimizer: TrainConfig::default(),
        }
    }
}

/// Shared by `akf` and `infer`: one estimator over one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    /// Registered estimator name.
    pub method: String,
    /// CSV or EDF recording.
    pub input: Option<PathBuf>,
    /// Exported simulated trajectory; enables truth-informed estimators.
    pub trajectory: Option<PathBuf>,
    pub ingest: IngestOptions,
    pub weights: PathBuf,
    pub scaling: InputScaling,
    /// Window for the rolling-std stability summary, seconds.
    pub stability_window_s: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            method: "lstm".into(),
            input: None,
            trajectory: None,
            ingest: IngestOptions::default(),
            weights: PathBuf::from("out/weights.bin"),
            scaling: InputScaling::PerRecording,
            stability_window_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub methods: Vec<String>,
    pub noise_levels: Vec<f64>,
    pub inputs_per_pair: usize,
    pub duration: f64,
    pub scaling: InputScaling,
    /// Write every estimate track under `tracks/`.
    pub save_tracks: bool,
    /// Score tracks saved by an earlier run instead of running the estimators.
    pub from_tracks: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("out/dataset"),
            weights: PathBuf::from("out/weights.bin"),
            methods: vec!["lstm".into(), "akf-perfect".into(), "akf-fixed".into()],
            noise_levels: vec![0.0, 0.1],
            inputs_per_pair: 4,
            duration: 10.0,
            scaling: InputScaling::TrainingStats,
            save_tracks: false,
            from_tracks: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub n_segments: usize,
    pub base: ModelParams,
    /// Dataset whose test split supplies the RMSE scale.
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub methods: Vec<String>,
    pub scaling: InputScaling,
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            n_segments: 3,
            base: ModelParams::default(),
            dataset: PathBuf::from("out/dataset"),
            weights: PathBuf::from("out/weights.bin"),
            methods: vec!["lstm".into(), "akf-perfect".into()],
            scaling: InputScaling::TrainingStats,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Overwrites module seeds with streams derived from the master seed,
    /// kept below 2^63 so they survive TOML integers.
    pub fn derive_seeds(&mut self) {
        self.simulate.seed = derive_seed(self.seed, 1) >> 1;
        self.datagen.sweep.seed = derive_seed(self.seed, 2) >> 1;
        self.train.optimizer.seed = derive_seed(self.seed, 3) >> 1;
        self.eval.seed = derive_seed(self.seed, 4) >> 1;
        self.scenario.seed = derive_seed(self.seed, 5) >> 1;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the resolved TOML.
    pub fn digest(&self) -> Result<String> {
        let text = self.to_toml()?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_toml()?)?;
        Ok(())
    }
}
