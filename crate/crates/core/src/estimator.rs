//! Estimators behind one trait, registered by name and chosen at run time.

use std::collections::BTreeMap;
use std::fmt;

use crate::akf::{run_akf, AkfConfig};
use crate::dataset::Stats;
use crate::error::{Error, Result};
use crate::lstm::{infer, InputScaling, LstmWeights};
use crate::model::{AugmentedState, ModelParams};
use crate::track::EstimateTrack;

/// Side information available to an estimator for one recording.
#[derive(Debug, Clone, Copy)]
pub struct EstimationContext<'a> {
    pub dt: f64,
    /// True augmented state at the first sample (simulated data only).
    pub initial_state: Option<&'a AugmentedState>,
    /// Parameters the recording was simulated with (simulated data only).
    pub truth: Option<&'a ModelParams>,
}

impl<'a> EstimationContext<'a> {
    pub fn recording(dt: f64) -> Self {
        Self {
            dt,
            initial_state: None,
            truth: None,
        }
    }

    pub fn simulated(dt: f64, initial_state: &'a AugmentedState, truth: &'a ModelParams) -> Self {
        Self {
            dt,
            initial_state: Some(initial_state),
            truth: Some(truth),
        }
    }
}

pub trait Estimator {
    fn name(&self) -> &str;
    fn estimate(&self, observations: &[f64], ctx: &EstimationContext<'_>) -> Result<EstimateTrack>;
}

impl fmt::Debug for dyn Estimator + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Estimator({})", self.name())
    }
}

pub struct LstmEstimator {
    pub weights: LstmWeights,
    pub stats: Stats,
    pub scaling: InputScaling,
}

impl Estimator for LstmEstimator {
    fn name(&self) -> &str {
        "lstm"
    }

    fn estimate(&self, observations: &[f64], ctx: &EstimationContext<'_>) -> Result<EstimateTrack> {
        infer(observations, ctx.dt, &self.weights, &self.stats, self.scaling)
    }
}

/// Filter started at the true state with the true time constants.
pub struct AkfPerfect;

impl Estimator for AkfPerfect {
    fn name(&self) -> &str {
        "akf-perfect"
    }

    fn estimate(&self, observations: &[f64], ctx: &EstimationContext<'_>) -> Result<EstimateTrack> {
        let (Some(xi0), Some(truth)) = (ctx.initial_state, ctx.truth) else {
            return Err(Error::Config("akf-perfect needs the simulated initial state and parameters".into()));
        };
        run_akf(observations, &AkfConfig::perfect(xi0, truth), self.name())
    }
}

/// Filter pinned to the default parameter point.
pub struct AkfFixed;

impl Estimator for AkfFixed {
    fn name(&self) -> &str {
        "akf-fixed"
    }

    fn estimate(&self, observations: &[f64], ctx: &EstimationContext<'_>) -> Result<EstimateTrack> {
        let cfg = match ctx.truth {
            Some(p) => AkfConfig::default_point(p),
            None => AkfConfig::for_recording(observations, ctx.dt),
        };
        run_akf(observations, &cfg, self.name())
    }
}

/// Shared inputs an estimator factory may need.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub lstm: Option<(LstmWeights, Stats)>,
    pub scaling: InputScaling,
}

type Factory = Box<dyn Fn(&Resources) -> Result<Box<dyn Estimator>> + Send + Sync>;

/// Name to factory map.
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Resources) -> Result<Box<dyn Estimator>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, res: &Resources) -> Result<Box<dyn Estimator>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{name}' (known: {})", self.names().join(", "))))?;
        f(res)
    }
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("lstm", |res| {
            let (weights, stats) = res
                .lstm
                .clone()
                .ok_or_else(|| Error::Config("the lstm estimator needs trained weights".into()))?;
            Ok(Box::new(LstmEstimator {
                weights,
                stats,
                scaling: res.scaling,
            }))
        });
        r.register("akf-perfect", |_| Ok(Box::new(AkfPerfect)));
        r.register("akf-fixed", |_| Ok(Box::new(AkfFixed)));
        r
    }
}
