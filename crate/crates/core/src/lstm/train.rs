//! Mini-batch Adam training with early stopping on validation loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{physics_loss_grad, LossConfig, LossTerms};
use super::network::{backward_batch, forward_batch, Architecture, LstmWeights};
use crate::dataset::{Split, Stats};
use crate::error::{Error, Result};
use crate::model::layout::N_TARGET;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the gain-spread term.
    pub k: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub arch: Architecture,
    /// Windows per forward/backward pass inside a batch. Affects memory only.
    pub chunk: usize,
    /// Wall-clock limit in seconds. Stopping on time makes the result depend
    /// on machine speed.
    pub time_budget_s: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            k: 0.1,
            grad_clip: 5.0,
            seed: 0,
            arch: Architecture::default(),
            chunk: 32,
            time_budget_s: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.k >= 0.0) {
            return Err(Error::Config("k must be non-negative".into()));
        }
        if self.batch_size == 0 || self.chunk == 0 {
            return Err(Error::Config("batch_size and chunk must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        if self.arch.n_out != N_TARGET {
            return Err(Error::Config(format!("readout must have {N_TARGET} outputs")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches; absent for epoch 0
    /// (initial weights).
    pub train: Option<LossTerms>,
    pub val: LossTerms,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    TimeBudget,
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights at the epoch with the lowest validation loss.
    pub weights: LstmWeights,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn best_val(&self) -> f64 {
        self.log[self.best_epoch].val.total()
    }

    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "epoch,train_loss,val_loss,train_data,train_model,train_spread,val_data,val_model,val_spread,seconds")?;
        for e in &self.log {
            let t = e.train.unwrap_or(LossTerms {
                data: f64::NAN,
                model: f64::NAN,
                spread: f64::NAN,
            });
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                t.total(),
                e.val.total(),
                t.data,
                t.model,
                t.spread,
                e.val.data,
                e.val.model,
                e.val.spread,
                e.seconds
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn time_major(split: &Split, idx: &[usize]) -> Vec<f64> {
    let steps = split.window_len;
    let b = idx.len();
    let mut x = vec![0.0; steps * b];
    for (k, &i) in idx.iter().enumerate() {
        for (t, &v) in split.obs_window(i).iter().enumerate() {
            x[t * b + k] = v;
        }
    }
    x
}

fn window_rows(out: &[f64], steps: usize, batch: usize, k: usize, dst: &mut [f64]) {
    for t in 0..steps {
        let src = (t * batch + k) * N_TARGET;
        dst[t * N_TARGET..(t + 1) * N_TARGET].copy_from_slice(&out[src..src + N_TARGET]);
    }
}

/// Mean loss over the windows `idx` of `split`, and (when `grad` is given)
/// the gradient of that mean, accumulated chunk by chunk.
fn loss_over(w: &LstmWeights, split: &Split, idx: &[usize], stats: &Stats, cfg: &LossConfig, chunk: usize, mut grad: Option<&mut [f64]>) -> Result<LossTerms> {
    let steps = split.window_len;
    let n = idx.len();
    if n == 0 {
        return Err(Error::Empty("no windows to evaluate".into()));
    }
    let mut terms = LossTerms::default();
    let mut pred = vec![0.0; steps * N_TARGET];
    let mut gpred = vec![0.0; steps * N_TARGET];
    for part in idx.chunks(chunk) {
        let b = part.len();
        let cache = forward_batch(w, &time_major(split, part), steps, b)?;
        let mut d_out = if grad.is_some() { vec![0.0; steps * b * N_TARGET] } else { Vec::new() };
        for (k, &i) in part.iter().enumerate() {
            window_rows(&cache.output, steps, b, k, &mut pred);
            let t = physics_loss_grad(&pred, split.target_window(i), split.obs_window(i), stats, cfg, &mut gpred)?;
            terms.add_scaled(&t, 1.0 / n as f64);
            if grad.is_some() {
                for t in 0..steps {
                    let dst = (t * b + k) * N_TARGET;
                    for j in 0..N_TARGET {
                        d_out[dst + j] = gpred[t * N_TARGET + j] / n as f64;
                    }
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            backward_batch(w, &cache, &d_out, g);
        }
    }
    Ok(terms)
}

/// Mean loss over `idx` and its gradient (overwrites `grad`).
pub fn batch_loss_and_gradient(w: &LstmWeights, split: &Split, idx: &[usize], stats: &Stats, cfg: &LossConfig, chunk: usize, grad: &mut [f64]) -> Result<LossTerms> {
    grad.fill(0.0);
    loss_over(w, split, idx, stats, cfg, chunk, Some(grad))
}

/// Mean loss over every window of `split`.
pub fn evaluate_loss(w: &LstmWeights, split: &Split, stats: &Stats, cfg: &LossConfig, chunk: usize) -> Result<LossTerms> {
    let idx: Vec<usize> = (0..split.len()).collect();
    loss_over(w, split, &idx, stats, cfg, chunk, None)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

/// Trains from a seeded initialisation. `loss` supplies `dt` and the sigmoid
/// constants; its `k` is replaced by `cfg.k`.
pub fn train(train: &Split, val: &Split, stats: &Stats, loss: &LossConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training and validation splits must be non-empty".into()));
    }
    let loss_cfg = LossConfig { k: cfg.k, ..*loss };
    let start = Instant::now();
    let mut weights = LstmWeights::init(cfg.arch, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let mut adam = Adam {
        m: vec![0.0; weights.params.len()],
        v: vec![0.0; weights.params.len()],
        t: 0,
    };
    let mut grad = vec![0.0; weights.params.len()];

    let val0 = evaluate_loss(&weights, val, stats, &loss_cfg, cfg.chunk)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train: None,
        val: val0,
        seconds: start.elapsed().as_secs_f64(),
    }];
    log::info!("epoch 0: val {:.5}", val0.total());
    let mut best = (0usize, val0.total(), weights.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        for batch in order.chunks(cfg.batch_size) {
            let terms = match batch_loss_and_gradient(&weights, train, batch, stats, &loss_cfg, cfg.chunk, &mut grad) {
                Ok(t) => t,
                Err(e) => {
                    stop = StopReason::Diverged(e.to_string());
                    break 'epochs;
                }
            };
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                stop = StopReason::Diverged("non-finite gradient".into());
                break 'epochs;
            }
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut weights.params, &grad, cfg);
            epoch_terms.add_scaled(&terms, batch.len() as f64 / train.len() as f64);
        }
        let val_terms = match evaluate_loss(&weights, val, stats, &loss_cfg, cfg.chunk) {
            Ok(t) if t.total().is_finite() => t,
            Ok(_) => {
                stop = StopReason::Diverged("non-finite validation loss".into());
                break;
            }
            Err(e) => {
                stop = StopReason::Diverged(e.to_string());
                break;
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} (data {:.4} model {:.4} spread {:.4}) {:.0}s",
            epoch_terms.total(),
            val_terms.total(),
            val_terms.data,
            val_terms.model,
            val_terms.spread,
            elapsed
        );
        log.push(EpochLog {
            epoch,
            train: Some(epoch_terms),
            val: val_terms,
            seconds: elapsed,
        });
        if val_terms.total() < best.1 {
            best = (epoch, val_terms.total(), weights.clone());
        } else if epoch - best.0 >= cfg.patience {
            stop = StopReason::EarlyStopping;
            break;
        }
        if let Some(budget) = cfg.time_budget_s {
            let per_epoch = elapsed / epoch as f64;
            if elapsed + per_epoch > budget {
                stop = StopReason::TimeBudget;
                break;
            }
        }
    }
    if let StopReason::Diverged(reason) = &stop {
        log::warn!("training aborted: {reason}; keeping weights from epoch {}", best.0);
    }
    Ok(TrainOutcome {
        weights: best.2,
        best_epoch: best.0,
        log,
        stop,
    })
}
