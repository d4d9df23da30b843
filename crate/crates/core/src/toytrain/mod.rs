//! Deterministic toy classifiers trained with plain minibatch SGD.
//!
//! Every update is `θ ← θ − η_e · Σ_{n∈batch} w_n ∇θ CE(f_θ(x_n), y_n)`, a sum rather
//! than a mean over the batch. Training is sequential; only evaluation runs in
//! parallel, and its reduction order is fixed.

mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use model::{log_sum_exp, softmax, Arch, ToyModel, MODEL_MAGIC};

use crate::error::{Error, Result};
use crate::synthdata::Dataset;
use crate::trajlog::{Coreset, RecordingMode, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// `η_e = η · ½(1 + cos(π e / T))` for epoch `e` in `0..T`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    None,
    #[serde(rename = "raw")]
    ImportanceRaw,
    #[serde(rename = "mean-one")]
    ImportanceMeanOne,
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::None => "none",
            Weighting::ImportanceRaw => "raw",
            Weighting::ImportanceMeanOne => "mean-one",
        })
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::param(format!("unknown schedule '{other}'"))),
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Weighting::None),
            "raw" | "importance-raw" => Ok(Weighting::ImportanceRaw),
            "mean-one" | "meanone" | "importance-mean-one" => Ok(Weighting::ImportanceMeanOne),
            other => Err(Error::param(format!("unknown weighting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub lr_schedule: LrSchedule,
    pub weighting: Weighting,
    pub recording: RecordingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Linear,
            eta: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            lr_schedule: LrSchedule::Constant,
            weighting: Weighting::ImportanceMeanOne,
            recording: RecordingMode::TrainTime,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::param(format!(
                "learning rate {} must be finite and >= 0",
                self.eta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be >= 1"));
        }
        if let Arch::Mlp { hidden: 0 } = self.arch {
            return Err(Error::param("hidden width must be >= 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.eta,
            LrSchedule::Cosine => {
                let frac = epoch as f64 / self.epochs as f64;
                self.eta * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn init_model(&self, n_features: usize, n_classes: usize) -> ToyModel {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        ToyModel::init(self.arch, n_features, n_classes, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Trains on the whole dataset; with `log` set, also returns the per-epoch
/// probability trajectory of every sample.
pub fn train_epochs(dataset: &Dataset, config: &TrainConfig, log: bool) -> Result<(ToyModel, Option<TrajectoryLog>)> {
    let members: Vec<usize> = (0..dataset.len()).collect();
    let weights = vec![1.0; members.len()];
    run_sgd(dataset, &members, &weights, config, log)
}

/// Trains only on the coreset members, weighting each update by the coreset
/// weights according to `config.weighting`.
pub fn weighted_retrain(dataset: &Dataset, coreset: &Coreset, config: &TrainConfig) -> Result<ToyModel> {
    coreset.validate()?;
    if coreset.n_total as usize != dataset.len() {
        return Err(Error::shape(format!(
            "coreset built for {} samples, dataset has {}",
            coreset.n_total,
            dataset.len()
        )));
    }
    let members: Vec<usize> = coreset.indices.iter().map(|&i| i as usize).collect();
    let weights = effective_weights(&coreset.weights, config.weighting)?;
    Ok(run_sgd(dataset, &members, &weights, config, false)?.0)
}

/// Per-sample update weights for a weighting mode.
pub fn effective_weights(raw: &[f64], mode: Weighting) -> Result<Vec<f64>> {
    match mode {
        Weighting::None => Ok(vec![1.0; raw.len()]),
        Weighting::ImportanceRaw | Weighting::ImportanceMeanOne => {
            if let Some(w) = raw.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
                return Err(Error::param(format!(
                    "importance weighting needs finite non-negative weights, found {w}"
                )));
            }
            if mode == Weighting::ImportanceRaw {
                return Ok(raw.to_vec());
            }
            if raw.windows(2).all(|p| p[0] == p[1]) {
                return Ok(vec![1.0; raw.len()]);
            }
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            Ok(raw.iter().map(|w| w / mean).collect())
        }
    }
}

/// One update over the given batch: `θ ← θ − η · Σ w ∇ℓ`.
pub fn sgd_step(model: &mut ToyModel, dataset: &Dataset, batch: &[usize], weights: &[f64], eta: f64) -> Result<()> {
    let xs: Vec<&[f64]> = batch.iter().map(|&i| dataset.x(i)).collect();
    let ys: Vec<u32> = batch.iter().map(|&i| dataset.labels[i]).collect();
    let g = model.grad(&xs, &ys, weights)?;
    for (t, gi) in model.theta.iter_mut().zip(&g) {
        *t -= eta * gi;
    }
    Ok(())
}

fn run_sgd(
    dataset: &Dataset,
    members: &[usize],
    weights: &[f64],
    config: &TrainConfig,
    log: bool,
) -> Result<(ToyModel, Option<TrajectoryLog>)> {
    config.validate()?;
    dataset.validate()?;
    if members.is_empty() {
        return Err(Error::data("cannot train on an empty sample set"));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Range {
            what: "sample index",
            index: bad,
            limit: dataset.len(),
        });
    }
    let (d, c) = (dataset.n_features, dataset.n_classes);
    let mut model = config.init_model(d, c);
    let mut shuffler = ChaCha8Rng::seed_from_u64(config.seed);
    shuffler.set_stream(1);
    let mode = config.recording;
    let mut epochs_log: Vec<Vec<f32>> = Vec::new();
    let mut order: Vec<usize> = (0..members.len()).collect();
    let mut grad = vec![0.0; model.theta.len()];

    for epoch in 0..config.epochs {
        let eta = config.lr_at(epoch);
        if config.shuffle {
            order.shuffle(&mut shuffler);
        }
        let mut probs_epoch = if log && mode == RecordingMode::TrainTime {
            vec![0f32; dataset.len() * c]
        } else {
            Vec::new()
        };
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &pos in batch {
                let n = members[pos];
                let (probs, loss) =
                    model.accumulate_grad(dataset.x(n), dataset.labels[n] as usize, weights[pos], &mut grad);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        reason: format!("non-finite loss on sample {n}"),
                    });
                }
                if !probs_epoch.is_empty() {
                    for (dst, p) in probs_epoch[n * c..(n + 1) * c].iter_mut().zip(&probs) {
                        *dst = *p as f32;
                    }
                }
            }
            for (t, g) in model.theta.iter_mut().zip(&grad) {
                *t -= eta * g;
            }
            if model.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters diverged to non-finite values".into(),
                });
            }
        }
        if log {
            if mode == RecordingMode::EvalTime {
                probs_epoch = predict_all(&model, dataset)?;
            }
            epochs_log.push(probs_epoch);
        }
    }
    let log = if log {
        Some(TrajectoryLog::from_probs(dataset.labels.clone(), c, mode, epochs_log)?)
    } else {
        None
    };
    Ok((model, log))
}

fn predict_all(model: &ToyModel, dataset: &Dataset) -> Result<Vec<f32>> {
    let rows: Vec<Vec<f64>> = (0..dataset.len())
        .into_par_iter()
        .map(|n| model.forward(dataset.x(n)))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().map(|p| p as f32).collect())
}

/// Accuracy (argmax, ties to the lower class) and mean cross-entropy in nats.
pub fn evaluate(model: &ToyModel, testset: &Dataset) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::data("evaluation set is empty"));
    }
    let per: Vec<(bool, f64)> = (0..testset.len())
        .into_par_iter()
        .map(|n| {
            let z = model.logits(testset.x(n))?;
            let y = testset.labels[n] as usize;
            if y >= z.len() {
                return Err(Error::Range {
                    what: "label",
                    index: y,
                    limit: z.len(),
                });
            }
            let best = argmax(&z);
            Ok((best == y, log_sum_exp(&z) - z[y]))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let correct = per.iter().filter(|(ok, _)| *ok).count() as f64;
    let loss = per.iter().map(|(_, l)| l).sum::<f64>() / n;
    Ok(EvalReport {
        accuracy: correct / n,
        mean_loss: loss,
    })
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
