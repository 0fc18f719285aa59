//! Epoch loop, evaluation passes and the per-epoch curve log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{self, balance_classes, batch_iter, split, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::optim::OptimizerState;
use crate::params::ParamStore;
use crate::rng::{stream_rng, Stream};
use crate::swin::SwinModel;
use crate::tensor::{Real, Tape, Tensor};

pub const CURVE_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveLog {
    pub rows: Vec<CurveRow>,
}

impl CurveLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_seconds
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_HEADER) {
            return Err(Error::Data(format!("curve log must start with {CURVE_HEADER:?}")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Data(format!("curve log line {}: malformed row {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            rows.push(CurveRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                lr: num(1)?,
                train_loss: num(2)?,
                train_acc: num(3)?,
                val_loss: num(4)?,
                val_acc: num(5)?,
                wall_seconds: num(6)?,
            });
        }
        Ok(CurveLog { rows })
    }
}

/// Loads every configured source, assigns splits, then balances the train split.
pub fn prepare_dataset(config: &RunConfig) -> Result<Dataset> {
    if config.data.is_empty() {
        return Err(Error::Config("no data sources configured (use --data or data = ...)".into()));
    }
    let parts = config
        .data
        .iter()
        .map(|s| data::load_source(s, config.classes, config.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::merge(parts)?;
    let split_manifest = split(
        &ds.manifest,
        config.split,
        config.test_per_class,
        &mut stream_rng(config.seed, Stream::Split),
    )?;
    ds.manifest = balance_classes(&split_manifest, &mut stream_rng(config.seed, Stream::Balance))?;
    ds.manifest.seed = Some(config.seed);
    Ok(ds)
}

/// Result of one sample's forward (and optionally backward) pass.
struct SampleResult<T> {
    loss: f64,
    correct: bool,
    grads: Vec<Option<Tensor<T>>>,
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest of the first `k` logits.
pub fn predict_class<T: Real>(logits: &[T], k: usize) -> usize {
    argmax(&logits[..k.clamp(1, logits.len())])
}

fn dropout_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, Stream::Dropout);
    rng.set_word_pos(u128::from(counter) << 32);
    rng
}

/// Forward and backward for one training sample. `store` supplies the
/// weights; `model` only the layer structure.
fn train_sample<T: Real>(
    model: &SwinModel<T>,
    store: &ParamStore<T>,
    input: &Tensor<T>,
    target: usize,
    grad_scale: T,
    mut dropout: Option<ChaCha8Rng>,
) -> Result<SampleResult<T>> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = model.forward(&bound, tape.constant(input.clone()), dropout.as_mut())?;
    let k = model.config().num_classes;
    let correct = out.logits.with_value(|t| argmax(t.data())) == target;
    let loss = out.logits.reshape(&[1, k])?.cross_entropy(&[target])?;
    let value = loss.value().item()?.to_f64_lossless();
    let mut g = tape.backward(loss.scale(grad_scale)?)?;
    Ok(SampleResult { loss: value, correct, grads: bound.take_grads(&mut g) })
}

/// Evaluation-mode logits for one input.
pub fn logits<T: Real>(model: &SwinModel<T>, input: Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = model.params.bind_frozen(&tape);
    Ok(model.forward(&bound, tape.constant(input), None)?.logits.value())
}

/// Mean loss and confusion matrix over `indices`, evaluation mode, no
/// augmentation. With `remap_to`, predictions are the argmax over the first
/// `remap_to` logits.
pub fn evaluate<T: Real>(
    model: &SwinModel<T>,
    dataset: &Dataset,
    indices: &[usize],
    remap_to: Option<usize>,
) -> Result<(ConfusionMatrix, f64)> {
    let side = model.config().image_size;
    let k = model.config().num_classes;
    let k_out = remap_to.unwrap_or(k);
    let results = indices
        .par_iter()
        .map(|&i| {
            let target = dataset.manifest.samples[i].label.id();
            let z = logits(model, dataset.input::<T>(i, side)?)?;
            let (loss, _) = crate::tensor::kernels::cross_entropy(&z.reshape(&[1, k])?, &[target])?;
            Ok((target, predict_class(z.data(), k_out), loss.to_f64_lossless()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(k_out);
    let mut loss = 0.0;
    for &(t, p, l) in &results {
        cm.record(t, p)?;
        loss += l;
    }
    Ok((cm, if results.is_empty() { 0.0 } else { loss / results.len() as f64 }))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: CurveLog,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CURVE_FILE: &str = "curve.csv";

pub struct Trainer<T: Real> {
    pub config: RunConfig,
    pub model: SwinModel<T>,
    pub optimizer: OptimizerState<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = SwinModel::new(config.model.clone(), &mut stream_rng(config.seed, Stream::Init))?;
        let optimizer = OptimizerState::new(config.optim.clone(), &model.params)?;
        Ok(Trainer { config, model, optimizer })
    }

    /// One optimizer update on `batch`. Returns the summed per-sample loss
    /// and the number of correct predictions, both from the first pass.
    fn train_batch(
        &mut self,
        dataset: &Dataset,
        batch: &[usize],
        first_sample: u64,
        (epoch, b): (usize, usize),
    ) -> Result<(f64, usize)> {
        let cfg = &self.config;
        let side = cfg.model.image_size;
        let inputs = batch
            .par_iter()
            .map(|&i| Ok((dataset.input::<T>(i, side)?, dataset.manifest.samples[i].label.id())))
            .collect::<Result<Vec<_>>>()?;
        let scale = T::lit(1.0 / batch.len() as f64);
        let (seed, drop) = (cfg.seed, cfg.model.drop_rate > 0.0);
        let mut first = None;
        let mut store = std::mem::take(&mut self.model.params);
        let model = &self.model;
        let outcome = self.optimizer.step(&mut store, |store| {
            let shared: &ParamStore<T> = store;
            let results = inputs
                .par_iter()
                .enumerate()
                .map(|(j, (x, t))| {
                    let rng = drop.then(|| dropout_rng(seed, first_sample + j as u64));
                    train_sample(model, shared, x, *t, scale, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut loss, mut correct) = (0.0, 0);
            for r in results {
                loss += r.loss;
                correct += r.correct as usize;
                store.accumulate_tensors(r.grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss {loss} at epoch {epoch}, batch {b}")));
            }
            first.get_or_insert((loss, correct));
            Ok(T::lit(loss / batch.len() as f64))
        });
        self.model.params = store;
        outcome?;
        Ok(first.expect("objective ran at least once"))
    }

    /// Runs the epoch loop on an already split and balanced dataset.
    ///
    /// Writes `last.ckpt`, `best.ckpt` and `curve.csv` into `out_dir` if
    /// given. `on_epoch` sees each row as it is produced; returning `false`
    /// stops training after that epoch.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&CurveRow) -> bool,
    ) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let train_idx = dataset.manifest.indices(Split::Train);
        let val_idx = dataset.manifest.indices(Split::Val);
        if train_idx.len() < cfg.batch_size {
            return Err(Error::Data(format!(
                "{} training samples cannot fill one batch of {}",
                train_idx.len(),
                cfg.batch_size
            )));
        }
        if val_idx.is_empty() {
            warn!("validation split is empty; val_loss and val_acc are reported as 0");
        }
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
        }
        let mut batch_rng = stream_rng(cfg.seed, Stream::Batching);
        let start = Instant::now();
        let mut curve = CurveLog::default();
        let (mut best_epoch, mut best_acc) = (0, f64::NEG_INFINITY);
        let mut sample_counter = 0u64;

        for epoch in 0..cfg.epochs {
            self.optimizer.epoch = epoch;
            let lr = self.optimizer.lr();
            let batches = batch_iter(&train_idx, cfg.batch_size, &mut batch_rng, true)?;
            let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
            for (b, batch) in batches.iter().enumerate() {
                let (l, c) = self.train_batch(dataset, batch, sample_counter, (epoch, b))?;
                sample_counter += batch.len() as u64;
                loss_sum += l;
                correct += c;
                seen += batch.len();
            }
            let (val_loss, val_acc) = if val_idx.is_empty() {
                (0.0, 0.0)
            } else {
                let (cm, loss) = evaluate(&self.model, dataset, &val_idx, None)?;
                (loss, cm.trace() as f64 / cm.total() as f64)
            };
            let row = CurveRow {
                epoch,
                lr,
                train_loss: loss_sum / seen as f64,
                train_acc: correct as f64 / seen as f64,
                val_loss,
                val_acc,
                wall_seconds: if cfg.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
            };
            info!(
                "epoch {epoch}: lr {lr} train loss {:.4} acc {:.4} | val loss {val_loss:.4} acc {val_acc:.4}",
                row.train_loss, row.train_acc
            );
            curve.rows.push(row);
            let improved = val_acc > best_acc;
            if improved {
                best_acc = val_acc;
                best_epoch = epoch;
            }
            if let Some(dir) = out_dir {
                let ckpt = Checkpoint::from_model(&self.model, &cfg, epoch, best_acc, Some(&self.optimizer.velocity));
                ckpt.save(&dir.join(LAST_CHECKPOINT))?;
                if improved {
                    ckpt.save(&dir.join(BEST_CHECKPOINT))?;
                }
                fs::write(dir.join(CURVE_FILE), curve.to_csv())?;
            }
            if !on_epoch(&row) {
                break;
            }
        }
        Ok(TrainReport { curve, best_epoch, best_val_acc: best_acc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_csv_round_trip() {
        let log = CurveLog {
            rows: vec![CurveRow {
                epoch: 0,
                lr: 1e-3,
                train_loss: 1.9459101090932196,
                train_acc: 0.125,
                val_loss: 2.0,
                val_acc: 0.0,
                wall_seconds: 0.0,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with(CURVE_HEADER));
        assert_eq!(CurveLog::parse_csv(&csv).unwrap(), log);
    }

    #[test]
    fn remapped_prediction_ignores_trailing_logits() {
        let z = [0.1f32, 0.5, 0.2, 0.0, 0.0, 0.0, 0.3, 0.9];
        assert_eq!(predict_class(&z, 8), 7);
        assert_eq!(predict_class(&z, 7), 1);
    }
}
