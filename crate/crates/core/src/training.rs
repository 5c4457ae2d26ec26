//! Teacher-forced training with a seeded trial split, Adam, early stopping
//! on validation loss, and best-checkpoint retention.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::embedding::TrialInput;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic_str;
use crate::model::{OatConfig, OatModel, PeKind};
use crate::nn::Graph;
use crate::pe::{PeConfig, PositionalTables};
use crate::seeding::{stream, stream_seed};
use crate::tensor::{Adam, AdamConfig, Grads, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// `false` swaps the positional tables for learnable ones of equal size.
    pub use_dpe: bool,
    pub use_oa: bool,
    pub pe_kind: PeKind,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            use_dpe: true,
            use_oa: true,
            pe_kind: PeKind::Dpe,
        }
    }
}

impl Ablations {
    pub fn effective_pe(&self) -> PeKind {
        if self.use_dpe {
            self.pe_kind
        } else {
            PeKind::E2e
        }
    }

    /// Applies the switches to a model configuration.
    pub fn apply(&self, cfg: &OatConfig) -> OatConfig {
        OatConfig {
            pe_kind: self.effective_pe(),
            use_oa: self.use_oa,
            ..cfg.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Train, validation and test weights; normalised before use.
    pub split: [f64; 3],
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            lr: 1e-4,
            split: [8.0, 1.0, 1.0],
            epochs: 50,
            patience: 10,
            seed: 0,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    /// Settings used with [`OatConfig::desk`] for single-core runs.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 2e-3,
            epochs: 40,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive and finite"));
        }
        if self.split.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::config("train.split", "ratios must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience", "must be positive"));
        }
        if !self.ablations.use_dpe && self.ablations.pe_kind != PeKind::Dpe {
            return Err(Error::config(
                "train.ablations.use_dpe",
                "use_dpe = false already selects learnable tables; leave pe_kind at dpe",
            ));
        }
        Ok(())
    }
}

/// Positional tables of the requested kind for a `rows × cols` grid. Tables
/// get `max(cfg.length, rows, cols)` positions.
pub fn positional_tables(
    kind: PeKind,
    p: usize,
    rows: usize,
    cols: usize,
    cfg: &PeConfig,
    seed: u64,
) -> Result<PositionalTables> {
    let length = cfg.length.max(rows).max(cols);
    match kind {
        PeKind::Dpe => PositionalTables::train_dpe(p, &PeConfig { length, ..*cfg }, seed),
        PeKind::Sinusoidal => PositionalTables::sinusoidal(p, length),
        PeKind::E2e => Ok(PositionalTables::e2e(p, length, seed)),
    }
}

/// Trial indices of each partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut by the normalised ratios.
pub fn split_trials(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    let total: f64 = ratios.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "split", 0));
    let n_val = (n as f64 * ratios[1] / total).round() as usize;
    let n_test = (n as f64 * ratios[2] / total).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    for (name, k) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if k == 0 {
            return Err(Error::config(
                "train.split",
                format!("{n} trials leave the {name} partition empty"),
            ));
        }
    }
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in log {
        out.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_loss));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: OatModel<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub split: Split,
}

/// Encoder inputs for every trial of a dataset.
pub fn trial_inputs<T: Scalar>(ds: &Dataset, patch_size: usize) -> Result<Vec<TrialInput<T>>> {
    ds.trials.iter().map(|t| ds.trial_input(t, patch_size)).collect()
}

fn examples(ds: &Dataset, trials: &[usize]) -> Vec<(usize, usize)> {
    trials
        .iter()
        .flat_map(|&t| (0..ds.trials[t].scanpaths.len()).map(move |k| (t, k)))
        .collect()
}

/// Mean per-sequence loss over the given trials, in evaluation mode.
pub fn mean_loss<T: Scalar>(
    model: &OatModel<T>,
    ds: &Dataset,
    inputs: &[TrialInput<T>],
    trials: &[usize],
) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for &t in trials {
        let seqs: Vec<&[usize]> = ds.trials[t].scanpaths.iter().map(|s| s.objects.as_slice()).collect();
        if seqs.is_empty() {
            continue;
        }
        let mut g = Graph::eval(model.store());
        for l in model.trial_losses(&mut g, &inputs[t], &seqs)? {
            total += g.value(l).data()[0].as_f64();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Training("no sequences to evaluate".into()));
    }
    let mean = total / n as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::Training("non-finite validation loss".into()))
    }
}

/// One optimiser step on a batch of `(trial, scanpath)` examples. Examples
/// sharing a trial share one encoder pass. Returns the batch loss.
fn train_step<T: Scalar>(
    model: &mut OatModel<T>,
    adam: &mut Adam<T>,
    ds: &Dataset,
    inputs: &[TrialInput<T>],
    batch: &[(usize, usize)],
    dropout_seed: u64,
) -> Result<f64> {
    let mut groups: BTreeMap<usize, Vec<&[usize]>> = BTreeMap::new();
    for &(t, k) in batch {
        groups
            .entry(t)
            .or_default()
            .push(ds.trials[t].scanpaths[k].objects.as_slice());
    }
    let mut grads = Grads::for_store(model.store());
    let loss = {
        let dropout = model.config().dropout;
        let mut g = Graph::train(model.store(), dropout, dropout_seed);
        let mut losses = Vec::with_capacity(batch.len());
        for (t, seqs) in &groups {
            losses.extend(model.trial_losses(&mut g, &inputs[*t], seqs)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.tape.add(total, l)?;
        }
        let mean = g.tape.scale(total, 1.0 / losses.len() as f64);
        let value = g.value(mean).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Training("non-finite training loss".into()));
        }
        g.tape.backward(mean)?;
        g.tape.accumulate_param_grads(&mut grads);
        value
    };
    adam.step(model.store_mut(), &grads)?;
    Ok(loss)
}

/// Trains from scratch. `on_epoch` sees every log line as it is produced.
pub fn train<T: Scalar>(
    ds: &Dataset,
    model_cfg: &OatConfig,
    tables: &PositionalTables,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let model_cfg = cfg.ablations.apply(model_cfg);
    if (model_cfg.rows, model_cfg.cols) != (ds.layout.rows, ds.layout.cols) {
        return Err(Error::config(
            "model.rows",
            format!(
                "model grid {}×{} does not match the data grid {}×{}",
                model_cfg.rows, model_cfg.cols, ds.layout.rows, ds.layout.cols
            ),
        ));
    }
    if ds.trials.is_empty() {
        return Err(Error::config("train.data", "dataset has no trials"));
    }
    let split = split_trials(ds.trials.len(), cfg.split, cfg.seed)?;
    let inputs = trial_inputs::<T>(ds, model_cfg.patch_size)?;
    let mut model = OatModel::<T>::new(model_cfg, tables, stream_seed(cfg.seed, "init", 0))?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let mut train_examples = examples(ds, &split.train);
    if train_examples.is_empty() {
        return Err(Error::config("train.split", "training trials carry no scanpaths"));
    }
    let mut best = (f64::INFINITY, 0usize, model.store().clone());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        train_examples.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in train_examples.chunks(cfg.batch_size) {
            let l = train_step(
                &mut model,
                &mut adam,
                ds,
                &inputs,
                batch,
                stream_seed(cfg.seed, "dropout", step),
            )?;
            sum += l * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        let val_loss = mean_loss(&model, ds, &inputs, &split.val)?;
        let entry = EpochLog {
            epoch,
            train_loss: sum / count as f64,
            val_loss,
        };
        log::info!("epoch {epoch}: train {:.4} val {:.4}", entry.train_loss, entry.val_loss);
        on_epoch(&entry);
        log.push(entry);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.store().clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, store) = best;
    *model.store_mut() = store;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        split,
    })
}

/// Writes the best checkpoint and the loss log into `out`.
pub fn save_outcome<T: Scalar>(outcome: &TrainOutcome<T>, cfg: &TrainConfig, out: &Path) -> Result<()> {
    let extra = serde_json::json!({
        "train": cfg,
        "split": outcome.split,
        "best_epoch": outcome.best_epoch,
    });
    outcome.model.save(&out.join("model.ckpt"), extra)?;
    write_atomic_str(&out.join("loss.csv"), &loss_csv(&outcome.log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        let s = split_trials(100, [8.0, 1.0, 1.0], 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_trials(100, [8.0, 1.0, 1.0], 4).unwrap());
        assert_ne!(s, split_trials(100, [8.0, 1.0, 1.0], 5).unwrap());
    }

    #[test]
    fn tiny_split_is_rejected() {
        let e = split_trials(4, [8.0, 1.0, 1.0], 0).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "train.split"));
    }

    #[test]
    fn loss_log_format() {
        let csv = loss_csv(&[EpochLog {
            epoch: 1,
            train_loss: 2.5,
            val_loss: 2.25,
        }]);
        assert_eq!(csv, "epoch,train_loss,val_loss\n1,2.500000,2.250000\n");
    }
}
