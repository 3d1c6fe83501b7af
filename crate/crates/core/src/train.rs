//! Training loop, optimizers, early stopping and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_labels_visible, AggregateOptions, AggregatedTable, DEFAULT_MAX_EXPANSIONS};
use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, Labels};
use crate::metrics::{multi_label_scores, roc_auc, roc_curve, single_label_scores, RocPoint};
use crate::model::{HetTreeModel, ModelInput};
use crate::tensor::{Matrix, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Adam { .. } => f.write_str("adam"),
            Optimizer::Sgd { .. } => f.write_str("sgd"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::adam()),
            "sgd" => Ok(Optimizer::Sgd { momentum: 0.0 }),
            other => Err(Error::Config(format!("unknown optimizer {other}"))),
        }
    }
}

/// Validation metric used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    MicroF1,
    Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement; 0 never
    /// stops early.
    pub patience: usize,
    pub label_mask_rate: f64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            weight_decay: 0.0,
            optimizer: Optimizer::adam(),
            batch_size: 0,
            seed: 0,
            patience: 0,
            label_mask_rate: 0.0,
            selection: Selection::MicroF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("rates must be nonnegative".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.label_mask_rate) {
            return Err(Error::Config(format!(
                "label mask rate {} outside [0, 1)",
                self.label_mask_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

impl Metrics {
    fn selection_value(&self, s: Selection) -> f64 {
        match s {
            Selection::MicroF1 => self.micro_f1,
            Selection::Accuracy => self.accuracy,
        }
    }

    pub fn csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{}",
            self.loss,
            self.micro_f1,
            self.macro_f1,
            self.accuracy,
            self.auc.map_or(String::new(), |a| format!("{a:.6}"))
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loss={:.4} micro_f1={:.4} macro_f1={:.4} accuracy={:.4}",
            self.loss, self.micro_f1, self.macro_f1, self.accuracy
        )?;
        if let Some(a) = self.auc {
            write!(f, " auc={a:.4}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: Metrics,
    pub val: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    /// `metrics.csv` body: `epoch,split,loss,micro_f1,macro_f1,accuracy,auc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,micro_f1,macro_f1,accuracy,auc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},train,{}\n", r.epoch, r.train.csv_fields()));
            if let Some(v) = &r.val {
                out.push_str(&format!("{},val,{}\n", r.epoch, v.csv_fields()));
            }
        }
        out
    }
}

/// Mean loss over `rows`: softmax cross-entropy, or per-class BCE for
/// multi-label tasks.
pub fn batch_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &Labels, rows: &[usize]) -> Result<Var> {
    if labels.multi_label {
        let y = Matrix::from_fn(rows.len(), labels.num_classes, |i, c| {
            if labels.classes[rows[i]].contains(&c) {
                T::one()
            } else {
                T::zero()
            }
        });
        tape.bce_with_logits(logits, &y)
    } else {
        tape.softmax_cross_entropy(logits, &labels.single(rows))
    }
}

/// Scores logits against the labels of `rows`.
pub fn score_logits<T: Scalar>(logits: &Matrix<T>, labels: &Labels, rows: &[usize]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::EmptySplit("no rows to evaluate".into()));
    }
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss_v = batch_loss(&mut tape, z, labels, rows)?;
    let loss = tape.value(loss_v)[(0, 0)].to_f64_lossy();
    let c = labels.num_classes;
    if labels.multi_label {
        let pred: Vec<Vec<bool>> = (0..rows.len())
            .map(|i| logits.row(i).iter().map(|&x| x > T::zero()).collect())
            .collect();
        let truth: Vec<Vec<bool>> = rows
            .iter()
            .map(|&v| (0..c).map(|k| labels.classes[v].contains(&k)).collect())
            .collect();
        let s = multi_label_scores(&pred, &truth, c);
        return Ok(Metrics {
            loss,
            micro_f1: s.micro,
            macro_f1: s.macro_,
            accuracy: s.accuracy,
            auc: None,
        });
    }
    let truth = labels.single(rows);
    let pred: Vec<usize> = (0..rows.len())
        .map(|i| {
            let row = logits.row(i);
            (0..c).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect();
    let s = single_label_scores(&pred, &truth, c);
    let auc = if c == 2 {
        let (scores, pos) = binary_scores(logits, &truth);
        roc_auc(&scores, &pos)
    } else {
        None
    };
    Ok(Metrics {
        loss,
        micro_f1: s.micro,
        macro_f1: s.macro_,
        accuracy: s.accuracy,
        auc,
    })
}

/// Positive-class score `z1 - z0` (monotone in the softmax probability).
fn binary_scores<T: Scalar>(logits: &Matrix<T>, truth: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..logits.rows())
        .map(|i| (logits[(i, 1)] - logits[(i, 0)]).to_f64_lossy())
        .collect();
    (scores, truth.iter().map(|&t| t == 1).collect())
}

/// Metrics of `model` on the given target rows.
pub fn evaluate<T: Scalar>(
    model: &HetTreeModel<T>,
    table: &AggregatedTable,
    labels: &Labels,
    split: &[usize],
) -> Result<Metrics> {
    if split.is_empty() {
        return Err(Error::EmptySplit("evaluation split is empty".into()));
    }
    let input = ModelInput::from_table(table, Some(split));
    let logits = model.logits(&input)?;
    score_logits(&logits, labels, split)
}

/// ROC points for a binary single-label task.
pub fn roc_points<T: Scalar>(
    model: &HetTreeModel<T>,
    table: &AggregatedTable,
    labels: &Labels,
    split: &[usize],
) -> Result<Vec<RocPoint>> {
    if labels.multi_label || labels.num_classes != 2 {
        return Err(Error::Config("ROC needs a binary single-label task".into()));
    }
    let input = ModelInput::from_table(table, Some(split));
    let logits = model.logits(&input)?;
    let (scores, pos) = binary_scores(&logits, &labels.single(split));
    Ok(roc_curve(&scores, &pos))
}

/// Picks exactly `floor(rate · |train|)` training nodes to hide.
pub fn choose_masked<R: Rng + ?Sized>(train: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    let k = (rate * train.len() as f64).floor() as usize;
    let mut masked: Vec<usize> = rand::seq::index::sample(rng, train.len(), k)
        .into_iter()
        .map(|i| train[i])
        .collect();
    masked.sort_unstable();
    masked
}

/// Re-derives the label tables with a random fraction `rate` of the train
/// labels hidden. Returns the new table and the hidden nodes; `rate == 0`
/// returns the table unchanged.
pub fn mask_labels<R: Rng + ?Sized>(
    g: &HetGraph,
    table: &AggregatedTable,
    train: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<(AggregatedTable, Vec<usize>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("label mask rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok((table.clone(), Vec::new()));
    }
    let masked = choose_masked(train, rate, rng);
    let visible: Vec<usize> = train
        .iter()
        .copied()
        .filter(|v| masked.binary_search(v).is_err())
        .collect();
    let opts = AggregateOptions {
        mode: table.mode,
        max_expansions: DEFAULT_MAX_EXPANSIONS,
    };
    let labels = aggregate_labels_visible(g, &table.label_paths, &opts, &visible)?;
    Ok((
        AggregatedTable {
            labels,
            ..table.clone()
        },
        masked,
    ))
}

struct OptimizerState<T> {
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
    step: i32,
}

impl<T: Scalar> OptimizerState<T> {
    fn new(store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| {
                    let (r, c) = store.value(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect()
        };
        OptimizerState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn apply(&mut self, store: &mut ParamStore<T>, cfg: &TrainConfig) {
        self.step += 1;
        let lr = T::of(cfg.lr);
        let wd = T::of(cfg.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let grad: Vec<T> = store
                .grad(id)
                .as_slice()
                .iter()
                .zip(store.value(id).as_slice())
                .map(|(&g, &w)| g + wd * w)
                .collect();
            match cfg.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let c1 = T::one() - T::of(beta1.powi(self.step));
                    let c2 = T::one() - T::of(beta2.powi(self.step));
                    let eps = T::of(eps);
                    let m = self.first[k].as_mut_slice();
                    let v = self.second[k].as_mut_slice();
                    let w = store.value_mut(id).as_mut_slice();
                    for j in 0..w.len() {
                        m[j] = b1 * m[j] + (T::one() - b1) * grad[j];
                        v[j] = b2 * v[j] + (T::one() - b2) * grad[j] * grad[j];
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        w[j] = w[j] - lr * mh / (vh.sqrt() + eps);
                    }
                }
                Optimizer::Sgd { momentum } => {
                    let mu = T::of(momentum);
                    let m = self.first[k].as_mut_slice();
                    let w = store.value_mut(id).as_mut_slice();
                    for j in 0..w.len() {
                        m[j] = mu * m[j] + grad[j];
                        w[j] = w[j] - lr * m[j];
                    }
                }
            }
        }
    }
}

/// Everything [`train`] needs besides the model.
pub struct TrainData<'a> {
    pub table: &'a AggregatedTable,
    pub labels: &'a Labels,
    pub train: &'a [usize],
    pub val: &'a [usize],
    /// Needed only when `label_mask_rate > 0`.
    pub graph: Option<&'a HetGraph>,
}

/// Fits `model` in place and restores the parameters of the best validation
/// epoch (the last epoch when there is no validation split).
pub fn train<T: Scalar>(model: &mut HetTreeModel<T>, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train split is empty".into()));
    }
    if cfg.label_mask_rate > 0.0 && data.graph.is_none() {
        return Err(Error::Config("label masking needs the graph".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(model.params());
    let mut rows: Vec<usize> = data.train.to_vec();
    let base_input = ModelInput::<T>::from_table(data.table, Some(data.train));
    let val_input = (!data.val.is_empty()).then(|| ModelInput::<T>::from_table(data.table, Some(data.val)));

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut tape = Tape::new();
    tape.set_check_finite(true);

    for epoch in 0..cfg.epochs {
        let masked_table;
        let epoch_table = if cfg.label_mask_rate > 0.0 {
            let g = data.graph.expect("checked above");
            masked_table = mask_labels(g, data.table, data.train, cfg.label_mask_rate, &mut rng)?.0;
            &masked_table
        } else {
            data.table
        };

        let batch = if cfg.batch_size == 0 {
            rows.len()
        } else {
            rows.shuffle(&mut rng);
            cfg.batch_size
        };
        for chunk in rows.chunks(batch) {
            let input = if cfg.batch_size == 0 && cfg.label_mask_rate == 0.0 {
                None
            } else {
                Some(ModelInput::<T>::from_table(epoch_table, Some(chunk)))
            };
            let input_ref = input.as_ref().unwrap_or(&base_input);
            tape.reset();
            let (logits, _) = model.forward(&mut tape, input_ref, true, &mut rng)?;
            let loss = batch_loss(&mut tape, logits, data.labels, chunk)?;
            let value = tape.value(loss)[(0, 0)].to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            tape.backward(loss, model.params_mut())?;
            opt.apply(model.params_mut(), cfg);
        }

        let train_logits = model.logits(&base_input)?;
        let train_metrics = score_logits(&train_logits, data.labels, data.train)?;
        if !train_metrics.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_metrics.loss,
            });
        }
        let val_metrics = match &val_input {
            Some(vi) => Some(score_logits(&model.logits(vi)?, data.labels, data.val)?),
            None => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            train: train_metrics,
            val: val_metrics,
        });

        let score = val_metrics.map_or(f64::NEG_INFINITY, |m| m.selection_value(cfg.selection));
        let improved = match &best {
            None => true,
            Some((b, _)) => score > *b || (val_metrics.is_none()),
        };
        if improved {
            best = Some((score, model.params().clone()));
            log.best_epoch = epoch;
        } else if cfg.patience > 0 && epoch - log.best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(log)
}
