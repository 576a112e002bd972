//! Cross-validated training with graph-level majority voting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{argmax_rows, Adam, Network, NetworkConfig};
use crate::tensor::Tensor4;
use crate::CnnError;

/// Layout tensors with the graph each one came from.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub tensors: Vec<Vec<f32>>,
    /// Source graph of each tensor.
    pub graph_of: Vec<usize>,
    /// Class of each graph, indexed by graph id.
    pub graph_labels: Vec<usize>,
    pub classes: usize,
}

impl TensorDataset {
    pub fn validate(&self) -> Result<(), CnnError> {
        let len = self.height * self.width * self.channels;
        if self.tensors.is_empty() {
            return Err(CnnError::EmptyInput);
        }
        if self.tensors.len() != self.graph_of.len() {
            return Err(CnnError::Shape("one graph id per tensor required".into()));
        }
        if let Some(t) = self.tensors.iter().find(|t| t.len() != len) {
            return Err(CnnError::Shape(format!("tensor of {} values, expected {len}", t.len())));
        }
        if self.graph_of.iter().any(|&g| g >= self.graph_labels.len()) {
            return Err(CnnError::Shape("graph id without a label".into()));
        }
        if self.graph_labels.iter().any(|&l| l >= self.classes) {
            return Err(CnnError::Shape("graph label outside the class range".into()));
        }
        Ok(())
    }

    pub fn label(&self, sample: usize) -> usize {
        self.graph_labels[self.graph_of[sample]]
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor4, Vec<usize>), CnnError> {
        let views: Vec<&[f32]> = idx.iter().map(|&i| self.tensors[i].as_slice()).collect();
        let x = Tensor4::stack(self.height, self.width, self.channels, &views)?;
        Ok((x, idx.iter().map(|&i| self.label(i)).collect()))
    }

    /// Graphs that own at least one tensor, ascending.
    pub fn graphs(&self) -> Vec<usize> {
        let mut g = self.graph_of.clone();
        g.sort_unstable();
        g.dedup();
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a better validation loss before stopping.
    pub patience: usize,
    pub folds: usize,
    /// Fraction of each fold's training graphs held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 10,
            max_epochs: 100,
            patience: 10,
            folds: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if self.folds < 2 {
            return bad("at least two folds are required");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

/// Most frequent label; ties go to the smallest class index.
pub fn majority_vote(predictions: &[usize]) -> Option<usize> {
    let max = *predictions.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &p in predictions {
        counts[p] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}

/// Stratified assignment of graphs to folds: each class is shuffled and dealt
/// round-robin, continuing where the previous class stopped.
pub fn stratified_folds(graphs: &[usize], labels: &[usize], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in 0..classes {
        let mut members: Vec<usize> = graphs.iter().copied().filter(|&g| labels[g] == class).collect();
        members.shuffle(&mut rng);
        for g in members {
            out[next % folds].push(g);
            next += 1;
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_graphs: usize,
    pub validation_graphs: usize,
    pub test_graphs: usize,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 means untrained).
    pub best_epoch: usize,
    pub layout_accuracy: f64,
    pub graph_accuracy: f64,
    pub curve: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean_graph_accuracy: f64,
    pub std_graph_accuracy: f64,
    pub mean_layout_accuracy: f64,
    /// Accuracy of always predicting the most frequent class.
    pub majority_baseline: f64,
}

/// Accuracy per layout and per graph (majority vote over its layouts).
pub fn evaluate(net: &Network, data: &TensorDataset, samples: &[usize]) -> Result<(f64, f64, f64), CnnError> {
    if samples.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk)?;
        let (logits, _) = net.forward(&x, None)?;
        loss += crate::ops::softmax_cross_entropy(&logits, &labels, net.config.classes).0 * chunk.len() as f64;
        preds.extend(argmax_rows(&logits, net.config.classes));
    }
    let layout_hits = samples.iter().zip(&preds).filter(|(&s, &p)| data.label(s) == p).count();
    let mut by_graph: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (&s, &p) in samples.iter().zip(&preds) {
        by_graph.entry(data.graph_of[s]).or_default().push(p);
    }
    let graph_hits = by_graph
        .iter()
        .filter(|(g, votes)| majority_vote(votes) == Some(data.graph_labels[**g]))
        .count();
    Ok((
        loss / samples.len() as f64,
        layout_hits as f64 / samples.len() as f64,
        graph_hits as f64 / by_graph.len() as f64,
    ))
}

const EVAL_BATCH: usize = 32;

fn samples_of(data: &TensorDataset, graphs: &[usize]) -> Vec<usize> {
    let mut keep = vec![false; data.graph_labels.len()];
    graphs.iter().for_each(|&g| keep[g] = true);
    (0..data.tensors.len()).filter(|&i| keep[data.graph_of[i]]).collect()
}

/// Trains on `train` graphs, stopping early on `validation` loss, and
/// returns the best network with its curve.
pub fn train_model(
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    data: &TensorDataset,
    train: &[usize],
    validation: &[usize],
    seed: u64,
) -> Result<(Network, Vec<EpochRecord>, usize), CnnError> {
    cfg.validate()?;
    data.validate()?;
    let mut net = Network::new(net_config.clone(), seed)?;
    let train_samples = samples_of(data, train);
    let val_samples = samples_of(data, validation);
    if train_samples.is_empty() {
        return Err(CnnError::EmptyInput);
    }
    let mut adam = Adam::new(net.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order = train_samples.clone();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.params.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(batch)?;
            let (loss, grads, logits) = net.loss_and_grad(&x, &labels, Some(&mut rng))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(CnnError::Divergence { epoch });
            }
            adam.step(&mut net.params, &grads);
            loss_sum += loss * batch.len() as f64;
            hits += argmax_rows(&logits, net.config.classes)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        let (val_loss, val_acc, _) = if val_samples.is_empty() {
            (loss_sum / order.len() as f64, 0.0, 0.0)
        } else {
            evaluate(&net, data, &val_samples)?
        };
        if !val_loss.is_finite() {
            return Err(CnnError::Divergence { epoch });
        }
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: hits as f64 / order.len() as f64,
            validation_loss: val_loss,
            validation_accuracy: val_acc,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, net.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = best.1;
    if best_epoch > 0 {
        net.params = best.2;
    }
    Ok((net, curve, best_epoch))
}

/// Runs one fold: the fold's graphs are the test set, a stratified slice of
/// the rest is the validation set.
pub fn run_fold(
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    data: &TensorDataset,
    folds: &[Vec<usize>],
    fold: usize,
) -> Result<(FoldReport, Network), CnnError> {
    let test = &folds[fold];
    let rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    let seed = cfg.seed.wrapping_add(fold as u64);
    let (train, validation) = if cfg.validation_fraction > 0.0 {
        let parts = (1.0 / cfg.validation_fraction).round() as usize;
        let split = stratified_folds(&rest, &data.graph_labels, parts.max(2), seed);
        let validation = split[0].clone();
        let train: Vec<usize> = split[1..].iter().flatten().copied().collect();
        (train, validation)
    } else {
        (rest, Vec::new())
    };
    let (net, curve, best_epoch) = train_model(net_config, cfg, data, &train, &validation, seed).map_err(|e| match e {
        CnnError::Divergence { epoch } => CnnError::FoldDivergence { fold, epoch },
        other => other,
    })?;
    let (_, layout_accuracy, graph_accuracy) = evaluate(&net, data, &samples_of(data, test))?;
    Ok((
        FoldReport {
            fold,
            train_graphs: train.len(),
            validation_graphs: validation.len(),
            test_graphs: test.len(),
            epochs_run: curve.len(),
            best_epoch,
            layout_accuracy,
            graph_accuracy,
            curve,
        },
        net,
    ))
}

/// Stratified k-fold cross-validation over graphs. Folds are independent and
/// run in parallel; the report lists them in fold order.
pub fn cross_validate(net_config: &NetworkConfig, cfg: &TrainConfig, data: &TensorDataset) -> Result<CvReport, CnnError> {
    cross_validate_models(net_config, cfg, data).map(|(r, _)| r)
}

/// [`cross_validate`], also returning each fold's restored best model.
pub fn cross_validate_models(
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    data: &TensorDataset,
) -> Result<(CvReport, Vec<Network>), CnnError> {
    cfg.validate()?;
    data.validate()?;
    let graphs = data.graphs();
    if graphs.len() < cfg.folds {
        return Err(CnnError::Config(format!("{} graphs cannot fill {} folds", graphs.len(), cfg.folds)));
    }
    let folds = stratified_folds(&graphs, &data.graph_labels, cfg.folds, cfg.seed);
    let runs = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(net_config, cfg, data, &folds, f))
        .collect::<Result<Vec<_>, _>>()?;
    let (reports, models): (Vec<FoldReport>, Vec<Network>) = runs.into_iter().unzip();
    let k = reports.len() as f64;
    let mean = reports.iter().map(|r| r.graph_accuracy).sum::<f64>() / k;
    let var = reports.iter().map(|r| (r.graph_accuracy - mean).powi(2)).sum::<f64>() / k;
    let mut class_counts = vec![0usize; data.classes];
    graphs.iter().for_each(|&g| class_counts[data.graph_labels[g]] += 1);
    let report = CvReport {
        mean_graph_accuracy: mean,
        std_graph_accuracy: var.sqrt(),
        mean_layout_accuracy: reports.iter().map(|r| r.layout_accuracy).sum::<f64>() / k,
        majority_baseline: *class_counts.iter().max().unwrap_or(&0) as f64 / graphs.len() as f64,
        folds: reports,
    };
    Ok((report, models))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        assert_eq!(majority_vote(&[1, 1, 0]), Some(1));
        assert_eq!(majority_vote(&[0, 1]), Some(0));
        assert_eq!(majority_vote(&[2]), Some(2));
        assert_eq!(majority_vote(&[]), None);
        assert_eq!(majority_vote(&[2, 1, 2, 1]), Some(1));
    }

    #[test]
    fn folds_are_stratified_partitions() {
        let labels: Vec<usize> = (0..50).map(|g| usize::from(g % 3 == 0)).collect();
        let graphs: Vec<usize> = (0..50).collect();
        let folds = stratified_folds(&graphs, &labels, 5, 7);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, graphs);
        for f in &folds {
            assert_eq!(f.len(), 10);
            let ones = f.iter().filter(|&&g| labels[g] == 1).count();
            assert!((3..=4).contains(&ones), "{ones}");
        }
        assert_eq!(folds, stratified_folds(&graphs, &labels, 5, 7));
        assert_ne!(folds, stratified_folds(&graphs, &labels, 5, 8));
    }
}
