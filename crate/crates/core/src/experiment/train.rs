use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::batch_gradient;
use crate::par::{self, Execution};
use crate::tensor::Tensor;

/// ChaCha stream used for minibatch shuffling; stream 0 initialises weights.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// Share of training samples misclassified by the network that computed
    /// their gradient, in percent.
    pub train_error_pct: f64,
    pub test_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub baseline_test_error_pct: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were checkpointed; 0 is the untrained network.
    pub best_epoch: usize,
    /// Test error of the checkpointed parameters.
    pub error_pct: f64,
    /// `confusion[true][predicted]` on the test split.
    pub confusion: Vec<Vec<usize>>,
    pub diverged: bool,
    pub diverged_at_epoch: Option<usize>,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    /// The report with timing zeroed; everything else is a pure function of
    /// config and data.
    pub fn without_timing(&self) -> MetricsReport {
        MetricsReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub samples: usize,
    pub error_pct: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// `100 · (1 − trace / total)`
pub fn confusion_error_pct(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    100.0 * (1.0 - hits as f64 / total as f64)
}

fn confusion_of(net: &Network, inputs: &[(Tensor, usize)], classes: usize, exec: Execution) -> Result<Vec<Vec<usize>>> {
    let predictions = par::map(exec, inputs, |(x, _)| net.predict(x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = vec![vec![0; classes]; classes];
    for (&p, (_, y)) in predictions.iter().zip(inputs) {
        if *y >= classes {
            return Err(Error::LabelOutOfRange { label: *y, classes });
        }
        confusion[*y][p] += 1;
    }
    Ok(confusion)
}

/// Classify `samples` with a checkpoint after subtracting its input mean.
/// Ties between classes go to the lowest index.
pub fn evaluate(ck: &Checkpoint, samples: &[Sample], num_classes: usize, split: Split, exec: Execution) -> Result<Evaluation> {
    if ck.network.num_classes() != num_classes {
        return Err(Error::Config(format!(
            "checkpoint predicts {} classes but the data has {num_classes}",
            ck.network.num_classes()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("no {split} samples to evaluate")));
    }
    let inputs: Vec<(Tensor, usize)> = samples
        .iter()
        .map(|s| (s.image.map(|v| v - ck.input_mean), s.label))
        .collect();
    let confusion = confusion_of(&ck.network, &inputs, num_classes, exec)?;
    Ok(Evaluation {
        split,
        samples: samples.len(),
        error_pct: confusion_error_pct(&confusion),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

/// Minibatch SGD over `data.train`, evaluating on `data.test` after every
/// epoch and keeping the parameters with the lowest test error (earliest
/// epoch on ties). A non-finite loss or gradient stops training and marks
/// the run diverged.
pub fn train(config: &ExperimentConfig, data: &Dataset, exec: Execution) -> Result<TrainedRun> {
    let started = Instant::now();
    config.validate()?;
    let classes = data.num_classes();
    let spec = config.network_spec([1, crate::data::INPUT_SHAPE.height, crate::data::INPUT_SHAPE.width], classes)?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Data("training needs non-empty train and test splits".into()));
    }
    let mut net = Network::init(spec, config.seed)?;
    let train_inputs = data.inputs(Split::Train, data.input_mean);
    let test_inputs = data.inputs(Split::Test, data.input_mean);

    let test_error = |net: &Network| -> Result<f64> {
        Ok(confusion_error_pct(&confusion_of(net, &test_inputs, classes, exec)?))
    };
    let baseline = test_error(&net)?;
    let mut best = (baseline, 0usize, net.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut diverged_at = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor, usize)> = batch_idx.iter().map(|&i| (&train_inputs[i].0, train_inputs[i].1)).collect();
            let bg = batch_gradient(&net, &batch, exec)?;
            if !bg.loss_sum.is_finite() || !bg.grads.all_finite() {
                diverged_at = Some(epoch);
                break 'epochs;
            }
            loss_sum += bg.loss_sum;
            correct += bg.correct;
            net.apply_gradients(&bg.grads, config.learning_rate)?;
        }
        if !net.params().iter().all(|p| p.all_finite()) {
            diverged_at = Some(epoch);
            break;
        }
        let n = train_inputs.len() as f64;
        let test_error_pct = test_error(&net)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_error_pct: 100.0 * (1.0 - correct as f64 / n),
            test_error_pct,
        });
        if test_error_pct < best.0 {
            best = (test_error_pct, epoch, net.clone());
        }
    }

    let (_, best_epoch, best_net) = best;
    let confusion = confusion_of(&best_net, &test_inputs, classes, exec)?;
    let report = MetricsReport {
        config: *config,
        config_hash: config.hash(),
        seed: config.seed,
        baseline_test_error_pct: baseline,
        epochs,
        best_epoch,
        error_pct: confusion_error_pct(&confusion),
        confusion,
        diverged: diverged_at.is_some(),
        diverged_at_epoch: diverged_at,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun {
        checkpoint: Checkpoint {
            network: best_net,
            input_mean: data.input_mean,
        },
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Architecture;

    fn toy_dataset() -> Dataset {
        let mut samples = Vec::new();
        for label in 0..3 {
            for (k, split) in [Split::Train, Split::Train, Split::Test].into_iter().enumerate() {
                let image = Tensor::from_fn(&[1, 50, 50], |i| {
                    let (y, x) = (i / 50, i % 50);
                    let on = (x / 10) % 3 == label || (y + k) % 17 == 0;
                    if on { 0.9 } else { 0.1 }
                })
                .unwrap();
                samples.push(Sample {
                    image,
                    label,
                    orientation_deg: 0.0,
                    split: Some(split),
                    source_id: format!("{label}/{k}"),
                });
            }
        }
        Dataset::from_samples(vec!["a".into(), "b".into(), "c".into()], samples).unwrap()
    }

    fn small(cfg: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            k1: 2,
            k2: 2,
            fc_hidden: 8,
            filter_size: 5,
            stride: 2,
            batch_size: 2,
            epochs: 3,
            ..cfg
        }
    }

    #[test]
    fn confusion_error_definition() {
        let c = vec![vec![3, 1], vec![0, 4]];
        assert!((confusion_error_pct(&c) - 12.5).abs() < 1e-12);
        // relabelling both axes consistently leaves the error unchanged
        let swapped = vec![vec![4, 0], vec![1, 3]];
        assert_eq!(confusion_error_pct(&c), confusion_error_pct(&swapped));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = toy_dataset();
        let cfg = small(ExperimentConfig {
            learning_rate: 0.0,
            ..ExperimentConfig::default()
        });
        let run = train(&cfg, &data, Execution::Parallel).unwrap();
        let fresh = Network::init(cfg.network_spec([1, 50, 50], 3).unwrap(), cfg.seed).unwrap();
        assert_eq!(run.checkpoint.network, fresh);
        assert_eq!(run.report.best_epoch, 0);
        assert_eq!(run.report.error_pct, run.report.baseline_test_error_pct);
        assert!(run.report.epochs.iter().all(|e| e.test_error_pct == run.report.baseline_test_error_pct));
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset();
        for arch in [Architecture::A, Architecture::B] {
            let cfg = small(ExperimentConfig {
                architecture: arch,
                learning_rate: 0.01,
                ..ExperimentConfig::default()
            });
            let a = train(&cfg, &data, Execution::Parallel).unwrap();
            let b = train(&cfg, &data, Execution::Sequential).unwrap();
            assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
            assert_eq!(a.report.without_timing(), b.report.without_timing());
            assert_eq!(a.report.epochs.len(), 3);
        }
    }

    #[test]
    fn huge_learning_rate_is_reported_as_divergence() {
        let data = toy_dataset();
        let cfg = small(ExperimentConfig {
            learning_rate: 1e200,
            epochs: 5,
            ..ExperimentConfig::default()
        });
        let run = train(&cfg, &data, Execution::Parallel).unwrap();
        assert!(run.report.diverged);
        assert!(run.checkpoint.network.params().iter().all(|p| p.all_finite()));
        assert!(run.report.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn report_invariants() {
        let data = toy_dataset();
        let cfg = small(ExperimentConfig {
            learning_rate: 0.02,
            ..ExperimentConfig::default()
        });
        let run = train(&cfg, &data, Execution::Parallel).unwrap();
        let r = &run.report;
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![1, 1, 1]);
        assert_eq!(r.error_pct, confusion_error_pct(&r.confusion));
        let ev = evaluate(&run.checkpoint, &data.test, 3, Split::Test, Execution::Sequential).unwrap();
        assert_eq!(ev.confusion, r.confusion);
        let json = serde_json::to_string(r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), *r);
    }

    #[test]
    fn zero_output_layer_predicts_class_zero() {
        let data = toy_dataset();
        let spec = small(ExperimentConfig::default()).network_spec([1, 50, 50], 3).unwrap();
        let mut net = Network::init(spec, 4).unwrap();
        let n = net.params().len();
        for p in net.params_mut().into_iter().skip(n - 2) {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let ck = Checkpoint { network: net, input_mean: 0.0 };
        let ev = evaluate(&ck, &data.train, 3, Split::Train, Execution::Parallel).unwrap();
        assert!(ev.confusion.iter().all(|row| row[1] == 0 && row[2] == 0));
        assert!((ev.error_pct - 100.0 * (1.0 - 2.0 / 6.0)).abs() < 1e-12);
        assert!(evaluate(&ck, &data.train, 4, Split::Train, Execution::Parallel).is_err());
    }
}
