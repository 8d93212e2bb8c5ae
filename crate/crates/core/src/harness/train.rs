//! Mini-batch training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SeededRng;
use crate::network::{evaluate, Activation, Dataset, Loss, MlpSpec, NetworkParams};
use crate::optim::{step, warmup_gate, GateMetrics, OptimConfig, OptimState, Phase};

const STREAM_INIT: u64 = 0;
const STREAM_ORDER: u64 = 1 << 32;

/// Hidden widths plus everything else `MlpSpec` needs except the data
/// dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default)]
    pub bias: bool,
}

fn default_loss() -> Loss {
    Loss::SoftmaxCrossEntropy
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, output_dim: usize) -> Result<MlpSpec> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(output_dim);
        Ok(MlpSpec::new(&dims, self.activation, self.loss)?.with_bias(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub phase: Phase,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Loss became non-finite during `epoch` (1-based).
    Diverged {
        epoch: usize,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub metrics: Vec<EpochMetrics>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Trains from a seeded uniform initialization. Data order is reshuffled
/// every epoch from the same seed. Test accuracy drives a metric-threshold
/// warm-up gate.
pub fn train(
    spec: &MlpSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    optim: &OptimConfig,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    optim.validate()?;
    if settings.batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::validation("train and test sets must be nonempty"));
    }
    let init = NetworkParams::init_uniform(spec, &mut SeededRng::new(seed, STREAM_INIT))?;
    train_from(spec, init, train_set, test_set, optim, settings, seed)
}

pub fn train_from(
    spec: &MlpSpec,
    init: NetworkParams,
    train_set: &Dataset,
    test_set: &Dataset,
    optim: &OptimConfig,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut params = init;
    let mut state = OptimState::new(params.flat().len(), optim);
    let mut metrics = Vec::with_capacity(settings.epochs);
    let n = train_set.len();

    for epoch in 0..settings.epochs {
        state.epoch = epoch;
        let phase = state.phase;
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(seed, STREAM_ORDER | epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(settings.batch_size) {
            let batch = train_set.subset(chunk);
            let (next, loss) = step(spec, &params, &batch, optim, &mut state)?;
            if !loss.is_finite() || next.flat().iter().any(|p| !p.is_finite()) {
                return Ok(TrainOutcome {
                    params,
                    metrics,
                    status: RunStatus::Diverged { epoch: epoch + 1 },
                });
            }
            params = next;
        }
        let tr = evaluate(spec, &params, train_set)?;
        let te = evaluate(spec, &params, test_set)?;
        if !tr.loss.is_finite() || !te.loss.is_finite() {
            return Ok(TrainOutcome {
                params,
                metrics,
                status: RunStatus::Diverged { epoch: epoch + 1 },
            });
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            lr: optim.lr_at(epoch),
            phase,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: te.loss,
            test_acc: te.accuracy,
        });
        state.phase = warmup_gate(
            &state,
            GateMetrics {
                epochs_completed: epoch + 1,
                val_accuracy: te.accuracy,
            },
            optim,
        );
    }
    Ok(TrainOutcome {
        params,
        metrics,
        status: RunStatus::Completed,
    })
}

pub fn write_metrics_csv(metrics: &[EpochMetrics], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "epoch,lr,phase,train_loss,train_acc,test_loss,test_acc")?;
    for m in metrics {
        let phase = match m.phase {
            Phase::Warmup => "warmup",
            Phase::SharpnessAware => "sharpness_aware",
        };
        writeln!(
            w,
            "{},{:?},{},{:?},{:?},{:?},{:?}",
            m.epoch, m.lr, phase, m.train_loss, m.train_acc, m.test_loss, m.test_acc
        )?;
    }
    Ok(())
}
