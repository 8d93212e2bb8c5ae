//! SGD, SAM and RSAM.
//!
//! All three share the SGD update
//! `buf ← μ·buf + (g + λθ)`, `θ ← θ − η·buf`; SAM and RSAM only change the
//! point at which `g` is evaluated. RSAM perturbs by
//! `ε = −ρ·sign(1−α)·s(g)·g` with `s(g) = Σ|g_j|^{2α} / (Σg_j²)^{α+1}`,
//! which for `α > 1` climbs the loss like SAM but with a step length that
//! tracks how concentrated the gradient energy is.

use serde::{Deserialize, Serialize};

use crate::entropy::RenyiOrder;
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::network::{loss_and_grad, Dataset, MlpSpec, NetworkParams};

/// RSAM radius range used for the published image-classification runs.
pub const RSAM_PRESET_RHO: (f64, f64) = (0.3, 1.25);
/// RSAM orders used for the published image-classification runs.
pub const RSAM_PRESET_ALPHAS: [f64; 3] = [1.05, 1.1, 1.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sam,
    Rsam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sam => "sam",
            OptimizerKind::Rsam => "rsam",
        })
    }
}

/// When a sharpness-aware optimizer stops behaving like plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    FixedEpochs {
        epochs: usize,
    },
    /// First epoch whose validation accuracy reaches `threshold`.
    MetricThreshold {
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp over `warmup_epochs`, then cosine decay to zero at
    /// `total_epochs`.
    Cosine {
        total_epochs: usize,
        warmup_epochs: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub alpha: RenyiOrder,
    pub warmup: Warmup,
    pub lr_schedule: LrSchedule,
    /// Use `+ρ·sign(1−α)` instead of `−ρ·sign(1−α)` in the RSAM perturbation.
    pub flip_sign: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            rho: 0.5,
            alpha: RenyiOrder::new(1.1).unwrap(),
            warmup: Warmup::FixedEpochs { epochs: 5 },
            lr_schedule: LrSchedule::Constant,
            flip_sign: false,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            lr,
            ..Default::default()
        }
    }

    pub fn sam(lr: f64, rho: f64) -> Self {
        Self {
            kind: OptimizerKind::Sam,
            lr,
            rho,
            ..Default::default()
        }
    }

    pub fn rsam(lr: f64, rho: f64, alpha: f64) -> Result<Self> {
        let cfg = Self {
            kind: OptimizerKind::Rsam,
            lr,
            rho,
            alpha: RenyiOrder::new(alpha)?,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate {} must be finite and ≥ 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("weight decay must be finite and ≥ 0"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::validation("rho must be finite and ≥ 0"));
        }
        match self.kind {
            OptimizerKind::Sgd => {}
            OptimizerKind::Sam => {
                if self.rho == 0.0 {
                    return Err(Error::validation("SAM needs rho > 0"));
                }
            }
            OptimizerKind::Rsam => {
                if self.alpha.is_shannon() {
                    return Err(Error::validation("RSAM needs α ≠ 1"));
                }
            }
        }
        if let Warmup::MetricThreshold { threshold } = self.warmup {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::validation(
                    "warm-up accuracy threshold must lie in [0, 1]",
                ));
            }
        }
        if let LrSchedule::Cosine {
            total_epochs,
            warmup_epochs,
        } = self.lr_schedule
        {
            if total_epochs <= warmup_epochs {
                return Err(Error::validation(
                    "cosine schedule needs total_epochs > warmup_epochs",
                ));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine {
                total_epochs,
                warmup_epochs,
            } => {
                if epoch < warmup_epochs {
                    self.lr * (epoch + 1) as f64 / warmup_epochs as f64
                } else {
                    let span = (total_epochs - warmup_epochs) as f64;
                    let t = ((epoch - warmup_epochs) as f64 / span).min(1.0);
                    0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
                }
            }
        }
    }

    fn rsam_alpha(&self) -> f64 {
        self.alpha.alpha().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    SharpnessAware,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub buffer: Vec<f64>,
    /// 0-based index of the epoch in progress.
    pub epoch: usize,
    pub phase: Phase,
}

impl OptimState {
    pub fn new(num_params: usize, cfg: &OptimConfig) -> Self {
        let phase = match cfg.warmup {
            Warmup::FixedEpochs { epochs: 0 } if cfg.kind != OptimizerKind::Sgd => {
                Phase::SharpnessAware
            }
            _ => Phase::Warmup,
        };
        Self {
            buffer: vec![0.0; num_params],
            epoch: 0,
            phase,
        }
    }
}

/// What the gate sees at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateMetrics {
    /// Number of completed epochs.
    pub epochs_completed: usize,
    pub val_accuracy: f64,
}

/// Phase to use after the epoch described by `metrics`. Once switched, the
/// phase never reverts.
pub fn warmup_gate(state: &OptimState, metrics: GateMetrics, cfg: &OptimConfig) -> Phase {
    if state.phase == Phase::SharpnessAware {
        return Phase::SharpnessAware;
    }
    let switch = match cfg.warmup {
        Warmup::FixedEpochs { epochs } => metrics.epochs_completed >= epochs,
        Warmup::MetricThreshold { threshold } => metrics.val_accuracy >= threshold,
    };
    if switch {
        Phase::SharpnessAware
    } else {
        Phase::Warmup
    }
}

/// One momentum-SGD update with L2 weight decay folded into the gradient.
pub fn sgd_step(
    params: &[f64],
    grad: &[f64],
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<Vec<f64>> {
    if grad.len() != params.len() || state.buffer.len() != params.len() {
        return Err(Error::shape(format!(
            "params {}, grad {}, buffer {}",
            params.len(),
            grad.len(),
            state.buffer.len()
        )));
    }
    let lr = cfg.lr_at(state.epoch);
    Ok(params
        .iter()
        .zip(grad)
        .zip(state.buffer.iter_mut())
        .map(|((&p, &g), b)| {
            *b = cfg.momentum * *b + (g + cfg.weight_decay * p);
            p - lr * *b
        })
        .collect())
}

/// `ε = ρ·g/‖g‖`; zero for a zero gradient.
pub fn sam_perturbation(grad: &[f64], rho: f64) -> Vec<f64> {
    let n = norm2(grad);
    if n == 0.0 || rho == 0.0 {
        return vec![0.0; grad.len()];
    }
    grad.iter().map(|g| rho * g / n).collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `(log Σ|g_j|^{2α}, log Σ g_j²)` over the non-zero entries.
fn log_power_sums(grad: &[f64], alpha: f64) -> (f64, f64) {
    let logs = grad.iter().filter(|g| **g != 0.0).map(|g| g.abs().ln());
    (
        log_sum_exp(logs.clone().map(|l| 2.0 * alpha * l)),
        log_sum_exp(logs.map(|l| 2.0 * l)),
    )
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) || alpha == 1.0 {
        return Err(Error::validation(format!(
            "α = {alpha} must be positive, finite and ≠ 1"
        )));
    }
    Ok(())
}

fn sign_one_minus(alpha: f64) -> f64 {
    if alpha < 1.0 {
        1.0
    } else {
        -1.0
    }
}

/// `ε = −ρ·sign(1−α)·s(g)·g` (sign reversed when `flip_sign`), computed in
/// log space.
pub fn rsam_perturbation(grad: &[f64], rho: f64, alpha: f64, flip_sign: bool) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if rho == 0.0 || grad.iter().all(|&g| g == 0.0) {
        return Ok(vec![0.0; grad.len()]);
    }
    let (log_num, log_sq) = log_power_sums(grad, alpha);
    let log_s = log_num - (alpha + 1.0) * log_sq;
    let sign = -sign_one_minus(alpha) * if flip_sign { -1.0 } else { 1.0 };
    Ok(grad
        .iter()
        .map(|&g| {
            if g == 0.0 {
                0.0
            } else {
                sign * rho * g.signum() * (log_s + g.abs().ln()).exp()
            }
        })
        .collect())
}

/// `−sign(1−α)·Σ|g_j|^{2α} / (Σg_j²)^α`, the value RSAM adds to the loss to
/// first order.
pub fn renyi_regularizer_value(grad: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if grad.iter().all(|&g| g == 0.0) {
        return Err(Error::validation(
            "regularizer is undefined for a zero gradient",
        ));
    }
    let (log_num, log_sq) = log_power_sums(grad, alpha);
    Ok(-sign_one_minus(alpha) * (log_num - alpha * log_sq).exp())
}

/// First-order prediction of `L(θ + ε)` for the RSAM `ε`.
pub fn rsam_first_order_prediction(loss: f64, grad: &[f64], rho: f64, alpha: f64) -> Result<f64> {
    Ok(loss + rho * renyi_regularizer_value(grad, alpha)?)
}

fn perturbed_step(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    cfg: &OptimConfig,
    state: &mut OptimState,
    perturb: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(NetworkParams, f64)> {
    let (loss, grad) = loss_and_grad(spec, params, batch)?;
    let eps = perturb(&grad)?;
    let step_grad = if eps.iter().all(|&e| e == 0.0) {
        grad
    } else {
        let shifted: Vec<f64> = params.flat().iter().zip(&eps).map(|(p, e)| p + e).collect();
        loss_and_grad(spec, &params.with_flat(shifted)?, batch)?.1
    };
    let next = sgd_step(params.flat(), &step_grad, cfg, state)?;
    Ok((params.with_flat(next)?, loss))
}

/// Plain SGD step on one batch; returns the new parameters and the batch
/// loss before the step.
pub fn plain_step(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<(NetworkParams, f64)> {
    perturbed_step(spec, params, batch, cfg, state, |g| Ok(vec![0.0; g.len()]))
}

pub fn sam_step(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<(NetworkParams, f64)> {
    perturbed_step(spec, params, batch, cfg, state, |g| {
        Ok(sam_perturbation(g, cfg.rho))
    })
}

pub fn rsam_step(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<(NetworkParams, f64)> {
    let alpha = cfg.rsam_alpha();
    perturbed_step(spec, params, batch, cfg, state, |g| {
        rsam_perturbation(g, cfg.rho, alpha, cfg.flip_sign)
    })
}

/// Dispatches on optimizer kind and phase: warm-up and SGD take plain steps.
pub fn step(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<(NetworkParams, f64)> {
    match (cfg.kind, state.phase) {
        (OptimizerKind::Sgd, _) | (_, Phase::Warmup) => plain_step(spec, params, batch, cfg, state),
        (OptimizerKind::Sam, Phase::SharpnessAware) => sam_step(spec, params, batch, cfg, state),
        (OptimizerKind::Rsam, Phase::SharpnessAware) => rsam_step(spec, params, batch, cfg, state),
    }
}
