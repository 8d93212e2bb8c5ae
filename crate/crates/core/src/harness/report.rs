//! Per-run records and the correlation table built from them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::kendall::{kendall_tau_variant, TauVariant};
use super::measure::{Scope, SharpnessMeasures};
use super::train::{RunStatus, TrainOutcome};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

type SeriesKey = (u8, String, Scope, u64);
type Series = (Option<f64>, Vec<(f64, f64)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// Replicate label from the grid's seed list.
    pub replicate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub run_id: String,
    pub cell: usize,
    pub cell_seed: u64,
    pub hyper: Hyperparameters,
    pub status: RunStatus,
    pub epochs_run: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// `test_loss − train_loss`.
    pub generalization_gap: Option<f64>,
    /// `train_acc − test_acc`.
    pub accuracy_gap: Option<f64>,
    pub measures: Option<SharpnessMeasures>,
}

impl SharpnessReport {
    pub fn new(
        run_id: String,
        cell: usize,
        cell_seed: u64,
        hyper: Hyperparameters,
        outcome: &TrainOutcome,
        measures: Option<SharpnessMeasures>,
    ) -> Self {
        let completed = outcome.status == RunStatus::Completed;
        let last = outcome.last().filter(|_| completed);
        Self {
            run_id,
            cell,
            cell_seed,
            hyper,
            status: outcome.status.clone(),
            epochs_run: outcome.metrics.len(),
            train_loss: last.map(|m| m.train_loss),
            test_loss: last.map(|m| m.test_loss),
            train_acc: last.map(|m| m.train_acc),
            test_acc: last.map(|m| m.test_acc),
            generalization_gap: last.map(|m| m.test_loss - m.train_loss),
            accuracy_gap: last.map(|m| m.train_acc - m.test_acc),
            measures,
        }
    }

    pub fn failed(
        run_id: String,
        cell: usize,
        cell_seed: u64,
        hyper: Hyperparameters,
        reason: String,
    ) -> Self {
        Self {
            run_id,
            cell,
            cell_seed,
            hyper,
            status: RunStatus::Failed { reason },
            epochs_run: 0,
            train_loss: None,
            test_loss: None,
            train_acc: None,
            test_acc: None,
            generalization_gap: None,
            accuracy_gap: None,
            measures: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Completed && self.measures.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Gap,
    TestLoss,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Target::Gap),
            "test_loss" => Ok(Target::TestLoss),
            other => Err(Error::validation(format!(
                "unknown target {other:?}; use gap or test_loss"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorrelateOptions {
    pub tau_b: bool,
    /// Restrict Rényi rows to these orders.
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub measure: String,
    pub scope: String,
    pub alpha: Option<f64>,
    pub tau: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub target: Target,
    pub variant: String,
    pub completed_runs: usize,
    pub excluded_runs: usize,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationTable {
    pub fn find(&self, measure: &str, scope: &str, alpha: Option<f64>) -> Option<&CorrelationRow> {
        self.rows
            .iter()
            .find(|r| r.measure == measure && r.scope == scope && r.alpha == alpha)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "measure,scope,alpha,tau,n")?;
        for r in &self.rows {
            let alpha = r.alpha.map(|a| format!("{a:?}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:?},{}", r.measure, r.scope, alpha, r.tau, r.n)?;
        }
        Ok(())
    }
}

pub const RENYI_MEASURE: &str = "renyi_sharpness";
pub const RENYI_BEST_MEASURE: &str = "renyi_sharpness_best_alpha";

fn alpha_key(a: f64) -> u64 {
    a.to_bits()
}

/// Kendall τ between every measure and `target` over the completed runs.
/// Per scope, the order with the largest signed τ gets an extra row.
pub fn correlate(
    reports: &[SharpnessReport],
    target: Target,
    opts: &CorrelateOptions,
) -> Result<CorrelationTable> {
    let done: Vec<&SharpnessReport> = reports.iter().filter(|r| r.is_complete()).collect();
    if done.len() < 2 {
        return Err(Error::validation(format!(
            "correlation needs at least two completed runs, found {}",
            done.len()
        )));
    }
    let variant = if opts.tau_b {
        TauVariant::B
    } else {
        TauVariant::A
    };
    let target_of = |r: &SharpnessReport| match target {
        Target::Gap => r.generalization_gap,
        Target::TestLoss => r.test_loss,
    };

    // (measure, scope, alpha) → per-run (measure, target) pairs.
    let mut series: BTreeMap<SeriesKey, Series> = BTreeMap::new();
    let mut push =
        |rank: u8, name: String, scope: Scope, alpha: Option<f64>, v: Option<f64>, t: f64| {
            if let Some(v) = v {
                let key = (rank, name, scope, alpha.map_or(0, alpha_key));
                series
                    .entry(key)
                    .or_insert((alpha, Vec::new()))
                    .1
                    .push((v, t));
            }
        };
    for r in &done {
        let Some(t) = target_of(r) else { continue };
        let m = r.measures.as_ref().unwrap();
        for rm in &m.renyi {
            let a = rm.alpha.exponent();
            if let Some(allowed) = &opts.alphas {
                if !allowed.contains(&a) {
                    continue;
                }
            }
            push(
                0,
                RENYI_MEASURE.into(),
                rm.scope,
                Some(a),
                rm.sharpness.value(),
                t,
            );
        }
        push(
            2,
            "hessian_trace".into(),
            Scope::Global,
            None,
            m.hessian_trace.value(),
            t,
        );
        push(
            3,
            "lambda_max".into(),
            Scope::Global,
            None,
            m.lambda_max.value(),
            t,
        );
        push(
            4,
            "weight_l2".into(),
            Scope::Global,
            None,
            Some(m.weight_l2),
            t,
        );
        for s in &m.sam {
            push(
                5,
                format!("sam_sharpness_rho={:?}", s.rho),
                Scope::Global,
                None,
                s.sharpness.value(),
                t,
            );
        }
    }

    let mut rows = Vec::new();
    let mut best: BTreeMap<Scope, CorrelationRow> = BTreeMap::new();
    for ((rank, name, scope, _), (alpha, pairs)) in &series {
        if pairs.len() < 2 {
            continue;
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let row = CorrelationRow {
            measure: name.clone(),
            scope: scope.to_string(),
            alpha: *alpha,
            tau: kendall_tau_variant(&xs, &ys, variant)?,
            n: pairs.len(),
        };
        if *rank == 0 {
            let better = best.get(scope).is_none_or(|b| row.tau > b.tau);
            if better {
                best.insert(
                    *scope,
                    CorrelationRow {
                        measure: RENYI_BEST_MEASURE.into(),
                        ..row.clone()
                    },
                );
            }
        }
        rows.push(row);
    }
    let split = rows
        .iter()
        .position(|r| r.measure != RENYI_MEASURE)
        .unwrap_or(rows.len());
    rows.splice(split..split, best.into_values());

    Ok(CorrelationTable {
        target,
        variant: if opts.tau_b { "tau_b" } else { "tau_a" }.into(),
        completed_runs: done.len(),
        excluded_runs: reports.len() - done.len(),
        rows,
    })
}
