//! Hyperparameter grid runner with an append-only NDJSON results file.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::DataSpec;
use super::measure::{measure_sharpness, MeasureConfig};
use super::report::{Hyperparameters, SharpnessReport};
use super::train::{train, ModelConfig, RunStatus, TrainSettings};
use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::network::Dataset;
use crate::optim::{OptimConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub data: DataSpec,
    pub model: ModelConfig,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub weight_decays: Vec<f64>,
    #[serde(default = "default_optimizers")]
    pub optimizers: Vec<OptimizerKind>,
    /// Replicate labels; each one gets its own derived cell seed.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Template for everything the grid axes do not override.
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub grid_seed: u64,
}

fn default_optimizers() -> Vec<OptimizerKind> {
    vec![OptimizerKind::Sgd]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub seed: u64,
    pub hyper: Hyperparameters,
}

impl Cell {
    pub fn run_id(&self) -> String {
        format!("cell-{:05}", self.index)
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.batch_sizes.is_empty()
            || self.weight_decays.is_empty()
            || self.optimizers.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::validation(
                "every grid axis needs at least one value",
            ));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::validation("batch sizes must be positive"));
        }
        self.measure.validate()?;
        for cell in self.cells() {
            self.optim_for(&cell).validate()?;
        }
        Ok(())
    }

    /// Cartesian product in (lr, batch size, weight decay, optimizer, seed)
    /// order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &weight_decay in &self.weight_decays {
                    for &optimizer in &self.optimizers {
                        for &replicate in &self.seeds {
                            let index = out.len();
                            out.push(Cell {
                                index,
                                seed: derive_seed(self.grid_seed, index as u64),
                                hyper: Hyperparameters {
                                    lr,
                                    batch_size,
                                    weight_decay,
                                    optimizer,
                                    replicate,
                                },
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn optim_for(&self, cell: &Cell) -> OptimConfig {
        OptimConfig {
            kind: cell.hyper.optimizer,
            lr: cell.hyper.lr,
            weight_decay: cell.hyper.weight_decay,
            ..self.optim.clone()
        }
    }
}

fn run_cell_inner(
    grid: &GridSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cell: &Cell,
) -> Result<SharpnessReport> {
    let classes = train_set.targets.cols();
    let spec = grid.model.spec(train_set.input_dim(), classes)?;
    let settings = TrainSettings {
        epochs: grid.epochs,
        batch_size: cell.hyper.batch_size,
    };
    let outcome = train(
        &spec,
        train_set,
        test_set,
        &grid.optim_for(cell),
        &settings,
        cell.seed,
    )?;
    let measures = if outcome.status == RunStatus::Completed {
        Some(measure_sharpness(
            &spec,
            &outcome.params,
            train_set,
            &grid.measure,
        )?)
    } else {
        None
    };
    Ok(SharpnessReport::new(
        cell.run_id(),
        cell.index,
        cell.seed,
        cell.hyper.clone(),
        &outcome,
        measures,
    ))
}

/// Trains and measures one cell. Errors become a `failed` report.
pub fn run_cell(
    grid: &GridSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cell: &Cell,
) -> SharpnessReport {
    run_cell_inner(grid, train_set, test_set, cell).unwrap_or_else(|e| {
        SharpnessReport::failed(
            cell.run_id(),
            cell.index,
            cell.seed,
            cell.hyper.clone(),
            e.to_string(),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridSummary {
    pub total: usize,
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Parses a results file. A trailing line that does not parse is treated as
/// an interrupted write and dropped; a bad line elsewhere is an error.
pub fn read_results(path: &Path) -> Result<Vec<SharpnessReport>> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<SharpnessReport>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::validation(format!(
                    "{}:{}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

fn write_canonical(path: &Path, reports: &[SharpnessReport]) -> Result<()> {
    let tmp = path.with_extension("ndjson.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in reports {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Deduplicates by run id (first record wins) and sorts by cell index.
pub fn canonicalize(path: &Path) -> Result<Vec<SharpnessReport>> {
    let mut by_cell: BTreeMap<usize, SharpnessReport> = BTreeMap::new();
    for r in read_results(path)? {
        by_cell.entry(r.cell).or_insert(r);
    }
    let reports: Vec<SharpnessReport> = by_cell.into_values().collect();
    write_canonical(path, &reports)?;
    Ok(reports)
}

/// Runs every cell not already in `out` on `workers` threads. Each report is
/// appended and flushed as soon as it finishes, so an interrupted run can be
/// resumed. The file is rewritten in cell order at the end.
pub fn run_grid(grid: &GridSpec, out: &Path, workers: usize, resume: bool) -> Result<GridSummary> {
    grid.validate()?;
    if workers == 0 {
        return Err(Error::validation("need at least one worker"));
    }
    let (train_set, test_set) = grid.data.generate()?;
    let cells = grid.cells();

    let existing = if resume && out.exists() {
        read_results(out)?
    } else {
        Vec::new()
    };
    // Rewriting drops any half-written trailing line before appending.
    write_canonical(out, &existing)?;
    let done: std::collections::HashSet<String> =
        existing.iter().map(|r| r.run_id.clone()).collect();
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| !done.contains(&c.run_id()))
        .collect();

    let file = Mutex::new(OpenOptions::new().append(true).open(out)?);
    let write_error: Mutex<Option<Error>> = Mutex::new(None);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    pool.install(|| {
        pending.par_iter().for_each(|cell| {
            let report = run_cell(grid, &train_set, &test_set, cell);
            let line = match serde_json::to_string(&report) {
                Ok(l) => l,
                Err(e) => {
                    write_error.lock().unwrap().get_or_insert(e.into());
                    return;
                }
            };
            let mut f = file.lock().unwrap();
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                write_error.lock().unwrap().get_or_insert(e.into());
            }
        })
    });
    drop(file);
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }

    let reports = canonicalize(out)?;
    Ok(GridSummary {
        total: cells.len(),
        ran: pending.len(),
        skipped: cells.len() - pending.len(),
        failed: reports.iter().filter(|r| !r.is_complete()).count(),
    })
}
