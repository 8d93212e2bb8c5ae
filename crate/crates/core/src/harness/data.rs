//! Synthetic classification datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::network::Dataset;

const STREAM_MEANS: u64 = 0;
const STREAM_POINTS: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Fraction of each class assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Unit-variance Gaussian clouds around random class means.
    GaussianBlobs,
    /// Interleaved spiral arms in the first two coordinates; the remaining
    /// coordinates are small noise.
    TwoSpirals,
    /// Gaussian blobs whose training labels are reassigned to a different
    /// class with probability `fraction`. Test labels stay clean.
    RandomLabelNoise { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub seed: u64,
    /// Class means are drawn as `N(0, (separation²/d)·I)`, so two means sit
    /// about `separation·√2` apart.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    2.0
}

impl DataSpec {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        gen_dataset_with(
            self.kind,
            self.n,
            self.d,
            self.classes,
            self.seed,
            self.separation,
        )
    }
}

/// Train/test pair with the default blob separation.
pub fn gen_dataset(
    kind: DatasetKind,
    n: usize,
    d: usize,
    classes: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    gen_dataset_with(kind, n, d, classes, seed, default_separation())
}

pub fn gen_dataset_with(
    kind: DatasetKind,
    n: usize,
    d: usize,
    classes: usize,
    seed: u64,
    separation: f64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::validation("need at least two classes"));
    }
    if n < 2 * classes {
        return Err(Error::validation(format!(
            "n = {n} must be at least 2·classes = {}",
            2 * classes
        )));
    }
    if d == 0 {
        return Err(Error::validation("feature dimension must be positive"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::validation("separation must be positive"));
    }
    if let DatasetKind::RandomLabelNoise { fraction } = kind {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::validation(format!(
                "label-noise fraction {fraction} outside [0, 1]"
            )));
        }
    }
    if kind == DatasetKind::TwoSpirals && d < 2 {
        return Err(Error::validation("spirals need d ≥ 2"));
    }

    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut pts = SeededRng::new(seed, STREAM_POINTS);
    let inputs = match kind {
        DatasetKind::GaussianBlobs | DatasetKind::RandomLabelNoise { .. } => {
            let mut mrng = SeededRng::new(seed, STREAM_MEANS);
            let sd = separation / (d as f64).sqrt();
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..d).map(|_| sd * mrng.gaussian()).collect())
                .collect();
            Matrix::from_fn(n, d, |i, j| means[labels[i]][j] + pts.gaussian())
        }
        DatasetKind::TwoSpirals => {
            let mut rows = Vec::with_capacity(n * d);
            for &c in &labels {
                let t = pts.uniform();
                let angle = 3.0 * std::f64::consts::PI * t
                    + 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                let r = 0.1 + t;
                rows.push(r * angle.cos() + 0.05 * pts.gaussian());
                rows.push(r * angle.sin() + 0.05 * pts.gaussian());
                for _ in 2..d {
                    rows.push(0.05 * pts.gaussian());
                }
            }
            Matrix::from_vec(n, d, rows)?
        }
    };

    // Stratified split: each class contributes the same share to train.
    let mut split = SeededRng::new(seed, STREAM_SPLIT);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        split.shuffle(&mut members);
        let k = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
        train_idx.extend_from_slice(&members[..k]);
        test_idx.extend_from_slice(&members[k..]);
    }
    split.shuffle(&mut train_idx);
    split.shuffle(&mut test_idx);

    let full = Dataset::classification(inputs, labels, classes)?;
    let mut train = full.subset(&train_idx);
    let test = full.subset(&test_idx);

    if let DatasetKind::RandomLabelNoise { fraction } = kind {
        if fraction > 0.0 {
            let mut noise = SeededRng::new(seed, STREAM_NOISE);
            let mut noisy = train.labels.clone().unwrap();
            for y in noisy.iter_mut() {
                if noise.uniform() < fraction {
                    let shift = 1 + noise.below(classes - 1);
                    *y = (*y + shift) % classes;
                }
            }
            train = Dataset::classification(train.inputs, noisy, classes)?;
        }
    }
    Ok((train, test))
}
