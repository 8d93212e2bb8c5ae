//! Rényi entropy of probability vectors and of matrix spectra.
//!
//! For a probability vector `p` and order `α > 0, α ≠ 1`,
//! `H_α(p) = log(Σ pᵢ^α) / (1 − α)`; the Shannon entropy is the `α → 1`
//! limit and gets its own branch. The entropy of a symmetric matrix is the
//! entropy of its trace-normalized eigenvalues, and Rényi sharpness is the
//! negative of that.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{dense_eigh, DenseSymmetricMatrix};

/// Orders closer than this to 1 are rejected; use [`RenyiOrder::SHANNON`].
pub const SHANNON_GUARD: f64 = 1e-3;

/// Default relative floor under which eigenvalues count as zero.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;

/// Largest matrix the dense oracle accepts by default.
pub const ORACLE_MAX_DIM: usize = 4096;

/// Order for zero-dominant spectra with several separated clusters.
pub const MULTI_CLUSTER_ALPHA: f64 = 0.5;

/// Order for zero-dominant spectra with a single cluster of large values.
pub const SINGLE_CLUSTER_ALPHA: f64 = 1.5;

/// The full order sweep used for correlation studies.
pub const EXTENDED_ALPHA_GRID: [f64; 37] = [
    0.0001, 0.01, 0.03, 0.06, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 0.999, 1.001,
    1.01, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6, 2.7, 2.8,
    2.9, 3.0,
];

/// True if `alpha` lies in `(0, 0.9) ∪ (1.2, 3]`, the band where estimates
/// stay clear of the `α → 1` pathology on indefinite Hessians.
pub fn is_stable_alpha(alpha: f64) -> bool {
    (alpha > 0.0 && alpha < 0.9) || (alpha > 1.2 && alpha <= 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Order {
    Finite(f64),
    Shannon,
}

/// A Rényi order: a real `α > 0` kept at least [`SHANNON_GUARD`] away from 1,
/// or the Shannon limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenyiOrder(Order);

impl RenyiOrder {
    pub const SHANNON: RenyiOrder = RenyiOrder(Order::Shannon);

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::validation(format!(
                "Rényi order must be positive, got {alpha}"
            )));
        }
        // The slack admits grid points such as 1.001 whose binary value sits
        // a hair inside the guard band.
        if (alpha - 1.0).abs() < SHANNON_GUARD - 1e-12 {
            return Err(Error::validation(format!(
                "Rényi order {alpha} is within {SHANNON_GUARD} of 1; use the Shannon order"
            )));
        }
        Ok(Self(Order::Finite(alpha)))
    }

    pub fn multi_cluster() -> Self {
        Self(Order::Finite(MULTI_CLUSTER_ALPHA))
    }

    pub fn single_cluster() -> Self {
        Self(Order::Finite(SINGLE_CLUSTER_ALPHA))
    }

    /// `None` for the Shannon order.
    pub fn alpha(&self) -> Option<f64> {
        match self.0 {
            Order::Finite(a) => Some(a),
            Order::Shannon => None,
        }
    }

    /// The power applied to probabilities; 1 for Shannon.
    pub fn exponent(&self) -> f64 {
        self.alpha().unwrap_or(1.0)
    }

    pub fn is_shannon(&self) -> bool {
        matches!(self.0, Order::Shannon)
    }
}

impl fmt::Display for RenyiOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Order::Finite(a) => write!(f, "{a}"),
            Order::Shannon => f.write_str("shannon"),
        }
    }
}

impl FromStr for RenyiOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("shannon") || s == "1" {
            return Ok(Self::SHANNON);
        }
        let a: f64 = s
            .parse()
            .map_err(|_| Error::validation(format!("cannot parse Rényi order {s:?}")))?;
        Self::new(a)
    }
}

impl Serialize for RenyiOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Order::Finite(a) => s.serialize_f64(a),
            Order::Shannon => s.serialize_str("shannon"),
        }
    }
}

impl<'de> Deserialize<'de> for RenyiOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let order = match Raw::deserialize(d)? {
            Raw::Num(a) => RenyiOrder::new(a),
            Raw::Text(t) => t.parse(),
        };
        order.map_err(serde::de::Error::custom)
    }
}

/// A validated probability vector: entries non-negative, sum 1 within 1e-10.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-10;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::validation("probability vector is empty"));
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::validation(format!(
                "probability entry {x} is not a non-negative real"
            )));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("probability vector is empty"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How negative eigenvalues are mapped onto a PSD proxy before normalizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigPolicy {
    /// `|λ|`
    Abs,
    /// Values below the floor (including every negative value) become zero.
    #[default]
    #[serde(alias = "clip")]
    ClipToZero,
    /// Add `|λ_min| + ε` to every value when the minimum is negative.
    Shift,
}

impl FromStr for EigPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(Self::Abs),
            "clip" | "clip_to_zero" => Ok(Self::ClipToZero),
            "shift" => Ok(Self::Shift),
            _ => Err(Error::validation(format!(
                "unknown eigenvalue policy {s:?}"
            ))),
        }
    }
}

impl EigPolicy {
    /// Applies the policy to raw values; the result is non-negative but not
    /// re-sorted. `floor` is relative to the largest magnitude.
    pub fn apply(&self, values: &[f64], floor: f64) -> Vec<f64> {
        let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let thr = floor * scale;
        let zero_small = |x: f64| if x < thr || x <= 0.0 { 0.0 } else { x };
        match self {
            EigPolicy::ClipToZero => values.iter().map(|&x| zero_small(x)).collect(),
            EigPolicy::Abs => values.iter().map(|&x| zero_small(x.abs())).collect(),
            EigPolicy::Shift => {
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let shift = if min < 0.0 { -min + thr } else { 0.0 };
                values.iter().map(|&x| zero_small(x + shift)).collect()
            }
        }
    }
}

/// Eigenvalues (descending) together with the policy used to make them PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    pub policy: EigPolicy,
    pub floor: f64,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Self {
            eigenvalues,
            policy: EigPolicy::default(),
            floor: DEFAULT_EIG_FLOOR,
        }
    }

    pub fn with_policy(mut self, policy: EigPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Post-policy values, descending, all `≥ 0`.
    pub fn retained(&self) -> Vec<f64> {
        let mut v = self.policy.apply(&self.eigenvalues, self.floor);
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Post-policy trace.
    pub fn trace(&self) -> f64 {
        self.retained().iter().sum()
    }
}

/// `pᵢ = λᵢ / Tr` over the post-policy values.
pub fn normalize_spectrum(s: &Spectrum) -> Result<ProbVector> {
    let kept = s.retained();
    let trace: f64 = kept.iter().sum();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::NotNormalizable { trace });
    }
    Ok(ProbVector(kept.into_iter().map(|x| x / trace).collect()))
}

/// `Σ pᵢ^α`, evaluated as `Σ exp(α·log pᵢ)` over the strictly positive
/// entries.
pub fn power_sum(p: &[f64], alpha: f64) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| (alpha * x.ln()).exp())
        .sum()
}

pub fn renyi_entropy(p: &ProbVector, order: RenyiOrder) -> f64 {
    match order.alpha() {
        None => {
            -p.0.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| x * x.ln())
                .sum::<f64>()
        }
        Some(a) => power_sum(&p.0, a).ln() / (1.0 - a),
    }
}

/// Entropy of a spectrum after its policy is applied.
pub fn spectrum_entropy(s: &Spectrum, order: RenyiOrder) -> Result<f64> {
    Ok(renyi_entropy(&normalize_spectrum(s)?, order))
}

/// Exact spectrum of a dense matrix with the given policy.
pub fn exact_spectrum(
    m: &DenseSymmetricMatrix,
    policy: EigPolicy,
    max_dim: usize,
) -> Result<Spectrum> {
    if m.dim() > max_dim {
        return Err(Error::validation(format!(
            "matrix dimension {} exceeds oracle cap {max_dim}",
            m.dim()
        )));
    }
    Ok(Spectrum::new(dense_eigh(m)?.values).with_policy(policy))
}

pub fn matrix_renyi_entropy_exact(
    m: &DenseSymmetricMatrix,
    order: RenyiOrder,
    policy: EigPolicy,
) -> Result<f64> {
    spectrum_entropy(&exact_spectrum(m, policy, ORACLE_MAX_DIM)?, order)
}

/// Negative Rényi entropy of the normalized spectrum.
pub fn renyi_sharpness(
    m: &DenseSymmetricMatrix,
    order: RenyiOrder,
    policy: EigPolicy,
) -> Result<f64> {
    Ok(-matrix_renyi_entropy_exact(m, order, policy)?)
}

/// Outcome of checking `Σ log pᵢ ≤ −H_α(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogdetCheck {
    pub holds: bool,
    pub log_sum: f64,
    pub neg_entropy: f64,
    /// `−H_α(p) − Σ log pᵢ`; non-negative when the inequality holds.
    pub slack: f64,
}

pub fn check_logdet_inequality(p: &ProbVector, order: RenyiOrder) -> Result<LogdetCheck> {
    if p.0.iter().any(|&x| x <= 0.0) {
        return Err(Error::validation(
            "log-determinant check needs strictly positive probabilities",
        ));
    }
    let log_sum: f64 = p.0.iter().map(|x| x.ln()).sum();
    let neg_entropy = -renyi_entropy(p, order);
    let slack = neg_entropy - log_sum;
    // Equality is attained only for n = 1; allow rounding there.
    let tol = 1e-12 * (1.0 + log_sum.abs());
    Ok(LogdetCheck {
        holds: slack >= -tol,
        log_sum,
        neg_entropy,
        slack,
    })
}

/// `Σ_ℓ w_ℓ^α σ_α(ℓ)` with `w_ℓ = T_ℓ / T` and `σ_α(ℓ)` the power sum of the
/// block's own normalized spectrum.
pub fn blockdiag_power_sum(blocks: &[Spectrum], order: RenyiOrder) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::validation("block list is empty"));
    }
    let alpha = order.exponent();
    let kept: Vec<Vec<f64>> = blocks.iter().map(Spectrum::retained).collect();
    let traces: Vec<f64> = kept.iter().map(|b| b.iter().sum()).collect();
    if let Some(&t) = traces.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::NotNormalizable { trace: t });
    }
    let total: f64 = traces.iter().sum();
    Ok(kept
        .iter()
        .zip(&traces)
        .map(|(b, &t)| {
            let p: Vec<f64> = b.iter().map(|x| x / t).collect();
            (t / total).powf(alpha) * power_sum(&p, alpha)
        })
        .sum())
}

/// Power sum of the concatenated, globally normalized block spectra.
pub fn concatenated_power_sum(blocks: &[Spectrum], order: RenyiOrder) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::validation("block list is empty"));
    }
    let all: Vec<f64> = blocks.iter().flat_map(|b| b.retained()).collect();
    let trace: f64 = all.iter().sum();
    if !(trace > 0.0) {
        return Err(Error::NotNormalizable { trace });
    }
    let p: Vec<f64> = all.iter().map(|x| x / trace).collect();
    Ok(power_sum(&p, order.exponent()))
}

/// One eigenvalue per line.
pub fn write_spectrum_csv(values: &[f64], mut w: impl std::io::Write) -> Result<()> {
    for v in values {
        writeln!(w, "{v:?}")?;
    }
    Ok(())
}

pub fn parse_spectrum_csv(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::validation(format!("cannot parse eigenvalue {l:?}")))
        })
        .collect()
}
