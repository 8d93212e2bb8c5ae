//! The sharpness-measure suite evaluated on a trained network.

use serde::{Deserialize, Serialize};

use crate::entropy::{EigPolicy, RenyiOrder};
use crate::error::{Error, Result};
use crate::linalg::{norm2, SeededRng, SymmetricOperator};
use crate::network::{
    avoid_kinks, layer_operator, loss, loss_and_grad, network_operator, Dataset, KinkReport,
    MlpSpec, NetworkParams,
};
use crate::slq::{estimate_lambda_max, estimate_renyi_entropies, hutchinson_trace, SlqConfig};

const STREAM_SUBSAMPLE: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub alphas: Vec<RenyiOrder>,
    /// Training points used for every measure.
    pub subsample: usize,
    pub seed: u64,
    pub slq: SlqConfig,
    pub trace_probes: usize,
    pub lambda_max_steps: usize,
    pub sam_rhos: Vec<f64>,
    pub per_layer: bool,
    pub global: bool,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            alphas: vec![RenyiOrder::multi_cluster(), RenyiOrder::single_cluster()],
            subsample: 512,
            seed: 0,
            slq: SlqConfig::default(),
            trace_probes: 100,
            lambda_max_steps: 30,
            sam_rhos: vec![0.05, 0.1],
            per_layer: true,
            global: true,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        self.slq.validate()?;
        if self.subsample == 0 || self.trace_probes == 0 || self.lambda_max_steps == 0 {
            return Err(Error::validation(
                "subsample, trace probes and λmax steps must be positive",
            ));
        }
        if self.sam_rhos.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::validation("SAM radii must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// A measure value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Value(f64),
    Failed(String),
}

impl Measure {
    pub fn value(&self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(*v),
            Measure::Failed(_) => None,
        }
    }

    fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) if v.is_finite() => Measure::Value(v),
            Ok(v) => Measure::Failed(format!("non-finite value {v}")),
            Err(e) => Measure::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Layer(usize),
    Global,
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Layer(l) => write!(f, "layer{l}"),
            Scope::Global => f.write_str("global"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenyiMeasure {
    pub scope: Scope,
    pub alpha: RenyiOrder,
    pub sharpness: Measure,
    /// Standard error of the underlying entropy estimate.
    pub stderr: Option<f64>,
    /// Set when the default policy failed and `abs` was used instead.
    #[serde(default)]
    pub abs_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamMeasure {
    pub rho: f64,
    pub sharpness: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessMeasures {
    pub renyi: Vec<RenyiMeasure>,
    pub hessian_trace: Measure,
    pub lambda_max: Measure,
    pub weight_l2: f64,
    pub sam: Vec<SamMeasure>,
    pub subsample_size: usize,
    pub kinks: KinkReport,
}

/// Deterministic subsample of `min(k, n)` rows, in ascending index order.
pub fn subsample(data: &Dataset, k: usize, seed: u64) -> Dataset {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    if k < data.len() {
        SeededRng::new(seed, STREAM_SUBSAMPLE).shuffle(&mut idx);
        idx.truncate(k);
        idx.sort_unstable();
    }
    data.subset(&idx)
}

fn renyi_for_scope<O: SymmetricOperator>(
    op: &O,
    scope: Scope,
    cfg: &MeasureConfig,
) -> Vec<RenyiMeasure> {
    let first = estimate_renyi_entropies(op, &cfg.alphas, &cfg.slq);
    let (result, fallback) = match first {
        Err(_) if scope == Scope::Global && cfg.slq.policy != EigPolicy::Abs => {
            let slq = SlqConfig {
                policy: EigPolicy::Abs,
                ..cfg.slq.clone()
            };
            (estimate_renyi_entropies(op, &cfg.alphas, &slq), true)
        }
        other => (other, false),
    };
    match result {
        Ok(est) => est
            .into_iter()
            .map(|e| RenyiMeasure {
                scope,
                alpha: e.order,
                sharpness: Measure::from_result(Ok(e.sharpness)),
                stderr: e.entropy_stderr.is_finite().then_some(e.entropy_stderr),
                abs_fallback: fallback,
            })
            .collect(),
        Err(err) => cfg
            .alphas
            .iter()
            .map(|&alpha| RenyiMeasure {
                scope,
                alpha,
                sharpness: Measure::Failed(err.to_string()),
                stderr: None,
                abs_fallback: fallback,
            })
            .collect(),
    }
}

/// `L(θ + ρ·g/‖g‖) − L(θ)` on `batch`.
pub fn sam_sharpness(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    rho: f64,
) -> Result<f64> {
    let (l0, g) = loss_and_grad(spec, params, batch)?;
    let n = norm2(&g);
    if rho == 0.0 || n == 0.0 {
        return Ok(0.0);
    }
    let moved: Vec<f64> = params
        .flat()
        .iter()
        .zip(&g)
        .map(|(p, d)| p + rho * d / n)
        .collect();
    Ok(loss(spec, &params.with_flat(moved)?, batch)? - l0)
}

pub fn measure_sharpness(
    spec: &MlpSpec,
    params: &NetworkParams,
    train: &Dataset,
    cfg: &MeasureConfig,
) -> Result<SharpnessMeasures> {
    cfg.validate()?;
    let sub = subsample(train, cfg.subsample, cfg.seed);
    let (batch, kinks) = avoid_kinks(spec, params, &sub)?;

    let mut renyi = Vec::new();
    if cfg.per_layer {
        for l in 0..spec.num_layers() {
            let op = layer_operator(spec, params, &batch, l)?;
            renyi.extend(renyi_for_scope(&op, Scope::Layer(l), cfg));
        }
    }
    let global = network_operator(spec, params, &batch)?;
    if cfg.global {
        renyi.extend(renyi_for_scope(&global, Scope::Global, cfg));
    }

    let trace_cfg = SlqConfig {
        probes: cfg.trace_probes,
        ..cfg.slq.clone()
    };
    let hessian_trace =
        Measure::from_result(hutchinson_trace(&global, &trace_cfg).map(|t| t.estimate));
    let lmax_cfg = SlqConfig {
        lanczos_steps: cfg.lambda_max_steps,
        ..cfg.slq.clone()
    };
    let lambda_max = Measure::from_result(estimate_lambda_max(&global, &lmax_cfg));
    let sam = cfg
        .sam_rhos
        .iter()
        .map(|&rho| SamMeasure {
            rho,
            sharpness: Measure::from_result(sam_sharpness(spec, params, &batch, rho)),
        })
        .collect();

    Ok(SharpnessMeasures {
        renyi,
        hessian_trace,
        lambda_max,
        weight_l2: params.l2_norm(),
        sam,
        subsample_size: batch.len(),
        kinks,
    })
}
