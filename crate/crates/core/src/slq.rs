//! Stochastic Lanczos quadrature.
//!
//! `Tr f(H)` is estimated from random unit probes `v`: a short Lanczos run
//! started at `v` yields a tridiagonal `T` whose Gauss quadrature
//! `e₁ᵀ f(T) e₁ = Σ τᵢ f(θᵢ)` approximates `vᵀ f(H) v`, and
//! `E[vᵀ f(H) v] = Tr f(H) / n` for probes uniform on the sphere.
//!
//! The Rényi entropy of `H` is then
//! `log(Tr Hᵅ / (Tr H)ᵅ) / (1 − α)` with both traces estimated this way.
//!
//! Every probe owns a dedicated RNG stream, so results depend only on the
//! seed and never on how probes are scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{EigPolicy, RenyiOrder, DEFAULT_EIG_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, norm2, rand_rademacher, rand_unit_vector, tridiag_eigh, SeededRng,
    SymmetricOperator, TridiagonalMatrix,
};

/// Lanczos stops once `β_j ≤ BREAKDOWN_TOL · ‖H‖_est`.
pub const BREAKDOWN_TOL: f64 = 1e-12;

const STREAM_LANCZOS: u64 = 0;
const STREAM_TRACE: u64 = 1;
const STREAM_HUTCHINSON: u64 = 2;
const STREAM_LAMBDA_MAX: u64 = 3;

fn probe_rng(seed: u64, purpose: u64, probe: usize) -> SeededRng {
    SeededRng::new(seed, (purpose << 48) | probe as u64)
}

/// How the two trace estimates are combined into an entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `log(T̂_α / T̂₁^α) / (1 − α)` with `T̂ = n · mean(probe values)`.
    #[default]
    TraceRatio,
    /// `log(Σ A_k / Σ B_k) / (1 − α)`: the pooled probe ratio, kept for
    /// compatibility. It estimates `Tr Hᵅ / Tr H`, which is not scale
    /// invariant.
    PooledRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlqConfig {
    pub probes: usize,
    pub lanczos_steps: usize,
    pub seed: u64,
    pub reorthogonalize: bool,
    pub policy: EigPolicy,
    pub floor: f64,
    pub normalization: Normalization,
    pub parallel: bool,
}

impl Default for SlqConfig {
    fn default() -> Self {
        Self {
            probes: 100,
            lanczos_steps: 15,
            seed: 0,
            reorthogonalize: true,
            policy: EigPolicy::ClipToZero,
            floor: DEFAULT_EIG_FLOOR,
            normalization: Normalization::TraceRatio,
            parallel: true,
        }
    }
}

impl SlqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return Err(Error::validation("SLQ needs at least one probe"));
        }
        if self.lanczos_steps == 0 {
            return Err(Error::validation("SLQ needs at least one Lanczos step"));
        }
        if !(self.floor >= 0.0 && self.floor < 1.0) {
            return Err(Error::validation("eigenvalue floor must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Lanczos steps actually taken on an operator of dimension `dim`.
    pub fn steps_for(&self, dim: usize) -> usize {
        self.lanczos_steps.min(dim)
    }
}

fn run_probes<T: Send>(
    cfg: &SlqConfig,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if cfg.parallel {
        (0..cfg.probes).into_par_iter().map(f).collect()
    } else {
        (0..cfg.probes).map(f).collect()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: Vec<f64>,
}

/// Hutchinson estimate of `Tr H` from Rademacher probes.
pub fn hutchinson_trace<O: SymmetricOperator + ?Sized>(
    op: &O,
    cfg: &SlqConfig,
) -> Result<TraceEstimate> {
    cfg.validate()?;
    let n = op.dim();
    let samples = run_probes(cfg, |k| {
        let v = rand_rademacher(&mut probe_rng(cfg.seed, STREAM_HUTCHINSON, k), n);
        Ok(dot(&v, &op.apply_vec(&v)))
    })?;
    let (estimate, stderr) = mean_and_stderr(&samples);
    Ok(TraceEstimate {
        estimate,
        stderr,
        samples,
    })
}

/// Output of a Lanczos run: the tridiagonal projection and its basis.
#[derive(Debug, Clone)]
pub struct LanczosRun {
    pub tridiagonal: TridiagonalMatrix,
    pub basis: Vec<Vec<f64>>,
    /// Running Gershgorin estimate of `‖H‖`.
    pub norm_estimate: f64,
}

impl LanczosRun {
    pub fn steps(&self) -> usize {
        self.basis.len()
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            axpy(-c, q, w);
        }
    }
}

/// Three-term Lanczos recurrence from the unit vector `v1` for at most `m`
/// steps, stopping early on breakdown.
pub fn lanczos<O: SymmetricOperator + ?Sized>(
    op: &O,
    v1: &[f64],
    m: usize,
    reorthogonalize: bool,
) -> Result<LanczosRun> {
    let n = op.dim();
    if v1.len() != n {
        return Err(Error::shape(format!(
            "start vector has length {}, operator dim {n}",
            v1.len()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::validation(format!(
            "Lanczos steps {m} must lie in 1..={n}"
        )));
    }
    let nv = norm2(v1);
    if (nv - 1.0).abs() > 1e-10 {
        return Err(Error::validation(format!(
            "start vector norm {nv} is not 1"
        )));
    }

    let mut basis = vec![v1.to_vec()];
    let mut alphas = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);

    let mut w = op.apply_vec(v1);
    let a = dot(&w, v1);
    axpy(-a, v1, &mut w);
    if reorthogonalize {
        orthogonalize(&mut w, &basis);
    }
    alphas.push(a);
    let mut norm_est = a.abs();
    let mut beta_prev = 0.0;

    for _ in 1..m {
        let beta = norm2(&w);
        norm_est = norm_est.max(alphas.last().unwrap().abs() + beta + beta_prev);
        if beta <= BREAKDOWN_TOL * norm_est {
            break;
        }
        let v: Vec<f64> = w.iter().map(|x| x / beta).collect();
        let mut next = op.apply_vec(&v);
        let a = dot(&next, &v);
        axpy(-a, &v, &mut next);
        axpy(-beta, basis.last().unwrap(), &mut next);
        basis.push(v);
        if reorthogonalize {
            orthogonalize(&mut next, &basis);
        }
        alphas.push(a);
        betas.push(beta);
        beta_prev = beta;
        w = next;
    }

    Ok(LanczosRun {
        tridiagonal: TridiagonalMatrix::new(alphas, betas)?,
        basis,
        norm_estimate: norm_est,
    })
}

fn spectral_fn(order: RenyiOrder, theta: f64) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    match order.alpha() {
        Some(a) => (a * theta.ln()).exp(),
        None => theta * theta.ln(),
    }
}

/// Ritz nodes (post-policy) and Gauss weights of one Lanczos run.
struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    fn from_tridiagonal(t: &TridiagonalMatrix, policy: EigPolicy, floor: f64) -> Result<Self> {
        let eig = tridiag_eigh(t)?;
        Ok(Self {
            nodes: policy.apply(&eig.values, floor),
            weights: eig.weights(),
        })
    }

    fn moment(&self, order: RenyiOrder) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&th, &w)| w * spectral_fn(order, th))
            .sum()
    }

    fn mass(&self) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| t * w)
            .sum()
    }
}

/// `e₁ᵀ f(T) e₁ = Σ τᵢ f(θᵢ)` with `f(x) = xᵅ` (or `x log x` for the
/// Shannon order) after applying `policy` to the Ritz values.
pub fn quadrature_moment(
    t: &TridiagonalMatrix,
    order: RenyiOrder,
    policy: EigPolicy,
) -> Result<f64> {
    let q = Quadrature::from_tridiagonal(t, policy, DEFAULT_EIG_FLOOR)?;
    if !(q.mass() > 0.0) {
        return Err(Error::Numerical(
            "all Ritz mass removed by eigenvalue policy".into(),
        ));
    }
    Ok(q.moment(order))
}

/// Entropy estimate plus the per-probe values behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlqEstimate {
    pub order: RenyiOrder,
    pub entropy: f64,
    pub sharpness: f64,
    /// Delta-method standard error of `entropy`.
    pub entropy_stderr: f64,
    /// `T̂_α ≈ Tr Hᵅ` (or `Tr H log H` for the Shannon order).
    pub trace_power: f64,
    pub trace_power_stderr: f64,
    /// `T̂₁ ≈ Tr H`.
    pub trace: f64,
    pub trace_stderr: f64,
    pub normalization: Normalization,
    /// Per-probe quadratures `A_k`.
    pub a_k: Vec<f64>,
    /// Per-probe `B_k = g_kᵀ H g_k`.
    pub b_k: Vec<f64>,
    /// Lanczos steps taken by each probe before breakdown or the cap.
    pub steps: Vec<usize>,
}

struct ProbeResult {
    moments: Vec<f64>,
    mass: f64,
    b: f64,
    steps: usize,
}

/// Entropy estimates for several orders from one shared set of probes.
pub fn estimate_renyi_entropies<O: SymmetricOperator + ?Sized>(
    op: &O,
    orders: &[RenyiOrder],
    cfg: &SlqConfig,
) -> Result<Vec<SlqEstimate>> {
    cfg.validate()?;
    let n = op.dim();
    if n == 0 {
        return Err(Error::validation("operator has dimension zero"));
    }
    let m = cfg.steps_for(n);

    let probes = run_probes(cfg, |k| {
        let v1 = rand_unit_vector(&mut probe_rng(cfg.seed, STREAM_LANCZOS, k), n);
        let run = lanczos(op, &v1, m, cfg.reorthogonalize)?;
        let quad = Quadrature::from_tridiagonal(&run.tridiagonal, cfg.policy, cfg.floor)?;
        let g = rand_unit_vector(&mut probe_rng(cfg.seed, STREAM_TRACE, k), n);
        Ok(ProbeResult {
            moments: orders.iter().map(|&o| quad.moment(o)).collect(),
            mass: quad.mass(),
            b: dot(&g, &op.apply_vec(&g)),
            steps: run.steps(),
        })
    })?;

    let nf = n as f64;
    let b_k: Vec<f64> = probes.iter().map(|p| p.b).collect();
    let steps: Vec<usize> = probes.iter().map(|p| p.steps).collect();
    let (b_mean, b_se) = mean_and_stderr(&b_k);
    let masses: Vec<f64> = probes.iter().map(|p| p.mass).collect();
    let (mass_mean, mass_se) = mean_and_stderr(&masses);

    orders
        .iter()
        .enumerate()
        .map(|(i, &order)| {
            let a_k: Vec<f64> = probes.iter().map(|p| p.moments[i]).collect();
            let (a_mean, a_se) = mean_and_stderr(&a_k);
            let (trace, trace_stderr) = match order.alpha() {
                Some(_) => (nf * b_mean, nf * b_se),
                // x log x is only meaningful against the same quadrature's mass.
                None => (nf * mass_mean, nf * mass_se),
            };
            if !(trace > 0.0) {
                return Err(Error::Numerical(format!(
                    "trace estimate {trace:.6e} is not positive"
                )));
            }
            let trace_power = nf * a_mean;
            let trace_power_stderr = nf * a_se;
            let (entropy, entropy_stderr) = match (order.alpha(), cfg.normalization) {
                (None, _) => {
                    let h = trace.ln() - trace_power / trace;
                    let se = ((trace_stderr / trace).powi(2)
                        + (trace_power_stderr / trace).powi(2))
                    .sqrt();
                    (h, se)
                }
                (Some(a), norm) => {
                    if !(trace_power > 0.0) {
                        return Err(Error::Numerical(format!(
                            "power-trace estimate {trace_power:.6e} is not positive"
                        )));
                    }
                    let h = match norm {
                        Normalization::TraceRatio => {
                            (trace_power.ln() - a * trace.ln()) / (1.0 - a)
                        }
                        Normalization::PooledRatio => {
                            let sa: f64 = a_k.iter().sum();
                            let sb: f64 = b_k.iter().sum();
                            (sa / sb).ln() / (1.0 - a)
                        }
                    };
                    let rel_a = trace_power_stderr / trace_power;
                    let rel_b = trace_stderr / trace;
                    let scale_b = if norm == Normalization::TraceRatio {
                        a
                    } else {
                        1.0
                    };
                    let se = (rel_a.powi(2) + (scale_b * rel_b).powi(2)).sqrt() / (1.0 - a).abs();
                    (h, se)
                }
            };
            Ok(SlqEstimate {
                order,
                entropy,
                sharpness: -entropy,
                entropy_stderr,
                trace_power,
                trace_power_stderr,
                trace,
                trace_stderr,
                normalization: cfg.normalization,
                a_k,
                b_k: b_k.clone(),
                steps: steps.clone(),
            })
        })
        .collect()
}

pub fn estimate_renyi_entropy<O: SymmetricOperator + ?Sized>(
    op: &O,
    order: RenyiOrder,
    cfg: &SlqConfig,
) -> Result<SlqEstimate> {
    Ok(estimate_renyi_entropies(op, &[order], cfg)?.remove(0))
}

/// Largest Ritz value of one Lanczos run with `cfg.lanczos_steps` steps.
pub fn estimate_lambda_max<O: SymmetricOperator + ?Sized>(op: &O, cfg: &SlqConfig) -> Result<f64> {
    cfg.validate()?;
    let n = op.dim();
    let v1 = rand_unit_vector(&mut probe_rng(cfg.seed, STREAM_LAMBDA_MAX, 0), n);
    let run = lanczos(op, &v1, cfg.steps_for(n), cfg.reorthogonalize)?;
    let eig = tridiag_eigh(&run.tridiagonal)?;
    Ok(eig.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{matrix_renyi_entropy_exact, renyi_entropy, ProbVector};
    use crate::linalg::{
        dense_eigh, haar_orthogonal, DenseSymmetricMatrix, Matrix, ScaledOperator,
    };

    fn order(a: f64) -> RenyiOrder {
        RenyiOrder::new(a).unwrap()
    }

    fn with_spectrum(eigs: &[f64], seed: u64) -> DenseSymmetricMatrix {
        let n = eigs.len();
        let q = haar_orthogonal(&mut SeededRng::new(seed, 99), n);
        let m = Matrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| q.get(i, k) * eigs[k] * q.get(j, k)).sum()
        });
        DenseSymmetricMatrix::symmetrize(&m).unwrap()
    }

    fn random_spd(n: usize, cond: f64, seed: u64) -> DenseSymmetricMatrix {
        let mut rng = SeededRng::new(seed, 7);
        let mut eigs: Vec<f64> = (0..n).map(|_| rng.uniform_range(1.0, cond)).collect();
        eigs[0] = 1.0;
        eigs[n - 1] = cond;
        with_spectrum(&eigs, seed)
    }

    #[test]
    fn hutchinson_identity_is_exact() {
        let cfg = SlqConfig {
            probes: 7,
            ..Default::default()
        };
        let t = hutchinson_trace(&DenseSymmetricMatrix::identity(9), &cfg).unwrap();
        assert!(t.samples.iter().all(|&s| s == 9.0));
        assert_eq!(t.estimate, 9.0);
        assert_eq!(t.stderr, 0.0);
    }

    #[test]
    fn hutchinson_zero_operator() {
        let z = DenseSymmetricMatrix::from_diagonal(&[0.0; 5]).unwrap();
        let t = hutchinson_trace(&z, &SlqConfig::default()).unwrap();
        assert_eq!(t.estimate, 0.0);
    }

    #[test]
    fn hutchinson_diagonal_exact_for_rademacher() {
        // vᵀDv = Σ dᵢ vᵢ² = Tr D for every Rademacher draw.
        let d = DenseSymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = SlqConfig {
            probes: 2000,
            ..Default::default()
        };
        let t = hutchinson_trace(&d, &cfg).unwrap();
        assert!((t.estimate - 10.0).abs() <= 4.0 * t.stderr.max(1e-12));
    }

    #[test]
    fn hutchinson_dense_within_four_stderr() {
        let m = random_spd(30, 50.0, 3);
        let cfg = SlqConfig {
            probes: 2000,
            seed: 5,
            ..Default::default()
        };
        let t = hutchinson_trace(&m, &cfg).unwrap();
        assert!(t.stderr > 0.0);
        assert!((t.estimate - m.trace()).abs() <= 4.0 * t.stderr);
    }

    #[test]
    fn lanczos_two_distinct_eigenvalues() {
        let mut eigs = vec![1.0; 20];
        eigs[..5].iter_mut().for_each(|x| *x = 7.0);
        let m = with_spectrum(&eigs, 1);
        let v1 = rand_unit_vector(&mut SeededRng::new(2, 0), 20);
        let run = lanczos(&m, &v1, 2, true).unwrap();
        let ritz = tridiag_eigh(&run.tridiagonal).unwrap().values;
        assert!((ritz[0] - 7.0).abs() <= 1e-10);
        assert!((ritz[1] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn lanczos_on_scaled_identity_stops_after_one_step() {
        let m = DenseSymmetricMatrix::identity(10).scaled(2.5);
        let v1 = rand_unit_vector(&mut SeededRng::new(4, 0), 10);
        let run = lanczos(&m, &v1, 10, true).unwrap();
        assert_eq!(run.steps(), 1);
        assert!((run.tridiagonal.diag()[0] - 2.5).abs() <= 1e-14);
    }

    #[test]
    fn lanczos_full_dimension_is_exact() {
        let m = random_spd(64, 100.0, 9);
        let v1 = rand_unit_vector(&mut SeededRng::new(5, 0), 64);
        let run = lanczos(&m, &v1, 64, true).unwrap();
        let ritz = tridiag_eigh(&run.tridiagonal).unwrap().values;
        let exact = dense_eigh(&m).unwrap().values;
        assert_eq!(ritz.len(), 64);
        for (r, e) in ritz.iter().zip(&exact) {
            assert!((r - e).abs() <= 1e-8, "{r} vs {e}");
        }
        // Basis Gram matrix stays within 1e-8 of the identity.
        for i in 0..run.steps() {
            for j in 0..run.steps() {
                let g = dot(&run.basis[i], &run.basis[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn lanczos_rejects_bad_input() {
        let m = DenseSymmetricMatrix::identity(3);
        assert!(lanczos(&m, &[1.0, 0.0], 1, true).is_err());
        assert!(lanczos(&m, &[2.0, 0.0, 0.0], 1, true).is_err());
        assert!(lanczos(&m, &[1.0, 0.0, 0.0], 4, true).is_err());
    }

    #[test]
    fn quadrature_moment_examples() {
        let t = TridiagonalMatrix::new(vec![3.0], vec![]).unwrap();
        let got = quadrature_moment(&t, order(1.5), EigPolicy::ClipToZero).unwrap();
        assert!((got - 3f64.powf(1.5)).abs() <= 1e-12);
        let t = TridiagonalMatrix::new(vec![4.0, 1.0], vec![0.0]).unwrap();
        let got = quadrature_moment(&t, order(0.5), EigPolicy::ClipToZero).unwrap();
        assert!((got - 2.0).abs() <= 1e-14);
        let neg = TridiagonalMatrix::new(vec![-1.0], vec![]).unwrap();
        assert!(quadrature_moment(&neg, order(0.5), EigPolicy::ClipToZero).is_err());
    }

    #[test]
    fn quadrature_moment_matches_dense_power() {
        let mut rng = SeededRng::new(21, 0);
        for m in [2, 5, 12] {
            let diag: Vec<f64> = (0..m).map(|_| 2.0 + rng.uniform() * 5.0).collect();
            let off: Vec<f64> = (0..m - 1).map(|_| rng.uniform() - 0.5).collect();
            let t = TridiagonalMatrix::new(diag, off).unwrap();
            let dense = DenseSymmetricMatrix::symmetrize(&t.to_dense()).unwrap();
            let e = dense_eigh(&dense).unwrap();
            for a in [0.5, 1.5, 2.5] {
                let want: f64 = (0..m)
                    .map(|k| e.vectors.get(0, k).powi(2) * e.values[k].powf(a))
                    .sum();
                let got = quadrature_moment(&t, order(a), EigPolicy::ClipToZero).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scaled_identity_gives_log_n() {
        let m = DenseSymmetricMatrix::identity(50).scaled(3.0);
        let cfg = SlqConfig {
            probes: 10,
            ..Default::default()
        };
        for a in [0.5, 1.5, 2.5] {
            let e = estimate_renyi_entropy(&m, order(a), &cfg).unwrap();
            assert!((e.entropy - 50f64.ln()).abs() <= 1e-12, "{}", e.entropy);
            assert!(e.steps.iter().all(|&s| s == 1));
        }
        let e = estimate_renyi_entropy(&m, RenyiOrder::SHANNON, &cfg).unwrap();
        assert!((e.entropy - 50f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn matches_dense_oracle_on_random_spd() {
        let cfg = SlqConfig {
            seed: 11,
            ..Default::default()
        };
        for seed in 0..3 {
            let m = random_spd(128, 100.0, seed);
            for a in [0.5, 1.5] {
                let est = estimate_renyi_entropy(&m, order(a), &cfg).unwrap();
                let exact =
                    matrix_renyi_entropy_exact(&m, order(a), EigPolicy::ClipToZero).unwrap();
                assert!(
                    ((est.entropy - exact) / exact).abs() <= 0.02,
                    "{} vs {exact}",
                    est.entropy
                );
            }
        }
    }

    #[test]
    fn two_point_spectrum_matches_closed_form() {
        let (n, k) = (100, 10);
        let mut eigs = vec![1.0; n];
        eigs[..k].iter_mut().for_each(|x| *x = 10.0);
        let m = with_spectrum(&eigs, 3);
        let tr = (n - k) as f64 + 10.0 * k as f64;
        let p: Vec<f64> = eigs.iter().map(|x| x / tr).collect();
        let p = ProbVector::new(p).unwrap();
        let cfg = SlqConfig {
            seed: 2,
            ..Default::default()
        };
        for a in [0.5, 1.5] {
            let want = renyi_entropy(&p, order(a));
            let got = estimate_renyi_entropy(&m, order(a), &cfg).unwrap().entropy;
            assert!(((got - want) / want).abs() <= 0.02, "{got} vs {want}");
        }
    }

    #[test]
    fn shannon_order_estimate() {
        let m = random_spd(80, 30.0, 5);
        let cfg = SlqConfig {
            seed: 3,
            ..Default::default()
        };
        let got = estimate_renyi_entropy(&m, RenyiOrder::SHANNON, &cfg)
            .unwrap()
            .entropy;
        let want =
            matrix_renyi_entropy_exact(&m, RenyiOrder::SHANNON, EigPolicy::ClipToZero).unwrap();
        assert!(((got - want) / want).abs() <= 0.02);
    }

    #[test]
    fn parallel_and_serial_are_bit_identical() {
        let m = random_spd(40, 20.0, 8);
        let par = SlqConfig {
            probes: 30,
            seed: 4,
            ..Default::default()
        };
        let ser = SlqConfig {
            parallel: false,
            ..par.clone()
        };
        let a = estimate_renyi_entropy(&m, order(1.5), &par).unwrap();
        let b = estimate_renyi_entropy(&m, order(1.5), &ser).unwrap();
        assert_eq!(a.entropy.to_bits(), b.entropy.to_bits());
        assert_eq!(a.a_k, b.a_k);
        assert_eq!(a.b_k, b.b_k);
    }

    #[test]
    fn scale_invariance() {
        let m = random_spd(60, 50.0, 12);
        let cfg = SlqConfig {
            probes: 20,
            seed: 6,
            ..Default::default()
        };
        for c in [1e-3, 0.37, 4.0, 1e4] {
            let scaled = ScaledOperator {
                inner: &m,
                factor: c,
            };
            for a in [0.5, 2.5] {
                let h = estimate_renyi_entropy(&m, order(a), &cfg).unwrap().entropy;
                let hc = estimate_renyi_entropy(&scaled, order(a), &cfg)
                    .unwrap()
                    .entropy;
                assert!((h - hc).abs() <= 1e-12, "c={c}: {h} vs {hc}");
            }
        }
    }

    #[test]
    fn pooled_ratio_mode_differs_and_is_not_scale_invariant() {
        let m = random_spd(30, 10.0, 2);
        let cfg = SlqConfig {
            probes: 20,
            normalization: Normalization::PooledRatio,
            ..Default::default()
        };
        let h = estimate_renyi_entropy(&m, order(2.0), &cfg)
            .unwrap()
            .entropy;
        let scaled = ScaledOperator {
            inner: &m,
            factor: 3.0,
        };
        let hc = estimate_renyi_entropy(&scaled, order(2.0), &cfg)
            .unwrap()
            .entropy;
        // log(3ᵅ/3)/(1−α) = −log 3 at α = 2.
        assert!((hc - h + 3f64.ln()).abs() <= 1e-10);
    }

    #[test]
    fn non_positive_trace_is_an_error() {
        let m = DenseSymmetricMatrix::identity(6).scaled(-1.0);
        assert!(estimate_renyi_entropy(&m, order(0.5), &SlqConfig::default()).is_err());
    }

    #[test]
    fn lambda_max_examples() {
        let cfg = SlqConfig {
            lanczos_steps: 30,
            ..Default::default()
        };
        let d = DenseSymmetricMatrix::from_diagonal(&[5.0, 1.0, 1.0]).unwrap();
        assert!((estimate_lambda_max(&d, &cfg).unwrap() - 5.0).abs() <= 1e-8);
        let c = DenseSymmetricMatrix::identity(12).scaled(2.0);
        assert!((estimate_lambda_max(&c, &cfg).unwrap() - 2.0).abs() <= 1e-14);
        let m = random_spd(64, 100.0, 4);
        let top = dense_eigh(&m).unwrap().values[0];
        // Ritz values interlace, so a partial run never overshoots.
        let est = estimate_lambda_max(&m, &cfg).unwrap();
        assert!(est <= top * (1.0 + 1e-12));
        assert!((top - est) / top <= 0.02);
        let full = SlqConfig {
            lanczos_steps: 64,
            ..cfg
        };
        assert!((estimate_lambda_max(&m, &full).unwrap() - top).abs() <= 1e-8 * top);
    }

    #[test]
    fn estimator_error_shrinks_with_probes() {
        let m = random_spd(64, 100.0, 31);
        let exact = matrix_renyi_entropy_exact(&m, order(1.5), EigPolicy::ClipToZero).unwrap();
        let mean_err = |l: usize| {
            (0..20)
                .map(|rep| {
                    let cfg = SlqConfig {
                        probes: l,
                        seed: 1000 + rep,
                        ..Default::default()
                    };
                    (estimate_renyi_entropy(&m, order(1.5), &cfg)
                        .unwrap()
                        .entropy
                        - exact)
                        .abs()
                        / exact
                })
                .sum::<f64>()
                / 20.0
        };
        let errs: Vec<f64> = [10, 50, 100, 400].iter().map(|&l| mean_err(l)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }
}
