//! Quick versions of the invariance, inequality and oracle suites, runnable
//! from an installed binary.

use serde::Serialize;

use crate::entropy::{
    blockdiag_power_sum, check_logdet_inequality, concatenated_power_sum,
    matrix_renyi_entropy_exact, EigPolicy, ProbVector, RenyiOrder, Spectrum,
};
use crate::error::Result;
use crate::linalg::{haar_orthogonal, DenseSymmetricMatrix, Matrix, SeededRng};
use crate::network::{
    explicit_layer_hessian, multiplicative_perturb_identity_check, rescale_layers, Activation,
    Dataset, Loss, MlpSpec, NetworkParams,
};
use crate::slq::{estimate_renyi_entropy, SlqConfig};

use super::kendall::kendall_counts;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match body() {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn spd_with_spectrum(eigs: &[f64], rng: &mut SeededRng) -> Result<DenseSymmetricMatrix> {
    let q = haar_orthogonal(rng, eigs.len());
    let qd = Matrix::from_fn(eigs.len(), eigs.len(), |i, j| q.get(i, j) * eigs[j]);
    DenseSymmetricMatrix::symmetrize(&qd.matmul(&q.transpose()))
}

fn slq_oracle() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(1, 0);
    let mut worst = 0.0f64;
    for k in 0..3 {
        let n = 64;
        let mut eigs: Vec<f64> = (0..n).map(|_| rng.uniform_range(1.0, 100.0)).collect();
        eigs[0] = 1.0;
        eigs[n - 1] = 100.0;
        let m = spd_with_spectrum(&eigs, &mut rng)?;
        for a in [0.5, 1.5] {
            let order = RenyiOrder::new(a)?;
            let exact = matrix_renyi_entropy_exact(&m, order, EigPolicy::ClipToZero)?;
            let cfg = SlqConfig {
                seed: k,
                ..Default::default()
            };
            let est = estimate_renyi_entropy(&m, order, &cfg)?.entropy;
            worst = worst.max(((est - exact) / exact).abs());
        }
    }
    Ok((
        worst <= 0.02,
        format!("max relative error {worst:.2e} (tolerance 2e-2)"),
    ))
}

fn reparametrization() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(2, 0);
    let spec = MlpSpec::new(&[4, 5, 4, 3], Activation::Relu, Loss::SoftmaxCrossEntropy)?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let params = NetworkParams::init_uniform(&spec, &mut rng)?;
        let inputs = Matrix::from_fn(24, 4, |_, _| rng.gaussian());
        let labels = (0..24).map(|i| i % 3).collect();
        let batch = Dataset::classification(inputs, labels, 3)?;
        let (c1, c2) = (rng.uniform_range(0.25, 4.0), rng.uniform_range(0.25, 4.0));
        let scaled = rescale_layers(&params, &[c1, c2, 1.0 / (c1 * c2)])?;
        for l in 0..spec.num_layers() {
            let h0 = explicit_layer_hessian(&spec, &params, &batch, l)?;
            let h1 = explicit_layer_hessian(&spec, &scaled, &batch, l)?;
            for a in [0.5, 1.5, 2.0] {
                let order = RenyiOrder::new(a)?;
                let e0 = matrix_renyi_entropy_exact(&h0, order, EigPolicy::ClipToZero)?;
                let e1 = matrix_renyi_entropy_exact(&h1, order, EigPolicy::ClipToZero)?;
                worst = worst.max(((e1 - e0) / e0).abs());
            }
        }
    }
    Ok((
        worst <= 1e-6,
        format!("max relative change {worst:.2e} (tolerance 1e-6)"),
    ))
}

fn multiplicative_identity() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(3, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (out, inp) = (2 + rng.below(5), 2 + rng.below(5));
        let w = Matrix::from_fn(out, inp, |_, _| rng.gaussian());
        let h: Vec<f64> = (0..inp).map(|_| rng.gaussian()).collect();
        let a = haar_orthogonal(&mut rng, inp);
        let rho = rng.uniform_range(0.0, 0.5);
        worst = worst.max(multiplicative_perturb_identity_check(
            Activation::Relu,
            &w,
            &h,
            &a,
            rho,
        )?);
    }
    Ok((
        worst <= 1e-10,
        format!("max deviation {worst:.2e} (tolerance 1e-10)"),
    ))
}

fn random_order(rng: &mut SeededRng) -> Result<RenyiOrder> {
    // (0, 0.9] and [1.2, 3] with equal total weight.
    let a = if rng.uniform() < 0.5 {
        0.9 * (1.0 - rng.uniform())
    } else {
        rng.uniform_range(1.2, 3.0)
    };
    RenyiOrder::new(a)
}

fn logdet_inequality() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(4, 0);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = 1 + rng.below(20);
        let raw: Vec<f64> = (0..n).map(|_| 1e-6 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let p = ProbVector::new(raw.iter().map(|x| x / total).collect())?;
        if !check_logdet_inequality(&p, random_order(&mut rng)?)?.holds {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in 10000 draws"),
    ))
}

fn block_factorization() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(5, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let blocks: Vec<Spectrum> = (0..2 + rng.below(2))
            .map(|_| {
                let n = 1 + rng.below(8);
                Spectrum::new((0..n).map(|_| rng.uniform_range(0.01, 10.0)).collect())
            })
            .collect();
        let order = random_order(&mut rng)?;
        let a = blockdiag_power_sum(&blocks, order)?;
        let b = concatenated_power_sum(&blocks, order)?;
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    Ok((
        worst <= 1e-12,
        format!("max difference {worst:.2e} (tolerance 1e-12)"),
    ))
}

fn kendall_brute_force() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(6, 0);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = 2 + rng.below(40);
        let x: Vec<f64> = (0..n).map(|_| rng.below(8) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.below(8) as f64).collect();
        let sign = |v: f64| (v > 0.0) as i64 - (v < 0.0) as i64;
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += sign(x[i] - x[j]) * sign(y[i] - y[j]);
            }
        }
        if kendall_counts(&x, &y)?.s != s {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in 200 vectors"),
    ))
}

pub fn selfcheck() -> Vec<Check> {
    vec![
        check("slq_vs_dense_oracle", slq_oracle),
        check("layer_rescaling_invariance", reparametrization),
        check(
            "multiplicative_perturbation_identity",
            multiplicative_identity,
        ),
        check("logdet_inequality", logdet_inequality),
        check("block_diagonal_factorization", block_factorization),
        check("kendall_vs_brute_force", kendall_brute_force),
    ]
}
