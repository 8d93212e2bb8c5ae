use proptest::prelude::*;

use super::*;
use crate::entropy::{matrix_renyi_entropy_exact, EigPolicy, RenyiOrder};
use crate::linalg::{dense_eigh, haar_orthogonal, materialize};

fn random_batch(spec: &MlpSpec, n: usize, rng: &mut SeededRng) -> Dataset {
    let inputs = Matrix::from_fn(n, spec.input_dim(), |_, _| rng.gaussian());
    match spec.loss {
        Loss::Mse => Dataset::new(
            inputs,
            Matrix::from_fn(n, spec.output_dim(), |_, _| rng.gaussian()),
        )
        .unwrap(),
        Loss::SoftmaxCrossEntropy => {
            let labels = (0..n).map(|_| rng.below(spec.output_dim())).collect();
            Dataset::classification(inputs, labels, spec.output_dim()).unwrap()
        }
    }
}

fn random_case(seed: u64) -> (MlpSpec, NetworkParams, Dataset) {
    let mut rng = SeededRng::new(seed, 0);
    let depth = 1 + rng.below(3);
    let dims: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(5)).collect();
    let activation = match rng.below(3) {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu { slope: 0.1 },
        _ => Activation::Gelu,
    };
    let loss = if rng.below(2) == 0 {
        Loss::Mse
    } else {
        Loss::SoftmaxCrossEntropy
    };
    let spec = MlpSpec::new(&dims, activation, loss)
        .unwrap()
        .with_bias(rng.below(2) == 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 1 + rng.below(8), &mut rng);
    (spec, params, batch)
}

fn fd_grad(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset, h: f64) -> Vec<f64> {
    (0..params.flat().len())
        .map(|i| {
            let mut p = params.flat().to_vec();
            p[i] += h;
            let up = loss(spec, &params.with_flat(p.clone()).unwrap(), batch).unwrap();
            p[i] -= 2.0 * h;
            let dn = loss(spec, &params.with_flat(p).unwrap(), batch).unwrap();
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b).max(1e-12)
}

#[test]
fn single_identity_layer_is_identity() {
    let spec = MlpSpec::new(&[3, 3], Activation::Relu, Loss::Mse).unwrap();
    let params = NetworkParams::new(&spec, Matrix::identity(3).into_data()).unwrap();
    let x = [0.5, -2.0, 7.25];
    assert_eq!(forward_one(&spec, &params, &x).unwrap(), x.to_vec());
}

#[test]
fn relu_output_is_positively_homogeneous_in_input() {
    let (spec, params, _) = random_case(3);
    let spec = MlpSpec {
        activation: Activation::Relu,
        bias: false,
        ..spec
    };
    let params = NetworkParams::new(&spec, params.flat()[..spec.param_count()].to_vec()).unwrap();
    let x: Vec<f64> = (0..spec.input_dim()).map(|i| i as f64 - 1.3).collect();
    let base = forward_one(&spec, &params, &x).unwrap();
    let xs: Vec<f64> = x.iter().map(|v| v * 3.5).collect();
    let scaled = forward_one(&spec, &params, &xs).unwrap();
    for (b, s) in base.iter().zip(&scaled) {
        assert!((3.5 * b - s).abs() <= 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn hand_computed_two_layer_forward() {
    // z₁ = W₁x = (−1, 3), relu → (0, 3), W₂·(0, 3) = (3, 6).
    let spec = MlpSpec::new(&[2, 2, 2], Activation::Relu, Loss::Mse).unwrap();
    let params = NetworkParams::new(&spec, vec![1.0, -1.0, 2.0, 0.5, 1.0, 1.0, -1.0, 2.0]).unwrap();
    assert_eq!(
        forward_one(&spec, &params, &[1.0, 2.0]).unwrap(),
        vec![3.0, 6.0]
    );
}

#[test]
fn nonnegative_weights_and_inputs_give_nonnegative_outputs() {
    let spec = MlpSpec::new(&[4, 6, 3], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(5, 0);
    let flat = (0..spec.param_count()).map(|_| rng.uniform()).collect();
    let params = NetworkParams::new(&spec, flat).unwrap();
    let x: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
    assert!(forward_one(&spec, &params, &x)
        .unwrap()
        .iter()
        .all(|&y| y >= 0.0));
}

#[test]
fn shape_errors() {
    assert!(MlpSpec::new(&[3], Activation::Relu, Loss::Mse).is_err());
    let bad = MlpSpec {
        layer_shapes: vec![(4, 3), (2, 5)],
        activation: Activation::Relu,
        loss: Loss::Mse,
        bias: false,
    };
    assert!(bad.validate().is_err());
    let spec = MlpSpec::new(&[3, 2], Activation::Relu, Loss::Mse).unwrap();
    assert!(NetworkParams::new(&spec, vec![0.0; 5]).is_err());
    let params = NetworkParams::zeros(&spec).unwrap();
    assert!(forward_one(&spec, &params, &[1.0, 2.0]).is_err());
}

#[test]
fn interpolating_minimum_has_zero_loss_and_gradient() {
    let spec = MlpSpec::new(&[3, 2], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(1, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let inputs = Matrix::from_fn(5, 3, |_, _| rng.gaussian());
    let targets = forward(&spec, &params, &inputs).unwrap();
    let batch = Dataset::new(inputs, targets).unwrap();
    let (l, g) = loss_and_grad(&spec, &params, &batch).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn linear_mse_gradient_closed_form() {
    let spec = MlpSpec::new(&[3, 2], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(2, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 6, &mut rng);
    let (_, g) = loss_and_grad(&spec, &params, &batch).unwrap();
    let n = batch.len() as f64;
    let mut want = vec![0.0; 6];
    for r in 0..batch.len() {
        let x = batch.inputs.row(r);
        let f = forward_one(&spec, &params, x).unwrap();
        for o in 0..2 {
            let e = f[o] - batch.targets.get(r, o);
            for i in 0..3 {
                want[o * 3 + i] += 2.0 / n * e * x[i];
            }
        }
    }
    assert!(rel_diff(&g, &want) <= 1e-13);
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..50 {
        let (spec, params, batch) = random_case(seed);
        let (_, g) = loss_and_grad(&spec, &params, &batch).unwrap();
        let fd = fd_grad(&spec, &params, &batch, 1e-4);
        if norm2(&fd) < 1e-8 {
            continue;
        }
        assert!(
            rel_diff(&g, &fd) <= 1e-5,
            "seed {seed}: {}",
            rel_diff(&g, &fd)
        );
    }
}

#[test]
fn hvp_of_linear_mse_is_block_gram() {
    // L = (1/n)Σ‖Wx − y‖² has Hessian I ⊗ (2/n)Σxxᵀ in row-major layout.
    let spec = MlpSpec::new(&[3, 2], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(4, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 7, &mut rng);
    let n = batch.len() as f64;
    let gram = Matrix::from_fn(3, 3, |i, j| {
        (0..batch.len())
            .map(|r| 2.0 / n * batch.inputs.get(r, i) * batch.inputs.get(r, j))
            .sum()
    });
    let v: Vec<f64> = (0..6).map(|_| rng.gaussian()).collect();
    let hv = hvp(&spec, &params, &batch, &v).unwrap();
    for o in 0..2 {
        let want = gram.matvec(&v[o * 3..o * 3 + 3]);
        for i in 0..3 {
            assert!((hv[o * 3 + i] - want[i]).abs() <= 1e-12);
        }
    }
    let h = explicit_layer_hessian(&spec, &params, &batch, 0).unwrap();
    for a in 0..6 {
        for b in 0..6 {
            let want = if a / 3 == b / 3 {
                gram.get(a % 3, b % 3)
            } else {
                0.0
            };
            assert!((h.get(a, b) - want).abs() <= 1e-12);
        }
    }
    let fd = hvp_with(&spec, &params, &batch, &v, HvpMethod::FiniteDifference).unwrap();
    assert!(rel_diff(&fd, &hv) <= 1e-8);
}

#[test]
fn hvp_of_zero_direction_is_zero() {
    let (spec, params, batch) = random_case(7);
    let z = vec![0.0; params.flat().len()];
    assert_eq!(hvp(&spec, &params, &batch, &z).unwrap(), z);
    assert!(hvp(&spec, &params, &batch, &z[1..]).is_err());
}

#[test]
fn exact_hvp_matches_gradient_differences() {
    for seed in 0..40 {
        let (spec, params, batch) = random_case(100 + seed);
        let mut rng = SeededRng::new(seed, 1);
        let v: Vec<f64> = (0..params.flat().len()).map(|_| rng.gaussian()).collect();
        let exact = hvp(&spec, &params, &batch, &v).unwrap();
        let fd = hvp_with(&spec, &params, &batch, &v, HvpMethod::FiniteDifference).unwrap();
        if norm2(&fd) < 1e-6 {
            continue;
        }
        assert!(
            rel_diff(&exact, &fd) <= 1e-5,
            "seed {seed}: {}",
            rel_diff(&exact, &fd)
        );
    }
}

#[test]
fn hvp_is_symmetric() {
    for seed in 0..30 {
        let (spec, params, batch) = random_case(200 + seed);
        let mut rng = SeededRng::new(seed, 2);
        let n = params.flat().len();
        let u: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let uhv = dot(&u, &hvp(&spec, &params, &batch, &v).unwrap());
        let vhu = dot(&v, &hvp(&spec, &params, &batch, &u).unwrap());
        assert!((uhv - vhu).abs() <= 1e-6 * uhv.abs().max(vhu.abs()).max(1e-12));
    }
}

#[test]
fn explicit_hessian_matches_fd_columns() {
    let spec = MlpSpec::new(&[3, 4, 2], Activation::Gelu, Loss::SoftmaxCrossEntropy).unwrap();
    let mut rng = SeededRng::new(9, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 10, &mut rng);
    for layer in 0..2 {
        let h = explicit_layer_hessian(&spec, &params, &batch, layer).unwrap();
        let range = params.layer_ranges()[layer].clone();
        for (col, idx) in range.clone().enumerate() {
            let mut e = vec![0.0; params.flat().len()];
            e[idx] = 1.0;
            let fd = hvp_with(&spec, &params, &batch, &e, HvpMethod::FiniteDifference).unwrap();
            for (row, k) in range.clone().enumerate() {
                assert!((h.get(row, col) - fd[k]).abs() <= 1e-5 * (1.0 + fd[k].abs()));
            }
        }
    }
}

#[test]
fn single_layer_operator_equals_network_operator() {
    let spec = MlpSpec::new(&[4, 3], Activation::Relu, Loss::SoftmaxCrossEntropy).unwrap();
    let mut rng = SeededRng::new(10, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 8, &mut rng);
    let a = materialize(&layer_operator(&spec, &params, &batch, 0).unwrap()).unwrap();
    let b = materialize(&network_operator(&spec, &params, &batch).unwrap()).unwrap();
    assert_eq!(a, b);
    assert!(layer_operator(&spec, &params, &batch, 1).is_err());
}

#[test]
fn layer_operator_symmetry_witness() {
    let spec = MlpSpec::new(&[3, 5, 4, 2], Activation::Relu, Loss::SoftmaxCrossEntropy).unwrap();
    let mut rng = SeededRng::new(11, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 12, &mut rng);
    for l in 0..3 {
        let op = layer_operator(&spec, &params, &batch, l).unwrap();
        let dense = materialize(&op).unwrap();
        let scale = dense.frobenius_norm().max(1e-12);
        let d = crate::linalg::symmetry_defect(&op, &mut rng);
        assert!(d <= 1e-8 * scale);
        let explicit = explicit_layer_hessian(&spec, &params, &batch, l).unwrap();
        assert!(dense.as_matrix().max_abs_diff(explicit.as_matrix()) <= 1e-6 * scale);
    }
}

#[test]
fn single_layer_cross_entropy_hessian_is_psd() {
    let spec = MlpSpec::new(&[4, 3], Activation::Relu, Loss::SoftmaxCrossEntropy).unwrap();
    let mut rng = SeededRng::new(12, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 9, &mut rng);
    let h = explicit_layer_hessian(&spec, &params, &batch, 0).unwrap();
    let eig = dense_eigh(&h).unwrap();
    assert!(eig.values.iter().all(|&l| l >= -1e-12 * eig.values[0]));
}

#[test]
fn rescale_with_unit_factors_is_identity() {
    let (_, params, _) = random_case(13);
    let ones = vec![1.0; params.num_layers()];
    assert_eq!(rescale_layers(&params, &ones).unwrap(), params);
}

#[test]
fn rescale_rejects_bad_factors() {
    let spec = MlpSpec::new(&[2, 3, 2], Activation::Relu, Loss::Mse).unwrap();
    let params = NetworkParams::zeros(&spec).unwrap();
    assert!(rescale_layers(&params, &[2.0, 0.4]).is_err());
    assert!(rescale_layers(&params, &[-1.0, -1.0]).is_err());
    assert!(rescale_layers(&params, &[1.0]).is_err());
}

#[test]
fn rescale_preserves_two_layer_relu_function() {
    let spec = MlpSpec::new(&[3, 5, 2], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(14, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let scaled = rescale_layers(&params, &[2.0, 0.5]).unwrap();
    let inputs = Matrix::from_fn(20, 3, |_, _| rng.gaussian());
    let a = forward(&spec, &params, &inputs).unwrap();
    let b = forward(&spec, &scaled, &inputs).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-10);
}

#[test]
fn rescale_preserves_function_with_bias() {
    let spec = MlpSpec::new(
        &[3, 4, 4, 2],
        Activation::LeakyRelu { slope: 0.2 },
        Loss::Mse,
    )
    .unwrap()
    .with_bias(true);
    let mut rng = SeededRng::new(15, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let scaled = rescale_layers(&params, &[4.0, 0.5, 0.5]).unwrap();
    let inputs = Matrix::from_fn(20, 3, |_, _| rng.gaussian());
    let a = forward(&spec, &params, &inputs).unwrap();
    let b = forward(&spec, &scaled, &inputs).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-10);
}

#[test]
fn rescale_leaves_three_layer_entropy_unchanged() {
    let spec = MlpSpec::new(&[3, 4, 4, 2], Activation::Relu, Loss::SoftmaxCrossEntropy).unwrap();
    let mut rng = SeededRng::new(16, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let batch = random_batch(&spec, 30, &mut rng);
    let scaled = rescale_layers(&params, &[4.0, 0.5, 0.5]).unwrap();
    let a = forward(&spec, &params, &batch.inputs).unwrap();
    let b = forward(&spec, &scaled, &batch.inputs).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-10);
    let order = RenyiOrder::new(1.5).unwrap();
    let h0 = explicit_layer_hessian(&spec, &params, &batch, 1).unwrap();
    let h1 = explicit_layer_hessian(&spec, &scaled, &batch, 1).unwrap();
    let e0 = matrix_renyi_entropy_exact(&h0, order, EigPolicy::ClipToZero).unwrap();
    let e1 = matrix_renyi_entropy_exact(&h1, order, EigPolicy::ClipToZero).unwrap();
    assert!((e0 - e1).abs() <= 1e-8, "{e0} vs {e1}");
    // The layer Hessian itself changes by the positive factor 1/c_l².
    let ratio = h1.trace() / h0.trace();
    assert!((ratio - 4.0).abs() <= 1e-8 * 4.0);
}

#[test]
fn multiplicative_identity_examples() {
    let mut rng = SeededRng::new(17, 0);
    let w = Matrix::from_fn(4, 5, |_, _| rng.gaussian());
    let h: Vec<f64> = (0..5).map(|_| rng.gaussian()).collect();
    let a = haar_orthogonal(&mut rng, 5);
    let act = Activation::Relu;
    assert_eq!(
        multiplicative_perturb_identity_check(act, &w, &h, &a, 0.0).unwrap(),
        0.0
    );
    assert!(
        multiplicative_perturb_identity_check(act, &w, &h, &Matrix::identity(5), 0.3).unwrap()
            <= 1e-12
    );
    assert!(
        multiplicative_perturb_identity_check(Activation::Gelu, &w, &h, &a, 0.1).unwrap() <= 1e-10
    );
    assert!(multiplicative_perturb_identity_check(act, &w, &h[1..], &a, 0.1).is_err());
}

#[test]
fn kinks_are_nudged_and_flagged() {
    let spec = MlpSpec::new(&[2, 3, 2], Activation::Relu, Loss::Mse).unwrap();
    let mut rng = SeededRng::new(18, 0);
    let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
    let inputs = Matrix::from_vec(2, 2, vec![0.0, 0.0, 0.7, -0.2]).unwrap();
    let batch = Dataset::new(inputs, Matrix::zeros(2, 2)).unwrap();
    let (fixed, report) = avoid_kinks(&spec, &params, &batch).unwrap();
    assert_eq!(report.nudged_samples, vec![0]);
    assert!(fixed.inputs.row(0).iter().all(|x| x.abs() == KINK_NUDGE));
    assert_eq!(fixed.inputs.row(1), batch.inputs.row(1));
    let gelu = MlpSpec {
        activation: Activation::Gelu,
        ..spec
    };
    assert!(!avoid_kinks(&gelu, &params, &batch).unwrap().1.flagged());
}

#[test]
fn gelu_derivatives_match_finite_differences() {
    let g = Activation::Gelu;
    for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.7, 4.0] {
        let h = 1e-5;
        let d1 = (g.apply(x + h) - g.apply(x - h)) / (2.0 * h);
        let d2 = (g.derivative(x + h) - g.derivative(x - h)) / (2.0 * h);
        assert!((d1 - g.derivative(x)).abs() <= 1e-8);
        assert!((d2 - g.second_derivative(x)).abs() <= 1e-8);
    }
    assert!((g.apply(1.0) - 0.8413447460685429).abs() <= 1e-15);
}

#[test]
fn evaluate_counts_argmax_hits() {
    let spec = MlpSpec::new(&[2, 2], Activation::Relu, Loss::SoftmaxCrossEntropy).unwrap();
    let params = NetworkParams::new(&spec, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let inputs = Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, 3.0]).unwrap();
    let data = Dataset::classification(inputs, vec![0, 1, 1, 1], 2).unwrap();
    let e = evaluate(&spec, &params, &data).unwrap();
    assert_eq!(e.accuracy, 0.75);
    let ce0 = (1.0 + (-1f64).exp()).ln();
    assert!((loss(&spec, &params, &data.subset(&[0])).unwrap() - ce0).abs() <= 1e-15);
}

#[test]
fn model_document_round_trips_bit_exactly() {
    let (spec, params, _) = random_case(19);
    let text = save_model(&spec, &params).unwrap();
    let (spec2, params2) = load_model(&text).unwrap();
    assert_eq!(spec, spec2);
    assert_eq!(params.flat().len(), params2.flat().len());
    for (a, b) in params.flat().iter().zip(params2.flat()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(load_model("{}").is_err());
}

#[test]
fn dataset_csv_round_trip() {
    let inputs = Matrix::from_vec(3, 2, vec![0.1, -2.0, 3.5, 1e-7, 0.0, 4.0]).unwrap();
    let data = Dataset::classification(inputs, vec![2, 0, 1], 3).unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&data, &mut buf).unwrap();
    let back = parse_dataset_csv(std::str::from_utf8(&buf).unwrap(), None).unwrap();
    assert_eq!(back, data);
    assert!(parse_dataset_csv("1.0,2.0,x\n", None).is_err());
    assert!(parse_dataset_csv("1.0,2.0,0\n1.0,1\n", None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescaling_preserves_relu_outputs(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let spec = MlpSpec::new(&[3, 4, 5, 2], Activation::Relu, Loss::Mse).unwrap();
        let mut rng = SeededRng::new(seed, 0);
        let params = NetworkParams::init_uniform(&spec, &mut rng).unwrap();
        let (c1, c2) = (a.exp(), b.exp());
        let scaled = rescale_layers(&params, &[c1, c2, 1.0 / (c1 * c2)]);
        // Rounding in the product can exceed 1e-12 only marginally; skip those.
        prop_assume!(scaled.is_ok());
        let scaled = scaled.unwrap();
        let inputs = Matrix::from_fn(8, 3, |_, _| rng.gaussian());
        let x = forward(&spec, &params, &inputs).unwrap();
        let y = forward(&spec, &scaled, &inputs).unwrap();
        prop_assert!(x.max_abs_diff(&y) <= 1e-10);
    }

    #[test]
    fn hvp_is_linear_in_direction(seed in 0u64..1000, c in -3.0f64..3.0) {
        let (spec, params, batch) = random_case(seed);
        let mut rng = SeededRng::new(seed, 5);
        let n = params.flat().len();
        let u: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + c * b).collect();
        let hu = hvp(&spec, &params, &batch, &u).unwrap();
        let hv = hvp(&spec, &params, &batch, &v).unwrap();
        let hw = hvp(&spec, &params, &batch, &w).unwrap();
        let want: Vec<f64> = hu.iter().zip(&hv).map(|(a, b)| a + c * b).collect();
        prop_assert!(rel_diff(&hw, &want) <= 1e-10 || norm2(&want) < 1e-12);
    }
}
