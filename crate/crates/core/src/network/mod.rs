//! Small fully connected networks with exact gradients and Hessian-vector
//! products.
//!
//! `f(x) = W_L σ(W_{L−1} ⋯ σ(W₁x))`, optionally with biases. Parameters live
//! in one flat vector; layer `l` occupies `layer_ranges[l]`, weights first
//! (row-major, `out × in`) and then the bias.
//!
//! Hessian-vector products use Pearlmutter's R-operator: a forward pass that
//! carries directional derivatives alongside activations, then a backward
//! pass that differentiates the ordinary backward pass in the same
//! direction. The result is exact up to rounding. A central-difference
//! variant is kept as a cross-check.

mod io;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, DenseSymmetricMatrix, Matrix, SeededRng, SymmetricOperator};

pub use io::{load_model, parse_dataset_csv, save_model, write_dataset_csv, ModelDocument};

/// Largest layer for which [`explicit_layer_hessian`] will materialize.
pub const EXPLICIT_HESSIAN_MAX_PARAMS: usize = 4096;

/// Input nudge applied to samples that sit exactly on a ReLU kink.
pub const KINK_NUDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu {
        slope: f64,
    },
    /// Exact (erf-based) GELU. Not positively homogeneous.
    Gelu,
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Gelu => x * std_normal_cdf(x),
        }
    }

    /// First derivative; piecewise-linear activations take the left branch
    /// at 0.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu | Activation::LeakyRelu { .. } => 0.0,
            Activation::Gelu => std_normal_pdf(x) * (2.0 - x * x),
        }
    }

    /// `σ(cx) = cσ(x)` for all `c > 0`.
    pub fn is_positively_homogeneous(&self) -> bool {
        !matches!(self, Activation::Gelu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared error summed over outputs, averaged over samples.
    Mse,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `(out_dim, in_dim)` per layer, input side first.
    pub layer_shapes: Vec<(usize, usize)>,
    pub activation: Activation,
    pub loss: Loss,
    #[serde(default)]
    pub bias: bool,
}

impl MlpSpec {
    /// `dims = [d_in, h₁, …, d_out]`.
    pub fn new(dims: &[usize], activation: Activation, loss: Loss) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::validation(
                "an MLP needs at least input and output dims",
            ));
        }
        let spec = Self {
            layer_shapes: dims.windows(2).map(|w| (w[1], w[0])).collect(),
            activation,
            loss,
            bias: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_shapes.is_empty() {
            return Err(Error::validation("network has no layers"));
        }
        if self.layer_shapes.iter().any(|&(o, i)| o == 0 || i == 0) {
            return Err(Error::validation("layer dimensions must be positive"));
        }
        for (l, w) in self.layer_shapes.windows(2).enumerate() {
            if w[1].1 != w[0].0 {
                return Err(Error::shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    l,
                    w[0].0,
                    l + 1,
                    w[1].1
                )));
            }
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return Err(Error::validation("leaky ReLU slope must be finite"));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].1
    }

    pub fn output_dim(&self) -> usize {
        self.layer_shapes.last().unwrap().0
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        let (o, i) = self.layer_shapes[layer];
        o * i + if self.bias { o } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        (0..self.num_layers())
            .map(|l| self.layer_param_count(l))
            .sum()
    }

    fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        (0..self.num_layers())
            .map(|l| {
                let r = start..start + self.layer_param_count(l);
                start = r.end;
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_shapes: Vec<(usize, usize)>,
    bias: bool,
    flat: Vec<f64>,
    layer_ranges: Vec<Range<usize>>,
}

impl NetworkParams {
    pub fn new(spec: &MlpSpec, flat: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if flat.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "network needs {} parameters, got {}",
                spec.param_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("parameters must be finite"));
        }
        Ok(Self {
            layer_shapes: spec.layer_shapes.clone(),
            bias: spec.bias,
            layer_ranges: spec.ranges(),
            flat,
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        Self::new(spec, vec![0.0; spec.param_count()])
    }

    /// Entries uniform on `±1/√fan_in`, biases included.
    pub fn init_uniform(spec: &MlpSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let mut flat = Vec::with_capacity(spec.param_count());
        for l in 0..spec.num_layers() {
            let bound = 1.0 / (spec.layer_shapes[l].1 as f64).sqrt();
            for _ in 0..spec.layer_param_count(l) {
                flat.push(rng.uniform_range(-bound, bound));
            }
        }
        Self::new(spec, flat)
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    /// Same layout, new values.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.flat.len(),
                flat.len()
            )));
        }
        Ok(Self {
            flat,
            ..self.clone()
        })
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layer_shapes
    }

    pub fn layer_ranges(&self) -> &[Range<usize>] {
        &self.layer_ranges
    }

    pub fn num_layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.flat[self.layer_ranges[l].clone()]
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (o, i) = self.layer_shapes[l];
        &self.layer(l)[..o * i]
    }

    pub fn bias(&self, l: usize) -> Option<&[f64]> {
        let (o, i) = self.layer_shapes[l];
        self.bias.then(|| &self.layer(l)[o * i..o * i + o])
    }

    pub fn l2_norm(&self) -> f64 {
        norm2(&self.flat)
    }

    fn check_spec(&self, spec: &MlpSpec) -> Result<()> {
        if spec.layer_shapes != self.layer_shapes || spec.bias != self.bias {
            return Err(Error::shape("parameters do not match the network spec"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    /// Class labels when the targets are one-hot.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(format!(
                "{} input rows vs {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        if inputs
            .data()
            .iter()
            .chain(targets.data())
            .any(|x| !x.is_finite())
        {
            return Err(Error::validation("dataset entries must be finite"));
        }
        Ok(Self {
            inputs,
            targets,
            labels: None,
        })
    }

    pub fn classification(inputs: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::validation(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        let targets = Matrix::from_fn(labels.len(), classes, |i, j| {
            if labels[i] == j {
                1.0
            } else {
                0.0
            }
        });
        let mut d = Self::new(inputs, targets)?;
        d.labels = Some(labels);
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick =
            |m: &Matrix| Matrix::from_fn(indices.len(), m.cols(), |r, c| m.get(indices[r], c));
        Dataset {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::validation("batch is empty"));
        }
        if self.input_dim() != spec.input_dim() {
            return Err(Error::shape(format!(
                "inputs have {} features, network expects {}",
                self.input_dim(),
                spec.input_dim()
            )));
        }
        if self.targets.cols() != spec.output_dim() {
            return Err(Error::shape(format!(
                "targets have {} columns, network outputs {}",
                self.targets.cols(),
                spec.output_dim()
            )));
        }
        Ok(())
    }
}

// Batched dense kernels on row-major slices.

/// `Z = A Wᵀ (+ b)` with `A: n×in`, `W: out×in`.
fn affine(a: &[f64], n: usize, w: &[f64], out: usize, b: Option<&[f64]>) -> Vec<f64> {
    let inp = a.len() / n;
    let mut z = vec![0.0; n * out];
    for r in 0..n {
        let ar = &a[r * inp..(r + 1) * inp];
        for o in 0..out {
            z[r * out + o] = dot(ar, &w[o * inp..(o + 1) * inp]) + b.map_or(0.0, |b| b[o]);
        }
    }
    z
}

/// `Y = D W` with `D: n×out`, `W: out×in`.
fn back_project(d: &[f64], n: usize, w: &[f64], inp: usize) -> Vec<f64> {
    let out = d.len() / n;
    let mut y = vec![0.0; n * inp];
    for r in 0..n {
        let yr = &mut y[r * inp..(r + 1) * inp];
        for o in 0..out {
            let c = d[r * out + o];
            if c != 0.0 {
                axpy(c, &w[o * inp..(o + 1) * inp], yr);
            }
        }
    }
    y
}

/// Accumulates `Σ_r D_r A_rᵀ` into the weight block and `Σ_r D_r` into the
/// bias block of `g`.
fn accumulate_outer(d: &[f64], a: &[f64], n: usize, g: &mut [f64], bias: bool) {
    let out = d.len() / n;
    let inp = a.len() / n;
    for r in 0..n {
        let ar = &a[r * inp..(r + 1) * inp];
        for o in 0..out {
            let c = d[r * out + o];
            if c != 0.0 {
                axpy(c, ar, &mut g[o * inp..(o + 1) * inp]);
            }
        }
    }
    if bias {
        let gb = &mut g[out * inp..out * inp + out];
        for r in 0..n {
            for o in 0..out {
                gb[o] += d[r * out + o];
            }
        }
    }
}

struct Tape {
    /// `acts[0]` is the input; `acts[l]` feeds layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
}

fn run_forward(spec: &MlpSpec, params: &NetworkParams, x: &[f64], n: usize) -> Tape {
    let mut acts = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(spec.num_layers());
    for l in 0..spec.num_layers() {
        let z = affine(
            acts.last().unwrap(),
            n,
            params.weights(l),
            spec.layer_shapes[l].0,
            params.bias(l),
        );
        if l + 1 < spec.num_layers() {
            acts.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
        }
        pre.push(z);
    }
    Tape { acts, pre }
}

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Per-batch loss sum and `∂(loss sum)/∂output`.
fn output_loss(loss: Loss, out: &[f64], targets: &[f64], c: usize) -> (f64, Vec<f64>) {
    let n = out.len() / c;
    let mut total = 0.0;
    let mut d = vec![0.0; out.len()];
    for r in 0..n {
        let f = &out[r * c..(r + 1) * c];
        let y = &targets[r * c..(r + 1) * c];
        let dr = &mut d[r * c..(r + 1) * c];
        match loss {
            Loss::Mse => {
                for k in 0..c {
                    let e = f[k] - y[k];
                    total += e * e;
                    dr[k] = 2.0 * e;
                }
            }
            Loss::SoftmaxCrossEntropy => {
                let ls = log_softmax_row(f);
                let ysum: f64 = y.iter().sum();
                for k in 0..c {
                    total -= y[k] * ls[k];
                    dr[k] = ysum * ls[k].exp() - y[k];
                }
            }
        }
    }
    (total, d)
}

/// Output-space Hessian of the per-sample loss applied to `rz`.
fn output_hessian_apply(
    loss: Loss,
    out: &[f64],
    targets: &[f64],
    rz: &[f64],
    c: usize,
) -> Vec<f64> {
    let n = out.len() / c;
    let mut res = vec![0.0; out.len()];
    for r in 0..n {
        let f = &out[r * c..(r + 1) * c];
        let v = &rz[r * c..(r + 1) * c];
        let rr = &mut res[r * c..(r + 1) * c];
        match loss {
            Loss::Mse => {
                for k in 0..c {
                    rr[k] = 2.0 * v[k];
                }
            }
            Loss::SoftmaxCrossEntropy => {
                let ysum: f64 = targets[r * c..(r + 1) * c].iter().sum();
                let s: Vec<f64> = log_softmax_row(f).iter().map(|l| l.exp()).collect();
                let sv = dot(&s, v);
                for k in 0..c {
                    rr[k] = ysum * s[k] * (v[k] - sv);
                }
            }
        }
    }
    res
}

/// Network outputs, one row per input row.
pub fn forward(spec: &MlpSpec, params: &NetworkParams, inputs: &Matrix) -> Result<Matrix> {
    params.check_spec(spec)?;
    if inputs.cols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} features, network expects {}",
            inputs.cols(),
            spec.input_dim()
        )));
    }
    let n = inputs.rows();
    if n == 0 {
        return Matrix::from_vec(0, spec.output_dim(), vec![]);
    }
    let mut tape = run_forward(spec, params, inputs.data(), n);
    Matrix::from_vec(n, spec.output_dim(), tape.pre.pop().unwrap())
}

/// Single-input forward pass.
pub fn forward_one(spec: &MlpSpec, params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(forward(spec, params, &m)?.into_data())
}

fn loss_grad_unchecked(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset) -> (f64, Vec<f64>) {
    let n = batch.len();
    let tape = run_forward(spec, params, batch.inputs.data(), n);
    let (total, mut delta) = output_loss(
        spec.loss,
        tape.pre.last().unwrap(),
        batch.targets.data(),
        spec.output_dim(),
    );
    let mut grad = vec![0.0; params.flat.len()];
    for l in (0..spec.num_layers()).rev() {
        let g = &mut grad[params.layer_ranges[l].clone()];
        accumulate_outer(&delta, &tape.acts[l], n, g, spec.bias);
        if l > 0 {
            let mut up = back_project(&delta, n, params.weights(l), spec.layer_shapes[l].1);
            for (u, &z) in up.iter_mut().zip(&tape.pre[l - 1]) {
                *u *= spec.activation.derivative(z);
            }
            delta = up;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (total * inv, grad)
}

/// Mean loss over the batch and its gradient in the flat layout.
pub fn loss_and_grad(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
) -> Result<(f64, Vec<f64>)> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    Ok(loss_grad_unchecked(spec, params, batch))
}

pub fn loss(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset) -> Result<f64> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    let tape = run_forward(spec, params, batch.inputs.data(), batch.len());
    let (total, _) = output_loss(
        spec.loss,
        tape.pre.last().unwrap(),
        batch.targets.data(),
        spec.output_dim(),
    );
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Arg-max agreement with the labels (or with the target arg-max).
    pub accuracy: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(spec: &MlpSpec, params: &NetworkParams, data: &Dataset) -> Result<Evaluation> {
    params.check_spec(spec)?;
    data.check(spec)?;
    let n = data.len();
    let c = spec.output_dim();
    let tape = run_forward(spec, params, data.inputs.data(), n);
    let out = tape.pre.last().unwrap();
    let (total, _) = output_loss(spec.loss, out, data.targets.data(), c);
    let correct = (0..n)
        .filter(|&r| {
            let want = match &data.labels {
                Some(l) => l[r],
                None => argmax(data.targets.row(r)),
            };
            argmax(&out[r * c..(r + 1) * c]) == want
        })
        .count();
    Ok(Evaluation {
        loss: total / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMethod {
    /// Forward-over-reverse R-operator.
    #[default]
    Exact,
    /// Central difference of the gradient along `v`.
    FiniteDifference,
}

fn hvp_exact(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset, v: &[f64]) -> Vec<f64> {
    let n = batch.len();
    let nl = spec.num_layers();
    let act = spec.activation;
    let dir = params
        .with_flat(v.to_vec())
        .expect("direction length checked by caller");
    let tape = run_forward(spec, params, batch.inputs.data(), n);

    // Forward R-pass: rz[l] = R{pre[l]}, ra[l] = R{acts[l]} with ra[0] = 0.
    let mut ra: Vec<Vec<f64>> = vec![vec![0.0; tape.acts[0].len()]];
    let mut rz: Vec<Vec<f64>> = Vec::with_capacity(nl);
    for l in 0..nl {
        let out = spec.layer_shapes[l].0;
        let mut z = affine(&tape.acts[l], n, dir.weights(l), out, dir.bias(l));
        if l > 0 {
            let wz = affine(&ra[l], n, params.weights(l), out, None);
            z.iter_mut().zip(&wz).for_each(|(a, b)| *a += b);
        }
        if l + 1 < nl {
            ra.push(
                z.iter()
                    .zip(&tape.pre[l])
                    .map(|(r, &p)| act.derivative(p) * r)
                    .collect(),
            );
        }
        rz.push(z);
    }

    let out = tape.pre.last().unwrap();
    let c = spec.output_dim();
    let (_, mut delta) = output_loss(spec.loss, out, batch.targets.data(), c);
    let mut rdelta = output_hessian_apply(spec.loss, out, batch.targets.data(), &rz[nl - 1], c);

    let mut hv = vec![0.0; params.flat.len()];
    for l in (0..nl).rev() {
        let g = &mut hv[params.layer_ranges[l].clone()];
        accumulate_outer(&rdelta, &tape.acts[l], n, g, spec.bias);
        if l > 0 {
            accumulate_outer(&delta, &ra[l], n, g, false);
            let inp = spec.layer_shapes[l].1;
            let wt_delta = back_project(&delta, n, params.weights(l), inp);
            let vt_delta = back_project(&delta, n, dir.weights(l), inp);
            let wt_rdelta = back_project(&rdelta, n, params.weights(l), inp);
            let z = &tape.pre[l - 1];
            let rzl = &rz[l - 1];
            rdelta = (0..z.len())
                .map(|k| {
                    act.second_derivative(z[k]) * rzl[k] * wt_delta[k]
                        + act.derivative(z[k]) * (vt_delta[k] + wt_rdelta[k])
                })
                .collect();
            delta = wt_delta
                .iter()
                .zip(z)
                .map(|(d, &p)| d * act.derivative(p))
                .collect();
        }
    }
    let inv = 1.0 / n as f64;
    hv.iter_mut().for_each(|h| *h *= inv);
    hv
}

fn hvp_fd(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset, v: &[f64]) -> Vec<f64> {
    let nv = norm2(v);
    let h = f64::EPSILON.cbrt() * (1.0 + params.l2_norm() / nv);
    let shifted = |s: f64| {
        let flat: Vec<f64> = params.flat.iter().zip(v).map(|(p, d)| p + s * d).collect();
        loss_grad_unchecked(spec, &params.with_flat(flat).unwrap(), batch).1
    };
    let gp = shifted(h);
    let gm = shifted(-h);
    gp.iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect()
}

fn hvp_unchecked(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    v: &[f64],
    method: HvpMethod,
) -> Vec<f64> {
    if v.iter().all(|&x| x == 0.0) {
        return vec![0.0; v.len()];
    }
    match method {
        HvpMethod::Exact => hvp_exact(spec, params, batch, v),
        HvpMethod::FiniteDifference => hvp_fd(spec, params, batch, v),
    }
}

fn check_direction(params: &NetworkParams, v: &[f64]) -> Result<()> {
    if v.len() != params.flat.len() {
        return Err(Error::shape(format!(
            "direction has length {}, network has {} parameters",
            v.len(),
            params.flat.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("direction must be finite"));
    }
    Ok(())
}

/// `∇²L · v` for the mean batch loss, computed exactly.
pub fn hvp(spec: &MlpSpec, params: &NetworkParams, batch: &Dataset, v: &[f64]) -> Result<Vec<f64>> {
    hvp_with(spec, params, batch, v, HvpMethod::Exact)
}

pub fn hvp_with(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    v: &[f64],
    method: HvpMethod,
) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    check_direction(params, v)?;
    Ok(hvp_unchecked(spec, params, batch, v, method))
}

/// Loss Hessian restricted to one layer's block, or the whole network when
/// `layer` is `None`, exposed as a matrix-free operator.
#[derive(Debug, Clone)]
pub struct HessianOperator<'a> {
    spec: &'a MlpSpec,
    params: &'a NetworkParams,
    batch: &'a Dataset,
    range: Range<usize>,
    method: HvpMethod,
}

impl<'a> HessianOperator<'a> {
    pub fn with_method(mut self, method: HvpMethod) -> Self {
        self.method = method;
        self
    }
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.range.len()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let total = self.params.flat.len();
        let hv = if self.range.len() == total {
            hvp_unchecked(self.spec, self.params, self.batch, v, self.method)
        } else {
            let mut full = vec![0.0; total];
            full[self.range.clone()].copy_from_slice(v);
            hvp_unchecked(self.spec, self.params, self.batch, &full, self.method)
        };
        out.copy_from_slice(&hv[self.range.clone()]);
    }
}

pub fn layer_operator<'a>(
    spec: &'a MlpSpec,
    params: &'a NetworkParams,
    batch: &'a Dataset,
    layer: usize,
) -> Result<HessianOperator<'a>> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    if layer >= spec.num_layers() {
        return Err(Error::validation(format!(
            "layer {layer} out of range for a {}-layer network",
            spec.num_layers()
        )));
    }
    Ok(HessianOperator {
        spec,
        params,
        batch,
        range: params.layer_ranges[layer].clone(),
        method: HvpMethod::Exact,
    })
}

pub fn network_operator<'a>(
    spec: &'a MlpSpec,
    params: &'a NetworkParams,
    batch: &'a Dataset,
) -> Result<HessianOperator<'a>> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    Ok(HessianOperator {
        spec,
        params,
        batch,
        range: 0..params.flat.len(),
        method: HvpMethod::Exact,
    })
}

/// Dense layer Hessian built column by column from Hessian-vector products,
/// then symmetrized.
pub fn explicit_layer_hessian(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
    layer: usize,
) -> Result<DenseSymmetricMatrix> {
    let op = layer_operator(spec, params, batch, layer)?;
    let d = op.dim();
    if d > EXPLICIT_HESSIAN_MAX_PARAMS {
        return Err(Error::validation(format!(
            "layer {layer} has {d} parameters, above the explicit-Hessian cap {EXPLICIT_HESSIAN_MAX_PARAMS}"
        )));
    }
    crate::linalg::materialize(&op)
}

/// `W̃_l = c_l W_l`. Biases pick up the running product `c₁⋯c_l` so biased
/// networks keep their function too.
pub fn rescale_layers(params: &NetworkParams, factors: &[f64]) -> Result<NetworkParams> {
    if factors.len() != params.num_layers() {
        return Err(Error::shape(format!(
            "{} factors for {} layers",
            factors.len(),
            params.num_layers()
        )));
    }
    if factors.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::validation(
            "layer factors must be positive and finite",
        ));
    }
    let prod: f64 = factors.iter().product();
    if (prod - 1.0).abs() > 1e-12 {
        return Err(Error::validation(format!(
            "layer factors multiply to {prod}, not 1"
        )));
    }
    let mut flat = params.flat.clone();
    let mut running = 1.0;
    for (l, &c) in factors.iter().enumerate() {
        running *= c;
        let (o, i) = params.layer_shapes[l];
        let block = &mut flat[params.layer_ranges[l].clone()];
        block[..o * i].iter_mut().for_each(|w| *w *= c);
        if params.bias {
            block[o * i..].iter_mut().for_each(|b| *b *= running);
        }
    }
    params.with_flat(flat)
}

/// Evaluates `σ(W(h + ρAh))` and `σ((W + ρWA)h)` and returns the largest
/// entrywise gap. The two agree by associativity; the gap is rounding.
pub fn multiplicative_perturb_identity_check(
    activation: Activation,
    w: &Matrix,
    h: &[f64],
    a: &Matrix,
    rho: f64,
) -> Result<f64> {
    if w.cols() != h.len() || a.rows() != h.len() || a.cols() != h.len() {
        return Err(Error::shape(format!(
            "W is {}×{}, h has {}, A is {}×{}",
            w.rows(),
            w.cols(),
            h.len(),
            a.rows(),
            a.cols()
        )));
    }
    let ah = a.matvec(h);
    let perturbed_input: Vec<f64> = h.iter().zip(&ah).map(|(x, y)| x + rho * y).collect();
    let lhs = w.matvec(&perturbed_input);
    let wa = w.matmul(a);
    let perturbed_w = Matrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j) + rho * wa.get(i, j));
    let rhs = perturbed_w.matvec(h);
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (activation.apply(*l) - activation.apply(*r)).abs())
        .fold(0.0, f64::max))
}

/// Which samples had a hidden pre-activation exactly on a kink.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KinkReport {
    pub nudged_samples: Vec<usize>,
}

impl KinkReport {
    pub fn flagged(&self) -> bool {
        !self.nudged_samples.is_empty()
    }
}

/// Moves samples off exact ReLU kinks by nudging their inputs by
/// [`KINK_NUDGE`]. Smooth activations are left alone.
pub fn avoid_kinks(
    spec: &MlpSpec,
    params: &NetworkParams,
    batch: &Dataset,
) -> Result<(Dataset, KinkReport)> {
    params.check_spec(spec)?;
    batch.check(spec)?;
    let mut out = batch.clone();
    let mut report = KinkReport::default();
    if !spec.activation.is_positively_homogeneous() || spec.num_layers() < 2 {
        return Ok((out, report));
    }
    let d = spec.input_dim();
    for r in 0..batch.len() {
        for attempt in 1..=8 {
            let x = out.inputs.row(r).to_vec();
            let tape = run_forward(spec, params, &x, 1);
            let on_kink = tape.pre[..spec.num_layers() - 1]
                .iter()
                .flatten()
                .any(|&z| z == 0.0);
            if !on_kink {
                break;
            }
            if attempt == 1 {
                report.nudged_samples.push(r);
            }
            for (c, &xc) in x.iter().enumerate().take(d) {
                let sign = if (c + attempt) % 2 == 0 { 1.0 } else { -1.0 };
                out.inputs
                    .set(r, c, xc + sign * KINK_NUDGE * attempt as f64);
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests;
