use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// How the network input reaches its two-wide output directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    None,
    /// Adds input columns `re` and `im` to output 0 and 1.
    Center { re: usize, im: usize },
    /// Trainable linear map from the whole input to the output pair, initialized
    /// to the `Center` passthrough.
    LinearSkip { re: usize, im: usize },
}

impl Residual {
    fn pair(&self) -> Option<(usize, usize)> {
        match *self {
            Residual::None => None,
            Residual::Center { re, im } | Residual::LinearSkip { re, im } => Some((re, im)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    /// One entry per affine layer (`layer_widths.len() - 1`).
    pub activations: Vec<Activation>,
    pub residual: Residual,
}

impl MlpSpec {
    /// ReLU on every hidden layer, linear output.
    pub fn relu(input: usize, hidden: &[usize], output: usize, residual: Residual) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Linear);
        Self { layer_widths, activations, residual }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(invalid("an MLP needs at least one layer"));
        }
        if self.layer_widths.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if self.activations.len() != self.layer_widths.len() - 1 {
            return Err(invalid(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.layer_widths.len() - 1
            )));
        }
        if self.activations.last() != Some(&Activation::Linear) {
            return Err(invalid("output activation must be linear"));
        }
        if let Some((re, im)) = self.residual.pair() {
            if self.output_width() != 2 {
                return Err(invalid("residual connection needs a two-wide output"));
            }
            if re >= self.input_width() || im >= self.input_width() || re == im {
                return Err(invalid("residual pair out of range"));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected network. Weight `k` has shape `[out, in]`, row-major.
#[derive(Debug)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<ParamTensor>,
    biases: Vec<ParamTensor>,
    skip: Option<ParamTensor>,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            skip: self.skip.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    id: u64,
    version: u64,
    /// Input of each layer; entry 0 is the network input.
    layer_inputs: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.layer_inputs[0].nrows()
    }
}

impl Mlp {
    /// All-zero parameters (skip map, if any, at its passthrough init).
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..spec.num_layers() {
            let (i, o) = (spec.layer_widths[k], spec.layer_widths[k + 1]);
            weights.push(ParamTensor::zeros(format!("w{k}"), vec![o, i]));
            biases.push(ParamTensor::zeros(format!("b{k}"), vec![o]));
        }
        let skip = match spec.residual {
            Residual::LinearSkip { re, im } => {
                let d = spec.input_width();
                let mut s = ParamTensor::zeros("skip", vec![2, d]);
                s.values[re] = 1.0;
                s.values[d + im] = 1.0;
                Some(s)
            }
            _ => None,
        };
        Ok(Self { spec, weights, biases, skip, id: fresh_id(), version: 0 })
    }

    /// He-uniform hidden weights, zero biases, zero output layer. With a
    /// residual path the untrained network is the passthrough.
    pub fn init(spec: MlpSpec, rng: &mut SeededRng) -> Result<Self> {
        let mut mlp = Self::zeros(spec)?;
        let last = mlp.spec.num_layers() - 1;
        for k in 0..last {
            let fan_in = mlp.spec.layer_widths[k] as f64;
            let gain = match mlp.spec.activations[k] {
                Activation::Relu => 6.0,
                Activation::Linear => 3.0,
            };
            let bound = (gain / fan_in).sqrt();
            for v in mlp.weights[k].values.iter_mut() {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        if mlp.spec.residual == Residual::None {
            let fan_in = mlp.spec.layer_widths[last] as f64;
            let bound = (3.0 / fan_in).sqrt();
            for v in mlp.weights[last].values.iter_mut() {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[ParamTensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[ParamTensor] {
        &self.biases
    }

    pub fn skip(&self) -> Option<&ParamTensor> {
        self.skip.as_ref()
    }

    /// Every trainable tensor in a fixed order: weights and biases layer by
    /// layer, then the skip map. Borrowing mutably invalidates existing tapes.
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.version += 1;
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        if let Some(s) = self.skip.as_mut() {
            out.push(s);
        }
        out
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        if let Some(s) = self.skip.as_ref() {
            out.push(s);
        }
        out
    }

    /// Weights of the input and hidden layers, the set regularized by L2.
    pub fn regularized_mut(&mut self) -> Vec<&mut ParamTensor> {
        let last = self.weights.len() - 1;
        self.weights[..last].iter_mut().collect()
    }

    pub fn zero_grad(&mut self) {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()).chain(self.skip.iter_mut()) {
            w.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass over a batch: one row per example.
    pub fn forward_batch(&self, input: DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        let d = self.spec.input_width();
        if input.ncols() != d {
            return Err(Error::WidthMismatch { expected: d, got: input.ncols() });
        }
        let batch = input.nrows();
        let mut layer_inputs = Vec::with_capacity(self.spec.num_layers());
        let mut a = input;
        for k in 0..self.spec.num_layers() {
            let (i, o) = (self.spec.layer_widths[k], self.spec.layer_widths[k + 1]);
            let wt = DMatrixView::from_slice(&self.weights[k].values, i, o);
            let mut z = DMatrix::<f64>::zeros(batch, o);
            z.gemm(1.0, &a, &wt, 0.0);
            for (c, &b) in self.biases[k].values.iter().enumerate() {
                z.column_mut(c).add_scalar_mut(b);
            }
            if self.spec.activations[k] == Activation::Relu {
                z.apply(|v| *v = v.max(0.0));
            }
            layer_inputs.push(a);
            a = z;
        }
        let x = &layer_inputs[0];
        match (self.spec.residual, &self.skip) {
            (Residual::Center { re, im }, _) => {
                for r in 0..batch {
                    a[(r, 0)] += x[(r, re)];
                    a[(r, 1)] += x[(r, im)];
                }
            }
            (Residual::LinearSkip { .. }, Some(s)) => {
                let st = DMatrixView::from_slice(&s.values, d, 2);
                a.gemm(1.0, x, &st, 1.0);
            }
            _ => {}
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp forward"));
        }
        Ok((a, Tape { id: self.id, version: self.version, layer_inputs }))
    }

    /// Single-example forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let m = DMatrix::from_row_slice(1, input.len(), input);
        let (out, tape) = self.forward_batch(m)?;
        Ok((out.iter().copied().collect(), tape))
    }

    /// Inference without keeping a tape.
    pub fn predict_batch(&self, input: DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(input)?.0)
    }

    /// Accumulates parameter gradients for `output_grad` (one row per example)
    /// and returns the gradient with respect to the input.
    pub fn backward_batch(&mut self, tape: &Tape, output_grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if tape.id != self.id || tape.version != self.version {
            return Err(Error::StaleTape);
        }
        let batch = tape.batch();
        let out_w = self.spec.output_width();
        if output_grad.nrows() != batch || output_grad.ncols() != out_w {
            return Err(Error::WidthMismatch { expected: out_w, got: output_grad.ncols() });
        }
        let d = self.spec.input_width();
        let x = &tape.layer_inputs[0];
        let mut dx = DMatrix::<f64>::zeros(batch, d);
        match self.spec.residual {
            Residual::Center { re, im } => {
                for r in 0..batch {
                    dx[(r, re)] += output_grad[(r, 0)];
                    dx[(r, im)] += output_grad[(r, 1)];
                }
            }
            Residual::LinearSkip { .. } => {
                let s = self.skip.as_mut().expect("skip tensor");
                let mut gt = DMatrixViewMut::from_slice(&mut s.grad, d, 2);
                gt.gemm_tr(1.0, x, output_grad, 1.0);
                let st = DMatrixView::from_slice(&s.values, d, 2);
                dx.gemm(1.0, output_grad, &st.transpose(), 1.0);
            }
            Residual::None => {}
        }
        let mut dz = output_grad.clone();
        for k in (0..self.spec.num_layers()).rev() {
            let (i, o) = (self.spec.layer_widths[k], self.spec.layer_widths[k + 1]);
            if self.spec.activations[k] == Activation::Relu {
                // the next layer's stored input is this layer's ReLU output
                let post = &tape.layer_inputs[k + 1];
                dz.zip_apply(post, |g, p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let a = &tape.layer_inputs[k];
            {
                let mut gt = DMatrixViewMut::from_slice(&mut self.weights[k].grad, i, o);
                gt.gemm_tr(1.0, a, &dz, 1.0);
            }
            for (c, g) in self.biases[k].grad.iter_mut().enumerate() {
                *g += dz.column(c).sum();
            }
            let wt = DMatrixView::from_slice(&self.weights[k].values, i, o);
            let mut da = DMatrix::<f64>::zeros(batch, i);
            da.gemm(1.0, &dz, &wt.transpose(), 0.0);
            dz = da;
        }
        dx += dz;
        Ok(dx)
    }

    pub fn backward(&mut self, tape: &Tape, output_grad: &[f64]) -> Result<Vec<f64>> {
        let g = DMatrix::from_row_slice(1, output_grad.len(), output_grad);
        Ok(self.backward_batch(tape, &g)?.iter().copied().collect())
    }
}
