//! Dense residual stack: `x[l+1] = H_l(x[l]) + shortcut_l(x[l])`.
//!
//! `H_l(x) = act(W_l x + b_l)`. The shortcut is the identity when the layer
//! keeps its width and a learned projection matrix otherwise. Backward
//! propagation carries the upstream gradient through the shortcut
//! unchanged (identity) or through `Pᵀ` (projection), and adds the
//! gradient flowing through `H_l`.
//!
//! [`ResidualStack::gradient_decomposition`] recomputes the input
//! gradients a second way, as the upstream gradient times
//! `(1 + Σ_i ∂H(x[i])/∂x[l])` built from forward-mode Jacobians, and
//! reports how far the two routes disagree.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Used for algebraic checks; the encoder itself uses tanh.
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shortcut {
    Identity,
    /// `out × in` projection matrix.
    Projection(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub shortcut: Shortcut,
    pub activation: Activation,
}

impl ResidualLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn check(&self) -> Result<()> {
        let (out, inp) = self.weight.dim();
        if self.bias.len() != out {
            return Err(Error::dims("residual bias", out, self.bias.len()));
        }
        match &self.shortcut {
            Shortcut::Identity if out != inp => Err(Error::InvalidInput(format!(
                "identity shortcut needs matching dims, layer maps {inp} -> {out}"
            ))),
            Shortcut::Projection(p) if p.dim() != (out, inp) => Err(Error::InvalidInput(format!(
                "projection is {:?}, layer maps {inp} -> {out}",
                p.dim()
            ))),
            _ => Ok(()),
        }
    }

    fn pre_activation(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    layers: Vec<ResidualLayer>,
}

/// Output of [`ResidualStack::backward`].
#[derive(Debug, Clone)]
pub struct StackGradient {
    /// `∂L/∂x[l]` for `l = 0..=L`.
    pub inputs: Vec<Array1<f64>>,
    /// Parameter gradients, shaped like the stack they came from.
    pub params: ResidualStack,
}

/// Additive decomposition of `∂L/∂x[l]` for one layer index.
#[derive(Debug, Clone)]
pub struct LayerDecomposition {
    pub layer: usize,
    /// Reconstructed `∂L/∂x[l]`.
    pub total_gradient: Array1<f64>,
    /// Contribution of the unit path: the upstream gradient itself.
    pub direct_term: Array1<f64>,
    /// `gᵀ ∂H(x[i])/∂x[l]` for `i = l..L`.
    pub path_terms: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub layers: Vec<LayerDecomposition>,
    /// Largest absolute difference against [`ResidualStack::backward`].
    pub max_abs_residual: f64,
}

impl ResidualStack {
    pub fn new(layers: Vec<ResidualLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("residual stack needs a layer".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dims(
                    "residual layer input",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(ResidualStack { layers })
    }

    /// Gaussian-initialized stack through the given widths. Layers that
    /// change width get a projection shortcut.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput("need at least two widths".into()));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut draw = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(rng));
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (inp, out) = (w[0], w[1]);
            let weight = draw(out, inp);
            let bias = draw(out, 1).remove_axis(Axis(1));
            let shortcut = if inp == out {
                Shortcut::Identity
            } else {
                Shortcut::Projection(draw(out, inp))
            };
            layers.push(ResidualLayer {
                weight,
                bias,
                shortcut,
                activation,
            });
        }
        Self::new(layers)
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| ResidualLayer {
                weight: Array2::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
                shortcut: match &l.shortcut {
                    Shortcut::Identity => Shortcut::Identity,
                    Shortcut::Projection(p) => Shortcut::Projection(Array2::zeros(p.dim())),
                },
                activation: l.activation,
            })
            .collect();
        ResidualStack { layers }
    }

    pub fn layers(&self) -> &[ResidualLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Parameter tensors in storage order: per layer weight, bias, then
    /// projection when present.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let Shortcut::Projection(p) = &l.shortcut {
                out.push(p.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Shortcut::Projection(p) = &mut l.shortcut {
                out.push(p.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Activations `x[0]..=x[L]`, input included.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Vec<Array1<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("residual input", self.input_dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite residual input".into()));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let prev = acts.last().expect("non-empty");
            let z = layer.pre_activation(prev);
            let h = z.mapv(|v| layer.activation.apply(v));
            let next = match &layer.shortcut {
                Shortcut::Identity => h + prev,
                Shortcut::Projection(p) => h + p.dot(prev),
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn backward(
        &self,
        activations: &[Array1<f64>],
        upstream: ArrayView1<f64>,
    ) -> Result<StackGradient> {
        if activations.len() != self.layers.len() + 1 {
            return Err(Error::dims(
                "activation count",
                self.layers.len() + 1,
                activations.len(),
            ));
        }
        for (layer, x) in self.layers.iter().zip(activations) {
            if x.len() != layer.input_dim() {
                return Err(Error::dims("activation width", layer.input_dim(), x.len()));
            }
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dims("upstream gradient", self.output_dim(), upstream.len()));
        }

        let mut params = self.zeros_like();
        let mut inputs = vec![Array1::zeros(0); self.layers.len() + 1];
        let mut g = upstream.to_owned();
        inputs[self.layers.len()] = g.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &activations[l];
            let z = layer.pre_activation(x);
            let delta = &g * &z.mapv(|v| layer.activation.derivative(v));
            let grad = &mut params.layers[l];
            grad.weight = outer(&delta, x);
            grad.bias = delta.clone();
            let through_h = layer.weight.t().dot(&delta);
            let through_shortcut = match &layer.shortcut {
                Shortcut::Identity => g,
                Shortcut::Projection(p) => {
                    grad.shortcut = Shortcut::Projection(outer(&g, x));
                    p.t().dot(&g)
                }
            };
            g = through_shortcut + through_h;
            inputs[l] = g.clone();
        }
        Ok(StackGradient { inputs, params })
    }

    pub fn gradient_decomposition(
        &self,
        x: ArrayView1<f64>,
        upstream: ArrayView1<f64>,
    ) -> Result<GradientReport> {
        if self
            .layers
            .iter()
            .any(|l| matches!(l.shortcut, Shortcut::Projection(_)))
        {
            return Err(Error::InvalidInput(
                "gradient decomposition requires identity shortcuts".into(),
            ));
        }
        let acts = self.forward(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::dims("upstream gradient", self.output_dim(), upstream.len()));
        }
        let reference = self.backward(&acts, upstream)?;
        let g = upstream.to_owned();
        let n = self.input_dim();

        let mut layers = Vec::with_capacity(self.layers.len() + 1);
        let mut max_abs_residual: f64 = 0.0;
        for l in 0..=self.layers.len() {
            // ∂x[i]/∂x[l], starting from the identity at i = l.
            let mut jac = Array2::<f64>::eye(n);
            let mut path_terms = Vec::new();
            for i in l..self.layers.len() {
                let layer = &self.layers[i];
                let z = layer.pre_activation(&acts[i]);
                let d = z.mapv(|v| layer.activation.derivative(v));
                let h_jac = &layer.weight.dot(&jac) * &d.view().insert_axis(Axis(1));
                path_terms.push(h_jac.t().dot(&g));
                jac = jac + h_jac;
            }
            let mut total = g.clone();
            for t in &path_terms {
                total += t;
            }
            let res = (&total - &reference.inputs[l])
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            max_abs_residual = max_abs_residual.max(res);
            layers.push(LayerDecomposition {
                layer: l,
                total_gradient: total,
                direct_term: g.clone(),
                path_terms,
            });
        }
        Ok(GradientReport {
            layers,
            max_abs_residual,
        })
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
