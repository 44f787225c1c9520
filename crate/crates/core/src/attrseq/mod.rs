//! Multi-label attribute recognition as sequence classification.
//!
//! An image feature is encoded by a small residual stack into the initial
//! LSTM hidden state. The LSTM then emits attribute symbols one at a time
//! through a softmax over the whole vocabulary, conditioned on every symbol
//! emitted so far; the joint probability of an attribute set is the
//! product of those conditionals, ending with EOS.
//!
//! EOS doubles as the start-of-sequence input at step 0. It is never fed
//! back otherwise, since decoding stops as soon as it is emitted.

mod checkpoint;
mod dataset;
mod eval;
mod generate;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use dataset::{load_split, read_dataset, DatasetEntry, Split};
pub use eval::{evaluate_pr, set_precision_recall, PrReport};
pub use generate::{AttributeSequence, DecodeMode, GenerateOptions};
pub use train::{mean_nll, train, EarlyStopping, EpochStats, TrainConfig, TrainOutcome, TrainingExample};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::residual::{Activation, ResidualStack};
use crate::{Error, Result};

/// Gate order used for parameter storage: input, forget, cell, output.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    /// Desk-scale defaults for a given vocabulary.
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelDims {
            feature_dim: 64,
            embed_dim: 32,
            hidden_dim: 64,
            vocab_size,
        }
    }

    fn check(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidInput("model dims must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidInput(
                "vocabulary needs EOS plus at least one symbol".into(),
            ));
        }
        Ok(())
    }
}

/// LSTM attribute decoder with its image encoder.
///
/// Parameters are also used, zeroed, as gradient accumulators: see
/// [`SeqModel::zeros_like`] and [`SeqModel::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    dims: ModelDims,
    encoder: ResidualStack,
    /// `vocab × d_e`.
    embedding: Array2<f64>,
    /// Per gate, `d_h × (d_e + d_h)` acting on `[embedding ; hidden]`.
    gate_weights: [Array2<f64>; 4],
    gate_biases: [Array1<f64>; 4],
    /// `d_h × vocab`; logits are `hᵀ W + b`.
    output_weight: Array2<f64>,
    output_bias: Array1<f64>,
}

/// One decoder step's result.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Array1<f64>,
    pub hidden: Array1<f64>,
    pub cell: Array1<f64>,
}

struct StepCache {
    input: usize,
    concat: Array1<f64>,
    gates: [Array1<f64>; 4],
    cell_prev: Array1<f64>,
    cell_tanh: Array1<f64>,
    hidden: Array1<f64>,
    probs: Array1<f64>,
}

impl SeqModel {
    /// All-zero parameters: every step yields the uniform distribution.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let encoder = Self::encoder_shape(&dims, 1.0, &mut rng)?.zeros_like();
        let concat = dims.embed_dim + dims.hidden_dim;
        Ok(SeqModel {
            dims,
            encoder,
            embedding: Array2::zeros((dims.vocab_size, dims.embed_dim)),
            gate_weights: std::array::from_fn(|_| Array2::zeros((dims.hidden_dim, concat))),
            gate_biases: std::array::from_fn(|_| Array1::zeros(dims.hidden_dim)),
            output_weight: Array2::zeros((dims.hidden_dim, dims.vocab_size)),
            output_bias: Array1::zeros(dims.vocab_size),
        })
    }

    /// Gaussian initialization scaled by fan-in, forget-gate bias at 1.
    pub fn random(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(dims, 1.0, &mut rng)
    }

    /// Like [`SeqModel::random`] with every standard deviation multiplied
    /// by `scale`; large scales give sharply peaked distributions.
    pub fn random_with<R: Rng + ?Sized>(dims: ModelDims, scale: f64, rng: &mut R) -> Result<Self> {
        dims.check()?;
        let encoder = Self::encoder_shape(&dims, scale / (dims.feature_dim as f64).sqrt(), rng)?;
        let concat = dims.embed_dim + dims.hidden_dim;
        let mut draw = |shape: (usize, usize), std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            Array2::from_shape_simple_fn(shape, || normal.sample(rng))
        };
        let embedding = draw((dims.vocab_size, dims.embed_dim), 0.5 * scale);
        let gate_std = scale / (concat as f64).sqrt();
        let gate_weights: [Array2<f64>; 4] =
            std::array::from_fn(|_| draw((dims.hidden_dim, concat), gate_std));
        let output_weight = draw(
            (dims.hidden_dim, dims.vocab_size),
            scale / (dims.hidden_dim as f64).sqrt(),
        );
        let mut gate_biases: [Array1<f64>; 4] =
            std::array::from_fn(|_| Array1::zeros(dims.hidden_dim));
        gate_biases[1].fill(1.0);
        Ok(SeqModel {
            dims,
            encoder,
            embedding,
            gate_weights,
            gate_biases,
            output_weight,
            output_bias: Array1::zeros(dims.vocab_size),
        })
    }

    /// Encoder: a projection layer `F_in -> d_h` followed by one identity
    /// residual layer `d_h -> d_h`, both tanh.
    fn encoder_shape<R: Rng + ?Sized>(
        dims: &ModelDims,
        std: f64,
        rng: &mut R,
    ) -> Result<ResidualStack> {
        ResidualStack::random(
            &[dims.feature_dim, dims.hidden_dim, dims.hidden_dim],
            Activation::Tanh,
            std,
            rng,
        )
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn eos(&self) -> usize {
        self.dims.vocab_size - 1
    }

    pub fn encoder(&self) -> &ResidualStack {
        &self.encoder
    }

    /// All parameter tensors in checkpoint order: encoder (per layer:
    /// weight, bias, projection), embedding, gate weights (input, forget,
    /// cell, output), gate biases (same order), output weight, output bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.tensors();
        out.push(self.embedding.as_slice().expect("standard layout"));
        for w in &self.gate_weights {
            out.push(w.as_slice().expect("standard layout"));
        }
        for b in &self.gate_biases {
            out.push(b.as_slice().expect("standard layout"));
        }
        out.push(self.output_weight.as_slice().expect("standard layout"));
        out.push(self.output_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        out.push(self.embedding.as_slice_mut().expect("standard layout"));
        for w in &mut self.gate_weights {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.gate_biases {
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output_weight.as_slice_mut().expect("standard layout"));
        out.push(self.output_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Initial hidden state `g(I)` for an image feature.
    pub fn encode(&self, feature: &[f64]) -> Result<Array1<f64>> {
        if feature.len() != self.dims.feature_dim {
            return Err(Error::dims("image feature", self.dims.feature_dim, feature.len()));
        }
        let acts = self.encoder.forward(ArrayView1::from(feature))?;
        Ok(acts.into_iter().last().expect("at least input"))
    }

    /// One LSTM step on input `symbol` from state `(hidden, cell)`.
    pub fn step(
        &self,
        symbol: usize,
        hidden: ArrayView1<f64>,
        cell: ArrayView1<f64>,
    ) -> Result<StepOutput> {
        if symbol >= self.dims.vocab_size {
            return Err(Error::UnknownSymbol(format!("#{symbol}")));
        }
        if hidden.len() != self.dims.hidden_dim {
            return Err(Error::dims("hidden state", self.dims.hidden_dim, hidden.len()));
        }
        if cell.len() != self.dims.hidden_dim {
            return Err(Error::dims("cell state", self.dims.hidden_dim, cell.len()));
        }
        let cache = self.step_cached(symbol, hidden, cell, false);
        Ok(StepOutput {
            logits: self.logits(&cache.hidden),
            cell: &cache.gates[1] * &cache.cell_prev + &cache.gates[0] * &cache.gates[2],
            hidden: cache.hidden,
        })
    }

    fn logits(&self, hidden: &Array1<f64>) -> Array1<f64> {
        self.output_weight.t().dot(hidden) + &self.output_bias
    }

    fn step_cached(
        &self,
        symbol: usize,
        hidden: ArrayView1<f64>,
        cell: ArrayView1<f64>,
        with_probs: bool,
    ) -> StepCache {
        let d_e = self.dims.embed_dim;
        let mut concat = Array1::zeros(d_e + self.dims.hidden_dim);
        concat.slice_mut(s![..d_e]).assign(&self.embedding.row(symbol));
        concat.slice_mut(s![d_e..]).assign(&hidden);

        let gates: [Array1<f64>; 4] = std::array::from_fn(|k| {
            let z = self.gate_weights[k].dot(&concat) + &self.gate_biases[k];
            if k == 2 {
                z.mapv(f64::tanh)
            } else {
                z.mapv(sigmoid)
            }
        });
        let new_cell = &gates[1] * &cell + &gates[0] * &gates[2];
        let cell_tanh = new_cell.mapv(f64::tanh);
        let new_hidden = &gates[3] * &cell_tanh;
        let probs = if with_probs {
            softmax(self.logits(&new_hidden).view())
        } else {
            Array1::zeros(0)
        };
        StepCache {
            input: symbol,
            concat,
            gates,
            cell_prev: cell.to_owned(),
            cell_tanh,
            hidden: new_hidden,
            probs,
        }
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        let eos = self.eos();
        match target.last() {
            Some(&last) if last == eos => {}
            _ => {
                return Err(Error::InvalidInput(
                    "target sequence must end with EOS".into(),
                ))
            }
        }
        if let Some(&bad) = target.iter().find(|&&s| s >= self.dims.vocab_size) {
            return Err(Error::UnknownSymbol(format!("#{bad}")));
        }
        if target[..target.len() - 1].contains(&eos) {
            return Err(Error::InvalidInput("EOS before the end of the target".into()));
        }
        Ok(())
    }

    /// `−Σ_t log p(a_t | a_<t, g(I))` under teacher forcing.
    pub fn sequence_nll(&self, feature: &[f64], target: &[usize]) -> Result<f64> {
        self.check_target(target)?;
        let mut hidden = self.encode(feature)?;
        let mut cell = Array1::zeros(self.dims.hidden_dim);
        let mut input = self.eos();
        let mut loss = 0.0;
        for &symbol in target {
            let cache = self.step_cached(input, hidden.view(), cell.view(), false);
            let logits = self.logits(&cache.hidden);
            loss -= log_softmax_at(logits.view(), symbol);
            cell = &cache.gates[1] * &cache.cell_prev + &cache.gates[0] * &cache.gates[2];
            hidden = cache.hidden;
            input = symbol;
        }
        Ok(loss)
    }

    /// NLL and its gradient with respect to every parameter (BPTT through
    /// the decoder, then into the encoder).
    pub fn nll_and_gradient(&self, feature: &[f64], target: &[usize]) -> Result<(f64, SeqModel)> {
        let mut grad = self.zeros_like();
        let loss = self.accumulate_gradient(feature, target, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds this example's gradient into `grad` and returns its NLL.
    pub fn accumulate_gradient(
        &self,
        feature: &[f64],
        target: &[usize],
        grad: &mut SeqModel,
    ) -> Result<f64> {
        self.check_target(target)?;
        if feature.len() != self.dims.feature_dim {
            return Err(Error::dims("image feature", self.dims.feature_dim, feature.len()));
        }
        let enc_acts = self.encoder.forward(ArrayView1::from(feature))?;
        let h0 = enc_acts.last().expect("non-empty").clone();

        let mut caches = Vec::with_capacity(target.len());
        let mut hidden = h0;
        let mut cell = Array1::zeros(self.dims.hidden_dim);
        let mut input = self.eos();
        let mut loss = 0.0;
        for &symbol in target {
            let cache = self.step_cached(input, hidden.view(), cell.view(), true);
            loss -= cache.probs[symbol].ln();
            cell = &cache.gates[1] * &cache.cell_prev + &cache.gates[0] * &cache.gates[2];
            hidden = cache.hidden.clone();
            input = symbol;
            caches.push(cache);
        }

        let d_e = self.dims.embed_dim;
        let mut dh_next = Array1::<f64>::zeros(self.dims.hidden_dim);
        let mut dc_next = Array1::<f64>::zeros(self.dims.hidden_dim);
        for (cache, &symbol) in caches.iter().zip(target).rev() {
            let mut dlogits = cache.probs.clone();
            dlogits[symbol] -= 1.0;
            add_outer(&mut grad.output_weight, &cache.hidden, &dlogits);
            grad.output_bias += &dlogits;

            let dh = self.output_weight.dot(&dlogits) + &dh_next;
            let [gi, gf, gg, go] = &cache.gates;
            let d_out = &dh * &cache.cell_tanh;
            let dc = &dh * go * &cache.cell_tanh.mapv(|t| 1.0 - t * t) + &dc_next;
            let d_in = &dc * gg;
            let d_cand = &dc * gi;
            let d_forget = &dc * &cache.cell_prev;
            dc_next = &dc * gf;

            let dz = [
                &d_in * &gi.mapv(|v| v * (1.0 - v)),
                &d_forget * &gf.mapv(|v| v * (1.0 - v)),
                &d_cand * &gg.mapv(|v| 1.0 - v * v),
                &d_out * &go.mapv(|v| v * (1.0 - v)),
            ];
            let mut dconcat = Array1::<f64>::zeros(cache.concat.len());
            for k in 0..4 {
                add_outer(&mut grad.gate_weights[k], &dz[k], &cache.concat);
                grad.gate_biases[k] += &dz[k];
                dconcat += &self.gate_weights[k].t().dot(&dz[k]);
            }
            let mut erow = grad.embedding.row_mut(cache.input);
            erow += &dconcat.slice(s![..d_e]);
            dh_next = dconcat.slice(s![d_e..]).to_owned();
        }

        let enc_grad = self.encoder.backward(&enc_acts, dh_next.view())?;
        for (dst, src) in grad
            .encoder
            .tensors_mut()
            .into_iter()
            .zip(enc_grad.params.tensors())
        {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(loss)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_outer(dst: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &ai) in dst.rows_mut().into_iter().zip(a) {
        row.scaled_add(ai, b);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn log_softmax_at(logits: ArrayView1<f64>, index: usize) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            feature_dim: 4,
            embed_dim: 3,
            hidden_dim: 5,
            vocab_size: vocab,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = SeqModel::zeros(dims(7)).unwrap();
        let h = Array1::zeros(5);
        let out = m.step(2, h.view(), h.view()).unwrap();
        let p = softmax(out.logits.view());
        for &v in &p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn binary_vocab_zero_logits_gives_ln2() {
        let m = SeqModel::zeros(dims(2)).unwrap();
        let nll = m.sequence_nll(&[0.0; 4], &[1]).unwrap();
        assert!((nll - LN_2).abs() < 1e-15);
        let nll = m.sequence_nll(&[0.0; 4], &[0, 1]).unwrap();
        assert!((nll - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_model_vocab4_length3() {
        let m = SeqModel::zeros(dims(4)).unwrap();
        let nll = m.sequence_nll(&[1.0, -1.0, 0.5, 2.0], &[0, 2, 3]).unwrap();
        assert!((nll - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_validation() {
        let m = SeqModel::zeros(dims(4)).unwrap();
        let f = [0.0; 4];
        assert!(matches!(m.sequence_nll(&f, &[0, 1]), Err(Error::InvalidInput(_))));
        assert!(matches!(m.sequence_nll(&f, &[]), Err(Error::InvalidInput(_))));
        assert!(matches!(m.sequence_nll(&f, &[9, 3]), Err(Error::UnknownSymbol(_))));
        assert!(matches!(m.sequence_nll(&f, &[3, 0, 3]), Err(Error::InvalidInput(_))));
        assert!(matches!(m.sequence_nll(&[0.0; 3], &[3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn step_rejects_bad_dims() {
        let m = SeqModel::zeros(dims(4)).unwrap();
        let h = Array1::zeros(5);
        let bad = Array1::zeros(2);
        assert!(m.step(4, h.view(), h.view()).is_err());
        assert!(m.step(0, bad.view(), h.view()).is_err());
        assert!(m.step(0, h.view(), bad.view()).is_err());
    }

    #[test]
    fn exp_neg_nll_is_product_of_step_probabilities() {
        let m = SeqModel::random(dims(6), 11).unwrap();
        let feature = [0.3, -0.7, 1.1, 0.05];
        let target = [2, 0, 4, 5];
        let nll = m.sequence_nll(&feature, &target).unwrap();

        let mut h = m.encode(&feature).unwrap();
        let mut c = Array1::zeros(5);
        let mut input = m.eos();
        let mut product = 1.0;
        for &s in &target {
            let out = m.step(input, h.view(), c.view()).unwrap();
            product *= softmax(out.logits.view())[s];
            h = out.hidden;
            c = out.cell;
            input = s;
        }
        assert!(((-nll).exp() - product).abs() < 1e-10);
    }

    #[test]
    fn gradient_returns_same_loss() {
        let m = SeqModel::random(dims(6), 5).unwrap();
        let feature = [0.1, 0.2, -0.3, 0.4];
        let (loss, _) = m.nll_and_gradient(&feature, &[1, 3, 5]).unwrap();
        let nll = m.sequence_nll(&feature, &[1, 3, 5]).unwrap();
        assert!((loss - nll).abs() < 1e-12);
    }
}
