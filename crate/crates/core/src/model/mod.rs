//! Multi-window convolutional classifier over node-class id sequences.
//!
//! embedding → one same-padded convolution per window size → ReLU → mask →
//! global sum pooling → concatenation → dropout → dense → softmax.
//! Gradients are derived by hand; see `backward.rs`.

mod adam;
mod backward;
mod forward;
mod gradcheck;
mod io;
mod train;

pub use adam::Adam;
pub use backward::{backward, loss_and_gradients};
#[cfg(test)]
pub(crate) use forward::tests::tiny as tiny_model;
pub use forward::{forward, infer, ForwardCache, Mode};
pub use gradcheck::{gradcheck, gradcheck_model, GradcheckReport, TensorError};
pub use io::{load_model, read_model, save_model, write_model, MAGIC};
pub use train::{
    fit, init_weights, predict, train, EpochMetrics, TrainOptions, TrainReport, METRICS_HEADER,
};

use rand::Rng;

use crate::corpus::Label;
use crate::frontend::{EncodedSample, Vocabulary, PAD};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub embed_dim: usize,
    pub window_sizes: Vec<usize>,
    pub filters: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Encoded length. Zero until training fixes it to the longest
    /// training vector.
    pub l_max: usize,
    pub threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embed_dim: 64,
            window_sizes: vec![3, 4, 5],
            filters: 512,
            dropout: 0.5,
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            l_max: 0,
            threshold: 0.5,
        }
    }
}

impl Hyperparams {
    /// Checks that hold before `l_max` is known.
    pub fn validate_shape(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.embed_dim == 0 || self.filters == 0 {
            return bad("embed_dim and filters must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.window_sizes.is_empty() || self.window_sizes.contains(&0) {
            return bad("window sizes must be nonempty and at least 1".into());
        }
        if self.window_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("window sizes must be strictly ascending".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return bad("optimizer settings out of range".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let widest = *self.window_sizes.last().unwrap();
        if self.l_max < widest {
            return Err(Error::InvalidArgument(format!(
                "l_max {} is shorter than the widest window {widest}",
                self.l_max
            )));
        }
        Ok(())
    }

    /// Length of the pooled feature vector, windows × filters.
    pub fn features(&self) -> usize {
        self.window_sizes.len() * self.filters
    }
}

/// One convolution bank. `weights` is laid out `[filter][offset][channel]`,
/// so a filter's window is a contiguous `window × d` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank<T> {
    pub window: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvBank<T> {
    /// Slice of filter `k`.
    pub fn filter(&self, k: usize) -> &[T] {
        let n = self.weights.len() / self.bias.len();
        &self.weights[k * n..(k + 1) * n]
    }
}

/// Trainable tensors. The same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    /// `(V + 2) × d`, row 0 is PAD and stays zero.
    pub embedding: Vec<T>,
    pub banks: Vec<ConvBank<T>>,
    /// `2 × (windows·F)`, row-major by class.
    pub dense: Vec<T>,
    pub dense_bias: Vec<T>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(rows: usize, hp: &Hyperparams) -> Self {
        let d = hp.embed_dim;
        Weights {
            embedding: vec![T::zero(); rows * d],
            banks: hp
                .window_sizes
                .iter()
                .map(|&s| ConvBank {
                    window: s,
                    weights: vec![T::zero(); hp.filters * s * d],
                    bias: vec![T::zero(); hp.filters],
                })
                .collect(),
            dense: vec![T::zero(); 2 * hp.features()],
            dense_bias: vec![T::zero(); 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut()
            .into_iter()
            .for_each(|(_, t)| t.iter_mut().for_each(|x| *x = T::zero()));
        z
    }

    /// Every tensor in serialization order, with a display name.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![("E".into(), &self.embedding)];
        for b in &self.banks {
            out.push((format!("W_{}", b.window), &b.weights));
            out.push((format!("b_{}", b.window), &b.bias));
        }
        out.push(("W_out".into(), &self.dense));
        out.push(("b_out".into(), &self.dense_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = vec![("E".into(), &mut self.embedding)];
        for b in &mut self.banks {
            out.push((format!("W_{}", b.window), &mut b.weights));
            out.push((format!("b_{}", b.window), &mut b.bias));
        }
        out.push(("W_out".into(), &mut self.dense));
        out.push(("b_out".into(), &mut self.dense_bias));
        out
    }

    pub fn add_assign(&mut self, other: &Weights<T>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors_mut()
            .into_iter()
            .for_each(|(_, t)| t.iter_mut().for_each(|x| *x *= s));
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        Weights {
            embedding: conv(&self.embedding),
            banks: self
                .banks
                .iter()
                .map(|b| ConvBank {
                    window: b.window,
                    weights: conv(&b.weights),
                    bias: conv(&b.bias),
                })
                .collect(),
            dense: conv(&self.dense),
            dense_bias: conv(&self.dense_bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub weights: Weights<T>,
    pub vocab: Vocabulary,
    pub hp: Hyperparams,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: uniform with variance 1/fan-in for the
    /// embedding and convolutions, zero biases, zero dense head.
    pub fn init(vocab: Vocabulary, hp: Hyperparams, rng: &mut impl Rng) -> Self {
        let mut w = Weights::zeros(vocab.rows(), &hp);
        init_weights(&mut w, &hp, rng);
        ModelParams {
            weights: w,
            vocab,
            hp,
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let hp = &self.hp;
        let d = hp.embed_dim;
        let w = &self.weights;
        let ok = w.embedding.len() == self.vocab.rows() * d
            && w.banks.len() == hp.window_sizes.len()
            && w.banks.iter().zip(&hp.window_sizes).all(|(b, &s)| {
                b.window == s && b.weights.len() == hp.filters * s * d && b.bias.len() == hp.filters
            })
            && w.dense.len() == 2 * hp.features()
            && w.dense_bias.len() == 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "weights disagree with hyperparameters and vocabulary".into(),
            ))
        }
    }

    pub fn check_sample(&self, sample: &EncodedSample) -> Result<()> {
        if sample.ids.len() != self.hp.l_max || sample.mask.len() != sample.ids.len() {
            return Err(Error::Shape(format!(
                "sample has length {}, model expects {}",
                sample.ids.len(),
                self.hp.l_max
            )));
        }
        let rows = self.vocab.rows() as u32;
        if let Some(bad) = sample.ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Shape(format!(
                "token id {bad} outside vocabulary of {rows} rows"
            )));
        }
        Ok(())
    }

    /// Same model, different element type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            weights: self.weights.cast(),
            vocab: self.vocab.clone(),
            hp: self.hp.clone(),
        }
    }

    pub fn predict(&self, sample: &EncodedSample) -> Result<(Label, f64)> {
        predict(self, sample)
    }
}

pub(crate) fn pad_row_is_zero<T: Scalar>(w: &Weights<T>, d: usize) -> bool {
    w.embedding[PAD as usize * d..(PAD as usize + 1) * d]
        .iter()
        .all(|x| x.is_zero())
}
