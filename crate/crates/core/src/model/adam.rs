use super::{Hyperparams, Weights};
use crate::Scalar;

/// Bias-corrected Adam. The first `d` embedding entries (the PAD row) are
/// never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    m: Weights<T>,
    v: Weights<T>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    pad_len: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &Weights<T>, hp: &Hyperparams) -> Self {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            lr: hp.learning_rate,
            beta1: hp.beta1,
            beta2: hp.beta2,
            epsilon: hp.epsilon,
            pad_len: hp.embed_dim,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Weights<T>, grads: &Weights<T>) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let c1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = T::of(self.lr);
        let eps = T::of(self.epsilon);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (ti, (((_, p), (_, g)), ((_, m), (_, v)))) in tensors.enumerate() {
            let skip = if ti == 0 { self.pad_len } else { 0 };
            for j in skip..p.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                p[j] -= lr * (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
            }
        }
    }
}
