use rand::Rng;

use super::ModelParams;
use crate::frontend::EncodedSample;
use crate::scalar::dot;
use crate::{Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    Infer,
}

/// Intermediate values of one forward pass, kept for backprop and CAM.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    /// Embedded input, `len × d`. Rows past `valid` are zero.
    pub x: Vec<T>,
    /// Per bank, post-ReLU post-mask activations laid out `[filter][position]`.
    pub acts: Vec<Vec<T>>,
    /// Masked sum over positions, banks concatenated in window order.
    pub pooled: Vec<T>,
    /// Dropout multiplier per pooled unit: 0 or 1/(1-rate), all 1 at inference.
    pub keep: Vec<T>,
    pub dropped: Vec<T>,
    pub logits: [T; 2],
    pub probs: [T; 2],
    pub valid: usize,
    pub len: usize,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn prob_buggy(&self) -> T {
        self.probs[1]
    }

    /// Activation of pooled unit `k` (bank-major) at position `i`.
    pub fn act(&self, k: usize, i: usize) -> T {
        let f = self.acts[0].len() / self.len.max(1);
        self.acts[k / f][(k % f) * self.len + i]
    }
}

/// Window rows `[lo, hi)` of filter offsets that land inside the valid
/// input for output position `i`.
#[inline]
pub(crate) fn window_range(i: usize, s: usize, valid: usize) -> (usize, usize) {
    let lp = (s - 1) / 2;
    let lo = lp.saturating_sub(i);
    let hi = s.min((valid + lp).saturating_sub(i));
    (lo, hi.max(lo))
}

pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ForwardCache<T>> {
    params.check_sample(sample)?;
    let hp = &params.hp;
    let w = &params.weights;
    let d = hp.embed_dim;
    let f = hp.filters;
    let len = sample.ids.len();
    let valid = sample.valid_len();

    let mut x = vec![T::zero(); len * d];
    for (i, &id) in sample.ids[..valid].iter().enumerate() {
        let row = id as usize * d;
        x[i * d..(i + 1) * d].copy_from_slice(&w.embedding[row..row + d]);
    }

    let mut acts = Vec::with_capacity(w.banks.len());
    let mut pooled = Vec::with_capacity(hp.features());
    for bank in &w.banks {
        let s = bank.window;
        let lp = (s - 1) / 2;
        let mut a = vec![T::zero(); f * len];
        for k in 0..f {
            let filter = bank.filter(k);
            let row = &mut a[k * len..(k + 1) * len];
            let mut h = T::zero();
            for (i, out) in row.iter_mut().enumerate().take(valid) {
                let (lo, hi) = window_range(i, s, valid);
                let start = i + lo - lp;
                let pre = bank.bias[k]
                    + dot(
                        &filter[lo * d..hi * d],
                        &x[start * d..(start + hi - lo) * d],
                    );
                if pre > T::zero() {
                    *out = pre;
                    h += pre;
                }
            }
            pooled.push(h);
        }
        acts.push(a);
    }

    let keep: Vec<T> = match mode {
        Mode::Train if hp.dropout > 0.0 => {
            let scale = T::of(1.0 / (1.0 - hp.dropout));
            (0..pooled.len())
                .map(|_| {
                    if rng.gen::<f64>() < hp.dropout {
                        T::zero()
                    } else {
                        scale
                    }
                })
                .collect()
        }
        _ => vec![T::one(); pooled.len()],
    };
    let dropped: Vec<T> = pooled.iter().zip(&keep).map(|(h, k)| *h * *k).collect();

    let n = dropped.len();
    let logits = [
        w.dense_bias[0] + dot(&w.dense[..n], &dropped),
        w.dense_bias[1] + dot(&w.dense[n..], &dropped),
    ];
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    let probs = [e[0] / z, e[1] / z];

    Ok(ForwardCache {
        x,
        acts,
        pooled,
        keep,
        dropped,
        logits,
        probs,
        valid,
        len,
    })
}

/// Inference-mode forward pass.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
) -> Result<ForwardCache<T>> {
    forward(
        params,
        sample,
        Mode::Infer,
        &mut rand::rngs::mock::StepRng::new(0, 0),
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::frontend::Vocabulary;
    use crate::model::{ConvBank, Hyperparams, Weights};
    use std::collections::BTreeSet;

    /// V=4, d=2, F=1, one window of 2, L_max=3, hand-set weights.
    pub(crate) fn tiny() -> ModelParams<f64> {
        let vocab =
            Vocabulary::from_classes(["A", "B", "C", "D"].map(String::from).to_vec()).unwrap();
        let hp = Hyperparams {
            embed_dim: 2,
            window_sizes: vec![2],
            filters: 1,
            dropout: 0.0,
            l_max: 3,
            ..Default::default()
        };
        let weights = Weights {
            embedding: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0, 0.5, 0.5],
            banks: vec![ConvBank {
                window: 2,
                weights: vec![1.0, 2.0, -1.0, 1.0],
                bias: vec![0.5],
            }],
            dense: vec![1.0, -2.0],
            dense_bias: vec![0.1, -0.1],
        };
        ModelParams { weights, vocab, hp }
    }

    fn sample(ids: &[u32], valid: usize) -> EncodedSample {
        EncodedSample {
            ids: ids.to_vec(),
            mask: (0..ids.len()).map(|i| i < valid).collect(),
            line_map: (0..ids.len())
                .map(|i| if i < valid { i + 1 } else { 0 })
                .collect(),
            label: Label::Clean,
            truth_lines: BTreeSet::new(),
            truncated: 0,
        }
    }

    #[test]
    fn hand_computed_logits() {
        // ids [1, 2, 3]: rows (1,0), (0,1), (1,1). Window of 2, no left pad.
        // pos0: 0.5 + (1*1 + 2*0) + (-1*0 + 1*1) = 2.5
        // pos1: 0.5 + (1*0 + 2*1) + (-1*1 + 1*1) = 2.5
        // pos2: 0.5 + (1*1 + 2*1) + 0 (border) = 3.5
        // H = 8.5, z = (0.1 + 8.5, -0.1 - 17)
        let p = tiny();
        let c = infer(&p, &sample(&[1, 2, 3], 3)).unwrap();
        assert_eq!(c.acts[0], vec![2.5, 2.5, 3.5]);
        assert_eq!(c.pooled, vec![8.5]);
        assert!((c.logits[0] - 8.6).abs() < 1e-12);
        assert!((c.logits[1] + 17.1).abs() < 1e-12);
    }

    #[test]
    fn relu_and_mask_zero_activations() {
        // ids [4, 1, PAD]: rows (-1,2), (1,0).
        // pos0: 0.5 + (-1 + 4) + (-1 + 0) = 2.5; pos1: 0.5 + 1 + border 0 = 1.5; pos2 masked.
        let p = tiny();
        let c = infer(&p, &sample(&[4, 1, 0], 2)).unwrap();
        assert_eq!(c.acts[0], vec![2.5, 1.5, 0.0]);
        let mut neg = tiny();
        neg.weights.banks[0].bias[0] = -10.0;
        let c = infer(&neg, &sample(&[4, 1, 0], 2)).unwrap();
        assert_eq!(c.acts[0], vec![0.0; 3]);
    }

    #[test]
    fn all_pad_gives_softmax_of_bias() {
        let p = tiny();
        let c = infer(&p, &sample(&[0, 0, 0], 0)).unwrap();
        assert!(c.acts[0].iter().all(|a| *a == 0.0));
        assert_eq!(c.logits, [0.1, -0.1]);
        let e = (0.2f64).exp();
        assert!((c.probs[0] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = tiny();
        assert!(infer(&p, &sample(&[1, 2], 2)).is_err());
        assert!(infer(&p, &sample(&[1, 9, 0], 2)).is_err());
    }

    #[test]
    fn window_ranges() {
        // s = 5, left pad 2, 4 valid positions.
        assert_eq!(window_range(0, 5, 4), (2, 5));
        assert_eq!(window_range(1, 5, 4), (1, 5));
        assert_eq!(window_range(3, 5, 4), (0, 3));
        assert_eq!(window_range(0, 1, 1), (0, 1));
    }
}
