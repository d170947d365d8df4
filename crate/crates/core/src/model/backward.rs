use super::forward::{window_range, ForwardCache};
use super::{ModelParams, Weights};
use crate::frontend::{EncodedSample, PAD};
use crate::scalar::axpy;
use crate::{Error, Result, Scalar};

/// Cross-entropy `-log S[label]`, computed through logsumexp.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T; 2], label: usize) -> T {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label]
}

/// Loss plus a fresh gradient set.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
    cache: &ForwardCache<T>,
) -> Result<(T, Weights<T>)> {
    let mut grads = params.weights.zeros_like();
    let loss = backward(params, sample, cache, &mut grads)?;
    Ok((loss, grads))
}

/// Accumulate this sample's gradients into `grads` and return its loss.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
    cache: &ForwardCache<T>,
    grads: &mut Weights<T>,
) -> Result<T> {
    let y = sample.label.index();
    let loss = cross_entropy(&cache.logits, y);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss.as_f64()));
    }
    let hp = &params.hp;
    let w = &params.weights;
    let d = hp.embed_dim;
    let f = hp.filters;
    let n = cache.dropped.len();
    let (len, valid) = (cache.len, cache.valid);

    let dz = [
        cache.probs[0] - if y == 0 { T::one() } else { T::zero() },
        cache.probs[1] - if y == 1 { T::one() } else { T::zero() },
    ];
    for (c, &g) in dz.iter().enumerate() {
        grads.dense_bias[c] += g;
        axpy(g, &cache.dropped, &mut grads.dense[c * n..(c + 1) * n]);
    }
    let dh: Vec<T> = (0..n)
        .map(|k| (dz[0] * w.dense[k] + dz[1] * w.dense[n + k]) * cache.keep[k])
        .collect();

    let mut dx = vec![T::zero(); len * d];
    for (b, bank) in w.banks.iter().enumerate() {
        let s = bank.window;
        let lp = (s - 1) / 2;
        let acts = &cache.acts[b];
        let gbank = &mut grads.banks[b];
        for k in 0..f {
            let g = dh[b * f + k];
            if g.is_zero() {
                continue;
            }
            let filter = bank.filter(k);
            let span = s * d;
            let gfilter = &mut gbank.weights[k * span..(k + 1) * span];
            for i in 0..valid {
                if acts[k * len + i] <= T::zero() {
                    continue;
                }
                gbank.bias[k] += g;
                let (lo, hi) = window_range(i, s, valid);
                let start = (i + lo - lp) * d;
                let end = start + (hi - lo) * d;
                axpy(g, &cache.x[start..end], &mut gfilter[lo * d..hi * d]);
                axpy(g, &filter[lo * d..hi * d], &mut dx[start..end]);
            }
        }
    }

    for (i, &id) in sample.ids[..valid].iter().enumerate() {
        if id == PAD {
            continue;
        }
        let row = id as usize * d;
        let (src, dst) = (&dx[i * d..(i + 1) * d], &mut grads.embedding[row..row + d]);
        dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_limits() {
        assert!((cross_entropy(&[0.0f64, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cross_entropy(&[-50.0f64, 50.0], 1) < 1e-40);
        assert!((cross_entropy(&[-50.0f64, 50.0], 0) - 100.0).abs() < 1e-9);
    }
}
