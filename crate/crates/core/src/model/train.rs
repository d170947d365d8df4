use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::backward::{backward, cross_entropy};
use super::forward::{forward, infer, Mode};
use super::{Adam, Hyperparams, ModelParams, Weights};
use crate::corpus::{Label, Manifest, Split};
use crate::dataset::{encode_unit, load_units};
use crate::frontend::{EncodedSample, Vocabulary, PAD};
use crate::{Error, Result, Scalar};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Fixed chunking and ordered gradient reduction, so results do not
    /// depend on the thread count.
    pub deterministic: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Samples per work item in deterministic mode.
    pub chunk: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            deterministic: true,
            jobs: None,
            chunk: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    /// Per-epoch CSV. Wall time is left out so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Uniform init with variance 1/fan-in (embedding rows use d), zero biases
/// and a zero dense head. The PAD row stays zero.
pub fn init_weights<T: Scalar>(w: &mut Weights<T>, hp: &Hyperparams, rng: &mut impl Rng) {
    let d = hp.embed_dim;
    let mut fill = |t: &mut [T], fan_in: usize| {
        let a = (3.0 / fan_in as f64).sqrt();
        t.iter_mut().for_each(|x| *x = T::of(rng.gen_range(-a..a)));
    };
    fill(&mut w.embedding[(PAD as usize + 1) * d..], d);
    for b in &mut w.banks {
        fill(&mut b.weights, b.window * d);
        b.bias.iter_mut().for_each(|x| *x = T::zero());
    }
    w.dense.iter_mut().for_each(|x| *x = T::zero());
    w.dense_bias.iter_mut().for_each(|x| *x = T::zero());
}

/// Label from `prob_buggy ≥ threshold`.
pub fn predict<T: Scalar>(params: &ModelParams<T>, sample: &EncodedSample) -> Result<(Label, f64)> {
    let p = infer(params, sample)?.prob_buggy().as_f64();
    let label = if p >= params.hp.threshold {
        Label::Buggy
    } else {
        Label::Clean
    };
    Ok((label, p))
}

/// Load, encode and fit the train/val splits of a manifest.
pub fn train(
    manifest: &Manifest,
    mut hp: Hyperparams,
    opts: &TrainOptions,
) -> Result<(ModelParams<f32>, TrainReport)> {
    hp.validate_shape()?;
    let data = load_units(manifest, &[Split::Train, Split::Val])?;
    let train_units: Vec<_> = data.split(Split::Train).collect();
    let val_units: Vec<_> = data.split(Split::Val).collect();
    if train_units.is_empty() || val_units.is_empty() {
        return Err(Error::Training(format!(
            "need nonempty train and val splits, got {} and {} units",
            train_units.len(),
            val_units.len()
        )));
    }
    let vocab = Vocabulary::build(train_units.iter().map(|u| &u.vector));
    if hp.l_max == 0 {
        let longest = train_units
            .iter()
            .map(|u| u.vector.len())
            .max()
            .unwrap_or(1);
        hp.l_max = longest.max(*hp.window_sizes.last().unwrap());
    }
    log::info!(
        "{} train / {} val units, V = {}, L_max = {}",
        train_units.len(),
        val_units.len(),
        vocab.len(),
        hp.l_max
    );
    let train_samples: Vec<_> = train_units
        .iter()
        .map(|u| encode_unit(u, &vocab, hp.l_max))
        .collect();
    let val_samples: Vec<_> = val_units
        .iter()
        .map(|u| encode_unit(u, &vocab, hp.l_max))
        .collect();
    fit(&train_samples, &val_samples, vocab, hp, opts)
}

struct Partial<T> {
    grads: Weights<T>,
    loss: f64,
    correct: usize,
}

fn merge<T: Scalar>(mut a: Partial<T>, b: Partial<T>) -> Partial<T> {
    a.grads.add_assign(&b.grads);
    a.loss += b.loss;
    a.correct += b.correct;
    a
}

/// Train on encoded samples. Returns the parameters after the last epoch.
pub fn fit<T: Scalar>(
    train: &[EncodedSample],
    val: &[EncodedSample],
    vocab: Vocabulary,
    hp: Hyperparams,
    opts: &TrainOptions,
) -> Result<(ModelParams<T>, TrainReport)> {
    hp.validate()?;
    if train.is_empty() || train.iter().all(|s| s.label == train[0].label) {
        return Err(Error::Training(
            "training split must contain both labels".into(),
        ));
    }
    match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Training(e.to_string()))?
            .install(|| fit_inner(train, val, vocab, hp, opts)),
        None => fit_inner(train, val, vocab, hp, opts),
    }
}

fn fit_inner<T: Scalar>(
    train: &[EncodedSample],
    val: &[EncodedSample],
    vocab: Vocabulary,
    hp: Hyperparams,
    opts: &TrainOptions,
) -> Result<(ModelParams<T>, TrainReport)> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ModelParams::<T>::init(vocab, hp, &mut init_rng);
    let mut order_rng = ChaCha8Rng::seed_from_u64(params.hp.seed);
    order_rng.set_stream(u64::MAX);
    let mut adam = Adam::new(&params.weights, &params.hp);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=params.hp.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(params.hp.batch_size) {
            let chunk = if opts.deterministic {
                opts.chunk.max(1)
            } else {
                batch.len().div_ceil(rayon::current_num_threads()).max(1)
            };
            let run = |ids: &[usize]| -> Result<Partial<T>> {
                let mut p = Partial {
                    grads: params.weights.zeros_like(),
                    loss: 0.0,
                    correct: 0,
                };
                for &i in ids {
                    let mut rng = ChaCha8Rng::seed_from_u64(params.hp.seed);
                    rng.set_stream(((epoch as u64) << 32) | i as u64);
                    let cache = forward(&params, &train[i], Mode::Train, &mut rng)?;
                    p.loss += backward(&params, &train[i], &cache, &mut p.grads)?.as_f64();
                    let predicted = cache.prob_buggy().as_f64() >= params.hp.threshold;
                    p.correct += usize::from(predicted == (train[i].label == Label::Buggy));
                }
                Ok(p)
            };
            let total = if opts.deterministic {
                let parts: Vec<Partial<T>> =
                    batch.par_chunks(chunk).map(run).collect::<Result<_>>()?;
                parts.into_iter().reduce(merge).expect("batch is nonempty")
            } else {
                batch
                    .par_chunks(chunk)
                    .map(run)
                    .reduce_with(|a, b| Ok(merge(a?, b?)))
                    .expect("batch is nonempty")?
            };
            loss_sum += total.loss;
            correct += total.correct;
            let mut grads = total.grads;
            grads.scale(T::of(1.0 / batch.len() as f64));
            adam.step(&mut params.weights, &grads);
        }
        if !params.weights.is_finite() {
            return Err(Error::Training(format!(
                "weights became non-finite in epoch {epoch}"
            )));
        }

        let evals: Vec<(f64, bool)> = val
            .par_iter()
            .map(|s| {
                let c = infer(&params, s)?;
                let loss = cross_entropy(&c.logits, s.label.index()).as_f64();
                let predicted = c.prob_buggy().as_f64() >= params.hp.threshold;
                Ok((loss, predicted == (s.label == Label::Buggy)))
            })
            .collect::<Result<_>>()?;
        let n_val = evals.len().max(1) as f64;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: evals.iter().map(|e| e.0).sum::<f64>() / n_val,
            val_acc: evals.iter().filter(|e| e.1).count() as f64 / n_val,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_loss,
            m.val_acc,
            m.seconds
        );
        report.epochs.push(m);
    }
    Ok((params, report))
}
