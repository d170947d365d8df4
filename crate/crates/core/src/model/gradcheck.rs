use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{cross_entropy, loss_and_gradients};
use super::forward::{forward, ForwardCache, Mode};
use super::{Hyperparams, ModelParams, Weights};
use crate::corpus::Label;
use crate::frontend::{EncodedSample, NodeClass, Vocabulary};
use crate::Result;

const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`
    pub rel_error: f64,
    pub checked: usize,
    /// Components skipped because a ±step perturbation flips a ReLU.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    /// Analytic gradients in `f64`.
    pub f64_tensors: Vec<TensorError>,
    /// Analytic gradients in `f32`, numeric reference in `f64` at the same
    /// (rounded) weights.
    pub f32_tensors: Vec<TensorError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.f64_tensors
            .iter()
            .map(|t| t.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn max_rel_error_f32(&self) -> f64 {
        self.f32_tensors
            .iter()
            .map(|t| t.rel_error)
            .fold(0.0, f64::max)
    }
}

/// Tiny model (V=20, d=8, F=4, windows 3/4/5, L_max=30) and a random
/// sample, both drawn from `seed`.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = NodeClass::ALL[..20]
        .iter()
        .map(|c| c.as_str().to_string())
        .collect();
    let vocab = Vocabulary::from_classes(classes)?;
    let hp = Hyperparams {
        embed_dim: 8,
        window_sizes: vec![3, 4, 5],
        filters: 4,
        dropout: 0.5,
        l_max: 30,
        seed,
        ..Default::default()
    };
    let mut params = ModelParams::<f64>::init(vocab, hp, &mut rng);
    let w = &mut params.weights;
    for b in &mut w.banks {
        b.bias
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.1..0.1));
    }
    w.dense
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-0.05..0.05));
    w.dense_bias
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-0.1..0.1));

    let sample = random_sample(&params, &mut rng);
    gradcheck_model(&params, &sample, seed)
}

fn random_sample(params: &ModelParams<f64>, rng: &mut impl Rng) -> EncodedSample {
    let l = params.hp.l_max;
    let valid = rng.gen_range(l / 2..=l);
    let top = params.vocab.unk();
    let ids: Vec<u32> = (0..l)
        .map(|i| if i < valid { rng.gen_range(1..=top) } else { 0 })
        .collect();
    let label = if rng.gen_bool(0.5) {
        Label::Buggy
    } else {
        Label::Clean
    };
    EncodedSample {
        mask: ids.iter().map(|&id| id != 0).collect(),
        line_map: (0..l).map(|i| if i < valid { i + 1 } else { 0 }).collect(),
        ids,
        truth_lines: if label == Label::Buggy {
            BTreeSet::from([1])
        } else {
            BTreeSet::new()
        },
        label,
        truncated: 0,
    }
}

/// Compare analytic gradients against central differences for every
/// parameter except the fixed PAD embedding row.
pub fn gradcheck_model(
    params: &ModelParams<f64>,
    sample: &EncodedSample,
    seed: u64,
) -> Result<GradcheckReport> {
    let run = |p: &ModelParams<f64>| -> Result<ForwardCache<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        forward(p, sample, Mode::Train, &mut rng)
    };
    let base = run(params)?;
    let (_, g64) = loss_and_gradients(params, sample, &base)?;

    let p32 = params.cast::<f32>();
    let at32 = p32.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c32 = forward(&p32, sample, Mode::Train, &mut rng)?;
    let (_, g32) = loss_and_gradients(&p32, sample, &c32)?;

    Ok(GradcheckReport {
        seed,
        f64_tensors: compare(params, &g64.cast(), sample, &run)?,
        f32_tensors: compare(&at32, &g32.cast(), sample, &run)?,
    })
}

fn active(c: &ForwardCache<f64>) -> Vec<bool> {
    c.acts.iter().flatten().map(|a| *a > 0.0).collect()
}

fn nudge(w: &mut Weights<f64>, tensor: usize, j: usize, delta: f64) {
    w.tensors_mut()[tensor].1[j] += delta;
}

fn compare(
    params: &ModelParams<f64>,
    analytic: &Weights<f64>,
    sample: &EncodedSample,
    run: &dyn Fn(&ModelParams<f64>) -> Result<ForwardCache<f64>>,
) -> Result<Vec<TensorError>> {
    let y = sample.label.index();
    let pattern = active(&run(params)?);
    let d = params.hp.embed_dim;
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (ti, (name, grad)) in analytic.tensors().into_iter().enumerate() {
        let skip_head = if ti == 0 { d } else { 0 };
        let (mut diff, mut amax, mut nmax) = (0.0f64, 0.0f64, 0.0f64);
        let (mut checked, mut skipped) = (0, 0);
        for (j, &a) in grad.iter().enumerate().skip(skip_head) {
            nudge(&mut probe.weights, ti, j, STEP);
            let plus = run(&probe)?;
            nudge(&mut probe.weights, ti, j, -2.0 * STEP);
            let minus = run(&probe)?;
            probe.weights.tensors_mut()[ti].1[j] = params.weights.tensors()[ti].1[j];
            if active(&plus) != pattern || active(&minus) != pattern {
                skipped += 1;
                continue;
            }
            let n =
                (cross_entropy(&plus.logits, y) - cross_entropy(&minus.logits, y)) / (2.0 * STEP);
            diff = diff.max((a - n).abs());
            amax = amax.max(a.abs());
            nmax = nmax.max(n.abs());
            checked += 1;
        }
        let scale = amax.max(nmax);
        out.push(TensorError {
            name,
            rel_error: if scale > 0.0 { diff / scale } else { 0.0 },
            checked,
            skipped,
        });
    }
    Ok(out)
}
