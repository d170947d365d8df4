#![allow(dead_code)]

use std::collections::BTreeSet;

use deeprace::corpus::{Label, PatternKind, SynthSpec};
use deeprace::frontend::{encode, units_of_source, EncodedSample, NodeClass, Vocabulary};
use deeprace::model::{Hyperparams, ModelParams};
use deeprace::mutator::mutate;
use deeprace::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_vocab(n: usize) -> Vocabulary {
    Vocabulary::from_classes(
        NodeClass::ALL[..n]
            .iter()
            .map(|c| c.as_str().to_string())
            .collect(),
    )
    .unwrap()
}

/// Random weights everywhere, including the dense head that training
/// initializes to zero.
pub fn random_model<T: Scalar>(seed: u64, l_max: usize) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hp = Hyperparams {
        embed_dim: 6,
        filters: 5,
        l_max,
        seed,
        ..Default::default()
    };
    let mut p = ModelParams::init(small_vocab(20), hp, &mut rng);
    for (name, t) in p.weights.tensors_mut() {
        if name != "E" && !name.starts_with("W_") {
            t.iter_mut()
                .for_each(|x| *x = T::of(rng.gen_range(-0.5..0.5)));
        }
    }
    p
}

pub fn random_sample(
    rng: &mut impl Rng,
    vocab: &Vocabulary,
    l_max: usize,
    valid: usize,
) -> EncodedSample {
    let ids: Vec<u32> = (0..l_max)
        .map(|i| {
            if i < valid {
                rng.gen_range(1..=vocab.unk())
            } else {
                0
            }
        })
        .collect();
    EncodedSample {
        mask: ids.iter().map(|&id| id != 0).collect(),
        line_map: (0..l_max)
            .map(|i| if i < valid { 1 + i / 3 } else { 0 })
            .collect(),
        ids,
        label: Label::Clean,
        truth_lines: BTreeSet::new(),
        truncated: 0,
    }
}

/// `(clean, mutated)` source pairs from the synthetic generator.
pub fn source_pairs(
    n: usize,
    pattern: PatternKind,
    seed: u64,
) -> Vec<(String, deeprace::mutator::MutationResult)> {
    let spec = SynthSpec {
        n_files: n,
        pattern,
        seed,
        ..Default::default()
    };
    deeprace::corpus::synth_sources(&spec)
        .unwrap()
        .into_iter()
        .map(|s| {
            let m = mutate(&s, pattern)
                .unwrap()
                .expect("generated file has a site");
            (s, m)
        })
        .collect()
}

/// Labeled single-unit samples: even indices clean, odd indices mutated.
pub fn labeled_samples(
    n: usize,
    seed: u64,
) -> (
    Vocabulary,
    Vec<deeprace::frontend::TokenVector>,
    Vec<(Label, BTreeSet<usize>)>,
) {
    let pairs = source_pairs(n, PatternKind::OmpPrivate, seed);
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (i, (clean, m)) in pairs.iter().enumerate() {
        let (src, label, truth) = if i % 2 == 0 {
            (clean.as_str(), Label::Clean, BTreeSet::new())
        } else {
            (
                m.mutated_source.as_str(),
                Label::Buggy,
                m.truth_lines.clone(),
            )
        };
        let mut units = units_of_source(src, PatternKind::OmpPrivate).unwrap();
        assert_eq!(units.len(), 1);
        vectors.push(units.remove(0));
        labels.push((label, truth));
    }
    let vocab = Vocabulary::build(&vectors);
    (vocab, vectors, labels)
}

pub fn encode_all(
    vocab: &Vocabulary,
    vectors: &[deeprace::frontend::TokenVector],
    labels: &[(Label, BTreeSet<usize>)],
    l_max: usize,
) -> Vec<EncodedSample> {
    vectors
        .iter()
        .zip(labels)
        .map(|(v, (l, t))| encode(v, vocab, l_max).with_label(*l, t.clone()))
        .collect()
}
