mod common;

use common::{encode_all, labeled_samples, random_model, random_sample};
use deeprace::cam::cam_scores;
use deeprace::frontend::encode;
use deeprace::model::{fit, infer, load_model, save_model, Hyperparams, ModelParams, TrainOptions};
use deeprace::Model;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn cam_reconstructs_bias_free_logit(seed in 0u64..10_000, valid in 0usize..40) {
        let p: Model = random_model(seed, 40);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc), &p.vocab, 40, valid);
        let cache = infer(&p, &s).unwrap();
        let windows = p.hp.window_sizes.len() as f64;
        for c in 0..2 {
            let raw = cam_scores(&p, &s, c).unwrap();
            prop_assert_eq!(raw.len(), valid);
            let total: f64 = raw.iter().map(|r| *r as f64).sum();
            let target = (cache.logits[c] - p.weights.dense_bias[c]) as f64;
            prop_assert!((windows * total - target).abs() < 1e-3, "class {}: {} vs {}", c, windows * total, target);
        }
    }

    #[test]
    fn cam_is_linear_in_the_head(seed in 0u64..10_000) {
        let p: ModelParams<f64> = random_model(seed, 30);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(seed), &p.vocab, 30, 25);
        let r0 = cam_scores(&p, &s, 0).unwrap();
        let r1 = cam_scores(&p, &s, 1).unwrap();
        let mut summed = p.clone();
        let nf = p.hp.features();
        for k in 0..nf {
            summed.weights.dense[k] += p.weights.dense[nf + k];
        }
        let rs = cam_scores(&summed, &s, 0).unwrap();
        for i in 0..rs.len() {
            prop_assert!((rs[i] - (r0[i] + r1[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn cam_scores_are_local(seed in 0u64..10_000, pos in 0usize..30) {
        let p: ModelParams<f64> = random_model(seed, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sample(&mut rng, &p.vocab, 30, 30);
        let mut b = a.clone();
        b.ids[pos] = if a.ids[pos] == 1 { 2 } else { 1 };
        let (ra, rb) = (cam_scores(&p, &a, 1).unwrap(), cam_scores(&p, &b, 1).unwrap());
        let widest = *p.hp.window_sizes.last().unwrap();
        for j in 0..30usize {
            if j.abs_diff(pos) >= widest {
                prop_assert_eq!(ra[j], rb[j], "position {} moved after editing {}", j, pos);
            }
        }
    }

    #[test]
    fn padding_does_not_change_logits(seed in 0u64..10_000, valid in 5usize..40) {
        let short: Model = random_model(seed, 40);
        let mut long = short.clone();
        long.hp.l_max = 56;
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(seed), &short.vocab, 40, valid);
        let mut padded = s.clone();
        padded.ids.resize(56, 0);
        padded.mask.resize(56, false);
        padded.line_map.resize(56, 0);
        let (a, b) = (infer(&short, &s).unwrap(), infer(&long, &padded).unwrap());
        for c in 0..2 {
            prop_assert!((a.logits[c] - b.logits[c]).abs() < 1e-5);
        }
    }
}

#[test]
fn all_pad_sample_has_zero_cam() {
    let p: Model = random_model(3, 20);
    let s = random_sample(&mut ChaCha8Rng::seed_from_u64(0), &p.vocab, 20, 0);
    assert!(cam_scores(&p, &s, 1).unwrap().is_empty());
    let c = infer(&p, &s).unwrap();
    assert!(c.acts.iter().flatten().all(|a| *a == 0.0));
}

fn tiny_hp(epochs: usize) -> Hyperparams {
    Hyperparams {
        embed_dim: 8,
        filters: 8,
        epochs,
        batch_size: 8,
        l_max: 140,
        ..Default::default()
    }
}

#[test]
fn deterministic_training_ignores_thread_count() {
    let (vocab, vectors, labels) = labeled_samples(48, 5);
    let samples = encode_all(&vocab, &vectors, &labels, 140);
    let (train, val) = samples.split_at(40);
    let run = |jobs| {
        let opts = TrainOptions {
            deterministic: true,
            jobs: Some(jobs),
            chunk: 2,
        };
        fit::<f32>(train, val, vocab.clone(), tiny_hp(3), &opts).unwrap()
    };
    let (a, ra) = run(1);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ra.to_csv(), rb.to_csv());
    let d = a.hp.embed_dim;
    assert!(
        a.weights.embedding[..d].iter().all(|x| *x == 0.0),
        "PAD row moved"
    );
}

#[test]
fn training_reduces_loss_and_single_class_is_rejected() {
    let (vocab, vectors, labels) = labeled_samples(64, 9);
    let samples = encode_all(&vocab, &vectors, &labels, 140);
    let (train, val) = samples.split_at(48);
    let (_, report) = fit::<f32>(
        train,
        val,
        vocab.clone(),
        tiny_hp(8),
        &TrainOptions::default(),
    )
    .unwrap();
    let first = &report.epochs[0];
    let last = report.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{}", report.to_csv());

    let clean: Vec<_> = samples
        .iter()
        .filter(|s| s.label == deeprace::corpus::Label::Clean)
        .cloned()
        .collect();
    let err = fit::<f32>(&clean, val, vocab, tiny_hp(1), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, deeprace::Error::Training(_)));
}

#[test]
fn saved_model_predicts_identically() {
    let p: Model = random_model(11, 40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.drm");
    save_model(&p, &path).unwrap();
    let q = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for valid in 0..20 {
        let s = random_sample(&mut rng, &p.vocab, 40, valid * 2);
        let (a, b) = (infer(&p, &s).unwrap(), infer(&q, &s).unwrap());
        assert_eq!(a.probs[1].to_bits(), b.probs[1].to_bits());
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let (vocab, vectors, labels) = labeled_samples(200, 21);
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut p: Model = random_model(seed, 140);
        p.vocab = vocab.clone();
        p.weights.embedding = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = deeprace::model::Weights::<f32>::zeros(vocab.rows(), &p.hp);
            deeprace::model::init_weights(&mut w, &p.hp, &mut rng);
            w.embedding
        };
        let correct = vectors
            .iter()
            .zip(&labels)
            .filter(|(v, (l, _))| p.predict(&encode(v, &vocab, 140)).unwrap().0 == *l)
            .count();
        accs.push(correct as f64 / vectors.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "{accs:?}");
}
