mod common;

use std::collections::BTreeMap;

use deeprace::corpus::{
    build_manifest, synth_corpus, CorpusEntry, Label, Manifest, PatternKind, Split, SynthSpec,
};
use deeprace::frontend::{lex, parse, units_of_source, NodeClass};
use deeprace::mutator::{apply_balanced_mutation, mutate, verify_mutation};
use proptest::prelude::*;

#[test]
fn every_pattern_mutates_soundly() {
    for pattern in PatternKind::ALL {
        for (clean, m) in common::source_pairs(60, pattern, 3) {
            verify_mutation(&clean, &m).unwrap_or_else(|e| panic!("{e}\n{clean}"));
            assert!(!m.truth_lines.is_empty());
            let lines = m.mutated_source.lines().count();
            assert!(m.truth_lines.iter().all(|&l| (1..=lines).contains(&l)));
            let again = mutate(&m.mutated_source, pattern).unwrap();
            if pattern == PatternKind::OmpPrivate {
                // Only one private clause per generated file.
                assert!(again.is_none(), "{}", m.mutated_source);
            }
        }
    }
}

#[test]
fn mutants_still_parse_without_unknown_nodes() {
    for pattern in PatternKind::ALL {
        for (_, m) in common::source_pairs(30, pattern, 8) {
            let root = parse(&lex(&m.mutated_source).unwrap()).unwrap();
            assert!(
                root.preorder().all(|n| n.class != NodeClass::Unknown),
                "{}",
                m.mutated_source
            );
        }
    }
}

#[test]
fn synthetic_corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_files: 40,
        pattern: PatternKind::OmpCritical,
        seed: 4,
        ..Default::default()
    };
    let entries = synth_corpus(&spec, dir.path()).unwrap();
    let m = build_manifest(entries, (0.8, 0.2, 0.0), 4).unwrap();
    let m = apply_balanced_mutation(&m, 0.5, 4).unwrap();
    let stats = m.stats().unwrap();
    assert_eq!((stats.buggy, stats.clean), (20, 20));
    assert_eq!((stats.train, stats.val, stats.test), (32, 8, 0));

    let path = dir.path().join("manifest.jsonl");
    m.write(&path).unwrap();
    let back = Manifest::read(&path).unwrap();
    assert_eq!(back.entries.len(), 40);
    for e in &back.entries {
        assert_eq!(e.truth_lines.is_empty(), e.label == Label::Clean);
        let src = std::fs::read_to_string(back.resolve(e)).unwrap();
        assert!(e.truth_lines.iter().all(|&l| l <= src.lines().count()));
        assert!(!units_of_source(&src, e.pattern).unwrap().is_empty());
    }
}

#[test]
fn manifest_rejects_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "{\"path\":\"a.c\",\"label\":\"clean\",\"pattern\":\"omp-private\",\"truth_lines\":[],\"split\":\"train\"}\nnot json\n").unwrap();
    match Manifest::read(&path) {
        Err(deeprace::Error::Manifest { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

fn entries(n_clean: usize) -> Vec<CorpusEntry> {
    (0..n_clean)
        .map(|i| CorpusEntry::clean(format!("f{i}.c"), PatternKind::OmpPrivate))
        .collect()
}

proptest! {
    #[test]
    fn manifest_preserves_entries_and_stratifies(
        n in 1usize..300,
        buggy_every in 2usize..7,
        train in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut input = entries(n);
        for (i, e) in input.iter_mut().enumerate() {
            if i % buggy_every == 0 {
                e.label = Label::Buggy;
                e.truth_lines.insert(1);
            }
        }
        let val = (1.0 - train) * 0.5;
        let test = 1.0 - train - val;
        let m = build_manifest(input.clone(), (train, val, test), seed).unwrap();

        let key = |e: &CorpusEntry| (e.path.clone(), e.label);
        let mut a: Vec<_> = input.iter().map(key).collect();
        let mut b: Vec<_> = m.entries.iter().map(key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);

        for label in [Label::Clean, Label::Buggy] {
            let total = m.entries.iter().filter(|e| e.label == label).count() as f64;
            let mut per: BTreeMap<Split, usize> = BTreeMap::new();
            for e in m.entries.iter().filter(|e| e.label == label) {
                *per.entry(e.split.unwrap()).or_default() += 1;
            }
            for (split, frac) in [(Split::Train, train), (Split::Val, val), (Split::Test, test)] {
                let got = *per.get(&split).unwrap_or(&0) as f64;
                prop_assert!((got - frac * total).abs() <= 1.0, "{:?} {:?}: {} vs {}", label, split, got, frac * total);
            }
        }
        prop_assert_eq!(m, build_manifest(input, (train, val, test), seed).unwrap());
    }
}

#[test]
fn balanced_mutation_is_within_one() {
    for n in [2usize, 7, 10, 33] {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_files: n,
            seed: n as u64,
            ..Default::default()
        };
        let e = synth_corpus(&spec, dir.path()).unwrap();
        let m = build_manifest(e, (0.8, 0.2, 0.0), 1).unwrap();
        let s = apply_balanced_mutation(&m, 0.5, 2)
            .unwrap()
            .stats()
            .unwrap();
        assert!(
            s.buggy.abs_diff(s.clean) <= 1,
            "n={n}: {} buggy, {} clean",
            s.buggy,
            s.clean
        );
    }
}
