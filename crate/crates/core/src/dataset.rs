//! Manifest entries turned into labeled units and encoded samples.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::corpus::{Label, Manifest, PatternKind, Split};
use crate::frontend::{encode, units_of_source, EncodedSample, TokenVector, Vocabulary};
use crate::{Error, Result};

/// One unit of one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub path: PathBuf,
    pub entry: usize,
    pub split: Option<Split>,
    pub vector: TokenVector,
    pub label: Label,
    /// File truth lines that fall inside this unit.
    pub truth_lines: BTreeSet<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub units: Vec<Unit>,
    /// Files the frontend rejected, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(move |u| u.split == Some(split))
    }
}

/// A unit of a buggy file is buggy when its line range holds a truth line.
pub fn unit_label(
    file_label: Label,
    file_truth: &BTreeSet<usize>,
    vector: &TokenVector,
) -> (Label, BTreeSet<usize>) {
    let truth: BTreeSet<usize> = file_truth
        .iter()
        .copied()
        .filter(|&l| vector.contains_line(l))
        .collect();
    match file_label {
        Label::Buggy if !truth.is_empty() => (Label::Buggy, truth),
        _ => (Label::Clean, BTreeSet::new()),
    }
}

/// Units of one source text with their labels.
pub fn source_units(
    source: &str,
    pattern: PatternKind,
    label: Label,
    truth: &BTreeSet<usize>,
) -> Result<Vec<(TokenVector, Label, BTreeSet<usize>)>> {
    Ok(units_of_source(source, pattern)?
        .into_iter()
        .map(|v| {
            let (l, t) = unit_label(label, truth, &v);
            (v, l, t)
        })
        .collect())
}

/// Units of one file, or the file and why the frontend rejected it.
type FileUnits = std::result::Result<Vec<Unit>, (PathBuf, String)>;

/// Read and parse every entry in `splits`. I/O failures abort; frontend
/// failures skip the file with a warning.
pub fn load_units(manifest: &Manifest, splits: &[Split]) -> Result<Dataset> {
    let per_entry: Vec<Result<FileUnits>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .filter(|(_, e)| e.split.is_some_and(|s| splits.contains(&s)))
        .map(|(i, e)| {
            let path = manifest.resolve(e);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let source = String::from_utf8_lossy(&bytes);
            match source_units(&source, e.pattern, e.label, &e.truth_lines) {
                Ok(units) => Ok(Ok(units
                    .into_iter()
                    .map(|(vector, label, truth_lines)| Unit {
                        path: path.clone(),
                        entry: i,
                        split: e.split,
                        vector,
                        label,
                        truth_lines,
                    })
                    .collect())),
                Err(err) if err.is_frontend() => Ok(Err((path, err.to_string()))),
                Err(err) => Err(err),
            }
        })
        .collect();
    let mut data = Dataset::default();
    for r in per_entry {
        match r? {
            Ok(units) => data.units.extend(units),
            Err((path, why)) => {
                log::warn!("skipping {}: {why}", path.display());
                data.skipped.push((path, why));
            }
        }
    }
    Ok(data)
}

pub fn encode_unit(unit: &Unit, vocab: &Vocabulary, l_max: usize) -> EncodedSample {
    encode(&unit.vector, vocab, l_max).with_label(unit.label, unit.truth_lines.clone())
}
