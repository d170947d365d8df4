use std::collections::{BTreeSet, HashMap};

use super::units::TokenVector;
use crate::corpus::Label;
use crate::{Error, Result};

/// Reserved padding id.
pub const PAD: u32 = 0;

/// Node-class name to integer id. Known classes take 1..=V in
/// first-occurrence order; PAD is 0 and UNK is V+1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    classes: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build<'a>(vectors: impl IntoIterator<Item = &'a TokenVector>) -> Self {
        let mut v = Vocabulary::default();
        for t in vectors.into_iter().flat_map(|v| v.items.iter()) {
            let name = t.class.as_str();
            if !v.index.contains_key(name) {
                v.classes.push(name.to_string());
                v.index.insert(name.to_string(), v.classes.len() as u32);
            }
        }
        v
    }

    /// Rebuild from an ordered class list (id = position + 1).
    pub fn from_classes(classes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() || index.insert(c.clone(), i as u32 + 1).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "bad or duplicate vocabulary entry `{c}`"
                )));
            }
        }
        Ok(Vocabulary { classes, index })
    }

    /// Number of known classes, V.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn unk(&self) -> u32 {
        self.classes.len() as u32 + 1
    }

    /// Embedding rows needed: V known classes plus PAD and UNK.
    pub fn rows(&self) -> usize {
        self.classes.len() + 2
    }

    pub fn id(&self, class: &str) -> u32 {
        self.index.get(class).copied().unwrap_or_else(|| self.unk())
    }

    /// Inverse lookup; `None` for PAD, UNK and out-of-range ids.
    pub fn class(&self, id: u32) -> Option<&str> {
        (id >= 1)
            .then(|| self.classes.get(id as usize - 1))
            .flatten()
            .map(String::as_str)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

/// A unit encoded at a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub line_map: Vec<usize>,
    pub label: Label,
    pub truth_lines: BTreeSet<usize>,
    /// Items dropped from the tail because the vector exceeded `L_max`.
    pub truncated: usize,
}

impl EncodedSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Count of unpadded positions. Padding is always a contiguous tail.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }

    pub fn with_label(mut self, label: Label, truth_lines: BTreeSet<usize>) -> Self {
        self.label = label;
        self.truth_lines = truth_lines;
        self
    }
}

/// Map classes to ids, right-pad to `l_max` and truncate longer vectors.
pub fn encode(vector: &TokenVector, vocab: &Vocabulary, l_max: usize) -> EncodedSample {
    let keep = vector.items.len().min(l_max);
    let truncated = vector.items.len() - keep;
    if truncated > 0 {
        log::warn!(
            "unit `{}`: {} tokens exceed L_max={}, dropping {} from the tail",
            vector.unit_name,
            vector.items.len(),
            l_max,
            truncated
        );
    }
    let mut ids = vec![PAD; l_max];
    let mut mask = vec![false; l_max];
    let mut line_map = vec![0; l_max];
    for (i, t) in vector.items.iter().take(keep).enumerate() {
        ids[i] = vocab.id(t.class.as_str());
        mask[i] = true;
        line_map[i] = t.line;
    }
    EncodedSample {
        ids,
        mask,
        line_map,
        label: Label::Clean,
        truth_lines: BTreeSet::new(),
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{NodeClass, TokenItem};

    fn vector(items: &[(NodeClass, usize)]) -> TokenVector {
        TokenVector {
            items: items
                .iter()
                .map(|&(class, line)| TokenItem { class, line })
                .collect(),
            unit_name: "t".into(),
            start_line: 1,
            end_line: 10,
        }
    }

    #[test]
    fn first_occurrence_ids() {
        use NodeClass::*;
        let v = vector(&[(FuncDef, 1), (Compound, 1), (For, 2), (Compound, 2)]);
        let vocab = Vocabulary::build([&v]);
        assert_eq!(vocab.len(), 3);
        assert_eq!(
            (vocab.id("FuncDef"), vocab.id("Compound"), vocab.id("For")),
            (1, 2, 3)
        );
        assert_eq!(vocab.unk(), 4);
        assert_eq!(Vocabulary::build([&v]), vocab);
    }

    #[test]
    fn encode_pads_and_maps_lines() {
        use NodeClass::*;
        let v = vector(&[(For, 6), (Compound, 6), (Assignment, 8)]);
        let vocab =
            Vocabulary::from_classes(vec!["For".into(), "Compound".into(), "Assignment".into()])
                .unwrap();
        let e = encode(&v, &vocab, 5);
        assert_eq!(e.ids, [1, 2, 3, 0, 0]);
        assert_eq!(e.mask, [true, true, true, false, false]);
        assert_eq!(e.line_map, [6, 6, 8, 0, 0]);
        assert_eq!(e.valid_len(), 3);
        assert_eq!(e.truncated, 0);
    }

    #[test]
    fn unseen_class_maps_to_unk() {
        use NodeClass::*;
        let vocab = Vocabulary::from_classes(vec!["For".into()]).unwrap();
        let e = encode(&vector(&[(For, 1), (While, 2)]), &vocab, 3);
        assert_eq!(e.ids, [1, vocab.unk(), 0]);
        assert_eq!(vocab.class(vocab.unk()), None);
    }

    #[test]
    fn long_vectors_truncate_at_tail() {
        use NodeClass::*;
        let items: Vec<_> = (1..=7).map(|l| (ID, l)).collect();
        let v = vector(&items);
        let vocab = Vocabulary::build([&v]);
        let e = encode(&v, &vocab, 5);
        assert_eq!(e.ids.len(), 5);
        assert_eq!(e.truncated, 2);
        assert_eq!(e.line_map, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn duplicate_classes_rejected() {
        assert!(Vocabulary::from_classes(vec!["A".into(), "A".into()]).is_err());
    }
}
