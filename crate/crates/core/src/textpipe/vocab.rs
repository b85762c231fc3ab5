use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub(crate) const PAD_TOKEN: &str = "<pad>";
pub(crate) const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id mapping. Ids 0 and 1 are reserved for padding and unknown
/// tokens; corpus tokens start at 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_count: usize,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_ordered(r.tokens, r.min_count)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            min_count: v.min_count,
            tokens: v.tokens[2..].to_vec(),
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized documents. Ids are assigned by
    /// descending frequency, ties broken by lexicographic order.
    pub fn build<I, D, S>(docs: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            for tok in doc {
                *freq.entry(tok.as_ref().to_owned()).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_ordered(
            kept.into_iter().map(|(t, _)| t).collect(),
            min_count,
        ))
    }

    /// Vocabulary whose corpus tokens take ids 2, 3, … in the given order.
    pub fn from_ordered(tokens: Vec<String>, min_count: usize) -> Self {
        let mut all = Vec::with_capacity(tokens.len() + 2);
        all.push(PAD_TOKEN.to_owned());
        all.push(UNK_TOKEN.to_owned());
        all.extend(tokens);
        let ids = all
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            ids,
            tokens: all,
            min_count,
        }
    }

    /// Number of ids, including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Id of `token`, or [`UNK`] when out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus tokens in id order, starting at id 2.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Maps tokens to ids, truncating to `max_len` or right-padding with PAD.
/// Returns `(ids, mask)` where mask is 1 on real tokens.
pub fn encode<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    max_len: usize,
) -> (Vec<usize>, Vec<u8>) {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    (ids, mask)
}

/// Inverse of [`encode`] over the unmasked prefix.
pub fn decode(ids: &[usize], mask: &[u8], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .zip(mask)
        .take_while(|(_, &m)| m == 1)
        .filter_map(|(&i, _)| vocab.token(i).map(str::to_owned))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::tokenize;
    use proptest::prelude::*;

    fn corpus(docs: &[&str]) -> Vec<Vec<String>> {
        docs.iter().map(|d| tokenize(d)).collect()
    }

    #[test]
    fn ids_by_frequency_then_lexicographic() {
        let v = Vocabulary::build(corpus(&["a b b", "b c"]), 1).unwrap();
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.get("a"), Some(3));
        assert_eq!(v.get("c"), Some(4));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build(corpus(&["a b b", "b c"]), 2).unwrap();
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.len(), 3);
        assert_eq!(v.min_count(), 2);
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let v = Vocabulary::build(Vec::<Vec<String>>::new(), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.is_empty());
        assert!(matches!(
            Vocabulary::build(corpus(&["a"]), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknowns() {
        let v = Vocabulary::build(corpus(&["a b c d e f g"]), 1).unwrap();
        let (ids, mask) = encode(&["a", "b", "c"], &v, 5);
        assert_eq!(&ids[3..], &[PAD, PAD]);
        assert_eq!(mask, [1, 1, 1, 0, 0]);

        let seven = ["a", "b", "c", "d", "e", "f", "g"];
        let (ids, mask) = encode(&seven, &v, 5);
        let first5: Vec<usize> = seven[..5].iter().map(|t| v.id(t)).collect();
        assert_eq!(ids, first5);
        assert_eq!(mask, [1; 5]);

        let (ids, _) = encode(&["zzz"], &v, 2);
        assert_eq!(ids, [UNK, PAD]);
    }

    #[test]
    fn pad_and_unk_are_never_token_ids() {
        let v = Vocabulary::build(corpus(&["<pad> <unk> x"]), 1).unwrap();
        assert!(v.get("<pad>").unwrap() >= 2);
        assert!(v.get("<unk>").unwrap() >= 2);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(
            docs in proptest::collection::vec(proptest::collection::vec("[a-f]{1,3}", 0..12), 1..6),
            max_len in 1usize..15,
        ) {
            let v = Vocabulary::build(&docs, 1).unwrap();
            let v2 = Vocabulary::build(&docs, 1).unwrap();
            prop_assert_eq!(&v, &v2);
            for doc in &docs {
                let (ids, mask) = encode(doc, &v, max_len);
                prop_assert_eq!(ids.len(), max_len);
                // post-padding: prefix of 1s, PAD exactly where mask is 0
                let real = mask.iter().take_while(|&&m| m == 1).count();
                prop_assert!(mask[real..].iter().all(|&m| m == 0));
                for (i, m) in ids.iter().zip(&mask) {
                    prop_assert_eq!(*m == 0, *i == PAD);
                }
                if doc.len() <= max_len {
                    prop_assert_eq!(&decode(&ids, &mask, &v), doc);
                }
            }
        }
    }
}
