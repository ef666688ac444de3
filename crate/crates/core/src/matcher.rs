//! Lexicon matching over tokenized sentences.
//!
//! Every `(span, category)` hit becomes its own sentence-length tag sequence
//! with `B-c I-c …` over the span and `O` elsewhere. The tag sequences carry
//! no trace of the matched words.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::data::SubwordId;
use crate::lexicon::TrieSnapshot;
use crate::vocab::{CategoryId, TagId, TagVocabulary};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("gold tags cover {gold} positions but candidates cover {candidate}")]
    Alignment { gold: usize, candidate: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateTagSequence {
    pub tags: Vec<TagId>,
    pub start: usize,
    pub end: usize,
    pub category: CategoryId,
}

impl CandidateTagSequence {
    pub fn new(len: usize, start: usize, end: usize, category: CategoryId, vocab: &TagVocabulary) -> Self {
        let mut tags = vec![TagId::O; len];
        tags[start] = vocab.begin(category);
        for t in &mut tags[start + 1..end] {
            *t = vocab.inside(category);
        }
        CandidateTagSequence { tags, start, end, category }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn match_len(&self) -> usize {
        self.end - self.start
    }

    fn order_key(&self) -> (usize, usize, CategoryId) {
        (self.start, self.end, self.category)
    }
}

/// Longer first, then smaller category, then smaller end.
fn preference(a: &CandidateTagSequence, b: &CandidateTagSequence) -> Ordering {
    (Reverse(a.match_len()), a.category, a.end).cmp(&(Reverse(b.match_len()), b.category, b.end))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pub candidates: Vec<CandidateTagSequence>,
    pub denoise_labels: Option<Vec<bool>>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// One line per candidate: `start:end<TAB>category<TAB>label`, the label
    /// being `1`/`0` when denoising labels are present and `-` otherwise.
    pub fn dump(&self, vocab: &TagVocabulary) -> String {
        let mut out = String::new();
        for (i, c) in self.candidates.iter().enumerate() {
            let label = match &self.denoise_labels {
                Some(l) if l[i] => "1",
                Some(_) => "0",
                None => "-",
            };
            let _ = writeln!(out, "{}:{}\t{}\t{}", c.start, c.end, vocab.category_name(c.category), label);
        }
        out
    }
}

/// All lexicon hits in `tokens`, ordered by `(start, end, category)`.
pub fn fast_match(snapshot: &TrieSnapshot, tokens: &[SubwordId]) -> Vec<CandidateTagSequence> {
    let vocab = snapshot.vocab();
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for (end, cat) in snapshot.match_at(tokens, start) {
            out.push(CandidateTagSequence::new(tokens.len(), start, end, cat, vocab));
        }
    }
    out.sort_by_key(CandidateTagSequence::order_key);
    out
}

/// Keeps the `n` preferred candidates for every start position.
pub fn select_top_n(candidates: Vec<CandidateTagSequence>, n: usize) -> Vec<CandidateTagSequence> {
    assert!(n >= 1, "top-n needs n >= 1");
    let mut by_start: BTreeMap<usize, Vec<CandidateTagSequence>> = BTreeMap::new();
    for c in candidates {
        by_start.entry(c.start).or_default().push(c);
    }
    let mut out: Vec<_> = by_start
        .into_values()
        .flat_map(|mut group| {
            group.sort_by(preference);
            group.truncate(n);
            group
        })
        .collect();
    out.sort_by_key(CandidateTagSequence::order_key);
    out
}

/// Keeps the `dict_candidate` globally preferred candidates, in match order.
pub fn cap_candidates(mut candidates: Vec<CandidateTagSequence>, dict_candidate: usize) -> MatchSet {
    assert!(dict_candidate >= 1, "dict_candidate needs to be >= 1");
    if candidates.len() > dict_candidate {
        candidates.sort_by(preference);
        candidates.truncate(dict_candidate);
        candidates.sort_by_key(CandidateTagSequence::order_key);
    }
    MatchSet {
        candidates,
        denoise_labels: None,
    }
}

/// Matching, top-n selection and capping in one call.
pub fn match_sentence(snapshot: &TrieSnapshot, tokens: &[SubwordId], top_n: usize, dict_candidate: usize) -> MatchSet {
    cap_candidates(select_top_n(fast_match(snapshot, tokens), top_n), dict_candidate)
}

/// A candidate is positive iff the gold tags hold exactly its span and category.
pub fn derive_denoise_labels(
    candidates: &[CandidateTagSequence],
    gold: &[TagId],
    vocab: &TagVocabulary,
) -> Result<Vec<bool>, MatchError> {
    candidates
        .iter()
        .map(|c| {
            if c.tags.len() != gold.len() {
                return Err(MatchError::Alignment {
                    gold: gold.len(),
                    candidate: c.tags.len(),
                });
            }
            let inside = vocab.inside(c.category);
            let body = gold[c.start] == vocab.begin(c.category) && gold[c.start + 1..c.end].iter().all(|&t| t == inside);
            let closed = gold.get(c.end).is_none_or(|&t| t != inside);
            Ok(body && closed)
        })
        .collect()
}

impl MatchSet {
    pub fn with_labels(mut self, gold: &[TagId], vocab: &TagVocabulary) -> Result<Self, MatchError> {
        self.denoise_labels = Some(derive_denoise_labels(&self.candidates, gold, vocab)?);
        Ok(self)
    }
}
