//! Word/subword label alignment.
//!
//! Gold labels live on words. Tokenized, the first piece of a word carries
//! its `B-c`/`I-c` tag and continuation pieces carry `I-c` so that spans stay
//! contiguous for matching; the tagger loss only looks at first pieces.

use super::bio::{decode_bio, tag_to_bio, Bio, Span};
use super::conll::RawSentence;
use super::tokenizer::{Encoding, SubwordId, Tokenizer};
use crate::vocab::{TagId, TagVocabulary, VocabError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub words: Vec<String>,
    pub encoding: Encoding,
    /// One tag per subword position, `O` on the sentinels.
    pub gold_tags: Vec<TagId>,
    /// Gold spans over word indices.
    pub gold_spans: Vec<Span>,
}

impl LabeledSentence {
    pub fn new(raw: &RawSentence, tokenizer: &Tokenizer, vocab: &TagVocabulary) -> Result<Self, VocabError> {
        let encoding = tokenizer.encode(&raw.words);
        let mut gold_spans = Vec::with_capacity(raw.spans.len());
        for (s, e, c) in &raw.spans {
            gold_spans.push(Span::new(*s, *e, vocab.category(c)?));
        }
        let gold_tags = align_labels(&encoding, &gold_spans, vocab);
        Ok(LabeledSentence {
            words: raw.words.clone(),
            encoding,
            gold_tags,
            gold_spans,
        })
    }

    /// Unlabeled sentence, e.g. for prediction.
    pub fn unlabeled<S: AsRef<str>>(words: &[S], tokenizer: &Tokenizer) -> Self {
        let encoding = tokenizer.encode(words);
        let gold_tags = vec![TagId::O; encoding.len()];
        LabeledSentence {
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
            encoding,
            gold_tags,
            gold_spans: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.encoding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoding.is_empty()
    }

    pub fn subword_ids(&self) -> &[SubwordId] {
        &self.encoding.ids
    }

    /// Tagger targets: the gold tag on first pieces, `None` on sentinels and
    /// continuation pieces.
    pub fn loss_targets(&self) -> Vec<Option<TagId>> {
        (0..self.len())
            .map(|p| match self.encoding.subword_to_word[p] {
                Some(_) if !self.encoding.is_continuation(p) => Some(self.gold_tags[p]),
                _ => None,
            })
            .collect()
    }

    /// Gold spans expressed over subword positions.
    pub fn gold_token_spans(&self) -> Vec<Span> {
        self.gold_spans
            .iter()
            .map(|s| word_span_to_tokens(&self.encoding, *s))
            .collect()
    }
}

/// Maps a word span to the subword positions it covers.
pub fn word_span_to_tokens(encoding: &Encoding, span: Span) -> Span {
    let start = encoding.word_to_subword[span.start];
    let end = encoding
        .word_to_subword
        .get(span.end)
        .copied()
        .unwrap_or(encoding.len() - 1);
    Span::new(start, end, span.category)
}

/// Per-subword tags for word-level spans.
pub fn align_labels(encoding: &Encoding, spans: &[Span], vocab: &TagVocabulary) -> Vec<TagId> {
    let mut tags = vec![TagId::O; encoding.len()];
    for s in spans {
        let t = word_span_to_tokens(encoding, *s);
        for (p, tag) in tags.iter_mut().enumerate().take(t.end).skip(t.start) {
            *tag = if p == t.start {
                vocab.begin(s.category)
            } else {
                vocab.inside(s.category)
            };
        }
    }
    tags
}

/// Word-level spans read off the first piece of every word.
pub fn decode_use_first(encoding: &Encoding, tags: &[TagId], vocab: &TagVocabulary) -> Vec<Span> {
    let bio: Vec<Bio<_>> = encoding
        .word_to_subword
        .iter()
        .map(|&p| tag_to_bio(vocab, tags[p]))
        .collect();
    decode_bio(&bio)
        .0
        .into_iter()
        .map(|(s, e, c)| Span::new(s, e, c))
        .collect()
}

/// Drops trailing words until the encoded sentence fits in `max_len`
/// positions; spans cut by the boundary are dropped.
pub fn truncate_to_fit(raw: &RawSentence, tokenizer: &Tokenizer, max_len: usize) -> RawSentence {
    let mut used = 2;
    let mut keep = 0;
    for w in &raw.words {
        let n = tokenizer.tokenize_word(w).len();
        if used + n > max_len {
            break;
        }
        used += n;
        keep += 1;
    }
    RawSentence {
        words: raw.words[..keep].to_vec(),
        spans: raw.spans.iter().filter(|(_, e, _)| *e <= keep).cloned().collect(),
    }
}
