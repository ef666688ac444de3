//! BIO span encoding and decoding.

use crate::vocab::{CategoryId, TagId, TagKind, TagVocabulary};

/// A labeled half-open span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: CategoryId,
}

impl Span {
    pub fn new(start: usize, end: usize, category: CategoryId) -> Self {
        Span { start, end, category }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<C> {
    O,
    B(C),
    I(C),
}

/// Decodes a BIO sequence into spans. An `I-c` that does not continue a
/// `c` span opens a new span, as if it were `B-c`; the number of such
/// repairs is returned alongside the spans.
pub fn decode_bio<C: Clone + PartialEq>(tags: &[Bio<C>]) -> (Vec<(usize, usize, C)>, usize) {
    let mut spans = Vec::new();
    let mut open: Option<(usize, C)> = None;
    let mut repaired = 0;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Bio::O => {
                if let Some((s, c)) = open.take() {
                    spans.push((s, i, c));
                }
            }
            Bio::B(c) => {
                if let Some((s, prev)) = open.take() {
                    spans.push((s, i, prev));
                }
                open = Some((i, c.clone()));
            }
            Bio::I(c) => match &open {
                Some((_, prev)) if prev == c => {}
                _ => {
                    if let Some((s, prev)) = open.take() {
                        spans.push((s, i, prev));
                    }
                    repaired += 1;
                    open = Some((i, c.clone()));
                }
            },
        }
    }
    if let Some((s, c)) = open {
        spans.push((s, tags.len(), c));
    }
    (spans, repaired)
}

/// Encodes non-overlapping spans over `len` positions.
pub fn encode_bio<C: Clone>(len: usize, spans: &[(usize, usize, C)]) -> Vec<Bio<C>> {
    let mut tags = vec![Bio::O; len];
    for (s, e, c) in spans {
        for (k, t) in tags.iter_mut().enumerate().take(*e).skip(*s) {
            *t = if k == *s { Bio::B(c.clone()) } else { Bio::I(c.clone()) };
        }
    }
    tags
}

pub fn tag_to_bio(vocab: &TagVocabulary, tag: TagId) -> Bio<CategoryId> {
    match vocab.kind(tag) {
        TagKind::Begin(c) => Bio::B(c),
        TagKind::Inside(c) => Bio::I(c),
        TagKind::Outside | TagKind::Pad => Bio::O,
    }
}

pub fn bio_to_tag(vocab: &TagVocabulary, bio: Bio<CategoryId>) -> TagId {
    match bio {
        Bio::O => TagId::O,
        Bio::B(c) => vocab.begin(c),
        Bio::I(c) => vocab.inside(c),
    }
}

/// Spans of a tag-id sequence.
pub fn spans_from_tags(vocab: &TagVocabulary, tags: &[TagId]) -> Vec<Span> {
    let bio: Vec<_> = tags.iter().map(|&t| tag_to_bio(vocab, t)).collect();
    decode_bio(&bio)
        .0
        .into_iter()
        .map(|(s, e, c)| Span::new(s, e, c))
        .collect()
}
