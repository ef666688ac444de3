#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dylex::data::{LabeledSentence, RawSentence, SubwordId, Tokenizer, TokenizerOptions};
use dylex::lexicon::Lexicon;
use dylex::vocab::{CategoryId, TagId, TagVocabulary};
use rand::Rng;

pub const CATEGORIES: [&str; 3] = ["song", "singer", "place"];
pub const SPECIALS: usize = 4;

pub fn word(i: usize) -> String {
    format!("w{i}")
}

/// Tokenizer whose pieces are exactly the words `w0..w{n-1}`; word `i` gets id `4 + i`.
pub fn word_tokenizer(n: usize) -> Arc<Tokenizer> {
    let mut pieces: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().map(|s| s.to_string()).collect();
    pieces.extend((0..n).map(word));
    Arc::new(Tokenizer::from_pieces(pieces, TokenizerOptions::default()).unwrap())
}

pub fn vocab() -> TagVocabulary {
    TagVocabulary::new(CATEGORIES).unwrap()
}

pub fn id_of(w: usize) -> SubwordId {
    SubwordId((SPECIALS + w) as u32)
}

/// Entries as word-index sequences with a category index.
pub type Entries = Vec<(Vec<usize>, usize)>;

pub fn random_entries<R: Rng>(rng: &mut R, words: usize, count: usize, max_len: usize) -> Entries {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let ws = (0..len).map(|_| rng.gen_range(0..words)).collect();
            (ws, rng.gen_range(0..CATEGORIES.len()))
        })
        .collect()
}

pub fn surface(ws: &[usize]) -> String {
    ws.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" ")
}

pub fn build_lexicon(tok: &Arc<Tokenizer>, entries: &Entries) -> Lexicon {
    let mut lex = Lexicon::new(Arc::clone(tok), vocab());
    for (ws, c) in entries {
        lex.insert(&surface(ws), CATEGORIES[*c]).unwrap();
    }
    lex
}

/// Framed token ids for a random sentence: `[CLS] w.. [SEP]`.
pub fn random_sentence<R: Rng>(rng: &mut R, words: usize, len: usize) -> Vec<SubwordId> {
    let mut t = vec![Tokenizer::CLS];
    t.extend((0..len).map(|_| id_of(rng.gen_range(0..words))));
    t.push(Tokenizer::SEP);
    t
}

/// Every `(i, j, c)` with `tokens[i..j]` an entry of category `c`, by direct lookup.
pub fn brute_force(entries: &Entries, tokens: &[SubwordId]) -> BTreeSet<(usize, usize, CategoryId)> {
    let mut table: BTreeMap<Vec<SubwordId>, BTreeSet<usize>> = BTreeMap::new();
    for (ws, c) in entries {
        table.entry(ws.iter().map(|&w| id_of(w)).collect()).or_default().insert(*c);
    }
    let mut out = BTreeSet::new();
    for i in 0..tokens.len() {
        for j in i + 1..=tokens.len() {
            if let Some(cats) = table.get(&tokens[i..j]) {
                for &c in cats {
                    out.insert((i, j, CategoryId(c as u32)));
                }
            }
        }
    }
    out
}

/// Gold spans over positions, non-overlapping, with random categories.
pub fn random_spans<R: Rng>(rng: &mut R, len: usize, max_span: usize) -> Vec<(usize, usize, usize)> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if rng.gen_bool(0.35) {
            let l = rng.gen_range(1..=max_span).min(len - i);
            spans.push((i, i + l, rng.gen_range(0..CATEGORIES.len())));
            i += l;
        } else {
            i += 1;
        }
    }
    spans
}

/// BIO tag ids written out by hand: O = 0, B-c = 1 + 2c, I-c = 2 + 2c.
pub fn tags_by_hand(len: usize, spans: &[(usize, usize, usize)]) -> Vec<TagId> {
    let mut t = vec![TagId(0); len];
    for &(s, e, c) in spans {
        t[s] = TagId(1 + 2 * c as u32);
        for x in &mut t[s + 1..e] {
            *x = TagId(2 + 2 * c as u32);
        }
    }
    t
}

/// The running example: "taylor swift's sparks fly" with four overlapping matches.
pub struct RunningExample {
    pub tokenizer: Arc<Tokenizer>,
    pub vocab: TagVocabulary,
    pub lexicon: Lexicon,
    pub sentence: LabeledSentence,
}

pub fn running_example() -> RunningExample {
    let words = ["taylor", "swift's", "sparks", "fly"];
    let mut pieces: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().map(|s| s.to_string()).collect();
    pieces.extend(words.iter().map(|w| w.to_string()));
    let tokenizer = Arc::new(Tokenizer::from_pieces(pieces, TokenizerOptions::default()).unwrap());
    let vocab = TagVocabulary::new(["singer", "song", "movie"]).unwrap();
    let mut lexicon = Lexicon::new(Arc::clone(&tokenizer), vocab.clone());
    for (s, c) in [
        ("taylor", "song"),
        ("taylor swift's", "singer"),
        ("sparks fly", "song"),
        ("fly", "movie"),
    ] {
        lexicon.insert(s, c).unwrap();
    }
    let raw = RawSentence {
        words: words.iter().map(|w| w.to_string()).collect(),
        spans: vec![(0, 2, "singer".into()), (2, 4, "song".into())],
    };
    let sentence = LabeledSentence::new(&raw, &tokenizer, &vocab).unwrap();
    RunningExample {
        tokenizer,
        vocab,
        lexicon,
        sentence,
    }
}

pub const RUNNING_EXAMPLE_TSV: &str = "taylor\tsong\ntaylor swift's\tsinger\nsparks fly\tsong\nfly\tmovie\n";
