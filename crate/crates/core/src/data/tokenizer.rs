//! Corpus-built subword tokenizer with greedy longest-match segmentation.
//!
//! Word-initial pieces are stored verbatim and word-internal pieces carry the
//! `##` continuation marker. Every single character seen at build time is in
//! the vocabulary in both forms, so any word made of known characters
//! segments without falling back to `[UNK]`.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubwordId(pub u32);

impl SubwordId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const CONTINUATION: &str = "##";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];
const MAX_PIECE_CHARS: usize = 16;

/// How raw text is split into words before subword segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Segmentation {
    /// Split on Unicode whitespace.
    #[default]
    Whitespace,
    /// Every non-whitespace character is its own word (Chinese-style input).
    Characters,
}

impl Segmentation {
    pub fn as_str(self) -> &'static str {
        match self {
            Segmentation::Whitespace => "whitespace",
            Segmentation::Characters => "characters",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "whitespace" => Some(Segmentation::Whitespace),
            "characters" | "chars" => Some(Segmentation::Characters),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenizerOptions {
    pub segmentation: Segmentation,
    /// Case folding, applied identically to lexicon entries and sentences.
    pub lowercase: bool,
}

/// Subword ids of one sentence, framed by `[CLS]` and `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<SubwordId>,
    /// Index into `ids` of the first piece of each word.
    pub word_to_subword: Vec<usize>,
    /// Word index of every position; `None` for the sentinels.
    pub subword_to_word: Vec<Option<usize>>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when position `pos` continues a word started earlier.
    pub fn is_continuation(&self, pos: usize) -> bool {
        match self.subword_to_word[pos] {
            Some(w) => self.word_to_subword[w] != pos,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pieces: Vec<String>,
    index: HashMap<String, SubwordId>,
    options: TokenizerOptions,
    max_piece_chars: usize,
}

impl Tokenizer {
    pub const PAD: SubwordId = SubwordId(0);
    pub const UNK: SubwordId = SubwordId(1);
    pub const CLS: SubwordId = SubwordId(2);
    pub const SEP: SubwordId = SubwordId(3);

    /// Builds a vocabulary of at most `vocab_size` pieces from word counts:
    /// the special tokens, every character (initial and continuation forms),
    /// then the most frequent multi-character substrings. Characters are
    /// always kept, so the result may exceed `vocab_size` when the character
    /// inventory alone is larger.
    pub fn build<'a, I>(words: I, vocab_size: usize, options: TokenizerOptions) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for w in words {
            for word in split_words_with(w, options) {
                *freq.entry(word).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = freq.into_iter().collect();
        words.sort();

        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut chars: Vec<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        for c in &chars {
            pieces.push(c.to_string());
            pieces.push(format!("{CONTINUATION}{c}"));
        }

        let mut counts: HashMap<String, usize> = HashMap::new();
        for (w, f) in &words {
            let cs: Vec<char> = w.chars().collect();
            for start in 0..cs.len() {
                let stop = (start + MAX_PIECE_CHARS).min(cs.len());
                for end in start + 2..=stop {
                    let s: String = cs[start..end].iter().collect();
                    let piece = if start == 0 { s } else { format!("{CONTINUATION}{s}") };
                    *counts.entry(piece).or_default() += f;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = vocab_size.saturating_sub(pieces.len());
        pieces.extend(ranked.into_iter().take(room).map(|(p, _)| p));
        Self::from_pieces(pieces, options).expect("built vocabulary is well formed")
    }

    /// Vocabulary from an explicit piece list; the first four pieces must be
    /// the special tokens in canonical order.
    pub fn from_pieces(pieces: Vec<String>, options: TokenizerOptions) -> io::Result<Self> {
        if pieces.len() < SPECIALS.len() || pieces[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("vocabulary must start with {}", SPECIALS.join(", ")),
            ));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), SubwordId(i as u32)).is_some() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("duplicate piece `{p}` on line {}", i + 1),
                ));
            }
            let n = p.strip_prefix(CONTINUATION).unwrap_or(p).chars().count();
            max_piece_chars = max_piece_chars.max(n);
        }
        Ok(Tokenizer {
            pieces,
            index,
            options,
            max_piece_chars,
        })
    }

    /// Reads a vocabulary file: one piece per line, id = line number.
    pub fn load(path: &Path, options: TokenizerOptions) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_pieces(text.lines().map(str::to_string).collect(), options)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = self.pieces.join("\n");
        out.push('\n');
        fs::write(path, out)
    }

    pub fn options(&self) -> TokenizerOptions {
        self.options
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: SubwordId) -> &str {
        &self.pieces[id.index()]
    }

    pub fn id(&self, piece: &str) -> Option<SubwordId> {
        self.index.get(piece).copied()
    }

    /// 64-bit FNV-1a digest of the pieces and options; two tokenizers with the
    /// same fingerprint segment identically.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.pieces {
            feed(p.as_bytes());
            feed(b"\n");
        }
        feed(self.options.segmentation.as_str().as_bytes());
        feed(&[self.options.lowercase as u8]);
        h
    }

    pub fn split_words(&self, text: &str) -> Vec<String> {
        split_words_with(text, self.options)
    }

    /// Greedy longest-match-first segmentation of one word.
    pub fn tokenize_word(&self, word: &str) -> Vec<SubwordId> {
        let word = if self.options.lowercase { word.to_lowercase() } else { word.to_string() };
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < chars.len() {
            let mut found = None;
            let longest = (start + self.max_piece_chars).min(chars.len());
            for end in (start + 1..=longest).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(Self::UNK);
                    start += 1;
                }
            }
        }
        out
    }

    /// Subword ids of raw text without sentinels, as stored in the lexicon.
    pub fn tokenize_text(&self, text: &str) -> Vec<SubwordId> {
        self.split_words(text)
            .iter()
            .flat_map(|w| self.tokenize_word(w))
            .collect()
    }

    /// Encodes a word sequence, framing it with `[CLS]` … `[SEP]`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Encoding {
        let mut ids = vec![Self::CLS];
        let mut word_to_subword = Vec::with_capacity(words.len());
        let mut subword_to_word = vec![None];
        for (wi, w) in words.iter().enumerate() {
            let pieces = self.tokenize_word(w.as_ref());
            word_to_subword.push(ids.len());
            for p in pieces {
                ids.push(p);
                subword_to_word.push(Some(wi));
            }
        }
        ids.push(Self::SEP);
        subword_to_word.push(None);
        Encoding {
            ids,
            word_to_subword,
            subword_to_word,
        }
    }

    /// Inverse of segmentation: concatenates pieces, stripping continuation markers.
    pub fn detokenize_word(&self, ids: &[SubwordId]) -> String {
        ids.iter()
            .map(|&id| {
                let p = self.piece(id);
                p.strip_prefix(CONTINUATION).unwrap_or(p)
            })
            .collect()
    }
}

fn split_words_with(text: &str, options: TokenizerOptions) -> Vec<String> {
    let fold = |s: &str| if options.lowercase { s.to_lowercase() } else { s.to_string() };
    match options.segmentation {
        Segmentation::Whitespace => text.split_whitespace().map(fold).collect(),
        Segmentation::Characters => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| fold(&c.to_string()))
            .collect(),
    }
}
