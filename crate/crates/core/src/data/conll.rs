//! Two-column CoNLL reader and writer.
//!
//! One `token label` pair per line (space or tab separated; with more
//! columns, the first is the token and the last the label), sentences
//! separated by blank lines.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::bio::{decode_bio, encode_bio, Bio};

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A sentence before tokenization; span categories are still names.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawSentence {
    pub words: Vec<String>,
    /// Half-open word ranges with their category name (`""` for bare `B`/`I`).
    pub spans: Vec<(usize, usize, String)>,
}

impl RawSentence {
    pub fn labels(&self) -> Vec<String> {
        encode_bio(self.words.len(), &self.spans)
            .into_iter()
            .map(|b| match b {
                Bio::O => "O".to_string(),
                Bio::B(c) if c.is_empty() => "B".to_string(),
                Bio::I(c) if c.is_empty() => "I".to_string(),
                Bio::B(c) => format!("B-{c}"),
                Bio::I(c) => format!("I-{c}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<RawSentence>,
    /// Number of `I` labels that did not continue a span and were read as `B`.
    pub repaired: usize,
}

impl Corpus {
    pub fn categories(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for s in &self.sentences {
            for (_, _, c) in &s.spans {
                if !c.is_empty() && !seen.contains(c) {
                    seen.push(c.clone());
                }
            }
        }
        seen
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.words.iter().map(String::as_str))
    }
}

fn parse_label(label: &str) -> Option<Bio<String>> {
    if label == "O" {
        return Some(Bio::O);
    }
    let (prefix, cat) = match label.split_once('-') {
        Some((p, c)) if !c.is_empty() => (p, c),
        Some(_) => return None,
        None => (label, ""),
    };
    match prefix {
        "B" => Some(Bio::B(cat.to_string())),
        "I" => Some(Bio::I(cat.to_string())),
        _ => None,
    }
}

pub fn parse_conll_str(text: &str) -> Result<Corpus, ConllError> {
    let mut corpus = Corpus::default();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let flush = |words: &mut Vec<String>, tags: &mut Vec<Bio<String>>, corpus: &mut Corpus| {
        if words.is_empty() {
            return;
        }
        let (spans, repaired) = decode_bio(tags);
        corpus.repaired += repaired;
        corpus.sentences.push(RawSentence {
            words: std::mem::take(words),
            spans,
        });
        tags.clear();
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut corpus);
            continue;
        }
        let fields: Vec<&str> = line.split([' ', '\t']).filter(|f| !f.is_empty()).collect();
        if fields.len() < 2 {
            return Err(ConllError::Parse {
                line: i + 1,
                message: format!("expected `token label`, got `{line}`"),
            });
        }
        let label = fields[fields.len() - 1];
        let tag = parse_label(label).ok_or_else(|| ConllError::Parse {
            line: i + 1,
            message: format!("not a BIO label: `{label}`"),
        })?;
        words.push(fields[0].to_string());
        tags.push(tag);
    }
    flush(&mut words, &mut tags, &mut corpus);
    Ok(corpus)
}

pub fn parse_conll(path: &Path) -> Result<Corpus, ConllError> {
    parse_conll_str(&fs::read_to_string(path)?)
}

pub fn write_conll_to<W: Write>(mut w: W, sentences: &[RawSentence]) -> io::Result<()> {
    for (k, s) in sentences.iter().enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        for (word, label) in s.words.iter().zip(s.labels()) {
            writeln!(w, "{word}\t{label}")?;
        }
    }
    w.flush()
}

pub fn write_conll(path: &Path, sentences: &[RawSentence]) -> io::Result<()> {
    let f = io::BufWriter::new(fs::File::create(path)?);
    write_conll_to(f, sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_one_span() {
        let c = parse_conll_str("Liverpool B-ORG\nwon O\n").unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.sentences[0].spans, vec![(0, 1, "ORG".to_string())]);
    }

    #[test]
    fn blank_file_is_empty_corpus() {
        assert!(parse_conll_str("\n\n  \n").unwrap().sentences.is_empty());
        assert!(parse_conll_str("").unwrap().sentences.is_empty());
    }

    #[test]
    fn bad_label_names_its_line() {
        let err = parse_conll_str("a O\n\nb X-PER\n").unwrap_err();
        assert!(matches!(err, ConllError::Parse { line: 3, .. }), "{err}");
        assert!(parse_conll_str("a B-\n").is_err());
        assert!(parse_conll_str("lonely\n").is_err());
    }

    #[test]
    fn repairs_are_counted() {
        let c = parse_conll_str("a I-PER\nb I-PER\nc O\n").unwrap();
        assert_eq!(c.repaired, 1);
        assert_eq!(c.sentences[0].spans, vec![(0, 2, "PER".to_string())]);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let text = "EU\tB-ORG\nrejects\tO\nGerman\tB-MISC\ncall\tO\n\nPeter\tB-PER\nBlackburn\tI-PER\n";
        let c = parse_conll_str(text).unwrap();
        let mut out = Vec::new();
        write_conll_to(&mut out, &c.sentences).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
