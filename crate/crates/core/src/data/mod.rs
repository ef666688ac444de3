//! Corpus ingestion, tokenization and label alignment.

mod bio;
mod conll;
mod labels;
mod tokenizer;

pub use bio::{bio_to_tag, decode_bio, encode_bio, spans_from_tags, tag_to_bio, Bio, Span};
pub use conll::{parse_conll, parse_conll_str, write_conll, write_conll_to, ConllError, Corpus, RawSentence};
pub use labels::{align_labels, decode_use_first, truncate_to_fit, word_span_to_tokens, LabeledSentence};
pub use tokenizer::{
    Encoding, Segmentation, SubwordId, Tokenizer, TokenizerOptions, CLS_TOKEN, CONTINUATION, PAD_TOKEN, SEP_TOKEN,
    UNK_TOKEN,
};
