use std::collections::BTreeSet;

use dylex::data::{
    decode_bio, decode_use_first, encode_bio, parse_conll_str, truncate_to_fit, write_conll_to, Bio, LabeledSentence,
    RawSentence, Segmentation, Tokenizer, TokenizerOptions, CONTINUATION,
};
use dylex::vocab::{TagId, TagVocabulary};
use proptest::prelude::*;

const CATS: [&str; 3] = ["PER", "LOC", "ORG"];

fn word_strategy() -> impl Strategy<Value = String> {
    "[a-zé]{1,9}"
}

fn sentence_strategy() -> impl Strategy<Value = RawSentence> {
    prop::collection::vec((word_strategy(), 0u8..4, 1usize..4), 1..14).prop_map(|items| {
        let mut words = Vec::new();
        let mut spans = Vec::new();
        for (w, kind, len) in items {
            let start = words.len();
            words.push(w.clone());
            if kind < 3 {
                for k in 1..len {
                    words.push(format!("{w}{k}"));
                }
                spans.push((start, words.len(), CATS[kind as usize].to_string()));
            }
        }
        RawSentence { words, spans }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bio_round_trip(len in 0usize..30, raw in prop::collection::vec((0usize..30, 1usize..5, 0u8..3), 0..8)) {
        let mut spans: Vec<(usize, usize, u8)> = Vec::new();
        let mut taken = vec![false; len];
        for (s, l, c) in raw {
            let e = (s + l).min(len);
            if s < e && !taken[s..e].iter().any(|t| *t) {
                taken[s..e].iter_mut().for_each(|t| *t = true);
                spans.push((s, e, c));
            }
        }
        spans.sort();
        let tags = encode_bio(len, &spans);
        let (back, repaired) = decode_bio(&tags);
        prop_assert_eq!(repaired, 0);
        prop_assert_eq!(back, spans);
    }

    #[test]
    fn conll_write_then_parse_is_identity(sents in prop::collection::vec(sentence_strategy(), 1..6)) {
        let mut buf = Vec::new();
        write_conll_to(&mut buf, &sents).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let corpus = parse_conll_str(&text).unwrap();
        prop_assert_eq!(corpus.repaired, 0);
        prop_assert_eq!(&corpus.sentences, &sents);
        let mut again = Vec::new();
        write_conll_to(&mut again, &corpus.sentences).unwrap();
        prop_assert_eq!(String::from_utf8(again).unwrap(), text);
    }

    #[test]
    fn alignment_round_trips_spans(sent in sentence_strategy(), budget in 0usize..60) {
        let corpus_words: Vec<&str> = sent.words.iter().map(String::as_str).collect();
        let tok = Tokenizer::build(corpus_words.iter().copied().take(3), 4 + budget, TokenizerOptions::default());
        let vocab = TagVocabulary::new(CATS).unwrap();
        let s = LabeledSentence::new(&sent, &tok, &vocab).unwrap();
        let enc = &s.encoding;
        // monotone and total
        prop_assert_eq!(enc.word_to_subword.len(), sent.words.len());
        prop_assert!(enc.word_to_subword.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(enc.ids[0], Tokenizer::CLS);
        prop_assert_eq!(*enc.ids.last().unwrap(), Tokenizer::SEP);
        // use_first decoding recovers the gold spans
        prop_assert_eq!(decode_use_first(enc, &s.gold_tags, &vocab), s.gold_spans.clone());
        // continuation pieces are masked, first pieces are not
        let targets = s.loss_targets();
        for p in 0..s.len() {
            let first = enc.word_to_subword.contains(&p);
            prop_assert_eq!(targets[p].is_some(), first);
        }
        // every token span covers whole words
        for sp in s.gold_token_spans() {
            prop_assert_eq!(s.gold_tags[sp.start], vocab.begin(sp.category));
            prop_assert!(s.gold_tags[sp.start + 1..sp.end].iter().all(|&t| t == vocab.inside(sp.category)));
        }
    }

    #[test]
    fn tokenizer_covers_every_word(corpus in prop::collection::vec(word_strategy(), 1..20), probe in "[a-zé]{1,12}", size in 0usize..80) {
        let tok = Tokenizer::build(corpus.iter().map(String::as_str), size, TokenizerOptions::default());
        let a = tok.tokenize_word(&probe);
        prop_assert!(!a.is_empty());
        prop_assert_eq!(&a, &tok.tokenize_word(&probe));
        let known: BTreeSet<char> = corpus.iter().flat_map(|w| w.chars()).collect();
        if probe.chars().all(|c| known.contains(&c)) {
            prop_assert!(!a.contains(&Tokenizer::UNK));
            prop_assert_eq!(tok.detokenize_word(&a), probe.clone());
        }
        for (i, id) in a.iter().enumerate() {
            if *id != Tokenizer::UNK {
                prop_assert_eq!(tok.piece(*id).starts_with(CONTINUATION), i > 0);
            }
        }
    }
}

#[test]
fn one_subword_per_word_gives_identity_alignment() {
    let words = ["anna", "met", "bob"];
    let pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "anna", "met", "bob"].map(String::from).to_vec();
    let tok = Tokenizer::from_pieces(pieces, TokenizerOptions::default()).unwrap();
    let enc = tok.encode(&words);
    assert_eq!(enc.word_to_subword, [1, 2, 3]);
}

#[test]
fn split_word_keeps_type_on_first_piece_only() {
    let pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "wil", "##hel", "##mina", "met"]
        .map(String::from)
        .to_vec();
    let tok = Tokenizer::from_pieces(pieces, TokenizerOptions::default()).unwrap();
    let vocab = TagVocabulary::new(["PER"]).unwrap();
    let raw = RawSentence {
        words: vec!["wilhelmina".into(), "met".into()],
        spans: vec![(0, 1, "PER".into())],
    };
    let s = LabeledSentence::new(&raw, &tok, &vocab).unwrap();
    assert_eq!(s.len(), 6);
    let labels: Vec<String> = s.gold_tags.iter().map(|&t| vocab.label(t)).collect();
    assert_eq!(labels, ["O", "B-PER", "I-PER", "I-PER", "O", "O"]);
    assert_eq!(s.loss_targets(), [None, Some(TagId(1)), None, None, Some(TagId::O), None]);
}

#[test]
fn stray_inside_labels_are_repaired() {
    let corpus = parse_conll_str("a\tI-PER\nb\tI-PER\nc\tO\nd\tI-LOC\n\n").unwrap();
    assert_eq!(corpus.repaired, 2);
    assert_eq!(
        corpus.sentences[0].spans,
        [(0, 2, "PER".to_string()), (3, 4, "LOC".to_string())]
    );
    let tags = [Bio::I("x"), Bio::O, Bio::B("x"), Bio::I("y")];
    assert_eq!(decode_bio(&tags), (vec![(0, 1, "x"), (2, 3, "x"), (3, 4, "y")], 2));
}

#[test]
fn conll_columns_and_errors() {
    let c = parse_conll_str("Paris NNP I-NP B-LOC\nis VBZ I-VP O\n\n\nok O\n").unwrap();
    assert_eq!(c.sentences.len(), 2);
    assert_eq!(c.sentences[0].words, ["Paris", "is"]);
    assert_eq!(c.sentences[0].spans, [(0, 1, "LOC".to_string())]);
    assert!(parse_conll_str("lonely\n").is_err());
    assert!(parse_conll_str("x\tQ-PER\n").is_err());
}

#[test]
fn character_segmentation_makes_every_character_a_word() {
    let opts = TokenizerOptions {
        segmentation: Segmentation::Characters,
        lowercase: false,
    };
    let tok = Tokenizer::build(["北京欢迎你"], 0, opts);
    assert_eq!(tok.split_words("北京 欢迎"), ["北", "京", "欢", "迎"]);
    assert_eq!(tok.tokenize_text("北京").len(), 2);
}

#[test]
fn truncation_drops_cut_spans() {
    let tok = Tokenizer::build(["aaaa", "b"], 0, TokenizerOptions::default());
    let raw = RawSentence {
        words: vec!["b".into(), "aaaa".into(), "b".into()],
        spans: vec![(0, 1, "X".into()), (1, 3, "Y".into())],
    };
    let t = truncate_to_fit(&raw, &tok, 6);
    assert_eq!(t.words, ["b"]);
    assert_eq!(t.spans, [(0, 1, "X".to_string())]);
    assert!(tok.encode(&t.words).len() <= 6);
}
