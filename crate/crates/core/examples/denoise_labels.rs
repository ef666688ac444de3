//! Derives keep/discard labels for lexicon candidates from a gold BIO
//! annotation.

use std::sync::Arc;

use dylex::data::{LabeledSentence, RawSentence, Tokenizer, TokenizerOptions};
use dylex::lexicon::Lexicon;
use dylex::matcher::match_sentence;
use dylex::vocab::TagVocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = RawSentence {
        words: ["taylor", "swift's", "sparks", "fly"].map(String::from).to_vec(),
        spans: vec![(0, 2, "singer".into()), (2, 4, "song".into())],
    };
    let tokenizer = Arc::new(Tokenizer::build(raw.words.iter().map(String::as_str), 0, TokenizerOptions::default()));
    let vocab = TagVocabulary::new(["singer", "song", "movie"])?;
    let mut lexicon = Lexicon::new(Arc::clone(&tokenizer), vocab.clone());
    lexicon.read_tsv("taylor\tsong\ntaylor swift's\tsinger\nsparks fly\tsong\nfly\tmovie\n".as_bytes(), false)?;

    let sentence = LabeledSentence::new(&raw, &tokenizer, &vocab)?;
    let gold: Vec<String> = sentence.gold_tags.iter().map(|&t| vocab.label(t)).collect();
    println!("gold per piece: {}", gold.join(" "));

    let set = match_sentence(&lexicon.snapshot(), sentence.subword_ids(), 4, 16).with_labels(&sentence.gold_tags, &vocab)?;
    print!("{}", set.dump(&vocab));
    Ok(())
}
