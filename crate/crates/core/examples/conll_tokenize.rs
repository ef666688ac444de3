//! Parses CoNLL text, splits words into subword pieces and shows how word
//! labels land on pieces and which positions carry loss.

use dylex::data::{parse_conll_str, LabeledSentence, Tokenizer, TokenizerOptions};
use dylex::vocab::TagVocabulary;

const TEXT: &str = "\
wilhelmina\tB-PER
visited\tO
new\tB-LOC
amsterdam\tI-LOC

amsterdam\tB-LOC
welcomed\tO
wilhelmina\tB-PER
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = parse_conll_str(TEXT)?;
    let tokenizer = Tokenizer::build(corpus.words(), 80, TokenizerOptions::default());
    let vocab = TagVocabulary::new(corpus.categories())?;
    println!("labels: {vocab}");
    for raw in &corpus.sentences {
        let s = LabeledSentence::new(raw, &tokenizer, &vocab)?;
        println!();
        for (pos, (&id, target)) in s.subword_ids().iter().zip(s.loss_targets()).enumerate() {
            let word = s.encoding.subword_to_word[pos].map_or("-".to_string(), |w| raw.words[w].clone());
            let loss = if target.is_some() { "loss" } else { "" };
            println!("{:<12}{:<12}{:<8}{loss}", tokenizer.piece(id), word, vocab.label(s.gold_tags[pos]));
        }
    }
    Ok(())
}
