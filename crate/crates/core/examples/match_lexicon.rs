//! Builds a small lexicon and prints the candidate tag sequences it produces
//! for one sentence, before and after top-n selection.

use std::sync::Arc;

use dylex::data::{Tokenizer, TokenizerOptions};
use dylex::lexicon::Lexicon;
use dylex::matcher::{fast_match, match_sentence, MatchSet};
use dylex::vocab::TagVocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let entries = [
        ("taylor", "song"),
        ("taylor swift's", "singer"),
        ("sparks fly", "song"),
        ("fly", "movie"),
    ];
    let sentence = ["play", "taylor", "swift's", "sparks", "fly"];

    let tokenizer = Arc::new(Tokenizer::build(
        entries.iter().map(|(s, _)| *s).chain(sentence),
        60,
        TokenizerOptions::default(),
    ));
    let vocab = TagVocabulary::new(["singer", "song", "movie"])?;
    let mut lexicon = Lexicon::new(Arc::clone(&tokenizer), vocab.clone());
    for (s, c) in entries {
        lexicon.insert(s, c)?;
    }

    let enc = tokenizer.encode(&sentence);
    let pieces: Vec<&str> = enc.ids.iter().map(|&id| tokenizer.piece(id)).collect();
    println!("pieces: {}", pieces.join(" "));

    let all = MatchSet {
        candidates: fast_match(&lexicon.snapshot(), &enc.ids),
        denoise_labels: None,
    };
    println!("\nall matches (start:end, category):\n{}", all.dump(&vocab));
    for c in &all.candidates {
        let tags: Vec<String> = c.tags.iter().map(|&t| vocab.label(t)).collect();
        println!("  {}", tags.join(" "));
    }

    let top1 = match_sentence(&lexicon.snapshot(), &enc.ids, 1, 16);
    println!("\nlongest match per start:\n{}", top1.dump(&vocab));
    Ok(())
}
