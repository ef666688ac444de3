//! Trains a tagger on a synthetic corpus, then adds and removes lexicon
//! entries for names it has never seen. No parameter changes.
//!
//! cargo run --release --example dynamic_lexicon -- [epochs]

use dylex::data::LabeledSentence;
use dylex::model::ModelConfig;
use dylex::train::experiment::Experiment;
use dylex::train::synth::SynthConfig;
use dylex::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(6);
    let cfg = SynthConfig {
        train: 1000,
        dev: 150,
        test: 100,
        ..Default::default()
    };
    let mut exp = Experiment::new(&cfg, 800)?;
    let run = exp.run(&ModelConfig::default(), &TrainConfig { epochs, ..Default::default() }, true)?;
    let model = &run.outcome.model;
    println!("test f1 {:.4}", run.test.span_f1);

    let mut lexicon = exp.lexicons[0].clone();
    let names = exp.corpus.fresh_surfaces(5);
    let categories = exp.corpus.categories.clone();
    for (i, name) in names.iter().enumerate() {
        let cat = &categories[i % categories.len()];
        let raw = exp.corpus.sentence_with(&[(vec![name.clone()], cat.clone())]);
        let sentence = LabeledSentence::unlabeled(&raw.words, model.tokenizer());
        let show = |lex: &dylex::lexicon::Lexicon| -> Result<String, Box<dyn std::error::Error>> {
            let p = model.predict(&sentence, &model.match_encoding(&lex.snapshot(), &sentence.encoding))?;
            Ok(p.spans
                .iter()
                .map(|s| format!("{}={}", raw.words[s.start..s.end].join(" "), model.vocab().category_name(s.category)))
                .collect::<Vec<_>>()
                .join(", "))
        };
        println!("\n{}", raw.words.join(" "));
        println!("  without entry: [{}]", show(&lexicon)?);
        lexicon.insert(name, cat)?;
        println!("  with {name} as {cat}: [{}]", show(&lexicon)?);
        lexicon.remove(name, cat);
        println!("  removed again: [{}]", show(&lexicon)?);
    }
    Ok(())
}
