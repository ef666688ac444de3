//! Trains a small model in hard and in soft fusion on the same synthetic
//! corpus, then shows the keep probabilities each assigns to the candidates
//! of one test sentence and which of them reach the tagger.
//!
//! cargo run --release --example fusion_modes -- [epochs]

use dylex::model::{FusionMode, ModelConfig};
use dylex::train::experiment::Experiment;
use dylex::train::synth::SynthConfig;
use dylex::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(15);
    let exp = Experiment::new(
        &SynthConfig {
            train: 1000,
            dev: 100,
            test: 100,
            ..Default::default()
        },
        800,
    )?;
    let train = TrainConfig { epochs, ..Default::default() };
    // a test sentence with several candidates
    let probe = exp
        .corpus
        .test
        .iter()
        .max_by_key(|ex| {
            let s = exp.labeled(ex, 128).unwrap();
            dylex::matcher::fast_match(&exp.lexicons[ex.variant].snapshot(), s.subword_ids()).len()
        })
        .unwrap();

    for fusion in [FusionMode::Hard, FusionMode::Soft] {
        let cfg = ModelConfig {
            top_n: 4,
            fusion,
            ..Default::default()
        };
        let run = exp.run(&cfg, &train, true)?;
        let model = &run.outcome.model;
        println!("{fusion}: test f1 {:.4}, denoise accuracy {:.4}", run.test.span_f1, run.test.denoise_accuracy);

        let sentence = exp.labeled(probe, cfg.max_seq_length)?;
        let matches = model
            .match_encoding(&exp.lexicons[probe.variant].snapshot(), &sentence.encoding)
            .with_labels(&sentence.gold_tags, model.vocab())?;
        let p = model.predict(&sentence, &matches)?;
        println!("  {}", probe.sentence.words.join(" "));
        let gold = matches.denoise_labels.clone().unwrap_or_default();
        for (i, c) in matches.candidates.iter().enumerate() {
            let words = &probe.sentence.words[sentence.encoding.subword_to_word[c.start].unwrap_or(0)
                ..=sentence.encoding.subword_to_word[c.end - 1].unwrap_or(0)];
            println!(
                "  {:<20}{:<8}p={:.3}  used={:<6}gold={}",
                words.join(" "),
                model.vocab().category_name(c.category),
                p.denoise_probs[i],
                p.selected_mask[i],
                gold[i]
            );
        }
    }
    Ok(())
}
