//! Trains the lexicon-aware tagger and a lexicon-free baseline on a
//! synthetic corpus where half of the entity names are ambiguous.
//!
//! cargo run --release --example train_synthetic -- [seed] [epochs]

use dylex::model::{FusionMode, ModelConfig};
use dylex::train::experiment::Experiment;
use dylex::train::synth::SynthConfig;
use dylex::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let fusion: FusionMode = args.next().map(|s| s.parse()).transpose()?.unwrap_or_default();

    let exp = Experiment::new(&SynthConfig { seed, ..Default::default() }, 800)?;
    let model = ModelConfig { fusion, ..Default::default() };
    let train = TrainConfig { seed, epochs, ..Default::default() };

    for use_lexicon in [true, false] {
        let r = exp.run(&model, &train, use_lexicon)?;
        for e in &r.outcome.history {
            println!("  {}", e.line());
        }
        println!(
            "lexicon={use_lexicon} test_f1={:.4} denoise_acc={:.4} ({:.1}s)",
            r.test.span_f1, r.test.denoise_accuracy, r.seconds
        );
    }
    Ok(())
}
