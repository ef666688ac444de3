//! Finite-difference verification of the full model's gradients.

use std::sync::Arc;

use crate::data::{LabeledSentence, RawSentence, Tokenizer, TokenizerOptions};
use crate::lexicon::Lexicon;
use crate::matcher::{match_sentence, MatchSet};
use crate::model::{DyLexModel, ForwardCtx, FusionMode, ModelConfig, ModelError};
use crate::tensor::{finite_diff_check, Fault, GradCheckReport, Graph, TensorError};
use crate::vocab::TagVocabulary;

use super::joint_loss;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub fusion: FusionMode,
    pub seed: u64,
    pub eps: f64,
    /// Standard deviation of the noise added on top of the initialization.
    pub init_noise: f64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            hidden: 16,
            heads: 2,
            layers: 2,
            fusion: FusionMode::Soft,
            seed: 0,
            eps: 1e-4,
            init_noise: 0.3,
            fault: None,
        }
    }
}

/// The fixture: an 8-position sentence (6 words plus sentinels) with two
/// overlapping lexicon candidates, one of them correct.
pub fn fixture(config: ModelConfig, seed: u64) -> Result<(DyLexModel<f64>, LabeledSentence, MatchSet), ModelError> {
    let words = ["call", "nora", "lee", "about", "red", "fox"];
    let pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().chain(&words).map(|p| p.to_string()).collect();
    let tok = Arc::new(Tokenizer::from_pieces(pieces, TokenizerOptions::default())?);
    let vocab = TagVocabulary::new(["person", "band"]).map_err(|e| ModelError::Config(e.to_string()))?;
    let mut lex = Lexicon::new(Arc::clone(&tok), vocab.clone());
    lex.insert("nora lee", "person").map_err(|e| ModelError::Config(e.to_string()))?;
    lex.insert("lee about", "band").map_err(|e| ModelError::Config(e.to_string()))?;
    let raw = RawSentence {
        words: words.iter().map(|w| w.to_string()).collect(),
        spans: vec![(1, 3, "person".into())],
    };
    let sentence = LabeledSentence::new(&raw, &tok, &vocab).map_err(|e| ModelError::Config(e.to_string()))?;
    let matches = match_sentence(&lex.snapshot(), &sentence.encoding.ids, 4, 16)
        .with_labels(&sentence.gold_tags, &vocab)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let model = DyLexModel::<f64>::new(config, tok, vocab, seed)?;
    Ok((model, sentence, matches))
}

/// Central-difference check of every parameter of the full model under the
/// joint loss.
pub fn full_model_gradcheck(opts: &GradcheckOptions) -> Result<GradCheckReport, ModelError> {
    let config = ModelConfig {
        hidden: opts.hidden,
        heads: opts.heads,
        layers: opts.layers,
        ffn: 2 * opts.hidden,
        max_seq_length: 8,
        fusion: opts.fusion,
        dropout: 0.0,
        ..Default::default()
    };
    let (mut model, sentence, matches) = fixture(config, opts.seed)?;
    model.perturb(opts.init_noise, opts.seed.wrapping_add(1));
    if matches.len() != 2 || sentence.len() != 8 {
        return Err(ModelError::Config("gradcheck fixture drifted".into()));
    }
    if opts.fusion == FusionMode::Hard {
        // Threshold halfway between the two probabilities: exactly one
        // candidate is fused and tiny perturbations cannot flip the choice.
        let mut g = Graph::new(model.params());
        let out = model.forward(&mut g, sentence.subword_ids(), &matches, &mut ForwardCtx::eval())?;
        let z = g.value(out.denoise_probs.expect("two candidates")).to_vec();
        model.config.hard_threshold = 0.5 * (z[0] + z[1]);
    }
    let targets = sentence.loss_targets();
    let labels = matches.denoise_labels.clone();
    let lambda = model.config.loss_weight_denoise;
    let loss_fn = |g: &mut Graph<'_, f64>| -> Result<_, TensorError> {
        let out = model
            .forward(g, sentence.subword_ids(), &matches, &mut ForwardCtx::eval())
            .map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::shape("model", other.to_string()),
            })?;
        let loss = joint_loss(g, &out, &targets, labels.as_deref(), lambda, false).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::shape("loss", other.to_string()),
        })?;
        Ok(loss.total)
    };
    Ok(finite_diff_check(model.params(), opts.eps, None, opts.seed, opts.fault, loss_fn)?)
}
