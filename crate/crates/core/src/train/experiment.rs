//! End-to-end runs on a synthetic corpus.

use std::sync::Arc;
use std::time::Instant;

use super::synth::{generate, SynthConfig, SynthCorpus, SynthError, SynthExample};
use super::{evaluate, prepare_example, train, EvalReport, PreparedExample, TrainConfig, TrainOutcome};
use crate::data::{truncate_to_fit, LabeledSentence, Tokenizer, TokenizerOptions};
use crate::lexicon::{Lexicon, LexiconError};
use crate::model::{DyLexModel, ModelConfig, ModelError};
use crate::vocab::TagVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Other(String),
}

/// A synthetic corpus with its tokenizer and both lexicon variants.
pub struct Experiment {
    pub corpus: SynthCorpus,
    pub tokenizer: Arc<Tokenizer>,
    pub vocab: TagVocabulary,
    pub lexicons: [Lexicon; 2],
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub test: EvalReport,
    pub seconds: f64,
}

impl Experiment {
    pub fn new(config: &SynthConfig, tokenizer_vocab: usize) -> Result<Self, ExperimentError> {
        let corpus = generate(config)?;
        let tokenizer = Arc::new(Tokenizer::build(
            corpus.train.iter().flat_map(|e| e.sentence.words.iter().map(String::as_str)),
            tokenizer_vocab,
            TokenizerOptions::default(),
        ));
        let vocab = TagVocabulary::new(&corpus.categories).map_err(|e| ExperimentError::Other(e.to_string()))?;
        let mut lexicons = [
            Lexicon::new(Arc::clone(&tokenizer), vocab.clone()),
            Lexicon::new(Arc::clone(&tokenizer), vocab.clone()),
        ];
        for (lex, rows) in lexicons.iter_mut().zip(&corpus.lexicons) {
            for (s, c) in rows {
                lex.insert(s, c)?;
            }
        }
        Ok(Experiment {
            corpus,
            tokenizer,
            vocab,
            lexicons,
        })
    }

    pub fn labeled(&self, ex: &SynthExample, max_len: usize) -> Result<LabeledSentence, ExperimentError> {
        let raw = truncate_to_fit(&ex.sentence, &self.tokenizer, max_len);
        LabeledSentence::new(&raw, &self.tokenizer, &self.vocab).map_err(|e| ExperimentError::Other(e.to_string()))
    }

    /// Prepares a split, matching each example against its own lexicon
    /// variant, or against nothing when `use_lexicon` is false.
    pub fn prepare(
        &self,
        split: &[SynthExample],
        use_lexicon: bool,
        model: &ModelConfig,
    ) -> Result<Vec<PreparedExample>, ExperimentError> {
        let snaps = [self.lexicons[0].snapshot(), self.lexicons[1].snapshot()];
        split
            .iter()
            .map(|ex| {
                let s = self.labeled(ex, model.max_seq_length)?;
                let snap = use_lexicon.then(|| &snaps[ex.variant]);
                prepare_example(s, snap, model.top_n, model.dict_candidate)
                    .map_err(|e| ExperimentError::Other(e.to_string()))
            })
            .collect()
    }

    /// Trains on the train split, selects on dev and scores on test.
    pub fn run(
        &self,
        model_config: &ModelConfig,
        train_config: &TrainConfig,
        use_lexicon: bool,
    ) -> Result<RunResult, ExperimentError> {
        let start = Instant::now();
        let train_set = self.prepare(&self.corpus.train, use_lexicon, model_config)?;
        let dev_set = self.prepare(&self.corpus.dev, use_lexicon, model_config)?;
        let test_set = self.prepare(&self.corpus.test, use_lexicon, model_config)?;
        let model = DyLexModel::<f32>::new(
            model_config.clone(),
            Arc::clone(&self.tokenizer),
            self.vocab.clone(),
            train_config.seed,
        )?;
        let outcome = train(model, &train_set, &dev_set, train_config, None)?;
        let test = evaluate(&outcome.model, &test_set)?;
        Ok(RunResult {
            outcome,
            test,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}
