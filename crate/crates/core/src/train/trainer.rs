use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::joint_loss;
use super::metrics::{EvalReport, SpanCounter};
use super::optim::Adam;
use crate::data::LabeledSentence;
use crate::lexicon::TrieSnapshot;
use crate::matcher::{MatchError, MatchSet};
use crate::model::{parse_bool, DyLexModel, ForwardCtx, ModelError};
use crate::tensor::{Gradients, Graph};
use crate::vocab::TagId;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without dev improvement before stopping; 0 disables.
    pub patience: usize,
    /// Hard fusion uses the gold denoising labels instead of the predicted ones.
    pub teacher_forcing: bool,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            epochs: 20,
            seed: 0,
            patience: 5,
            teacher_forcing: false,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "batch_size",
        "learning_rate",
        "weight_decay",
        "warmup_proportion",
        "epochs",
        "seed",
        "patience",
        "teacher_forcing",
        "max_grad_norm",
    ];

    /// Hyperparameters for fine-tuning a pretrained encoder.
    pub fn pretrained_preset() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 2e-5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) {
            return Err("warmup_proportion must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "warmup_proportion" => self.warmup_proportion.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "patience" => self.patience.to_string(),
            "teacher_forcing" => self.teacher_forcing.to_string(),
            "max_grad_norm" => self.max_grad_norm.to_string(),
            _ => return None,
        })
    }

    /// Sets one field from text. Returns `Ok(false)` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "warmup_proportion" => self.warmup_proportion = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "teacher_forcing" => {
                self.teacher_forcing = parse_bool(value).ok_or_else(|| format!("invalid boolean `{value}` for `{key}`"))?
            }
            "max_grad_norm" => self.max_grad_norm = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// A sentence with its candidates and tagger targets ready for training.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub sentence: LabeledSentence,
    pub matches: MatchSet,
    pub targets: Vec<Option<TagId>>,
}

/// Matches `sentence` against `snapshot` (none means no lexicon) and
/// attaches denoising labels derived from the gold tags.
pub fn prepare_example(
    sentence: LabeledSentence,
    snapshot: Option<&TrieSnapshot>,
    top_n: usize,
    dict_candidate: usize,
) -> Result<PreparedExample, MatchError> {
    let matches = match snapshot {
        Some(s) => crate::matcher::match_sentence(s, &sentence.encoding.ids, top_n, dict_candidate)
            .with_labels(&sentence.gold_tags, s.vocab())?,
        None => MatchSet::default(),
    };
    let targets = sentence.loss_targets();
    Ok(PreparedExample {
        sentence,
        matches,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub tag_loss: f64,
    pub dn_loss: f64,
    pub dn_acc: f64,
    pub dev: EvalReport,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\ttag_loss\tdn_loss\tdn_acc\tdev_p\tdev_r\tdev_f1";

    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.epoch,
            self.tag_loss,
            self.dn_loss,
            self.dn_acc,
            self.dev.span_precision,
            self.dev.span_recall,
            self.dev.span_f1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch (the last epoch without a dev set).
    pub model: DyLexModel<f32>,
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Span F1 and denoising accuracy of `model` on prepared examples.
pub fn evaluate(model: &DyLexModel<f32>, examples: &[PreparedExample]) -> Result<EvalReport, ModelError> {
    let mut counter = SpanCounter::default();
    for ex in examples {
        let p = model.predict(&ex.sentence, &ex.matches)?;
        counter.add_sentence(&p.spans, &ex.sentence.gold_spans);
        if let Some(labels) = &ex.matches.denoise_labels {
            counter.add_denoise(&p.denoise_probs, labels, model.config.hard_threshold);
        }
    }
    Ok(counter.report(model.vocab()))
}

/// Joint training with Adam, keeping the parameters of the best dev epoch.
/// Metrics lines are written to `log` as they are produced.
pub fn train(
    mut model: DyLexModel<f32>,
    train_set: &[PreparedExample],
    dev_set: &[PreparedExample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate().map_err(ModelError::Config)?;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", EpochLog::HEADER)?;
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = (cfg.warmup_proportion * total as f64).round() as usize;
    let mut opt = Adam::new(model.params(), cfg.learning_rate, cfg.weight_decay, warmup);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, DyLexModel<f32>)> = None;
    let lambda = model.config.loss_weight_denoise;
    let sigmoid_tagger = model.config.sigmoid_tagger;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tag_sum, mut dn_sum, mut dn_n) = (0.0, 0.0, 0usize);
        let mut counter = SpanCounter::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::for_store(model.params());
            for &i in batch {
                let ex = &train_set[i];
                let mut g = Graph::new(model.params());
                let mut ctx = ForwardCtx::train(&mut rng);
                if cfg.teacher_forcing {
                    ctx.forced_selection = ex.matches.denoise_labels.as_deref();
                }
                let out = model.forward(&mut g, ex.sentence.subword_ids(), &ex.matches, &mut ctx)?;
                let loss = joint_loss(
                    &mut g,
                    &out,
                    &ex.targets,
                    ex.matches.denoise_labels.as_deref(),
                    lambda,
                    sigmoid_tagger,
                )?;
                tag_sum += g.scalar(loss.tag) as f64;
                if let Some(d) = loss.denoise {
                    dn_sum += g.scalar(d) as f64;
                    dn_n += 1;
                }
                if let (Some(z), Some(labels)) = (out.denoise_probs, &ex.matches.denoise_labels) {
                    let probs: Vec<f64> = g.value(z).iter().map(|&p| p as f64).collect();
                    counter.add_denoise(&probs, labels, model.config.hard_threshold);
                }
                g.backward(loss.total)?;
                g.accumulate_param_grads(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            if cfg.max_grad_norm > 0.0 {
                let norm = grads.global_norm() as f64;
                if norm > cfg.max_grad_norm {
                    grads.scale((cfg.max_grad_norm / norm) as f32);
                }
            }
            opt.step(model.params_mut(), &grads);
        }
        let dev = if dev_set.is_empty() {
            EvalReport::default()
        } else {
            evaluate(&model, dev_set)?
        };
        let entry = EpochLog {
            epoch,
            tag_loss: tag_sum / train_set.len().max(1) as f64,
            dn_loss: if dn_n == 0 { 0.0 } else { dn_sum / dn_n as f64 },
            dn_acc: counter.report(model.vocab()).denoise_accuracy,
            dev,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", entry.line())?;
        }
        let f1 = entry.dev.span_f1;
        history.push(entry);
        if dev_set.is_empty() {
            continue;
        }
        match &best {
            Some((b, _, _)) if f1 <= *b => {}
            _ => best = Some((f1, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: None,
        },
    })
}
