use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Candidates with denoising probability above the threshold are fused unweighted.
    #[default]
    Hard,
    /// Every candidate is fused, its values weighted by its probability.
    Soft,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Hard => "hard",
            FusionMode::Soft => "soft",
        })
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hard" => Ok(FusionMode::Hard),
            "soft" => Ok(FusionMode::Soft),
            _ => Err(format!("fusion mode must be `hard` or `soft`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub subword_vocab_size: usize,
    /// Rows of the tag embedding table (labels plus padding).
    pub tag_vocab_size: usize,
    pub label_vocab_size: usize,
    pub max_seq_length: usize,
    pub dict_candidate: usize,
    pub top_n: usize,
    pub fusion: FusionMode,
    pub hard_threshold: f64,
    pub loss_weight_denoise: f64,
    pub dropout: f64,
    /// Per-label sigmoid with binary cross-entropy instead of softmax.
    pub sigmoid_tagger: bool,
    /// Adds the input back onto the denoiser's per-candidate self-attention.
    pub denoiser_residual: bool,
    /// Entity type from each word's first subword; otherwise spans are
    /// decoded over all subwords and widened to word boundaries.
    pub use_first: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 128,
            subword_vocab_size: 0,
            tag_vocab_size: 0,
            label_vocab_size: 0,
            max_seq_length: 128,
            dict_candidate: 16,
            top_n: 1,
            fusion: FusionMode::Hard,
            hard_threshold: 0.5,
            loss_weight_denoise: 1.0,
            dropout: 0.1,
            sigmoid_tagger: false,
            denoiser_residual: true,
            use_first: true,
        }
    }
}

pub(crate) fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "hidden",
        "layers",
        "heads",
        "ffn",
        "subword_vocab_size",
        "tag_vocab_size",
        "label_vocab_size",
        "max_seq_length",
        "dict_candidate",
        "top_n",
        "fusion",
        "hard_threshold",
        "loss_weight_denoise",
        "dropout",
        "sigmoid_tagger",
        "denoiser_residual",
        "use_first",
    ];

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.ffn == 0 {
            return bad("ffn must be positive".into());
        }
        if !(self.hard_threshold > 0.0 && self.hard_threshold < 1.0) {
            return bad(format!("hard_threshold {} outside (0, 1)", self.hard_threshold));
        }
        if self.max_seq_length < 2 {
            return bad("max_seq_length must leave room for the two sentinels".into());
        }
        if self.top_n == 0 || self.dict_candidate == 0 {
            return bad("top_n and dict_candidate must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.loss_weight_denoise >= 0.0) {
            return bad("loss_weight_denoise must be nonnegative".into());
        }
        if self.tag_vocab_size != self.label_vocab_size + 1 {
            return bad("tag table must hold every label plus padding".into());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "hidden" => self.hidden.to_string(),
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "ffn" => self.ffn.to_string(),
            "subword_vocab_size" => self.subword_vocab_size.to_string(),
            "tag_vocab_size" => self.tag_vocab_size.to_string(),
            "label_vocab_size" => self.label_vocab_size.to_string(),
            "max_seq_length" => self.max_seq_length.to_string(),
            "dict_candidate" => self.dict_candidate.to_string(),
            "top_n" => self.top_n.to_string(),
            "fusion" => self.fusion.to_string(),
            "hard_threshold" => self.hard_threshold.to_string(),
            "loss_weight_denoise" => self.loss_weight_denoise.to_string(),
            "dropout" => self.dropout.to_string(),
            "sigmoid_tagger" => self.sigmoid_tagger.to_string(),
            "denoiser_residual" => self.denoiser_residual.to_string(),
            "use_first" => self.use_first.to_string(),
            _ => return None,
        })
    }

    /// Sets one field from text. Returns `Ok(false)` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        let flag = |v: &str| parse_bool(v).ok_or_else(|| format!("invalid boolean `{v}` for `{key}`"));
        match key {
            "hidden" => self.hidden = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn" => self.ffn = num(key, value)?,
            "subword_vocab_size" => self.subword_vocab_size = num(key, value)?,
            "tag_vocab_size" => self.tag_vocab_size = num(key, value)?,
            "label_vocab_size" => self.label_vocab_size = num(key, value)?,
            "max_seq_length" => self.max_seq_length = num(key, value)?,
            "dict_candidate" => self.dict_candidate = num(key, value)?,
            "top_n" => self.top_n = num(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "hard_threshold" => self.hard_threshold = num(key, value)?,
            "loss_weight_denoise" => self.loss_weight_denoise = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "sigmoid_tagger" => self.sigmoid_tagger = flag(value)?,
            "denoiser_residual" => self.denoiser_residual = flag(value)?,
            "use_first" => self.use_first = flag(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` lines for every field.
    pub fn to_kv_lines(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }
}
