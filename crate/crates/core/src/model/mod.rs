//! Lexicon-aware sequence tagger.
//!
//! A small transformer encoder produces `E_u`. Each matched candidate tag
//! sequence is embedded (tags only, never words), added to `E_u` and passed
//! through its own self-attention; the first rows of those results feed an
//! inter-candidate attention and a sigmoid that scores every candidate.
//! Surviving candidates are fused into `E_k` by per-position attention with
//! `E_u` as the query, and a linear tagger reads `E_u + E_k`.

mod config;
mod persist;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use config::{FusionMode, ModelConfig};
pub(crate) use config::parse_bool;
pub use persist::{load_model, save_model};

use crate::data::{decode_bio, decode_use_first, tag_to_bio, Bio, Encoding, LabeledSentence, Span, SubwordId, Tokenizer};
use crate::lexicon::TrieSnapshot;
use crate::matcher::{match_sentence, MatchSet};
use crate::tensor::nn::{AttentionParams, FeedForward, LayerNorm, Linear, INIT_STD};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, TensorError, Var};
use crate::vocab::{TagId, TagVocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence of {len} positions exceeds max_seq_length {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("candidate {index}: {message}")]
    Candidate { index: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    attn: AttentionParams,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
    tag_emb: ParamId,
    dn_att: AttentionParams,
    dn_inter: AttentionParams,
    dn_out: Linear,
    tagger: Linear,
}

/// Per-call settings that are not part of the model.
#[derive(Default)]
pub struct ForwardCtx<'a> {
    /// Dropout source; `None` runs deterministically.
    pub rng: Option<&'a mut ChaCha8Rng>,
    /// Hard-mode selection supplied from outside (teacher forcing).
    pub forced_selection: Option<&'a [bool]>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx {
            rng: Some(rng),
            forced_selection: None,
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `l × labels`.
    pub tag_logits: Var,
    /// `nd × 1` candidate probabilities; `None` when nothing matched.
    pub denoise_probs: Option<Var>,
    pub selected_mask: Vec<bool>,
    pub e_u: Var,
    /// `None` when no candidate reached fusion, which means `E_k = 0`.
    pub e_k: Option<Var>,
    /// Per-candidate `R_d`.
    pub r_d: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct DyLexModel<T: Scalar> {
    pub config: ModelConfig,
    vocab: TagVocabulary,
    tokenizer: Arc<Tokenizer>,
    params: ParamStore<T>,
    layout: Layout,
}

fn dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Ok(g.mask(x, mask)?)
}

impl<T: Scalar> DyLexModel<T> {
    /// Fresh model; vocabulary sizes in `config` are filled in from
    /// `tokenizer` and `vocab`.
    pub fn new(mut config: ModelConfig, tokenizer: Arc<Tokenizer>, vocab: TagVocabulary, seed: u64) -> Result<Self> {
        config.subword_vocab_size = tokenizer.vocab_size();
        config.label_vocab_size = vocab.label_count();
        config.tag_vocab_size = vocab.tag_count();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hz = config.hidden;
        let tok_emb = store.add_normal("enc.tok_emb", vec![config.subword_vocab_size, hz], INIT_STD, &mut rng);
        let pos_emb = store.add_normal("enc.pos_emb", vec![config.max_seq_length, hz], INIT_STD, &mut rng);
        let emb_ln = LayerNorm::new(&mut store, "enc.emb_ln", hz);
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            layers.push(EncoderLayer {
                attn: AttentionParams::new(&mut store, &format!("enc.{i}.attn"), hz, config.heads, &mut rng)?,
                ln1: LayerNorm::new(&mut store, &format!("enc.{i}.ln1"), hz),
                ffn: FeedForward::new(&mut store, &format!("enc.{i}.ffn"), hz, config.ffn, &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("enc.{i}.ln2"), hz),
            });
        }
        let tag_emb = store.add_normal("lex.tag_emb", vec![config.tag_vocab_size, hz], INIT_STD, &mut rng);
        let dn_att = AttentionParams::new(&mut store, "lex.denoise.att", hz, config.heads, &mut rng)?;
        let dn_inter = AttentionParams::new(&mut store, "lex.denoise.inter", hz, config.heads, &mut rng)?;
        let dn_out = Linear::new(&mut store, "lex.denoise.out", hz, 1, &mut rng);
        let tagger = Linear::new(&mut store, "tagger", hz, config.label_vocab_size, &mut rng);
        Ok(DyLexModel {
            config,
            vocab,
            tokenizer,
            params: store,
            layout: Layout {
                tok_emb,
                pos_emb,
                emb_ln,
                layers,
                tag_emb,
                dn_att,
                dn_inter,
                dn_out,
                tagger,
            },
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn vocab(&self) -> &TagVocabulary {
        &self.vocab
    }

    pub fn tokenizer(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    pub fn tag_embedding_param(&self) -> ParamId {
        self.layout.tag_emb
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> DyLexModel<U> {
        DyLexModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tokenizer: Arc::clone(&self.tokenizer),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Adds `N(0, std²)` noise to every parameter.
    pub fn perturb(&mut self, std: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).expect("finite std");
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            for v in self.params.get_mut(id).data_mut() {
                *v += T::from_f64_lossy(dist.sample(&mut rng));
            }
        }
    }

    /// `E_u` for a framed subword sequence.
    pub fn encode(&self, g: &mut Graph<'_, T>, tokens: &[SubwordId], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let l = tokens.len();
        if l == 0 {
            return Err(ModelError::Empty);
        }
        if l > self.config.max_seq_length {
            return Err(ModelError::TooLong {
                len: l,
                max: self.config.max_seq_length,
            });
        }
        let lay = &self.layout;
        let ids: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
        let positions: Vec<usize> = (0..l).collect();
        let tok_table = g.param(lay.tok_emb);
        let pos_table = g.param(lay.pos_emb);
        let tok = g.embedding(tok_table, &ids)?;
        let pos = g.embedding(pos_table, &positions)?;
        let x = g.add(tok, pos)?;
        let x = lay.emb_ln.forward(g, x)?;
        let mut x = dropout(g, x, self.config.dropout, &mut ctx.rng)?;
        for layer in &lay.layers {
            let a = layer.attn.self_attention(g, x)?;
            let a = dropout(g, a, self.config.dropout, &mut ctx.rng)?;
            let h = g.add(x, a)?;
            let h = layer.ln1.forward(g, h)?;
            let f = layer.ffn.forward(g, h)?;
            let f = dropout(g, f, self.config.dropout, &mut ctx.rng)?;
            let o = g.add(h, f)?;
            x = layer.ln2.forward(g, o)?;
        }
        Ok(x)
    }

    /// `E_d = TagEmb(T) + E_u` for every candidate.
    pub fn embed_and_combine(&self, g: &mut Graph<'_, T>, matches: &MatchSet, e_u: Var) -> Result<Vec<Var>> {
        let (l, _) = g.dims(e_u);
        let table = g.param(self.layout.tag_emb);
        let mut out = Vec::with_capacity(matches.len());
        for (i, c) in matches.candidates.iter().enumerate() {
            if c.tags.len() != l {
                return Err(ModelError::Candidate {
                    index: i,
                    message: format!("{} tags for a sequence of {l}", c.tags.len()),
                });
            }
            let ids: Vec<usize> = c.tags.iter().map(|t| t.index()).collect();
            let t = g.embedding(table, &ids)?;
            out.push(g.add(t, e_u)?);
        }
        Ok(out)
    }

    /// Returns `R_d` per candidate and the `nd × 1` probabilities `z`.
    pub fn denoise(&self, g: &mut Graph<'_, T>, e_d: &[Var]) -> Result<(Vec<Var>, Var)> {
        if e_d.is_empty() {
            return Err(ModelError::Candidate {
                index: 0,
                message: "denoising needs at least one candidate".into(),
            });
        }
        let lay = &self.layout;
        let mut r_d = Vec::with_capacity(e_d.len());
        for &e in e_d {
            let a = lay.dn_att.self_attention(g, e)?;
            r_d.push(if self.config.denoiser_residual { g.add(e, a)? } else { a });
        }
        let heads: Vec<(Var, usize)> = r_d.iter().map(|&r| (r, 0)).collect();
        let r_cls = g.stack_rows(&heads)?;
        let y = lay.dn_inter.self_attention(g, r_cls)?;
        let y = if self.config.denoiser_residual { g.add(r_cls, y)? } else { y };
        let logit = lay.dn_out.forward(g, y)?;
        Ok((r_d, g.sigmoid(logit)))
    }

    /// Which candidates take part in hard fusion.
    pub fn hard_selection(&self, g: &Graph<'_, T>, z: Var) -> Vec<bool> {
        let thr = T::from_f64_lossy(self.config.hard_threshold);
        g.value(z).iter().map(|&p| p > thr).collect()
    }

    /// Col-wise attention of `E_u` over the candidates in `selected`; in soft
    /// mode pass `z` to weight their values. `None` stands for `E_k = 0`.
    pub fn fuse(
        &self,
        g: &mut Graph<'_, T>,
        e_u: Var,
        r_d: &[Var],
        selected: &[bool],
        weights: Option<Var>,
    ) -> Result<Option<Var>> {
        let keep: Vec<Var> = r_d.iter().zip(selected).filter(|(_, s)| **s).map(|(r, _)| *r).collect();
        if keep.is_empty() {
            return Ok(None);
        }
        let w = match weights {
            Some(w) if keep.len() == r_d.len() => Some(w),
            Some(_) => {
                return Err(ModelError::Candidate {
                    index: 0,
                    message: "weighted fusion takes every candidate".into(),
                })
            }
            None => None,
        };
        Ok(Some(g.colwise_attention(e_u, &keep, w)?))
    }

    /// Label logits for `E_u + E_k`.
    pub fn tag(&self, g: &mut Graph<'_, T>, e_u: Var, e_k: Option<Var>) -> Result<Var> {
        let e_o = match e_k {
            Some(k) => g.add(e_u, k)?,
            None => e_u,
        };
        Ok(self.layout.tagger.forward(g, e_o)?)
    }

    /// Encoder and tagger alone, with the lexicon branch absent.
    pub fn forward_baseline(&self, g: &mut Graph<'_, T>, tokens: &[SubwordId], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let e_u = self.encode(g, tokens, ctx)?;
        self.tag(g, e_u, None)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[SubwordId],
        matches: &MatchSet,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOutput> {
        let e_u = self.encode(g, tokens, ctx)?;
        if matches.is_empty() {
            let tag_logits = self.tag(g, e_u, None)?;
            return Ok(ForwardOutput {
                tag_logits,
                denoise_probs: None,
                selected_mask: Vec::new(),
                e_u,
                e_k: None,
                r_d: Vec::new(),
            });
        }
        let cats = self.vocab.category_count();
        if let Some(i) = matches.candidates.iter().position(|c| c.category.index() >= cats) {
            return Err(ModelError::Candidate {
                index: i,
                message: "category unknown to the model".into(),
            });
        }
        let e_d = self.embed_and_combine(g, matches, e_u)?;
        let (r_d, z) = self.denoise(g, &e_d)?;
        let (selected_mask, weights) = match self.config.fusion {
            FusionMode::Hard => {
                let mask = match ctx.forced_selection {
                    Some(f) if f.len() == r_d.len() => f.to_vec(),
                    Some(f) => {
                        return Err(ModelError::Candidate {
                            index: f.len(),
                            message: format!("forced selection for {} of {} candidates", f.len(), r_d.len()),
                        })
                    }
                    None => self.hard_selection(g, z),
                };
                (mask, None)
            }
            FusionMode::Soft => (vec![true; r_d.len()], Some(z)),
        };
        let e_k = self.fuse(g, e_u, &r_d, &selected_mask, weights)?;
        let tag_logits = self.tag(g, e_u, e_k)?;
        Ok(ForwardOutput {
            tag_logits,
            denoise_probs: Some(z),
            selected_mask,
            e_u,
            e_k,
            r_d,
        })
    }

    /// Candidates for `encoding` under this model's top-n and cap settings.
    pub fn match_encoding(&self, snapshot: &TrieSnapshot, encoding: &Encoding) -> MatchSet {
        match_sentence(snapshot, &encoding.ids, self.config.top_n, self.config.dict_candidate)
    }

    /// Greedy decoding of one sentence.
    pub fn predict(&self, sentence: &LabeledSentence, matches: &MatchSet) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, sentence.subword_ids(), matches, &mut ForwardCtx::eval())?;
        let (l, c) = g.dims(out.tag_logits);
        let logits = g.value(out.tag_logits);
        let tags: Vec<TagId> = (0..l)
            .map(|r| {
                let row = &logits[r * c..(r + 1) * c];
                let mut best = 0;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                TagId(best as u32)
            })
            .collect();
        let spans = self.decode_spans(&sentence.encoding, &tags);
        let denoise_probs = out
            .denoise_probs
            .map(|z| g.value(z).iter().map(|v| v.to_f64_lossy()).collect())
            .unwrap_or_default();
        Ok(Prediction {
            tags,
            spans,
            denoise_probs,
            selected_mask: out.selected_mask,
        })
    }

    /// Word-level spans from per-subword tags.
    pub fn decode_spans(&self, encoding: &Encoding, tags: &[TagId]) -> Vec<Span> {
        if self.config.use_first {
            return decode_use_first(encoding, tags, &self.vocab);
        }
        let inner = 1..encoding.len().saturating_sub(1);
        let bio: Vec<Bio<_>> = tags[inner.clone()].iter().map(|&t| tag_to_bio(&self.vocab, t)).collect();
        let mut spans: Vec<Span> = decode_bio(&bio)
            .0
            .into_iter()
            .map(|(s, e, c)| {
                let first = encoding.subword_to_word[s + 1].unwrap_or(0);
                let last = encoding.subword_to_word[e].unwrap_or(first);
                Span::new(first, last + 1, c)
            })
            .collect();
        spans.dedup();
        spans
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Argmax label per subword position.
    pub tags: Vec<TagId>,
    /// Word-level spans.
    pub spans: Vec<Span>,
    pub denoise_probs: Vec<f64>,
    pub selected_mask: Vec<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenizerOptions;
    use crate::lexicon::Lexicon;

    fn setup(fusion: FusionMode) -> (DyLexModel<f64>, Lexicon) {
        let tok = Arc::new(Tokenizer::build(
            "play taylor swift 's sparks fly".split(' '),
            64,
            TokenizerOptions::default(),
        ));
        let vocab = TagVocabulary::new(["singer", "song", "name"]).unwrap();
        let mut lex = Lexicon::new(Arc::clone(&tok), vocab.clone());
        for (s, c) in [("taylor swift 's", "singer"), ("sparks fly", "song"), ("taylor", "name"), ("swift", "name")] {
            lex.insert(s, c).unwrap();
        }
        let config = ModelConfig {
            hidden: 16,
            heads: 2,
            ffn: 32,
            fusion,
            max_seq_length: 16,
            top_n: 4,
            ..Default::default()
        };
        let mut m = DyLexModel::<f64>::new(config, tok, vocab, 3).unwrap();
        m.perturb(0.3, 4);
        (m, lex)
    }

    #[test]
    fn four_candidates_give_four_probabilities() {
        let (m, lex) = setup(FusionMode::Soft);
        let s = LabeledSentence::unlabeled(&["play", "taylor", "swift", "'s", "sparks", "fly"], m.tokenizer());
        let ms = m.match_encoding(&lex.snapshot(), &s.encoding);
        assert_eq!(ms.len(), 4);
        let mut g = Graph::new(m.params());
        let out = m.forward(&mut g, s.subword_ids(), &ms, &mut ForwardCtx::eval()).unwrap();
        let z = g.value(out.denoise_probs.unwrap());
        assert_eq!(z.len(), 4);
        assert!(z.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(g.dims(out.tag_logits), (s.len(), m.vocab().label_count()));
    }

    #[test]
    fn empty_match_set_equals_baseline_bitwise() {
        let (m, _) = setup(FusionMode::Hard);
        let s = LabeledSentence::unlabeled(&["sparks", "fly"], m.tokenizer());
        let mut g1 = Graph::new(m.params());
        let out = m.forward(&mut g1, s.subword_ids(), &MatchSet::default(), &mut ForwardCtx::eval()).unwrap();
        let mut g2 = Graph::new(m.params());
        let base = m.forward_baseline(&mut g2, s.subword_ids(), &mut ForwardCtx::eval()).unwrap();
        let a: Vec<u64> = g1.value(out.tag_logits).iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = g2.value(base).iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        assert!(out.e_k.is_none());
    }

    #[test]
    fn overlong_input_is_rejected() {
        let (m, _) = setup(FusionMode::Hard);
        let ids = vec![Tokenizer::UNK; 17];
        let mut g = Graph::new(m.params());
        assert!(matches!(
            m.forward_baseline(&mut g, &ids, &mut ForwardCtx::eval()),
            Err(ModelError::TooLong { len: 17, max: 16 })
        ));
    }
}
