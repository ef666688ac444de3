//! Model checkpoints.
//!
//! The checkpoint header holds `key = value` lines for the model
//! configuration, the category list and the tokenizer settings, followed by a
//! `[tokenizer]` line and the tokenizer pieces, one per line.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use super::{DyLexModel, ModelConfig, ModelError};
use crate::data::{Segmentation, Tokenizer, TokenizerOptions};
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::vocab::TagVocabulary;

const TOKENIZER_MARK: &str = "[tokenizer]";

impl DyLexModel<f32> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let mut header = String::from("format = dylex\n");
        header.push_str(&self.config.to_kv_lines());
        let opts = self.tokenizer.options();
        header.push_str(&format!("categories = {}\n", self.vocab.to_header_value()));
        header.push_str(&format!("segmentation = {}\n", opts.segmentation.as_str()));
        header.push_str(&format!("lowercase = {}\n", opts.lowercase));
        header.push_str(&format!("tokenizer_fingerprint = {:016x}\n", self.tokenizer.fingerprint()));
        header.push_str(TOKENIZER_MARK);
        header.push('\n');
        for i in 0..self.tokenizer.vocab_size() {
            let p = self.tokenizer.piece(crate::data::SubwordId(i as u32));
            if p.contains('\n') {
                return Err(ModelError::Checkpoint(format!("tokenizer piece {i} contains a newline")));
            }
            header.push_str(p);
            header.push('\n');
        }
        Ok(self.params.to_checkpoint(header))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let (meta, pieces) = match ckpt.header.split_once(&format!("{TOKENIZER_MARK}\n")) {
            Some(parts) => parts,
            None => return Err(bad("header has no tokenizer section".into())),
        };
        let mut config = ModelConfig::default();
        let mut categories = None;
        let mut options = TokenizerOptions::default();
        let mut fingerprint = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            match k {
                "format" if v == "dylex" => {}
                "categories" => categories = Some(v.to_string()),
                "segmentation" => {
                    options.segmentation =
                        Segmentation::parse(v).ok_or_else(|| bad(format!("unknown segmentation `{v}`")))?
                }
                "lowercase" => {
                    options.lowercase = super::parse_bool(v).ok_or_else(|| bad(format!("bad lowercase `{v}`")))?
                }
                "tokenizer_fingerprint" => {
                    fingerprint = Some(u64::from_str_radix(v, 16).map_err(|_| bad(format!("bad fingerprint `{v}`")))?)
                }
                _ => {
                    if !config.set(k, v).map_err(bad)? {
                        return Err(bad(format!("unknown header key `{k}`")));
                    }
                }
            }
        }
        let vocab = TagVocabulary::from_header_value(&categories.ok_or_else(|| bad("no categories".into()))?)
            .map_err(|e| bad(e.to_string()))?;
        let tokenizer = Tokenizer::from_pieces(pieces.lines().map(str::to_string).collect(), options)?;
        if Some(tokenizer.fingerprint()) != fingerprint {
            return Err(bad("tokenizer fingerprint does not match its pieces".into()));
        }
        let expected = (tokenizer.vocab_size(), vocab.label_count(), vocab.tag_count());
        let recorded = (config.subword_vocab_size, config.label_vocab_size, config.tag_vocab_size);
        if expected != recorded {
            return Err(bad(format!(
                "vocabulary sizes {recorded:?} disagree with tokenizer and categories {expected:?}"
            )));
        }
        let mut model = DyLexModel::new(config, Arc::new(tokenizer), vocab, 0)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }
}

pub fn save_model(path: &Path, model: &DyLexModel<f32>) -> Result<(), ModelError> {
    let ckpt = model.to_checkpoint()?;
    write_checkpoint(BufWriter::new(File::create(path)?), &ckpt)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DyLexModel<f32>, ModelError> {
    let ckpt = read_checkpoint(BufReader::new(File::open(path)?))?;
    DyLexModel::from_checkpoint(&ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{CHECKPOINT_VERSION};

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let tok = Arc::new(Tokenizer::build(["alpha beta gamma"], 40, TokenizerOptions::default()));
        let vocab = TagVocabulary::new(["A", "B"]).unwrap();
        let config = ModelConfig {
            hidden: 8,
            heads: 2,
            ffn: 8,
            layers: 1,
            max_seq_length: 12,
            ..Default::default()
        };
        let m = DyLexModel::<f32>::new(config, tok, vocab, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab(), m.vocab());
        assert_eq!(back.tokenizer().fingerprint(), m.tokenizer().fingerprint());
        assert_eq!(back.params(), m.params());
        assert_eq!(CHECKPOINT_VERSION, 1);
    }

    #[test]
    fn mismatched_header_is_refused() {
        let tok = Arc::new(Tokenizer::build(["alpha"], 20, TokenizerOptions::default()));
        let config = ModelConfig {
            hidden: 4,
            heads: 1,
            ffn: 4,
            layers: 1,
            max_seq_length: 8,
            ..Default::default()
        };
        let m = DyLexModel::<f32>::new(config, tok, TagVocabulary::new(["A"]).unwrap(), 1).unwrap();
        let mut ckpt = m.to_checkpoint().unwrap();
        ckpt.header = ckpt.header.replace("categories = A", "categories = A,B");
        assert!(matches!(DyLexModel::from_checkpoint(&ckpt), Err(ModelError::Checkpoint(_))));
    }
}
