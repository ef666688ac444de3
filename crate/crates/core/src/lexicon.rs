//! Categorized lexicon stored as a prefix trie over subword ids.
//!
//! The trie is persistent: nodes are shared through `Arc`, writers copy the
//! path they touch, and a [`TrieSnapshot`] is just a cloned root. Snapshots are
//! immutable and can be matched against from any number of threads while the
//! owning [`Lexicon`] keeps changing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::data::{Segmentation, SubwordId, Tokenizer};
use crate::vocab::{CategoryId, TagVocabulary, VocabError};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("category not registered: {0}")]
    CategoryNotRegistered(String),
    #[error("entry `{0}` tokenizes to nothing")]
    EmptyEntry(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("tokenizer mismatch: lexicon was built with {expected:016x}, got {actual:016x}")]
    TokenizerMismatch { expected: u64, actual: u64 },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One trie node: children keyed by subword id (kept sorted) and the
/// categories of entries ending here.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrieNode {
    children: Vec<(SubwordId, Arc<TrieNode>)>,
    // (category, number of distinct surfaces sharing this piece path)
    leaf: Vec<(CategoryId, u32)>,
}

impl TrieNode {
    pub fn child(&self, id: SubwordId) -> Option<&TrieNode> {
        self.children
            .binary_search_by_key(&id, |(k, _)| *k)
            .ok()
            .map(|i| self.children[i].1.as_ref())
    }

    pub fn children(&self) -> impl Iterator<Item = (SubwordId, &TrieNode)> {
        self.children.iter().map(|(k, n)| (*k, n.as_ref()))
    }

    pub fn leaf_categories(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.leaf.iter().map(|(c, _)| *c)
    }

    fn is_empty(&self) -> bool {
        self.children.is_empty() && self.leaf.is_empty()
    }

    fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(|(_, c)| c.count_nodes()).sum::<usize>()
    }
}

fn trie_insert(node: &mut Arc<TrieNode>, path: &[SubwordId], cat: CategoryId) {
    let n = Arc::make_mut(node);
    let Some((&head, rest)) = path.split_first() else {
        match n.leaf.binary_search_by_key(&cat, |(c, _)| *c) {
            Ok(i) => n.leaf[i].1 += 1,
            Err(i) => n.leaf.insert(i, (cat, 1)),
        }
        return;
    };
    let i = match n.children.binary_search_by_key(&head, |(k, _)| *k) {
        Ok(i) => i,
        Err(i) => {
            n.children.insert(i, (head, Arc::new(TrieNode::default())));
            i
        }
    };
    trie_insert(&mut n.children[i].1, rest, cat);
}

fn trie_remove(node: &mut Arc<TrieNode>, path: &[SubwordId], cat: CategoryId) -> bool {
    let Some((&head, rest)) = path.split_first() else {
        let Ok(i) = node.leaf.binary_search_by_key(&cat, |(c, _)| *c) else {
            return false;
        };
        let n = Arc::make_mut(node);
        if n.leaf[i].1 > 1 {
            n.leaf[i].1 -= 1;
        } else {
            n.leaf.remove(i);
        }
        return true;
    };
    let Ok(i) = node.children.binary_search_by_key(&head, |(k, _)| *k) else {
        return false;
    };
    // Probe first so that a miss never copies shared nodes.
    if !trie_contains(&node.children[i].1, rest, cat) {
        return false;
    }
    let n = Arc::make_mut(node);
    let removed = trie_remove(&mut n.children[i].1, rest, cat);
    if n.children[i].1.is_empty() {
        n.children.remove(i);
    }
    removed
}

fn trie_contains(node: &TrieNode, path: &[SubwordId], cat: CategoryId) -> bool {
    let mut cur = node;
    for &p in path {
        match cur.child(p) {
            Some(c) => cur = c,
            None => return false,
        }
    }
    cur.leaf.binary_search_by_key(&cat, |(c, _)| *c).is_ok()
}

/// Immutable view of a lexicon at one point in time.
#[derive(Debug, Clone)]
pub struct TrieSnapshot {
    root: Arc<TrieNode>,
    vocab: Arc<TagVocabulary>,
    tokenizer_fingerprint: u64,
}

impl TrieSnapshot {
    /// Every `(end, category)` such that `tokens[start..end]` is a stored
    /// entry, in ascending `end` then category order. One walk from the root.
    pub fn match_at(&self, tokens: &[SubwordId], start: usize) -> Vec<(usize, CategoryId)> {
        let mut out = Vec::new();
        let mut node = self.root.as_ref();
        for (offset, &tok) in tokens.iter().enumerate().skip(start) {
            match node.child(tok) {
                Some(next) => node = next,
                None => break,
            }
            out.extend(node.leaf_categories().map(|c| (offset + 1, c)));
        }
        out
    }

    pub fn vocab(&self) -> &TagVocabulary {
        &self.vocab
    }

    pub fn tokenizer_fingerprint(&self) -> u64 {
        self.tokenizer_fingerprint
    }

    pub fn root(&self) -> &TrieNode {
        &self.root
    }

    /// Fails unless `tokenizer` is the one the lexicon was built with.
    pub fn check_tokenizer(&self, tokenizer: &Tokenizer) -> Result<(), LexiconError> {
        let actual = tokenizer.fingerprint();
        if actual != self.tokenizer_fingerprint {
            return Err(LexiconError::TokenizerMismatch {
                expected: self.tokenizer_fingerprint,
                actual,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconStats {
    pub entries: usize,
    pub per_category: BTreeMap<String, usize>,
    pub max_entry_pieces: usize,
    pub trie_nodes: usize,
}

/// Mutable lexicon store bound to one tokenizer.
#[derive(Debug, Clone)]
pub struct Lexicon {
    root: Arc<TrieNode>,
    vocab: Arc<TagVocabulary>,
    tokenizer: Arc<Tokenizer>,
    entries: BTreeSet<(String, CategoryId)>,
}

impl Lexicon {
    pub fn new(tokenizer: Arc<Tokenizer>, vocab: TagVocabulary) -> Self {
        Lexicon {
            root: Arc::new(TrieNode::default()),
            vocab: Arc::new(vocab),
            tokenizer,
            entries: BTreeSet::new(),
        }
    }

    pub fn tokenizer(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    pub fn vocab(&self) -> &TagVocabulary {
        &self.vocab
    }

    pub fn case_fold(&self) -> bool {
        self.tokenizer.options().lowercase
    }

    pub fn register_category(&mut self, name: &str) -> Result<CategoryId, LexiconError> {
        if let Ok(id) = self.vocab.category(name) {
            return Ok(id);
        }
        Ok(Arc::make_mut(&mut self.vocab).register(name)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn normalize(&self, surface: &str) -> String {
        let sep = match self.tokenizer.options().segmentation {
            Segmentation::Whitespace => " ",
            Segmentation::Characters => "",
        };
        self.tokenizer.split_words(surface).join(sep)
    }

    fn check_category(&self, category: CategoryId) -> Result<(), LexiconError> {
        if category.index() >= self.vocab.category_count() {
            return Err(LexiconError::CategoryNotRegistered(format!("#{}", category.0)));
        }
        Ok(())
    }

    /// Inserts `(surface, category)`. Returns `false` when the entry was
    /// already present, in which case nothing changes.
    pub fn insert_entry(&mut self, surface: &str, category: CategoryId) -> Result<bool, LexiconError> {
        self.check_category(category)?;
        let pieces = self.tokenizer.tokenize_text(surface);
        if pieces.is_empty() {
            return Err(LexiconError::EmptyEntry(surface.to_string()));
        }
        let key = (self.normalize(surface), category);
        if self.entries.contains(&key) {
            return Ok(false);
        }
        trie_insert(&mut self.root, &pieces, category);
        self.entries.insert(key);
        Ok(true)
    }

    pub fn insert(&mut self, surface: &str, category: &str) -> Result<bool, LexiconError> {
        let c = self
            .vocab
            .category(category)
            .map_err(|_| LexiconError::CategoryNotRegistered(category.to_string()))?;
        self.insert_entry(surface, c)
    }

    /// Removes `(surface, category)`, returning whether it existed.
    pub fn remove_entry(&mut self, surface: &str, category: CategoryId) -> bool {
        let key = (self.normalize(surface), category);
        if !self.entries.remove(&key) {
            return false;
        }
        let pieces = self.tokenizer.tokenize_text(surface);
        let removed = trie_remove(&mut self.root, &pieces, category);
        debug_assert!(removed, "entry set and trie disagree");
        removed
    }

    pub fn remove(&mut self, surface: &str, category: &str) -> bool {
        match self.vocab.category(category) {
            Ok(c) => self.remove_entry(surface, c),
            Err(_) => false,
        }
    }

    pub fn contains(&self, surface: &str, category: CategoryId) -> bool {
        self.entries.contains(&(self.normalize(surface), category))
    }

    pub fn snapshot(&self) -> TrieSnapshot {
        TrieSnapshot {
            root: Arc::clone(&self.root),
            vocab: Arc::clone(&self.vocab),
            tokenizer_fingerprint: self.tokenizer.fingerprint(),
        }
    }

    pub fn root(&self) -> &TrieNode {
        &self.root
    }

    /// Entries sorted by `(surface, category name)`.
    pub fn entries(&self) -> Vec<(&str, &str)> {
        let mut v: Vec<(&str, &str)> = self
            .entries
            .iter()
            .map(|(s, c)| (s.as_str(), self.vocab.category_name(*c)))
            .collect();
        v.sort();
        v
    }

    pub fn stats(&self) -> LexiconStats {
        let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
        for (_, c) in &self.entries {
            *per_category.entry(self.vocab.category_name(*c).to_string()).or_default() += 1;
        }
        let max_entry_pieces = self
            .entries
            .iter()
            .map(|(s, _)| self.tokenizer.tokenize_text(s).len())
            .max()
            .unwrap_or(0);
        LexiconStats {
            entries: self.entries.len(),
            per_category,
            max_entry_pieces,
            trie_nodes: self.root.count_nodes(),
        }
    }

    /// Reads `surface<TAB>category` rows and inserts them, returning the
    /// number of rows read. Unknown categories are registered when
    /// `auto_register` is set and rejected otherwise.
    pub fn load_tsv(&mut self, path: &Path, auto_register: bool) -> Result<usize, LexiconError> {
        let reader = BufReader::new(File::open(path)?);
        self.read_tsv(reader, auto_register)
    }

    pub fn read_tsv<R: BufRead>(&mut self, reader: R, auto_register: bool) -> Result<usize, LexiconError> {
        let mut count = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let Some((surface, category)) = line.split_once('\t') else {
                return Err(LexiconError::Malformed {
                    line: lineno,
                    message: "expected `surface<TAB>category`".into(),
                });
            };
            if surface.trim().is_empty() || category.is_empty() || category.contains('\t') {
                return Err(LexiconError::Malformed {
                    line: lineno,
                    message: "empty surface or category, or extra columns".into(),
                });
            }
            let cat = if auto_register {
                self.register_category(category).map_err(|e| LexiconError::Malformed {
                    line: lineno,
                    message: e.to_string(),
                })?
            } else {
                self.vocab.category(category).map_err(|_| LexiconError::Malformed {
                    line: lineno,
                    message: format!("category not registered: {category}"),
                })?
            };
            self.insert_entry(surface, cat).map_err(|e| LexiconError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            count += 1;
        }
        Ok(count)
    }

    pub fn save_tsv(&self, path: &Path) -> Result<(), LexiconError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), LexiconError> {
        for (s, c) in self.entries() {
            writeln!(w, "{s}\t{c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenizerOptions;

    fn lexicon() -> Lexicon {
        let words = "play taylor swift 's sparks fly ab abc";
        let tok = Tokenizer::build(words.split(' '), 64, TokenizerOptions::default());
        let vocab = TagVocabulary::new(["singer", "song", "name", "x"]).unwrap();
        Lexicon::new(Arc::new(tok), vocab)
    }

    fn matches(snap: &TrieSnapshot, tok: &Tokenizer, text: &str) -> Vec<(usize, usize, CategoryId)> {
        let ids = tok.tokenize_text(text);
        (0..ids.len())
            .flat_map(|s| snap.match_at(&ids, s).into_iter().map(move |(e, c)| (s, e, c)))
            .collect()
    }

    #[test]
    fn multi_piece_entry_matches_from_its_start() {
        let mut lex = lexicon();
        lex.insert("taylor swift 's", "singer").unwrap();
        let tok = Arc::clone(lex.tokenizer());
        let ids = tok.tokenize_text("taylor swift 's");
        let snap = lex.snapshot();
        let hits = snap.match_at(&ids, 0);
        assert_eq!(hits, vec![(ids.len(), lex.vocab().category("singer").unwrap())]);
        assert!(snap.match_at(&ids, 1).is_empty());
    }

    #[test]
    fn duplicate_insert_leaves_trie_identical() {
        let mut a = lexicon();
        a.insert("sparks fly", "song").unwrap();
        let once = a.root().clone();
        assert!(!a.insert("sparks fly", "song").unwrap());
        assert_eq!(a.root(), &once);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn unknown_category_and_empty_entry_are_rejected() {
        let mut lex = lexicon();
        assert!(matches!(lex.insert("play", "movie"), Err(LexiconError::CategoryNotRegistered(_))));
        assert!(matches!(lex.insert_entry("   ", CategoryId(0)), Err(LexiconError::EmptyEntry(_))));
        assert!(matches!(lex.insert_entry("play", CategoryId(99)), Err(LexiconError::CategoryNotRegistered(_))));
    }

    #[test]
    fn remove_keeps_shared_prefixes() {
        let mut lex = lexicon();
        lex.insert("ab", "x").unwrap();
        lex.insert("ab abc", "x").unwrap();
        assert!(lex.remove("ab abc", "x"));
        assert!(!lex.remove("ab abc", "x"));
        let tok = Arc::clone(lex.tokenizer());
        let snap = lex.snapshot();
        let hits = matches(&snap, &tok, "ab play");
        assert_eq!(hits, vec![(0, 1, lex.vocab().category("x").unwrap())]);
        assert!(matches(&snap, &tok, "ab abc").iter().all(|h| h.2 == CategoryId(3) && h.1 - h.0 == 1));
    }

    #[test]
    fn remove_absent_leaves_trie_unchanged() {
        let mut lex = lexicon();
        lex.insert("sparks fly", "song").unwrap();
        let before = lex.root().clone();
        assert!(!lex.remove("sparks", "song"));
        assert!(!lex.remove("sparks fly", "singer"));
        assert_eq!(lex.root(), &before);
    }

    #[test]
    fn insert_then_remove_restores_empty_trie() {
        let mut lex = lexicon();
        let empty = lex.root().clone();
        lex.insert("play", "name").unwrap();
        lex.insert("play", "song").unwrap();
        lex.remove("play", "name");
        lex.remove("play", "song");
        assert_eq!(lex.root(), &empty);
    }

    #[test]
    fn snapshot_is_isolated_from_later_writes() {
        let mut lex = lexicon();
        let tok = Arc::clone(lex.tokenizer());
        let before = lex.snapshot();
        lex.insert("swift", "name").unwrap();
        assert!(matches(&before, &tok, "swift").is_empty());
        assert_eq!(matches(&lex.snapshot(), &tok, "swift").len(), 1);
        let s1 = lex.snapshot();
        let s2 = lex.snapshot();
        assert_eq!(matches(&s1, &tok, "play swift"), matches(&s2, &tok, "play swift"));
    }

    #[test]
    fn several_categories_per_surface() {
        let mut lex = lexicon();
        lex.insert("swift", "singer").unwrap();
        lex.insert("swift", "name").unwrap();
        let tok = Arc::clone(lex.tokenizer());
        let hits = matches(&lex.snapshot(), &tok, "swift");
        let cats: Vec<_> = hits.iter().map(|h| h.2).collect();
        assert_eq!(cats, vec![CategoryId(0), CategoryId(2)]);
    }

    #[test]
    fn tsv_rows_and_errors() {
        let mut lex = lexicon();
        let n = lex.read_tsv("play\tname\nplay\tname\n\nsparks fly\tsong\n".as_bytes(), false).unwrap();
        assert_eq!(n, 3);
        assert_eq!(lex.len(), 2);
        let err = lex.read_tsv("ok\tname\nbroken line\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, LexiconError::Malformed { line: 2, .. }));
        let err = lex.read_tsv("liverpool\tORG\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, LexiconError::Malformed { line: 1, .. }));
        assert_eq!(lex.read_tsv("liverpool\tORG\n".as_bytes(), true).unwrap(), 1);
        assert!(lex.vocab().category("ORG").is_ok());
        assert_eq!(lex.read_tsv("".as_bytes(), false).unwrap(), 0);
    }

    #[test]
    fn save_is_sorted() {
        let mut lex = lexicon();
        lex.insert("sparks fly", "song").unwrap();
        lex.insert("play", "x").unwrap();
        lex.insert("play", "name").unwrap();
        let mut out = Vec::new();
        lex.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "play\tname\nplay\tx\nsparks fly\tsong\n");
    }

    #[test]
    fn snapshot_rejects_foreign_tokenizer() {
        let lex = lexicon();
        let other = Tokenizer::build(["zzz"], 10, TokenizerOptions::default());
        assert!(lex.snapshot().check_tokenizer(lex.tokenizer()).is_ok());
        assert!(matches!(
            lex.snapshot().check_tokenizer(&other),
            Err(LexiconError::TokenizerMismatch { .. })
        ));
    }
}
