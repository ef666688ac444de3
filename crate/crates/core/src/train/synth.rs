//! Synthetic tagging corpora with controllable lexical ambiguity.
//!
//! Sentences are random filler words with one or two entity mentions spliced
//! in. Entity surfaces are pronounceable nonsense words, so context says
//! nothing about their type. A fraction of the surfaces belong to two
//! categories; each example is paired with one of two lexicon variants, and
//! in variant `k` an ambiguous surface is listed only under its `k`-th
//! category, which is also its gold label in that example. A tagger that
//! ignores the lexicon can do no better than guess on those mentions.
//!
//! Each variant also holds noise: some filler words listed under random
//! categories, and single words of multi-word entities listed on their own.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{write_conll, RawSentence};

const FILLER: &[&str] = &[
    "the", "a", "to", "and", "of", "in", "for", "on", "with", "at", "by", "from", "up", "about", "into", "over",
    "after", "play", "show", "find", "tell", "me", "please", "some", "any", "new", "old", "good", "best", "now",
    "today", "later", "again", "just", "really", "want", "need", "like", "know", "see", "get", "give", "open",
    "start", "stop", "next", "last", "this", "that", "my", "your", "our", "their", "one", "more", "most", "very",
    "then", "there", "here", "what", "who", "where", "when", "how", "can", "could", "would", "should", "is",
    "was", "be", "have", "has", "do", "did", "say", "said", "look", "think", "come", "go", "make", "take",
];

const CATEGORY_NAMES: &[&str] = &["song", "singer", "movie", "device", "city", "team", "book", "food"];

const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "dr", "kr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub categories: usize,
    /// Size of the entity inventory.
    pub entities: usize,
    /// Fraction of surfaces listed under two categories.
    pub ambiguity_rate: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub max_mentions: usize,
    /// Fraction of filler words also listed in the lexicon, under a random category.
    pub distractor_rate: f64,
    /// Fraction of two-word entities whose words are also listed on their own.
    pub fragment_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            categories: 4,
            entities: 600,
            ambiguity_rate: 0.5,
            train: 2000,
            dev: 300,
            test: 500,
            min_filler: 3,
            max_filler: 8,
            max_mentions: 2,
            distractor_rate: 0.1,
            fragment_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.categories == 0 {
            return bad("at least one category is needed");
        }
        if self.ambiguity_rate > 0.0 && self.categories < 2 {
            return bad("ambiguity needs at least two categories");
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate)
            || !(0.0..=1.0).contains(&self.distractor_rate)
            || !(0.0..=1.0).contains(&self.fragment_rate)
        {
            return bad("rates must lie in [0, 1]");
        }
        if self.entities == 0 || self.max_mentions == 0 {
            return bad("entities and max_mentions must be positive");
        }
        if self.min_filler > self.max_filler {
            return bad("min_filler exceeds max_filler");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub surface: Vec<String>,
    /// Category index in each lexicon variant.
    pub category: [usize; 2],
}

impl Entity {
    pub fn is_ambiguous(&self) -> bool {
        self.category[0] != self.category[1]
    }

    pub fn text(&self) -> String {
        self.surface.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub sentence: RawSentence,
    /// Lexicon variant paired with this example.
    pub variant: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub categories: Vec<String>,
    pub entities: Vec<Entity>,
    pub train: Vec<SynthExample>,
    pub dev: Vec<SynthExample>,
    pub test: Vec<SynthExample>,
    /// `(surface, category)` rows of each lexicon variant, sorted.
    pub lexicons: [Vec<(String, String)>; 2],
    rng: ChaCha8Rng,
    config: SynthConfig,
}

fn category_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match CATEGORY_NAMES.get(i) {
            Some(s) => s.to_string(),
            None => format!("cat{i}"),
        })
        .collect()
}

fn nonsense_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let categories = category_names(config.categories);
    let filler: HashSet<&str> = FILLER.iter().copied().collect();

    let mut used_words: HashSet<String> = HashSet::new();
    let mut fresh_word = |rng: &mut ChaCha8Rng| loop {
        let w = nonsense_word(rng);
        if !filler.contains(w.as_str()) && used_words.insert(w.clone()) {
            return w;
        }
    };
    let mut entities = Vec::with_capacity(config.entities);
    for _ in 0..config.entities {
        let words = if rng.gen_bool(0.4) { 2 } else { 1 };
        let surface: Vec<String> = (0..words).map(|_| fresh_word(&mut rng)).collect();
        let a = rng.gen_range(0..config.categories);
        let b = if rng.gen_bool(config.ambiguity_rate) {
            let mut b = rng.gen_range(0..config.categories - 1);
            if b >= a {
                b += 1;
            }
            b
        } else {
            a
        };
        let category = if rng.gen_bool(0.5) { [a, b] } else { [b, a] };
        entities.push(Entity { surface, category });
    }

    let mut lexicons: [BTreeSet<(String, String)>; 2] = Default::default();
    for e in &entities {
        for (v, lex) in lexicons.iter_mut().enumerate() {
            lex.insert((e.text(), categories[e.category[v]].clone()));
        }
    }
    let surfaces: HashSet<String> = entities.iter().map(Entity::text).collect();
    let mut noise = Vec::new();
    for w in FILLER {
        if rng.gen_bool(config.distractor_rate) {
            noise.push((w.to_string(), rng.gen_range(0..config.categories)));
        }
    }
    for e in entities.iter().filter(|e| e.surface.len() > 1) {
        if rng.gen_bool(config.fragment_rate) {
            let w = e.surface.choose(&mut rng).unwrap();
            if !surfaces.contains(w) {
                noise.push((w.clone(), rng.gen_range(0..config.categories)));
            }
        }
    }
    for (w, c) in noise {
        for lex in lexicons.iter_mut() {
            lex.insert((w.clone(), categories[c].clone()));
        }
    }

    let mut corpus = SynthCorpus {
        categories,
        entities,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        lexicons: lexicons.map(|l| l.into_iter().collect()),
        rng,
        config: config.clone(),
    };
    corpus.train = (0..config.train).map(|_| corpus.sample_example()).collect();
    corpus.dev = (0..config.dev).map(|_| corpus.sample_example()).collect();
    corpus.test = (0..config.test).map(|_| corpus.sample_example()).collect();
    Ok(corpus)
}

impl SynthCorpus {
    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn filler_words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| FILLER.choose(&mut self.rng).unwrap().to_string()).collect()
    }

    /// Random filler with the given mentions spliced in at distinct,
    /// non-adjacent slots.
    pub fn sentence_with(&mut self, mentions: &[(Vec<String>, String)]) -> RawSentence {
        let n = self.rng.gen_range(self.config.min_filler..=self.config.max_filler).max(mentions.len());
        let filler = self.filler_words(n);
        let mut slots: Vec<usize> = (0..=n).collect();
        slots.shuffle(&mut self.rng);
        let mut chosen: Vec<usize> = slots.into_iter().take(mentions.len()).collect();
        chosen.sort_unstable();
        let mut order: Vec<usize> = (0..mentions.len()).collect();
        order.shuffle(&mut self.rng);
        let mut words = Vec::new();
        let mut spans = Vec::new();
        let mut next = 0;
        for slot in 0..=n {
            if next < chosen.len() && chosen[next] == slot {
                let (surface, cat) = &mentions[order[next]];
                let start = words.len();
                words.extend(surface.iter().cloned());
                spans.push((start, words.len(), cat.clone()));
                next += 1;
            }
            if slot < n {
                words.push(filler[slot].clone());
            }
        }
        RawSentence { words, spans }
    }

    fn sample_example(&mut self) -> SynthExample {
        let variant = self.rng.gen_range(0..2);
        let k = if self.rng.gen_bool(0.1) {
            0
        } else {
            self.rng.gen_range(1..=self.config.max_mentions)
        };
        let mentions: Vec<(Vec<String>, String)> = (0..k)
            .map(|_| {
                let e = self.entities.choose(&mut self.rng).unwrap();
                (e.surface.clone(), self.categories[e.category[variant]].clone())
            })
            .collect();
        SynthExample {
            sentence: self.sentence_with(&mentions),
            variant,
        }
    }

    /// Single-word surfaces absent from the inventory and from every lexicon.
    pub fn fresh_surfaces(&mut self, n: usize) -> Vec<String> {
        let taken: HashSet<String> = self
            .entities
            .iter()
            .flat_map(|e| e.surface.iter().cloned())
            .chain(self.lexicons.iter().flatten().map(|(s, _)| s.clone()))
            .collect();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = nonsense_word(&mut self.rng);
            if !taken.contains(&w) && !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }

    /// Gold spans missing from their example's lexicon variant.
    pub fn containment_violations(&self) -> Vec<String> {
        let sets: Vec<HashSet<(String, String)>> =
            self.lexicons.iter().map(|l| l.iter().cloned().collect()).collect();
        let mut bad = Vec::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            for (s, e, c) in &ex.sentence.spans {
                let surface = ex.sentence.words[*s..*e].join(" ");
                if !sets[ex.variant].contains(&(surface.clone(), c.clone())) {
                    bad.push(format!("{surface}\t{c}\tvariant {}", ex.variant));
                }
            }
        }
        bad
    }

    /// Writes `{split}.v{k}.conll` and `lexicon.v{k}.tsv` for both variants.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            for v in 0..2 {
                let part: Vec<RawSentence> =
                    split.iter().filter(|e| e.variant == v).map(|e| e.sentence.clone()).collect();
                write_conll(&dir.join(format!("{name}.v{v}.conll")), &part)?;
            }
        }
        for (v, lex) in self.lexicons.iter().enumerate() {
            let mut text = String::new();
            for (s, c) in lex {
                text.push_str(&format!("{s}\t{c}\n"));
            }
            fs::write(dir.join(format!("lexicon.v{v}.tsv")), text)?;
        }
        Ok(())
    }

    /// Mention counts per category over all splits.
    pub fn mention_histogram(&self) -> HashMap<String, usize> {
        let mut h = HashMap::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            for (_, _, c) in &ex.sentence.spans {
                *h.entry(c.clone()).or_default() += 1;
            }
        }
        h
    }
}
