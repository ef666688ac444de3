//! Word-agnostic tag vocabulary shared by the lexicon, the matcher and the
//! tagger head.
//!
//! Tag ids are laid out as `O = 0`, then `B-c = 1 + 2c` and `I-c = 2 + 2c`
//! for every category `c`, then a padding tag. Lexicon entries never enter
//! this table, so adding or removing entries leaves every id unchanged.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryId(pub u32);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TagId(pub u32);

impl TagId {
    pub const O: TagId = TagId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Outside,
    Begin(CategoryId),
    Inside(CategoryId),
    Pad,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("category `{0}` is not registered")]
    UnknownCategory(String),
    #[error("category names must be non-empty and free of whitespace: `{0}`")]
    InvalidName(String),
    #[error("a degenerate (boundary-only) vocabulary cannot register categories")]
    Degenerate,
    #[error("not a BIO label: `{0}`")]
    BadLabel(String),
}

/// Placeholder category name used by boundary-only lexicons.
pub const DEGENERATE_CATEGORY: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    categories: Vec<String>,
    index: HashMap<String, CategoryId>,
    degenerate: bool,
}

impl TagVocabulary {
    pub fn new<I, S>(categories: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = TagVocabulary {
            categories: Vec::new(),
            index: HashMap::new(),
            degenerate: false,
        };
        for c in categories {
            v.register(c.as_ref())?;
        }
        Ok(v)
    }

    /// Boundary-only vocabulary `{O, B, I, PAD}` for lexicons without
    /// categories, e.g. word segmentation.
    pub fn degenerate() -> Self {
        let mut index = HashMap::new();
        index.insert(DEGENERATE_CATEGORY.to_string(), CategoryId(0));
        index.insert(String::new(), CategoryId(0));
        TagVocabulary {
            categories: vec![DEGENERATE_CATEGORY.to_string()],
            index,
            degenerate: true,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Registers a category, returning its id; existing names keep their id.
    pub fn register(&mut self, name: &str) -> Result<CategoryId, VocabError> {
        if let Some(&id) = self.index.get(name) {
            return Ok(id);
        }
        if self.degenerate {
            return Err(VocabError::Degenerate);
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) || name == DEGENERATE_CATEGORY {
            return Err(VocabError::InvalidName(name.to_string()));
        }
        let id = CategoryId(self.categories.len() as u32);
        self.categories.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn category(&self, name: &str) -> Result<CategoryId, VocabError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| VocabError::UnknownCategory(name.to_string()))
    }

    pub fn category_name(&self, id: CategoryId) -> &str {
        &self.categories[id.index()]
    }

    pub fn categories(&self) -> impl Iterator<Item = (CategoryId, &str)> {
        self.categories
            .iter()
            .enumerate()
            .map(|(i, n)| (CategoryId(i as u32), n.as_str()))
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn begin(&self, c: CategoryId) -> TagId {
        TagId(1 + 2 * c.0)
    }

    pub fn inside(&self, c: CategoryId) -> TagId {
        TagId(2 + 2 * c.0)
    }

    pub fn pad(&self) -> TagId {
        TagId(1 + 2 * self.categories.len() as u32)
    }

    /// Number of labels the tagger predicts (`O`, `B-*`, `I-*`).
    pub fn label_count(&self) -> usize {
        1 + 2 * self.categories.len()
    }

    /// Number of rows in the tag embedding table (labels plus padding).
    pub fn tag_count(&self) -> usize {
        self.label_count() + 1
    }

    pub fn kind(&self, tag: TagId) -> TagKind {
        let t = tag.0;
        if t == 0 {
            TagKind::Outside
        } else if tag == self.pad() {
            TagKind::Pad
        } else if t % 2 == 1 {
            TagKind::Begin(CategoryId((t - 1) / 2))
        } else {
            TagKind::Inside(CategoryId((t - 2) / 2))
        }
    }

    pub fn label(&self, tag: TagId) -> String {
        let named = |prefix: &str, c: CategoryId| {
            if self.degenerate {
                prefix.to_string()
            } else {
                format!("{prefix}-{}", self.category_name(c))
            }
        };
        match self.kind(tag) {
            TagKind::Outside => "O".into(),
            TagKind::Begin(c) => named("B", c),
            TagKind::Inside(c) => named("I", c),
            TagKind::Pad => "[PAD]".into(),
        }
    }

    /// Parses `O`, `B-cat`, `I-cat` (or bare `B`/`I` in degenerate mode).
    pub fn parse_label(&self, label: &str) -> Result<TagId, VocabError> {
        if label == "O" {
            return Ok(TagId::O);
        }
        let (prefix, cat) = match label.split_once('-') {
            Some((p, c)) => (p, c),
            None => (label, ""),
        };
        let c = if self.degenerate && cat.is_empty() {
            CategoryId(0)
        } else if cat.is_empty() {
            return Err(VocabError::BadLabel(label.to_string()));
        } else {
            self.category(cat)?
        };
        match prefix {
            "B" => Ok(self.begin(c)),
            "I" => Ok(self.inside(c)),
            _ => Err(VocabError::BadLabel(label.to_string())),
        }
    }

    /// Stable `name,name,...` rendering used in checkpoint headers.
    pub fn to_header_value(&self) -> String {
        if self.degenerate {
            DEGENERATE_CATEGORY.to_string()
        } else {
            self.categories.join(",")
        }
    }

    pub fn from_header_value(s: &str) -> Result<Self, VocabError> {
        if s == DEGENERATE_CATEGORY {
            return Ok(Self::degenerate());
        }
        Self::new(s.split(',').filter(|x| !x.is_empty()))
    }
}

impl fmt::Display for TagVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = (0..self.tag_count() as u32).map(|t| self.label(TagId(t))).collect();
        write!(f, "{}", labels.join(" "))
    }
}
