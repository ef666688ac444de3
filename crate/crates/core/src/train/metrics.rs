use std::collections::{BTreeMap, HashSet};

use crate::data::Span;
use crate::vocab::TagVocabulary;

/// Micro precision, recall and F1 with `0/0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub span_precision: f64,
    pub span_recall: f64,
    pub span_f1: f64,
    /// Fraction of candidates whose thresholded probability matches its label;
    /// `1.0` when there were no candidates.
    pub denoise_accuracy: f64,
    pub denoise_total: usize,
    pub per_category_f1: BTreeMap<String, f64>,
}

/// Running counts for span F1 and denoising accuracy.
#[derive(Debug, Clone, Default)]
pub struct SpanCounter {
    correct: usize,
    predicted: usize,
    gold: usize,
    per_category: BTreeMap<u32, (usize, usize, usize)>,
    dn_correct: usize,
    dn_total: usize,
}

impl SpanCounter {
    pub fn add_sentence(&mut self, predicted: &[Span], gold: &[Span]) {
        let p: HashSet<&Span> = predicted.iter().collect();
        let g: HashSet<&Span> = gold.iter().collect();
        for s in &p {
            let e = self.per_category.entry(s.category.0).or_default();
            e.1 += 1;
            if g.contains(s) {
                e.0 += 1;
                self.correct += 1;
            }
        }
        for s in &g {
            self.per_category.entry(s.category.0).or_default().2 += 1;
        }
        self.predicted += p.len();
        self.gold += g.len();
    }

    pub fn add_denoise(&mut self, probs: &[f64], labels: &[bool], threshold: f64) {
        for (p, l) in probs.iter().zip(labels) {
            self.dn_total += 1;
            if (*p > threshold) == *l {
                self.dn_correct += 1;
            }
        }
    }

    pub fn report(&self, vocab: &TagVocabulary) -> EvalReport {
        let micro = Prf::from_counts(self.correct, self.predicted, self.gold);
        EvalReport {
            span_precision: micro.precision,
            span_recall: micro.recall,
            span_f1: micro.f1,
            denoise_accuracy: if self.dn_total == 0 {
                1.0
            } else {
                self.dn_correct as f64 / self.dn_total as f64
            },
            denoise_total: self.dn_total,
            per_category_f1: self
                .per_category
                .iter()
                .map(|(c, &(k, p, g))| {
                    let name = vocab.category_name(crate::vocab::CategoryId(*c)).to_string();
                    (name, Prf::from_counts(k, p, g).f1)
                })
                .collect(),
        }
    }
}

/// Exact-match span F1 over a corpus.
pub fn span_f1(predicted: &[Vec<Span>], gold: &[Vec<Span>]) -> Prf {
    let mut c = SpanCounter::default();
    for (p, g) in predicted.iter().zip(gold) {
        c.add_sentence(p, g);
    }
    Prf::from_counts(c.correct, c.predicted, c.gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::CategoryId;

    fn s(a: usize, b: usize, c: u32) -> Span {
        Span::new(a, b, CategoryId(c))
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![vec![s(0, 1, 0), s(2, 4, 1)]];
        assert_eq!(span_f1(&gold, &gold).f1, 1.0);
        assert_eq!(span_f1(&[vec![]], &gold).f1, 0.0);
        assert_eq!(span_f1(&[vec![]], &[vec![]]), Prf::default());
    }

    #[test]
    fn type_mismatch_counts_as_wrong() {
        let p = span_f1(&[vec![s(0, 1, 1), s(2, 4, 1)]], &[vec![s(0, 1, 0), s(2, 4, 1)]]);
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn per_category_breakdown() {
        let v = TagVocabulary::new(["a", "b"]).unwrap();
        let mut c = SpanCounter::default();
        c.add_sentence(&[s(0, 1, 0), s(1, 2, 1)], &[s(0, 1, 0), s(3, 4, 1)]);
        c.add_denoise(&[0.9, 0.2, 0.7], &[true, false, false], 0.5);
        let r = c.report(&v);
        assert_eq!(r.per_category_f1["a"], 1.0);
        assert_eq!(r.per_category_f1["b"], 0.0);
        assert!((r.denoise_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }
}
