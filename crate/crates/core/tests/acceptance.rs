//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to the
//! terminal (uncaptured) and then asserts.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use dylex::data::{LabeledSentence, Span, SubwordId, Tokenizer};
use dylex::matcher::{derive_denoise_labels, fast_match, match_sentence, CandidateTagSequence, MatchSet};
use dylex::model::{DyLexModel, ForwardCtx, FusionMode, ModelConfig};
use dylex::tensor::Graph;
use dylex::train::experiment::{Experiment, RunResult};
use dylex::train::gradcheck::{full_model_gradcheck, GradcheckOptions};
use dylex::train::synth::SynthConfig;
use dylex::train::TrainConfig;
use dylex::vocab::{CategoryId, TagId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const TOKENIZER_VOCAB: usize = 800;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{verdict} criterion {n:>2} {name}: {detail}");
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c01_matching_equals_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let tok = word_tokenizer(400);
    let mut mismatches = 0;
    let mut total_matches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=10_000);
        let entries = random_entries(&mut rng, 400, n, 4);
        let lex = build_lexicon(&tok, &entries);
        let len = rng.gen_range(0..=62);
        let s = random_sentence(&mut rng, 400, len);
        let got: Vec<_> = fast_match(&lex.snapshot(), &s).iter().map(|c| (c.start, c.end, c.category)).collect();
        let want: Vec<_> = brute_force(&entries, &s).into_iter().collect();
        total_matches += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 60.0;
    report(1, "matching oracle", pass, &format!("200 instances, {mismatches} mismatches, {total_matches} matches, {secs:.1}s"));
    assert!(pass);
}

fn span_set(tags: &[TagId]) -> BTreeSet<(usize, usize, u32)> {
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < tags.len() {
        let t = tags[i].0;
        if t != 0 && t % 2 == 1 {
            let c = (t - 1) / 2;
            let mut j = i + 1;
            while j < tags.len() && tags[j].0 == 2 + 2 * c {
                j += 1;
            }
            out.insert((i, j, c));
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

#[test]
fn c02_denoise_labels_equal_span_sets() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let v = vocab();
    let mut mismatches = 0;
    let mut positives = 0;
    for _ in 0..500 {
        let len = rng.gen_range(1..40);
        let l = len + 2;
        let gold_spans: Vec<_> = random_spans(&mut rng, len, 4).into_iter().map(|(s, e, c)| (s + 1, e + 1, c)).collect();
        let gold = tags_by_hand(l, &gold_spans);
        let truth = span_set(&gold);
        let mut cands = Vec::new();
        for _ in 0..rng.gen_range(0..16) {
            let s = rng.gen_range(1..=len);
            let e = rng.gen_range(s + 1..=len + 1);
            cands.push(CandidateTagSequence::new(l, s, e, CategoryId(rng.gen_range(0..3)), &v));
        }
        for &(s, e, c) in &gold_spans {
            if rng.gen_bool(0.5) {
                cands.push(CandidateTagSequence::new(l, s, e, CategoryId(c as u32), &v));
            }
        }
        let labels = derive_denoise_labels(&cands, &gold, &v).unwrap();
        positives += labels.iter().filter(|y| **y).count();
        if cands.iter().zip(&labels).any(|(c, y)| *y != truth.contains(&(c.start, c.end, c.category.0))) {
            mismatches += 1;
        }
    }
    let ex = running_example();
    let set = match_sentence(&ex.lexicon.snapshot(), ex.sentence.subword_ids(), 4, 16)
        .with_labels(&ex.sentence.gold_tags, &ex.vocab)
        .unwrap();
    let fixture_ok = set.denoise_labels.as_deref() == Some(&[false, true, true, false][..]);
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && fixture_ok && secs < 10.0;
    report(
        2,
        "denoise-label oracle",
        pass,
        &format!("500 instances, {mismatches} mismatches, {positives} positives, fixture rows 2 and 3 positive: {fixture_ok}, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn c03_full_model_gradients() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for fusion in [FusionMode::Hard, FusionMode::Soft] {
        let r = full_model_gradcheck(&GradcheckOptions {
            fusion,
            ..Default::default()
        })
        .unwrap();
        worst = worst.max(r.max_rel_error);
        coords += r.coordinates_checked;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 120.0;
    report(3, "gradient check", pass, &format!("max relative error {worst:.2e} over {coords} coordinates, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c04_empty_match_set_is_the_baseline() {
    let ex = running_example();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut equal = 0;
    for trial in 0..100u64 {
        let cfg = ModelConfig {
            hidden: 16,
            heads: 2,
            ffn: 32,
            fusion: if trial % 2 == 0 { FusionMode::Hard } else { FusionMode::Soft },
            ..Default::default()
        };
        let mut m = DyLexModel::<f32>::new(cfg, ex.tokenizer.clone(), ex.vocab.clone(), trial).unwrap();
        m.perturb(rng.gen_range(0.0..1.0), trial);
        let len = rng.gen_range(0..30);
        let mut ids = vec![Tokenizer::CLS];
        ids.extend((0..len).map(|_| SubwordId(rng.gen_range(1..ex.tokenizer.vocab_size() as u32))));
        ids.push(Tokenizer::SEP);
        let mut g1 = Graph::new(m.params());
        let out = m.forward(&mut g1, &ids, &MatchSet::default(), &mut ForwardCtx::eval()).unwrap();
        let mut g2 = Graph::new(m.params());
        let base = m.forward_baseline(&mut g2, &ids, &mut ForwardCtx::eval()).unwrap();
        let a: Vec<u32> = g1.value(out.tag_logits).iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = g2.value(base).iter().map(|x| x.to_bits()).collect();
        if a == b {
            equal += 1;
        }
    }
    let pass = equal == 100;
    report(4, "pluggability", pass, &format!("{equal}/100 trials bitwise equal"));
    assert!(pass);
}

struct SeedRuns {
    hard: RunResult,
    baseline: RunResult,
    soft: RunResult,
    top2: RunResult,
    top4: RunResult,
}

fn synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ambiguity_rate: 0.5,
        train: 2000,
        dev: 300,
        test: 500,
        ..Default::default()
    }
}

fn runs() -> &'static Vec<SeedRuns> {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let exp = Experiment::new(&synth(seed), TOKENIZER_VOCAB).unwrap();
                let train = TrainConfig {
                    seed,
                    ..Default::default()
                };
                let hard = ModelConfig::default();
                let run = |m: ModelConfig, lex: bool| {
                    let r = exp.run(&m, &train, lex).unwrap();
                    let _ = writeln!(
                        std::io::stderr(),
                        "  seed {seed} fusion {} top_n {} lexicon {lex}: f1 {:.4} denoise {:.4} ({:.0}s, {} epochs)",
                        m.fusion,
                        m.top_n,
                        r.test.span_f1,
                        r.test.denoise_accuracy,
                        r.seconds,
                        r.outcome.history.len()
                    );
                    r
                };
                SeedRuns {
                    hard: run(hard.clone(), true),
                    baseline: run(hard.clone(), false),
                    soft: run(
                        ModelConfig {
                            fusion: FusionMode::Soft,
                            ..hard.clone()
                        },
                        true,
                    ),
                    top2: run(ModelConfig { top_n: 2, ..hard.clone() }, true),
                    top4: run(ModelConfig { top_n: 4, ..hard.clone() }, true),
                }
            })
            .collect()
    })
}

#[test]
fn c05_lexicon_lift() {
    let r = runs();
    let with = mean(r.iter().map(|s| 100.0 * s.hard.test.span_f1));
    let without = mean(r.iter().map(|s| 100.0 * s.baseline.test.span_f1));
    let lift = with - without;
    let below_ceiling = without <= 90.0;
    let secs: f64 = r.iter().map(|s| s.hard.seconds + s.baseline.seconds).sum();
    let pass = lift >= 10.0 && below_ceiling && secs < 1200.0;
    report(
        5,
        "lexicon lift",
        pass,
        &format!("lexicon {with:.2} vs baseline {without:.2}, lift {lift:.2} F1 over 3 seeds, {secs:.0}s training"),
    );
    assert!(pass);
}

#[test]
fn c06_denoiser_accuracy() {
    let acc = mean(runs().iter().map(|s| s.hard.test.denoise_accuracy));
    let pass = acc >= 0.95;
    report(6, "denoiser accuracy", pass, &format!("mean {acc:.4} over 3 seeds"));
    assert!(pass);
}

#[test]
fn c07_dynamic_lexicon() {
    let run = &runs()[0].hard;
    let model = &run.outcome.model;
    let mut exp = Experiment::new(&synth(SEEDS[0]), TOKENIZER_VOCAB).unwrap();
    let categories = exp.corpus.categories.clone();
    let mut lex = exp.lexicons[0].clone();
    let fresh = exp.corpus.fresh_surfaces(24);
    let predict = |lex: &dylex::lexicon::Lexicon, s: &LabeledSentence| {
        let ms = model.match_encoding(&lex.snapshot(), &s.encoding);
        model.predict(s, &ms).unwrap().spans
    };
    let (mut flips, mut restored) = (0, 0);
    for (i, w) in fresh.iter().enumerate() {
        let raw = exp.corpus.sentence_with(&[(vec![w.clone()], categories[0].clone())]);
        let (s, e, _) = raw.spans[0];
        let sentence = LabeledSentence::unlabeled(&raw.words, model.tokenizer());
        let before = predict(&lex, &sentence);
        // a category the model does not already predict for this span
        let c = (0..categories.len())
            .map(|k| CategoryId(((i + k) % categories.len()) as u32))
            .find(|&c| !before.contains(&Span::new(s, e, c)))
            .unwrap();
        let name = model.vocab().category_name(c).to_string();
        lex.insert(w, &name).unwrap();
        let after = predict(&lex, &sentence);
        if after != before && after.contains(&Span::new(s, e, c)) {
            flips += 1;
        }
        lex.remove(w, &name);
        if predict(&lex, &sentence) == before {
            restored += 1;
        }
    }
    let n = fresh.len();
    let rate = flips as f64 / n as f64;
    let pass = rate >= 0.9 && restored == n;
    report(
        7,
        "dynamic lexicon",
        pass,
        &format!("{flips}/{n} predictions flipped to the added entry ({:.0}%), {restored}/{n} restored on removal", 100.0 * rate),
    );
    assert!(pass);
}

#[test]
fn c08_hard_not_worse_than_soft() {
    let r = runs();
    let hard = mean(r.iter().map(|s| 100.0 * s.hard.test.span_f1));
    let soft = mean(r.iter().map(|s| 100.0 * s.soft.test.span_f1));
    let pass = hard >= soft - 0.5;
    let per_seed: Vec<String> = r
        .iter()
        .map(|s| format!("{:.2}/{:.2}", 100.0 * s.hard.test.span_f1, 100.0 * s.soft.test.span_f1))
        .collect();
    report(
        8,
        "fusion ordering",
        pass,
        &format!("hard {hard:.2} vs soft {soft:.2} (per seed hard/soft {}), strict ordering {}", per_seed.join(" "), hard > soft),
    );
    assert!(pass);
}

#[test]
fn c09_top_n_does_not_help() {
    let r = runs();
    let n1 = mean(r.iter().map(|s| 100.0 * s.hard.test.span_f1));
    let n2 = mean(r.iter().map(|s| 100.0 * s.top2.test.span_f1));
    let n4 = mean(r.iter().map(|s| 100.0 * s.top4.test.span_f1));
    let pass = (n2 - n1).abs() <= 1.0 && (n4 - n1).abs() <= 1.0;
    report(9, "top-n", pass, &format!("n=1 {n1:.2}, n=2 {n2:.2}, n=4 {n4:.2}"));
    assert!(pass);
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[test]
fn c10_scale() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let words = 20_000;
    let tok = word_tokenizer(words);
    let mut lex = dylex::lexicon::Lexicon::new(tok.clone(), vocab());
    while lex.len() < 1_000_000 {
        for (ws, c) in random_entries(&mut rng, words, 1_000_000 - lex.len(), 4) {
            lex.insert(&surface(&ws), CATEGORIES[c]).unwrap();
        }
    }
    let built = start.elapsed().as_secs_f64();
    let snap = lex.snapshot();
    let mut candidates = 0;
    for _ in 0..10_000 {
        let s = random_sentence(&mut rng, words, 62);
        candidates += match_sentence(&snap, &s, 1, 16).len();
    }
    let secs = start.elapsed().as_secs_f64();
    let peak = peak_rss_bytes();
    let gb = peak.map(|b| b as f64 / (1u64 << 30) as f64);
    let pass = secs < 300.0 && gb.is_some_and(|g| g < 4.0);
    report(
        10,
        "scale",
        pass,
        &format!(
            "{} entries built in {built:.1}s, 10000 sentences matched ({candidates} candidates), {secs:.1}s total, peak rss {}",
            lex.len(),
            gb.map_or("unknown".into(), |g| format!("{g:.2} GB"))
        ),
    );
    assert!(pass);
}
