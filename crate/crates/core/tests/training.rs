use std::collections::HashSet;

use dylex::data::Span;
use dylex::model::{DyLexModel, ForwardCtx, ForwardOutput, FusionMode, ModelConfig};
use dylex::tensor::{write_checkpoint, Graph, ParamStore};
use dylex::train::experiment::Experiment;
use dylex::train::synth::{generate, SynthConfig};
use dylex::train::{evaluate, joint_loss, span_f1, train, EpochLog, PreparedExample, TrainConfig};
use dylex::vocab::{CategoryId, TagId};
use proptest::prelude::*;
use std::sync::Arc;

fn span_strategy() -> impl Strategy<Value = Vec<Span>> {
    prop::collection::vec((0usize..12, 1usize..4, 0u32..3), 0..=20)
        .prop_map(|v| v.into_iter().map(|(s, l, c)| Span::new(s, s + l, CategoryId(c))).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn span_f1_matches_set_arithmetic(pairs in prop::collection::vec((span_strategy(), span_strategy()), 1..5)) {
        let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (mut tp, mut np, mut ng) = (0.0, 0.0, 0.0);
        for (p, g) in pred.iter().zip(&gold) {
            let p: HashSet<_> = p.iter().map(|s| (s.start, s.end, s.category.0)).collect();
            let g: HashSet<_> = g.iter().map(|s| (s.start, s.end, s.category.0)).collect();
            tp += p.intersection(&g).count() as f64;
            np += p.len() as f64;
            ng += g.len() as f64;
        }
        let pr = if np > 0.0 { tp / np } else { 0.0 };
        let rc = if ng > 0.0 { tp / ng } else { 0.0 };
        let f = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
        let got = span_f1(&pred, &gold);
        prop_assert!((got.precision - pr).abs() < 1e-12);
        prop_assert!((got.recall - rc).abs() < 1e-12);
        prop_assert!((got.f1 - f).abs() < 1e-12);
        for v in [got.precision, got.recall, got.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn joint_loss_is_nonnegative(seed in any::<u64>(), lambda in 0.0f64..3.0, sigmoid in any::<bool>()) {
        let (exp, model) = tiny_setup(seed % 4);
        let data = exp.prepare(&exp.corpus.train[..4], true, &model.config).unwrap();
        for ex in &data {
            let mut g = Graph::new(model.params());
            let out = model.forward(&mut g, ex.sentence.subword_ids(), &ex.matches, &mut ForwardCtx::eval()).unwrap();
            let l = joint_loss(&mut g, &out, &ex.targets, ex.matches.denoise_labels.as_deref(), lambda, sigmoid).unwrap();
            prop_assert!(g.scalar(l.total) >= 0.0);
            prop_assert!(g.scalar(l.tag) >= 0.0);
        }
    }
}

#[test]
fn joint_loss_vanishes_when_both_heads_are_exact() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let targets = [None, Some(TagId(2)), Some(TagId(0)), None];
    let mut logits = vec![0.0; 4 * 3];
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            logits[r * 3 + t.index()] = 60.0;
        }
    }
    let logits = g.constant_matrix(4, 3, logits).unwrap();
    let z = g.constant_matrix(2, 1, vec![1.0 - 1e-15, 1e-15]).unwrap();
    let out = ForwardOutput {
        tag_logits: logits,
        denoise_probs: Some(z),
        selected_mask: vec![true, false],
        e_u: logits,
        e_k: None,
        r_d: vec![],
    };
    let l = joint_loss(&mut g, &out, &targets, Some(&[true, false]), 1.0, false).unwrap();
    // bce clamps probabilities away from 0 and 1
    assert!(g.scalar(l.total) < 1e-6, "{}", g.scalar(l.total));
    let wrong = joint_loss(&mut g, &out, &targets, Some(&[false, true]), 1.0, false).unwrap();
    assert!(g.scalar(wrong.total) > 1.0);
}

fn tiny_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        entities: 60,
        train: 40,
        dev: 10,
        test: 10,
        ..Default::default()
    }
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        hidden: 16,
        heads: 2,
        ffn: 32,
        layers: 1,
        max_seq_length: 64,
        ..Default::default()
    }
}

fn tiny_setup(seed: u64) -> (Experiment, DyLexModel<f32>) {
    let exp = Experiment::new(&tiny_cfg(seed), 200).unwrap();
    let model = DyLexModel::<f32>::new(tiny_model_cfg(), Arc::clone(&exp.tokenizer), exp.vocab.clone(), seed).unwrap();
    (exp, model)
}

fn mean_loss(model: &DyLexModel<f32>, data: &[PreparedExample]) -> f64 {
    data.iter()
        .map(|ex| {
            let mut g = Graph::new(model.params());
            let out = model.forward(&mut g, ex.sentence.subword_ids(), &ex.matches, &mut ForwardCtx::eval()).unwrap();
            let l = joint_loss(&mut g, &out, &ex.targets, ex.matches.denoise_labels.as_deref(), 1.0, false).unwrap();
            g.scalar(l.total) as f64
        })
        .sum::<f64>()
        / data.len() as f64
}

fn checkpoint_bytes(m: &DyLexModel<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &m.to_checkpoint().unwrap()).unwrap();
    buf
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let (exp, model) = tiny_setup(0);
    let data = exp.prepare(&exp.corpus.train, true, &model.config).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let mut log = Vec::new();
    let out = train(model.clone(), &data, &data, &cfg, Some(&mut log)).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(checkpoint_bytes(&out.model), checkpoint_bytes(&model));
    assert_eq!(String::from_utf8(log).unwrap(), format!("{}\n", EpochLog::HEADER));
}

#[test]
fn one_epoch_changes_the_loss() {
    let (exp, model) = tiny_setup(1);
    let data = exp.prepare(&exp.corpus.train[..10], true, &model.config).unwrap();
    let before = mean_loss(&model, &data);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    let out = train(model, &data, &[], &cfg, None).unwrap();
    let after = mean_loss(&out.model, &data);
    assert!(after < before, "{before} -> {after}");
    assert_eq!(out.history.len(), 1);
    assert!(out.best_epoch.is_none());
}

#[test]
fn training_is_seed_deterministic() {
    let run = || {
        let (exp, model) = tiny_setup(2);
        let tr = exp.prepare(&exp.corpus.train, true, &model.config).unwrap();
        let dev = exp.prepare(&exp.corpus.dev, true, &model.config).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..Default::default()
        };
        let mut log = Vec::new();
        let out = train(model, &tr, &dev, &cfg, Some(&mut log)).unwrap();
        (checkpoint_bytes(&out.model), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let text = String::from_utf8(la).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], EpochLog::HEADER);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 7));
}

#[test]
fn teacher_forcing_and_soft_mode_train() {
    for (fusion, forcing) in [(FusionMode::Hard, true), (FusionMode::Soft, false)] {
        let (exp, mut model) = tiny_setup(3);
        model.config.fusion = fusion;
        let data = exp.prepare(&exp.corpus.train[..12], true, &model.config).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            teacher_forcing: forcing,
            ..Default::default()
        };
        let out = train(model, &data, &data, &cfg, None).unwrap();
        let r = evaluate(&out.model, &data).unwrap();
        assert!(r.denoise_total > 0);
        assert!((0.0..=1.0).contains(&r.span_f1));
    }
}

#[test]
fn train_config_rejects_bad_values() {
    for (k, v) in [("batch_size", "0"), ("learning_rate", "0"), ("warmup_proportion", "1")] {
        let mut c = TrainConfig::default();
        assert!(c.set(k, v).unwrap());
        assert!(c.validate().is_err(), "{k}={v}");
    }
    assert!(!TrainConfig::default().set("bogus", "1").unwrap());
}

#[test]
fn synthetic_gold_spans_are_in_their_lexicon() {
    for seed in 0..4 {
        let corpus = generate(&SynthConfig {
            seed,
            train: 300,
            dev: 50,
            test: 50,
            ..Default::default()
        })
        .unwrap();
        let sets: Vec<HashSet<(String, String)>> = corpus.lexicons.iter().map(|l| l.iter().cloned().collect()).collect();
        for ex in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            for (s, e, c) in &ex.sentence.spans {
                let surface = ex.sentence.words[*s..*e].join(" ");
                assert!(sets[ex.variant].contains(&(surface, c.clone())));
            }
        }
        assert!(corpus.containment_violations().is_empty());
    }
}

#[test]
fn ambiguity_rate_controls_category_disagreement() {
    for rate in [0.0, 0.5, 1.0] {
        let corpus = generate(&SynthConfig {
            ambiguity_rate: rate,
            train: 10,
            dev: 0,
            test: 0,
            ..Default::default()
        })
        .unwrap();
        let ambiguous = corpus.entities.iter().filter(|e| e.is_ambiguous()).count() as f64;
        let frac = ambiguous / corpus.entities.len() as f64;
        assert!((frac - rate).abs() < 0.06, "rate {rate}: {frac}");
    }
    assert!(generate(&SynthConfig {
        categories: 1,
        ..Default::default()
    })
    .is_err());
}

#[test]
fn generator_is_deterministic() {
    let a = generate(&tiny_cfg(5)).unwrap();
    let b = generate(&tiny_cfg(5)).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.lexicons, b.lexicons);
    let c = generate(&tiny_cfg(6)).unwrap();
    assert_ne!(a.train, c.train);
}
