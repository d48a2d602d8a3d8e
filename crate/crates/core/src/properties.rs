//! Property checks over the public API.

use std::collections::HashSet;

use crate::adaptation::{
    clip_critic, grl, lambda_schedule, wasserstein_from_scores, wasserstein_loss, Adversary, AdversaryConfig,
    UdaPairing, WassersteinMode,
};
use crate::corpus::{build_pairs, gen_synthetic, make_split, ArticleId, Regime, SplitName, Task};
use crate::embedding::{decode_store, encode_store, EmbeddingStore, EmbeddingTensor, EntryKind};
use crate::evaluation::threshold_predictions;
use crate::tape::{Mat, Tape};
use crate::training::{BalancedSampler, BatchShape};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// Sentence lengths and enough values for any `dim` up to `max_dim`.
fn tensor(max_dim: usize) -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    prop::collection::vec(1usize..6, 1..4).prop_flat_map(move |lengths| {
        let n: usize = lengths.iter().sum::<usize>() * max_dim;
        (Just(lengths), prop::collection::vec(-1e6f32..1e6, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairs_are_label_faithful(seed in 0u64..500, docs in 5usize..40, task_a in any::<bool>()) {
        let (d, texts) = gen_synthetic(docs, 10, 60, 0.8, seed).unwrap();
        let task = if task_a { Task::A } else { Task::B };
        let split = make_split(SplitName::Split1To0, None, None, Regime::None).unwrap();
        let pairs = build_pairs(&d, &texts, task, &split.source).unwrap();
        prop_assert_eq!(pairs.len(), d.len() * split.source.len());
        for p in &pairs {
            let doc = d.iter().find(|x| x.doc_id == p.doc_ref).unwrap();
            prop_assert_eq!(p.label, Some(doc.gold(task).contains(&p.article)));
        }
    }

    #[test]
    fn synthetic_corpus_depends_only_on_the_seed(seed in 0u64..1000) {
        let a = gen_synthetic(20, 6, 40, 1.0, seed).unwrap();
        let b = gen_synthetic(20, 6, 40, 1.0, seed).unwrap();
        let c = gen_synthetic(20, 6, 40, 1.0, seed + 1).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a.0, &c.0);
    }

    #[test]
    fn emb1_round_trip_is_bit_exact(
        dim in 1usize..5,
        docs in prop::collection::vec(tensor(4), 1..4),
        arts in prop::collection::vec(tensor(4), 0..3),
    ) {
        let mut store = EmbeddingStore::new(dim);
        for (kind, items) in [(EntryKind::Document, docs), (EntryKind::Article, arts)] {
            for (i, (lengths, values)) in items.into_iter().enumerate() {
                let n = lengths.iter().sum::<usize>() * dim;
                let id = format!("{kind:?}-{i}");
                store.insert(EmbeddingTensor::new(id, kind, dim, lengths, values[..n].to_vec()).unwrap()).unwrap();
            }
        }
        let bytes = encode_store(&store).unwrap();
        let back = decode_store(&bytes).unwrap();
        prop_assert_eq!(encode_store(&back).unwrap(), bytes);
        prop_assert_eq!(back, store);
    }

    #[test]
    fn grl_reverses_and_scales_the_gradient(x0 in matrix(2, 3), w in matrix(2, 3), lambda in 0.0f64..2.0) {
        let run = |reverse: bool| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let y = if reverse { grl(&mut t, x, lambda) } else { x };
            let th = t.tanh(y);
            let wv = t.leaf(w.clone());
            let p = t.mul(th, wv);
            let loss = t.sum(p);
            t.backward(loss).get(x).cloned().unwrap_or_else(|| Mat::zeros((2, 3)))
        };
        let (plain, reversed) = (run(false), run(true));
        for (r, p) in reversed.iter().zip(plain.iter()) {
            prop_assert!((r + lambda * p).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn uda_wasserstein_is_antisymmetric(seed in 0u64..1000, feats in matrix(6, 4), split in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv = Adversary::new(AdversaryConfig::new(4, 1), &mut rng).unwrap();
        let ids: Vec<usize> = (0..6).map(|i| if i < split { 0 } else { 1 }).collect();
        let swapped: Vec<usize> = ids.iter().map(|d| 1 - d).collect();
        let mode = WassersteinMode::Uda { num_source: 1, pairing: UdaPairing::Pooled };
        let l = wasserstein_loss(&feats, &ids, &adv, mode).unwrap();
        let ls = wasserstein_loss(&feats, &swapped, &adv, mode).unwrap();
        prop_assert!((l + ls).abs() <= 1e-12);
    }

    #[test]
    fn linear_critic_ignores_a_common_shift(feats in matrix(6, 3), w in matrix(3, 1), shift in matrix(1, 3)) {
        let ids = [0, 0, 1, 1, 1, 0];
        let mode = WassersteinMode::Uda { num_source: 1, pairing: UdaPairing::Pooled };
        let loss = |x: &Mat| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let wv = t.leaf(w.clone());
            let s = t.matmul(xv, wv);
            let l = wasserstein_from_scores(&mut t, s, &ids, mode).unwrap();
            t.value(l)[[0, 0]]
        };
        let moved = &feats + &shift;
        prop_assert!((loss(&feats) - loss(&moved)).abs() <= 1e-9);
    }

    #[test]
    fn clipping_bounds_every_critic_weight(seed in 0u64..1000, c in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adv = Adversary::new(AdversaryConfig::new(5, 3), &mut rng).unwrap();
        for p in adv.params.params.iter_mut() {
            p.value.mapv_inplace(|v| v * 50.0);
        }
        clip_critic(&mut adv, c).unwrap();
        prop_assert!(adv.critic_values().all(|w| (-c..=c).contains(&w)));
    }

    #[test]
    fn lambda_is_monotone_and_bounded(total in 1u64..100_000, a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t1 = (lo * total as f64) as u64;
        let t2 = (hi * total as f64) as u64;
        let l1 = lambda_schedule(t1, total, gamma).unwrap();
        let l2 = lambda_schedule(t2, total, gamma).unwrap();
        prop_assert!(0.0 <= l1 && l1 <= l2 && l2 <= (gamma / 2.0).tanh() + 1e-15);
    }

    #[test]
    fn sampler_batches_are_balanced(seed in 0u64..500, docs in 20usize..60) {
        let (d, texts) = gen_synthetic(docs, 10, 60, 1.0, seed).unwrap();
        let split = make_split(SplitName::Split0To1, None, None, Regime::None).unwrap();
        let pool = build_pairs(&d, &texts, Task::A, &split.source).unwrap();
        let Ok(mut s) = BalancedSampler::new(&pool, BatchShape::default()) else {
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let b = s.sample(&mut rng);
            prop_assert_eq!(b.len(), 16);
            let arts: HashSet<&ArticleId> = b.iter().map(|&i| &pool[i].article).collect();
            prop_assert_eq!(arts.len(), 4);
            for a in arts {
                let of = |l: bool| b.iter().filter(|&&i| &pool[i].article == a && pool[i].label == Some(l)).count();
                prop_assert_eq!((of(true), of(false)), (2, 2));
            }
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_predictions(
        probs in prop::collection::vec(0.0f64..1.0, 1..10),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let all = ArticleId::all();
        let scored: Vec<(ArticleId, f64)> = all.iter().cloned().zip(probs).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(threshold_predictions(&scored, hi).is_subset(&threshold_predictions(&scored, lo)));
    }
}
