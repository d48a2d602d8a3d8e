//! Desk-scale synthetic experiments.
//!
//! Three comparisons run end to end on generated corpora with the toy
//! encoder: learnability of a planted rule, article-aware against fact-only
//! classification, and source-only training against adversarial adaptation on
//! a split whose target triggers come from a shifted vocabulary region.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::UdaPairing;
use crate::corpus::{
    gen_synthetic_with, make_split, partition_by_date, ArticleId, ArticleText, Document, Regime, SplitName, SplitSpec,
    SyntheticConfig, Task,
};
use crate::embedding::toy_store;
use crate::error::Result;
use crate::evaluation::evaluate_run;
use crate::model::{EncodedCorpus, ModelConfig, Variant};
use crate::objective::Adaptation;
use crate::training::{fit, EpochLog, TrainConfig, TrainingData};

/// A generated corpus, its toy embeddings and a chronological partition.
pub struct SyntheticRun {
    pub texts: Vec<ArticleText>,
    pub inputs: EncodedCorpus,
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

impl SyntheticRun {
    pub fn prepare(cfg: &SyntheticConfig, dim: usize, embed_seed: u64) -> Result<Self> {
        let (docs, texts) = gen_synthetic_with(cfg)?;
        let store = toy_store(&docs, &texts, dim, embed_seed)?;
        let (train, val, test) = partition_by_date(&docs, 0.8, 0.1);
        Ok(SyntheticRun {
            texts,
            inputs: EncodedCorpus::from_store(&store),
            train,
            val,
            test,
        })
    }

    pub fn data(&self, config: &TrainConfig, split: &SplitSpec) -> Result<TrainingData<'_>> {
        TrainingData::new(
            &self.inputs,
            config.variant,
            &self.train,
            &self.val,
            &self.texts,
            config.task,
            split,
        )
    }
}

/// Sizes shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentScale {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub h_gru: usize,
    pub max_epochs: usize,
    pub batches_per_epoch: Option<usize>,
    pub lr: f64,
    pub dropout: f64,
    pub adversary_hidden: (usize, usize),
}

impl Default for ExperimentScale {
    fn default() -> Self {
        ExperimentScale {
            num_docs: 600,
            vocab_size: 24,
            dim: 64,
            h_gru: 16,
            max_epochs: 30,
            batches_per_epoch: None,
            lr: 3e-3,
            dropout: 0.1,
            adversary_hidden: (16, 8),
        }
    }
}

impl ExperimentScale {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut model = ModelConfig::toy(self.dim, self.h_gru);
        model.dropout = self.dropout;
        TrainConfig {
            task: Task::B,
            max_epochs: self.max_epochs,
            batches_per_epoch: self.batches_per_epoch,
            lr: self.lr,
            seed,
            adversary_hidden: self.adversary_hidden,
            model,
            ..TrainConfig::default()
        }
    }
}

fn first_articles(n: usize) -> Vec<ArticleId> {
    ArticleId::all().into_iter().take(n).collect()
}

fn source_split(articles: &[ArticleId]) -> Result<SplitSpec> {
    make_split(SplitName::Custom, Some(articles), None, Regime::None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnabilityOutcome {
    pub log: Vec<EpochLog>,
    pub best_val_micro_f1: f64,
    /// First epoch whose validation micro-F1 reached the target, if any.
    pub epoch_reached: Option<usize>,
}

/// Article-aware training without adaptation on a fully planted corpus of
/// six articles.
pub fn learnability(scale: &ExperimentScale, seed: u64, target: f64, work: &Path) -> Result<LearnabilityOutcome> {
    let cfg = SyntheticConfig::new(scale.num_docs, 6, scale.vocab_size, 1.0, seed);
    let run = SyntheticRun::prepare(&cfg, scale.dim, seed)?;
    let split = source_split(&first_articles(6))?;
    let config = scale.train_config(seed);
    let data = run.data(&config, &split)?;
    let out = fit(&data, &config, &work.join(format!("learnability-{seed}.ckpt")))?;
    let best = out.log.iter().map(|e| e.val_micro_f1).fold(0.0, f64::max);
    Ok(LearnabilityOutcome {
        epoch_reached: out.log.iter().find(|e| e.val_micro_f1 >= target).map(|e| e.epoch),
        best_val_micro_f1: best,
        log: out.log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub article_aware_macro_f1: f64,
    pub fact_only_macro_f1: f64,
}

/// Settings for the article-aware against fact-only comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSetup {
    pub num_articles: usize,
    pub strength: f64,
    pub corpus_seed: u64,
}

impl Default for VariantSetup {
    fn default() -> Self {
        VariantSetup {
            num_articles: 6,
            strength: 0.9,
            corpus_seed: 11,
        }
    }
}

/// Trains both variants with `seed` on one corpus and scores test macro-F1
/// over the source articles.
pub fn compare_variants(
    scale: &ExperimentScale,
    setup: &VariantSetup,
    seed: u64,
    work: &Path,
) -> Result<VariantComparison> {
    let cfg = SyntheticConfig::new(
        scale.num_docs,
        setup.num_articles,
        scale.vocab_size,
        setup.strength,
        setup.corpus_seed,
    );
    let run = SyntheticRun::prepare(&cfg, scale.dim, setup.corpus_seed)?;
    let split = source_split(&first_articles(setup.num_articles))?;
    let mut scores = [0.0; 2];
    for (slot, variant) in [Variant::ArticleAware, Variant::FactOnly].into_iter().enumerate() {
        let config = TrainConfig {
            variant,
            ..scale.train_config(seed)
        };
        let data = run.data(&config, &split)?;
        let tag = if variant == Variant::ArticleAware { "aa" } else { "fo" };
        let out = fit(&data, &config, &work.join(format!("variants-{tag}-{seed}.ckpt")))?;
        let (source, _) = evaluate_run(
            &out.best.network,
            &run.inputs,
            &run.test,
            &split,
            config.task,
            config.threshold,
            Adaptation::None,
        )?;
        scores[slot] = source.macro_f1;
    }
    Ok(VariantComparison {
        article_aware_macro_f1: scores[0],
        fact_only_macro_f1: scores[1],
    })
}

/// Settings for the covariate-shifted transfer split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSetup {
    pub num_source: usize,
    pub num_target: usize,
    pub triggers_per_article: usize,
    /// Fraction of each target article's triggers taken from the source
    /// region.
    pub overlap: f64,
    pub corpus_seed: u64,
    pub gamma: f64,
    pub clip: f64,
    pub pairing: UdaPairing,
}

impl Default for ShiftSetup {
    fn default() -> Self {
        ShiftSetup {
            num_source: 5,
            num_target: 5,
            triggers_per_article: 2,
            overlap: 0.5,
            corpus_seed: 21,
            gamma: 0.2,
            clip: 0.1,
            pairing: UdaPairing::Pooled,
        }
    }
}

/// Disjoint trigger sets: source articles draw from a low vocabulary region
/// and target articles from a region that overlaps its upper part.
pub fn shifted_triggers(setup: &ShiftSetup) -> Vec<Vec<usize>> {
    let per = setup.triggers_per_article;
    let shared = ((per as f64) * setup.overlap).round() as usize;
    let source_region = setup.num_source * per + setup.num_target * shared;
    // Source articles take every slot of the low region except the ones
    // handed to target articles, which sit interleaved in its upper half.
    let mut low: Vec<usize> = (0..source_region).collect();
    let lent: Vec<usize> = low
        .iter()
        .rev()
        .step_by(2)
        .take(setup.num_target * shared)
        .copied()
        .collect();
    low.retain(|t| !lent.contains(t));
    let mut out: Vec<Vec<usize>> = low.chunks(per).take(setup.num_source).map(<[usize]>::to_vec).collect();
    let mut fresh = source_region;
    for j in 0..setup.num_target {
        let mut trig: Vec<usize> = lent[j * shared..(j + 1) * shared].to_vec();
        while trig.len() < per {
            trig.push(fresh);
            fresh += 1;
        }
        out.push(trig);
    }
    out
}

pub fn shift_corpus(scale: &ExperimentScale, setup: &ShiftSetup) -> SyntheticConfig {
    let k = setup.num_source + setup.num_target;
    let mut cfg = SyntheticConfig::new(scale.num_docs, k, scale.vocab_size, 1.0, setup.corpus_seed);
    cfg.triggers = Some(shifted_triggers(setup));
    cfg.allegation_rates = Some(vec![0.25; k]);
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub source_only: f64,
    pub discriminator: f64,
    pub wasserstein: f64,
}

/// Target micro-F1 on test documents for source-only training and UDA with
/// each adversary.
pub fn compare_adaptation(
    scale: &ExperimentScale,
    setup: &ShiftSetup,
    seed: u64,
    work: &Path,
) -> Result<TransferOutcome> {
    let cfg = shift_corpus(scale, setup);
    let run = SyntheticRun::prepare(&cfg, scale.dim, setup.corpus_seed)?;
    let ids = first_articles(setup.num_source + setup.num_target);
    let (src, tgt) = ids.split_at(setup.num_source);
    let mut scores = [0.0; 3];
    for (slot, adaptation) in [Adaptation::None, Adaptation::Discriminator, Adaptation::Wasserstein]
        .into_iter()
        .enumerate()
    {
        let regime = if adaptation == Adaptation::None {
            Regime::None
        } else {
            Regime::Uda
        };
        let split = make_split(SplitName::Custom, Some(src), Some(tgt), regime)?;
        let config = TrainConfig {
            adaptation,
            regime,
            gamma: setup.gamma,
            clip: setup.clip,
            uda_pairing: setup.pairing,
            ..scale.train_config(seed)
        };
        let data = run.data(&config, &split)?;
        let out = fit(
            &data,
            &config,
            &work.join(format!("transfer-{adaptation:?}-{seed}.ckpt")),
        )?;
        let (_, target) = evaluate_run(
            &out.best.network,
            &run.inputs,
            &run.test,
            &split,
            config.task,
            config.threshold,
            adaptation,
        )?;
        scores[slot] = target.map_or(0.0, |t| t.micro_f1);
    }
    Ok(TransferOutcome {
        source_only: scores[0],
        discriminator: scores[1],
        wasserstein: scores[2],
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{f1_scores, gold_map, predict_all};
    use crate::model::Network;
    use crate::training::fit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn shifted_triggers_are_disjoint_and_overlap() {
        let setup = ShiftSetup::default();
        let t = shifted_triggers(&setup);
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|x| x.len() == 2));
        let all: HashSet<usize> = t.iter().flatten().copied().collect();
        assert_eq!(all.len(), 20);
        let src_max = t[..5].iter().flatten().max().unwrap();
        let tgt_min = t[5..].iter().flatten().min().unwrap();
        assert!(tgt_min < src_max);
        let region = 5 * 2 + 5;
        for trig in &t[5..] {
            assert_eq!(trig.iter().filter(|&&x| x < region).count(), 1);
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    /// Predictions independent of the gold labels score 2pq/(p+q) in
    /// expectation, with p the predicted and q the gold positive rate.
    #[test]
    fn untrained_model_scores_near_the_independence_rate() {
        let run = SyntheticRun::prepare(&SyntheticConfig::new(300, 6, 60, 1.0, 3), 16, 3).unwrap();
        let articles: Vec<ArticleId> = ArticleId::all().into_iter().take(6).collect();
        let docs: Vec<_> = run.train.iter().chain(&run.val).chain(&run.test).cloned().collect();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::new(ModelConfig::toy(16, 4), Variant::ArticleAware, &mut rng).unwrap();
            let preds = predict_all(&net, &run.inputs, &docs, &articles, 0.5).unwrap();
            let gold = gold_map(&docs, Task::B);
            let report = f1_scores(&preds, &gold, &articles).unwrap();
            let cells = (docs.len() * articles.len()) as f64;
            let p = preds.values().map(|s| s.len()).sum::<usize>() as f64 / cells;
            let q = gold
                .values()
                .map(|s| s.iter().filter(|a| articles.contains(a)).count())
                .sum::<usize>() as f64
                / cells;
            let expected = if p + q == 0.0 { 0.0 } else { 2.0 * p * q / (p + q) };
            assert!(
                (report.micro_f1 - expected).abs() <= 0.15,
                "seed {seed}: micro {} vs independence rate {expected} (p {p}, q {q})",
                report.micro_f1
            );
        }
    }

    #[test]
    fn source_only_training_transfers_worse_to_unseen_triggers() {
        let scale = ExperimentScale {
            num_docs: 300,
            vocab_size: 40,
            dim: 16,
            h_gru: 8,
            max_epochs: 8,
            ..ExperimentScale::default()
        };
        let setup = ShiftSetup::default();
        let run = SyntheticRun::prepare(&shift_corpus(&scale, &setup), scale.dim, 21).unwrap();
        let all = ArticleId::all();
        let split = make_split(
            SplitName::Custom,
            Some(&all[..setup.num_source]),
            Some(&all[setup.num_source..setup.num_source + setup.num_target]),
            Regime::None,
        )
        .unwrap();
        let config = scale.train_config(0);
        let data = run.data(&config, &split).unwrap();
        let work = tempfile::tempdir().unwrap();
        let out = fit(&data, &config, &work.path().join("m.ckpt")).unwrap();
        let (source, target) = evaluate_run(
            &out.best.network,
            &run.inputs,
            &run.test,
            &split,
            Task::B,
            0.5,
            Adaptation::None,
        )
        .unwrap();
        let target = target.unwrap();
        assert!(
            target.micro_f1 < source.micro_f1,
            "target {} vs source {}",
            target.micro_f1,
            source.micro_f1
        );
    }
}
