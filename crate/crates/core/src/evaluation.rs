//! Multi-label predictions from pairwise probabilities, F1 scoring and
//! report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleId, Document, Regime, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::model::{EncodedCorpus, Network, Variant};
use crate::objective::Adaptation;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {threshold} not in [0, 1]")))
    }
}

/// Articles whose probability is strictly above `threshold`.
pub fn threshold_predictions(scored: &[(ArticleId, f64)], threshold: f64) -> BTreeSet<ArticleId> {
    scored
        .iter()
        .filter(|(_, p)| *p > threshold)
        .map(|(a, _)| a.clone())
        .collect()
}

/// Inference-mode probability for each article of `articles`. The fact-only
/// baseline reads the output of each article's label index.
pub fn article_probabilities(
    net: &Network,
    inputs: &EncodedCorpus,
    doc_id: &str,
    articles: &[ArticleId],
) -> Result<Vec<(ArticleId, f64)>> {
    let fact = inputs.document(doc_id)?;
    match net.variant {
        Variant::ArticleAware => articles
            .iter()
            .map(|a| Ok((a.clone(), net.predict_pair(fact, inputs.article(a.as_str())?)?)))
            .collect(),
        Variant::FactOnly => {
            let probs = net.predict_labels(fact)?;
            articles
                .iter()
                .map(|a| {
                    probs
                        .get(a.label_index())
                        .map(|p| (a.clone(), *p))
                        .ok_or_else(|| Error::invalid(format!("no output for article {a}")))
                })
                .collect()
        }
    }
}

pub fn predict_multilabel(
    net: &Network,
    inputs: &EncodedCorpus,
    doc_id: &str,
    articles: &[ArticleId],
    threshold: f64,
) -> Result<BTreeSet<ArticleId>> {
    check_threshold(threshold)?;
    Ok(threshold_predictions(
        &article_probabilities(net, inputs, doc_id, articles)?,
        threshold,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArticleSetTag {
    Source,
    Target,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArticleMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Documents whose gold set contains the article.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_article: BTreeMap<ArticleId, ArticleMetrics>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub article_set: ArticleSetTag,
    pub task: Option<Task>,
    pub regime: Option<Regime>,
    pub adaptation: Option<Adaptation>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Per-article, macro and micro F1 over `articles`. Gold labels outside the
/// article set are ignored; predicted labels outside it are an error.
pub fn f1_scores(
    predictions: &BTreeMap<String, BTreeSet<ArticleId>>,
    gold: &BTreeMap<String, BTreeSet<ArticleId>>,
    articles: &[ArticleId],
) -> Result<MetricsReport> {
    if articles.is_empty() {
        return Err(Error::invalid("empty article set"));
    }
    if predictions.len() != gold.len() || predictions.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        return Err(Error::invalid("predictions and gold cover different documents"));
    }
    let set: BTreeSet<&ArticleId> = articles.iter().collect();
    let mut per_article: BTreeMap<ArticleId, ArticleMetrics> = articles
        .iter()
        .map(|a| (a.clone(), ArticleMetrics::default()))
        .collect();
    for (doc, pred) in predictions {
        if let Some(bad) = pred.iter().find(|a| !set.contains(a)) {
            return Err(Error::invalid(format!(
                "prediction for {doc} names article {bad} outside the article set"
            )));
        }
        let g = &gold[doc];
        for a in articles {
            let m = per_article.get_mut(a).expect("initialised above");
            match (pred.contains(a), g.contains(a)) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for m in per_article.values_mut() {
        m.precision = ratio(m.tp, m.tp + m.fp);
        m.recall = ratio(m.tp, m.tp + m.fn_);
        m.f1 = f1(m.tp, m.fp, m.fn_);
        m.support = m.tp + m.fn_;
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
    }
    let macro_f1 = per_article.values().map(|m| m.f1).sum::<f64>() / per_article.len() as f64;
    Ok(MetricsReport {
        per_article,
        macro_f1,
        micro_f1: f1(tp, fp, fn_),
        article_set: ArticleSetTag::All,
        task: None,
        regime: None,
        adaptation: None,
    })
}

pub fn gold_map(docs: &[Document], task: Task) -> BTreeMap<String, BTreeSet<ArticleId>> {
    docs.iter().map(|d| (d.doc_id.clone(), d.gold(task).clone())).collect()
}

pub fn predict_all(
    net: &Network,
    inputs: &EncodedCorpus,
    docs: &[Document],
    articles: &[ArticleId],
    threshold: f64,
) -> Result<BTreeMap<String, BTreeSet<ArticleId>>> {
    docs.iter()
        .map(|d| {
            Ok((
                d.doc_id.clone(),
                predict_multilabel(net, inputs, &d.doc_id, articles, threshold)?,
            ))
        })
        .collect()
}

/// Source and target reports over the test documents.
pub fn evaluate_run(
    net: &Network,
    inputs: &EncodedCorpus,
    docs: &[Document],
    split: &SplitSpec,
    task: Task,
    threshold: f64,
    adaptation: Adaptation,
) -> Result<(MetricsReport, Option<MetricsReport>)> {
    check_threshold(threshold)?;
    if inputs.dim != net.config.d_in {
        return Err(Error::Shape(format!(
            "checkpoint expects {}-dim embeddings, store has {}",
            net.config.d_in, inputs.dim
        )));
    }
    for a in split.all_articles() {
        if net.variant == Variant::ArticleAware {
            inputs.article(a.as_str())?;
        }
    }
    let gold = gold_map(docs, task);
    let report = |articles: &[ArticleId], tag| -> Result<MetricsReport> {
        let preds = predict_all(net, inputs, docs, articles, threshold)?;
        let mut r = f1_scores(&preds, &gold, articles)?;
        r.article_set = tag;
        r.task = Some(task);
        r.regime = Some(split.regime);
        r.adaptation = Some(adaptation);
        Ok(r)
    };
    let source = report(&split.source, ArticleSetTag::Source)?;
    let target = if split.target.is_empty() {
        None
    } else {
        Some(report(&split.target, ArticleSetTag::Target)?)
    };
    Ok((source, target))
}

/// One row per model: source and target macro/micro F1 in percent.
pub fn format_table(rows: &[(String, &MetricsReport, Option<&MetricsReport>)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:width$} | {:>12} {:>12} | {:>12} {:>12}",
        "model", "source mac.", "source mic.", "target mac.", "target mic."
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 58));
    let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
    for (name, src, tgt) in rows {
        let _ = writeln!(
            out,
            "{:width$} | {:>12} {:>12} | {:>12} {:>12}",
            name,
            cell(Some(src.macro_f1)),
            cell(Some(src.micro_f1)),
            cell(tgt.map(|t| t.macro_f1)),
            cell(tgt.map(|t| t.micro_f1)),
        );
    }
    out
}
