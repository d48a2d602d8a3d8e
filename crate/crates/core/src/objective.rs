//! Batch objectives and their exact gradients.
//!
//! A batch is recorded on one tape: every pair's forward pass, the classifier
//! BCE over labelled pairs and, optionally, an adversary loss over the stacked
//! fact representations. [`LossSpec`] states how the adversary enters the
//! scalar: `adv_weight` multiplies the raw adversary loss and `reversal`
//! inserts a gradient-scaling node between features and adversary.

use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{discriminator_loss_on, grl, wasserstein_loss_on, Adversary, WassersteinMode};
use crate::corpus::PairInstance;
use crate::error::{Error, Result};
use crate::model::{forward_fact_only_on, forward_pair_on, Dropout, EncodedCorpus, EncodedText, Network};
use crate::tape::{Mat, Tape, Var};

pub const BCE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    #[default]
    None,
    Discriminator,
    Wasserstein,
}

impl FromStr for Adaptation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Adaptation::None),
            "discriminator" | "disc" => Ok(Adaptation::Discriminator),
            "wasserstein" | "wass" | "critic" => Ok(Adaptation::Wasserstein),
            _ => Err(Error::invalid(format!(
                "unknown adaptation {s:?} (expected none, discriminator or wasserstein)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryLoss {
    None,
    Discriminator,
    Wasserstein(WassersteinMode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub adversary: AdversaryLoss,
    /// Coefficient on the raw adversary loss.
    pub adv_weight: f64,
    /// Gradient factor of the node between features and adversary; `None`
    /// connects them directly.
    pub reversal: Option<f64>,
    /// Multiplies the whole scalar.
    pub scale: f64,
}

impl LossSpec {
    pub fn classifier_only() -> Self {
        LossSpec {
            adversary: AdversaryLoss::None,
            adv_weight: 0.0,
            reversal: None,
            scale: 1.0,
        }
    }

    /// The plain scalar `L_c + lambda * L_adv`, with no reversal.
    pub fn plain(adversary: AdversaryLoss, lambda: f64) -> Self {
        LossSpec {
            adversary,
            adv_weight: lambda,
            reversal: None,
            scale: 1.0,
        }
    }

    /// The min-max training objective. The adversary descends its own loss
    /// (the discriminator minimises cross entropy, the critic maximises the
    /// distance estimate) and a unit reversal hands the feature extractor
    /// the opposite direction, so features receive `-lambda` times the
    /// adversary's gradient.
    pub fn training(adversary: AdversaryLoss, lambda: f64) -> Self {
        let adv_weight = match adversary {
            AdversaryLoss::None => 0.0,
            AdversaryLoss::Discriminator => lambda,
            AdversaryLoss::Wasserstein(_) => -lambda,
        };
        LossSpec {
            adversary,
            adv_weight,
            reversal: Some(1.0),
            scale: 1.0,
        }
    }
}

/// Loss values of one batch. `total` is `L_c + lambda * L_adv`, the quantity
/// the schedule weighs, independent of how gradients are routed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classifier: f64,
    pub adversary: f64,
    pub total: f64,
}

/// Gradients aligned with `Network::params` and `Adversary::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub model: Vec<Mat>,
    pub adversary: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub loss: LossBreakdown,
    pub grads: GradientSet,
}

/// One pair with its inputs resolved.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub fact: &'a EncodedText,
    pub article: &'a EncodedText,
    pub label: Option<bool>,
    pub domain: usize,
}

pub fn resolve_pairs<'a>(inputs: &'a EncodedCorpus, pairs: &[PairInstance]) -> Result<Vec<PairExample<'a>>> {
    pairs
        .iter()
        .map(|p| {
            Ok(PairExample {
                fact: inputs.document(&p.doc_ref)?,
                article: inputs.article(p.article.as_str())?,
                label: p.label,
                domain: p.domain_id,
            })
        })
        .collect()
}

/// One case for the fact-only baseline with targets for the active outputs.
#[derive(Debug, Clone)]
pub struct DocExample<'a> {
    pub fact: &'a EncodedText,
    pub targets: Vec<f64>,
}

fn collect_grads(grads: &mut crate::tape::Grads, vars: &[Var], like: &crate::params::ParameterSet) -> Vec<Mat> {
    vars.iter()
        .zip(&like.params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Array2::zeros(p.value.raw_dim())))
        .collect()
}

fn check_finite(loss: &LossBreakdown) -> Result<()> {
    if loss.total.is_finite() && loss.classifier.is_finite() && loss.adversary.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss (classifier {}, adversary {}, total {})",
            loss.classifier, loss.adversary, loss.total
        )))
    }
}

fn pair_pass(
    net: &Network,
    adv: Option<&Adversary>,
    batch: &[PairExample],
    spec: &LossSpec,
    rng: Option<&mut ChaCha8Rng>,
    want_grads: bool,
) -> Result<Evaluated> {
    let layout = net
        .article_aware()
        .ok_or_else(|| Error::invalid("pair objective needs the article-aware variant"))?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for ex in batch {
        crate::model::check_dims(&net.config, ex.fact, ex.article)?;
    }
    let mut t = Tape::new();
    let pv = net.params.bind(&mut t);
    let av = match (spec.adversary, adv) {
        (AdversaryLoss::None, _) => Vec::new(),
        (_, Some(a)) => a.params.bind(&mut t),
        (_, None) => return Err(Error::invalid("adversary loss requested without adversary parameters")),
    };
    let mut dropout = match rng {
        Some(r) => Dropout::new(net.config.dropout, Some(r)),
        None => Dropout::off(),
    };

    let mut probs = Vec::new();
    let mut targets = Vec::new();
    let mut feats = Vec::with_capacity(batch.len());
    for ex in batch {
        let out = forward_pair_on(&mut t, &pv, layout, ex.fact, ex.article, &mut dropout);
        if let Some(y) = ex.label {
            probs.push(out.prob);
            targets.push(if y { 1.0 } else { 0.0 });
        }
        feats.push(out.fact_repr);
    }

    let lc = if probs.is_empty() {
        t.leaf(Mat::zeros((1, 1)))
    } else {
        let p = t.concat_rows(&probs);
        t.bce(p, &targets, BCE_FLOOR)
    };

    let ladv = match spec.adversary {
        AdversaryLoss::None => None,
        kind => {
            let adv = adv.expect("checked above");
            let stacked = t.concat_rows(&feats);
            let x = match spec.reversal {
                Some(f) => grl(&mut t, stacked, f),
                None => stacked,
            };
            let domains: Vec<usize> = batch.iter().map(|e| e.domain).collect();
            Some(match kind {
                AdversaryLoss::Discriminator => discriminator_loss_on(&mut t, &av, adv, x, &domains)?,
                AdversaryLoss::Wasserstein(mode) => wasserstein_loss_on(&mut t, &av, adv, x, &domains, mode)?,
                AdversaryLoss::None => unreachable!(),
            })
        }
    };

    let objective = match ladv {
        Some(l) => {
            let w = t.scale(l, spec.adv_weight);
            t.add(lc, w)
        }
        None => lc,
    };
    let root = t.scale(objective, spec.scale);

    let classifier = t.scalar(lc);
    let adversary = ladv.map_or(0.0, |l| t.scalar(l));
    let lambda = spec.adv_weight.abs();
    let loss = LossBreakdown {
        classifier,
        adversary,
        total: classifier + lambda * adversary,
    };
    check_finite(&loss)?;
    if !t.scalar(root).is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }

    let grads = if want_grads {
        let mut g = t.backward(root);
        let model = collect_grads(&mut g, &pv, &net.params);
        let adversary = match adv {
            Some(a) if !av.is_empty() => collect_grads(&mut g, &av, &a.params),
            Some(a) => a.params.zeros_like(),
            None => Vec::new(),
        };
        GradientSet { model, adversary }
    } else {
        GradientSet {
            model: Vec::new(),
            adversary: Vec::new(),
        }
    };
    Ok(Evaluated { loss, grads })
}

/// Loss and exact gradients for a batch of pairs. Dropout is active only
/// when `rng` is given.
pub fn pair_objective(
    net: &Network,
    adv: Option<&Adversary>,
    batch: &[PairExample],
    spec: &LossSpec,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Evaluated> {
    pair_pass(net, adv, batch, spec, rng, true)
}

/// The scalar that [`pair_objective`] differentiates, without the reverse
/// pass.
pub fn pair_objective_value(
    net: &Network,
    adv: Option<&Adversary>,
    batch: &[PairExample],
    spec: &LossSpec,
) -> Result<f64> {
    let e = pair_pass(net, adv, batch, spec, None, false)?;
    let l = e.loss;
    let raw = l.classifier + spec.adv_weight * l.adversary;
    Ok(spec.scale * raw)
}

fn fact_only_pass(
    net: &Network,
    batch: &[DocExample],
    outputs: &[usize],
    scale: f64,
    rng: Option<&mut ChaCha8Rng>,
    want_grads: bool,
) -> Result<Evaluated> {
    let layout = net
        .fact_only()
        .ok_or_else(|| Error::invalid("fact-only objective needs the fact-only variant"))?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if outputs.is_empty() || outputs.iter().any(|&o| o >= net.config.num_labels) {
        return Err(Error::invalid(format!(
            "active outputs {outputs:?} invalid for {} labels",
            net.config.num_labels
        )));
    }
    let mut t = Tape::new();
    let pv = net.params.bind(&mut t);
    let mut dropout = match rng {
        Some(r) => Dropout::new(net.config.dropout, Some(r)),
        None => Dropout::off(),
    };
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len() * outputs.len());
    for ex in batch {
        if ex.targets.len() != outputs.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} active outputs",
                ex.targets.len(),
                outputs.len()
            )));
        }
        if ex.fact.dim() != net.config.d_in {
            return Err(Error::Shape(format!(
                "embedding dim {} does not match model input dim {}",
                ex.fact.dim(),
                net.config.d_in
            )));
        }
        let probs = forward_fact_only_on(&mut t, &pv, layout, ex.fact, &mut dropout);
        let cols = t.transpose(probs);
        let picked = t.select_rows(cols, outputs);
        rows.push(picked);
        targets.extend_from_slice(&ex.targets);
    }
    let stacked = t.concat_rows(&rows);
    let lc = t.bce(stacked, &targets, BCE_FLOOR);
    let root = t.scale(lc, scale);
    let classifier = t.scalar(lc);
    let loss = LossBreakdown {
        classifier,
        adversary: 0.0,
        total: classifier,
    };
    check_finite(&loss)?;
    let model = if want_grads {
        let mut g = t.backward(root);
        collect_grads(&mut g, &pv, &net.params)
    } else {
        Vec::new()
    };
    Ok(Evaluated {
        loss,
        grads: GradientSet {
            model,
            adversary: Vec::new(),
        },
    })
}

/// Multi-hot BCE of the fact-only baseline, averaged over cases and the
/// `outputs` label indices.
pub fn fact_only_objective(
    net: &Network,
    batch: &[DocExample],
    outputs: &[usize],
    scale: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Evaluated> {
    fact_only_pass(net, batch, outputs, scale, rng, true)
}

pub fn fact_only_objective_value(net: &Network, batch: &[DocExample], outputs: &[usize], scale: f64) -> Result<f64> {
    Ok(scale * fact_only_pass(net, batch, outputs, scale, None, false)?.loss.classifier)
}

/// Mean floored binary cross entropy.
pub fn classifier_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut t = Tape::new();
    let p = t.leaf(Array2::from_shape_vec((probs.len(), 1), probs.to_vec()).expect("column"));
    let l = t.bce(p, labels, BCE_FLOOR);
    Ok(t.scalar(l))
}
