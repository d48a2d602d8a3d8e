//! Domain adversaries for article-invariant features.
//!
//! Both adversaries read the article-conditioned fact representation `r`
//! through a gradient reversal layer. The discriminator classifies the
//! article (domain) of a pair; the Wasserstein critic scores each pair and
//! the difference of group means estimates the distance between domain
//! feature distributions. Critic parameters are clipped to `[-c, c]` after
//! every update.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Regime;
use crate::error::{Error, Result};
use crate::model::{dense, DenseIdx};
use crate::params::{ParamSpec, ParameterSet, Partition, SpecList};
use crate::tape::{Mat, Tape, Var};

pub const GAMMA_GRID: [f64; 4] = [0.05, 0.1, 0.15, 0.2];
pub const DEFAULT_CLIP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub input_dim: usize,
    pub hidden: (usize, usize),
    pub num_domains: usize,
}

impl AdversaryConfig {
    pub fn new(input_dim: usize, num_domains: usize) -> Self {
        AdversaryConfig {
            input_dim,
            hidden: (200, 100),
            num_domains,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryLayout {
    pub discriminator: [DenseIdx; 3],
    pub critic: [DenseIdx; 3],
}

impl AdversaryLayout {
    pub fn new(cfg: &AdversaryConfig) -> (Self, Vec<ParamSpec>) {
        let p = Partition::Adversary;
        let (h1, h2) = cfg.hidden;
        let mut s = SpecList::default();
        let discriminator = [
            DenseIdx::register(&mut s, "disc.l1", p, cfg.input_dim, h1),
            DenseIdx::register(&mut s, "disc.l2", p, h1, h2),
            DenseIdx::register(&mut s, "disc.out", p, h2, cfg.num_domains),
        ];
        let critic = [
            DenseIdx::register(&mut s, "critic.l1", p, cfg.input_dim, h1),
            DenseIdx::register(&mut s, "critic.l2", p, h1, h2),
            DenseIdx::register(&mut s, "critic.out", p, h2, 1),
        ];
        (AdversaryLayout { discriminator, critic }, s.specs)
    }

    pub fn critic_indices(&self) -> Vec<usize> {
        self.critic.iter().flat_map(|d| [d.w, d.b]).collect()
    }
}

/// Discriminator and critic parameters (partition θ_D).
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    pub config: AdversaryConfig,
    pub params: ParameterSet,
    pub layout: AdversaryLayout,
}

impl Adversary {
    pub fn new(config: AdversaryConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.input_dim == 0 || config.num_domains == 0 || config.hidden.0 == 0 || config.hidden.1 == 0 {
            return Err(Error::invalid("adversary sizes must be positive"));
        }
        let (layout, specs) = AdversaryLayout::new(&config);
        Ok(Adversary {
            params: ParameterSet::init(&specs, rng),
            config,
            layout,
        })
    }

    pub fn from_params(config: AdversaryConfig, params: ParameterSet) -> Result<Self> {
        let (layout, specs) = AdversaryLayout::new(&config);
        params.check(&specs)?;
        Ok(Adversary { config, params, layout })
    }

    pub fn critic_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layout
            .critic_indices()
            .into_iter()
            .flat_map(move |i| self.params.params[i].value.iter().copied())
    }
}

/// Gradient reversal: identity forward, gradient times `-lambda` backward.
pub fn grl(t: &mut Tape, x: Var, lambda: f64) -> Var {
    t.grad_scale(x, -lambda)
}

fn mlp(t: &mut Tape, pv: &[Var], layers: &[DenseIdx; 3], x: Var) -> Var {
    let h1 = dense(t, pv, &layers[0], x);
    let h1 = t.tanh(h1);
    let h2 = dense(t, pv, &layers[1], h1);
    let h2 = t.tanh(h2);
    dense(t, pv, &layers[2], h2)
}

/// `[n x num_domains]` logits.
pub fn discriminator_logits(t: &mut Tape, pv: &[Var], layout: &AdversaryLayout, x: Var) -> Var {
    mlp(t, pv, &layout.discriminator, x)
}

/// `[n x 1]` critic scores.
pub fn critic_scores(t: &mut Tape, pv: &[Var], layout: &AdversaryLayout, x: Var) -> Var {
    mlp(t, pv, &layout.critic, x)
}

/// Mean cross entropy of the discriminator's domain prediction for each row
/// of `features`.
pub fn discriminator_loss_on(
    t: &mut Tape,
    pv: &[Var],
    adv: &Adversary,
    features: Var,
    domain_ids: &[usize],
) -> Result<Var> {
    if domain_ids.is_empty() {
        return Err(Error::invalid("discriminator loss over an empty batch"));
    }
    if let Some(bad) = domain_ids.iter().find(|&&d| d >= adv.config.num_domains) {
        return Err(Error::invalid(format!(
            "domain id {bad} out of range for {} domains",
            adv.config.num_domains
        )));
    }
    let logits = discriminator_logits(t, pv, &adv.layout, features);
    Ok(t.softmax_xent(logits, domain_ids))
}

/// How UDA source and target groups are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdaPairing {
    /// Mean over all source rows minus mean over all target rows.
    #[default]
    Pooled,
    /// Mean, over every (source article, target article) pair present, of
    /// the difference of the two article means.
    PerArticle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WassersteinMode {
    /// Domain ids below `num_source` are source, the rest target.
    Uda { num_source: usize, pairing: UdaPairing },
    /// Mean absolute difference of group means over all unordered pairs of
    /// distinct source articles present.
    Ada,
}

impl WassersteinMode {
    pub fn for_regime(regime: Regime, num_source: usize, pairing: UdaPairing) -> Result<Self> {
        match regime {
            Regime::Uda => Ok(WassersteinMode::Uda { num_source, pairing }),
            Regime::Ada => Ok(WassersteinMode::Ada),
            Regime::None => Err(Error::invalid("Wasserstein loss needs the UDA or ADA regime")),
        }
    }
}

fn group_mean(t: &mut Tape, scores: Var, rows: &[usize]) -> Var {
    let sel = t.select_rows(scores, rows);
    t.mean(sel)
}

/// Critic-based distance estimate over rows of `features` grouped by
/// `domain_ids`.
pub fn wasserstein_loss_on(
    t: &mut Tape,
    pv: &[Var],
    adv: &Adversary,
    features: Var,
    domain_ids: &[usize],
    mode: WassersteinMode,
) -> Result<Var> {
    let scores = critic_scores(t, pv, &adv.layout, features);
    wasserstein_from_scores(t, scores, domain_ids, mode)
}

pub fn wasserstein_from_scores(t: &mut Tape, scores: Var, domain_ids: &[usize], mode: WassersteinMode) -> Result<Var> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &d) in domain_ids.iter().enumerate() {
        groups.entry(d).or_default().push(row);
    }
    match mode {
        WassersteinMode::Uda { num_source, pairing } => {
            let (src, tgt): (Vec<_>, Vec<_>) = groups.iter().partition(|(d, _)| **d < num_source);
            if src.is_empty() {
                return Err(Error::invalid("Wasserstein loss: source group is empty"));
            }
            if tgt.is_empty() {
                return Err(Error::invalid("Wasserstein loss: target group is empty"));
            }
            match pairing {
                UdaPairing::Pooled => {
                    let src_rows: Vec<usize> = src.iter().flat_map(|(_, r)| r.iter().copied()).collect();
                    let tgt_rows: Vec<usize> = tgt.iter().flat_map(|(_, r)| r.iter().copied()).collect();
                    let ms = group_mean(t, scores, &src_rows);
                    let mt = group_mean(t, scores, &tgt_rows);
                    Ok(t.sub(ms, mt))
                }
                UdaPairing::PerArticle => {
                    let src_means: Vec<Var> = src.iter().map(|(_, r)| group_mean(t, scores, r)).collect();
                    let tgt_means: Vec<Var> = tgt.iter().map(|(_, r)| group_mean(t, scores, r)).collect();
                    let mut diffs = Vec::new();
                    for &a in &src_means {
                        for &b in &tgt_means {
                            diffs.push(t.sub(a, b));
                        }
                    }
                    let stacked = t.concat_rows(&diffs);
                    Ok(t.mean(stacked))
                }
            }
        }
        WassersteinMode::Ada => {
            if groups.len() < 2 {
                return Err(Error::invalid(format!(
                    "Wasserstein loss needs at least two source articles, got {}",
                    groups.len()
                )));
            }
            let means: Vec<Var> = groups.values().map(|r| group_mean(t, scores, r)).collect();
            let mut diffs = Vec::new();
            for i in 0..means.len() {
                for j in i + 1..means.len() {
                    let d = t.sub(means[i], means[j]);
                    diffs.push(t.abs(d));
                }
            }
            let stacked = t.concat_rows(&diffs);
            Ok(t.mean(stacked))
        }
    }
}

/// Discriminator cross entropy for a feature batch `[n x D]`.
pub fn discriminator_loss(
    features: &Mat,
    domain_ids: &[usize],
    adv: &Adversary,
    regime: Regime,
    num_source: usize,
) -> Result<f64> {
    let expected = match regime {
        Regime::Uda => adv.config.num_domains,
        Regime::Ada => num_source,
        Regime::None => return Err(Error::invalid("discriminator loss needs the UDA or ADA regime")),
    };
    if adv.config.num_domains != expected {
        return Err(Error::invalid(format!(
            "{regime:?} discriminator expects {expected} domains, adversary has {}",
            adv.config.num_domains
        )));
    }
    if regime == Regime::Ada {
        if let Some(d) = domain_ids.iter().find(|&&d| d >= num_source) {
            return Err(Error::invalid(format!("ADA batches hold source domains only, got {d}")));
        }
    }
    let mut t = Tape::new();
    let pv = adv.params.bind(&mut t);
    let x = t.leaf(features.clone());
    let x = grl(&mut t, x, 1.0);
    let loss = discriminator_loss_on(&mut t, &pv, adv, x, domain_ids)?;
    Ok(t.scalar(loss))
}

pub fn wasserstein_loss(features: &Mat, domain_ids: &[usize], adv: &Adversary, mode: WassersteinMode) -> Result<f64> {
    let mut t = Tape::new();
    let pv = adv.params.bind(&mut t);
    let x = t.leaf(features.clone());
    let x = grl(&mut t, x, 1.0);
    let loss = wasserstein_loss_on(&mut t, &pv, adv, x, domain_ids, mode)?;
    Ok(t.scalar(loss))
}

/// Clamps every critic parameter into `[-c, c]`; discriminator untouched.
pub fn clip_critic(adv: &mut Adversary, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {c}")));
    }
    for i in adv.layout.critic_indices() {
        adv.params.params[i].value.mapv_inplace(|w| w.clamp(-c, c));
    }
    Ok(())
}

/// `2 / (1 + exp(-gamma * t / T)) - 1`, i.e. `tanh(gamma * t / (2T))`.
pub fn lambda_schedule(step: u64, total: u64, gamma: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("lambda schedule needs a positive step horizon"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond horizon {total}")));
    }
    let p = step as f64 / total as f64;
    Ok(2.0 / (1.0 + (-gamma * p).exp()) - 1.0)
}
