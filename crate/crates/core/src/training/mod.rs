//! Training configuration, state, the single update step and the epoch loop.

pub mod adam;
pub mod checkpoint;
pub mod sampler;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    clip_critic, lambda_schedule, Adversary, AdversaryConfig, UdaPairing, WassersteinMode, DEFAULT_CLIP,
};
use crate::corpus::{build_split_pools, ArticleId, ArticleText, Document, PairInstance, Regime, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::evaluation::{f1_scores, threshold_predictions, DEFAULT_THRESHOLD};
use crate::model::{EncodedCorpus, ModelConfig, Network, Variant};
use crate::objective::{
    classifier_loss, fact_only_objective, pair_objective, resolve_pairs, Adaptation, AdversaryLoss, DocExample,
    LossBreakdown, LossSpec,
};

pub use adam::{adam_update, AdamConfig, AdamMoments};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use sampler::{sample_batch, BalancedSampler, BatchShape, Queue, TargetSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub adaptation: Adaptation,
    pub regime: Regime,
    pub batch_size: usize,
    pub articles_per_batch: usize,
    pub pos_per_article: usize,
    pub neg_per_article: usize,
    pub gamma: f64,
    pub clip: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    /// Defaults to one pass over the source pool (rounded up).
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
    pub uda_pairing: UdaPairing,
    pub adversary_hidden: (usize, usize),
    pub threshold: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            task: Task::B,
            variant: Variant::ArticleAware,
            adaptation: Adaptation::None,
            regime: Regime::None,
            batch_size: 16,
            articles_per_batch: 4,
            pos_per_article: 2,
            neg_per_article: 2,
            gamma: 0.1,
            clip: DEFAULT_CLIP,
            lr: 1e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            plateau_factor: 0.5,
            plateau_patience: 3,
            max_epochs: 30,
            batches_per_epoch: None,
            seed: 0,
            uda_pairing: UdaPairing::Pooled,
            adversary_hidden: (200, 100),
            threshold: DEFAULT_THRESHOLD,
            model: ModelConfig::new(0),
        }
    }
}

impl TrainConfig {
    pub fn batch_shape(&self) -> BatchShape {
        BatchShape {
            articles_per_batch: self.articles_per_batch,
            pos_per_article: self.pos_per_article,
            neg_per_article: self.neg_per_article,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Reads a JSON object or flat `key = value` lines. Dotted keys reach
    /// nested fields (`model.h_gru = 8`); values are JSON literals or bare
    /// strings; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses config text; errors carry a 1-based line number.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| (e.line(), e.to_string()))?
        } else {
            key_values(text)?
        };
        serde_json::from_value(value).map_err(|e| (0, e.to_string()))
    }
    pub fn validate(&self) -> Result<()> {
        if self.batch_shape().size() != self.batch_size || self.batch_size == 0 {
            return Err(Error::invalid(format!(
                "batch size {} does not equal {} articles x ({} + {})",
                self.batch_size, self.articles_per_batch, self.pos_per_article, self.neg_per_article
            )));
        }
        match (self.adaptation, self.regime) {
            (Adaptation::None, Regime::None) => {}
            (Adaptation::None, r) => {
                return Err(Error::invalid(format!(
                    "regime {r:?} needs an adaptation method; source-only training uses regime none"
                )))
            }
            (a, Regime::None) => return Err(Error::invalid(format!("adaptation {a:?} needs the UDA or ADA regime"))),
            _ => {}
        }
        if self.variant == Variant::FactOnly && self.adaptation != Adaptation::None {
            return Err(Error::invalid("the fact-only baseline has no article domains to adapt"));
        }
        let checks = [
            (
                self.gamma >= 0.0 && self.gamma.is_finite(),
                "gamma must be non-negative",
            ),
            (self.clip > 0.0, "clip bound must be positive"),
            (self.lr > 0.0, "learning rate must be positive"),
            (
                self.plateau_factor > 0.0 && self.plateau_factor < 1.0,
                "plateau factor must be in (0, 1)",
            ),
            (self.plateau_patience > 0, "plateau patience must be positive"),
            (self.max_epochs > 0, "max epochs must be positive"),
            (self.batches_per_epoch != Some(0), "batches per epoch must be positive"),
            (
                (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
                "Adam betas must be in [0, 1)",
            ),
            (self.eps > 0.0, "Adam epsilon must be positive"),
            ((0.0..=1.0).contains(&self.threshold), "threshold must be in [0, 1]"),
            (
                self.adversary_hidden.0 > 0 && self.adversary_hidden.1 > 0,
                "adversary widths must be positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }
}

fn key_values(text: &str) -> std::result::Result<serde_json::Value, (usize, String)> {
    let mut root = serde_json::Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected key = value, got {line:?}")))?;
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts
            .pop()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| (i + 1, "empty key".to_string()))?;
        let mut node = &mut root;
        for p in parts {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .ok_or_else(|| (i + 1, format!("{p} is not a section")))?;
        }
        if node.insert(last.to_string(), parsed).is_some() {
            return Err((i + 1, format!("duplicate key {}", key.trim())));
        }
    }
    Ok(serde_json::Value::Object(root))
}

/// Multi-hot targets of one case over a dataset's active articles.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTarget {
    pub doc_id: String,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Labelled source pairs and, under UDA, unlabelled target pairs.
    Pairs {
        source: Vec<PairInstance>,
        target: Vec<PairInstance>,
        split: SplitSpec,
    },
    /// Cases for the fact-only baseline, scored on `articles`.
    Docs {
        docs: Vec<DocTarget>,
        articles: Vec<ArticleId>,
    },
}

impl Dataset {
    pub fn pairs(docs: &[Document], texts: &[ArticleText], task: Task, split: &SplitSpec) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("no documents"));
        }
        let (source, target) = build_split_pools(docs, texts, task, split)?;
        Ok(Dataset::Pairs {
            source,
            target,
            split: split.clone(),
        })
    }

    pub fn docs(docs: &[Document], task: Task, articles: &[ArticleId]) -> Result<Self> {
        if docs.is_empty() || articles.is_empty() {
            return Err(Error::invalid("fact-only data needs documents and articles"));
        }
        Ok(Dataset::Docs {
            docs: docs
                .iter()
                .map(|d| DocTarget {
                    doc_id: d.doc_id.clone(),
                    targets: articles
                        .iter()
                        .map(|a| f64::from(u8::from(d.gold(task).contains(a))))
                        .collect(),
                })
                .collect(),
            articles: articles.to_vec(),
        })
    }

    /// Training and validation data for `variant`. Validation always scores
    /// the labelled source articles.
    pub fn for_variant(
        variant: Variant,
        docs: &[Document],
        texts: &[ArticleText],
        task: Task,
        split: &SplitSpec,
    ) -> Result<Self> {
        match variant {
            Variant::ArticleAware => Dataset::pairs(docs, texts, task, split),
            Variant::FactOnly => Dataset::docs(docs, task, &split.source),
        }
    }

    /// Source pairs or cases.
    pub fn len(&self) -> usize {
        match self {
            Dataset::Pairs { source, .. } => source.len(),
            Dataset::Docs { docs, .. } => docs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn outputs(articles: &[ArticleId]) -> Vec<usize> {
        articles.iter().map(ArticleId::label_index).collect()
    }
}

pub struct TrainingData<'a> {
    pub inputs: &'a EncodedCorpus,
    pub train: Dataset,
    pub validation: Dataset,
}

impl<'a> TrainingData<'a> {
    pub fn new(
        inputs: &'a EncodedCorpus,
        variant: Variant,
        train_docs: &[Document],
        val_docs: &[Document],
        texts: &[ArticleText],
        task: Task,
        split: &SplitSpec,
    ) -> Result<Self> {
        let val_split = SplitSpec {
            regime: Regime::None,
            ..split.clone()
        };
        Ok(TrainingData {
            inputs,
            train: Dataset::for_variant(variant, train_docs, texts, task, split)?,
            validation: Dataset::for_variant(variant, val_docs, texts, task, &val_split)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerState {
    Pairs {
        source: BalancedSampler,
        target: Option<TargetSampler>,
    },
    Docs {
        queue: Queue,
        batch_size: usize,
    },
}

/// Learning-rate plateau tracking on validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Plateau {
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauDecision {
    Improved,
    Waiting,
    Decay,
    Stop,
}

impl Plateau {
    /// Records one validation loss. The rate decays after `patience` epochs
    /// without improvement; training stops after `2 * patience`.
    pub fn observe(&mut self, loss: f64, patience: usize) -> PlateauDecision {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.bad_epochs = 0;
            self.since_best = 0;
            return PlateauDecision::Improved;
        }
        self.bad_epochs += 1;
        self.since_best += 1;
        if self.since_best >= 2 * patience {
            PlateauDecision::Stop
        } else if self.bad_epochs >= patience {
            self.bad_epochs = 0;
            PlateauDecision::Decay
        } else {
            PlateauDecision::Waiting
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_adv: f64,
    pub lambda: f64,
    pub lr: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub network: Network,
    pub adversary: Option<Adversary>,
    pub moments: AdamMoments,
    pub adversary_moments: Option<AdamMoments>,
    pub step: u64,
    pub total_steps: u64,
    pub batches_per_epoch: usize,
    pub num_source_domains: usize,
    pub lr: f64,
    pub epoch: usize,
    pub plateau: Plateau,
    pub best_val_micro_f1: Option<f64>,
    pub rng: ChaCha8Rng,
    pub sampler: SamplerState,
    pub log: Vec<EpochLog>,
    pub stopped: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Fresh state for `data`: seeded initialisation, zero moments, `t = 0` and
/// `T = max_epochs * batches_per_epoch`.
pub fn init_state(config: &TrainConfig, data: &TrainingData) -> Result<TrainState> {
    config.validate()?;
    if config.model.d_in != data.inputs.dim {
        return Err(Error::Shape(format!(
            "model input dim {} does not match embedding dim {}",
            config.model.d_in, data.inputs.dim
        )));
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::invalid("training and validation pools must be non-empty"));
    }
    let network = Network::new(config.model.clone(), config.variant, &mut stream_rng(config.seed, 0))?;
    let (sampler, num_source, adversary) = match (&data.train, config.variant) {
        (Dataset::Pairs { source, target, split }, Variant::ArticleAware) => {
            let target_sampler = if config.adaptation != Adaptation::None && config.regime == Regime::Uda {
                if split.regime != Regime::Uda {
                    return Err(Error::invalid("UDA training needs a dataset built with the UDA regime"));
                }
                Some(TargetSampler::new(
                    target,
                    config.batch_size,
                    config.articles_per_batch,
                )?)
            } else {
                None
            };
            let adversary = if config.adaptation == Adaptation::None {
                None
            } else {
                let domains = match config.regime {
                    Regime::Uda => split.source.len() + split.target.len(),
                    _ => split.source.len(),
                };
                let mut acfg = AdversaryConfig::new(config.model.width(), domains);
                acfg.hidden = config.adversary_hidden;
                let mut adv = Adversary::new(acfg, &mut stream_rng(config.seed, 1))?;
                if config.adaptation == Adaptation::Wasserstein {
                    clip_critic(&mut adv, config.clip)?;
                }
                Some(adv)
            };
            (
                SamplerState::Pairs {
                    source: BalancedSampler::new(source, config.batch_shape())?,
                    target: target_sampler,
                },
                split.source.len(),
                adversary,
            )
        }
        (Dataset::Docs { docs, articles }, Variant::FactOnly) => {
            if articles.iter().any(|a| a.label_index() >= config.model.num_labels) {
                return Err(Error::invalid("article outside the baseline's label outputs"));
            }
            (
                SamplerState::Docs {
                    queue: Queue::new((0..docs.len()).collect()),
                    batch_size: config.batch_size,
                },
                articles.len(),
                None,
            )
        }
        _ => return Err(Error::invalid("dataset does not match the model variant")),
    };
    let per_epoch = config
        .batches_per_epoch
        .unwrap_or_else(|| data.train.len().div_ceil(config.batch_size))
        .max(1);
    Ok(TrainState {
        moments: AdamMoments::zeros(&network.params),
        adversary_moments: adversary.as_ref().map(|a| AdamMoments::zeros(&a.params)),
        network,
        adversary,
        step: 0,
        total_steps: (config.max_epochs * per_epoch) as u64,
        batches_per_epoch: per_epoch,
        num_source_domains: num_source,
        lr: config.lr,
        epoch: 0,
        plateau: Plateau::default(),
        best_val_micro_f1: None,
        rng: stream_rng(config.seed, 2),
        sampler,
        log: Vec::new(),
        stopped: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepBatch {
    /// Labelled source pairs followed by any unlabelled target pairs.
    Pairs(Vec<PairInstance>),
    Docs {
        docs: Vec<DocTarget>,
        outputs: Vec<usize>,
    },
}

/// Draws the next batch with the state's sampler and RNG.
pub fn next_batch(state: &mut TrainState, data: &Dataset) -> Result<StepBatch> {
    match (&mut state.sampler, data) {
        (
            SamplerState::Pairs { source, target },
            Dataset::Pairs {
                source: sp, target: tp, ..
            },
        ) => {
            let mut batch: Vec<PairInstance> = source
                .sample(&mut state.rng)
                .into_iter()
                .map(|i| sp[i].clone())
                .collect();
            if let Some(t) = target {
                batch.extend(t.sample(&mut state.rng).into_iter().map(|i| tp[i].clone()));
            }
            Ok(StepBatch::Pairs(batch))
        }
        (SamplerState::Docs { queue, batch_size }, Dataset::Docs { docs, articles }) => {
            let n = queue.len().min(*batch_size);
            let picked = queue.draw(n, &mut state.rng);
            Ok(StepBatch::Docs {
                docs: picked.into_iter().map(|i| docs[i].clone()).collect(),
                outputs: Dataset::outputs(articles),
            })
        }
        _ => Err(Error::invalid("sampler does not match the dataset")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub lambda: f64,
}

fn adversary_loss(config: &TrainConfig, num_source: usize) -> Result<AdversaryLoss> {
    Ok(match config.adaptation {
        Adaptation::None => AdversaryLoss::None,
        Adaptation::Discriminator => AdversaryLoss::Discriminator,
        Adaptation::Wasserstein => AdversaryLoss::Wasserstein(WassersteinMode::for_regime(
            config.regime,
            num_source,
            config.uda_pairing,
        )?),
    })
}

/// One Adam update of every trained partition. `lambda` follows the schedule
/// at the current step; the critic is clipped after its update.
pub fn train_step(
    state: &mut TrainState,
    batch: &StepBatch,
    config: &TrainConfig,
    inputs: &EncodedCorpus,
) -> Result<StepReport> {
    if state.step >= state.total_steps {
        return Err(Error::invalid(format!(
            "step {} reached the schedule horizon {}",
            state.step, state.total_steps
        )));
    }
    let lambda = match config.adaptation {
        Adaptation::None => 0.0,
        _ => lambda_schedule(state.step, state.total_steps, config.gamma)?,
    };
    let evaluated = match batch {
        StepBatch::Pairs(pairs) => {
            let examples = resolve_pairs(inputs, pairs)?;
            let kind = adversary_loss(config, state.num_source_domains)?;
            let adv = match kind {
                AdversaryLoss::None => None,
                _ => Some(
                    state
                        .adversary
                        .as_ref()
                        .ok_or_else(|| Error::invalid("adaptation configured but state has no adversary"))?,
                ),
            };
            pair_objective(
                &state.network,
                adv,
                &examples,
                &LossSpec::training(kind, lambda),
                Some(&mut state.rng),
            )?
        }
        StepBatch::Docs { docs, outputs } => {
            let examples = docs
                .iter()
                .map(|d| {
                    Ok(DocExample {
                        fact: inputs.document(&d.doc_id)?,
                        targets: d.targets.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            fact_only_objective(&state.network, &examples, outputs, 1.0, Some(&mut state.rng))?
        }
    };
    let t = state.step + 1;
    let adam = config.adam();
    adam_update(
        &mut state.network.params,
        &evaluated.grads.model,
        &mut state.moments,
        t,
        state.lr,
        &adam,
    )?;
    if config.adaptation != Adaptation::None {
        let adv = state.adversary.as_mut().expect("checked above");
        let mom = state
            .adversary_moments
            .as_mut()
            .ok_or_else(|| Error::invalid("adversary without optimiser state"))?;
        adam_update(&mut adv.params, &evaluated.grads.adversary, mom, t, state.lr, &adam)?;
        if config.adaptation == Adaptation::Wasserstein {
            clip_critic(adv, config.clip)?;
        }
    }
    state.step = t;
    Ok(StepReport {
        loss: evaluated.loss,
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Inference-mode BCE and F1 over a labelled pool.
pub fn validate_model(net: &Network, data: &Dataset, inputs: &EncodedCorpus, threshold: f64) -> Result<Validation> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut preds: BTreeMap<String, Vec<(ArticleId, f64)>> = BTreeMap::new();
    let mut gold: BTreeMap<String, BTreeSet<ArticleId>> = BTreeMap::new();
    let articles: Vec<ArticleId> = match data {
        Dataset::Pairs { source, split, .. } => {
            for p in source {
                let y = p.label.ok_or_else(|| {
                    Error::invalid(format!("validation pair {}/{} has no label", p.doc_ref, p.article))
                })?;
                let prob = net.predict_pair(inputs.document(&p.doc_ref)?, inputs.article(p.article.as_str())?)?;
                probs.push(prob);
                labels.push(f64::from(u8::from(y)));
                preds
                    .entry(p.doc_ref.clone())
                    .or_default()
                    .push((p.article.clone(), prob));
                let g = gold.entry(p.doc_ref.clone()).or_default();
                if y {
                    g.insert(p.article.clone());
                }
            }
            split.source.clone()
        }
        Dataset::Docs { docs, articles } => {
            for d in docs {
                let out = net.predict_labels(inputs.document(&d.doc_id)?)?;
                let g = gold.entry(d.doc_id.clone()).or_default();
                let scored = preds.entry(d.doc_id.clone()).or_default();
                for (a, y) in articles.iter().zip(&d.targets) {
                    let p = out[a.label_index()];
                    probs.push(p);
                    labels.push(*y);
                    scored.push((a.clone(), p));
                    if *y > 0.5 {
                        g.insert(a.clone());
                    }
                }
            }
            articles.clone()
        }
    };
    let loss = classifier_loss(&probs, &labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    let predicted: BTreeMap<String, BTreeSet<ArticleId>> = preds
        .into_iter()
        .map(|(d, scored)| (d, threshold_predictions(&scored, threshold)))
        .collect();
    let report = f1_scores(&predicted, &gold, &articles)?;
    Ok(Validation {
        loss,
        macro_f1: report.macro_f1,
        micro_f1: report.micro_f1,
    })
}

/// Paths written by [`fit`]: the best checkpoint at `out`, the resumable
/// end-of-epoch checkpoint and the JSONL log beside it.
pub fn resume_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".last");
    PathBuf::from(s)
}

pub fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Return after this many epochs in this call, leaving a resumable state.
    pub stop_after_epochs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<EpochLog>,
    pub best: TrainState,
    pub last: TrainState,
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut buf = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut buf, entry).map_err(|e| Error::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn fit(data: &TrainingData, config: &TrainConfig, out: &Path) -> Result<FitOutcome> {
    let state = init_state(config, data)?;
    fit_from(state, data, config, out, FitOptions::default())
}

/// Runs epochs from `state` until `max_epochs`, early stop or the option's
/// epoch budget.
pub fn fit_from(
    mut state: TrainState,
    data: &TrainingData,
    config: &TrainConfig,
    out: &Path,
    opts: FitOptions,
) -> Result<FitOutcome> {
    config.validate()?;
    let last_path = resume_path(out);
    let log_file = log_path(out);
    let mut ran = 0;
    while !state.stopped && state.epoch < config.max_epochs && opts.stop_after_epochs.is_none_or(|n| ran < n) {
        let (mut sum_c, mut sum_adv, mut lambda) = (0.0, 0.0, 0.0);
        for _ in 0..state.batches_per_epoch {
            let batch = next_batch(&mut state, &data.train)?;
            let r = train_step(&mut state, &batch, config, data.inputs)?;
            sum_c += r.loss.classifier;
            sum_adv += r.loss.adversary;
            lambda = r.lambda;
        }
        let n = state.batches_per_epoch as f64;
        let val = validate_model(&state.network, &data.validation, data.inputs, config.threshold)?;
        let entry = EpochLog {
            epoch: state.epoch + 1,
            loss_c: sum_c / n,
            loss_adv: sum_adv / n,
            lambda,
            lr: state.lr,
            val_loss: val.loss,
            val_macro_f1: val.macro_f1,
            val_micro_f1: val.micro_f1,
        };
        state.epoch += 1;
        state.log.push(entry);
        ran += 1;
        match state.plateau.observe(val.loss, config.plateau_patience) {
            PlateauDecision::Improved => {
                state.best_val_micro_f1 = Some(val.micro_f1);
                save_checkpoint(&state, config, out)?;
            }
            PlateauDecision::Decay => state.lr *= config.plateau_factor,
            PlateauDecision::Stop => state.stopped = true,
            PlateauDecision::Waiting => {}
        }
        save_checkpoint(&state, config, &last_path)?;
        write_log(&log_file, &state.log)?;
    }
    let best = load_checkpoint(out)?.state;
    Ok(FitOutcome {
        checkpoint: out.to_path_buf(),
        log_path: log_file,
        log: state.log.clone(),
        best,
        last: state,
    })
}
