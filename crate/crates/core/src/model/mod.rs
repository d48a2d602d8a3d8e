//! Article-aware outcome network and the fact-only baseline.
//!
//! The article-aware network reads a case and an article hierarchically:
//! token attention pools each sentence, a bidirectional GRU contextualises
//! sentences, a dot-product interaction layer aligns fact and article
//! sentences, and a second projection + GRU + sentence attention stage
//! produces the article representation `A` and then the article-conditioned
//! fact representation `r` (the fact-side GRU starts from a linear map of
//! `A`). A one-hidden-layer classifier maps `r` to the outcome probability.

pub mod layers;

use std::collections::HashMap;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MAX_SENTENCES, MAX_TOKENS};
use crate::embedding::{EmbeddingStore, EmbeddingTensor};
use crate::error::{Error, Result};
use crate::params::{InitKind, ParamSpec, ParameterSet, Partition, SpecList};
use crate::tape::{Mat, Tape, Var};

pub use layers::{
    attention_pool, bi_gru, dense, enrich, interaction, AttentionIdx, BiGruIdx, DenseIdx, Dropout, GruIdx, Interaction,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_att_token: usize,
    /// Per-direction GRU width; bidirectional outputs are twice this.
    pub h_gru: usize,
    pub d_att_sent: usize,
    pub d_cls_hidden: usize,
    pub dropout: f64,
    pub max_sentences: usize,
    pub max_tokens: usize,
    /// Output width of the fact-only baseline.
    pub num_labels: usize,
}

/// Full widths with the input dimension left at 0 until an embedding store
/// provides it.
impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(0)
    }
}

impl ModelConfig {
    pub fn new(d_in: usize) -> Self {
        ModelConfig {
            d_in,
            d_att_token: 300,
            h_gru: 200,
            d_att_sent: 200,
            d_cls_hidden: 200,
            dropout: 0.1,
            max_sentences: MAX_SENTENCES,
            max_tokens: MAX_TOKENS,
            num_labels: 10,
        }
    }

    /// Small widths for desk-scale experiments and gradient checks.
    pub fn toy(d_in: usize, h_gru: usize) -> Self {
        ModelConfig {
            d_in,
            d_att_token: h_gru * 2,
            h_gru,
            d_att_sent: h_gru * 2,
            d_cls_hidden: h_gru * 2,
            ..ModelConfig::new(d_in)
        }
    }

    /// Bidirectional width `D`.
    pub fn width(&self) -> usize {
        2 * self.h_gru
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.d_in,
            self.d_att_token,
            self.h_gru,
            self.d_att_sent,
            self.d_cls_hidden,
            self.max_sentences,
            self.max_tokens,
            self.num_labels,
        ];
        if sizes.contains(&0) {
            return Err(Error::invalid("model sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ArticleAware,
    FactOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticleAwareLayout {
    pub token_att: AttentionIdx,
    pub fact_pre: BiGruIdx,
    pub article_pre: BiGruIdx,
    pub fact_proj: DenseIdx,
    pub article_proj: DenseIdx,
    pub fact_post: BiGruIdx,
    pub article_post: BiGruIdx,
    pub article_sent_att: AttentionIdx,
    pub fact_sent_att: AttentionIdx,
    pub cond_fwd: usize,
    pub cond_bwd: usize,
    pub cls_hidden: DenseIdx,
    pub cls_out: DenseIdx,
}

impl ArticleAwareLayout {
    pub fn new(cfg: &ModelConfig) -> (Self, Vec<ParamSpec>) {
        let f = Partition::Feature;
        let c = Partition::Classifier;
        let d = cfg.width();
        let mut s = SpecList::default();
        let layout = ArticleAwareLayout {
            token_att: AttentionIdx::register(&mut s, "token_att", f, cfg.d_in, cfg.d_att_token),
            fact_pre: BiGruIdx::register(&mut s, "fact_pre_gru", f, cfg.d_in, cfg.h_gru),
            article_pre: BiGruIdx::register(&mut s, "article_pre_gru", f, cfg.d_in, cfg.h_gru),
            fact_proj: DenseIdx::register(&mut s, "fact_proj", f, 4 * d, d),
            article_proj: DenseIdx::register(&mut s, "article_proj", f, 4 * d, d),
            fact_post: BiGruIdx::register(&mut s, "fact_post_gru", f, d, cfg.h_gru),
            article_post: BiGruIdx::register(&mut s, "article_post_gru", f, d, cfg.h_gru),
            article_sent_att: AttentionIdx::register(&mut s, "article_sent_att", f, d, cfg.d_att_sent),
            fact_sent_att: AttentionIdx::register(&mut s, "fact_sent_att", f, d, cfg.d_att_sent),
            cond_fwd: s.add("cond.fwd", f, (d, cfg.h_gru), InitKind::Xavier),
            cond_bwd: s.add("cond.bwd", f, (d, cfg.h_gru), InitKind::Xavier),
            cls_hidden: DenseIdx::register(&mut s, "cls_hidden", c, d, cfg.d_cls_hidden),
            cls_out: DenseIdx::register(&mut s, "cls_out", c, cfg.d_cls_hidden, 1),
        };
        (layout, s.specs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactOnlyLayout {
    pub token_att: AttentionIdx,
    pub gru: BiGruIdx,
    pub sent_att: AttentionIdx,
    pub cls_hidden: DenseIdx,
    pub cls_out: DenseIdx,
}

impl FactOnlyLayout {
    pub fn new(cfg: &ModelConfig) -> (Self, Vec<ParamSpec>) {
        let f = Partition::Feature;
        let c = Partition::Classifier;
        let d = cfg.width();
        let mut s = SpecList::default();
        let layout = FactOnlyLayout {
            token_att: AttentionIdx::register(&mut s, "token_att", f, cfg.d_in, cfg.d_att_token),
            gru: BiGruIdx::register(&mut s, "fact_gru", f, cfg.d_in, cfg.h_gru),
            sent_att: AttentionIdx::register(&mut s, "fact_sent_att", f, d, cfg.d_att_sent),
            cls_hidden: DenseIdx::register(&mut s, "cls_hidden", c, d, cfg.d_cls_hidden),
            cls_out: DenseIdx::register(&mut s, "cls_out", c, cfg.d_cls_hidden, cfg.num_labels),
        };
        (layout, s.specs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    ArticleAware(ArticleAwareLayout),
    FactOnly(FactOnlyLayout),
}

/// A model variant together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParameterSet,
    pub layout: Layout,
}

fn layout_for(cfg: &ModelConfig, variant: Variant) -> (Layout, Vec<ParamSpec>) {
    match variant {
        Variant::ArticleAware => {
            let (l, s) = ArticleAwareLayout::new(cfg);
            (Layout::ArticleAware(l), s)
        }
        Variant::FactOnly => {
            let (l, s) = FactOnlyLayout::new(cfg);
            (Layout::FactOnly(l), s)
        }
    }
}

impl Network {
    pub fn new(config: ModelConfig, variant: Variant, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout_for(&config, variant);
        let params = ParameterSet::init(&specs, rng);
        Ok(Network {
            config,
            variant,
            params,
            layout,
        })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, variant: Variant, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout_for(&config, variant);
        params.check(&specs)?;
        Ok(Network {
            config,
            variant,
            params,
            layout,
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        Self::specs_for(&self.config, self.variant)
    }

    pub fn specs_for(config: &ModelConfig, variant: Variant) -> Vec<ParamSpec> {
        layout_for(config, variant).1
    }

    pub fn article_aware(&self) -> Option<&ArticleAwareLayout> {
        match &self.layout {
            Layout::ArticleAware(l) => Some(l),
            Layout::FactOnly(_) => None,
        }
    }

    pub fn fact_only(&self) -> Option<&FactOnlyLayout> {
        match &self.layout {
            Layout::FactOnly(l) => Some(l),
            Layout::ArticleAware(_) => None,
        }
    }

    /// Outcome probability for one (case, article) pair in inference mode.
    pub fn predict_pair(&self, fact: &EncodedText, article: &EncodedText) -> Result<f64> {
        let layout = self
            .article_aware()
            .ok_or_else(|| Error::invalid("pair prediction needs the article-aware variant"))?;
        check_dims(&self.config, fact, article)?;
        let mut t = Tape::new();
        let pv = self.params.bind(&mut t);
        let out = forward_pair_on(&mut t, &pv, layout, fact, article, &mut Dropout::off());
        Ok(t.scalar(out.prob))
    }

    /// Per-label probabilities of the fact-only baseline in inference mode.
    pub fn predict_labels(&self, fact: &EncodedText) -> Result<Vec<f64>> {
        let layout = self
            .fact_only()
            .ok_or_else(|| Error::invalid("label prediction needs the fact-only variant"))?;
        check_dim(&self.config, fact)?;
        let mut t = Tape::new();
        let pv = self.params.bind(&mut t);
        let probs = forward_fact_only_on(&mut t, &pv, layout, fact, &mut Dropout::off());
        Ok(t.value(probs).iter().copied().collect())
    }
}

/// Sentence matrices of one text in f64, the model's view of an
/// [`EmbeddingTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub sentences: Vec<Mat>,
}

impl EncodedText {
    pub fn from_tensor(t: &EmbeddingTensor) -> Self {
        EncodedText {
            sentences: (0..t.num_sentences()).map(|i| t.sentence(i).mapv(f64::from)).collect(),
        }
    }

    pub fn from_sentences(sentences: Vec<Mat>) -> Self {
        EncodedText { sentences }
    }

    pub fn dim(&self) -> usize {
        self.sentences.first().map_or(0, |s| s.ncols())
    }
}

/// Every text of a store converted once, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct EncodedCorpus {
    pub documents: HashMap<String, EncodedText>,
    pub articles: HashMap<String, EncodedText>,
    pub dim: usize,
}

impl EncodedCorpus {
    pub fn from_store(store: &EmbeddingStore) -> Self {
        EncodedCorpus {
            documents: store
                .documents
                .iter()
                .map(|(k, v)| (k.clone(), EncodedText::from_tensor(v)))
                .collect(),
            articles: store
                .articles
                .iter()
                .map(|(k, v)| (k.clone(), EncodedText::from_tensor(v)))
                .collect(),
            dim: store.dim,
        }
    }

    pub fn document(&self, id: &str) -> Result<&EncodedText> {
        self.documents
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn article(&self, id: &str) -> Result<&EncodedText> {
        self.articles
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }
}

fn check_dim(cfg: &ModelConfig, x: &EncodedText) -> Result<()> {
    if x.sentences.is_empty() {
        return Err(Error::Shape("text has no sentences".into()));
    }
    for s in &x.sentences {
        if s.ncols() != cfg.d_in {
            return Err(Error::Shape(format!(
                "embedding dim {} does not match model input dim {}",
                s.ncols(),
                cfg.d_in
            )));
        }
        if s.nrows() == 0 {
            return Err(Error::Shape("sentence with no tokens".into()));
        }
    }
    Ok(())
}

pub fn check_dims(cfg: &ModelConfig, fact: &EncodedText, article: &EncodedText) -> Result<()> {
    check_dim(cfg, fact)?;
    check_dim(cfg, article)
}

/// Token attention over the unmasked prefix `z[..len]`. Returns the pooled
/// sentence vector and weights padded with zeros to `z.nrows()`.
pub fn token_attention(z: &Mat, len: usize, params: &ParameterSet, idx: &AttentionIdx) -> Result<(Mat, Mat)> {
    if len == 0 || len > z.nrows() {
        return Err(Error::invalid(format!(
            "token attention needs 1..={} unmasked tokens, got {len}",
            z.nrows()
        )));
    }
    let mut t = Tape::new();
    let pv = params.bind(&mut t);
    let x = t.leaf(z.slice(ndarray::s![..len, ..]).to_owned());
    let (pooled, w) = attention_pool(&mut t, &pv, idx, x);
    let mut weights = Array2::zeros((1, z.nrows()));
    weights.slice_mut(ndarray::s![.., ..len]).assign(t.value(w));
    Ok((t.value(pooled).clone(), weights))
}

/// Tape variables of one article-aware forward pass.
pub struct PairVars {
    pub fact_token_weights: Vec<Var>,
    pub article_token_weights: Vec<Var>,
    pub fact_sentences: Var,
    pub article_sentences: Var,
    pub h: Var,
    pub s: Var,
    pub interaction: Interaction,
    pub article_enriched: Var,
    pub fact_enriched: Var,
    pub article_sent_weights: Var,
    pub fact_sent_weights: Var,
    pub article_repr: Var,
    pub fact_repr: Var,
    pub logit: Var,
    pub prob: Var,
}

/// Materialised activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub fact_token_weights: Vec<Mat>,
    pub article_token_weights: Vec<Mat>,
    pub fact_sentences: Mat,
    pub article_sentences: Mat,
    pub h: Mat,
    pub s: Mat,
    pub scores: Mat,
    pub h_interaction: Mat,
    pub s_interaction: Mat,
    pub article_enriched: Mat,
    pub fact_enriched: Mat,
    pub article_sent_weights: Mat,
    pub fact_sent_weights: Mat,
    pub article_repr: Mat,
    pub fact_repr: Mat,
    pub prob: f64,
}

impl PairVars {
    pub fn trace(&self, t: &Tape) -> ForwardTrace {
        let v = |x: Var| t.value(x).clone();
        ForwardTrace {
            fact_token_weights: self.fact_token_weights.iter().map(|x| v(*x)).collect(),
            article_token_weights: self.article_token_weights.iter().map(|x| v(*x)).collect(),
            fact_sentences: v(self.fact_sentences),
            article_sentences: v(self.article_sentences),
            h: v(self.h),
            s: v(self.s),
            scores: v(self.interaction.scores),
            h_interaction: v(self.interaction.fact),
            s_interaction: v(self.interaction.article),
            article_enriched: v(self.article_enriched),
            fact_enriched: v(self.fact_enriched),
            article_sent_weights: v(self.article_sent_weights),
            fact_sent_weights: v(self.fact_sent_weights),
            article_repr: v(self.article_repr),
            fact_repr: v(self.fact_repr),
            prob: t.scalar(self.prob),
        }
    }
}

fn sentence_stack<'a>(
    t: &mut Tape<'a>,
    pv: &[Var],
    idx: &AttentionIdx,
    text: &'a EncodedText,
    dropout: &mut Dropout,
) -> (Var, Vec<Var>) {
    let mut rows = Vec::with_capacity(text.sentences.len());
    let mut weights = Vec::with_capacity(text.sentences.len());
    for s in &text.sentences {
        let z = t.borrowed(s);
        let (f, w) = attention_pool(t, pv, idx, z);
        rows.push(f);
        weights.push(w);
    }
    let stacked = t.concat_rows(&rows);
    (dropout.apply(t, stacked), weights)
}

/// Records the article-aware forward pass for one pair on `t`. `pv` are the
/// bound parameter variables of the network.
pub fn forward_pair_on<'a>(
    t: &mut Tape<'a>,
    pv: &[Var],
    l: &ArticleAwareLayout,
    fact: &'a EncodedText,
    article: &'a EncodedText,
    dropout: &mut Dropout,
) -> PairVars {
    let (fact_sentences, fact_token_weights) = sentence_stack(t, pv, &l.token_att, fact, dropout);
    let (article_sentences, article_token_weights) = sentence_stack(t, pv, &l.token_att, article, dropout);

    let h = bi_gru(t, pv, &l.fact_pre, fact_sentences, None);
    let h = dropout.apply(t, h);
    let s = bi_gru(t, pv, &l.article_pre, article_sentences, None);
    let s = dropout.apply(t, s);

    let inter = interaction(t, h, s);

    // Article side first: its pooled representation conditions the facts.
    let (article_enriched, article_repr, article_sent_weights) =
        article_representation_on(t, pv, l, s, inter.article, dropout);
    let (fact_enriched, fact_repr, fact_sent_weights) =
        fact_representation_on(t, pv, l, h, inter.fact, article_repr, dropout);

    let hidden = dense(t, pv, &l.cls_hidden, fact_repr);
    let hidden = t.tanh(hidden);
    let hidden = dropout.apply(t, hidden);
    let logit = dense(t, pv, &l.cls_out, hidden);
    let prob = t.sigmoid(logit);

    PairVars {
        fact_token_weights,
        article_token_weights,
        fact_sentences,
        article_sentences,
        h,
        s,
        interaction: inter,
        article_enriched,
        fact_enriched,
        article_sent_weights,
        fact_sent_weights,
        article_repr,
        fact_repr,
        logit,
        prob,
    }
}

/// Post-interaction article stage: enrich, tanh projection, GRU and sentence
/// attention. Returns `(enriched, A, sentence weights)`.
pub fn article_representation_on(
    t: &mut Tape,
    pv: &[Var],
    l: &ArticleAwareLayout,
    s: Var,
    s_int: Var,
    dropout: &mut Dropout,
) -> (Var, Var, Var) {
    let enriched = enrich(t, s, s_int);
    let proj = dense(t, pv, &l.article_proj, enriched);
    let proj = t.tanh(proj);
    let post = bi_gru(t, pv, &l.article_post, proj, None);
    let post = dropout.apply(t, post);
    let (repr, weights) = attention_pool(t, pv, &l.article_sent_att, post);
    (enriched, repr, weights)
}

/// Post-interaction fact stage; the GRU's initial state in each direction
/// is a linear map of the article representation `a`. Returns
/// `(enriched, r, sentence weights)`.
pub fn fact_representation_on(
    t: &mut Tape,
    pv: &[Var],
    l: &ArticleAwareLayout,
    h: Var,
    h_int: Var,
    a: Var,
    dropout: &mut Dropout,
) -> (Var, Var, Var) {
    let enriched = enrich(t, h, h_int);
    let proj = dense(t, pv, &l.fact_proj, enriched);
    let proj = t.tanh(proj);
    let h0f = t.matmul(a, pv[l.cond_fwd]);
    let h0b = t.matmul(a, pv[l.cond_bwd]);
    let post = bi_gru(t, pv, &l.fact_post, proj, Some((h0f, h0b)));
    let post = dropout.apply(t, post);
    let (repr, weights) = attention_pool(t, pv, &l.fact_sent_att, post);
    (enriched, repr, weights)
}

/// Records the fact-only baseline; returns `[1 x num_labels]` probabilities.
pub fn forward_fact_only_on<'a>(
    t: &mut Tape<'a>,
    pv: &[Var],
    l: &FactOnlyLayout,
    fact: &'a EncodedText,
    dropout: &mut Dropout,
) -> Var {
    let (sentences, _) = sentence_stack(t, pv, &l.token_att, fact, dropout);
    let h = bi_gru(t, pv, &l.gru, sentences, None);
    let h = dropout.apply(t, h);
    let (r, _) = attention_pool(t, pv, &l.sent_att, h);
    let hidden = dense(t, pv, &l.cls_hidden, r);
    let hidden = t.tanh(hidden);
    let hidden = dropout.apply(t, hidden);
    let logits = dense(t, pv, &l.cls_out, hidden);
    t.sigmoid(logits)
}

/// One article-aware forward pass. With `train_mode` and an RNG, dropout is
/// active; otherwise the result is deterministic.
pub fn forward_pair(
    net: &Network,
    fact: &EncodedText,
    article: &EncodedText,
    train_mode: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Mat, ForwardTrace)> {
    let layout = net
        .article_aware()
        .ok_or_else(|| Error::invalid("forward_pair needs the article-aware variant"))?;
    check_dims(&net.config, fact, article)?;
    let mut t = Tape::new();
    let pv = net.params.bind(&mut t);
    let mut dropout = if train_mode {
        Dropout::new(net.config.dropout, rng)
    } else {
        Dropout::off()
    };
    let vars = forward_pair_on(&mut t, &pv, layout, fact, article, &mut dropout);
    let trace = vars.trace(&t);
    Ok((trace.prob, trace.fact_repr.clone(), trace))
}

pub fn forward_fact_only(net: &Network, fact: &EncodedText) -> Result<Vec<f64>> {
    net.predict_labels(fact)
}

#[cfg(test)]
mod tests;
