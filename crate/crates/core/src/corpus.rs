//! Cases, article texts, pair instances and zero-shot article splits.
//!
//! A case is paired with every candidate article of the active split; the
//! pair label records whether that article was alleged (task B) or found
//! violated (task A). Articles double as domains for adaptation: the domain
//! id of a pair is the article's index in the active domain enumeration.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// The ten article codes that form the label set, in canonical order.
pub const LABEL_SET: [&str; 10] = ["2", "3", "5", "6", "8", "9", "10", "11", "14", "P1-1"];

pub const MAX_SENTENCES: usize = 50;
pub const MAX_TOKENS: usize = 256;

/// An article code from the label set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArticleId(String);

impl ArticleId {
    pub fn new(code: &str) -> Result<Self> {
        if LABEL_SET.contains(&code) {
            Ok(ArticleId(code.to_string()))
        } else {
            Err(Error::UnknownArticle(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Position in [`LABEL_SET`].
    pub fn label_index(&self) -> usize {
        LABEL_SET
            .iter()
            .position(|c| *c == self.0)
            .expect("ArticleId is always a label-set member")
    }

    pub fn all() -> Vec<ArticleId> {
        LABEL_SET.iter().map(|c| ArticleId(c.to_string())).collect()
    }
}

impl fmt::Display for ArticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ArticleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArticleId::new(s)
    }
}

impl TryFrom<String> for ArticleId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ArticleId::new(&s)
    }
}

impl From<ArticleId> for String {
    fn from(id: ArticleId) -> String {
        id.0
    }
}

pub type Sentences = Vec<Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub date: String,
    pub sentences: Sentences,
    pub alleged: BTreeSet<ArticleId>,
    pub violated: BTreeSet<ArticleId>,
}

impl Document {
    pub fn gold(&self, task: Task) -> &BTreeSet<ArticleId> {
        match task {
            Task::A => &self.violated,
            Task::B => &self.alleged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleText {
    pub id: ArticleId,
    pub sentences: Sentences,
}

/// Task A: court-found violation. Task B: allegation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    A,
    B,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Task::A),
            "B" | "b" => Ok(Task::B),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairInstance {
    pub doc_ref: String,
    pub article: ArticleId,
    /// `None` for target pairs whose outcome is withheld.
    pub label: Option<bool>,
    pub domain_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    None,
    Uda,
    Ada,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Regime::None),
            "uda" => Ok(Regime::Uda),
            "ada" => Ok(Regime::Ada),
            _ => Err(Error::invalid(format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub source: Vec<ArticleId>,
    pub target: Vec<ArticleId>,
    pub regime: Regime,
}

impl SplitSpec {
    /// Domain enumeration used for domain ids: source then target under UDA,
    /// source only otherwise.
    pub fn domains(&self) -> Vec<ArticleId> {
        match self.regime {
            Regime::Uda => self.source.iter().chain(&self.target).cloned().collect(),
            Regime::Ada | Regime::None => self.source.clone(),
        }
    }

    pub fn num_domains(&self) -> usize {
        self.domains().len()
    }

    pub fn all_articles(&self) -> Vec<ArticleId> {
        self.source.iter().chain(&self.target).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Split0To1,
    Split1To0,
    Custom,
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split0_to_1" => Ok(SplitName::Split0To1),
            "split1_to_0" => Ok(SplitName::Split1To0),
            "custom" => Ok(SplitName::Custom),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

pub const SPLIT_0: [&str; 5] = ["6", "8", "P1-1", "2", "9"];
pub const SPLIT_1: [&str; 5] = ["3", "5", "10", "14", "11"];

fn ids(codes: &[&str]) -> Vec<ArticleId> {
    codes
        .iter()
        .map(|c| ArticleId::new(c).expect("split codes are label-set members"))
        .collect()
}

pub fn make_split(
    name: SplitName,
    custom_source: Option<&[ArticleId]>,
    custom_target: Option<&[ArticleId]>,
    regime: Regime,
) -> Result<SplitSpec> {
    let (source, target) = match name {
        SplitName::Split0To1 => (ids(&SPLIT_0), ids(&SPLIT_1)),
        SplitName::Split1To0 => (ids(&SPLIT_1), ids(&SPLIT_0)),
        SplitName::Custom => {
            let source = custom_source
                .ok_or_else(|| Error::invalid("custom split requires source articles"))?
                .to_vec();
            let target = custom_target.unwrap_or(&[]).to_vec();
            if source.is_empty() {
                return Err(Error::invalid("custom split has no source articles"));
            }
            let mut seen = HashSet::new();
            for a in source.iter().chain(&target) {
                if !seen.insert(a) {
                    return Err(Error::invalid(format!("article {a} appears twice in the custom split")));
                }
            }
            (source, target)
        }
    };
    Ok(SplitSpec { source, target, regime })
}

pub fn truncate(doc: &Document, max_sentences: usize, max_tokens: usize) -> Document {
    Document {
        sentences: truncate_sentences(&doc.sentences, max_sentences, max_tokens),
        ..doc.clone()
    }
}

fn truncate_sentences(sentences: &Sentences, max_sentences: usize, max_tokens: usize) -> Sentences {
    sentences
        .iter()
        .take(max_sentences)
        .map(|s| s.iter().take(max_tokens).cloned().collect())
        .collect()
}

pub fn build_pairs(
    docs: &[Document],
    articles: &[ArticleText],
    task: Task,
    candidates: &[ArticleId],
) -> Result<Vec<PairInstance>> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate article set"));
    }
    let loaded: HashSet<&ArticleId> = articles.iter().map(|a| &a.id).collect();
    if let Some(missing) = candidates.iter().find(|c| !loaded.contains(c)) {
        return Err(Error::invalid(format!(
            "candidate article {missing} has no loaded text"
        )));
    }
    let mut pairs = Vec::with_capacity(docs.len() * candidates.len());
    for doc in docs {
        let gold = doc.gold(task);
        for (domain_id, article) in candidates.iter().enumerate() {
            pairs.push(PairInstance {
                doc_ref: doc.doc_id.clone(),
                article: article.clone(),
                label: Some(gold.contains(article)),
                domain_id,
            });
        }
    }
    Ok(pairs)
}

/// Builds the pair pools for one split: labelled source pairs plus, under
/// UDA, target pairs with their labels withheld. Domain ids follow
/// [`SplitSpec::domains`].
pub fn build_split_pools(
    docs: &[Document],
    articles: &[ArticleText],
    task: Task,
    split: &SplitSpec,
) -> Result<(Vec<PairInstance>, Vec<PairInstance>)> {
    let source = build_pairs(docs, articles, task, &split.source)?;
    let target = if split.regime == Regime::Uda && !split.target.is_empty() {
        let offset = split.source.len();
        build_pairs(docs, articles, task, &split.target)?
            .into_iter()
            .map(|p| PairInstance {
                label: None,
                domain_id: p.domain_id + offset,
                ..p
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok((source, target))
}

/// Chronological partition of documents into (train, validation, test).
pub fn partition_by_date(
    docs: &[Document],
    train_frac: f64,
    val_frac: f64,
) -> (Vec<Document>, Vec<Document>, Vec<Document>) {
    let mut sorted = docs.to_vec();
    sorted.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.doc_id.cmp(&b.doc_id)));
    let n = sorted.len();
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = ((n as f64) * val_frac).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    (sorted, val, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Original ECtHR-style records: `case_id`, `facts`,
    /// `allegedly_violated_articles`, `violated_articles`.
    LexGlue,
    Native,
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexglue-jsonl" | "lexglue" => Ok(CorpusFormat::LexGlue),
            "native-jsonl" | "native" => Ok(CorpusFormat::Native),
            _ => Err(Error::invalid(format!("unknown corpus format {s:?}"))),
        }
    }
}

pub const CASES_FILE: &str = "cases.jsonl";
pub const ARTICLES_FILE: &str = "articles.jsonl";

/// Resolves `(cases file, articles file)` from either a corpus directory or a
/// cases file with `articles.jsonl` next to it.
pub fn corpus_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(CASES_FILE), path.join(ARTICLES_FILE))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join(ARTICLES_FILE))
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<(Vec<Document>, Vec<ArticleText>)> {
    let (cases_path, articles_path) = corpus_paths(path);
    let docs = read_jsonl(&cases_path, |v| parse_document(v, format))?;
    let articles = read_jsonl(&articles_path, parse_article)?;
    Ok((docs, articles))
}

fn read_jsonl<T>(path: &Path, parse: impl Fn(&Value) -> Result<T>) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let item = parse(&value).map_err(|e| match e {
            Error::UnknownArticle(_) => e,
            other => parse_err(other.to_string()),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn field<'a>(v: &'a Value, names: &[&str]) -> Result<&'a Value> {
    names
        .iter()
        .find_map(|n| v.get(*n))
        .ok_or_else(|| Error::invalid(format!("missing field {:?}", names[0])))
}

fn as_string(v: &Value, what: &str) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::invalid(format!("{what} must be a string"))),
    }
}

fn parse_labels(v: &Value) -> Result<BTreeSet<ArticleId>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::invalid("label field must be an array"))?;
    arr.iter()
        .map(|l| match l {
            Value::String(s) => ArticleId::new(s),
            // Integer labels index the canonical label set.
            Value::Number(n) => {
                let idx = n.as_u64().ok_or_else(|| Error::UnknownArticle(n.to_string()))? as usize;
                LABEL_SET
                    .get(idx)
                    .map(|c| ArticleId(c.to_string()))
                    .ok_or_else(|| Error::UnknownArticle(n.to_string()))
            }
            _ => Err(Error::invalid("labels must be strings or integers")),
        })
        .collect()
}

fn parse_token_sentences(v: &Value) -> Result<Sentences> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::invalid("sentences must be an array"))?;
    arr.iter()
        .map(|s| match s {
            Value::Array(toks) => toks.iter().map(|t| as_string(t, "token")).collect(),
            Value::String(text) => Ok(text.split_whitespace().map(str::to_string).collect()),
            _ => Err(Error::invalid("sentence must be a token array or a string")),
        })
        .collect()
}

fn clean_sentences(raw: Sentences, what: &str) -> Result<Sentences> {
    let kept: Sentences = raw.into_iter().filter(|s| !s.is_empty()).collect();
    if kept.is_empty() {
        return Err(Error::invalid(format!("{what} has no non-empty sentences")));
    }
    Ok(truncate_sentences(&kept, MAX_SENTENCES, MAX_TOKENS))
}

fn parse_document(v: &Value, format: CorpusFormat) -> Result<Document> {
    let (id_keys, text_keys, alleged_keys, violated_keys, date_keys): (&[&str], &[&str], &[&str], &[&str], &[&str]) =
        match format {
            CorpusFormat::Native => (&["doc_id"], &["sentences"], &["alleged"], &["violated"], &["date"]),
            CorpusFormat::LexGlue => (
                &["case_id", "id", "doc_id"],
                &["facts", "text"],
                &["allegedly_violated_articles", "alleged", "labels"],
                &["violated_articles", "violated"],
                &["judgment_date", "date"],
            ),
        };
    let doc_id = as_string(field(v, id_keys)?, "id")?;
    let sentences = clean_sentences(parse_token_sentences(field(v, text_keys)?)?, "document")?;
    let alleged = parse_labels(field(v, alleged_keys)?)?;
    let violated = match field(v, violated_keys) {
        Ok(x) => parse_labels(x)?,
        Err(_) if format == CorpusFormat::LexGlue => BTreeSet::new(),
        Err(e) => return Err(e),
    };
    let date = match field(v, date_keys) {
        Ok(d) => as_string(d, "date")?,
        Err(_) if format == CorpusFormat::LexGlue => String::new(),
        Err(e) => return Err(e),
    };
    Ok(Document {
        doc_id,
        date,
        sentences,
        alleged,
        violated,
    })
}

fn parse_article(v: &Value) -> Result<ArticleText> {
    let id = ArticleId::new(&as_string(field(v, &["id"])?, "id")?)?;
    let sentences = clean_sentences(parse_token_sentences(field(v, &["sentences"])?)?, "article")?;
    Ok(ArticleText { id, sentences })
}

/// Writes `cases.jsonl` and `articles.jsonl` in the native format.
pub fn write_corpus(dir: &Path, docs: &[Document], articles: &[ArticleText]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(CASES_FILE), docs)?;
    write_jsonl(&dir.join(ARTICLES_FILE), articles)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Default allegation rates per label-set position: common, moderate and
/// rare articles spread across both named splits.
pub const DEFAULT_ALLEGATION_RATES: [f64; 10] = [0.10, 0.40, 0.35, 0.50, 0.20, 0.06, 0.08, 0.05, 0.15, 0.30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_docs: usize,
    pub num_articles: usize,
    pub vocab_size: usize,
    pub planted_rule_strength: f64,
    pub seed: u64,
    pub sentences_per_doc: (usize, usize),
    pub tokens_per_sentence: (usize, usize),
    pub article_sentences: usize,
    /// Per-article allegation probability; defaults to
    /// [`DEFAULT_ALLEGATION_RATES`].
    pub allegation_rates: Option<Vec<f64>>,
    pub violation_rate: f64,
    /// Explicit trigger token indices per article. When absent, the first half
    /// of the vocabulary is divided into disjoint equal blocks.
    pub triggers: Option<Vec<Vec<usize>>>,
}

impl SyntheticConfig {
    pub fn new(num_docs: usize, num_articles: usize, vocab_size: usize, planted_rule_strength: f64, seed: u64) -> Self {
        SyntheticConfig {
            num_docs,
            num_articles,
            vocab_size,
            planted_rule_strength,
            seed,
            sentences_per_doc: (3, 6),
            tokens_per_sentence: (5, 10),
            article_sentences: 3,
            allegation_rates: None,
            violation_rate: 0.5,
            triggers: None,
        }
    }
}

pub fn token_name(index: usize) -> String {
    format!("w{index}")
}

/// Default trigger blocks: article `j` owns `[j*t, (j+1)*t)` with
/// `t = (vocab/2) / num_articles`.
pub fn default_triggers(num_articles: usize, vocab_size: usize) -> Vec<Vec<usize>> {
    let per = (vocab_size / 2) / num_articles.max(1);
    (0..num_articles).map(|j| (j * per..(j + 1) * per).collect()).collect()
}

pub fn gen_synthetic(
    num_docs: usize,
    num_articles: usize,
    vocab_size: usize,
    planted_rule_strength: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<ArticleText>)> {
    gen_synthetic_with(&SyntheticConfig::new(
        num_docs,
        num_articles,
        vocab_size,
        planted_rule_strength,
        seed,
    ))
}

pub fn gen_synthetic_with(cfg: &SyntheticConfig) -> Result<(Vec<Document>, Vec<ArticleText>)> {
    let k = cfg.num_articles;
    if k == 0 || k > LABEL_SET.len() {
        return Err(Error::invalid(format!("number of articles must be in 1..=10, got {k}")));
    }
    if cfg.vocab_size < 4 * k {
        return Err(Error::invalid(format!(
            "vocabulary of {} is too small for {k} articles (need at least {})",
            cfg.vocab_size,
            4 * k
        )));
    }
    if !(0.0..=1.0).contains(&cfg.planted_rule_strength) {
        return Err(Error::invalid("planted rule strength must be in [0, 1]"));
    }
    let triggers = cfg
        .triggers
        .clone()
        .unwrap_or_else(|| default_triggers(k, cfg.vocab_size));
    if triggers.len() != k || triggers.iter().any(|t| t.is_empty()) {
        return Err(Error::invalid("every article needs at least one trigger token"));
    }
    let trigger_set: HashSet<usize> = triggers.iter().flatten().copied().collect();
    if trigger_set.len() != triggers.iter().map(Vec::len).sum::<usize>() {
        return Err(Error::invalid("trigger token sets must be disjoint"));
    }
    if trigger_set.iter().any(|&t| t >= cfg.vocab_size) {
        return Err(Error::invalid("trigger token outside the vocabulary"));
    }
    let fillers: Vec<usize> = (0..cfg.vocab_size).filter(|t| !trigger_set.contains(t)).collect();
    if fillers.is_empty() {
        return Err(Error::invalid("vocabulary has no filler tokens"));
    }
    let rates: Vec<f64> = match &cfg.allegation_rates {
        Some(r) if r.len() == k => r.clone(),
        Some(r) => {
            return Err(Error::invalid(format!(
                "expected {k} allegation rates, got {}",
                r.len()
            )))
        }
        None => DEFAULT_ALLEGATION_RATES[..k].to_vec(),
    };
    let codes: Vec<ArticleId> = ArticleId::all().into_iter().take(k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let filler_sentence =
        |rng: &mut ChaCha8Rng, len: usize| -> Vec<usize> { (0..len).map(|_| *fillers.choose(rng).unwrap()).collect() };

    let articles: Vec<ArticleText> = codes
        .iter()
        .zip(&triggers)
        .map(|(id, trig)| {
            let sentences = (0..cfg.article_sentences.max(1))
                .map(|s| {
                    let mut toks = filler_sentence(&mut rng, 4);
                    // Cycle through the triggers so every trigger appears.
                    for j in 0..2.min(trig.len()) {
                        toks.push(trig[(2 * s + j) % trig.len()]);
                    }
                    toks.shuffle(&mut rng);
                    toks.into_iter().map(token_name).collect()
                })
                .collect();
            ArticleText {
                id: id.clone(),
                sentences,
            }
        })
        .collect();

    let (smin, smax) = cfg.sentences_per_doc;
    let (tmin, tmax) = cfg.tokens_per_sentence;
    let mut docs = Vec::with_capacity(cfg.num_docs);
    for i in 0..cfg.num_docs {
        let m = rng.random_range(smin.max(1)..=smax.max(smin.max(1)));
        let mut sentences: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let n = rng.random_range(tmin.max(1)..=tmax.max(tmin.max(1)));
                filler_sentence(&mut rng, n)
            })
            .collect();
        let mut alleged = BTreeSet::new();
        let mut violated = BTreeSet::new();
        for (j, id) in codes.iter().enumerate() {
            if rng.random::<f64>() < rates[j] {
                alleged.insert(id.clone());
                if rng.random::<f64>() < cfg.violation_rate {
                    violated.insert(id.clone());
                }
                if rng.random::<f64>() < cfg.planted_rule_strength {
                    let count = rng.random_range(1..=2usize);
                    for _ in 0..count {
                        let tok = *triggers[j].choose(&mut rng).unwrap();
                        let s = rng.random_range(0..sentences.len());
                        let pos = rng.random_range(0..=sentences[s].len());
                        sentences[s].insert(pos, tok);
                    }
                }
            }
        }
        docs.push(Document {
            doc_id: format!("syn-{i:05}"),
            date: synthetic_date(i, cfg.num_docs),
            sentences: sentences
                .into_iter()
                .map(|s| s.into_iter().map(token_name).collect())
                .collect(),
            alleged,
            violated,
        });
    }
    Ok((docs, articles))
}

/// Spreads documents chronologically over 2001-01-01 .. 2019-12-31.
fn synthetic_date(i: usize, n: usize) -> String {
    let start = days_from_civil(2001, 1, 1);
    let end = days_from_civil(2019, 12, 31);
    let span = (end - start) as f64;
    let day = start + ((i as f64) / (n.max(1) as f64) * span) as i64;
    let (y, m, d) = civil_from_days(day);
    format!("{y:04}-{m:02}-{d:02}")
}

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m, d)
}
