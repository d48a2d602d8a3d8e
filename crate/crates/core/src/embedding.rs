//! Frozen per-token embeddings and the EMB1 interchange format.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! magic   "EMB1"
//! version u16 = 1
//! dim     u32
//! count   u32
//! entry * count:
//!     id_len u16, id (UTF-8), kind u8 (0 = document, 1 = article),
//!     m u16, m * sentence length u16,
//!     payload: for each sentence, length * dim f32
//! ```
//!
//! No padding is stored; the dense `[m x n x d]` view pads with zeros.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{ArticleText, Document, Sentences, MAX_SENTENCES, MAX_TOKENS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u16 = 1;
pub const MIN_TOY_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryKind {
    Document = 0,
    Article = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    pub id: String,
    pub kind: EntryKind,
    pub dim: usize,
    pub sentence_lengths: Vec<usize>,
    /// Sentences concatenated row-major, `sum(lengths) * dim` values.
    pub values: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(
        id: impl Into<String>,
        kind: EntryKind,
        dim: usize,
        sentence_lengths: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let t = EmbeddingTensor {
            id: id.into(),
            kind,
            dim,
            sentence_lengths,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Shape(format!("{}: dim must be positive", self.id)));
        }
        if self.sentence_lengths.is_empty() || self.sentence_lengths.len() > MAX_SENTENCES {
            return Err(Error::Shape(format!(
                "{}: {} sentences (expected 1..={MAX_SENTENCES})",
                self.id,
                self.sentence_lengths.len()
            )));
        }
        if let Some(&bad) = self.sentence_lengths.iter().find(|&&l| l == 0 || l > MAX_TOKENS) {
            return Err(Error::Shape(format!(
                "{}: sentence length {bad} (expected 1..={MAX_TOKENS})",
                self.id
            )));
        }
        let expected = self.total_tokens() * self.dim;
        if self.values.len() != expected {
            return Err(Error::Shape(format!(
                "{}: {} values, expected {expected}",
                self.id,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("non-finite embedding in {}", self.id)));
        }
        Ok(())
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_lengths.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.sentence_lengths.iter().sum()
    }

    /// Unpadded `[len x dim]` view of sentence `i`.
    pub fn sentence(&self, i: usize) -> ArrayView2<'_, f32> {
        let start: usize = self.sentence_lengths[..i].iter().sum::<usize>() * self.dim;
        let len = self.sentence_lengths[i];
        ArrayView2::from_shape((len, self.dim), &self.values[start..start + len * self.dim])
            .expect("validated tensor shape")
    }

    /// Zero-padded `[m x n_max x dim]` array.
    pub fn dense(&self) -> Array3<f32> {
        let n = self.sentence_lengths.iter().copied().max().unwrap_or(0);
        let mut out = Array3::zeros((self.num_sentences(), n, self.dim));
        for i in 0..self.num_sentences() {
            let s = self.sentence(i);
            out.slice_mut(ndarray::s![i, ..s.nrows(), ..]).assign(&s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub documents: BTreeMap<String, EmbeddingTensor>,
    pub articles: BTreeMap<String, EmbeddingTensor>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, tensor: EmbeddingTensor) -> Result<()> {
        if tensor.dim != self.dim {
            return Err(Error::Shape(format!(
                "{}: dim {} differs from store dim {}",
                tensor.id, tensor.dim, self.dim
            )));
        }
        let map = match tensor.kind {
            EntryKind::Document => &mut self.documents,
            EntryKind::Article => &mut self.articles,
        };
        if map.contains_key(&tensor.id) {
            return Err(Error::invalid(format!("duplicate embedding id {:?}", tensor.id)));
        }
        map.insert(tensor.id.clone(), tensor);
        Ok(())
    }

    pub fn document(&self, id: &str) -> Result<&EmbeddingTensor> {
        self.documents
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn article(&self, id: &str) -> Result<&EmbeddingTensor> {
        self.articles
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.documents.len() + self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entries(&self) -> impl Iterator<Item = &EmbeddingTensor> {
        self.documents.values().chain(self.articles.values())
    }
}

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    if store.is_empty() {
        return Err(Error::invalid("refusing to write an empty embedding store"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for t in store.entries() {
        t.validate()?;
        let id = t.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::invalid(format!("id too long: {:?}", t.id)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.push(t.kind as u8);
        buf.extend_from_slice(&(t.num_sentences() as u16).to_le_bytes());
        for &l in &t.sentence_lengths {
            buf.extend_from_slice(&(l as u16).to_le_bytes());
        }
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let bytes = encode_store(store)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_store(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected EOF".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not an EMB1 file".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EMB1 version {version}")));
    }
    let dim = c.u32()? as usize;
    if dim == 0 {
        return Err(Error::Format("EMB1 dim must be positive".into()));
    }
    let count = c.u32()? as usize;
    let mut store = EmbeddingStore::new(dim);
    for _ in 0..count {
        let id_len = c.u16()? as usize;
        let id = std::str::from_utf8(c.take(id_len)?)
            .map_err(|_| Error::Format("entry id is not UTF-8".into()))?
            .to_string();
        let kind = match c.u8()? {
            0 => EntryKind::Document,
            1 => EntryKind::Article,
            k => return Err(Error::Format(format!("{id}: unknown entry kind {k}"))),
        };
        let m = c.u16()? as usize;
        let lengths = (0..m).map(|_| c.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
        let n_values = lengths.iter().sum::<usize>() * dim;
        let raw = c.take(n_values * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = EmbeddingTensor::new(id, kind, dim, lengths, values)?;
        store.insert(tensor)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - c.pos
        )));
    }
    Ok(store)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic pseudo-random unit vector for a token.
pub fn toy_token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    // FNV-1a over the token bytes, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(h ^ splitmix64(seed)));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

fn toy_encode_sentences(
    id: &str,
    kind: EntryKind,
    sentences: &Sentences,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTensor> {
    if dim < MIN_TOY_DIM {
        return Err(Error::invalid(format!(
            "toy encoder dim must be at least {MIN_TOY_DIM}, got {dim}"
        )));
    }
    let kept: Vec<&Vec<String>> = sentences.iter().filter(|s| !s.is_empty()).take(MAX_SENTENCES).collect();
    let mut lengths = Vec::with_capacity(kept.len());
    let mut values = Vec::new();
    for s in kept {
        let toks = &s[..s.len().min(MAX_TOKENS)];
        lengths.push(toks.len());
        for t in toks {
            values.extend(toy_token_vector(t, dim, seed));
        }
    }
    EmbeddingTensor::new(id, kind, dim, lengths, values)
}

pub fn toy_encode(doc: &Document, dim: usize, seed: u64) -> Result<EmbeddingTensor> {
    toy_encode_sentences(&doc.doc_id, EntryKind::Document, &doc.sentences, dim, seed)
}

pub fn toy_encode_article(article: &ArticleText, dim: usize, seed: u64) -> Result<EmbeddingTensor> {
    toy_encode_sentences(article.id.as_str(), EntryKind::Article, &article.sentences, dim, seed)
}

/// Toy-encodes a whole corpus into one store.
pub fn toy_store(docs: &[Document], articles: &[ArticleText], dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(dim);
    for d in docs {
        store.insert(toy_encode(d, dim, seed)?)?;
    }
    for a in articles {
        store.insert(toy_encode_article(a, dim, seed)?)?;
    }
    Ok(store)
}
