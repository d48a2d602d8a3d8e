//! Balanced batch sampling.
//!
//! Every labelled batch holds `articles_per_batch` distinct articles with
//! `pos_per_article` positive and `neg_per_article` negative pairs each.
//! Within an article, positives and negatives are drawn from shuffled queues
//! (without replacement until a queue is exhausted); when an article has fewer
//! instances of a polarity than required, that polarity is drawn with
//! replacement. Sampler state is plain data so checkpoints can carry it.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairInstance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub articles_per_batch: usize,
    pub pos_per_article: usize,
    pub neg_per_article: usize,
}

impl BatchShape {
    pub fn size(&self) -> usize {
        self.articles_per_batch * (self.pos_per_article + self.neg_per_article)
    }
}

impl Default for BatchShape {
    fn default() -> Self {
        BatchShape {
            articles_per_batch: 4,
            pos_per_article: 2,
            neg_per_article: 2,
        }
    }
}

/// A shuffled queue over a fixed item list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Queue {
    items: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
}

impl Queue {
    pub fn new(items: Vec<usize>) -> Self {
        Queue {
            items,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `k` items; distinct whenever the queue holds at least `k`.
    pub fn draw(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.items.is_empty() || k == 0 {
            return Vec::new();
        }
        if self.items.len() < k {
            return (0..k)
                .map(|_| self.items[rng.random_range(0..self.items.len())])
                .collect();
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                let mut fresh = self.items.clone();
                fresh.shuffle(rng);
                // Items already taken in this draw go last so the batch stays
                // duplicate-free across the refill.
                let (mut head, tail): (Vec<_>, Vec<_>) = fresh.into_iter().partition(|x| !out.contains(x));
                head.extend(tail);
                self.order = head;
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleQueues {
    pub article: String,
    pub positives: Queue,
    pub negatives: Queue,
}

/// Sampler over a labelled pair pool; yields indices into that pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSampler {
    pub shape: BatchShape,
    pub articles: Vec<ArticleQueues>,
}

impl BalancedSampler {
    /// Articles lacking either polarity are left out; the pool must still
    /// cover `articles_per_batch` articles.
    pub fn new(pool: &[PairInstance], shape: BatchShape) -> Result<Self> {
        let mut by_article: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, p) in pool.iter().enumerate() {
            let entry = by_article.entry(p.article.as_str()).or_default();
            match p.label {
                Some(true) => entry.0.push(i),
                Some(false) => entry.1.push(i),
                None => return Err(Error::invalid(format!("pair {}/{} has no label", p.doc_ref, p.article))),
            }
        }
        let covered = by_article.len();
        let articles: Vec<ArticleQueues> = by_article
            .into_iter()
            .filter(|(_, (pos, neg))| !pos.is_empty() && !neg.is_empty())
            .map(|(a, (pos, neg))| ArticleQueues {
                article: a.to_string(),
                positives: Queue::new(pos),
                negatives: Queue::new(neg),
            })
            .collect();
        if articles.len() < shape.articles_per_batch {
            return Err(Error::invalid(format!(
                "pool covers {covered} articles, {} with both positive and negative pairs; a batch needs {}",
                articles.len(),
                shape.articles_per_batch
            )));
        }
        Ok(BalancedSampler { shape, articles })
    }

    pub fn sample(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let chosen = index::sample(rng, self.articles.len(), self.shape.articles_per_batch).into_vec();
        let mut out = Vec::with_capacity(self.shape.size());
        for a in chosen {
            let q = &mut self.articles[a];
            out.extend(q.positives.draw(self.shape.pos_per_article, rng));
            out.extend(q.negatives.draw(self.shape.neg_per_article, rng));
        }
        out
    }
}

/// One balanced batch from a fresh sampler.
pub fn sample_batch(pool: &[PairInstance], shape: BatchShape, rng: &mut ChaCha8Rng) -> Result<Vec<PairInstance>> {
    let mut s = BalancedSampler::new(pool, shape)?;
    Ok(s.sample(rng).into_iter().map(|i| pool[i].clone()).collect())
}

/// Sampler over unlabelled target pairs: distinct articles, equal shares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSampler {
    pub batch_size: usize,
    pub articles_per_batch: usize,
    pub articles: Vec<(String, Queue)>,
}

impl TargetSampler {
    pub fn new(pool: &[PairInstance], batch_size: usize, articles_per_batch: usize) -> Result<Self> {
        let mut by_article: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in pool.iter().enumerate() {
            by_article.entry(p.article.as_str()).or_default().push(i);
        }
        if by_article.is_empty() {
            return Err(Error::invalid("target pool is empty"));
        }
        Ok(TargetSampler {
            batch_size,
            articles_per_batch: articles_per_batch.min(by_article.len()).max(1),
            articles: by_article
                .into_iter()
                .map(|(a, items)| (a.to_string(), Queue::new(items)))
                .collect(),
        })
    }

    pub fn sample(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = self.articles_per_batch;
        let chosen = index::sample(rng, self.articles.len(), k).into_vec();
        let mut out = Vec::with_capacity(self.batch_size);
        for (j, a) in chosen.into_iter().enumerate() {
            let share = self.batch_size / k + usize::from(j < self.batch_size % k);
            out.extend(self.articles[a].1.draw(share, rng));
        }
        out
    }
}
