//! Character-trigram TF-IDF cosine similarity.
//!
//! Text is case-folded, every run of non-alphanumeric characters becomes a
//! single space, and the result is padded with one space on each side before
//! trigrams are taken. Weights are `tf * idf` with the smoothed
//! `idf = ln((1 + n) / (1 + df)) + 1`; trigrams absent from the corpus get
//! `df = 0` and still count toward the query norm.

use std::collections::BTreeMap;

pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn trigrams(text: &str) -> BTreeMap<String, f64> {
    let norm = normalize(text);
    let mut counts = BTreeMap::new();
    if norm.is_empty() {
        return counts;
    }
    let padded: Vec<char> = format!(" {norm} ").chars().collect();
    for window in padded.windows(3) {
        *counts.entry(window.iter().collect::<String>()).or_insert(0.0) += 1.0;
    }
    counts
}

#[derive(Debug, Clone)]
struct Doc {
    weights: BTreeMap<String, f64>,
    norm: f64,
}

/// Immutable index over a fixed list of documents.
#[derive(Debug, Clone)]
pub struct TrigramIndex {
    docs: Vec<Doc>,
    df: BTreeMap<String, usize>,
    n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub doc: usize,
    pub score: f64,
}

impl TrigramIndex {
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let tfs: Vec<_> = texts.into_iter().map(trigrams).collect();
        let mut df = BTreeMap::new();
        for tf in &tfs {
            for gram in tf.keys() {
                *df.entry(gram.clone()).or_insert(0) += 1;
            }
        }
        let mut index = Self { docs: Vec::new(), df, n: tfs.len() };
        index.docs = tfs.into_iter().map(|tf| index.weigh(tf)).collect();
        index
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn idf(&self, gram: &str) -> f64 {
        let n = self.n as f64;
        let df = self.df.get(gram).copied().unwrap_or(0) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    fn weigh(&self, tf: BTreeMap<String, f64>) -> Doc {
        let weights: BTreeMap<_, _> = tf
            .into_iter()
            .map(|(g, c)| {
                let w = c * self.idf(&g);
                (g, w)
            })
            .collect();
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        Doc { weights, norm }
    }

    /// Cosine similarity of `query` against every document, best first.
    /// Ties break toward the lower document index.
    pub fn search(&self, query: &str) -> Vec<Hit> {
        let q = self.weigh(trigrams(query));
        if q.norm == 0.0 {
            return Vec::new();
        }
        let mut hits: Vec<Hit> = self
            .docs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.norm > 0.0)
            .map(|(i, d)| {
                let dot: f64 = q
                    .weights
                    .iter()
                    .filter_map(|(g, w)| d.weights.get(g).map(|dw| w * dw))
                    .sum();
                Hit { doc: i, score: (dot / (q.norm * d.norm)).clamp(0.0, 1.0) }
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
        hits
    }

    pub fn best(&self, query: &str) -> Option<Hit> {
        self.search(query).into_iter().next()
    }
}
