//! Hybrid retrieval: Okapi BM25 over an inverted index fused with dense
//! cosine similarity by reciprocal-rank fusion.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Document;
use crate::providers::{Embedder, EmbeddingVector, ProviderError};
use crate::text::tokenize;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fusion {
    ReciprocalRank { k0: f64 },
}

impl Default for Fusion {
    fn default() -> Self {
        Fusion::ReciprocalRank { k0: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub fusion: Fusion,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            fusion: Fusion::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let Fusion::ReciprocalRank { k0 } = self.fusion;
        if self.k == 0 || self.bm25_k1 <= 0.0 || !(0.0..=1.0).contains(&self.bm25_b) || k0 < 0.0 {
            return Err(RetrievalError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    format_version: u32,
    documents: Vec<Document>,
    /// Postings per term, sorted by document.
    postings: BTreeMap<String, Vec<Posting>>,
    lengths: Vec<usize>,
    avg_length: f64,
}

impl InvertedIndex {
    pub fn build(corpus: &[Document]) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(corpus.len());
        for (doc, d) in corpus.iter().enumerate() {
            let tokens = tokenize(&d.text);
            if tokens.is_empty() {
                return Err(RetrievalError::NoTokens(d.id.clone()));
            }
            lengths.push(tokens.len());
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc, tf });
            }
        }
        let avg_length = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        Ok(Self {
            format_version: INDEX_FORMAT_VERSION,
            documents: corpus.to_vec(),
            postings,
            lengths,
            avg_length,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn avg_length(&self) -> f64 {
        self.avg_length
    }

    pub fn length(&self, doc: usize) -> Option<usize> {
        self.lengths.get(doc).copied()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_frequency(&self, term: &str, doc: usize) -> usize {
        let list = self.postings(term);
        list.binary_search_by_key(&doc, |p| p.doc).map_or(0, |i| list[i].tf)
    }

    pub fn bm25_score(&self, terms: &[String], doc: usize, config: &RetrievalConfig) -> Result<f64, RetrievalError> {
        let len = self.length(doc).ok_or(RetrievalError::UnknownDocument(doc))? as f64;
        let (k1, b) = (config.bm25_k1, config.bm25_b);
        let norm = k1 * (1.0 - b + b * len / self.avg_length);
        Ok(terms
            .iter()
            .map(|t| {
                let tf = self.term_frequency(t, doc) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    self.idf(t) * tf * (k1 + 1.0) / (tf + norm)
                }
            })
            .sum())
    }

    /// Documents with a positive BM25 score, best first, ties by index.
    pub fn lexical_ranking(&self, terms: &[String], config: &RetrievalConfig) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|d| (d, self.bm25_score(terms, d, config).expect("in range")))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let json = serde_json::to_string(self).map_err(|e| RetrievalError::Format(e.to_string()))?;
        std::fs::write(path.as_ref(), json).map_err(|e| RetrievalError::Io(path.as_ref().display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| RetrievalError::Io(path.as_ref().display().to_string(), e))?;
        let index: Self = serde_json::from_str(&text).map_err(|e| RetrievalError::Format(e.to_string()))?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Version(index.format_version));
        }
        Ok(index)
    }
}

/// Embeds every indexed document, in index order.
pub fn embed_corpus(index: &InvertedIndex, embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, ProviderError> {
    index.documents.par_iter().map(|d| embedder.embed(&d.text)).collect()
}

/// Reciprocal-rank fusion of a lexical and a dense list (document indices,
/// best first). Ties go to the better lexical rank, then the lower index;
/// documents missing from the lexical list rank after those present.
pub fn reciprocal_rank_fusion(lexical: &[usize], dense: &[usize], k0: f64) -> Vec<(usize, f64)> {
    let mut scores: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (rank, &d) in lexical.iter().enumerate() {
        let e = scores.entry(d).or_insert((0.0, usize::MAX));
        e.0 += 1.0 / (k0 + (rank + 1) as f64);
        e.1 = rank;
    }
    for (rank, &d) in dense.iter().enumerate() {
        scores.entry(d).or_insert((0.0, usize::MAX)).0 += 1.0 / (k0 + (rank + 1) as f64);
    }
    let mut fused: Vec<(usize, f64, usize)> = scores.into_iter().map(|(d, (s, lex))| (d, s, lex)).collect();
    fused.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    fused.into_iter().map(|(d, s, _)| (d, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub index: usize,
    pub document: Document,
    pub score: f64,
}

/// Top `min(k, corpus size)` documents for `query`.
pub fn hybrid_retrieve(
    query: &str,
    index: &InvertedIndex,
    embedder: &dyn Embedder,
    corpus_embeddings: &[EmbeddingVector],
    config: &RetrievalConfig,
) -> Result<Vec<Retrieved>, RetrievalError> {
    config.validate()?;
    if corpus_embeddings.len() != index.len() {
        return Err(RetrievalError::EmbeddingCount {
            documents: index.len(),
            embeddings: corpus_embeddings.len(),
        });
    }
    let terms = tokenize(query);
    let lexical: Vec<usize> = if terms.is_empty() {
        log::warn!("query {query:?} has no terms; using dense ranking only");
        Vec::new()
    } else {
        index.lexical_ranking(&terms, config).into_iter().map(|(d, _)| d).collect()
    };
    let q = embedder.embed(query)?;
    let mut dense: Vec<(usize, f64)> = corpus_embeddings.iter().enumerate().map(|(d, e)| (d, q.cosine(e))).collect();
    dense.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let dense: Vec<usize> = dense.into_iter().map(|(d, _)| d).collect();
    let Fusion::ReciprocalRank { k0 } = config.fusion;
    Ok(reciprocal_rank_fusion(&lexical, &dense, k0)
        .into_iter()
        .take(config.k)
        .map(|(d, score)| Retrieved {
            index: d,
            document: index.documents[d].clone(),
            score,
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {0} has no indexable tokens")]
    NoTokens(String),
    #[error("document {0} is not in the index")]
    UnknownDocument(usize),
    #[error("invalid retrieval config {0}")]
    Config(String),
    #[error("{embeddings} embeddings for {documents} documents")]
    EmbeddingCount { documents: usize, embeddings: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("index format version {0} is not supported")]
    Version(u32),
    #[error("malformed index: {0}")]
    Format(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::TokenHashEmbedder;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t, format!("s{i}")))
            .collect()
    }

    fn terms(q: &str) -> Vec<String> {
        tokenize(q)
    }

    #[test]
    fn build_counts() {
        let idx = InvertedIndex::build(&corpus(&["the cat sat", "the dog"])).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.avg_length(), 2.5);
        assert_eq!(idx.postings("cat"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.postings("the").len(), 2);
        assert_eq!(idx, InvertedIndex::build(&corpus(&["the cat sat", "the dog"])).unwrap());
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(InvertedIndex::build(&[]), Err(RetrievalError::EmptyCorpus)));
        assert!(matches!(InvertedIndex::build(&corpus(&["!!!"])), Err(RetrievalError::NoTokens(_))));
    }

    #[test]
    fn single_document_scores_idf() {
        let idx = InvertedIndex::build(&corpus(&["apple"])).unwrap();
        let c = RetrievalConfig::default();
        let s = idx.bm25_score(&terms("apple"), 0, &c).unwrap();
        assert_abs_diff_eq!(s, (1.0f64 + 0.5 / 1.5).ln(), epsilon = 1e-15);
        assert_eq!(idx.bm25_score(&terms("pear"), 0, &c).unwrap(), 0.0);
        assert!(idx.bm25_score(&terms("apple"), 3, &c).is_err());
    }

    #[test]
    fn three_document_oracle() {
        // Lengths 4, 2, 6; avg 4. Query "cat dog".
        let idx = InvertedIndex::build(&corpus(&[
            "cat cat dog bird",
            "cat fish",
            "dog dog dog fish fish ant",
        ]))
        .unwrap();
        let (k1, b) = (1.2, 0.75);
        let idf = |df: f64| (1.0 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        let part = |tf: f64, len: f64| tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / 4.0));
        let want = [
            idf(2.0) * part(2.0, 4.0) + idf(2.0) * part(1.0, 4.0),
            idf(2.0) * part(1.0, 2.0),
            idf(2.0) * part(3.0, 6.0),
        ];
        let c = RetrievalConfig::default();
        for (d, w) in want.iter().enumerate() {
            assert_abs_diff_eq!(idx.bm25_score(&terms("cat dog"), d, &c).unwrap(), *w, epsilon = 1e-9);
        }
    }

    #[test]
    fn rrf_hand_case() {
        let (a, b, c) = (0, 1, 2);
        let fused = reciprocal_rank_fusion(&[a, b, c], &[c, b, a], 60.0);
        // 1/61 + 1/63 = 124/3843 > 2/62: the rank-1/rank-3 documents beat the
        // rank-2/rank-2 one, and A wins the A/C tie on lexical rank.
        assert_eq!(fused.iter().map(|f| f.0).collect::<Vec<_>>(), vec![a, c, b]);
        assert_abs_diff_eq!(fused[0].1, 124.0 / 3843.0, epsilon = 1e-15);
        assert_eq!(fused[0].1, fused[1].1);
        assert_abs_diff_eq!(fused[2].1, 2.0 / 62.0, epsilon = 1e-15);
    }

    #[test]
    fn rrf_agreement_wins() {
        let fused = reciprocal_rank_fusion(&[2, 0, 1], &[2, 1, 0], 60.0);
        assert_eq!(fused[0].0, 2);
    }

    fn retrieve(docs: &[Document], q: &str, k: usize) -> Vec<Retrieved> {
        let idx = InvertedIndex::build(docs).unwrap();
        let emb = embed_corpus(&idx, &TokenHashEmbedder).unwrap();
        let config = RetrievalConfig { k, ..RetrievalConfig::default() };
        hybrid_retrieve(q, &idx, &TokenHashEmbedder, &emb, &config).unwrap()
    }

    #[test]
    fn small_corpus_returns_everything() {
        let docs = corpus(&["alpha beta", "gamma", "delta alpha"]);
        let got = retrieve(&docs, "alpha", 5);
        assert_eq!(got.len(), 3);
        assert!(got[0].document.text.contains("alpha"));
    }

    #[test]
    fn termless_query_uses_dense_only() {
        let docs = corpus(&["alpha beta", "gamma", "delta alpha"]);
        let got = retrieve(&docs, "?!", 2);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn irrelevant_document_keeps_existing_tf() {
        let a = InvertedIndex::build(&corpus(&["cat cat dog"])).unwrap();
        let b = InvertedIndex::build(&corpus(&["cat cat dog", "zebra"])).unwrap();
        assert_eq!(a.term_frequency("cat", 0), b.term_frequency("cat", 0));
    }

    #[test]
    fn index_round_trips() {
        let idx = InvertedIndex::build(&corpus(&["one two three", "two three", "three"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(InvertedIndex::load(&path).unwrap(), idx);
        idx.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn mismatched_embeddings_are_rejected() {
        let idx = InvertedIndex::build(&corpus(&["one", "two"])).unwrap();
        let emb = vec![TokenHashEmbedder.embed("one").unwrap()];
        assert!(hybrid_retrieve("one", &idx, &TokenHashEmbedder, &emb, &RetrievalConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn scores_are_non_negative(words in prop::collection::vec("[a-d]{1,2}", 1..6), q in "[a-d]{1,2}") {
            let docs = corpus(&words.iter().map(String::as_str).collect::<Vec<_>>());
            let idx = InvertedIndex::build(&docs).unwrap();
            for d in 0..idx.len() {
                prop_assert!(idx.bm25_score(&terms(&q), d, &RetrievalConfig::default()).unwrap() >= 0.0);
            }
        }

        #[test]
        fn retrieval_is_prefix_stable(words in prop::collection::vec("[a-e]{1,2}( [a-e]{1,2}){0,3}", 2..8), k in 1usize..6) {
            let docs = corpus(&words.iter().map(String::as_str).collect::<Vec<_>>());
            let short = retrieve(&docs, "a b", k);
            let long = retrieve(&docs, "a b", k + 1);
            prop_assert_eq!(short.len(), k.min(docs.len()));
            let ids: std::collections::BTreeSet<usize> = long.iter().map(|r| r.index).collect();
            prop_assert_eq!(ids.len(), long.len());
            for (s, l) in short.iter().zip(&long) {
                prop_assert_eq!(s.index, l.index);
            }
        }
    }
}
