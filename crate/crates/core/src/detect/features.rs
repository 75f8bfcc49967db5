use crate::model::{Document, Query};
use crate::neural::FEATURE_DIM;
use crate::providers::{EmbeddingVector, Embedder, ProviderError, EMBEDDING_DIM};

/// `[e_a; e_b; |e_a − e_b|; e_a ⊙ e_b]`, 1536 values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures(Vec<f64>);

impl PairFeatures {
    pub fn from_embeddings(e_a: &EmbeddingVector, e_b: &EmbeddingVector) -> Self {
        let (a, b) = (e_a.as_slice(), e_b.as_slice());
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(a);
        v.extend_from_slice(b);
        v.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
        v.extend(a.iter().zip(b).map(|(x, y)| x * y));
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// One of the four 384-wide blocks (0..4).
    pub fn block(&self, index: usize) -> &[f64] {
        &self.0[index * EMBEDDING_DIM..(index + 1) * EMBEDDING_DIM]
    }
}

/// Text embedded for one side of a pair: the query and document joined by a single space.
pub fn pair_input(query: &Query, doc: &Document) -> String {
    format!("{} {}", query.text, doc.text)
}

pub fn build_features(
    query: &Query,
    doc_a: &Document,
    doc_b: &Document,
    embedder: &dyn Embedder,
) -> Result<PairFeatures, ProviderError> {
    let e_a = embedder.embed(&pair_input(query, doc_a))?;
    let e_b = embedder.embed(&pair_input(query, doc_b))?;
    Ok(PairFeatures::from_embeddings(&e_a, &e_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::HashEmbedder;

    #[test]
    fn length_is_1536() {
        let q = Query::new("q", "who?");
        let f = build_features(&q, &Document::new("a", "x", "s"), &Document::new("b", "y", "s"), &HashEmbedder).unwrap();
        assert_eq!(f.as_slice().len(), 1536);
    }

    #[test]
    fn identical_documents_have_zero_difference() {
        let q = Query::new("q", "who?");
        let d = Document::new("a", "same text", "s");
        let f = build_features(&q, &d, &d, &HashEmbedder).unwrap();
        assert!(f.block(2).iter().all(|&v| v == 0.0));
        for (p, e) in f.block(3).iter().zip(f.block(0)) {
            assert_eq!(*p, e * e);
        }
    }

    #[test]
    fn hand_computed_blocks() {
        let mut a = vec![0.0; EMBEDDING_DIM];
        let mut b = vec![0.0; EMBEDDING_DIM];
        a[0] = 1.0;
        b[1] = 1.0;
        let f = PairFeatures::from_embeddings(
            &EmbeddingVector::new(a).unwrap(),
            &EmbeddingVector::new(b).unwrap(),
        );
        assert_eq!(&f.block(2)[..3], &[1.0, 1.0, 0.0]);
        assert_eq!(&f.block(3)[..2], &[0.0, 0.0]);
        assert_eq!(f.block(0)[0], 1.0);
        assert_eq!(f.block(1)[1], 1.0);
    }
}
