use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fitted bag-of-words vocabulary. Columns are the fitted terms in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn fit<S: AsRef<str>>(docs: &[Vec<S>]) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut terms: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        let terms: Vec<String> = df.keys().cloned().collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            doc_freq: df.into_values().collect(),
            terms,
            index,
            n_docs: docs.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.doc_freq[i])
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        ((1 + self.n_docs) as f64 / (1 + self.doc_freq[column]) as f64).ln() + 1.0
    }

    /// Raw term counts times idf, then L2-normalized. Unknown terms are
    /// ignored; a document with no known terms maps to the zero vector.
    pub fn transform<T: Scalar, S: AsRef<str>>(&self, doc: &[S]) -> Vec<T> {
        let mut v = vec![0.0_f64; self.len()];
        for t in doc {
            if let Some(i) = self.index_of(t.as_ref()) {
                v[i] += 1.0;
            }
        }
        let mut norm = 0.0;
        for (i, x) in v.iter_mut().enumerate() {
            if *x != 0.0 {
                *x *= self.idf(i);
                norm += *x * *x;
            }
        }
        let norm = norm.sqrt();
        v.into_iter()
            .map(|x| if norm > 0.0 { T::of(x / norm) } else { T::zero() })
            .collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| format!("tfidf:{t}")).collect()
    }
}

/// Fit-then-transform wrapper that refuses to transform before fitting.
#[derive(Debug, Clone, Default)]
pub struct TfidfVectorizer {
    vocab: Option<Vocabulary>,
}

impl TfidfVectorizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit<S: AsRef<str>>(&mut self, train_docs: &[Vec<S>]) -> &Vocabulary {
        self.vocab.insert(Vocabulary::fit(train_docs))
    }

    pub fn vocabulary(&self) -> Result<&Vocabulary> {
        self.vocab.as_ref().ok_or(Error::NotFitted)
    }

    pub fn transform<T: Scalar, S: AsRef<str>>(&self, doc: &[S]) -> Result<Vec<T>> {
        Ok(self.vocabulary()?.transform(doc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn two_document_hand_example() {
        let docs = [doc("a b"), doc("b c")];
        let v = Vocabulary::fit(&docs);
        assert_eq!(v.terms(), ["a", "b", "c"]);
        let (a, b) = (v.index_of("a").unwrap(), v.index_of("b").unwrap());
        assert_eq!(v.idf(b), 1.0);
        let idf_a = 1.5_f64.ln() + 1.0;
        assert!((v.idf(a) - idf_a).abs() < 1e-15);
        let x: Vec<f64> = v.transform(&docs[0]);
        let norm = (idf_a * idf_a + 1.0).sqrt();
        assert!((x[a] - idf_a / norm).abs() < 1e-12);
        assert!((x[b] - 1.0 / norm).abs() < 1e-12);
        assert_eq!(x[2], 0.0);
        assert!((x[a] - 0.815).abs() < 5e-4 && (x[b] - 0.580).abs() < 5e-4);
    }

    #[test]
    fn oov_and_duplicates() {
        let v = Vocabulary::fit(&[doc("a b"), doc("b c")]);
        let z: Vec<f64> = v.transform(&doc("zz yy"));
        assert!(z.iter().all(|&x| x == 0.0));
        let once: Vec<f64> = v.transform(&doc("b"));
        let twice: Vec<f64> = v.transform(&doc("b b"));
        assert_eq!(once, twice);
    }

    #[test]
    fn transform_before_fit_is_rejected() {
        let t = TfidfVectorizer::new();
        assert!(matches!(t.transform::<f64, &str>(&["a"]), Err(Error::NotFitted)));
    }

    proptest! {
        #[test]
        fn rows_are_unit_or_zero(docs in prop::collection::vec(
            prop::collection::vec("[a-e]{1,2}", 0..6), 1..8)) {
            let v = Vocabulary::fit(&docs);
            for d in &docs {
                let x: Vec<f64> = v.transform(d);
                prop_assert!(x.iter().all(|&e| e >= 0.0));
                let n: f64 = x.iter().map(|e| e * e).sum::<f64>().sqrt();
                prop_assert!(d.is_empty() && n == 0.0 || (n - 1.0).abs() < 1e-12);
                let again: Vec<f64> = v.transform(d);
                prop_assert_eq!(x, again);
            }
        }
    }
}
