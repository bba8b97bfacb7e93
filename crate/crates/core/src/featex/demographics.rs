use std::collections::BTreeSet;

use ndarray::Array2;

use crate::corpus::{Demographic, StudentBag};
use crate::error::Result;
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// One row per student over the union of demographic keys (sorted), named
/// `demo:<key>`. Flags become 0/1; absent keys are 0.
pub fn demographics_matrix<T: Scalar>(corpus: &[StudentBag]) -> Result<FeatureMatrix<T>> {
    let keys: Vec<&String> = corpus
        .iter()
        .flat_map(|b| b.demographics.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut data = Array2::zeros((corpus.len(), keys.len()));
    for (i, bag) in corpus.iter().enumerate() {
        for (j, key) in keys.iter().enumerate() {
            data[[i, j]] = match bag.demographics.get(*key) {
                Some(Demographic::Flag(true)) => T::one(),
                Some(Demographic::Number(x)) => T::of(*x),
                _ => T::zero(),
            };
        }
    }
    FeatureMatrix::new(
        corpus.iter().map(|b| b.student_id.clone()).collect(),
        keys.iter().map(|k| format!("demo:{k}")).collect(),
        data,
    )
}
