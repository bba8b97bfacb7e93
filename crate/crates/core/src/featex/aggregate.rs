use ndarray::{Array2, ArrayView2, Axis};

use crate::corpus::StudentBag;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// Flag column appended to user-level matrices: 1 for students with no posts.
pub const NO_POSTS_COLUMN: &str = "no_posts";

/// User-level vector `[means.., sample stds.., sums..]` of length `3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserAggregate<T> {
    pub values: Vec<T>,
    pub no_posts: bool,
}

/// Aggregates an `n x d` block of per-post features. With no posts the
/// result is all zeros and `no_posts` is set.
pub fn aggregate_user<T: Scalar>(posts: ArrayView2<'_, T>) -> UserAggregate<T> {
    let (n, d) = posts.dim();
    let mut values = vec![T::zero(); 3 * d];
    if n == 0 {
        return UserAggregate {
            values,
            no_posts: true,
        };
    }
    let count = T::of_usize(n);
    for (j, col) in posts.axis_iter(Axis(1)).enumerate() {
        let sum: T = col.iter().copied().sum();
        let constant = col.iter().all(|&v| v == col[0]);
        let mean = if constant { col[0] } else { sum / count };
        let std = if n > 1 && !constant {
            (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of_usize(n - 1)).sqrt()
        } else {
            T::zero()
        };
        values[j] = mean;
        values[d + j] = std;
        values[2 * d + j] = sum;
    }
    UserAggregate {
        values,
        no_posts: false,
    }
}

pub fn aggregate_names<S: AsRef<str>>(names: &[S]) -> Vec<String> {
    ["mean", "std", "sum"]
        .iter()
        .flat_map(|suffix| names.iter().map(move |n| format!("{}_{suffix}", n.as_ref())))
        .collect()
}

/// Turns a per-post matrix (rows in corpus order) into one row per student
/// plus the [`NO_POSTS_COLUMN`] flag.
pub fn aggregate_corpus<T: Scalar>(
    corpus: &[StudentBag],
    per_post: &FeatureMatrix<T>,
) -> Result<FeatureMatrix<T>> {
    let total: usize = corpus.iter().map(StudentBag::len).sum();
    if total != per_post.n_rows() {
        return Err(Error::Matrix(format!(
            "{} post rows for a corpus of {total} posts",
            per_post.n_rows()
        )));
    }
    let d = per_post.n_cols();
    let mut data = Array2::zeros((corpus.len(), 3 * d + 1));
    let mut start = 0;
    for (i, bag) in corpus.iter().enumerate() {
        let block = per_post
            .data()
            .slice(ndarray::s![start..start + bag.len(), ..]);
        let agg = aggregate_user(block);
        for (j, v) in agg.values.into_iter().enumerate() {
            data[[i, j]] = v;
        }
        data[[i, 3 * d]] = if agg.no_posts { T::one() } else { T::zero() };
        start += bag.len();
    }
    let mut columns = aggregate_names(per_post.columns());
    columns.push(NO_POSTS_COLUMN.to_string());
    FeatureMatrix::new(
        corpus.iter().map(|b| b.student_id.clone()).collect(),
        columns,
        data,
    )
}

/// Joins user-level text and image features column-wise. Both sides must
/// list the same students in the same order; when both carry the
/// [`NO_POSTS_COLUMN`] flag only the text copy is kept.
pub fn concat_features<T: Scalar>(text: &FeatureMatrix<T>, image: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
    let image = match (text.column_index(NO_POSTS_COLUMN), image.column_index(NO_POSTS_COLUMN)) {
        (Some(_), Some(j)) => {
            let keep: Vec<usize> = (0..image.n_cols()).filter(|&c| c != j).collect();
            FeatureMatrix::new(
                image.row_ids().to_vec(),
                keep.iter().map(|&c| image.columns()[c].clone()).collect(),
                image.data().select(Axis(1), &keep),
            )?
        }
        _ => image.clone(),
    };
    text.hstack(&image)
}
