//! Classifier heads, bag-level aggregation of post probabilities and a
//! linear SVM for coefficient analysis.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;
use crate::tinynn::{LayerSpec, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Image,
    Text,
    Fusion,
}

/// Layer list of a head on `input_dim` features. For the fusion head pass
/// the width of the concatenated text and image inputs.
pub fn build_head(kind: HeadKind, input_dim: usize) -> Result<Vec<LayerSpec>> {
    if input_dim == 0 {
        return Err(Error::Shape("head input dimension must be positive".into()));
    }
    Ok(match kind {
        HeadKind::Image | HeadKind::Fusion => vec![
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Linear { input: input_dim, output: 2 },
            LayerSpec::Softmax,
        ],
        HeadKind::Text => {
            let hidden = input_dim / 2;
            if hidden < 1 {
                return Err(Error::Shape(format!(
                    "text head needs at least 2 inputs, got {input_dim}"
                )));
            }
            vec![
                LayerSpec::Linear { input: input_dim, output: hidden },
                LayerSpec::BatchNorm { features: hidden },
                LayerSpec::Relu,
                LayerSpec::Linear { input: hidden, output: 2 },
                LayerSpec::Softmax,
            ]
        }
    })
}

/// Positive-class probability of every row.
pub fn positive_probabilities<T: Scalar>(model: &MlpModel<T>, x: &Array2<T>) -> Result<Vec<f64>> {
    if model.output_dim() != 2 {
        return Err(Error::Shape("expected a two-class head".into()));
    }
    Ok(model.predict(x)?.column(1).iter().map(|v| v.as_f64()).collect())
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPrediction {
    pub student_id: String,
    pub post_probabilities: Vec<f64>,
    pub bag_probability: f64,
    pub label: BinaryLabel,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StudentOutcome {
    Predicted(StudentPrediction),
    NoPosts { student_id: String },
}

impl StudentOutcome {
    pub fn student_id(&self) -> &str {
        match self {
            StudentOutcome::Predicted(p) => &p.student_id,
            StudentOutcome::NoPosts { student_id } => student_id,
        }
    }

    pub fn prediction(&self) -> Option<&StudentPrediction> {
        match self {
            StudentOutcome::Predicted(p) => Some(p),
            StudentOutcome::NoPosts { .. } => None,
        }
    }
}

/// Averages the positive-class probabilities of a student's posts; the
/// student is positive when the mean reaches `threshold`.
pub fn predict_student(student_id: &str, post_probabilities: &[f64], threshold: f64) -> Result<StudentOutcome> {
    if post_probabilities.is_empty() {
        return Ok(StudentOutcome::NoPosts {
            student_id: student_id.to_string(),
        });
    }
    if let Some(p) = post_probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Shape(format!("probability {p} outside [0, 1] for {student_id}")));
    }
    let bag = post_probabilities.iter().sum::<f64>() / post_probabilities.len() as f64;
    // Rounding in the sum can push a mean of values in [0, 1] just outside.
    let bag = bag.clamp(0.0, 1.0);
    Ok(StudentOutcome::Predicted(StudentPrediction {
        student_id: student_id.to_string(),
        post_probabilities: post_probabilities.to_vec(),
        bag_probability: bag,
        label: if bag >= threshold {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        },
        threshold,
    }))
}

/// The bag-probability cut that maximizes F1 on labelled students, among
/// the observed probabilities. Ties go to the candidate nearest `fallback`,
/// then to the lower one. Without both classes present `fallback` is kept.
pub fn select_threshold(bag_probabilities: &[f64], labels: &[BinaryLabel], fallback: f64) -> Result<f64> {
    if bag_probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            bag_probabilities.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    if positives == 0 || positives == labels.len() {
        return Ok(fallback);
    }
    let mut candidates = bag_probabilities.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, fallback);
    for &t in &candidates {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&p, l) in bag_probabilities.iter().zip(labels) {
            if p >= t {
                if l.is_positive() {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let f1 = 2.0 * tp as f64 / (tp + fp + positives) as f64;
        let closer = (t - fallback).abs() < (best.1 - fallback).abs();
        if f1 > best.0 || (f1 == best.0 && closer) {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// `student_id,bag_prob,label`; students without posts get an empty
/// probability and the label `no_posts`.
pub fn write_predictions_csv<W: Write>(outcomes: &[StudentOutcome], comment: Option<&str>, mut out: W) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| Error::io("<predictions>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "bag_prob", "label"])?;
    for o in outcomes {
        match o {
            StudentOutcome::Predicted(p) => w.write_record([
                p.student_id.as_str(),
                &p.bag_probability.to_string(),
                if p.label.is_positive() { "positive" } else { "negative" },
            ])?,
            StudentOutcome::NoPosts { student_id } => {
                w.write_record([student_id.as_str(), "", "no_posts"])?
            }
        }
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 0.01,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

/// Pegasos on standardized features. The bias is learned as the weight of
/// a constant input and shares the regularizer and the projection step.
pub fn svm_train<T: Scalar>(features: &FeatureMatrix<T>, labels: &[BinaryLabel], config: &SvmConfig) -> Result<SvmModel> {
    if !(config.lambda > 0.0 && config.lambda.is_finite()) || config.epochs == 0 {
        return Err(Error::Config("svm needs lambda > 0 and at least one epoch".into()));
    }
    if labels.len() != features.n_rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            features.n_rows()
        )));
    }
    if features.n_rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let d = features.n_cols();
    let x = features.data();
    let y: Vec<f64> = labels.iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect();
    let lambda = config.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = x.row(i);
            let score = row.iter().zip(&w).map(|(v, wj)| v.as_f64() * wj).sum::<f64>() + w[d];
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|wj| *wj *= shrink);
            if y[i] * score < 1.0 {
                for (wj, v) in w.iter_mut().zip(row.iter()) {
                    *wj += eta * y[i] * v.as_f64();
                }
                w[d] += eta * y[i];
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|wj| *wj *= s);
            }
        }
    }
    let bias = w.pop().expect("bias slot");
    if w.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
        return Err(Error::Shape("svm produced non-finite weights".into()));
    }
    Ok(SvmModel {
        features: features.columns().to_vec(),
        weights: w,
        bias,
        lambda,
    })
}

impl SvmModel {
    /// Decision values `w . x + b`, matching columns by name.
    pub fn decision<T: Scalar>(&self, features: &FeatureMatrix<T>) -> Result<Vec<f64>> {
        let idx = self
            .features
            .iter()
            .map(|name| {
                features
                    .column_index(name)
                    .ok_or_else(|| Error::Shape(format!("missing feature column {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(features
            .data()
            .rows()
            .into_iter()
            .map(|row| {
                idx.iter()
                    .zip(&self.weights)
                    .map(|(&j, w)| row[j].as_f64() * w)
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }

    pub fn predict<T: Scalar>(&self, features: &FeatureMatrix<T>) -> Result<Vec<BinaryLabel>> {
        Ok(self
            .decision(features)?
            .into_iter()
            .map(|s| if s >= 0.0 { BinaryLabel::Positive } else { BinaryLabel::Negative })
            .collect())
    }

    /// The `k` largest positive and `k` most negative weights, each sorted
    /// by magnitude with ties broken by feature name. Zero weights appear in
    /// neither list.
    pub fn top_coefficients(&self, k: usize) -> TopCoefficients {
        let mut named: Vec<(String, f64)> = self
            .features
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        named.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        let pick = |positive: bool| {
            named
                .iter()
                .filter(|(_, w)| if positive { *w > 0.0 } else { *w < 0.0 })
                .take(k)
                .cloned()
                .collect()
        };
        TopCoefficients {
            positive: pick(true),
            negative: pick(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCoefficients {
    pub positive: Vec<(String, f64)>,
    pub negative: Vec<(String, f64)>,
}

impl TopCoefficients {
    /// `feature,weight,rank,class` with ranks starting at 1 in each class.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut out: W) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io("<coefficients>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "weight", "rank", "class"])?;
        for (class, list) in [("positive", &self.positive), ("negative", &self.negative)] {
            for (rank, (name, weight)) in list.iter().enumerate() {
                w.write_record([name.as_str(), &weight.to_string(), &(rank + 1).to_string(), class])?;
            }
        }
        w.flush().map_err(|e| Error::io("<coefficients>", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Standardizer;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn head_shapes() {
        let text = build_head(HeadKind::Text, 1024).unwrap();
        assert_eq!(text[0], LayerSpec::Linear { input: 1024, output: 512 });
        assert_eq!(text[1], LayerSpec::BatchNorm { features: 512 });
        assert!(build_head(HeadKind::Text, 1).is_err());
        assert!(build_head(HeadKind::Image, 0).is_err());
        let fusion = build_head(HeadKind::Fusion, 300 + 512).unwrap();
        assert_eq!(fusion[1], LayerSpec::Linear { input: 812, output: 2 });
        let image = MlpModel::<f64>::new(&build_head(HeadKind::Image, 17).unwrap(), 0).unwrap();
        assert_eq!(image.parameter_count(), 2 * 17 + 2);
    }

    #[test]
    fn head_rows_are_distributions() {
        for kind in [HeadKind::Image, HeadKind::Text, HeadKind::Fusion] {
            let model = MlpModel::<f64>::new(&build_head(kind, 6).unwrap(), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let x = Array2::from_shape_simple_fn((5, 6), || rng.sample::<f64, _>(StandardNormal));
            for row in model.predict(&x).unwrap().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    fn bag(probs: &[f64]) -> StudentPrediction {
        predict_student("s", probs, DEFAULT_THRESHOLD).unwrap().prediction().unwrap().clone()
    }

    #[test]
    fn threshold_selection_maximizes_validation_f1() {
        use BinaryLabel::{Negative as N, Positive as P};
        let probs = [0.1, 0.2, 0.3, 0.35, 0.8];
        let labels = [N, N, P, P, P];
        assert_eq!(select_threshold(&probs, &labels, 0.5).unwrap(), 0.3);
        // Single class keeps the fallback.
        assert_eq!(select_threshold(&probs, &[N; 5], 0.5).unwrap(), 0.5);
        // F1 2/3 at both 0.25 and the top candidate: nearest to 0.5 wins,
        // and an exact distance tie keeps the lower cut.
        let labels = [N, P, N, N, P];
        assert_eq!(select_threshold(&[0.1, 0.25, 0.3, 0.4, 0.875], &labels, 0.5).unwrap(), 0.25);
        assert_eq!(select_threshold(&[0.1, 0.25, 0.3, 0.4, 0.625], &labels, 0.5).unwrap(), 0.625);
        assert_eq!(select_threshold(&[0.1, 0.25, 0.3, 0.4, 0.75], &labels, 0.5).unwrap(), 0.25);
    }

    #[test]
    fn bag_mean_and_inclusive_threshold() {
        let p = bag(&[0.2, 0.4, 0.9]);
        assert!((p.bag_probability - 0.5).abs() < 1e-15);
        assert_eq!(p.label, BinaryLabel::Positive);
        assert_eq!(bag(&[0.3; 4]).bag_probability, 0.3);
        assert_eq!(bag(&[0.9, 0.2, 0.4]).label, BinaryLabel::Positive);
        assert_eq!(
            predict_student("x", &[], 0.5).unwrap(),
            StudentOutcome::NoPosts { student_id: "x".into() }
        );
        assert!(predict_student("x", &[1.5], 0.5).is_err());
    }

    #[test]
    fn duplicating_posts_keeps_bag_probability() {
        let probs = [0.11, 0.73, 0.42, 0.05];
        let doubled: Vec<f64> = probs.iter().chain(probs.iter()).copied().collect();
        assert!((bag(&probs).bag_probability - bag(&doubled).bag_probability).abs() < 1e-15);
    }

    fn blobs(seed: u64) -> (FeatureMatrix<f64>, Vec<BinaryLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let labels: Vec<BinaryLabel> = (0..n)
            .map(|i| if i % 2 == 0 { BinaryLabel::Positive } else { BinaryLabel::Negative })
            .collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|l| {
                let c = if l.is_positive() { 3.0 } else { -3.0 };
                vec![rng.sample::<f64, _>(StandardNormal), c + 0.5 * rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let ids = (0..n).map(|i| format!("u{i}")).collect();
        let m = FeatureMatrix::from_rows(ids, vec!["x0".into(), "x1".into()], &rows).unwrap();
        let std = Standardizer::fit(m.data());
        (std.transform_matrix(&m).unwrap(), labels)
    }

    #[test]
    fn svm_separates_blobs_on_the_informative_axis() {
        let (x, y) = blobs(1);
        let svm = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(svm.predict(&x).unwrap(), y);
        assert!(svm.weights[1].abs() > svm.weights[0].abs());
    }

    #[test]
    fn flipped_labels_flip_the_weights() {
        let (x, y) = blobs(2);
        let flipped: Vec<BinaryLabel> = y
            .iter()
            .map(|l| if l.is_positive() { BinaryLabel::Negative } else { BinaryLabel::Positive })
            .collect();
        let cfg = SvmConfig::default();
        let a = svm_train(&x, &y, &cfg).unwrap();
        let b = svm_train(&x, &flipped, &cfg).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa + wb).abs() <= 1e-2);
        }
    }

    #[test]
    fn strong_regularization_shrinks_weights() {
        let (x, y) = blobs(3);
        let norm = |lambda| {
            let m = svm_train(&x, &y, &SvmConfig { lambda, ..SvmConfig::default() }).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
        };
        assert!(norm(1e4) < 1e-2);
        assert!(norm(1e4) < norm(0.01));
    }

    #[test]
    fn svm_rejects_single_class_and_reorders_by_name() {
        let (x, y) = blobs(4);
        let all_pos = vec![BinaryLabel::Positive; y.len()];
        assert!(matches!(svm_train(&x, &all_pos, &SvmConfig::default()), Err(Error::SingleClass)));
        let svm = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let swapped = FeatureMatrix::new(
            x.row_ids().to_vec(),
            vec!["x1".into(), "x0".into()],
            x.data().select(ndarray::Axis(1), &[1, 0]),
        )
        .unwrap();
        assert_eq!(svm.decision(&x).unwrap(), svm.decision(&swapped).unwrap());
    }

    #[test]
    fn top_coefficients_rank_by_magnitude() {
        let svm = SvmModel {
            features: vec!["a".into(), "b".into(), "c".into()],
            weights: vec![2.0, -3.0, 0.1],
            bias: 0.0,
            lambda: 1.0,
        };
        let top = svm.top_coefficients(1);
        assert_eq!(top.positive, vec![("a".to_string(), 2.0)]);
        assert_eq!(top.negative, vec![("b".to_string(), -3.0)]);
        let all = svm.top_coefficients(10);
        assert_eq!(all.positive.len(), 2);
        assert_eq!(all.positive[1].0, "c");
        let zero = SvmModel { weights: vec![0.0; 3], ..svm.clone() };
        let none = zero.top_coefficients(5);
        assert!(none.positive.is_empty() && none.negative.is_empty());
        let permuted = SvmModel {
            features: vec!["c".into(), "a".into(), "b".into()],
            weights: vec![0.1, 2.0, -3.0],
            ..svm.clone()
        };
        assert_eq!(permuted.top_coefficients(2), svm.top_coefficients(2));
    }

    #[test]
    fn coefficient_csv_layout() {
        let top = TopCoefficients {
            positive: vec![("lex:sad".into(), 1.5)],
            negative: vec![("hue_mean".into(), -0.25)],
        };
        let mut buf = Vec::new();
        top.write_csv(Some("manifest=abc"), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# manifest=abc\nfeature,weight,rank,class\nlex:sad,1.5,1,positive\nhue_mean,-0.25,1,negative\n"
        );
    }
}
