//! Per-fold model pipelines: featurize, train a head or the SVM on the
//! training bags, select on the validation bags and predict test students.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryLabel, StudentBag};
use crate::embedstore::{posts_to_matrix, EmbeddingTable, Modality, OnMissing};
use crate::error::{Error, Result};
use crate::evalkit::{FoldModel, FoldOutput};
use crate::featex::{
    aggregate_corpus, concat_features, lexicon_matrix, normalize_caption, visual_matrix, FaceDetector,
    ImageSource, Lexicon, Vocabulary, NO_POSTS_COLUMN,
};
use crate::heads::{build_head, predict_student, select_threshold, svm_train, HeadKind, StudentOutcome, SvmConfig, SvmModel};
use crate::matrix::{FeatureMatrix, Standardizer};
use crate::scalar::Scalar;
use crate::splitgen::{derive_seeds, Partition, Subset};
use crate::tinynn::{train, EpochRecord, MlpModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TextBow,
    TextEmb,
    ImageFeat,
    ImageEmb,
    Fusion,
    TextFeat,
    FeatConcat,
    Svm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::TextBow,
        ModelKind::TextEmb,
        ModelKind::ImageFeat,
        ModelKind::ImageEmb,
        ModelKind::Fusion,
        ModelKind::TextFeat,
        ModelKind::FeatConcat,
        ModelKind::Svm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TextBow => "text-bow",
            ModelKind::TextEmb => "text-emb",
            ModelKind::ImageFeat => "image-feat",
            ModelKind::ImageEmb => "image-emb",
            ModelKind::Fusion => "fusion",
            ModelKind::TextFeat => "text-feat",
            ModelKind::FeatConcat => "feat-concat",
            ModelKind::Svm => "svm",
        }
    }

    /// Post-level kinds train on posts and average post probabilities per
    /// student; the others train on one aggregated row per student.
    pub fn is_post_level(self) -> bool {
        matches!(
            self,
            ModelKind::TextBow | ModelKind::TextEmb | ModelKind::ImageEmb | ModelKind::Fusion
        )
    }

    pub fn head(self) -> Option<HeadKind> {
        match self {
            ModelKind::TextBow | ModelKind::TextEmb | ModelKind::TextFeat => Some(HeadKind::Text),
            ModelKind::ImageEmb | ModelKind::ImageFeat => Some(HeadKind::Image),
            ModelKind::Fusion | ModelKind::FeatConcat => Some(HeadKind::Fusion),
            ModelKind::Svm => None,
        }
    }

    pub fn needs_text_embeddings(self) -> bool {
        matches!(self, ModelKind::TextEmb | ModelKind::Fusion)
    }

    pub fn needs_image_embeddings(self) -> bool {
        matches!(self, ModelKind::ImageEmb | ModelKind::Fusion)
    }

    pub fn needs_lexicon(self) -> bool {
        matches!(self, ModelKind::TextFeat | ModelKind::FeatConcat | ModelKind::Svm)
    }

    pub fn needs_images(self) -> bool {
        matches!(self, ModelKind::ImageFeat | ModelKind::FeatConcat | ModelKind::Svm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Inputs a model kind may draw on. Only the ones the kind needs must be
/// present.
#[derive(Default)]
pub struct FeatureSources<'a> {
    pub text_embeddings: Option<&'a EmbeddingTable>,
    pub image_embeddings: Option<&'a EmbeddingTable>,
    pub lexicon: Option<&'a Lexicon>,
    pub images: Option<&'a dyn ImageSource>,
    pub faces: Option<&'a dyn FaceDetector>,
}

/// Fold-independent features, computed once per corpus.
#[derive(Debug, Clone)]
enum Prepared<T> {
    /// Tokenized captions; the vocabulary is fitted per fold.
    Bow(Vec<Vec<String>>),
    Posts(FeatureMatrix<T>),
    Users(FeatureMatrix<T>),
}

fn table(t: Option<&EmbeddingTable>, modality: Modality) -> Result<&EmbeddingTable> {
    let t = t.ok_or_else(|| Error::Config(format!("model needs {modality} embeddings")))?;
    if t.modality() != modality {
        return Err(Error::Config(format!(
            "expected {modality} embeddings, got {}",
            t.modality()
        )));
    }
    Ok(t)
}

fn without_flag<T: Scalar>(m: FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
    match m.column_index(NO_POSTS_COLUMN) {
        None => Ok(m),
        Some(j) => {
            let keep: Vec<usize> = (0..m.n_cols()).filter(|&c| c != j).collect();
            FeatureMatrix::new(
                m.row_ids().to_vec(),
                keep.iter().map(|&c| m.columns()[c].clone()).collect(),
                m.data().select(Axis(1), &keep),
            )
        }
    }
}

/// Student-level engineered features (lexicon and/or visual) for a kind.
pub fn user_features<T: Scalar>(
    corpus: &[StudentBag],
    kind: ModelKind,
    sources: &FeatureSources<'_>,
) -> Result<FeatureMatrix<T>> {
    let text = if kind.needs_lexicon() {
        let lex = sources
            .lexicon
            .ok_or_else(|| Error::Config("model needs a lexicon".into()))?;
        Some(aggregate_corpus(corpus, &lexicon_matrix::<T>(corpus, lex, true)?)?)
    } else {
        None
    };
    let image = if kind.needs_images() {
        let images = sources
            .images
            .ok_or_else(|| Error::Config("model needs an image source".into()))?;
        let faces = sources
            .faces
            .ok_or_else(|| Error::Config("model needs a face detector".into()))?;
        Some(aggregate_corpus(corpus, &visual_matrix::<T>(corpus, images, faces)?)?)
    } else {
        None
    };
    let joined = match (text, image) {
        (Some(t), Some(i)) => concat_features(&t, &i)?,
        (Some(t), None) => t,
        (None, Some(i)) => i,
        (None, None) => return Err(Error::Config(format!("{kind} has no engineered features"))),
    };
    without_flag(joined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub threshold: f64,
    /// Replace `threshold` per fold with the F1-best cut on validation
    /// students.
    #[serde(default)]
    pub tune_threshold: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        PipelineConfig {
            kind,
            train: TrainConfig { seed, ..TrainConfig::default() },
            svm: SvmConfig { seed, ..SvmConfig::default() },
            threshold: crate::heads::DEFAULT_THRESHOLD,
            tune_threshold: false,
            seed,
        }
    }
}

/// What one fold produced besides the predictions.
#[derive(Debug, Clone)]
pub enum TrainedModel<T> {
    Mlp {
        model: MlpModel<T>,
        history: Vec<EpochRecord>,
        best_epoch: usize,
        columns: Vec<String>,
    },
    Svm(SvmModel),
}

#[derive(Debug, Clone)]
pub struct FoldArtifacts<T> {
    pub outcomes: Vec<StudentOutcome>,
    pub model: TrainedModel<T>,
}

/// A model kind bound to a (window-filtered) corpus.
#[derive(Debug, Clone)]
pub struct Pipeline<T> {
    config: PipelineConfig,
    prepared: Prepared<T>,
    /// First post row of every bag, plus the total.
    offsets: Vec<usize>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(corpus: &[StudentBag], config: PipelineConfig, sources: &FeatureSources<'_>) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        let kind = config.kind;
        let prepared = match kind {
            ModelKind::TextBow => Prepared::Bow(
                corpus
                    .iter()
                    .flat_map(|b| b.posts.iter().map(|p| normalize_caption(&p.caption)))
                    .collect(),
            ),
            ModelKind::TextEmb | ModelKind::ImageEmb | ModelKind::Fusion => {
                let mut m: Option<FeatureMatrix<T>> = None;
                if kind.needs_text_embeddings() {
                    let t = table(sources.text_embeddings, Modality::Text)?;
                    m = Some(posts_to_matrix(corpus, t, OnMissing::Error)?.matrix);
                }
                if kind.needs_image_embeddings() {
                    let t = table(sources.image_embeddings, Modality::Image)?;
                    let img = posts_to_matrix(corpus, t, OnMissing::Error)?.matrix;
                    m = Some(match m {
                        Some(text) => text.hstack(&img)?,
                        None => img,
                    });
                }
                Prepared::Posts(m.expect("at least one modality"))
            }
            _ => Prepared::Users(user_features(corpus, kind, sources)?),
        };
        let mut offsets = Vec::with_capacity(corpus.len() + 1);
        let mut acc = 0;
        for b in corpus {
            offsets.push(acc);
            acc += b.len();
        }
        offsets.push(acc);
        Ok(Pipeline {
            config,
            prepared,
            offsets,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn post_rows(&self, bags: &[usize]) -> Vec<usize> {
        bags.iter()
            .flat_map(|&b| self.offsets[b]..self.offsets[b + 1])
            .collect()
    }

    /// The configured threshold, or the one chosen on validation students
    /// from their bag probabilities.
    fn threshold(&self, corpus: &[StudentBag], val_bags: &[usize], val_probs: &[f64]) -> Result<f64> {
        if !self.config.tune_threshold {
            return Ok(self.config.threshold);
        }
        let labels: Vec<BinaryLabel> = val_bags.iter().map(|&b| corpus[b].label()).collect();
        select_threshold(val_probs, &labels, self.config.threshold)
    }

    fn fold_seed(&self, split: usize) -> u64 {
        derive_seeds(self.config.seed, split + 1)[split]
    }

    /// Trains on the partition's training bags, selects on its validation
    /// bags and predicts every test student.
    pub fn fit_fold(&self, corpus: &[StudentBag], partition: &Partition, split: usize) -> Result<FoldArtifacts<T>> {
        if corpus.len() + 1 != self.offsets.len() || partition.len() != corpus.len() {
            return Err(Error::PartitionNotTotal("partition does not match the pipeline corpus".into()));
        }
        let train_bags = partition.members(Subset::Train);
        let val_bags = partition.members(Subset::Val);
        let test_bags = partition.members(Subset::Test);
        let seed = self.fold_seed(split);
        match &self.prepared {
            Prepared::Bow(docs) => {
                let train_rows = self.post_rows(&train_bags);
                let train_docs: Vec<Vec<&str>> = train_rows
                    .iter()
                    .map(|&r| docs[r].iter().map(String::as_str).collect())
                    .collect();
                let vocab = Vocabulary::fit(&train_docs);
                let mut data = Array2::<T>::zeros((docs.len(), vocab.len()));
                for (r, doc) in docs.iter().enumerate() {
                    for (j, v) in vocab.transform::<T, _>(doc).into_iter().enumerate() {
                        data[[r, j]] = v;
                    }
                }
                self.fit_posts(corpus, &data, vocab.column_names(), [&train_bags, &val_bags, &test_bags], seed)
            }
            Prepared::Posts(m) => self.fit_posts(
                corpus,
                m.data(),
                m.columns().to_vec(),
                [&train_bags, &val_bags, &test_bags],
                seed,
            ),
            Prepared::Users(m) => self.fit_users(corpus, m, [&train_bags, &val_bags, &test_bags], seed),
        }
    }

    fn fit_posts(
        &self,
        corpus: &[StudentBag],
        data: &Array2<T>,
        columns: Vec<String>,
        [train_bags, val_bags, test_bags]: [&Vec<usize>; 3],
        seed: u64,
    ) -> Result<FoldArtifacts<T>> {
        let labels_of = |bags: &[usize]| -> Vec<usize> {
            bags.iter()
                .flat_map(|&b| std::iter::repeat_n(corpus[b].label().index(), corpus[b].len()))
                .collect()
        };
        let train_rows = self.post_rows(train_bags);
        let val_rows = self.post_rows(val_bags);
        if train_rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let head = self.config.kind.head().expect("post-level kinds use a head");
        let specs = build_head(head, data.ncols())?;
        let model = MlpModel::<T>::new(&specs, seed)?;
        let cfg = TrainConfig { seed, ..self.config.train.clone() };
        let out = train(
            model,
            &data.select(Axis(0), &train_rows),
            &labels_of(train_bags),
            &data.select(Axis(0), &val_rows),
            &labels_of(val_bags),
            &cfg,
        )?;
        let threshold = if self.config.tune_threshold {
            let probs = crate::heads::positive_probabilities(&out.model, &data.select(Axis(0), &val_rows))?;
            let mut at = 0;
            let mut bags = Vec::new();
            let mut means = Vec::new();
            for &b in val_bags {
                let n = corpus[b].len();
                if n > 0 {
                    bags.push(b);
                    means.push(probs[at..at + n].iter().sum::<f64>() / n as f64);
                }
                at += n;
            }
            self.threshold(corpus, &bags, &means)?
        } else {
            self.config.threshold
        };
        let test_rows = self.post_rows(test_bags);
        let probs = crate::heads::positive_probabilities(&out.model, &data.select(Axis(0), &test_rows))?;
        let mut outcomes = Vec::with_capacity(test_bags.len());
        let mut at = 0;
        for &b in test_bags {
            let n = corpus[b].len();
            outcomes.push(predict_student(&corpus[b].student_id, &probs[at..at + n], threshold)?);
            at += n;
        }
        Ok(FoldArtifacts {
            outcomes,
            model: TrainedModel::Mlp {
                model: out.model,
                history: out.history,
                best_epoch: out.best_epoch,
                columns,
            },
        })
    }

    fn fit_users(
        &self,
        corpus: &[StudentBag],
        users: &FeatureMatrix<T>,
        [train_bags, val_bags, test_bags]: [&Vec<usize>; 3],
        seed: u64,
    ) -> Result<FoldArtifacts<T>> {
        // Students without posts have no features to learn from.
        let with_posts = |bags: &[usize]| -> Vec<usize> { bags.iter().copied().filter(|&b| !corpus[b].is_empty()).collect() };
        let train_rows = with_posts(train_bags);
        let val_rows = with_posts(val_bags);
        let test_rows = with_posts(test_bags);
        if train_rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let standardizer = Standardizer::fit(&users.data().select(Axis(0), &train_rows));
        let pick = |rows: &[usize]| standardizer.transform_matrix(&users.select_rows(rows));
        let (train_x, val_x, test_x) = (pick(&train_rows)?, pick(&val_rows)?, pick(&test_rows)?);
        let labels = |rows: &[usize]| -> Vec<BinaryLabel> { rows.iter().map(|&b| corpus[b].label()).collect() };
        let (probs, val_probs, model): (Vec<f64>, Vec<f64>, TrainedModel<T>) = match self.config.kind.head() {
            None => {
                let cfg = SvmConfig { seed, ..self.config.svm.clone() };
                let svm = svm_train(&train_x, &labels(&train_rows), &cfg)?;
                let probs = svm.decision(&test_x)?.into_iter().map(sigmoid).collect();
                let val_probs = if self.config.tune_threshold {
                    svm.decision(&val_x)?.into_iter().map(sigmoid).collect()
                } else {
                    Vec::new()
                };
                (probs, val_probs, TrainedModel::Svm(svm))
            }
            Some(head) => {
                let idx = |rows: &[usize]| -> Vec<usize> { labels(rows).iter().map(|l| l.index()).collect() };
                let specs = build_head(head, users.n_cols())?;
                let cfg = TrainConfig { seed, ..self.config.train.clone() };
                let out = train(
                    MlpModel::<T>::new(&specs, seed)?,
                    train_x.data(),
                    &idx(&train_rows),
                    val_x.data(),
                    &idx(&val_rows),
                    &cfg,
                )?;
                let probs = crate::heads::positive_probabilities(&out.model, test_x.data())?;
                let val_probs = if self.config.tune_threshold {
                    crate::heads::positive_probabilities(&out.model, val_x.data())?
                } else {
                    Vec::new()
                };
                (
                    probs,
                    val_probs,
                    TrainedModel::Mlp {
                        model: out.model,
                        history: out.history,
                        best_epoch: out.best_epoch,
                        columns: users.columns().to_vec(),
                    },
                )
            }
        };
        let threshold = self.threshold(corpus, &val_rows, &val_probs)?;
        let mut probs = probs.into_iter();
        let outcomes = test_bags
            .iter()
            .map(|&b| {
                let bag = &corpus[b];
                if bag.is_empty() {
                    predict_student(&bag.student_id, &[], threshold)
                } else {
                    let p = probs.next().expect("one probability per student with posts");
                    predict_student(&bag.student_id, &[p], threshold)
                }
            })
            .collect::<Result<_>>()?;
        Ok(FoldArtifacts { outcomes, model })
    }
}

impl<T: Scalar> FoldModel for Pipeline<T> {
    fn run_fold(&self, corpus: &[StudentBag], partition: &Partition, split: usize) -> Result<FoldOutput> {
        Ok(FoldOutput {
            outcomes: self.fit_fold(corpus, partition, split)?.outcomes,
        })
    }
}
