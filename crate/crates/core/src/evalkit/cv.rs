use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pr_curve, prf1, roc_curve, ConfusionCounts, CurvePoint};
use crate::corpus::{BinaryLabel, StudentBag};
use crate::error::{Error, Result};
use crate::heads::StudentOutcome;
use crate::scalar::mean_and_sample_std;
use crate::splitgen::{Partition, Subset};

/// A model family evaluated by [`cross_validate`]: fit on the training
/// bags, select on the validation bags and predict every test bag.
pub trait FoldModel: Sync {
    fn run_fold(&self, corpus: &[StudentBag], partition: &Partition, split: usize) -> Result<FoldOutput>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    /// One outcome per test student, in corpus order.
    pub outcomes: Vec<StudentOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window: Option<u32>,
    pub model_kind: String,
    pub seed: u64,
    /// `suite` for the generated partitions, `kfold` for conventional folds.
    pub protocol: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: usize,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
    pub auc: Option<f64>,
    pub evaluated: usize,
    pub no_posts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub splits: Vec<SplitMetrics>,
    pub mean: MetricSummary,
    /// Sample standard deviation across splits.
    pub std: MetricSummary,
    /// Curves over the pooled test predictions of every split.
    pub roc: Vec<CurvePoint>,
    pub roc_auc: Option<f64>,
    pub pr: Vec<CurvePoint>,
    pub predictions: Vec<Vec<StudentOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

fn check_partition(corpus: &[StudentBag], partition: &Partition) -> Result<()> {
    if partition.len() != corpus.len() {
        return Err(Error::PartitionNotTotal(format!(
            "{} assignments for {} bags",
            partition.len(),
            corpus.len()
        )));
    }
    let mut seen: HashMap<&str, Subset> = HashMap::new();
    for (bag, &subset) in corpus.iter().zip(partition.assignment()) {
        if let Some(&prev) = seen.get(bag.student_id.as_str()) {
            if prev != subset {
                return Err(Error::Leak {
                    student: bag.student_id.clone(),
                    first: prev.to_string(),
                    second: subset.to_string(),
                });
            }
        }
        seen.insert(&bag.student_id, subset);
    }
    Ok(())
}

fn score_split(
    corpus: &[StudentBag],
    partition: &Partition,
    split: usize,
    outcomes: &[StudentOutcome],
) -> Result<(SplitMetrics, Vec<(f64, BinaryLabel)>)> {
    let test = partition.members(Subset::Test);
    if outcomes.len() != test.len()
        || test.iter().zip(outcomes).any(|(&i, o)| corpus[i].student_id != o.student_id())
    {
        return Err(Error::Shape(format!(
            "split {split}: predictions do not match the test students"
        )));
    }
    let mut pairs = Vec::new();
    let mut scored = Vec::new();
    let mut no_posts = 0;
    for (&i, o) in test.iter().zip(outcomes) {
        match o.prediction() {
            Some(p) => {
                pairs.push((p.label, corpus[i].label()));
                scored.push((p.bag_probability, corpus[i].label()));
            }
            None => no_posts += 1,
        }
    }
    let counts = ConfusionCounts::from_pairs(pairs.iter().map(|(a, b)| (a, b)));
    let m = prf1(&counts);
    let (scores, labels): (Vec<f64>, Vec<BinaryLabel>) = scored.iter().copied().unzip();
    let auc = roc_curve(&scores, &labels).ok().map(|r| r.auc);
    Ok((
        SplitMetrics {
            split,
            counts,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            zero_division: m.zero_division,
            auc,
            evaluated: pairs.len(),
            no_posts,
        },
        scored,
    ))
}

fn summarize(splits: &[SplitMetrics]) -> (MetricSummary, MetricSummary) {
    let stat = |f: &dyn Fn(&SplitMetrics) -> f64| {
        let v: Vec<f64> = splits.iter().map(f).collect();
        mean_and_sample_std(&v)
    };
    let (pm, ps) = stat(&|s| s.precision);
    let (rm, rs) = stat(&|s| s.recall);
    let (fm, fs) = stat(&|s| s.f1);
    let aucs: Option<Vec<f64>> = splits.iter().map(|s| s.auc).collect();
    let (am, as_) = match aucs {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_and_sample_std(&v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    (
        MetricSummary { precision: pm, recall: rm, f1: fm, auc: am },
        MetricSummary { precision: ps, recall: rs, f1: fs, auc: as_ },
    )
}

/// Metrics, scored test students and raw outcomes of one fold.
type FoldScores = (SplitMetrics, Vec<(f64, BinaryLabel)>, Vec<StudentOutcome>);

/// Runs `model` on every partition (in parallel), scores the test students
/// and aggregates. Every partition is checked for students that appear in
/// more than one subset before any training starts.
pub fn cross_validate(
    corpus: &[StudentBag],
    partitions: &[Partition],
    model: &dyn FoldModel,
    config: EvalConfig,
) -> Result<EvalReport> {
    if partitions.is_empty() {
        return Err(Error::Config("no partitions to evaluate".into()));
    }
    for p in partitions {
        check_partition(corpus, p)?;
    }
    let results: Vec<FoldScores> = partitions
        .par_iter()
        .enumerate()
        .map(|(split, partition)| {
            let out = model.run_fold(corpus, partition, split)?;
            let (metrics, scored) = score_split(corpus, partition, split, &out.outcomes)?;
            Ok((metrics, scored, out.outcomes))
        })
        .collect::<Result<_>>()?;
    let mut splits = Vec::with_capacity(results.len());
    let mut pooled = Vec::new();
    let mut predictions = Vec::with_capacity(results.len());
    for (m, scored, outcomes) in results {
        splits.push(m);
        pooled.extend(scored);
        predictions.push(outcomes);
    }
    let (mean, std) = summarize(&splits);
    let (scores, labels): (Vec<f64>, Vec<BinaryLabel>) = pooled.into_iter().unzip();
    let roc = roc_curve(&scores, &labels).ok();
    let pr = pr_curve(&scores, &labels)?;
    Ok(EvalReport {
        config,
        splits,
        mean,
        std,
        roc_auc: roc.as_ref().map(|r| r.auc),
        roc: roc.map(|r| r.points).unwrap_or_default(),
        pr,
        predictions,
        manifest_hash: None,
    })
}

/// Conventional k-fold partitions: bags are shuffled once, fold `i` is the
/// test set of partition `i`, fold `i + 1` its validation set and the rest
/// is training data.
pub fn kfold_partitions(n_bags: usize, k: usize, seed: u64) -> Result<Vec<Partition>> {
    if k < 3 || n_bags < k {
        return Err(Error::Config(format!("k-fold needs 3 <= k <= bags, got k={k} for {n_bags} bags")));
    }
    let mut order: Vec<usize> = (0..n_bags).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n_bags];
    for (pos, &bag) in order.iter().enumerate() {
        fold[bag] = pos % k;
    }
    Ok((0..k)
        .map(|i| {
            Partition::new(
                fold.iter()
                    .map(|&f| {
                        if f == i {
                            Subset::Test
                        } else if f == (i + 1) % k {
                            Subset::Val
                        } else {
                            Subset::Train
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io("<report>", e))
    }

    /// One row per split followed by `mean` and `std` rows.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut out: W) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io("<report>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "split", "precision", "recall", "f1", "auc", "tp", "fp", "fn", "tn", "evaluated", "no_posts",
        ])?;
        let opt = |v: Option<f64>| v.map(|a| a.to_string()).unwrap_or_default();
        for s in &self.splits {
            w.write_record([
                s.split.to_string(),
                s.precision.to_string(),
                s.recall.to_string(),
                s.f1.to_string(),
                opt(s.auc),
                s.counts.tp.to_string(),
                s.counts.fp.to_string(),
                s.counts.fn_.to_string(),
                s.counts.tn.to_string(),
                s.evaluated.to_string(),
                s.no_posts.to_string(),
            ])?;
        }
        for (name, m) in [("mean", &self.mean), ("std", &self.std)] {
            let mut row = vec![
                name.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                opt(m.auc),
            ];
            row.extend(std::iter::repeat_n(String::new(), 6));
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }

    /// Two-decimal summary lines.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} ({} splits)\nprecision {:.2} ± {:.2}\nrecall    {:.2} ± {:.2}\nf1        {:.2} ± {:.2}\n",
            self.config.model_kind,
            self.splits.len(),
            self.mean.precision,
            self.std.precision,
            self.mean.recall,
            self.std.recall,
            self.mean.f1,
            self.std.f1,
        );
        if let (Some(m), Some(sd)) = (self.mean.auc, self.std.auc) {
            s.push_str(&format!("auc       {m:.2} ± {sd:.2}\n"));
        }
        s
    }
}
