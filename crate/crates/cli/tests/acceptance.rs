//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p mil-screen --test acceptance`.
//!
//! Every expected value is recomputed here from first principles (brute
//! force, pair counting, hand formulas) rather than taken from the library.
//! A criterion listed in `KNOWN_FAILURES` still runs and still prints FAIL;
//! it only stops the process from exiting non-zero.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use milscreen::corpus::{
    filter_corpus, synth_corpus, BdiScore, BinaryLabel, ObservationWindow, Post, SeverityBand, StudentBag,
    SynthConfig,
};
use milscreen::evalkit::{cross_validate, f1_from_pr, prf1, roc_curve, ConfusionCounts, EvalConfig};
use milscreen::featex::{aggregate_user, hsv_mean_pixels, Hsv, Vocabulary};
use milscreen::heads::{build_head, HeadKind};
use milscreen::pipeline::{FeatureSources, ModelKind, Pipeline, PipelineConfig};
use milscreen::splitgen::{
    generate_suite, local_search, Basis, Partition, SearchBudget, SplitProblem, SplitTargets, Subset,
};
use milscreen::tinynn::{LayerSpec, Masks, MlpModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_FAILURES: &[&str] = &["f1-oracle"];

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

// F1 oracle

fn f1_oracle() -> Outcome {
    // (row, precision, recall, published F1, tolerance)
    let rows = [
        ("multimodal", 0.69, 0.92, 0.79, 0.0),
        ("text", 0.68, 0.85, 0.75, 0.0),
        ("image", 0.77, 0.67, 0.72, 0.005),
        ("feature-eng", 0.65, 0.90, 0.75, 0.0),
    ];
    let mut failed = Vec::new();
    for (name, p, r, published, tol) in rows {
        let harmonic = 2.0 * p * r / (p + r);
        let f1 = f1_from_pr(p, r);
        let agrees = (f1 - harmonic).abs() <= 1e-12;
        let ok = agrees
            && if tol == 0.0 {
                round2(f1) == published
            } else {
                (f1 - published).abs() <= tol
            };
        println!("    {name:<12} P={p:.2} R={r:.2} F1={f1:.4} published {published:.2} {}", if ok { "ok" } else { "MISMATCH" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        outcome(true, "all four table rows")
    } else {
        outcome(
            false,
            format!("{} row(s) disagree: 0.68/0.85 gives 0.7556, which rounds to 0.76, not 0.75", failed.join(", ")),
        )
    }
}

// BDI banding

fn bdi_banding() -> Outcome {
    for score in 0..=63i64 {
        let s = BdiScore::new(score).unwrap();
        let band = match score {
            0..=13 => SeverityBand::Minimal,
            14..=19 => SeverityBand::Mild,
            20..=28 => SeverityBand::Moderate,
            _ => SeverityBand::Severe,
        };
        if s.band() != band {
            return outcome(false, format!("score {score} banded as {:?}", s.band()));
        }
        let positive = score >= 20;
        if s.label().is_positive() != positive {
            return outcome(false, format!("score {score} labelled {:?}", s.label()));
        }
        if positive != matches!(band, SeverityBand::Moderate | SeverityBand::Severe) {
            return outcome(false, format!("score {score}: band and binary label disagree"));
        }
    }
    if BdiScore::new(64).is_ok() || BdiScore::new(-1).is_ok() {
        return outcome(false, "out-of-range score accepted");
    }
    let (severe, moderate, mild, minimal) = (82u32, 50u32, 32u32, 57u32);
    let total = severe + moderate + mild + minimal;
    let low = 100.0 * (minimal + mild) as f64 / total as f64;
    let high = 100.0 * (moderate + severe) as f64 / total as f64;
    let ok = total == 221 && round2(low) == 40.27 && round2(high) == 59.73;
    outcome(ok, format!("64 scores banded; {total} students, {low:.2}% / {high:.2}%"))
}

// Splitter oracle

fn toy_corpus(rng: &mut ChaCha8Rng) -> Vec<StudentBag> {
    let n = rng.random_range(3..=8);
    let day = NaiveDate::from_ymd_opt(2018, 10, 15).unwrap();
    (0..n)
        .map(|i| StudentBag {
            student_id: format!("b{i}"),
            bdi: BdiScore::new(if rng.random_bool(0.6) { 30 } else { 5 }).unwrap(),
            survey_date: day,
            demographics: Default::default(),
            posts: (0..rng.random_range(1..=7))
                .map(|k| Post {
                    post_id: format!("b{i}p{k}"),
                    timestamp: day.and_hms_opt(12, 0, 0).unwrap(),
                    caption: String::new(),
                    image_ref: None,
                    face_count: None,
                })
                .collect(),
        })
        .collect()
}

/// Independent objective: class L1 plus size-share error per subset,
/// measured in posts.
fn oracle_objective(corpus: &[StudentBag], assignment: &[usize], targets: &SplitTargets) -> f64 {
    let total: f64 = corpus.iter().map(|b| b.posts.len() as f64).sum();
    let mut err = 0.0;
    for s in 0..3 {
        let (mut neg, mut pos) = (0.0, 0.0);
        for (b, &a) in corpus.iter().zip(assignment) {
            if a == s {
                if b.bdi.value() >= 20 {
                    pos += b.posts.len() as f64;
                } else {
                    neg += b.posts.len() as f64;
                }
            }
        }
        let size = neg + pos;
        err += (size / total - targets.size_props[s]).abs();
        if size > 0.0 {
            err += (neg / size - targets.class_props[0]).abs() + (pos / size - targets.class_props[1]).abs();
        } else {
            err += targets.class_props[0] + targets.class_props[1];
        }
    }
    err
}

fn exhaustive_minimum(corpus: &[StudentBag], targets: &SplitTargets) -> f64 {
    let n = corpus.len();
    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut seen = [false; 3];
        for a in assignment.iter_mut() {
            *a = c % 3;
            seen[*a] = true;
            c /= 3;
        }
        if seen.iter().all(|&s| s) {
            best = best.min(oracle_objective(corpus, &assignment, targets));
        }
    }
    best
}

fn splitter_oracle() -> Outcome {
    let mut gen = ChaCha8Rng::seed_from_u64(31);
    let budget = SearchBudget { tolerance: 0.0, ..SearchBudget::iterations(2_000) };
    let mut hits = 0;
    for run in 0..100u64 {
        let corpus = toy_corpus(&mut gen);
        let targets = SplitTargets::from_corpus(&corpus, Basis::Posts).unwrap();
        let best = exhaustive_minimum(&corpus, &targets);
        let found = local_search(&corpus, &targets, &budget, &mut ChaCha8Rng::seed_from_u64(1000 + run)).unwrap();
        let assignment: Vec<usize> = found.partition.assignment().iter().map(|s| s.index()).collect();
        let recomputed = oracle_objective(&corpus, &assignment, &targets);
        if (recomputed - found.objective).abs() > 1e-12 {
            return outcome(false, format!("run {run}: objective {} but oracle says {recomputed}", found.objective));
        }
        if (found.objective - best).abs() <= 1e-12 {
            hits += 1;
        }
    }
    let cfg = SynthConfig { bags: 200, ..SynthConfig::default() };
    let corpus = synth_corpus(&cfg, 8).unwrap().bags;
    let targets = SplitTargets::from_corpus(&corpus, Basis::Posts).unwrap();
    let suite = generate_suite(&corpus, 10, &targets, &SearchBudget::iterations(20_000), 5).unwrap();
    let problem = SplitProblem::new(&corpus, targets).unwrap();
    let worst = suite
        .partitions()
        .flat_map(|p| problem.deviations(p))
        .fold(0.0f64, f64::max);
    let covered = suite.partitions().all(|p| p.len() == corpus.len() && p.counts().iter().all(|&c| c > 0));
    let ok = hits >= 95 && suite.entries.len() == 10 && covered && worst <= 0.01;
    outcome(
        ok,
        format!("optimum in {hits}/100 toy runs; 200 bags: 10 partitions, worst component deviation {worst:.4}"),
    )
}

// Gradient checks

fn fixed_masks(model: &MlpModel<f64>, rows: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let mut width = model.input_dim();
    let mut out = Vec::new();
    for spec in model.specs() {
        match *spec {
            LayerSpec::Linear { output, .. } => width = output,
            LayerSpec::Dropout { p } => out.push(Array2::from_shape_simple_fn((rows, width), || {
                if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }
            })),
            _ => {}
        }
    }
    out
}

fn gradient_error(specs: &[LayerSpec], seed: u64) -> f64 {
    let model = MlpModel::<f64>::new(specs, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rows = 5;
    let x = Array2::from_shape_simple_fn((rows, model.input_dim()), || rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..rows).map(|i| (i * 7 + 1) % 2).collect();
    let masks = fixed_masks(&model, rows, &mut rng);
    let (_, grads) = model.clone().loss_and_grads(&x, &labels, Masks::Fixed(&masks)).unwrap();
    let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|g| g.to_vec()).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (t, tensor) in analytic.iter().enumerate() {
        for (k, &a) in tensor.iter().enumerate() {
            let loss = |d: f64| {
                let mut m = model.clone();
                m.parameters_mut()[t][k] += d;
                m.loss_and_grads(&x, &labels, Masks::Fixed(&masks)).unwrap().0
            };
            let numeric = (loss(h) - loss(-h)) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-5));
        }
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut cases: Vec<(String, Vec<LayerSpec>)> = vec![
        ("linear".into(), vec![LayerSpec::Linear { input: 4, output: 3 }, LayerSpec::Softmax]),
        (
            "relu".into(),
            vec![
                LayerSpec::Linear { input: 4, output: 5 },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 5, output: 2 },
                LayerSpec::Softmax,
            ],
        ),
        (
            "batchnorm".into(),
            vec![
                LayerSpec::Linear { input: 4, output: 3 },
                LayerSpec::BatchNorm { features: 3 },
                LayerSpec::Softmax,
            ],
        ),
        (
            "dropout".into(),
            vec![LayerSpec::Dropout { p: 0.5 }, LayerSpec::Linear { input: 4, output: 2 }, LayerSpec::Softmax],
        ),
    ];
    for (kind, d) in [(HeadKind::Image, 6), (HeadKind::Text, 8), (HeadKind::Fusion, 10)] {
        cases.push((format!("{kind:?} head").to_lowercase(), build_head(kind, d).unwrap()));
    }
    let mut worst = (0.0f64, String::new());
    for (name, specs) in &cases {
        for seed in 0..3 {
            let e = gradient_error(specs, seed);
            if e > worst.0 {
                worst = (e, name.clone());
            }
        }
    }
    outcome(
        worst.0 <= 1e-4,
        format!("{} architectures, worst relative error {:.2e} ({})", cases.len(), worst.0, worst.1),
    )
}

// End-to-end separable run

fn end_to_end() -> Outcome {
    let cfg = SynthConfig { bags: 221, text_dim: 64, image_dim: 64, ..SynthConfig::default() };
    let synth = synth_corpus(&cfg, 42).unwrap();
    let corpus = filter_corpus(&synth.bags, ObservationWindow::new(212).unwrap());
    let targets = SplitTargets::from_corpus(&corpus, Basis::Posts).unwrap();
    let suite = generate_suite(&corpus, 10, &targets, &SearchBudget::iterations(5_000), 42).unwrap();
    let partitions: Vec<Partition> = suite.partitions().cloned().collect();
    let sources = FeatureSources {
        text_embeddings: Some(&synth.text_embeddings),
        image_embeddings: Some(&synth.image_embeddings),
        ..FeatureSources::default()
    };
    let mut f1 = Vec::new();
    for kind in [ModelKind::TextEmb, ModelKind::ImageEmb, ModelKind::Fusion] {
        let mut config = PipelineConfig::new(kind, 42);
        config.train.lr = 0.01;
        let pipeline = Pipeline::<f64>::new(&corpus, config, &sources).unwrap();
        let eval = EvalConfig {
            window: Some(212),
            model_kind: kind.name().into(),
            seed: 42,
            protocol: "suite".into(),
            threshold: 0.5,
        };
        let report = cross_validate(&corpus, &partitions, &pipeline, eval).unwrap();
        let test_bags: usize = partitions.iter().map(|p| p.members(Subset::Test).len()).sum();
        let scored: usize = report.predictions.iter().map(Vec::len).sum();
        assert_eq!(scored, test_bags, "every test student is reported");
        f1.push(report.mean.f1);
    }
    let (text, image, fusion) = (f1[0], f1[1], f1[2]);
    let ok = f1.iter().all(|&f| f >= 0.95) && fusion >= text.max(image) - 0.02;
    outcome(ok, format!("mean F1 text {text:.3}, image {image:.3}, fusion {fusion:.3} over 10 splits"))
}

// Metric oracles

fn pair_auc(scores: &[f64], labels: &[BinaryLabel]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_positive() && !lj.is_positive() {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let label = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { BinaryLabel::Positive } else { BinaryLabel::Negative };
    let mut auc_sets = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=100);
        let labels: Vec<BinaryLabel> = (0..n).map(|_| label(&mut rng)).collect();
        if labels.iter().all(|l| l.is_positive()) || labels.iter().all(|l| !l.is_positive()) {
            continue;
        }
        // Distinct scores: a shuffled permutation of 0..n.
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        for i in (1..n).rev() {
            scores.swap(i, rng.random_range(0..=i));
        }
        let auc = roc_curve(&scores, &labels).unwrap().auc;
        let expected = pair_auc(&scores, &labels);
        if auc != expected {
            return outcome(false, format!("AUC {auc} vs pair count {expected} (n={n})"));
        }
        auc_sets += 1;
    }
    for set in 0..1000 {
        let n = rng.random_range(1..=60);
        let truth: Vec<BinaryLabel> = (0..n).map(|_| label(&mut rng)).collect();
        let pred: Vec<BinaryLabel> = (0..n).map(|_| label(&mut rng)).collect();
        let count = |p: bool, t: bool| {
            pred.iter().zip(&truth).filter(|(a, b)| a.is_positive() == p && b.is_positive() == t).count()
        };
        let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let got = prf1(&ConfusionCounts::from_pairs(pred.iter().zip(&truth)));
        if (got.precision - precision).abs() > 1e-12 || (got.recall - recall).abs() > 1e-12 || (got.f1 - f1).abs() > 1e-12 {
            return outcome(false, format!("set {set}: P/R/F1 {got:?} vs recount {precision}/{recall}/{f1}"));
        }
    }
    outcome(true, format!("AUC exact on {auc_sets} tie-free sets; P/R/F1 match 1000 recounts"))
}

// Feature oracles

fn feature_oracles() -> Outcome {
    let docs = vec![vec!["a", "b"], vec!["b", "c"]];
    let vocab = Vocabulary::fit(&docs);
    let v: Vec<f64> = vocab.transform(&["a", "b"]);
    let idf_a = (3.0f64 / 2.0).ln() + 1.0;
    let norm = (idf_a * idf_a + 1.0).sqrt();
    let expected = [idf_a / norm, 1.0 / norm, 0.0];
    let cols = ["a", "b", "c"].map(|t| vocab.index_of(t).unwrap());
    let tfidf_err = (0..3).map(|i| (v[cols[i]] - expected[i]).abs()).fold(0.0, f64::max);
    let tfidf_ok = tfidf_err <= 1e-9 && (idf_a - 1.405).abs() < 5e-4
        && (expected[0] - 0.815).abs() < 5e-4
        && (expected[1] - 0.580).abs() < 5e-4;

    let mut pixels = vec![[255u8, 0, 0]; 8];
    pixels.extend(vec![[255u8, 255, 0]; 8]);
    let hsv: Hsv<f64> = hsv_mean_pixels(&pixels).unwrap();
    let hsv_ok = (hsv.h - 1.0 / 12.0).abs() <= 1e-12 && hsv.s == 1.0 && hsv.v == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut agg_ok = true;
    let mut worst_sum = 0.0f64;
    for n in 1..=20 {
        let posts = Array2::from_shape_simple_fn((n, 4), || rng.random_range(0.0..5.0));
        let agg = aggregate_user(posts.view());
        agg_ok &= agg.values.len() == 12 && !agg.no_posts;
        for j in 0..4 {
            let mean = agg.values[j];
            let sum = agg.values[8 + j];
            worst_sum = worst_sum.max((sum - mean * n as f64).abs());
        }
    }
    let ok = tfidf_ok && hsv_ok && agg_ok && worst_sum <= 1e-9;
    outcome(
        ok,
        format!(
            "tf-idf error {tfidf_err:.1e}; red/yellow hsv ({:.6}, {}, {}); 12 visual features; |sum - mean*n| <= {worst_sum:.1e}",
            hsv.h, hsv.s, hsv.v
        ),
    )
}

// CLI determinism

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mil-screen"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let steps: [Vec<&str>; 2] = [
        vec!["synth", "--bags", "40", "--seed", "7", "--out-dir", "data"],
        vec!["split", "--corpus", "data/corpus.jsonl", "--n-splits", "3", "--seed", "7", "--max-iterations", "300", "--out-dir", "suite"],
    ];
    for s in &steps {
        if !cli(d, s) {
            return outcome(false, format!("`{}` failed", s.join(" ")));
        }
    }
    let mut compared = 0;
    for (kind, extra) in [
        ("fusion", vec!["--embeddings", "data/embeddings/text.milemb", "--embeddings", "data/embeddings/image.milemb"]),
        ("svm", vec![]),
    ] {
        for out in ["run1", "run2"] {
            let dir = format!("{out}_{kind}");
            let mut args = vec!["eval", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", kind, "--seed", "7"];
            args.extend(&extra);
            args.extend(["--out-dir", dir.as_str()]);
            if !cli(d, &args) {
                return outcome(false, format!("eval {kind} failed"));
            }
        }
        let mut names: Vec<String> = std::fs::read_dir(d.join(format!("run1_{kind}")))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".csv") || n.ends_with(".json"))
            .collect();
        names.sort();
        for n in &names {
            let a = std::fs::read(d.join(format!("run1_{kind}")).join(n)).unwrap();
            let b = std::fs::read(d.join(format!("run2_{kind}")).join(n)).unwrap();
            if a != b {
                return outcome(false, format!("{kind}/{n} differs between runs"));
            }
            compared += 1;
        }
    }
    outcome(true, format!("{compared} CSV/JSON reports byte-identical across reruns"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("f1-oracle", f1_oracle),
        ("bdi-banding", bdi_banding),
        ("splitter-oracle", splitter_oracle),
        ("gradient-checks", gradient_checks),
        ("end-to-end", end_to_end),
        ("metric-oracles", metric_oracles),
        ("feature-oracles", feature_oracles),
        ("determinism", cli_determinism),
    ];
    let mut unexpected = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.contains(&name);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {name}: {} [{secs:.1}s]", o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion(s) failed");
        std::process::exit(1);
    }
}
