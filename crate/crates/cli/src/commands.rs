use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use milscreen::corpus::{
    corpus_stats, filter_corpus, load_corpus, synth_corpus, ObservationWindow, SeverityBand, StatsReport,
    StudentBag,
};
use milscreen::embedstore::{load_embeddings, EmbeddingTable, Modality};
use milscreen::evalkit::{
    cross_validate, hashtag_ranking, kfold_partitions, write_curve_csv, write_ranking_csv, EvalConfig,
};
use milscreen::featex::{
    aggregate_corpus, demographics_matrix, lexicon_matrix, load_face_sidecar, visual_matrix, DirImageSource,
    FaceDetector, Lexicon, RecordedFaces, StubFaces,
};
use milscreen::heads::{svm_train, write_predictions_csv, SvmConfig};
use milscreen::pipeline::{user_features, FeatureSources, ModelKind, Pipeline, PipelineConfig, TrainedModel};
use milscreen::splitgen::{generate_suite, Basis, Partition, SearchBudget, SplitTargets, Suite};
use milscreen::tinynn::{write_checkpoint, write_history_csv, TrainConfig};
use milscreen::FeatureMatrix64;
use serde::Serialize;

use crate::config::{pick, FileConfig};
use crate::manifest::Run;
use crate::{AnalyzeArgs, Common, EmbedCommand, EvalArgs, SplitArgs, SynthArgs, ThresholdArgs, TrainArgs, UsageError};

pub const DEFAULT_WINDOW: u32 = 212;
pub const DEFAULT_N_SPLITS: usize = 10;
pub const DEFAULT_OUT_DIR: &str = "mil-screen-out";
const TOP_K: usize = 10;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flags merged with the config file. Output locations stay out of the
/// serialized form so they do not affect the manifest hash.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub window: u32,
    pub n_splits: usize,
    pub seed: u64,
    pub model_kind: Option<String>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub images: Option<PathBuf>,
    pub faces: String,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Settings {
    pub fn resolve(c: &Common, file: &FileConfig) -> Self {
        let embeddings = if c.embeddings.is_empty() {
            file.embeddings.clone().unwrap_or_default()
        } else {
            c.embeddings.clone()
        };
        Settings {
            corpus: c.corpus.clone().or_else(|| file.corpus.clone()),
            window: pick(c.window, file.window, DEFAULT_WINDOW),
            n_splits: pick(c.n_splits, file.n_splits, DEFAULT_N_SPLITS),
            seed: pick(c.seed, file.seed, 0),
            model_kind: c.model_kind.clone().or_else(|| file.model_kind.clone()),
            lexicon: c.lexicon.clone().or_else(|| file.lexicon.clone()),
            embeddings,
            images: c.images.clone().or_else(|| file.images.clone()),
            faces: pick(c.faces.clone(), file.faces.clone(), "recorded".to_string()),
            out_dir: pick(c.out_dir.clone(), file.out_dir.clone(), PathBuf::from(DEFAULT_OUT_DIR)),
        }
    }

    fn corpus_path(&self) -> anyhow::Result<&Path> {
        self.corpus.as_deref().ok_or_else(|| usage("--corpus is required"))
    }

    fn window(&self) -> anyhow::Result<ObservationWindow> {
        ObservationWindow::new(self.window as i64).map_err(|e| usage(e.to_string()))
    }

    fn model_kind(&self) -> anyhow::Result<ModelKind> {
        let name = self.model_kind.as_deref().ok_or_else(|| usage("--model-kind is required"))?;
        name.parse().map_err(|_| {
            let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
            usage(format!("unknown model kind `{name}` (expected one of {})", names.join(", ")))
        })
    }
}

/// The window-filtered corpus, with its digest recorded on `run`.
fn load_filtered(s: &Settings, run: &mut Run) -> anyhow::Result<Vec<StudentBag>> {
    let path = s.corpus_path()?;
    let window = s.window()?;
    run.input(path)?;
    let corpus = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    Ok(filter_corpus(&corpus, window))
}

/// Optional inputs, loaded and digested up front.
struct Inputs {
    text: Option<EmbeddingTable>,
    image: Option<EmbeddingTable>,
    lexicon: Lexicon,
    images: DirImageSource,
    faces: Box<dyn FaceDetector>,
}

impl Inputs {
    fn load(s: &Settings, run: &mut Run) -> anyhow::Result<Self> {
        let mut text = None;
        let mut image = None;
        for path in &s.embeddings {
            run.input(path)?;
            let table = load_embeddings(path).with_context(|| format!("loading embeddings {}", path.display()))?;
            let slot = match table.modality() {
                Modality::Text => &mut text,
                Modality::Image => &mut image,
            };
            if slot.is_some() {
                return Err(usage(format!("more than one {} embedding file given", table.modality())));
            }
            *slot = Some(table);
        }
        let lexicon = match &s.lexicon {
            Some(p) if p.as_os_str() != "demo" => {
                run.input(p)?;
                Lexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?
            }
            _ => Lexicon::demo(),
        };
        let root = match &s.images {
            Some(p) => p.clone(),
            None => s
                .corpus
                .as_deref()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        };
        let faces: Box<dyn FaceDetector> = match s.faces.as_str() {
            "recorded" => Box::new(RecordedFaces),
            "stub" => Box::new(StubFaces),
            path => {
                let p = Path::new(path);
                run.input(p)?;
                Box::new(load_face_sidecar(p).with_context(|| format!("loading face counts {path}"))?)
            }
        };
        Ok(Inputs {
            text,
            image,
            lexicon,
            images: DirImageSource::new(root),
            faces,
        })
    }

    fn sources(&self) -> FeatureSources<'_> {
        FeatureSources {
            text_embeddings: self.text.as_ref(),
            image_embeddings: self.image.as_ref(),
            lexicon: Some(&self.lexicon),
            images: Some(&self.images),
            faces: Some(self.faces.as_ref()),
        }
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> milscreen::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_matrix(run: &mut Run, rel: &str, m: &FeatureMatrix64) -> anyhow::Result<()> {
    let tag = run.tag();
    let bytes = csv_bytes(|b| m.write_csv(b, Some(&tag)))?;
    run.write(rel, &bytes)
}

fn pipeline_config(
    s: &Settings,
    file: &FileConfig,
    kind: ModelKind,
    threshold: &ThresholdArgs,
) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::new(kind, s.seed);
    if let Some(t) = &file.train {
        cfg.train = TrainConfig { seed: s.seed, ..t.clone() };
    }
    if let Some(v) = &file.svm {
        cfg.svm = SvmConfig { seed: s.seed, ..v.clone() };
    }
    if let Some(t) = threshold.threshold.or(file.threshold) {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("threshold {t} outside [0, 1]")));
        }
        cfg.threshold = t;
    }
    cfg.tune_threshold = threshold.tune_threshold || file.tune_threshold.unwrap_or(false);
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn config_json<T: Serialize>(s: &Settings, extra: T) -> anyhow::Result<serde_json::Value> {
    let mut v = serde_json::to_value(s)?;
    if let (serde_json::Value::Object(map), serde_json::Value::Object(more)) = (&mut v, serde_json::to_value(extra)?) {
        map.extend(more);
    }
    Ok(v)
}

fn require_suite(dir: &Path) -> anyhow::Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("suite directory {} does not exist", dir.display())))
    }
}

fn load_suite(dir: &Path, corpus: &[StudentBag], run: &mut Run) -> anyhow::Result<Vec<Partition>> {
    require_suite(dir)?;
    let suite = Suite::load(dir, corpus).with_context(|| format!("loading suite {}", dir.display()))?;
    run.input(&dir.join(milscreen::splitgen::SUITE_MANIFEST))?;
    for e in &suite.entries {
        run.input(&dir.join(&e.file))?;
    }
    Ok(suite.partitions().cloned().collect())
}

pub fn synth(args: &SynthArgs, file: &FileConfig) -> anyhow::Result<()> {
    let mut cfg = file.synth.clone().unwrap_or_default();
    if let Some(b) = args.bags {
        cfg.bags = b;
    }
    if let Some(v) = args.signal {
        cfg.signal = v;
    }
    if let Some(d) = args.text_dim {
        cfg.text_dim = d;
    }
    if let Some(d) = args.image_dim {
        cfg.image_dim = d;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let seed = pick(args.seed, file.seed, 0);
    let out = pick(args.out_dir.clone(), file.out_dir.clone(), PathBuf::from(DEFAULT_OUT_DIR));
    let mut run = Run::new("synth", serde_json::to_value(&cfg)?, &out)?;
    run.seed("synth", seed);
    run.seal();
    let corpus = synth_corpus(&cfg, seed)?;
    for rel in corpus.save(&out)? {
        run.record(&rel);
    }
    let manifest = run.finish()?;
    println!(
        "{} students, {} posts written to {}",
        corpus.bags.len(),
        corpus.bags.iter().map(StudentBag::len).sum::<usize>(),
        out.display()
    );
    println!("manifest {}", manifest.display());
    Ok(())
}

fn stats_csv(report: &StatsReport, comment: &str) -> Vec<u8> {
    let mut out = format!("# {comment}\nband,students,posts,post_pct,mean_posts,std_posts\n");
    for b in &report.bands {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.band.name(),
            b.students,
            b.posts,
            b.post_pct,
            b.mean_posts,
            b.std_posts
        ));
    }
    let all_pct = if report.posts == 0 { 0.0 } else { 100.0 };
    out.push_str(&format!(
        "all,{},{},{},{},{}\n",
        report.students, report.posts, all_pct, report.mean_posts, report.std_posts
    ));
    out.into_bytes()
}

pub fn stats(c: &Common, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(c, file);
    let path = s.corpus_path()?.to_path_buf();
    let window = s.window()?;
    let mut run = Run::new("stats", config_json(&s, ())?, &s.out_dir)?;
    run.input(&path)?;
    run.seal();
    let corpus = load_corpus(&path).with_context(|| format!("loading corpus {}", path.display()))?;
    let report = corpus_stats(&corpus, window)?;
    println!("window {} days: {} students, {} posts", report.window_days, report.students, report.posts);
    println!("{:<10} {:>8} {:>7} {:>7} {:>8} {:>8}", "band", "students", "posts", "%posts", "mean", "std");
    for b in &report.bands {
        println!(
            "{:<10} {:>8} {:>7} {:>7.2} {:>8.2} {:>8.2}",
            b.band.name(),
            b.students,
            b.posts,
            b.post_pct,
            b.mean_posts,
            b.std_posts
        );
    }
    println!(
        "negative {} ({:.2}% of posts), positive {} ({:.2}% of posts, {:.2}% of students)",
        report.negative_students,
        report.negative_post_pct,
        report.positive_students,
        report.positive_post_pct,
        report.positive_student_pct
    );
    run.write_json("stats.json", &report)?;
    let bytes = stats_csv(&report, &run.tag());
    run.write("stats.csv", &bytes)?;
    run.finish()?;
    Ok(())
}

pub fn split(args: &SplitArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(&args.common, file);
    let basis: Basis = pick(args.basis.clone(), file.basis.clone(), "posts".into())
        .parse()
        .map_err(|e: milscreen::Error| usage(e.to_string()))?;
    let budget_secs = pick(args.budget_secs, file.budget_secs, 300);
    let max_iterations = args.max_iterations.or(file.max_iterations);
    let budget = SearchBudget {
        wall_clock: (budget_secs > 0).then(|| Duration::from_secs(budget_secs)),
        max_iterations,
        ..SearchBudget::default()
    };
    #[derive(Serialize)]
    struct Extra {
        basis: Basis,
        budget_secs: u64,
        max_iterations: Option<usize>,
    }
    let extra = Extra { basis, budget_secs, max_iterations };
    let mut run = Run::new("split", config_json(&s, extra)?, &s.out_dir)?;
    run.seed("split", s.seed);
    let corpus = load_filtered(&s, &mut run)?;
    run.seal();
    let targets = SplitTargets::from_corpus(&corpus, basis)?;
    let mut suite = generate_suite(&corpus, s.n_splits, &targets, &budget, s.seed)?;
    suite.manifest_hash = Some(run.hash().to_string());
    suite.save(&s.out_dir, &corpus, Some(&run.tag()))?;
    run.record(milscreen::splitgen::SUITE_MANIFEST);
    for e in &suite.entries {
        run.record(&e.file);
        println!("{}  objective {:.6}  {:?}  {} rounds", e.file, e.objective, e.status, e.iterations);
    }
    if suite.duplicates > 0 {
        println!("{} duplicate partitions", suite.duplicates);
    }
    run.finish()?;
    Ok(())
}

pub fn featurize(c: &Common, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(c, file);
    let mut run = Run::new("featurize", config_json(&s, ())?, &s.out_dir)?;
    let corpus = load_filtered(&s, &mut run)?;
    let inputs = Inputs::load(&s, &mut run)?;
    run.seal();
    let lex = lexicon_matrix::<f64>(&corpus, &inputs.lexicon, true)?;
    write_matrix(&mut run, "posts_lexicon.csv", &lex)?;
    write_matrix(&mut run, "users_lexicon.csv", &aggregate_corpus(&corpus, &lex)?)?;
    let vis = visual_matrix::<f64>(&corpus, &inputs.images, inputs.faces.as_ref())?;
    write_matrix(&mut run, "posts_visual.csv", &vis)?;
    write_matrix(&mut run, "users_visual.csv", &aggregate_corpus(&corpus, &vis)?)?;
    write_matrix(&mut run, "users_demographics.csv", &demographics_matrix::<f64>(&corpus)?)?;
    for (name, table) in [("text", &inputs.text), ("image", &inputs.image)] {
        if let Some(t) = table {
            let m = milscreen::embedstore::posts_to_matrix::<f64>(&corpus, t, milscreen::embedstore::OnMissing::Error)?
                .matrix;
            write_matrix(&mut run, &format!("users_{name}_emb.csv"), &aggregate_corpus(&corpus, &m)?)?;
        }
    }
    let manifest = run.finish()?;
    println!("features for {} students written; manifest {}", corpus.len(), manifest.display());
    Ok(())
}

/// Validates embedding files; with a corpus, also reports posts that need a
/// vector but have none. Returns `false` when any check failed.
pub fn embed(cmd: &EmbedCommand) -> anyhow::Result<bool> {
    let EmbedCommand::Check { files, corpus } = cmd;
    let bags = match corpus {
        Some(p) => Some(load_corpus(p).with_context(|| format!("loading corpus {}", p.display()))?),
        None => None,
    };
    let mut ok = true;
    for path in files {
        let table = match load_embeddings(path) {
            Ok(t) => t,
            Err(e) => {
                println!("FAIL {}: {e}", path.display());
                ok = false;
                continue;
            }
        };
        let mut missing = Vec::new();
        if let Some(bags) = &bags {
            for post in bags.iter().flat_map(|b| b.posts.iter()) {
                let needed = match table.modality() {
                    Modality::Text => !post.caption.trim().is_empty(),
                    Modality::Image => post.image_ref.is_some(),
                };
                if needed && table.get(&post.post_id).is_none() {
                    missing.push(post.post_id.as_str());
                }
            }
        }
        if missing.is_empty() {
            println!(
                "ok   {}: {} {} d={} rows={}",
                path.display(),
                table.modality(),
                table.encoder(),
                table.dim(),
                table.len()
            );
        } else {
            ok = false;
            let shown: Vec<&str> = missing.iter().take(5).copied().collect();
            println!(
                "FAIL {}: {} posts without a vector ({}{})",
                path.display(),
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            );
        }
    }
    Ok(ok)
}

pub fn train(args: &TrainArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(&args.common, file);
    let kind = s.model_kind()?;
    let suite_dir = args
        .suite
        .clone()
        .or_else(|| file.suite.clone())
        .ok_or_else(|| usage("--suite is required"))?;
    require_suite(&suite_dir)?;
    let cfg = pipeline_config(&s, file, kind, &args.threshold)?;
    #[derive(Serialize)]
    struct Extra<'a> {
        split: usize,
        pipeline: &'a PipelineConfig,
    }
    let mut run = Run::new("train", config_json(&s, Extra { split: args.split, pipeline: &cfg })?, &s.out_dir)?;
    run.seed("pipeline", s.seed);
    let corpus = load_filtered(&s, &mut run)?;
    let partitions = load_suite(&suite_dir, &corpus, &mut run)?;
    let partition = partitions
        .get(args.split)
        .ok_or_else(|| usage(format!("split {} out of range (suite has {})", args.split, partitions.len())))?;
    let inputs = Inputs::load(&s, &mut run)?;
    run.seal();
    let pipeline = Pipeline::<f64>::new(&corpus, cfg, &inputs.sources())?;
    let art = pipeline.fit_fold(&corpus, partition, args.split)?;
    let tag = run.tag();
    match &art.model {
        TrainedModel::Mlp { model, history, best_epoch, columns } => {
            let meta = serde_json::json!({
                "model_kind": kind.name(),
                "best_epoch": best_epoch,
                "columns": columns,
                "manifest_hash": run.hash(),
            });
            let bytes = csv_bytes(|b| write_checkpoint(model, meta, b))?;
            run.write("model.milnn", &bytes)?;
            let mut buf = format!("# {tag}\n").into_bytes();
            write_history_csv(history, &mut buf)?;
            run.write("history.csv", &buf)?;
            println!("best epoch {best_epoch}");
        }
        TrainedModel::Svm(svm) => run.write_json("svm.json", svm)?,
    }
    let bytes = csv_bytes(|b| write_predictions_csv(&art.outcomes, Some(&tag), b))?;
    run.write("predictions.csv", &bytes)?;
    run.finish()?;
    Ok(())
}

pub fn eval(args: &EvalArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(&args.common, file);
    let kind = s.model_kind()?;
    let suite_dir = args.suite.clone().or_else(|| file.suite.clone());
    let kfold = args.kfold.or(file.kfold);
    let protocol = match (&suite_dir, kfold) {
        (Some(_), Some(_)) => return Err(usage("--suite and --kfold are mutually exclusive")),
        (None, None) => return Err(usage("one of --suite or --kfold is required")),
        (Some(_), None) => "suite".to_string(),
        (None, Some(k)) => format!("kfold-{k}"),
    };
    if let Some(dir) = &suite_dir {
        require_suite(dir)?;
    }
    let cfg = pipeline_config(&s, file, kind, &args.threshold)?;
    #[derive(Serialize)]
    struct Extra<'a> {
        protocol: &'a str,
        pipeline: &'a PipelineConfig,
    }
    let extra = Extra { protocol: &protocol, pipeline: &cfg };
    let mut run = Run::new("eval", config_json(&s, extra)?, &s.out_dir)?;
    run.seed("pipeline", s.seed);
    let corpus = load_filtered(&s, &mut run)?;
    let partitions = match (&suite_dir, kfold) {
        (Some(dir), _) => load_suite(dir, &corpus, &mut run)?,
        (None, Some(k)) => kfold_partitions(corpus.len(), k, s.seed).map_err(|e| usage(e.to_string()))?,
        (None, None) => unreachable!(),
    };
    let inputs = Inputs::load(&s, &mut run)?;
    run.seal();
    let threshold = cfg.threshold;
    let pipeline = Pipeline::<f64>::new(&corpus, cfg, &inputs.sources())?;
    let eval_cfg = EvalConfig {
        window: Some(s.window),
        model_kind: kind.name().to_string(),
        seed: s.seed,
        protocol,
        threshold,
    };
    let mut report = cross_validate(&corpus, &partitions, &pipeline, eval_cfg)?;
    report.manifest_hash = Some(run.hash().to_string());
    let tag = run.tag();
    let mut json = csv_bytes(|b| report.write_json(b))?;
    if !json.ends_with(b"\n") {
        json.push(b'\n');
    }
    run.write("report.json", &json)?;
    let bytes = csv_bytes(|b| report.write_csv(Some(&tag), b))?;
    run.write("report.csv", &bytes)?;
    let bytes = csv_bytes(|b| write_curve_csv(&report.roc, Some(&tag), b))?;
    run.write("roc.csv", &bytes)?;
    let bytes = csv_bytes(|b| write_curve_csv(&report.pr, Some(&tag), b))?;
    run.write("pr.csv", &bytes)?;
    for (i, outcomes) in report.predictions.iter().enumerate() {
        let bytes = csv_bytes(|b| write_predictions_csv(outcomes, Some(&tag), b))?;
        run.write(&format!("predictions_{i:02}.csv"), &bytes)?;
    }
    print!("{}", report.summary());
    run.finish()?;
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs, file: &FileConfig) -> anyhow::Result<()> {
    let s = Settings::resolve(&args.common, file);
    let top = args.top.unwrap_or(TOP_K);
    let svm_cfg = SvmConfig { seed: s.seed, ..file.svm.clone().unwrap_or_default() };
    #[derive(Serialize)]
    struct Extra<'a> {
        top: usize,
        svm: &'a SvmConfig,
    }
    let mut run = Run::new("analyze", config_json(&s, Extra { top, svm: &svm_cfg })?, &s.out_dir)?;
    run.seed("svm", s.seed);
    let corpus = load_filtered(&s, &mut run)?;
    let inputs = Inputs::load(&s, &mut run)?;
    run.seal();
    let tag = run.tag();

    let mut rankings = vec![("all".to_string(), hashtag_ranking(&corpus, None, top))];
    for band in SeverityBand::ALL {
        rankings.push((band.name().to_string(), hashtag_ranking(&corpus, Some(band), top)));
    }
    let bytes = csv_bytes(|b| write_ranking_csv(&rankings, Some(&tag), b))?;
    run.write("hashtags.csv", &bytes)?;

    let labels: Vec<_> = corpus.iter().map(StudentBag::label).collect();
    let sources = inputs.sources();
    let sets: Vec<(&str, FeatureMatrix64)> = vec![
        ("text", user_features(&corpus, ModelKind::TextFeat, &sources)?),
        ("visual", user_features(&corpus, ModelKind::ImageFeat, &sources)?),
        ("concat", user_features(&corpus, ModelKind::FeatConcat, &sources)?),
        ("demographics", demographics_matrix(&corpus)?),
    ];
    for (name, features) in &sets {
        let svm = svm_train(features, &labels, &svm_cfg).with_context(|| format!("training {name} svm"))?;
        let top_coef = svm.top_coefficients(top);
        let bytes = csv_bytes(|b| top_coef.write_csv(Some(&tag), b))?;
        run.write(&format!("svm_{name}.csv"), &bytes)?;
    }
    println!("analysis of {} students written to {}", corpus.len(), s.out_dir.display());
    run.finish()?;
    Ok(())
}
