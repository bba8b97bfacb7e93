//! Bags, posts, BDI labeling, observation windows and corpus statistics.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::mean_and_sample_std;

pub use synth::{
    synth_corpus, SynthConfig, SynthCorpus, SYNTH_CORPUS_FILE, SYNTH_FACES_FILE, SYNTH_IMAGE_EMBEDDINGS,
    SYNTH_TEXT_EMBEDDINGS,
};

/// Schema version written to every corpus line.
pub const CORPUS_SCHEMA_VERSION: u32 = 1;

/// Total score of the 21-item Beck Depression Inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct BdiScore(u8);

impl BdiScore {
    pub const MAX: u8 = 63;

    pub fn new(value: i64) -> Result<Self> {
        if (0..=Self::MAX as i64).contains(&value) {
            Ok(BdiScore(value as u8))
        } else {
            Err(Error::InvalidScore(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn band(self) -> SeverityBand {
        band_of(self)
    }

    pub fn label(self) -> BinaryLabel {
        binary_label(self)
    }
}

impl TryFrom<i64> for BdiScore {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        BdiScore::new(value)
    }
}

impl From<BdiScore> for u8 {
    fn from(score: BdiScore) -> u8 {
        score.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityBand {
    Minimal,
    Mild,
    Moderate,
    Severe,
}

impl SeverityBand {
    pub const ALL: [SeverityBand; 4] = [
        SeverityBand::Minimal,
        SeverityBand::Mild,
        SeverityBand::Moderate,
        SeverityBand::Severe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeverityBand::Minimal => "minimal",
            SeverityBand::Mild => "mild",
            SeverityBand::Moderate => "moderate",
            SeverityBand::Severe => "severe",
        }
    }

    /// Inclusive score range of the band.
    pub fn range(self) -> (u8, u8) {
        match self {
            SeverityBand::Minimal => (0, 13),
            SeverityBand::Mild => (14, 19),
            SeverityBand::Moderate => (20, 28),
            SeverityBand::Severe => (29, 63),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SeverityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SeverityBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeverityBand::ALL
            .into_iter()
            .find(|b| b.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown severity band `{s}`")))
    }
}

/// Low-intensity (minimal, mild) versus high-intensity (moderate, severe).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Negative,
    Positive,
}

impl BinaryLabel {
    /// Class index used by the classifiers: 0 negative, 1 positive.
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::Negative => 0,
            BinaryLabel::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }
}

/// Scores at or above this value are labeled positive.
pub const POSITIVE_THRESHOLD: u8 = 20;

pub fn band_of(score: BdiScore) -> SeverityBand {
    match score.value() {
        0..=13 => SeverityBand::Minimal,
        14..=19 => SeverityBand::Mild,
        20..=28 => SeverityBand::Moderate,
        _ => SeverityBand::Severe,
    }
}

pub fn binary_label(score: BdiScore) -> BinaryLabel {
    if score.value() >= POSITIVE_THRESHOLD {
        BinaryLabel::Positive
    } else {
        BinaryLabel::Negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub timestamp: NaiveDateTime,
    #[serde(default)]
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_count: Option<u32>,
}

/// A demographic answer: numeric or yes/no.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Demographic {
    Flag(bool),
    Number(f64),
}

/// One student: the bag of posts plus the bag-level label source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentBag {
    pub student_id: String,
    pub bdi: BdiScore,
    pub survey_date: NaiveDate,
    #[serde(default)]
    pub demographics: BTreeMap<String, Demographic>,
    #[serde(default)]
    pub posts: Vec<Post>,
}

impl StudentBag {
    pub fn label(&self) -> BinaryLabel {
        binary_label(self.bdi)
    }

    pub fn band(&self) -> SeverityBand {
        band_of(self.bdi)
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

/// Number of days before the survey date from which posts are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u32")]
pub struct ObservationWindow(u32);

impl ObservationWindow {
    pub const CANONICAL: [u32; 3] = [60, 212, 365];

    pub fn new(days: i64) -> Result<Self> {
        if days > 0 && days <= u32::MAX as i64 {
            Ok(ObservationWindow(days as u32))
        } else {
            Err(Error::InvalidWindow(days))
        }
    }

    pub fn days(self) -> u32 {
        self.0
    }

    pub fn is_canonical(self) -> bool {
        Self::CANONICAL.contains(&self.0)
    }

    /// Earliest date kept for a survey taken on `survey_date`.
    pub fn first_day(self, survey_date: NaiveDate) -> NaiveDate {
        survey_date - Duration::days(self.0 as i64)
    }

    pub fn contains(self, survey_date: NaiveDate, date: NaiveDate) -> bool {
        date >= self.first_day(survey_date) && date <= survey_date
    }
}

impl TryFrom<i64> for ObservationWindow {
    type Error = Error;

    fn try_from(days: i64) -> Result<Self> {
        ObservationWindow::new(days)
    }
}

impl From<ObservationWindow> for u32 {
    fn from(w: ObservationWindow) -> u32 {
        w.0
    }
}

/// Keeps the posts dated from `survey_date - days` through `survey_date`,
/// both ends inclusive, in their original order.
pub fn filter_window(bag: &StudentBag, window: ObservationWindow) -> StudentBag {
    let posts = bag
        .posts
        .iter()
        .filter(|p| window.contains(bag.survey_date, p.timestamp.date()))
        .cloned()
        .collect();
    StudentBag {
        posts,
        ..bag.clone()
    }
}

pub fn filter_corpus(corpus: &[StudentBag], window: ObservationWindow) -> Vec<StudentBag> {
    corpus.iter().map(|b| filter_window(b, window)).collect()
}

/// Pairs every post with the label of its bag.
pub fn propagate_labels(bag: &StudentBag) -> Vec<(&Post, BinaryLabel)> {
    let label = bag.label();
    bag.posts.iter().map(|p| (p, label)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: SeverityBand,
    pub students: usize,
    pub posts: usize,
    /// Share of all posts in the corpus, in percent.
    pub post_pct: f64,
    pub mean_posts: f64,
    pub std_posts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub window_days: u32,
    pub students: usize,
    pub posts: usize,
    pub bands: Vec<BandStats>,
    pub negative_students: usize,
    pub positive_students: usize,
    /// Percent of students in the positive class.
    pub positive_student_pct: f64,
    pub negative_post_pct: f64,
    pub positive_post_pct: f64,
    pub mean_posts: f64,
    pub std_posts: f64,
}

/// Per-band and overall post statistics after window filtering. When the
/// filtered corpus holds no posts, all percentages are reported as 0.
pub fn corpus_stats(corpus: &[StudentBag], window: ObservationWindow) -> Result<StatsReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let filtered = filter_corpus(corpus, window);
    let counts: Vec<f64> = filtered.iter().map(|b| b.len() as f64).collect();
    let total: usize = filtered.iter().map(StudentBag::len).sum();
    let pct = |n: usize| {
        if total == 0 {
            0.0
        } else {
            100.0 * n as f64 / total as f64
        }
    };
    let bands = SeverityBand::ALL
        .iter()
        .map(|&band| {
            let per: Vec<f64> = filtered
                .iter()
                .filter(|b| b.band() == band)
                .map(|b| b.len() as f64)
                .collect();
            let posts = per.iter().sum::<f64>() as usize;
            let (mean_posts, std_posts) = mean_and_sample_std(&per);
            BandStats {
                band,
                students: per.len(),
                posts,
                post_pct: pct(posts),
                mean_posts,
                std_posts,
            }
        })
        .collect::<Vec<_>>();
    let positive_students = filtered.iter().filter(|b| b.label().is_positive()).count();
    let positive_posts: usize = filtered
        .iter()
        .filter(|b| b.label().is_positive())
        .map(StudentBag::len)
        .sum();
    let (mean_posts, std_posts) = mean_and_sample_std(&counts);
    Ok(StatsReport {
        window_days: window.days(),
        students: filtered.len(),
        posts: total,
        bands,
        negative_students: filtered.len() - positive_students,
        positive_students,
        positive_student_pct: 100.0 * positive_students as f64 / filtered.len() as f64,
        negative_post_pct: pct(total - positive_posts),
        positive_post_pct: pct(positive_posts),
        mean_posts,
        std_posts,
    })
}

#[derive(Serialize)]
struct LineOut<'a> {
    v: u32,
    #[serde(flatten)]
    bag: &'a StudentBag,
}

#[derive(Deserialize)]
struct LineIn {
    v: u32,
    #[serde(flatten)]
    bag: StudentBag,
}

/// Checks that student ids are unique and post ids are unique within a bag.
pub fn validate_corpus(corpus: &[StudentBag]) -> Result<()> {
    let mut students = HashSet::new();
    for bag in corpus {
        if !students.insert(bag.student_id.as_str()) {
            return Err(Error::DuplicateId(bag.student_id.clone()));
        }
        let mut posts = HashSet::new();
        for p in &bag.posts {
            if !posts.insert(p.post_id.as_str()) {
                return Err(Error::DuplicateId(p.post_id.clone()));
            }
        }
    }
    Ok(())
}

pub fn write_corpus<W: Write>(mut out: W, corpus: &[StudentBag]) -> Result<()> {
    for bag in corpus {
        let line = serde_json::to_string(&LineOut {
            v: CORPUS_SCHEMA_VERSION,
            bag,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<StudentBag>> {
    let mut corpus = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineIn = serde_json::from_str(&line).map_err(|e| Error::CorpusFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.v != CORPUS_SCHEMA_VERSION {
            return Err(Error::CorpusFormat {
                line: i + 1,
                message: format!("unsupported schema version {}", rec.v),
            });
        }
        corpus.push(rec.bag);
    }
    validate_corpus(&corpus)?;
    Ok(corpus)
}

pub fn save_corpus(path: &Path, corpus: &[StudentBag]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_corpus(&mut out, corpus)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Vec<StudentBag>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}
