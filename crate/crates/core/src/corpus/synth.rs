//! Deterministic synthetic corpora with a tunable class signal.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{save_corpus, BdiScore, Demographic, Post, SeverityBand, StudentBag};
use crate::embedstore::{caption_embedding, EmbeddingTable, Modality};
use crate::error::{Error, Result};
use crate::featex::normalize_caption;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub bags: usize,
    pub min_posts: usize,
    pub max_posts: usize,
    /// Requested share of positive (score >= 20) bags.
    pub positive_rate: f64,
    /// 0 = labels independent of every generated feature; 1 = strongest
    /// planted signal (class marker word in every caption, darker images).
    pub signal: f64,
    pub text_dim: usize,
    pub image_dim: usize,
    pub image_size: u32,
    pub empty_caption_rate: f64,
    pub missing_image_rate: f64,
    /// Posts are spread over this many days before the survey.
    pub history_days: u32,
    /// Share of posts dated after the survey (dropped by window filtering).
    pub late_post_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bags: 100,
            min_posts: 4,
            max_posts: 12,
            positive_rate: 0.5973,
            signal: 1.0,
            text_dim: 24,
            image_dim: 24,
            image_size: 8,
            empty_caption_rate: 0.05,
            missing_image_rate: 0.03,
            history_days: 365,
            late_post_rate: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.bags == 0 {
            return bad("synthetic corpus needs at least one bag");
        }
        if self.min_posts > self.max_posts {
            return bad("min_posts exceeds max_posts");
        }
        for (name, r) in [
            ("positive_rate", self.positive_rate),
            ("signal", self.signal),
            ("empty_caption_rate", self.empty_caption_rate),
            ("missing_image_rate", self.missing_image_rate),
            ("late_post_rate", self.late_post_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.text_dim == 0 || self.image_dim == 0 || self.image_size == 0 || self.history_days == 0
        {
            return bad("dimensions, image size and history must be positive");
        }
        Ok(())
    }

    /// Number of positive bags: the requested share rounded to the nearest
    /// whole bag.
    pub fn positive_bags(&self) -> usize {
        (self.bags as f64 * self.positive_rate).round() as usize
    }
}

/// A synthetic corpus plus everything needed to featurize it offline:
/// decoded images, face counts on the posts, and stand-in embeddings.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub bags: Vec<StudentBag>,
    pub images: BTreeMap<String, RgbImage>,
    /// Word vectors for every generated token (`modality = text`).
    pub word_vectors: EmbeddingTable,
    /// Per-post caption embeddings: mean of the caption's word vectors.
    pub text_embeddings: EmbeddingTable,
    /// Per-post image embeddings from a fixed random projection of pixels.
    pub image_embeddings: EmbeddingTable,
}

const FILLER: &[&str] = &[
    "hoje", "dia", "noite", "praia", "sol", "casa", "aula", "café", "cidade", "rua", "livro",
    "música", "foto", "tempo", "semana", "fim", "viagem", "mar", "céu", "janela", "prova",
    "trabalho", "ônibus", "chuva", "manhã", "tarde", "campus", "estudo", "cachorro", "gato",
    "comida", "filme", "série", "caminho", "vista", "lugar", "momento", "mundo", "vida", "arte",
];
const POSITIVE_MARKERS: &[&str] = &["tristeza", "sozinho", "cansado", "choro", "vazio"];
const NEGATIVE_MARKERS: &[&str] = &["alegria", "amigos", "feliz", "festa", "família"];
const HASHTAGS: [&[&str]; 4] = [
    &["tbt", "sextou", "amigos", "praia", "verao"],
    &["niteroi", "riodejaneiro", "rj", "uff", "nikiti"],
    &["sad", "insonia", "cansada", "chuva", "solidao"],
    &["deprê", "vazio", "noite", "ansiedade", "tbt"],
];
const MENTIONS: &[&str] = &["@maria", "@joao_s", "@uff_oficial"];
const URLS: &[&str] = &["https://uff.br/evento", "www.exemplo.com.br/x"];

/// Relative paths written by [`SynthCorpus::save`].
pub const SYNTH_CORPUS_FILE: &str = "corpus.jsonl";
pub const SYNTH_FACES_FILE: &str = "faces.csv";
pub const SYNTH_TEXT_EMBEDDINGS: &str = "embeddings/text.milemb";
pub const SYNTH_IMAGE_EMBEDDINGS: &str = "embeddings/image.milemb";

impl SynthCorpus {
    /// Writes the corpus, its PNG images (at their `image_ref` paths), a
    /// face-count sidecar and both embedding tables under `dir`. Returns the
    /// written paths relative to `dir`, sorted.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        std::fs::create_dir_all(dir.join("embeddings")).map_err(|e| Error::io(dir, e))?;
        save_corpus(&dir.join(SYNTH_CORPUS_FILE), &self.bags)?;
        written.push(SYNTH_CORPUS_FILE.to_string());
        for (rel, img) in &self.images {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save(&path).map_err(|e| Error::Image {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            written.push(rel.clone());
        }
        let faces = self
            .bags
            .iter()
            .flat_map(|b| b.posts.iter())
            .filter(|p| p.image_ref.is_some())
            .map(|p| (p.post_id.as_str(), p.face_count.unwrap_or(0)));
        let path = dir.join(SYNTH_FACES_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        crate::featex::write_face_sidecar(faces, std::io::BufWriter::new(file))?;
        written.push(SYNTH_FACES_FILE.to_string());
        self.text_embeddings.save(&dir.join(SYNTH_TEXT_EMBEDDINGS))?;
        self.image_embeddings.save(&dir.join(SYNTH_IMAGE_EMBEDDINGS))?;
        written.push(SYNTH_TEXT_EMBEDDINGS.to_string());
        written.push(SYNTH_IMAGE_EMBEDDINGS.to_string());
        written.sort();
        Ok(written)
    }
}

fn sample_score(band: SeverityBand, rng: &mut ChaCha8Rng) -> BdiScore {
    let (lo, hi) = band.range();
    BdiScore::new(rng.random_range(lo..=hi) as i64).expect("band ranges are valid scores")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn caption(positive: bool, band: SeverityBand, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    if rng.random::<f64>() < cfg.empty_caption_rate {
        return String::new();
    }
    let mut words: Vec<String> = (0..rng.random_range(3..=8))
        .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
        .collect();
    if rng.random::<f64>() < cfg.signal {
        let markers = if positive { POSITIVE_MARKERS } else { NEGATIVE_MARKERS };
        let at = rng.random_range(0..=words.len());
        words.insert(at, markers[rng.random_range(0..markers.len())].to_string());
    }
    if rng.random::<f64>() < 0.1 {
        words.push(format!("{}x", rng.random_range(1..30)));
    }
    if rng.random::<f64>() < 0.05 {
        words.push(URLS[rng.random_range(0..URLS.len())].to_string());
    }
    if rng.random::<f64>() < 0.05 {
        words.insert(0, MENTIONS[rng.random_range(0..MENTIONS.len())].to_string());
    }
    if rng.random::<f64>() < 0.35 {
        let tags = HASHTAGS[band.index()];
        words.push(format!("#{}", tags[rng.random_range(0..tags.len())]));
    }
    let mut text = words.join(" ");
    if rng.random::<f64>() < 0.3 {
        text.push('!');
    }
    text
}

fn picture(positive: bool, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    let h0: f64 = rng.random();
    let s0: f64 = rng.random_range(0.2..0.8);
    let mut v0: f64 = rng.random_range(0.55..0.95);
    if positive {
        v0 -= 0.35 * cfg.signal;
    }
    let mut img = RgbImage::new(cfg.image_size, cfg.image_size);
    for p in img.pixels_mut() {
        let h = h0 + rng.random_range(-0.03..0.03);
        let s = (s0 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        let v = (v0 * (1.0 + rng.random_range(-0.1..0.1))).clamp(0.0, 1.0);
        *p = Rgb(hsv_to_rgb(h, s, v));
    }
    img
}

fn faces(rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    [0.4, 0.7, 0.85, 0.95]
        .iter()
        .position(|&c| u < c)
        .unwrap_or(4) as u32
}

/// Generates `config.bags` students. The output is a pure function of
/// `(config, seed)`.
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = config.positive_bags();
    let mut classes: Vec<bool> = (0..config.bags).map(|i| i < n_pos).collect();
    classes.shuffle(&mut rng);

    let first_survey = NaiveDate::from_ymd_opt(2018, 10, 12).expect("valid date");
    let mut bags = Vec::with_capacity(config.bags);
    let mut images = BTreeMap::new();
    for (i, &positive) in classes.iter().enumerate() {
        let band = if positive {
            if rng.random_range(0..132) < 82 {
                SeverityBand::Severe
            } else {
                SeverityBand::Moderate
            }
        } else if rng.random_range(0..89) < 57 {
            SeverityBand::Minimal
        } else {
            SeverityBand::Mild
        };
        let student_id = format!("s{i:04}");
        let survey_date = first_survey + Duration::days(rng.random_range(0..=51));
        let mut demographics = BTreeMap::new();
        demographics.insert("sex".to_string(), Demographic::Flag(rng.random()));
        demographics.insert("scholarship".to_string(), Demographic::Flag(rng.random::<f64>() < 0.3));
        demographics.insert(
            "household_income".to_string(),
            Demographic::Number(rng.random_range(1..=10) as f64),
        );
        demographics.insert(
            "facebook_hours".to_string(),
            Demographic::Number(rng.random_range(0..=16) as f64 / 2.0),
        );

        let n_posts = rng.random_range(config.min_posts..=config.max_posts);
        let mut posts = Vec::with_capacity(n_posts);
        for _ in 0..n_posts {
            let day = if rng.random::<f64>() < config.late_post_rate {
                survey_date + Duration::days(rng.random_range(1..=30))
            } else {
                survey_date - Duration::days(rng.random_range(0..config.history_days) as i64)
            };
            let timestamp = day
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists")
                + Duration::seconds(rng.random_range(0..86_400));
            let text = caption(positive, band, config, &mut rng);
            let has_image = rng.random::<f64>() >= config.missing_image_rate;
            let pic = has_image.then(|| picture(positive, config, &mut rng));
            let face_count = has_image.then(|| faces(&mut rng));
            posts.push((timestamp, text, pic, face_count));
        }
        posts.sort_by_key(|p| p.0);
        let posts = posts
            .into_iter()
            .enumerate()
            .map(|(k, (timestamp, caption, pic, face_count))| {
                let post_id = format!("{student_id}_p{k:03}");
                let image_ref = pic.map(|img| {
                    let r = format!("images/{post_id}.png");
                    images.insert(r.clone(), img);
                    r
                });
                Post {
                    post_id,
                    timestamp,
                    caption,
                    image_ref,
                    face_count,
                }
            })
            .collect();
        bags.push(StudentBag {
            student_id,
            bdi: sample_score(band, &mut rng),
            survey_date,
            demographics,
            posts,
        });
    }

    let word_vectors = word_table(&bags, config.text_dim, &mut rng)?;
    let mut text_embeddings = EmbeddingTable::new(Modality::Text, "synth-mean-words", config.text_dim)?;
    for bag in &bags {
        for post in bag.posts.iter().filter(|p| !p.caption.trim().is_empty()) {
            let v = caption_embedding(&normalize_caption(&post.caption), &word_vectors);
            text_embeddings.insert(post.post_id.clone(), &v)?;
        }
    }
    let image_embeddings = project_images(&bags, &images, config, &mut rng)?;

    Ok(SynthCorpus {
        bags,
        images,
        word_vectors,
        text_embeddings,
        image_embeddings,
    })
}

fn word_table(bags: &[StudentBag], dim: usize, rng: &mut ChaCha8Rng) -> Result<EmbeddingTable> {
    let vocab: BTreeSet<String> = bags
        .iter()
        .flat_map(|b| b.posts.iter())
        .flat_map(|p| normalize_caption(&p.caption))
        .collect();
    let mut table = EmbeddingTable::new(Modality::Text, "synth-words", dim)?;
    for word in vocab {
        let v: Vec<f32> = (0..dim)
            .map(|_| StandardNormal.sample(rng))
            .map(|x: f64| x as f32)
            .collect();
        table.insert(word, &v)?;
    }
    Ok(table)
}

fn project_images(
    bags: &[StudentBag],
    images: &BTreeMap<String, RgbImage>,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingTable> {
    let inputs = (config.image_size * config.image_size * 3) as usize;
    let scale = 1.0 / (inputs as f64).sqrt();
    let weights: Vec<f64> = (0..config.image_dim * inputs)
        .map(|_| StandardNormal.sample(rng))
        .map(|x: f64| x * scale)
        .collect();
    let mut table = EmbeddingTable::new(Modality::Image, "synth-projection", config.image_dim)?;
    for post in bags.iter().flat_map(|b| b.posts.iter()) {
        let Some(r) = &post.image_ref else { continue };
        let x: Vec<f64> = images[r]
            .as_raw()
            .iter()
            .map(|&b| b as f64 / 255.0 - 0.5)
            .collect();
        let v: Vec<f32> = weights
            .chunks_exact(inputs)
            .map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect();
        table.insert(post.post_id.clone(), &v)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small(signal: f64) -> SynthConfig {
        SynthConfig {
            bags: 40,
            signal,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_corpus(&small(1.0), 7).unwrap();
        let b = synth_corpus(&small(1.0), 7).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_corpus(&mut x, &a.bags).unwrap();
        write_corpus(&mut y, &b.bags).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.images, b.images);
        assert_eq!(a.text_embeddings, b.text_embeddings);
        assert_eq!(a.image_embeddings, b.image_embeddings);
        let c = synth_corpus(&small(1.0), 8).unwrap();
        assert_ne!(a.bags, c.bags);
    }

    #[test]
    fn class_proportion_rounds_to_nearest() {
        let cfg = SynthConfig {
            bags: 100,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.positive_bags(), 60);
        let c = synth_corpus(&cfg, 1).unwrap();
        assert_eq!(c.bags.iter().filter(|b| b.label().is_positive()).count(), 60);
    }

    #[test]
    fn degenerate_configs_rejected() {
        for cfg in [
            SynthConfig { bags: 0, ..SynthConfig::default() },
            SynthConfig { min_posts: 5, max_posts: 2, ..SynthConfig::default() },
            SynthConfig { signal: 1.5, ..SynthConfig::default() },
        ] {
            assert!(synth_corpus(&cfg, 0).is_err());
        }
    }

    #[test]
    fn every_post_has_matching_side_data() {
        let c = synth_corpus(&small(0.5), 3).unwrap();
        for p in c.bags.iter().flat_map(|b| &b.posts) {
            assert_eq!(p.image_ref.is_some(), p.face_count.is_some());
            if let Some(r) = &p.image_ref {
                assert!(c.images.contains_key(r));
                assert!(c.image_embeddings.get(&p.post_id).is_some());
            }
            assert_eq!(!p.caption.is_empty(), c.text_embeddings.get(&p.post_id).is_some());
        }
    }

    /// Chi-square test of independence between label and token on a
    /// zero-signal corpus: the statistic must not be significant.
    #[test]
    fn zero_signal_tokens_independent_of_label() {
        let cfg = SynthConfig {
            bags: 300,
            signal: 0.0,
            ..SynthConfig::default()
        };
        let c = synth_corpus(&cfg, 11).unwrap();
        let mut table: BTreeMap<String, [f64; 2]> = BTreeMap::new();
        for b in &c.bags {
            let k = b.label().index();
            for p in &b.posts {
                for t in normalize_caption(&p.caption) {
                    table.entry(t).or_default()[k] += 1.0;
                }
            }
        }
        assert!(table.keys().all(|t| !POSITIVE_MARKERS.contains(&t.as_str())));
        let col: [f64; 2] = table
            .values()
            .fold([0.0, 0.0], |acc, r| [acc[0] + r[0], acc[1] + r[1]]);
        let total = col[0] + col[1];
        let mut chi2 = 0.0;
        let mut rows = 0;
        for r in table.values().filter(|r| r[0] + r[1] >= 20.0) {
            rows += 1;
            let rt = r[0] + r[1];
            for k in 0..2 {
                let e = rt * col[k] / total;
                chi2 += (r[k] - e) * (r[k] - e) / e;
            }
        }
        let p = 1.0 - ChiSquared::new((rows - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2} over {rows} tokens, p = {p}");
    }
}
