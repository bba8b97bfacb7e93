use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use super::text::normalize_caption;
use crate::corpus::StudentBag;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// A literal word, or a prefix written with a trailing `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    pub fn parse(raw: &str) -> Option<Pattern> {
        let raw = raw.to_lowercase();
        match raw.strip_suffix('*') {
            Some("") => None,
            Some(p) => Some(Pattern::Prefix(p.to_string())),
            None if raw.is_empty() => None,
            None => Some(Pattern::Exact(raw)),
        }
    }

    pub fn matches(&self, token: &str) -> bool {
        match self {
            Pattern::Exact(w) => token == w,
            Pattern::Prefix(p) => token.starts_with(p.as_str()),
        }
    }
}

/// Word-category dictionary in the LIWC `.dic` layout:
///
/// ```text
/// %
/// 1 posemo
/// 2 negemo
/// %
/// amor* 1
/// triste 2
/// ```
///
/// The block between the two `%` lines declares `<id> <category>` pairs in
/// column order; every later line is `<pattern> <id> [<id> ...]`. Fields are
/// separated by tabs or spaces, blank lines are ignored, patterns are
/// lowercased, and a trailing `*` marks a prefix pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    categories: Vec<String>,
    patterns: Vec<Vec<Pattern>>,
}

/// Category counts for one token list: raw and divided by the token count.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconCounts {
    pub raw: Vec<u32>,
    pub normalized: Vec<f64>,
}

impl Lexicon {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut categories = Vec::new();
        let mut patterns = Vec::new();
        for (i, (name, pats)) in entries.into_iter().enumerate() {
            if categories.contains(&name) {
                return Err(Error::LexiconFormat {
                    line: i + 1,
                    message: format!("duplicate category `{name}`"),
                });
            }
            let parsed = pats
                .iter()
                .map(|p| {
                    Pattern::parse(p).ok_or_else(|| Error::LexiconFormat {
                        line: i + 1,
                        message: format!("empty pattern in `{name}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            categories.push(name);
            patterns.push(parsed);
        }
        Ok(Lexicon {
            categories,
            patterns,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::LexiconFormat { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "%")) => {}
            Some((n, _)) => return Err(err(n, "expected `%` header delimiter".into())),
            None => return Err(err(1, "empty lexicon".into())),
        }
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut categories: Vec<String> = Vec::new();
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            if line == "%" {
                closed = true;
                break;
            }
            let mut f = line.split_whitespace();
            let (Some(id), Some(name), None) = (f.next(), f.next(), f.next()) else {
                return Err(err(n, format!("expected `<id> <category>`, got `{line}`")));
            };
            if categories.iter().any(|c| c == name) {
                return Err(err(n, format!("duplicate category `{name}`")));
            }
            if ids.insert(id.to_string(), categories.len()).is_some() {
                return Err(err(n, format!("duplicate category id `{id}`")));
            }
            categories.push(name.to_string());
        }
        if !closed {
            return Err(err(text.lines().count(), "unterminated category header".into()));
        }
        let mut patterns = vec![Vec::new(); categories.len()];
        for (n, line) in lines {
            let mut f = line.split_whitespace();
            let raw = f.next().unwrap_or_default();
            let pattern =
                Pattern::parse(raw).ok_or_else(|| err(n, format!("empty pattern `{raw}`")))?;
            let mut any = false;
            for id in f {
                let &c = ids
                    .get(id)
                    .ok_or_else(|| err(n, format!("unknown category id `{id}`")))?;
                if !patterns[c].contains(&pattern) {
                    patterns[c].push(pattern.clone());
                }
                any = true;
            }
            if !any {
                return Err(err(n, format!("pattern `{raw}` has no category")));
            }
        }
        Ok(Lexicon {
            categories,
            patterns,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Small illustrative Portuguese lexicon bundled with the crate.
    pub fn demo() -> Self {
        Self::parse(include_str!("../../assets/demo.dic")).expect("bundled lexicon parses")
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn patterns(&self, category: usize) -> &[Pattern] {
        &self.patterns[category]
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// A token counts once per category if it matches any of that category's
    /// patterns; categories are counted independently.
    pub fn counts<S: AsRef<str>>(&self, tokens: &[S]) -> LexiconCounts {
        let raw: Vec<u32> = self
            .patterns
            .iter()
            .map(|pats| {
                tokens
                    .iter()
                    .filter(|t| pats.iter().any(|p| p.matches(t.as_ref())))
                    .count() as u32
            })
            .collect();
        let n = tokens.len();
        let normalized = raw
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        LexiconCounts { raw, normalized }
    }
}

/// Per-post category counts for every post of the corpus, in corpus order.
/// `normalized` selects counts divided by the caption's token count.
pub fn lexicon_matrix<T: Scalar>(
    corpus: &[StudentBag],
    lexicon: &Lexicon,
    normalized: bool,
) -> Result<FeatureMatrix<T>> {
    let n: usize = corpus.iter().map(StudentBag::len).sum();
    let mut data = Array2::zeros((n, lexicon.len()));
    let mut ids = Vec::with_capacity(n);
    let mut r = 0;
    for bag in corpus {
        for post in &bag.posts {
            let c = lexicon.counts(&normalize_caption(&post.caption));
            for j in 0..lexicon.len() {
                data[[r, j]] = if normalized {
                    T::of(c.normalized[j])
                } else {
                    T::of(c.raw[j] as f64)
                };
            }
            ids.push(format!("{}/{}", bag.student_id, post.post_id));
            r += 1;
        }
    }
    let cols = lexicon.categories.iter().map(|c| format!("lex:{c}")).collect();
    FeatureMatrix::new(ids, cols, data)
}
