use std::collections::BTreeMap;
use std::io::Write;

use crate::corpus::{SeverityBand, StudentBag};
use crate::error::{Error, Result};
use crate::featex::extract_hashtags;

/// Most frequent hashtags in the raw captions of students in `band` (all
/// students when `None`), by descending count then lexicographically.
pub fn hashtag_ranking(corpus: &[StudentBag], band: Option<SeverityBand>, k: usize) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for bag in corpus.iter().filter(|b| band.is_none_or(|band| b.band() == band)) {
        for post in &bag.posts {
            for tag in extract_hashtags(&post.caption) {
                *counts.entry(tag).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// `band,rank,hashtag,count`.
pub fn write_ranking_csv<W: Write>(
    rankings: &[(String, Vec<(String, usize)>)],
    comment: Option<&str>,
    mut out: W,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| Error::io("<hashtags>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["band", "rank", "hashtag", "count"])?;
    for (band, list) in rankings {
        for (i, (tag, n)) in list.iter().enumerate() {
            w.write_record([band.as_str(), &(i + 1).to_string(), tag, &n.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<hashtags>", e))
}
