use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};

/// A curve vertex: `x` is the false-positive rate (ROC) or recall (PR),
/// `y` the true-positive rate (ROC) or precision (PR). Scores at or above
/// `threshold` count as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Cumulative (threshold, tp, fp) at every distinct score, highest first.
fn sweep(scores: &[f64], labels: &[BinaryLabel]) -> Result<Vec<(f64, usize, usize)>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Shape(format!("non-finite score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    Ok(out)
}

/// ROC points from (0, 0) to (1, 1) and the trapezoid-rule area. The area
/// is accumulated in integers so it equals the pair-counting estimator
/// exactly.
pub fn roc_curve(scores: &[f64], labels: &[BinaryLabel]) -> Result<RocCurve> {
    let steps = sweep(scores, labels)?;
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateClasses);
    }
    let top = steps[0].0.next_up();
    let mut points = vec![CurvePoint { threshold: top, x: 0.0, y: 0.0 }];
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for &(t, tp, fp) in &steps {
        twice_area += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        points.push(CurvePoint {
            threshold: t,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
        prev_tp = tp;
        prev_fp = fp;
    }
    let auc = twice_area as f64 / (2 * pos * neg) as f64;
    Ok(RocCurve { points, auc })
}

/// P(score+ > score-) + P(score+ = score-) / 2 over all pairs.
pub fn roc_auc_by_pairs(scores: &[f64], labels: &[BinaryLabel]) -> Result<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| l.is_positive()).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| !l.is_positive()).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateClasses);
    }
    let mut twice: u128 = 0;
    for p in &pos {
        for n in &neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    Ok(twice as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// (recall, precision) at every distinct score, highest threshold first.
/// Recall is 0 when there are no positives.
pub fn pr_curve(scores: &[f64], labels: &[BinaryLabel]) -> Result<Vec<CurvePoint>> {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    Ok(sweep(scores, labels)?
        .into_iter()
        .map(|(t, tp, fp)| CurvePoint {
            threshold: t,
            x: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
            y: tp as f64 / (tp + fp) as f64,
        })
        .collect())
}

/// `threshold,x,y`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], comment: Option<&str>, mut out: W) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| Error::io("<curve>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<curve>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::{Negative as N, Positive as P};

    #[test]
    fn perfect_separation() {
        let roc = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[P, P, N, N]).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first().map(|p| (p.x, p.y)), Some((0.0, 0.0)));
        assert_eq!(roc.points.last().map(|p| (p.x, p.y)), Some((1.0, 1.0)));
    }

    #[test]
    fn ties_count_half() {
        let s = [0.5, 0.5, 0.5, 0.1];
        let l = [P, N, P, N];
        let roc = roc_curve(&s, &l).unwrap();
        assert_eq!(roc.auc, roc_auc_by_pairs(&s, &l).unwrap());
        assert_eq!(roc.auc, 0.75);
    }

    #[test]
    fn degenerate_mix() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[P, P]), Err(Error::DegenerateClasses)));
        let pr = pr_curve(&[0.1, 0.2], &[N, N]).unwrap();
        assert!(pr.iter().all(|p| p.x == 0.0 && p.y == 0.0));
    }

    #[test]
    fn pr_points() {
        let pr = pr_curve(&[0.9, 0.7, 0.4], &[P, N, P]).unwrap();
        let xy: Vec<(f64, f64)> = pr.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
    }

    #[test]
    fn curve_csv() {
        let mut buf = Vec::new();
        write_curve_csv(&[CurvePoint { threshold: 0.5, x: 0.25, y: 1.0 }], None, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "threshold,x,y\n0.5,0.25,1.0\n");
    }
}
