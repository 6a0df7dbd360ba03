//! R@1, R@5 and mIoU per query category, and the frequency-prior baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::ScoreMatrix;
use crate::training::Category;
use crate::video::{Segment, SegmentSet};

/// Intersection over union of two inclusive clip spans.
pub fn iou(a: Segment, b: Segment) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if lo <= hi { hi - lo + 1 } else { 0 };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Main segments ordered by `max_j S_ij`, best first; ties go to the lower
/// index.
pub fn rank_main_segments(s: &ScoreMatrix) -> Vec<usize> {
    let best: Vec<f32> = (0..s.size())
        .map(|i| s.row(i).iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    let mut order: Vec<usize> = (0..s.size()).collect();
    order.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
    order
}

/// One query's ranking and its ground truth, as indices into `segments`.
#[derive(Clone, Debug)]
pub struct Prediction<'a> {
    pub category: Category,
    pub ranking: Vec<usize>,
    pub truth: usize,
    pub segments: &'a SegmentSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub category: String,
    pub queries: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
    /// Unweighted mean of `rows`.
    pub average: MetricRow,
}

/// Percent metrics per category, in [`Category::ALL`] order, skipping
/// categories with no queries.
pub fn evaluate(predictions: &[Prediction<'_>]) -> Result<EvaluationReport> {
    if predictions.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut groups: BTreeMap<Category, Vec<&Prediction<'_>>> = BTreeMap::new();
    for p in predictions {
        if p.truth >= p.segments.len() || p.ranking.is_empty() {
            return Err(Error::Config(
                "prediction without a valid ranking or ground truth".into(),
            ));
        }
        groups.entry(p.category).or_default().push(p);
    }
    let rows: Vec<MetricRow> = groups
        .into_iter()
        .map(|(category, preds)| {
            let n = preds.len() as f64;
            let hits = |k: usize| {
                preds
                    .iter()
                    .filter(|p| p.ranking.iter().take(k).any(|&i| i == p.truth))
                    .count()
            };
            let miou: f64 = preds
                .iter()
                .map(|p| iou(p.segments.get(p.ranking[0]), p.segments.get(p.truth)))
                .sum();
            MetricRow {
                category: category.title().to_string(),
                queries: preds.len(),
                r_at_1: 100.0 * hits(1) as f64 / n,
                r_at_5: 100.0 * hits(5) as f64 / n,
                miou: 100.0 * miou / n,
            }
        })
        .collect();
    let k = rows.len() as f64;
    let average = MetricRow {
        category: "Average".into(),
        queries: rows.iter().map(|r| r.queries).sum(),
        r_at_1: rows.iter().map(|r| r.r_at_1).sum::<f64>() / k,
        r_at_5: rows.iter().map(|r| r.r_at_5).sum::<f64>() / k,
        miou: rows.iter().map(|r| r.miou).sum::<f64>() / k,
    };
    Ok(EvaluationReport { rows, average })
}

impl EvaluationReport {
    /// Aligned text table; with `per_category` off only the average row is
    /// printed.
    pub fn to_table(&self, per_category: bool) -> String {
        let mut rows: Vec<&MetricRow> = if per_category {
            self.rows.iter().collect()
        } else {
            Vec::new()
        };
        rows.push(&self.average);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>8} {:>8} {:>8}",
            "Category", "Queries", "R@1", "R@5", "mIoU"
        );
        for r in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>8.2} {:>8.2} {:>8.2}",
                r.category, r.queries, r.r_at_1, r.r_at_5, r.miou
            );
        }
        out
    }

    /// One row per method in the wide layout of the published results table:
    /// R@1 and mIoU for each category, then R@1, R@5 and mIoU averaged.
    /// Categories without queries print as `-`.
    pub fn to_wide_table(rows: &[(&str, &EvaluationReport)]) -> String {
        let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(6);
        let mut head = format!("{:<width$}", "Method");
        let mut sub = format!("{:<width$}", "");
        for c in Category::ALL {
            let _ = write!(head, " | {:<15}", c.title());
            let _ = write!(sub, " | {:>7} {:>7}", "R@1", "mIoU");
        }
        let _ = write!(head, " | {:<23}", "Average");
        let _ = write!(sub, " | {:>7} {:>7} {:>7}", "R@1", "R@5", "mIoU");
        let mut out = format!("{}\n{}\n", head.trim_end(), sub);
        for (method, report) in rows {
            let mut line = format!("{method:<width$}");
            for c in Category::ALL {
                match report.row(c) {
                    Some(r) => {
                        let _ = write!(line, " | {:>7.2} {:>7.2}", r.r_at_1, r.miou);
                    }
                    None => {
                        let _ = write!(line, " | {:>7} {:>7}", "-", "-");
                    }
                }
            }
            let a = &report.average;
            let _ = write!(line, " | {:>7.2} {:>7.2} {:>7.2}", a.r_at_1, a.r_at_5, a.miou);
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, category: Category) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.category == category.title())
    }
}

/// Segments ranked by how often they are the ground-truth main segment in
/// `truths`, most frequent first; ties go to the lower index.
pub fn frequency_prior(truths: &[usize], segment_count: usize) -> Result<Vec<usize>> {
    if truths.is_empty() {
        return Err(Error::Config("frequency prior needs training ground truths".into()));
    }
    let mut counts = vec![0usize; segment_count];
    for &t in truths {
        *counts
            .get_mut(t)
            .ok_or_else(|| Error::Config(format!("ground truth {t} outside {segment_count} segments")))? += 1;
    }
    let mut order: Vec<usize> = (0..segment_count).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::enumerate_segments;

    #[test]
    fn iou_cases() {
        let s = Segment::new;
        assert_eq!(iou(s(1, 3), s(1, 3)), 1.0);
        assert_eq!(iou(s(0, 1), s(3, 4)), 0.0);
        assert_eq!(iou(s(0, 2), s(1, 3)), 0.5);
        assert_eq!(iou(s(0, 0), s(0, 5)), 1.0 / 6.0);
    }

    #[test]
    fn ranking_ties_and_dominance() {
        assert_eq!(rank_main_segments(&ScoreMatrix::new(1, vec![0.3]).unwrap()), vec![0]);
        let mut data = vec![0.0f32; 25];
        data[3 * 5 + 4] = 2.0;
        data[5] = 1.0;
        assert_eq!(
            rank_main_segments(&ScoreMatrix::new(5, data).unwrap()),
            vec![3, 1, 0, 2, 4]
        );
    }

    #[test]
    fn perfect_predictions_score_100() {
        let segs = enumerate_segments(6).unwrap();
        let preds: Vec<Prediction> = Category::ALL
            .into_iter()
            .enumerate()
            .map(|(k, category)| Prediction {
                category,
                ranking: std::iter::once(k).chain((0..21).filter(|&i| i != k)).collect(),
                truth: k,
                segments: &segs,
            })
            .collect();
        let report = evaluate(&preds).unwrap();
        for r in report.rows.iter().chain([&report.average]) {
            assert_eq!((r.r_at_1, r.r_at_5, r.miou), (100.0, 100.0, 100.0));
        }
        assert_eq!(report.rows.len(), 5);
    }

    #[test]
    fn third_place_counts_for_r5_only() {
        let segs = enumerate_segments(6).unwrap();
        let ranking: Vec<usize> = (0..21).collect();
        let report = evaluate(&[Prediction {
            category: Category::Before,
            ranking,
            truth: 2,
            segments: &segs,
        }])
        .unwrap();
        assert_eq!((report.average.r_at_1, report.average.r_at_5), (0.0, 100.0));
        // Top-1 is (0,0), truth (0,2).
        assert!((report.average.miou - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_shape() {
        let segs = enumerate_segments(2).unwrap();
        let report = evaluate(&[Prediction {
            category: Category::While,
            ranking: vec![0, 1, 2],
            truth: 0,
            segments: &segs,
        }])
        .unwrap();
        let table = report.to_table(true);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Category"));
        assert!(lines[1].starts_with("While"));
        assert!(lines[2].starts_with("Average"));
        assert_eq!(report.to_table(false).lines().count(), 2);
    }

    #[test]
    fn wide_table_columns() {
        let segs = enumerate_segments(2).unwrap();
        let report = evaluate(&[Prediction {
            category: Category::Then,
            ranking: vec![1, 0, 2],
            truth: 1,
            segments: &segs,
        }])
        .unwrap();
        let table = EvaluationReport::to_wide_table(&[("ours", &report)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("DiDeMo") && lines[0].contains("Average"));
        // 5 categories x 2 + 3 average columns.
        assert_eq!(lines[1].split_whitespace().filter(|t| *t != "|").count(), 13);
        let cells: Vec<&str> = lines[2].split_whitespace().filter(|t| *t != "|").collect();
        assert_eq!(cells.len(), 14);
        assert_eq!(&cells[1..5], ["-", "-", "-", "-"]);
        assert_eq!(&cells[7..9], ["100.00", "100.00"]);
    }

    #[test]
    fn frequency_prior_cases() {
        assert_eq!(frequency_prior(&[0, 0, 0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(frequency_prior(&[2, 1, 0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(frequency_prior(&[2, 2, 1], 4).unwrap(), vec![2, 1, 0, 3]);
        assert!(frequency_prior(&[], 3).is_err());
    }
}
