//! Ranking metrics over graded relevance: mAP (binarized at a threshold) and
//! nDCG (linear gain), for both retrieval directions.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objective::RelevanceMatrix;
use crate::retrieval::{argsort_desc, ScoreMatrix};
use crate::scalar::Scalar;

/// Default binarization threshold for mAP: `R > 0` is relevant.
pub const DEFAULT_MAP_THRESHOLD: f64 = 0.0;

/// Average precision of one ranked list. Ranking is by descending score,
/// ties broken by ascending index.
pub fn average_precision<T: Scalar>(scores: &[T], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::dim("average_precision", scores.len(), relevant.len()));
    }
    let order = argsort_desc(scores);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &j) in order.iter().enumerate() {
        if relevant[j] {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAveragePrecision);
    }
    Ok(sum / hits as f64)
}

fn check_shapes<T: Scalar>(s: &ScoreMatrix<T>, r: &RelevanceMatrix<T>, context: &'static str) -> Result<()> {
    if s.shape() != r.shape() {
        return Err(Error::dim(context, format!("{:?}", r.shape()), format!("{:?}", s.shape())));
    }
    Ok(())
}

/// Sums per-row values in row order and divides by the number of rows that
/// produced one.
fn mean_defined(values: Vec<Option<f64>>, context: &'static str) -> Result<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::NoEvaluableRows(context));
    }
    Ok(sum / n as f64)
}

/// Mean AP over rows with at least one item whose relevance exceeds `threshold`.
pub fn mean_average_precision<T: Scalar>(s: &ScoreMatrix<T>, r: &RelevanceMatrix<T>, threshold: f64) -> Result<f64> {
    check_shapes(s, r, "mean_average_precision")?;
    let th = T::lit(threshold);
    let per_row: Vec<Option<f64>> = (0..s.rows())
        .into_par_iter()
        .map(|i| {
            let rel: Vec<bool> = r.data().row(i).iter().map(|&x| x > th).collect();
            if rel.iter().any(|&b| b) {
                Some(average_precision(s.row(i), &rel).expect("row has a relevant item"))
            } else {
                None
            }
        })
        .collect();
    mean_defined(per_row, "mean_average_precision")
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// nDCG of one row; `None` when the ideal DCG is zero.
pub fn ndcg_row<T: Scalar>(scores: &[T], relevance: &[T]) -> Result<Option<f64>> {
    if scores.len() != relevance.len() {
        return Err(Error::dim("ndcg_row", scores.len(), relevance.len()));
    }
    let gains: Vec<f64> = relevance.iter().map(|x| x.to_f64_lossy()).collect();
    let dcg: f64 = argsort_desc(scores)
        .iter()
        .enumerate()
        .map(|(r, &j)| gains[j] * discount(r))
        .sum();
    let mut ideal = gains;
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().enumerate().map(|(r, g)| g * discount(r)).sum();
    Ok((idcg > 0.0).then(|| dcg / idcg))
}

/// Mean nDCG over rows with positive ideal DCG.
pub fn ndcg<T: Scalar>(s: &ScoreMatrix<T>, r: &RelevanceMatrix<T>) -> Result<f64> {
    check_shapes(s, r, "ndcg")?;
    let per_row: Vec<Option<f64>> = (0..s.rows())
        .into_par_iter()
        .map(|i| ndcg_row(s.row(i), r.data().row(i)).expect("shapes checked"))
        .collect();
    mean_defined(per_row, "ndcg")
}

/// Both metrics in both directions, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub map_t2v: f64,
    pub map_v2t: f64,
    pub map_avg: f64,
    pub ndcg_t2v: f64,
    pub ndcg_v2t: f64,
    pub ndcg_avg: f64,
}

impl MetricsReport {
    pub fn from_directions(map_t2v: f64, map_v2t: f64, ndcg_t2v: f64, ndcg_v2t: f64) -> Self {
        Self {
            map_t2v,
            map_v2t,
            map_avg: (map_t2v + map_v2t) / 2.0,
            ndcg_t2v,
            ndcg_v2t,
            ndcg_avg: (ndcg_t2v + ndcg_v2t) / 2.0,
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("map_avg", self.map_avg),
            ("map_t2v", self.map_t2v),
            ("map_v2t", self.map_v2t),
            ("ndcg_avg", self.ndcg_avg),
            ("ndcg_t2v", self.ndcg_t2v),
            ("ndcg_v2t", self.ndcg_v2t),
        ]
    }

    /// Percentages, two decimals.
    pub fn to_text(&self) -> String {
        format!(
            "mAP   avg {:6.2}  t2v {:6.2}  v2t {:6.2}\nnDCG  avg {:6.2}  t2v {:6.2}  v2t {:6.2}\n",
            100.0 * self.map_avg,
            100.0 * self.map_t2v,
            100.0 * self.map_v2t,
            100.0 * self.ndcg_avg,
            100.0 * self.ndcg_t2v,
            100.0 * self.ndcg_v2t,
        )
    }

    /// One `prefix.key=value` line per field; values are fractions printed
    /// with enough digits to round-trip.
    pub fn to_records(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            if prefix.is_empty() {
                writeln!(out, "{k}={v:?}").unwrap();
            } else {
                writeln!(out, "{prefix}.{k}={v:?}").unwrap();
            }
        }
        out
    }
}

/// Evaluates a text-to-video score matrix (rows captions, columns clips); the
/// video-to-text direction uses its transpose.
pub fn evaluate<T: Scalar>(s_t2v: &ScoreMatrix<T>, r: &RelevanceMatrix<T>) -> Result<MetricsReport> {
    evaluate_directional(s_t2v, &s_t2v.transpose(), r)
}

/// Like [`evaluate`], with a separately produced video-to-text matrix
/// (rows clips, columns captions), as after per-direction reranking.
pub fn evaluate_directional<T: Scalar>(
    s_t2v: &ScoreMatrix<T>,
    s_v2t: &ScoreMatrix<T>,
    r: &RelevanceMatrix<T>,
) -> Result<MetricsReport> {
    let rt = r.transpose();
    Ok(MetricsReport::from_directions(
        mean_average_precision(s_t2v, r, DEFAULT_MAP_THRESHOLD)?,
        mean_average_precision(s_v2t, &rt, DEFAULT_MAP_THRESHOLD)?,
        ndcg(s_t2v, r)?,
        ndcg(s_v2t, &rt)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn rel(rows: &[&[f64]]) -> RelevanceMatrix<f64> {
        RelevanceMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.5, 0.7], &[true, true, false]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1, 0.2, 0.3], &[true; 3]).unwrap(), 1.0);
        let ap = average_precision(&[0.1, 0.9, 0.5, 0.4], &[true, false, false, false]).unwrap();
        assert_eq!(ap, 0.25);
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedAveragePrecision)
        ));
    }

    #[test]
    fn ap_ties_break_by_index() {
        // equal scores: index 0 ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn map_excludes_rows_without_relevant_items() {
        let s = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let r = rel(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(mean_average_precision(&s, &r, 0.0).unwrap(), 1.0);
        let none = rel(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(mean_average_precision(&s, &none, 0.0), Err(Error::NoEvaluableRows(_))));
        assert!(matches!(ndcg(&s, &none), Err(Error::NoEvaluableRows(_))));
    }

    #[test]
    fn threshold_binarizes() {
        let s = Matrix::from_rows(&[[0.9, 0.8, 0.1]]).unwrap();
        let r = rel(&[&[0.2, 0.0, 1.0]]);
        // relevant {0, 2} at threshold 0: ranks 1 and 3
        assert!((mean_average_precision(&s, &r, 0.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // relevant {2} at threshold 0.5: rank 3
        assert!((mean_average_precision(&s, &r, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scores_equal_to_relevance_are_perfect() {
        let r = rel(&[&[1.0, 0.5, 0.0], &[0.25, 1.0, 0.75]]);
        assert_eq!(mean_average_precision(r.data(), &r, 0.0).unwrap(), 1.0);
        assert_eq!(ndcg(r.data(), &r).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_worked_example() {
        let v = ndcg_row(&[0.9, 0.1], &[0.5, 1.0]).unwrap().unwrap();
        let dcg = 0.5 + 1.0 / 3f64.log2();
        let idcg = 1.0 + 0.5 / 3f64.log2();
        assert!((dcg - 1.1309).abs() < 1e-4 && (idcg - 1.3155).abs() < 1e-4);
        assert!((v - dcg / idcg).abs() < 1e-15);
        assert!((v - 0.8597).abs() < 1e-4);
    }

    #[test]
    fn reversal_lowers_ndcg() {
        let relv = [1.0, 0.6, 0.3, 0.0];
        let good = ndcg_row(&[4.0, 3.0, 2.0, 1.0], &relv).unwrap().unwrap();
        let bad = ndcg_row(&[1.0, 2.0, 3.0, 4.0], &relv).unwrap().unwrap();
        assert_eq!(good, 1.0);
        assert!(bad < good);
    }

    #[test]
    fn report_averages_and_perfect_case() {
        let r = rel(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let rep = evaluate(r.data(), &r).unwrap();
        for (_, v) in rep.fields() {
            assert_eq!(v, 1.0);
        }
        let rep = MetricsReport::from_directions(0.3, 0.6, 0.1, 0.2);
        assert_eq!(rep.map_avg, (0.3 + 0.6) / 2.0);
        assert_eq!(rep.ndcg_avg, (0.1 + 0.2) / 2.0);
    }

    #[test]
    fn report_formats() {
        let rep = MetricsReport::from_directions(0.5, 0.25, 1.0, 0.75);
        assert_eq!(
            rep.to_text(),
            "mAP   avg  37.50  t2v  50.00  v2t  25.00\nnDCG  avg  87.50  t2v 100.00  v2t  75.00\n"
        );
        let rec = rep.to_records("full");
        assert!(rec.starts_with("full.map_avg=0.375\nfull.map_t2v=0.5\n"));
        assert_eq!(rec.lines().count(), 6);
        for line in rep.to_records("").lines() {
            let (_, v) = line.split_once('=').unwrap();
            assert!(v.parse::<f64>().is_ok());
        }
    }

    #[test]
    fn shape_mismatch() {
        let s = Matrix::<f64>::zeros(2, 3);
        let r = rel(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(evaluate(&s, &r), Err(Error::Dimension { .. })));
    }
}
