//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Pair loss written from the case analysis, with `max(0, x)` as `(x + |x|) / 2`.
pub fn sms_pair_oracle(w: f64, delta: f64, m: f64, tau: f64, eps: f64) -> f64 {
    let hinge = |x: f64| (x + x.abs()) / 2.0;
    let gap = w * m - delta;
    if w > eps {
        hinge(gap)
    } else if w >= -eps {
        hinge(gap.abs() - tau)
    } else {
        hinge(-gap)
    }
}

/// Full loss by explicit double sums over both directions.
pub fn sms_loss_oracle(s: &[Vec<f64>], r: &[Vec<f64>], m: f64, tau: f64, eps: f64) -> f64 {
    let n = s.len();
    if n < 2 {
        return 0.0;
    }
    let mut t2v = 0.0;
    let mut v2t = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            t2v += sms_pair_oracle(r[a][a] - r[a][b], s[a][a] - s[a][b], m, tau, eps);
            v2t += sms_pair_oracle(r[a][a] - r[b][a], s[a][a] - s[b][a], m, tau, eps);
        }
    }
    let pairs = (n * (n - 1)) as f64;
    0.5 * (t2v / pairs + v2t / pairs)
}

/// 1-based rank of item `j`: one plus the number of items ranked ahead of it
/// (higher score, or equal score and lower index).
pub fn brute_rank(scores: &[f64], j: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&k| scores[k] > scores[j] || (scores[k] == scores[j] && k < j))
        .count()
}

pub fn brute_ap(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let rel: Vec<usize> = (0..scores.len()).filter(|&j| relevant[j]).collect();
    if rel.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &j in &rel {
        let rj = brute_rank(scores, j);
        let hits = rel.iter().filter(|&&k| brute_rank(scores, k) <= rj).count();
        total += hits as f64 / rj as f64;
    }
    Some(total / rel.len() as f64)
}

pub fn brute_map(s: &[Vec<f64>], r: &[Vec<f64>], threshold: f64) -> Option<f64> {
    let aps: Vec<f64> = s
        .iter()
        .zip(r)
        .filter_map(|(srow, rrow)| brute_ap(srow, &rrow.iter().map(|&x| x > threshold).collect::<Vec<_>>()))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn brute_ndcg_row(scores: &[f64], rel: &[f64]) -> Option<f64> {
    let dcg: f64 = (0..scores.len())
        .map(|j| rel[j] / ((brute_rank(scores, j) + 1) as f64).log2())
        .sum();
    // the ideal ordering is the ranking by relevance itself
    let idcg: f64 = (0..rel.len()).map(|j| rel[j] / ((brute_rank(rel, j) + 1) as f64).log2()).sum();
    (idcg > 0.0).then(|| dcg / idcg)
}

pub fn brute_ndcg(s: &[Vec<f64>], r: &[Vec<f64>]) -> Option<f64> {
    let v: Vec<f64> = s.iter().zip(r).filter_map(|(a, b)| brute_ndcg_row(a, b)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn to_rows(m: &vidtext::numerics::Matrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.to_vec()).collect()
}
