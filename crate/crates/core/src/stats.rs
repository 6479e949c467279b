//! Rank and retrieval statistics shared by the evaluation metrics.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Average ranks (1-based), ties resolved by averaging.
fn average_ranks<F: Scalar>(v: &[F]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && v[order[end]] == v[order[pos]] {
            end += 1;
        }
        // ranks pos+1 ..= end averaged over the tie group
        let avg = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = avg;
        }
        pos = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-tie ranks.
///
/// Rejects vectors shorter than 3 and constant vectors (an undefined
/// correlation is surfaced as an error rather than silently returned as 0).
pub fn spearman<F: Scalar>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "spearman inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::config("spearman requires at least 3 points"));
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("spearman inputs must be finite"));
    }
    let constant = |v: &[F]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::numeric(
            "spearman is undefined for a constant input vector",
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..ra.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Average precision of ranking `positives` by descending score, ties broken
/// by ascending index: `AP = (1/|P|) Σ_hits precision@hit`.
///
/// Equals 1.0 exactly when every positive strictly outranks every negative.
pub fn auprc<F: Scalar>(scores: &[F], positives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::config("auprc requires a non-empty positive set"));
    }
    if positives.len() >= scores.len() {
        return Err(Error::config(
            "auprc requires at least one negative sample",
        ));
    }
    if positives.iter().any(|&i| i >= scores.len()) {
        return Err(Error::config("auprc positive index out of range"));
    }
    let order = descending_order(scores);
    let is_positive = {
        let mut mask = vec![false; scores.len()];
        for &i in positives {
            mask[i] = true;
        }
        mask
    };
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if is_positive[idx] {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(ap / positives.len() as f64)
}

/// Precision-recall curve points in ranking order (recall, precision),
/// using the same ordering convention as [`auprc`].
pub fn pr_curve<F: Scalar>(scores: &[F], positives: &[usize]) -> Result<Vec<(f64, f64)>> {
    if positives.is_empty() {
        return Err(Error::config("pr_curve requires a non-empty positive set"));
    }
    let order = descending_order(scores);
    let mut mask = vec![false; scores.len()];
    for &i in positives {
        if i >= scores.len() {
            return Err(Error::config("pr_curve positive index out of range"));
        }
        mask[i] = true;
    }
    let mut hits = 0usize;
    let mut out = Vec::with_capacity(order.len());
    for (rank0, &idx) in order.iter().enumerate() {
        if mask[idx] {
            hits += 1;
        }
        out.push((
            hits as f64 / positives.len() as f64,
            hits as f64 / (rank0 + 1) as f64,
        ));
    }
    Ok(out)
}

/// Area under the cumulative detection curve: inspect samples in ranking
/// order; x is the fraction inspected, y the fraction of positives found;
/// integrate by trapezoid over all `n + 1` curve points.
///
/// A perfect ranking at prevalence π scores `1 − π/2`, the worst `π/2`.
pub fn detection_auc(ranking: &[usize], positives: &[usize]) -> Result<f64> {
    let n = ranking.len();
    let mut seen = vec![false; n];
    for &i in ranking {
        if i >= n || seen[i] {
            return Err(Error::config(
                "detection_auc ranking must be a permutation of all ids",
            ));
        }
        seen[i] = true;
    }
    if positives.is_empty() {
        return Err(Error::config("detection_auc requires positives"));
    }
    let mut is_positive = vec![false; n];
    for &i in positives {
        if i >= n {
            return Err(Error::config("detection_auc positive index out of range"));
        }
        is_positive[i] = true;
    }
    let total = positives.len() as f64;
    let mut found = 0usize;
    let mut prev_y = 0.0;
    let mut area = 0.0;
    let step = 1.0 / n as f64;
    for &idx in ranking {
        if is_positive[idx] {
            found += 1;
        }
        let y = found as f64 / total;
        area += step * (prev_y + y) / 2.0;
        prev_y = y;
    }
    Ok(area)
}

/// Cumulative detection curve points `(fraction inspected, fraction found)`,
/// including the origin.
pub fn detection_curve(ranking: &[usize], positives: &[usize]) -> Result<Vec<(f64, f64)>> {
    let n = ranking.len();
    let mut is_positive = vec![false; n];
    for &i in positives {
        if i >= n {
            return Err(Error::config("detection_curve positive index out of range"));
        }
        is_positive[i] = true;
    }
    let total = positives.len().max(1) as f64;
    let mut found = 0usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push((0.0, 0.0));
    for (k, &idx) in ranking.iter().enumerate() {
        if is_positive[idx] {
            found += 1;
        }
        out.push(((k + 1) as f64 / n as f64, found as f64 / total));
    }
    Ok(out)
}

/// Ids of the `k` largest values, ties broken by ascending id; the output is
/// ordered by `(value desc, id asc)`.
pub fn topk_indices<F: Scalar>(v: &[F], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::config(format!(
            "topk_indices: k={} out of range for length {}",
            k,
            v.len()
        )));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| {
        v[j].partial_cmp(&v[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(k);
    Ok(order)
}

/// Full descending ranking with the [`topk_indices`] tie rule.
pub fn descending_order<F: Scalar>(v: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| {
        v[j].partial_cmp(&v[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn spearman_identity_and_reversal() {
        let v: [f64; 5] = [1.0, 5.0, 2.0, 9.0, -3.0];
        assert_eq!(spearman(&v, &v).unwrap(), 1.0);
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(spearman(&v, &rev).unwrap(), -1.0);
    }

    #[test]
    fn spearman_textbook_value() {
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-15);
    }

    #[test]
    fn spearman_rejects_degenerate_inputs() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_err());
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        // ranks of a: [1.5, 1.5, 3]; hand Pearson against [1, 2, 3]
        let rho = spearman(&[4.0, 4.0, 7.0], &[1.0, 2.0, 3.0]).unwrap();
        let expect = 1.5 / (1.5f64 * 2.0).sqrt(); // cov=1.5, var_a=1.5, var_b=2
        assert!((rho - expect).abs() < 1e-14);
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let a: [f64; 6] = [0.3, -2.0, 5.0, 1.1, 0.0, 4.0];
        let b: [f64; 6] = [9.0, 1.0, 2.0, 7.0, 3.0, 5.0];
        let base = spearman(&a, &b).unwrap();
        let ta: Vec<f64> = a.iter().map(|x| (x * 0.5).exp()).collect();
        assert!((spearman(&ta, &b).unwrap() - base).abs() < 1e-14);
        assert!((spearman(&b, &a).unwrap() - base).abs() < 1e-14);
    }

    #[test]
    fn auprc_perfect_and_single_tail_hit() {
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[0, 1]).unwrap(), 1.0);
        let ap = auprc(&[0.9, 0.8, 0.1], &[2]).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auprc_requires_positives_and_negatives() {
        assert!(auprc::<f64>(&[0.9, 0.8], &[]).is_err());
        assert!(auprc(&[0.9, 0.8], &[0, 1]).is_err());
    }

    #[test]
    fn auprc_random_scores_approach_prevalence() {
        let mut rng = rng_from_seed(123);
        let n = 100;
        let positives: Vec<usize> = (0..20).collect();
        let mut total = 0.0;
        let trials = 1000;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            total += auprc(&scores, &positives).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 0.2).abs() < 0.05, "mean AP {mean}");
    }

    #[test]
    fn auprc_monotone_invariance() {
        let scores: [f64; 6] = [0.1, 0.7, 0.3, 0.9, 0.4, 0.2];
        let positives = [1, 3];
        let base = auprc(&scores, &positives).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| s.powi(3) * 10.0 + 1.0).collect();
        assert_eq!(auprc(&transformed, &positives).unwrap(), base);
    }

    #[test]
    fn detection_auc_perfect_and_worst_geometry() {
        let n = 10;
        let positives = [0, 1, 2];
        let first: Vec<usize> = (0..n).collect();
        let auc = detection_auc(&first, &positives).unwrap();
        assert!((auc - 0.85).abs() < 1e-12);
        let last: Vec<usize> = (3..n).chain(0..3).collect();
        let worst = detection_auc(&last, &positives).unwrap();
        assert!((worst - 0.15).abs() < 1e-12);
    }

    #[test]
    fn detection_auc_random_mean_half() {
        let mut rng = rng_from_seed(7);
        let n = 60;
        let positives: Vec<usize> = (0..18).collect();
        let mut total = 0.0;
        let trials = 1000;
        for _ in 0..trials {
            let mut ranking: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            ranking.shuffle(&mut rng);
            total += detection_auc(&ranking, &positives).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean AUC {mean}");
    }

    #[test]
    fn detection_auc_complement_identity() {
        let mut rng = rng_from_seed(21);
        let n = 50;
        let positives: Vec<usize> = vec![3, 9, 14, 30, 44];
        let mut ranking: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        ranking.shuffle(&mut rng);
        let fwd = detection_auc(&ranking, &positives).unwrap();
        let rev: Vec<usize> = ranking.iter().rev().copied().collect();
        let bwd = detection_auc(&rev, &positives).unwrap();
        assert!((fwd + bwd - 1.0).abs() < 1.0 / n as f64);
    }

    #[test]
    fn detection_auc_rejects_non_permutation() {
        assert!(detection_auc(&[0, 0, 1], &[0]).is_err());
        assert!(detection_auc(&[0, 1, 5], &[0]).is_err());
    }

    #[test]
    fn topk_tie_break_and_bounds() {
        assert_eq!(topk_indices(&[5.0, 1.0, 5.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(topk_indices(&[3.0, 2.0, 1.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            topk_indices(&[1.0, 2.0, 3.0], 3).unwrap(),
            vec![2, 1, 0]
        );
        assert!(topk_indices(&[1.0, 2.0], 0).is_err());
        assert!(topk_indices(&[1.0, 2.0], 3).is_err());
    }
}
