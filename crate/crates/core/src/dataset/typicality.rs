use super::LabeledDataset;
use crate::error::{Error, Result};

/// kNN label agreement: the fraction of each example's `k` nearest
/// neighbours (Euclidean, self excluded, ties by index) that share its
/// original label. Higher means more typical.
pub fn typicality_score_oracle(source: &LabeledDataset, k: usize) -> Result<Vec<f64>> {
    let n = source.len();
    if k == 0 || k >= n {
        return Err(Error::contract(format!(
            "neighbour count must satisfy 1 <= k < N, got k = {k}, N = {n}"
        )));
    }
    let rows: Vec<&[f64]> = source.features.iter().map(|t| t.data()).collect();
    let scores = (0..n)
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(rows[i], rows[j]), j))
                .collect();
            dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let agree = dists[..k]
                .iter()
                .filter(|&&(_, j)| source.labels[j] == source.labels[i])
                .count();
            agree as f64 / k as f64
        })
        .collect();
    Ok(scores)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn dataset(points: &[(f64, f64, usize)]) -> LabeledDataset {
        LabeledDataset::new(
            points
                .iter()
                .map(|&(x, y, _)| Tensor::vector(vec![x, y]).unwrap())
                .collect(),
            points.iter().map(|p| p.2).collect(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn pure_clusters_score_one() {
        let pts: Vec<(f64, f64, usize)> = (0..5)
            .map(|i| (i as f64 * 0.1, 0.0, 0))
            .chain((0..5).map(|i| (100.0 + i as f64 * 0.1, 0.0, 1)))
            .collect();
        let scores = typicality_score_oracle(&dataset(&pts), 3).unwrap();
        assert!(scores.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn isolated_mislabel_scores_zero() {
        let pts = [(0.0, 0.0, 0), (0.1, 0.0, 0), (0.2, 0.0, 0), (0.05, 0.05, 1)];
        let scores = typicality_score_oracle(&dataset(&pts), 3).unwrap();
        assert_eq!(scores[3], 0.0);
    }

    #[test]
    fn bad_k() {
        let pts = [(0.0, 0.0, 0), (1.0, 0.0, 1)];
        assert!(typicality_score_oracle(&dataset(&pts), 0).is_err());
        assert!(typicality_score_oracle(&dataset(&pts), 2).is_err());
    }

    #[test]
    fn identical_features_break_ties_by_index() {
        let pts = [(0.0, 0.0, 0), (0.0, 0.0, 1), (0.0, 0.0, 0), (0.0, 0.0, 1)];
        let scores = typicality_score_oracle(&dataset(&pts), 1).unwrap();
        // nearest of 0 is 1, of 1 is 0, of 2 is 0, of 3 is 0
        assert_eq!(scores, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_brute_force_all_pairs() {
        // 20-point two-class fixture on a skewed lattice
        let pts: Vec<(f64, f64, usize)> = (0..20)
            .map(|i| {
                let x = (i % 5) as f64 + 0.13 * i as f64;
                let y = (i / 5) as f64 - 0.07 * (i * i % 7) as f64;
                (x, y, usize::from((i * 3) % 7 < 3))
            })
            .collect();
        let ds = dataset(&pts);
        for k in [1, 3, 5, 19] {
            let got = typicality_score_oracle(&ds, k).unwrap();
            for i in 0..20 {
                let mut all: Vec<(f64, usize)> = Vec::new();
                for j in 0..20 {
                    if j != i {
                        let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                        all.push((d, j));
                    }
                }
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let same = all[..k].iter().filter(|(_, j)| pts[*j].2 == pts[i].2).count();
                assert_eq!(got[i], same as f64 / k as f64, "i={i} k={k}");
            }
        }
    }
}
