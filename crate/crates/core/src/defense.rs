//! Jaccard-similarity preprocessing defense.
//!
//! Features are binarized at strictly positive entries; an edge survives
//! only if the Jaccard similarity of its endpoints' feature supports
//! reaches the threshold. Two empty supports count as similarity 0.

use crate::error::{DgaError, Result};
use crate::graph::{build_graph, FeatureMatrix, Graph};

/// Jaccard similarity of two sorted index sets.
fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut x, mut y) = (0usize, 0usize);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                x += 1;
                y += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Binarized feature supports (indices of strictly positive entries).
pub(crate) fn feature_supports(features: &FeatureMatrix) -> Vec<Vec<usize>> {
    let values = features.values();
    (0..values.nrows())
        .map(|i| {
            (0..values.ncols())
                .filter(|&j| values[[i, j]] > 0.0)
                .collect()
        })
        .collect()
}

/// Removes every edge whose endpoint feature Jaccard similarity is below
/// `threshold`. Nodes are unchanged.
pub fn jaccard_filter(g: &Graph, features: &FeatureMatrix, threshold: f64) -> Result<Graph> {
    if features.is_identity_fallback() {
        return Err(DgaError::InvalidInput(
            "jaccard filtering requires real node features; this dataset has none".into(),
        ));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DgaError::InvalidInput(format!(
            "jaccard threshold {threshold} outside [0, 1]"
        )));
    }
    if features.num_nodes() != g.num_nodes() {
        return Err(DgaError::InvalidInput(format!(
            "features cover {} nodes but graph has {}",
            features.num_nodes(),
            g.num_nodes()
        )));
    }
    let supports = feature_supports(features);
    let kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .cloned()
        .filter(|&(i, j)| jaccard(&supports[i], &supports[j]) >= threshold)
        .collect();
    build_graph(&kept, g.num_nodes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_rows_survive_any_threshold() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let f = FeatureMatrix::new(array![[1.0, 0.0, 2.0], [3.0, 0.0, 1.0]]).unwrap();
        for t in [0.0, 0.5, 1.0] {
            let filtered = jaccard_filter(&g, &f, t).unwrap();
            assert_eq!(filtered.num_edges(), 1, "threshold {t}");
        }
    }

    #[test]
    fn disjoint_supports_are_removed_for_positive_threshold() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let filtered = jaccard_filter(&g, &f, 0.01).unwrap();
        assert_eq!(filtered.num_edges(), 0);
        // threshold 0 keeps everything
        let unfiltered = jaccard_filter(&g, &f, 0.0).unwrap();
        assert_eq!(unfiltered.num_edges(), 1);
    }

    #[test]
    fn both_empty_supports_count_as_zero() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let f = FeatureMatrix::new(Array2::zeros((2, 3))).unwrap();
        let filtered = jaccard_filter(&g, &f, 0.01).unwrap();
        assert_eq!(filtered.num_edges(), 0);
    }

    #[test]
    fn higher_threshold_removes_superset() {
        let g = build_graph(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        let f = FeatureMatrix::new(array![
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 1.0]
        ])
        .unwrap();
        let loose: std::collections::BTreeSet<_> = jaccard_filter(&g, &f, 0.2)
            .unwrap()
            .edges()
            .iter()
            .cloned()
            .collect();
        let strict: std::collections::BTreeSet<_> = jaccard_filter(&g, &f, 0.5)
            .unwrap()
            .edges()
            .iter()
            .cloned()
            .collect();
        assert!(strict.is_subset(&loose));
        assert!(strict.len() < loose.len());
    }

    #[test]
    fn identity_fallback_features_are_rejected() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let f = FeatureMatrix::identity(2);
        assert!(jaccard_filter(&g, &f, 0.01).is_err());
    }
}
