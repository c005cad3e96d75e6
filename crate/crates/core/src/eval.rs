//! Victim retraining on poisoned graphs and attack statistics.
//!
//! Victims are fresh GCNs (same architecture as the surrogate, dropout 0.5)
//! trained with their own seeds; reports carry per-run test accuracies with
//! mean/std. Attack statistics classify node pairs into kept/added/removed
//! edges and summarize feature similarity, label equality, and the degree
//! distribution shift.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defense::{feature_supports, jaccard_filter};
use crate::error::{DgaError, Result};
use crate::graph::{degree_distribution, FeatureMatrix, Graph, LabelVector, Split};
use crate::surrogate::{accuracy, forward, train_surrogate, TrainSettings};

/// Defense applied to the poisoned graph before victim training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defense {
    None,
    Jaccard { threshold: f64 },
}

impl Defense {
    pub fn label(&self) -> String {
        match self {
            Defense::None => "none".to_string(),
            Defense::Jaccard { threshold } => format!("jaccard:{threshold}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Defense::None);
        }
        if let Some(rest) = s.strip_prefix("jaccard:") {
            let threshold: f64 = rest.parse().map_err(|_| {
                DgaError::InvalidInput(format!("bad jaccard threshold in `{s}`"))
            })?;
            return Ok(Defense::Jaccard { threshold });
        }
        Err(DgaError::InvalidInput(format!("unknown defense `{s}`")))
    }
}

/// Accuracy report over repeated victim trainings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub method: Option<String>,
    pub budget_rate: Option<f64>,
    /// Requested number of runs.
    pub runs: usize,
    /// Test accuracies of the successful runs, in [0, 1].
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub defense: String,
    pub seeds: Vec<u64>,
    /// Set when only one accuracy backs the (zero) std.
    pub single_run: bool,
    /// Seeds whose training diverged and were excluded.
    pub failed_seeds: Vec<u64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Trains `runs` fresh victims (seeds `base_seed..base_seed+runs`) on the
/// optionally defense-filtered poisoned graph and reports test accuracy.
///
/// Diverged runs are excluded with a warning; at least one run must succeed.
pub fn evaluate_victim(
    poisoned: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
    runs: usize,
    base_seed: u64,
    defense: Defense,
    victim: &TrainSettings,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(DgaError::InvalidInput("evaluation needs at least one run".into()));
    }
    split.validate(poisoned.num_nodes())?;
    let working = match defense {
        Defense::None => poisoned.clone(),
        Defense::Jaccard { threshold } => jaccard_filter(poisoned, features, threshold)?,
    };
    let mut accuracies = Vec::with_capacity(runs);
    let mut seeds = Vec::with_capacity(runs);
    let mut failed_seeds = Vec::new();
    for r in 0..runs {
        let seed = base_seed + r as u64;
        match train_surrogate(&working, features, labels, split, victim, seed) {
            Ok(trained) => {
                let logits = forward(
                    &trained.params,
                    features,
                    &working.normalized_adjacency(),
                )?;
                accuracies.push(accuracy(&logits, labels, &split.test));
                seeds.push(seed);
            }
            Err(DgaError::Runtime(msg)) => {
                log::warn!("victim run with seed {seed} diverged and was excluded: {msg}");
                failed_seeds.push(seed);
            }
            Err(other) => return Err(other),
        }
    }
    if accuracies.is_empty() {
        return Err(DgaError::Runtime(format!(
            "all {runs} victim runs diverged"
        )));
    }
    let (mean, std) = mean_std(&accuracies);
    Ok(EvalReport {
        method: None,
        budget_rate: None,
        runs,
        single_run: accuracies.len() == 1,
        accuracies,
        mean,
        std,
        defense: defense.label(),
        seeds,
        failed_seeds,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic between degree histograms.
pub fn ks_statistic(a: &BTreeMap<usize, usize>, b: &BTreeMap<usize, usize>) -> f64 {
    let total_a: usize = a.values().sum();
    let total_b: usize = b.values().sum();
    if total_a == 0 || total_b == 0 {
        return 0.0;
    }
    let degrees: BTreeSet<usize> = a.keys().chain(b.keys()).cloned().collect();
    let mut cum_a = 0usize;
    let mut cum_b = 0usize;
    let mut worst = 0.0f64;
    for d in degrees {
        cum_a += a.get(&d).copied().unwrap_or(0);
        cum_b += b.get(&d).copied().unwrap_or(0);
        let fa = cum_a as f64 / total_a as f64;
        let fb = cum_b as f64 / total_b as f64;
        worst = worst.max((fa - fb).abs());
    }
    worst
}

/// Summary of one pair class (kept / added / removed edges).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeClassStats {
    pub class: String,
    pub count: usize,
    pub mean_feature_cosine: f64,
    pub label_equal_fraction: f64,
    /// Jaccard over binarized features, for binary-feature datasets.
    pub mean_feature_jaccard: f64,
}

/// Statistics bundle comparing a poisoned graph with its clean original.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackStats {
    pub degree_clean: BTreeMap<usize, usize>,
    pub degree_poisoned: BTreeMap<usize, usize>,
    pub ks_degree: f64,
    pub edge_classes: Vec<EdgeClassStats>,
}

impl AttackStats {
    pub fn class(&self, name: &str) -> Option<&EdgeClassStats> {
        self.edge_classes.iter().find(|c| c.class == name)
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

fn jaccard_sets(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let sa: BTreeSet<_> = a.iter().collect();
    let inter = b.iter().filter(|x| sa.contains(x)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn class_stats(
    name: &str,
    pairs: &[(usize, usize)],
    features: &FeatureMatrix,
    labels: &LabelVector,
    supports: &[Vec<usize>],
) -> EdgeClassStats {
    let count = pairs.len();
    if count == 0 {
        return EdgeClassStats {
            class: name.to_string(),
            count: 0,
            mean_feature_cosine: 0.0,
            label_equal_fraction: 0.0,
            mean_feature_jaccard: 0.0,
        };
    }
    let values = features.values();
    let mut cos_sum = 0.0;
    let mut jac_sum = 0.0;
    let mut equal = 0usize;
    for &(i, j) in pairs {
        cos_sum += cosine(values.row(i), values.row(j));
        jac_sum += jaccard_sets(&supports[i], &supports[j]);
        if labels.label(i) == labels.label(j) {
            equal += 1;
        }
    }
    EdgeClassStats {
        class: name.to_string(),
        count,
        mean_feature_cosine: cos_sum / count as f64,
        label_equal_fraction: equal as f64 / count as f64,
        mean_feature_jaccard: jac_sum / count as f64,
    }
}

/// Classifies pairs into kept/added/removed and computes the statistics
/// bundle (degree histograms with KS, feature similarity, label equality).
pub fn attack_statistics(
    clean: &Graph,
    poisoned: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<AttackStats> {
    if clean.num_nodes() != poisoned.num_nodes() {
        return Err(DgaError::InvalidInput(format!(
            "node sets differ: {} vs {}",
            clean.num_nodes(),
            poisoned.num_nodes()
        )));
    }
    let clean_set: BTreeSet<(usize, usize)> = clean.edges().iter().cloned().collect();
    let poisoned_set: BTreeSet<(usize, usize)> = poisoned.edges().iter().cloned().collect();
    let kept: Vec<(usize, usize)> = clean_set.intersection(&poisoned_set).cloned().collect();
    let added: Vec<(usize, usize)> = poisoned_set.difference(&clean_set).cloned().collect();
    let removed: Vec<(usize, usize)> = clean_set.difference(&poisoned_set).cloned().collect();

    let supports = feature_supports(features);
    let degree_clean = degree_distribution(clean);
    let degree_poisoned = degree_distribution(poisoned);
    let ks_degree = ks_statistic(&degree_clean, &degree_poisoned);
    Ok(AttackStats {
        degree_clean,
        degree_poisoned,
        ks_degree,
        edge_classes: vec![
            class_stats("kept", &kept, features, labels, &supports),
            class_stats("added", &added, features, labels, &supports),
            class_stats("removed", &removed, features, labels, &supports),
        ],
    })
}

/// Writes `report.json`, `stats_degree.csv`, and `stats_edges.csv` into the
/// directory. Numbers use the shortest round-trip decimal form.
pub fn export_report(report: &EvalReport, stats: &AttackStats, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| DgaError::Runtime(format!("report encode: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;

    let mut degree_csv = String::from("degree,count_clean,count_poisoned\n");
    let degrees: BTreeSet<usize> = stats
        .degree_clean
        .keys()
        .chain(stats.degree_poisoned.keys())
        .cloned()
        .collect();
    for d in degrees {
        let c = stats.degree_clean.get(&d).copied().unwrap_or(0);
        let p = stats.degree_poisoned.get(&d).copied().unwrap_or(0);
        let _ = writeln!(degree_csv, "{d},{c},{p}");
    }
    std::fs::write(dir.join("stats_degree.csv"), degree_csv)?;

    let mut edges_csv = String::from("class,count,mean_feature_cosine,label_equal_fraction\n");
    for class in &stats.edge_classes {
        if class.count == 0 {
            continue;
        }
        let _ = writeln!(
            edges_csv,
            "{},{},{},{}",
            class.class, class.count, class.mean_feature_cosine, class.label_equal_fraction
        );
    }
    std::fs::write(dir.join("stats_edges.csv"), edges_csv)?;
    Ok(())
}

/// Reads back a `report.json`.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DgaError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{apply_perturbations, build_graph, FlipOp, PerturbationSet};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn square_graph() -> Graph {
        build_graph(&[(0, 1), (1, 2), (2, 3), (0, 3)], 4).unwrap()
    }

    fn square_features() -> FeatureMatrix {
        FeatureMatrix::new(array![
            [1.0, 0.0],
            [1.0, 0.5],
            [0.0, 1.0],
            [0.2, 1.0]
        ])
        .unwrap()
    }

    #[test]
    fn identical_graphs_have_empty_added_removed_and_zero_ks() {
        let g = square_graph();
        let labels = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let stats = attack_statistics(&g, &g, &square_features(), &labels).unwrap();
        assert_eq!(stats.class("added").unwrap().count, 0);
        assert_eq!(stats.class("removed").unwrap().count, 0);
        assert_eq!(stats.class("kept").unwrap().count, 4);
        assert_abs_diff_eq!(stats.ks_degree, 0.0);
    }

    #[test]
    fn added_cross_label_edge_has_zero_equality() {
        let g = square_graph();
        let labels = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let p = PerturbationSet::new(vec![(1, 3, FlipOp::Add)]).unwrap();
        let poisoned = apply_perturbations(&g, &p).unwrap();
        let stats = attack_statistics(&g, &poisoned, &square_features(), &labels).unwrap();
        let added = stats.class("added").unwrap();
        assert_eq!(added.count, 1);
        assert_abs_diff_eq!(added.label_equal_fraction, 0.0);
    }

    #[test]
    fn ks_statistic_simple_shift() {
        let mut a = BTreeMap::new();
        a.insert(1usize, 2usize);
        a.insert(2, 2);
        let mut b = BTreeMap::new();
        b.insert(2usize, 2usize);
        b.insert(3, 2);
        // F_a(1)=0.5, F_b(1)=0 → KS = 0.5
        assert_abs_diff_eq!(ks_statistic(&a, &b), 0.5);
    }

    #[test]
    fn mean_std_and_single_run_flag() {
        let g = square_graph();
        let labels = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let split = Split {
            train: vec![0, 2],
            val: vec![1],
            test: vec![3],
        };
        let victim = TrainSettings {
            epochs: 10,
            hidden: 4,
            dropout: 0.5,
            ..Default::default()
        };
        let report = evaluate_victim(
            &g,
            &square_features(),
            &labels,
            &split,
            1,
            9,
            Defense::None,
            &victim,
        )
        .unwrap();
        assert!(report.single_run);
        assert_eq!(report.std, 0.0);
        assert_eq!(report.seeds, vec![9]);

        let report = evaluate_victim(
            &g,
            &square_features(),
            &labels,
            &split,
            3,
            9,
            Defense::None,
            &victim,
        )
        .unwrap();
        assert_eq!(report.accuracies.len(), 3);
        let mean = report.accuracies.iter().sum::<f64>() / 3.0;
        assert_abs_diff_eq!(report.mean, mean, epsilon = 1e-15);
        assert!(report.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn export_and_read_back_round_trip() {
        let g = square_graph();
        let labels = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let stats = attack_statistics(&g, &g, &square_features(), &labels).unwrap();
        let report = EvalReport {
            method: Some("foa".into()),
            budget_rate: Some(0.05),
            runs: 2,
            accuracies: vec![0.8125, 0.75],
            mean: 0.78125,
            std: 0.044194173824159216,
            defense: "none".into(),
            seeds: vec![1, 2],
            single_run: false,
            failed_seeds: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        export_report(&report, &stats, dir.path()).unwrap();
        let loaded = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(loaded, report);
        let degree_csv = std::fs::read_to_string(dir.path().join("stats_degree.csv")).unwrap();
        assert!(degree_csv.starts_with("degree,count_clean,count_poisoned\n"));
        let edges_csv = std::fs::read_to_string(dir.path().join("stats_edges.csv")).unwrap();
        // kept edges only; added/removed rows are skipped at count 0
        assert_eq!(edges_csv.lines().count(), 2);
    }

    #[test]
    fn defense_label_round_trip() {
        for d in [Defense::None, Defense::Jaccard { threshold: 0.01 }] {
            assert_eq!(Defense::parse(&d.label()).unwrap(), d);
        }
        assert!(Defense::parse("svd").is_err());
    }
}
