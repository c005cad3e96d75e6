//! Inspects the topology of the flips DGA draws: adds per endpoint,
//! endpoint degrees, and how they relate to split membership.

use dga_core::attack::AttackConfig;
use dga_core::data::budget_from_rate;
use dga_core::eval::{evaluate_victim, Defense};
use dga_core::graph::{apply_perturbations, FlipOp};
use dga_core::pipeline::{dga_poison, sbm_dataset, PoisonPlan};
use dga_core::surrogate::TrainSettings;
use std::collections::BTreeMap;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let eps: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let k: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
    let samples: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(10);

    let seed = 9003u64;
    let ds = sbm_dataset(100, 2, 0.3, 0.02, seed).unwrap();
    let budget = budget_from_rate(0.05, ds.graph.num_edges()).unwrap();
    let mut cfg = AttackConfig::defaults_for(&ds.graph);
    cfg.eta = eta;
    cfg.iters = iters;
    cfg.eps = Some(eps);
    cfg.gumbel_k = k;
    cfg.seed = seed;
    let mut plan = PoisonPlan::new(budget);
    plan.samples = samples;
    let out = dga_poison(&ds, &cfg, &plan).unwrap();

    let mut per_node: BTreeMap<usize, usize> = BTreeMap::new();
    let mut in_test = 0usize;
    let mut adds = 0usize;
    for &(i, j, op) in out.perturbations.flips() {
        if op == FlipOp::Add {
            adds += 1;
            *per_node.entry(i).or_insert(0) += 1;
            *per_node.entry(j).or_insert(0) += 1;
        }
    }
    let mut counts: Vec<(usize, usize)> = per_node.into_iter().collect();
    counts.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
    println!("budget {budget}, adds {adds}");
    println!("top endpoints (node, adds, degree, split):");
    for &(node, c) in counts.iter().take(12) {
        let split = if ds.split.train.contains(&node) {
            "train"
        } else if ds.split.val.contains(&node) {
            "val"
        } else {
            in_test += 1;
            "test"
        };
        println!(
            "  node {node}: adds {c} degree {} split {split}",
            ds.graph.degree(node)
        );
    }
    let multi = counts.iter().filter(|&&(_, c)| c >= 3).count();
    println!("endpoints with ≥3 adds: {multi} (test among top-12: {in_test})");

    let victim = TrainSettings::victim();
    let poisoned = apply_perturbations(&ds.graph, &out.perturbations).unwrap();
    let clean = evaluate_victim(
        &ds.graph, &ds.features, &ds.labels, &ds.split, 10, 100, Defense::None, &victim,
    )
    .unwrap();
    let atk = evaluate_victim(
        &poisoned, &ds.features, &ds.labels, &ds.split, 10, 100, Defense::None, &victim,
    )
    .unwrap();
    println!("clean {:.4} poisoned {:.4}", clean.mean, atk.mean);
}
