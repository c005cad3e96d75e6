//! Prints how far the attack moves Q entries for edges vs non-edges, and
//! how sampled flip scores compare with the ε background.

use dga_core::attack::{run_attack, AttackConfig};
use dga_core::pipeline::sbm_dataset;
use dga_core::poison::difference_scores;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let eps: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    let scale: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let k: Option<usize> = args.get(5).and_then(|s| s.parse().ok());

    let ds = sbm_dataset(100, 2, 0.3, 0.02, 9000).unwrap();
    let mut cfg = AttackConfig::defaults_for(&ds.graph);
    cfg.eta = eta * scale;
    cfg.iters = iters;
    cfg.eps = eps;
    if let Some(k) = k {
        cfg.gumbel_k = k;
    }
    let eff_eps = cfg.effective_eps(&ds.graph);
    let out = run_attack(&ds.graph, &ds.features, &ds.labels, &ds.split, &cfg).unwrap();
    let n = ds.graph.num_nodes();
    let q0_edge = (1.0 + eff_eps).ln();
    let q0_non = eff_eps.ln();
    let mut edge_moves: Vec<f64> = Vec::new();
    let mut non_moves: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dq = if ds.graph.has_edge(i, j) {
                out.q.get(i, j) - q0_edge
            } else {
                out.q.get(i, j) - q0_non
            };
            if ds.graph.has_edge(i, j) {
                edge_moves.push(dq);
            } else {
                non_moves.push(dq);
            }
        }
    }
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let edge_moves = sorted(edge_moves);
    let non_moves = sorted(non_moves);
    let pct = |v: &[f64], p: f64| v[(p * (v.len() - 1) as f64) as usize];
    println!(
        "eps {eff_eps:.4}   edge dq: min {:.4} p50 {:.4} max {:.4}",
        edge_moves[0],
        pct(&edge_moves, 0.5),
        edge_moves[edge_moves.len() - 1]
    );
    println!(
        "             non  dq: min {:.4} p50 {:.4} max {:.4}",
        non_moves[0],
        pct(&non_moves, 0.5),
        non_moves[non_moves.len() - 1]
    );
    let s = difference_scores(&out.q, &ds.graph).unwrap();
    let mut add_scores: Vec<f64> = Vec::new();
    let mut rem_scores: Vec<f64> = Vec::new();
    let mut cross_mass = 0.0;
    let mut intra_mass = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if ds.graph.has_edge(i, j) {
                rem_scores.push(s.get(i, j));
            } else {
                add_scores.push(s.get(i, j));
                if ds.labels.label(i) != ds.labels.label(j) {
                    cross_mass += s.get(i, j).max(0.0);
                } else {
                    intra_mass += s.get(i, j).max(0.0);
                }
            }
        }
    }
    println!(
        "add mass split: cross {:.2} intra {:.2} (cross share {:.2})",
        cross_mass,
        intra_mass,
        cross_mass / (cross_mass + intra_mass)
    );
    let add_scores = sorted(add_scores);
    let rem_scores = sorted(rem_scores);
    let mass = |v: &[f64]| v.iter().map(|x| x.max(0.0)).sum::<f64>();
    let top40: f64 = add_scores.iter().rev().take(40).sum();
    println!(
        "add top-40 mass share: {:.3}",
        top40 / mass(&add_scores).max(1e-300)
    );
    println!(
        "add scores: p50 {:.4} p99 {:.4} max {:.4} mass {:.2}",
        pct(&add_scores, 0.5),
        pct(&add_scores, 0.99),
        add_scores[add_scores.len() - 1],
        mass(&add_scores)
    );
    println!(
        "rem scores: p50 {:.4} p99 {:.4} max {:.4} mass {:.2}",
        pct(&rem_scores, 0.5),
        pct(&rem_scores, 0.99),
        rem_scores[rem_scores.len() - 1],
        mass(&rem_scores)
    );
    println!(
        "grad_norm first {:.3e} last {:.3e}",
        out.diagnostics.grad_norm[0],
        out.diagnostics.grad_norm.last().unwrap()
    );
}
