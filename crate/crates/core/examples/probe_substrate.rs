//! Measures what different flip strategies achieve on the SBM testbed:
//! DICE, random cross-block additions, and a concentrated oracle that piles
//! wrong-block neighbors onto low-degree test nodes.

use dga_core::eval::{evaluate_victim, Defense};
use dga_core::graph::{apply_perturbations, FlipOp, PerturbationSet};
use dga_core::pipeline::{dice_poison, sbm_dataset};
use dga_core::surrogate::TrainSettings;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let runs = 10;
    let victim = TrainSettings::victim();
    let mut sums = [0.0f64; 4]; // clean, dice, cross-random, concentrated
    for seed in 0..seeds {
        let ds = sbm_dataset(100, 2, 0.3, 0.02, 9000 + seed).unwrap();
        let budget = dga_core::data::budget_from_rate(0.05, ds.graph.num_edges()).unwrap();
        let acc = |g: &dga_core::Graph, s: u64| {
            evaluate_victim(
                g, &ds.features, &ds.labels, &ds.split, runs, 100 + s, Defense::None, &victim,
            )
            .unwrap()
            .mean
        };
        let clean = acc(&ds.graph, seed);

        let dice = dice_poison(&ds, budget, seed).unwrap();
        let dice_acc = acc(&apply_perturbations(&ds.graph, &dice).unwrap(), seed);

        // random cross-block additions only
        let mut rng = ChaCha8Rng::seed_from_u64(777 + seed);
        let mut flips = Vec::new();
        while flips.len() < budget {
            let a = rng.random_range(0..100);
            let b = rng.random_range(0..100);
            if a == b || ds.labels.label(a) == ds.labels.label(b) {
                continue;
            }
            let pair = (a.min(b), a.max(b), FlipOp::Add);
            if ds.graph.has_edge(pair.0, pair.1) || flips.contains(&pair) {
                continue;
            }
            flips.push(pair);
        }
        let cross = PerturbationSet::new(flips).unwrap();
        let cross_acc = acc(&apply_perturbations(&ds.graph, &cross).unwrap(), seed);

        // concentrated: lowest-degree test nodes get wrong-block neighbors
        let mut targets: Vec<usize> = ds.split.test.clone();
        targets.sort_by_key(|&t| ds.graph.degree(t));
        let per_victim = 5usize;
        let mut flips = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(888 + seed);
        'outer: for &t in &targets {
            let mut wrong: Vec<usize> = (0..100)
                .filter(|&u| {
                    u != t && ds.labels.label(u) != ds.labels.label(t) && !ds.graph.has_edge(t, u)
                })
                .collect();
            wrong.shuffle(&mut rng);
            for u in wrong.into_iter().take(per_victim) {
                let key = (t.min(u), t.max(u), FlipOp::Add);
                if flips.contains(&key) {
                    continue;
                }
                flips.push(key);
                if flips.len() == budget {
                    break 'outer;
                }
            }
        }
        let conc = PerturbationSet::new(flips).unwrap();
        let conc_acc = acc(&apply_perturbations(&ds.graph, &conc).unwrap(), seed);

        println!(
            "seed {seed}: clean {clean:.4} dice {dice_acc:.4} cross-random {cross_acc:.4} concentrated {conc_acc:.4}"
        );
        for (i, v) in [clean, dice_acc, cross_acc, conc_acc].iter().enumerate() {
            sums[i] += v;
        }
    }
    let k = seeds as f64;
    println!(
        "means: clean {:.4} dice {:.4} cross-random {:.4} concentrated {:.4}",
        sums[0] / k,
        sums[1] / k,
        sums[2] / k,
        sums[3] / k
    );
}
