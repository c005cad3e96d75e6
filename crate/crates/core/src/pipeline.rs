//! High-level poisoning pipelines tying the attack, scoring, and sampling
//! stages together. The CLI, benchmarks, and evaluation harnesses all go
//! through these entry points.

use crate::attack::{run_attack, AttackConfig, AttackOutcome};
use crate::data::Dataset;
use crate::error::Result;
use crate::graph::{apply_perturbations, PerturbationSet};
use crate::poison::{best_of_samples, dice_attack, difference_scores, ScoreToProb};
use crate::surrogate::{cross_entropy, forward, train_on_adjacency, TrainSettings};
use crate::{seed_stream, streams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How sampled candidates are scored and selected.
#[derive(Debug, Clone)]
pub struct PoisonPlan {
    /// Number of edge flips Δ.
    pub budget: usize,
    /// Candidate perturbation sets drawn from the score distribution.
    pub samples: usize,
    pub score_mode: ScoreToProb,
    /// Epochs for the candidate-evaluation retraining.
    pub retrain_epochs: usize,
}

impl PoisonPlan {
    pub fn new(budget: usize) -> Self {
        PoisonPlan {
            budget,
            samples: 10,
            score_mode: ScoreToProb::Clamp,
            retrain_epochs: 50,
        }
    }
}

/// Result of the full train-then-sample attack.
#[derive(Debug, Clone)]
pub struct DgaPoisonOutcome {
    pub perturbations: PerturbationSet,
    /// Self-training loss of the selected candidate under retraining.
    pub candidate_score: f64,
    pub attack: AttackOutcome,
}

/// Runs the log-probability attack and samples a budget-constrained
/// perturbation set, selecting the best of `plan.samples` candidates by the
/// self-training loss of a freshly retrained surrogate.
pub fn dga_poison(ds: &Dataset, cfg: &AttackConfig, plan: &PoisonPlan) -> Result<DgaPoisonOutcome> {
    let attack = run_attack(&ds.graph, &ds.features, &ds.labels, &ds.split, cfg)?;
    let scores = difference_scores(&attack.q, &ds.graph)?;
    let unlabeled = ds.split.unlabeled(ds.graph.num_nodes());
    let retrain_seed = seed_stream(cfg.seed, streams::EVALUATOR);
    let retrain_settings = TrainSettings {
        epochs: plan.retrain_epochs,
        ..cfg.surrogate.clone()
    };
    let evaluator = |candidate: &PerturbationSet| -> Result<f64> {
        let poisoned = apply_perturbations(&ds.graph, candidate)?;
        let trained = train_on_adjacency(
            &poisoned.normalized_adjacency(),
            &ds.features,
            &ds.labels,
            &ds.split,
            &retrain_settings,
            retrain_seed,
        )?;
        let logits = forward(
            &trained.params,
            &ds.features,
            &poisoned.normalized_adjacency(),
        )?;
        cross_entropy(&logits, &attack.pseudo, &unlabeled)
    };
    let (perturbations, candidate_score) = best_of_samples(
        &scores,
        plan.budget,
        plan.samples,
        plan.score_mode,
        seed_stream(cfg.seed, streams::POISON),
        evaluator,
    )?;
    Ok(DgaPoisonOutcome {
        perturbations,
        candidate_score,
        attack,
    })
}

/// DICE baseline at the same budget.
pub fn dice_poison(ds: &Dataset, budget: usize, seed: u64) -> Result<PerturbationSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, streams::POISON));
    dice_attack(&ds.graph, &ds.labels, budget, &mut rng)
}

/// Synthetic SBM dataset with a stratified 10/10/80 split, for experiments
/// and benchmarks.
pub fn sbm_dataset(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Dataset> {
    let (graph, features, labels) = crate::data::generate_sbm(n, blocks, p_in, p_out, seed)?;
    let split = crate::data::generate_split(&labels, 0.1, 0.1, seed_stream(seed, streams::SPLIT))?;
    Ok(Dataset {
        id_map: (0..graph.num_nodes()).collect(),
        graph,
        features,
        labels,
        split,
    })
}
