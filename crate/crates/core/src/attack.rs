//! Log-probability attack optimization.
//!
//! The adjacency matrix is relaxed to a symmetric matrix Q of unnormalized
//! edge log-probabilities. Each iteration samples a sparse weighted graph by
//! Gumbel top-k, adapts the surrogate by a single gradient step on the
//! training loss, computes an approximate hyper-gradient of the attack loss
//! with respect to Q (first-order or finite-difference variant), and applies
//! a momentum gradient step followed by symmetrization.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgaError, Result};
use crate::graph::{FeatureMatrix, Graph, LabelVector, NormalizedAdjacency, Split};
use crate::surrogate::{
    self, grad_edge_logprobs, grad_edge_weights, grad_params, GradBundle, LossKind,
    SurrogateParams, TrainSettings, TrainedSurrogate,
};
use crate::{seed_stream, streams};

/// Symmetric matrix of unnormalized edge log-probabilities. The diagonal is
/// pinned at `log ε`.
#[derive(Debug, Clone)]
pub struct LogProbMatrix {
    q: Array2<f64>,
    log_eps: f64,
}

impl LogProbMatrix {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn log_eps(&self) -> f64 {
        self.log_eps
    }

    /// Largest |Q_ij − Q_ji|.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.q[[i, j]] - self.q[[j, i]]).abs());
            }
        }
        worst
    }

    /// Wraps an existing matrix, validating symmetry and finiteness.
    pub fn from_matrix(q: Array2<f64>, log_eps: f64) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(DgaError::InvalidInput("Q must be square".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(DgaError::InvalidInput("Q contains non-finite entries".into()));
        }
        let lp = LogProbMatrix { q, log_eps };
        if lp.max_asymmetry() > 1e-12 {
            return Err(DgaError::InvalidInput(format!(
                "Q asymmetry {} exceeds 1e-12",
                lp.max_asymmetry()
            )));
        }
        Ok(lp)
    }
}

/// Q₀ = log(A + ε): `log(1 + ε)` on edges, `log ε` elsewhere (diagonal
/// included).
pub fn init_log_prob(g: &Graph, eps: f64) -> Result<LogProbMatrix> {
    if !(eps > 0.0) {
        return Err(DgaError::InvalidInput(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let n = g.num_nodes();
    let log_eps = eps.ln();
    let mut q = Array2::from_elem((n, n), log_eps);
    let on_edge = (1.0 + eps).ln();
    for &(i, j) in g.edges() {
        q[[i, j]] = on_edge;
        q[[j, i]] = on_edge;
    }
    Ok(LogProbMatrix { q, log_eps })
}

/// A sparse graph drawn from Q: per-node Gumbel top-k neighbor picks plus
/// the symmetrized union of all picks (optionally extended with forced
/// pairs). Edge weights are `exp(q)` at the sampled positions.
#[derive(Debug, Clone)]
pub struct SampledGraph {
    n: usize,
    picks: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    q_values: Vec<f64>,
}

impl SampledGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// The k Gumbel picks of a node (sorted).
    pub fn picks(&self, node: usize) -> &[usize] {
        &self.picks[node]
    }

    /// Sampled unordered pairs, ascending (i < j).
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Q values aligned with [`pairs`](Self::pairs).
    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn contains_pair(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.pairs.binary_search(&key).is_ok()
    }

    /// Weighted message-passing operator with `exp(q)` edge weights.
    pub fn normalized_adjacency(&self) -> Result<NormalizedAdjacency> {
        let weights: Vec<f64> = self.q_values.iter().map(|&q| q.exp()).collect();
        NormalizedAdjacency::from_weighted_pairs(self.n, &self.pairs, &weights)
    }

    /// Ensures every original edge is part of the sample so that removal
    /// gradients exist for existing edges.
    pub fn force_include_edges(&mut self, g: &Graph, q: &LogProbMatrix) {
        let mut set: BTreeSet<(usize, usize)> = self.pairs.iter().cloned().collect();
        for &(i, j) in g.edges() {
            set.insert((i, j));
        }
        self.pairs = set.into_iter().collect();
        self.q_values = self.pairs.iter().map(|&(i, j)| q.get(i, j)).collect();
    }
}

fn assemble_sample(q: &LogProbMatrix, picks: Vec<Vec<usize>>) -> SampledGraph {
    let mut set = BTreeSet::new();
    for (i, row) in picks.iter().enumerate() {
        for &j in row {
            set.insert((i.min(j), i.max(j)));
        }
    }
    let pairs: Vec<(usize, usize)> = set.into_iter().collect();
    let q_values = pairs.iter().map(|&(i, j)| q.get(i, j)).collect();
    SampledGraph {
        n: q.n(),
        picks,
        pairs,
        q_values,
    }
}

/// Gumbel top-k edge sampling: node i keeps the k largest values of
/// `(−log(−log u) + Q_ij)/τ` over j ≠ i, u ~ Uniform(0,1) drawn fresh per
/// (i, j). k is clamped to N − 1.
pub fn gumbel_top_k_sample<R: Rng>(
    q: &LogProbMatrix,
    k: usize,
    tau: f64,
    rng: &mut R,
) -> Result<SampledGraph> {
    if !(tau > 0.0) {
        return Err(DgaError::InvalidInput(format!(
            "gumbel temperature must be positive, got {tau}"
        )));
    }
    let n = q.n();
    let mut noise = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let u: f64 = rng.random::<f64>().max(1e-300);
                noise[[i, j]] = -(-u.ln()).ln();
            }
        }
    }
    gumbel_top_k_with_noise(q, k, tau, &noise)
}

/// Deterministic core of [`gumbel_top_k_sample`] with caller-supplied noise
/// (zero noise degenerates to plain top-k by Q row values).
pub fn gumbel_top_k_with_noise(
    q: &LogProbMatrix,
    k: usize,
    tau: f64,
    noise: &Array2<f64>,
) -> Result<SampledGraph> {
    if !(tau > 0.0) {
        return Err(DgaError::InvalidInput(format!(
            "gumbel temperature must be positive, got {tau}"
        )));
    }
    let n = q.n();
    if noise.dim() != (n, n) {
        return Err(DgaError::InvalidInput(format!(
            "noise shape {:?} does not match Q ({n}×{n})",
            noise.dim()
        )));
    }
    let k = k.min(n.saturating_sub(1));
    let mut picks = Vec::with_capacity(n);
    for i in 0..n {
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((noise[[i, j]] + q.get(i, j)) / tau, j))
            .collect();
        if k > 0 && k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| b.0.partial_cmp(&a.0).unwrap());
            scored.truncate(k);
        } else if k == 0 {
            scored.clear();
        }
        let mut row: Vec<usize> = scored.into_iter().map(|(_, j)| j).collect();
        row.sort_unstable();
        picks.push(row);
    }
    Ok(assemble_sample(q, picks))
}

/// ‖q̃ − q‖₂ where q̃ zeroes the unsampled off-diagonal entries of Q.
pub fn sampling_error(q: &LogProbMatrix, sampled: &SampledGraph) -> f64 {
    let n = q.n();
    let mut acc = 0.0f64;
    let mut cursor = sampled.pairs.iter().peekable();
    for i in 0..n {
        for j in (i + 1)..n {
            let in_sample = match cursor.peek() {
                Some(&&(pi, pj)) if (pi, pj) == (i, j) => {
                    cursor.next();
                    true
                }
                _ => false,
            };
            if !in_sample {
                let v = q.get(i, j);
                let w = q.get(j, i);
                acc += v * v + w * w;
            }
        }
    }
    acc.sqrt()
}

/// θ̂ = θ − α ∇_θ ℓ_train over the sampled weighted graph. θ is untouched.
pub fn single_step_adapt(
    theta: &SurrogateParams,
    sampled: &SampledGraph,
    alpha: f64,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
) -> Result<SurrogateParams> {
    if alpha < 0.0 {
        return Err(DgaError::InvalidInput(format!(
            "adaptation step must be non-negative, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(theta.clone());
    }
    let adj = sampled.normalized_adjacency()?;
    let grads = grad_params(theta, features, &adj, labels, &split.train)?;
    if grads.d_w1.iter().chain(grads.d_w2.iter()).any(|v| !v.is_finite()) {
        return Err(DgaError::Runtime(
            "non-finite gradient in single-step adaptation".into(),
        ));
    }
    Ok(SurrogateParams {
        w1: &theta.w1 - &(alpha * &grads.d_w1),
        w2: &theta.w2 - &(alpha * &grads.d_w2),
    })
}

/// Effective labels and node mask for the attack objective.
#[derive(Debug, Clone)]
pub struct AttackLoss {
    pub labels: LabelVector,
    pub mask: Vec<usize>,
}

impl AttackLoss {
    /// Resolves a loss kind into concrete labels and mask. `SelfCe` uses
    /// pseudo-labels over the unlabeled nodes (optionally including train).
    pub fn resolve(
        kind: LossKind,
        true_labels: &LabelVector,
        pseudo: &LabelVector,
        split: &Split,
        self_loss_includes_train: bool,
    ) -> AttackLoss {
        match kind {
            LossKind::TrainCe => AttackLoss {
                labels: true_labels.clone(),
                mask: split.train.clone(),
            },
            LossKind::SelfCe => {
                let n = pseudo.num_nodes();
                let mask = if self_loss_includes_train {
                    (0..n).collect()
                } else {
                    split.unlabeled(n)
                };
                AttackLoss {
                    labels: pseudo.clone(),
                    mask,
                }
            }
        }
    }
}

/// How gradients flow from the loss back to the Q entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradChain {
    /// Full chain through the exponential, `∂L/∂q = ∂L/∂w · exp(q)`: plain
    /// gradient descent on the log-probabilities.
    LogProb,
    /// Gradient with respect to the edge weight itself, `∂L/∂w`: the update
    /// on Q then acts as exponentiated gradient descent on the positive
    /// orthant. Keeps low-probability candidate edges trainable, which the
    /// exp chain freezes.
    Weight,
}

fn edge_grads(
    chain: GradChain,
    params: &SurrogateParams,
    sampled: &SampledGraph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    mask: &[usize],
) -> Result<GradBundle> {
    match chain {
        GradChain::LogProb => grad_edge_logprobs(
            params,
            features,
            &sampled.pairs,
            &sampled.q_values,
            labels,
            mask,
        ),
        GradChain::Weight => {
            let weights: Vec<f64> = sampled.q_values.iter().map(|&q| q.exp()).collect();
            grad_edge_weights(params, features, &sampled.pairs, &weights, labels, mask)
        }
    }
}

/// First-order hyper-gradient: ∇₂L_atk(θ̂, q̃) with ℓ_atk = −ℓ. Also returns
/// the attack-loss value at the evaluation point.
pub fn hyper_gradient_foa(
    theta_hat: &SurrogateParams,
    sampled: &SampledGraph,
    features: &FeatureMatrix,
    loss: &AttackLoss,
    chain: GradChain,
) -> Result<(BTreeMap<(usize, usize), f64>, f64)> {
    let bundle = edge_grads(chain, theta_hat, sampled, features, &loss.labels, &loss.mask)?;
    let d_q = bundle.d_q.into_iter().map(|(k, v)| (k, -v)).collect();
    Ok((d_q, -bundle.loss))
}

/// Finite-difference Hessian-vector term:
/// `(∇₂L_train(θ + δv, q̃) − ∇₂L_train(θ − δv, q̃)) / (2δ)` with an absolute
/// probe δ.
pub fn hessian_vector_fd(
    theta: &SurrogateParams,
    v: (&Array2<f64>, &Array2<f64>),
    probe: f64,
    sampled: &SampledGraph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    train_mask: &[usize],
    chain: GradChain,
) -> Result<BTreeMap<(usize, usize), f64>> {
    if !(probe > 0.0) {
        return Err(DgaError::InvalidInput(format!(
            "finite-difference probe must be positive, got {probe}"
        )));
    }
    let plus = SurrogateParams {
        w1: &theta.w1 + &(probe * v.0),
        w2: &theta.w2 + &(probe * v.1),
    };
    let minus = SurrogateParams {
        w1: &theta.w1 - &(probe * v.0),
        w2: &theta.w2 - &(probe * v.1),
    };
    let g_plus = edge_grads(chain, &plus, sampled, features, labels, train_mask)?;
    let g_minus = edge_grads(chain, &minus, sampled, features, labels, train_mask)?;
    let mut out = BTreeMap::new();
    for (&key, &gp) in &g_plus.d_q {
        let gm = g_minus.d_q[&key];
        let val = (gp - gm) / (2.0 * probe);
        if !val.is_finite() {
            return Err(DgaError::Runtime(format!(
                "non-finite finite-difference probe at {key:?}; try a smaller delta"
            )));
        }
        out.insert(key, val);
    }
    Ok(out)
}

/// Finite-difference approximation of the full hyper-gradient:
/// `∇₂L_atk(θ̂, q̃) − α · HVP` where the Hessian-vector product against
/// `v = ∇₁L_atk(θ̂, q̃)` is estimated by central differences of ∇₂L_train
/// around θ. The probe is `delta / ‖v‖₂` (relative scaling).
#[allow(clippy::too_many_arguments)]
pub fn hyper_gradient_fda(
    theta: &SurrogateParams,
    theta_hat: &SurrogateParams,
    sampled: &SampledGraph,
    alpha: f64,
    delta: f64,
    features: &FeatureMatrix,
    true_labels: &LabelVector,
    split: &Split,
    loss: &AttackLoss,
    chain: GradChain,
) -> Result<(BTreeMap<(usize, usize), f64>, f64)> {
    if !(delta > 0.0) {
        return Err(DgaError::InvalidInput(format!(
            "fda delta must be positive, got {delta}"
        )));
    }
    let (mut d_q, atk_loss) = hyper_gradient_foa(theta_hat, sampled, features, loss, chain)?;
    if alpha == 0.0 {
        return Ok((d_q, atk_loss));
    }
    let adj = sampled.normalized_adjacency()?;
    let atk_grads = grad_params(theta_hat, features, &adj, &loss.labels, &loss.mask)?;
    // v = ∇₁L_atk = −∇₁ℓ
    let v1 = atk_grads.d_w1.mapv(|g| -g);
    let v2 = atk_grads.d_w2.mapv(|g| -g);
    let v_norm = v1
        .iter()
        .chain(v2.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if v_norm <= f64::MIN_POSITIVE {
        // Attack loss stationary in θ: the Hessian-vector term vanishes.
        return Ok((d_q, atk_loss));
    }
    let probe = delta / v_norm;
    let hvp = hessian_vector_fd(
        theta,
        (&v1, &v2),
        probe,
        sampled,
        features,
        true_labels,
        &split.train,
        chain,
    )?;
    for (key, val) in d_q.iter_mut() {
        *val -= alpha * hvp[key];
    }
    Ok((d_q, atk_loss))
}

/// Momentum gradient step on Q with symmetrization and diagonal reset.
///
/// `buffer ← momentum · buffer + densify(d_q)`, `Q ← sym(Q − η · buffer)`.
/// Sparse gradient entries keyed by unordered pairs are densified onto both
/// mirrored positions.
pub fn update_q(
    q: &mut LogProbMatrix,
    d_q: &BTreeMap<(usize, usize), f64>,
    eta: f64,
    momentum: f64,
    buffer: &mut Array2<f64>,
) {
    assert_eq!(buffer.dim(), q.q.dim(), "momentum buffer shape mismatch");
    if momentum != 1.0 {
        buffer.mapv_inplace(|v| v * momentum);
    }
    for (&(i, j), &g) in d_q {
        buffer[[i, j]] += g;
        buffer[[j, i]] += g;
    }
    let n = q.n();
    for i in 0..n {
        for j in 0..n {
            q.q[[i, j]] -= eta * buffer[[i, j]];
        }
    }
    // sym(M) = (M + Mᵀ)/2
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (q.q[[i, j]] + q.q[[j, i]]);
            q.q[[i, j]] = m;
            q.q[[j, i]] = m;
        }
    }
    for i in 0..n {
        q.q[[i, i]] = q.log_eps;
    }
}

/// Hyper-gradient flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Foa,
    Fda,
}

/// Attack hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Total optimization iterations T.
    pub iters: usize,
    /// Step size η for Q updates.
    pub eta: f64,
    /// Single-step adaptation size α.
    pub alpha: f64,
    /// Relative finite-difference probe scale δ (FDA only).
    pub delta: f64,
    /// Neighbors sampled per node.
    pub gumbel_k: usize,
    /// Gumbel temperature τ.
    pub gumbel_tau: f64,
    /// Momentum on the Q gradient buffer.
    pub momentum: f64,
    pub loss: LossKind,
    pub mode: AttackMode,
    pub seed: u64,
    /// Q-initialization ε; `None` derives it from the graph's edge density.
    pub eps: Option<f64>,
    /// Whether the self-training loss also covers training nodes.
    pub self_loss_includes_train: bool,
    /// Treat the attack objective as summed (not averaged) over masked
    /// nodes by scaling η with the mask size. Averaged gradients shrink
    /// with the graph, leaving Q effectively frozen at realistic step
    /// sizes; summing keeps the optimization scale-invariant.
    pub sum_objective: bool,
    /// Gradient estimator for the Q updates.
    pub grad_chain: GradChain,
    pub surrogate: TrainSettings,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iters: 200,
            eta: 1e-3,
            alpha: 1e-3,
            delta: 1e-2,
            gumbel_k: 2,
            gumbel_tau: 1.0,
            momentum: 0.9,
            loss: LossKind::SelfCe,
            mode: AttackMode::Foa,
            seed: 0,
            eps: None,
            self_loss_includes_train: false,
            sum_objective: true,
            grad_chain: GradChain::Weight,
            surrogate: TrainSettings::default(),
        }
    }
}

impl AttackConfig {
    /// Defaults with k set near the graph's average degree.
    pub fn defaults_for(g: &Graph) -> Self {
        AttackConfig {
            gumbel_k: (g.average_degree().round() as usize).max(1),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(DgaError::InvalidInput("attack needs at least 1 iteration".into()));
        }
        if !(self.eta > 0.0) {
            return Err(DgaError::InvalidInput(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.gumbel_tau > 0.0) {
            return Err(DgaError::InvalidInput(format!(
                "gumbel tau must be positive, got {}",
                self.gumbel_tau
            )));
        }
        if self.gumbel_k == 0 {
            return Err(DgaError::InvalidInput("gumbel k must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DgaError::InvalidInput(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.alpha < 0.0 {
            return Err(DgaError::InvalidInput(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.mode == AttackMode::Fda && !(self.delta > 0.0) {
            return Err(DgaError::InvalidInput(format!(
                "fda delta must be positive, got {}",
                self.delta
            )));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(DgaError::InvalidInput(format!(
                    "eps must be positive, got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// ε used for Q initialization: configured value, or the graph's edge
    /// density (floored at 1e-8) when unset.
    pub fn effective_eps(&self, g: &Graph) -> f64 {
        self.eps.unwrap_or_else(|| {
            let n = g.num_nodes() as f64;
            if n < 2.0 {
                return 1e-8;
            }
            let density = 2.0 * g.num_edges() as f64 / (n * n);
            density.max(1e-8)
        })
    }
}

/// Per-iteration traces recorded during the attack.
#[derive(Debug, Clone, Default)]
pub struct AttackDiagnostics {
    /// ℓ_atk(θ̂_t, q̃_t), the minimized objective.
    pub attack_loss: Vec<f64>,
    /// L2 norm of the hyper-gradient used at each step.
    pub grad_norm: Vec<f64>,
    /// ‖q̃_t − q_t‖₂ per iteration.
    pub sampling_error: Vec<f64>,
}

impl AttackDiagnostics {
    /// Mean squared sampling error across iterations.
    pub fn avg_err(&self) -> f64 {
        if self.sampling_error.is_empty() {
            return 0.0;
        }
        self.sampling_error.iter().map(|e| e * e).sum::<f64>()
            / self.sampling_error.len() as f64
    }
}

/// Everything produced by an attack run.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub q: LogProbMatrix,
    pub diagnostics: AttackDiagnostics,
    pub surrogate: TrainedSurrogate,
    pub pseudo: LabelVector,
}

/// Runs the full attack: train a surrogate on the clean graph, then T
/// iterations of sample → adapt → hyper-gradient → update. No budget is
/// enforced here; the caller samples flips from the returned Q.
pub fn run_attack(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    split.validate(g.num_nodes())?;
    let trained = surrogate::train_surrogate(
        g,
        features,
        labels,
        split,
        &cfg.surrogate,
        seed_stream(cfg.seed, streams::SURROGATE),
    )?;
    let pseudo = surrogate::pseudo_labels(&trained.params, g, features, labels, split)?;
    let loss = AttackLoss::resolve(
        cfg.loss,
        labels,
        &pseudo,
        split,
        cfg.self_loss_includes_train,
    );
    if loss.mask.is_empty() {
        return Err(DgaError::InvalidInput(
            "attack loss mask is empty; nothing to attack".into(),
        ));
    }

    let eps = cfg.effective_eps(g);
    let mut q = init_log_prob(g, eps)?;
    let mut buffer = Array2::<f64>::zeros((g.num_nodes(), g.num_nodes()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(cfg.seed, streams::GUMBEL));
    let mut diagnostics = AttackDiagnostics::default();
    let eta = if cfg.sum_objective {
        cfg.eta * loss.mask.len() as f64
    } else {
        cfg.eta
    };

    for _ in 0..cfg.iters {
        let mut sampled = gumbel_top_k_sample(&q, cfg.gumbel_k, cfg.gumbel_tau, &mut rng)?;
        sampled.force_include_edges(g, &q);
        let theta_hat =
            single_step_adapt(&trained.params, &sampled, cfg.alpha, features, labels, split)?;
        let (d_q, attack_loss) = match cfg.mode {
            AttackMode::Foa => {
                hyper_gradient_foa(&theta_hat, &sampled, features, &loss, cfg.grad_chain)?
            }
            AttackMode::Fda => hyper_gradient_fda(
                &trained.params,
                &theta_hat,
                &sampled,
                cfg.alpha,
                cfg.delta,
                features,
                labels,
                split,
                &loss,
                cfg.grad_chain,
            )?,
        };
        let grad_norm = d_q.values().map(|v| v * v).sum::<f64>().sqrt();
        diagnostics.attack_loss.push(attack_loss);
        diagnostics.grad_norm.push(grad_norm);
        diagnostics.sampling_error.push(sampling_error(&q, &sampled));
        update_q(&mut q, &d_q, eta, cfg.momentum, &mut buffer);
    }
    Ok(AttackOutcome {
        q,
        diagnostics,
        surrogate: trained,
        pseudo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        build_graph(&edges, n).unwrap()
    }

    #[test]
    fn init_log_prob_values() {
        let g = build_graph(&[(0, 1)], 3).unwrap();
        let eps = 1e-8;
        let q = init_log_prob(&g, eps).unwrap();
        assert_abs_diff_eq!(q.get(0, 1), (1.0 + eps).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(0, 2), eps.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(q.get(0, 2), -18.4207, epsilon = 1e-4);
        assert_abs_diff_eq!(q.get(1, 1), eps.ln(), epsilon = 1e-12);
        // exp(Q₀) reconstructs A within ε everywhere
        for i in 0..3 {
            for j in 0..3 {
                let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                assert!((q.get(i, j).exp() - a).abs() <= eps * 1.0001 + 1e-15);
            }
        }
    }

    #[test]
    fn init_rejects_non_positive_eps() {
        let g = build_graph(&[], 2).unwrap();
        assert!(init_log_prob(&g, 0.0).is_err());
        assert!(init_log_prob(&g, -1.0).is_err());
    }

    #[test]
    fn gumbel_full_k_selects_everything() {
        let g = path_graph(4);
        let q = init_log_prob(&g, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sampled = gumbel_top_k_sample(&q, 3, 1.0, &mut rng).unwrap();
        assert_eq!(sampled.pairs().len(), 6); // all C(4,2) pairs
        for (idx, &(i, j)) in sampled.pairs().iter().enumerate() {
            assert_eq!(sampled.q_values()[idx], q.get(i, j));
        }
        assert_abs_diff_eq!(sampling_error(&q, &sampled), 0.0);
    }

    #[test]
    fn gumbel_zero_noise_is_plain_top_k() {
        let q = LogProbMatrix::from_matrix(
            array![
                [0.0, 3.0, 1.0, 2.0],
                [3.0, 0.0, -1.0, 0.5],
                [1.0, -1.0, 0.0, 4.0],
                [2.0, 0.5, 4.0, 0.0]
            ],
            -1.0,
        )
        .unwrap();
        let noise = Array2::<f64>::zeros((4, 4));
        let sampled = gumbel_top_k_with_noise(&q, 1, 1.0, &noise).unwrap();
        assert_eq!(sampled.picks(0), &[1]); // row 0: best is Q=3 at j=1
        assert_eq!(sampled.picks(1), &[0]);
        assert_eq!(sampled.picks(2), &[3]);
        assert_eq!(sampled.picks(3), &[2]);
    }

    #[test]
    fn gumbel_k_clamped_and_no_self_picks() {
        let g = path_graph(3);
        let q = init_log_prob(&g, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sampled = gumbel_top_k_sample(&q, 99, 1.0, &mut rng).unwrap();
        for i in 0..3 {
            assert_eq!(sampled.picks(i).len(), 2);
            assert!(!sampled.picks(i).contains(&i));
        }
    }

    #[test]
    fn sampling_error_uniform_counting() {
        // All off-diagonal entries equal c; error² = (#unsampled directed)·c².
        let c = 0.7;
        let mut m = Array2::from_elem((4, 4), c);
        for i in 0..4 {
            m[[i, i]] = -1.0;
        }
        let q = LogProbMatrix::from_matrix(m, -1.0).unwrap();
        let noise = Array2::<f64>::zeros((4, 4));
        let sampled = gumbel_top_k_with_noise(&q, 1, 1.0, &noise).unwrap();
        let unsampled_directed = 4 * 3 - 2 * sampled.pairs().len();
        let want = (unsampled_directed as f64 * c * c).sqrt();
        assert_abs_diff_eq!(sampling_error(&q, &sampled), want, epsilon = 1e-12);
    }

    fn tiny_instance() -> (Graph, FeatureMatrix, LabelVector, Split) {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (0, 3)], 4).unwrap();
        let features = FeatureMatrix::new(array![
            [1.0, 0.2],
            [0.1, 0.9],
            [0.8, 0.3],
            [0.2, 1.1]
        ])
        .unwrap();
        let labels = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let split = Split {
            train: vec![0, 1],
            val: vec![2],
            test: vec![3],
        };
        (g, features, labels, split)
    }

    #[test]
    fn adapt_zero_alpha_is_identity() {
        let (g, features, labels, split) = tiny_instance();
        let q = init_log_prob(&g, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sampled = gumbel_top_k_sample(&q, 2, 1.0, &mut rng).unwrap();
        let theta = SurrogateParams::init(2, 3, 2, 4);
        let adapted = single_step_adapt(&theta, &sampled, 0.0, &features, &labels, &split).unwrap();
        assert_eq!(adapted.w1, theta.w1);
        assert_eq!(adapted.w2, theta.w2);
    }

    #[test]
    fn adapt_matches_explicit_gradient_step() {
        let (g, features, labels, split) = tiny_instance();
        let q = init_log_prob(&g, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sampled = gumbel_top_k_sample(&q, 2, 1.0, &mut rng).unwrap();
        let theta = SurrogateParams::init(2, 3, 2, 6);
        let alpha = 1e-3;
        let adapted =
            single_step_adapt(&theta, &sampled, alpha, &features, &labels, &split).unwrap();
        let grads = grad_params(
            &theta,
            &features,
            &sampled.normalized_adjacency().unwrap(),
            &labels,
            &split.train,
        )
        .unwrap();
        for (got, want) in adapted
            .w1
            .iter()
            .zip((&theta.w1 - &(alpha * &grads.d_w1)).iter())
        {
            assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        }
        // determinism: same inputs, same result
        let again =
            single_step_adapt(&theta, &sampled, alpha, &features, &labels, &split).unwrap();
        assert_eq!(again.w1, adapted.w1);
        assert_eq!(again.w2, adapted.w2);
    }

    #[test]
    fn foa_support_is_sampled_pairs_only() {
        let (g, features, labels, split) = tiny_instance();
        let q = init_log_prob(&g, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sampled = gumbel_top_k_sample(&q, 1, 1.0, &mut rng).unwrap();
        let theta = SurrogateParams::init(2, 3, 2, 8);
        let pseudo = labels.clone();
        let loss = AttackLoss::resolve(LossKind::SelfCe, &labels, &pseudo, &split, false);
        let (d_q, _) =
            hyper_gradient_foa(&theta, &sampled, &features, &loss, GradChain::LogProb).unwrap();
        for key in d_q.keys() {
            assert!(sampled.contains_pair(key.0, key.1));
        }
    }

    #[test]
    fn fda_alpha_zero_equals_foa() {
        let (g, features, labels, split) = tiny_instance();
        let q = init_log_prob(&g, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sampled = gumbel_top_k_sample(&q, 2, 1.0, &mut rng).unwrap();
        let theta = SurrogateParams::init(2, 3, 2, 10);
        let pseudo = labels.clone();
        let loss = AttackLoss::resolve(LossKind::SelfCe, &labels, &pseudo, &split, false);
        let (foa, _) =
            hyper_gradient_foa(&theta, &sampled, &features, &loss, GradChain::LogProb).unwrap();
        let (fda, _) = hyper_gradient_fda(
            &theta,
            &theta,
            &sampled,
            0.0,
            1e-2,
            &features,
            &labels,
            &split,
            &loss,
            GradChain::LogProb,
        )
        .unwrap();
        assert_eq!(foa.len(), fda.len());
        for (key, v) in &foa {
            assert_eq!(fda[key], *v, "entry {key:?} differs");
        }
    }

    #[test]
    fn fda_zero_attack_gradient_drops_hessian_term() {
        // All-zero features force every weight gradient to zero, so the
        // probe direction vanishes and FDA equals FOA even with α > 0.
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let features = FeatureMatrix::new(Array2::zeros((3, 2))).unwrap();
        let labels = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let split = Split {
            train: vec![0],
            val: vec![],
            test: vec![1, 2],
        };
        let q = init_log_prob(&g, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sampled = gumbel_top_k_sample(&q, 1, 1.0, &mut rng).unwrap();
        let theta = SurrogateParams::init(2, 2, 2, 12);
        let loss = AttackLoss::resolve(LossKind::SelfCe, &labels, &labels, &split, false);
        let (foa, _) =
            hyper_gradient_foa(&theta, &sampled, &features, &loss, GradChain::Weight).unwrap();
        let (fda, _) = hyper_gradient_fda(
            &theta,
            &theta,
            &sampled,
            0.5,
            1e-2,
            &features,
            &labels,
            &split,
            &loss,
            GradChain::Weight,
        )
        .unwrap();
        for (key, v) in &foa {
            assert_eq!(fda[key], *v);
        }
    }

    #[test]
    fn update_q_zero_gradient_is_identity() {
        let g = path_graph(3);
        let mut q = init_log_prob(&g, 0.1).unwrap();
        let before = q.matrix().clone();
        let mut buffer = Array2::zeros((3, 3));
        update_q(&mut q, &BTreeMap::new(), 0.5, 0.9, &mut buffer);
        assert_eq!(q.matrix(), &before);
    }

    #[test]
    fn update_q_momentum_displacement() {
        // constant gradient g for two steps: total displacement η(g + 1.9g)
        let g = path_graph(3);
        let mut q = init_log_prob(&g, 0.1).unwrap();
        let before = q.get(0, 1);
        let mut buffer = Array2::zeros((3, 3));
        let mut d_q = BTreeMap::new();
        d_q.insert((0, 1), 2.0);
        let eta = 1e-3;
        update_q(&mut q, &d_q, eta, 0.9, &mut buffer);
        update_q(&mut q, &d_q, eta, 0.9, &mut buffer);
        let want = before - eta * 2.9 * 2.0;
        assert_abs_diff_eq!(q.get(0, 1), want, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(1, 0), want, epsilon = 1e-15);
    }

    #[test]
    fn update_q_keeps_symmetry_and_diagonal() {
        let g = path_graph(4);
        let mut q = init_log_prob(&g, 0.1).unwrap();
        let mut buffer = Array2::zeros((4, 4));
        let mut d_q = BTreeMap::new();
        d_q.insert((0, 2), 1.3);
        d_q.insert((1, 3), -0.4);
        update_q(&mut q, &d_q, 0.05, 0.9, &mut buffer);
        assert!(q.max_asymmetry() < 1e-12);
        for i in 0..4 {
            assert_eq!(q.get(i, i), q.log_eps());
        }
    }

    #[test]
    fn run_attack_rejects_zero_iters_and_traces_have_len_t() {
        let (g, features, labels, split) = tiny_instance();
        let mut cfg = AttackConfig::defaults_for(&g);
        cfg.surrogate.epochs = 5;
        cfg.iters = 0;
        assert!(run_attack(&g, &features, &labels, &split, &cfg).is_err());
        cfg.iters = 1;
        let out = run_attack(&g, &features, &labels, &split, &cfg).unwrap();
        assert_eq!(out.diagnostics.attack_loss.len(), 1);
        assert_eq!(out.diagnostics.grad_norm.len(), 1);
        assert_eq!(out.diagnostics.sampling_error.len(), 1);
        assert!(out.q.max_asymmetry() < 1e-12);
    }

    #[test]
    fn run_attack_is_deterministic() {
        let (g, features, labels, split) = tiny_instance();
        let mut cfg = AttackConfig::defaults_for(&g);
        cfg.surrogate.epochs = 10;
        cfg.iters = 5;
        cfg.seed = 77;
        let a = run_attack(&g, &features, &labels, &split, &cfg).unwrap();
        let b = run_attack(&g, &features, &labels, &split, &cfg).unwrap();
        assert_eq!(a.q.matrix(), b.q.matrix());
        assert_eq!(a.diagnostics.attack_loss, b.diagnostics.attack_loss);
        assert_eq!(a.diagnostics.sampling_error, b.diagnostics.sampling_error);
    }
}
