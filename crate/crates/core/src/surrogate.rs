//! Two-layer GCN surrogate with manual backpropagation.
//!
//! The forward pass is `logits = Â · relu(Â · X · W1) · W2`. Gradients are
//! derived by hand both for the weights and for sampled edge
//! log-probabilities, where the chain runs
//! `q → w = exp(q) → Â = D̃^{-1/2}(W + I)D̃^{-1/2} → forward → loss`.
//! All attack-path math is in `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgaError, Result};
use crate::graph::{FeatureMatrix, Graph, LabelVector, NormalizedAdjacency, Split};

/// Weights of the two-layer GCN.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl SurrogateParams {
    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.ncols()
    }

    /// Glorot-uniform initialization.
    pub fn init(d: usize, hidden: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        };
        SurrogateParams {
            w1: glorot(d, hidden),
            w2: glorot(hidden, c),
        }
    }

    fn check_shapes(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.w1.nrows() {
            return Err(DgaError::InvalidInput(format!(
                "feature dim {} does not match W1 rows {}",
                features.dim(),
                self.w1.nrows()
            )));
        }
        if self.w1.ncols() != self.w2.nrows() {
            return Err(DgaError::InvalidInput(format!(
                "W1 cols {} do not match W2 rows {}",
                self.w1.ncols(),
                self.w2.nrows()
            )));
        }
        Ok(())
    }
}

/// Which loss the attack differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Cross-entropy on the training set with true labels.
    TrainCe,
    /// Cross-entropy on unlabeled nodes with pseudo-labels.
    SelfCe,
}

/// Gradients of a loss with respect to weights and/or sampled edge
/// log-probabilities. Unrequested parts are left empty.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub d_w1: Array2<f64>,
    pub d_w2: Array2<f64>,
    pub d_q: BTreeMap<(usize, usize), f64>,
    /// Loss value at the evaluation point.
    pub loss: f64,
}

struct ForwardCache {
    u: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    u2: Array2<f64>,
    z: Array2<f64>,
}

fn forward_cached(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    adj: &NormalizedAdjacency,
    dropout_mask: Option<&Array2<f64>>,
) -> Result<ForwardCache> {
    params.check_shapes(features)?;
    if adj.n() != features.num_nodes() {
        return Err(DgaError::InvalidInput(format!(
            "adjacency size {} does not match {} feature rows",
            adj.n(),
            features.num_nodes()
        )));
    }
    let u = features.csr().matmul(&params.w1);
    let a1 = adj.matmul(&u);
    let mut h1 = a1.mapv(|v| v.max(0.0));
    if let Some(mask) = dropout_mask {
        h1 *= mask;
    }
    let u2 = h1.dot(&params.w2);
    let z = adj.matmul(&u2);
    Ok(ForwardCache { u, a1, h1, u2, z })
}

/// Logits of every node, `Â · relu(Â · X · W1) · W2`.
pub fn forward(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    adj: &NormalizedAdjacency,
) -> Result<Array2<f64>> {
    let cache = forward_cached(params, features, adj, None)?;
    if cache.z.iter().any(|v| !v.is_finite()) {
        return Err(DgaError::Runtime("non-finite logits in forward".into()));
    }
    Ok(cache.z)
}

/// Mean cross-entropy of the masked nodes. Softmax subtracts the rowwise
/// maximum before exponentiation.
pub fn cross_entropy(logits: &Array2<f64>, labels: &LabelVector, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(DgaError::InvalidInput(
            "cross-entropy over an empty mask".into(),
        ));
    }
    let mut total = 0.0;
    for &node in mask {
        let row = logits.row(node);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels.label(node)];
    }
    Ok(total / mask.len() as f64)
}

/// Per-node softmax probabilities (rowwise max subtracted).
fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// ∂(mean CE)/∂logits, zero outside the mask.
fn loss_logit_grad(z: &Array2<f64>, labels: &LabelVector, mask: &[usize]) -> Array2<f64> {
    let probs = softmax_rows(z);
    let mut dz = Array2::<f64>::zeros(z.dim());
    let scale = 1.0 / mask.len() as f64;
    for &node in mask {
        let y = labels.label(node);
        for c in 0..z.ncols() {
            let delta = if c == y { 1.0 } else { 0.0 };
            dz[[node, c]] = (probs[[node, c]] - delta) * scale;
        }
    }
    dz
}

struct BackwardPieces {
    dz: Array2<f64>,
    da1: Array2<f64>,
    d_w1: Array2<f64>,
    d_w2: Array2<f64>,
}

fn backward_cached(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    adj: &NormalizedAdjacency,
    cache: &ForwardCache,
    labels: &LabelVector,
    mask: &[usize],
    dropout_mask: Option<&Array2<f64>>,
) -> BackwardPieces {
    let dz = loss_logit_grad(&cache.z, labels, mask);
    // Â is symmetric, so the adjoint of Â·M is Â·(upstream).
    let du2 = adj.matmul(&dz);
    let d_w2 = cache.h1.t().dot(&du2);
    let mut dh1 = du2.dot(&params.w2.t());
    if let Some(m) = dropout_mask {
        dh1 *= m;
    }
    let da1 = &dh1 * &cache.a1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let du = adj.matmul(&da1);
    let d_w1 = features.csr().t_matmul(&du);
    BackwardPieces {
        dz,
        da1,
        d_w1,
        d_w2,
    }
}

/// Gradient of the mean cross-entropy over `mask` with respect to W1 and W2.
pub fn grad_params(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    adj: &NormalizedAdjacency,
    labels: &LabelVector,
    mask: &[usize],
) -> Result<GradBundle> {
    if mask.is_empty() {
        return Err(DgaError::InvalidInput("gradient over an empty mask".into()));
    }
    let cache = forward_cached(params, features, adj, None)?;
    let loss = cross_entropy(&cache.z, labels, mask)?;
    let pieces = backward_cached(params, features, adj, &cache, labels, mask, None);
    Ok(GradBundle {
        d_w1: pieces.d_w1,
        d_w2: pieces.d_w2,
        d_q: BTreeMap::new(),
        loss,
    })
}

/// Shared core of the edge-gradient operations: gradient of the mean
/// cross-entropy with respect to the symmetric pair weights of the sampled
/// weighted graph (before any reparameterization chain).
fn grad_edge_pair_weights(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    pairs: &[(usize, usize)],
    weights: &[f64],
    labels: &LabelVector,
    mask: &[usize],
) -> Result<(BTreeMap<(usize, usize), f64>, f64)> {
    if mask.is_empty() {
        return Err(DgaError::InvalidInput("gradient over an empty mask".into()));
    }
    if pairs.len() != weights.len() {
        return Err(DgaError::InvalidInput(format!(
            "{} pairs but {} weights",
            pairs.len(),
            weights.len()
        )));
    }
    let n = features.num_nodes();
    let adj = NormalizedAdjacency::from_weighted_pairs(n, pairs, weights)?;
    let cache = forward_cached(params, features, &adj, None)?;
    let loss = cross_entropy(&cache.z, labels, mask)?;
    let pieces = backward_cached(params, features, &adj, &cache, labels, mask, None);

    // Adjoint of the normalized operator at its support:
    //   G_ij = Σ_c dZ_ic · U2_jc + Σ_h dA1_ih · U_jh
    // then through Â = D̃^{-1/2}(W + I)D̃^{-1/2} with d_k = row sums of
    // W + I. Entry W̃_kl feeds Â directly and through d_k alone (it lives in
    // row k only), giving
    //   ∂L/∂W̃_kl = G_kl / sqrt(d_k d_l) − u_k,
    //   u_k = (Σ_j G_kj Â_kj + Σ_j G_jk Â_jk) / (2 d_k).
    let g_at = |i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..cache.u2.ncols() {
            acc += pieces.dz[[i, c]] * cache.u2[[j, c]];
        }
        for h in 0..cache.u.ncols() {
            acc += pieces.da1[[i, h]] * cache.u[[j, h]];
        }
        acc
    };
    let mut u_corr = vec![0.0f64; n];
    for k in 0..n {
        let (cols, vals) = adj.row(k);
        let mut acc = 0.0;
        for (&j, &a_kj) in cols.iter().zip(vals) {
            // Â is symmetric, so Â_jk = Â_kj covers the column sum too.
            acc += (g_at(k, j) + g_at(j, k)) * a_kj;
        }
        u_corr[k] = acc / (2.0 * adj.degree(k));
    }
    let mut d_w = BTreeMap::new();
    for &(i, j) in pairs {
        let scale = 1.0 / (adj.degree(i) * adj.degree(j)).sqrt();
        let dw_sum = (g_at(i, j) + g_at(j, i)) * scale - u_corr[i] - u_corr[j];
        d_w.insert((i, j), dw_sum);
    }
    Ok((d_w, loss))
}

/// Gradient of the mean cross-entropy with respect to sampled edge
/// log-probabilities.
///
/// `pairs` are the sampled unordered positions (i < j) and `log_probs` the
/// matching q values; the induced weighted graph carries `exp(q)` at each
/// sampled position, symmetrically, and the gradient includes the exp and
/// symmetric-normalization chain. Pairs outside the sample have gradient
/// exactly zero and are absent from the result.
pub fn grad_edge_logprobs(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    pairs: &[(usize, usize)],
    log_probs: &[f64],
    labels: &LabelVector,
    mask: &[usize],
) -> Result<GradBundle> {
    let weights: Vec<f64> = log_probs.iter().map(|&q| q.exp()).collect();
    let (d_w, loss) = grad_edge_pair_weights(params, features, pairs, &weights, labels, mask)?;
    let d_q = pairs
        .iter()
        .zip(&weights)
        .map(|(&pair, &w)| (pair, d_w[&pair] * w))
        .collect();
    Ok(GradBundle {
        d_w1: Array2::zeros((0, 0)),
        d_w2: Array2::zeros((0, 0)),
        d_q,
        loss,
    })
}

/// Gradient of the mean cross-entropy with respect to the sampled pair
/// weights themselves (no log chain): the exponentiated-gradient companion
/// of [`grad_edge_logprobs`] for updates on the positive orthant.
pub fn grad_edge_weights(
    params: &SurrogateParams,
    features: &FeatureMatrix,
    pairs: &[(usize, usize)],
    weights: &[f64],
    labels: &LabelVector,
    mask: &[usize],
) -> Result<GradBundle> {
    let (d_q, loss) = grad_edge_pair_weights(params, features, pairs, weights, labels, mask)?;
    Ok(GradBundle {
        d_w1: Array2::zeros((0, 0)),
        d_w2: Array2::zeros((0, 0)),
        d_q,
        loss,
    })
}

/// Training hyperparameters for surrogate and victim models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 1e-2,
            weight_decay: 5e-4,
            epochs: 200,
            hidden: 16,
            dropout: 0.0,
        }
    }
}

impl TrainSettings {
    /// Victim configuration: surrogate defaults plus dropout 0.5.
    pub fn victim() -> Self {
        TrainSettings {
            dropout: 0.5,
            ..Default::default()
        }
    }
}

/// A trained model together with its training traces.
#[derive(Debug, Clone)]
pub struct TrainedSurrogate {
    pub params: SurrogateParams,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Epoch whose parameters were selected (best validation accuracy).
    pub best_epoch: usize,
}

struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Self {
        Adam {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    fn step(&mut self, w: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, t: usize) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let t = t as i32;
        for ((w, (m, v)), &g) in w
            .iter_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(grad.iter())
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            let m_hat = *m / (1.0 - B1.powi(t));
            let v_hat = *v / (1.0 - B2.powi(t));
            *w -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Fraction of masked nodes whose argmax logit matches the label. Ties go to
/// the lowest class index.
pub fn accuracy(logits: &Array2<f64>, labels: &LabelVector, mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let hits = mask
        .iter()
        .filter(|&&node| argmax_row(logits, node) == labels.label(node))
        .count();
    hits as f64 / mask.len() as f64
}

fn argmax_row(logits: &Array2<f64>, node: usize) -> usize {
    let row = logits.row(node);
    let mut best = 0usize;
    let mut best_val = row[0];
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = c;
            best_val = v;
        }
    }
    best
}

/// Trains a GCN on the given weighted operator.
///
/// Adam with weight decay, full-batch epochs, dropout on the hidden layer
/// when configured, and parameter selection at the epoch with the best
/// validation accuracy (final epoch when the validation set is empty).
pub fn train_on_adjacency(
    adj: &NormalizedAdjacency,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainedSurrogate> {
    if split.train.is_empty() {
        return Err(DgaError::InvalidInput(
            "training requires a non-empty train split".into(),
        ));
    }
    if settings.hidden == 0 {
        return Err(DgaError::InvalidInput("hidden size must be ≥ 1".into()));
    }
    if !(0.0..1.0).contains(&settings.dropout) {
        return Err(DgaError::InvalidInput(format!(
            "dropout {} outside [0, 1)",
            settings.dropout
        )));
    }
    let n = features.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SurrogateParams::init(
        features.dim(),
        settings.hidden,
        labels.num_classes(),
        rng.random::<u64>(),
    );
    params.check_shapes(features)?;

    let mut adam1 = Adam::new(params.w1.dim());
    let mut adam2 = Adam::new(params.w2.dim());
    let mut train_loss = Vec::with_capacity(settings.epochs);
    let mut val_accuracy = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, usize, SurrogateParams)> = None;

    for epoch in 0..settings.epochs {
        let dropout_mask = if settings.dropout > 0.0 {
            let keep = 1.0 - settings.dropout;
            Some(Array2::from_shape_fn((n, settings.hidden), |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            }))
        } else {
            None
        };
        let cache = forward_cached(&params, features, adj, dropout_mask.as_ref())?;
        let loss = cross_entropy(&cache.z, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(DgaError::Runtime(format!(
                "training diverged at epoch {epoch} (loss {loss}); trace tail {:?}",
                &train_loss[train_loss.len().saturating_sub(5)..]
            )));
        }
        train_loss.push(loss);
        let pieces = backward_cached(
            &params,
            features,
            adj,
            &cache,
            labels,
            &split.train,
            dropout_mask.as_ref(),
        );
        let mut g1 = pieces.d_w1;
        let mut g2 = pieces.d_w2;
        if settings.weight_decay > 0.0 {
            g1 += &(settings.weight_decay * &params.w1);
            g2 += &(settings.weight_decay * &params.w2);
        }
        adam1.step(&mut params.w1, &g1, settings.lr, epoch + 1);
        adam2.step(&mut params.w2, &g2, settings.lr, epoch + 1);

        if !split.val.is_empty() {
            let logits = forward(&params, features, adj)?;
            let acc = accuracy(&logits, labels, &split.val);
            val_accuracy.push(acc);
            let better = match &best {
                Some((best_acc, _, _)) => acc > *best_acc,
                None => true,
            };
            if better {
                best = Some((acc, epoch, params.clone()));
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, epoch, snapshot)) => (snapshot, epoch),
        None => (params, settings.epochs.saturating_sub(1)),
    };
    Ok(TrainedSurrogate {
        params,
        train_loss,
        val_accuracy,
        best_epoch,
    })
}

/// Trains a surrogate on the clean (unit-weight) graph.
pub fn train_surrogate(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainedSurrogate> {
    train_on_adjacency(
        &g.normalized_adjacency(),
        features,
        labels,
        split,
        settings,
        seed,
    )
}

/// Labels used by the self-training loss: training nodes keep their true
/// labels, every other node takes the surrogate's clean-graph argmax.
pub fn pseudo_labels(
    params: &SurrogateParams,
    g: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
) -> Result<LabelVector> {
    let logits = forward(params, features, &g.normalized_adjacency())?;
    let mut out = Vec::with_capacity(g.num_nodes());
    let mut in_train = vec![false; g.num_nodes()];
    for &t in &split.train {
        in_train[t] = true;
    }
    for node in 0..g.num_nodes() {
        if in_train[node] {
            out.push(labels.label(node));
        } else {
            out.push(argmax_row(&logits, node));
        }
    }
    LabelVector::new(out, labels.num_classes())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    /// Row-major weights.
    w1: Vec<f64>,
    w2: Vec<f64>,
    hyper: TrainSettings,
}

/// Writes a JSON checkpoint with shapes, row-major weights, and the training
/// hyperparameters used.
pub fn save_checkpoint(
    params: &SurrogateParams,
    hyper: &TrainSettings,
    path: &Path,
) -> Result<()> {
    let ck = Checkpoint {
        input_dim: params.w1.nrows(),
        hidden_dim: params.w1.ncols(),
        num_classes: params.w2.ncols(),
        w1: params.w1.iter().cloned().collect(),
        w2: params.w2.iter().cloned().collect(),
        hyper: hyper.clone(),
    };
    let json = serde_json::to_string_pretty(&ck)
        .map_err(|e| DgaError::Runtime(format!("checkpoint encode: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SurrogateParams, TrainSettings)> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| DgaError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let w1 = Array2::from_shape_vec((ck.input_dim, ck.hidden_dim), ck.w1)
        .map_err(|e| DgaError::InvalidInput(format!("checkpoint W1 shape: {e}")))?;
    let w2 = Array2::from_shape_vec((ck.hidden_dim, ck.num_classes), ck.w2)
        .map_err(|e| DgaError::InvalidInput(format!("checkpoint W2 shape: {e}")))?;
    Ok((SurrogateParams { w1, w2 }, ck.hyper))
}
