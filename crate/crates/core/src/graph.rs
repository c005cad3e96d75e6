//! Canonical graph representation and structural operations.
//!
//! Graphs are undirected, simple (no self-loops, no duplicate edges), and
//! immutable after construction. Perturbations produce new graphs.

use std::collections::BTreeMap;

use ndarray::Array2;
use once_cell::sync::OnceCell;

use crate::error::{DgaError, Result};
use crate::sparse::Csr;

/// Immutable undirected simple graph.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    /// Unordered pairs stored as (i, j) with i < j, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists, both directions.
    adj: Vec<Vec<usize>>,
    /// Original node ids when this graph is a re-indexed subgraph (LCC).
    node_ids: Option<Vec<usize>>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unordered edge pairs, (i, j) with i < j, ascending.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i >= self.num_nodes || j >= self.num_nodes {
            return false;
        }
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Mapping from this graph's node indices back to original ids, when the
    /// graph was produced by component extraction.
    pub fn node_ids(&self) -> Option<&[usize]> {
        self.node_ids.as_deref()
    }

    pub fn average_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }

    /// Unit-weight GCN propagation operator for this graph.
    pub fn normalized_adjacency(&self) -> NormalizedAdjacency {
        let weights = vec![1.0; self.edges.len()];
        NormalizedAdjacency::from_weighted_pairs(self.num_nodes, &self.edges, &weights)
            .expect("unit weights are valid")
    }

    /// Dense 0/1 adjacency matrix.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::<f64>::zeros((self.num_nodes, self.num_nodes));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }
}

/// Builds a graph from a raw edge list, deduplicating and dropping self-loops.
pub fn build_graph(edge_list: &[(usize, usize)], num_nodes: usize) -> Result<Graph> {
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(a, b) in edge_list {
        if a >= num_nodes || b >= num_nodes {
            return Err(DgaError::InvalidInput(format!(
                "edge ({a}, {b}) out of range for {num_nodes} nodes"
            )));
        }
        if a == b {
            continue;
        }
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    edges.dedup();

    let mut adj = vec![Vec::new(); num_nodes];
    for &(i, j) in &edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(Graph {
        num_nodes,
        edges,
        adj,
        node_ids: None,
    })
}

/// Node feature matrix, N × D.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    identity_fallback: bool,
    csr: OnceCell<Csr>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DgaError::InvalidInput(
                "feature matrix contains non-finite entries".into(),
            ));
        }
        Ok(FeatureMatrix {
            values,
            identity_fallback: false,
            csr: OnceCell::new(),
        })
    }

    /// Identity features for featureless datasets; flagged so that
    /// feature-based defenses can refuse them.
    pub fn identity(n: usize) -> Self {
        FeatureMatrix {
            values: Array2::eye(n),
            identity_fallback: true,
            csr: OnceCell::new(),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_identity_fallback(&self) -> bool {
        self.identity_fallback
    }

    pub(crate) fn csr(&self) -> &Csr {
        self.csr.get_or_init(|| Csr::from_dense(&self.values))
    }

    /// Row-permuted copy (used by component extraction).
    fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.values.ncols();
        let mut out = Array2::<f64>::zeros((rows.len(), d));
        for (new, &old) in rows.iter().enumerate() {
            out.row_mut(new).assign(&self.values.row(old));
        }
        FeatureMatrix {
            values: out,
            identity_fallback: self.identity_fallback,
            csr: OnceCell::new(),
        }
    }
}

/// Per-node class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(DgaError::InvalidInput(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn select(&self, rows: &[usize]) -> Self {
        LabelVector {
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Disjoint train/val/test node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(DgaError::InvalidInput(
                "split requires non-empty train and test sets".into(),
            ));
        }
        let mut seen = vec![false; num_nodes];
        for &n in self.train.iter().chain(&self.val).chain(&self.test) {
            if n >= num_nodes {
                return Err(DgaError::InvalidInput(format!(
                    "split node {n} out of range for {num_nodes} nodes"
                )));
            }
            if seen[n] {
                return Err(DgaError::InvalidInput(format!(
                    "split node {n} appears in more than one set"
                )));
            }
            seen[n] = true;
        }
        Ok(())
    }

    /// Nodes outside the training set, ascending.
    pub fn unlabeled(&self, num_nodes: usize) -> Vec<usize> {
        let mut in_train = vec![false; num_nodes];
        for &n in &self.train {
            in_train[n] = true;
        }
        (0..num_nodes).filter(|&n| !in_train[n]).collect()
    }
}

/// Symmetric message-passing operator Â = D̃^{-1/2} (W + I) D̃^{-1/2}.
///
/// Stored sparse (CSR) with the pre-normalization row sums kept for
/// backpropagation through the normalization.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    csr: Csr,
    /// Row sums of W + I (the D̃ diagonal).
    deg: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Builds Â from symmetric weighted pairs (i, j, w), i < j, plus implicit
    /// unit self-loops.
    pub fn from_weighted_pairs(
        n: usize,
        pairs: &[(usize, usize)],
        weights: &[f64],
    ) -> Result<Self> {
        assert_eq!(pairs.len(), weights.len());
        let mut deg = vec![1.0f64; n]; // self-loop weight
        for (&(i, j), &w) in pairs.iter().zip(weights) {
            if i >= n || j >= n || i == j {
                return Err(DgaError::InvalidInput(format!(
                    "weighted pair ({i}, {j}) invalid for {n} nodes"
                )));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(DgaError::InvalidInput(format!(
                    "edge weight {w} at ({i}, {j}) must be finite and non-negative"
                )));
            }
            deg[i] += w;
            deg[j] += w;
        }
        // Assemble symmetric triplets including the diagonal.
        let mut triplets = Vec::with_capacity(pairs.len() * 2 + n);
        for (&(i, j), &w) in pairs.iter().zip(weights) {
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        for (i, &d) in deg.iter().enumerate() {
            debug_assert!(d > 0.0);
            triplets.push((i, i, 1.0));
            let _ = d;
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for t in &mut triplets {
            t.2 /= (deg[t.0] * deg[t.1]).sqrt();
        }
        Ok(NormalizedAdjacency {
            csr: Csr::from_sorted_triplets(n, n, &triplets),
            deg,
        })
    }

    pub fn n(&self) -> usize {
        self.csr.n_rows
    }

    /// Pre-normalization degree (row sum of W + I) of a node.
    pub fn degree(&self, node: usize) -> f64 {
        self.deg[node]
    }

    /// Normalized entry Â_ij (zero when off the support).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.csr.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Support and values of row i.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.csr.row(i)
    }

    /// Â · rhs.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.csr.matmul(rhs)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut out = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let (cols, vals) = self.csr.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// Â from a dense symmetric non-negative matrix of edge weights.
pub fn gcn_normalize(weighted_adjacency: &Array2<f64>) -> Result<NormalizedAdjacency> {
    let (r, c) = weighted_adjacency.dim();
    if r != c {
        return Err(DgaError::InvalidInput(format!(
            "adjacency must be square, got {r}×{c}"
        )));
    }
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for i in 0..r {
        for j in (i + 1)..r {
            let w = weighted_adjacency[[i, j]];
            let wt = weighted_adjacency[[j, i]];
            if (w - wt).abs() > 1e-9 * (1.0 + w.abs().max(wt.abs())) {
                return Err(DgaError::InvalidInput(format!(
                    "adjacency not symmetric at ({i}, {j}): {w} vs {wt}"
                )));
            }
            if w < 0.0 || !w.is_finite() {
                return Err(DgaError::InvalidInput(format!(
                    "negative or non-finite weight {w} at ({i}, {j})"
                )));
            }
            if w != 0.0 {
                pairs.push((i, j));
                weights.push(w);
            }
        }
    }
    for i in 0..r {
        let d = weighted_adjacency[[i, i]];
        if d < 0.0 || !d.is_finite() {
            return Err(DgaError::InvalidInput(format!(
                "negative or non-finite diagonal {d} at ({i}, {i})"
            )));
        }
    }
    NormalizedAdjacency::from_weighted_pairs(r, &pairs, &weights)
}

/// Edge flip direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlipOp {
    Add,
    Remove,
}

impl FlipOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlipOp::Add => "add",
            FlipOp::Remove => "remove",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(FlipOp::Add),
            "remove" => Ok(FlipOp::Remove),
            other => Err(DgaError::InvalidInput(format!(
                "unknown flip op `{other}` (expected add/remove)"
            ))),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            FlipOp::Add => FlipOp::Remove,
            FlipOp::Remove => FlipOp::Add,
        }
    }
}

/// A set of edge flips defining a poisoned graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationSet {
    flips: Vec<(usize, usize, FlipOp)>,
}

impl PerturbationSet {
    /// Normalizes pairs to i < j and rejects self-pairs and duplicates.
    pub fn new(flips: Vec<(usize, usize, FlipOp)>) -> Result<Self> {
        let mut normalized: Vec<(usize, usize, FlipOp)> = flips
            .into_iter()
            .map(|(a, b, op)| (a.min(b), a.max(b), op))
            .collect();
        normalized.sort_unstable();
        for w in normalized.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(DgaError::InvalidInput(format!(
                    "duplicate flip on pair ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(&(i, j, _)) = normalized.iter().find(|&&(i, j, _)| i == j) {
            return Err(DgaError::InvalidInput(format!(
                "self-pair flip ({i}, {j}) is not allowed"
            )));
        }
        Ok(PerturbationSet { flips: normalized })
    }

    pub fn empty() -> Self {
        PerturbationSet { flips: Vec::new() }
    }

    pub fn flips(&self) -> &[(usize, usize, FlipOp)] {
        &self.flips
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// The same pairs with each op inverted.
    pub fn inverted(&self) -> Self {
        PerturbationSet {
            flips: self
                .flips
                .iter()
                .map(|&(i, j, op)| (i, j, op.inverse()))
                .collect(),
        }
    }
}

/// Applies edge flips, returning the poisoned graph.
///
/// Every `Add` must target a non-edge of `g` and every `Remove` an edge, so
/// that `‖A' − A‖₀ = 2·|flips|` holds exactly.
pub fn apply_perturbations(g: &Graph, p: &PerturbationSet) -> Result<Graph> {
    let mut edges: Vec<(usize, usize)> = g.edges.clone();
    let mut removed: Vec<(usize, usize)> = Vec::new();
    let mut added: Vec<(usize, usize)> = Vec::new();
    for &(i, j, op) in &p.flips {
        if i >= g.num_nodes || j >= g.num_nodes {
            return Err(DgaError::InvalidInput(format!(
                "flip ({i}, {j}) out of range for {} nodes",
                g.num_nodes
            )));
        }
        match op {
            FlipOp::Add => {
                if g.has_edge(i, j) {
                    return Err(DgaError::InvalidInput(format!(
                        "cannot add existing edge ({i}, {j})"
                    )));
                }
                added.push((i, j));
            }
            FlipOp::Remove => {
                if !g.has_edge(i, j) {
                    return Err(DgaError::InvalidInput(format!(
                        "cannot remove absent edge ({i}, {j})"
                    )));
                }
                removed.push((i, j));
            }
        }
    }
    removed.sort_unstable();
    edges.retain(|e| removed.binary_search(e).is_err());
    edges.extend(added);
    build_graph(&edges, g.num_nodes)
}

/// Histogram of node degrees.
pub fn degree_distribution(g: &Graph) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for node in 0..g.num_nodes {
        *hist.entry(g.degree(node)).or_insert(0) += 1;
    }
    hist
}

/// Extracts the induced subgraph on the largest connected component with
/// contiguous re-indexing; features and labels are permuted consistently.
///
/// Among equally sized components the one containing the lowest original
/// index wins. The returned map sends new indices to original ones.
pub fn largest_connected_component(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<(Graph, FeatureMatrix, LabelVector, Vec<usize>)> {
    if features.num_nodes() != g.num_nodes || labels.num_nodes() != g.num_nodes {
        return Err(DgaError::InvalidInput(format!(
            "features/labels rows ({}, {}) do not match {} nodes",
            features.num_nodes(),
            labels.num_nodes(),
            g.num_nodes
        )));
    }
    if g.num_nodes == 0 {
        return Err(DgaError::InvalidInput(
            "cannot take a component of an empty graph".into(),
        ));
    }
    let mut component = vec![usize::MAX; g.num_nodes];
    let mut sizes = Vec::new();
    for start in 0..g.num_nodes {
        if component[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut queue = vec![start];
        component[start] = id;
        let mut size = 0usize;
        while let Some(node) = queue.pop() {
            size += 1;
            for &nbr in g.neighbors(node) {
                if component[nbr] == usize::MAX {
                    component[nbr] = id;
                    queue.push(nbr);
                }
            }
        }
        sizes.push(size);
    }
    // First maximal component wins ties: components are discovered in order
    // of their lowest original index.
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
        .expect("non-empty graph has at least one component");

    let keep: Vec<usize> = (0..g.num_nodes).filter(|&n| component[n] == best).collect();
    let mut new_index = vec![usize::MAX; g.num_nodes];
    for (new, &old) in keep.iter().enumerate() {
        new_index[old] = new;
    }
    let sub_edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .filter(|&&(i, j)| component[i] == best && component[j] == best)
        .map(|&(i, j)| (new_index[i], new_index[j]))
        .collect();
    let mut sub = build_graph(&sub_edges, keep.len())?;
    sub.node_ids = Some(keep.clone());
    Ok((
        sub,
        features.select_rows(&keep),
        labels.select(&keep),
        keep,
    ))
}
