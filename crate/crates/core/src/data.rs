//! Dataset ingestion, synthetic generators, and file formats.
//!
//! A dataset directory holds `edges.csv` (one `src,dst` pair per line),
//! `labels.csv` (`node,label` lines), optional features (`features.csv`
//! dense rows or `features.triplet` sparse `node,dim,value` lines), and an
//! optional `split.json`. Ingestion extracts the largest connected
//! component and re-indexes everything consistently; a missing split is
//! generated stratified 10/10/80.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackDiagnostics, LogProbMatrix};
use crate::error::{DgaError, Result};
use crate::graph::{
    build_graph, largest_connected_component, FeatureMatrix, FlipOp, Graph, LabelVector,
    PerturbationSet, Split,
};
use crate::{seed_stream, streams};

/// A fully ingested dataset: LCC-extracted graph with aligned features,
/// labels, and split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub split: Split,
    /// Original node ids of the kept component, indexed by new id.
    pub id_map: Vec<usize>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DgaError {
    DgaError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads `src,dst` integer pairs, one per line. Undirected duplicates and
/// blank lines are tolerated.
pub fn read_edges_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let src = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(path, idx + 1, format!("bad edge line `{line}`")))?;
        let dst = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(path, idx + 1, format!("bad edge line `{line}`")))?;
        if parts.next().is_some() {
            return Err(parse_err(path, idx + 1, "expected exactly two columns"));
        }
        edges.push((src, dst));
    }
    Ok(edges)
}

pub fn write_edges_csv(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut out = String::new();
    for &(i, j) in edges {
        out.push_str(&format!("{i},{j}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads `node,label` lines; labels must cover every node index they span.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let node = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(path, idx + 1, format!("bad label line `{line}`")))?;
        let label = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(path, idx + 1, format!("bad label line `{line}`")))?;
        rows.push((node, label));
    }
    Ok(rows)
}

pub fn write_labels_csv(path: &Path, labels: &LabelVector) -> Result<()> {
    let mut out = String::new();
    for (node, &label) in labels.labels().iter().enumerate() {
        out.push_str(&format!("{node},{label}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Dense comma-separated feature rows.
pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_err(path, idx + 1, format!("bad feature value: {e}")))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat)
        .map_err(|e| DgaError::InvalidInput(format!("feature shape: {e}")))
}

pub fn write_features_csv(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let values = features.values();
    let mut out = String::new();
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sparse `node,dim,value` feature triplets.
pub fn read_features_triplet(path: &Path, num_nodes: usize) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut triplets = Vec::new();
    let mut max_dim = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(path, idx + 1, "expected node,dim,value"));
        }
        let node: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, idx + 1, format!("bad node: {e}")))?;
        let dim: usize = parts[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, idx + 1, format!("bad dim: {e}")))?;
        let value: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, idx + 1, format!("bad value: {e}")))?;
        if node >= num_nodes {
            return Err(parse_err(
                path,
                idx + 1,
                format!("node {node} out of range for {num_nodes} nodes"),
            ));
        }
        max_dim = max_dim.max(dim);
        triplets.push((node, dim, value));
    }
    let d = if triplets.is_empty() { 0 } else { max_dim + 1 };
    let mut out = Array2::<f64>::zeros((num_nodes, d));
    for (node, dim, value) in triplets {
        out[[node, dim]] = value;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

pub fn read_split_json(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path)?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| DgaError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(Split {
        train: file.train,
        val: file.val,
        test: file.test,
    })
}

pub fn write_split_json(path: &Path, split: &Split) -> Result<()> {
    let file = SplitFile {
        train: split.train.clone(),
        val: split.val.clone(),
        test: split.test.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| DgaError::Runtime(format!("split encode: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// `src,dst,op` lines with op ∈ {add, remove}.
pub fn write_perturbations_csv(path: &Path, p: &PerturbationSet) -> Result<()> {
    let mut out = String::new();
    for &(i, j, op) in p.flips() {
        out.push_str(&format!("{i},{j},{}\n", op.as_str()));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_perturbations_csv(path: &Path) -> Result<PerturbationSet> {
    let text = std::fs::read_to_string(path)?;
    let mut flips = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(path, idx + 1, "expected src,dst,op"));
        }
        let src: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, idx + 1, format!("bad src: {e}")))?;
        let dst: usize = parts[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, idx + 1, format!("bad dst: {e}")))?;
        let op = FlipOp::parse(parts[2].trim())
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        flips.push((src, dst, op));
    }
    PerturbationSet::new(flips)
}

/// Binary Q dump: 8-byte little-endian node count, then row-major f64.
pub fn write_qmatrix(path: &Path, q: &LogProbMatrix) -> Result<()> {
    let n = q.n();
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(n as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(n * n * 8);
    for v in q.matrix().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_qmatrix(path: &Path) -> Result<Array2<f64>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header)?;
    let n = u64::from_le_bytes(header) as usize;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.len() != n * n * 8 {
        return Err(DgaError::InvalidInput(format!(
            "qmatrix payload holds {} bytes, expected {} for n = {n}",
            buf.len(),
            n * n * 8
        )));
    }
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((n, n), values)
        .map_err(|e| DgaError::InvalidInput(format!("qmatrix shape: {e}")))
}

/// `iter,attack_loss,grad_norm,sampling_error` with a header line.
pub fn write_diagnostics_csv(path: &Path, d: &AttackDiagnostics) -> Result<()> {
    let mut out = String::from("iter,attack_loss,grad_norm,sampling_error\n");
    for i in 0..d.attack_loss.len() {
        out.push_str(&format!(
            "{i},{},{},{}\n",
            d.attack_loss[i], d.grad_norm[i], d.sampling_error[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<AttackDiagnostics> {
    let text = std::fs::read_to_string(path)?;
    let mut d = AttackDiagnostics::default();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != "iter,attack_loss,grad_norm,sampling_error" {
                return Err(parse_err(path, 1, "bad diagnostics header"));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(parse_err(path, idx + 1, "expected four columns"));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| parse_err(path, idx + 1, format!("bad number: {e}")))
        };
        d.attack_loss.push(parse(parts[1])?);
        d.grad_norm.push(parse(parts[2])?);
        d.sampling_error.push(parse(parts[3])?);
    }
    Ok(d)
}

/// Δ = round-half-up(rate × num_edges), at least 1 for positive rates.
pub fn budget_from_rate(rate: f64, num_edges: usize) -> Result<usize> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(DgaError::InvalidInput(format!(
            "budget rate {rate} outside (0, 1)"
        )));
    }
    let delta = (rate * num_edges as f64 + 0.5).floor() as usize;
    Ok(delta.max(1))
}

/// Stratified split: per class, `train_frac`/`val_frac` of the nodes (round
/// half up, at least one train node per class) with the rest as test.
pub fn generate_split(
    labels: &LabelVector,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<Split> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(DgaError::InvalidInput(format!(
            "bad split fractions ({train_frac}, {val_frac})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node, &label) in labels.labels().iter().enumerate() {
        by_class.entry(label).or_default().push(node);
    }
    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for (_, mut nodes) in by_class {
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        let n_train = ((train_frac * n as f64 + 0.5).floor() as usize).clamp(1, n);
        let n_val = ((val_frac * n as f64 + 0.5).floor() as usize).min(n - n_train);
        split.train.extend(&nodes[..n_train]);
        split.val.extend(&nodes[n_train..n_train + n_val]);
        split.test.extend(&nodes[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    if split.test.is_empty() {
        return Err(DgaError::InvalidInput(
            "dataset too small for a stratified split with a non-empty test set".into(),
        ));
    }
    Ok(split)
}

/// Two-moment stochastic block model: contiguous equal-sized blocks, labels
/// equal to block ids, features one-hot block membership plus Gaussian
/// noise (σ = 0.1).
pub fn generate_sbm(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(Graph, FeatureMatrix, LabelVector)> {
    if blocks == 0 || n == 0 {
        return Err(DgaError::InvalidInput("need at least one block and node".into()));
    }
    if blocks > n {
        return Err(DgaError::InvalidInput(format!(
            "{blocks} blocks over {n} nodes leaves an empty block"
        )));
    }
    if !(p_out >= 0.0 && p_out < p_in && p_in <= 1.0) {
        return Err(DgaError::InvalidInput(format!(
            "probabilities must satisfy 0 ≤ p_out < p_in ≤ 1, got ({p_in}, {p_out})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // contiguous blocks, remainder spread over the first blocks
    let base = n / blocks;
    let extra = n % blocks;
    let mut block_of = Vec::with_capacity(n);
    for b in 0..blocks {
        let size = base + usize::from(b < extra);
        block_of.extend(std::iter::repeat(b).take(size));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of[i] == block_of[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = build_graph(&edges, n)?;
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let mut values = Array2::<f64>::zeros((n, blocks));
    for i in 0..n {
        for b in 0..blocks {
            let one_hot = if block_of[i] == b { 1.0 } else { 0.0 };
            values[[i, b]] = one_hot + noise.sample(&mut rng);
        }
    }
    let features = FeatureMatrix::new(values)?;
    let labels = LabelVector::new(block_of, blocks)?;
    Ok((graph, features, labels))
}

/// Loads a dataset directory, extracts the LCC, and attaches a split
/// (loaded from `split.json` and remapped through the LCC, or generated
/// stratified 10/10/80 with the run seed).
pub fn ingest(dir: &Path, seed: u64) -> Result<Dataset> {
    let edges_path = dir.join("edges.csv");
    let labels_path = dir.join("labels.csv");
    if !edges_path.exists() {
        return Err(DgaError::InvalidInput(format!(
            "missing {}",
            edges_path.display()
        )));
    }
    if !labels_path.exists() {
        return Err(DgaError::InvalidInput(format!(
            "missing {} (labels are required)",
            labels_path.display()
        )));
    }
    let raw_edges = read_edges_csv(&edges_path)?;
    let label_rows = read_labels_csv(&labels_path)?;
    let max_edge_node = raw_edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .max()
        .unwrap_or(0);
    let max_label_node = label_rows.iter().map(|&(n, _)| n).max().unwrap_or(0);
    let n = (max_edge_node.max(max_label_node)) + 1;

    let mut labels_vec = vec![usize::MAX; n];
    for &(node, label) in &label_rows {
        labels_vec[node] = label;
    }
    if let Some(missing) = labels_vec.iter().position(|&l| l == usize::MAX) {
        return Err(DgaError::InvalidInput(format!(
            "node {missing} has no label in {}",
            labels_path.display()
        )));
    }
    let num_classes = labels_vec.iter().max().map(|&m| m + 1).unwrap_or(1);
    let labels = LabelVector::new(labels_vec, num_classes)?;
    let graph = build_graph(&raw_edges, n)?;

    let features_csv = dir.join("features.csv");
    let features_triplet = dir.join("features.triplet");
    let features = if features_csv.exists() {
        let values = read_features_csv(&features_csv)?;
        if values.nrows() != n {
            return Err(DgaError::InvalidInput(format!(
                "features.csv has {} rows but the dataset spans {n} nodes",
                values.nrows()
            )));
        }
        FeatureMatrix::new(values)?
    } else if features_triplet.exists() {
        FeatureMatrix::new(read_features_triplet(&features_triplet, n)?)?
    } else {
        FeatureMatrix::identity(n)
    };

    let (graph, features, labels, id_map) =
        largest_connected_component(&graph, &features, &labels)?;

    let split_path = dir.join("split.json");
    let split = if split_path.exists() {
        let raw = read_split_json(&split_path)?;
        // remap original indices through the LCC, dropping absent nodes
        let mut new_index = vec![None; n];
        for (new, &old) in id_map.iter().enumerate() {
            new_index[old] = Some(new);
        }
        let remap = |nodes: &[usize]| -> Result<Vec<usize>> {
            let mut out = Vec::with_capacity(nodes.len());
            for &node in nodes {
                if node >= n {
                    return Err(DgaError::InvalidInput(format!(
                        "split.json node {node} out of range for {n} nodes"
                    )));
                }
                if let Some(mapped) = new_index[node] {
                    out.push(mapped);
                }
            }
            Ok(out)
        };
        Split {
            train: remap(&raw.train)?,
            val: remap(&raw.val)?,
            test: remap(&raw.test)?,
        }
    } else {
        generate_split(&labels, 0.1, 0.1, seed_stream(seed, streams::SPLIT))?
    };
    split.validate(graph.num_nodes())?;
    Ok(Dataset {
        graph,
        features,
        labels,
        split,
        id_map,
    })
}

/// Writes a dataset back as a canonical bundle. Identity-fallback features
/// are not materialized, so re-ingesting falls back identically.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_edges_csv(&dir.join("edges.csv"), dataset.graph.edges())?;
    write_labels_csv(&dir.join("labels.csv"), &dataset.labels)?;
    if !dataset.features.is_identity_fallback() {
        write_features_csv(&dir.join("features.csv"), &dataset.features)?;
    }
    write_split_json(&dir.join("split.json"), &dataset.split)?;
    Ok(())
}
