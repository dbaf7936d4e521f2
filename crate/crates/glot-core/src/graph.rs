//! Token-similarity graph construction and block-diagonal batching.
//!
//! Nodes are a sentence's valid tokens; a directed edge (src, dst) exists
//! for every ordered pair whose cosine similarity strictly exceeds the
//! threshold, plus one self-loop per node so aggregation always has at
//! least one input. Edges are kept sorted by (dst, src), which fixes the
//! message summation order.

use serde::{Deserialize, Serialize};

use crate::error::{GlotError, Result};
use crate::numeric::{cosine_similarity_matrix, Matrix};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Similarity threshold; an edge needs S_ij > tau.
    pub tau: f64,
    pub add_self_loops: bool,
    /// Materialize both directions of each above-threshold pair. When
    /// false only the src < dst direction is kept.
    pub symmetric: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { tau: 0.6, add_self_loops: true, symmetric: true }
    }
}

/// A batch of per-sentence token graphs stored block-diagonally.
#[derive(Clone, Debug)]
pub struct TokenGraph {
    pub node_features: Matrix,
    /// Directed (src, dst) pairs sorted by (dst, src).
    pub edges: Vec<(usize, usize)>,
    /// Graph id per node, non-decreasing.
    pub batch_index: Vec<usize>,
    /// Node count per sentence.
    pub graph_sizes: Vec<usize>,
}

impl TokenGraph {
    pub fn total_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn n_graphs(&self) -> usize {
        self.graph_sizes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// In-degree per node over the stored edge list (self-loops included
    /// if present).
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.total_nodes()];
        for &(_, dst) in &self.edges {
            deg[dst] += 1;
        }
        deg
    }

    pub fn non_loop_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(|(s, d)| s != d)
    }

    /// Structural sanity check used by tests: endpoints in range, no
    /// cross-sentence edges, sorted order, self-loop and symmetry laws.
    pub fn validate(&self, cfg: &GraphConfig) -> Result<()> {
        let n = self.total_nodes();
        if self.batch_index.len() != n {
            return Err(GlotError::ShapeMismatch {
                op: "TokenGraph::validate",
                detail: "batch_index length != node count".into(),
            });
        }
        if self.graph_sizes.iter().sum::<usize>() != n {
            return Err(GlotError::ShapeMismatch {
                op: "TokenGraph::validate",
                detail: "graph_sizes do not sum to node count".into(),
            });
        }
        let mut prev: Option<(usize, usize)> = None;
        for &(src, dst) in &self.edges {
            if src >= n || dst >= n {
                return Err(GlotError::ShapeMismatch {
                    op: "TokenGraph::validate",
                    detail: format!("edge ({src},{dst}) out of {n} nodes"),
                });
            }
            if self.batch_index[src] != self.batch_index[dst] {
                return Err(GlotError::ShapeMismatch {
                    op: "TokenGraph::validate",
                    detail: format!("edge ({src},{dst}) crosses sentence boundary"),
                });
            }
            let key = (dst, src);
            if let Some(p) = prev {
                if key < p {
                    return Err(GlotError::ShapeMismatch {
                        op: "TokenGraph::validate",
                        detail: "edges not sorted by (dst, src)".into(),
                    });
                }
            }
            prev = Some(key);
        }
        if cfg.add_self_loops {
            let mut has_loop = vec![false; n];
            for &(src, dst) in &self.edges {
                if src == dst {
                    has_loop[src] = true;
                }
            }
            if has_loop.iter().any(|&b| !b) {
                return Err(GlotError::ShapeMismatch {
                    op: "TokenGraph::validate",
                    detail: "missing self-loop".into(),
                });
            }
        }
        if cfg.symmetric {
            let set: std::collections::HashSet<(usize, usize)> =
                self.edges.iter().copied().collect();
            for &(src, dst) in &self.edges {
                if !set.contains(&(dst, src)) {
                    return Err(GlotError::ShapeMismatch {
                        op: "TokenGraph::validate",
                        detail: format!("edge ({src},{dst}) lacks its reverse"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds the token graph of one sentence from its valid (unmasked)
/// hidden states. Padding must already be dropped by the caller.
pub fn build_token_graph(h_valid: &Matrix, cfg: &GraphConfig) -> Result<TokenGraph> {
    if h_valid.rows() == 0 {
        return Err(GlotError::EmptySentence);
    }
    let s = cosine_similarity_matrix(h_valid)?;
    let l = h_valid.rows();
    let mut edges = Vec::new();
    for dst in 0..l {
        for src in 0..l {
            if src == dst {
                if cfg.add_self_loops {
                    edges.push((src, dst));
                }
                continue;
            }
            if !cfg.symmetric && src > dst {
                continue;
            }
            if s.get(src, dst) > cfg.tau {
                edges.push((src, dst));
            }
        }
    }
    Ok(TokenGraph {
        node_features: h_valid.clone(),
        edges,
        batch_index: vec![0; l],
        graph_sizes: vec![l],
    })
}

/// Builds one graph per sentence; parallel across sentences, output in
/// input order.
pub fn build_token_graphs(sentences: &[Matrix], cfg: &GraphConfig) -> Result<Vec<TokenGraph>> {
    crate::par::map_indexed(sentences.len(), |i| build_token_graph(&sentences[i], cfg))
        .into_iter()
        .collect()
}

/// Sequential twin of [`build_token_graphs`], kept for benchmarking the
/// two paths against each other.
pub fn build_token_graphs_seq(sentences: &[Matrix], cfg: &GraphConfig) -> Result<Vec<TokenGraph>> {
    crate::par::map_indexed_seq(sentences.len(), |i| build_token_graph(&sentences[i], cfg))
        .into_iter()
        .collect()
}

/// Stacks per-sentence graphs into one block-diagonal graph: features are
/// concatenated, edge indices offset by cumulative node counts, and
/// batch_index assigns consecutive graph ids.
pub fn batch_graphs(graphs: &[TokenGraph]) -> Result<TokenGraph> {
    if graphs.is_empty() {
        return Err(GlotError::EmptyBatch("batch_graphs"));
    }
    let dim = graphs[0].feature_dim();
    let mut total_nodes = 0usize;
    let mut total_edges = 0usize;
    for g in graphs {
        if g.feature_dim() != dim {
            return Err(GlotError::ShapeMismatch {
                op: "batch_graphs",
                detail: format!("feature dims {} vs {dim}", g.feature_dim()),
            });
        }
        total_nodes += g.total_nodes();
        total_edges += g.edges.len();
    }

    let mut node_features = Matrix::zeros(total_nodes, dim);
    let mut edges = Vec::with_capacity(total_edges);
    let mut batch_index = Vec::with_capacity(total_nodes);
    let mut graph_sizes = Vec::new();
    let mut offset = 0usize;
    let mut graph_id = 0usize;
    for g in graphs {
        for r in 0..g.total_nodes() {
            node_features.row_mut(offset + r).copy_from_slice(g.node_features.row(r));
        }
        for &(src, dst) in &g.edges {
            edges.push((src + offset, dst + offset));
        }
        for _ in 0..g.n_graphs() {
            graph_sizes.push(0);
        }
        for &b in &g.batch_index {
            batch_index.push(graph_id + b);
            graph_sizes[graph_id + b] += 1;
        }
        offset += g.total_nodes();
        graph_id += g.n_graphs();
    }
    Ok(TokenGraph { node_features, edges, batch_index, graph_sizes })
}

/// Non-loop edge count over L(L-1), one value per sentence in the batch.
/// Single-token sentences have density 0 by convention.
pub fn edge_density(g: &TokenGraph) -> Vec<f64> {
    let mut counts = vec![0usize; g.n_graphs()];
    for (src, dst) in g.non_loop_edges() {
        debug_assert_eq!(g.batch_index[src], g.batch_index[dst]);
        counts[g.batch_index[dst]] += 1;
    }
    counts
        .iter()
        .zip(&g.graph_sizes)
        .map(|(&c, &l)| {
            if l <= 1 {
                0.0
            } else {
                c as f64 / (l * (l - 1)) as f64
            }
        })
        .collect()
}
