//! Graph datasets: loading, adjacency normalization, open-set splits and
//! synthetic stochastic block models.

mod io;
mod normalize;
mod sbm;
mod split;

pub use io::{
    load_content_cites, read_canonical, write_canonical, write_content_cites, CanonicalDataset,
    LoadReport,
};
pub use normalize::{mean_aggregator, normalize_edges, normalize_gcn, NormalizedAdjacency};
pub use sbm::{gen_sbm, SbmConfig};
pub use split::{make_open_split, visible_graph, OpenSetSplit, Phase, SplitFractions, VisibleGraph, Visibility};

use crate::error::{Error, Result};
use crate::kernel::{DenseMatrix, SparseMatrix};

/// Undirected attributed graph with one class label per node.
///
/// The adjacency is binary, symmetric and stores no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: DenseMatrix,
    adjacency: SparseMatrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    node_ids: Vec<String>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-loops and repeated
    /// pairs (in either orientation) are dropped.
    pub fn new(
        features: DenseMatrix,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        class_names: Vec<String>,
        node_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || node_ids.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} labels and {} ids",
                labels.len(),
                node_ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Data(format!("edge ({a},{b}) references a missing node")));
            }
            if a == b {
                continue;
            }
            trip.push((a, b, 1.0));
            trip.push((b, a, 1.0));
        }
        let mut adjacency = SparseMatrix::from_triplets(n, n, trip)?;
        if adjacency.values().iter().any(|&v| v != 1.0) {
            // repeated pairs were summed; collapse back to a binary matrix
            let binary = adjacency.iter().map(|(r, c, _)| (r, c, 1.0));
            adjacency = SparseMatrix::from_triplets(n, n, binary.collect::<Vec<_>>())?;
        }
        Ok(Self {
            features,
            adjacency,
            labels,
            class_names,
            node_ids,
        })
    }

    /// Same as [`Graph::new`] with ids `"0"`, `"1"`, ...
    pub fn with_default_ids(
        features: DenseMatrix,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ids = (0..features.rows()).map(|i| i.to_string()).collect();
        Self::new(features, edges, labels, class_names, ids)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row_nnz(i)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(r, c, _)| r < c)
            .map(|(r, c, _)| (r, c))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Subgraph on `nodes` (in the given order) keeping edges whose endpoints
    /// are both retained. Local index `k` corresponds to `nodes[k]`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.n()];
        for (k, &g) in nodes.iter().enumerate() {
            if g >= self.n() {
                return Err(Error::Data(format!("node {g} out of range")));
            }
            local[g] = k;
        }
        let mut edges = Vec::new();
        for (k, &g) in nodes.iter().enumerate() {
            for &nb in self.neighbors(g) {
                let l = local[nb];
                if l != usize::MAX && k < l {
                    edges.push((k, l));
                }
            }
        }
        Graph::new(
            self.features.select_rows(nodes),
            &edges,
            nodes.iter().map(|&g| self.labels[g]).collect(),
            self.class_names.clone(),
            nodes.iter().map(|&g| self.node_ids[g].clone()).collect(),
        )
    }
}
