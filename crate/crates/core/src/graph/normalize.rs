use super::Graph;
use crate::error::Result;
use crate::kernel::SparseMatrix;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for some graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: SparseMatrix,
}

fn binary_pairs(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|&(a, b)| a != b)
        .flat_map(|(a, b)| [(a, b), (b, a)])
        .collect();
    debug_assert!(pairs.iter().all(|&(a, b)| a < n && b < n));
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Symmetric GCN normalization over `n` nodes with self-loops added.
/// Edges are undirected; repeats and explicit self-loops are ignored.
pub fn normalize_edges(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<NormalizedAdjacency> {
    let pairs = binary_pairs(n, edges);
    let mut degree = vec![1.0f64; n];
    for &(a, _) in &pairs {
        degree[a] += 1.0;
    }
    let trip = pairs
        .into_iter()
        .chain((0..n).map(|i| (i, i)))
        .map(|(a, b)| (a, b, 1.0 / (degree[a] * degree[b]).sqrt()));
    Ok(NormalizedAdjacency {
        matrix: SparseMatrix::from_triplets(n, n, trip.collect::<Vec<_>>())?,
    })
}

/// Normalized adjacency of `g`, optionally enlarged by `extra_edges`. Extra
/// edges may reference indices past `g.n()`; the node set grows to cover them.
pub fn normalize_gcn(g: &Graph, extra_edges: &[(usize, usize)]) -> Result<NormalizedAdjacency> {
    let n = extra_edges
        .iter()
        .map(|&(a, b)| a.max(b) + 1)
        .fold(g.n(), usize::max);
    normalize_edges(n, g.edges().into_iter().chain(extra_edges.iter().copied()))
}

/// Row-stochastic neighbor-mean operator `D^{-1} A` (no self-loops). Isolated
/// nodes get an all-zero row.
pub fn mean_aggregator(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<SparseMatrix> {
    let pairs = binary_pairs(n, edges);
    let mut degree = vec![0usize; n];
    for &(a, _) in &pairs {
        degree[a] += 1;
    }
    let trip: Vec<_> = pairs
        .into_iter()
        .map(|(a, b)| (a, b, 1.0 / degree[a] as f64))
        .collect();
    SparseMatrix::from_triplets(n, n, trip)
}
