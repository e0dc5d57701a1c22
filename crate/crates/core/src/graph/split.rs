use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Whether unknown-class nodes may be seen while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Inductive,
    Transductive,
}

impl std::str::FromStr for Visibility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(Visibility::Inductive),
            "transductive" => Ok(Visibility::Transductive),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    /// Per-class `(train, val, test)` sizes for a class of `n` nodes.
    ///
    /// Train and val round down and the remainder goes to test, except that
    /// val and test each keep at least one node.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = ((self.val * n as f64).floor() as usize).max(1);
        let train = ((self.train * n as f64).floor() as usize).min(n.saturating_sub(val + 1));
        (train, val, n - train - val)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!(
                "fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Known/unknown class partition and node index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetSplit {
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub mode: Visibility,
    /// Label index of the unknown class (`known_classes.len()`).
    pub unknown_label: usize,
    label_map: Vec<usize>,
}

impl OpenSetSplit {
    pub fn num_known(&self) -> usize {
        self.known_classes.len()
    }

    /// Training label for an original class id: `0..C` for known classes,
    /// `C` for any unknown class.
    pub fn target_of(&self, original_class: usize) -> usize {
        self.label_map[original_class]
    }

    /// Training labels for every node of `g`.
    pub fn targets(&self, g: &Graph) -> Vec<usize> {
        g.labels().iter().map(|&c| self.target_of(c)).collect()
    }

    pub fn is_unknown_class(&self, original_class: usize) -> bool {
        self.label_map[original_class] == self.unknown_label
    }
}

/// Stratified open-set split. Known classes keep their original relative
/// order; every node of an unknown class goes to the test set.
pub fn make_open_split(
    g: &Graph,
    unknown_class_ids: &[usize],
    fractions: SplitFractions,
    seed: u64,
    mode: Visibility,
) -> Result<OpenSetSplit> {
    fractions.validate()?;
    let total = g.num_classes();
    if unknown_class_ids.is_empty() {
        return Err(Error::Split("at least one unknown class is required".into()));
    }
    if let Some(&bad) = unknown_class_ids.iter().find(|&&c| c >= total) {
        return Err(Error::Split(format!("unknown class {bad} not in 0..{total}")));
    }
    let known_classes: Vec<usize> = (0..total).filter(|c| !unknown_class_ids.contains(c)).collect();
    if known_classes.is_empty() {
        return Err(Error::Split("no known classes left".into()));
    }
    let mut unknown_classes = unknown_class_ids.to_vec();
    unknown_classes.sort_unstable();
    unknown_classes.dedup();

    let unknown_label = known_classes.len();
    let mut label_map = vec![unknown_label; total];
    for (new, &old) in known_classes.iter().enumerate() {
        label_map[old] = new;
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); total];
    for (i, &c) in g.labels().iter().enumerate() {
        members[c].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for &c in &known_classes {
        let mut nodes = members[c].clone();
        if nodes.len() < 3 {
            return Err(Error::Split(format!(
                "known class {} ({}) has {} nodes, need at least 3",
                c,
                g.class_names()[c],
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        let (ntr, nva, _) = fractions.sizes(nodes.len());
        train.extend_from_slice(&nodes[..ntr]);
        val.extend_from_slice(&nodes[ntr..ntr + nva]);
        test.extend_from_slice(&nodes[ntr + nva..]);
    }
    for &c in &unknown_classes {
        test.extend_from_slice(&members[c]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Ok(OpenSetSplit {
        known_classes,
        unknown_classes,
        train_idx: train,
        val_idx: val,
        test_idx: test,
        mode,
        unknown_label,
        label_map,
    })
}

/// A graph as seen in one phase, with its mapping back to the full graph.
#[derive(Debug, Clone)]
pub struct VisibleGraph {
    pub graph: Graph,
    /// `nodes[local] = global` index.
    pub nodes: Vec<usize>,
    local: Vec<Option<usize>>,
}

impl VisibleGraph {
    pub fn full(g: &Graph) -> Self {
        Self {
            graph: g.clone(),
            nodes: (0..g.n()).collect(),
            local: (0..g.n()).map(Some).collect(),
        }
    }

    fn induced(g: &Graph, nodes: Vec<usize>) -> Result<Self> {
        let mut local = vec![None; g.n()];
        for (k, &gi) in nodes.iter().enumerate() {
            local[gi] = Some(k);
        }
        Ok(Self {
            graph: g.induced_subgraph(&nodes)?,
            nodes,
            local,
        })
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.local.get(global).copied().flatten()
    }

    /// Local indices of the given global nodes; fails if any is not visible.
    pub fn local_indices(&self, globals: &[usize]) -> Result<Vec<usize>> {
        globals
            .iter()
            .map(|&g| {
                self.local_index(g)
                    .ok_or_else(|| Error::Split(format!("node {g} is not visible in this phase")))
            })
            .collect()
    }
}

/// Inductive training sees only the training nodes, inductive validation sees
/// training plus validation nodes; everything else sees the full graph.
pub fn visible_graph(g: &Graph, split: &OpenSetSplit, phase: Phase) -> Result<VisibleGraph> {
    match (split.mode, phase) {
        (Visibility::Inductive, Phase::Train) => VisibleGraph::induced(g, split.train_idx.clone()),
        (Visibility::Inductive, Phase::Val) => {
            let mut nodes: Vec<usize> = split.train_idx.iter().chain(&split.val_idx).copied().collect();
            nodes.sort_unstable();
            VisibleGraph::induced(g, nodes)
        }
        _ => Ok(VisibleGraph::full(g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::DenseMatrix;

    fn toy(labels: Vec<usize>, classes: usize) -> Graph {
        let n = labels.len();
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::with_default_ids(
            DenseMatrix::zeros(n, 2),
            &edges,
            labels,
            (0..classes).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn toy_ten_nodes_sizes() {
        let g = toy(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2);
        let s = make_open_split(&g, &[1], SplitFractions::default(), 3, Visibility::Inductive).unwrap();
        assert_eq!(s.train_idx.len(), 3);
        assert_eq!(s.val_idx.len(), 1);
        assert_eq!(s.test_idx.len(), 1 + 5);
        assert_eq!(s.unknown_label, 1);
        assert_eq!(s.target_of(1), 1);
        assert_eq!(s.target_of(0), 0);
    }

    #[test]
    fn large_class_rounding() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(298), (208, 29, 61));
        assert_eq!(f.sizes(818), (572, 81, 165));
        assert_eq!(f.sizes(3), (1, 1, 1));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let g = toy(labels, 3);
        let a = make_open_split(&g, &[2], SplitFractions::default(), 9, Visibility::Inductive).unwrap();
        let b = make_open_split(&g, &[2], SplitFractions::default(), 9, Visibility::Inductive).unwrap();
        assert_eq!(a, b);
        for i in &a.train_idx {
            assert!(!a.val_idx.contains(i) && !a.test_idx.contains(i));
            assert_ne!(g.labels()[*i], 2);
        }
        for i in &a.val_idx {
            assert!(!a.test_idx.contains(i));
            assert_ne!(g.labels()[*i], 2);
        }
        assert_eq!(a.train_idx.len() + a.val_idx.len() + a.test_idx.len(), 60);
    }

    #[test]
    fn errors() {
        let g = toy(vec![0, 0, 1, 1, 1, 2, 2, 2], 3);
        let f = SplitFractions::default();
        assert!(matches!(make_open_split(&g, &[2], f, 0, Visibility::Inductive), Err(Error::Split(_))));
        assert!(make_open_split(&g, &[], f, 0, Visibility::Inductive).is_err());
        assert!(make_open_split(&g, &[7], f, 0, Visibility::Inductive).is_err());
        assert!(make_open_split(&g, &[0], f, 0, Visibility::Inductive).is_ok());
    }

    #[test]
    fn visibility_rules() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let g = toy(labels, 3);
        let s = make_open_split(&g, &[2], SplitFractions::default(), 1, Visibility::Inductive).unwrap();
        let tr = visible_graph(&g, &s, Phase::Train).unwrap();
        assert_eq!(tr.graph.n(), s.train_idx.len());
        assert!(tr.graph.labels().iter().all(|&l| l != 2));
        let va = visible_graph(&g, &s, Phase::Val).unwrap();
        assert_eq!(va.graph.n(), s.train_idx.len() + s.val_idx.len());
        assert_eq!(visible_graph(&g, &s, Phase::Test).unwrap().graph.n(), 30);

        let mut t = s.clone();
        t.mode = Visibility::Transductive;
        assert_eq!(visible_graph(&g, &t, Phase::Train).unwrap().graph.n(), 30);
        assert!(tr.local_indices(&s.val_idx).is_err());
    }
}
