//! Unknown proxies synthesized in the hidden space at the injection layer.
//!
//! Two kinds: inter-class proxies mix the representations of the endpoints of
//! an edge joining two differently labeled nodes, and external proxies push a
//! peripheral node away from its class center. Each proxy is appended as a new
//! row and wired to its parent(s) before the remaining layers run.
//!
//! Row indices here are local to the visible training graph. `labels[i]` is
//! `Some(class)` for a labeled training node and `None` otherwise.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::backbone::{Arch, Propagation};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernel::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    /// Max inter-class proxies per epoch; `None` means a quarter of the
    /// training nodes.
    #[serde(default)]
    pub inter_budget: Option<usize>,
    /// Shape of the symmetric Beta the mixing coefficient is drawn from.
    #[serde(default = "default_beta")]
    pub beta_a: f64,
    /// Distance scale for external proxies.
    #[serde(default = "default_ext_alpha")]
    pub ext_alpha: f64,
    /// Least-confident nodes taken per class as peripheral.
    #[serde(default = "default_t")]
    pub t: usize,
    /// Max external proxies per epoch; `None` means every peripheral node.
    #[serde(default)]
    pub ext_budget: Option<usize>,
}

fn default_beta() -> f64 {
    2.0
}
fn default_ext_alpha() -> f64 {
    1.0
}
fn default_t() -> usize {
    5
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            inter_budget: None,
            beta_a: default_beta(),
            ext_alpha: default_ext_alpha(),
            t: default_t(),
            ext_budget: None,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_a > 0.0 && self.beta_a.is_finite()) {
            return Err(Error::Config(format!("beta_a must be positive, got {}", self.beta_a)));
        }
        if !(self.ext_alpha > 0.0 && self.ext_alpha.is_finite()) {
            return Err(Error::Config(format!("ext_alpha must be positive, got {}", self.ext_alpha)));
        }
        Ok(())
    }

    pub fn inter_budget_for(&self, num_train: usize) -> usize {
        self.inter_budget.unwrap_or(num_train / 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    Inter,
    External,
}

/// One generation step's proxies of a single kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBatch {
    pub kind: ProxyKind,
    /// `P × dim` proxy representations.
    pub reps: DenseMatrix,
    /// `(i, Some(j))` for inter proxies, `(i, None)` for external ones.
    pub parents: Vec<(usize, Option<usize>)>,
    /// Mixing coefficient for inter proxies; unused for external ones.
    pub alphas: Vec<f64>,
    /// Class whose center was subtracted, for external proxies.
    pub center_class: Vec<usize>,
    /// Distance scale used for external proxies.
    pub ext_alpha: f64,
}

impl ProxyBatch {
    pub fn empty(kind: ProxyKind, dim: usize) -> Self {
        Self {
            kind,
            reps: DenseMatrix::zeros(0, dim),
            parents: Vec::new(),
            alphas: Vec::new(),
            center_class: Vec::new(),
            ext_alpha: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Parent-proxy edges with the proxies numbered from `offset`.
    pub fn added_edges(&self, offset: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (p, &(i, j)) in self.parents.iter().enumerate() {
            out.push((i, offset + p));
            if let Some(j) = j {
                out.push((j, offset + p));
            }
        }
        out
    }

    /// Adds `∂L/∂h` contributions of this batch's proxies to `dh`, given the
    /// gradient rows `d_reps` of the proxies themselves.
    pub fn scatter_grad(&self, d_reps: &DenseMatrix, centers: Option<&CenterTable>, dh: &mut DenseMatrix) -> Result<()> {
        if d_reps.rows() != self.len() || d_reps.cols() != dh.cols() {
            return Err(Error::dim(
                "scatter_grad",
                format!(
                    "{}x{} proxy gradient for {} proxies of width {}",
                    d_reps.rows(),
                    d_reps.cols(),
                    self.len(),
                    dh.cols()
                ),
            ));
        }
        for (p, &(i, j)) in self.parents.iter().enumerate() {
            let g = d_reps.row(p);
            match (self.kind, j) {
                (ProxyKind::Inter, Some(j)) => {
                    let a = self.alphas[p];
                    axpy(dh.row_mut(i), a, g);
                    axpy(dh.row_mut(j), 1.0 - a, g);
                }
                _ => {
                    axpy(dh.row_mut(i), 1.0, g);
                    let centers = centers
                        .ok_or_else(|| Error::Config("external proxies need their center table for backward".into()))?;
                    let members = &centers.members[self.center_class[p]];
                    let share = -self.ext_alpha / members.len() as f64;
                    for &m in members {
                        axpy(dh.row_mut(m), share, g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Edges `(i, j)`, `i < j`, whose endpoints are both labeled and disagree.
pub fn cross_class_edges(g: &Graph, labels: &[Option<usize>]) -> Vec<(usize, usize)> {
    g.edges()
        .into_iter()
        .filter(|&(i, j)| matches!((labels[i], labels[j]), (Some(a), Some(b)) if a != b))
        .collect()
}

/// Inter-class proxies with given mixing coefficients, one per pair.
pub fn inter_with_alphas(h: &DenseMatrix, pairs: &[(usize, usize)], alphas: &[f64]) -> Result<ProxyBatch> {
    if pairs.len() != alphas.len() {
        return Err(Error::dim("gen_inter", format!("{} pairs, {} alphas", pairs.len(), alphas.len())));
    }
    let mut reps = DenseMatrix::zeros(pairs.len(), h.cols());
    for (p, (&(i, j), &a)) in pairs.iter().zip(alphas).enumerate() {
        let (hi, hj) = (h.row(i), h.row(j));
        for (out, (&x, &y)) in reps.row_mut(p).iter_mut().zip(hi.iter().zip(hj)) {
            *out = a * x + (1.0 - a) * y;
        }
    }
    Ok(ProxyBatch {
        kind: ProxyKind::Inter,
        reps,
        parents: pairs.iter().map(|&(i, j)| (i, Some(j))).collect(),
        alphas: alphas.to_vec(),
        center_class: Vec::new(),
        ext_alpha: 0.0,
    })
}

/// Samples up to `budget` pairs uniformly without replacement and mixes each
/// with a coefficient drawn from `Beta(beta_a, beta_a)`.
pub fn gen_inter(
    h: &DenseMatrix,
    pairs: &[(usize, usize)],
    cfg: &ProxyConfig,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<ProxyBatch> {
    cfg.validate()?;
    let take = budget.min(pairs.len());
    if take == 0 {
        return Ok(ProxyBatch::empty(ProxyKind::Inter, h.cols()));
    }
    let mut picked: Vec<usize> = sample(rng, pairs.len(), take).into_vec();
    picked.sort_unstable();
    let beta = Beta::new(cfg.beta_a, cfg.beta_a).map_err(|e| Error::Config(e.to_string()))?;
    let chosen: Vec<(usize, usize)> = picked.iter().map(|&p| pairs[p]).collect();
    let alphas: Vec<f64> = chosen.iter().map(|_| beta.sample(rng)).collect();
    inter_with_alphas(h, &chosen, &alphas)
}

/// Per-class mean representation over the labeled training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTable {
    pub centers: DenseMatrix,
    /// Rows contributing to each center.
    pub members: Vec<Vec<usize>>,
}

impl CenterTable {
    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

pub fn class_centers(h: &DenseMatrix, labels: &[Option<usize>], num_known: usize) -> Result<CenterTable> {
    let mut members = vec![Vec::new(); num_known];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            members[c].push(i);
        }
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("known class {c} has no training node to form a center")));
    }
    let mut centers = DenseMatrix::zeros(num_known, h.cols());
    for (c, rows) in members.iter().enumerate() {
        let w = 1.0 / rows.len() as f64;
        for &i in rows {
            axpy(centers.row_mut(c), w, h.row(i));
        }
    }
    Ok(CenterTable { centers, members })
}

/// Labeled rows with degree one in `g`, plus the `t` least confident rows of
/// each class (ties to the lower index). Sorted ascending.
pub fn peripheral_nodes(g: &Graph, labels: &[Option<usize>], confidences: &[f64], t: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..g.n()).filter(|&i| labels[i].is_some() && g.degree(i) == 1).collect();
    if t > 0 {
        let num_classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = *l {
                by_class[c].push(i);
            }
        }
        for rows in &mut by_class {
            rows.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
            out.extend(rows.iter().take(t));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `h_i − ext_alpha · center(y_i)` for peripheral rows, subsampled to
/// `ext_budget` if set.
pub fn gen_external(
    h: &DenseMatrix,
    x_per: &[usize],
    labels: &[Option<usize>],
    centers: &CenterTable,
    cfg: &ProxyConfig,
    rng: &mut impl Rng,
) -> Result<ProxyBatch> {
    cfg.validate()?;
    let mut chosen: Vec<usize> = match cfg.ext_budget {
        Some(b) if b < x_per.len() => sample(rng, x_per.len(), b).into_iter().map(|p| x_per[p]).collect(),
        _ => x_per.to_vec(),
    };
    chosen.sort_unstable();
    if chosen.is_empty() {
        return Ok(ProxyBatch::empty(ProxyKind::External, h.cols()));
    }
    let mut reps = DenseMatrix::zeros(chosen.len(), h.cols());
    let mut center_class = Vec::with_capacity(chosen.len());
    for (p, &i) in chosen.iter().enumerate() {
        let c = labels[i].ok_or_else(|| Error::Data(format!("peripheral row {i} has no label")))?;
        let center = centers.centers.row(c);
        for (out, (&x, &m)) in reps.row_mut(p).iter_mut().zip(h.row(i).iter().zip(center)) {
            *out = x - cfg.ext_alpha * m;
        }
        center_class.push(c);
    }
    Ok(ProxyBatch {
        kind: ProxyKind::External,
        reps,
        parents: chosen.iter().map(|&i| (i, None)).collect(),
        alphas: Vec::new(),
        center_class,
        ext_alpha: cfg.ext_alpha,
    })
}

/// Representation rows and propagation after appending proxies.
#[derive(Debug, Clone)]
pub struct Augmented {
    /// Original rows followed by each batch's proxies in order.
    pub reps: DenseMatrix,
    pub propagation: Propagation,
    pub base_rows: usize,
    /// First row of each batch.
    pub offsets: Vec<usize>,
    pub added_edges: Vec<(usize, usize)>,
}

impl Augmented {
    pub fn num_proxies(&self) -> usize {
        self.reps.rows() - self.base_rows
    }

    /// Maps the gradient w.r.t. the augmented rows back onto the original
    /// rows, routing proxy gradients to their parents and class members.
    pub fn backward(&self, d_aug: &DenseMatrix, batches: &[ProxyBatch], centers: Option<&CenterTable>) -> Result<DenseMatrix> {
        if d_aug.rows() != self.reps.rows() {
            return Err(Error::dim(
                "augment backward",
                format!("{} gradient rows for {} augmented rows", d_aug.rows(), self.reps.rows()),
            ));
        }
        let mut dh = d_aug.select_rows(&(0..self.base_rows).collect::<Vec<_>>());
        for (b, &off) in batches.iter().zip(&self.offsets) {
            if b.is_empty() {
                continue;
            }
            let d_reps = d_aug.select_rows(&(off..off + b.len()).collect::<Vec<_>>());
            b.scatter_grad(&d_reps, centers, &mut dh)?;
        }
        Ok(dh)
    }
}

/// Appends every batch's proxies after the rows of `h` and rebuilds the
/// propagation over the enlarged node set.
pub fn augment(arch: Arch, g: &Graph, h: &DenseMatrix, batches: &[ProxyBatch]) -> Result<Augmented> {
    if h.rows() != g.n() {
        return Err(Error::dim("augment", format!("{} rows for a {}-node graph", h.rows(), g.n())));
    }
    let mut reps = h.clone();
    let mut offsets = Vec::with_capacity(batches.len());
    let mut added_edges = Vec::new();
    for b in batches {
        offsets.push(reps.rows());
        added_edges.extend(b.added_edges(reps.rows()));
        if !b.is_empty() {
            reps = reps.vstack(&b.reps)?;
        }
    }
    let propagation = Propagation::build(
        arch,
        reps.rows(),
        g.edges().into_iter().chain(added_edges.iter().copied()),
    )?;
    Ok(Augmented {
        reps,
        propagation,
        base_rows: g.n(),
        offsets,
        added_edges,
    })
}
