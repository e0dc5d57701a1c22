//! GNN encoder with hooks to stop at an intermediate layer and resume on an
//! enlarged node set.
//!
//! Layers `1..=K` are either aggregation layers (GCN or mean-aggregator
//! GraphSAGE) or trailing adjacency-free dense layers. Every layer applies
//! ReLU. A forward pass can be split at any layer `k`: [`forward_to`] runs
//! `1..=k`, [`resume_from`] runs `k+1..=K` on a (possibly augmented)
//! representation matrix with a matching [`Propagation`].

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{mean_aggregator, normalize_edges};
use crate::kernel::{matmul, matmul_nt, matmul_tn, relu, relu_backward, spmm, DenseMatrix, ParamTensor, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcn,
    SageMean,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Arch::Gcn),
            "sage_mean" | "sage" => Ok(Arch::SageMean),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output width of each layer; the input width comes from the data.
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    /// Layer after which proxies are injected, in `1..K`.
    #[serde(default = "default_injection")]
    pub injection_layer: usize,
    /// How many trailing layers ignore the adjacency.
    #[serde(default = "default_mlp")]
    pub mlp_layers: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![512, 128, 64]
}
fn default_arch() -> Arch {
    Arch::Gcn
}
fn default_injection() -> usize {
    1
}
fn default_mlp() -> usize {
    1
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            arch: default_arch(),
            injection_layer: default_injection(),
            mlp_layers: default_mlp(),
        }
    }
}

impl BackboneConfig {
    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len()
    }

    pub fn num_aggregation_layers(&self) -> usize {
        self.hidden_dims.len().saturating_sub(self.mlp_layers)
    }

    /// `[d, hidden...]`.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim).chain(self.hidden_dims.iter().copied()).collect()
    }

    pub fn output_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated config has layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aggregation_layers() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 aggregation layers, have {}",
                self.num_aggregation_layers()
            )));
        }
        if self.injection_layer == 0 || self.injection_layer >= self.num_layers() {
            return Err(Error::Config(format!(
                "injection layer must be in 1..{}, got {}",
                self.num_layers(),
                self.injection_layer
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn is_aggregation(&self, layer: usize) -> bool {
        layer <= self.num_aggregation_layers()
    }
}

/// Message-passing operator over a node set, with its transpose for backward.
#[derive(Debug, Clone)]
pub struct Propagation {
    op: SparseMatrix,
    op_t: SparseMatrix,
}

impl Propagation {
    /// GCN uses the symmetric normalized `A + I`; SAGE-mean uses `D⁻¹A`.
    pub fn build(arch: Arch, n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let op = match arch {
            Arch::Gcn => normalize_edges(n, edges)?.matrix,
            Arch::SageMean => mean_aggregator(n, edges)?,
        };
        let op_t = op.transpose();
        Ok(Self { op, op_t })
    }

    pub fn nodes(&self) -> usize {
        self.op.rows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.op
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

/// Encoder weights. SAGE layers take `[h ‖ mean(h_N)]`, so their weight has
/// twice the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<LayerParams>,
}

impl BackboneParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &BackboneConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.layer_dims(input_dim);
        let layers = (1..dims.len())
            .map(|j| {
                let fan_in = if cfg.arch == Arch::SageMean && cfg.is_aggregation(j) {
                    2 * dims[j - 1]
                } else {
                    dims[j - 1]
                };
                LayerParams {
                    weight: ParamTensor::new(glorot(fan_in, dims[j], rng)),
                    bias: ParamTensor::zeros(1, dims[j]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Cached activations of a contiguous run of layers.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    /// Layer index of `activations[0]`.
    pub start: usize,
    /// `activations[t]` is `h^{start+t}`.
    pub activations: Vec<Cow<'a, DenseMatrix>>,
    /// `pre_activations[t]` is the input of the ReLU producing `h^{start+t+1}`.
    pub pre_activations: Vec<DenseMatrix>,
    /// `[h ‖ mean]` inputs of SAGE layers, `None` elsewhere.
    concat: Vec<Option<DenseMatrix>>,
    pub propagation: &'a Propagation,
}

impl<'a> ForwardTrace<'a> {
    /// Last layer this trace reaches.
    pub fn end(&self) -> usize {
        self.start + self.pre_activations.len()
    }

    /// `h^layer`, if covered by this trace.
    pub fn activation(&self, layer: usize) -> Option<&DenseMatrix> {
        layer
            .checked_sub(self.start)
            .and_then(|t| self.activations.get(t))
            .map(|c| c.as_ref())
    }

    pub fn output(&self) -> &DenseMatrix {
        self.activations.last().expect("trace has an input").as_ref()
    }
}

fn run_layers<'a>(
    cfg: &BackboneConfig,
    params: &BackboneParams,
    start: usize,
    end: usize,
    input: Cow<'a, DenseMatrix>,
    prop: &'a Propagation,
) -> Result<ForwardTrace<'a>> {
    if input.rows() != prop.nodes() {
        return Err(Error::dim(
            "backbone",
            format!("{} rows but propagation over {} nodes", input.rows(), prop.nodes()),
        ));
    }
    let mut activations = vec![input];
    let mut pre_activations = Vec::with_capacity(end - start);
    let mut concat = Vec::with_capacity(end - start);
    for j in start + 1..=end {
        let layer = params
            .layers
            .get(j - 1)
            .ok_or_else(|| Error::dim("backbone", format!("no parameters for layer {j}")))?;
        let h = activations.last().unwrap().as_ref();
        let (mut pre, cat) = if !cfg.is_aggregation(j) {
            (matmul(h, &layer.weight.value)?, None)
        } else {
            match cfg.arch {
                Arch::Gcn => (spmm(&prop.op, &matmul(h, &layer.weight.value)?)?, None),
                Arch::SageMean => {
                    let cat = h.hstack(&spmm(&prop.op, h)?)?;
                    (matmul(&cat, &layer.weight.value)?, Some(cat))
                }
            }
        };
        pre.add_row_broadcast(&layer.bias.value)?;
        activations.push(Cow::Owned(relu(&pre)));
        pre_activations.push(pre);
        concat.push(cat);
    }
    Ok(ForwardTrace {
        start,
        activations,
        pre_activations,
        concat,
        propagation: prop,
    })
}

/// Runs layers `1..=k` on the node features.
pub fn forward_to<'a>(
    cfg: &BackboneConfig,
    k: usize,
    features: &'a DenseMatrix,
    prop: &'a Propagation,
    params: &BackboneParams,
) -> Result<ForwardTrace<'a>> {
    let expected = params.layers.first().map(|l| {
        if cfg.arch == Arch::SageMean {
            l.weight.value.rows() / 2
        } else {
            l.weight.value.rows()
        }
    });
    if Some(features.cols()) != expected {
        return Err(Error::dim(
            "forward_to",
            format!("features have {} columns, first layer expects {:?}", features.cols(), expected),
        ));
    }
    if k > cfg.num_layers() {
        return Err(Error::Config(format!("layer {k} beyond depth {}", cfg.num_layers())));
    }
    run_layers(cfg, params, 0, k, Cow::Borrowed(features), prop)
}

/// Runs layers `k+1..=K` on an `h^k` matrix (original rows plus any proxy
/// rows) using a propagation built over the same row set.
pub fn resume_from<'a>(
    cfg: &BackboneConfig,
    k: usize,
    h_k: DenseMatrix,
    prop: &'a Propagation,
    params: &BackboneParams,
) -> Result<ForwardTrace<'a>> {
    run_layers(cfg, params, k, cfg.num_layers(), Cow::Owned(h_k), prop)
}

/// Backpropagates `upstream` (gradient w.r.t. the trace output) through the
/// trace, accumulating into `params`. Returns the gradient w.r.t. the trace
/// input when `want_input_grad` is set.
pub fn backward(
    cfg: &BackboneConfig,
    trace: &ForwardTrace<'_>,
    upstream: &DenseMatrix,
    params: &mut BackboneParams,
    want_input_grad: bool,
) -> Result<Option<DenseMatrix>> {
    if upstream.shape() != trace.output().shape() {
        return Err(Error::dim(
            "backward",
            format!("upstream {:?} vs output {:?}", upstream.shape(), trace.output().shape()),
        ));
    }
    let prop = trace.propagation;
    let mut grad = upstream.clone();
    for t in (0..trace.pre_activations.len()).rev() {
        let j = trace.start + t + 1;
        let h = trace.activations[t].as_ref();
        let d_pre = relu_backward(&trace.pre_activations[t], &grad)?;
        let layer = &mut params.layers[j - 1];
        layer.bias.accumulate(&d_pre.col_sums())?;
        let need_input = t > 0 || want_input_grad;
        if !cfg.is_aggregation(j) {
            layer.weight.accumulate(&matmul_tn(h, &d_pre)?)?;
            if need_input {
                grad = matmul_nt(&d_pre, &layer.weight.value)?;
            }
        } else {
            match cfg.arch {
                Arch::Gcn => {
                    let d_z = spmm(&prop.op_t, &d_pre)?;
                    layer.weight.accumulate(&matmul_tn(h, &d_z)?)?;
                    if need_input {
                        grad = matmul_nt(&d_z, &layer.weight.value)?;
                    }
                }
                Arch::SageMean => {
                    let cat = trace.concat[t].as_ref().expect("sage layer caches its input");
                    layer.weight.accumulate(&matmul_tn(cat, &d_pre)?)?;
                    if need_input {
                        let d_cat = matmul_nt(&d_pre, &layer.weight.value)?;
                        let (mut d_self, d_mean) = d_cat.split_cols(h.cols());
                        d_self.add_assign(&spmm(&prop.op_t, &d_mean)?)?;
                        grad = d_self;
                    }
                }
            }
        }
        if !need_input {
            return Ok(None);
        }
    }
    Ok(Some(grad))
}
