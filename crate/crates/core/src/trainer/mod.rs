//! Full-batch training with per-epoch proxy generation, evaluation, grid
//! search over the loss weights and the ablation variants.

mod metrics;

pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{backward, forward_to, resume_from, Arch, BackboneConfig, Propagation};
use crate::error::{Error, Result};
use crate::graph::{visible_graph, Graph, OpenSetSplit, Phase, VisibleGraph, Visibility};
use crate::kernel::{is_deterministic, set_deterministic, Optimizer, OptimizerKind};
use crate::model::Model;
use crate::openset::{closed_set_probs, evaluate_loss, predict_threshold, LossBreakdown, LossConfig, LossRows};
use crate::proxy::{augment, class_centers, cross_class_edges, gen_external, gen_inter, peripheral_nodes, ProxyBatch, ProxyConfig};

pub const REPORT_VERSION: u32 = 1;

/// Grid of loss weights searched for both `λ1` and `λ2`.
pub const LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Thresholds swept by the threshold-only baseline.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No proxies, no complement term; unknowns rejected by a softmax threshold.
    ThresholdOnly,
    IntOnly,
    ExtOnly,
    NoCoe,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ThresholdOnly,
        Variant::IntOnly,
        Variant::ExtOnly,
        Variant::NoCoe,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ThresholdOnly => "threshold_only",
            Variant::IntOnly => "int_only",
            Variant::ExtOnly => "ext_only",
            Variant::NoCoe => "no_coe",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub proxy: ProxyConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    500
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::adam()
}
fn default_true() -> bool {
    true
}
fn default_variant() -> Variant {
    Variant::Full
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            optimizer: default_optimizer(),
            loss: LossConfig::default(),
            proxy: ProxyConfig::default(),
            backbone: BackboneConfig::default(),
            seed: 0,
            deterministic: true,
            variant: default_variant(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.loss.validate()?;
        self.proxy.validate()?;
        self.backbone.validate()
    }

    /// The configuration with the variant's switches applied.
    pub fn resolved(&self) -> TrainConfig {
        let mut c = self.clone();
        match self.variant {
            Variant::ThresholdOnly => {
                c.proxy.inter_budget = Some(0);
                c.proxy.ext_budget = Some(0);
                c.loss.lambda2 = 0.0;
            }
            Variant::IntOnly => c.proxy.ext_budget = Some(0),
            Variant::ExtOnly => c.proxy.inter_budget = Some(0),
            Variant::NoCoe => c.loss.lambda2 = 0.0,
            Variant::Full => {}
        }
        c
    }

    fn external_enabled(&self) -> bool {
        self.proxy.ext_budget != Some(0)
    }
}

/// ChaCha stream `stream` of `seed`. Stream 0 initializes the model, stream
/// `e` drives epoch `e`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training-phase view of the data with the labels the objective may use.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub graph: Graph,
    pub prop: Propagation,
    /// Known-class target for each labeled training row, `None` elsewhere.
    pub labels: Vec<Option<usize>>,
    pub known_rows: Vec<(usize, usize)>,
    pub cross_edges: Vec<(usize, usize)>,
    pub num_known: usize,
    pub arch: Arch,
}

impl TrainContext {
    pub fn new(g: &Graph, split: &OpenSetSplit, arch: Arch) -> Result<Self> {
        let vis = visible_graph(g, split, Phase::Train)?;
        let mut labels = vec![None; vis.graph.n()];
        for (&global, local) in split.train_idx.iter().zip(vis.local_indices(&split.train_idx)?) {
            labels[local] = Some(split.target_of(g.labels()[global]));
        }
        Self::from_parts(vis.graph, labels, split.num_known(), arch)
    }

    pub fn from_parts(graph: Graph, labels: Vec<Option<usize>>, num_known: usize, arch: Arch) -> Result<Self> {
        if labels.len() != graph.n() {
            return Err(Error::dim("train context", format!("{} labels for {} nodes", labels.len(), graph.n())));
        }
        if labels.iter().flatten().any(|&c| c >= num_known) {
            return Err(Error::Data("training label outside the known classes".into()));
        }
        let prop = Propagation::build(arch, graph.n(), graph.edges())?;
        let known_rows = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|c| (i, c)))
            .collect();
        let cross_edges = cross_class_edges(&graph, &labels);
        Ok(Self {
            graph,
            prop,
            labels,
            known_rows,
            cross_edges,
            num_known,
            arch,
        })
    }

    pub fn num_train(&self) -> usize {
        self.known_rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub num_inter: usize,
    pub num_external: usize,
}

/// One full-batch evaluation of the objective. Gradients are accumulated
/// into `model`; the caller zeroes them beforehand.
pub fn objective_and_grad(model: &mut Model, ctx: &TrainContext, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<StepStats> {
    let bcfg = &model.backbone_cfg.clone();
    let k = bcfg.injection_layer;
    let lower = forward_to(bcfg, k, ctx.graph.features(), &ctx.prop, &model.backbone)?;
    let h_k = lower.output();

    let inter_budget = cfg.proxy.inter_budget_for(ctx.num_train());
    let inter = gen_inter(h_k, &ctx.cross_edges, &cfg.proxy, inter_budget, rng)?;

    let mut batches = vec![inter];
    let mut centers = None;
    if cfg.external_enabled() {
        let confidences: Vec<f64> = if cfg.proxy.t > 0 {
            let plain = resume_from(bcfg, k, h_k.clone(), &ctx.prop, &model.backbone)?;
            let probs = closed_set_probs(&model.classifier.logits(plain.output())?);
            (0..probs.rows())
                .map(|r| probs.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        } else {
            vec![0.0; ctx.graph.n()]
        };
        let x_per = peripheral_nodes(&ctx.graph, &ctx.labels, &confidences, cfg.proxy.t);
        let table = class_centers(h_k, &ctx.labels, ctx.num_known)?;
        batches.push(gen_external(h_k, &x_per, &ctx.labels, &table, &cfg.proxy, rng)?);
        centers = Some(table);
    }
    let num_inter = batches[0].len();
    let num_external = batches.get(1).map_or(0, ProxyBatch::len);

    let aug = augment(ctx.arch, &ctx.graph, h_k, &batches)?;
    let upper = resume_from(bcfg, k, aug.reps.clone(), &aug.propagation, &model.backbone)?;
    let logits = model.classifier.logits(upper.output())?;
    let rows = LossRows {
        known: ctx.known_rows.clone(),
        proxies: (aug.base_rows..aug.reps.rows()).collect(),
    };
    let (loss, d_logits) = evaluate_loss(&logits, &rows, &cfg.loss)?;

    let d_top = model.classifier.backward(upper.output(), &d_logits)?;
    let d_aug = backward(bcfg, &upper, &d_top, &mut model.backbone, true)?.expect("input grad requested");
    let d_hk = aug.backward(&d_aug, &batches, centers.as_ref())?;
    backward(bcfg, &lower, &d_hk, &mut model.backbone, false)?;

    Ok(StepStats {
        loss,
        num_inter,
        num_external,
    })
}

/// A phase's visible graph plus the rows being scored.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub visible: VisibleGraph,
    pub prop: Propagation,
    /// Local rows of the evaluated nodes.
    pub rows: Vec<usize>,
    /// Targets in `0..=C` for those rows.
    pub targets: Vec<usize>,
    pub num_known: usize,
}

impl EvalContext {
    pub fn new(g: &Graph, split: &OpenSetSplit, phase: Phase, arch: Arch) -> Result<Self> {
        let visible = visible_graph(g, split, phase)?;
        if split.mode == Visibility::Inductive && phase != Phase::Test {
            if let Some(&bad) = visible.nodes.iter().find(|&&i| split.is_unknown_class(g.labels()[i])) {
                return Err(Error::Split(format!(
                    "unknown-class node {bad} visible during inductive {phase:?}"
                )));
            }
        }
        let globals = match phase {
            Phase::Train => &split.train_idx,
            Phase::Val => &split.val_idx,
            Phase::Test => &split.test_idx,
        };
        let rows = visible.local_indices(globals)?;
        let targets = globals.iter().map(|&i| split.target_of(g.labels()[i])).collect();
        let prop = Propagation::build(arch, visible.graph.n(), visible.graph.edges())?;
        Ok(Self {
            visible,
            prop,
            rows,
            targets,
            num_known: split.num_known(),
        })
    }

    pub fn predictions(&self, model: &Model) -> Result<Vec<usize>> {
        let logits = model.logits(self.visible.graph.features(), &self.prop)?;
        Ok(model.predict_rows(&logits, &self.rows))
    }

    pub fn evaluate(&self, model: &Model) -> Result<MetricsReport> {
        let pred = self.predictions(model)?;
        Ok(compute_metrics(&pred, &self.targets, self.num_known + 1))
    }
}

/// Metrics of `model` on one phase of `split`, without proxies.
pub fn evaluate(model: &Model, g: &Graph, split: &OpenSetSplit, phase: Phase) -> Result<MetricsReport> {
    EvalContext::new(g, split, phase, model.backbone_cfg.arch)?.evaluate(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub num_inter: usize,
    pub num_external: usize,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn numeric_abort(epoch: usize, stats: Option<&StepStats>, model: &Model, what: &str) -> Error {
    let mut msg = format!("non-finite {what} at epoch {epoch}");
    if let Some(s) = stats {
        msg.push_str(&format!(
            "; loss {:?}; proxies inter={} external={}",
            s.loss, s.num_inter, s.num_external
        ));
    }
    for (name, t) in model.tensor_names().iter().zip(model.tensors()) {
        let max = t.value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gmax = t.grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        msg.push_str(&format!("; {name} max|w|={max:e} max|g|={gmax:e}"));
    }
    Error::Numeric(msg)
}

/// Trains with best-validation checkpointing. `cfg` is resolved against its
/// variant first; the threshold-only variant also picks its threshold on the
/// validation set.
pub fn train(g: &Graph, split: &OpenSetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let previous = is_deterministic();
    set_deterministic(cfg.deterministic);
    let out = train_resolved(g, split, &cfg);
    set_deterministic(previous);
    out
}

fn train_resolved(g: &Graph, split: &OpenSetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let arch = cfg.backbone.arch;
    let ctx = TrainContext::new(g, split, arch)?;
    let val = EvalContext::new(g, split, Phase::Val, arch)?;
    let mut model = Model::init(&cfg.backbone, g.d(), split.num_known(), &mut stream_rng(cfg.seed, 0))?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 1..=cfg.epochs {
        model.zero_grad();
        let stats = objective_and_grad(&mut model, &ctx, cfg, &mut stream_rng(cfg.seed, epoch as u64))?;
        if !stats.loss.is_finite() {
            return Err(numeric_abort(epoch, Some(&stats), &model, "loss"));
        }
        if model.tensors().iter().any(|t| !t.grad.is_finite()) {
            return Err(numeric_abort(epoch, Some(&stats), &model, "gradient"));
        }
        opt.step(&mut model.tensors_mut())?;
        let val_accuracy = val.evaluate(&model)?.accuracy;
        log::debug!(
            "epoch {epoch} loss {:.5} (l1 {:.5} l2 {:.5}) proxies {}+{} val {:.4}",
            stats.loss.total,
            stats.loss.l1,
            stats.loss.l2,
            stats.num_inter,
            stats.num_external,
            val_accuracy
        );
        history.push(EpochRecord {
            epoch,
            loss: stats.loss,
            num_inter: stats.num_inter,
            num_external: stats.num_external,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|b| val_accuracy >= b.1) {
            let mut snapshot = model.clone();
            snapshot.zero_grad();
            best = Some((epoch, val_accuracy, snapshot));
        }
    }
    let (best_epoch, best_val_accuracy, mut model) = best.expect("at least one epoch");
    if cfg.variant == Variant::ThresholdOnly {
        model.threshold = Some(select_threshold(&model, &val)?);
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_accuracy,
    })
}

/// Threshold with the best validation accuracy; ties go to the larger value.
pub fn select_threshold(model: &Model, val: &EvalContext) -> Result<f64> {
    let logits = model.logits(val.visible.graph.features(), &val.prop)?;
    let probs = closed_set_probs(&logits.select_rows(&val.rows));
    let mut best = (f64::NEG_INFINITY, 0.0);
    for tau in threshold_grid() {
        let correct = (0..probs.rows())
            .filter(|&r| predict_threshold(probs.row(r), tau) == val.targets[r])
            .count();
        let acc = correct as f64 / probs.rows().max(1) as f64;
        if acc >= best.0 {
            best = (acc, tau);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub mode: Visibility,
    pub known_classes: Vec<String>,
    pub unknown_classes: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSummary {
    pub fn new(g: &Graph, s: &OpenSetSplit) -> Self {
        let names = |ids: &[usize]| ids.iter().map(|&c| g.class_names()[c].clone()).collect();
        Self {
            mode: s.mode,
            known_classes: names(&s.known_classes),
            unknown_classes: names(&s.unknown_classes),
            train: s.train_idx.len(),
            val: s.val_idx.len(),
            test: s.test_idx.len(),
        }
    }
}

/// Everything about one training run. Contains no timing so that reruns
/// produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub split: SplitSummary,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub threshold: Option<f64>,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

impl RunReport {
    pub const CSV_HEADER: &'static str =
        "variant,mode,arch,seed,lambda1,lambda2,best_epoch,val_accuracy,test_accuracy,macro_f1,ind_accuracy,ood_accuracy";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{}",
            self.config.variant,
            match self.split.mode {
                Visibility::Inductive => "inductive",
                Visibility::Transductive => "transductive",
            },
            match self.config.backbone.arch {
                Arch::Gcn => "gcn",
                Arch::SageMean => "sage_mean",
            },
            self.config.seed,
            self.config.loss.lambda1,
            self.config.loss.lambda2,
            self.best_epoch,
            self.best_val_accuracy,
            self.test.accuracy,
            self.test.macro_f1,
            opt(self.test.ind_accuracy),
            opt(self.test.ood_accuracy),
        )
    }
}

/// Trains, then scores the selected model on validation and test.
pub fn run(g: &Graph, split: &OpenSetSplit, cfg: &TrainConfig) -> Result<(Model, RunReport)> {
    let out = train(g, split, cfg)?;
    let val = evaluate(&out.model, g, split, Phase::Val)?;
    let test = evaluate(&out.model, g, split, Phase::Test)?;
    let report = RunReport {
        schema_version: REPORT_VERSION,
        config: cfg.resolved(),
        split: SplitSummary::new(g, split),
        history: out.history,
        best_epoch: out.best_epoch,
        best_val_accuracy: out.best_val_accuracy,
        threshold: out.model.threshold,
        val,
        test,
    };
    Ok((out.model, report))
}

pub fn run_ablation(variant: Variant, g: &Graph, split: &OpenSetSplit, cfg: &TrainConfig) -> Result<(Model, RunReport)> {
    run(g, split, &TrainConfig { variant, ..cfg.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub cells: Vec<GridCell>,
    pub best_lambda1: f64,
    pub best_lambda2: f64,
    pub best_index: usize,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a grid cell, derived from the base seed and both weights.
pub fn cell_seed(seed: u64, lambda1: f64, lambda2: f64) -> u64 {
    mix64(mix64(mix64(seed) ^ lambda1.to_bits()) ^ lambda2.to_bits())
}

/// Index of the cell with the highest validation accuracy; ties go to the
/// smaller `λ1`, then the smaller `λ2`.
pub fn select_cell(cells: &[GridCell]) -> Option<usize> {
    (0..cells.len()).reduce(|b, i| {
        let (x, y) = (&cells[i], &cells[b]);
        let better = x.val_accuracy > y.val_accuracy
            || (x.val_accuracy == y.val_accuracy
                && (x.lambda1 < y.lambda1 || (x.lambda1 == y.lambda1 && x.lambda2 < y.lambda2)));
        if better {
            i
        } else {
            b
        }
    })
}

pub fn grid_search(g: &Graph, split: &OpenSetSplit, base: &TrainConfig) -> Result<GridReport> {
    grid_search_over(g, split, base, &LAMBDA_GRID)
}

/// Grid search over `lambdas × lambdas`. Cells are independent and may run
/// in parallel when determinism is off; results do not depend on it.
pub fn grid_search_over(g: &Graph, split: &OpenSetSplit, base: &TrainConfig, lambdas: &[f64]) -> Result<GridReport> {
    let pairs: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&a| lambdas.iter().map(move |&b| (a, b)))
        .collect();
    let cell = |&(lambda1, lambda2): &(f64, f64)| -> Result<GridCell> {
        let mut cfg = base.clone();
        cfg.loss.lambda1 = lambda1;
        cfg.loss.lambda2 = lambda2;
        cfg.seed = cell_seed(base.seed, lambda1, lambda2);
        let (_, report) = run(g, split, &cfg)?;
        Ok(GridCell {
            lambda1,
            lambda2,
            seed: cfg.seed,
            best_epoch: report.best_epoch,
            val_accuracy: report.best_val_accuracy,
            test_accuracy: report.test.accuracy,
            test_macro_f1: report.test.macro_f1,
        })
    };
    let cells: Vec<GridCell> = if base.deterministic {
        pairs.iter().map(cell).collect::<Result<_>>()?
    } else {
        pairs.par_iter().map(cell).collect::<Result<_>>()?
    };
    let best_index = select_cell(&cells).ok_or_else(|| Error::Config("empty λ grid".into()))?;
    Ok(GridReport {
        schema_version: REPORT_VERSION,
        config: base.clone(),
        best_lambda1: cells[best_index].lambda1,
        best_lambda2: cells[best_index].lambda2,
        best_index,
        cells,
    })
}

#[cfg(test)]
mod tests;
