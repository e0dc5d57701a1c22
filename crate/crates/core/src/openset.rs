//! `C+1`-way classifier head, its three-part objective and prediction rules.
//!
//! Column `C` of the logits is the proxy ("unknown") class. The objective is
//! `l1 + λ2·l2` where
//!
//! * `l1` = CE on known training rows + `λ1`·CE(proxy rows → `C`);
//! * `l2` = for known rows, CE of the distribution with the ground-truth class
//!   removed and renormalized, against target `C`; for proxy rows, the
//!   complement entropy over the known classes.
//!
//! All gradients are returned w.r.t. the logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::glorot;
use crate::error::{Error, Result};
use crate::kernel::{matmul, matmul_nt, matmul_tn, softmax_in_place, softmax_rows, DenseMatrix, ParamTensor};

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `h · [w_close | w_proxy] + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenClassifier {
    pub w_close: ParamTensor,
    pub w_proxy: ParamTensor,
    pub bias: ParamTensor,
}

impl OpenClassifier {
    pub fn init(dim: usize, num_known: usize, rng: &mut impl Rng) -> Self {
        let w = glorot(dim, num_known + 1, rng);
        let (w_close, w_proxy) = w.split_cols(num_known);
        Self {
            w_close: ParamTensor::new(w_close),
            w_proxy: ParamTensor::new(w_proxy),
            bias: ParamTensor::zeros(1, num_known + 1),
        }
    }

    pub fn num_known(&self) -> usize {
        self.w_close.value.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_close.value.rows()
    }

    fn weight(&self) -> Result<DenseMatrix> {
        self.w_close.value.hstack(&self.w_proxy.value)
    }

    pub fn logits(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.cols() != self.input_dim() {
            return Err(Error::dim(
                "logits",
                format!("representation has {} columns, classifier expects {}", h.cols(), self.input_dim()),
            ));
        }
        let mut z = matmul(h, &self.weight()?)?;
        z.add_row_broadcast(&self.bias.value)?;
        Ok(z)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `h`.
    pub fn backward(&mut self, h: &DenseMatrix, d_logits: &DenseMatrix) -> Result<DenseMatrix> {
        let dw = matmul_tn(h, d_logits)?;
        let (dw_close, dw_proxy) = dw.split_cols(self.num_known());
        self.w_close.accumulate(&dw_close)?;
        self.w_proxy.accumulate(&dw_proxy)?;
        self.bias.accumulate(&d_logits.col_sums())?;
        matmul_nt(d_logits, &self.weight()?)
    }

    pub fn zero_grad(&mut self) {
        self.w_close.zero_grad();
        self.w_proxy.zero_grad();
        self.bias.zero_grad();
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w_close, &mut self.w_proxy, &mut self.bias]
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.w_close, &self.w_proxy, &self.bias]
    }
}

/// How each loss term is reduced over its own group of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

/// How the ground-truth-removed distribution of known rows is formed. Both
/// give the same value; they differ only in which quantities are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermARoute {
    /// `ŷ_c / (1 − ŷ_y)` from the softmax output.
    RenormalizedProbs,
    /// Softmax over the logits with the ground-truth entry masked out.
    MaskedLogits,
}

/// `Literal` minimizes the complement entropy of proxy rows; `Flipped`
/// maximizes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeSign {
    Literal,
    Flipped,
}

impl CoeSign {
    fn factor(self) -> f64 {
        match self {
            CoeSign::Literal => 1.0,
            CoeSign::Flipped => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    #[serde(default = "default_reduction")]
    pub reduction: Reduction,
    #[serde(default = "default_route")]
    pub term_a: TermARoute,
    #[serde(default = "default_sign")]
    pub coe_sign: CoeSign,
}

fn one() -> f64 {
    1.0
}
fn default_reduction() -> Reduction {
    Reduction::Mean
}
fn default_route() -> TermARoute {
    TermARoute::RenormalizedProbs
}
fn default_sign() -> CoeSign {
    CoeSign::Literal
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            reduction: default_reduction(),
            term_a: default_route(),
            coe_sign: default_sign(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) || !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative (λ1={}, λ2={})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Which rows of the logit matrix enter the loss.
#[derive(Debug, Clone, Default)]
pub struct LossRows {
    /// `(row, label)` for labeled known-class nodes.
    pub known: Vec<(usize, usize)>,
    /// Rows holding proxies; their target is the unknown class.
    pub proxies: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    /// CE of known rows.
    pub known_ce: f64,
    /// CE of proxy rows towards the unknown class (before `λ1`).
    pub proxy_ce: f64,
    /// Ground-truth-removed CE of known rows towards the unknown class.
    pub known_anti: f64,
    /// Complement entropy of proxy rows (sign applied).
    pub proxy_coe: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.total, self.known_ce, self.proxy_ce, self.known_anti, self.proxy_coe]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `l1 + λ2·l2`.
pub fn total_loss(l1: f64, l2: f64, lambda2: f64) -> Result<f64> {
    if !(lambda2 >= 0.0) {
        return Err(Error::Config(format!("λ2 must be non-negative, got {lambda2}")));
    }
    Ok(l1 + lambda2 * l2)
}

/// `−log ŷ_target` with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs_row: &[f64], target: usize) -> f64 {
    -probs_row[target].max(PROB_FLOOR).ln()
}

/// Entropy of the distribution over classes `≠ y`, renormalized. Zero when
/// there is no complement mass.
pub fn complement_entropy(probs_row: &[f64], y: usize) -> f64 {
    let mass: f64 = complement_mass(probs_row, y);
    if mass < PROB_FLOOR {
        return 0.0;
    }
    -probs_row
        .iter()
        .enumerate()
        .filter(|&(c, &p)| c != y && p > 0.0)
        .map(|(_, &p)| {
            let q = p / mass;
            q * q.ln()
        })
        .sum::<f64>()
}

fn complement_mass(probs_row: &[f64], y: usize) -> f64 {
    probs_row
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, p)| p)
        .sum()
}

/// `−log(ŷ_target / (1 − ŷ_y))`: CE against `target` after removing class `y`.
pub fn renormalized_ce(probs_row: &[f64], y: usize, target: usize) -> f64 {
    let mass = complement_mass(probs_row, y);
    if mass <= 0.0 {
        return -PROB_FLOOR.ln();
    }
    -(probs_row[target] / mass).max(PROB_FLOOR).ln()
}

fn masked_softmax(logits_row: &[f64], y: usize) -> Vec<f64> {
    let mut q: Vec<f64> = logits_row.to_vec();
    q[y] = f64::NEG_INFINITY;
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in q.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    q.iter_mut().for_each(|v| *v /= sum);
    q
}

fn group_weight(reduction: Reduction, count: usize) -> f64 {
    match reduction {
        Reduction::Mean if count > 0 => 1.0 / count as f64,
        _ => 1.0,
    }
}

/// Value and logit gradient of one part of the objective.
#[derive(Debug, Clone)]
pub struct TermOutput {
    pub value: f64,
    /// Per-group reduced values, `(known, proxy)`.
    pub parts: (f64, f64),
    pub grad: DenseMatrix,
}

/// Cross-entropy part: known rows towards their label, proxy rows towards
/// the unknown class weighted by `λ1`.
pub fn loss_l1(probs: &DenseMatrix, rows: &LossRows, lambda1: f64, reduction: Reduction) -> TermOutput {
    let unknown = probs.cols() - 1;
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    let ce_row = |r: usize, t: usize, w: f64, grad: &mut DenseMatrix| -> f64 {
        let p = probs.row(r);
        if p[t] >= PROB_FLOOR {
            for (g, (c, &pc)) in grad.row_mut(r).iter_mut().zip(p.iter().enumerate()) {
                *g += w * (pc - if c == t { 1.0 } else { 0.0 });
            }
        }
        cross_entropy(p, t)
    };
    let wk = group_weight(reduction, rows.known.len());
    let known: f64 = rows.known.iter().map(|&(r, y)| ce_row(r, y, wk, &mut grad)).sum::<f64>() * wk;
    let wp = group_weight(reduction, rows.proxies.len());
    let proxy: f64 = rows
        .proxies
        .iter()
        .map(|&r| ce_row(r, unknown, lambda1 * wp, &mut grad))
        .sum::<f64>()
        * wp;
    TermOutput {
        value: known + lambda1 * proxy,
        parts: (known, proxy),
        grad,
    }
}

/// Tailored complement-entropy part. `logits` is only read when the
/// masked-logit route is selected.
pub fn loss_l2(
    probs: &DenseMatrix,
    logits: &DenseMatrix,
    rows: &LossRows,
    cfg: &LossConfig,
) -> TermOutput {
    let unknown = probs.cols() - 1;
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());

    let wk = group_weight(cfg.reduction, rows.known.len());
    let mut anti = 0.0;
    for &(r, y) in &rows.known {
        let q: Vec<f64> = match cfg.term_a {
            TermARoute::RenormalizedProbs => {
                let p = probs.row(r);
                let mass = complement_mass(p, y);
                if mass <= 0.0 {
                    anti += -PROB_FLOOR.ln();
                    continue;
                }
                p.iter().enumerate().map(|(c, &pc)| if c == y { 0.0 } else { pc / mass }).collect()
            }
            TermARoute::MaskedLogits => masked_softmax(logits.row(r), y),
        };
        anti += -q[unknown].max(PROB_FLOOR).ln();
        if q[unknown] >= PROB_FLOOR {
            for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
                if c != y {
                    *g += wk * (q[c] - if c == unknown { 1.0 } else { 0.0 });
                }
            }
        }
    }
    anti *= wk;

    let wp = group_weight(cfg.reduction, rows.proxies.len());
    let sign = cfg.coe_sign.factor();
    let mut coe = 0.0;
    for &r in &rows.proxies {
        let p = probs.row(r);
        let mass = complement_mass(p, unknown);
        if mass < PROB_FLOOR {
            continue;
        }
        let h = complement_entropy(p, unknown);
        coe += sign * h;
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            if c == unknown || p[c] <= 0.0 {
                continue;
            }
            let q = p[c] / mass;
            *g += wp * sign * (-q * (q.ln() + h));
        }
    }
    coe *= wp;

    TermOutput {
        value: anti + coe,
        parts: (anti, coe),
        grad,
    }
}

/// Full objective over `logits`. Returns the breakdown and `∂total/∂logits`.
pub fn evaluate_loss(logits: &DenseMatrix, rows: &LossRows, cfg: &LossConfig) -> Result<(LossBreakdown, DenseMatrix)> {
    cfg.validate()?;
    let probs = softmax_rows(logits);
    let t1 = loss_l1(&probs, rows, cfg.lambda1, cfg.reduction);
    let mut grad = t1.grad;
    let (l2, parts2) = if cfg.lambda2 > 0.0 {
        let t2 = loss_l2(&probs, logits, rows, cfg);
        for (g, g2) in grad.data_mut().iter_mut().zip(t2.grad.data()) {
            *g += cfg.lambda2 * g2;
        }
        (t2.value, t2.parts)
    } else {
        (0.0, (0.0, 0.0))
    };
    let breakdown = LossBreakdown {
        l1: t1.value,
        l2,
        total: total_loss(t1.value, l2, cfg.lambda2)?,
        known_ce: t1.parts.0,
        proxy_ce: t1.parts.1,
        known_anti: parts2.0,
        proxy_coe: parts2.1,
    };
    Ok((breakdown, grad))
}

/// Argmax with ties to the smallest index. Index `C` means unknown.
pub fn predict(probs_row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in probs_row.iter().enumerate().skip(1) {
        if p > probs_row[best] {
            best = c;
        }
    }
    best
}

/// Thresholded closed-set prediction over `C` known-class probabilities:
/// the argmax if its probability exceeds `tau`, otherwise `C` (unknown).
pub fn predict_threshold(known_probs_row: &[f64], tau: f64) -> usize {
    let c = predict(known_probs_row);
    if known_probs_row[c] > tau {
        c
    } else {
        known_probs_row.len()
    }
}

/// Softmax over the first `C` logits of each row, ignoring the proxy column.
pub fn closed_set_probs(logits: &DenseMatrix) -> DenseMatrix {
    let c = logits.cols() - 1;
    let mut out = DenseMatrix::zeros(logits.rows(), c);
    for r in 0..logits.rows() {
        let row = out.row_mut(r);
        row.copy_from_slice(&logits.row(r)[..c]);
        softmax_in_place(row);
    }
    out
}
