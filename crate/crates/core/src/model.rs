//! Encoder plus classifier head, plain inference and JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{forward_to, BackboneConfig, BackboneParams, LayerParams, Propagation};
use crate::error::{Error, Result};
use crate::kernel::{DenseMatrix, ParamTensor};
use crate::openset::{closed_set_probs, predict, predict_threshold, OpenClassifier};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone_cfg: BackboneConfig,
    pub backbone: BackboneParams,
    pub classifier: OpenClassifier,
    /// When set, predictions come from thresholding the closed-set softmax
    /// instead of the `C+1`-way argmax.
    pub threshold: Option<f64>,
}

impl Model {
    pub fn init(cfg: &BackboneConfig, input_dim: usize, num_known: usize, rng: &mut impl Rng) -> Result<Self> {
        let backbone = BackboneParams::init(cfg, input_dim, rng)?;
        let classifier = OpenClassifier::init(cfg.output_dim(), num_known, rng);
        Ok(Self {
            backbone_cfg: cfg.clone(),
            backbone,
            classifier,
            threshold: None,
        })
    }

    pub fn num_known(&self) -> usize {
        self.classifier.num_known()
    }

    /// Full forward pass with no proxies.
    pub fn logits(&self, features: &DenseMatrix, prop: &Propagation) -> Result<DenseMatrix> {
        let k = self.backbone_cfg.num_layers();
        let trace = forward_to(&self.backbone_cfg, k, features, prop, &self.backbone)?;
        self.classifier.logits(trace.output())
    }

    /// Predicted label in `0..=C` for each of `rows`.
    pub fn predict_rows(&self, logits: &DenseMatrix, rows: &[usize]) -> Vec<usize> {
        match self.threshold {
            None => {
                let probs = crate::kernel::softmax_rows(&logits.select_rows(rows));
                (0..rows.len()).map(|r| predict(probs.row(r))).collect()
            }
            Some(tau) => {
                let probs = closed_set_probs(&logits.select_rows(rows));
                (0..rows.len()).map(|r| predict_threshold(probs.row(r), tau)).collect()
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.classifier.zero_grad();
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.backbone.tensors_mut();
        v.extend(self.classifier.tensors_mut());
        v
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = self.backbone.tensors();
        v.extend(self.classifier.tensors());
        v
    }

    /// Names matching [`Model::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.backbone.layers.len())
            .flat_map(|j| [format!("layer{j}.weight"), format!("layer{j}.bias")])
            .collect();
        names.extend(["classifier.w_close", "classifier.w_proxy", "classifier.bias"].map(String::from));
        names
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_VERSION,
            backbone: self.backbone_cfg.clone(),
            threshold: self.threshold,
            tensors: self
                .tensor_names()
                .into_iter()
                .zip(self.tensors())
                .map(|(n, t)| (n, t.value.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema {} not supported (expected {CHECKPOINT_VERSION})",
                ck.schema_version
            )));
        }
        ck.backbone.validate()?;
        let mut take = |name: &str| -> Result<ParamTensor> {
            ck.tensors
                .remove(name)
                .map(ParamTensor::new)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name}")))
        };
        let layers = (1..=ck.backbone.num_layers())
            .map(|j| {
                Ok(LayerParams {
                    weight: take(&format!("layer{j}.weight"))?,
                    bias: take(&format!("layer{j}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let classifier = OpenClassifier {
            w_close: take("classifier.w_close")?,
            w_proxy: take("classifier.w_proxy")?,
            bias: take("classifier.bias")?,
        };
        if let Some(extra) = ck.tensors.keys().next() {
            return Err(Error::Config(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(Self {
            backbone_cfg: ck.backbone,
            backbone: BackboneParams { layers },
            classifier,
            threshold: ck.threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub backbone: BackboneConfig,
    pub threshold: Option<f64>,
    pub tensors: BTreeMap<String, DenseMatrix>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let cfg = BackboneConfig {
            hidden_dims: vec![5, 4, 3],
            ..BackboneConfig::default()
        };
        let mut m = Model::init(&cfg, 7, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        m.threshold = Some(0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let cfg = BackboneConfig {
            hidden_dims: vec![3, 3, 2],
            ..BackboneConfig::default()
        };
        let m = Model::init(&cfg, 2, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut ck = m.to_checkpoint();
        ck.tensors.remove("layer2.bias");
        assert!(Model::from_checkpoint(ck).is_err());
    }
}
