use std::path::{Path, PathBuf};

use g2pxy::backbone::BackboneConfig;
use g2pxy::graph::{gen_sbm, load_content_cites, make_open_split, read_canonical, Graph, OpenSetSplit, SbmConfig, SplitFractions, Visibility};
use g2pxy::kernel::OptimizerKind;
use g2pxy::openset::LossConfig;
use g2pxy::proxy::ProxyConfig;
use g2pxy::trainer::{TrainConfig, Variant};
use g2pxy::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    ContentCites { content: PathBuf, cites: PathBuf },
    Canonical { path: PathBuf },
    Sbm(SbmConfig),
}

/// A class given by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

impl ClassRef {
    pub fn parse(s: &str) -> Self {
        match s.trim().parse() {
            Ok(i) => ClassRef::Index(i),
            Err(_) => ClassRef::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, g: &Graph) -> Result<usize> {
        match self {
            ClassRef::Index(i) => Ok(*i),
            ClassRef::Name(n) => g
                .class_names()
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Config(format!("no class named {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Classes held out as unknown; the last class when omitted.
    #[serde(default)]
    pub unknown_classes: Option<Vec<ClassRef>>,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default = "default_mode")]
    pub mode: Visibility,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> Visibility {
    Visibility::Inductive
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            unknown_classes: None,
            fractions: SplitFractions::default(),
            mode: default_mode(),
            seed: 0,
        }
    }
}

/// Training settings other than the encoder and proxy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "OptimizerKind::adam")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_lr() -> f64 {
    TrainConfig::default().lr
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_true() -> bool {
    true
}
fn default_variant() -> Variant {
    Variant::Full
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            optimizer: t.optimizer,
            loss: t.loss,
            seed: t.seed,
            deterministic: t.deterministic,
            variant: t.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub proxy: ProxyConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Visibility>,
    pub unknown: Option<Vec<ClassRef>>,
    pub variant: Option<Variant>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfigFile {
    /// Reads and validates a config; relative paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            DatasetSpec::ContentCites { content, cites } => {
                fix(content);
                fix(cites);
            }
            DatasetSpec::Canonical { path } => fix(path),
            DatasetSpec::Sbm(_) => {}
        }
        fix(&mut cfg.output_dir);
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
            self.split.seed = s;
        }
        if let Some(m) = o.mode {
            self.split.mode = m;
        }
        if let Some(u) = &o.unknown {
            self.split.unknown_classes = Some(u.clone());
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            optimizer: t.optimizer,
            loss: t.loss,
            proxy: self.proxy.clone(),
            backbone: self.backbone.clone(),
            seed: t.seed,
            deterministic: t.deterministic,
            variant: t.variant,
        }
    }

    pub fn load_graph(&self) -> Result<Graph> {
        match &self.dataset {
            DatasetSpec::ContentCites { content, cites } => Ok(load_content_cites(content, cites)?.0),
            DatasetSpec::Canonical { path } => read_canonical(path),
            DatasetSpec::Sbm(cfg) => gen_sbm(cfg),
        }
    }

    pub fn make_split(&self, g: &Graph) -> Result<OpenSetSplit> {
        let unknown = match &self.split.unknown_classes {
            None => vec![g.num_classes().saturating_sub(1)],
            Some(refs) => refs.iter().map(|r| r.resolve(g)).collect::<Result<_>>()?,
        };
        make_open_split(g, &unknown, self.split.fractions, self.split.seed, self.split.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"dataset":{"kind":"canonical","path":"x.json"},"trian":{}}"#;
        assert!(serde_json::from_str::<RunConfigFile>(bad).is_err());
        let bad_nested = r#"{"dataset":{"kind":"canonical","path":"x.json"},"train":{"lamda1":1}}"#;
        assert!(serde_json::from_str::<RunConfigFile>(bad_nested).is_err());
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg: RunConfigFile = serde_json::from_str(r#"{"dataset":{"kind":"canonical","path":"x.json"}}"#).unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.split.mode, Visibility::Inductive);
    }

    #[test]
    fn overrides_win() {
        let mut cfg: RunConfigFile = serde_json::from_str(
            r#"{"dataset":{"kind":"canonical","path":"x.json"},"split":{"mode":"inductive","seed":3},"train":{"seed":3}}"#,
        )
        .unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            mode: Some(Visibility::Transductive),
            unknown: Some(vec![ClassRef::parse("2"), ClassRef::parse("Theory")]),
            variant: Some(Variant::NoCoe),
            output_dir: None,
        });
        assert_eq!((cfg.train.seed, cfg.split.seed), (9, 9));
        assert_eq!(cfg.split.mode, Visibility::Transductive);
        assert_eq!(
            cfg.split.unknown_classes,
            Some(vec![ClassRef::Index(2), ClassRef::Name("Theory".into())])
        );
        assert_eq!(cfg.train_config().resolved().loss.lambda2, 0.0);
    }
}
