use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::kernel::DenseMatrix;

/// Stochastic block model with Gaussian node features.
///
/// Block `b` draws a centroid from `N(0, centroid_scale²)` per dimension and
/// each of its nodes gets `centroid + N(0, noise²)`. Block id is the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    #[serde(default = "default_centroid_scale")]
    pub centroid_scale: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_centroid_scale() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1.0
}

impl SbmConfig {
    pub fn new(sizes: Vec<usize>, p_in: f64, p_out: f64, dim: usize, seed: u64) -> Self {
        Self {
            sizes,
            p_in,
            p_out,
            dim,
            centroid_scale: default_centroid_scale(),
            noise: default_noise(),
            seed,
        }
    }
}

pub fn gen_sbm(cfg: &SbmConfig) -> Result<Graph> {
    let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
    if !prob_ok(cfg.p_in) || !prob_ok(cfg.p_out) || cfg.p_in <= cfg.p_out {
        return Err(Error::Config(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    if cfg.sizes.is_empty() || cfg.dim == 0 || !(cfg.noise >= 0.0) || !(cfg.centroid_scale > 0.0) {
        return Err(Error::Config("sbm needs blocks, dim > 0, centroid_scale > 0, noise >= 0".into()));
    }
    let labels: Vec<usize> = cfg
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();

    let mut edge_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if edge_rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }

    let mut feat_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    feat_rng.set_stream(1);
    let centroid_dist = Normal::new(0.0, cfg.centroid_scale).expect("positive scale");
    let noise_dist = Normal::new(0.0, cfg.noise).expect("non-negative noise");
    let centroids: Vec<Vec<f64>> = (0..cfg.sizes.len())
        .map(|_| (0..cfg.dim).map(|_| centroid_dist.sample(&mut feat_rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * cfg.dim);
    for &b in &labels {
        for c in &centroids[b] {
            data.push(c + noise_dist.sample(&mut feat_rng));
        }
    }
    let features = DenseMatrix::from_vec(n, cfg.dim, data)?;
    let names = (0..cfg.sizes.len()).map(|b| format!("block{b}")).collect();
    Graph::with_default_ids(features, &edges, labels, names)
}
