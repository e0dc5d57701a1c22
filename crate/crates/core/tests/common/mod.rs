//! Independent dense and brute-force reference implementations.
#![allow(dead_code)]

use g2pxy::kernel::{DenseMatrix, SparseMatrix};
use rand::Rng;

pub fn densify(s: &SparseMatrix) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; s.cols()]; s.rows()];
    for (r, row) in out.iter_mut().enumerate() {
        let (cols, vals) = s.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            row[c] += v;
        }
    }
    out
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..m)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` built densely from an undirected edge list.
pub fn dense_gcn(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        if i != j {
            a[i][j] = 1.0;
            a[j][i] = 1.0;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

pub fn complement_entropy_direct(p: &[f64], y: usize) -> f64 {
    let rest = 1.0 - p[y];
    if rest < 1e-12 {
        return 0.0;
    }
    let mut h = 0.0;
    for (c, &pc) in p.iter().enumerate() {
        if c != y && pc > 0.0 {
            h -= (pc / rest) * (pc / rest).ln();
        }
    }
    h
}

pub fn macro_f1_brute(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        if tp > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fneg);
        }
    }
    total / k as f64
}

pub fn random_sparse(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> SparseMatrix {
    let mut trip = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                trip.push((r, c, rng.random_range(-2.0..2.0)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, trip).unwrap()
}

pub fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_edges(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                e.push((i, j));
            }
        }
    }
    e
}

/// A random probability row of length `k` with some exact zeros.
pub fn random_probs(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; k];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|x| x / s).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &DenseMatrix) -> f64 {
    let mut m = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            m = m.max((v - b.get(r, c)).abs());
        }
    }
    m
}

pub fn sparse_vs_dense_diff(s: &SparseMatrix, d: &[Vec<f64>]) -> f64 {
    let sd = densify(s);
    sd.iter()
        .flatten()
        .zip(d.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
