use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{DenseMatrix, SparseMatrix};

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

/// Switches the row-parallel kernels on (`false`) or off (`true`, the default).
///
/// Parallel kernels only split work by output row, so each entry is still
/// accumulated in the same order; the flag exists so acceptance runs can pin
/// execution to a single thread regardless.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn is_deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

fn for_each_row(out: &mut DenseMatrix, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    let cols = out.cols();
    if cols == 0 {
        return;
    }
    if is_deterministic() {
        out.data_mut()
            .chunks_mut(cols)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
    } else {
        out.data_mut()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
    }
}

/// `a · b`. Zero entries of `a` are skipped, which makes products with sparse
/// bag-of-words features cheap.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::dim(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for_each_row(&mut out, |r, orow| {
        for (k, &av) in a.row(r).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::dim(
            "matmul_tn",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for i in 0..a.rows() {
        let brow = b.row(i);
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out.row_mut(k).iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(
            "matmul_nt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    for_each_row(&mut out, |r, orow| {
        let arow = a.row(r);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    });
    Ok(out)
}

/// Sparse-dense product `s · d`.
pub fn spmm(s: &SparseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols() != d.rows() {
        return Err(Error::dim(
            "spmm",
            format!("{}x{} x {:?}", s.rows(), s.cols(), d.shape()),
        ));
    }
    let mut out = DenseMatrix::zeros(s.rows(), d.cols());
    for_each_row(&mut out, |r, orow| {
        let (cols, vals) = s.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, x) in orow.iter_mut().zip(d.row(c)) {
                *o += v * x;
            }
        }
    });
    Ok(out)
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf (or empty) rows have no defined distribution; leave uniform
        let n = row.len() as f64;
        row.iter_mut().for_each(|v| *v = 1.0 / n);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn relu(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    out
}

/// Gradient of `relu` at `input`: `upstream` where `input > 0`, else zero.
pub fn relu_backward(input: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    if input.shape() != upstream.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), upstream.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(input.rows(), input.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let id = DenseMatrix::identity(2);
        let b = DenseMatrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(7, 5, &mut rng);
        let b = random(5, 3, &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let at = a.transpose();
        assert!(matmul_tn(&at, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension { .. })));
        assert!(matmul_tn(&a, &DenseMatrix::zeros(3, 3)).is_err());
        assert!(matmul_nt(&a, &DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn parallel_rows_are_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(40, 30, &mut rng);
        let b = random(30, 20, &mut rng);
        let seq = matmul(&a, &b).unwrap();
        set_deterministic(false);
        let par = matmul(&a, &b).unwrap();
        set_deterministic(true);
        assert_eq!(seq, par);
    }

    #[test]
    fn spmm_special_cases() {
        let d = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let zero = SparseMatrix::empty(3, 3);
        assert_eq!(spmm(&zero, &d).unwrap(), DenseMatrix::zeros(3, 2));
        assert_eq!(spmm(&SparseMatrix::identity(3), &d).unwrap(), d);
        assert!(spmm(&SparseMatrix::identity(2), &d).is_err());
    }

    #[test]
    fn spmm_matches_densified_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut trip = Vec::new();
        for r in 0..20 {
            for c in 0..20 {
                if rng.random_bool(0.1) {
                    trip.push((r, c, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let s = SparseMatrix::from_triplets(20, 20, trip).unwrap();
        let d = random(20, 4, &mut rng);
        let got = spmm(&s, &d).unwrap();
        assert!(got.max_abs_diff(&naive(&s.to_dense(), &d)) < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let m = DenseMatrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1000.0, 0.0, 0.0],
            vec![1.0, 2.0, 3.0],
        ])
        .unwrap();
        let p = softmax_rows(&m);
        for c in 0..3 {
            assert!((p.get(0, c) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((p.get(1, 0) - 1.0).abs() < 1e-9);
        assert!(p.get(1, 1) < 1e-9);
        // exp(1), exp(2), exp(3) normalized
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        let expect = [0.09003, 0.24473, 0.66524];
        for c in 0..3 {
            assert!((p.get(2, c) - e[c] / s).abs() < 1e-12);
            assert!((p.get(2, c) - expect[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_cases() {
        let m = DenseMatrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let r = relu(&m);
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(relu(&r), r);
        let x = DenseMatrix::from_rows(&[vec![-0.5, 0.5]]).unwrap();
        let up = DenseMatrix::from_rows(&[vec![3.0, 7.0]]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 7.0]);
    }

    #[test]
    fn sparse_transpose_and_symmetry() {
        let s = SparseMatrix::from_triplets(3, 4, vec![(0, 3, 1.0), (2, 0, 2.0), (2, 3, 5.0)]).unwrap();
        let t = s.transpose();
        assert_eq!(t.to_dense(), s.to_dense().transpose());
        assert!(!s.is_symmetric(0.0));
        let sym = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        assert!(sym.is_symmetric(0.0));
    }

    #[test]
    fn csr_validation() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![1], vec![f64::NAN]).is_err());
        assert!(SparseMatrix::from_csr(2, 3, vec![0, 1], vec![1], vec![1.0]).is_err());
        let dup = SparseMatrix::from_triplets(1, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]).unwrap();
        assert_eq!(dup.nnz(), 1);
        assert_eq!(dup.get(0, 1), 3.0);
    }
}
