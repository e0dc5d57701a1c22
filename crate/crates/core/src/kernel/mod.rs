//! Dense/sparse linear algebra, the differentiable pieces the model needs,
//! optimizers and a finite-difference gradient checker. Everything is `f64`.

mod dense;
mod gradcheck;
mod ops;
mod param;
mod sparse;

pub use dense::DenseMatrix;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, TensorCheck, REL_ERR_FLOOR};
pub use ops::{
    is_deterministic, matmul, matmul_nt, matmul_tn, relu, relu_backward, set_deterministic,
    softmax_in_place, softmax_rows, spmm,
};
pub use param::{sgd_step, Optimizer, OptimizerKind, ParamTensor};
pub use sparse::SparseMatrix;
