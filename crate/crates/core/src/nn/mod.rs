//! Minimal CPU neural-network toolkit: NCHW tensors, a named parameter
//! store, layers with explicit backward passes, and Adam.
//!
//! Everything is single-threaded and bit-reproducible: the same parameters,
//! inputs and RNG state always produce the same outputs and gradients.

mod layers;
mod optim;
mod params;
mod tensor;

pub use layers::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, max_pool_3x3s2,
    max_pool_backward, relu, relu_backward, BasicBlock, BasicBlockCache, BatchNorm2d, BnCache,
    Conv2d, Linear, MaxPoolCache,
};
pub use optim::{Adam, AdamConfig};
pub use params::{BnUpdate, Ctx, Grads, ParamId, ParamKind, Params};
pub use tensor::Tensor;

/// `C = A·B (+ beta·C)` for row-major matrices, with optional transposed
/// views of A (stored `k×m`) and B (stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index touched by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
