//! Dense numerical substrate: matrices, similarity and normalization
//! kernels, linear layers with hand-written backward passes, and the
//! finite-difference checker the rest of the crate is verified against.

pub mod gradcheck;
pub mod linear;
pub mod matrix;
pub mod ops;

pub use gradcheck::{finite_difference_check, numeric_gradient, GradCheck, GradCheckReport};
pub use linear::{LinearGrads, LinearLayer};
pub use matrix::{axpy, dot, norm, Matrix, Shape};
pub use ops::{
    cosine_grad, cosine_similarity, cross_entropy, l2_normalize_rows, layer_norm, mean_pool_rows,
    relu, relu_backward, softmax, softmax_cross_entropy, LayerNorm, LayerNormCache, LayerNormGrads,
};
