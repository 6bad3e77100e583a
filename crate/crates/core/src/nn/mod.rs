//! Minimal deterministic numeric core.

mod activation;
pub mod checkpoint;
mod conv;
mod gabor;
pub mod gradcheck;
mod init;
mod loss;
mod params;
mod pool;
mod sgd;
mod tensor;

pub use activation::{sigmoid, tanh_inplace, tanh_map};
pub use conv::{conv2d_valid, conv2d_valid_cols, conv2d_weight_grad, im2col, FilterBank};
pub use gabor::{gabor_bank, gabor_kernel, GaborParams, GABOR_ORIENTATIONS, GABOR_PHASES};
pub use init::{uniform_init, xavier_bound};
pub use loss::{bce_logit_grad, bce_loss, BCE_EPS};
pub use params::{ParamSet, ParamView, ParamViewMut};
pub use pool::{avg_pool_boxcar, avg_pool_boxcar_backward};
pub use sgd::Sgd;
pub use tensor::Tensor3;
