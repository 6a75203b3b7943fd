//! Numerical substrate: tensors, autodiff, optimizers, eigensolver, RNG.

pub mod adam;
pub mod eigen;
pub mod lbfgs;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use eigen::sym_eigen;
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsStatus};
pub use rng::Rng;
pub use tape::{grad, Tape, Var};
pub use tensor::Tensor;
