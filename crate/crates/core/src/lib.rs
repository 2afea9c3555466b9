//! Differentiable classifiers, Fenchel-dual adversarial perturbation rules,
//! adversarial training, saliency maps, and saliency evaluation metrics,
//! plus a synthetic dataset with ground-truth attention.

pub mod dualnorm;
pub mod error;
pub mod evalmetrics;
pub mod formats;
pub mod gradnet;
pub mod rng;
pub mod saliency;
pub mod synthgen;
pub mod tensor;
pub mod trainloop;

pub use error::{Error, Result};
pub use tensor::Tensor;
