//! Numerical substrate: tensors, reverse-mode autodiff, MLPs, Adam and seeded RNG.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use mlp::{mlp_forward, Activation, Dense, Mlp, Parameters};
pub use rng::{derive_seed, seeded_rng, SeededRng};
pub use tape::{Gradients, ParamKey, Tape, Var};
pub use tensor::Tensor;
