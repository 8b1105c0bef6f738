//! Dense numerical kernels: arrays, parameter sets, a feed-forward network
//! with analytic backpropagation, Adam, finite-difference checks and the
//! ORLM checkpoint format.

mod adam;
mod array;
pub mod checkpoint;
mod conv;
mod gradcheck;
mod mlp;

pub use adam::AdamState;
pub use array::{NetParams, RealArray};
pub use conv::{conv3x3_valid, ConvLayer};
pub use gradcheck::{grad_check, GradCheck, FD_STEP};
pub use mlp::{Activation, ForwardCache, Mlp, OutputActivation};
