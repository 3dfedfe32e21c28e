//! Dense numerical core with explicit forward and backward passes.

mod adam;
mod classifier;
mod decoder;
mod encoder;
mod linear;
mod matrix;

pub use adam::{AdamState, ParamSlot};
pub use classifier::{ClassifierGrads, LinearClassifier};
pub use decoder::{DecoderGrads, SoftmaxDecoder};
pub use encoder::{EncoderCache, EncoderGrads, MlpEncoder, Mode};
pub use linear::{Linear, LinearGrad};
pub use matrix::{log_softmax_in_place, log_sum_exp, sigmoid, DenseMatrix};
pub(crate) use matrix::axpy;
