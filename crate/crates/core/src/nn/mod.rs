//! Layer kernels: convolution, pooling, up-sampling, batch normalization,
//! rectifiers and fully connected layers.

mod activation;
mod conv;
mod linear;
mod norm;
mod pool;

pub use activation::{prelu, rrelu, RReluConfig};
pub use conv::{conv2d, conv3d};
pub use linear::linear;
pub use norm::{batchnorm_infer, batchnorm_train, BatchNormState, BatchStats};
pub use pool::{global_avg_pool, maxpool2d, upsample_nearest};

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Initial negative slope of every PReLU.
pub const PRELU_INIT: f64 = 0.25;

/// Fan-in scaled uniform initialization for rectifier networks,
/// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}
