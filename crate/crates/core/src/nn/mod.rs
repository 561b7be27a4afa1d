//! Minimal neural-network toolkit on top of candle tensors.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod params;

pub use conv::conv2d;
pub use layers::{
    global_avg_pool, instance_norm, leaky_relu, pixel_shuffle, scalar, sigmoid, tile_spatial,
    upsample_nearest, Conv2d, ConvSpec, Linear,
};
pub use params::{Init, ParamPath, ParamStore};
