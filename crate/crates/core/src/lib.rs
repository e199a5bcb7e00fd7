pub mod camera;
pub mod error;
pub mod exposure;
pub mod gradcheck;
pub mod imagebuf;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod synth;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
