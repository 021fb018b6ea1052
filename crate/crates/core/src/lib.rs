pub mod corruption;
pub mod numerics;
pub mod partition;
pub mod raster;
pub mod resampler;
pub mod rl;
pub mod tensor_file;
pub mod tokens;
pub mod video;
