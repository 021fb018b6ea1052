use std::process::ExitCode;

use thiserror::Error;

/// Exit status 1 covers bad input and usage; 2 is kept for invariant
/// violations detected at run time.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invariant(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().display().to_string();
        move |source| CliError::Io { path, source }
    }
}

macro_rules! input_error_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        })*
    };
}

input_error_from!(
    mllm_lab::partition::PartitionError,
    mllm_lab::video::VideoError,
    mllm_lab::tokens::TokenError,
    mllm_lab::resampler::ResamplerError,
    mllm_lab::corruption::CorruptionError,
    mllm_lab::raster::RasterError,
    mllm_lab::tensor_file::TensorFileError,
    serde_json::Error,
    image::ImageError
);

impl From<mllm_lab::rl::RlError> for CliError {
    fn from(e: mllm_lab::rl::RlError) -> Self {
        match e {
            mllm_lab::rl::RlError::Divergence(_) => CliError::Invariant(e.to_string()),
            mllm_lab::rl::RlError::Input(_) => CliError::Input(e.to_string()),
        }
    }
}
