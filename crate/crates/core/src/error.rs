use thiserror::Error;

use crate::artifacts::ArtifactError;
use crate::datamodel::DataError;
use crate::dsp::DspError;
use crate::formats::FormatError;
use crate::fusion::FusionError;
use crate::ica::IcaError;
use crate::phantom::PhantomError;

/// Any failure surfaced by the pipeline, with a stable process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Ica(#[from] IcaError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_MARKERS: i32 = 5;
pub const EXIT_WARNINGS: i32 = 6;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Phantom(PhantomError::InvalidConfig(_)) => EXIT_CONFIG,
            Error::Format(FormatError::Io { .. }) => EXIT_IO,
            Error::Data(DataError::NoMarkers(_))
            | Error::Artifact(ArtifactError::Data(DataError::NoMarkers(_)))
            | Error::Artifact(ArtifactError::TooFewEpochs { .. })
            | Error::Artifact(ArtifactError::IrregularTriggers { .. }) => EXIT_MARKERS,
            Error::Artifact(ArtifactError::InvalidParameter(_))
            | Error::Ica(IcaError::InvalidParameter(_))
            | Error::Fusion(FusionError::InvalidParameter(_)) => EXIT_CONFIG,
            _ => EXIT_DATA,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
