//! On-disk formats: BrainVision Core Data Format, single-file NIfTI-1 and
//! tabular CSV/JSON exports.

pub mod brainvision;
pub mod nifti;
pub mod table;

pub use brainvision::{
    parse_brainvision, parse_brainvision_with, write_brainvision, BinaryFormat, BrainVisionHeader, MarkerMap, MarkerRule, Orientation,
    ParseOptions, ParseReport,
};
pub use nifti::{
    decode_nifti, read_nifti, read_nifti_image, read_statmap, write_nifti, write_statmap, NiftiDatatype, NiftiHeader, NiftiImage, ToNifti,
};
pub use table::{export_table, read_csv_table, Cell, Table, TableFormat};

use thiserror::Error;

use crate::datamodel::DataError;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("missing key {key} in [{section}]")]
    MissingKey { section: String, key: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("payload of {got} bytes does not match {expected}")]
    PayloadSizeMismatch { expected: String, got: usize },
    #[error("bad marker line: {0}")]
    BadMarkerLine(String),
    #[error("bad NIfTI magic")]
    BadMagic,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("payload truncated: need {needed} bytes, got {got}")]
    TruncatedPayload { needed: usize, got: usize },
    #[error("row {row} has {got} cells, header has {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl FormatError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }
}
