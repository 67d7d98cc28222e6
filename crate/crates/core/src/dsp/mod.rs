//! Numerical kernels: band-pass design and zero-phase filtering, analytic
//! envelope, Welch PSD, band power, TR binning, drift removal and 3-D
//! Gaussian smoothing.

mod drift;
mod filter;
mod resample;
mod smooth;
mod spectral;

pub use drift::{dct_basis, highpass_series, DriftFilter};
pub use filter::{design_bandpass, filt_zero_phase, Biquad, FilterDesign, SosFilter};
pub use resample::bin_to_tr;
pub use smooth::{gaussian_kernel, gaussian_smooth_3d};
pub use spectral::{analytic_envelope, band_power, welch_psd, welch_psd_spans, PsdEstimate};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid band {low}-{high} Hz at rate {rate} Hz")]
    InvalidBand { low: f64, high: f64, rate: f64 },
    #[error("filter order must be a positive even number, got {0}")]
    InvalidOrder(usize),
    #[error("unstable filter design: {0}")]
    UnstableDesign(String),
    #[error("signal too short: need {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("non-finite input sample")]
    NonFinite,
    #[error("invalid Welch segmentation: {segment} samples, overlap {overlap}")]
    InvalidSegment { segment: usize, overlap: f64 },
    #[error("envelope covers {got} samples, {needed} needed for the requested volumes")]
    CoverageTooShort { needed: usize, got: usize },
    #[error("volume has {got} values, dims need {needed}")]
    ShapeMismatch { needed: usize, got: usize },
}

/// Fraction of samples at each end treated as filter/envelope transient.
pub const EDGE_FRACTION: f64 = 0.05;

/// `[start, end)` of the samples not flagged as edge transient.
pub fn interior(n: usize) -> std::ops::Range<usize> {
    let edge = (n as f64 * EDGE_FRACTION).floor() as usize;
    edge..n - edge
}
