//! Slow-drift removal on a TR grid by regression against a discrete cosine
//! basis.

use std::f64::consts::PI;

use ndarray::Array2;

use super::DspError;

/// Orthonormal DCT-II basis (samples × k), constant column first, holding
/// every cosine with period longer than `1 / cutoff_hz`.
pub fn dct_basis(n: usize, dt_s: f64, cutoff_hz: f64) -> Array2<f64> {
    let k = ((2.0 * n as f64 * dt_s * cutoff_hz).floor() as usize + 1).min(n);
    Array2::from_shape_fn((n, k), |(t, j)| {
        if j == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt() * (PI * j as f64 * (2 * t + 1) as f64 / (2 * n) as f64).cos()
        }
    })
}

/// Reusable projector onto the complement of a drift basis.
#[derive(Debug, Clone)]
pub struct DriftFilter {
    basis: Array2<f64>,
}

impl DriftFilter {
    pub fn new(n: usize, dt_s: f64, cutoff_hz: f64) -> Result<Self, DspError> {
        let rate = 1.0 / dt_s;
        if !(cutoff_hz > 0.0 && cutoff_hz < rate / 2.0) {
            return Err(DspError::InvalidBand { low: cutoff_hz, high: rate / 2.0, rate });
        }
        Ok(Self { basis: dct_basis(n, dt_s, cutoff_hz) })
    }

    /// Number of basis columns, the constant included.
    pub fn n_regressors(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn apply(&self, x: &mut [f64]) {
        for col in self.basis.columns() {
            let coef: f64 = col.iter().zip(x.iter()).map(|(b, v)| b * v).sum();
            for (v, b) in x.iter_mut().zip(col.iter()) {
                *v -= coef * b;
            }
        }
    }
}

/// High-pass a uniformly sampled series by removing its projection onto
/// the cosine drift basis below `cutoff_hz`. The mean goes with it.
pub fn highpass_series(series: &[f64], cutoff_hz: f64, rate_hz: f64) -> Result<Vec<f64>, DspError> {
    let f = DriftFilter::new(series.len(), 1.0 / rate_hz, cutoff_hz)?;
    let mut out = series.to_vec();
    f.apply(&mut out);
    Ok(out)
}
